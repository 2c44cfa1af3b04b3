mod common;

use proptest::prelude::*;
use weaklearn::audit::fisher;
use weaklearn::halfspace::{find_halfspace, ScanBudget};
use weaklearn::model_zoo::Model;
use weaklearn::population::{CondFn, Population};

/// Distinct 1-d atoms with positive weights, means, and variances.
fn atom_pop() -> impl Strategy<Value = Population> {
    (2usize..8)
        .prop_flat_map(|n| {
            (
                proptest::collection::btree_set(-50i32..50, n),
                proptest::collection::vec(0.1f64..1.0, n),
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(0.0f64..2.0, n),
            )
        })
        .prop_filter_map("needs matching lengths", |(xs, w, m, v)| {
            let n = xs.len();
            if w.len() < n {
                return None;
            }
            let total: f64 = w[..n].iter().sum();
            let weights: Vec<f64> = w[..n].iter().map(|x| x / total).collect();
            let sum: f64 = weights.iter().sum();
            let mut weights = weights;
            weights[n - 1] += 1.0 - sum;
            let atoms = xs.iter().map(|&x| vec![x as f64 / 10.0]).collect();
            Population::atoms(atoms, weights, m[..n].to_vec(), v[..n].to_vec()).ok()
        })
}

fn permuted(pop: &Population, shift: usize) -> Population {
    let n = pop.len();
    let idx: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
    Population::atoms(
        idx.iter().map(|&i| pop.point(i).to_vec()).collect(),
        idx.iter().map(|&i| pop.weights()[i]).collect(),
        idx.iter().map(|&i| pop.cond_mean()[i]).collect(),
        idx.iter().map(|&i| pop.cond_var()[i]).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn law_of_total_variance(pop in atom_pop()) {
        let s = pop.stats().unwrap();
        // E[Y²] - E[Y]² with E[Y²] = E[Var(Y|X) + E[Y|X]²]
        let ey: f64 = pop.weights().iter().zip(pop.cond_mean()).map(|(w, m)| w * m).sum();
        let ey2: f64 = (0..pop.len()).map(|i| pop.weights()[i] * (pop.cond_var()[i] + pop.cond_mean()[i].powi(2))).sum();
        prop_assert!((s.var_y - (ey2 - ey * ey)).abs() < 1e-10 * (1.0 + ey2));
        prop_assert!(s.expected_cond_var <= s.var_y + 1e-12);
    }

    #[test]
    fn expectation_is_linear(pop in atom_pop(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = |x: &[f64]| x[0].sin();
        let g = |x: &[f64]| x[0] * x[0];
        let lhs = pop.expect(|x| a * f(x) + b * g(x)).unwrap();
        let rhs = a * pop.expect(f).unwrap() + b * pop.expect(g).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn cauchy_schwarz(pop in atom_pop()) {
        let f: Vec<f64> = pop.points().map(|x| x[0].cos() + 0.3).collect();
        let g: Vec<f64> = pop.points().map(|x| x[0].powi(3) - 1.0).collect();
        prop_assert!(pop.inner_values(&f, &g).abs() <= pop.norm_values(&f) * pop.norm_values(&g) * (1.0 + 1e-12));
    }

    #[test]
    fn stats_and_fisher_ignore_atom_order(pop in atom_pop(), shift in 1usize..7) {
        let q = permuted(&pop, shift);
        let (s, t) = (pop.stats().unwrap(), q.stats().unwrap());
        prop_assert!((s.var_y - t.var_y).abs() < 1e-12);
        prop_assert!((s.expected_cond_var - t.expected_cond_var).abs() < 1e-12);
        let m = Model::Logistic { input_dim: 1 };
        let theta = [0.2, -0.7];
        let (a, b) = (fisher(&m, &theta, &pop).unwrap(), fisher(&m, &theta, &q).unwrap());
        for (ra, rb) in a.matrix.iter().zip(&b.matrix) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fisher_unchanged_by_atom_splitting(pop in atom_pop(), which in 0usize..8) {
        let i = which % pop.len();
        let n = pop.len();
        let mut pts: Vec<Vec<f64>> = pop.points().map(|p| p.to_vec()).collect();
        let mut w = pop.weights().to_vec();
        let mut m = pop.cond_mean().to_vec();
        let mut v = pop.cond_var().to_vec();
        w[i] *= 0.5;
        pts.push(pts[i].clone());
        w.push(w[i]);
        m.push(m[i]);
        v.push(v[i]);
        let split = Population::weighted_sample(pts, w, m, v).unwrap();
        prop_assert_eq!(split.len(), n + 1);
        let model = Model::OneLayerNn { input_dim: 1 };
        let theta = [0.1, 0.8, -0.3, 1.2];
        let (a, b) = (fisher(&model, &theta, &pop).unwrap(), fisher(&model, &theta, &split).unwrap());
        for (ra, rb) in a.matrix.iter().zip(&b.matrix) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn halfspace_gap_scales_quadratically(pop in atom_pop(), a in 0.1f64..10.0) {
        prop_assume!(pop.stats().unwrap().weak_learnable);
        let budget = ScanBudget { n_directions: 0, thresholds_per_direction: 99, seed: 0 };
        let scaled = pop
            .with_conditional(pop.cond_mean().iter().map(|m| a * m).collect(), pop.cond_var().iter().map(|v| a * a * v).collect())
            .unwrap();
        let f = find_halfspace(&pop, budget).unwrap();
        let g = find_halfspace(&scaled, budget).unwrap();
        prop_assert_eq!(&f.alpha, &g.alpha);
        prop_assert_eq!(f.t, g.t);
        prop_assert_eq!(f.p_a, g.p_a);
        prop_assert!((g.cov - a * f.cov).abs() < 1e-9 * (1.0 + a * f.cov.abs()));
        prop_assert!((g.c1 - a * f.c1).abs() < 1e-9 * (1.0 + a * f.c1.abs()));
        let (gf, gg) = (f.var_y - f.predicted_mse, g.var_y - g.predicted_mse);
        prop_assert!((gg - a * a * gf).abs() < 1e-9 * (1.0 + a * a * gf));
        prop_assert!(f.predicted_mse <= f.var_y + 1e-12);
    }

    #[test]
    fn predicted_mse_equals_direct_mse(pop in atom_pop()) {
        prop_assume!(pop.stats().unwrap().weak_learnable);
        let budget = ScanBudget { n_directions: 0, thresholds_per_direction: 99, seed: 0 };
        let f = find_halfspace(&pop, budget).unwrap();
        let direct: f64 = (0..pop.len())
            .map(|i| {
                let x = pop.point(i);
                let pred = f.c0 + if f.alpha[0] * x[0] < f.t { f.c1 } else { 0.0 };
                pop.weights()[i] * (pop.cond_var()[i] + (pop.cond_mean()[i] - pred).powi(2))
            })
            .sum();
        prop_assert!((direct - f.predicted_mse).abs() < 1e-12 * (1.0 + direct));
    }
}

#[test]
fn threshold_position_between_atoms_is_irrelevant() {
    let pop = Population::uniform_atoms(
        vec![vec![-1.0], vec![0.0], vec![1.0]],
        &CondFn::Polynomial { coord: 0, coefficients: vec![0.0, 0.0, 1.0] },
        &CondFn::Constant { value: 0.0 },
    )
    .unwrap();
    use weaklearn::halfspace::best_linear_predictor;
    let a = best_linear_predictor(&pop, &[1.0], -0.5).unwrap();
    for t in [-0.99, -0.75, -0.01] {
        let b = best_linear_predictor(&pop, &[1.0], t).unwrap();
        assert_eq!((a.cov, a.p_a, a.predicted_mse), (b.cov, b.p_a, b.predicted_mse));
    }
}
