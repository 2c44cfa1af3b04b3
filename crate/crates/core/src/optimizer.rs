//! Multi-start minimization of population MSE: the referee for "best-fitting
//! model" claims.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::model_zoo::Model;
use crate::population::Population;

/// Final MSEs closer than this count as tied; the lower restart index wins.
pub const TIE_TOL: f64 = 1e-12;
/// Once an accepted step lowers MSE by at most this many ulps, descent switches
/// to accepting steps that shrink the gradient norm.
pub const STALL_ULPS: f64 = 8.0;
/// Iteration cap for the gradient-norm phase.
pub const POLISH_ITERS: usize = 100;
/// Grid certificates are limited to this many parameters.
pub const MAX_GRID_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentConfig {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Converged when `‖∇‖ <= tol * (1 + |MSE|)`.
    pub tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    /// Standard deviation of the Gaussian initializations.
    pub init_scale: f64,
    pub trace: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            max_iters: 10_000,
            tol: 1e-9,
            armijo: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            init_scale: 1.0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub mse: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub index: usize,
    pub mse: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped because MSE decreases fell below working precision.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub theta_hat: Vec<f64>,
    pub mse: f64,
    pub n_restarts: usize,
    pub best_restart: usize,
    pub converged: bool,
    pub grad_norm_final: f64,
    pub restarts: Vec<RestartSummary>,
    /// Restarts dropped after a non-finite objective, with the reason.
    pub abandoned: Vec<(usize, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

struct RestartOutcome {
    theta: Vec<f64>,
    mse: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
    stalled: bool,
    trace: Vec<TracePoint>,
}

fn descend(model: &Model, pop: &Population, start: Vec<f64>, cfg: &DescentConfig) -> Result<RestartOutcome> {
    let mut theta = start;
    let (mut mse, mut grad) = model.population_mse_and_grad(&theta, pop)?;
    if !mse.is_finite() {
        return Err(Error::Optimization("non-finite MSE at the starting point".into()));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    let mut gn = norm2(&grad);
    let mut step_used = cfg.initial_step;
    while iterations < cfg.max_iters {
        if cfg.trace {
            trace.push(TracePoint { mse, grad_norm: gn });
        }
        if gn <= cfg.tol * (1.0 + mse.abs()) {
            converged = true;
            break;
        }
        let mut step = cfg.initial_step;
        let mut accepted = None;
        while step > 1e-30 {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            match model.population_mse(&trial, pop) {
                Ok(v) if v.is_finite() && v <= mse - cfg.armijo * step * gn * gn => {
                    accepted = Some(trial);
                    step_used = step;
                    break;
                }
                Ok(_) | Err(Error::Evaluation { .. }) => step *= cfg.backtrack,
                Err(e) => return Err(e),
            }
        }
        let Some(next) = accepted else {
            // no Armijo step exists at working precision
            break;
        };
        let (next_mse, next_grad) = model.population_mse_and_grad(&next, pop)?;
        if !next_mse.is_finite() {
            return Err(Error::Optimization("non-finite MSE during descent".into()));
        }
        if next_mse > mse {
            return Err(Error::Consistency(format!(
                "accepted step increased MSE from {mse} to {next_mse}"
            )));
        }
        stalled = mse - next_mse <= STALL_ULPS * f64::EPSILON * mse.abs().max(f64::MIN_POSITIVE);
        theta = next;
        mse = next_mse;
        grad = next_grad;
        gn = norm2(&grad);
        iterations += 1;
        if stalled {
            break;
        }
    }
    if stalled && !converged {
        // MSE differences are rounding noise here but the gradient is not
        let noise = STALL_ULPS * f64::EPSILON * mse.abs();
        let mut step = step_used;
        let mut polish = 0;
        while polish < POLISH_ITERS && iterations < cfg.max_iters && gn > cfg.tol * (1.0 + mse.abs()) {
            let mut moved = false;
            while step > 1e-30 {
                let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
                match model.population_mse_and_grad(&trial, pop) {
                    Ok((v, g)) if v.is_finite() && v <= mse + noise && norm2(&g) < gn => {
                        if cfg.trace {
                            trace.push(TracePoint { mse, grad_norm: gn });
                        }
                        theta = trial;
                        mse = v;
                        gn = norm2(&g);
                        grad = g;
                        moved = true;
                        break;
                    }
                    Ok(_) | Err(Error::Evaluation { .. }) => step *= cfg.backtrack,
                    Err(e) => return Err(e),
                }
            }
            if !moved {
                break;
            }
            polish += 1;
            iterations += 1;
        }
    }
    if !converged && gn <= cfg.tol * (1.0 + mse.abs()) {
        converged = true;
    }
    Ok(RestartOutcome { theta, mse, grad_norm: gn, iterations, converged, stalled, trace })
}

/// Seeded Gaussian start for restart `index`, independent of other restarts.
pub fn restart_start(seed: u64, index: usize, dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
}

/// Gradient descent with Armijo backtracking from `cfg.restarts` starts.
///
/// Restart 0 starts at `anchor` (or the zero vector); restarts `1..cfg.restarts`
/// are seeded Gaussian; `extra_starts` follow in order.
pub fn minimize_mse(
    model: &Model,
    pop: &Population,
    cfg: &DescentConfig,
    anchor: Option<&[f64]>,
    extra_starts: &[Vec<f64>],
) -> Result<OptimizationResult> {
    if cfg.restarts == 0 {
        return Err(Error::Precondition("restarts must be at least 1".into()));
    }
    let d = model.param_dim();
    let mut starts = Vec::with_capacity(cfg.restarts + extra_starts.len());
    starts.push(match anchor {
        Some(a) if a.len() == d => a.to_vec(),
        Some(a) => return Err(Error::Shape(format!("anchor has {} entries, model has {d}", a.len()))),
        None => vec![0.0; d],
    });
    for i in 1..cfg.restarts {
        starts.push(restart_start(cfg.seed, i, d, cfg.init_scale));
    }
    for s in extra_starts {
        if s.len() != d {
            return Err(Error::Shape("extra start has the wrong dimension".into()));
        }
        starts.push(s.clone());
    }

    let outcomes: Vec<Result<RestartOutcome>> =
        starts.into_par_iter().map(|s| descend(model, pop, s, cfg)).collect();

    let mut abandoned = Vec::new();
    let mut summaries = Vec::new();
    let mut best: Option<(usize, RestartOutcome)> = None;
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                summaries.push(RestartSummary {
                    index: i,
                    mse: o.mse,
                    grad_norm: o.grad_norm,
                    iterations: o.iterations,
                    converged: o.converged,
                    stalled: o.stalled,
                });
                if best.as_ref().is_none_or(|(_, b)| o.mse < b.mse - TIE_TOL) {
                    best = Some((i, o));
                }
            }
            Err(e @ (Error::Optimization(_) | Error::Evaluation { .. })) => abandoned.push((i, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let n_restarts = summaries.len() + abandoned.len();
    let (best_restart, o) =
        best.ok_or_else(|| Error::Optimization("all restarts were abandoned".into()))?;
    Ok(OptimizationResult {
        theta_hat: o.theta,
        mse: o.mse,
        n_restarts,
        best_restart,
        converged: o.converged,
        grad_norm_final: o.grad_norm,
        restarts: summaries,
        abandoned,
        trace: cfg.trace.then_some(o.trace),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCertificate {
    pub min_mse: f64,
    pub argmin: Vec<f64>,
    pub n_points: usize,
    pub step: f64,
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Exhaustive MSE evaluation over a box grid; the lexicographically first
/// minimizer wins ties.
pub fn grid_certify(model: &Model, pop: &Population, bounds: &[(f64, f64)], step: f64) -> Result<GridCertificate> {
    let d = model.param_dim();
    if d > MAX_GRID_DIM {
        return Err(Error::Precondition(format!(
            "grid certification refuses {d} parameters (limit {MAX_GRID_DIM})"
        )));
    }
    if bounds.len() != d {
        return Err(Error::Shape(format!("{} intervals for {d} parameters", bounds.len())));
    }
    if !(step > 0.0) {
        return Err(Error::Precondition("grid step must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| axis(lo, hi, step)).collect();
    let n_points: usize = axes.iter().map(Vec::len).product();
    let inner: usize = axes.iter().skip(1).map(Vec::len).product();

    let per_outer: Vec<Result<(f64, Vec<f64>)>> = axes[0]
        .par_iter()
        .map(|&first| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut theta = vec![first; d];
            for flat in 0..inner {
                let mut rem = flat;
                for k in (1..d).rev() {
                    theta[k] = axes[k][rem % axes[k].len()];
                    rem /= axes[k].len();
                }
                let v = model.population_mse(&theta, pop)?;
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, theta.clone()));
                }
            }
            Ok(best.expect("nonempty axis"))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in per_outer {
        let (v, t) = r?;
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, t));
        }
    }
    let (min_mse, argmin) = best.expect("nonempty grid");
    Ok(GridCertificate { min_mse, argmin, n_points, step })
}

/// Largest deviation between the analytic θ-gradient of population MSE and
/// central differences, relative to the larger gradient's max-norm (floor 1e-8).
pub fn check_gradient_consistency(model: &Model, pop: &Population, theta: &[f64], fd_step: f64) -> Result<f64> {
    let (_, analytic) = model.population_mse_and_grad(theta, pop)?;
    let mut fd = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let h = fd_step * (1.0 + theta[k].abs());
        let mut plus = theta.to_vec();
        plus[k] += h;
        let mut minus = theta.to_vec();
        minus[k] -= h;
        fd.push((model.population_mse(&plus, pop)? - model.population_mse(&minus, pop)?) / (2.0 * h));
    }
    let scale = analytic
        .iter()
        .chain(&fd)
        .fold(1e-8f64, |m, v| m.max(v.abs()));
    Ok(analytic.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve, Matrix};
    use crate::model_zoo::{Activation, Feature, NetworkArchitecture};
    use crate::population::CondFn;

    fn pop3(mean: CondFn) -> Population {
        Population::uniform_atoms(vec![vec![-1.0], vec![0.0], vec![1.0]], &mean, &CondFn::Constant { value: 0.0 })
            .unwrap()
    }

    fn affine() -> Model {
        Model::linear(
            1,
            vec![Feature::Constant { value: 1.0 }, Feature::Monomial { coord: 0, power: 1, scale: 1.0 }],
        )
        .unwrap()
    }

    fn normal_equations(model: &Model, pop: &Population) -> Vec<f64> {
        let Model::LinearFeatures { features, .. } = model else { unreachable!() };
        let d = features.len();
        let mut sigma = Matrix::zeros(d, d);
        let mut rhs = vec![0.0; d];
        for (i, x) in pop.points().enumerate() {
            let t: Vec<f64> = features.iter().map(|f| f.eval(x)).collect();
            sigma.add_outer(&t, pop.weights()[i]);
            for k in 0..d {
                rhs[k] += pop.weights()[i] * t[k] * pop.cond_mean()[i];
            }
        }
        solve(&sigma, &rhs).unwrap()
    }

    #[test]
    fn linear_matches_normal_equations() {
        let pop = Population::atoms(
            vec![vec![-2.0], vec![0.5], vec![1.0], vec![3.0]],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![1.0, -0.5, 2.0, 0.3],
            vec![0.0, 0.2, 0.0, 0.1],
        )
        .unwrap();
        let m = affine();
        let beta = normal_equations(&m, &pop);
        let cfg = DescentConfig { restarts: 3, ..Default::default() };
        let r = minimize_mse(&m, &pop, &cfg, None, &[]).unwrap();
        assert!(r.converged);
        for (a, b) in r.theta_hat.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let oracle_mse = m.population_mse(&beta, &pop).unwrap();
        assert!((r.mse - oracle_mse).abs() < 1e-8);
        assert!((m.population_mse(&r.theta_hat, &pop).unwrap() - r.mse).abs() < 1e-10);
    }

    #[test]
    fn reproducible_and_warm_start_dominates() {
        let pop = pop3(CondFn::Polynomial { coord: 0, coefficients: vec![0.0, 0.0, 1.0] });
        let m = Model::Mlp { arch: NetworkArchitecture::new(vec![1, 2], Activation::ShiftedTanh).unwrap() };
        let cfg = DescentConfig { restarts: 4, seed: 11, max_iters: 300, ..Default::default() };
        let a = minimize_mse(&m, &pop, &cfg, None, &[]).unwrap();
        let b = minimize_mse(&m, &pop, &cfg, None, &[]).unwrap();
        assert_eq!(a, b);
        let zero = m.population_mse(&vec![0.0; m.param_dim()], &pop).unwrap();
        assert!(a.mse <= zero);
    }

    #[test]
    fn trace_is_monotone() {
        let pop = pop3(CondFn::Polynomial { coord: 0, coefficients: vec![0.2, 1.0] });
        let m = Model::Logistic { input_dim: 1 };
        let cfg = DescentConfig { restarts: 1, max_iters: 200, trace: true, ..Default::default() };
        let r = minimize_mse(&m, &pop, &cfg, Some(&[0.3, -0.4]), &[]).unwrap();
        let trace = r.trace.unwrap();
        assert!(trace.windows(2).all(|w| w[1].mse <= w[0].mse));
    }

    #[test]
    fn zero_restarts_rejected() {
        let pop = pop3(CondFn::Constant { value: 0.0 });
        let cfg = DescentConfig { restarts: 0, ..Default::default() };
        assert!(minimize_mse(&affine(), &pop, &cfg, None, &[]).is_err());
    }

    #[test]
    fn grid_parabola_vertex() {
        let pop = pop3(CondFn::Polynomial { coord: 0, coefficients: vec![-2.0 / 3.0, 0.0, 1.0] });
        let m = Model::linear(1, vec![Feature::Monomial { coord: 0, power: 1, scale: 1.0 }]).unwrap();
        let g = grid_certify(&m, &pop, &[(-2.0, 2.0)], 0.01).unwrap();
        assert_eq!(g.n_points, 401);
        assert!(g.argmin[0].abs() < 0.01);
    }

    #[test]
    fn grid_constant_model_finds_mean() {
        let pop = pop3(CondFn::Polynomial { coord: 0, coefficients: vec![0.0, 0.0, 1.0] });
        let m = Model::linear(1, vec![Feature::Constant { value: 1.0 }]).unwrap();
        let g = grid_certify(&m, &pop, &[(0.0, 1.0)], 1.0 / 3.0).unwrap();
        assert!((g.argmin[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn grid_degenerate_box() {
        let pop = pop3(CondFn::Polynomial { coord: 0, coefficients: vec![0.0, 1.0] });
        let g = grid_certify(&affine(), &pop, &[(0.5, 0.5), (1.0, 1.0)], 0.1).unwrap();
        assert_eq!(g.n_points, 1);
        assert_eq!(g.argmin, vec![0.5, 1.0]);
    }

    #[test]
    fn grid_refuses_high_dim() {
        let pop = pop3(CondFn::Constant { value: 0.0 });
        let m = Model::OneLayerNn { input_dim: 1 };
        let err = grid_certify(&m, &pop, &[(0.0, 1.0); 4], 0.5).unwrap_err();
        assert!(err.to_string().contains("refuses"));
    }

    #[test]
    fn gradient_consistency() {
        let pop = pop3(CondFn::Polynomial { coord: 0, coefficients: vec![0.1, 0.3, 0.5] });
        assert!(check_gradient_consistency(&affine(), &pop, &[0.4, -1.2], 1e-5).unwrap() <= 1e-9);
        let logistic = Model::Logistic { input_dim: 1 };
        for theta in [[0.3, -0.7], [-1.5, 2.0], [0.0, 0.0]] {
            assert!(check_gradient_consistency(&logistic, &pop, &theta, 1e-5).unwrap() <= 1e-6);
        }
    }
}
