//! Joint laws of (X, Y) stored as an X-marginal plus E[Y|X] and Var(Y|X).
//!
//! Every population is a weighted point cloud. Atom populations carry exact
//! weights; Monte Carlo populations carry a seeded sample with equal weights,
//! and every expectation is taken against that fixed sample so that
//! orthogonality and stationarity computed on it are exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of atom weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Absolute weak-learnability tolerance on atom populations.
pub const ATOM_CERT_TOL: f64 = 1e-9;
/// Number of standard errors required for a Monte Carlo certificate.
pub const MC_CERT_SIGMAS: f64 = 3.0;

/// Named X-laws for Monte Carlo populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    StandardNormal { dim: usize },
    UniformBox { dim: usize, low: f64, high: f64 },
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match self {
            Sampler::StandardNormal { dim } | Sampler::UniformBox { dim, .. } => *dim,
        }
    }

    fn draw(&self, seed: u64, n: usize) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * self.dim();
        match self {
            Sampler::StandardNormal { .. } => {
                Ok((0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
            }
            Sampler::UniformBox { low, high, .. } => {
                let u = Uniform::new(*low, *high)
                    .map_err(|e| Error::InvalidPopulation(format!("uniform box: {e}")))?;
                Ok((0..len).map(|_| u.sample(&mut rng)).collect())
            }
        }
    }
}

/// Catalog of conditional-mean / conditional-variance functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CondFn {
    Constant {
        value: f64,
    },
    /// `sum_i coefficients[i] * x[coord]^i`
    Polynomial {
        coord: usize,
        coefficients: Vec<f64>,
    },
    /// `inside` on `{alpha . x < threshold}`, `outside` elsewhere.
    HalfspaceIndicator {
        alpha: Vec<f64>,
        threshold: f64,
        inside: f64,
        outside: f64,
    },
    /// `center + epsilon * (cos(frequency * x[coord]) - exp(-frequency^2 / 2))`,
    /// a bounded even function with mean `center` under a standard normal coordinate.
    CosineEvenPerturbation {
        coord: usize,
        frequency: f64,
        center: f64,
        epsilon: f64,
    },
    /// Explicit per-atom values, in atom order.
    AtomValues {
        values: Vec<f64>,
    },
}

impl CondFn {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let coord_of = |c: usize| {
            x.get(c).copied().ok_or_else(|| {
                Error::Shape(format!("coordinate {c} out of range for point of dim {}", x.len()))
            })
        };
        Ok(match self {
            CondFn::Constant { value } => *value,
            CondFn::Polynomial { coord, coefficients } => {
                let t = coord_of(*coord)?;
                coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            CondFn::HalfspaceIndicator { alpha, threshold, inside, outside } => {
                if alpha.len() != x.len() {
                    return Err(Error::Shape("halfspace direction has wrong dimension".into()));
                }
                let proj: f64 = alpha.iter().zip(x).map(|(a, b)| a * b).sum();
                if proj < *threshold {
                    *inside
                } else {
                    *outside
                }
            }
            CondFn::CosineEvenPerturbation { coord, frequency, center, epsilon } => {
                let t = coord_of(*coord)?;
                center + epsilon * ((frequency * t).cos() - (-0.5 * frequency * frequency).exp())
            }
            CondFn::AtomValues { .. } => {
                return Err(Error::Shape("atom_values needs an atom index, not a point".into()))
            }
        })
    }

    fn values_on(&self, points: &[f64], dim: usize) -> Result<Vec<f64>> {
        let n = points.len().checked_div(dim).unwrap_or(0);
        if let CondFn::AtomValues { values } = self {
            if values.len() != n {
                return Err(Error::Shape(format!(
                    "atom_values has {} entries for {n} support points",
                    values.len()
                )));
            }
            return Ok(values.clone());
        }
        points.chunks(dim).map(|x| self.eval(x)).collect()
    }
}

/// How the support of a population was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PopulationKind {
    Atoms,
    MonteCarlo { sampler: Sampler, seed: u64, n_samples: usize },
    /// Weighted points with no distinctness requirement; expectations are exact.
    WeightedSample,
}

/// Cardinality of supp X.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationStats {
    pub var_y: f64,
    pub expected_cond_var: f64,
    pub weak_learnable: bool,
    /// `var_y - expected_cond_var`, i.e. Var(E[Y|X]).
    pub gap: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct Population {
    kind: PopulationKind,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    cond_mean: Vec<f64>,
    cond_var: Vec<f64>,
}

impl Population {
    /// Finitely supported law with distinct atoms and explicit weights.
    pub fn atoms(
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        cond_mean: Vec<f64>,
        cond_var: Vec<f64>,
    ) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(Error::InvalidPopulation("no atoms".into()));
        }
        let dim = atoms[0].len();
        if dim == 0 || atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::InvalidPopulation("atoms must share a positive dimension".into()));
        }
        if weights.len() != n || cond_mean.len() != n || cond_var.len() != n {
            return Err(Error::InvalidPopulation(format!(
                "{n} atoms but {} weights, {} means, {} variances",
                weights.len(),
                cond_mean.len(),
                cond_var.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidPopulation("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidPopulation(format!("weights sum to {total}, not 1")));
        }
        for i in 0..n {
            for j in 0..i {
                if atoms[i] == atoms[j] {
                    return Err(Error::InvalidPopulation(format!(
                        "atoms {j} and {i} coincide at {:?}",
                        atoms[i]
                    )));
                }
            }
        }
        let pop = Self {
            kind: PopulationKind::Atoms,
            dim,
            points: atoms.concat(),
            weights,
            cond_mean,
            cond_var,
        };
        pop.check_conditionals()?;
        Ok(pop)
    }

    /// Uniform atoms with conditionals from the catalog.
    pub fn uniform_atoms(atoms: Vec<Vec<f64>>, cond_mean: &CondFn, cond_var: &CondFn) -> Result<Self> {
        let n = atoms.len();
        let dim = atoms.first().map_or(0, Vec::len);
        let flat = atoms.concat();
        let mean = cond_mean.values_on(&flat, dim)?;
        let var = cond_var.values_on(&flat, dim)?;
        Self::atoms(atoms, vec![1.0 / n as f64; n], mean, var)
    }

    /// Seeded sample of size `n_samples` from `sampler`.
    pub fn monte_carlo(
        sampler: Sampler,
        seed: u64,
        n_samples: usize,
        cond_mean: &CondFn,
        cond_var: &CondFn,
    ) -> Result<Self> {
        if n_samples == 0 || sampler.dim() == 0 {
            return Err(Error::InvalidPopulation("n_samples and dim must be positive".into()));
        }
        let dim = sampler.dim();
        let points = sampler.draw(seed, n_samples)?;
        let mean = cond_mean.values_on(&points, dim)?;
        let var = cond_var.values_on(&points, dim)?;
        let pop = Self {
            kind: PopulationKind::MonteCarlo { sampler, seed, n_samples },
            dim,
            points,
            weights: vec![1.0 / n_samples as f64; n_samples],
            cond_mean: mean,
            cond_var: var,
        };
        pop.check_conditionals()?;
        Ok(pop)
    }

    /// Weighted points where repeats are allowed.
    pub fn weighted_sample(
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        cond_mean: Vec<f64>,
        cond_var: Vec<f64>,
    ) -> Result<Self> {
        let n = points.len();
        let dim = points.first().map_or(0, Vec::len);
        if n == 0 || dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidPopulation("points must share a positive dimension".into()));
        }
        if weights.len() != n || cond_mean.len() != n || cond_var.len() != n {
            return Err(Error::InvalidPopulation("length mismatch".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidPopulation("weights must be positive and sum to 1".into()));
        }
        let pop = Self {
            kind: PopulationKind::WeightedSample,
            dim,
            points: points.concat(),
            weights,
            cond_mean,
            cond_var,
        };
        pop.check_conditionals()?;
        Ok(pop)
    }

    /// Same X-marginal with new conditional mean and variance values per support point.
    pub fn with_conditional(&self, cond_mean: Vec<f64>, cond_var: Vec<f64>) -> Result<Self> {
        if cond_mean.len() != self.len() || cond_var.len() != self.len() {
            return Err(Error::Shape("conditional values do not match the support".into()));
        }
        let pop = Self { cond_mean, cond_var, ..self.clone() };
        pop.check_conditionals()?;
        Ok(pop)
    }

    /// A catalog function evaluated at every support point, in order.
    pub fn cond_values(&self, f: &CondFn) -> Result<Vec<f64>> {
        f.values_on(&self.points, self.dim)
    }

    fn check_conditionals(&self) -> Result<()> {
        for i in 0..self.len() {
            let (m, v) = (self.cond_mean[i], self.cond_var[i]);
            if !m.is_finite() || !v.is_finite() {
                return Err(Error::Evaluation {
                    point: self.point(i).to_vec(),
                    value: if m.is_finite() { v } else { m },
                });
            }
            if v < 0.0 {
                return Err(Error::InvalidPopulation(format!(
                    "negative conditional variance {v} at {:?}",
                    self.point(i)
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &PopulationKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of support points (atoms or samples).
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cond_mean(&self) -> &[f64] {
        &self.cond_mean
    }

    pub fn cond_var(&self) -> &[f64] {
        &self.cond_var
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self.kind, PopulationKind::MonteCarlo { .. })
    }

    /// Whether X has a Lebesgue density (only the named samplers do).
    pub fn has_density(&self) -> bool {
        self.is_monte_carlo()
    }

    pub fn cardinality(&self) -> Cardinality {
        match self.kind {
            PopulationKind::Atoms => Cardinality::Finite(self.len()),
            PopulationKind::MonteCarlo { .. } => Cardinality::Infinite,
            PopulationKind::WeightedSample => {
                let mut pts: Vec<&[f64]> = self.points().collect();
                pts.sort_by(|a, b| {
                    a.iter()
                        .zip(*b)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                pts.dedup();
                Cardinality::Finite(pts.len())
            }
        }
    }

    /// All mass on a single point.
    pub fn is_degenerate(&self) -> bool {
        self.cardinality() == Cardinality::Finite(1)
    }

    /// `f` evaluated at every support point; errors name the first non-finite point.
    pub fn values<F: Fn(&[f64]) -> f64>(&self, f: F) -> Result<Vec<f64>> {
        self.points()
            .map(|x| {
                let v = f(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Evaluation { point: x.to_vec(), value: v })
                }
            })
            .collect()
    }

    /// Fallible variant of [`Population::values`].
    pub fn try_values<F: Fn(&[f64]) -> Result<f64>>(&self, f: F) -> Result<Vec<f64>> {
        self.points()
            .map(|x| {
                let v = f(x)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Evaluation { point: x.to_vec(), value: v })
                }
            })
            .collect()
    }

    /// Weighted mean of per-point values, summed in support order.
    pub fn mean_of(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Standard error of [`Population::mean_of`]: zero on exact populations,
    /// sample standard deviation over sqrt(n) on Monte Carlo ones.
    pub fn std_error_of(&self, values: &[f64]) -> f64 {
        match self.kind {
            PopulationKind::MonteCarlo { n_samples, .. } if n_samples > 1 => {
                let n = n_samples as f64;
                let m = self.mean_of(values);
                let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
                (ss / (n - 1.0)).sqrt() / n.sqrt()
            }
            _ => 0.0,
        }
    }

    /// Tolerance used to certify that a mean of `values` is strictly positive.
    pub fn certification_tol(&self, values: &[f64], exact_tol: f64) -> f64 {
        if self.is_monte_carlo() {
            MC_CERT_SIGMAS * self.std_error_of(values)
        } else {
            exact_tol
        }
    }

    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F) -> Result<f64> {
        Ok(self.mean_of(&self.values(f)?))
    }

    /// E[f(X) g(X)].
    pub fn l2_inner<F, G>(&self, f: F, g: G) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64,
        G: Fn(&[f64]) -> f64,
    {
        let a = self.values(f)?;
        let b = self.values(g)?;
        Ok(self.inner_values(&a, &b))
    }

    /// E[a b] for per-point value vectors.
    pub fn inner_values(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }

    pub fn norm_values(&self, a: &[f64]) -> f64 {
        self.inner_values(a, a).max(0.0).sqrt()
    }

    /// Var of per-point values (two-pass).
    pub fn var_of(&self, values: &[f64]) -> f64 {
        let m = self.mean_of(values);
        self.weights.iter().zip(values).map(|(w, v)| w * (v - m) * (v - m)).sum()
    }

    pub fn mean_y(&self) -> f64 {
        self.mean_of(&self.cond_mean)
    }

    pub fn stats(&self) -> Result<PopulationStats> {
        let expected_cond_var = self.mean_of(&self.cond_var);
        let m = self.mean_y();
        let dev2: Vec<f64> = self.cond_mean.iter().map(|v| (v - m) * (v - m)).collect();
        let var_mean = self.mean_of(&dev2);
        let var_y = var_mean + expected_cond_var;
        if var_y < -1e-10 || expected_cond_var < -1e-10 || var_mean < -1e-10 {
            return Err(Error::Consistency(format!(
                "negative variance: var_y = {var_y}, E[Var(Y|X)] = {expected_cond_var}"
            )));
        }
        let tolerance = self.certification_tol(&dev2, ATOM_CERT_TOL);
        Ok(PopulationStats {
            var_y,
            expected_cond_var,
            weak_learnable: var_mean > tolerance,
            gap: var_mean,
            tolerance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three_atoms(mean: CondFn) -> Population {
        Population::uniform_atoms(
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            &mean,
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap()
    }

    fn two_atoms() -> Population {
        Population::uniform_atoms(
            vec![vec![-1.0], vec![1.0]],
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn expect_on_atoms() {
        let pop = two_atoms();
        assert_eq!(pop.expect(|x| x[0]).unwrap(), 0.0);
        assert_eq!(pop.expect(|x| x[0] * x[0]).unwrap(), 1.0);
    }

    #[test]
    fn expect_names_bad_point() {
        let pop = two_atoms();
        match pop.expect(|x| 1.0 / (x[0] - 1.0)) {
            Err(Error::Evaluation { point, .. }) => assert_eq!(point, vec![1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stats_independent_y() {
        let pop = Population::uniform_atoms(
            vec![vec![0.0], vec![1.0]],
            &CondFn::Constant { value: 0.5 },
            &CondFn::Constant { value: 0.25 },
        )
        .unwrap();
        let s = pop.stats().unwrap();
        assert_relative_eq!(s.var_y, 0.25, epsilon = 1e-15);
        assert_relative_eq!(s.expected_cond_var, 0.25, epsilon = 1e-15);
        assert!(!s.weak_learnable);
    }

    #[test]
    fn stats_even_target() {
        let pop = three_atoms(CondFn::Polynomial { coord: 0, coefficients: vec![0.0, 0.0, 1.0] });
        let s = pop.stats().unwrap();
        assert_relative_eq!(s.var_y, 2.0 / 9.0, epsilon = 1e-15);
        assert_eq!(s.expected_cond_var, 0.0);
        assert!(s.weak_learnable);
    }

    #[test]
    fn stats_degenerate_y() {
        let pop = three_atoms(CondFn::Constant { value: 3.0 });
        let s = pop.stats().unwrap();
        assert_eq!(s.var_y, 0.0);
        assert!(!s.weak_learnable);
    }

    #[test]
    fn l2_inner_examples() {
        assert_eq!(two_atoms().l2_inner(|_| 1.0, |_| 1.0).unwrap(), 1.0);
        assert_eq!(two_atoms().l2_inner(|x| x[0], |x| x[0] * x[0]).unwrap(), 0.0);
        let three = three_atoms(CondFn::Constant { value: 0.0 });
        assert_relative_eq!(
            three.l2_inner(|x| x[0] * x[0], |x| x[0] * x[0]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rejects_bad_atoms() {
        let dup = Population::atoms(
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        );
        assert!(dup.is_err());
        let bad_w = Population::atoms(vec![vec![0.0], vec![1.0]], vec![0.7, 0.4], vec![0.0; 2], vec![0.0; 2]);
        assert!(bad_w.is_err());
        let zero_w = Population::atoms(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2]);
        assert!(zero_w.is_err());
        let neg_v = Population::atoms(vec![vec![0.0], vec![1.0]], vec![0.5; 2], vec![0.0; 2], vec![0.0, -1.0]);
        assert!(neg_v.is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let make = |seed| {
            Population::monte_carlo(
                Sampler::StandardNormal { dim: 2 },
                seed,
                1000,
                &CondFn::Constant { value: 0.0 },
                &CondFn::Constant { value: 0.0 },
            )
            .unwrap()
        };
        let a = make(3).expect(|x| x[0].sin() + x[1]).unwrap();
        let b = make(3).expect(|x| x[0].sin() + x[1]).unwrap();
        let c = make(4).expect(|x| x[0].sin() + x[1]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_box_sampler_stays_in_box() {
        let pop = Population::monte_carlo(
            Sampler::UniformBox { dim: 1, low: -2.0, high: 3.0 },
            1,
            500,
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap();
        assert!(pop.points().all(|x| (-2.0..3.0).contains(&x[0])));
    }

    #[test]
    fn cardinality_and_degeneracy() {
        assert_eq!(two_atoms().cardinality(), Cardinality::Finite(2));
        let single = Population::atoms(vec![vec![2.0]], vec![1.0], vec![0.0], vec![0.0]).unwrap();
        assert!(single.is_degenerate());
        let split = Population::weighted_sample(
            vec![vec![1.0], vec![1.0], vec![2.0]],
            vec![0.25, 0.25, 0.5],
            vec![0.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        assert_eq!(split.cardinality(), Cardinality::Finite(2));
    }

    #[test]
    fn cond_fn_catalog() {
        let poly = CondFn::Polynomial { coord: 0, coefficients: vec![1.0, 2.0, 3.0] };
        assert_eq!(poly.eval(&[2.0]).unwrap(), 17.0);
        let h = CondFn::HalfspaceIndicator { alpha: vec![1.0], threshold: 0.0, inside: 1.0, outside: -1.0 };
        assert_eq!(h.eval(&[-0.5]).unwrap(), 1.0);
        assert_eq!(h.eval(&[0.0]).unwrap(), -1.0);
        let c = CondFn::CosineEvenPerturbation { coord: 0, frequency: 1.0, center: 0.5, epsilon: 0.1 };
        assert_relative_eq!(c.eval(&[0.0]).unwrap(), 0.5 + 0.1 * (1.0 - (-0.5f64).exp()));
        assert!(matches!(poly.eval(&[]), Err(Error::Shape(_))));
    }
}
