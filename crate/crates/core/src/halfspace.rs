//! Search for a half-space indicator correlated with E[Y|X], and the best
//! affine predictor built on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Population;

/// Random directions per input dimension in the default budget.
pub const DIRECTIONS_PER_DIM: usize = 64;
/// Quantile levels scanned per direction on Monte Carlo populations.
pub const DEFAULT_QUANTILE_LEVELS: usize = 99;
/// Covariances below this are treated as zero.
pub const MIN_COVARIANCE: f64 = 1e-9;
/// Relative certification threshold on exact populations.
pub const EXACT_GAP_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceFinding {
    /// Unit direction.
    pub alpha: Vec<f64>,
    /// The event is `{alpha . x < t}`.
    pub t: f64,
    pub cov: f64,
    pub p_a: f64,
    /// Coefficient on the indicator.
    pub c1: f64,
    /// Intercept.
    pub c0: f64,
    pub var_y: f64,
    pub predicted_mse: f64,
    /// `var_y - predicted_mse = cov² / Var(1_A)`.
    pub gap: f64,
    pub gap_tolerance: f64,
    pub certified: bool,
    pub direction_index: usize,
    pub threshold_index: usize,
}

/// One scanned (direction, threshold) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub direction_index: usize,
    pub direction: String,
    pub threshold_index: usize,
    pub threshold: f64,
    pub p_a: f64,
    pub cov: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct HalfspaceScan {
    pub finding: HalfspaceFinding,
    pub rows: Vec<ScanRow>,
}

/// Search budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBudget {
    pub n_directions: usize,
    pub thresholds_per_direction: usize,
    pub seed: u64,
}

impl ScanBudget {
    pub fn default_for(dim: usize, seed: u64) -> Self {
        Self {
            n_directions: DIRECTIONS_PER_DIM * dim,
            thresholds_per_direction: DEFAULT_QUANTILE_LEVELS,
            seed,
        }
    }
}

/// Coordinate axes followed by `n_random` seeded unit vectors.
pub fn scan_directions(dim: usize, n_random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < dim + n_random {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            dirs.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    dirs
}

/// Candidate thresholds for sorted projections: midpoints between distinct
/// values on exact populations, empirical quantiles on Monte Carlo ones.
fn thresholds(sorted: &[f64], monte_carlo: bool, levels: usize) -> Vec<f64> {
    if monte_carlo {
        let n = sorted.len();
        let mut out: Vec<f64> = (1..=levels)
            .map(|l| {
                let q = l as f64 / (levels + 1) as f64;
                sorted[((q * n as f64) as usize).min(n - 1)]
            })
            .collect();
        out.dedup();
        out
    } else {
        sorted.windows(2).filter(|w| w[1] > w[0]).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn find_halfspace(pop: &Population, budget: ScanBudget) -> Result<HalfspaceFinding> {
    Ok(scan_halfspaces(pop, budget)?.finding)
}

/// Scans every budgeted (direction, threshold) pair and keeps the one
/// maximizing `|cov| / sqrt(p_A (1 - p_A))`; ties go to the earliest pair.
pub fn scan_halfspaces(pop: &Population, budget: ScanBudget) -> Result<HalfspaceScan> {
    let stats = pop.stats()?;
    if !stats.weak_learnable {
        return Err(Error::Precondition(format!(
            "weak learnability hypothesis fails: Var(E[Y|X]) = {:.3e} is not above tolerance {:.3e}",
            stats.gap, stats.tolerance
        )));
    }
    let mean_y = pop.mean_y();
    let dirs = scan_directions(pop.dim(), budget.n_directions, budget.seed);
    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, usize, f64)> = None;

    for (di, alpha) in dirs.iter().enumerate() {
        let mut proj: Vec<(f64, usize)> = pop
            .points()
            .enumerate()
            .map(|(i, x)| (alpha.iter().zip(x).map(|(a, b)| a * b).sum(), i))
            .collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let sorted: Vec<f64> = proj.iter().map(|p| p.0).collect();
        let ts = thresholds(&sorted, pop.is_monte_carlo(), budget.thresholds_per_direction);

        let mut idx = 0;
        let mut mass = 0.0;
        let mut first_moment = 0.0;
        for (ti, &t) in ts.iter().enumerate() {
            while idx < proj.len() && proj[idx].0 < t {
                let i = proj[idx].1;
                mass += pop.weights()[i];
                first_moment += pop.weights()[i] * pop.cond_mean()[i];
                idx += 1;
            }
            let var_ind = mass * (1.0 - mass);
            if !(var_ind > 0.0) {
                continue;
            }
            let cov = first_moment - mean_y * mass;
            let gap = cov * cov / var_ind;
            rows.push(ScanRow {
                direction_index: di,
                direction: format_direction(alpha),
                threshold_index: ti,
                threshold: t,
                p_a: mass,
                cov,
                gap,
            });
            let score = cov.abs() / var_ind.sqrt();
            if best.is_none_or(|b| score > b.0) {
                best = Some((score, di, ti, t));
            }
        }
    }

    let (_, di, ti, t) = best.ok_or_else(|| {
        Error::NotFound("no correlated halfspace found within budget: no nondegenerate threshold".into())
    })?;
    let mut finding = best_linear_predictor(pop, &dirs[di], t)?;
    if finding.cov.abs() < MIN_COVARIANCE {
        return Err(Error::NotFound(format!(
            "no correlated halfspace found within budget: best |cov| = {:.3e}",
            finding.cov.abs()
        )));
    }
    finding.direction_index = di;
    finding.threshold_index = ti;
    Ok(HalfspaceScan { finding, rows })
}

fn format_direction(alpha: &[f64]) -> String {
    alpha.iter().map(|a| format!("{a:.6}")).collect::<Vec<_>>().join(";")
}

/// Best affine predictor `c1 1_A + c0` for `A = {alpha . x < t}`.
pub fn best_linear_predictor(pop: &Population, alpha: &[f64], t: f64) -> Result<HalfspaceFinding> {
    if alpha.len() != pop.dim() {
        return Err(Error::Shape("direction dimension does not match the population".into()));
    }
    let ind = pop.values(|x| {
        if alpha.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() < t {
            1.0
        } else {
            0.0
        }
    })?;
    let p_a = pop.mean_of(&ind);
    let var_ind = p_a * (1.0 - p_a);
    if !(var_ind > 0.0) {
        return Err(Error::Precondition(format!("degenerate indicator: P(A) = {p_a}")));
    }
    let stats = pop.stats()?;
    let mean_y = pop.mean_y();
    let cov = pop.inner_values(pop.cond_mean(), &ind) - mean_y * p_a;
    let c1 = cov / var_ind;
    let c0 = mean_y - c1 * p_a;
    let gap = cov * cov / var_ind;

    // per-point MSE improvement over the constant E[Y]; its mean is `gap`
    let improvement: Vec<f64> = pop
        .cond_mean()
        .iter()
        .zip(&ind)
        .map(|(m, a)| (m - mean_y).powi(2) - (m - c1 * a - c0).powi(2))
        .collect();
    let gap_tolerance = pop.certification_tol(&improvement, EXACT_GAP_REL_TOL * stats.var_y);
    Ok(HalfspaceFinding {
        alpha: alpha.to_vec(),
        t,
        cov,
        p_a,
        c1,
        c0,
        var_y: stats.var_y,
        predicted_mse: stats.var_y - gap,
        gap,
        gap_tolerance,
        certified: gap > 0.0 && gap >= gap_tolerance,
        direction_index: 0,
        threshold_index: 0,
    })
}
