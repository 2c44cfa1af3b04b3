//! Checks of the four hypotheses for a (model, θ₀, population) triple:
//! Fisher positive-definiteness, strong identifiability, square-integrability
//! of the local Hessian envelope, and support cardinality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{distance, dot, norm2, symmetric_eigen, Matrix};
use crate::model_zoo::Model;
use crate::population::{Cardinality, Population};

/// `locally_identifiable` needs `lambda_min > FISHER_REL_TOL * lambda_max`.
pub const FISHER_REL_TOL: f64 = 1e-8;
/// Eigenvalues below `-PSD_TOL` mean the Fisher computation is broken.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherReport {
    pub matrix: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Monte Carlo standard error of each eigenvalue (zero on exact populations).
    pub eigen_std_errors: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub tolerance: f64,
    pub locally_identifiable: bool,
}

/// `I(θ₀) = E[∇f ∇fᵀ]` and its spectrum.
pub fn fisher(model: &Model, theta0: &[f64], pop: &Population) -> Result<FisherReport> {
    let cols = model.at(theta0)?.grad_columns(pop)?;
    let d = cols.len();
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = pop.inner_values(&cols[i], &cols[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let eig = symmetric_eigen(&m)?;
    let lambda_min = eig.values[0];
    let lambda_max = *eig.values.last().expect("d >= 1");
    if lambda_min < -PSD_TOL {
        return Err(Error::Consistency(format!("Fisher matrix has eigenvalue {lambda_min} < 0")));
    }
    // first-order perturbation: lambda_k = E[(v_k . grad)^2]
    let eigen_std_errors = (0..d)
        .map(|k| {
            if !pop.is_monte_carlo() {
                return 0.0;
            }
            let proj: Vec<f64> = (0..pop.len())
                .map(|n| {
                    let s: f64 = (0..d).map(|i| eig.vectors[(i, k)] * cols[i][n]).sum();
                    s * s
                })
                .collect();
            pop.std_error_of(&proj)
        })
        .collect();
    let tolerance = FISHER_REL_TOL * lambda_max.max(0.0);
    Ok(FisherReport {
        matrix: m.to_rows(),
        eigenvalues: eig.values,
        eigen_std_errors,
        lambda_min,
        lambda_max,
        tolerance,
        locally_identifiable: lambda_min > tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVerdict {
    Pass,
    CounterexampleFound,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub theta: Vec<f64>,
    /// `‖f_θ(X) - f_θ₀(X)‖_L²`
    pub l2_distance: f64,
    /// `‖θ - θ₀‖₂`
    pub param_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongIdentProbeResult {
    pub verdict: ProbeVerdict,
    pub witness: Option<Witness>,
    /// Smallest function distance found over admissible θ.
    pub best_l2_distance: Option<f64>,
    pub far_radius: f64,
    pub close_tol: f64,
    /// Model evaluations over the support, summed over restarts.
    pub search_budget: usize,
    pub vacuous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Admissible θ satisfy `‖θ - θ₀‖ >= far_radius`.
    pub far_radius: f64,
    /// Witness threshold on `‖f_θ - f_θ₀‖_L²`.
    pub close_tol: f64,
    /// Number of restarts.
    pub budget: usize,
    pub seed: u64,
    /// Search stays inside `‖θ - θ₀‖ <= search_radius`.
    pub search_radius: f64,
    pub local_iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { far_radius: 1.0, close_tol: 1e-3, budget: 16, seed: 0, search_radius: 10.0, local_iters: 300 }
    }
}

fn project_annulus(theta0: &[f64], theta: &mut [f64], inner: f64, outer: f64) {
    let r = distance(theta, theta0);
    let target = r.clamp(inner, outer);
    if r == 0.0 {
        theta[0] = theta0[0] + inner;
        return;
    }
    if target != r {
        for (t, c) in theta.iter_mut().zip(theta0) {
            *t = c + (*t - c) * target / r;
        }
    }
}

/// Function distance minimized over `far_radius <= ‖θ - θ₀‖ <= search_radius`
/// by projected gradient descent from seeded starts.
pub fn probe_strong_identifiability(
    model: &Model,
    theta0: &[f64],
    pop: &Population,
    cfg: &ProbeConfig,
) -> Result<StrongIdentProbeResult> {
    if cfg.budget == 0 {
        return Err(Error::Precondition("probe budget must be at least 1".into()));
    }
    let d = model.param_dim();
    let base = model.at(theta0)?.values_on(pop)?;
    if cfg.far_radius > cfg.search_radius {
        return Ok(StrongIdentProbeResult {
            verdict: ProbeVerdict::Pass,
            witness: None,
            best_l2_distance: None,
            far_radius: cfg.far_radius,
            close_tol: cfg.close_tol,
            search_budget: 0,
            vacuous: true,
        });
    }
    // squared function distance to f_θ₀ is the MSE against a noiseless target f_θ₀
    let reference = pop.with_conditional(base, vec![0.0; pop.len()])?;

    let runs: Vec<Result<(Vec<f64>, f64, usize)>> = (0..cfg.budget)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(restart as u64);
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm2(&dir).max(1e-300);
            let rho = cfg.far_radius + rng.random::<f64>() * (cfg.search_radius - cfg.far_radius);
            let mut theta: Vec<f64> = theta0.iter().zip(&dir).map(|(c, u)| c + rho * u / n).collect();
            project_annulus(theta0, &mut theta, cfg.far_radius, cfg.search_radius);

            let mut evals = 1;
            let (mut val, mut grad) = model.population_mse_and_grad(&theta, &reference)?;
            for _ in 0..cfg.local_iters {
                let mut step = 1.0;
                let mut moved = false;
                while step > 1e-12 {
                    let mut trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
                    project_annulus(theta0, &mut trial, cfg.far_radius, cfg.search_radius);
                    let disp: Vec<f64> = theta.iter().zip(&trial).map(|(a, b)| a - b).collect();
                    evals += 1;
                    match model.population_mse(&trial, &reference) {
                        Ok(v) if v.is_finite() && v <= val - 1e-4 * dot(&grad, &disp) && v < val => {
                            theta = trial;
                            val = v;
                            moved = true;
                            break;
                        }
                        Ok(_) | Err(Error::Evaluation { .. }) => step *= 0.5,
                        Err(e) => return Err(e),
                    }
                }
                if !moved {
                    break;
                }
                evals += 1;
                grad = model.population_mse_and_grad(&theta, &reference)?.1;
            }
            Ok((theta, val.max(0.0).sqrt(), evals))
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut search_budget = 0;
    for r in runs {
        let (theta, dist, evals) = r?;
        search_budget += evals;
        if best.as_ref().is_none_or(|b| dist < b.1) {
            best = Some((theta, dist));
        }
    }
    let (theta, dist) = best.expect("budget >= 1");
    let verdict = if dist < cfg.close_tol {
        ProbeVerdict::CounterexampleFound
    } else if dist > 10.0 * cfg.close_tol {
        ProbeVerdict::Pass
    } else {
        ProbeVerdict::Inconclusive
    };
    let witness = (verdict == ProbeVerdict::CounterexampleFound).then(|| Witness {
        param_distance: distance(&theta, theta0),
        theta,
        l2_distance: dist,
    });
    Ok(StrongIdentProbeResult {
        verdict,
        witness,
        best_l2_distance: Some(dist),
        far_radius: cfg.far_radius,
        close_tol: cfg.close_tol,
        search_budget,
        vacuous: false,
    })
}

/// Recomputes a witness's function and parameter distances.
pub fn revalidate_witness(model: &Model, theta0: &[f64], pop: &Population, theta: &[f64]) -> Result<Witness> {
    let a = model.at(theta0)?.values_on(pop)?;
    let b = model.at(theta)?.values_on(pop)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(Witness {
        theta: theta.to_vec(),
        l2_distance: pop.norm_values(&diff),
        param_distance: distance(theta, theta0),
    })
}

/// Closed-form strong-identifiability certificate for linear-features models:
/// `‖f_β - f_β'‖² = (β - β')ᵀ Σ (β - β') >= λ_min(Σ) ‖β - β'‖²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearCertificate {
    pub sigma_min: f64,
    /// Lower bound on the function distance at parameter distance `far_radius`.
    pub min_l2_distance: f64,
    pub far_radius: f64,
    pub passed: bool,
}

pub fn linear_certificate(model: &Model, pop: &Population, far_radius: f64) -> Result<LinearCertificate> {
    if !matches!(model, Model::LinearFeatures { .. }) {
        return Err(Error::Precondition("linear certificate applies to linear-features models only".into()));
    }
    let zero = vec![0.0; model.param_dim()];
    let f = fisher(model, &zero, pop)?;
    let sigma_min = f.lambda_min.max(0.0);
    Ok(LinearCertificate {
        sigma_min,
        min_l2_distance: sigma_min.sqrt() * far_radius,
        far_radius,
        passed: f.locally_identifiable,
    })
}

/// For logistic regression around θ₀ = 0 with standard Gaussian X: if
/// `‖f_θ - 1/2‖_L² <= δ` then `‖θ‖₂ <= theta_bound(δ)`, via Markov's inequality,
/// symmetry of `αᵀX`, and the Gaussian CDF.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticCertificate {
    pub delta: f64,
    /// `log((1 + 4δ) / (1 - 4δ))`
    pub logit_radius: f64,
    pub intercept_bound: f64,
    pub slope_bound: f64,
    pub theta_bound: f64,
}

pub fn logistic_gaussian_certificate(delta: f64) -> Result<LogisticCertificate> {
    if !(delta > 0.0 && delta < 0.25) {
        return Err(Error::Precondition(format!("certificate needs 0 < δ < 1/4, got {delta}")));
    }
    let c = ((1.0 + 4.0 * delta) / (1.0 - 4.0 * delta)).ln();
    // 2 Φ(-2C/‖α‖) <= 1/4  <=>  ‖α‖ <= 2C / Φ⁻¹(7/8)
    let z = Normal::standard().inverse_cdf(7.0 / 8.0);
    let slope_bound = 2.0 * c / z;
    Ok(LogisticCertificate {
        delta,
        logit_radius: c,
        intercept_bound: c,
        slope_bound,
        theta_bound: c.hypot(slope_bound),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianEnvelope {
    pub radius: f64,
    pub grid_density: usize,
    pub n_grid_points: usize,
    /// `‖max_ij max_grid |∂²_ij f_θ(X)|‖_L²`; a lower bound on the supremum over the ball.
    pub envelope_l2: f64,
    pub lower_bound_only: bool,
}

/// Deterministic grid in `B(θ₀, R)`: θ₀ plus points at radii `R j / (m - 1)`,
/// `j = 1..m-1`, along `±e_i` and (for `d <= 8`) `(±e_i ± e_j)/√2`.
/// Doubling `m - 1` yields a superset, so the envelope is monotone along such grids.
pub fn envelope_grid(theta0: &[f64], radius: f64, grid_density: usize) -> Vec<Vec<f64>> {
    let d = theta0.len();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut u = vec![0.0; d];
            u[i] = s;
            dirs.push(u);
        }
    }
    if d <= 8 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..d {
            for j in (i + 1)..d {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut u = vec![0.0; d];
                    u[i] = si * r;
                    u[j] = sj * r;
                    dirs.push(u);
                }
            }
        }
    }
    let mut grid = vec![theta0.to_vec()];
    if grid_density >= 2 {
        let levels = grid_density - 1;
        for j in 1..=levels {
            let rho = radius * j as f64 / levels as f64;
            for u in &dirs {
                grid.push(theta0.iter().zip(u).map(|(c, v)| c + rho * v).collect());
            }
        }
    }
    grid
}

pub fn hessian_envelope(
    model: &Model,
    theta0: &[f64],
    radius: f64,
    pop: &Population,
    grid_density: usize,
) -> Result<HessianEnvelope> {
    if !(radius > 0.0) {
        return Err(Error::Precondition("envelope radius must be positive".into()));
    }
    if grid_density == 0 {
        return Err(Error::Precondition("grid density must be at least 1".into()));
    }
    let grid = envelope_grid(theta0, radius, grid_density);
    let bound: Vec<_> = grid.iter().map(|t| model.at(t)).collect::<Result<_>>()?;
    let sq = pop.try_values(|x| {
        let mut worst = 0.0f64;
        for b in &bound {
            let h = b.hess(x)?;
            if let Some(bad) = h.as_slice().iter().find(|v| !v.is_finite()) {
                return Err(Error::Evaluation { point: x.to_vec(), value: *bad });
            }
            worst = worst.max(h.max_abs());
        }
        Ok(worst * worst)
    })?;
    Ok(HessianEnvelope {
        radius,
        grid_density,
        n_grid_points: grid.len(),
        envelope_l2: pop.mean_of(&sq).sqrt(),
        lower_bound_only: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportCheck {
    pub passed: bool,
    pub cardinality: Cardinality,
    pub required_above: usize,
    pub reason: String,
}

/// `|supp X| > d + 1`.
pub fn check_support_cardinality(pop: &Population, d: usize) -> SupportCheck {
    let cardinality = pop.cardinality();
    let (passed, reason) = match cardinality {
        Cardinality::Infinite => (true, "infinite support".to_string()),
        Cardinality::Finite(n) => (n > d + 1, format!("{n} support points vs required > {}", d + 1)),
    };
    SupportCheck { passed, cardinality, required_above: d + 1, reason }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::Feature;
    use crate::population::{CondFn, Sampler};

    fn atoms(xs: &[f64]) -> Population {
        Population::uniform_atoms(
            xs.iter().map(|&x| vec![x]).collect(),
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap()
    }

    fn affine() -> Model {
        Model::linear(
            1,
            vec![Feature::Constant { value: 1.0 }, Feature::Monomial { coord: 0, power: 1, scale: 1.0 }],
        )
        .unwrap()
    }

    #[test]
    fn linear_fisher_is_gram_matrix() {
        let pop = atoms(&[-1.0, 0.0, 2.0]);
        let f = fisher(&affine(), &[0.3, -2.0], &pop).unwrap();
        let ex = 1.0 / 3.0;
        let ex2 = 5.0 / 3.0;
        assert!((f.matrix[0][0] - 1.0).abs() < 1e-15);
        assert!((f.matrix[0][1] - ex).abs() < 1e-15);
        assert!((f.matrix[1][1] - ex2).abs() < 1e-15);
        assert!(f.locally_identifiable);
        let g = fisher(&affine(), &[9.0, 1.0], &pop).unwrap();
        assert_eq!(f.matrix, g.matrix);
    }

    #[test]
    fn collinear_features_are_singular() {
        let m = Model::linear(
            1,
            vec![
                Feature::Monomial { coord: 0, power: 1, scale: 1.0 },
                Feature::Monomial { coord: 0, power: 1, scale: 2.0 },
            ],
        )
        .unwrap();
        let f = fisher(&m, &[0.0, 0.0], &atoms(&[-1.0, 0.5, 2.0])).unwrap();
        assert!(!f.locally_identifiable);
    }

    #[test]
    fn one_layer_fisher_singular_at_zero_slope() {
        let m = Model::OneLayerNn { input_dim: 1 };
        let f = fisher(&m, &[0.4, 0.0, 0.1, 1.0], &atoms(&[-2.0, -1.0, 0.0, 1.0, 3.0])).unwrap();
        assert!(f.lambda_min <= FISHER_REL_TOL * f.lambda_max);
        assert!(!f.locally_identifiable);
    }

    #[test]
    fn support_cardinality() {
        let three = atoms(&[-1.0, 0.0, 1.0]);
        assert!(check_support_cardinality(&three, 1).passed);
        assert!(!check_support_cardinality(&three, 2).passed);
        let gauss = Population::monte_carlo(
            Sampler::StandardNormal { dim: 1 },
            0,
            10,
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap();
        let c = check_support_cardinality(&gauss, 50);
        assert!(c.passed);
        assert_eq!(c.reason, "infinite support");
    }

    #[test]
    fn linear_envelope_is_zero() {
        let env = hessian_envelope(&affine(), &[0.0, 0.0], 3.0, &atoms(&[-1.0, 2.0]), 5).unwrap();
        assert_eq!(env.envelope_l2, 0.0);
    }

    #[test]
    fn single_point_grid() {
        let m = Model::Logistic { input_dim: 1 };
        let pop = atoms(&[-1.0, 0.5, 2.0]);
        let theta0 = [0.3, -0.2];
        let env = hessian_envelope(&m, &theta0, 1.0, &pop, 1).unwrap();
        assert_eq!(env.n_grid_points, 1);
        let oracle: f64 = pop
            .points()
            .map(|x| m.hess_theta(&theta0, x).unwrap().max_abs().powi(2) / 3.0)
            .sum::<f64>()
            .sqrt();
        assert!((env.envelope_l2 - oracle).abs() < 1e-15);
    }

    #[test]
    fn envelope_monotone_on_nested_grids() {
        let m = Model::Logistic { input_dim: 1 };
        let pop = atoms(&[-1.5, 0.0, 0.7, 2.0]);
        let vals: Vec<f64> = [1, 2, 3, 5, 9]
            .iter()
            .map(|&g| hessian_envelope(&m, &[0.0, 0.0], 1.0, &pop, g).unwrap().envelope_l2)
            .collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert!(vals[4] > 0.0 && vals[4].is_finite());
    }

    #[test]
    fn vacuous_probe() {
        let cfg = ProbeConfig { far_radius: 1e12, search_radius: 10.0, ..Default::default() };
        let r = probe_strong_identifiability(&affine(), &[0.0, 0.0], &atoms(&[0.0, 1.0, 2.0]), &cfg).unwrap();
        assert_eq!(r.verdict, ProbeVerdict::Pass);
        assert!(r.vacuous);
    }

    #[test]
    fn linear_probe_passes() {
        let pop = atoms(&[-1.0, 0.0, 1.0]);
        let cfg = ProbeConfig { far_radius: 0.5, budget: 4, ..Default::default() };
        let r = probe_strong_identifiability(&affine(), &[0.0, 0.0], &pop, &cfg).unwrap();
        assert_eq!(r.verdict, ProbeVerdict::Pass);
        let cert = linear_certificate(&affine(), &pop, 0.5).unwrap();
        assert!(cert.passed);
        assert!(r.best_l2_distance.unwrap() >= cert.min_l2_distance - 1e-9);
    }

    #[test]
    fn logistic_certificate_values() {
        let c = logistic_gaussian_certificate(0.05).unwrap();
        assert!((c.logit_radius - (1.2f64 / 0.8).ln()).abs() < 1e-15);
        assert!(c.theta_bound > c.slope_bound);
        assert!(logistic_gaussian_certificate(0.25).is_err());
        assert!(logistic_gaussian_certificate(0.0).is_err());
    }
}
