//! Adversarial targets `g = c + ε h` with `h` orthogonal in L²(pop) to the
//! constants and to every parameter-gradient direction at θ₀, so that θ₀ is a
//! stationary point of population MSE and, for small ε, an empirical global minimizer.

use serde::{Deserialize, Serialize};

use crate::audit::fisher;
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::model_zoo::Model;
use crate::optimizer::{grid_certify, minimize_mse, DescentConfig, GridCertificate, OptimizationResult};
use crate::population::{CondFn, Population};

/// Relative norm below which a projected vector counts as dependent.
pub const RANK_TOL: f64 = 1e-10;
/// `f_θ₀` counts as constant when its variance over the support is below this.
pub const CONSTANT_VAR_TOL: f64 = 1e-12;
/// A rival beats θ₀ only if its MSE is lower by more than this.
pub const RIVAL_MARGIN: f64 = 1e-10;
/// Calibration gives up once ε drops below this.
pub const MIN_EPSILON: f64 = 1e-8;

/// Candidate functions for the orthogonal complement, evaluated on the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dictionary {
    /// `1{X = a}` for each atom `a`, in atom order.
    AtomIndicators,
    /// `cos(k x[coord]) - exp(-k²/2)` for `k = 1..=max_frequency`; mean zero under N(0,1).
    EvenCosines { coord: usize, max_frequency: usize },
    /// Probabilists' Hermite polynomials `He_n(x[coord])`, `n = min_degree..=max_degree`,
    /// clipped to `[-clip, clip]`.
    ClippedHermite { coord: usize, min_degree: usize, max_degree: usize, clip: f64 },
    Catalog { functions: Vec<CondFn> },
    Chain { parts: Vec<Dictionary> },
}

impl Dictionary {
    /// Atom indicators on finite supports; bounded even functions of the first
    /// coordinate on sampler populations.
    pub fn default_for(pop: &Population) -> Self {
        if pop.is_monte_carlo() {
            Dictionary::Chain {
                parts: vec![
                    Dictionary::EvenCosines { coord: 0, max_frequency: 4 },
                    Dictionary::ClippedHermite { coord: 0, min_degree: 2, max_degree: 6, clip: 10.0 },
                ],
            }
        } else {
            Dictionary::AtomIndicators
        }
    }

    /// `(name, values on the support)` for each element.
    pub fn elements(&self, pop: &Population) -> Result<Vec<(String, Vec<f64>)>> {
        let coord_ok = |c: usize| {
            if c < pop.dim() {
                Ok(())
            } else {
                Err(Error::Shape(format!("dictionary coordinate {c} out of range for dim {}", pop.dim())))
            }
        };
        Ok(match self {
            Dictionary::AtomIndicators => {
                if pop.is_monte_carlo() {
                    return Err(Error::Precondition("atom indicators need a finite support".into()));
                }
                (0..pop.len())
                    .map(|i| {
                        let mut v = vec![0.0; pop.len()];
                        v[i] = 1.0;
                        (format!("indicator{:?}", pop.point(i)), v)
                    })
                    .collect()
            }
            Dictionary::EvenCosines { coord, max_frequency } => {
                coord_ok(*coord)?;
                (1..=*max_frequency)
                    .map(|k| {
                        let f = k as f64;
                        let mean = (-0.5 * f * f).exp();
                        let v = pop.points().map(|x| (f * x[*coord]).cos() - mean).collect();
                        (format!("cos({k}*x{coord})-exp(-{k}^2/2)"), v)
                    })
                    .collect()
            }
            Dictionary::ClippedHermite { coord, min_degree, max_degree, clip } => {
                coord_ok(*coord)?;
                if !(*clip > 0.0) {
                    return Err(Error::Config("hermite clip must be positive".into()));
                }
                (*min_degree..=*max_degree)
                    .map(|n| {
                        let v = pop.points().map(|x| hermite(n, x[*coord]).clamp(-clip, *clip)).collect();
                        (format!("clip(He{n}(x{coord}),{clip})"), v)
                    })
                    .collect()
            }
            Dictionary::Catalog { functions } => functions
                .iter()
                .enumerate()
                .map(|(i, f)| Ok((format!("catalog[{i}]"), pop.cond_values(f)?)))
                .collect::<Result<_>>()?,
            Dictionary::Chain { parts } => {
                let mut all = Vec::new();
                for p in parts {
                    all.extend(p.elements(pop)?);
                }
                all
            }
        })
    }
}

fn hermite(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        (prev, cur) = (cur, x * cur - k as f64 * prev);
    }
    cur
}

/// `h = scale * (element - Σ_k protected_coefficients[k] * b_k)`, unit norm in L²(pop).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Complement {
    pub element_index: usize,
    pub element: String,
    pub protected_coefficients: Vec<f64>,
    pub scale: f64,
    pub protected_rank: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
}

struct Basis<'a> {
    pop: &'a Population,
    q: Vec<Vec<f64>>,
    // q[j] = Σ_k coef[j][k] b_k
    coef: Vec<Vec<f64>>,
}

impl Basis<'_> {
    fn project_out(&self, v: &mut [f64], c: &mut [f64]) {
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (q, qc) in self.q.iter().zip(&self.coef) {
                let r = self.pop.inner_values(v, q);
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= r * b;
                }
                for (a, b) in c.iter_mut().zip(qc) {
                    *a -= r * b;
                }
            }
        }
    }
}

/// Modified Gram-Schmidt with reorthogonalization: orthonormalize `protected`,
/// then return the first dictionary element whose projection onto the
/// complement keeps more than `RANK_TOL` of its norm.
pub fn gram_schmidt_complement(
    pop: &Population,
    protected: &[Vec<f64>],
    dictionary: &[(String, Vec<f64>)],
) -> Result<Complement> {
    let m = protected.len();
    let mut basis = Basis { pop, q: Vec::new(), coef: Vec::new() };
    for (k, b) in protected.iter().enumerate() {
        if b.len() != pop.len() {
            return Err(Error::Shape("protected function does not match the support".into()));
        }
        let n0 = pop.norm_values(b);
        let mut v = b.clone();
        let mut c = vec![0.0; m];
        c[k] = 1.0;
        basis.project_out(&mut v, &mut c);
        let n = pop.norm_values(&v);
        if n > RANK_TOL * n0 {
            v.iter_mut().for_each(|a| *a /= n);
            c.iter_mut().for_each(|a| *a /= n);
            basis.q.push(v);
            basis.coef.push(c);
        }
    }
    for (i, (name, e)) in dictionary.iter().enumerate() {
        if e.len() != pop.len() {
            return Err(Error::Shape("dictionary element does not match the support".into()));
        }
        let n0 = pop.norm_values(e);
        if n0 == 0.0 {
            continue;
        }
        let mut v = e.clone();
        let mut c = vec![0.0; m];
        basis.project_out(&mut v, &mut c);
        let n = pop.norm_values(&v);
        if n > RANK_TOL * n0 {
            v.iter_mut().for_each(|a| *a /= n);
            return Ok(Complement {
                element_index: i,
                element: name.clone(),
                // v = e + Σ c_k b_k, so h = (e - Σ (-c_k) b_k) / n
                protected_coefficients: c.iter().map(|a| -a).collect(),
                scale: 1.0 / n,
                protected_rank: basis.q.len(),
                values: v,
            });
        }
    }
    Err(Error::Precondition(
        "no orthogonal complement found; support too small or dictionary degenerate".into(),
    ))
}

/// Dimension of the span of `vectors` in L²(pop), at the Gram-Schmidt rank tolerance.
pub fn span_rank(pop: &Population, vectors: &[Vec<f64>]) -> usize {
    let mut basis = Basis { pop, q: Vec::new(), coef: Vec::new() };
    for b in vectors {
        let n0 = pop.norm_values(b);
        let mut v = b.clone();
        basis.project_out(&mut v, &mut []);
        let n = pop.norm_values(&v);
        if n > RANK_TOL * n0 {
            v.iter_mut().for_each(|a| *a /= n);
            basis.q.push(v);
            basis.coef.push(Vec::new());
        }
    }
    basis.q.len()
}

/// `[1, ∂_1 f_θ₀, ..., ∂_d f_θ₀]` on the support.
pub fn protected_basis(model: &Model, theta0: &[f64], pop: &Population) -> Result<Vec<Vec<f64>>> {
    let mut basis = vec![vec![1.0; pop.len()]];
    basis.extend(model.at(theta0)?.grad_columns(pop)?);
    Ok(basis)
}

/// `|⟨h, b⟩| / ‖b‖` per protected function (0 for a zero function).
pub fn orthogonality_residuals(pop: &Population, h: &[f64], protected: &[Vec<f64>]) -> Vec<f64> {
    protected
        .iter()
        .map(|b| {
            let n = pop.norm_values(b);
            if n == 0.0 {
                0.0
            } else {
                pop.inner_values(h, b).abs() / n
            }
        })
        .collect()
}

/// `‖∇_θ MSE(θ₀)‖₂` for the population carrying the target.
pub fn verify_stationarity(model: &Model, theta0: &[f64], target_pop: &Population) -> Result<f64> {
    Ok(norm2(&model.population_mse_and_grad(theta0, target_pop)?.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub descent: DescentConfig,
    /// Exhaustive grid check in addition to multi-start descent.
    pub grid: Option<GridSpec>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { descent: DescentConfig { restarts: 16, ..DescentConfig::default() }, grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationAttempt {
    pub epsilon: f64,
    pub mse_theta0: f64,
    pub best_rival_mse: f64,
    pub best_rival_theta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_min_mse: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub epsilon: f64,
    /// Always "empirical": the search samples θ, it does not cover every θ.
    pub certificate: &'static str,
    pub attempts: Vec<CalibrationAttempt>,
    pub optimization: OptimizationResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridCertificate>,
}

fn target_population(pop: &Population, c: f64, eps: f64, h: &[f64], noise_var: f64) -> Result<Population> {
    pop.with_conditional(h.iter().map(|v| c + eps * v).collect(), vec![noise_var; pop.len()])
}

/// Halve ε from `epsilon_init` until neither multi-start descent nor the
/// optional grid finds θ with `MSE(θ) < MSE(θ₀) - RIVAL_MARGIN`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_epsilon(
    model: &Model,
    theta0: &[f64],
    c: f64,
    h: &[f64],
    pop: &Population,
    epsilon_init: f64,
    noise_var: f64,
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    if !(epsilon_init > 0.0) || !epsilon_init.is_finite() {
        return Err(Error::Precondition("epsilon must be positive (degenerate perturbation)".into()));
    }
    let mut eps = epsilon_init;
    let mut attempts = Vec::new();
    while eps >= MIN_EPSILON {
        let tp = target_population(pop, c, eps, h, noise_var)?;
        let mse0 = model.population_mse(theta0, &tp)?;
        let opt = minimize_mse(model, &tp, &cfg.descent, Some(theta0), &[])?;
        let grid = match &cfg.grid {
            Some(g) => Some(grid_certify(model, &tp, &g.bounds, g.step)?),
            None => None,
        };
        let passed = opt.mse >= mse0 - RIVAL_MARGIN
            && grid.as_ref().is_none_or(|g| g.min_mse >= mse0 - RIVAL_MARGIN);
        attempts.push(CalibrationAttempt {
            epsilon: eps,
            mse_theta0: mse0,
            best_rival_mse: opt.mse,
            best_rival_theta: opt.theta_hat.clone(),
            grid_min_mse: grid.as_ref().map(|g| g.min_mse),
            passed,
        });
        if passed {
            return Ok(Calibration { epsilon: eps, certificate: "empirical", attempts, optimization: opt, grid });
        }
        eps *= 0.5;
    }
    Err(Error::Optimization(
        "calibration failed; model may not satisfy the identifiability hypotheses".into(),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct AdversarialTarget {
    pub theta0: Vec<f64>,
    /// Constant value of `f_θ₀`.
    pub c: f64,
    pub epsilon: f64,
    pub h_repr: Complement,
    /// Values of `h` (unit norm) per atom; omitted for sampler populations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_atom_values: Option<Vec<f64>>,
    /// `|⟨ε h, b⟩| / ‖b‖` over the protected basis `[1, ∇f_θ₀]`.
    pub ortho_residuals: Vec<f64>,
    /// `‖ε h‖`, equal to ε.
    pub h_norm: f64,
    pub mean_g: f64,
    pub var_g: f64,
    pub noise_var: f64,
    pub stationarity_grad_norm: f64,
    pub calibration: Calibration,
    #[serde(skip)]
    pub population: Population,
}

/// Build `g = c + ε h` for a model constant at θ₀ with nonsingular Fisher matrix.
pub fn build_target(
    model: &Model,
    theta0: &[f64],
    pop: &Population,
    dictionary: &Dictionary,
    epsilon_init: f64,
    noise_var: f64,
    cfg: &CalibrationConfig,
) -> Result<AdversarialTarget> {
    if !(epsilon_init > 0.0) {
        return Err(Error::Precondition("epsilon must be positive (degenerate perturbation)".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Precondition("noise variance must be nonnegative".into()));
    }
    let f0 = model.at(theta0)?.values_on(pop)?;
    let v = pop.var_of(&f0);
    if v > CONSTANT_VAR_TOL {
        return Err(Error::Precondition(format!("model is not constant at theta0 (variance {v:e})")));
    }
    let c = pop.mean_of(&f0);
    let fr = fisher(model, theta0, pop)?;
    if !fr.locally_identifiable {
        return Err(Error::Precondition(format!(
            "local identifiability fails: Fisher lambda_min {:e} <= {:e}",
            fr.lambda_min, fr.tolerance
        )));
    }
    let protected = protected_basis(model, theta0, pop)?;
    let comp = gram_schmidt_complement(pop, &protected, &dictionary.elements(pop)?)?;
    let calibration = calibrate_epsilon(model, theta0, c, &comp.values, pop, epsilon_init, noise_var, cfg)?;
    let eps = calibration.epsilon;
    let population = target_population(pop, c, eps, &comp.values, noise_var)?;
    let g = population.cond_mean();
    let scaled: Vec<f64> = comp.values.iter().map(|v| eps * v).collect();
    let target = AdversarialTarget {
        theta0: theta0.to_vec(),
        c,
        epsilon: eps,
        h_atom_values: (!pop.is_monte_carlo()).then(|| comp.values.clone()),
        ortho_residuals: orthogonality_residuals(pop, &scaled, &protected),
        h_norm: pop.norm_values(&scaled),
        mean_g: pop.mean_of(g),
        var_g: pop.var_of(g),
        noise_var,
        stationarity_grad_norm: verify_stationarity(model, theta0, &population)?,
        h_repr: comp,
        calibration,
        population,
    };
    target.check_invariants()?;
    Ok(target)
}

impl AdversarialTarget {
    /// Orthogonality, centering, variance, and stationarity tolerances.
    pub fn check_invariants(&self) -> Result<()> {
        let eps = self.epsilon;
        let fail = |m: String| Err(Error::Consistency(m));
        if let Some(r) = self.ortho_residuals.iter().find(|r| **r > 1e-9 * self.h_norm) {
            return fail(format!("orthogonality residual {r:e} exceeds 1e-9 * ‖h‖"));
        }
        if (self.mean_g - self.c).abs() > 1e-9 * self.h_norm.max(1.0) {
            return fail(format!("E[g] = {} differs from c = {}", self.mean_g, self.c));
        }
        if (self.var_g - eps * eps).abs() > 1e-9 * eps * eps {
            return fail(format!("Var(g) = {:e} differs from ε² = {:e}", self.var_g, eps * eps));
        }
        if self.stationarity_grad_norm > 1e-8 * (1.0 + eps) {
            return fail(format!("gradient norm {:e} at theta0 is not stationary", self.stationarity_grad_norm));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::Feature;
    use crate::population::Sampler;

    fn three_atoms() -> Population {
        Population::uniform_atoms(
            vec![vec![-1.0], vec![0.0], vec![1.0]],
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
    fn hermite_recurrence() {
        assert_eq!(hermite(0, 3.0), 1.0);
        assert_eq!(hermite(2, 3.0), 8.0);
        assert_eq!(hermite(3, 2.0), 2.0);
        assert_eq!(hermite(4, 1.0), -2.0);
    }

    #[test]
    fn complement_of_affine_on_three_atoms() {
        let pop = three_atoms();
        let protected = vec![vec![1.0; 3], vec![-1.0, 0.0, 1.0]];
        let dict = vec![("x^2".to_string(), vec![1.0, 0.0, 1.0])];
        let c = gram_schmidt_complement(&pop, &protected, &dict).unwrap();
        // x² - 2/3 = (1/3, -2/3, 1/3), squared norm 2/9
        let s = (2.0f64 / 9.0).sqrt();
        let expected = [1.0 / 3.0 / s, -2.0 / 3.0 / s, 1.0 / 3.0 / s];
        for (a, b) in c.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((c.protected_coefficients[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(c.protected_coefficients[1].abs() < 1e-12);
        assert!((c.scale - 1.0 / s).abs() < 1e-12);
    }

    #[test]
    fn full_span_has_no_complement() {
        let pop = Population::uniform_atoms(
            vec![vec![-1.0], vec![1.0]],
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap();
        let protected = protected_basis(&affine(), &[0.0, 0.0], &pop).unwrap();
        let dict = Dictionary::AtomIndicators.elements(&pop).unwrap();
        let e = gram_schmidt_complement(&pop, &protected, &dict).unwrap_err();
        assert!(e.to_string().contains("no orthogonal complement found"));
    }

    #[test]
    fn rank_of_affine_protected_basis() {
        let pop = three_atoms();
        let protected = protected_basis(&affine(), &[0.0, 0.0], &pop).unwrap();
        assert_eq!(protected.len(), 3);
        assert_eq!(span_rank(&pop, &protected), 2);
    }

    #[test]
    fn first_surviving_element_wins() {
        let pop = three_atoms();
        let protected = vec![vec![1.0; 3]];
        let dict = vec![
            ("const".to_string(), vec![2.0; 3]),
            ("x".to_string(), vec![-1.0, 0.0, 1.0]),
            ("x2".to_string(), vec![1.0, 0.0, 1.0]),
        ];
        let c = gram_schmidt_complement(&pop, &protected, &dict).unwrap();
        assert_eq!(c.element_index, 1);
    }

    #[test]
    fn linear_target_on_three_atoms() {
        let pop = three_atoms();
        let cfg = CalibrationConfig {
            descent: DescentConfig { restarts: 4, ..Default::default() },
            grid: Some(GridSpec { bounds: vec![(-2.0, 2.0), (-2.0, 2.0)], step: 0.05 }),
        };
        let t = build_target(&affine(), &[0.0, 0.0], &pop, &Dictionary::AtomIndicators, 0.5, 0.0, &cfg).unwrap();
        assert_eq!(t.epsilon, 0.5);
        assert_eq!(t.calibration.attempts.len(), 1);
        let h = t.h_atom_values.as_ref().unwrap();
        // proportional to x² - 2/3
        assert!((h[0] - h[2]).abs() < 1e-12 && (h[1] + 2.0 * h[0]).abs() < 1e-12);
        assert!(t.stationarity_grad_norm < 1e-15);
        assert!(norm2(&t.calibration.optimization.theta_hat) < 1e-8);
        assert_eq!(t.calibration.grid.as_ref().unwrap().argmin, vec![0.0, 0.0]);
    }

    #[test]
    fn broken_orthogonality_is_detected() {
        let pop = three_atoms();
        let cfg = CalibrationConfig::default();
        let t = build_target(&affine(), &[0.0, 0.0], &pop, &Dictionary::AtomIndicators, 0.5, 0.0, &cfg).unwrap();
        let g: Vec<f64> = t.population.cond_mean().iter().zip(pop.points()).map(|(g, x)| g + 0.1 * x[0]).collect();
        let bad = pop.with_conditional(g, vec![0.0; 3]).unwrap();
        let gn = verify_stationarity(&affine(), &[0.0, 0.0], &bad).unwrap();
        // -2 E[0.1 x · (1, x)] = (0, -0.2 · 2/3)
        assert!((gn - 0.2 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_epsilon_and_nonconstant_model() {
        let pop = three_atoms();
        let cfg = CalibrationConfig::default();
        assert!(build_target(&affine(), &[0.0, 0.0], &pop, &Dictionary::AtomIndicators, 0.0, 0.0, &cfg).is_err());
        let e = build_target(&affine(), &[0.0, 1.0], &pop, &Dictionary::AtomIndicators, 0.1, 0.0, &cfg).unwrap_err();
        assert!(e.to_string().contains("not constant"));
    }

    #[test]
    fn singular_fisher_is_rejected() {
        let pop = Population::uniform_atoms(
            (0..6).map(|i| vec![i as f64 - 2.5]).collect(),
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap();
        let m = Model::OneLayerNn { input_dim: 1 };
        let e = build_target(&m, &[0.3, 0.0, 0.1, 1.0], &pop, &Dictionary::AtomIndicators, 0.1, 0.0, &Default::default())
            .unwrap_err();
        assert!(e.to_string().contains("local identifiability fails"));
    }

    #[test]
    fn logistic_even_cosine_survives() {
        let pop = Population::monte_carlo(
            Sampler::StandardNormal { dim: 1 },
            3,
            20_000,
            &CondFn::Constant { value: 0.0 },
            &CondFn::Constant { value: 0.0 },
        )
        .unwrap();
        let m = Model::Logistic { input_dim: 1 };
        let protected = protected_basis(&m, &[0.0, 0.0], &pop).unwrap();
        let dict = Dictionary::default_for(&pop).elements(&pop).unwrap();
        let c = gram_schmidt_complement(&pop, &protected, &dict).unwrap();
        assert_eq!(c.element_index, 0);
        // projection barely changes an even, nearly centered function
        let raw = &dict[0].1;
        let r = pop.norm_values(raw);
        let diff: Vec<f64> = raw.iter().zip(&c.values).map(|(a, b)| a / r - b).collect();
        assert!(pop.norm_values(&diff) < 0.05);
    }
}
