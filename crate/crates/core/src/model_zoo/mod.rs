//! Differentiable parametric families with analytic θ-gradients and θ-Hessians.

mod activation;
mod mlp;

pub use activation::{sigmoid, Activation};
pub use mlp::{Layer, NetworkArchitecture, NetworkParams, NetworkParamsJson};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::population::Population;

/// A basis function `T_i: R^p -> R` for the linear-features model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Feature {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// `scale * x[coord]^power`
    Monomial {
        coord: usize,
        power: u32,
        #[serde(default = "one")]
        scale: f64,
    },
    Cosine { coord: usize, frequency: f64 },
}

fn one() -> f64 {
    1.0
}

impl Feature {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Feature::Constant { value } => *value,
            Feature::Monomial { coord, power, scale } => scale * x[*coord].powi(*power as i32),
            Feature::Cosine { coord, frequency } => (frequency * x[*coord]).cos(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Feature::Constant { value } => format!("{value}"),
            Feature::Monomial { coord, power, scale } if *scale == 1.0 => format!("x{coord}^{power}"),
            Feature::Monomial { coord, power, scale } => format!("{scale}*x{coord}^{power}"),
            Feature::Cosine { coord, frequency } => format!("cos({frequency}*x{coord})"),
        }
    }

    fn max_coord(&self) -> Option<usize> {
        match self {
            Feature::Constant { .. } => None,
            Feature::Monomial { coord, .. } | Feature::Cosine { coord, .. } => Some(*coord),
        }
    }
}

/// A parametric family `{f_θ : θ ∈ R^d}` on `R^p`.
///
/// Parameter layouts:
/// * `LinearFeatures`: `β_1..β_d`
/// * `Logistic`: `(β_0, β_1..β_p)` with `f = σ(β_0 + βᵀx)`
/// * `OneLayerNn`: `(α, β_1..β_p, γ, δ)` with `f = γ + δ σ(α + βᵀx)`
/// * `Mlp`: layer order, see [`NetworkParams::flatten`]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Model {
    LinearFeatures { input_dim: usize, features: Vec<Feature> },
    Logistic { input_dim: usize },
    OneLayerNn { input_dim: usize },
    Mlp { arch: NetworkArchitecture },
}

impl Model {
    pub fn linear(input_dim: usize, features: Vec<Feature>) -> Result<Self> {
        let m = Model::LinearFeatures { input_dim, features };
        m.validate()?;
        Ok(m)
    }

    pub fn mlp(arch: NetworkArchitecture) -> Result<Self> {
        arch.validate()?;
        Ok(Model::Mlp { arch })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::LinearFeatures { input_dim, features } => {
                if features.is_empty() {
                    return Err(Error::Shape("linear model needs at least one feature".into()));
                }
                if let Some(c) = features.iter().filter_map(Feature::max_coord).find(|c| c >= input_dim) {
                    return Err(Error::Shape(format!("feature uses coordinate {c} of a {input_dim}-dim input")));
                }
                Ok(())
            }
            Model::Logistic { input_dim } | Model::OneLayerNn { input_dim } if *input_dim == 0 => {
                Err(Error::Shape("input_dim must be positive".into()))
            }
            Model::Mlp { arch } => arch.validate(),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::LinearFeatures { .. } => "linear_features",
            Model::Logistic { .. } => "logistic",
            Model::OneLayerNn { .. } => "one_layer_nn",
            Model::Mlp { .. } => "mlp",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::LinearFeatures { input_dim, .. }
            | Model::Logistic { input_dim }
            | Model::OneLayerNn { input_dim } => *input_dim,
            Model::Mlp { arch } => arch.input_dim(),
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            Model::LinearFeatures { features, .. } => features.len(),
            Model::Logistic { input_dim } => input_dim + 1,
            Model::OneLayerNn { input_dim } => input_dim + 3,
            Model::Mlp { arch } => arch.param_count(),
        }
    }

    /// Whether `f_θ(x)` is C² in θ everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Model::Mlp { arch } if arch.activation == Activation::Relu)
    }

    /// Binds a parameter vector, validating its length once.
    pub fn at<'a>(&'a self, theta: &'a [f64]) -> Result<Bound<'a>> {
        if theta.len() != self.param_dim() {
            return Err(Error::Shape(format!(
                "{} model has {} parameters, got {}",
                self.name(),
                self.param_dim(),
                theta.len()
            )));
        }
        let network = match self {
            Model::Mlp { arch } => Some(NetworkParams::from_flat(arch, theta)?),
            _ => None,
        };
        Ok(Bound { model: self, theta, network })
    }

    pub fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.at(theta)?.eval(x)
    }

    pub fn grad_theta(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.at(theta)?.grad(x)
    }

    pub fn hess_theta(&self, theta: &[f64], x: &[f64]) -> Result<Matrix> {
        self.at(theta)?.hess(x)
    }

    /// `E[Var(Y|X)] + E[(E[Y|X] - f_θ(X))²]`.
    pub fn population_mse(&self, theta: &[f64], pop: &Population) -> Result<f64> {
        let f = self.at(theta)?.values_on(pop)?;
        Ok(mse_from_values(pop, &f))
    }

    /// Population MSE and its θ-gradient `-2 E[(E[Y|X] - f_θ(X)) ∇_θ f_θ(X)]`.
    pub fn population_mse_and_grad(&self, theta: &[f64], pop: &Population) -> Result<(f64, Vec<f64>)> {
        let bound = self.at(theta)?;
        let mut grad = vec![0.0; theta.len()];
        let mut g = vec![0.0; theta.len()];
        let mut values = Vec::with_capacity(pop.len());
        for (i, x) in pop.points().enumerate() {
            let f = bound.eval_and_grad_into(x, &mut g)?;
            if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { point: x.to_vec(), value: f });
            }
            let w = pop.weights()[i];
            let r = pop.cond_mean()[i] - f;
            for (gk, dk) in grad.iter_mut().zip(&g) {
                *gk -= 2.0 * w * r * dk;
            }
            values.push(f);
        }
        Ok((mse_from_values(pop, &values), grad))
    }
}

/// MSE of a predictor given its values on the support.
pub fn mse_from_values(pop: &Population, f: &[f64]) -> f64 {
    let resid: Vec<f64> = pop.cond_mean().iter().zip(f).map(|(m, v)| (m - v) * (m - v)).collect();
    pop.mean_of(pop.cond_var()) + pop.mean_of(&resid)
}

/// A model with a fixed parameter vector.
#[derive(Debug, Clone)]
pub struct Bound<'a> {
    model: &'a Model,
    theta: &'a [f64],
    network: Option<NetworkParams>,
}

impl Bound<'_> {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.model.input_dim() {
            return Err(Error::Shape(format!(
                "point has dim {}, model expects {}",
                x.len(),
                self.model.input_dim()
            )));
        }
        Ok(())
    }

    fn linear_index(&self, x: &[f64]) -> f64 {
        self.theta[0] + self.theta[1..=x.len()].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let t = self.theta;
        Ok(match self.model {
            Model::LinearFeatures { features, .. } => {
                features.iter().zip(t).map(|(f, b)| b * f.eval(x)).sum()
            }
            Model::Logistic { .. } => sigmoid(self.linear_index(x)),
            Model::OneLayerNn { input_dim } => {
                t[input_dim + 1] + t[input_dim + 2] * sigmoid(self.linear_index(x))
            }
            Model::Mlp { .. } => self.network.as_ref().expect("bound mlp").eval(x)?,
        })
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_and_grad(x)?.1)
    }

    pub fn eval_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; self.theta.len()];
        let f = self.eval_and_grad_into(x, &mut g)?;
        Ok((f, g))
    }

    /// Writes `∇_θ f_θ(x)` into `g` (length `param_dim`) and returns `f_θ(x)`.
    pub fn eval_and_grad_into(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        self.check(x)?;
        let t = self.theta;
        Ok(match self.model {
            Model::LinearFeatures { features, .. } => {
                for (gk, f) in g.iter_mut().zip(features) {
                    *gk = f.eval(x);
                }
                g.iter().zip(t).map(|(a, b)| a * b).sum()
            }
            Model::Logistic { .. } => {
                let s = sigmoid(self.linear_index(x));
                let m2 = s * (1.0 - s);
                g[0] = m2;
                for (gk, v) in g[1..].iter_mut().zip(x) {
                    *gk = v * m2;
                }
                s
            }
            Model::OneLayerNn { input_dim } => {
                let p = *input_dim;
                let (gamma, delta) = (t[p + 1], t[p + 2]);
                let m1 = sigmoid(self.linear_index(x));
                let m2 = m1 * (1.0 - m1);
                g[0] = delta * m2;
                for (gk, v) in g[1..=p].iter_mut().zip(x) {
                    *gk = delta * v * m2;
                }
                g[p + 1] = 1.0;
                g[p + 2] = m1;
                gamma + delta * m1
            }
            Model::Mlp { .. } => {
                let (f, net_g) = self.network.as_ref().expect("bound mlp").eval_and_grad(x)?;
                g.copy_from_slice(&net_g);
                f
            }
        })
    }

    pub fn hess(&self, x: &[f64]) -> Result<Matrix> {
        self.check(x)?;
        let t = self.theta;
        let d = t.len();
        let mut h = Matrix::zeros(d, d);
        match self.model {
            Model::LinearFeatures { .. } => {}
            Model::Logistic { .. } => {
                let s = sigmoid(self.linear_index(x));
                let m3 = s * (1.0 - s) * (1.0 - 2.0 * s);
                let v: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
                h.add_outer(&v, m3);
            }
            Model::OneLayerNn { input_dim } => {
                let p = *input_dim;
                let delta = t[p + 2];
                let s = sigmoid(self.linear_index(x));
                let m2 = s * (1.0 - s);
                let m3 = m2 * (1.0 - 2.0 * s);
                let v: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
                for i in 0..=p {
                    for j in 0..=p {
                        h[(i, j)] = delta * m3 * v[i] * v[j];
                    }
                    h[(i, p + 2)] = m2 * v[i];
                    h[(p + 2, i)] = m2 * v[i];
                }
            }
            Model::Mlp { .. } => {
                // analytic gradient plus one central-difference level
                for k in 0..d {
                    let step = 1e-5 * (1.0 + t[k].abs());
                    let mut plus = t.to_vec();
                    plus[k] += step;
                    let mut minus = t.to_vec();
                    minus[k] -= step;
                    let gp = self.model.grad_theta(&plus, x)?;
                    let gm = self.model.grad_theta(&minus, x)?;
                    for j in 0..d {
                        h[(j, k)] = (gp[j] - gm[j]) / (2.0 * step);
                    }
                }
                for i in 0..d {
                    for j in 0..i {
                        let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                        h[(i, j)] = s;
                        h[(j, i)] = s;
                    }
                }
            }
        }
        Ok(h)
    }

    pub fn values_on(&self, pop: &Population) -> Result<Vec<f64>> {
        pop.try_values(|x| self.eval(x))
    }

    /// Column `k` holds `∂_k f_θ` on the support.
    pub fn grad_columns(&self, pop: &Population) -> Result<Vec<Vec<f64>>> {
        let d = self.theta.len();
        let mut cols = vec![Vec::with_capacity(pop.len()); d];
        for x in pop.points() {
            let g = self.grad(x)?;
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Evaluation { point: x.to_vec(), value: *bad });
            }
            for (c, v) in cols.iter_mut().zip(g) {
                c.push(v);
            }
        }
        Ok(cols)
    }

    /// Whether the model sits on a ReLU kink at `x`.
    pub fn on_kink(&self, x: &[f64]) -> Result<bool> {
        match &self.network {
            Some(net) => net.on_kink(x),
            None => Ok(false),
        }
    }
}

/// Maps one-layer-NN parameters `(α, β, γ, δ)` to the equivalent `[p, 1]` sigmoid MLP layout.
pub fn one_layer_to_network(theta: &[f64]) -> Result<NetworkParams> {
    if theta.len() < 4 {
        return Err(Error::Shape("one-layer NN needs at least 4 parameters".into()));
    }
    let p = theta.len() - 3;
    let arch = NetworkArchitecture::new(vec![p, 1], Activation::Sigmoid)?;
    let mut flat = theta[1..=p].to_vec();
    flat.extend([theta[0], theta[p + 2], theta[p + 1]]);
    NetworkParams::from_flat(&arch, &flat)
}

/// Inverse of [`one_layer_to_network`]; requires a `[p, 1]` sigmoid network.
pub fn network_to_one_layer(net: &NetworkParams) -> Result<Vec<f64>> {
    if net.arch.widths.len() != 2 || net.arch.widths[1] != 1 || net.arch.activation != Activation::Sigmoid {
        return Err(Error::Shape("only [p, 1] sigmoid networks are one-layer NNs".into()));
    }
    let mut theta = vec![net.hidden[0].bias[0]];
    theta.extend_from_slice(&net.hidden[0].weights);
    theta.push(net.output.bias[0]);
    theta.push(net.output.weights[0]);
    Ok(theta)
}
