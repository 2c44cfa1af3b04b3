//! Feedforward regressors with a linear scalar output.

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{Error, Result};

/// Widths `w_0..w_D` of the input and hidden layers; the output is scalar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkArchitecture {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl NetworkArchitecture {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Self { widths, activation };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Shape("architecture needs an input width and at least one hidden layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Number of hidden layers D.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn last_width(&self) -> usize {
        *self.widths.last().expect("validated architecture")
    }

    pub fn param_count(&self) -> usize {
        let hidden: usize = self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        hidden + self.last_width() + 1
    }
}

/// One affine map: `weights` is `rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.cols..(j + 1) * self.cols]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.weights[j * self.cols..(j + 1) * self.cols]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows).map(|j| {
            self.row(j).iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.bias[j]
        }));
    }
}

/// Weights and biases `W^(d), b^(d)` for `1 <= d <= D`, plus the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: NetworkArchitecture,
    pub hidden: Vec<Layer>,
    pub output: Layer,
}

/// Serialized form: shape header plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParamsJson {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        let hidden = arch.widths.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect();
        Self { arch: arch.clone(), hidden, output: Layer::zeros(1, arch.last_width()) }
    }

    /// Inverse of [`NetworkParams::flatten`]: `W^(1)` row-major, `b^(1)`, ..., `W^(D+1)`, `b^(D+1)`.
    pub fn from_flat(arch: &NetworkArchitecture, theta: &[f64]) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "expected {} network parameters, got {}",
                arch.param_count(),
                theta.len()
            )));
        }
        let mut params = Self::zeros(arch);
        let mut it = theta.iter().copied();
        for layer in params.hidden.iter_mut().chain(std::iter::once(&mut params.output)) {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(params)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for layer in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn to_json(&self) -> NetworkParamsJson {
        NetworkParamsJson {
            widths: self.arch.widths.clone(),
            activation: self.arch.activation,
            params: self.flatten(),
        }
    }

    pub fn from_json(json: &NetworkParamsJson) -> Result<Self> {
        let arch = NetworkArchitecture::new(json.widths.clone(), json.activation)?;
        Self::from_flat(&arch, &json.params)
    }

    /// Hidden activations `H^(1..=D)` for input `x`.
    pub fn hidden_values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let act = self.arch.activation;
        let mut out = Vec::with_capacity(self.hidden.len());
        let mut z = Vec::new();
        let mut h = x.to_vec();
        for layer in &self.hidden {
            layer.apply(&h, &mut z);
            h = z.iter().map(|&v| act.value(v)).collect();
            out.push(h.clone());
        }
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::Shape(format!(
                "input has dim {}, network expects {}",
                x.len(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let act = self.arch.activation;
        let mut z = Vec::new();
        let mut h = x.to_vec();
        for layer in &self.hidden {
            layer.apply(&h, &mut z);
            h.clear();
            h.extend(z.iter().map(|&v| act.value(v)));
        }
        Ok(self.output.row(0).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.output.bias[0])
    }

    /// True when some hidden pre-activation is exactly zero at `x` under ReLU.
    pub fn on_kink(&self, x: &[f64]) -> Result<bool> {
        Ok(self.arch.activation == Activation::Relu && self.min_abs_preactivation(x)? == 0.0)
    }

    /// Smallest `|z|` over all hidden pre-activations at `x`.
    pub fn min_abs_preactivation(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let act = self.arch.activation;
        let mut z = Vec::new();
        let mut h = x.to_vec();
        let mut min = f64::INFINITY;
        for layer in &self.hidden {
            layer.apply(&h, &mut z);
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
            h = z.iter().map(|&v| act.value(v)).collect();
        }
        Ok(min)
    }

    /// Value and flat parameter gradient by backpropagation.
    pub fn eval_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let act = self.arch.activation;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.hidden {
            let mut z = Vec::new();
            layer.apply(acts.last().expect("nonempty"), &mut z);
            acts.push(z.iter().map(|&v| act.value(v)).collect());
            pre.push(z);
        }
        let last = acts.last().expect("nonempty");
        let value = self.output.row(0).iter().zip(last).map(|(w, v)| w * v).sum::<f64>()
            + self.output.bias[0];

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.hidden.len() + 1);
        grads.push((last.clone(), vec![1.0]));
        let mut upstream = self.output.row(0).to_vec();
        for (d, layer) in self.hidden.iter().enumerate().rev() {
            let gz: Vec<f64> =
                upstream.iter().zip(&pre[d]).map(|(g, z)| g * act.derivative(*z)).collect();
            let input = &acts[d];
            let mut gw = vec![0.0; layer.rows * layer.cols];
            for (j, gzj) in gz.iter().enumerate() {
                for (k, xk) in input.iter().enumerate() {
                    gw[j * layer.cols + k] = gzj * xk;
                }
            }
            let mut next = vec![0.0; layer.cols];
            for (j, gzj) in gz.iter().enumerate() {
                for (k, w) in layer.row(j).iter().enumerate() {
                    next[k] += w * gzj;
                }
            }
            grads.push((gw, gz));
            upstream = next;
        }
        let mut flat = Vec::with_capacity(self.arch.param_count());
        for (gw, gb) in grads.into_iter().rev() {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok((value, flat))
    }

    /// Reorders the hidden units of layer `d` (1-based) by `perm`:
    /// rows of `W^(d)`, entries of `b^(d)`, columns of `W^(d+1)`.
    pub fn permute_hidden(&self, d: usize, perm: &[usize]) -> Result<Self> {
        if d == 0 || d > self.hidden.len() {
            return Err(Error::Shape(format!("no hidden layer {d}")));
        }
        let width = self.hidden[d - 1].rows;
        let mut seen = vec![false; width];
        if perm.len() != width || perm.iter().any(|&p| p >= width || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape("not a permutation of the layer's units".into()));
        }
        let mut out = self.clone();
        let src = &self.hidden[d - 1];
        let dst = &mut out.hidden[d - 1];
        for (new, &old) in perm.iter().enumerate() {
            dst.row_mut(new).copy_from_slice(src.row(old));
            dst.bias[new] = src.bias[old];
        }
        let (src_next, dst_next) = if d == self.hidden.len() {
            (&self.output, &mut out.output)
        } else {
            (&self.hidden[d], &mut out.hidden[d])
        };
        for r in 0..src_next.rows {
            for (new, &old) in perm.iter().enumerate() {
                dst_next.weights[r * src_next.cols + new] = src_next.weights[r * src_next.cols + old];
            }
        }
        Ok(out)
    }
}
