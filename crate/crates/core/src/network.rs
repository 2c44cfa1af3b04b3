//! Explicit weight constructions that make a feedforward network approximate
//! `c2 * 1{alpha . x <= c1} + c0`, and the end-to-end weak-learning check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halfspace::{scan_halfspaces, HalfspaceFinding, ScanBudget, ScanRow, EXACT_GAP_REL_TOL};
use crate::model_zoo::{mse_from_values, Activation, NetworkArchitecture, NetworkParams, NetworkParamsJson};
use crate::population::Population;

/// The affine indicator target `c2 * 1{alpha . x <= c1} + c0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTarget {
    pub alpha: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c0: f64,
}

impl IndicatorTarget {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let z: f64 = self.alpha.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.c1;
        if z <= 0.0 {
            self.c2 + self.c0
        } else {
            self.c0
        }
    }

    fn shift(&self, x: &[f64]) -> f64 {
        self.alpha.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.c1
    }
}

/// How hidden layers `2..=D` carry the first unit forward in the tanh-form build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassThrough {
    /// `W_1^(d) = e_1`, zero bias: the last layer sees `σ^(D)(k z)`.
    Identity,
    /// `W_1^(d) = k e_1`, bias `-k/2`: each layer re-sharpens around 1/2, so the
    /// last unit still tends to `1{z > 0}` when `D >= 2`.
    Resharpen,
}

fn check_common(arch: &NetworkArchitecture, target: &IndicatorTarget, k: f64) -> Result<()> {
    arch.validate()?;
    if target.alpha.len() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "direction has dim {}, architecture input is {}",
            target.alpha.len(),
            arch.input_dim()
        )));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Precondition(format!("sharpness k must be positive, got {k}")));
    }
    Ok(())
}

pub fn build_tanh_indicator(
    arch: &NetworkArchitecture,
    target: &IndicatorTarget,
    k: f64,
    pass: PassThrough,
) -> Result<NetworkParams> {
    check_common(arch, target, k)?;
    if !arch.activation.is_tanh_form() {
        return Err(Error::Shape("tanh-form construction needs a tanh-form activation".into()));
    }
    let mut net = NetworkParams::zeros(arch);
    for (w, a) in net.hidden[0].row_mut(0).iter_mut().zip(&target.alpha) {
        *w = k * a;
    }
    net.hidden[0].bias[0] = -k * target.c1;
    for layer in net.hidden.iter_mut().skip(1) {
        match pass {
            PassThrough::Identity => layer.row_mut(0)[0] = 1.0,
            PassThrough::Resharpen => {
                layer.row_mut(0)[0] = k;
                layer.bias[0] = -0.5 * k;
            }
        }
    }
    net.output.weights[0] = -target.c2;
    net.output.bias[0] = target.c0 + target.c2;
    Ok(net)
}

/// Closed form of [`build_tanh_indicator`].
pub fn tanh_indicator_closed_form(
    act: Activation,
    depth: usize,
    target: &IndicatorTarget,
    k: f64,
    pass: PassThrough,
    x: &[f64],
) -> f64 {
    let mut h = act.value(k * target.shift(x));
    for _ in 1..depth {
        h = match pass {
            PassThrough::Identity => act.value(h),
            PassThrough::Resharpen => act.value(k * (h - 0.5)),
        };
    }
    target.c2 * (1.0 - h) + target.c0
}

pub fn build_relu_indicator(arch: &NetworkArchitecture, target: &IndicatorTarget, k: f64) -> Result<NetworkParams> {
    check_common(arch, target, k)?;
    if arch.activation != Activation::Relu {
        return Err(Error::Shape("ReLU construction needs the ReLU activation".into()));
    }
    if arch.last_width() < 2 {
        return Err(Error::Shape("ReLU construction requires two last-layer units".into()));
    }
    let depth = arch.depth();
    let mut net = NetworkParams::zeros(arch);
    let first: Vec<f64> = target.alpha.iter().map(|a| k * a).collect();
    net.hidden[0].row_mut(0).copy_from_slice(&first);
    net.hidden[0].bias[0] = -k * target.c1;
    if depth == 1 {
        net.hidden[0].row_mut(1).copy_from_slice(&first);
        net.hidden[0].bias[1] = -k * target.c1 - 1.0;
    } else {
        for layer in net.hidden.iter_mut().skip(1) {
            layer.row_mut(0)[0] = 1.0;
        }
        let last = net.hidden.last_mut().expect("depth >= 2");
        last.row_mut(1)[0] = 1.0;
        last.bias[1] = -1.0;
    }
    net.output.weights[0] = -target.c2;
    net.output.weights[1] = target.c2;
    net.output.bias[0] = target.c0 + target.c2;
    Ok(net)
}

/// `g(u) = relu(u) - relu(u - 1)`: 0 below 0, 1 above 1, linear between.
pub fn relu_ramp(u: f64) -> f64 {
    u.max(0.0) - (u - 1.0).max(0.0)
}

/// Closed form of [`build_relu_indicator`].
pub fn relu_indicator_closed_form(target: &IndicatorTarget, k: f64, x: &[f64]) -> f64 {
    target.c2 * (1.0 - relu_ramp(k * target.shift(x))) + target.c0
}

/// L² distance between a network and the indicator target, with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicatorError {
    pub l2: f64,
    pub std_error: f64,
}

pub fn l2_indicator_error(params: &NetworkParams, pop: &Population, target: &IndicatorTarget) -> Result<IndicatorError> {
    let sq = pop.try_values(|x| {
        let r = params.eval(x)? - target.eval(x);
        Ok(r * r)
    })?;
    let ms = pop.mean_of(&sq);
    let l2 = ms.max(0.0).sqrt();
    // delta method for sqrt of a mean
    let std_error = if l2 > 0.0 { pop.std_error_of(&sq) / (2.0 * l2) } else { 0.0 };
    Ok(IndicatorError { l2, std_error })
}

/// Builds the indicator network suited to the architecture's activation.
pub fn build_indicator(
    arch: &NetworkArchitecture,
    target: &IndicatorTarget,
    k: f64,
    pass: PassThrough,
) -> Result<NetworkParams> {
    if arch.activation == Activation::Relu {
        build_relu_indicator(arch, target, k)
    } else {
        build_tanh_indicator(arch, target, k, pass)
    }
}

/// `1, 2, 4, ..., 2^16`.
pub fn default_k_schedule() -> Vec<f64> {
    (0..=16).map(|e| f64::from(1u32 << e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub k: f64,
    pub mse: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub l2_indicator_error: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Outcome {
    pub finding: HalfspaceFinding,
    pub target: IndicatorTarget,
    pub var_y: f64,
    /// Lowest MSE along the schedule.
    pub achieved_mse: f64,
    pub achieved_k: f64,
    pub gap: f64,
    pub tolerance: f64,
    /// First schedule entry with a certified gap.
    pub first_certified_k: Option<f64>,
    pub certified: bool,
    pub params: NetworkParamsJson,
    pub table: Vec<ScheduleRow>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub scan: Vec<ScanRow>,
}

/// Halfspace search, best affine predictor on the found indicator, then the
/// indicator network at increasing sharpness `k`.
///
/// An exhausted schedule is reported through `certified = false` together
/// with the full error-vs-k table.
pub fn verify_theorem1(
    pop: &Population,
    arch: &NetworkArchitecture,
    k_schedule: &[f64],
    budget: ScanBudget,
) -> Result<Theorem1Outcome> {
    arch.validate()?;
    if arch.input_dim() != pop.dim() {
        return Err(Error::Shape(format!(
            "architecture input {} does not match population dim {}",
            arch.input_dim(),
            pop.dim()
        )));
    }
    if arch.activation == Activation::Relu && arch.last_width() < 2 {
        return Err(Error::Precondition("ReLU construction requires two last-layer units".into()));
    }
    if k_schedule.is_empty() {
        return Err(Error::Precondition("empty k schedule".into()));
    }
    let mut warnings = Vec::new();
    if arch.activation.is_tanh_form() && !pop.has_density() {
        warnings.push(
            "tanh-form activation on a population without a Lebesgue density: the density hypothesis is violated"
                .to_string(),
        );
    }
    if arch.activation.is_tanh_form() && arch.depth() >= 2 {
        warnings.push("depth >= 2 tanh-form build uses re-sharpening pass-through layers".to_string());
    }

    let scan = scan_halfspaces(pop, budget)?;
    let finding = scan.finding;
    let target = IndicatorTarget {
        alpha: finding.alpha.clone(),
        c1: finding.t,
        c2: finding.c1,
        c0: finding.c0,
    };
    if !pop.is_monte_carlo() {
        let min_shift = pop.points().map(|x| target.shift(x).abs()).fold(f64::INFINITY, f64::min);
        if !(min_shift > 0.0) {
            return Err(Error::Precondition("an atom projects exactly onto the threshold".into()));
        }
    }

    let var_y = finding.var_y;
    let mean_y = pop.mean_y();
    let pass = PassThrough::Resharpen;
    let mut table = Vec::with_capacity(k_schedule.len());
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    for (i, &k) in k_schedule.iter().enumerate() {
        let net = build_indicator(arch, &target, k, pass)?;
        let f = pop.try_values(|x| net.eval(x))?;
        let mse = mse_from_values(pop, &f);
        let gap = var_y - mse;
        let improvement: Vec<f64> = pop
            .cond_mean()
            .iter()
            .zip(&f)
            .map(|(m, v)| (m - mean_y).powi(2) - (m - v).powi(2))
            .collect();
        let tolerance = pop.certification_tol(&improvement, EXACT_GAP_REL_TOL * var_y);
        let err = l2_indicator_error(&net, pop, &target)?;
        table.push(ScheduleRow {
            k,
            mse,
            gap,
            tolerance,
            l2_indicator_error: err.l2,
            certified: gap > 0.0 && gap >= tolerance,
        });
        if best.as_ref().is_none_or(|b| mse < b.0) {
            best = Some((mse, i, net));
        }
    }
    let (achieved_mse, bi, net) = best.expect("nonempty schedule");
    let row = &table[bi];
    Ok(Theorem1Outcome {
        var_y,
        achieved_mse,
        achieved_k: row.k,
        gap: row.gap,
        tolerance: row.tolerance,
        first_certified_k: table.iter().find(|r| r.certified).map(|r| r.k),
        certified: row.certified,
        params: net.to_json(),
        table,
        warnings,
        target,
        finding,
        scan: scan.rows,
    })
}
