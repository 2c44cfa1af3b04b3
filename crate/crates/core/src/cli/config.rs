//! Experiment configs. Unknown keys are rejected and parse errors carry the JSON path.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adversarial::{CalibrationConfig, Dictionary};
use crate::audit::ProbeConfig;
use crate::error::{Error, Result};
use crate::halfspace::ScanBudget;
use crate::model_zoo::{Model, NetworkArchitecture};
use crate::network::default_k_schedule;
use crate::population::{CondFn, Population, Sampler};

fn zero_fn() -> CondFn {
    CondFn::Constant { value: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    Atoms {
        points: Vec<Vec<f64>>,
        /// Uniform when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default = "zero_fn")]
        cond_mean: CondFn,
        #[serde(default = "zero_fn")]
        cond_var: CondFn,
    },
    MonteCarlo {
        sampler: Sampler,
        seed: u64,
        n_samples: usize,
        #[serde(default = "zero_fn")]
        cond_mean: CondFn,
        #[serde(default = "zero_fn")]
        cond_var: CondFn,
    },
}

impl PopulationSpec {
    pub fn build(&self) -> Result<Population> {
        match self {
            PopulationSpec::Atoms { points, weights, cond_mean, cond_var } => match weights {
                None => Population::uniform_atoms(points.clone(), cond_mean, cond_var),
                Some(w) => {
                    let uniform = Population::uniform_atoms(points.clone(), &zero_fn(), &zero_fn())?;
                    let pop = Population::atoms(points.clone(), w.clone(), vec![0.0; w.len()], vec![0.0; w.len()])?;
                    let m = uniform.cond_values(cond_mean)?;
                    let v = uniform.cond_values(cond_var)?;
                    pop.with_conditional(m, v)
                }
            },
            PopulationSpec::MonteCarlo { sampler, seed, n_samples, cond_mean, cond_var } => {
                Population::monte_carlo(sampler.clone(), *seed, *n_samples, cond_mean, cond_var)
            }
        }
    }

    fn override_seed(&mut self, s: u64) {
        if let PopulationSpec::MonteCarlo { seed, .. } = self {
            *seed = s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Config {
    pub population: PopulationSpec,
    pub architecture: NetworkArchitecture,
    #[serde(default = "default_k_schedule")]
    pub k_schedule: Vec<f64>,
    /// Defaults to coordinate axes plus 64 random directions per input dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanBudget>,
    #[serde(default)]
    pub scan_seed: u64,
}

impl Theorem1Config {
    pub fn scan_budget(&self, dim: usize) -> ScanBudget {
        self.scan.unwrap_or_else(|| ScanBudget::default_for(dim, self.scan_seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    pub radius: f64,
    pub grid_density: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self { radius: 1.0, grid_density: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherAuditConfig {
    pub population: PopulationSpec,
    pub model: Model,
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    /// δ for the closed-form logistic certificate (logistic model, standard normal X).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logistic_certificate_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem2Config {
    pub population: PopulationSpec,
    pub model: Model,
    pub theta0: Vec<f64>,
    /// Defaults per population kind, see [`Dictionary::default_for`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<Dictionary>,
    pub epsilon: f64,
    #[serde(default)]
    pub noise_var: f64,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
}

fn default_contrast_arch() -> NetworkArchitecture {
    NetworkArchitecture { widths: vec![1, 1], activation: crate::model_zoo::Activation::Sigmoid }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastConfig {
    pub sampler: Sampler,
    pub seed: u64,
    pub n_samples: usize,
    /// `‖g - 1/2‖_L²` of the adversarial target.
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<Dictionary>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default = "default_contrast_arch")]
    pub architecture: NetworkArchitecture,
    #[serde(default = "default_k_schedule")]
    pub k_schedule: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanBudget>,
}

/// Parse JSON into `T`, reporting the path of the offending key.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

fn check_model(model: &Model, theta0: &[f64], pop: &Population) -> Result<()> {
    model.validate().map_err(|e| Error::Config(e.to_string()))?;
    if model.input_dim() != pop.dim() {
        return Err(Error::Config(format!(
            "model input dim {} does not match population dim {}",
            model.input_dim(),
            pop.dim()
        )));
    }
    if theta0.len() != model.param_dim() {
        return Err(Error::Config(format!(
            "theta0 has {} entries, model has {} parameters",
            theta0.len(),
            model.param_dim()
        )));
    }
    Ok(())
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn check_schedule(k: &[f64]) -> Result<()> {
    if k.is_empty() || k.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(Error::Config("k_schedule must be a nonempty list of positive numbers".into()));
    }
    Ok(())
}

/// Seed override hook and semantic validation shared by all commands.
pub trait Validated {
    fn apply_seed(&mut self, seed: u64);
    /// Builds the population and checks shapes; failures are config errors.
    fn population(&self) -> Result<Population>;
    fn set_trace(&mut self, _on: bool) {}
}

impl Validated for Theorem1Config {
    fn apply_seed(&mut self, seed: u64) {
        self.population.override_seed(seed);
        self.scan_seed = seed;
        if let Some(s) = &mut self.scan {
            s.seed = seed;
        }
    }

    fn population(&self) -> Result<Population> {
        self.architecture.validate().map_err(config_err)?;
        check_schedule(&self.k_schedule)?;
        let pop = self.population.build().map_err(config_err)?;
        if self.architecture.input_dim() != pop.dim() {
            return Err(Error::Config("architecture input width does not match population dim".into()));
        }
        Ok(pop)
    }
}

impl Validated for FisherAuditConfig {
    fn apply_seed(&mut self, seed: u64) {
        self.population.override_seed(seed);
        self.probe.seed = seed;
    }

    fn population(&self) -> Result<Population> {
        let pop = self.population.build().map_err(config_err)?;
        check_model(&self.model, &self.theta0, &pop)?;
        Ok(pop)
    }
}

impl Validated for Theorem2Config {
    fn apply_seed(&mut self, seed: u64) {
        self.population.override_seed(seed);
        self.probe.seed = seed;
        self.calibration.descent.seed = seed;
    }

    fn population(&self) -> Result<Population> {
        let pop = self.population.build().map_err(config_err)?;
        check_model(&self.model, &self.theta0, &pop)?;
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive (degenerate perturbation)".into()));
        }
        Ok(pop)
    }

    fn set_trace(&mut self, on: bool) {
        self.calibration.descent.trace = on;
    }
}

impl Validated for ContrastConfig {
    fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.calibration.descent.seed = seed;
        if let Some(s) = &mut self.scan {
            s.seed = seed;
        }
    }

    fn population(&self) -> Result<Population> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive (degenerate perturbation)".into()));
        }
        if self.sampler.dim() != 1 {
            return Err(Error::Config("the contrast uses one-dimensional X".into()));
        }
        if self.architecture.input_dim() != 1 {
            return Err(Error::Config("architecture input width must be 1".into()));
        }
        self.architecture.validate().map_err(config_err)?;
        check_schedule(&self.k_schedule)?;
        Population::monte_carlo(self.sampler.clone(), self.seed, self.n_samples, &zero_fn(), &zero_fn())
            .map_err(config_err)
    }

    fn set_trace(&mut self, on: bool) {
        self.calibration.descent.trace = on;
    }
}
