//! JSON run configurations.

use std::path::Path;

use curvesurvey::estimators::{EstimatorTag, ZeroDenominatorPolicy};
use curvesurvey::grid_kernel::KernelFamily;
use curvesurvey::oracle_sim::DesignConfig;
use curvesurvey::population::GeneratorConfig;
use curvesurvey::response::ResponseKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Sampling design of an input sample. Sample sizes are taken from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    Srswor {
        population: usize,
    },
    Stratified {
        stratum_sizes: Vec<usize>,
    },
    /// `pi` lists the inclusion probability of each sample row, in file order.
    Poisson {
        population: usize,
        pi: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaEstimator {
    /// Per-group, per-instant response rates.
    #[default]
    Group,
    /// Per-group rates pooled over time, with lag-dependent joint rates.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    /// Known response model; groups are the strata of the file.
    Known { model: ResponseKind },
    Estimated {
        #[serde(default)]
        method: ThetaEstimator,
    },
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Estimated {
            method: ThetaEstimator::Group,
        }
    }
}

/// Evaluation points: a count of interior points or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalSpec {
    Count(usize),
    Points(Vec<f64>),
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec::Count(25)
    }
}

impl EvalSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if !s.contains(',') && !s.contains('.') {
            return s
                .trim()
                .parse()
                .map(EvalSpec::Count)
                .map_err(|_| CliError::Config(format!("bad --eval-points '{s}'")));
        }
        parse_list(s, "--eval-points").map(EvalSpec::Points)
    }
}

pub fn parse_list(s: &str, flag: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad value '{p}' in {flag}")))
        })
        .collect()
}

fn default_kernel() -> KernelFamily {
    KernelFamily::Epanechnikov
}

fn default_cv_estimator() -> EstimatorTag {
    EstimatorTag::Hajek2
}

/// Configuration of `estimate` and `cv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: DesignSpec,
    #[serde(default)]
    pub theta: ThetaSpec,
    #[serde(default = "default_kernel")]
    pub kernel: KernelFamily,
    /// When absent, `estimate` selects it by cross-validation.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub eval_points: EvalSpec,
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorTag>>,
    /// Post-stratified estimators; defaults to true for stratified designs.
    #[serde(default)]
    pub stratified: Option<bool>,
    #[serde(default)]
    pub policy: ZeroDenominatorPolicy,
    #[serde(default)]
    pub cv_grid: Option<Vec<f64>>,
    #[serde(default = "default_cv_estimator")]
    pub cv_estimator: EstimatorTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub design: DesignConfig,
    pub response: ResponseKind,
}

/// Configuration of `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub horizon: f64,
    pub instants: usize,
    #[serde(default)]
    pub population: GeneratorConfig,
    /// Also draw a sample and a response mask (written with `--sample-out`).
    #[serde(default)]
    pub sample: Option<SampleSpec>,
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
