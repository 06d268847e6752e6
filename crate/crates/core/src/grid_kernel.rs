//! Time grid, kernels and the normalized smoothing weights `w_j(t)` that every
//! estimator in the crate is built on.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that an evaluation point lies in `[0, T]`.
const ENDPOINT_SLACK: f64 = 1e-12;

/// Safety factor applied to the Hölder approximation bound when it is checked
/// against a finite grid.
pub const BOUND_SAFETY_FACTOR: f64 = 1.5;

/// Equispaced instants `t_j = T (j - 1) / (d - 1)` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    instants: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, d: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if d < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 instants, got {d}")));
        }
        let step = horizon / (d - 1) as f64;
        let mut instants: Vec<f64> = (0..d).map(|j| j as f64 * step).collect();
        instants[d - 1] = horizon;
        Ok(Self { horizon, instants })
    }

    /// Rebuilds a grid from explicit instants, checking that they are equispaced
    /// and start at zero.
    pub fn from_instants(instants: &[f64]) -> Result<Self> {
        if instants.len() < 2 {
            return Err(Error::InvalidGrid("need at least 2 instants".into()));
        }
        let horizon = instants[instants.len() - 1];
        let grid = Self::new(horizon, instants.len())?;
        let tol = 1e-9 * horizon.max(1.0);
        for (j, (&a, &b)) in instants.iter().zip(&grid.instants).enumerate() {
            if (a - b).abs() > tol {
                return Err(Error::InvalidGrid(format!(
                    "instant {j} is {a}, expected {b} for an equispaced grid starting at 0"
                )));
            }
        }
        Ok(grid)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn spacing(&self) -> f64 {
        self.horizon / (self.len() - 1) as f64
    }

    /// `m` equispaced evaluation points covering `[0, T]`.
    pub fn uniform_points(&self, m: usize) -> Vec<f64> {
        match m {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => {
                let step = self.horizon / (m - 1) as f64;
                let mut pts: Vec<f64> = (0..m).map(|i| i as f64 * step).collect();
                pts[m - 1] = self.horizon;
                pts
            }
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = ENDPOINT_SLACK * self.horizon;
        t >= -slack && t <= self.horizon + slack
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Epanechnikov,
    Gaussian,
    /// `K(x) = 1/2` on `[-1, 1]`.
    Uniform,
}

impl KernelFamily {
    pub fn value(self, x: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov => {
                if x.abs() <= 1.0 {
                    0.75 * (1.0 - x * x)
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Uniform => {
                if x.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    pub fn has_bounded_support(self) -> bool {
        !matches!(self, KernelFamily::Gaussian)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Uniform => "uniform",
        };
        f.write_str(name)
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
            "uniform" | "box" => Ok(KernelFamily::Uniform),
            other => Err(Error::InvalidKernel(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// A kernel family together with its bandwidth `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Result<Self> {
        Self::new(self.family, bandwidth)
    }

    /// `2h > T/(d-1)`. Always true for the Gaussian kernel, whose support is
    /// unbounded.
    pub fn satisfies_a3(&self, grid: &TimeGrid) -> bool {
        !self.family.has_bounded_support() || 2.0 * self.bandwidth > grid.spacing()
    }
}

pub fn kernel_value(spec: &KernelSpec, x: f64) -> f64 {
    spec.family.value(x)
}

/// Normalized weights `w_j(t)` at a single evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingWeights {
    pub t: f64,
    pub weights: Vec<f64>,
}

impl SmoothingWeights {
    /// `(j, w_j)` for the strictly positive weights.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().copied().enumerate().filter(|&(_, w)| w > 0.0)
    }

    /// `sum_j w_j v_j`, skipping zero weights so that non-finite entries outside
    /// the kernel window never contaminate the result.
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.nonzero().map(|(j, w)| w * values[j]).sum()
    }
}

pub fn smoothing_weights(grid: &TimeGrid, spec: &KernelSpec, t: f64) -> Result<SmoothingWeights> {
    if !grid.contains(t) {
        return Err(Error::InvalidConfig(format!(
            "evaluation point {t} outside [0, {}]",
            grid.horizon()
        )));
    }
    let h = spec.bandwidth;
    let mut weights: Vec<f64> = grid
        .instants()
        .iter()
        .map(|&tj| spec.family.value((t - tj) / h))
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::AllWeightsZero { t });
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(SmoothingWeights { t, weights })
}

/// Smoothing weights for a whole set of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingMatrix {
    spec: KernelSpec,
    rows: Vec<SmoothingWeights>,
}

impl SmoothingMatrix {
    pub fn new(grid: &TimeGrid, spec: &KernelSpec, eval_points: &[f64]) -> Result<Self> {
        let rows = eval_points
            .iter()
            .map(|&t| smoothing_weights(grid, spec, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec: *spec, rows })
    }

    /// Weights evaluated at the grid instants themselves.
    pub fn on_grid(grid: &TimeGrid, spec: &KernelSpec) -> Result<Self> {
        Self::new(grid, spec, grid.instants())
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn rows(&self) -> &[SmoothingWeights] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn eval_points(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Smooths a discretized curve at every evaluation point.
    pub fn smooth(&self, values: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.apply(values)).collect()
    }
}

/// `C (2h)^beta`, the bound on `sup_t |mu_tilde(t) - mu(t)|` for a
/// `beta`-Hölder mean and a bounded-support kernel with `2h > T/(d-1)`.
pub fn approximation_error_bound(grid: &TimeGrid, spec: &KernelSpec, beta: f64, holder_constant: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "Hölder exponent must lie in (0, 1], got {beta}"
        )));
    }
    if !(holder_constant.is_finite() && holder_constant >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "Hölder constant must be non-negative, got {holder_constant}"
        )));
    }
    if !spec.family.has_bounded_support() {
        return Err(Error::InvalidKernel(
            "approximation bound requires a bounded-support kernel".into(),
        ));
    }
    if !spec.satisfies_a3(grid) {
        return Err(Error::AssumptionA3Violated {
            bandwidth: spec.bandwidth,
            spacing: grid.spacing(),
        });
    }
    Ok(holder_constant * (2.0 * spec.bandwidth).powf(beta))
}
