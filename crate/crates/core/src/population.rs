//! Finite populations of discretized curves and a synthetic generator used by the
//! verification harness.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_kernel::{KernelSpec, SmoothingMatrix, TimeGrid};

/// `N` fully observed curves `Y_k(t_j)` with 0-based stratum labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePopulation {
    grid: TimeGrid,
    values: Array2<f64>,
    strata: Vec<usize>,
    stratum_sizes: Vec<usize>,
}

impl CurvePopulation {
    pub fn new(grid: TimeGrid, values: Array2<f64>, strata: Vec<usize>) -> Result<Self> {
        let (n_units, d) = values.dim();
        if n_units == 0 {
            return Err(Error::InvalidConfig("population must contain at least one unit".into()));
        }
        if d != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "values have {d} columns but the grid has {} instants",
                grid.len()
            )));
        }
        if strata.len() != n_units {
            return Err(Error::DimensionMismatch(format!(
                "{} stratum labels for {n_units} units",
                strata.len()
            )));
        }
        if let Some(((k, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "population value for unit {k} at instant {j} is not finite ({v})"
            )));
        }
        let n_strata = strata.iter().max().map_or(0, |m| m + 1);
        let mut stratum_sizes = vec![0usize; n_strata];
        for &s in &strata {
            stratum_sizes[s] += 1;
        }
        if let Some(empty) = stratum_sizes.iter().position(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!("stratum {empty} has no units")));
        }
        Ok(Self {
            grid,
            values,
            strata,
            stratum_sizes,
        })
    }

    /// A single-stratum population.
    pub fn unstratified(grid: TimeGrid, values: Array2<f64>) -> Result<Self> {
        let n = values.nrows();
        Self::new(grid, values, vec![0; n])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn curve(&self, k: usize) -> ArrayView1<'_, f64> {
        self.values.row(k)
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn stratum_sizes(&self) -> &[usize] {
        &self.stratum_sizes
    }

    pub fn n_strata(&self) -> usize {
        self.stratum_sizes.len()
    }

    /// Population indices of the units in stratum `lambda`.
    pub fn stratum_members(&self, lambda: usize) -> Vec<usize> {
        (0..self.size()).filter(|&k| self.strata[k] == lambda).collect()
    }

    /// `Y~_k(t) = sum_j w_j(t) Y_k(t_j)` for every unit, one row per evaluation point.
    pub fn smoothed_curves(&self, weights: &SmoothingMatrix) -> Array2<f64> {
        let mut out = Array2::zeros((weights.len(), self.size()));
        for (i, row) in weights.rows().iter().enumerate() {
            for k in 0..self.size() {
                out[[i, k]] = row.nonzero().map(|(j, w)| w * self.values[[k, j]]).sum();
            }
        }
        out
    }
}

/// Discretized population mean `mu(t_j)` together with the stratum means.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMean {
    pub values: Vec<f64>,
    /// `Lambda x d`.
    pub by_stratum: Array2<f64>,
}

pub fn population_mean(pop: &CurvePopulation) -> PopulationMean {
    let d = pop.grid().len();
    let n_strata = pop.n_strata();
    let mut totals = vec![0.0; d];
    let mut stratum_totals = Array2::<f64>::zeros((n_strata, d));
    for (k, row) in pop.values().rows().into_iter().enumerate() {
        let lambda = pop.strata()[k];
        for (j, &y) in row.iter().enumerate() {
            totals[j] += y;
            stratum_totals[[lambda, j]] += y;
        }
    }
    let n = pop.size() as f64;
    for (lambda, mut row) in stratum_totals.rows_mut().into_iter().enumerate() {
        let size = pop.stratum_sizes()[lambda] as f64;
        row.mapv_inplace(|v| v / size);
    }
    PopulationMean {
        values: totals.into_iter().map(|v| v / n).collect(),
        by_stratum: stratum_totals,
    }
}

/// `mu~(t) = sum_j w_j(t) mu(t_j)` at each evaluation point.
pub fn smooth_population_mean(pop: &CurvePopulation, spec: &KernelSpec, eval_points: &[f64]) -> Result<Vec<f64>> {
    let weights = SmoothingMatrix::new(pop.grid(), spec, eval_points)?;
    Ok(weights.smooth(&population_mean(pop).values))
}

/// Settings for [`generate_population`].
///
/// Each curve is a stratum-level daily profile plus a unit-level random
/// amplitude and phase perturbation and optional white noise. When `roughness`
/// is below one, every curve also carries a `cusp_scale * |t - cusp_at|^beta`
/// component so the mean is exactly `beta`-Hölder at the cusp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub size: usize,
    pub n_strata: usize,
    pub level: f64,
    /// Minimal sup-norm gap between stratum mean profiles.
    pub stratum_separation: f64,
    /// Number of profile periods over the horizon.
    pub periods: f64,
    pub profile_amplitude: f64,
    pub unit_amplitude_sd: f64,
    pub unit_phase_sd: f64,
    pub noise_sd: f64,
    pub roughness: Option<f64>,
    pub cusp_at: Option<f64>,
    pub cusp_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            size: 1000,
            n_strata: 1,
            level: 10.0,
            stratum_separation: 1.0,
            periods: 1.0,
            profile_amplitude: 2.0,
            unit_amplitude_sd: 0.5,
            unit_phase_sd: 0.3,
            noise_sd: 0.0,
            roughness: None,
            cusp_at: None,
            cusp_scale: 1.0,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.n_strata == 0 || self.size < self.n_strata {
            return Err(Error::InvalidConfig(format!(
                "need size >= n_strata >= 1, got size {} and {} strata",
                self.size, self.n_strata
            )));
        }
        let sds = [self.unit_amplitude_sd, self.unit_phase_sd, self.noise_sd];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("standard deviations must be non-negative".into()));
        }
        if let Some(beta) = self.roughness {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "roughness must lie in (0, 1], got {beta}"
                )));
            }
        }
        if !self.stratum_separation.is_finite() || self.stratum_separation < 0.0 {
            return Err(Error::InvalidConfig("stratum separation must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn generate_population(seed: u64, grid: &TimeGrid, config: &GeneratorConfig) -> Result<CurvePopulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let n = config.size;
    let n_strata = config.n_strata;
    let d = grid.len();
    let horizon = grid.horizon();
    let omega = 2.0 * PI * config.periods / horizon;
    let cusp_at = config.cusp_at.unwrap_or(horizon / 2.0);

    // Offsets step by 1.2x the separation so unit-level noise cannot close the gap.
    let offsets: Vec<f64> = (0..n_strata)
        .map(|l| config.level + 1.2 * config.stratum_separation * l as f64)
        .collect();
    let phases: Vec<f64> = (0..n_strata).map(|l| 0.4 * l as f64).collect();

    let strata: Vec<usize> = (0..n).map(|k| k * n_strata / n).collect();
    let mut values = Array2::<f64>::zeros((n, d));
    for k in 0..n {
        let lambda = strata[k];
        let amp = config.profile_amplitude * (1.0 + config.unit_amplitude_sd * unit.sample(&mut rng));
        let phase = phases[lambda] + config.unit_phase_sd * unit.sample(&mut rng);
        let shift = config.unit_amplitude_sd * unit.sample(&mut rng);
        for (j, &t) in grid.instants().iter().enumerate() {
            let mut y = offsets[lambda]
                + shift
                + amp * (omega * t + phase).sin()
                + 0.3 * config.profile_amplitude * (2.0 * omega * t + phases[lambda]).cos();
            if let Some(beta) = config.roughness {
                y += config.cusp_scale * (t - cusp_at).abs().powf(beta);
            }
            if config.noise_sd > 0.0 {
                y += config.noise_sd * unit.sample(&mut rng);
            }
            values[[k, j]] = y;
        }
    }
    CurvePopulation::new(grid.clone(), values, strata)
}
