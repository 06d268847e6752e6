//! Response (missingness) processes `r_k(t_j)`, their marginal and pairwise
//! response probabilities, mask simulation, and response-rate estimation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::Sample;
use crate::error::{Error, Result};
use crate::grid_kernel::TimeGrid;

/// Marginal `theta_k(t_j)` and pairwise `theta_k(t_j, t_j')` response
/// probabilities, indexed by population unit and instant.
pub trait ResponseProbabilities: Sync {
    fn theta(&self, unit: usize, j: usize) -> f64;

    /// Must return `theta(unit, j)` when `j == j2`.
    fn theta_joint(&self, unit: usize, j: usize, j2: usize) -> f64;

    /// `(theta(j,j') - theta(j) theta(j')) / (theta(j) theta(j'))`, the
    /// non-response covariance factor.
    fn covariance_factor(&self, unit: usize, j: usize, j2: usize) -> f64 {
        let a = self.theta(unit, j);
        let b = self.theta(unit, j2);
        (self.theta_joint(unit, j, j2) - a * b) / (a * b)
    }

    /// Whether `theta_joint = theta theta` off the diagonal, so that the
    /// covariance factor vanishes for `j != j'`.
    fn independent_instants(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseKind {
    FullResponse,
    /// Group-level `theta_g(t_j)` (`groups x d`); units respond independently
    /// across instants.
    HomogeneousGroups {
        theta: Vec<Vec<f64>>,
    },
    /// Per-group stationary two-state chain over the grid: stationary response
    /// probability `theta_g` and persistence `rho_g` in `[0, 1)`.
    MarkovGap {
        theta: Vec<f64>,
        rho: Vec<f64>,
    },
}

/// A response law together with each population unit's response group.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseModel {
    kind: ResponseKind,
    groups: Vec<usize>,
}

impl ResponseModel {
    pub fn full() -> Self {
        Self {
            kind: ResponseKind::FullResponse,
            groups: Vec::new(),
        }
    }

    pub fn homogeneous_groups(theta: Array2<f64>, groups: Vec<usize>) -> Result<Self> {
        check_probabilities(theta.iter().copied())?;
        check_groups(&groups, theta.nrows())?;
        let theta = theta.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(Self {
            kind: ResponseKind::HomogeneousGroups { theta },
            groups,
        })
    }

    pub fn markov_gap(theta: Vec<f64>, rho: Vec<f64>, groups: Vec<usize>) -> Result<Self> {
        if theta.len() != rho.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} stationary probabilities but {} persistences",
                theta.len(),
                rho.len()
            )));
        }
        check_probabilities(theta.iter().copied())?;
        if let Some(r) = rho.iter().find(|r| !(**r >= 0.0 && **r < 1.0)) {
            return Err(Error::InvalidConfig(format!("persistence must lie in [0, 1), got {r}")));
        }
        check_groups(&groups, theta.len())?;
        Ok(Self {
            kind: ResponseKind::MarkovGap { theta, rho },
            groups,
        })
    }

    /// Builds a model from a serialized kind, validating it.
    pub fn from_kind(kind: ResponseKind, groups: Vec<usize>) -> Result<Self> {
        match kind {
            ResponseKind::FullResponse => Ok(Self::full()),
            ResponseKind::HomogeneousGroups { theta } => {
                let d = theta.first().map_or(0, Vec::len);
                if theta.iter().any(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch("ragged theta matrix".into()));
                }
                let flat: Vec<f64> = theta.into_iter().flatten().collect();
                let m = Array2::from_shape_vec((flat.len() / d.max(1), d), flat)
                    .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
                Self::homogeneous_groups(m, groups)
            }
            ResponseKind::MarkovGap { theta, rho } => Self::markov_gap(theta, rho, groups),
        }
    }

    pub fn kind(&self) -> &ResponseKind {
        &self.kind
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    fn group(&self, unit: usize) -> usize {
        self.groups[unit]
    }

    /// Probability of one complete response row `r_k(t_1..t_d)`.
    pub fn row_probability(&self, unit: usize, row: &[bool]) -> f64 {
        match &self.kind {
            ResponseKind::FullResponse => {
                if row.iter().all(|&r| r) {
                    1.0
                } else {
                    0.0
                }
            }
            ResponseKind::HomogeneousGroups { theta } => {
                let th = &theta[self.group(unit)];
                row.iter()
                    .enumerate()
                    .map(|(j, &r)| if r { th[j] } else { 1.0 - th[j] })
                    .product()
            }
            ResponseKind::MarkovGap { theta, rho } => {
                let g = self.group(unit);
                let chain = TwoStateChain::new(theta[g], rho[g]);
                let Some(&first) = row.first() else { return 1.0 };
                let mut p = if first { chain.theta } else { 1.0 - chain.theta };
                for w in row.windows(2) {
                    p *= chain.transition(w[0], w[1]);
                }
                p
            }
        }
    }
}

impl ResponseProbabilities for ResponseModel {
    fn theta(&self, unit: usize, j: usize) -> f64 {
        match &self.kind {
            ResponseKind::FullResponse => 1.0,
            ResponseKind::HomogeneousGroups { theta } => theta[self.group(unit)][j],
            ResponseKind::MarkovGap { theta, .. } => theta[self.group(unit)],
        }
    }

    fn theta_joint(&self, unit: usize, j: usize, j2: usize) -> f64 {
        if j == j2 {
            return self.theta(unit, j);
        }
        match &self.kind {
            ResponseKind::FullResponse => 1.0,
            ResponseKind::HomogeneousGroups { theta } => {
                let th = &theta[self.group(unit)];
                th[j] * th[j2]
            }
            ResponseKind::MarkovGap { theta, rho } => {
                let g = self.group(unit);
                TwoStateChain::new(theta[g], rho[g]).joint(j.abs_diff(j2))
            }
        }
    }

    fn independent_instants(&self) -> bool {
        !matches!(self.kind, ResponseKind::MarkovGap { .. })
    }
}

/// Stationary chain with transition matrix `(1 - rho) * [stationary rows] + rho * I`.
#[derive(Debug, Clone, Copy)]
struct TwoStateChain {
    theta: f64,
    rho: f64,
}

impl TwoStateChain {
    fn new(theta: f64, rho: f64) -> Self {
        Self { theta, rho }
    }

    fn transition(&self, from: bool, to: bool) -> f64 {
        let stay = self.rho;
        let target = if to { self.theta } else { 1.0 - self.theta };
        (1.0 - stay) * target + if from == to { stay } else { 0.0 }
    }

    /// `P(r_j = 1, r_{j+lag} = 1) = theta (theta + (1 - theta) rho^lag)`.
    fn joint(&self, lag: usize) -> f64 {
        self.theta * (self.theta + (1.0 - self.theta) * self.rho.powi(lag as i32))
    }
}

fn check_probabilities(values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "response probabilities must lie in (0, 1], got {v}"
            )));
        }
    }
    Ok(())
}

fn check_groups(groups: &[usize], n_groups: usize) -> Result<()> {
    if let Some(g) = groups.iter().find(|&&g| g >= n_groups) {
        return Err(Error::InvalidConfig(format!(
            "unit assigned to response group {g} but only {n_groups} groups are defined"
        )));
    }
    Ok(())
}

/// Response indicators `r_k(t_j)` for the sampled units; row `i` belongs to
/// `sample.indices()[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    entries: Array2<bool>,
}

impl ObservationMask {
    pub fn new(entries: Array2<bool>) -> Self {
        Self { entries }
    }

    pub fn full(n: usize, d: usize) -> Self {
        Self {
            entries: Array2::from_elem((n, d), true),
        }
    }

    pub fn entries(&self) -> &Array2<bool> {
        &self.entries
    }

    pub fn get(&self, row: usize, j: usize) -> bool {
        self.entries[[row, j]]
    }

    pub fn n_rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_instants(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(|&r| r)
    }

    pub fn response_rate(&self) -> f64 {
        let n = self.entries.len();
        if n == 0 {
            return 1.0;
        }
        self.entries.iter().filter(|&&r| r).count() as f64 / n as f64
    }
}

pub fn simulate_mask(model: &ResponseModel, sample: &Sample, grid: &TimeGrid, seed: u64) -> ObservationMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_mask_with(model, sample, grid.len(), &mut rng)
}

pub fn simulate_mask_with<R: Rng + ?Sized>(
    model: &ResponseModel,
    sample: &Sample,
    d: usize,
    rng: &mut R,
) -> ObservationMask {
    let mut entries = Array2::from_elem((sample.len(), d), true);
    for (i, &k) in sample.indices().iter().enumerate() {
        match model.kind() {
            ResponseKind::FullResponse => {}
            ResponseKind::HomogeneousGroups { theta } => {
                let th = &theta[model.group(k)];
                for j in 0..d {
                    entries[[i, j]] = rng.random::<f64>() < th[j];
                }
            }
            ResponseKind::MarkovGap { theta, rho } => {
                let g = model.group(k);
                let chain = TwoStateChain::new(theta[g], rho[g]);
                let mut state = rng.random::<f64>() < chain.theta;
                entries[[i, 0]] = state;
                for j in 1..d {
                    state = rng.random::<f64>() < chain.transition(state, true);
                    entries[[i, j]] = state;
                }
            }
        }
    }
    ObservationMask { entries }
}

/// Per-group response rates `theta^_g(t_j)` and joint rates `theta^_g(t_j, t_j')`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupThetaEstimate {
    groups: Vec<usize>,
    marginal: Array2<f64>,
    joint: Vec<Array2<f64>>,
}

impl GroupThetaEstimate {
    /// `groups x d`.
    pub fn marginal(&self) -> &Array2<f64> {
        &self.marginal
    }

    /// `d x d` joint rates of group `g`.
    pub fn joint(&self, g: usize) -> &Array2<f64> {
        &self.joint[g]
    }
}

impl ResponseProbabilities for GroupThetaEstimate {
    fn theta(&self, unit: usize, j: usize) -> f64 {
        self.marginal[[self.groups[unit], j]]
    }

    fn theta_joint(&self, unit: usize, j: usize, j2: usize) -> f64 {
        self.joint[self.groups[unit]][[j, j2]]
    }
}

/// Sampled mask rows grouped by response group, with `n_g >= 1` enforced.
fn rows_by_group(mask: &ObservationMask, sample: &Sample, groups: &[usize]) -> Result<Vec<Vec<usize>>> {
    if mask.n_rows() != sample.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} rows for a sample of {}",
            mask.n_rows(),
            sample.len()
        )));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut rows = vec![Vec::new(); n_groups];
    for (i, &k) in sample.indices().iter().enumerate() {
        let g = *groups.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            size: groups.len(),
        })?;
        rows[g].push(i);
    }
    if let Some(g) = rows.iter().position(Vec::is_empty) {
        return Err(Error::InvalidConfig(format!("response group {g} has no sampled unit")));
    }
    Ok(rows)
}

/// Response rates within each group. `groups` holds the population-level group
/// label of every unit.
pub fn estimate_theta_group(mask: &ObservationMask, sample: &Sample, groups: &[usize]) -> Result<GroupThetaEstimate> {
    let rows = rows_by_group(mask, sample, groups)?;
    let d = mask.n_instants();
    let mut marginal = Array2::zeros((rows.len(), d));
    let mut joint = Vec::with_capacity(rows.len());
    for (g, members) in rows.iter().enumerate() {
        let n_g = members.len() as f64;
        let mut jm = Array2::<f64>::zeros((d, d));
        for &i in members {
            for j in 0..d {
                if !mask.get(i, j) {
                    continue;
                }
                marginal[[g, j]] += 1.0;
                for j2 in 0..d {
                    if mask.get(i, j2) {
                        jm[[j, j2]] += 1.0;
                    }
                }
            }
        }
        for j in 0..d {
            if marginal[[g, j]] == 0.0 {
                return Err(Error::ZeroResponders { group: g, instant: j });
            }
            marginal[[g, j]] /= n_g;
        }
        jm.mapv_inplace(|v| v / n_g);
        joint.push(jm);
    }
    Ok(GroupThetaEstimate {
        groups: groups.to_vec(),
        marginal,
        joint,
    })
}

/// Pooled response rate per group and pooled joint rate per lag, under a
/// second-order stationary response process.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryThetaEstimate {
    groups: Vec<usize>,
    marginal: Vec<f64>,
    /// `groups x d`, column `m` is the joint rate at lag `m` instants.
    lag: Array2<f64>,
    spacing: f64,
}

impl StationaryThetaEstimate {
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// Joint response rate of group `g` at a lag of `m` instants.
    pub fn at_lag(&self, g: usize, m: usize) -> f64 {
        self.lag[[g, m]]
    }

    /// Joint response rate of group `g` at time lag `dt`, rounded to the grid.
    pub fn at_time_lag(&self, g: usize, dt: f64) -> f64 {
        let m = (dt.abs() / self.spacing).round() as usize;
        self.lag[[g, m.min(self.lag.ncols() - 1)]]
    }
}

impl ResponseProbabilities for StationaryThetaEstimate {
    fn theta(&self, unit: usize, _j: usize) -> f64 {
        self.marginal[self.groups[unit]]
    }

    fn theta_joint(&self, unit: usize, j: usize, j2: usize) -> f64 {
        self.lag[[self.groups[unit], j.abs_diff(j2)]]
    }
}

/// Pooled rates are averaged over units and over the instant pairs at each lag
/// so that they stay in `[0, 1]`.
pub fn estimate_theta_stationary(
    mask: &ObservationMask,
    sample: &Sample,
    groups: &[usize],
    grid: &TimeGrid,
) -> Result<StationaryThetaEstimate> {
    let rows = rows_by_group(mask, sample, groups)?;
    let d = mask.n_instants();
    if d != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {d} instants, grid has {}",
            grid.len()
        )));
    }
    let mut marginal = vec![0.0; rows.len()];
    let mut lag = Array2::<f64>::zeros((rows.len(), d));
    for (g, members) in rows.iter().enumerate() {
        for &i in members {
            for m in 0..d {
                let hits = (0..d - m).filter(|&j| mask.get(i, j) && mask.get(i, j + m)).count();
                lag[[g, m]] += hits as f64;
            }
        }
        let n_g = members.len() as f64;
        for m in 0..d {
            lag[[g, m]] /= n_g * (d - m) as f64;
        }
        marginal[g] = lag[[g, 0]];
        if marginal[g] == 0.0 {
            return Err(Error::ZeroResponders { group: g, instant: 0 });
        }
    }
    Ok(StationaryThetaEstimate {
        groups: groups.to_vec(),
        marginal,
        lag,
        spacing: grid.spacing(),
    })
}
