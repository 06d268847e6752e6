//! Exact moments by exhaustive enumeration of (sample, mask) outcomes on tiny
//! instances, and a seeded Monte Carlo harness for larger ones.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{draw_sample_with, enumerate_samples, Sample, SamplingDesign};
use crate::error::{Error, Result};
use crate::estimators::{mean_nr, stratified_mean, EstimatorTag, ObservedSample, ThetaSource, ZeroDenominatorPolicy};
use crate::grid_kernel::{KernelFamily, KernelSpec, SmoothingMatrix, TimeGrid};
use crate::population::{generate_population, smooth_population_mean, CurvePopulation, GeneratorConfig};
use crate::response::{estimate_theta_group, simulate_mask_with, ObservationMask, ResponseKind, ResponseModel};
use crate::variance::{
    variance_estimate_plugin, variance_estimate_plugin_stratified, variance_stratified, variance_theory, VarianceCurve,
    VarianceKind,
};

pub const DEFAULT_OUTCOME_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnumerationStrategy {
    /// Masks as products of per-unit row laws, zero-probability rows pruned.
    #[default]
    PerUnit,
    /// Every bit pattern of the whole `n x d` mask, with a standalone estimator.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    pub description: String,
    pub tag: EstimatorTag,
    pub stratified: bool,
    pub strategy: EnumerationStrategy,
    pub samples: usize,
    pub outcomes: usize,
    pub total_probability: f64,
    pub eval_points: Vec<f64>,
    pub expectation: Vec<f64>,
    pub variance: Vec<f64>,
    /// Smoothed population mean `mu_tilde(t)`.
    pub target: Vec<f64>,
    /// Closed-form variance for the tag (exact for HT, linearized for Hájek).
    pub formula_variance: Vec<f64>,
    pub max_abs_bias: f64,
    pub max_abs_variance_gap: f64,
}

/// Probability-weighted running mean and variance (West's update).
#[derive(Debug, Clone)]
struct WeightedMoments {
    weight: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WeightedMoments {
    fn new(m: usize) -> Self {
        Self {
            weight: 0.0,
            mean: vec![0.0; m],
            m2: vec![0.0; m],
        }
    }

    fn push(&mut self, p: f64, x: &[f64]) {
        self.weight += p;
        for ((mu, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *mu;
            *mu += p / self.weight * delta;
            *m2 += p * delta * (v - *mu);
        }
    }

    fn merge(&mut self, other: &Self) {
        if other.weight == 0.0 {
            return;
        }
        let total = self.weight + other.weight;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.m2[i] += other.m2[i] + delta * delta * self.weight * other.weight / total;
            self.mean[i] += delta * other.weight / total;
        }
        self.weight = total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationOptions {
    pub stratified: bool,
    pub strategy: EnumerationStrategy,
    pub cap: f64,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self {
            stratified: false,
            strategy: EnumerationStrategy::PerUnit,
            cap: DEFAULT_OUTCOME_CAP,
        }
    }
}

fn bits_to_row(bits: usize, d: usize) -> Vec<bool> {
    (0..d).map(|j| bits >> j & 1 == 1).collect()
}

/// Flat-loop non-stratified estimator, written independently of `estimators`.
fn flat_estimate(
    tag: EstimatorTag,
    pop: &CurvePopulation,
    design: &SamplingDesign,
    model: &ResponseModel,
    sample: &Sample,
    mask: &[bool],
    weights: &SmoothingMatrix,
) -> Option<Vec<f64>> {
    use crate::response::ResponseProbabilities;
    let d = pop.grid().len();
    let big_n = pop.size() as f64;
    let mut out = Vec::with_capacity(weights.len());
    for row in weights.rows() {
        let (mut num, mut den, mut ratio) = (0.0, 0.0, 0.0);
        for j in 0..d {
            let wj = row.weights[j];
            if wj == 0.0 {
                continue;
            }
            let (mut yj, mut nj) = (0.0, 0.0);
            for (i, &k) in sample.indices().iter().enumerate() {
                if mask[i * d + j] {
                    let c = 1.0 / (model.theta(k, j) * design.pi(k));
                    yj += c * pop.values()[[k, j]];
                    nj += c;
                }
            }
            num += wj * yj;
            den += wj * nj;
            if tag == EstimatorTag::Hajek2 {
                if nj == 0.0 {
                    return None;
                }
                ratio += wj * yj / nj;
            }
        }
        out.push(match tag {
            EstimatorTag::Ht => num / big_n,
            EstimatorTag::Hajek1 => {
                if den <= 0.0 {
                    return None;
                }
                num / den
            }
            EstimatorTag::Hajek2 => ratio,
        });
    }
    Some(out)
}

/// Exact expectation and variance of an estimator over every (sample, mask)
/// outcome, with the response probabilities treated as known.
pub fn exact_moments(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    model: &ResponseModel,
    weights: &SmoothingMatrix,
    tag: EstimatorTag,
    options: EnumerationOptions,
) -> Result<EnumerationReport> {
    if design.population_size() != pop.size() {
        return Err(Error::DimensionMismatch("design and population sizes differ".into()));
    }
    let d = pop.grid().len();
    let samples = enumerate_samples(design, options.cap)?;
    let outcomes: f64 = samples.iter().map(|(s, _)| 2f64.powi((s.len() * d) as i32)).sum();
    if outcomes > options.cap {
        return Err(Error::TooLargeToEnumerate {
            size: outcomes,
            cap: options.cap,
        });
    }
    let theta = ThetaSource::known(model);
    let evaluate = |s: &Sample, bits: &[bool]| -> Result<Option<Vec<f64>>> {
        let flat_ok = options.strategy == EnumerationStrategy::Joint && !options.stratified;
        if flat_ok {
            return Ok(flat_estimate(tag, pop, design, model, s, bits, weights));
        }
        let mask = ObservationMask::new(Array2::from_shape_vec((s.len(), d), bits.to_vec()).expect("mask shape"));
        let data = ObservedSample::from_population(pop, s, mask)?;
        let est = if options.stratified {
            stratified_mean(tag, &data, theta, design, weights, ZeroDenominatorPolicy::Error)
        } else {
            mean_nr(tag, &data, theta, design, weights, ZeroDenominatorPolicy::Error)
        };
        match est {
            Ok(c) => Ok(Some(c.values)),
            Err(e)
                if matches!(
                    e.root(),
                    Error::ZeroDenominator { .. } | Error::ZeroDenominatorInstant { .. }
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    let m = weights.len();
    let per_sample = samples
        .par_iter()
        .map(|(s, ps)| -> Result<(WeightedMoments, f64, usize)> {
            let mut acc = WeightedMoments::new(m);
            let mut undefined = 0.0;
            let mut count = 0;
            let n = s.len();
            match options.strategy {
                EnumerationStrategy::PerUnit => {
                    let tables: Vec<Vec<(Vec<bool>, f64)>> = s
                        .indices()
                        .iter()
                        .map(|&k| {
                            (0..1usize << d)
                                .map(|b| bits_to_row(b, d))
                                .map(|r| {
                                    let p = model.row_probability(k, &r);
                                    (r, p)
                                })
                                .filter(|(_, p)| *p > 0.0)
                                .collect()
                        })
                        .collect();
                    let mut idx = vec![0usize; n];
                    loop {
                        let mut p = *ps;
                        let mut bits = Vec::with_capacity(n * d);
                        for (t, &i) in tables.iter().zip(&idx) {
                            p *= t[i].1;
                            bits.extend_from_slice(&t[i].0);
                        }
                        count += 1;
                        match evaluate(s, &bits)? {
                            Some(v) => acc.push(p, &v),
                            None => undefined += p,
                        }
                        // mixed-radix increment
                        let mut pos = 0;
                        while pos < n {
                            idx[pos] += 1;
                            if idx[pos] < tables[pos].len() {
                                break;
                            }
                            idx[pos] = 0;
                            pos += 1;
                        }
                        if pos == n {
                            break;
                        }
                    }
                }
                EnumerationStrategy::Joint => {
                    for pattern in 0..1usize << (n * d) {
                        let bits = bits_to_row(pattern, n * d);
                        let p = *ps
                            * s.indices()
                                .iter()
                                .enumerate()
                                .map(|(i, &k)| model.row_probability(k, &bits[i * d..(i + 1) * d]))
                                .product::<f64>();
                        if p == 0.0 {
                            continue;
                        }
                        count += 1;
                        match evaluate(s, &bits)? {
                            Some(v) => acc.push(p, &v),
                            None => undefined += p,
                        }
                    }
                }
            }
            Ok((acc, undefined, count))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = WeightedMoments::new(m);
    let mut undefined = 0.0;
    let mut count = 0;
    for (acc, u, c) in &per_sample {
        total.merge(acc);
        undefined += u;
        count += c;
    }
    if undefined > 0.0 {
        return Err(Error::UndefinedOutcome { probability: undefined });
    }
    let variance: Vec<f64> = total.m2.iter().map(|v| v / total.weight).collect();
    let target = smooth_population_mean(pop, weights.spec(), &weights.eval_points())?;
    let formula_variance = weights
        .rows()
        .iter()
        .map(|w| {
            if options.stratified {
                variance_stratified(tag, pop, design, model, w).map(|v| v.total)
            } else {
                variance_theory(tag, pop, design, model, w).map(|v| v.total)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let max_abs_bias = total
        .mean
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_abs_variance_gap = variance
        .iter()
        .zip(&formula_variance)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(EnumerationReport {
        description: format!(
            "N={}, d={}, {:?} design, {} samples",
            pop.size(),
            d,
            design.kind(),
            samples.len()
        ),
        tag,
        stratified: options.stratified,
        strategy: options.strategy,
        samples: samples.len(),
        outcomes: count,
        total_probability: total.weight,
        eval_points: weights.eval_points(),
        expectation: total.mean,
        variance,
        target,
        formula_variance,
        max_abs_bias,
        max_abs_variance_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    #[default]
    Known,
    /// Per-group response rates estimated from each replicate's mask.
    EstimatedGroup,
}

/// A fully specified simulation setting.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub population: CurvePopulation,
    pub design: SamplingDesign,
    pub response: ResponseModel,
    pub kernel: KernelSpec,
    pub eval_points: Vec<f64>,
    pub tags: Vec<EstimatorTag>,
    pub stratified: bool,
    pub theta: ThetaMode,
    pub plugin: bool,
    pub policy: ZeroDenominatorPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignConfig {
    Srswor {
        n: usize,
    },
    /// Per-stratum sample sizes.
    Stratified {
        allocation: Vec<usize>,
    },
    /// Proportional allocation of `n` across strata (at least 2 per stratum).
    StratifiedProportional {
        n: usize,
    },
    /// `pi_k` proportional to the unit's mean absolute level, scaled to an
    /// expected size of `expected_n` and clipped to `[min_pi, 1]`.
    Poisson {
        expected_n: f64,
        min_pi: f64,
    },
}

fn default_eval_count() -> usize {
    5
}

fn default_tags() -> Vec<EstimatorTag> {
    EstimatorTag::ALL.to_vec()
}

/// Serializable description of a [`Scenario`]; response groups are the strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub horizon: f64,
    pub instants: usize,
    pub population: GeneratorConfig,
    #[serde(default)]
    pub population_seed: u64,
    pub design: DesignConfig,
    pub response: ResponseKind,
    pub kernel: KernelFamily,
    pub bandwidth: f64,
    /// Explicit evaluation points; otherwise `eval_count` interior points.
    #[serde(default)]
    pub eval_points: Option<Vec<f64>>,
    #[serde(default = "default_eval_count")]
    pub eval_count: usize,
    #[serde(default = "default_tags")]
    pub estimators: Vec<EstimatorTag>,
    #[serde(default)]
    pub stratified: bool,
    #[serde(default)]
    pub theta: ThetaMode,
    #[serde(default)]
    pub plugin: bool,
    #[serde(default)]
    pub policy: ZeroDenominatorPolicy,
}

/// `m` equispaced points strictly inside `(0, T)`.
pub fn interior_points(horizon: f64, m: usize) -> Vec<f64> {
    (1..=m).map(|i| horizon * i as f64 / (m + 1) as f64).collect()
}

/// Largest-remainder proportional allocation with at least `min` per stratum.
pub fn proportional_allocation(sizes: &[usize], n: usize, min: usize) -> Result<Vec<usize>> {
    let big_n: usize = sizes.iter().sum();
    if n > big_n || min * sizes.len() > n {
        return Err(Error::InvalidConfig(format!(
            "cannot allocate {n} units over strata of sizes {sizes:?}"
        )));
    }
    let raw: Vec<f64> = sizes.iter().map(|&s| n as f64 * s as f64 / big_n as f64).collect();
    let mut alloc: Vec<usize> = raw
        .iter()
        .zip(sizes)
        .map(|(r, &s)| (r.floor() as usize).clamp(min.min(s), s))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    let mut total: usize = alloc.iter().sum();
    let mut i = 0;
    while total < n {
        let l = order[i % order.len()];
        if alloc[l] < sizes[l] {
            alloc[l] += 1;
            total += 1;
        }
        i += 1;
    }
    while total > n {
        let l = *order
            .iter()
            .rev()
            .find(|&&l| alloc[l] > min)
            .expect("feasible allocation");
        alloc[l] -= 1;
        total -= 1;
    }
    Ok(alloc)
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        let grid = TimeGrid::new(self.horizon, self.instants)?;
        let population = generate_population(self.population_seed, &grid, &self.population)?;
        let design = match &self.design {
            DesignConfig::Srswor { n } => SamplingDesign::srswor(population.size(), *n)?,
            DesignConfig::Stratified { allocation } => {
                SamplingDesign::stratified(population.strata().to_vec(), allocation.clone())?
            }
            DesignConfig::StratifiedProportional { n } => SamplingDesign::stratified(
                population.strata().to_vec(),
                proportional_allocation(population.stratum_sizes(), *n, 2)?,
            )?,
            DesignConfig::Poisson { expected_n, min_pi } => {
                let levels: Vec<f64> = population
                    .values()
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64)
                    .collect();
                let total: f64 = levels.iter().sum();
                let pi = levels
                    .iter()
                    .map(|l| (expected_n * l / total).clamp(*min_pi, 1.0))
                    .collect();
                SamplingDesign::poisson(pi)?
            }
        };
        let response = ResponseModel::from_kind(self.response.clone(), population.strata().to_vec())?;
        let kernel = KernelSpec::new(self.kernel, self.bandwidth)?;
        let eval_points = self
            .eval_points
            .clone()
            .unwrap_or_else(|| interior_points(self.horizon, self.eval_count));
        Ok(Scenario {
            population,
            design,
            response,
            kernel,
            eval_points,
            tags: self.estimators.clone(),
            stratified: self.stratified,
            theta: self.theta,
            plugin: self.plugin,
            policy: self.policy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub tag: EstimatorTag,
    /// Replicates where the estimator was undefined (zero denominators).
    pub failures: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub variance: Vec<f64>,
    /// Delete-one-batch jackknife standard error of `variance`.
    pub variance_se: Vec<f64>,
    pub formula_variance: Option<Vec<f64>>,
    /// `formula / empirical - 1`.
    pub relative_error: Option<Vec<f64>>,
    /// Mean of the plug-in variance estimates.
    pub plugin_mean: Option<Vec<f64>>,
    /// Share of replicates whose plug-in estimate was negative.
    pub plugin_negative_share: Option<Vec<f64>>,
}

impl EstimatorSummary {
    pub fn empirical_variance_curve(&self, eval_points: &[f64]) -> VarianceCurve {
        let m = self.variance.len();
        VarianceCurve {
            eval_points: eval_points.to_vec(),
            values: self.variance.clone(),
            sampling: vec![f64::NAN; m],
            nonresponse: vec![f64::NAN; m],
            kind: VarianceKind::EmpiricalMC,
            warnings: vec![false; m],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub seed: u64,
    pub replicates: usize,
    pub batches: usize,
    pub eval_points: Vec<f64>,
    pub target: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloReport {
    pub fn summary(&self, tag: EstimatorTag) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.tag == tag)
    }
}

/// Random stream for replicate `i`: ChaCha8 keyed by the master seed, with the
/// replicate index as stream id, so results do not depend on scheduling.
pub fn replicate_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

type ReplicateOutcome = Vec<Option<(Vec<f64>, Option<Vec<f64>>)>>;

fn run_replicate(scenario: &Scenario, weights: &SmoothingMatrix, seed: u64, i: u64) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(seed, i);
    let d = scenario.population.grid().len();
    let sample = draw_sample_with(&scenario.design, &mut rng);
    let mask = simulate_mask_with(&scenario.response, &sample, d, &mut rng);
    let data = ObservedSample::from_population(&scenario.population, &sample, mask)?;
    let estimated;
    let theta = match scenario.theta {
        ThetaMode::Known => ThetaSource::known(&scenario.response),
        ThetaMode::EstimatedGroup => match estimate_theta_group(data.mask(), data.sample(), scenario.response.groups())
        {
            Ok(e) => {
                estimated = e;
                ThetaSource::estimated(&estimated)
            }
            Err(Error::ZeroResponders { .. }) => return Ok(vec![None; scenario.tags.len()]),
            Err(e) => return Err(e),
        },
    };
    scenario
        .tags
        .iter()
        .map(|&tag| {
            let est = if scenario.stratified {
                stratified_mean(tag, &data, theta, &scenario.design, weights, scenario.policy)
            } else {
                mean_nr(tag, &data, theta, &scenario.design, weights, scenario.policy)
            };
            let values = match est {
                Ok(c) => c.values,
                Err(e) if is_undefined(&e) => return Ok(None),
                Err(e) => return Err(e),
            };
            let plugin = if scenario.plugin {
                let v = weights
                    .rows()
                    .iter()
                    .map(|w| {
                        if scenario.stratified {
                            variance_estimate_plugin_stratified(tag, &data, &scenario.design, theta, w)
                        } else {
                            variance_estimate_plugin(tag, &data, &scenario.design, theta, w)
                        }
                        .map(|p| p.total)
                    })
                    .collect::<Result<Vec<_>>>();
                match v {
                    Ok(v) => Some(v),
                    Err(e) if is_undefined(&e) => return Ok(None),
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            Ok(Some((values, plugin)))
        })
        .collect()
}

fn is_undefined(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::ZeroDenominator { .. } | Error::ZeroDenominatorInstant { .. } | Error::ZeroResponders { .. }
    )
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Delete-one-batch jackknife SE of the sample variance.
fn jackknife_variance_se(xs: &[f64], batches: usize) -> f64 {
    let n = xs.len();
    if batches < 2 || n < 2 * batches {
        return f64::NAN;
    }
    let bounds: Vec<usize> = (0..=batches).map(|b| b * n / batches).collect();
    let loo: Vec<f64> = (0..batches)
        .map(|b| {
            let rest: Vec<f64> = xs[..bounds[b]].iter().chain(&xs[bounds[b + 1]..]).copied().collect();
            sample_variance(&rest)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / batches as f64;
    let ss: f64 = loo.iter().map(|v| (v - mean).powi(2)).sum();
    ((batches - 1) as f64 / batches as f64 * ss).sqrt()
}

/// Draws `replicates` independent (sample, mask) outcomes and summarizes each
/// estimator against its closed-form variance.
pub fn monte_carlo(scenario: &Scenario, replicates: usize, seed: u64) -> Result<MonteCarloReport> {
    if replicates < 2 {
        return Err(Error::InvalidConfig("at least two replicates are needed".into()));
    }
    let grid = scenario.population.grid();
    let weights = SmoothingMatrix::new(grid, &scenario.kernel, &scenario.eval_points)?;
    let outcomes = (0..replicates as u64)
        .into_par_iter()
        .map(|i| run_replicate(scenario, &weights, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let batches = 20.min(replicates / 2).max(2);
    let m = weights.len();

    let mut estimators = Vec::with_capacity(scenario.tags.len());
    for (ti, &tag) in scenario.tags.iter().enumerate() {
        let ok: Vec<&(Vec<f64>, Option<Vec<f64>>)> = outcomes.iter().filter_map(|o| o[ti].as_ref()).collect();
        let failures = replicates - ok.len();
        let mut mean = vec![f64::NAN; m];
        let mut mean_se = vec![f64::NAN; m];
        let mut variance = vec![f64::NAN; m];
        let mut variance_se = vec![f64::NAN; m];
        if ok.len() >= 2 {
            for p in 0..m {
                let xs: Vec<f64> = ok.iter().map(|(v, _)| v[p]).collect();
                let mu = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = sample_variance(&xs);
                mean[p] = mu;
                variance[p] = var;
                mean_se[p] = (var / xs.len() as f64).sqrt();
                variance_se[p] = jackknife_variance_se(&xs, batches);
            }
        }
        let formula_variance = weights
            .rows()
            .iter()
            .map(|w| {
                if scenario.stratified {
                    variance_stratified(tag, &scenario.population, &scenario.design, &scenario.response, w)
                } else {
                    variance_theory(tag, &scenario.population, &scenario.design, &scenario.response, w)
                }
                .map(|v| v.total)
            })
            .collect::<Result<Vec<_>>>()
            .ok();
        let relative_error = formula_variance
            .as_ref()
            .map(|f| f.iter().zip(&variance).map(|(a, b)| a / b - 1.0).collect());
        let (plugin_mean, plugin_negative_share) = if scenario.plugin && !ok.is_empty() {
            let count = ok.len() as f64;
            let mut pm = vec![0.0; m];
            let mut neg = vec![0.0; m];
            for (_, pl) in &ok {
                let pl = pl.as_ref().expect("plug-in computed");
                for p in 0..m {
                    pm[p] += pl[p] / count;
                    if pl[p] < 0.0 {
                        neg[p] += 1.0 / count;
                    }
                }
            }
            (Some(pm), Some(neg))
        } else {
            (None, None)
        };
        estimators.push(EstimatorSummary {
            tag,
            failures,
            mean,
            mean_se,
            variance,
            variance_se,
            formula_variance,
            relative_error,
            plugin_mean,
            plugin_negative_share,
        });
    }
    Ok(MonteCarloReport {
        seed,
        replicates,
        batches,
        eval_points: weights.eval_points(),
        target: smooth_population_mean(&scenario.population, &scenario.kernel, &scenario.eval_points)?,
        estimators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_kernel::smoothing_weights;
    use crate::variance::variance_ht_exact;
    use ndarray::array;

    fn tiny_pop() -> CurvePopulation {
        CurvePopulation::new(
            TimeGrid::new(1.0, 2).unwrap(),
            array![[1.0, 3.0], [2.5, -1.0], [4.0, 0.5], [0.2, 2.2]],
            vec![0, 0, 1, 1],
        )
        .unwrap()
    }

    fn wm(pop: &CurvePopulation) -> SmoothingMatrix {
        SmoothingMatrix::new(
            pop.grid(),
            &KernelSpec::new(KernelFamily::Epanechnikov, 0.8).unwrap(),
            &[0.0, 0.4, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn census_full_response() {
        let p = tiny_pop();
        let design = SamplingDesign::srswor(4, 4).unwrap();
        let r = exact_moments(
            &p,
            &design,
            &ResponseModel::full(),
            &wm(&p),
            EstimatorTag::Ht,
            Default::default(),
        )
        .unwrap();
        assert_eq!(r.outcomes, 1);
        for (e, t) in r.expectation.iter().zip(&r.target) {
            assert!((e - t).abs() < 1e-14);
        }
        assert!(r.variance.iter().all(|&v| v.abs() < 1e-20));
    }

    #[test]
    fn bernoulli_ht_unbiased_and_exact_variance() {
        let p = tiny_pop();
        let design = SamplingDesign::srswor(4, 2).unwrap();
        let model = ResponseModel::homogeneous_groups(array![[0.7, 0.7]], vec![0; 4]).unwrap();
        let w = wm(&p);
        for strategy in [EnumerationStrategy::PerUnit, EnumerationStrategy::Joint] {
            let opts = EnumerationOptions {
                strategy,
                ..Default::default()
            };
            let r = exact_moments(&p, &design, &model, &w, EstimatorTag::Ht, opts).unwrap();
            assert!((r.total_probability - 1.0).abs() < 1e-10);
            assert!(r.max_abs_bias < 1e-12, "{}", r.max_abs_bias);
            assert!(r.max_abs_variance_gap < 1e-12, "{}", r.max_abs_variance_gap);
        }
    }

    #[test]
    fn markov_exact_variance_and_strategy_agreement() {
        let p = tiny_pop();
        let design = SamplingDesign::srswor(4, 2).unwrap();
        let model = ResponseModel::markov_gap(vec![0.75], vec![0.5], vec![0; 4]).unwrap();
        let w = wm(&p);
        let per_unit = exact_moments(&p, &design, &model, &w, EstimatorTag::Ht, Default::default()).unwrap();
        let joint = exact_moments(
            &p,
            &design,
            &model,
            &w,
            EstimatorTag::Ht,
            EnumerationOptions {
                strategy: EnumerationStrategy::Joint,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(per_unit.samples, 6);
        for i in 0..3 {
            assert!((per_unit.expectation[i] - joint.expectation[i]).abs() < 1e-12);
            assert!((per_unit.variance[i] - joint.variance[i]).abs() < 1e-12);
            let v = variance_ht_exact(&p, &design, &model, &w.rows()[i]).unwrap().total;
            assert!((per_unit.variance[i] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn undefined_hajek_outcomes_are_reported() {
        let p = tiny_pop();
        let design = SamplingDesign::srswor(4, 2).unwrap();
        let model = ResponseModel::homogeneous_groups(array![[0.7, 0.7]], vec![0; 4]).unwrap();
        let err = exact_moments(&p, &design, &model, &wm(&p), EstimatorTag::Hajek1, Default::default()).unwrap_err();
        match err {
            Error::UndefinedOutcome { probability } => assert!(probability > 0.0),
            other => panic!("{other:?}"),
        }
        let r = exact_moments(
            &p,
            &design,
            &model,
            &wm(&p),
            EstimatorTag::Ht,
            EnumerationOptions {
                cap: 10.0,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::TooLargeToEnumerate { .. })));
    }

    #[test]
    fn stratified_enumeration_matches_stratified_formula() {
        let p = tiny_pop();
        let design = SamplingDesign::stratified(vec![0, 0, 1, 1], vec![1, 1]).unwrap();
        let model = ResponseModel::markov_gap(vec![0.8, 0.6], vec![0.3, 0.5], vec![0, 0, 1, 1]).unwrap();
        let opts = EnumerationOptions {
            stratified: true,
            ..Default::default()
        };
        let r = exact_moments(&p, &design, &model, &wm(&p), EstimatorTag::Ht, opts).unwrap();
        assert!(r.max_abs_bias < 1e-12);
        assert!(r.max_abs_variance_gap < 1e-12);
    }

    #[test]
    fn weighted_moments_merge() {
        let mut a = WeightedMoments::new(1);
        let mut b = WeightedMoments::new(1);
        let mut all = WeightedMoments::new(1);
        for (p, x) in [(0.1, 1.0), (0.3, -2.0), (0.2, 5.0), (0.4, 0.5)] {
            all.push(p, &[x]);
            if x > 0.9 {
                a.push(p, &[x])
            } else {
                b.push(p, &[x])
            }
        }
        a.merge(&b);
        assert!((a.mean[0] - all.mean[0]).abs() < 1e-14);
        assert!((a.m2[0] - all.m2[0]).abs() < 1e-13);
    }

    fn mc_config() -> ScenarioConfig {
        ScenarioConfig {
            horizon: 1.0,
            instants: 12,
            population: GeneratorConfig {
                size: 120,
                n_strata: 2,
                ..Default::default()
            },
            population_seed: 3,
            design: DesignConfig::StratifiedProportional { n: 30 },
            response: ResponseKind::MarkovGap {
                theta: vec![0.8, 0.9],
                rho: vec![0.5, 0.3],
            },
            kernel: KernelFamily::Epanechnikov,
            bandwidth: 0.15,
            eval_points: None,
            eval_count: 5,
            estimators: default_tags(),
            stratified: true,
            theta: ThetaMode::Known,
            plugin: true,
            policy: ZeroDenominatorPolicy::Renormalize,
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_and_unbiased() {
        let sc = mc_config().build().unwrap();
        let a = monte_carlo(&sc, 400, 11).unwrap();
        let b = monte_carlo(&sc, 400, 11).unwrap();
        assert_eq!(a, b);
        let ht = a.summary(EstimatorTag::Ht).unwrap();
        for p in 0..5 {
            assert!((ht.mean[p] - a.target[p]).abs() <= 4.0 * ht.mean_se[p]);
            assert!(ht.variance_se[p] > 0.0);
        }
        let c = monte_carlo(&sc, 400, 12).unwrap();
        assert_ne!(a.estimators[0].mean, c.estimators[0].mean);
    }

    #[test]
    fn monte_carlo_two_replicates() {
        let mut sc = mc_config().build().unwrap();
        sc.response = ResponseModel::full();
        sc.design = SamplingDesign::stratified(sc.population.strata().to_vec(), sc.population.stratum_sizes().to_vec())
            .unwrap();
        let r = monte_carlo(&sc, 2, 0).unwrap();
        for s in &r.estimators {
            assert!(s.variance.iter().all(|v| v.abs() < 1e-20));
        }
        assert!(monte_carlo(&sc, 1, 0).is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(proportional_allocation(&[10, 30, 60], 20, 2).unwrap(), vec![2, 6, 12]);
        assert_eq!(
            proportional_allocation(&[3, 97], 10, 2).unwrap().iter().sum::<usize>(),
            10
        );
        assert!(proportional_allocation(&[3, 97], 3, 2).is_err());
        let pts = interior_points(1.0, 4);
        assert_eq!(pts, vec![0.2, 0.4, 0.6, 0.8]);
        let g = TimeGrid::new(1.0, 5).unwrap();
        let w = smoothing_weights(&g, &KernelSpec::new(KernelFamily::Uniform, 0.3).unwrap(), 0.5).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
