//! Mean-curve estimators: full-response Horvitz-Thompson and Hájek, the three
//! non-response estimators, and their stratified (post-stratified) forms.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::design::{DesignKind, Sample, SamplingDesign};
use crate::error::{Error, Result};
use crate::grid_kernel::{KernelSpec, SmoothingMatrix, SmoothingWeights};
use crate::population::CurvePopulation;
use crate::response::{ObservationMask, ResponseProbabilities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorTag {
    Ht,
    Hajek1,
    Hajek2,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 3] = [EstimatorTag::Ht, EstimatorTag::Hajek1, EstimatorTag::Hajek2];
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorTag::Ht => "ht",
            EstimatorTag::Hajek1 => "hajek1",
            EstimatorTag::Hajek2 => "hajek2",
        })
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ht" => Ok(EstimatorTag::Ht),
            "hajek1" => Ok(EstimatorTag::Hajek1),
            "hajek2" => Ok(EstimatorTag::Hajek2),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Where the response probabilities come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaOrigin {
    /// No non-response adjustment (full-response estimators).
    None,
    Known,
    /// Estimated from the observed mask; plug-in variances are then approximate.
    Estimated,
}

/// Response probabilities used to reweight respondents.
#[derive(Clone, Copy)]
pub struct ThetaSource<'a> {
    probs: &'a dyn ResponseProbabilities,
    origin: ThetaOrigin,
}

impl<'a> ThetaSource<'a> {
    pub fn known(probs: &'a dyn ResponseProbabilities) -> Self {
        Self {
            probs,
            origin: ThetaOrigin::Known,
        }
    }

    pub fn estimated(probs: &'a dyn ResponseProbabilities) -> Self {
        Self {
            probs,
            origin: ThetaOrigin::Estimated,
        }
    }

    pub fn origin(&self) -> ThetaOrigin {
        self.origin
    }

    pub fn probs(&self) -> &'a dyn ResponseProbabilities {
        self.probs
    }
}

impl fmt::Debug for ThetaSource<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThetaSource").field("origin", &self.origin).finish()
    }
}

/// What Hájek(2) does when `N^(t_j) = 0` at an instant with positive weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroDenominatorPolicy {
    #[default]
    Error,
    /// Drop the instant and renormalize the remaining weights.
    Renormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub kernel: KernelSpec,
    pub design: DesignKind,
    pub theta: ThetaOrigin,
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedCurve {
    pub eval_points: Vec<f64>,
    pub values: Vec<f64>,
    pub tag: EstimatorTag,
    pub meta: CurveMeta,
}

/// Sampled curves with their response mask. Row `i` of `values` and of the
/// mask belongs to `sample.indices()[i]`; unobserved cells are never read and
/// may hold anything (the CSV reader stores NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    sample: Sample,
    values: Array2<f64>,
    mask: ObservationMask,
}

impl ObservedSample {
    pub fn new(sample: Sample, values: Array2<f64>, mask: ObservationMask) -> Result<Self> {
        if values.nrows() != sample.len() || mask.n_rows() != sample.len() {
            return Err(Error::DimensionMismatch(format!(
                "sample of {} units with {} value rows and {} mask rows",
                sample.len(),
                values.nrows(),
                mask.n_rows()
            )));
        }
        if values.ncols() != mask.n_instants() {
            return Err(Error::DimensionMismatch(format!(
                "{} value columns but {} mask columns",
                values.ncols(),
                mask.n_instants()
            )));
        }
        for ((i, j), v) in values.indexed_iter() {
            if mask.get(i, j) && !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "observed value of sampled unit {} at instant {j} is not finite",
                    sample.indices()[i]
                )));
            }
        }
        Ok(Self { sample, values, mask })
    }

    /// Extracts the sampled rows of a population.
    pub fn from_population(pop: &CurvePopulation, sample: &Sample, mask: ObservationMask) -> Result<Self> {
        let d = pop.grid().len();
        let mut values = Array2::zeros((sample.len(), d));
        for (i, &k) in sample.indices().iter().enumerate() {
            if k >= pop.size() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    size: pop.size(),
                });
            }
            values.row_mut(i).assign(&pop.curve(k));
        }
        Self::new(sample.clone(), values, mask)
    }

    pub fn fully_observed(pop: &CurvePopulation, sample: &Sample) -> Result<Self> {
        Self::from_population(pop, sample, ObservationMask::full(sample.len(), pop.grid().len()))
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn n_instants(&self) -> usize {
        self.values.ncols()
    }

    /// Row indices of the sampled units that belong to stratum `lambda`.
    pub(crate) fn rows_in_stratum(&self, strata: &[usize], lambda: usize) -> Vec<usize> {
        self.sample
            .indices()
            .iter()
            .enumerate()
            .filter(|(_, &k)| strata[k] == lambda)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-instant weighted totals `Y^(t_j) = sum_s r Y / (theta pi)` and
/// `N^(t_j) = sum_s r / (theta pi)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InstantTotals {
    pub y: Vec<f64>,
    pub n: Vec<f64>,
}

impl InstantTotals {
    /// Totals over `rows` of `data`. With `theta = None` every cell counts as
    /// observed with probability one.
    pub fn collect(
        data: &ObservedSample,
        rows: &[usize],
        pi: impl Fn(usize) -> f64,
        theta: Option<&dyn ResponseProbabilities>,
    ) -> Result<Self> {
        let d = data.n_instants();
        let mut y = vec![0.0; d];
        let mut n = vec![0.0; d];
        for &i in rows {
            let k = data.sample.indices()[i];
            let pik = pi(k);
            for j in 0..d {
                let weight = match theta {
                    None => 1.0 / pik,
                    Some(th) => {
                        if !data.mask.get(i, j) {
                            continue;
                        }
                        let tk = th.theta(k, j);
                        if tk <= 0.0 {
                            return Err(Error::ZeroTheta { unit: k, instant: j });
                        }
                        1.0 / (tk * pik)
                    }
                };
                y[j] += weight * data.values[[i, j]];
                n[j] += weight;
            }
        }
        Ok(Self { y, n })
    }

    pub fn ht(&self, w: &SmoothingWeights, pop_size: f64) -> f64 {
        w.apply(&self.y) / pop_size
    }

    pub fn hajek1(&self, w: &SmoothingWeights) -> Result<f64> {
        let den = w.apply(&self.n);
        if den <= 0.0 {
            return Err(Error::ZeroDenominator { t: w.t });
        }
        Ok(w.apply(&self.y) / den)
    }

    pub fn hajek2(&self, w: &SmoothingWeights, policy: ZeroDenominatorPolicy) -> Result<f64> {
        let mut acc = 0.0;
        let mut kept = 0.0;
        for (j, wj) in w.nonzero() {
            if self.n[j] <= 0.0 {
                match policy {
                    ZeroDenominatorPolicy::Error => return Err(Error::ZeroDenominatorInstant { instant: j }),
                    ZeroDenominatorPolicy::Renormalize => continue,
                }
            }
            acc += wj * self.y[j] / self.n[j];
            kept += wj;
        }
        if kept <= 0.0 {
            return Err(Error::ZeroDenominator { t: w.t });
        }
        Ok(match policy {
            ZeroDenominatorPolicy::Error => acc,
            ZeroDenominatorPolicy::Renormalize => acc / kept,
        })
    }

    pub fn evaluate(
        &self,
        tag: EstimatorTag,
        w: &SmoothingWeights,
        pop_size: f64,
        policy: ZeroDenominatorPolicy,
    ) -> Result<f64> {
        match tag {
            EstimatorTag::Ht => Ok(self.ht(w, pop_size)),
            EstimatorTag::Hajek1 => self.hajek1(w),
            EstimatorTag::Hajek2 => self.hajek2(w, policy),
        }
    }
}

fn check_width(data: &ObservedSample, weights: &SmoothingMatrix) -> Result<()> {
    let d = weights.rows().first().map_or(data.n_instants(), |r| r.weights.len());
    if d != data.n_instants() {
        return Err(Error::DimensionMismatch(format!(
            "weights span {d} instants, data has {}",
            data.n_instants()
        )));
    }
    Ok(())
}

fn all_rows(data: &ObservedSample) -> Vec<usize> {
    (0..data.sample.len()).collect()
}

fn build_curve(
    tag: EstimatorTag,
    weights: &SmoothingMatrix,
    values: Vec<f64>,
    design: DesignKind,
    theta: ThetaOrigin,
    stratified: bool,
) -> EstimatedCurve {
    EstimatedCurve {
        eval_points: weights.eval_points(),
        values,
        tag,
        meta: CurveMeta {
            kernel: *weights.spec(),
            design,
            theta,
            stratified,
        },
    }
}

fn full_totals(data: &ObservedSample, design: &SamplingDesign) -> Result<InstantTotals> {
    if !data.mask.is_complete() {
        return Err(Error::InvalidConfig(
            "full-response estimator applied to a sample with missing values".into(),
        ));
    }
    InstantTotals::collect(data, &all_rows(data), |k| design.pi(k), None)
}

/// `mu^_HT(t) = sum_j w_j(t) (1/N) sum_s Y_k(t_j) / pi_k`.
pub fn ht_mean_full(
    data: &ObservedSample,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
) -> Result<EstimatedCurve> {
    check_width(data, weights)?;
    let totals = full_totals(data, design)?;
    let big_n = design.population_size() as f64;
    let values = weights.rows().iter().map(|w| totals.ht(w, big_n)).collect();
    Ok(build_curve(
        EstimatorTag::Ht,
        weights,
        values,
        design.kind(),
        ThetaOrigin::None,
        false,
    ))
}

/// `mu^_Ha(t) = sum_j w_j(t) [sum_s Y_k(t_j)/pi_k] / [sum_s 1/pi_k]`. Tagged
/// as Hájek(2), which it coincides with (as does Hájek(1)) under full response.
pub fn hajek_mean_full(
    data: &ObservedSample,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
) -> Result<EstimatedCurve> {
    check_width(data, weights)?;
    let totals = full_totals(data, design)?;
    let values = weights
        .rows()
        .iter()
        .map(|w| totals.hajek2(w, ZeroDenominatorPolicy::Error))
        .collect::<Result<_>>()?;
    Ok(build_curve(
        EstimatorTag::Hajek2,
        weights,
        values,
        design.kind(),
        ThetaOrigin::None,
        false,
    ))
}

/// Any of the three non-response estimators over the whole sample.
pub fn mean_nr(
    tag: EstimatorTag,
    data: &ObservedSample,
    theta: ThetaSource<'_>,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
    policy: ZeroDenominatorPolicy,
) -> Result<EstimatedCurve> {
    check_width(data, weights)?;
    let totals = InstantTotals::collect(data, &all_rows(data), |k| design.pi(k), Some(theta.probs()))?;
    let big_n = design.population_size() as f64;
    let values = weights
        .rows()
        .iter()
        .map(|w| totals.evaluate(tag, w, big_n, policy))
        .collect::<Result<_>>()?;
    Ok(build_curve(tag, weights, values, design.kind(), theta.origin(), false))
}

/// `mu^_{r,HT}(t) = (1/N) sum_j w_j(t) sum_s r_k(t_j) Y_k(t_j) / (theta_k(t_j) pi_k)`.
pub fn ht_mean_nr(
    data: &ObservedSample,
    theta: ThetaSource<'_>,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
) -> Result<EstimatedCurve> {
    mean_nr(
        EstimatorTag::Ht,
        data,
        theta,
        design,
        weights,
        ZeroDenominatorPolicy::Error,
    )
}

/// Ratio of the smoothed reweighted total and the smoothed reweighted count.
pub fn hajek1_mean_nr(
    data: &ObservedSample,
    theta: ThetaSource<'_>,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
) -> Result<EstimatedCurve> {
    mean_nr(
        EstimatorTag::Hajek1,
        data,
        theta,
        design,
        weights,
        ZeroDenominatorPolicy::Error,
    )
}

/// Smoothed pointwise ratios `sum_j w_j(t) Y^(t_j) / N^(t_j)`.
pub fn hajek2_mean_nr(
    data: &ObservedSample,
    theta: ThetaSource<'_>,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
    policy: ZeroDenominatorPolicy,
) -> Result<EstimatedCurve> {
    mean_nr(EstimatorTag::Hajek2, data, theta, design, weights, policy)
}

/// Per-stratum totals of a stratified SRSWOR sample, with `(N_l, rows)`.
pub(crate) fn stratum_totals(
    data: &ObservedSample,
    design: &SamplingDesign,
    theta: &dyn ResponseProbabilities,
) -> Result<Vec<(usize, InstantTotals)>> {
    let SamplingDesign::StratifiedSrswor { strata, sizes, .. } = design else {
        return Err(Error::NotStratified);
    };
    sizes
        .iter()
        .enumerate()
        .map(|(l, &size)| {
            let rows = data.rows_in_stratum(strata, l);
            InstantTotals::collect(data, &rows, |k| design.pi(k), Some(theta))
                .map(|t| (size, t))
                .map_err(|e| e.in_stratum(l))
        })
        .collect()
}

/// `mu^(t) = sum_l (N_l / N) mu^_l(t)` with the chosen estimator computed
/// separately within each stratum of a stratified SRSWOR sample.
pub fn stratified_mean(
    tag: EstimatorTag,
    data: &ObservedSample,
    theta: ThetaSource<'_>,
    design: &SamplingDesign,
    weights: &SmoothingMatrix,
    policy: ZeroDenominatorPolicy,
) -> Result<EstimatedCurve> {
    check_width(data, weights)?;
    let per_stratum = stratum_totals(data, design, theta.probs())?;
    let big_n = design.population_size() as f64;
    let mut values = vec![0.0; weights.len()];
    for (l, (size, totals)) in per_stratum.iter().enumerate() {
        let share = *size as f64 / big_n;
        for (v, w) in values.iter_mut().zip(weights.rows()) {
            let est = totals
                .evaluate(tag, w, *size as f64, policy)
                .map_err(|e| e.in_stratum(l))?;
            *v += share * est;
        }
    }
    Ok(build_curve(tag, weights, values, design.kind(), theta.origin(), true))
}
