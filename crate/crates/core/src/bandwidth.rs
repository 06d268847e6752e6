//! Leave-one-curve-out cross-validation for the bandwidth, weighted by the
//! design and by the response probabilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::SamplingDesign;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorTag, ObservedSample, ThetaSource, ZeroDenominatorPolicy};
use crate::grid_kernel::{KernelFamily, KernelSpec, SmoothingMatrix, TimeGrid};

/// Number of candidates in [`default_candidates`].
pub const DEFAULT_CANDIDATE_COUNT: usize = 15;

/// Everything the criterion needs except the bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct CvInputs<'a> {
    pub data: &'a ObservedSample,
    pub design: &'a SamplingDesign,
    pub theta: ThetaSource<'a>,
    pub grid: &'a TimeGrid,
    /// Estimator recomputed without each curve; stratified when the design is.
    pub tag: EstimatorTag,
    pub policy: ZeroDenominatorPolicy,
}

impl<'a> CvInputs<'a> {
    pub fn new(
        data: &'a ObservedSample,
        design: &'a SamplingDesign,
        theta: ThetaSource<'a>,
        grid: &'a TimeGrid,
    ) -> Self {
        Self {
            data,
            design,
            theta,
            grid,
            tag: EstimatorTag::Hajek2,
            policy: ZeroDenominatorPolicy::Error,
        }
    }

    pub fn with_tag(mut self, tag: EstimatorTag) -> Self {
        self.tag = tag;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub candidates: Vec<f64>,
    /// `None` where the criterion could not be evaluated.
    pub scores: Vec<Option<f64>>,
    pub selected: f64,
    /// Whether each candidate satisfies `2h > spacing`.
    pub a3_valid: Vec<bool>,
    /// Evaluation failures per candidate (0 or 1).
    pub failures: Vec<usize>,
    pub errors: Vec<Option<String>>,
}

/// `DEFAULT_CANDIDATE_COUNT` log-spaced bandwidths from the grid spacing to `T/4`.
pub fn default_candidates(grid: &TimeGrid) -> Vec<f64> {
    let lo = grid.spacing();
    let hi = grid.horizon() / 4.0;
    if hi <= lo {
        return vec![lo];
    }
    let m = DEFAULT_CANDIDATE_COUNT;
    let ratio = (hi / lo).ln() / (m - 1) as f64;
    (0..m).map(|i| lo * (ratio * i as f64).exp()).collect()
}

/// Per-stratum raw sums `sum r Y / theta` and `sum r / theta` per instant.
struct StratumSums {
    size: f64,
    n: usize,
    y: Vec<f64>,
    cnt: Vec<f64>,
    respondents: Vec<usize>,
}

/// Stratum label of each sample row, and `(N_l, n_l)` per stratum.
type StrataLayout = (Vec<usize>, Vec<(usize, usize)>);

/// An unstratified SRSWOR is one stratum.
fn strata_of(design: &SamplingDesign, data: &ObservedSample) -> Result<StrataLayout> {
    match design {
        SamplingDesign::Srswor { population, sample } => {
            Ok((vec![0; data.sample().len()], vec![(*population, *sample)]))
        }
        SamplingDesign::StratifiedSrswor {
            strata,
            sizes,
            allocation,
        } => Ok((
            data.sample().indices().iter().map(|&k| strata[k]).collect(),
            sizes.iter().copied().zip(allocation.iter().copied()).collect(),
        )),
        SamplingDesign::Poisson { .. } => Err(Error::InvalidDesign(
            "cross-validation needs a (stratified) SRSWOR design".into(),
        )),
    }
}

/// `r Y / theta` and `r / theta` for one row, zero where unobserved.
fn row_terms(data: &ObservedSample, theta: ThetaSource<'_>, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = data.sample().indices()[i];
    let d = data.n_instants();
    let mut y = vec![0.0; d];
    let mut c = vec![0.0; d];
    for j in 0..d {
        if data.mask().get(i, j) {
            let th = theta.probs().theta(k, j);
            if th <= 0.0 {
                return Err(Error::ZeroTheta { unit: k, instant: j });
            }
            y[j] = data.values()[[i, j]] / th;
            c[j] = 1.0 / th;
        }
    }
    Ok((y, c))
}

/// Stratum estimate at every row of `weights` from raw sums over `m` units.
fn stratum_curve(
    tag: EstimatorTag,
    policy: ZeroDenominatorPolicy,
    weights: &SmoothingMatrix,
    size: f64,
    m: usize,
    y: &[f64],
    cnt: &[f64],
) -> Result<Vec<f64>> {
    // scale by 1/pi = N_l / m so the HT form is that of an SRSWOR of size m
    let scale = size / m as f64;
    let totals = crate::estimators::InstantTotals {
        y: y.iter().map(|v| v * scale).collect(),
        n: cnt.iter().map(|v| v * scale).collect(),
    };
    weights
        .rows()
        .iter()
        .map(|w| totals.evaluate(tag, w, size, policy))
        .collect()
}

/// `CV(h) = sum_l sum_{k in s_l} (N_l/n_l) sum_j r_kj/theta_kj (Y_kj - mu^(-k)(t_j))^2`.
pub fn cv_score(inputs: &CvInputs<'_>, spec: &KernelSpec) -> Result<f64> {
    let data = inputs.data;
    let d = data.n_instants();
    if d != inputs.grid.len() {
        return Err(Error::DimensionMismatch("sample width differs from the grid".into()));
    }
    let weights = SmoothingMatrix::on_grid(inputs.grid, spec)?;
    let (labels, shapes) = strata_of(inputs.design, data)?;
    let big_n = inputs.design.population_size() as f64;

    let mut rows_by_stratum = vec![Vec::new(); shapes.len()];
    for (i, &l) in labels.iter().enumerate() {
        rows_by_stratum[l].push(i);
    }
    let mut terms = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        terms.push(row_terms(data, inputs.theta, i)?);
    }

    let mut sums = Vec::with_capacity(shapes.len());
    for (l, rows) in rows_by_stratum.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::TooFewUnits {
                stratum: l,
                count: rows.len(),
            });
        }
        let mut y = vec![0.0; d];
        let mut cnt = vec![0.0; d];
        let mut respondents = vec![0; d];
        for &i in rows {
            for j in 0..d {
                y[j] += terms[i].0[j];
                cnt[j] += terms[i].1[j];
                respondents[j] += usize::from(data.mask().get(i, j));
            }
        }
        sums.push(StratumSums {
            size: shapes[l].0 as f64,
            n: rows.len(),
            y,
            cnt,
            respondents,
        });
    }

    let full_curves = sums
        .iter()
        .enumerate()
        .map(|(l, s)| {
            stratum_curve(inputs.tag, inputs.policy, &weights, s.size, s.n, &s.y, &s.cnt).map_err(|e| e.in_stratum(l))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = vec![0.0; d];
    for (s, curve) in sums.iter().zip(&full_curves) {
        for (p, v) in pooled.iter_mut().zip(curve) {
            *p += s.size / big_n * v;
        }
    }

    let per_unit = (0..labels.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let l = labels[i];
            let s = &sums[l];
            let (ty, tc) = &terms[i];
            let mut y: Vec<f64> = s.y.iter().zip(ty).map(|(a, b)| a - b).collect();
            let mut cnt: Vec<f64> = s.cnt.iter().zip(tc).map(|(a, b)| a - b).collect();
            for j in 0..d {
                // no respondent left: make the denominator exactly zero
                if s.respondents[j] == usize::from(data.mask().get(i, j)) {
                    y[j] = 0.0;
                    cnt[j] = 0.0;
                }
            }
            let loo = stratum_curve(inputs.tag, inputs.policy, &weights, s.size, s.n - 1, &y, &cnt)
                .map_err(|e| e.in_stratum(l))?;
            let share = s.size / big_n;
            let mut acc = 0.0;
            for j in 0..d {
                if data.mask().get(i, j) {
                    let pred = pooled[j] + share * (loo[j] - full_curves[l][j]);
                    acc += tc[j] * (data.values()[[i, j]] - pred).powi(2);
                }
            }
            Ok(s.size / s.n as f64 * acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_unit.iter().sum())
}

/// Minimizes [`cv_score`] over `candidates`; ties go to the larger bandwidth.
pub fn select_bandwidth(inputs: &CvInputs<'_>, family: KernelFamily, candidates: &[f64]) -> Result<CvResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("empty bandwidth candidate grid".into()));
    }
    let evaluated: Vec<std::result::Result<f64, String>> = candidates
        .par_iter()
        .map(|&h| {
            KernelSpec::new(family, h)
                .and_then(|spec| cv_score(inputs, &spec))
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for (&h, r) in candidates.iter().zip(&evaluated) {
        if let Ok(score) = r {
            if !score.is_finite() {
                continue;
            }
            best = match best {
                Some((bh, bs)) if *score > bs || (*score == bs && h <= bh) => Some((bh, bs)),
                _ => Some((h, *score)),
            };
        }
    }
    let (selected, _) = best.ok_or(Error::AllCandidatesFailed)?;
    Ok(CvResult {
        candidates: candidates.to_vec(),
        scores: evaluated.iter().map(|r| r.as_ref().ok().copied()).collect(),
        selected,
        a3_valid: candidates.iter().map(|&h| 2.0 * h > inputs.grid.spacing()).collect(),
        failures: evaluated.iter().map(|r| usize::from(r.is_err())).collect(),
        errors: evaluated.iter().map(|r| r.as_ref().err().cloned()).collect(),
    })
}
