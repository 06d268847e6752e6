//! Variances of the smoothed mean estimators: exact HT variance and
//! linearized Hájek variances over the population (theory mode), stratified
//! versions, the Hájek(1) minus HT comparison, and plug-in estimates from a
//! sample (estimation mode).

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::design::SamplingDesign;
use crate::error::{Error, Result};
use crate::estimators::{stratum_totals, EstimatorTag, InstantTotals, ObservedSample, ThetaSource};
use crate::grid_kernel::{SmoothingMatrix, SmoothingWeights};
use crate::population::CurvePopulation;
use crate::response::ResponseProbabilities;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearizationVariant {
    U1,
    U2,
}

/// Centering of the linearized variables.
#[derive(Debug, Clone, Copy)]
pub enum Linearization<'a> {
    /// `u_kj = w_j (Y_kj - mu_tilde(t)) / N`.
    U1 { smoothed_mean: f64 },
    /// `u_kj = w_j (Y_kj - mu(t_j)) / N`; `instant_means` has one entry per instant.
    U2 { instant_means: &'a [f64] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedVariables {
    pub variant: LinearizationVariant,
    /// `u_kj(t)`, one row per unit.
    pub u: Array2<f64>,
    /// `u_tilde_k(t) = sum_j u_kj(t)`.
    pub smoothed: Vec<f64>,
}

/// Builds `u_kj(t)` for every row of `values`. Only instants in the support
/// of `w` are read.
pub fn linearized_variables(
    lin: Linearization<'_>,
    values: ArrayView2<'_, f64>,
    w: &SmoothingWeights,
    pop_size: f64,
) -> Result<LinearizedVariables> {
    let (n, d) = values.dim();
    if w.weights.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "weights span {} instants, values {d}",
            w.weights.len()
        )));
    }
    if let Linearization::U2 { instant_means } = lin {
        if instant_means.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} instant means for {d} instants",
                instant_means.len()
            )));
        }
    }
    let mut u = Array2::zeros((n, d));
    for (j, wj) in w.nonzero() {
        let center = match lin {
            Linearization::U1 { smoothed_mean } => smoothed_mean,
            Linearization::U2 { instant_means } => instant_means[j],
        };
        for k in 0..n {
            u[[k, j]] = wj * (values[[k, j]] - center) / pop_size;
        }
    }
    let smoothed = u.rows().into_iter().map(|r| r.sum()).collect();
    let variant = match lin {
        Linearization::U1 { .. } => LinearizationVariant::U1,
        Linearization::U2 { .. } => LinearizationVariant::U2,
    };
    Ok(LinearizedVariables { variant, u, smoothed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceKind {
    ExactHT,
    ApproxHajek1,
    ApproxHajek2,
    PlugInEstimate,
    EmpiricalMC,
}

impl VarianceKind {
    pub fn approx_for(tag: EstimatorTag) -> Self {
        match tag {
            EstimatorTag::Ht => VarianceKind::ExactHT,
            EstimatorTag::Hajek1 => VarianceKind::ApproxHajek1,
            EstimatorTag::Hajek2 => VarianceKind::ApproxHajek2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub t: f64,
    pub sampling: f64,
    pub nonresponse: f64,
    pub total: f64,
    pub kind: VarianceKind,
    /// Set when an approximate or estimated variance came out negative.
    pub warning: bool,
}

impl VariancePoint {
    fn new(t: f64, sampling: f64, nonresponse: f64, kind: VarianceKind) -> Self {
        let total = sampling + nonresponse;
        let warning = total < 0.0 && !matches!(kind, VarianceKind::ExactHT | VarianceKind::EmpiricalMC);
        Self {
            t,
            sampling,
            nonresponse,
            total,
            kind,
            warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub eval_points: Vec<f64>,
    pub values: Vec<f64>,
    pub sampling: Vec<f64>,
    pub nonresponse: Vec<f64>,
    pub kind: VarianceKind,
    pub warnings: Vec<bool>,
}

impl VarianceCurve {
    pub fn from_points(kind: VarianceKind, points: &[VariancePoint]) -> Self {
        Self {
            eval_points: points.iter().map(|p| p.t).collect(),
            values: points.iter().map(|p| p.total).collect(),
            sampling: points.iter().map(|p| p.sampling).collect(),
            nonresponse: points.iter().map(|p| p.nonresponse).collect(),
            kind,
            warnings: points.iter().map(|p| p.warning).collect(),
        }
    }

    /// Evaluates `f` at every row of `weights`.
    pub fn collect(
        kind: VarianceKind,
        weights: &SmoothingMatrix,
        f: impl Fn(&SmoothingWeights) -> Result<VariancePoint>,
    ) -> Result<Self> {
        let points = weights.rows().iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_points(kind, &points))
    }
}

/// `sum_{j,j'} a_j a_j' D_k(j,j')` over the listed `(j, a_j)` pairs.
fn covariance_sum(theta: &dyn ResponseProbabilities, unit: usize, a: &[(usize, f64)]) -> f64 {
    if theta.independent_instants() {
        return a
            .iter()
            .map(|&(j, v)| v * v * theta.covariance_factor(unit, j, j))
            .sum();
    }
    let mut acc = 0.0;
    for (p, &(j, aj)) in a.iter().enumerate() {
        acc += aj * aj * theta.covariance_factor(unit, j, j);
        for &(j2, aj2) in &a[p + 1..] {
            acc += 2.0 * aj * aj2 * theta.covariance_factor(unit, j, j2);
        }
    }
    acc
}

fn check_population(pop: &CurvePopulation, design: &SamplingDesign, w: &SmoothingWeights) -> Result<()> {
    if design.population_size() != pop.size() {
        return Err(Error::DimensionMismatch(format!(
            "design over {} units, population of {}",
            design.population_size(),
            pop.size()
        )));
    }
    if w.weights.len() != pop.grid().len() {
        return Err(Error::DimensionMismatch(
            "weights do not match the population grid".into(),
        ));
    }
    Ok(())
}

fn smoothed_means(pop: &CurvePopulation, w: &SmoothingWeights) -> (f64, Vec<f64>) {
    let size = pop.size() as f64;
    let mut instant = vec![0.0; pop.grid().len()];
    for (j, _) in w.nonzero() {
        instant[j] = pop.values().column(j).sum() / size;
    }
    (w.apply(&instant), instant)
}

/// Population-level variance of `(1/N) sum_j w_j sum_s r Y / (theta pi)`
/// after centering `Y_kj` at `centers[j]` (all zero for HT).
fn theory_variance(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    response: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
    centers: &[f64],
    kind: VarianceKind,
) -> Result<VariancePoint> {
    check_population(pop, design, w)?;
    let big_n = pop.size() as f64;
    let support: Vec<(usize, f64)> = w.nonzero().collect();
    let mut smoothed = vec![0.0; pop.size()];
    let mut nonresponse = 0.0;
    let mut a = Vec::with_capacity(support.len());
    for (k, z) in smoothed.iter_mut().enumerate() {
        a.clear();
        a.extend(
            support
                .iter()
                .map(|&(j, wj)| (j, wj * (pop.values()[[k, j]] - centers[j]) / big_n)),
        );
        *z = a.iter().map(|&(_, v)| v).sum();
        nonresponse += covariance_sum(response, k, &a) / design.pi(k);
    }
    let sampling = design.quadratic_form(&smoothed)?;
    Ok(VariancePoint::new(w.t, sampling, nonresponse, kind))
}

/// Exact variance of the smoothed non-response HT estimator at `w.t`.
pub fn variance_ht_exact(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    response: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
) -> Result<VariancePoint> {
    let zeros = vec![0.0; pop.grid().len()];
    theory_variance(pop, design, response, w, &zeros, VarianceKind::ExactHT)
}

/// Linearized variance of Hájek(1) (`U1`) or Hájek(2) (`U2`) at `w.t`.
pub fn variance_hajek_approx(
    variant: LinearizationVariant,
    pop: &CurvePopulation,
    design: &SamplingDesign,
    response: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
) -> Result<VariancePoint> {
    let (smoothed_mean, instant) = smoothed_means(pop, w);
    match variant {
        LinearizationVariant::U1 => {
            let centers = vec![smoothed_mean; pop.grid().len()];
            theory_variance(pop, design, response, w, &centers, VarianceKind::ApproxHajek1)
        }
        LinearizationVariant::U2 => theory_variance(pop, design, response, w, &instant, VarianceKind::ApproxHajek2),
    }
}

/// Theory-mode variance for any tag: exact for HT, linearized for Hájek.
pub fn variance_theory(
    tag: EstimatorTag,
    pop: &CurvePopulation,
    design: &SamplingDesign,
    response: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
) -> Result<VariancePoint> {
    match tag {
        EstimatorTag::Ht => variance_ht_exact(pop, design, response, w),
        EstimatorTag::Hajek1 => variance_hajek_approx(LinearizationVariant::U1, pop, design, response, w),
        EstimatorTag::Hajek2 => variance_hajek_approx(LinearizationVariant::U2, pop, design, response, w),
    }
}

fn stratified_parts(design: &SamplingDesign) -> Result<(&[usize], &[usize], &[usize])> {
    match design {
        SamplingDesign::StratifiedSrswor {
            strata,
            sizes,
            allocation,
        } => Ok((strata, sizes, allocation)),
        _ => Err(Error::NotStratified),
    }
}

/// Variance of the stratified estimator `sum_l (N_l/N) mu^_l(t)`: exact for
/// HT, linearized within each stratum for the Hájek forms.
pub fn variance_stratified(
    tag: EstimatorTag,
    pop: &CurvePopulation,
    design: &SamplingDesign,
    response: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
) -> Result<VariancePoint> {
    let (strata, sizes, allocation) = stratified_parts(design)?;
    check_population(pop, design, w)?;
    if strata != pop.strata() {
        return Err(Error::InvalidDesign(
            "design strata differ from population strata".into(),
        ));
    }
    let big_n = pop.size() as f64;
    let support: Vec<(usize, f64)> = w.nonzero().collect();
    let d = pop.grid().len();
    let (mut sampling, mut nonresponse) = (0.0, 0.0);
    let mut a = Vec::with_capacity(support.len());
    for (l, (&size_l, &n_l)) in sizes.iter().zip(allocation).enumerate() {
        let members = pop.stratum_members(l);
        let size = size_l as f64;
        let n = n_l as f64;
        let mut instant = vec![0.0; d];
        for &(j, _) in &support {
            instant[j] = members.iter().map(|&k| pop.values()[[k, j]]).sum::<f64>() / size;
        }
        let m = w.apply(&instant);
        let centers: Vec<f64> = match tag {
            EstimatorTag::Ht => vec![0.0; d],
            EstimatorTag::Hajek1 => vec![m; d],
            EstimatorTag::Hajek2 => instant,
        };

        let smoothed: Vec<f64> = members
            .iter()
            .map(|&k| support.iter().map(|&(j, wj)| wj * pop.values()[[k, j]]).sum())
            .collect();
        let s2 = if size_l > 1 {
            smoothed.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (size - 1.0)
        } else {
            0.0
        };
        let share = (size / big_n).powi(2);
        sampling += share * (1.0 - n / size) * s2 / n;

        let mut nr = 0.0;
        for &k in &members {
            a.clear();
            a.extend(
                support
                    .iter()
                    .map(|&(j, wj)| (j, wj * (pop.values()[[k, j]] - centers[j]))),
            );
            nr += covariance_sum(response, k, &a);
        }
        nonresponse += share * nr / (size * n);
    }
    Ok(VariancePoint::new(
        w.t,
        sampling,
        nonresponse,
        VarianceKind::approx_for(tag),
    ))
}

/// `V(stratified Hájek(1)) - V(stratified HT)` at `w.t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDifference {
    pub t: f64,
    /// From the full quadratic form in the covariance factors.
    pub exact: f64,
    /// Small-bandwidth form `-(m^2/n_l) w' D w`, aggregated over strata.
    pub small_h: f64,
}

pub fn variance_difference_stratified(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    response: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
) -> Result<VarianceDifference> {
    let (strata, sizes, allocation) = stratified_parts(design)?;
    check_population(pop, design, w)?;
    if strata != pop.strata() {
        return Err(Error::InvalidDesign(
            "design strata differ from population strata".into(),
        ));
    }
    let big_n = pop.size() as f64;
    let support: Vec<(usize, f64)> = w.nonzero().collect();
    let (mut exact, mut small_h) = (0.0, 0.0);
    for (l, (&size_l, &n_l)) in sizes.iter().zip(allocation).enumerate() {
        let members = pop.stratum_members(l);
        let size = size_l as f64;
        let n = n_l as f64;
        let m = members
            .iter()
            .map(|&k| support.iter().map(|&(j, wj)| wj * pop.values()[[k, j]]).sum::<f64>())
            .sum::<f64>()
            / size;
        let (mut ex, mut sh) = (0.0, 0.0);
        for &k in &members {
            for &(j, wj) in &support {
                for &(j2, wj2) in &support {
                    let dk = response.covariance_factor(k, j, j2);
                    let y = pop.values()[[k, j]];
                    let y2 = pop.values()[[k, j2]];
                    ex += wj * wj2 * dk * m * (m - y - y2);
                    sh += wj * wj2 * dk;
                }
            }
        }
        let share = (size / big_n).powi(2);
        exact += share * ex / (size * n);
        small_h -= share * m * m * sh / (size * n);
    }
    Ok(VarianceDifference { t: w.t, exact, small_h })
}

/// Plug-in variance over `rows` of `data`, with `u^_kj = w_j (Y_kj - c_j) / N`.
fn plugin_core(
    data: &ObservedSample,
    rows: &[usize],
    design: &SamplingDesign,
    theta: &dyn ResponseProbabilities,
    w: &SmoothingWeights,
    centers: &[f64],
    pop_size: f64,
) -> Result<(f64, f64)> {
    let support: Vec<(usize, f64)> = w.nonzero().collect();
    let mut z = vec![0.0; data.sample().len()];
    let mut nonresponse = 0.0;
    let mut a = Vec::with_capacity(support.len());
    for &i in rows {
        let k = data.sample().indices()[i];
        a.clear();
        let mut zk = 0.0;
        for &(j, wj) in &support {
            if !data.mask().get(i, j) {
                continue;
            }
            let tk = theta.theta(k, j);
            if tk <= 0.0 {
                return Err(Error::ZeroTheta { unit: k, instant: j });
            }
            let u = wj * (data.values()[[i, j]] - centers[j]) / pop_size;
            zk += u / tk;
            a.push((j, u));
        }
        z[i] = zk;
        nonresponse += covariance_sum(theta, k, &a) / design.pi(k);
    }
    let sampling = design.sample_quadratic_form(data.sample(), &z)?;
    Ok((sampling, nonresponse))
}

fn plugin_centers(tag: EstimatorTag, totals: &InstantTotals, w: &SmoothingWeights) -> Result<Vec<f64>> {
    let d = totals.y.len();
    match tag {
        EstimatorTag::Ht => Ok(vec![0.0; d]),
        EstimatorTag::Hajek1 => Ok(vec![totals.hajek1(w)?; d]),
        EstimatorTag::Hajek2 => {
            let mut c = vec![0.0; d];
            for (j, _) in w.nonzero() {
                if totals.n[j] <= 0.0 {
                    return Err(Error::ZeroDenominatorInstant { instant: j });
                }
                c[j] = totals.y[j] / totals.n[j];
            }
            Ok(c)
        }
    }
}

/// Sample-based variance estimate for the chosen estimator at `w.t`. Hájek(1)
/// centers at its own estimate; Hájek(2) at the pointwise ratios
/// `Y^(t_j)/N^(t_j)`; HT is not centered.
pub fn variance_estimate_plugin(
    tag: EstimatorTag,
    data: &ObservedSample,
    design: &SamplingDesign,
    theta: ThetaSource<'_>,
    w: &SmoothingWeights,
) -> Result<VariancePoint> {
    if w.weights.len() != data.n_instants() {
        return Err(Error::DimensionMismatch("weights do not match the sample grid".into()));
    }
    let rows: Vec<usize> = (0..data.sample().len()).collect();
    let totals = InstantTotals::collect(data, &rows, |k| design.pi(k), Some(theta.probs()))?;
    let centers = plugin_centers(tag, &totals, w)?;
    let (sampling, nonresponse) = plugin_core(
        data,
        &rows,
        design,
        theta.probs(),
        w,
        &centers,
        design.population_size() as f64,
    )?;
    Ok(VariancePoint::new(
        w.t,
        sampling,
        nonresponse,
        VarianceKind::PlugInEstimate,
    ))
}

/// Plug-in estimate for the stratified estimator: per-stratum estimates with
/// per-stratum centers, combined with weights `(N_l/N)^2`.
pub fn variance_estimate_plugin_stratified(
    tag: EstimatorTag,
    data: &ObservedSample,
    design: &SamplingDesign,
    theta: ThetaSource<'_>,
    w: &SmoothingWeights,
) -> Result<VariancePoint> {
    let (strata, _, _) = stratified_parts(design)?;
    let per_stratum = stratum_totals(data, design, theta.probs())?;
    let big_n = design.population_size() as f64;
    let (mut sampling, mut nonresponse) = (0.0, 0.0);
    for (l, (size, totals)) in per_stratum.iter().enumerate() {
        let rows = data.rows_in_stratum(strata, l);
        let centers = plugin_centers(tag, totals, w).map_err(|e| e.in_stratum(l))?;
        let (s, n) =
            plugin_core(data, &rows, design, theta.probs(), w, &centers, *size as f64).map_err(|e| e.in_stratum(l))?;
        let share = (*size as f64 / big_n).powi(2);
        sampling += share * s;
        nonresponse += share * n;
    }
    Ok(VariancePoint::new(
        w.t,
        sampling,
        nonresponse,
        VarianceKind::PlugInEstimate,
    ))
}
