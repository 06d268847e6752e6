//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes plain numbers or a JSON string and returns a
//! JSON string, so the page needs no generated TypeScript glue beyond
//! `wasm-bindgen`'s own.

use curvesurvey::bandwidth::{default_candidates, select_bandwidth, CvInputs};
use curvesurvey::design::{draw_sample_with, SamplingDesign};
use curvesurvey::estimators::{mean_nr, EstimatorTag, ObservedSample, ThetaSource, ZeroDenominatorPolicy};
use curvesurvey::grid_kernel::{smoothing_weights, KernelFamily, KernelSpec, SmoothingMatrix, TimeGrid};
use curvesurvey::oracle_sim::replicate_rng;
use curvesurvey::population::{generate_population, population_mean, CurvePopulation, GeneratorConfig};
use curvesurvey::response::{simulate_mask_with, ResponseModel};
use curvesurvey::variance::variance_estimate_plugin;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct WeightsView {
    pub instants: Vec<f64>,
    pub weights: Vec<f64>,
    pub spacing: f64,
    pub a3_valid: bool,
}

/// Smoothing weights of one evaluation point on a grid of `instants` points over [0, 1].
pub fn weights_view(kernel: &str, bandwidth: f64, instants: usize, t: f64) -> Result<WeightsView, String> {
    let family: KernelFamily = kernel.parse().map_err(|e: curvesurvey::Error| e.to_string())?;
    let grid = TimeGrid::new(1.0, instants).map_err(|e| e.to_string())?;
    let spec = KernelSpec::new(family, bandwidth).map_err(|e| e.to_string())?;
    let w = smoothing_weights(&grid, &spec, t).map_err(|e| e.to_string())?;
    Ok(WeightsView {
        instants: grid.instants().to_vec(),
        weights: w.weights,
        spacing: grid.spacing(),
        a3_valid: spec.satisfies_a3(&grid),
    })
}

/// Scenario shared by the simulation and cross-validation views: one SRSWOR
/// sample with Markov-gap non-response, response probabilities known.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    pub instants: usize,
    pub population: usize,
    pub sample: usize,
    pub theta: f64,
    pub rho: f64,
    pub noise_sd: f64,
    pub bandwidth: f64,
    pub kernel: KernelFamily,
    pub seed: u64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            instants: 48,
            population: 2000,
            sample: 100,
            theta: 0.8,
            rho: 0.5,
            noise_sd: 0.5,
            bandwidth: 0.08,
            kernel: KernelFamily::Epanechnikov,
            seed: 1,
        }
    }
}

struct Drawn {
    grid: TimeGrid,
    pop: CurvePopulation,
    design: SamplingDesign,
    model: ResponseModel,
    data: ObservedSample,
}

fn draw(p: &DemoParams) -> Result<Drawn, String> {
    let grid = TimeGrid::new(1.0, p.instants).map_err(|e| e.to_string())?;
    let config = GeneratorConfig {
        size: p.population,
        noise_sd: p.noise_sd,
        ..Default::default()
    };
    let pop = generate_population(p.seed, &grid, &config).map_err(|e| e.to_string())?;
    let design = SamplingDesign::srswor(p.population, p.sample).map_err(|e| e.to_string())?;
    let model =
        ResponseModel::markov_gap(vec![p.theta], vec![p.rho], vec![0; p.population]).map_err(|e| e.to_string())?;
    let mut rng = replicate_rng(p.seed, 1);
    let sample = draw_sample_with(&design, &mut rng);
    let mask = simulate_mask_with(&model, &sample, grid.len(), &mut rng);
    let data = ObservedSample::from_population(&pop, &sample, mask).map_err(|e| e.to_string())?;
    Ok(Drawn {
        grid,
        pop,
        design,
        model,
        data,
    })
}

#[derive(Debug, Serialize)]
pub struct EstimateSeries {
    pub tag: EstimatorTag,
    pub values: Vec<f64>,
    /// Plug-in standard deviation; `None` where the estimate is negative.
    pub sd: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
pub struct SimulationView {
    pub instants: Vec<f64>,
    pub population_mean: Vec<f64>,
    pub smoothed_mean: Vec<f64>,
    pub response_rate: f64,
    pub estimates: Vec<EstimateSeries>,
}

/// One sample drawn from a generated population, with the three smoothed
/// estimators and their plug-in standard deviations on the grid.
pub fn simulation_view(p: &DemoParams) -> Result<SimulationView, String> {
    let d = draw(p)?;
    let spec = KernelSpec::new(p.kernel, p.bandwidth).map_err(|e| e.to_string())?;
    let w = SmoothingMatrix::on_grid(&d.grid, &spec).map_err(|e| e.to_string())?;
    let mu = population_mean(&d.pop).values;
    let theta = ThetaSource::known(&d.model);
    let estimates = EstimatorTag::ALL
        .iter()
        .map(|&tag| {
            let curve = mean_nr(tag, &d.data, theta, &d.design, &w, ZeroDenominatorPolicy::Renormalize)
                .map_err(|e| e.to_string())?;
            let sd = w
                .rows()
                .iter()
                .map(|row| {
                    variance_estimate_plugin(tag, &d.data, &d.design, theta, row)
                        .map(|v| (v.total >= 0.0).then(|| v.total.sqrt()))
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<Vec<_>, String>>()?;
            Ok(EstimateSeries {
                tag,
                values: curve.values,
                sd,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(SimulationView {
        instants: d.grid.instants().to_vec(),
        smoothed_mean: w.smooth(&mu),
        population_mean: mu,
        response_rate: d.data.mask().response_rate(),
        estimates,
    })
}

#[derive(Debug, Serialize)]
pub struct CvView {
    pub candidates: Vec<f64>,
    pub scores: Vec<Option<f64>>,
    pub a3_valid: Vec<bool>,
    pub selected: f64,
}

/// Leave-one-unit-out criterion over the default bandwidth grid, Hájek(2) form.
pub fn cv_view(p: &DemoParams) -> Result<CvView, String> {
    let d = draw(p)?;
    let mut inputs = CvInputs::new(&d.data, &d.design, ThetaSource::known(&d.model), &d.grid);
    inputs.policy = ZeroDenominatorPolicy::Renormalize;
    let candidates = default_candidates(&d.grid);
    let res = select_bandwidth(&inputs, p.kernel, &candidates).map_err(|e| e.to_string())?;
    Ok(CvView {
        candidates: res.candidates,
        scores: res.scores,
        a3_valid: res.a3_valid,
        selected: res.selected,
    })
}

fn parse_params(json: &str) -> Result<DemoParams, String> {
    if json.trim().is_empty() {
        return Ok(DemoParams::default());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = smoothingWeights)]
pub fn smoothing_weights_js(kernel: &str, bandwidth: f64, instants: usize, t: f64) -> Result<String, JsError> {
    to_json(weights_view(kernel, bandwidth, instants, t))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(params: &str) -> Result<String, JsError> {
    to_json(parse_params(params).and_then(|p| simulation_view(&p)))
}

#[wasm_bindgen(js_name = crossValidate)]
pub fn cross_validate_js(params: &str) -> Result<String, JsError> {
    to_json(parse_params(params).and_then(|p| cv_view(&p)))
}
