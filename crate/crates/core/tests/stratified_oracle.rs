use curvesurvey::design::SamplingDesign;
use curvesurvey::estimators::{EstimatorTag, ZeroDenominatorPolicy};
use curvesurvey::grid_kernel::{KernelFamily, KernelSpec, SmoothingMatrix, TimeGrid};
use curvesurvey::oracle_sim::{
    exact_moments, monte_carlo, DesignConfig, EnumerationOptions, ScenarioConfig, ThetaMode,
};
use curvesurvey::population::{CurvePopulation, GeneratorConfig};
use curvesurvey::response::{ResponseKind, ResponseModel};
use curvesurvey::variance::variance_stratified;
use ndarray::array;

#[test]
fn stratified_ht_variance_matches_enumeration() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let values = array![[1.0, 3.0], [2.5, -1.0], [4.0, 0.5], [0.2, 2.2], [1.7, 1.1], [-0.8, 2.9]];
    let strata = vec![0, 0, 0, 1, 1, 1];
    let pop = CurvePopulation::new(grid.clone(), values, strata.clone()).unwrap();
    let w = SmoothingMatrix::new(
        &grid,
        &KernelSpec::new(KernelFamily::Epanechnikov, 0.8).unwrap(),
        &[0.0, 0.4, 1.0],
    )
    .unwrap();
    let models = [
        ResponseModel::markov_gap(vec![0.75, 0.6], vec![0.5, 0.2], strata.clone()).unwrap(),
        ResponseModel::homogeneous_groups(array![[0.9, 0.5], [0.65, 0.8]], strata.clone()).unwrap(),
    ];
    for alloc in [vec![2, 1], vec![1, 2], vec![2, 2]] {
        let design = SamplingDesign::stratified(strata.clone(), alloc).unwrap();
        for model in &models {
            let opts = EnumerationOptions {
                stratified: true,
                ..Default::default()
            };
            let report = exact_moments(&pop, &design, model, &w, EstimatorTag::Ht, opts).unwrap();
            assert!(report.max_abs_bias < 1e-12);
            for (row, v_enum) in w.rows().iter().zip(&report.variance) {
                let v = variance_stratified(EstimatorTag::Ht, &pop, &design, model, row).unwrap();
                assert!((v.total - v_enum).abs() < 1e-12, "{} vs {v_enum}", v.total);
            }
        }
    }
}

#[test]
fn stratified_hajek_variances_track_monte_carlo() {
    let scenario = ScenarioConfig {
        horizon: 1.0,
        instants: 30,
        population: GeneratorConfig {
            size: 1500,
            n_strata: 3,
            noise_sd: 0.3,
            ..Default::default()
        },
        population_seed: 11,
        design: DesignConfig::StratifiedProportional { n: 150 },
        response: ResponseKind::MarkovGap {
            theta: vec![0.85, 0.75, 0.9],
            rho: vec![0.5, 0.6, 0.3],
        },
        kernel: KernelFamily::Epanechnikov,
        bandwidth: 0.1,
        eval_points: None,
        eval_count: 5,
        estimators: EstimatorTag::ALL.to_vec(),
        stratified: true,
        theta: ThetaMode::Known,
        plugin: false,
        policy: ZeroDenominatorPolicy::Error,
    }
    .build()
    .unwrap();
    let report = monte_carlo(&scenario, 3000, 5).unwrap();
    for s in &report.estimators {
        for r in s.relative_error.as_ref().unwrap() {
            assert!(r.abs() < 0.1, "{}: relative error {r}", s.tag);
        }
    }
}
