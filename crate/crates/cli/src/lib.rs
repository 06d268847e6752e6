//! `curvesurvey` command line: estimation, bandwidth cross-validation,
//! simulation, exhaustive verification and synthetic data generation.

pub mod config;
pub mod curves_csv;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use curvesurvey::bandwidth::{default_candidates, select_bandwidth, CvInputs};
use curvesurvey::design::{draw_sample_with, Sample, SamplingDesign};
use curvesurvey::estimators::{
    mean_nr, stratified_mean, EstimatorTag, ObservedSample, ThetaSource, ZeroDenominatorPolicy,
};
use curvesurvey::grid_kernel::{KernelFamily, KernelSpec, SmoothingMatrix, TimeGrid};
use curvesurvey::oracle_sim::{
    exact_moments, interior_points, monte_carlo, replicate_rng, EnumerationOptions, EnumerationStrategy, ScenarioConfig,
};
use curvesurvey::population::{generate_population, CurvePopulation};
use curvesurvey::response::{
    estimate_theta_group, estimate_theta_stationary, simulate_mask_with, GroupThetaEstimate, ObservationMask,
    ResponseModel, StationaryThetaEstimate,
};
use curvesurvey::variance::{variance_estimate_plugin, variance_estimate_plugin_stratified};
use log::{info, warn};
use ndarray::{array, Array2};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{load_json, parse_list, DesignSpec, EvalSpec, GenConfig, RunConfig, ThetaEstimator, ThetaSpec};
use crate::curves_csv::{read_curves, write_curves, CurveTable, HeaderBlock};
use crate::error::{CliError, DomainContext, Result};

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "CURVESURVEY_LOG";

/// Tolerance of the `verify` subcommand.
pub const VERIFY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "curvesurvey",
    version,
    about = "Mean-curve estimation for surveys of partially observed curves"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean curves with plug-in variances from a sample file.
    Estimate(RunArgs),
    /// Cross-validation table over candidate bandwidths.
    Cv(RunArgs),
    /// Monte Carlo report for a simulated scenario.
    Simulate(RunArgs),
    /// Exhaustive-enumeration checks on built-in tiny instances.
    Verify(RunArgs),
    /// Synthetic population (and optionally a masked sample).
    Gen(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Curve CSV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kernel: Option<KernelFamily>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Comma-separated candidate bandwidths.
    #[arg(long)]
    pub cv_grid: Option<String>,
    /// ht, hajek1, hajek2 or all.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Number of interior points, or a comma-separated list of instants.
    #[arg(long)]
    pub eval_points: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop instants without respondents from Hájek(2) instead of failing.
    #[arg(long)]
    pub renormalize: bool,
    /// Monte Carlo replicates for `simulate`.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Where `gen` writes the drawn sample.
    #[arg(long)]
    pub sample_out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => estimate(&a),
        Command::Cv(a) => cv(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Verify(a) => verify(&a),
        Command::Gen(a) => gen(&a),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| CliError::io(path, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn config_hash(value: &impl Serialize) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable config").as_bytes())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("{flag} is required")))
}

fn parse_tags(s: &str) -> Result<Vec<EstimatorTag>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(EstimatorTag::ALL.to_vec());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|e: curvesurvey::Error| CliError::Config(e.to_string()))
        })
        .collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// A sample file placed inside a population frame consistent with the design.
struct Frame {
    grid: TimeGrid,
    design: SamplingDesign,
    data: ObservedSample,
    groups: Vec<usize>,
}

fn build_frame(table: &CurveTable, spec: &DesignSpec) -> Result<Frame> {
    let grid = TimeGrid::from_instants(&table.instants).context("input grid")?;
    let n = table.n_rows();
    if n == 0 {
        return Err(CliError::Config("input has no units".into()));
    }
    let (design, index, groups) = match spec {
        DesignSpec::Srswor { population } => {
            if n > *population {
                return Err(CliError::Config(format!(
                    "{n} sampled units exceed population {population}"
                )));
            }
            let mut groups = vec![0; *population];
            groups[..n].copy_from_slice(&table.strata);
            let design = SamplingDesign::srswor(*population, n).context("design")?;
            (design, (0..n).collect::<Vec<_>>(), groups)
        }
        DesignSpec::Stratified { stratum_sizes } => {
            let mut allocation = vec![0usize; stratum_sizes.len()];
            for &s in &table.strata {
                if s >= stratum_sizes.len() {
                    return Err(CliError::Config(format!(
                        "stratum {} in the input but only {} stratum sizes configured",
                        s + 1,
                        stratum_sizes.len()
                    )));
                }
                allocation[s] += 1;
            }
            let mut offsets = Vec::with_capacity(stratum_sizes.len());
            let mut strata = Vec::new();
            for (l, &size) in stratum_sizes.iter().enumerate() {
                offsets.push(strata.len());
                strata.extend(std::iter::repeat_n(l, size));
            }
            let mut next = offsets.clone();
            let index = table
                .strata
                .iter()
                .map(|&s| {
                    next[s] += 1;
                    next[s] - 1
                })
                .collect();
            let design = SamplingDesign::stratified(strata.clone(), allocation).context("design")?;
            (design, index, strata)
        }
        DesignSpec::Poisson { population, pi } => {
            if pi.len() != n {
                return Err(CliError::Config(format!(
                    "{} inclusion probabilities for {n} sample rows",
                    pi.len()
                )));
            }
            if n > *population {
                return Err(CliError::Config(format!(
                    "{n} sampled units exceed population {population}"
                )));
            }
            // non-sampled units never enter sample-based computations
            let filler = pi.iter().sum::<f64>() / n as f64;
            let mut all = vec![filler; *population];
            all[..n].copy_from_slice(pi);
            let mut groups = vec![0; *population];
            groups[..n].copy_from_slice(&table.strata);
            let design = SamplingDesign::poisson(all).context("design")?;
            (design, (0..n).collect(), groups)
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| index[i]);
    let sample = Sample::new(order.iter().map(|&i| index[i]).collect()).context("sample")?;
    let d = grid.len();
    let values = Array2::from_shape_fn((n, d), |(a, j)| table.values[[order[a], j]]);
    let mask = ObservationMask::new(Array2::from_shape_fn((n, d), |(a, j)| table.observed[[order[a], j]]));
    let data = ObservedSample::new(sample, values, mask).context("sample data")?;
    Ok(Frame {
        grid,
        design,
        data,
        groups,
    })
}

enum ThetaHolder {
    Model(ResponseModel),
    Group(GroupThetaEstimate),
    Stationary(StationaryThetaEstimate),
}

impl ThetaHolder {
    fn build(spec: &ThetaSpec, frame: &Frame) -> Result<Self> {
        Ok(match spec {
            ThetaSpec::Known { model } => ThetaHolder::Model(
                ResponseModel::from_kind(model.clone(), frame.groups.clone()).context("response model")?,
            ),
            ThetaSpec::Estimated {
                method: ThetaEstimator::Group,
            } => ThetaHolder::Group(
                estimate_theta_group(frame.data.mask(), frame.data.sample(), &frame.groups)
                    .context("response-rate estimation")?,
            ),
            ThetaSpec::Estimated {
                method: ThetaEstimator::Stationary,
            } => ThetaHolder::Stationary(
                estimate_theta_stationary(frame.data.mask(), frame.data.sample(), &frame.groups, &frame.grid)
                    .context("response-rate estimation")?,
            ),
        })
    }

    fn source(&self) -> ThetaSource<'_> {
        match self {
            ThetaHolder::Model(m) => ThetaSource::known(m),
            ThetaHolder::Group(g) => ThetaSource::estimated(g),
            ThetaHolder::Stationary(s) => ThetaSource::estimated(s),
        }
    }
}

fn eval_points(spec: &EvalSpec, grid: &TimeGrid) -> Result<Vec<f64>> {
    match spec {
        EvalSpec::Count(0) => Err(CliError::Config("at least one evaluation point is needed".into())),
        EvalSpec::Count(m) => Ok(interior_points(grid.horizon(), *m)),
        EvalSpec::Points(pts) => {
            if let Some(t) = pts.iter().find(|&&t| !grid.contains(t)) {
                return Err(CliError::Config(format!(
                    "evaluation point {t} lies outside [0, {}]",
                    grid.horizon()
                )));
            }
            Ok(pts.clone())
        }
    }
}

/// Applies the command-line overrides to a run configuration.
fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = load_json(required(&args.config, "--config")?)?;
    if let Some(k) = args.kernel {
        cfg.kernel = k;
    }
    if let Some(h) = args.bandwidth {
        cfg.bandwidth = Some(h);
    }
    if let Some(s) = &args.eval_points {
        cfg.eval_points = EvalSpec::parse(s)?;
    }
    if let Some(s) = &args.cv_grid {
        cfg.cv_grid = Some(parse_list(s, "--cv-grid")?);
    }
    if args.renormalize {
        cfg.policy = ZeroDenominatorPolicy::Renormalize;
    }
    Ok(cfg)
}

fn cv_inputs<'a>(
    frame: &'a Frame,
    theta: &'a ThetaHolder,
    tag: EstimatorTag,
    policy: ZeroDenominatorPolicy,
) -> CvInputs<'a> {
    let mut inputs = CvInputs::new(&frame.data, &frame.design, theta.source(), &frame.grid).with_tag(tag);
    inputs.policy = policy;
    inputs
}

fn estimate(args: &RunArgs) -> Result<()> {
    let mut cfg = run_config(args)?;
    if let Some(s) = &args.estimator {
        cfg.estimators = Some(parse_tags(s)?);
    }
    let input = required(&args.input, "--input")?;
    let table = read_curves(input)?;
    let frame = build_frame(&table, &cfg.design)?;
    let theta = ThetaHolder::build(&cfg.theta, &frame)?;
    let stratified = cfg
        .stratified
        .unwrap_or(matches!(frame.design, SamplingDesign::StratifiedSrswor { .. }));
    let points = eval_points(&cfg.eval_points, &frame.grid)?;

    let (bandwidth, bandwidth_source) = match cfg.bandwidth {
        Some(h) => (h, "config"),
        None => {
            let candidates = cfg.cv_grid.clone().unwrap_or_else(|| default_candidates(&frame.grid));
            let inputs = cv_inputs(&frame, &theta, cfg.cv_estimator, cfg.policy);
            let cv = select_bandwidth(&inputs, cfg.kernel, &candidates).context("bandwidth selection")?;
            info!("cross-validation selected h = {}", cv.selected);
            (cv.selected, "cv")
        }
    };
    let spec = KernelSpec::new(cfg.kernel, bandwidth).context("kernel")?;
    if !spec.satisfies_a3(&frame.grid) {
        warn!("bandwidth {bandwidth} is below half the grid spacing");
    }
    let weights = SmoothingMatrix::new(&frame.grid, &spec, &points).context("smoothing weights")?;
    let tags = cfg.estimators.clone().unwrap_or_else(|| EstimatorTag::ALL.to_vec());

    let mut body = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut body);
        w.write_record(["t", "estimator", "value", "variance", "sd"])
            .map_err(|e| CliError::io("<buffer>", e.into()))?;
        for &tag in &tags {
            let curve = if stratified {
                stratified_mean(tag, &frame.data, theta.source(), &frame.design, &weights, cfg.policy)
            } else {
                mean_nr(tag, &frame.data, theta.source(), &frame.design, &weights, cfg.policy)
            }
            .context("estimation")?;
            for (row, value) in weights.rows().iter().zip(&curve.values) {
                let v = if stratified {
                    variance_estimate_plugin_stratified(tag, &frame.data, &frame.design, theta.source(), row)
                } else {
                    variance_estimate_plugin(tag, &frame.data, &frame.design, theta.source(), row)
                }
                .context("variance estimation")?;
                if v.warning {
                    warn!("negative variance estimate for {tag} at t = {}", row.t);
                }
                let sd = if v.total >= 0.0 {
                    v.total.sqrt().to_string()
                } else {
                    String::new()
                };
                w.write_record([
                    row.t.to_string(),
                    tag.to_string(),
                    value.to_string(),
                    v.total.to_string(),
                    sd,
                ])
                .map_err(|e| CliError::io("<buffer>", e.into()))?;
            }
        }
        w.flush().map_err(|e| CliError::io("<buffer>", e))?;
    }

    let hash = config_hash(&serde_json::json!({
        "command": "estimate",
        "config": cfg,
        "input_sha256": file_sha256(input)?,
    }));
    let header = HeaderBlock {
        command: "estimate".into(),
        config_hash: hash,
        seed: args.seed,
        extra: vec![
            ("kernel".into(), cfg.kernel.to_string()),
            ("bandwidth".into(), bandwidth.to_string()),
            ("bandwidth_source".into(), bandwidth_source.into()),
            ("stratified".into(), stratified.to_string()),
        ],
    };
    let mut out = Vec::new();
    header.write_comments(&mut out).expect("in-memory write");
    out.extend_from_slice(&body);
    emit(args.out.as_deref(), &out)
}

fn cv(args: &RunArgs) -> Result<()> {
    let mut cfg = run_config(args)?;
    if let Some(s) = &args.estimator {
        match parse_tags(s)?.as_slice() {
            [one] => cfg.cv_estimator = *one,
            _ => return Err(CliError::Config("cv needs a single --estimator".into())),
        }
    }
    let input = required(&args.input, "--input")?;
    let table = read_curves(input)?;
    let frame = build_frame(&table, &cfg.design)?;
    let theta = ThetaHolder::build(&cfg.theta, &frame)?;
    let candidates = cfg.cv_grid.clone().unwrap_or_else(|| default_candidates(&frame.grid));
    let inputs = cv_inputs(&frame, &theta, cfg.cv_estimator, cfg.policy);
    let result = select_bandwidth(&inputs, cfg.kernel, &candidates).context("cross-validation")?;

    let hash = config_hash(&serde_json::json!({
        "command": "cv",
        "config": cfg,
        "candidates": candidates,
        "input_sha256": file_sha256(input)?,
    }));
    let header = HeaderBlock {
        command: "cv".into(),
        config_hash: hash,
        seed: args.seed,
        extra: vec![
            ("kernel".into(), cfg.kernel.to_string()),
            ("estimator".into(), cfg.cv_estimator.to_string()),
            ("selected_bandwidth".into(), result.selected.to_string()),
        ],
    };
    let mut out = Vec::new();
    header.write_comments(&mut out).expect("in-memory write");
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["h", "cv", "a3_valid", "error"])
            .map_err(|e| CliError::io("<buffer>", e.into()))?;
        for i in 0..result.candidates.len() {
            w.write_record([
                result.candidates[i].to_string(),
                result.scores[i].map(|s| s.to_string()).unwrap_or_default(),
                result.a3_valid[i].to_string(),
                result.errors[i].clone().unwrap_or_default(),
            ])
            .map_err(|e| CliError::io("<buffer>", e.into()))?;
        }
        w.flush().map_err(|e| CliError::io("<buffer>", e))?;
    }
    emit(args.out.as_deref(), &out)
}

#[derive(Serialize)]
struct JsonHeader {
    tool: String,
    command: String,
    config_sha256: String,
    seed: u64,
}

impl From<&HeaderBlock> for JsonHeader {
    fn from(h: &HeaderBlock) -> Self {
        Self {
            tool: format!("curvesurvey {}", env!("CARGO_PKG_VERSION")),
            command: h.command.clone(),
            config_sha256: h.config_hash.clone(),
            seed: h.seed,
        }
    }
}

#[derive(Serialize)]
struct JsonDocument<'a, T: Serialize> {
    header: JsonHeader,
    report: &'a T,
}

fn json_bytes(header: &HeaderBlock, report: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&JsonDocument {
        header: header.into(),
        report,
    })
    .expect("serializable report");
    bytes.push(b'\n');
    bytes
}

fn simulate(args: &RunArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = load_json(required(&args.config, "--config")?)?;
    if let Some(k) = args.kernel {
        cfg.kernel = k;
    }
    if let Some(h) = args.bandwidth {
        cfg.bandwidth = h;
    }
    if let Some(s) = &args.estimator {
        cfg.estimators = parse_tags(s)?;
    }
    if let Some(s) = &args.eval_points {
        match EvalSpec::parse(s)? {
            EvalSpec::Count(m) => {
                cfg.eval_points = None;
                cfg.eval_count = m;
            }
            EvalSpec::Points(p) => cfg.eval_points = Some(p),
        }
    }
    if args.renormalize {
        cfg.policy = ZeroDenominatorPolicy::Renormalize;
    }
    let replicates = args.replicates.unwrap_or(1000);
    let scenario = cfg.build().context("scenario")?;
    let report = monte_carlo(&scenario, replicates, args.seed).context("monte carlo")?;
    let header = HeaderBlock {
        command: "simulate".into(),
        config_hash: config_hash(&serde_json::json!({"command": "simulate", "config": cfg, "replicates": replicates})),
        seed: args.seed,
        extra: Vec::new(),
    };
    emit(args.out.as_deref(), &json_bytes(&header, &report))
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyInstance {
    pub name: String,
    pub outcomes: usize,
    pub total_probability: f64,
    pub max_abs_bias: f64,
    pub max_abs_variance_gap: f64,
    pub max_strategy_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub instances: Vec<VerifyInstance>,
    pub max_discrepancy: f64,
    pub passed: bool,
}

fn fixture_population(d: usize) -> CurvePopulation {
    let grid = TimeGrid::new(1.0, d).expect("fixture grid");
    let base = array![[1.0, 3.0, 2.0], [2.5, -1.0, 0.4], [4.0, 0.5, 1.5], [0.2, 2.2, 3.1]];
    let values = base.slice(ndarray::s![.., ..d]).to_owned();
    CurvePopulation::new(grid, values, vec![0, 0, 1, 1]).expect("fixture population")
}

/// Built-in tiny instances: (name, population, design, response, stratified).
fn fixtures() -> Vec<(&'static str, CurvePopulation, SamplingDesign, ResponseModel, bool)> {
    let markov = |groups| ResponseModel::markov_gap(vec![0.75, 0.6], vec![0.5, 0.3], groups).expect("fixture model");
    vec![
        (
            "srswor N=4 n=2 d=2, Markov gaps",
            fixture_population(2),
            SamplingDesign::srswor(4, 2).expect("design"),
            markov(vec![0; 4]),
            false,
        ),
        (
            "srswor N=4 n=2 d=2, Bernoulli 0.7",
            fixture_population(2),
            SamplingDesign::srswor(4, 2).expect("design"),
            ResponseModel::homogeneous_groups(array![[0.7, 0.7]], vec![0; 4]).expect("model"),
            false,
        ),
        (
            "poisson N=4 d=3, Markov gaps",
            fixture_population(3),
            SamplingDesign::poisson(vec![0.3, 0.5, 0.7, 0.9]).expect("design"),
            markov(vec![0; 4]),
            false,
        ),
        (
            "stratified 2x2 n=(1,1) d=3, Markov gaps by stratum",
            fixture_population(3),
            SamplingDesign::stratified(vec![0, 0, 1, 1], vec![1, 1]).expect("design"),
            markov(vec![0, 0, 1, 1]),
            true,
        ),
    ]
}

pub fn verify_report(bandwidth: f64, eval: &[f64]) -> Result<VerifyReport> {
    let mut instances = Vec::new();
    for (name, pop, design, model, stratified) in fixtures() {
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, bandwidth).context("kernel")?;
        let weights = SmoothingMatrix::new(pop.grid(), &spec, eval).context("smoothing weights")?;
        let run = |strategy| {
            exact_moments(
                &pop,
                &design,
                &model,
                &weights,
                EstimatorTag::Ht,
                EnumerationOptions {
                    stratified,
                    strategy,
                    ..Default::default()
                },
            )
            .context("enumeration")
        };
        let a = run(EnumerationStrategy::PerUnit)?;
        let b = run(EnumerationStrategy::Joint)?;
        let gap = a
            .expectation
            .iter()
            .zip(&b.expectation)
            .chain(a.variance.iter().zip(&b.variance))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        instances.push(VerifyInstance {
            name: name.into(),
            outcomes: a.outcomes,
            total_probability: a.total_probability,
            max_abs_bias: a.max_abs_bias,
            max_abs_variance_gap: a.max_abs_variance_gap,
            max_strategy_gap: gap,
        });
    }
    let max_discrepancy = instances
        .iter()
        .flat_map(|i| {
            [
                i.max_abs_bias,
                i.max_abs_variance_gap,
                i.max_strategy_gap,
                (i.total_probability - 1.0).abs(),
            ]
        })
        .fold(0.0, f64::max);
    Ok(VerifyReport {
        tolerance: VERIFY_TOLERANCE,
        instances,
        max_discrepancy,
        passed: max_discrepancy < VERIFY_TOLERANCE,
    })
}

fn verify(args: &RunArgs) -> Result<()> {
    let h = args.bandwidth.unwrap_or(0.8);
    let eval = match &args.eval_points {
        Some(s) => match EvalSpec::parse(s)? {
            EvalSpec::Count(m) => interior_points(1.0, m),
            EvalSpec::Points(p) => p,
        },
        None => vec![0.0, 0.25, 0.5, 0.75, 1.0],
    };
    let report = verify_report(h, &eval)?;
    let header = HeaderBlock {
        command: "verify".into(),
        config_hash: config_hash(&serde_json::json!({"command": "verify", "bandwidth": h, "eval_points": eval})),
        seed: args.seed,
        extra: Vec::new(),
    };
    emit(args.out.as_deref(), &json_bytes(&header, &report))?;
    for i in &report.instances {
        eprintln!(
            "{}: bias {:.1e}, variance gap {:.1e}, strategy gap {:.1e}",
            i.name, i.max_abs_bias, i.max_abs_variance_gap, i.max_strategy_gap
        );
    }
    if report.passed {
        eprintln!(
            "verify: max discrepancy {:.1e} < {:.0e}",
            report.max_discrepancy, VERIFY_TOLERANCE
        );
        Ok(())
    } else {
        Err(CliError::VerificationFailed {
            discrepancy: report.max_discrepancy,
            tolerance: VERIFY_TOLERANCE,
        })
    }
}

fn population_table(pop: &CurvePopulation) -> CurveTable {
    CurveTable {
        instants: pop.grid().instants().to_vec(),
        units: (0..pop.size()).collect(),
        strata: pop.strata().to_vec(),
        values: pop.values().clone(),
        observed: Array2::from_elem(pop.values().dim(), true),
    }
}

fn gen(args: &RunArgs) -> Result<()> {
    let cfg: GenConfig = load_json(required(&args.config, "--config")?)?;
    let grid = TimeGrid::new(cfg.horizon, cfg.instants).context("grid")?;
    let pop = generate_population(args.seed, &grid, &cfg.population).context("population")?;
    let header = HeaderBlock {
        command: "gen".into(),
        config_hash: config_hash(&serde_json::json!({"command": "gen", "config": cfg})),
        seed: args.seed,
        extra: Vec::new(),
    };
    let mut out = Vec::new();
    write_curves(&mut out, &header, &population_table(&pop)).map_err(|e| CliError::io("<buffer>", e))?;
    emit(args.out.as_deref(), &out)?;

    match (&cfg.sample, &args.sample_out) {
        (Some(spec), Some(path)) => {
            let scenario = ScenarioConfig {
                horizon: cfg.horizon,
                instants: cfg.instants,
                population: cfg.population.clone(),
                population_seed: args.seed,
                design: spec.design.clone(),
                response: spec.response.clone(),
                kernel: KernelFamily::Epanechnikov,
                bandwidth: grid.horizon(),
                eval_points: None,
                eval_count: 1,
                estimators: Vec::new(),
                stratified: false,
                theta: Default::default(),
                plugin: false,
                policy: Default::default(),
            }
            .build()
            .context("sample design")?;
            let mut rng = replicate_rng(args.seed, 1);
            let sample = draw_sample_with(&scenario.design, &mut rng);
            let mask = simulate_mask_with(&scenario.response, &sample, grid.len(), &mut rng);
            let idx = sample.indices();
            let table = CurveTable {
                instants: grid.instants().to_vec(),
                units: idx.to_vec(),
                strata: idx.iter().map(|&k| pop.strata()[k]).collect(),
                values: Array2::from_shape_fn((idx.len(), grid.len()), |(i, j)| pop.values()[[idx[i], j]]),
                observed: mask.entries().clone(),
            };
            let mut out = Vec::new();
            write_curves(&mut out, &header, &table).map_err(|e| CliError::io("<buffer>", e))?;
            std::fs::write(path, out).map_err(|e| CliError::io(path, e))?;
            if let SamplingDesign::Poisson { pi } = &scenario.design {
                let pis: Vec<f64> = idx.iter().map(|&k| pi[k]).collect();
                info!("sample inclusion probabilities: {pis:?}");
            }
            Ok(())
        }
        (None, Some(_)) => Err(CliError::Config(
            "--sample-out needs a \"sample\" section in the config".into(),
        )),
        _ => Ok(()),
    }
}
