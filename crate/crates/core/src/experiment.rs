//! Experiment runs: simulate a scenario, feed the Kalman pipeline (gated,
//! thresholded) and a plain RLS fit (ungated) the same noisy stream, and
//! summarise how well each tracks the truth.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adaptation::{gate_contacts, AdaptationPipeline};
use crate::model::{build_regressor_with, ParameterVector, RobotSnapshot};
use crate::simulator::{Scenario, SimError, Simulation};

/// Convergence bands for `(m, h_x, h_y)`: kg, kg·m, kg·m.
pub const CONVERGENCE_BANDS: [f64; 3] = [0.5, 0.01, 0.01];

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const COMPARE_FILE: &str = "compare.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(SimError),
    #[error("simulation failed: {0}")]
    Simulation(SimError),
    #[error("numerical failure at tick {tick} (t = {time:.3} s): {message}")]
    Numerical { tick: usize, time: f64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit code: 2 usage/config, 3 simulation, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Usage(_) | ExperimentError::Config(_) | ExperimentError::Io { .. } => 2,
            ExperimentError::Simulation(_) => 3,
            ExperimentError::Numerical { .. } => 4,
        }
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidScenario(_) | SimError::Parse(_) => ExperimentError::Config(e),
            other => ExperimentError::Simulation(other),
        }
    }
}

/// One row of `trace.csv`. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time: f64,
    pub true_m: f64,
    pub true_hx: f64,
    pub true_hy: f64,
    pub kf_m: f64,
    pub kf_hx: f64,
    pub kf_hy: f64,
    pub rls_m: f64,
    pub rls_hx: f64,
    pub rls_hy: f64,
    pub p_m: f64,
    pub p_hx: f64,
    pub p_hy: f64,
    /// Bit `i` set when foot `i` passed contact gating.
    pub gated_mask: u8,
    pub fresh: bool,
    pub event: String,
}

pub const TRACE_COLUMNS: [&str; 16] = [
    "time", "true_m", "true_hx", "true_hy", "kf_m", "kf_hx", "kf_hy", "rls_m", "rls_hx", "rls_hy", "p_m", "p_hx",
    "p_hy", "gated_mask", "fresh", "event",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Raw filter estimate, every tick.
    Kalman,
    /// Last published model plus the leg contribution.
    KalmanPublished,
    /// Ungated recursive least squares.
    Rls,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Kalman, EstimatorKind::KalmanPublished, EstimatorKind::Rls];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Kalman => "kf",
            EstimatorKind::KalmanPublished => "kf_published",
            EstimatorKind::Rls => "rls",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSummary {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMetrics {
    pub kind: EstimatorKind,
    /// `|estimate − truth|` on the last tick.
    pub terminal_error: [f64; 3],
    /// Mean absolute error over the final quarter of the run.
    pub final_quarter_mae: [f64; 3],
    /// First time after which the error stays inside its band; `None` if it
    /// never settles.
    pub convergence_time: [Option<f64>; 3],
    /// Trace of the estimator's covariance.
    pub covariance_trace: CovarianceSummary,
    /// Fraction of ticks on which a new estimate was produced.
    pub duty_cycle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario_name: String,
    pub seed: u64,
    pub duration: f64,
    pub ticks: usize,
    pub estimators: Vec<EstimatorMetrics>,
    /// SHA-256 of the snapshot stream as consumed by each estimator.
    pub kf_stream_checksum: String,
    pub rls_stream_checksum: String,
}

impl RunReport {
    pub fn metrics(&self, kind: EstimatorKind) -> &EstimatorMetrics {
        self.estimators.iter().find(|m| m.kind == kind).expect("all estimators are reported")
    }
}

/// Trace rows plus the published COM history needed by callers that inspect
/// more than the summary.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<TraceRow>,
    /// Published base parameters, one per tick.
    pub published: Vec<ParameterVector>,
    pub report: RunReport,
}

fn hash_snapshot(hasher: &mut Sha256, s: &RobotSnapshot) {
    let mut put = |v: f64| hasher.update(v.to_le_bytes());
    put(s.time);
    let b = &s.base;
    for v in b.position.iter().chain(b.orientation.matrix().iter()) {
        put(*v);
    }
    for v in b
        .linear_velocity
        .iter()
        .chain(b.linear_acceleration.iter())
        .chain(b.angular_velocity.iter())
        .chain(b.angular_acceleration.iter())
        .chain(s.gravity.iter())
    {
        put(*v);
    }
    for f in &s.feet {
        for v in f.position.iter().chain(f.force.iter()) {
            put(*v);
        }
    }
    let flags: Vec<u8> = s
        .feet
        .iter()
        .flat_map(|f| [f.contact_measured as u8, f.contact_scheduled as u8])
        .collect();
    hasher.update(&flags);
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs `scenario` with its noise seed replaced by `seed`.
pub fn run_experiment(scenario: &Scenario, seed: u64) -> Result<RunOutput, ExperimentError> {
    let mut scenario = scenario.clone();
    scenario.noise.seed = seed;
    let config = scenario.adaptation_config();
    let legs = config.leg_contribution.to_vector();
    let kf = scenario.estimator.kalman().map_err(|e| ExperimentError::Config(SimError::InvalidScenario(e.to_string())))?;
    let mut rls = scenario.estimator.rls().map_err(|e| ExperimentError::Config(SimError::InvalidScenario(e.to_string())))?;
    let mut pipeline =
        AdaptationPipeline::new(kf, config).map_err(|e| ExperimentError::Config(SimError::InvalidScenario(e.to_string())))?;

    log::info!("running {} with seed {seed}", scenario.name);
    let mut kf_hash = Sha256::new();
    let mut rls_hash = Sha256::new();
    let mut rows = Vec::with_capacity(scenario.tick_count());
    let mut published = Vec::with_capacity(scenario.tick_count());
    let mut kf_trace = Vec::with_capacity(scenario.tick_count());
    let mut rls_trace = Vec::with_capacity(scenario.tick_count());

    for tick in Simulation::new(&scenario)? {
        let tick = tick?;
        let time = tick.noisy.time;
        let numerical = |message: String| ExperimentError::Numerical {
            tick: tick.index,
            time,
            message,
        };

        hash_snapshot(&mut kf_hash, &tick.noisy);
        let was_fresh = rows.last().is_some_and(|r: &TraceRow| r.fresh);
        let model = pipeline.tick(&tick.noisy).map_err(|e| numerical(e.to_string()))?;
        if model.fresh != was_fresh {
            log::debug!("t = {time:.2} s: publication {}", if model.fresh { "on" } else { "off" });
        }
        if let Some(label) = &tick.event_label {
            log::debug!("t = {time:.2} s: {label}");
        }

        hash_snapshot(&mut rls_hash, &tick.noisy);
        let sample = build_regressor_with(&tick.noisy, scenario.regressor).map_err(|e| numerical(e.to_string()))?;
        rls = rls.update(&sample).map_err(|e| numerical(format!("rls: {e}")))?;

        let kf_state = pipeline.kalman();
        let gated = gate_contacts(&tick.noisy.feet);
        let gated_mask = gated
            .iter()
            .enumerate()
            .filter(|(_, f)| f.contact_measured && f.contact_scheduled)
            .fold(0u8, |mask, (i, _)| mask | (1 << i));
        let p = kf_state.covariance_diagonal();
        let est = kf_state.estimate;
        rows.push(TraceRow {
            time,
            true_m: tick.truth.mass,
            true_hx: tick.truth.moment_x,
            true_hy: tick.truth.moment_y,
            kf_m: est.mass,
            kf_hx: est.moment_x,
            kf_hy: est.moment_y,
            rls_m: rls.estimate.mass,
            rls_hx: rls.estimate.moment_x,
            rls_hy: rls.estimate.moment_y,
            p_m: p[0],
            p_hx: p[1],
            p_hy: p[2],
            gated_mask,
            fresh: model.fresh,
            event: tick.event_label.clone().unwrap_or_default(),
        });
        published.push(model.pi_base);
        kf_trace.push(kf_state.covariance.trace());
        rls_trace.push(rls.covariance.trace());
        if !rows.last().is_some_and(row_is_finite) {
            return Err(numerical("non-finite estimate".into()));
        }
    }

    let truth: Vec<[f64; 3]> = rows.iter().map(|r| [r.true_m, r.true_hx, r.true_hy]).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.time).collect();
    let kf_series: Vec<[f64; 3]> = rows.iter().map(|r| [r.kf_m, r.kf_hx, r.kf_hy]).collect();
    let rls_series: Vec<[f64; 3]> = rows.iter().map(|r| [r.rls_m, r.rls_hx, r.rls_hy]).collect();
    let published_series: Vec<[f64; 3]> = published
        .iter()
        .map(|p| {
            let v = p.to_vector() + legs;
            [v[0], v[1], v[2]]
        })
        .collect();
    let fresh_fraction = rows.iter().filter(|r| r.fresh).count() as f64 / rows.len().max(1) as f64;

    let metrics = |kind, series: &[[f64; 3]], cov: &[f64], duty| EstimatorMetrics {
        kind,
        terminal_error: terminal_error(series, &truth),
        final_quarter_mae: final_quarter_mae(series, &truth),
        convergence_time: convergence_time(&times, series, &truth),
        covariance_trace: summarize(cov),
        duty_cycle: duty,
    };
    let report = RunReport {
        scenario_name: scenario.name.clone(),
        seed,
        duration: scenario.duration,
        ticks: rows.len(),
        estimators: vec![
            metrics(EstimatorKind::Kalman, &kf_series, &kf_trace, 1.0),
            metrics(EstimatorKind::KalmanPublished, &published_series, &kf_trace, fresh_fraction),
            metrics(EstimatorKind::Rls, &rls_series, &rls_trace, 1.0),
        ],
        kf_stream_checksum: hex(&kf_hash.finalize()),
        rls_stream_checksum: hex(&rls_hash.finalize()),
    };
    Ok(RunOutput { rows, published, report })
}

fn row_is_finite(r: &TraceRow) -> bool {
    [r.kf_m, r.kf_hx, r.kf_hy, r.rls_m, r.rls_hx, r.rls_hy, r.p_m, r.p_hx, r.p_hy]
        .iter()
        .all(|v| v.is_finite())
}

fn terminal_error(series: &[[f64; 3]], truth: &[[f64; 3]]) -> [f64; 3] {
    match (series.last(), truth.last()) {
        (Some(e), Some(t)) => std::array::from_fn(|i| (e[i] - t[i]).abs()),
        _ => [0.0; 3],
    }
}

fn final_quarter_mae(series: &[[f64; 3]], truth: &[[f64; 3]]) -> [f64; 3] {
    let start = series.len() * 3 / 4;
    let n = (series.len() - start).max(1) as f64;
    std::array::from_fn(|i| {
        series[start..]
            .iter()
            .zip(&truth[start..])
            .map(|(e, t)| (e[i] - t[i]).abs())
            .sum::<f64>()
            / n
    })
}

fn convergence_time(times: &[f64], series: &[[f64; 3]], truth: &[[f64; 3]]) -> [Option<f64>; 3] {
    std::array::from_fn(|i| {
        let outside = series
            .iter()
            .zip(truth)
            .rposition(|(e, t)| (e[i] - t[i]).abs() > CONVERGENCE_BANDS[i]);
        match outside {
            None => times.first().copied(),
            Some(k) if k + 1 < times.len() => Some(times[k + 1]),
            Some(_) => None,
        }
    })
}

fn summarize(trace: &[f64]) -> CovarianceSummary {
    CovarianceSummary {
        initial: trace.first().copied().unwrap_or(0.0),
        min: trace.iter().copied().fold(f64::INFINITY, f64::min),
        max: trace.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        last: trace.last().copied().unwrap_or(0.0),
    }
}

const PARAM_NAMES: [&str; 3] = ["m", "hx", "hy"];

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# Estimation report")?;
        writeln!(f, "# Errors are |estimate - truth| of total mass (kg) and first moments m*c (kg*m).")?;
        writeln!(f, "# They stand in for controller tracking errors, which need the physical robot.")?;
        writeln!(f, "scenario = {}", self.scenario_name)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "duration_s = {}", self.duration)?;
        writeln!(f, "ticks = {}", self.ticks)?;
        writeln!(f, "kf_stream_sha256 = {}", self.kf_stream_checksum)?;
        writeln!(f, "rls_stream_sha256 = {}", self.rls_stream_checksum)?;
        for m in &self.estimators {
            writeln!(f)?;
            writeln!(f, "[{}]", m.kind.name())?;
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                writeln!(f, "terminal_error_{name} = {:.6}", m.terminal_error[i])?;
            }
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                writeln!(f, "final_quarter_mae_{name} = {:.6}", m.final_quarter_mae[i])?;
            }
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                match m.convergence_time[i] {
                    Some(t) => writeln!(f, "convergence_time_{name}_s = {t:.2}")?,
                    None => writeln!(f, "convergence_time_{name}_s = never")?,
                }
            }
            let c = m.covariance_trace;
            writeln!(
                f,
                "covariance_trace = initial {:.6e}, min {:.6e}, max {:.6e}, last {:.6e}",
                c.initial, c.min, c.max, c.last
            )?;
            writeln!(f, "duty_cycle = {:.4}", m.duty_cycle)?;
        }
        Ok(())
    }
}

/// Writes `contents` to `dir/name` via a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<(), ExperimentError> {
    let io = |path: PathBuf| move |source| ExperimentError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io(tmp.clone()))?;
    fs::rename(&tmp, &target).map_err(io(target.clone()))
}

pub fn trace_csv(rows: &[TraceRow]) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("in-memory csv write");
    }
    writer.into_inner().expect("in-memory csv flush")
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ExperimentError> {
    Scenario::from_path(path).map_err(ExperimentError::Config)
}

/// Runs one scenario and writes `trace.csv` and `report.txt` under `out_dir`.
pub fn cmd_run(scenario_path: &Path, seed: u64, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let scenario = load_scenario(scenario_path)?;
    let output = run_experiment(&scenario, seed)?;
    write_atomic(out_dir, TRACE_FILE, &trace_csv(&output.rows))?;
    write_atomic(out_dir, REPORT_FILE, output.report.to_string().as_bytes())?;
    Ok(output.report)
}

/// Scalar metrics aggregated by `compare` and `sweep`.
pub fn metric_values(m: &EstimatorMetrics, duration: f64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        out.push((format!("terminal_error_{name}"), m.terminal_error[i]));
    }
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        out.push((format!("final_quarter_mae_{name}"), m.final_quarter_mae[i]));
    }
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        // Runs that never settle count as taking the whole run.
        out.push((format!("convergence_time_{name}"), m.convergence_time[i].unwrap_or(duration)));
        out.push((format!("converged_{name}"), m.convergence_time[i].is_some() as u8 as f64));
    }
    out.push(("covariance_trace_last".into(), m.covariance_trace.last));
    out.push(("duty_cycle".into(), m.duty_cycle));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub estimator: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n = 1`.
    pub std: f64,
    pub n: usize,
    pub single_seed: bool,
}

/// Per-seed reports plus their aggregate.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub reports: Vec<RunReport>,
    pub rows: Vec<CompareRow>,
}

pub fn compare(scenario: &Scenario, seeds: &[u64]) -> Result<Comparison, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::Usage("compare needs at least one seed".into()));
    }
    let reports = seeds
        .iter()
        .map(|&seed| run_experiment(scenario, seed).map(|o| o.report))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for kind in EstimatorKind::ALL {
        let per_seed: Vec<Vec<(String, f64)>> = reports
            .iter()
            .map(|r| metric_values(r.metrics(kind), r.duration))
            .collect();
        for (j, (metric, _)) in per_seed[0].iter().enumerate() {
            let values: Vec<f64> = per_seed.iter().map(|v| v[j].1).collect();
            let (mean, std) = mean_std(&values);
            rows.push(CompareRow {
                estimator: kind.name().into(),
                metric: metric.clone(),
                mean,
                std,
                n: values.len(),
                single_seed: values.len() == 1,
            });
        }
    }
    Ok(Comparison { reports, rows })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_compare(scenario_path: &Path, seeds: &[u64], out_dir: &Path) -> Result<Comparison, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::Usage("compare needs at least one seed".into()));
    }
    let scenario = load_scenario(scenario_path)?;
    let comparison = compare(&scenario, seeds)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &comparison.rows {
        writer.serialize(row).expect("in-memory csv write");
    }
    write_atomic(out_dir, COMPARE_FILE, &writer.into_inner().expect("in-memory csv flush"))?;
    Ok(comparison)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Multiplies every noise standard deviation.
    NoiseScale,
    /// RLS forgetting factor.
    Forgetting,
    /// Multiplies all three publication thresholds.
    Thresholds,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::NoiseScale => "noise-scale",
            SweepParameter::Forgetting => "forgetting",
            SweepParameter::Thresholds => "thresholds",
        }
    }

    /// Scenario with the swept value applied.
    pub fn apply(self, scenario: &Scenario, value: f64) -> Result<Scenario, ExperimentError> {
        let mut s = scenario.clone();
        match self {
            SweepParameter::NoiseScale => s.noise = s.noise.scaled(value),
            SweepParameter::Forgetting => s.estimator.rls_forgetting = value,
            SweepParameter::Thresholds => s.adaptation.thresholds = s.adaptation.thresholds.map(|t| t * value),
        }
        s.validate().map_err(|e| {
            ExperimentError::Usage(format!("{} = {value} is not valid: {e}", self.name()))
        })?;
        Ok(s)
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noise-scale" => Ok(SweepParameter::NoiseScale),
            "forgetting" => Ok(SweepParameter::Forgetting),
            "thresholds" => Ok(SweepParameter::Thresholds),
            _ => Err(format!("unknown sweep parameter {s:?} (noise-scale | forgetting | thresholds)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub estimator: String,
    pub metric: String,
    pub result: f64,
}

pub fn sweep(
    scenario: &Scenario,
    parameter: SweepParameter,
    values: &[f64],
    seed: u64,
) -> Result<Vec<(f64, RunReport)>, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Usage("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let s = parameter.apply(scenario, v)?;
            Ok((v, run_experiment(&s, seed)?.report))
        })
        .collect()
}

pub fn sweep_rows(parameter: SweepParameter, runs: &[(f64, RunReport)]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (value, report) in runs {
        for kind in EstimatorKind::ALL {
            for (metric, result) in metric_values(report.metrics(kind), report.duration) {
                rows.push(SweepRow {
                    parameter: parameter.name().into(),
                    value: *value,
                    estimator: kind.name().into(),
                    metric,
                    result,
                });
            }
        }
    }
    rows
}

pub fn cmd_sweep(
    scenario_path: &Path,
    parameter: SweepParameter,
    values: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<(f64, RunReport)>, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Usage("sweep needs at least one value".into()));
    }
    let scenario = load_scenario(scenario_path)?;
    let runs = sweep(&scenario, parameter, values, seed)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in sweep_rows(parameter, &runs) {
        writer.serialize(row).expect("in-memory csv write");
    }
    write_atomic(out_dir, SWEEP_FILE, &writer.into_inner().expect("in-memory csv flush"))?;
    Ok(runs)
}
