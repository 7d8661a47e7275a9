//! Streaming a dataset through the estimator, plus metrics output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::Estimator;
use crate::pipeline::config::{Config, InitMode};
use crate::pipeline::dataset::Dataset;
use crate::pipeline::trajectory::{evaluate_ate, write_trajectory, AteResult, Pose, Trajectory};
use crate::propagation::{bootstrap_initial_state, initial_covariance};
use crate::state::NavState;
use crate::voxel_map::VoxelMap;

/// Per-scan outcome, one line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRecord {
    pub index: usize,
    pub t_end: f64,
    /// Wall time of the scan update, ms; zero for the map-initializing frame.
    pub time_ms: f64,
    pub points: usize,
    pub apr_final: Option<f64>,
    pub iterations: usize,
    pub backprops: usize,
    pub starved: bool,
    pub smoother_fallbacks: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TimingStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return TimingStats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        TimingStats { min: sorted[0], max: sorted[n - 1], mean: sorted.iter().sum::<f64>() / n as f64, median }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub scans: usize,
    pub starved_scans: usize,
    pub backprop_count: usize,
    /// Scans with at least one backpropagation.
    pub triggered_scans: usize,
    pub smoother_fallbacks: usize,
    /// Per-scan update time, ms.
    pub time_ms: TimingStats,
    pub apr_mean: f64,
    pub apr_max: f64,
    pub ate_rmse: Option<f64>,
    pub end_to_end: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub records: Vec<ScanRecord>,
    pub metrics: RunMetrics,
    pub ate: Option<AteResult>,
}

/// Known initial state from ground truth: pose interpolated at `t`, velocity
/// by central differences over one IMU period, zero biases, nominal gravity.
pub fn groundtruth_initial_state(gt: &Trajectory, t: f64, imu_rate: f64) -> Result<NavState> {
    let missing = || Error::Initialization(format!("ground truth does not cover t = {t}"));
    let pose = gt.interpolate(t).ok_or_else(missing)?;
    let h = 1.0 / imu_rate;
    let before = gt.interpolate(t - h).unwrap_or_else(|| pose.clone());
    let after = gt.interpolate(t + h).ok_or_else(missing)?;
    let vel = (after.pos - before.pos) / (after.t - before.t);
    Ok(NavState { t, rot: pose.rotation(), pos: pose.pos, vel, ..NavState::identity(t) })
}

pub fn run(dataset: &Dataset, config: &Config) -> Result<RunOutput> {
    let times = dataset.frame_begin_times();
    let Some(&first_begin) = times.first() else {
        return Err(Error::MalformedInput("dataset has no frames".into()));
    };
    let x0 = match config.init {
        InitMode::Bootstrap => bootstrap_initial_state(&dataset.imu, config.init_window)?,
        InitMode::GroundTruth => {
            let gt = dataset
                .groundtruth
                .as_ref()
                .ok_or_else(|| Error::Initialization("ground-truth init needs groundtruth.txt".into()))?;
            groundtruth_initial_state(gt, first_begin, dataset.meta.imu_rate)?
        }
    };
    let filter_cfg = config.filter_config(dataset.meta.lidar_range_sigma);
    let mut est = Estimator::new(x0, initial_covariance(), filter_cfg)?;
    config.map.validate()?;
    let mut map = VoxelMap::new(config.map);
    let ext = &dataset.meta.extrinsic;
    let imu = &dataset.imu;

    let mut poses = Vec::with_capacity(times.len());
    let mut records = Vec::with_capacity(times.len());
    let mut initialized = false;
    for (index, frame) in dataset.frames().enumerate() {
        let mut frame = frame?;
        // Frames that start before the initial state cannot be propagated into.
        if frame.t_begin < est.state.t - 1e-9 {
            continue;
        }
        frame.filter_range(config.range_min, config.range_max);
        est.propagate_to(imu, frame.t_begin)?;
        let record = if !initialized {
            let points = est.initialize_map(imu, &frame, ext)?;
            map.insert_points(&points);
            initialized = true;
            ScanRecord {
                index,
                t_end: frame.t_end,
                time_ms: 0.0,
                points: frame.points.len(),
                apr_final: None,
                iterations: 0,
                backprops: 0,
                starved: false,
                smoother_fallbacks: 0,
            }
        } else {
            let start = Instant::now();
            let result = est.process(imu, &frame, &map, ext)?;
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            map.insert_points(&result.world_points);
            ScanRecord {
                index,
                t_end: frame.t_end,
                time_ms,
                points: frame.points.len(),
                apr_final: result.apr_final.is_finite().then_some(result.apr_final),
                iterations: result.iterations_used,
                backprops: result.backprops_used,
                starved: result.starved,
                smoother_fallbacks: result.smoother_fallbacks,
            }
        };
        poses.push(Pose::from_state(&est.state));
        records.push(record);
    }

    let trajectory = Trajectory { poses };
    let ate = match &dataset.groundtruth {
        Some(gt) => Some(evaluate_ate(&trajectory, gt)?),
        None => None,
    };
    let metrics = summarize(&records, ate.as_ref());
    Ok(RunOutput { trajectory, records, metrics, ate })
}

fn summarize(records: &[ScanRecord], ate: Option<&AteResult>) -> RunMetrics {
    let updates: Vec<&ScanRecord> = records.iter().filter(|r| r.iterations > 0 || r.starved).collect();
    let times: Vec<f64> = updates.iter().map(|r| r.time_ms).collect();
    let aprs: Vec<f64> = updates.iter().filter_map(|r| r.apr_final).collect();
    RunMetrics {
        scans: records.len(),
        starved_scans: records.iter().filter(|r| r.starved).count(),
        backprop_count: records.iter().map(|r| r.backprops).sum(),
        triggered_scans: records.iter().filter(|r| r.backprops > 0).count(),
        smoother_fallbacks: records.iter().map(|r| r.smoother_fallbacks).sum(),
        time_ms: TimingStats::from_samples(&times),
        apr_mean: if aprs.is_empty() { 0.0 } else { aprs.iter().sum::<f64>() / aprs.len() as f64 },
        apr_max: aprs.iter().copied().fold(0.0, f64::max),
        ate_rmse: ate.map(|a| a.rmse),
        end_to_end: ate.map(|a| a.end_to_end),
    }
}

pub fn format_metrics(m: &RunMetrics) -> String {
    let mut out = String::new();
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let _ = writeln!(out, "scans            {}", m.scans);
    let _ = writeln!(out, "starved_scans    {}", m.starved_scans);
    let _ = writeln!(out, "backprop_count   {}", m.backprop_count);
    let _ = writeln!(out, "triggered_scans  {}", m.triggered_scans);
    let _ = writeln!(out, "smoother_fallbacks {}", m.smoother_fallbacks);
    let _ = writeln!(
        out,
        "time_ms          min {:.3} max {:.3} mean {:.3} median {:.3}",
        m.time_ms.min, m.time_ms.max, m.time_ms.mean, m.time_ms.median
    );
    let _ = writeln!(out, "apr_mean_m       {:.6}", m.apr_mean);
    let _ = writeln!(out, "apr_max_m        {:.6}", m.apr_max);
    let _ = writeln!(out, "ate_rmse_m       {}", opt(m.ate_rmse));
    let _ = writeln!(out, "end_to_end_m     {}", opt(m.end_to_end));
    out
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JsonRecord<'a> {
    Scan(&'a ScanRecord),
    Summary(&'a RunMetrics),
}

/// `trajectory.txt`, `metrics.txt`, and `metrics.jsonl` in `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trajectory(&out.trajectory, &dir.join("trajectory.txt"))?;
    let path = dir.join("metrics.txt");
    std::fs::write(&path, format_metrics(&out.metrics)).map_err(|e| Error::io(&path, e))?;
    let mut jsonl = String::new();
    let json = |r: &JsonRecord| serde_json::to_string(r).expect("serializable record");
    for r in &out.records {
        jsonl.push_str(&json(&JsonRecord::Scan(r)));
        jsonl.push('\n');
    }
    jsonl.push_str(&json(&JsonRecord::Summary(&out.metrics)));
    jsonl.push('\n');
    let path = dir.join("metrics.jsonl");
    std::fs::write(&path, jsonl).map_err(|e| Error::io(&path, e))
}

/// Multipliers of the expected APR swept by [`sweep_eta`].
pub const ETA_MULTIPLIERS: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta_multiplier: f64,
    pub eta: f64,
    pub ate_rmse: Option<f64>,
    pub end_to_end: Option<f64>,
    pub backprop_count: usize,
    pub mean_ms: f64,
}

/// Runs the dataset once per threshold multiplier with smoothing enabled.
pub fn sweep_eta(dataset: &Dataset, config: &Config, multipliers: &[f64]) -> Result<Vec<SweepRow>> {
    multipliers
        .iter()
        .map(|&m| {
            let mut cfg = config.clone();
            cfg.filter.smoothing = true;
            cfg.filter.criteria.eta_multiplier = m;
            let out = run(dataset, &cfg)?;
            Ok(SweepRow {
                eta_multiplier: m,
                eta: cfg.filter_config(dataset.meta.lidar_range_sigma).criteria.eta(),
                ate_rmse: out.metrics.ate_rmse,
                end_to_end: out.metrics.end_to_end,
                backprop_count: out.metrics.backprop_count,
                mean_ms: out.metrics.time_ms.mean,
            })
        })
        .collect()
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("eta_mult  eta_m      ate_rmse_m  end_to_end_m  backprops  mean_ms\n");
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8}  {:<9.6}  {:<10}  {:<12}  {:<9}  {:.3}",
            r.eta_multiplier,
            r.eta,
            opt(r.ate_rmse),
            opt(r.end_to_end),
            r.backprop_count,
            r.mean_ms
        );
    }
    out
}
