//! Flat `key = value` run and simulation configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; see
//! [`Config::KEYS`] for the full list.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::criteria::{CriteriaConfig, ResidualModel};
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::manifold::Rotation;
use crate::propagation::Integration;
use crate::registration::Extrinsic;
use crate::simulator::{BeamPattern, SensorSpec, TrajectoryKind};
use crate::state::NoiseParams;
use crate::voxel_map::MapConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Gravity and gyro bias from a stationary window at the start.
    Bootstrap,
    /// Pose from the dataset's ground truth, velocity by finite differences.
    GroundTruth,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(InitMode::Bootstrap),
            "groundtruth" | "ground-truth" => Ok(InitMode::GroundTruth),
            other => Err(Error::Config(format!("unknown init mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub filter: FilterConfig,
    /// Ranging noise used by the filter; the dataset's value when unset.
    pub lidar_range_sigma: Option<f64>,
    /// Per-point measurement variance; `σ²` when unset.
    pub measurement_variance: Option<f64>,
    pub map: MapConfig,
    pub init: InitMode,
    pub init_window: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub sim: SimConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub trajectory: TrajectoryKind,
    pub duration: f64,
    pub hold: f64,
    pub sensor: SensorSpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            filter: FilterConfig::default(),
            lidar_range_sigma: None,
            measurement_variance: None,
            map: MapConfig::default(),
            init: InitMode::Bootstrap,
            init_window: 0.5,
            range_min: 0.5,
            range_max: 100.0,
            sim: SimConfig {
                trajectory: TrajectoryKind::Aggressive,
                duration: 10.0,
                hold: 0.0,
                sensor: SensorSpec::default(),
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}` (expected on|off)"))),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    match value {
        "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

/// `tx ty tz qx qy qz qw`.
pub fn parse_extrinsic(value: &str) -> Result<Extrinsic> {
    let v: Vec<f64> = value.split_whitespace().map(|s| parse("extrinsic", s)).collect::<Result<_>>()?;
    if v.len() != 7 {
        return Err(Error::Config("extrinsic needs `tx ty tz qx qy qz qw`".into()));
    }
    let q = Quaternion::new(v[6], v[3], v[4], v[5]);
    if !(q.norm() > 0.5) {
        return Err(Error::Config("extrinsic quaternion is not normalized".into()));
    }
    let rot: Rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
    Ok(Extrinsic { rot, trans: Vector3::new(v[0], v[1], v[2]) })
}

pub fn format_extrinsic(ext: &Extrinsic) -> String {
    let q = UnitQuaternion::from_rotation_matrix(&ext.rot);
    format!("{} {} {} {} {} {} {}", ext.trans.x, ext.trans.y, ext.trans.z, q.i, q.j, q.k, q.w)
}

impl Config {
    pub const KEYS: &'static [&'static str] = &[
        "max_iterations",
        "lidar_range_sigma",
        "measurement_variance",
        "eta_multiplier",
        "residual_model",
        "smoothing",
        "backprop_depth",
        "smooth_covariance",
        "knn_k",
        "plane_validity_dist",
        "correspondence_reject",
        "min_matches",
        "point_filter_num",
        "chain_stride",
        "integration",
        "gyro_noise",
        "acc_noise",
        "gyro_bias_noise",
        "acc_bias_noise",
        "voxel_size",
        "voxel_cap",
        "search_voxels",
        "init",
        "init_window",
        "range_min",
        "range_max",
        "sim_trajectory",
        "sim_duration",
        "sim_hold",
        "seed",
        "imu_rate",
        "lidar_rate",
        "points_per_scan",
        "sim_range_sigma",
        "beam_pattern",
        "sim_gyro_noise",
        "sim_acc_noise",
        "sim_gyro_bias_noise",
        "sim_acc_bias_noise",
        "extrinsic",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.filter;
        let sensor = &mut self.sim.sensor;
        match key {
            "max_iterations" => f.max_iterations = parse(key, value)?,
            "lidar_range_sigma" => self.lidar_range_sigma = parse_auto(key, value)?,
            "measurement_variance" => self.measurement_variance = parse_auto(key, value)?,
            "eta_multiplier" => f.criteria.eta_multiplier = parse(key, value)?,
            "residual_model" => f.criteria.residual_model = value.parse::<ResidualModel>()?,
            "smoothing" => f.smoothing = parse_switch(key, value)?,
            "backprop_depth" => {
                f.backprop_depth = match value {
                    "all" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "smooth_covariance" => f.smooth_covariance = parse_switch(key, value)?,
            "knn_k" => f.registration.knn_k = parse(key, value)?,
            "plane_validity_dist" => f.registration.plane_validity_dist = parse(key, value)?,
            "correspondence_reject" => f.registration.correspondence_reject = parse(key, value)?,
            "min_matches" => f.registration.min_matches = parse(key, value)?,
            "point_filter_num" => f.registration.point_filter_num = parse(key, value)?,
            "chain_stride" => f.chain.stride = parse(key, value)?,
            "integration" => {
                f.chain.integration = match value {
                    "zoh" => Integration::ZeroOrderHold,
                    "midpoint" => Integration::Midpoint,
                    _ => return Err(Error::Config(format!("invalid integration `{value}` (zoh|midpoint)"))),
                }
            }
            "gyro_noise" => f.chain.noise.gyro = parse(key, value)?,
            "acc_noise" => f.chain.noise.acc = parse(key, value)?,
            "gyro_bias_noise" => f.chain.noise.gyro_bias = parse(key, value)?,
            "acc_bias_noise" => f.chain.noise.acc_bias = parse(key, value)?,
            "voxel_size" => self.map.voxel_size = parse(key, value)?,
            "voxel_cap" => self.map.voxel_cap = parse(key, value)?,
            "search_voxels" => self.map.search_voxels = parse(key, value)?,
            "init" => self.init = value.parse()?,
            "init_window" => self.init_window = parse(key, value)?,
            "range_min" => self.range_min = parse(key, value)?,
            "range_max" => self.range_max = parse(key, value)?,
            "sim_trajectory" => self.sim.trajectory = value.parse()?,
            "sim_duration" => self.sim.duration = parse(key, value)?,
            "sim_hold" => self.sim.hold = parse(key, value)?,
            "seed" => sensor.seed = parse(key, value)?,
            "imu_rate" => sensor.imu_rate = parse(key, value)?,
            "lidar_rate" => sensor.lidar_rate = parse(key, value)?,
            "points_per_scan" => sensor.points_per_scan = parse(key, value)?,
            "sim_range_sigma" => sensor.sigma_range = parse(key, value)?,
            "beam_pattern" => {
                sensor.pattern = match value {
                    "spiral" => BeamPattern::solid_state(),
                    "rings" => BeamPattern::spinning(),
                    _ => return Err(Error::Config(format!("invalid beam_pattern `{value}` (spiral|rings)"))),
                }
            }
            "sim_gyro_noise" => sensor.imu_noise.gyro = parse(key, value)?,
            "sim_acc_noise" => sensor.imu_noise.acc = parse(key, value)?,
            "sim_gyro_bias_noise" => sensor.imu_noise.gyro_bias = parse(key, value)?,
            "sim_acc_bias_noise" => sensor.imu_noise.acc_bias = parse(key, value)?,
            "extrinsic" => sensor.extrinsic = parse_extrinsic(value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Filter configuration for a dataset whose ranging noise is `dataset_sigma`.
    pub fn filter_config(&self, dataset_sigma: f64) -> FilterConfig {
        let sigma = self.lidar_range_sigma.unwrap_or(dataset_sigma);
        FilterConfig {
            measurement_variance: self.measurement_variance.unwrap_or(sigma * sigma),
            criteria: CriteriaConfig { sigma, ..self.filter.criteria },
            ..self.filter.clone()
        }
    }

    /// Every key with its current value, parseable by [`Config::apply_text`].
    pub fn to_text(&self) -> String {
        let f = &self.filter;
        let s = &self.sim.sensor;
        let n: &NoiseParams = &f.chain.noise;
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |v| v.to_string());
        let switch = |b: bool| if b { "on" } else { "off" };
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("max_iterations", f.max_iterations.to_string());
        put("lidar_range_sigma", opt(self.lidar_range_sigma));
        put("measurement_variance", opt(self.measurement_variance));
        put("eta_multiplier", f.criteria.eta_multiplier.to_string());
        put("residual_model", f.criteria.residual_model.to_string());
        put("smoothing", switch(f.smoothing).into());
        put("backprop_depth", f.backprop_depth.map_or("all".into(), |d| d.to_string()));
        put("smooth_covariance", switch(f.smooth_covariance).into());
        put("knn_k", f.registration.knn_k.to_string());
        put("plane_validity_dist", f.registration.plane_validity_dist.to_string());
        put("correspondence_reject", f.registration.correspondence_reject.to_string());
        put("min_matches", f.registration.min_matches.to_string());
        put("point_filter_num", f.registration.point_filter_num.to_string());
        put("chain_stride", f.chain.stride.to_string());
        put(
            "integration",
            match f.chain.integration {
                Integration::ZeroOrderHold => "zoh".into(),
                Integration::Midpoint => "midpoint".into(),
            },
        );
        put("gyro_noise", n.gyro.to_string());
        put("acc_noise", n.acc.to_string());
        put("gyro_bias_noise", n.gyro_bias.to_string());
        put("acc_bias_noise", n.acc_bias.to_string());
        put("voxel_size", self.map.voxel_size.to_string());
        put("voxel_cap", self.map.voxel_cap.to_string());
        put("search_voxels", self.map.search_voxels.to_string());
        put(
            "init",
            match self.init {
                InitMode::Bootstrap => "bootstrap".into(),
                InitMode::GroundTruth => "groundtruth".into(),
            },
        );
        put("init_window", self.init_window.to_string());
        put("range_min", self.range_min.to_string());
        put("range_max", self.range_max.to_string());
        put(
            "sim_trajectory",
            match self.sim.trajectory {
                TrajectoryKind::Static => "static".into(),
                TrajectoryKind::ConstantVelocity => "constant-velocity".into(),
                TrajectoryKind::Sinusoidal => "sinusoidal".into(),
                TrajectoryKind::Aggressive => "aggressive".into(),
            },
        );
        put("sim_duration", self.sim.duration.to_string());
        put("sim_hold", self.sim.hold.to_string());
        put("seed", s.seed.to_string());
        put("imu_rate", s.imu_rate.to_string());
        put("lidar_rate", s.lidar_rate.to_string());
        put("points_per_scan", s.points_per_scan.to_string());
        put("sim_range_sigma", s.sigma_range.to_string());
        put(
            "beam_pattern",
            match s.pattern {
                BeamPattern::Spiral { .. } => "spiral".into(),
                BeamPattern::Rings { .. } => "rings".into(),
            },
        );
        put("sim_gyro_noise", s.imu_noise.gyro.to_string());
        put("sim_acc_noise", s.imu_noise.acc.to_string());
        put("sim_gyro_bias_noise", s.imu_noise.gyro_bias.to_string());
        put("sim_acc_bias_noise", s.imu_noise.acc_bias.to_string());
        put("extrinsic", format_extrinsic(&s.extrinsic));
        out
    }
}
