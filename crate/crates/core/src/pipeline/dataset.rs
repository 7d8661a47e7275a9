//! Dataset directories.
//!
//! ```text
//! <root>/meta.txt          key = value: imu_rate, lidar_rate, lidar_range_sigma, extrinsic
//! <root>/imu.txt           t wx wy wz ax ay az
//! <root>/scans/<t>.txt     t x y z       (one file per frame, named by begin time)
//! <root>/groundtruth.txt   t tx ty tz qx qy qz qw   (optional)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pipeline::config::{format_extrinsic, parse_extrinsic, SimConfig};
use crate::pipeline::trajectory::{load_trajectory, write_trajectory, Pose, Trajectory};
use crate::propagation::MAX_IMU_GAP;
use crate::registration::{Extrinsic, LidarPoint, ScanFrame};
use crate::simulator::{default_environment, make_trajectory, synth_imu, synth_scan, TrajectoryParams};
use crate::state::ImuSample;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub imu_rate: f64,
    pub lidar_rate: f64,
    pub lidar_range_sigma: f64,
    pub extrinsic: Extrinsic,
}

impl DatasetMeta {
    fn parse(text: &str, path: &Path) -> Result<Self> {
        let (mut imu_rate, mut lidar_rate, mut sigma, mut extrinsic) = (None, None, None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::Format { path: path.to_path_buf(), line: n + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| fail("expected `key = value`".into()))?;
            let number = || value.trim().parse::<f64>().map_err(|_| fail(format!("invalid number `{}`", value.trim())));
            match key.trim() {
                "imu_rate" => imu_rate = Some(number()?),
                "lidar_rate" => lidar_rate = Some(number()?),
                "lidar_range_sigma" => sigma = Some(number()?),
                "extrinsic" => extrinsic = Some(parse_extrinsic(value.trim()).map_err(|e| fail(e.to_string()))?),
                other => return Err(fail(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Format { path: path.to_path_buf(), line: 0, msg: format!("missing `{k}`") };
        let meta = DatasetMeta {
            imu_rate: imu_rate.ok_or_else(|| missing("imu_rate"))?,
            lidar_rate: lidar_rate.ok_or_else(|| missing("lidar_rate"))?,
            lidar_range_sigma: sigma.ok_or_else(|| missing("lidar_range_sigma"))?,
            extrinsic: extrinsic.unwrap_or_else(Extrinsic::identity),
        };
        if !(meta.imu_rate > 0.0 && meta.lidar_rate > 0.0 && meta.lidar_range_sigma >= 0.0) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: 0,
                msg: "rates must be > 0 and sigma >= 0".into(),
            });
        }
        Ok(meta)
    }

    fn to_text(&self) -> String {
        format!(
            "imu_rate = {}\nlidar_rate = {}\nlidar_range_sigma = {}\nextrinsic = {}\n",
            self.imu_rate,
            self.lidar_rate,
            self.lidar_range_sigma,
            format_extrinsic(&self.extrinsic)
        )
    }
}

#[derive(Clone, Debug)]
enum FrameSource {
    Files(Vec<(f64, PathBuf)>),
    Memory(Vec<ScanFrame>),
}

/// IMU stream, frames in timestamp order, and optional ground truth.
///
/// Frames loaded from disk are read one file at a time by [`Dataset::frames`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub imu: Vec<ImuSample>,
    pub groundtruth: Option<Trajectory>,
    frames: FrameSource,
}

fn parse_numbers<const N: usize>(line: &str, fail: impl Fn(String) -> Error) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    let mut count = 0;
    for tok in line.split_whitespace() {
        if count < N {
            out[count] = tok.parse().map_err(|_| fail(format!("invalid number `{tok}`")))?;
        }
        count += 1;
    }
    if count != N {
        return Err(fail(format!("expected {N} fields, found {count}")));
    }
    if out.iter().any(|v: &f64| !v.is_finite()) {
        return Err(fail("non-finite value".into()));
    }
    Ok(out)
}

pub fn parse_imu(text: &str, path: &Path) -> Result<Vec<ImuSample>> {
    let mut out: Vec<ImuSample> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: String| Error::Format { path: path.to_path_buf(), line: n + 1, msg };
        let [t, wx, wy, wz, ax, ay, az] = parse_numbers::<7>(line, fail)?;
        if let Some(prev) = out.last() {
            if !(t > prev.t) {
                return Err(fail("timestamps not strictly increasing".into()));
            }
            if t - prev.t > MAX_IMU_GAP {
                return Err(Error::ImuGap { from: prev.t, to: t, gap: t - prev.t });
            }
        }
        out.push(ImuSample { t, gyro: Vector3::new(wx, wy, wz), acc: Vector3::new(ax, ay, az) });
    }
    Ok(out)
}

pub fn parse_scan(text: &str, path: &Path, t_begin: f64, t_end: f64) -> Result<ScanFrame> {
    let mut points: Vec<LidarPoint> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: String| Error::Format { path: path.to_path_buf(), line: n + 1, msg };
        let [t, x, y, z] = parse_numbers::<4>(line, fail)?;
        if t < t_begin - 1e-9 || t > t_end + 1e-9 {
            return Err(fail(format!("timestamp {t} outside the frame window [{t_begin}, {t_end}]")));
        }
        if points.last().is_some_and(|p| t < p.t) {
            return Err(fail("timestamps decrease".into()));
        }
        points.push(LidarPoint { t, p: Vector3::new(x, y, z) });
    }
    Ok(ScanFrame { t_begin, t_end, points })
}

fn scan_file_name(t_begin: f64) -> String {
    format!("{t_begin:.9}.txt")
}

impl Dataset {
    pub fn from_memory(
        meta: DatasetMeta,
        imu: Vec<ImuSample>,
        frames: Vec<ScanFrame>,
        groundtruth: Option<Trajectory>,
    ) -> Result<Self> {
        let mut frames = frames;
        frames.sort_by(|a, b| a.t_begin.total_cmp(&b.t_begin));
        let ds = Dataset { meta, imu, groundtruth, frames: FrameSource::Memory(frames) };
        ds.check_coverage()?;
        Ok(ds)
    }

    pub fn frame_count(&self) -> usize {
        match &self.frames {
            FrameSource::Files(f) => f.len(),
            FrameSource::Memory(f) => f.len(),
        }
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.meta.lidar_rate
    }

    pub fn frame_begin_times(&self) -> Vec<f64> {
        match &self.frames {
            FrameSource::Files(f) => f.iter().map(|(t, _)| *t).collect(),
            FrameSource::Memory(f) => f.iter().map(|s| s.t_begin).collect(),
        }
    }

    /// Frames in timestamp order, read lazily from disk.
    pub fn frames(&self) -> impl Iterator<Item = Result<ScanFrame>> + '_ {
        let period = self.frame_period();
        (0..self.frame_count()).map(move |i| match &self.frames {
            FrameSource::Memory(f) => Ok(f[i].clone()),
            FrameSource::Files(f) => {
                let (t_begin, path) = &f[i];
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_scan(&text, path, *t_begin, t_begin + period)
            }
        })
    }

    /// Every frame window must lie inside the IMU stream.
    fn check_coverage(&self) -> Result<()> {
        let times = self.frame_begin_times();
        let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
            return Ok(());
        };
        let t_end = last + self.frame_period();
        match (self.imu.first(), self.imu.last()) {
            (Some(a), Some(b)) if a.t <= first + 1e-9 && b.t >= t_end - 1e-9 => Ok(()),
            _ => Err(Error::Coverage { t_begin: first, t_end }),
        }
    }
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let meta_path = root.join("meta.txt");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = DatasetMeta::parse(&meta_text, &meta_path)?;

    let imu_path = root.join("imu.txt");
    let imu_text = std::fs::read_to_string(&imu_path).map_err(|e| Error::io(&imu_path, e))?;
    let imu = parse_imu(&imu_text, &imu_path)?;

    let scan_dir = root.join("scans");
    let entries = std::fs::read_dir(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&scan_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let t: f64 = stem.parse().map_err(|_| Error::Format {
            path: path.clone(),
            line: 0,
            msg: "scan file name is not a begin timestamp".into(),
        })?;
        files.push((t, path));
    }
    files.sort_by(|a, b| a.0.total_cmp(&b.0));

    let gt_path = root.join("groundtruth.txt");
    let groundtruth = if gt_path.exists() { Some(load_trajectory(&gt_path)?) } else { None };

    let ds = Dataset { meta, imu, groundtruth, frames: FrameSource::Files(files) };
    ds.check_coverage()?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let scan_dir = root.join("scans");
    std::fs::create_dir_all(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
    let meta_path = root.join("meta.txt");
    std::fs::write(&meta_path, ds.meta.to_text()).map_err(|e| Error::io(&meta_path, e))?;

    let mut imu = String::with_capacity(ds.imu.len() * 120);
    for s in &ds.imu {
        let (w, a) = (s.gyro, s.acc);
        let _ = writeln!(imu, "{} {} {} {} {} {} {}", s.t, w.x, w.y, w.z, a.x, a.y, a.z);
    }
    let imu_path = root.join("imu.txt");
    std::fs::write(&imu_path, imu).map_err(|e| Error::io(&imu_path, e))?;

    for frame in ds.frames() {
        let frame = frame?;
        let mut text = String::with_capacity(frame.points.len() * 64);
        for p in &frame.points {
            let _ = writeln!(text, "{} {} {} {}", p.t, p.p.x, p.p.y, p.p.z);
        }
        let path = scan_dir.join(scan_file_name(frame.t_begin));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(gt) = &ds.groundtruth {
        write_trajectory(gt, &root.join("groundtruth.txt"))?;
    }
    Ok(())
}

/// Synthesizes a full dataset in the default environment: IMU, every frame
/// that fits in the trajectory, and ground truth at the IMU rate.
pub fn simulate_dataset(sim: &SimConfig) -> Result<Dataset> {
    let params = TrajectoryParams { hold: sim.hold, ..TrajectoryParams::preset(sim.trajectory, sim.duration) };
    let traj = make_trajectory(sim.trajectory, params)?;
    let spec = &sim.sensor;
    let env = default_environment();
    let imu = synth_imu(&traj, spec)?;
    let frames =
        (0..spec.scan_count(sim.duration)).map(|i| synth_scan(&traj, &env, spec, i)).collect::<Result<Vec<_>>>()?;
    let poses = imu.iter().map(|s| traj.nav_state(s.t).map(|x| Pose::from_state(&x))).collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        imu_rate: spec.imu_rate,
        lidar_rate: spec.lidar_rate,
        lidar_range_sigma: spec.sigma_range,
        extrinsic: spec.extrinsic.clone(),
    };
    Dataset::from_memory(meta, imu, frames, Some(Trajectory { poses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::Config;
    use crate::simulator::TrajectoryKind;

    fn small_sim() -> SimConfig {
        let mut sim = Config::default().sim;
        sim.trajectory = TrajectoryKind::Sinusoidal;
        sim.duration = 1.0;
        sim.sensor.points_per_scan = 300;
        sim
    }

    #[test]
    fn simulated_dataset_round_trips() {
        let ds = simulate_dataset(&small_sim()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.imu, ds.imu);
        assert_eq!(back.frame_count(), 10);
        for (a, b) in ds.frames().zip(back.frames()) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a.t_end - b.t_end).abs() < 1e-9);
            assert_eq!(a.points, b.points);
        }
        let gt = back.groundtruth.unwrap();
        assert_eq!(gt.len(), ds.groundtruth.unwrap().len());
    }

    #[test]
    fn shuffled_scan_files_load_in_order() {
        let ds = simulate_dataset(&small_sim()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        // Rewrite the files in reverse order so directory order differs from time order.
        let scans = dir.path().join("scans");
        let mut names: Vec<_> = std::fs::read_dir(&scans).unwrap().map(|e| e.unwrap().path()).collect();
        names.reverse();
        for (i, p) in names.iter().enumerate() {
            std::fs::rename(p, scans.join(format!("tmp{i}"))).unwrap();
        }
        for (i, p) in names.iter().enumerate() {
            std::fs::rename(scans.join(format!("tmp{i}")), p).unwrap();
        }
        let back = load_dataset(dir.path()).unwrap();
        let times = back.frame_begin_times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        let frames: Vec<_> = back.frames().map(|f| f.unwrap().t_begin).collect();
        assert_eq!(frames, times);
    }

    #[test]
    fn imu_gap_is_reported() {
        let text = "0 0 0 0 0 0 9.81\n0.005 0 0 0 0 0 9.81\n0.505 0 0 0 0 0 9.81\n";
        match parse_imu(text, Path::new("imu.txt")) {
            Err(Error::ImuGap { from, to, .. }) => {
                assert_eq!(from, 0.005);
                assert_eq!(to, 0.505);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let err = parse_imu("0 0 0 0 0 0 9.81\n0.005 0 0 0 x 0 9.81\n", Path::new("imu.txt")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
        let err = parse_scan("0.01 1 2 3\n0.5 1 2 3\n", Path::new("s.txt"), 0.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn coverage_is_checked() {
        let ds = simulate_dataset(&small_sim()).unwrap();
        let short: Vec<_> = ds.imu.iter().filter(|s| s.t < 0.5).cloned().collect();
        let frames: Vec<_> = ds.frames().map(|f| f.unwrap()).collect();
        let err = Dataset::from_memory(ds.meta.clone(), short, frames, None).unwrap_err();
        assert!(matches!(err, Error::Coverage { .. }));
    }

    #[test]
    fn missing_meta_keys_are_errors() {
        let err = DatasetMeta::parse("imu_rate = 200\n", Path::new("meta.txt")).unwrap_err();
        assert!(err.to_string().contains("lidar_rate"), "{err}");
    }
}
