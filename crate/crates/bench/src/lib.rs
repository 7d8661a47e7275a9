//! Fixtures shared by the benchmarks: a warmed-up estimator and map sitting
//! just before a frame of the aggressive preset.

use smoothlio::pipeline::run::groundtruth_initial_state;
use smoothlio::pipeline::{simulate_dataset, Config, Dataset, InitMode};
use smoothlio::propagation::initial_covariance;
use smoothlio::{Estimator, ScanFrame, VoxelMap};

pub struct ScanFixture {
    pub dataset: Dataset,
    pub config: Config,
    pub estimator: Estimator,
    pub map: VoxelMap,
    /// Next frame to register, already range-filtered.
    pub frame: ScanFrame,
}

/// Runs the estimator over the first `warmup` frames of seed `seed`.
pub fn scan_fixture(seed: u64, warmup: usize) -> ScanFixture {
    let mut config = Config::default();
    config.sim.duration = (warmup as f64 + 2.0) / config.sim.sensor.lidar_rate;
    config.sim.sensor.seed = seed;
    config.init = InitMode::GroundTruth;
    let dataset = simulate_dataset(&config.sim).expect("simulated dataset");
    let gt = dataset.groundtruth.as_ref().expect("ground truth");
    let x0 = groundtruth_initial_state(gt, 0.0, dataset.meta.imu_rate).expect("initial state");
    let filter = config.filter_config(dataset.meta.lidar_range_sigma);
    let mut estimator = Estimator::new(x0, initial_covariance(), filter).expect("estimator");
    let mut map = VoxelMap::new(config.map);
    let ext = dataset.meta.extrinsic.clone();

    let frame = {
        let mut frames = dataset.frames().map(|f| {
            let mut f = f.expect("frame");
            f.filter_range(config.range_min, config.range_max);
            f
        });
        let first = frames.next().expect("first frame");
        let points = estimator.initialize_map(&dataset.imu, &first, &ext).expect("map init");
        map.insert_points(&points);
        for frame in frames.by_ref().take(warmup) {
            let r = estimator.process(&dataset.imu, &frame, &map, &ext).expect("update");
            map.insert_points(&r.world_points);
        }
        frames.next().expect("frame after warmup")
    };
    ScanFixture { dataset, config, estimator, map, frame }
}
