//! Case-study harness: the three benchmark experiments behind the reports.
//!
//! Case 1 compares memory models (historical prior, fading overlay, fused
//! memory) by density RMSE against ground truth under a persistent corridor
//! anomaly. Case 2 benchmarks the receding-horizon planner against grid A*
//! variants on random obstacle maps with clustered crowds. Case 3 sweeps the
//! number of anomaly events on the seven-gate map and tracks the travel-time
//! improvement of the informed planner.
//!
//! Every report carries the seeds and a configuration fingerprint, and its
//! CSV body is byte-reproducible for a fixed configuration.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{astar, congestion_astar, GridGraph, CG1_LAMBDA, CG2_LAMBDA};
use crate::eval::{
    corridor_count, expected_travel_time, improvement_index, pum_blend, rmse_series,
    TravelTimeModel,
};
use crate::exec;
use crate::gridmap::{rasterize_normalize, GridSpec, MixtureModel, ProbabilityGrid};
use crate::memory::{
    fuse_layers, olm_predict, wm_layer, FusionConfig, LayerKind, MemoryLayer, PeriodicOlmModel,
};
use crate::planner::{plan, Obstacle, PlannerParams};
use crate::simulator::{
    fit_olm, ground_truth_grid, observe, step, ScenarioConfig, WorldState,
};
use crate::tracking::{build_working_memory, kf_step, SensorModel, TrackState};

pub const CASE1_TOML: &str = include_str!("../../../scenarios/case1_corridor.toml");
pub const CASE2_TOML: &str = include_str!("../../../scenarios/case2_random_maps.toml");
pub const CASE3_TOML: &str = include_str!("../../../scenarios/case3_seven_gates.toml");

/// SHA-256 hex digest over the given text parts.
pub fn fingerprint(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Track maintenance: advance known tracks with the new measurements and
/// open fresh tracks for new IDs; unmatched tracks are dropped.
fn update_tracks(
    tracks: &HashMap<u64, TrackState>,
    measurements: &[(u64, Vector2<f64>)],
    sensor: &SensorModel,
) -> HashMap<u64, TrackState> {
    let pos_var = sensor.measurement_noise[(0, 0)].max(1e-4);
    measurements
        .iter()
        .map(|(id, z)| {
            let track = match tracks.get(id) {
                Some(t) => kf_step(t, *z, sensor)
                    .unwrap_or_else(|_| TrackState::from_detection(*z, pos_var, 1.0)),
                None => TrackState::from_detection(*z, pos_var, 1.0),
            };
            (*id, track)
        })
        .collect()
}

fn sorted_tracks(tracks: &HashMap<u64, TrackState>) -> Vec<TrackState> {
    let mut ids: Vec<u64> = tracks.keys().copied().collect();
    ids.sort_unstable();
    ids.into_iter().map(|id| tracks[&id]).collect()
}

/// Fused memory from a short observation window ending at the current world
/// time: Kalman tracks feed the working memory, which is combined with the
/// prior layer by weighted evidence fusion.
///
/// Track covariances are widened by `smoothing` so the sensor layer uses the
/// same kernel width as the density grids it is compared and fused against;
/// raw posterior covariances are far sharper than a person's footprint.
#[allow(clippy::too_many_arguments)]
pub fn observe_and_fuse(
    world: &WorldState,
    config: &ScenarioConfig,
    olm: &PeriodicOlmModel,
    robot: Vector2<f64>,
    sensor: &SensorModel,
    warmup_steps: usize,
    fusion: &FusionConfig,
    smoothing: f64,
    seed: u64,
) -> MemoryLayer {
    let spec = config.grid_spec();
    let mut scratch = world.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0B5E_11ED_0B5E_11ED);
    let mut tracks: HashMap<u64, TrackState> = HashMap::new();
    for _ in 0..warmup_steps {
        step(&mut scratch, config, sensor.dt);
        let obs = observe(&scratch, robot, sensor, &mut rng);
        tracks = update_tracks(&tracks, &obs, sensor);
    }
    let track_vec = sorted_tracks(&tracks);
    let wm = build_working_memory(&track_vec, &spec);
    let wm = crate::tracking::WorkingMemory {
        model: MixtureModel::new(
            wm.model
                .components
                .iter()
                .map(|g| {
                    crate::gridmap::GaussianComponent::new(
                        g.mean,
                        g.covariance + nalgebra::Matrix2::identity() * smoothing * smoothing,
                        g.weight,
                    )
                })
                .collect(),
        ),
        sigma_bar: wm.sigma_bar,
    };
    let sigma_bar = wm.sigma_bar.unwrap_or(0.0);
    let wm_l = wm_layer(&wm, spec, robot, sensor.fov_radius).expect("wm layer");
    let olm_l = olm_predict(olm, scratch.time, spec).expect("olm layer");
    fuse_layers(&wm_l, &olm_l, sigma_bar, fusion).expect("fusion")
}

// ---------------------------------------------------------------------------
// Case 1
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case1Params {
    pub runs: usize,
    /// Observation instant (s into the anomalous run).
    pub t_obs: f64,
    /// Evaluation window after the observation (s).
    pub eval_duration: f64,
    /// Spacing of evaluation snapshots (s).
    pub eval_step: f64,
    pub dt: f64,
    pub bandwidth: f64,
    /// Fade horizon of the partially-updated-memory baseline (s).
    pub fade_horizon: f64,
    pub fov_radius: f64,
    pub master_seed: u64,
}

impl Default for Case1Params {
    fn default() -> Self {
        Self {
            runs: 20,
            t_obs: 60.0,
            eval_duration: 80.0,
            eval_step: 5.0,
            dt: 0.25,
            bandwidth: 0.5,
            fade_horizon: 40.0,
            fov_radius: 12.0,
            master_seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case1Run {
    pub seed: u64,
    pub rmse_ppum: f64,
    pub rmse_pum: f64,
    pub rmse_olm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case1Report {
    pub runs: Vec<Case1Run>,
    pub mean_ppum: f64,
    pub mean_pum: f64,
    pub mean_olm: f64,
    /// Fraction of runs where the fused memory beats the prior.
    pub ppum_beats_olm: f64,
    pub fingerprint: String,
    pub master_seed: u64,
}

impl Case1Report {
    pub fn csv(&self) -> String {
        let mut out = String::from("seed,rmse_ppum,rmse_pum,rmse_olm\n");
        for r in &self.runs {
            writeln!(
                out,
                "{},{:.9},{:.9},{:.9}",
                r.seed, r.rmse_ppum, r.rmse_pum, r.rmse_olm
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn case1_run(
    config: &ScenarioConfig,
    olm: &PeriodicOlmModel,
    params: &Case1Params,
    seed: u64,
) -> Case1Run {
    let spec = config.grid_spec();
    let robot = Vector2::new(config.robot_start[0], config.robot_start[1]);
    let sensor = SensorModel::isotropic(0.1, 0.5, params.fov_radius, params.dt);

    // anomalous world up to two seconds before the observation instant
    let mut world = WorldState::new(seed);
    let warmup = (2.0 / params.dt).round() as usize;
    let pre_obs = params.t_obs - warmup as f64 * params.dt;
    while world.time < pre_obs - 1e-9 {
        step(&mut world, config, params.dt);
    }
    let fm = observe_and_fuse(
        &world,
        config,
        olm,
        robot,
        &sensor,
        warmup,
        &FusionConfig::default(),
        params.bandwidth,
        seed,
    );
    while world.time < params.t_obs - 1e-9 {
        step(&mut world, config, params.dt);
    }
    let inject = fm.grid.clone();

    let snapshots = (params.eval_duration / params.eval_step).round() as usize;
    let mut truths = Vec::with_capacity(snapshots + 1);
    let mut est_olm = Vec::with_capacity(snapshots + 1);
    let mut est_pum = Vec::with_capacity(snapshots + 1);
    let mut est_ppum = Vec::with_capacity(snapshots + 1);
    for k in 0..=snapshots {
        let t = params.t_obs + k as f64 * params.eval_step;
        while world.time < t - 1e-9 {
            step(&mut world, config, params.dt);
        }
        let (truth, _) = ground_truth_grid(&world, spec, params.bandwidth);
        let olm_t = olm_predict(olm, t, spec).expect("olm layer");
        let pum = pum_blend(&olm_t.grid, &inject, t - params.t_obs, params.fade_horizon)
            .expect("pum blend");
        truths.push((t, truth));
        est_olm.push((t, olm_t.grid));
        est_pum.push((t, pum));
        est_ppum.push((t, fm.grid.clone()));
    }

    let (_, rmse_olm) = rmse_series(&est_olm, &truths).expect("aligned");
    let (_, rmse_pum) = rmse_series(&est_pum, &truths).expect("aligned");
    let (_, rmse_ppum) = rmse_series(&est_ppum, &truths).expect("aligned");
    Case1Run { seed, rmse_ppum, rmse_pum, rmse_olm }
}

pub fn run_case1(params: &Case1Params) -> Case1Report {
    let config = ScenarioConfig::from_toml(CASE1_TOML).expect("bundled scenario");
    let olm = fit_olm(
        &config,
        10.0,
        5,
        150.0,
        params.dt,
        params.bandwidth,
        150,
        params.master_seed,
    );
    let runs = exec::map_indexed(params.runs, |i| {
        case1_run(&config, &olm, params, params.master_seed + 1 + i as u64)
    });
    let n = runs.len().max(1) as f64;
    let mean_ppum = runs.iter().map(|r| r.rmse_ppum).sum::<f64>() / n;
    let mean_pum = runs.iter().map(|r| r.rmse_pum).sum::<f64>() / n;
    let mean_olm = runs.iter().map(|r| r.rmse_olm).sum::<f64>() / n;
    let ppum_beats_olm =
        runs.iter().filter(|r| r.rmse_ppum < r.rmse_olm).count() as f64 / n;
    let fp = fingerprint(&[
        CASE1_TOML,
        &serde_json::to_string(params).expect("params serialize"),
    ]);
    Case1Report {
        runs,
        mean_ppum,
        mean_pum,
        mean_olm,
        ppum_beats_olm,
        fingerprint: fp,
        master_seed: params.master_seed,
    }
}

// ---------------------------------------------------------------------------
// Case 2
// ---------------------------------------------------------------------------

/// A generated benchmark map: obstacles plus fixed start and goal.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMap {
    pub obstacles: Vec<Obstacle>,
    pub start: Vector2<f64>,
    pub goal: Vector2<f64>,
}

/// 20×20 m map with `count` random circular obstacles kept clear of the
/// start and goal corners.
pub fn random_map(seed: u64, count: usize) -> RandomMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Vector2::new(1.5, 1.5);
    let goal = Vector2::new(18.5, 18.5);
    let mut obstacles = Vec::with_capacity(count);
    while obstacles.len() < count {
        let c = Vector2::new(rng.gen_range(2.0..18.0), rng.gen_range(2.0..18.0));
        let r = rng.gen_range(0.4..0.9);
        if (c - start).norm() > r + 1.6 && (c - goal).norm() > r + 1.6 {
            obstacles.push(Obstacle::new(c, r));
        }
    }
    RandomMap { obstacles, start, goal }
}

/// Static clustered crowd biased toward the start-goal diagonal, rejected
/// out of obstacle discs.
pub fn clustered_crowd(
    count: usize,
    seed: u64,
    map: &RandomMap,
    map_size: f64,
) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters: Vec<Vector2<f64>> = (0..3)
        .map(|_| {
            let t: f64 = rng.gen_range(0.25..0.75);
            let along = map.start + (map.goal - map.start) * t;
            let dir = (map.goal - map.start).normalize();
            let perp = Vector2::new(-dir.y, dir.x);
            along + perp * rng.gen_range(-2.0..2.0)
        })
        .collect();
    let mut crowd = Vec::with_capacity(count);
    let mut guard = 0;
    while crowd.len() < count && guard < count * 200 {
        guard += 1;
        let c = clusters[crowd.len() % clusters.len()];
        let p = Vector2::new(
            (c.x + 1.5 * gauss(&mut rng)).clamp(0.3, map_size - 0.3),
            (c.y + 1.5 * gauss(&mut rng)).clamp(0.3, map_size - 0.3),
        );
        if map
            .obstacles
            .iter()
            .all(|o| (p - o.center).norm() > o.radius + 0.2)
        {
            crowd.push(p);
        }
    }
    crowd
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// KDE density grid of a static crowd; uniform when the crowd is empty.
pub fn crowd_density(crowd: &[Vector2<f64>], spec: GridSpec, bandwidth: f64) -> ProbabilityGrid {
    if crowd.is_empty() {
        return ProbabilityGrid::uniform(spec);
    }
    let model = MixtureModel::equal_weight_isotropic(crowd, bandwidth);
    rasterize_normalize(&model, spec).expect("crowd KDE rasterizes")
}

fn density_layer(grid: ProbabilityGrid) -> MemoryLayer {
    let n = grid.values.len();
    MemoryLayer { grid, footprint: vec![true; n], kind: LayerKind::Fm }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case2Params {
    pub maps: usize,
    pub crowd_sizes: Vec<usize>,
    pub obstacle_count: usize,
    pub obstacle_margin: f64,
    pub bandwidth: f64,
    pub planner: PlannerParams,
    pub travel: TravelTimeModel,
    pub master_seed: u64,
}

impl Default for Case2Params {
    fn default() -> Self {
        Self {
            maps: 30,
            crowd_sizes: vec![30, 60, 100],
            obstacle_count: 15,
            obstacle_margin: 0.3,
            bandwidth: 0.5,
            planner: PlannerParams::default(),
            travel: TravelTimeModel::default(),
            master_seed: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case2Row {
    pub map_index: usize,
    pub map_seed: u64,
    pub crowd: usize,
    pub reached: bool,
    pub t_astar: f64,
    pub t_cg1: f64,
    pub t_cg2: f64,
    pub t_rho: f64,
    /// Improvement of RHO over plain A*.
    pub ts_rho: f64,
    pub ts_cg1: f64,
    pub ts_cg2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case2Report {
    pub rows: Vec<Case2Row>,
    /// Mean T_s of RHO vs A* per crowd size, aligned with `crowd_sizes`.
    pub crowd_sizes: Vec<usize>,
    pub mean_ts_rho: Vec<f64>,
    pub reached_rate: f64,
    pub fingerprint: String,
    pub master_seed: u64,
}

impl Case2Report {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "map_index,map_seed,crowd,reached,t_astar,t_cg1,t_cg2,t_rho,ts_rho,ts_cg1,ts_cg2\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.map_index,
                r.map_seed,
                r.crowd,
                r.reached,
                r.t_astar,
                r.t_cg1,
                r.t_cg2,
                r.t_rho,
                r.ts_rho,
                r.ts_cg1,
                r.ts_cg2
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Generate a map whose start and goal cells are connected for grid A*.
pub fn connected_map(
    base_seed: u64,
    count: usize,
    spec: GridSpec,
    margin: f64,
) -> (RandomMap, u64, GridGraph) {
    for attempt in 0..64 {
        let seed = base_seed.wrapping_add(attempt * 7919);
        let map = random_map(seed, count);
        let graph = GridGraph::from_obstacles(spec, &map.obstacles, margin);
        let s = spec.cell_of(map.start).expect("start on map");
        let g = spec.cell_of(map.goal).expect("goal on map");
        if astar(&graph, s, g).is_ok() {
            return (map, seed, graph);
        }
    }
    panic!("no connected map found near seed {base_seed}");
}

fn case2_cell(params: &Case2Params, map_index: usize, crowd_size: usize) -> Case2Row {
    let config = ScenarioConfig::from_toml(CASE2_TOML).expect("bundled scenario");
    let spec = config.grid_spec();
    let base_seed = params
        .master_seed
        .wrapping_add(map_index as u64 * 0x9E37_79B9);
    let (map, map_seed, graph) =
        connected_map(base_seed, params.obstacle_count, spec, params.obstacle_margin);
    let crowd_seed = map_seed ^ (crowd_size as u64).wrapping_mul(0xC2B2_AE35);
    let crowd = clustered_crowd(crowd_size, crowd_seed, &map, config.map_size);
    let density = crowd_density(&crowd, spec, params.bandwidth);
    let graph = graph.with_congestion(&density).expect("same spec");

    let s = spec.cell_of(map.start).expect("start cell");
    let g = spec.cell_of(map.goal).expect("goal cell");
    let p_astar = astar(&graph, s, g).expect("connected by construction");
    let p_cg1 = congestion_astar(&graph, s, g, CG1_LAMBDA).expect("connected");
    let p_cg2 = congestion_astar(&graph, s, g, CG2_LAMBDA).expect("connected");

    let fm = density_layer(density);
    let rho = plan(
        map.start,
        map.goal,
        &fm,
        &map.obstacles,
        &params.planner,
        map_seed ^ 0x5EED,
    );

    let time_of = |path: &[Vector2<f64>]| -> f64 {
        let count = corridor_count(path, &crowd, params.travel.half_width).expect("valid path");
        expected_travel_time(path, count as f64, &params.travel).expect("valid path")
    };
    let t_astar = time_of(&p_astar.points);
    let t_cg1 = time_of(&p_cg1.points);
    let t_cg2 = time_of(&p_cg2.points);
    let t_rho = if rho.reached { time_of(&rho.valid_path) } else { f64::NAN };
    let ts = |t: f64| {
        if t.is_nan() {
            f64::NAN
        } else {
            improvement_index(t_astar, t)
        }
    };
    Case2Row {
        map_index,
        map_seed,
        crowd: crowd_size,
        reached: rho.reached,
        t_astar,
        t_cg1,
        t_cg2,
        t_rho,
        ts_rho: ts(t_rho),
        ts_cg1: ts(t_cg1),
        ts_cg2: ts(t_cg2),
    }
}

pub fn run_case2(params: &Case2Params) -> Case2Report {
    let cells: Vec<(usize, usize)> = (0..params.maps)
        .flat_map(|m| params.crowd_sizes.iter().map(move |&c| (m, c)))
        .collect();
    let rows = exec::map_slice(&cells, |&(m, c)| case2_cell(params, m, c));
    let mean_ts_rho: Vec<f64> = params
        .crowd_sizes
        .iter()
        .map(|&c| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.crowd == c && r.reached)
                .map(|r| r.ts_rho)
                .collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect();
    let reached_rate =
        rows.iter().filter(|r| r.reached).count() as f64 / rows.len().max(1) as f64;
    let fp = fingerprint(&[
        CASE2_TOML,
        &serde_json::to_string(params).expect("params serialize"),
    ]);
    Case2Report {
        rows,
        crowd_sizes: params.crowd_sizes.clone(),
        mean_ts_rho,
        reached_rate,
        fingerprint: fp,
        master_seed: params.master_seed,
    }
}

// ---------------------------------------------------------------------------
// Case 3
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case3Params {
    pub seeds: usize,
    pub anomaly_counts: Vec<usize>,
    /// Evaluation instant (s).
    pub t_eval: f64,
    /// First anomaly activation (s); later events follow every `event_gap`.
    pub first_event: f64,
    pub event_gap: f64,
    pub dt: f64,
    pub bandwidth: f64,
    pub fov_radius: f64,
    pub planner: PlannerParams,
    pub travel: TravelTimeModel,
    pub master_seed: u64,
}

impl Default for Case3Params {
    fn default() -> Self {
        let planner = PlannerParams {
            waypoints: 5,
            max_spacing: 2.0,
            lookahead: 8.0,
            shrink_trigger: 8.0,
            goal_radius: 2.0,
            alpha: 600.0,
            ..Default::default()
        };
        Self {
            seeds: 3,
            anomaly_counts: vec![0, 5, 10, 15, 20],
            t_eval: 600.0,
            first_event: 100.0,
            event_gap: 20.0,
            dt: 0.5,
            bandwidth: 1.0,
            fov_radius: 50.0,
            planner,
            travel: TravelTimeModel::default(),
            master_seed: 777,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case3Row {
    pub seed: u64,
    pub anomalies: usize,
    pub reached: bool,
    pub t_astar: f64,
    pub t_rho: f64,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case3Report {
    pub rows: Vec<Case3Row>,
    pub anomaly_counts: Vec<usize>,
    /// Mean T_s over seeds per anomaly count, aligned with `anomaly_counts`.
    pub mean_ts: Vec<f64>,
    pub fingerprint: String,
    pub master_seed: u64,
}

impl Case3Report {
    pub fn csv(&self) -> String {
        let mut out = String::from("seed,anomalies,reached,t_astar,t_rho,ts\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.seed, r.anomalies, r.reached, r.t_astar, r.t_rho, r.ts
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scenario with `n_a` staggered anomaly events cycling over the base
/// attractor positions; every event persists once activated.
pub fn case3_scenario(base: &ScenarioConfig, params: &Case3Params, n_a: usize) -> ScenarioConfig {
    let mut config = base.clone();
    let positions = base.attractors.clone();
    assert!(!positions.is_empty(), "base scenario needs attractors");
    config.attractors = (0..n_a)
        .map(|k| {
            let mut a = positions[k % positions.len()].clone();
            a.active_from = params.first_event + k as f64 * params.event_gap;
            a.active_until = 1.0e9;
            a
        })
        .collect();
    config
}

fn case3_cell(
    base: &ScenarioConfig,
    olms: &[PeriodicOlmModel],
    params: &Case3Params,
    seed_index: usize,
    n_a: usize,
) -> Case3Row {
    let seed = params.master_seed + seed_index as u64;
    let config = case3_scenario(base, params, n_a);
    let spec = config.grid_spec();
    let olm = &olms[seed_index];

    let mut world = WorldState::new(seed);
    let warmup = (2.0 / params.dt).round() as usize;
    let pre_obs = params.t_eval - warmup as f64 * params.dt;
    while world.time < pre_obs - 1e-9 {
        step(&mut world, &config, params.dt);
    }
    let center = Vector2::new(config.map_size / 2.0, config.map_size / 2.0);
    let sensor = SensorModel::isotropic(0.15, 0.5, params.fov_radius, params.dt);
    let fm = observe_and_fuse(
        &world,
        &config,
        olm,
        center,
        &sensor,
        warmup,
        &FusionConfig::default(),
        params.bandwidth,
        seed,
    );
    while world.time < params.t_eval - 1e-9 {
        step(&mut world, &config, params.dt);
    }

    let start = Vector2::new(config.robot_start[0], config.robot_start[1]);
    let goal = Vector2::new(config.robot_goal[0], config.robot_goal[1]);
    let graph = GridGraph::from_obstacles(spec, &config.obstacle_list(), 0.3);
    let s = spec.cell_of(start).expect("start cell");
    let g = spec.cell_of(goal).expect("goal cell");
    let p_astar = astar(&graph, s, g).expect("open map");

    let rho = plan(
        start,
        goal,
        &fm,
        &config.obstacle_list(),
        &params.planner,
        seed ^ 0x3C3C,
    );

    let agents: Vec<Vector2<f64>> = world.agents.iter().map(|a| a.position).collect();
    let time_of = |path: &[Vector2<f64>]| -> f64 {
        let count = corridor_count(path, &agents, params.travel.half_width).expect("valid path");
        expected_travel_time(path, count as f64, &params.travel).expect("valid path")
    };
    let t_astar = time_of(&p_astar.points);
    let t_rho = if rho.reached { time_of(&rho.valid_path) } else { f64::NAN };
    let ts = if t_rho.is_nan() {
        f64::NAN
    } else {
        improvement_index(t_astar, t_rho)
    };
    Case3Row { seed, anomalies: n_a, reached: rho.reached, t_astar, t_rho, ts }
}

pub fn run_case3(params: &Case3Params) -> Case3Report {
    let base = ScenarioConfig::from_toml(CASE3_TOML).expect("bundled scenario");
    let olms: Vec<PeriodicOlmModel> = (0..params.seeds)
        .map(|i| {
            fit_olm(
                &base,
                180.0,
                6,
                720.0,
                params.dt,
                params.bandwidth,
                200,
                params.master_seed + i as u64,
            )
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..params.seeds)
        .flat_map(|s| params.anomaly_counts.iter().map(move |&n| (s, n)))
        .collect();
    let rows = exec::map_slice(&cells, |&(s, n)| case3_cell(&base, &olms, params, s, n));
    let mean_ts: Vec<f64> = params
        .anomaly_counts
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.anomalies == n && r.reached)
                .map(|r| r.ts)
                .collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect();
    let fp = fingerprint(&[
        CASE3_TOML,
        &serde_json::to_string(params).expect("params serialize"),
    ]);
    Case3Report {
        rows,
        anomaly_counts: params.anomaly_counts.clone(),
        mean_ts,
        fingerprint: fp,
        master_seed: params.master_seed,
    }
}
