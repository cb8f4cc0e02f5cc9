//! Subcommand implementations: thin glue between the CLI surface and the
//! library. Every output is deterministic for a fixed scenario and seed.

use crate::{AppError, Memory, Method};
use crowdmem::baselines::{astar, congestion_astar, GridGraph, CG1_LAMBDA, CG2_LAMBDA};
use crowdmem::cases::{
    fingerprint, observe_and_fuse, run_case1, run_case2, run_case3, Case1Params, Case2Params,
    Case3Params,
};
use crowdmem::eval::{
    corridor_count, expected_travel_time, improvement_index, pum_blend, TravelTimeModel,
};
use crowdmem::gridmap::ProbabilityGrid;
use crowdmem::memory::{olm_predict, FusionConfig, LayerKind, MemoryLayer, PeriodicOlmModel};
use crowdmem::planner::{plan, PlannerParams};
use crowdmem::simulator::{
    fit_olm, ground_truth_grid, step, trajectory_csv_header, trajectory_csv_rows, ScenarioConfig,
    WorldState,
};
use crowdmem::tracking::SensorModel;
use nalgebra::Vector2;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// Default fade horizon (s) of the partially-updated memory baseline.
const PUM_HORIZON: f64 = 40.0;

fn load_scenario(path: &Path) -> Result<(ScenarioConfig, String), AppError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = ScenarioConfig::from_toml(&raw)
        .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    Ok((config, raw))
}

fn ensure_out(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir)
        .map_err(|e| AppError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), AppError> {
    fs::write(dir.join(name), text)
        .map_err(|e| AppError::Runtime(format!("cannot write {name}: {e}")))
}

fn write_pgm(dir: &Path, name: &str, grid: &ProbabilityGrid) -> Result<(), AppError> {
    let mut buf = Vec::new();
    grid.write_pgm(&mut buf)
        .map_err(|e| AppError::Runtime(format!("cannot encode {name}: {e}")))?;
    fs::write(dir.join(name), buf)
        .map_err(|e| AppError::Runtime(format!("cannot write {name}: {e}")))
}

/// Historical prior fitted on the anomaly-free scenario. The cycle length
/// follows the slowest flow so every arrival pattern fits one cycle.
fn fit_scenario_olm(
    config: &ScenarioConfig,
    dt: f64,
    bandwidth: f64,
    seed: u64,
) -> PeriodicOlmModel {
    let cycle = config
        .flows
        .iter()
        .map(|f| f.period)
        .fold(0.0_f64, f64::max)
        .max(60.0);
    fit_olm(config, cycle, 6, 4.0 * cycle, dt, bandwidth, 200, seed)
}

fn fused_layer(
    config: &ScenarioConfig,
    olm: &PeriodicOlmModel,
    seed: u64,
    t_obs: f64,
    dt: f64,
    fov: f64,
    bandwidth: f64,
) -> Result<(MemoryLayer, MemoryLayer), AppError> {
    if t_obs <= 2.0 {
        return Err(AppError::Config("t-obs must exceed the 2 s warmup".into()));
    }
    let spec = config.grid_spec();
    let warmup = (2.0 / dt).round() as usize;
    let mut world = WorldState::new(seed);
    while world.time < t_obs - warmup as f64 * dt - 1e-9 {
        step(&mut world, config, dt);
    }
    let robot = Vector2::new(config.robot_start[0], config.robot_start[1]);
    let sensor = SensorModel::isotropic(0.15, 0.5, fov, dt);
    let fm = observe_and_fuse(
        &world,
        config,
        olm,
        robot,
        &sensor,
        warmup,
        &FusionConfig::default(),
        bandwidth,
        seed,
    );
    let olm_l = olm_predict(olm, t_obs, spec)
        .map_err(|e| AppError::Runtime(format!("prior prediction failed: {e}")))?;
    Ok((fm, olm_l))
}

fn memory_grid(
    memory: Memory,
    fm: &MemoryLayer,
    olm_l: &MemoryLayer,
    age: f64,
) -> Result<ProbabilityGrid, AppError> {
    match memory {
        Memory::Olm => Ok(olm_l.grid.clone()),
        Memory::Ppum => Ok(fm.grid.clone()),
        Memory::Pum => pum_blend(&olm_l.grid, &fm.grid, age, PUM_HORIZON)
            .map_err(|e| AppError::Runtime(format!("memory blend failed: {e}"))),
    }
}

fn density_layer(grid: ProbabilityGrid) -> MemoryLayer {
    let n = grid.values.len();
    MemoryLayer { grid, footprint: vec![true; n], kind: LayerKind::Fm }
}

/// Planner settings scaled to the scenario: wide maps get the long-range
/// sub-path geometry, small maps the fine-grained default.
fn planner_params(config: &ScenarioConfig) -> PlannerParams {
    if config.map_size > 30.0 {
        PlannerParams {
            max_spacing: 2.0,
            lookahead: 8.0,
            shrink_trigger: 8.0,
            goal_radius: 2.0,
            alpha: 600.0,
            ..PlannerParams::default()
        }
    } else {
        PlannerParams::default()
    }
}

#[derive(Serialize)]
struct SimulateMeta<'a> {
    scenario: &'a str,
    fingerprint: String,
    seed: u64,
    duration: f64,
    dt: f64,
    spawned: u64,
    exited: u64,
    snapshots: Vec<String>,
}

pub fn simulate(
    scenario: &Path,
    seed: u64,
    duration: f64,
    dt: f64,
    snapshot_every: f64,
    out: &Path,
) -> Result<(), AppError> {
    if duration <= 0.0 || dt <= 0.0 || snapshot_every <= 0.0 {
        return Err(AppError::Config("duration, dt and snapshot-every must be positive".into()));
    }
    let (config, raw) = load_scenario(scenario)?;
    ensure_out(out)?;

    let spec = config.grid_spec();
    let mut world = WorldState::new(seed);
    let mut log = String::from(trajectory_csv_header());
    let mut snapshots = Vec::new();
    let steps = (duration / dt).round() as usize;
    let snap_stride = (snapshot_every / dt).round().max(1.0) as usize;
    for s in 1..=steps {
        step(&mut world, &config, dt);
        trajectory_csv_rows(&world, &mut log);
        if s % snap_stride == 0 {
            let (grid, _) = ground_truth_grid(&world, spec, 0.5);
            let name = format!("truth_{:06.1}.pgm", world.time);
            write_pgm(out, &name, &grid)?;
            snapshots.push(name);
        }
    }
    write_text(out, "trajectories.csv", &log)?;
    let meta = SimulateMeta {
        scenario: &config.name,
        fingerprint: fingerprint(&[&raw, &format!("seed={seed} duration={duration} dt={dt}")]),
        seed,
        duration,
        dt,
        spawned: world.spawned,
        exited: world.exited,
        snapshots,
    };
    write_text(
        out,
        "meta.json",
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
}

#[derive(Serialize)]
struct FuseMeta<'a> {
    scenario: &'a str,
    fingerprint: String,
    seed: u64,
    t_obs: f64,
    fov: f64,
    bandwidth: f64,
    observed_cells: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn fuse(
    scenario: &Path,
    seed: u64,
    t_obs: f64,
    dt: f64,
    fov: f64,
    bandwidth: f64,
    out: &Path,
) -> Result<(), AppError> {
    let (config, raw) = load_scenario(scenario)?;
    ensure_out(out)?;
    let olm = fit_scenario_olm(&config, dt, bandwidth, seed);
    let (fm, olm_l) = fused_layer(&config, &olm, seed, t_obs, dt, fov, bandwidth)?;
    write_pgm(out, "olm.pgm", &olm_l.grid)?;
    write_pgm(out, "fm.pgm", &fm.grid)?;
    write_text(out, "fm.json", &fm.grid.to_json())?;
    write_text(out, "olm_model.toml", &olm.to_toml())?;
    let meta = FuseMeta {
        scenario: &config.name,
        fingerprint: fingerprint(&[&raw, &format!("seed={seed} t_obs={t_obs} fov={fov}")]),
        seed,
        t_obs,
        fov,
        bandwidth,
        observed_cells: fm.observed_cells(),
    };
    write_text(
        out,
        "meta.json",
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
}

#[derive(Serialize)]
struct PathReport {
    scenario: String,
    fingerprint: String,
    seed: u64,
    method: String,
    memory: String,
    reached: bool,
    length: f64,
    waypoints: Vec<[f64; 2]>,
}

fn method_path(
    method: Method,
    config: &ScenarioConfig,
    grid: &ProbabilityGrid,
    params: &PlannerParams,
    seed: u64,
) -> Result<(bool, Vec<Vector2<f64>>), AppError> {
    let start = Vector2::new(config.robot_start[0], config.robot_start[1]);
    let goal = Vector2::new(config.robot_goal[0], config.robot_goal[1]);
    let obstacles = config.obstacle_list();
    match method {
        Method::Rho => {
            let fm = density_layer(grid.clone());
            let result = plan(start, goal, &fm, &obstacles, params, seed);
            Ok((result.reached, result.valid_path))
        }
        Method::Astar | Method::Cg1 | Method::Cg2 => {
            let spec = config.grid_spec();
            let graph = GridGraph::from_obstacles(spec, &obstacles, params.obstacle_margin)
                .with_congestion(grid)
                .map_err(|e| AppError::Runtime(format!("graph build failed: {e}")))?;
            let s = spec
                .cell_of(start)
                .ok_or_else(|| AppError::Config("robot start outside grid".into()))?;
            let g = spec
                .cell_of(goal)
                .ok_or_else(|| AppError::Config("robot goal outside grid".into()))?;
            let path = match method {
                Method::Astar => astar(&graph, s, g),
                Method::Cg1 => congestion_astar(&graph, s, g, CG1_LAMBDA),
                Method::Cg2 => congestion_astar(&graph, s, g, CG2_LAMBDA),
                Method::Rho => unreachable!(),
            }
            .map_err(|e| AppError::Runtime(format!("grid search failed: {e}")))?;
            Ok((true, path.points))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn plan_query(
    scenario: &Path,
    seed: u64,
    method: Method,
    memory: Memory,
    t_obs: f64,
    age: f64,
    dt: f64,
    fov: f64,
    bandwidth: f64,
    out: &Path,
) -> Result<(), AppError> {
    let (config, raw) = load_scenario(scenario)?;
    ensure_out(out)?;
    let olm = fit_scenario_olm(&config, dt, bandwidth, seed);
    let (fm, olm_l) = fused_layer(&config, &olm, seed, t_obs, dt, fov, bandwidth)?;
    let grid = memory_grid(memory, &fm, &olm_l, age)?;
    let params = planner_params(&config);
    let (reached, points) = method_path(method, &config, &grid, &params, seed)?;
    if !reached {
        return Err(AppError::Runtime("planner did not reach the goal".into()));
    }
    write_pgm(out, "memory.pgm", &grid)?;
    let report = PathReport {
        scenario: config.name.clone(),
        fingerprint: fingerprint(&[&raw, &format!("seed={seed} t_obs={t_obs}")]),
        seed,
        method: format!("{method:?}").to_lowercase(),
        memory: format!("{memory:?}").to_lowercase(),
        length: crowdmem::eval::path_length(&points),
        reached,
        waypoints: points.iter().map(|p| [p.x, p.y]).collect(),
    };
    write_text(
        out,
        "path.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )
}

#[derive(Serialize)]
struct MethodEval {
    method: String,
    reached: bool,
    length: f64,
    corridor_count: usize,
    travel_time: f64,
    /// Improvement over the plain grid search benchmark.
    ts: f64,
}

#[derive(Serialize)]
struct EvalReport {
    scenario: String,
    fingerprint: String,
    seed: u64,
    memory: String,
    t_obs: f64,
    methods: Vec<MethodEval>,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    scenario: &Path,
    seed: u64,
    memory: Memory,
    t_obs: f64,
    dt: f64,
    fov: f64,
    bandwidth: f64,
    out: &Path,
) -> Result<(), AppError> {
    let (config, raw) = load_scenario(scenario)?;
    let start = Vector2::new(config.robot_start[0], config.robot_start[1]);
    let goal = Vector2::new(config.robot_goal[0], config.robot_goal[1]);
    if (start - goal).norm() < 1.0 {
        return Err(AppError::Config(
            "scenario has no planning query: robot start and goal coincide".into(),
        ));
    }
    ensure_out(out)?;
    let olm = fit_scenario_olm(&config, dt, bandwidth, seed);
    let (fm, olm_l) = fused_layer(&config, &olm, seed, t_obs, dt, fov, bandwidth)?;
    let grid = memory_grid(memory, &fm, &olm_l, 0.0)?;
    let params = planner_params(&config);

    let mut world = WorldState::new(seed);
    while world.time < t_obs - 1e-9 {
        step(&mut world, &config, dt);
    }
    let agents: Vec<Vector2<f64>> = world.agents.iter().map(|a| a.position).collect();
    let travel = TravelTimeModel::default();

    let order = [Method::Astar, Method::Cg1, Method::Cg2, Method::Rho];
    let mut evals = Vec::new();
    let mut t_bench = f64::NAN;
    for method in order {
        let (reached, points) = method_path(method, &config, &grid, &params, seed)?;
        let count = corridor_count(&points, &agents, travel.half_width)
            .map_err(|e| AppError::Runtime(format!("corridor count failed: {e}")))?;
        let time = expected_travel_time(&points, count as f64, &travel)
            .map_err(|e| AppError::Runtime(format!("travel time failed: {e}")))?;
        if method == Method::Astar {
            t_bench = time;
        }
        evals.push(MethodEval {
            method: format!("{method:?}").to_lowercase(),
            reached,
            length: crowdmem::eval::path_length(&points),
            corridor_count: count,
            travel_time: time,
            ts: improvement_index(t_bench, time),
        });
    }
    let report = EvalReport {
        scenario: config.name.clone(),
        fingerprint: fingerprint(&[&raw, &format!("seed={seed} t_obs={t_obs}")]),
        seed,
        memory: format!("{memory:?}").to_lowercase(),
        t_obs,
        methods: evals,
    };
    write_text(
        out,
        "evaluation.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )
}

pub fn reproduce(
    case: u8,
    reps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), AppError> {
    if let Some(r) = reps {
        if r == 0 {
            return Err(AppError::Config("reps must be at least 1".into()));
        }
    }
    ensure_out(out)?;
    let (json, csv) = match case {
        1 => {
            let mut params = Case1Params::default();
            if let Some(r) = reps {
                params.runs = r;
            }
            if let Some(s) = seed {
                params.master_seed = s;
            }
            let report = run_case1(&params);
            (report.to_json(), report.csv())
        }
        2 => {
            let mut params = Case2Params::default();
            if let Some(r) = reps {
                params.maps = r;
            }
            if let Some(s) = seed {
                params.master_seed = s;
            }
            let report = run_case2(&params);
            (report.to_json(), report.csv())
        }
        3 => {
            let mut params = Case3Params::default();
            if let Some(r) = reps {
                params.seeds = r;
            }
            if let Some(s) = seed {
                params.master_seed = s;
            }
            let report = run_case3(&params);
            (report.to_json(), report.csv())
        }
        other => {
            return Err(AppError::Config(format!("unknown case {other}: expected 1, 2 or 3")))
        }
    };
    write_text(out, "report.json", &json)?;
    write_text(out, "report.csv", &csv)
}
