//! Synthetic gate-flow crowd simulator.
//!
//! Agents spawn in groups at labeled gates on a periodic schedule, walk their
//! route at a sampled preferred speed with wall repulsion, optionally divert
//! to circular attractors, and despawn at their exit gate. The world exposes
//! a noisy FOV-limited sensor feed and a KDE ground-truth density grid.
//! Motion is deliberately simple: density fields are evaluated, not
//! microscopic pedestrian realism.

use std::fmt;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{rasterize_normalize, GridSpec, MixtureModel, ProbabilityGrid};
use crate::memory::{OlmBin, PeriodicOlmModel};
use crate::planner::Obstacle;
use crate::tracking::SensorModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub label: String,
    pub position: [f64; 2],
}

/// Periodic spawn stream between two gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub entry: String,
    pub exit: String,
    /// Spawn period (s).
    pub period: f64,
    pub group_mean: f64,
    pub group_std: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Optional intermediate route waypoints between entry and exit.
    #[serde(default)]
    pub route: Vec<[f64; 2]>,
    /// First spawn time offset (s).
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorCfg {
    pub center: [f64; 2],
    pub radius: f64,
    /// Dwell duration once an agent reaches the center (s).
    pub dwell: f64,
    pub active_from: f64,
    pub active_until: f64,
}

impl AttractorCfg {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active_from && t < self.active_until
    }
}

/// Axis-aligned wall segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCfg {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Square map side length (m).
    pub map_size: f64,
    pub grid_resolution: usize,
    pub robot_start: [f64; 2],
    pub robot_goal: [f64; 2],
    #[serde(default)]
    pub walls: Vec<Wall>,
    pub gates: Vec<Gate>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    #[serde(default)]
    pub attractors: Vec<AttractorCfg>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleCfg>,
    /// Radius of the random spawn offset around the entry gate (m).
    #[serde(default = "default_spawn_spread")]
    pub spawn_spread: f64,
}

fn default_spawn_spread() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self, SimError> {
        let config: Self = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.map_size <= 0.0 {
            return Err(SimError::Schema("map_size must be positive".into()));
        }
        if self.grid_resolution == 0 {
            return Err(SimError::Schema("grid_resolution must be positive".into()));
        }
        if self.spawn_spread < 0.0 {
            return Err(SimError::Schema("spawn_spread must be non-negative".into()));
        }
        for gate in &self.gates {
            if !self.inside(Vector2::new(gate.position[0], gate.position[1])) {
                return Err(SimError::Schema(format!(
                    "gate '{}' lies outside the map",
                    gate.label
                )));
            }
        }
        for (i, flow) in self.flows.iter().enumerate() {
            for label in [&flow.entry, &flow.exit] {
                if !self.gates.iter().any(|g| &g.label == label) {
                    return Err(SimError::Schema(format!(
                        "flow {i} references unknown gate '{label}'"
                    )));
                }
            }
            if flow.period <= 0.0 {
                return Err(SimError::Schema(format!("flow {i}: period must be positive")));
            }
            if flow.group_std < 0.0 || flow.speed_std < 0.0 {
                return Err(SimError::Schema(format!(
                    "flow {i}: distribution std must be non-negative"
                )));
            }
            if flow.speed_mean <= 0.0 {
                return Err(SimError::Schema(format!("flow {i}: speed_mean must be positive")));
            }
        }
        for (i, a) in self.attractors.iter().enumerate() {
            if a.radius <= 0.0 {
                return Err(SimError::Schema(format!("attractor {i}: radius must be positive")));
            }
            if a.dwell < 0.0 {
                return Err(SimError::Schema(format!("attractor {i}: dwell must be non-negative")));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.radius <= 0.0 {
                return Err(SimError::Schema(format!("obstacle {i}: radius must be positive")));
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.map_size, self.grid_resolution, Vector2::zeros())
    }

    pub fn gate_position(&self, label: &str) -> Option<Vector2<f64>> {
        self.gates
            .iter()
            .find(|g| g.label == label)
            .map(|g| Vector2::new(g.position[0], g.position[1]))
    }

    pub fn obstacle_list(&self) -> Vec<Obstacle> {
        self.obstacles
            .iter()
            .map(|o| Obstacle::new(Vector2::new(o.center[0], o.center[1]), o.radius))
            .collect()
    }

    fn inside(&self, p: Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.map_size && p.y <= self.map_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Transit,
    /// Diverting toward attractor `0`.
    Attracted(usize),
    Dwelling(usize),
    Resuming(usize),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Transit => write!(f, "transit"),
            Phase::Attracted(i) => write!(f, "attracted:{i}"),
            Phase::Dwelling(i) => write!(f, "dwelling:{i}"),
            Phase::Resuming(i) => write!(f, "resuming:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u64,
    pub position: Vector2<f64>,
    pub speed: f64,
    pub route: Vec<Vector2<f64>>,
    pub route_idx: usize,
    pub phase: Phase,
    /// End time of the current dwell, meaningful in `Dwelling`.
    pub dwell_until: f64,
    /// Attractors this agent already visited; each diverts an agent once.
    pub visited: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub agents: Vec<Agent>,
    pub spawned: u64,
    pub exited: u64,
    next_id: u64,
    rng: ChaCha8Rng,
}

/// Distance below which an agent counts as having reached a route point.
const ARRIVE_RADIUS: f64 = 0.3;
/// Wall repulsion range (m) and gain (m/s per m of penetration).
const WALL_RANGE: f64 = 0.4;
const WALL_GAIN: f64 = 2.0;

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> (f64, Vector2<f64>) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 < 1e-24 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    let closest = a + ab * t;
    ((p - closest).norm(), closest)
}

/// One standard normal draw (Box-Muller).
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normal_sample(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    mean + std * std_normal(rng)
}

impl WorldState {
    pub fn new(seed: u64) -> Self {
        Self {
            time: 0.0,
            agents: Vec::new(),
            spawned: 0,
            exited: 0,
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn spawn_flow(world: &mut WorldState, config: &ScenarioConfig, flow: &Flow) {
    let entry = config.gate_position(&flow.entry).expect("validated gate");
    let exit = config.gate_position(&flow.exit).expect("validated gate");
    let group = normal_sample(&mut world.rng, flow.group_mean, flow.group_std)
        .round()
        .max(0.0) as usize;
    for _ in 0..group {
        let speed = normal_sample(&mut world.rng, flow.speed_mean, flow.speed_std).max(0.1);
        let angle = world.rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let r = config.spawn_spread * world.rng.gen_range(0.0f64..1.0).sqrt();
        let mut pos = entry + Vector2::new(angle.cos(), angle.sin()) * r;
        pos.x = pos.x.clamp(0.0, config.map_size);
        pos.y = pos.y.clamp(0.0, config.map_size);
        let mut route: Vec<Vector2<f64>> = Vec::with_capacity(flow.route.len() + 1);
        route.extend(flow.route.iter().map(|p| Vector2::new(p[0], p[1])));
        route.push(exit);
        world.agents.push(Agent {
            id: world.next_id,
            position: pos,
            speed,
            route,
            route_idx: 0,
            phase: Phase::Transit,
            dwell_until: 0.0,
            visited: vec![false; config.attractors.len()],
        });
        world.next_id += 1;
        world.spawned += 1;
    }
}

/// Advance the world by `dt` seconds: spawn due flows, move agents, apply
/// the attractor automaton, and despawn agents that reach their exit.
pub fn step(world: &mut WorldState, config: &ScenarioConfig, dt: f64) {
    assert!(dt > 0.0, "dt must be positive");
    let t0 = world.time;
    let t1 = t0 + dt;

    // spawn every flow whose k-th spawn time falls inside [t0, t1)
    for flow in &config.flows {
        let mut k = if t0 <= flow.offset {
            0
        } else {
            ((t0 - flow.offset) / flow.period).ceil() as u64
        };
        loop {
            let spawn_t = flow.offset + k as f64 * flow.period;
            if spawn_t >= t1 {
                break;
            }
            if spawn_t >= t0 {
                spawn_flow(world, config, flow);
            }
            k += 1;
        }
    }

    let attractors = &config.attractors;
    let mut done: Vec<usize> = Vec::new();
    for (ai, agent) in world.agents.iter_mut().enumerate() {
        // attractor automaton
        match agent.phase {
            Phase::Transit => {
                for (i, a) in attractors.iter().enumerate() {
                    if a.is_active(t0) && !agent.visited[i] {
                        let c = Vector2::new(a.center[0], a.center[1]);
                        if (agent.position - c).norm() <= a.radius {
                            agent.visited[i] = true;
                            agent.phase = Phase::Attracted(i);
                            break;
                        }
                    }
                }
            }
            Phase::Attracted(i) => {
                let c = Vector2::new(attractors[i].center[0], attractors[i].center[1]);
                if (agent.position - c).norm() <= ARRIVE_RADIUS {
                    agent.phase = Phase::Dwelling(i);
                    agent.dwell_until = t0 + attractors[i].dwell;
                }
            }
            Phase::Dwelling(i) => {
                if t0 >= agent.dwell_until {
                    agent.phase = Phase::Resuming(i);
                }
            }
            Phase::Resuming(i) => {
                let c = Vector2::new(attractors[i].center[0], attractors[i].center[1]);
                if (agent.position - c).norm() > attractors[i].radius {
                    agent.phase = Phase::Transit;
                }
            }
        }

        // target selection and motion
        let target = match agent.phase {
            Phase::Attracted(i) => {
                Some(Vector2::new(attractors[i].center[0], attractors[i].center[1]))
            }
            Phase::Dwelling(_) => None,
            _ => Some(agent.route[agent.route_idx]),
        };
        if let Some(target) = target {
            let to_target = target - agent.position;
            let dist = to_target.norm();
            let mut velocity = if dist > 1e-9 {
                to_target / dist * agent.speed
            } else {
                Vector2::zeros()
            };
            for wall in &config.walls {
                let a = Vector2::new(wall.from[0], wall.from[1]);
                let b = Vector2::new(wall.to[0], wall.to[1]);
                let (d, closest) = point_segment_distance(agent.position, a, b);
                if d < WALL_RANGE && d > 1e-9 {
                    velocity += (agent.position - closest) / d * WALL_GAIN * (WALL_RANGE - d);
                }
            }
            agent.position += velocity * dt;
            agent.position.x = agent.position.x.clamp(0.0, config.map_size);
            agent.position.y = agent.position.y.clamp(0.0, config.map_size);
        }

        // route progression and exit
        if matches!(agent.phase, Phase::Transit | Phase::Resuming(_)) {
            while agent.route_idx < agent.route.len()
                && (agent.position - agent.route[agent.route_idx]).norm() <= ARRIVE_RADIUS
            {
                agent.route_idx += 1;
            }
            if agent.route_idx >= agent.route.len() {
                done.push(ai);
            }
        }
    }

    for &ai in done.iter().rev() {
        world.agents.remove(ai);
        world.exited += 1;
    }
    world.time = t1;
}

/// Noisy position measurements of every agent within the sensor FOV.
pub fn observe(
    world: &WorldState,
    robot: Vector2<f64>,
    sensor: &SensorModel,
    rng: &mut ChaCha8Rng,
) -> Vec<(u64, Vector2<f64>)> {
    assert!(sensor.fov_radius > 0.0, "fov_radius must be positive");
    let chol = sensor
        .measurement_noise
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(nalgebra::Matrix2::zeros);
    world
        .agents
        .iter()
        .filter(|a| (a.position - robot).norm() <= sensor.fov_radius)
        .map(|a| {
            let z = Vector2::new(std_normal(rng), std_normal(rng));
            (a.id, a.position + chol * z)
        })
        .collect()
}

/// KDE ground-truth density: an equal-weight isotropic Gaussian per agent,
/// rasterized and normalized. Returns the uniform grid with `empty = true`
/// when no agents are present.
pub fn ground_truth_grid(
    world: &WorldState,
    spec: GridSpec,
    bandwidth: f64,
) -> (ProbabilityGrid, bool) {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    if world.agents.is_empty() {
        return (ProbabilityGrid::uniform(spec), true);
    }
    let points: Vec<Vector2<f64>> = world.agents.iter().map(|a| a.position).collect();
    let model = MixtureModel::equal_weight_isotropic(&points, bandwidth);
    (
        rasterize_normalize(&model, spec).expect("nonempty KDE rasterizes"),
        false,
    )
}

/// One CSV row per agent per logged step: time, id, x, y, phase.
pub fn trajectory_csv_header() -> &'static str {
    "time,id,x,y,phase\n"
}

pub fn trajectory_csv_rows(world: &WorldState, out: &mut String) {
    use fmt::Write;
    for a in &world.agents {
        writeln!(
            out,
            "{:.3},{},{:.6},{:.6},{}",
            world.time, a.id, a.position.x, a.position.y, a.phase
        )
        .expect("string write");
    }
}

/// Fit a periodic OLM schedule by simulating the scenario without attractors
/// and pooling agent positions per time bin across the cycle.
///
/// `component_cap` bounds the mixture size per bin by uniform subsampling.
#[allow(clippy::too_many_arguments)]
pub fn fit_olm(
    config: &ScenarioConfig,
    cycle_length: f64,
    bin_count: usize,
    sim_duration: f64,
    dt: f64,
    bandwidth: f64,
    component_cap: usize,
    seed: u64,
) -> PeriodicOlmModel {
    assert!(cycle_length > 0.0 && bin_count > 0 && component_cap > 0);
    let mut calm = config.clone();
    calm.attractors.clear();
    let mut world = WorldState::new(seed);
    let bin_len = cycle_length / bin_count as f64;
    let mut pools: Vec<Vec<Vector2<f64>>> = vec![Vec::new(); bin_count];
    let steps = (sim_duration / dt).round() as usize;
    for _ in 0..steps {
        step(&mut world, &calm, dt);
        let phase = world.time.rem_euclid(cycle_length);
        let bin = ((phase / bin_len) as usize).min(bin_count - 1);
        pools[bin].extend(world.agents.iter().map(|a| a.position));
    }
    let bins = pools
        .into_iter()
        .enumerate()
        .map(|(i, mut pool)| {
            if pool.len() > component_cap {
                let stride = pool.len() as f64 / component_cap as f64;
                pool = (0..component_cap)
                    .map(|k| pool[(k as f64 * stride) as usize])
                    .collect();
            }
            let mixture = if pool.is_empty() {
                MixtureModel::new(Vec::new())
            } else {
                MixtureModel::equal_weight_isotropic(&pool, bandwidth)
            };
            OlmBin { start: i as f64 * bin_len, mixture }
        })
        .collect();
    PeriodicOlmModel::new(cycle_length, bins)
}
