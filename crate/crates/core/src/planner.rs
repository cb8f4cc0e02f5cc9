//! Receding-horizon path planner over the fused memory.
//!
//! The global query is split into sub-path optimizations: each iteration
//! solves an n-waypoint constrained sub-problem anchored at the previous
//! sub-path's second node, commits that second node to the valid path, and
//! stops once the sub-path end node enters the goal inflation radius.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::exec;
use crate::gridmap::probability_at;
use crate::memory::MemoryLayer;
use crate::optim::nelder_mead;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("sub-problem infeasible: no restart satisfied the constraints")]
    Infeasible,
}

/// Circular obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Obstacle {
    pub center: Vector2<f64>,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: Vector2<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "obstacle radius must be positive");
        Self { center, radius }
    }

    /// Inflated keep-out radius d_j = r_j + d_safe.
    pub fn inflated(&self, d_safe: f64) -> f64 {
        self.radius + d_safe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct PlannerParams {
    /// Waypoints per sub-path (n).
    pub waypoints: usize,
    /// Max inter-waypoint spacing d_I (m).
    pub max_spacing: f64,
    /// Look-ahead distance d_l (m).
    pub lookahead: f64,
    /// Distance d_r at which spacing/length limits shrink.
    pub shrink_trigger: f64,
    /// Goal inflation radius d_s (m).
    pub goal_radius: f64,
    /// Obstacle inflation d_safe (m).
    pub obstacle_margin: f64,
    /// Probability-cost weighting α (1/m).
    pub alpha: f64,
    /// Multi-start count per sub-problem.
    pub restarts: usize,
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    pub nm_max_iter: usize,
    pub nm_ftol: f64,
    /// Residuals up to this value count as satisfied.
    pub feasibility_tol: f64,
    /// Extra clearance the solver adds on top of d_safe so accepted paths
    /// keep a strict margin against the inflated discs.
    pub safety_margin: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        let lookahead = 4.0;
        let waypoints = 5;
        Self {
            waypoints,
            max_spacing: lookahead / waypoints as f64,
            lookahead,
            shrink_trigger: lookahead,
            goal_radius: 0.5,
            obstacle_margin: 0.3,
            alpha: 300.0,
            restarts: 5,
            penalty_start: 10.0,
            penalty_growth: 10.0,
            penalty_rounds: 4,
            nm_max_iter: 220,
            nm_ftol: 1e-10,
            feasibility_tol: 1e-6,
            safety_margin: 1e-3,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) {
        assert!(self.waypoints >= 2);
        assert!(self.max_spacing > 0.0 && self.lookahead > 0.0);
        assert!(self.shrink_trigger > 0.0 && self.goal_radius > 0.0);
        assert!(self.obstacle_margin > 0.0 && self.alpha > 0.0);
        assert!(
            self.lookahead <= self.waypoints as f64 * self.max_spacing,
            "lookahead unreachable with given spacing"
        );
    }
}

/// One solved sub-path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubPath {
    pub waypoints: Vec<Vector2<f64>>,
    pub cost: f64,
    pub d_e2g: f64,
    pub max_residual: f64,
    /// Some waypoint fell outside the memory grid (counted as probability 0).
    pub out_of_grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationDiag {
    pub cost: f64,
    pub d_e2g: f64,
    pub max_residual: f64,
    pub out_of_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub valid_path: Vec<Vector2<f64>>,
    pub iterations: Vec<IterationDiag>,
    pub reached: bool,
}

impl PathResult {
    pub fn length(&self) -> f64 {
        self.valid_path
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("path serializes")
    }
}

/// Sub-path objective: summed waypoint-to-goal distances plus the crowd
/// probability term scaled by α·d_e2g. Out-of-grid waypoints contribute zero
/// probability; the flag reports that this happened.
pub fn subpath_cost_flagged(
    waypoints: &[Vector2<f64>],
    goal: Vector2<f64>,
    fm: &MemoryLayer,
    params: &PlannerParams,
) -> (f64, bool) {
    let dist_sum: f64 = waypoints.iter().map(|wp| (wp - goal).norm()).sum();
    let mut out_of_grid = false;
    let prob_sum: f64 = waypoints
        .iter()
        .map(|wp| match probability_at(&fm.grid, *wp) {
            Ok(p) => p,
            Err(_) => {
                out_of_grid = true;
                0.0
            }
        })
        .sum();
    let d_e2g = (waypoints[waypoints.len() - 1] - goal).norm();
    (dist_sum + params.alpha * d_e2g * prob_sum, out_of_grid)
}

pub fn subpath_cost(
    waypoints: &[Vector2<f64>],
    goal: Vector2<f64>,
    fm: &MemoryLayer,
    params: &PlannerParams,
) -> f64 {
    subpath_cost_flagged(waypoints, goal, fm, params).0
}

/// Max segment length from `wp_i` along heading `theta` before entering the
/// inflated disc; `None` when the ray misses it.
pub fn obstacle_chord_limit(
    wp: Vector2<f64>,
    obstacle: &Obstacle,
    theta: f64,
    d_safe: f64,
) -> Option<f64> {
    let a = (wp - obstacle.center).norm();
    let d_j = obstacle.inflated(d_safe);
    let (sin_t, cos_t) = theta.sin_cos();
    if cos_t <= 0.0 {
        return None;
    }
    if a <= d_j {
        // on or inside the inflated boundary: any forward move re-enters
        return Some(0.0);
    }
    let disc = d_j * d_j - a * a * sin_t * sin_t;
    if disc < 0.0 {
        return None;
    }
    // near intersection root of the law-of-cosines quadratic
    Some(a * cos_t - disc.sqrt())
}

/// Spacing and total-length limits for a sub-path ending at `d_e2g`.
fn limits(d_e2g: f64, params: &PlannerParams) -> (f64, f64) {
    if d_e2g > params.shrink_trigger {
        (params.max_spacing, params.lookahead)
    } else {
        (params.max_spacing / params.waypoints as f64, d_e2g)
    }
}

/// All constraint residuals of a candidate sub-path; every value ≤ 0 means
/// the constraint is satisfied.
pub fn constraint_residuals(
    waypoints: &[Vector2<f64>],
    goal: Vector2<f64>,
    obstacles: &[Obstacle],
    params: &PlannerParams,
) -> Vec<f64> {
    let d_e2g = (waypoints[waypoints.len() - 1] - goal).norm();
    let (spacing_limit, length_limit) = limits(d_e2g, params);

    let mut residuals = Vec::new();
    let mut total = 0.0;
    for seg in waypoints.windows(2) {
        let len = (seg[1] - seg[0]).norm();
        total += len;
        residuals.push(len - spacing_limit);
        // chord limit against the tightest blocking obstacle
        if len > 1e-12 {
            let dir = (seg[1] - seg[0]) / len;
            let mut chord: Option<f64> = None;
            for obs in obstacles {
                let to_obs = obs.center - seg[0];
                let cos_t = (dir.dot(&to_obs) / to_obs.norm().max(1e-300)).clamp(-1.0, 1.0);
                let theta = cos_t.acos();
                if let Some(limit) = obstacle_chord_limit(seg[0], obs, theta, params.obstacle_margin)
                {
                    chord = Some(chord.map_or(limit, |c: f64| c.min(limit)));
                }
            }
            if let Some(limit) = chord {
                residuals.push(len - limit);
            }
        }
    }
    residuals.push(total - length_limit);
    for wp in waypoints {
        for obs in obstacles {
            residuals.push(obs.inflated(params.obstacle_margin) - (wp - obs.center).norm());
        }
    }
    residuals
}

pub fn max_residual(
    waypoints: &[Vector2<f64>],
    goal: Vector2<f64>,
    obstacles: &[Obstacle],
    params: &PlannerParams,
) -> f64 {
    constraint_residuals(waypoints, goal, obstacles, params)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn decode(anchor: Vector2<f64>, x: &[f64]) -> Vec<Vector2<f64>> {
    let mut wps = Vec::with_capacity(x.len() / 2 + 1);
    wps.push(anchor);
    for pair in x.chunks_exact(2) {
        wps.push(Vector2::new(pair[0], pair[1]));
    }
    wps
}

/// Evenly spaced points along the goal direction, conservative enough to be
/// feasible away from obstacles in both spacing branches.
fn straight_init(anchor: Vector2<f64>, goal: Vector2<f64>, params: &PlannerParams) -> Vec<f64> {
    let n = params.waypoints;
    let d = (goal - anchor).norm();
    let u = if d > 1e-12 {
        (goal - anchor) / d
    } else {
        Vector2::new(1.0, 0.0)
    };
    let step_regular = params.max_spacing.min(params.lookahead / (n - 1) as f64);
    let step = if d - (n - 1) as f64 * step_regular > params.shrink_trigger {
        step_regular
    } else {
        (params.max_spacing / n as f64).min(d / (2.0 * (n - 1) as f64))
    };
    let mut x = Vec::with_capacity(2 * (n - 1));
    for i in 1..n {
        let p = anchor + u * (i as f64 * step);
        x.push(p.x);
        x.push(p.y);
    }
    x
}

fn random_init(
    anchor: Vector2<f64>,
    goal: Vector2<f64>,
    params: &PlannerParams,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = params.waypoints;
    let d = (goal - anchor).norm();
    let base_angle = if d > 1e-12 {
        (goal.y - anchor.y).atan2(goal.x - anchor.x)
    } else {
        0.0
    };
    let step_regular = params.max_spacing.min(params.lookahead / (n - 1) as f64);
    let base_step = if d - (n - 1) as f64 * step_regular > params.shrink_trigger {
        step_regular
    } else {
        (params.max_spacing / n as f64).min(d / (2.0 * (n - 1) as f64))
    };
    let mut x = Vec::with_capacity(2 * (n - 1));
    let mut prev = anchor;
    for _ in 1..n {
        let angle = base_angle + rng.gen_range(-1.2..1.2);
        let step = base_step * rng.gen_range(0.4..1.0);
        let mut p = prev + Vector2::new(angle.cos(), angle.sin()) * step;
        let off = p - anchor;
        let max_r = 0.95 * params.lookahead;
        if off.norm() > max_r {
            p = anchor + off / off.norm() * max_r;
        }
        x.push(p.x);
        x.push(p.y);
        prev = p;
    }
    x
}

/// Alternating projection onto the feasible set: push waypoints out of the
/// inflated discs, truncate segments that exceed the spacing or chord limits,
/// and rescale the tail when the total length runs over. The limits depend on
/// d_e2g, so each pass recomputes them.
fn repair(
    waypoints: &mut [Vector2<f64>],
    goal: Vector2<f64>,
    obstacles: &[Obstacle],
    params: &PlannerParams,
) {
    let eps = 1e-9;
    for _ in 0..100 {
        if max_residual(waypoints, goal, obstacles, params) <= 0.0 {
            return;
        }
        for wp in waypoints.iter_mut().skip(1) {
            for obs in obstacles {
                let d_j = obs.inflated(params.obstacle_margin);
                let off = *wp - obs.center;
                let dist = off.norm();
                if dist < d_j + eps {
                    let dir = if dist > 1e-12 { off / dist } else { Vector2::new(1.0, 0.0) };
                    *wp = obs.center + dir * (d_j + eps);
                }
            }
        }
        let d_e2g = (waypoints[waypoints.len() - 1] - goal).norm();
        let (spacing_limit, length_limit) = limits(d_e2g, params);
        for i in 1..waypoints.len() {
            let prev = waypoints[i - 1];
            let seg = waypoints[i] - prev;
            let len = seg.norm();
            if len < 1e-12 {
                continue;
            }
            let dir = seg / len;
            let mut limit = spacing_limit;
            for obs in obstacles {
                let to_obs = obs.center - prev;
                let cos_t = (dir.dot(&to_obs) / to_obs.norm().max(1e-300)).clamp(-1.0, 1.0);
                let theta = cos_t.acos();
                if let Some(c) = obstacle_chord_limit(prev, obs, theta, params.obstacle_margin) {
                    limit = limit.min(c);
                }
            }
            if len > limit {
                waypoints[i] = prev + dir * (limit - eps).max(0.0);
            }
        }
        let total: f64 = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        if total > length_limit {
            let scale = (length_limit / total) * (1.0 - eps);
            let mut prev_old = waypoints[0];
            let mut prev_new = waypoints[0];
            for wp in waypoints.iter_mut().skip(1) {
                let seg = *wp - prev_old;
                prev_old = *wp;
                *wp = prev_new + seg * scale;
                prev_new = *wp;
            }
        }
    }
}

/// Warm-start variables from the previous sub-path: drop its first leg and
/// extend toward the goal so the new sub-path starts at the new anchor.
fn shifted_init(
    previous: &[Vector2<f64>],
    goal: Vector2<f64>,
    params: &PlannerParams,
) -> Vec<f64> {
    let n = params.waypoints;
    let mut wps: Vec<Vector2<f64>> = previous[1..].to_vec();
    while wps.len() < n {
        let last = *wps.last().expect("previous sub-path is non-empty");
        let to_goal = goal - last;
        let d = to_goal.norm();
        let step = (0.9 * params.max_spacing).min(d / 2.0);
        let dir = if d > 1e-12 { to_goal / d } else { Vector2::new(1.0, 0.0) };
        wps.push(last + dir * step);
    }
    wps[1..n].iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Solve one sub-path optimization by multi-start penalized Nelder-Mead.
///
/// `warm` carries the previous iteration's sub-path; reusing it as the first
/// restart keeps the receding-horizon sequence from oscillating between
/// symmetric detours.
pub fn solve_subproblem(
    anchor: Vector2<f64>,
    goal: Vector2<f64>,
    fm: &MemoryLayer,
    obstacles: &[Obstacle],
    params: &PlannerParams,
    warm: Option<&[Vector2<f64>]>,
    rng_seed: u64,
) -> Result<SubPath, PlannerError> {
    params.validate();
    let mut guard = *params;
    guard.obstacle_margin += params.safety_margin;

    let run_restart = |k: usize| -> Option<(f64, usize, Vec<Vector2<f64>>)> {
        let x0 = if k == 0 {
            match warm {
                Some(prev) => shifted_init(prev, goal, params),
                None => straight_init(anchor, goal, params),
            }
        } else if k == 1 {
            straight_init(anchor, goal, params)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                rng_seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            random_init(anchor, goal, params, &mut rng)
        };
        let penalized = |vars: &[f64], mu: f64| {
            let wps = decode(anchor, vars);
            let (cost, _) = subpath_cost_flagged(&wps, goal, fm, params);
            let penalty: f64 = constraint_residuals(&wps, goal, obstacles, &guard)
                .into_iter()
                .map(|r| r.max(0.0).powi(2))
                .sum();
            cost + mu * penalty
        };
        let mut x = x0;
        let mut mu = params.penalty_start;
        for round in 0..params.penalty_rounds {
            let step = 0.4 * params.max_spacing / (round as f64 + 1.0);
            let iters = if round == 0 { params.nm_max_iter } else { params.nm_max_iter / 2 };
            let (next, _) = nelder_mead(|v| penalized(v, mu), &x, step, iters, params.nm_ftol);
            x = next;
            mu *= params.penalty_growth;
        }
        // polish the flat directions with a tight simplex
        let (next, _) = nelder_mead(
            |v| penalized(v, mu / params.penalty_growth),
            &x,
            0.02 * params.max_spacing,
            params.nm_max_iter,
            params.nm_ftol,
        );
        x = next;
        // the penalty minimizer overshoots active limits by ~1/mu; project it
        // back to exact feasibility
        let mut wps = decode(anchor, &x);
        repair(&mut wps, goal, obstacles, &guard);
        let worst = max_residual(&wps, goal, obstacles, &guard);
        if worst <= params.feasibility_tol {
            let (cost, _) = subpath_cost_flagged(&wps, goal, fm, params);
            Some((cost, k, wps))
        } else {
            None
        }
    };

    let candidates = exec::map_indexed(params.restarts, run_restart);
    let best = candidates
        .into_iter()
        .flatten()
        .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap())
        .ok_or(PlannerError::Infeasible)?;

    let (_, _, waypoints) = best;
    let (cost, out_of_grid) = subpath_cost_flagged(&waypoints, goal, fm, params);
    let d_e2g = (waypoints[waypoints.len() - 1] - goal).norm();
    let worst = max_residual(&waypoints, goal, obstacles, &guard);
    Ok(SubPath { waypoints, cost, d_e2g, max_residual: worst, out_of_grid })
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-24 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn segment_clear(
    a: Vector2<f64>,
    b: Vector2<f64>,
    obstacles: &[Obstacle],
    d_safe: f64,
) -> bool {
    obstacles
        .iter()
        .all(|o| point_segment_distance(o.center, a, b) >= o.inflated(d_safe))
}

/// Full receding-horizon plan from `start` to `goal`.
///
/// A trapped attempt (progress stalled in a concave obstacle pocket) leaves
/// virtual crowd mass at the trap point and replans from scratch, so later
/// attempts route around the dead end.
pub fn plan(
    start: Vector2<f64>,
    goal: Vector2<f64>,
    fm: &MemoryLayer,
    obstacles: &[Obstacle],
    params: &PlannerParams,
    rng_seed: u64,
) -> PathResult {
    let mut layer = fm.clone();
    let mut result = plan_once(start, goal, &layer, obstacles, params, rng_seed);
    for attempt in 1..4u64 {
        if result.reached {
            break;
        }
        let trap = *result.valid_path.last().expect("path holds at least start");
        let bump = crate::gridmap::rasterize_normalize(
            &crate::gridmap::MixtureModel::equal_weight_isotropic(&[trap], 1.0),
            layer.grid.spec,
        )
        .expect("bump rasterizes on the layer grid");
        let total: f64 = layer.grid.values.iter().sum();
        for (v, b) in layer.grid.values.iter_mut().zip(&bump.values) {
            *v = (*v + 0.25 * total.max(1.0) * b) / (1.0 + 0.25 * total.max(1.0));
        }
        result = plan_once(
            start,
            goal,
            &layer,
            obstacles,
            params,
            rng_seed.wrapping_add(attempt.wrapping_mul(0xA076_1D64_78BD_642F)),
        );
    }
    result
}

fn plan_once(
    start: Vector2<f64>,
    goal: Vector2<f64>,
    fm: &MemoryLayer,
    obstacles: &[Obstacle],
    params: &PlannerParams,
    rng_seed: u64,
) -> PathResult {
    params.validate();
    let mut valid_path = vec![start];
    let mut iterations = Vec::new();

    if (start - goal).norm() <= params.goal_radius {
        valid_path.push(goal);
        return PathResult { valid_path, iterations, reached: true };
    }

    let cap = (4.0 * (start - goal).norm() / params.max_spacing).ceil() as usize;
    let mut anchor = start;
    let mut reached = false;
    let mut previous: Option<Vec<Vector2<f64>>> = None;
    let mut best_d_e2g = f64::INFINITY;
    let mut stalled = 0usize;
    let stall_limit = 4 * params.waypoints.max(1);

    for c in 0..cap.max(1) {
        let seed = rng_seed
            .wrapping_add((c as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
        // When progress stalls the crowd term has made every forward cell
        // look impassable; relax it gradually so the planner crosses the
        // thinnest part of the band instead of hovering at its edge.
        let relief = stalled.saturating_sub(6) / 4;
        let mut eff = *params;
        eff.alpha = params.alpha * 0.3_f64.powi(relief as i32);
        let sub = match solve_subproblem(
            anchor,
            goal,
            fm,
            obstacles,
            &eff,
            previous.as_deref(),
            seed,
        ) {
            Ok(sub) => sub,
            Err(PlannerError::Infeasible) => break,
        };
        iterations.push(IterationDiag {
            cost: sub.cost,
            d_e2g: sub.d_e2g,
            max_residual: sub.max_residual,
            out_of_grid: sub.out_of_grid,
        });
        valid_path.push(sub.waypoints[1]);
        if sub.d_e2g <= params.goal_radius
            && segment_clear(
                sub.waypoints[sub.waypoints.len() - 1],
                goal,
                obstacles,
                params.obstacle_margin,
            )
        {
            // keep the tail so consecutive points stay within the spacing limit
            valid_path.extend_from_slice(&sub.waypoints[2..]);
            valid_path.push(goal);
            reached = true;
            break;
        }
        anchor = sub.waypoints[1];
        if sub.d_e2g < best_d_e2g - 1e-6 {
            best_d_e2g = sub.d_e2g;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= stall_limit {
                break;
            }
        }
        previous = Some(sub.waypoints);
    }

    PathResult { valid_path, iterations, reached }
}

/// Independent collision check: sample every segment at `step` intervals and
/// test against the inflated discs shrunk by `slack`.
pub fn path_collision_free(
    path: &[Vector2<f64>],
    obstacles: &[Obstacle],
    d_safe: f64,
    step: f64,
    slack: f64,
) -> bool {
    for seg in path.windows(2) {
        let len = (seg[1] - seg[0]).norm();
        let samples = (len / step).ceil() as usize;
        for s in 0..=samples {
            let t = if samples == 0 { 0.0 } else { s as f64 / samples as f64 };
            let p = seg[0] + (seg[1] - seg[0]) * t;
            for obs in obstacles {
                if (p - obs.center).norm() < obs.inflated(d_safe) - slack {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::{GridSpec, ProbabilityGrid};
    use crate::memory::{LayerKind, MemoryLayer};
    use approx::assert_relative_eq;

    fn layer_from_values(spec: GridSpec, values: Vec<f64>) -> MemoryLayer {
        let n = values.len();
        MemoryLayer {
            grid: ProbabilityGrid { spec, values },
            footprint: vec![true; n],
            kind: LayerKind::Fm,
        }
    }

    fn zero_layer(spec: GridSpec) -> MemoryLayer {
        layer_from_values(spec, vec![0.0; spec.num_cells()])
    }

    fn uniform_layer(spec: GridSpec) -> MemoryLayer {
        let n = spec.num_cells();
        layer_from_values(spec, vec![1.0 / n as f64; n])
    }

    #[test]
    fn cost_distance_only_on_zero_density() {
        let spec = GridSpec::new(10.0, 10, nalgebra::Vector2::zeros());
        let fm = zero_layer(spec);
        let wps = vec![Vector2::new(0.5, 0.5), Vector2::new(1.5, 0.5)];
        let goal = Vector2::new(5.0, 0.5);
        let params = PlannerParams::default();
        let expect = (wps[0] - goal).norm() + (wps[1] - goal).norm();
        assert_relative_eq!(subpath_cost(&wps, goal, &fm, &params), expect, epsilon = 1e-12);
    }

    #[test]
    fn cost_probability_term_vanishes_at_goal() {
        let spec = GridSpec::new(10.0, 10, nalgebra::Vector2::zeros());
        let fm = uniform_layer(spec);
        let goal = Vector2::new(5.0, 5.0);
        let wps = vec![Vector2::new(4.0, 5.0), goal];
        let params = PlannerParams { alpha: 1234.5, ..Default::default() };
        assert_relative_eq!(
            subpath_cost(&wps, goal, &fm, &params),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cost_hand_case() {
        // n=2 over a uniform 10x10 grid (0.01 per cell), alpha = 1
        let spec = GridSpec::new(10.0, 10, nalgebra::Vector2::zeros());
        let fm = uniform_layer(spec);
        let wps = vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)];
        let goal = Vector2::new(2.0, 0.0);
        let params = PlannerParams { alpha: 1.0, ..Default::default() };
        assert_relative_eq!(subpath_cost(&wps, goal, &fm, &params), 3.02, epsilon = 1e-12);
    }

    #[test]
    fn cost_out_of_grid_flagged() {
        let spec = GridSpec::new(10.0, 10, nalgebra::Vector2::zeros());
        let fm = uniform_layer(spec);
        let wps = vec![Vector2::new(5.0, 5.0), Vector2::new(50.0, 5.0)];
        let (_, flagged) =
            subpath_cost_flagged(&wps, Vector2::new(9.0, 5.0), &fm, &PlannerParams::default());
        assert!(flagged);
    }

    #[test]
    fn chord_collinear() {
        let obs = Obstacle::new(Vector2::new(5.0, 0.0), 1.0);
        let limit = obstacle_chord_limit(Vector2::zeros(), &obs, 0.0, 0.0).unwrap();
        assert_relative_eq!(limit, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn chord_perpendicular_unconstrained() {
        let obs = Obstacle::new(Vector2::new(5.0, 0.0), 1.0);
        assert!(obstacle_chord_limit(Vector2::zeros(), &obs, std::f64::consts::FRAC_PI_2, 0.0)
            .is_none());
    }

    #[test]
    fn chord_matches_ray_circle_oracle() {
        // independent oracle: smallest positive root of t² − 2a·cosθ·t + a² − d² = 0
        let (a, theta, d_j) = (5.0_f64, 0.2_f64, 1.0_f64);
        let b = -2.0 * a * theta.cos();
        let c = a * a - d_j * d_j;
        let disc = (b * b - 4.0 * c).sqrt();
        let oracle = (-b - disc) / 2.0;

        let obs = Obstacle::new(Vector2::new(5.0, 0.0), 1.0);
        let limit = obstacle_chord_limit(Vector2::zeros(), &obs, theta, 0.0).unwrap();
        assert_relative_eq!(limit, oracle, epsilon = 1e-12);
        assert_relative_eq!(limit, 4.78517, epsilon = 1e-4);
    }

    #[test]
    fn residuals_trivial_path() {
        let params = PlannerParams::default();
        let goal = Vector2::new(50.0, 0.0);
        let wps = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(0.5, 0.0),
            Vector2::new(1.0, 0.0),
        ];
        let worst = max_residual(&wps, goal, &[], &params);
        assert!(worst <= 0.0, "worst = {worst}");
    }

    #[test]
    fn residuals_clearance_hand_case() {
        let params = PlannerParams { obstacle_margin: 0.5, ..Default::default() };
        let obs = Obstacle::new(Vector2::new(2.0, 0.0), 1.0);
        let wps = vec![Vector2::new(0.0, 0.0), Vector2::new(0.1, 0.0)];
        let residuals = constraint_residuals(&wps, Vector2::new(-10.0, 0.0), &[obs], &params);
        // clearance residual of the first waypoint: 1.5 − 2.0 = −0.5
        let clearance = residuals[residuals.len() - 2];
        assert_relative_eq!(clearance, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn residuals_chord_violation() {
        let params = PlannerParams {
            max_spacing: 6.0,
            lookahead: 12.0,
            waypoints: 2,
            shrink_trigger: 1.0,
            obstacle_margin: 0.5,
            ..Default::default()
        };
        let obs = Obstacle::new(Vector2::new(5.0, 0.0), 0.5);
        // collinear run at the obstacle: chord limit 5 − 1 = 4, segment 4.9
        let wps = vec![Vector2::new(0.0, 0.0), Vector2::new(4.9, 0.0)];
        let residuals = constraint_residuals(&wps, Vector2::new(100.0, 0.0), &[obs], &params);
        let worst = residuals.into_iter().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(worst, 0.9, epsilon = 1e-9);
    }

    #[test]
    fn subproblem_straight_on_empty_map() {
        let spec = GridSpec::new(20.0, 20, nalgebra::Vector2::zeros());
        let fm = zero_layer(spec);
        let params = PlannerParams::default();
        let anchor = Vector2::new(2.0, 10.0);
        let goal = Vector2::new(18.0, 10.0);
        let sub = solve_subproblem(anchor, goal, &fm, &[], &params, None, 7).unwrap();
        // distance-only cost: unique minimizer is the straight max-step run
        let step = params.max_spacing.min(params.lookahead / 4.0);
        for (i, wp) in sub.waypoints.iter().enumerate() {
            let expect = anchor + Vector2::new(i as f64 * step, 0.0);
            assert!((wp - expect).norm() < 5e-3, "wp{i} = {wp:?}");
        }
    }

    #[test]
    fn subproblem_detours_around_obstacle() {
        let spec = GridSpec::new(20.0, 20, nalgebra::Vector2::zeros());
        let fm = zero_layer(spec);
        let params = PlannerParams::default();
        let anchor = Vector2::new(2.0, 10.0);
        let goal = Vector2::new(18.0, 10.0);
        let obs = [Obstacle::new(Vector2::new(4.0, 10.0), 0.8)];
        let sub = solve_subproblem(anchor, goal, &fm, &obs, &params, None, 11).unwrap();
        assert!(sub.max_residual <= params.feasibility_tol);
        // post-hoc independent feasibility check at the declared margin
        let worst = max_residual(&sub.waypoints, goal, &obs, &params);
        assert!(worst <= 1e-6, "worst = {worst}");
    }

    #[test]
    fn subproblem_avoids_hot_band() {
        let spec = GridSpec::new(20.0, 40, nalgebra::Vector2::zeros());
        // hot vertical band at x in [4,6), only around y=10
        let mut values = vec![0.0; spec.num_cells()];
        for row in 0..40 {
            for col in 0..40 {
                let center = spec.cell_center(row, col);
                if center.x >= 4.0 && center.x < 6.0 && (center.y - 10.0).abs() < 2.0 {
                    values[row * 40 + col] = 0.01;
                }
            }
        }
        let fm = layer_from_values(spec, values);
        let params = PlannerParams { alpha: 500.0, ..Default::default() };
        let anchor = Vector2::new(2.0, 10.0);
        let goal = Vector2::new(18.0, 10.0);
        let sub = solve_subproblem(anchor, goal, &fm, &[], &params, None, 3).unwrap();
        let straight = decode(anchor, &straight_init(anchor, goal, &params));
        let straight_cost = subpath_cost(&straight, goal, &fm, &params);
        assert!(
            sub.cost < straight_cost,
            "sub {} vs straight {}",
            sub.cost,
            straight_cost
        );
    }

    #[test]
    fn plan_trivial_when_start_near_goal() {
        let spec = GridSpec::new(20.0, 20, nalgebra::Vector2::zeros());
        let fm = zero_layer(spec);
        let start = Vector2::new(10.0, 10.0);
        let goal = Vector2::new(10.3, 10.0);
        let result = plan(start, goal, &fm, &[], &PlannerParams::default(), 1);
        assert!(result.reached);
        assert_eq!(result.valid_path, vec![start, goal]);
        assert!(result.iterations.is_empty());
    }

    #[test]
    fn plan_near_straight_on_empty_map() {
        let spec = GridSpec::new(20.0, 20, nalgebra::Vector2::zeros());
        let fm = zero_layer(spec);
        let start = Vector2::new(2.0, 2.0);
        let goal = Vector2::new(18.0, 18.0);
        let result = plan(start, goal, &fm, &[], &PlannerParams::default(), 5);
        assert!(result.reached);
        let euclid = (goal - start).norm();
        assert!(
            result.length() <= 1.05 * euclid,
            "length {} vs euclid {}",
            result.length(),
            euclid
        );
    }

    #[test]
    fn plan_deterministic() {
        let spec = GridSpec::new(20.0, 20, nalgebra::Vector2::zeros());
        let fm = uniform_layer(spec);
        let obs = [Obstacle::new(Vector2::new(10.0, 10.0), 1.0)];
        let params = PlannerParams::default();
        let a = plan(Vector2::new(2.0, 2.0), Vector2::new(18.0, 18.0), &fm, &obs, &params, 99);
        let b = plan(Vector2::new(2.0, 2.0), Vector2::new(18.0, 18.0), &fm, &obs, &params, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn collision_checker_catches_crossing() {
        let obs = [Obstacle::new(Vector2::new(5.0, 0.0), 1.0)];
        let through = [Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.0)];
        assert!(!path_collision_free(&through, &obs, 0.0, 0.01, 1e-9));
        let around = [Vector2::new(0.0, 0.0), Vector2::new(5.0, 3.0), Vector2::new(10.0, 0.0)];
        assert!(path_collision_free(&around, &obs, 0.0, 0.01, 1e-9));
    }
}
