//! Travel-time estimation and memory comparison metrics.
//!
//! A planned path is wrapped in a one-meter virtual corridor; the crowd mass
//! inside the corridor sets a density that slows the nominal walking speed
//! through an exponential fundamental-diagram model. The T_s index compares
//! a benchmark planner's estimated travel time against the evaluated one.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{grid_rmse, GridError, ProbabilityGrid};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("path needs at least two points")]
    DegeneratePath,
    #[error("series are misaligned at index {0}")]
    Misaligned(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Density-slowdown travel-time estimator along a virtual corridor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeModel {
    /// Corridor half-width (m); the full corridor is twice this.
    pub half_width: f64,
    /// Nominal walking speed (m/s).
    pub v_max: f64,
    /// Slowdown coefficient (m² per person): v = v_max · e^(−β·ρ).
    pub beta: f64,
}

impl Default for TravelTimeModel {
    fn default() -> Self {
        // beta = ln 2 halves the speed at one person per square meter
        Self { half_width: 0.5, v_max: 1.2, beta: std::f64::consts::LN_2 }
    }
}

impl TravelTimeModel {
    pub fn validate(&self) {
        assert!(self.half_width > 0.0, "half_width must be positive");
        assert!(self.v_max > 0.0, "v_max must be positive");
        assert!(self.beta >= 0.0, "beta must be non-negative");
    }
}

pub fn path_length(path: &[Vector2<f64>]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn point_polyline_distance(p: Vector2<f64>, path: &[Vector2<f64>]) -> f64 {
    path.windows(2)
        .map(|w| {
            let ab = w[1] - w[0];
            let len2 = ab.norm_squared();
            let t = if len2 < 1e-24 {
                0.0
            } else {
                ((p - w[0]).dot(&ab) / len2).clamp(0.0, 1.0)
            };
            (p - (w[0] + ab * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Number of agent positions within `half_width` of the path polyline.
pub fn corridor_count(
    path: &[Vector2<f64>],
    agents: &[Vector2<f64>],
    half_width: f64,
) -> Result<usize, EvalError> {
    if path.len() < 2 {
        return Err(EvalError::DegeneratePath);
    }
    Ok(agents
        .iter()
        .filter(|p| point_polyline_distance(**p, path) <= half_width)
        .count())
}

/// Summed grid mass of cells whose center lies within `half_width` of the
/// path polyline.
pub fn corridor_mass(
    path: &[Vector2<f64>],
    grid: &ProbabilityGrid,
    half_width: f64,
) -> Result<f64, EvalError> {
    if path.len() < 2 {
        return Err(EvalError::DegeneratePath);
    }
    let n = grid.spec.resolution;
    Ok(grid
        .values
        .iter()
        .enumerate()
        .filter(|(idx, _)| {
            point_polyline_distance(grid.spec.cell_center(idx / n, idx % n), path) <= half_width
        })
        .map(|(_, v)| v)
        .sum())
}

/// Expected traversal time of a path with `count` persons in its corridor:
/// t = L / (v_max · e^(−β·ρ)), ρ = count / corridor area.
pub fn expected_travel_time(
    path: &[Vector2<f64>],
    count: f64,
    model: &TravelTimeModel,
) -> Result<f64, EvalError> {
    model.validate();
    assert!(count >= 0.0, "count must be non-negative");
    if path.len() < 2 {
        return Err(EvalError::DegeneratePath);
    }
    let length = path_length(path);
    if length <= 0.0 {
        return Ok(0.0);
    }
    let density = count / (2.0 * model.half_width * length);
    Ok(length / (model.v_max * (-model.beta * density).exp()))
}

/// Improvement index T_s = (t_bench − t_eval) / t_bench.
pub fn improvement_index(t_bench: f64, t_eval: f64) -> f64 {
    assert!(t_bench > 0.0, "benchmark time must be positive");
    (t_bench - t_eval) / t_bench
}

/// Per-timestep RMSE between aligned estimate and truth series, plus its
/// time average.
pub fn rmse_series(
    estimates: &[(f64, ProbabilityGrid)],
    truths: &[(f64, ProbabilityGrid)],
) -> Result<(Vec<(f64, f64)>, f64), EvalError> {
    if estimates.len() != truths.len() {
        return Err(EvalError::Misaligned(estimates.len().min(truths.len())));
    }
    let mut series = Vec::with_capacity(estimates.len());
    for (i, ((te, est), (tt, truth))) in estimates.iter().zip(truths).enumerate() {
        if (te - tt).abs() > 1e-9 {
            return Err(EvalError::Misaligned(i));
        }
        series.push((*te, grid_rmse(est, truth)?));
    }
    let avg = if series.is_empty() {
        0.0
    } else {
        series.iter().map(|(_, r)| r).sum::<f64>() / series.len() as f64
    };
    Ok((series, avg))
}

/// Partially-updated-memory surrogate: the observed estimate fades linearly
/// back to the historical prior over `horizon` seconds after the single
/// injection at `t_since_obs = 0`.
pub fn pum_blend(
    olm: &ProbabilityGrid,
    observed: &ProbabilityGrid,
    t_since_obs: f64,
    horizon: f64,
) -> Result<ProbabilityGrid, EvalError> {
    assert!(horizon > 0.0, "horizon must be positive");
    if olm.spec != observed.spec {
        return Err(EvalError::Grid(GridError::SpecMismatch));
    }
    let w = (1.0 - t_since_obs / horizon).clamp(0.0, 1.0);
    let raw: Vec<f64> = olm
        .values
        .iter()
        .zip(&observed.values)
        .map(|(o, s)| ((1.0 - w) * o + w * s).max(0.0))
        .collect();
    Ok(ProbabilityGrid::from_raw(olm.spec, raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::GridSpec;
    use approx::assert_relative_eq;

    fn straight(n: usize, step: f64) -> Vec<Vector2<f64>> {
        (0..n).map(|i| Vector2::new(i as f64 * step, 0.0)).collect()
    }

    #[test]
    fn count_empty_is_zero() {
        let path = straight(3, 5.0);
        assert_eq!(corridor_count(&path, &[], 0.5).unwrap(), 0);
    }

    #[test]
    fn count_geometry_boundary() {
        let path = straight(3, 5.0);
        let on_path = Vector2::new(3.0, 0.0);
        let near = Vector2::new(3.0, 0.45);
        let outside = Vector2::new(3.0, 0.6);
        assert_eq!(corridor_count(&path, &[on_path, near, outside], 0.5).unwrap(), 2);
    }

    #[test]
    fn count_degenerate_path_rejected() {
        assert_eq!(
            corridor_count(&[Vector2::zeros()], &[], 0.5),
            Err(EvalError::DegeneratePath)
        );
    }

    #[test]
    fn count_invariant_under_collinear_insertion() {
        let path = vec![Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.0)];
        let refined = straight(11, 1.0);
        let agents: Vec<Vector2<f64>> = (0..40)
            .map(|i| Vector2::new(i as f64 * 0.25, ((i * 7) % 13) as f64 * 0.1 - 0.6))
            .collect();
        assert_eq!(
            corridor_count(&path, &agents, 0.5).unwrap(),
            corridor_count(&refined, &agents, 0.5).unwrap()
        );
    }

    #[test]
    fn travel_time_empty_corridor() {
        let path = straight(2, 10.0);
        let model = TravelTimeModel { half_width: 0.5, v_max: 1.0, beta: 1.0 };
        assert_relative_eq!(expected_travel_time(&path, 0.0, &model).unwrap(), 10.0);
    }

    #[test]
    fn travel_time_beta_zero_ignores_count() {
        let path = straight(2, 12.0);
        let model = TravelTimeModel { beta: 0.0, ..Default::default() };
        let a = expected_travel_time(&path, 0.0, &model).unwrap();
        let b = expected_travel_time(&path, 50.0, &model).unwrap();
        assert_relative_eq!(a, b);
        assert_relative_eq!(a, 10.0);
    }

    #[test]
    fn travel_time_halved_speed_at_unit_density() {
        // 10 m corridor of area 10 m² with 10 persons: rho = 1, speed halves
        let path = straight(2, 10.0);
        let model = TravelTimeModel { half_width: 0.5, v_max: 1.0, ..Default::default() };
        assert_relative_eq!(
            expected_travel_time(&path, 10.0, &model).unwrap(),
            20.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn travel_time_monotone_in_count() {
        let path = straight(2, 10.0);
        let model = TravelTimeModel::default();
        let mut prev = 0.0;
        for count in 0..30 {
            let t = expected_travel_time(&path, count as f64, &model).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn improvement_arithmetic() {
        assert_relative_eq!(improvement_index(100.0, 100.0), 0.0);
        assert_relative_eq!(improvement_index(100.0, 80.0), 0.20);
        assert_relative_eq!(improvement_index(212.22, 111.59), 0.4741, epsilon = 1e-4);
    }

    #[test]
    fn improvement_sign_matches_ordering() {
        assert!(improvement_index(10.0, 9.0) > 0.0);
        assert!(improvement_index(9.0, 10.0) < 0.0);
    }

    fn grid(values: Vec<f64>) -> ProbabilityGrid {
        let spec = GridSpec::new(2.0, 2, Vector2::zeros());
        ProbabilityGrid::from_raw(spec, values).unwrap()
    }

    #[test]
    fn rmse_identical_series_zero() {
        let g = grid(vec![0.25; 4]);
        let series = vec![(0.0, g.clone()), (1.0, g.clone())];
        let (per_step, avg) = rmse_series(&series, &series).unwrap();
        assert!(per_step.iter().all(|(_, r)| *r == 0.0));
        assert_relative_eq!(avg, 0.0);
    }

    #[test]
    fn rmse_constant_offset_constant_series() {
        let a = grid(vec![0.4, 0.2, 0.2, 0.2]);
        let b = grid(vec![0.2, 0.4, 0.2, 0.2]);
        let est = vec![(0.0, a.clone()), (1.0, a)];
        let truth = vec![(0.0, b.clone()), (1.0, b)];
        let (per_step, avg) = rmse_series(&est, &truth).unwrap();
        assert_relative_eq!(per_step[0].1, per_step[1].1);
        assert_relative_eq!(avg, per_step[0].1);
        assert_relative_eq!(avg, (0.02f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rmse_misaligned_rejected() {
        let g = grid(vec![0.25; 4]);
        let est = vec![(0.0, g.clone())];
        let truth = vec![(0.5, g)];
        assert_eq!(rmse_series(&est, &truth), Err(EvalError::Misaligned(0)));
    }

    #[test]
    fn pum_fades_linearly_to_prior() {
        let olm = grid(vec![0.25; 4]);
        let obs = grid(vec![0.7, 0.1, 0.1, 0.1]);
        let at0 = pum_blend(&olm, &obs, 0.0, 40.0).unwrap();
        assert_relative_eq!(at0.values[0], 0.7, epsilon = 1e-12);
        let mid = pum_blend(&olm, &obs, 20.0, 40.0).unwrap();
        assert_relative_eq!(mid.values[0], 0.475, epsilon = 1e-12);
        assert_relative_eq!(mid.sum(), 1.0, epsilon = 1e-12);
        let late = pum_blend(&olm, &obs, 40.0, 40.0).unwrap();
        assert_relative_eq!(late.values[0], 0.25, epsilon = 1e-12);
        let later = pum_blend(&olm, &obs, 90.0, 40.0).unwrap();
        assert_eq!(later.values, late.values);
    }
}
