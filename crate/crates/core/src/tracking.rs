//! Per-pedestrian constant-velocity Kalman tracking and construction of the
//! working-memory mixture from posterior track states.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use thiserror::Error;

use crate::gridmap::{GaussianComponent, GridSpec, MixtureModel};

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("filter divergence: posterior covariance is not positive-definite")]
    FilterDivergence,
}

/// Posterior state of one tracked pedestrian: [x, y, vx, vy].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub covariance: Matrix4<f64>,
}

impl TrackState {
    /// Fresh track seeded at a first detection with no velocity information.
    pub fn from_detection(position: Vector2<f64>, pos_var: f64, vel_var: f64) -> Self {
        let mut cov = Matrix4::zeros();
        cov[(0, 0)] = pos_var;
        cov[(1, 1)] = pos_var;
        cov[(2, 2)] = vel_var;
        cov[(3, 3)] = vel_var;
        Self { position, velocity: Vector2::zeros(), covariance: cov }
    }

    fn state_vector(&self) -> Vector4<f64> {
        Vector4::new(self.position.x, self.position.y, self.velocity.x, self.velocity.y)
    }

    /// Top-left 2×2 block: position covariance in m².
    pub fn position_covariance(&self) -> Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// Sensor characteristics shared by the tracker and the simulator's
/// observation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Measurement noise R (m²).
    pub measurement_noise: Matrix2<f64>,
    /// Process noise Q for the constant-velocity model.
    pub process_noise: Matrix4<f64>,
    pub fov_radius: f64,
    /// Detection timestep Δt (s).
    pub dt: f64,
}

impl SensorModel {
    pub fn new(
        measurement_noise: Matrix2<f64>,
        process_noise: Matrix4<f64>,
        fov_radius: f64,
        dt: f64,
    ) -> Self {
        assert!(fov_radius > 0.0, "fov radius must be positive");
        assert!(dt > 0.0, "dt must be positive");
        Self { measurement_noise, process_noise, fov_radius, dt }
    }

    /// Isotropic model: position noise std (m), white-acceleration intensity
    /// (m/s²) driving the CV process noise.
    pub fn isotropic(pos_noise_std: f64, accel_std: f64, fov_radius: f64, dt: f64) -> Self {
        Self::new(
            Matrix2::identity() * pos_noise_std * pos_noise_std,
            cv_process_noise(accel_std, dt),
            fov_radius,
            dt,
        )
    }
}

/// Discretized white-acceleration process noise for [x, y, vx, vy].
pub fn cv_process_noise(accel_std: f64, dt: f64) -> Matrix4<f64> {
    let q = accel_std * accel_std;
    let (d3, d2) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0);
    let mut m = Matrix4::zeros();
    for axis in 0..2 {
        m[(axis, axis)] = q * d3;
        m[(axis, axis + 2)] = q * d2;
        m[(axis + 2, axis)] = q * d2;
        m[(axis + 2, axis + 2)] = q * dt;
    }
    m
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    a
}

fn observation() -> Matrix2x4<f64> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

fn check_spd(m: &Matrix4<f64>) -> Result<(), TrackingError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(TrackingError::FilterDivergence);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    if eigs.iter().any(|&e| e < -1e-9) {
        return Err(TrackingError::FilterDivergence);
    }
    Ok(())
}

/// One constant-velocity predict step followed by a position measurement
/// update. Joseph-form covariance update keeps the posterior symmetric.
pub fn kf_step(
    track: &TrackState,
    measurement: Vector2<f64>,
    sensor: &SensorModel,
) -> Result<TrackState, TrackingError> {
    let a = transition(sensor.dt);
    let h = observation();

    let x_prior = a * track.state_vector();
    let p_prior = a * track.covariance * a.transpose() + sensor.process_noise;

    let s = h * p_prior * h.transpose() + sensor.measurement_noise;
    let s_inv = s.try_inverse().ok_or(TrackingError::FilterDivergence)?;
    let gain: Matrix4x2<f64> = p_prior * h.transpose() * s_inv;

    let innovation = measurement - h * x_prior;
    let x_post = x_prior + gain * innovation;

    let ikh = Matrix4::identity() - gain * h;
    let p_post = ikh * p_prior * ikh.transpose()
        + gain * sensor.measurement_noise * gain.transpose();
    let p_post = (p_post + p_post.transpose()) * 0.5;
    check_spd(&p_post)?;

    Ok(TrackState {
        position: Vector2::new(x_post[0], x_post[1]),
        velocity: Vector2::new(x_post[2], x_post[3]),
        covariance: p_post,
    })
}

/// Working-memory layer source: equal-weight mixture over track posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingMemory {
    pub model: MixtureModel,
    /// Mean half-trace of the tracks' position covariances (m²).
    /// None when no tracks exist (WM absent).
    pub sigma_bar: Option<f64>,
}

impl WorkingMemory {
    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }
}

/// Build the working-memory mixture: one component per track, mean at the
/// posterior position, covariance the position block, weight 1/n_p.
pub fn build_working_memory(tracks: &[TrackState], _spec: &GridSpec) -> WorkingMemory {
    if tracks.is_empty() {
        return WorkingMemory { model: MixtureModel::default(), sigma_bar: None };
    }
    let w = 1.0 / tracks.len() as f64;
    let components = tracks
        .iter()
        .map(|t| GaussianComponent::new(t.position, t.position_covariance(), w))
        .collect();
    let sigma_bar = tracks
        .iter()
        .map(|t| t.position_covariance().trace() / 2.0)
        .sum::<f64>()
        / tracks.len() as f64;
    WorkingMemory { model: MixtureModel::new(components), sigma_bar: Some(sigma_bar) }
}
