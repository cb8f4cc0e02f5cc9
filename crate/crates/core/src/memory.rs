//! Partially updated memory: per-cell evidence fusion of the live sensor
//! layer (WM) with the historical prior layer (OLM).
//!
//! Each grid cell carries a basic probability pair over {Crowded, NotCrowded}.
//! Fusion first balances the two sources by their weighted average, with the
//! sensor weight derived from the Kalman covariance, then combines them with
//! the Dempster-Shafer rule. Cells outside the sensor footprint keep the OLM
//! belief untouched.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::gridmap::{
    rasterize_normalize, GridError, GridSpec, MixtureModel, ProbabilityGrid,
};
use crate::tracking::WorkingMemory;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("no prior for time {0}")]
    NoPrior(f64),
    #[error("vacuous fusion: total conflict between sources")]
    VacuousFusion,
    #[error("grid spec mismatch between layers")]
    SpecMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Basic probability pair (m(C), m(NC)); the pair always sums to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAssignment {
    pub crowded: f64,
    pub not_crowded: f64,
}

impl MassAssignment {
    pub fn from_crowded(m_c: f64) -> Self {
        Self { crowded: m_c, not_crowded: 1.0 - m_c }
    }

    pub fn sum(&self) -> f64 {
        self.crowded + self.not_crowded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Wm,
    Olm,
    Fm,
}

/// One memory layer: a normalized grid plus per-cell observed flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryLayer {
    pub grid: ProbabilityGrid,
    /// Cells the layer actually observed. All true for OLM/FM.
    pub footprint: Vec<bool>,
    pub kind: LayerKind,
}

impl MemoryLayer {
    pub fn olm(grid: ProbabilityGrid) -> Self {
        let n = grid.values.len();
        Self { grid, footprint: vec![true; n], kind: LayerKind::Olm }
    }

    pub fn observed_cells(&self) -> usize {
        self.footprint.iter().filter(|f| **f).count()
    }
}

/// Sensor layer from the working-memory mixture; the footprint is the set of
/// cells whose center lies inside the sensor field of view. An empty working
/// memory yields an empty footprint, so fusion leaves the OLM untouched.
pub fn wm_layer(
    wm: &WorkingMemory,
    spec: GridSpec,
    robot: Vector2<f64>,
    fov_radius: f64,
) -> Result<MemoryLayer, MemoryError> {
    let n = spec.resolution;
    let footprint: Vec<bool> = if wm.is_empty() {
        vec![false; spec.num_cells()]
    } else {
        (0..spec.num_cells())
            .map(|idx| (spec.cell_center(idx / n, idx % n) - robot).norm() <= fov_radius)
            .collect()
    };
    let grid = if wm.is_empty() {
        ProbabilityGrid::uniform(spec)
    } else {
        rasterize_normalize(&wm.model, spec)?
    };
    Ok(MemoryLayer { grid, footprint, kind: LayerKind::Wm })
}

/// Historical prior as a periodic time-binned mixture schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOlmModel {
    pub cycle_length: f64,
    pub bins: Vec<OlmBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlmBin {
    /// Start of the bin within the cycle (s).
    pub start: f64,
    pub mixture: MixtureModel,
}

impl PeriodicOlmModel {
    pub fn new(cycle_length: f64, mut bins: Vec<OlmBin>) -> Self {
        assert!(cycle_length > 0.0, "cycle length must be positive");
        bins.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        Self { cycle_length, bins }
    }

    /// Mixture of the bin containing `t` (mod cycle); bins wrap around.
    pub fn mixture_at(&self, t: f64) -> Result<&MixtureModel, MemoryError> {
        if self.bins.is_empty() {
            return Err(MemoryError::NoPrior(t));
        }
        let phase = t.rem_euclid(self.cycle_length);
        let bin = self
            .bins
            .iter()
            .rev()
            .find(|b| b.start <= phase)
            .unwrap_or_else(|| self.bins.last().unwrap());
        if bin.mixture.is_empty() {
            return Err(MemoryError::NoPrior(t));
        }
        Ok(&bin.mixture)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("olm schedule serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self, MemoryError> {
        let model: Self = toml::from_str(s)
            .map_err(|e| MemoryError::Grid(GridError::Malformed(e.to_string())))?;
        if model.cycle_length <= 0.0 {
            return Err(MemoryError::Grid(GridError::Malformed(
                "cycle_length must be positive".into(),
            )));
        }
        for bin in &model.bins {
            bin.mixture.validate()?;
        }
        Ok(model)
    }
}

/// Predicted OLM layer for time `t`.
pub fn olm_predict(
    model: &PeriodicOlmModel,
    t: f64,
    spec: GridSpec,
) -> Result<MemoryLayer, MemoryError> {
    let mixture = model.mixture_at(t)?;
    Ok(MemoryLayer::olm(rasterize_normalize(mixture, spec)?))
}

/// Per-cell mass pairs of a layer: m(C) is the cell probability.
pub fn bpa_from_layer(layer: &MemoryLayer) -> Vec<MassAssignment> {
    layer
        .grid
        .values
        .iter()
        .map(|&p| MassAssignment::from_crowded(p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Scale factor γ (1/m²) mapping sensor covariance to trust.
    pub gamma: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

/// Sensor and prior weights from the average Kalman covariance:
/// w_s = (e^(−γ·Σ̄) + 1)/2, so a precise sensor gets weight near one and
/// w_s stays in (0.5, 1] for any Σ̄ ≥ 0.
pub fn sensor_weight(sigma_bar: f64, config: &FusionConfig) -> (f64, f64) {
    let w_s = ((-config.gamma * sigma_bar).exp() + 1.0) / 2.0;
    (w_s, 1.0 - w_s)
}

/// Balance the two mass pairs by their weighted average:
/// m_s' = m_s, m_f' = 2·m̄ − m_f with m̄ = w_s·m_s + (1−w_s)·m_f.
/// Components leaving [0,1] are clamped and the pair renormalized.
pub fn balance_masses(
    m_s: MassAssignment,
    m_f: MassAssignment,
    w_s: f64,
) -> (MassAssignment, MassAssignment) {
    let w_f = 1.0 - w_s;
    let bar_c = w_s * m_s.crowded + w_f * m_f.crowded;
    let bar_nc = w_s * m_s.not_crowded + w_f * m_f.not_crowded;
    let raw_c = 2.0 * bar_c - m_f.crowded;
    let raw_nc = 2.0 * bar_nc - m_f.not_crowded;
    let c = raw_c.clamp(0.0, 1.0);
    let nc = raw_nc.clamp(0.0, 1.0);
    let sum = c + nc;
    let balanced = if sum > 0.0 {
        MassAssignment { crowded: c / sum, not_crowded: nc / sum }
    } else {
        // Both components clamped to zero cannot happen for valid inputs;
        // fall back to the sensor belief.
        m_s
    };
    (m_s, balanced)
}

/// Conflict degree between two mass pairs.
pub fn conflict(m_s: MassAssignment, m_f: MassAssignment) -> f64 {
    m_s.crowded * m_f.not_crowded + m_s.not_crowded * m_f.crowded
}

/// Dempster-Shafer combination over {C, NC}.
pub fn ds_combine(
    m_s: MassAssignment,
    m_f: MassAssignment,
) -> Result<MassAssignment, MemoryError> {
    let kappa = conflict(m_s, m_f);
    let denom = 1.0 - kappa;
    if denom <= 1e-15 {
        return Err(MemoryError::VacuousFusion);
    }
    Ok(MassAssignment::from_crowded(m_s.crowded * m_f.crowded / denom))
}

/// Full per-cell pipeline: balance then combine. Total-conflict cells fall
/// back to the sensor belief.
pub fn fuse_cell(m_s: MassAssignment, m_f: MassAssignment, w_s: f64) -> MassAssignment {
    let (s, f) = balance_masses(m_s, m_f, w_s);
    ds_combine(s, f).unwrap_or(m_s)
}

/// Raw fused beliefs m'(C) per cell: pipeline inside the WM footprint, OLM
/// value outside.
pub fn fused_beliefs(
    wm: &MemoryLayer,
    olm: &MemoryLayer,
    sigma_bar: f64,
    config: &FusionConfig,
) -> Result<Vec<f64>, MemoryError> {
    if wm.grid.spec != olm.grid.spec {
        return Err(MemoryError::SpecMismatch);
    }
    let (w_s, _) = sensor_weight(sigma_bar, config);
    let wm_vals = &wm.grid.values;
    let olm_vals = &olm.grid.values;
    let footprint = &wm.footprint;
    Ok(exec::map_indexed(wm_vals.len(), |idx| {
        if footprint[idx] {
            fuse_cell(
                MassAssignment::from_crowded(wm_vals[idx]),
                MassAssignment::from_crowded(olm_vals[idx]),
                w_s,
            )
            .crowded
        } else {
            olm_vals[idx]
        }
    }))
}

/// Fused memory layer: per-cell D-S fusion inside the WM footprint, then the
/// belief field renormalized back into a probability grid.
pub fn fuse_layers(
    wm: &MemoryLayer,
    olm: &MemoryLayer,
    sigma_bar: f64,
    config: &FusionConfig,
) -> Result<MemoryLayer, MemoryError> {
    let beliefs = fused_beliefs(wm, olm, sigma_bar, config)?;
    let grid = ProbabilityGrid::from_raw(olm.grid.spec, beliefs)?;
    let n = grid.values.len();
    Ok(MemoryLayer { grid, footprint: vec![true; n], kind: LayerKind::Fm })
}
