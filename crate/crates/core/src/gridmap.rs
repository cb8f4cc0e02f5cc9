//! Gaussian-mixture density layers and their discretization into normalized
//! probability grids.
//!
//! A crowd density layer is a weighted sum of 2-D Gaussians. Every memory
//! layer (working, off-line, fused) is rasterized onto the same square grid
//! and normalized so the cell values sum to one, which is what the evidence
//! fusion and the planner consume.

use std::io::{self, Read, Write};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;

/// Raw densities below this floor are clamped before normalization so a
/// far-field mixture cannot produce a 0/0 grid.
const DENSITY_FLOOR: f64 = 1e-300;

const GRID_MAGIC: &[u8; 8] = b"CMGRID01";

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("degenerate component: covariance is singular or not positive-definite")]
    DegenerateComponent,
    #[error("empty raster: all densities below the underflow floor")]
    EmptyRaster,
    #[error("empty model: mixture has no components")]
    EmptyModel,
    #[error("out of bounds: point ({0}, {1}) lies outside the grid extent")]
    OutOfBounds(f64, f64),
    #[error("grid spec mismatch")]
    SpecMismatch,
    #[error("malformed grid data: {0}")]
    Malformed(String),
}

/// One weighted bivariate Gaussian of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn new(mean: Vector2<f64>, covariance: Matrix2<f64>, weight: f64) -> Self {
        Self { mean, covariance, weight }
    }

    pub fn isotropic(mean: Vector2<f64>, sigma: f64, weight: f64) -> Self {
        Self::new(mean, Matrix2::identity() * sigma * sigma, weight)
    }

    /// Bivariate normal density at `point`, without the mixture weight.
    fn density(&self, point: Vector2<f64>) -> Result<f64, GridError> {
        let det = self.covariance.determinant();
        if !det.is_finite() || det <= 0.0 {
            return Err(GridError::DegenerateComponent);
        }
        let inv = self
            .covariance
            .try_inverse()
            .ok_or(GridError::DegenerateComponent)?;
        let d = point - self.mean;
        let quad = (d.transpose() * inv * d)[(0, 0)];
        Ok((-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
    }
}

/// A weighted set of Gaussian components describing one density layer.
///
/// Weights of a non-empty mixture are expected to sum to one; `validate`
/// checks this together with positive-definiteness of every covariance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<GaussianComponent>,
}

impl MixtureModel {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        Self { components }
    }

    /// Equal-weight isotropic mixture, one component per point.
    pub fn equal_weight_isotropic(points: &[Vector2<f64>], sigma: f64) -> Self {
        let w = 1.0 / points.len().max(1) as f64;
        Self::new(
            points
                .iter()
                .map(|&p| GaussianComponent::isotropic(p, sigma, w))
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.is_empty() {
            return Ok(());
        }
        let sum: f64 = self.components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GridError::Malformed(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        for c in &self.components {
            if c.weight < 0.0 {
                return Err(GridError::Malformed("negative component weight".into()));
            }
            let det = c.covariance.determinant();
            if !det.is_finite() || det <= 0.0 || c.covariance[(0, 1)] != c.covariance[(1, 0)] {
                return Err(GridError::DegenerateComponent);
            }
        }
        Ok(())
    }
}

/// Mixture density at `point` (1/m²).
pub fn evaluate_density(model: &MixtureModel, point: Vector2<f64>) -> Result<f64, GridError> {
    if model.is_empty() {
        return Err(GridError::EmptyModel);
    }
    let mut total = 0.0;
    for c in &model.components {
        total += c.weight * c.density(point)?;
    }
    Ok(total)
}

/// Square grid geometry: `resolution` × `resolution` cells covering a
/// `side_length` × `side_length` region anchored at `origin` (lower-left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_length: f64,
    pub resolution: usize,
    pub origin: Vector2<f64>,
}

impl GridSpec {
    pub fn new(side_length: f64, resolution: usize, origin: Vector2<f64>) -> Self {
        assert!(side_length > 0.0, "side length must be positive");
        assert!(resolution >= 2, "resolution must be at least 2");
        Self { side_length, resolution, origin }
    }

    /// Spec whose cell size is closest to `cell_size` from below (cells never
    /// coarser than requested).
    pub fn with_cell_size(side_length: f64, cell_size: f64, origin: Vector2<f64>) -> Self {
        let n = (side_length / cell_size).ceil().max(2.0) as usize;
        Self::new(side_length, n, origin)
    }

    pub fn cell_size(&self) -> f64 {
        self.side_length / self.resolution as f64
    }

    /// Cell area a = (l/n)².
    pub fn cell_area(&self) -> f64 {
        let c = self.cell_size();
        c * c
    }

    pub fn num_cells(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Center of cell (row, col); rows advance along +y, cols along +x.
    pub fn cell_center(&self, row: usize, col: usize) -> Vector2<f64> {
        let c = self.cell_size();
        Vector2::new(
            self.origin.x + (col as f64 + 0.5) * c,
            self.origin.y + (row as f64 + 0.5) * c,
        )
    }

    /// Cell containing `point`, or None outside the closed extent.
    pub fn cell_of(&self, point: Vector2<f64>) -> Option<(usize, usize)> {
        let rel = point - self.origin;
        if rel.x < 0.0 || rel.y < 0.0 || rel.x > self.side_length || rel.y > self.side_length {
            return None;
        }
        let c = self.cell_size();
        let col = ((rel.x / c) as usize).min(self.resolution - 1);
        let row = ((rel.y / c) as usize).min(self.resolution - 1);
        Some((row, col))
    }

    pub fn contains(&self, point: Vector2<f64>) -> bool {
        self.cell_of(point).is_some()
    }
}

/// Discretized, normalized density: nonnegative cell values summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityGrid {
    pub spec: GridSpec,
    /// Row-major, `idx = row * n + col`.
    pub values: Vec<f64>,
}

impl ProbabilityGrid {
    /// Build from raw nonnegative cell values, normalizing to sum one.
    pub fn from_raw(spec: GridSpec, raw: Vec<f64>) -> Result<Self, GridError> {
        if raw.len() != spec.num_cells() {
            return Err(GridError::SpecMismatch);
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GridError::Malformed("raw density not finite/nonnegative".into()));
        }
        if raw.iter().all(|v| *v < DENSITY_FLOOR) {
            return Err(GridError::EmptyRaster);
        }
        let mut values: Vec<f64> = raw.iter().map(|v| v.max(DENSITY_FLOOR)).collect();
        let sum: f64 = values.iter().sum();
        for v in &mut values {
            *v /= sum;
        }
        Ok(Self { spec, values })
    }

    pub fn uniform(spec: GridSpec) -> Self {
        let n = spec.num_cells();
        Self { spec, values: vec![1.0 / n as f64; n] }
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.resolution + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.values.len() != self.spec.num_cells() {
            return Err(GridError::SpecMismatch);
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GridError::Malformed("cell value not finite/nonnegative".into()));
        }
        if (self.sum() - 1.0).abs() > 1e-9 {
            return Err(GridError::Malformed(format!("grid sums to {}", self.sum())));
        }
        Ok(())
    }
}

/// Rasterize a mixture onto `spec` and normalize cell values to sum one.
///
/// Cell values are the density sampled at cell centers; the normalization
/// divides by the total so any positive rescaling of the raw densities leaves
/// the result unchanged.
pub fn rasterize_normalize(
    model: &MixtureModel,
    spec: GridSpec,
) -> Result<ProbabilityGrid, GridError> {
    if model.is_empty() {
        return Err(GridError::EmptyModel);
    }
    let n = spec.resolution;
    let raw = exec::map_indexed(spec.num_cells(), |idx| {
        let (row, col) = (idx / n, idx % n);
        evaluate_density(model, spec.cell_center(row, col))
    });
    let raw: Result<Vec<f64>, GridError> = raw.into_iter().collect();
    ProbabilityGrid::from_raw(spec, raw?)
}

/// Probability of the cell containing `point` (nearest-cell lookup).
pub fn probability_at(grid: &ProbabilityGrid, point: Vector2<f64>) -> Result<f64, GridError> {
    let (row, col) = grid
        .spec
        .cell_of(point)
        .ok_or(GridError::OutOfBounds(point.x, point.y))?;
    Ok(grid.value(row, col))
}

/// Root mean square error between two grids over the same spec.
pub fn grid_rmse(a: &ProbabilityGrid, b: &ProbabilityGrid) -> Result<f64, GridError> {
    if a.spec != b.spec {
        return Err(GridError::SpecMismatch);
    }
    let sq: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sq / a.values.len() as f64).sqrt())
}

// --- serialization -------------------------------------------------------

impl ProbabilityGrid {
    /// Compact binary layout: magic, l (f64), n (u32), origin (2×f64), then
    /// row-major f64 values, all little-endian.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&self.spec.side_length.to_le_bytes())?;
        w.write_all(&(self.spec.resolution as u32).to_le_bytes())?;
        w.write_all(&self.spec.origin.x.to_le_bytes())?;
        w.write_all(&self.spec.origin.y.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self, GridError> {
        let read_err = |e: io::Error| GridError::Malformed(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(read_err)?;
        if &magic != GRID_MAGIC {
            return Err(GridError::Malformed("bad magic".into()));
        }
        let mut f8 = [0u8; 8];
        let mut f4 = [0u8; 4];
        r.read_exact(&mut f8).map_err(read_err)?;
        let side_length = f64::from_le_bytes(f8);
        r.read_exact(&mut f4).map_err(read_err)?;
        let resolution = u32::from_le_bytes(f4) as usize;
        r.read_exact(&mut f8).map_err(read_err)?;
        let ox = f64::from_le_bytes(f8);
        r.read_exact(&mut f8).map_err(read_err)?;
        let oy = f64::from_le_bytes(f8);
        if side_length <= 0.0 || resolution < 2 {
            return Err(GridError::Malformed("invalid header".into()));
        }
        let spec = GridSpec::new(side_length, resolution, Vector2::new(ox, oy));
        let mut values = Vec::with_capacity(spec.num_cells());
        for _ in 0..spec.num_cells() {
            r.read_exact(&mut f8).map_err(read_err)?;
            values.push(f64::from_le_bytes(f8));
        }
        let grid = Self { spec, values };
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GridError> {
        let grid: Self =
            serde_json::from_str(s).map_err(|e| GridError::Malformed(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    /// 8-bit grayscale PGM heatmap, cell values scaled by the max cell.
    /// Rows are written top-down so +y points up in the image.
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let n = self.spec.resolution;
        writeln!(w, "P5")?;
        writeln!(w, "{n} {n}")?;
        writeln!(w, "255")?;
        let max = self.max_value();
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let mut bytes = Vec::with_capacity(n * n);
        for row in (0..n).rev() {
            for col in 0..n {
                bytes.push((self.value(row, col) * scale).round().clamp(0.0, 255.0) as u8);
            }
        }
        w.write_all(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_gaussian(mean: Vector2<f64>) -> MixtureModel {
        MixtureModel::new(vec![GaussianComponent::new(mean, Matrix2::identity(), 1.0)])
    }

    #[test]
    fn density_peak_standard_normal() {
        let m = unit_gaussian(Vector2::zeros());
        let d = evaluate_density(&m, Vector2::zeros()).unwrap();
        assert_relative_eq!(d, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-12);
    }

    #[test]
    fn density_symmetric_pair() {
        let m = MixtureModel::new(vec![
            GaussianComponent::new(Vector2::new(1.0, 0.0), Matrix2::identity(), 0.5),
            GaussianComponent::new(Vector2::new(-1.0, 0.0), Matrix2::identity(), 0.5),
        ]);
        let d = evaluate_density(&m, Vector2::zeros()).unwrap();
        let single = evaluate_density(&unit_gaussian(Vector2::new(1.0, 0.0)), Vector2::zeros()).unwrap();
        assert_relative_eq!(d, 2.0 * 0.5 * single, epsilon = 1e-12);
    }

    #[test]
    fn density_tight_peak() {
        let m = MixtureModel::new(vec![GaussianComponent::new(
            Vector2::new(3.0, 4.0),
            Matrix2::identity() * 0.25,
            1.0,
        )]);
        let d = evaluate_density(&m, Vector2::new(3.0, 4.0)).unwrap();
        assert_relative_eq!(d, 1.0 / (2.0 * std::f64::consts::PI * 0.25), epsilon = 1e-12);
    }

    #[test]
    fn density_integrates_to_weight_sum() {
        // 10-sigma box quadrature against the closed form.
        let m = MixtureModel::new(vec![
            GaussianComponent::new(Vector2::new(0.5, -0.3), Matrix2::new(0.8, 0.2, 0.2, 1.1), 0.6),
            GaussianComponent::new(Vector2::new(-1.0, 2.0), Matrix2::identity() * 0.5, 0.4),
        ]);
        let steps = 400;
        let half = 12.0;
        let h = 2.0 * half / steps as f64;
        let mut integral = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let p = Vector2::new(-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h);
                integral += evaluate_density(&m, p).unwrap() * h * h;
            }
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }

    #[test]
    fn density_rejects_singular_covariance() {
        let m = MixtureModel::new(vec![GaussianComponent::new(
            Vector2::zeros(),
            Matrix2::zeros(),
            1.0,
        )]);
        assert_eq!(
            evaluate_density(&m, Vector2::zeros()),
            Err(GridError::DegenerateComponent)
        );
    }

    #[test]
    fn density_empty_model_errors() {
        let m = MixtureModel::default();
        assert_eq!(evaluate_density(&m, Vector2::zeros()), Err(GridError::EmptyModel));
    }

    #[test]
    fn raster_uniform_limit() {
        // Covariance much larger than the extent: every cell near 1/n².
        let spec = GridSpec::new(1.0, 10, Vector2::zeros());
        let m = MixtureModel::new(vec![GaussianComponent::new(
            Vector2::new(0.5, 0.5),
            Matrix2::identity() * 1e6,
            1.0,
        )]);
        let g = rasterize_normalize(&m, spec).unwrap();
        for v in &g.values {
            assert_relative_eq!(*v, 0.01, epsilon = 1e-6);
        }
    }

    #[test]
    fn raster_delta_limit() {
        let spec = GridSpec::new(10.0, 10, Vector2::zeros());
        let m = MixtureModel::new(vec![GaussianComponent::isotropic(
            Vector2::new(2.5, 3.5),
            0.01,
            1.0,
        )]);
        let g = rasterize_normalize(&m, spec).unwrap();
        let (row, col) = spec.cell_of(Vector2::new(2.5, 3.5)).unwrap();
        assert!(g.value(row, col) > 0.999);
        assert!(probability_at(&g, Vector2::new(2.5, 3.5)).unwrap() > 0.999);
        assert!(probability_at(&g, Vector2::new(8.5, 8.5)).unwrap() < 1e-6);
    }

    #[test]
    fn raster_sums_to_one_with_centered_normal() {
        let spec = GridSpec::new(20.0, 100, Vector2::new(-10.0, -10.0));
        let m = unit_gaussian(Vector2::zeros());
        let g = rasterize_normalize(&m, spec).unwrap();
        assert!((g.sum() - 1.0).abs() < 1e-9);
        // Brute-force oracle: the max cell is the one containing the mean.
        let (max_idx, _) = g
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let (row, col) = (max_idx / 100, max_idx % 100);
        // The mean sits on a cell corner, so any of the four adjacent cells
        // may carry the max; their centers are all within one cell size.
        assert!(spec.cell_center(row, col).norm() < spec.cell_size());
    }

    #[test]
    fn probability_at_uniform_interior() {
        let spec = GridSpec::new(1.0, 10, Vector2::zeros());
        let g = ProbabilityGrid::uniform(spec);
        assert_relative_eq!(probability_at(&g, Vector2::new(0.37, 0.61)).unwrap(), 0.01);
    }

    #[test]
    fn probability_at_out_of_bounds() {
        let g = ProbabilityGrid::uniform(GridSpec::new(1.0, 10, Vector2::zeros()));
        assert!(matches!(
            probability_at(&g, Vector2::new(1.5, 0.5)),
            Err(GridError::OutOfBounds(..))
        ));
    }

    #[test]
    fn rmse_identity_and_hand_case() {
        let spec = GridSpec::new(1.0, 2, Vector2::zeros());
        let uniform = ProbabilityGrid::uniform(spec);
        assert_eq!(grid_rmse(&uniform, &uniform).unwrap(), 0.0);

        let delta = ProbabilityGrid { spec, values: vec![1.0, 0.0, 0.0, 0.0] };
        let expect = ((0.75f64.powi(2) + 3.0 * 0.25f64.powi(2)) / 4.0).sqrt();
        assert_relative_eq!(grid_rmse(&uniform, &delta).unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(expect, 0.4330, epsilon = 1e-4);
        // symmetry
        assert_eq!(
            grid_rmse(&uniform, &delta).unwrap(),
            grid_rmse(&delta, &uniform).unwrap()
        );
    }

    #[test]
    fn rmse_spec_mismatch() {
        let a = ProbabilityGrid::uniform(GridSpec::new(1.0, 2, Vector2::zeros()));
        let b = ProbabilityGrid::uniform(GridSpec::new(1.0, 3, Vector2::zeros()));
        assert_eq!(grid_rmse(&a, &b), Err(GridError::SpecMismatch));
    }

    #[test]
    fn empty_raster_detected() {
        let spec = GridSpec::new(1.0, 2, Vector2::zeros());
        assert_eq!(
            ProbabilityGrid::from_raw(spec, vec![0.0; 4]),
            Err(GridError::EmptyRaster)
        );
    }

    #[test]
    fn binary_roundtrip() {
        let spec = GridSpec::new(20.0, 16, Vector2::new(-10.0, -10.0));
        let g = rasterize_normalize(&unit_gaussian(Vector2::new(1.0, 2.0)), spec).unwrap();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        let back = ProbabilityGrid::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn json_roundtrip() {
        let spec = GridSpec::new(4.0, 4, Vector2::zeros());
        let g = rasterize_normalize(&unit_gaussian(Vector2::new(2.0, 2.0)), spec).unwrap();
        let back = ProbabilityGrid::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn pgm_header_and_peak() {
        let spec = GridSpec::new(4.0, 4, Vector2::zeros());
        let g = rasterize_normalize(&unit_gaussian(Vector2::new(2.0, 2.0)), spec).unwrap();
        let mut buf = Vec::new();
        g.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 4\n255\n"));
        assert!(buf[buf.len() - 16..].contains(&255u8));
    }
}
