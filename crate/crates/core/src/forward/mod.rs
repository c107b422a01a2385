//! Forward model: feed -> reflector -> calibration aperture -> region of interest.
//!
//! The reflector is modelled with single-bounce physical optics. Each facet
//! re-radiates the specularly reflected feed field through an equivalent
//! magnetic current, with a facet pattern peaked on the specular direction.
//! The field sampled on the calibration aperture is then turned into
//! equivalent currents `M = -2 n0 x E` and propagated into the RoI with the
//! exact near-field kernel
//!
//! ```text
//! E(r) = -1/(4 pi) * sum_n ds * G0(R) (M_n x R) exp(-j k R),   G0 = (1 + j k R) / R^3
//! ```
//!
//! Sensing rows are the unconjugated products `E_tx . E_rx` per voxel.

mod assemble;
mod feed;
mod propagate;
mod radiate;

use std::path::Path;

use nalgebra::{Point3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::scene::{RoIGrid, RoISpec};

pub use assemble::{assemble_sensing_matrix, sensing_row, AssemblyOptions};
pub use feed::{feed_illumination, reflecting_patches, FacetExcitation, ReflectingPatch, FEED_AXIS};
pub use propagate::{equivalent_currents, propagate_to_roi, propagate_to_roi_with, scalar_kernel, PropagationMethod};
pub use radiate::radiate_to_plane;

pub type CVec3 = Vector3<Complex64>;

pub(crate) fn czero3() -> CVec3 {
    Vector3::new(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
}

/// Aperture normal, pointing from the reflector towards the RoI.
pub const APERTURE_NORMAL: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Planar sampling grid normal to +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureGrid {
    /// Centre of the sampled rectangle.
    pub origin: Point3<f64>,
    pub x_extent: f64,
    pub z_extent: f64,
    pub sample_spacing: f64,
}

impl ApertureGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_spacing > 0.0) || !self.sample_spacing.is_finite() {
            return Err(Error::param("sample_spacing", "must be > 0"));
        }
        if !(self.x_extent >= 0.0 && self.z_extent >= 0.0) {
            return Err(Error::param("aperture", "extents must be >= 0"));
        }
        Ok(())
    }

    /// Node counts along x and z. Nodes are centred on `origin`.
    pub fn counts(&self) -> (usize, usize) {
        let n = |extent: f64| (extent / self.sample_spacing + 1e-9).floor() as usize + 1;
        (n(self.x_extent), n(self.z_extent))
    }

    pub fn len(&self) -> usize {
        let (nx, nz) = self.counts();
        nx * nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.sample_spacing * self.sample_spacing
    }

    pub fn first_node(&self) -> (f64, f64) {
        let (nx, nz) = self.counts();
        (
            self.origin.x - (nx - 1) as f64 * self.sample_spacing / 2.0,
            self.origin.z - (nz - 1) as f64 * self.sample_spacing / 2.0,
        )
    }

    /// Node `index` with x fastest.
    pub fn node(&self, index: usize) -> Point3<f64> {
        let (nx, _) = self.counts();
        let (x0, z0) = self.first_node();
        let (ix, iz) = (index % nx, index / nx);
        Point3::new(
            x0 + ix as f64 * self.sample_spacing,
            self.origin.y,
            z0 + iz as f64 * self.sample_spacing,
        )
    }

    pub fn nodes(&self) -> Vec<Point3<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

/// Complex vector field sampled on an aperture grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub aperture: ApertureGrid,
    pub frequency_hz: f64,
    pub samples: Vec<CVec3>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub kind: String,
    pub format: String,
    pub aperture: ApertureGrid,
    pub frequency_hz: f64,
    pub nodes: usize,
    #[serde(default)]
    pub config_hash: String,
}

impl FieldGrid {
    pub fn zeros(aperture: ApertureGrid, frequency_hz: f64) -> Self {
        Self { samples: vec![czero3(); aperture.len()], aperture, frequency_hz }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.aperture.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {} aperture nodes",
                self.samples.len(),
                self.aperture.len()
            )));
        }
        if !all_finite(&self.samples) {
            return Err(Error::param("field", "samples must be finite"));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: Complex64) -> Self {
        Self { samples: self.samples.iter().map(|v| v * alpha).collect(), ..self.clone() }
    }

    /// Binary layout: per node, `(Ex, Ey, Ez)` as interleaved complex pairs.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        io::write_complex(path, &flatten(&self.samples))?;
        let meta = FieldMetadata {
            kind: "aperture_field".into(),
            format: "c64le, node-major (x fastest), components x y z".into(),
            aperture: self.aperture,
            frequency_hz: self.frequency_hz,
            nodes: self.samples.len(),
            config_hash: config_hash.to_owned(),
        };
        io::write_json(&io::sidecar_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: FieldMetadata = io::read_json(&io::sidecar_path(path))?;
        let flat = io::read_complex(path, meta.nodes * 3)?;
        let field = Self { aperture: meta.aperture, frequency_hz: meta.frequency_hz, samples: unflatten(&flat) };
        field.validate()?;
        Ok(field)
    }
}

/// Equivalent magnetic surface current on an aperture grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentGrid {
    pub aperture: ApertureGrid,
    pub frequency_hz: f64,
    pub samples: Vec<CVec3>,
}

/// Field at every voxel centre of a RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoIField {
    pub roi: RoIGrid,
    pub frequency_hz: f64,
    pub samples: Vec<CVec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortRole {
    Tx,
    Rx,
}

/// A MIMO feed port modelled as a `cos^q` spherical-wave source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedPort {
    pub position: Point3<f64>,
    pub polarization: Vector3<f64>,
    pub pattern_exponent: f64,
    pub role: PortRole,
}

impl FeedPort {
    pub fn validate(&self) -> Result<()> {
        if (self.polarization.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::param("polarization", "must be a unit vector"));
        }
        if !(self.pattern_exponent >= 0.0) {
            return Err(Error::param("pattern_exponent", "must be >= 0"));
        }
        Ok(())
    }
}

/// Cross-shaped MIMO layout around `center`: transmitters along x and
/// receivers along z, `count` of each at `pitch` spacing, symmetric about the
/// centre.
pub fn cross_layout(
    center: Point3<f64>,
    count: usize,
    pitch: f64,
    polarization: Vector3<f64>,
    pattern_exponent: f64,
) -> Vec<FeedPort> {
    let offset = |i: usize| (i as f64 - (count as f64 - 1.0) / 2.0) * pitch;
    let tx = (0..count).map(|i| FeedPort {
        position: center + Vector3::new(offset(i), 0.0, 0.0),
        polarization,
        pattern_exponent,
        role: PortRole::Tx,
    });
    let rx = (0..count).map(|i| FeedPort {
        position: center + Vector3::new(0.0, 0.0, offset(i)),
        polarization,
        pattern_exponent,
        role: PortRole::Rx,
    });
    tx.chain(rx).collect()
}

/// One sensing-matrix row label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowIndex {
    pub frequency_hz: f64,
    pub tx: usize,
    pub rx: usize,
}

/// Dense row-major complex sensing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
    pub row_index: Vec<RowIndex>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensingMetadata {
    pub kind: String,
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    /// `(frequency_hz, tx, rx)` per row.
    pub row_index: Vec<(f64, usize, usize)>,
    pub roi: Option<RoISpec>,
    #[serde(default)]
    pub config_hash: String,
}

impl SensingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>, row_index: Vec<RowIndex>) -> Result<Self> {
        if data.len() != rows * cols || row_index.len() != rows {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix with {} entries and {} row labels",
                data.len(),
                row_index.len()
            )));
        }
        Ok(Self { rows, cols, data, row_index })
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `H u`, rows evaluated in parallel with a fixed summation order.
    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(u.len(), self.cols, "vector length must equal column count");
        (0..self.rows)
            .into_par_iter()
            .map(|i| self.row(i).iter().zip(u).map(|(h, x)| h * x).sum())
            .collect()
    }

    /// `H^H w`.
    pub fn apply_adjoint(&self, w: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(w.len(), self.rows, "vector length must equal row count");
        let cols = self.cols;
        let chunk = 256;
        let mut out = vec![Complex64::new(0.0, 0.0); cols];
        out.par_chunks_mut(chunk).enumerate().for_each(|(c, slot)| {
            let start = c * chunk;
            for (i, wi) in w.iter().enumerate() {
                let row = &self.data[i * cols + start..i * cols + start + slot.len()];
                for (o, h) in slot.iter_mut().zip(row) {
                    *o += h.conj() * wi;
                }
            }
        });
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn save(&self, path: &Path, roi: Option<&RoIGrid>, config_hash: &str) -> Result<()> {
        io::write_complex(path, &self.data)?;
        let meta = SensingMetadata {
            kind: "sensing_matrix".into(),
            format: "c64le, row-major".into(),
            rows: self.rows,
            cols: self.cols,
            row_index: self.row_index.iter().map(|r| (r.frequency_hz, r.tx, r.rx)).collect(),
            roi: roi.map(|r| r.spec()),
            config_hash: config_hash.to_owned(),
        };
        io::write_json(&io::sidecar_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, SensingMetadata)> {
        let meta: SensingMetadata = io::read_json(&io::sidecar_path(path))?;
        let data = io::read_complex(path, meta.rows * meta.cols)?;
        let row_index = meta
            .row_index
            .iter()
            .map(|&(frequency_hz, tx, rx)| RowIndex { frequency_hz, tx, rx })
            .collect();
        Ok((Self::new(meta.rows, meta.cols, data, row_index)?, meta))
    }
}

pub(crate) fn all_finite(samples: &[CVec3]) -> bool {
    samples.iter().all(|v| v.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
}

pub(crate) fn flatten(samples: &[CVec3]) -> Vec<Complex64> {
    samples.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

pub(crate) fn unflatten(flat: &[Complex64]) -> Vec<CVec3> {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aperture_nodes_are_centred() {
        let grid = ApertureGrid {
            origin: Point3::new(350.0, 400.0, 0.0),
            x_extent: 30.0,
            z_extent: 20.0,
            sample_spacing: 3.0,
        };
        assert_eq!(grid.counts(), (11, 7));
        let first = grid.node(0);
        let last = grid.node(grid.len() - 1);
        assert_eq!((first.x, first.z), (335.0, -9.0));
        assert_eq!((last.x, last.z), (365.0, 9.0));
        assert_eq!(grid.node(1).x - first.x, 3.0);
    }

    #[test]
    fn cross_layout_is_symmetric() {
        let ports = cross_layout(Point3::origin(), 4, 10.0, Vector3::x(), 8.0);
        let tx: Vec<f64> = ports.iter().filter(|p| p.role == PortRole::Tx).map(|p| p.position.x).collect();
        let rx: Vec<f64> = ports.iter().filter(|p| p.role == PortRole::Rx).map(|p| p.position.z).collect();
        assert_eq!(tx, vec![-15.0, -5.0, 5.0, 15.0]);
        assert_eq!(rx, tx);
    }

    #[test]
    fn adjoint_is_consistent_with_apply() {
        let rows = 3;
        let cols = 300;
        let data: Vec<Complex64> =
            (0..rows * cols).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let idx = vec![RowIndex { frequency_hz: 1.0, tx: 0, rx: 0 }; rows];
        let h = SensingMatrix::new(rows, cols, data, idx).unwrap();
        let u: Vec<Complex64> = (0..cols).map(|i| Complex64::new(1.0 / (1.0 + i as f64), 0.5)).collect();
        let w = vec![Complex64::new(0.2, -1.0), Complex64::new(1.5, 0.1), Complex64::new(-0.7, 0.4)];
        let lhs: Complex64 = h.apply(&u).iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = u.iter().zip(h.apply_adjoint(&w)).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs.conj() - rhs.conj()).norm() < 1e-10 * lhs.norm());
    }
}
