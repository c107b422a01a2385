//! Region of interest, test targets and synthetic measurements.
//!
//! Voxels are ordered with x fastest, then z, then y (range):
//! `index = ix + nx * (iz + nz * iy)`, so each range plane is a contiguous
//! `nx * nz` block.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{RowIndex, SensingMatrix};
use crate::io;

/// Regular voxel lattice over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoIGrid {
    pub center: Point3<f64>,
    /// Extents along (x, y, z), mm.
    pub extents: [f64; 3],
    /// Voxel sizes along (x, y, z), mm.
    pub voxel: [f64; 3],
    counts: [usize; 3],
}

/// Construction parameters for [`build_roi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoISpec {
    pub center: Point3<f64>,
    pub extents: [f64; 3],
    pub voxel: [f64; 3],
}

pub fn build_roi(spec: &RoISpec) -> Result<RoIGrid> {
    let mut counts = [0usize; 3];
    for axis in 0..3 {
        let name = ['x', 'y', 'z'][axis];
        let (extent, voxel) = (spec.extents[axis], spec.voxel[axis]);
        if !(extent > 0.0 && voxel > 0.0) || !extent.is_finite() || !voxel.is_finite() {
            return Err(Error::param("roi", format!("extent and voxel size along {name} must be > 0")));
        }
        let ratio = extent / voxel;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::NonDivisibleExtent {
                axis: name,
                extent,
                voxel,
                suggestion: n.max(1.0) * voxel,
            });
        }
        counts[axis] = n as usize;
    }
    if !(spec.center.coords.iter().all(|c| c.is_finite())) {
        return Err(Error::param("roi", "center must be finite"));
    }
    Ok(RoIGrid { center: spec.center, extents: spec.extents, voxel: spec.voxel, counts })
}

impl RoIGrid {
    pub fn spec(&self) -> RoISpec {
        RoISpec { center: self.center, extents: self.extents, voxel: self.voxel }
    }

    /// Voxel counts along (x, y, z).
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.counts[0] * self.counts[2]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.counts[0] * (iz + self.counts[2] * iy)
    }

    /// Inverse of [`RoIGrid::index`], returning `(ix, iy, iz)`.
    #[inline]
    pub fn unindex(&self, index: usize) -> (usize, usize, usize) {
        let ix = index % self.counts[0];
        let rest = index / self.counts[0];
        (ix, rest / self.counts[2], rest % self.counts[2])
    }

    /// Coordinate of the first voxel centre along `axis`.
    pub fn first_center(&self, axis: usize) -> f64 {
        self.center[axis] - self.extents[axis] / 2.0 + self.voxel[axis] / 2.0
    }

    pub fn axis_center(&self, axis: usize, i: usize) -> f64 {
        self.center[axis] - self.extents[axis] / 2.0 + (i as f64 + 0.5) * self.voxel[axis]
    }

    pub fn voxel_center(&self, index: usize) -> Point3<f64> {
        let (ix, iy, iz) = self.unindex(index);
        Point3::new(self.axis_center(0, ix), self.axis_center(1, iy), self.axis_center(2, iz))
    }

    pub fn voxel_centers(&self) -> Vec<Point3<f64>> {
        (0..self.len()).map(|i| self.voxel_center(i)).collect()
    }

    fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - self.extents[axis] / 2.0
    }

    fn upper(&self, axis: usize) -> f64 {
        self.center[axis] + self.extents[axis] / 2.0
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| {
            let tol = 1e-9 * self.extents[a];
            p[a] >= self.lower(a) - tol && p[a] <= self.upper(a) + tol
        })
    }

    /// Voxel whose cell contains `p`, if any.
    pub fn locate(&self, p: &Point3<f64>) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = ((p[a] - self.lower(a)) / self.voxel[a]).floor();
            idx[a] = (t.max(0.0) as usize).min(self.counts[a] - 1);
        }
        Some(self.index(idx[0], idx[1], idx[2]))
    }
}

/// Complex reflectivity per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityVolume {
    pub roi: RoIGrid,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeMetadata {
    pub kind: String,
    pub format: String,
    pub roi: RoISpec,
    pub counts: [usize; 3],
    pub ordering: String,
    #[serde(default)]
    pub config_hash: String,
}

impl ReflectivityVolume {
    pub fn zeros(roi: RoIGrid) -> Self {
        Self { values: vec![Complex64::new(0.0, 0.0); roi.len()], roi }
    }

    pub fn new(roi: RoIGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != roi.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} voxels",
                values.len(),
                roi.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::param("values", "reflectivity must be finite"));
        }
        Ok(Self { roi, values })
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> Complex64 {
        self.values[self.roi.index(ix, iy, iz)]
    }

    /// Range plane `iy` as a row-major `nz x nx` slice.
    pub fn plane(&self, iy: usize) -> &[Complex64] {
        let n = self.roi.plane_len();
        &self.values[iy * n..(iy + 1) * n]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path, kind: &str, config_hash: &str) -> Result<()> {
        io::write_complex(path, &self.values)?;
        let meta = VolumeMetadata {
            kind: kind.to_owned(),
            format: "c64le".into(),
            roi: self.roi.spec(),
            counts: self.roi.counts(),
            ordering: "x fastest, then z, then y".into(),
            config_hash: config_hash.to_owned(),
        };
        io::write_json(&io::sidecar_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, VolumeMetadata)> {
        let meta: VolumeMetadata = io::read_json(&io::sidecar_path(path))?;
        let roi = build_roi(&meta.roi)?;
        let values = io::read_complex(path, roi.len())?;
        Ok((Self { roi, values }, meta))
    }
}

/// Measured (or synthesized) scattered field, one entry per sensing row.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<Complex64>,
    pub row_index: Vec<RowIndex>,
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementMetadata {
    pub kind: String,
    pub format: String,
    pub len: usize,
    pub row_index: Vec<RowIndex>,
    pub snr_db: Option<f64>,
    pub noise_seed: u64,
    #[serde(default)]
    pub config_hash: String,
}

impl MeasurementVector {
    pub fn save(&self, path: &Path, noise_seed: u64, config_hash: &str) -> Result<()> {
        io::write_complex(path, &self.values)?;
        let meta = MeasurementMetadata {
            kind: "measurements".into(),
            format: "c64le".into(),
            len: self.values.len(),
            row_index: self.row_index.clone(),
            snr_db: self.snr_db,
            noise_seed,
            config_hash: config_hash.to_owned(),
        };
        io::write_json(&io::sidecar_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, MeasurementMetadata)> {
        let meta: MeasurementMetadata = io::read_json(&io::sidecar_path(path))?;
        let values = io::read_complex(path, meta.len)?;
        let g = Self { values, row_index: meta.row_index.clone(), snr_db: meta.snr_db };
        Ok((g, meta))
    }
}

/// Target geometry in target-local coordinates (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetShape {
    /// Horizontal bar on top of a vertical stem, in the local (x, z) plane,
    /// centred on the bounding box of the letter.
    TShape { bar_length: f64, bar_width: f64, stem_length: f64, stem_width: f64 },
    /// Isolated scatterers at local offsets.
    PointSet { points: Vec<Point3<f64>> },
    /// Box with edge lengths along local (x, y, z).
    Box { size: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub shape: TargetShape,
    /// Target origin relative to the RoI centre.
    pub offset: Vector3<f64>,
    /// Rotation about the range (y) axis, degrees.
    pub rotation_deg: f64,
    pub reflectivity: Complex64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            shape: TargetShape::TShape {
                bar_length: 200.0,
                bar_width: 50.0,
                stem_length: 150.0,
                stem_width: 50.0,
            },
            offset: Vector3::zeros(),
            rotation_deg: 45.0,
            reflectivity: Complex64::new(1.0, 0.0),
        }
    }
}

impl TargetSpec {
    /// Local (x, z) rectangles `[x0, x1, z0, z1]` covered by a T.
    fn t_rectangles(bar_length: f64, bar_width: f64, stem_length: f64, stem_width: f64) -> [[f64; 4]; 2] {
        let top = (bar_width + stem_length) / 2.0;
        let bar = [-bar_length / 2.0, bar_length / 2.0, top - bar_width, top];
        let stem = [-stem_width / 2.0, stem_width / 2.0, -top, top - bar_width];
        [bar, stem]
    }

    fn rotate(&self, local_x: f64, local_z: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (c * local_x - s * local_z, s * local_x + c * local_z)
    }

    fn unrotate(&self, dx: f64, dz: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (c * dx + s * dz, -s * dx + c * dz)
    }
}

/// Voxels whose centres lie inside the target get its reflectivity.
///
/// Extended shapes use half-open intervals along range so a slab one voxel
/// deep always covers exactly one range plane. Points go to the voxel whose
/// cell contains them.
pub fn rasterize_target(spec: &TargetSpec, roi: &RoIGrid) -> Result<ReflectivityVolume> {
    let origin = roi.center + spec.offset;
    let mut vol = ReflectivityVolume::zeros(*roi);
    let check = |p: Point3<f64>, what: &str| {
        if roi.contains(&p) {
            Ok(())
        } else {
            Err(Error::TargetOutsideRoi(format!("{what} at ({:.3}, {:.3}, {:.3}) mm", p.x, p.y, p.z)))
        }
    };

    match &spec.shape {
        TargetShape::PointSet { points } => {
            for (i, p) in points.iter().enumerate() {
                let (dx, dz) = spec.rotate(p.x, p.z);
                let world = Point3::new(origin.x + dx, origin.y + p.y, origin.z + dz);
                check(world, &format!("point {i}"))?;
                let idx = roi.locate(&world).expect("contained point has a voxel");
                vol.values[idx] = spec.reflectivity;
            }
        }
        TargetShape::TShape { bar_length, bar_width, stem_length, stem_width } => {
            let rects = TargetSpec::t_rectangles(*bar_length, *bar_width, *stem_length, *stem_width);
            let depth = roi.voxel[1];
            for rect in &rects {
                for (lx, lz) in [(rect[0], rect[2]), (rect[0], rect[3]), (rect[1], rect[2]), (rect[1], rect[3])] {
                    let (dx, dz) = spec.rotate(lx, lz);
                    check(Point3::new(origin.x + dx, origin.y, origin.z + dz), "T-shape corner")?;
                }
            }
            fill(&mut vol, spec, |dx, dy, dz| {
                if !(dy >= -depth / 2.0 && dy < depth / 2.0) {
                    return false;
                }
                let (lx, lz) = spec.unrotate(dx, dz);
                rects.iter().any(|r| lx >= r[0] && lx <= r[1] && lz >= r[2] && lz <= r[3])
            });
        }
        TargetShape::Box { size } => {
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        let (dx, dz) = spec.rotate(sx * size[0] / 2.0, sz * size[2] / 2.0);
                        let corner = Point3::new(origin.x + dx, origin.y + sy * size[1] / 2.0, origin.z + dz);
                        check(corner, "box corner")?;
                    }
                }
            }
            fill(&mut vol, spec, |dx, dy, dz| {
                let (lx, lz) = spec.unrotate(dx, dz);
                let half = |v: f64, s: f64| v >= -s / 2.0 && v < s / 2.0;
                half(lx, size[0]) && half(dy, size[1]) && half(lz, size[2])
            });
        }
    }
    Ok(vol)
}

fn fill(vol: &mut ReflectivityVolume, spec: &TargetSpec, inside: impl Fn(f64, f64, f64) -> bool) {
    let origin = vol.roi.center + spec.offset;
    for i in 0..vol.values.len() {
        let c = vol.roi.voxel_center(i);
        if inside(c.x - origin.x, c.y - origin.y, c.z - origin.z) {
            vol.values[i] = spec.reflectivity;
        }
    }
}

/// `g = H u + n` with circular complex white Gaussian noise scaled so that
/// `10 log10(|Hu|^2 / E|n|^2) = snr_db`. A non-finite (infinite) SNR yields
/// the exact product.
pub fn synthesize_measurements(
    h: &SensingMatrix,
    u: &ReflectivityVolume,
    snr_db: f64,
    seed: u64,
) -> Result<MeasurementVector> {
    if h.cols != u.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "sensing matrix has {} columns, volume has {} voxels",
            h.cols,
            u.values.len()
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::param("snr_db", "must not be NaN"));
    }
    let mut values = h.apply(&u.values);
    let snr = if snr_db.is_finite() { Some(snr_db) } else { None };
    if let Some(snr_db) = snr {
        let signal: f64 = values.iter().map(|v| v.norm_sqr()).sum();
        let variance = signal / (values.len() as f64 * 10f64.powf(snr_db / 10.0));
        let sigma = (variance / 2.0).sqrt();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for v in &mut values {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re, im) * sigma;
        }
    }
    Ok(MeasurementVector { values, row_index: h.row_index.clone(), snr_db: snr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SensingMatrix;
    use proptest::prelude::*;

    fn desk_roi() -> RoIGrid {
        build_roi(&RoISpec {
            center: Point3::new(350.0, 1000.0, 0.0),
            extents: [300.0, 210.0, 300.0],
            voxel: [6.0, 30.0, 6.0],
        })
        .unwrap()
    }

    #[test]
    fn voxel_counts() {
        let full = build_roi(&RoISpec {
            center: Point3::origin(),
            extents: [600.0, 420.0, 600.0],
            voxel: [6.0, 30.0, 6.0],
        })
        .unwrap();
        assert_eq!(full.counts(), [100, 14, 100]);
        assert_eq!(full.len(), 140_000);
        assert_eq!(desk_roi().counts(), [50, 7, 50]);
        assert_eq!(desk_roi().len(), 17_500);
    }

    #[test]
    fn non_divisible_extent_is_rejected() {
        let err = build_roi(&RoISpec {
            center: Point3::origin(),
            extents: [10.0, 10.0, 10.0],
            voxel: [3.0, 5.0, 5.0],
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonDivisibleExtent { axis: 'x', .. }));
        assert!(err.to_string().contains("nearest fit: 9"));
    }

    #[test]
    fn ordering_is_x_then_z_then_y() {
        let roi = desk_roi();
        assert_eq!(roi.index(1, 0, 0), 1);
        assert_eq!(roi.index(0, 0, 1), 50);
        assert_eq!(roi.index(0, 1, 0), 2500);
        let c0 = roi.voxel_center(0);
        let c1 = roi.voxel_center(1);
        assert_eq!(c1.x - c0.x, 6.0);
        assert_eq!(c0.y, 1000.0 - 105.0 + 15.0);
    }

    proptest! {
        #[test]
        fn index_round_trips(i in 0usize..17_500) {
            let roi = desk_roi();
            let (x, y, z) = roi.unindex(i);
            prop_assert_eq!(roi.index(x, y, z), i);
            prop_assert_eq!(roi.locate(&roi.voxel_center(i)), Some(i));
        }
    }

    #[test]
    fn empty_point_set_is_zero() {
        let spec = TargetSpec {
            shape: TargetShape::PointSet { points: vec![] },
            ..TargetSpec::default()
        };
        let vol = rasterize_target(&spec, &desk_roi()).unwrap();
        assert!(vol.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn point_at_voxel_center_is_single_voxel() {
        let roi = desk_roi();
        let c = roi.voxel_center(roi.index(10, 3, 20));
        let spec = TargetSpec {
            shape: TargetShape::PointSet { points: vec![Point3::from(c - roi.center)] },
            rotation_deg: 0.0,
            ..TargetSpec::default()
        };
        let vol = rasterize_target(&spec, &roi).unwrap();
        let nonzero: Vec<usize> = (0..vol.values.len()).filter(|&i| vol.values[i].norm() > 0.0).collect();
        assert_eq!(nonzero, vec![roi.index(10, 3, 20)]);
    }

    #[test]
    fn centred_box_covers_ten_by_one_by_ten() {
        let spec = TargetSpec {
            shape: TargetShape::Box { size: [60.0, 30.0, 60.0] },
            rotation_deg: 0.0,
            ..TargetSpec::default()
        };
        let vol = rasterize_target(&spec, &desk_roi()).unwrap();
        assert_eq!(vol.values.iter().filter(|v| v.norm() > 0.0).count(), 100);
    }

    #[test]
    fn t_shape_occupies_one_range_plane() {
        let roi = desk_roi();
        let vol = rasterize_target(&TargetSpec::default(), &roi).unwrap();
        let per_plane: Vec<usize> =
            (0..7).map(|iy| vol.plane(iy).iter().filter(|v| v.norm() > 0.0).count()).collect();
        assert_eq!(per_plane.iter().filter(|&&n| n > 0).count(), 1);
        assert!(per_plane[3] > 300, "{per_plane:?}");
        // Even range count: the target still lands in exactly one plane.
        let even = build_roi(&RoISpec { extents: [300.0, 240.0, 300.0], ..roi.spec() }).unwrap();
        let vol = rasterize_target(&TargetSpec::default(), &even).unwrap();
        let planes = (0..8).filter(|&iy| vol.plane(iy).iter().any(|v| v.norm() > 0.0)).count();
        assert_eq!(planes, 1);
    }

    #[test]
    fn target_outside_roi_is_rejected() {
        let spec = TargetSpec { offset: Vector3::new(120.0, 0.0, 0.0), ..TargetSpec::default() };
        assert!(matches!(rasterize_target(&spec, &desk_roi()), Err(Error::TargetOutsideRoi(_))));
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> SensingMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let row_index = (0..rows).map(|r| RowIndex { frequency_hz: 71e9, tx: r, rx: 0 }).collect();
        SensingMatrix::new(rows, cols, data, row_index).unwrap()
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let roi = build_roi(&RoISpec { center: Point3::origin(), extents: [3.0, 1.0, 2.0], voxel: [1.0; 3] }).unwrap();
        let h = random_matrix(5, 6, 1);
        let zero = ReflectivityVolume::zeros(roi);
        let g = synthesize_measurements(&h, &zero, f64::INFINITY, 3).unwrap();
        assert!(g.values.iter().all(|v| v.norm() == 0.0));

        let u = ReflectivityVolume::new(roi, (0..6).map(|i| Complex64::new(i as f64, 1.0)).collect()).unwrap();
        let g = synthesize_measurements(&h, &u, f64::INFINITY, 3).unwrap();
        assert_eq!(g.values, h.apply(&u.values));
        assert_eq!(g.snr_db, None);

        let u2 = ReflectivityVolume::new(roi, u.values.iter().map(|v| v * 2.5).collect()).unwrap();
        let g2 = synthesize_measurements(&h, &u2, f64::INFINITY, 3).unwrap();
        for (a, b) in g.values.iter().zip(&g2.values) {
            assert!((a * 2.5 - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let roi = build_roi(&RoISpec { center: Point3::origin(), extents: [3.0, 1.0, 2.0], voxel: [1.0; 3] }).unwrap();
        let h = random_matrix(5, 7, 1);
        assert!(synthesize_measurements(&h, &ReflectivityVolume::zeros(roi), 30.0, 0).is_err());
    }

    #[test]
    fn empirical_snr_matches_request() {
        let roi = build_roi(&RoISpec { center: Point3::origin(), extents: [8.0, 1.0, 8.0], voxel: [1.0; 3] }).unwrap();
        let h = random_matrix(480, 64, 5);
        let u = ReflectivityVolume::new(roi, (0..64).map(|i| Complex64::new((i % 5) as f64, 0.5)).collect()).unwrap();
        let clean = h.apply(&u.values);
        let signal: f64 = clean.iter().map(|v| v.norm_sqr()).sum();
        let mut total = 0.0;
        for seed in 0..100 {
            let g = synthesize_measurements(&h, &u, 30.0, seed).unwrap();
            let noise: f64 = g.values.iter().zip(&clean).map(|(a, b)| (a - b).norm_sqr()).sum();
            total += 10.0 * (signal / noise).log10();
        }
        let mean = total / 100.0;
        assert!((mean - 30.0).abs() < 1.0, "mean SNR {mean}");
    }

    #[test]
    fn noise_realizations_are_uncorrelated() {
        let roi = build_roi(&RoISpec { center: Point3::origin(), extents: [4.0, 1.0, 4.0], voxel: [1.0; 3] }).unwrap();
        let h = random_matrix(480, 16, 9);
        let u = ReflectivityVolume::new(roi, vec![Complex64::new(1.0, 0.0); 16]).unwrap();
        let clean = h.apply(&u.values);
        let noise = |seed| -> Vec<Complex64> {
            let g = synthesize_measurements(&h, &u, 10.0, seed).unwrap();
            g.values.iter().zip(&clean).map(|(a, b)| a - b).collect()
        };
        // Correlation of the 960 real components, averaged over disjoint seed pairs.
        let pairs = 20;
        let mut total = 0.0;
        for p in 0..pairs {
            let (a, b) = (noise(2 * p), noise(2 * p + 1));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| (x * y.conj()).re).sum();
            let na: f64 = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            total += (dot / (na * nb)).abs();
        }
        let mean = total / pairs as f64;
        assert!(mean < 0.05, "mean correlation {mean}");
    }
}
