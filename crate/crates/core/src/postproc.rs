//! Image post-processing and sensing-matrix diagnostics.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::SensingMatrix;
use crate::io;
use crate::scene::{ReflectivityVolume, RoIGrid};
use crate::units::SPEED_OF_LIGHT;

/// Treatment of neighbours that fall outside a range plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorderMode {
    /// Missing neighbours count as zero; the divisor is always `(Na + 1)^2`.
    #[default]
    Zero,
    /// Divide by the number of neighbours that lie inside the plane.
    Renormalize,
}

/// Box average over `(Na + 1) x (Na + 1)` pixels within each range plane.
pub fn cross_range_average(vol: &ReflectivityVolume, na: usize) -> Result<ReflectivityVolume> {
    cross_range_average_with(vol, na, BorderMode::Zero)
}

pub fn cross_range_average_with(vol: &ReflectivityVolume, na: usize, border: BorderMode) -> Result<ReflectivityVolume> {
    if na % 2 != 0 {
        return Err(Error::param("na", format!("window parameter must be even, got {na}")));
    }
    if na == 0 {
        return Ok(vol.clone());
    }
    let [nx, _, nz] = vol.roi.counts();
    let half = (na / 2) as isize;
    let full = ((na + 1) * (na + 1)) as f64;
    let plane_len = vol.roi.plane_len();
    let mut out = vec![Complex64::new(0.0, 0.0); vol.values.len()];
    out.par_chunks_mut(plane_len).zip(vol.values.par_chunks(plane_len)).for_each(|(dst, src)| {
        for iz in 0..nz as isize {
            for ix in 0..nx as isize {
                let mut sum = Complex64::new(0.0, 0.0);
                let mut count = 0usize;
                for jz in (iz - half).max(0)..=(iz + half).min(nz as isize - 1) {
                    for jx in (ix - half).max(0)..=(ix + half).min(nx as isize - 1) {
                        sum += src[jz as usize * nx + jx as usize];
                        count += 1;
                    }
                }
                let div = match border {
                    BorderMode::Zero => full,
                    BorderMode::Renormalize => count as f64,
                };
                dst[iz as usize * nx + ix as usize] = sum / div;
            }
        }
    });
    ReflectivityVolume::new(vol.roi, out)
}

/// Divide by the largest magnitude.
pub fn normalize_magnitude(vol: &ReflectivityVolume) -> Result<ReflectivityVolume> {
    let max = vol.max_magnitude();
    if !(max > 0.0) {
        return Err(Error::ZeroVolume);
    }
    ReflectivityVolume::new(vol.roi, vol.values.iter().map(|v| v / max).collect())
}

/// Voxel mask on a RoI grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub roi: RoIGrid,
    pub mask: Vec<bool>,
}

impl BinaryVolume {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Voxels with non-zero value.
    pub fn support(vol: &ReflectivityVolume) -> Self {
        Self { roi: vol.roi, mask: vol.values.iter().map(|v| v.norm() > 0.0).collect() }
    }
}

/// `|u| >= tau` per voxel.
pub fn threshold_volume(vol: &ReflectivityVolume, tau: f64) -> BinaryVolume {
    if !(0.0..=1.0).contains(&tau) {
        log::warn!("threshold {tau} is outside [0, 1]");
    }
    BinaryVolume { roi: vol.roi, mask: vol.values.iter().map(|v| v.norm() >= tau).collect() }
}

/// Real image with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Image2D {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv_image(path, self.width, &self.values)
    }

    /// 8-bit PGM scaled to the image maximum.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        io::write_pgm(path, self.width, self.height, &self.values, self.max())
    }
}

/// Maximum `|u|` along range for every `(x, z)` column; `height` is the z count.
pub fn max_projection_range(vol: &ReflectivityVolume) -> Image2D {
    let [nx, ny, nz] = vol.roi.counts();
    let mut values = vec![0.0f64; nx * nz];
    for iy in 0..ny {
        for (acc, v) in values.iter_mut().zip(vol.plane(iy)) {
            *acc = acc.max(v.norm());
        }
    }
    Image2D { width: nx, height: nz, values }
}

/// `|u|` on range plane `iy`.
pub fn range_slice(vol: &ReflectivityVolume, iy: usize) -> Image2D {
    let [nx, _, nz] = vol.roi.counts();
    Image2D { width: nx, height: nz, values: vol.plane(iy).iter().map(|v| v.norm()).collect() }
}

/// Largest `|u|` in each range plane.
pub fn range_profile(vol: &ReflectivityVolume) -> Vec<f64> {
    let ny = vol.roi.counts()[1];
    (0..ny).map(|iy| vol.plane(iy).iter().map(|v| v.norm()).fold(0.0, f64::max)).collect()
}

/// Indices of strict local maxima of `profile` that reach `min_relative`
/// times its largest value. End points count when they exceed their single
/// neighbour.
pub fn range_peaks(profile: &[f64], min_relative: f64) -> Vec<usize> {
    let max = profile.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    (0..profile.len())
        .filter(|&i| {
            let v = profile[i];
            let left = i == 0 || v > profile[i - 1];
            let right = i + 1 == profile.len() || v > profile[i + 1];
            left && right && v >= min_relative * max
        })
        .collect()
}

/// Diffraction- and bandwidth-limited resolution, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionLimits {
    pub sigma_xz: f64,
    pub sigma_y: f64,
}

/// `sigma_xz = lambda0 R / (2 D0)`, `sigma_y = c / (2 B)`; lengths in mm.
pub fn resolution_limits(lambda0_mm: f64, range_mm: f64, aperture_mm: f64, bandwidth_hz: f64) -> Result<ResolutionLimits> {
    for (name, v) in [("lambda0", lambda0_mm), ("range", range_mm), ("aperture", aperture_mm), ("bandwidth", bandwidth_hz)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::param(name, "must be positive"));
        }
    }
    Ok(ResolutionLimits {
        sigma_xz: lambda0_mm * range_mm / (2.0 * aperture_mm),
        sigma_y: SPEED_OF_LIGHT / (2.0 * bandwidth_hz) * 1e3,
    })
}

/// Intersection over union of two masks on the same grid.
pub fn support_iou(recon: &BinaryVolume, truth: &BinaryVolume) -> Result<f64> {
    if recon.roi != truth.roi || recon.mask.len() != truth.mask.len() {
        return Err(Error::DimensionMismatch("masks live on different grids".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in recon.mask.iter().zip(&truth.mask) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        log::warn!("both supports are empty; IoU defined as 1");
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `exp(-sum p ln p)` with `p = sigma^2 / sum sigma^2`.
    pub effective_rank: f64,
    /// `sigma_1 / sigma_k` over all `k = min(rows, cols)` values.
    pub condition: f64,
}

impl DiversityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,singular_value\n");
        for (i, s) in self.singular_values.iter().enumerate() {
            out.push_str(&format!("{i},{s:.12e}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        format!(
            "singular values: {}, effective rank: {:.3}, sigma1/sigmak: {:.3e}",
            self.singular_values.len(),
            self.effective_rank,
            self.condition
        )
    }
}

/// Singular-value spectrum through the eigenvalues of the smaller Gram matrix.
pub fn spectral_diversity(h: &SensingMatrix) -> Result<DiversityReport> {
    let (m, n) = (h.rows, h.cols);
    let k = m.min(n);
    if k == 0 || h.data.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::param("sensing_matrix", "must be non-zero"));
    }
    let entry = |r: usize, c: usize| h.data[r * n + c];
    let upper: Vec<Vec<Complex64>> = if m <= n {
        (0..m)
            .into_par_iter()
            .map(|i| (i..m).map(|j| h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b.conj()).sum()).collect())
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| (0..m).map(|r| entry(r, i).conj() * entry(r, j)).sum()).collect())
            .collect()
    };
    let mut gram = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    for (i, row) in upper.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            gram[(i, i + off)] = *v;
            gram[(i + off, i)] = v.conj();
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut singular_values: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let energy: f64 = singular_values.iter().map(|s| s * s).sum();
    let entropy: f64 = singular_values
        .iter()
        .map(|s| s * s / energy)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    let effective_rank = entropy.exp().clamp(1.0, k as f64);
    let condition = singular_values[0] / singular_values[k - 1];
    Ok(DiversityReport { singular_values, effective_rank, condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::RowIndex;
    use crate::scene::{build_roi, RoISpec};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn roi(nx: usize, ny: usize, nz: usize) -> RoIGrid {
        build_roi(&RoISpec { center: Point3::origin(), extents: [nx as f64, ny as f64, nz as f64], voxel: [1.0; 3] }).unwrap()
    }

    fn volume(r: RoIGrid, f: impl Fn(usize) -> Complex64) -> ReflectivityVolume {
        ReflectivityVolume::new(r, (0..r.len()).map(f).collect()).unwrap()
    }

    #[test]
    fn window_zero_is_identity() {
        let v = volume(roi(4, 2, 3), |i| c(i as f64, -(i as f64)));
        assert_eq!(cross_range_average(&v, 0).unwrap(), v);
        assert!(cross_range_average(&v, 3).is_err());
    }

    #[test]
    fn constant_interior_is_preserved() {
        let v = volume(roi(9, 1, 9), |_| c(2.5, -1.0));
        let out = cross_range_average(&v, 4).unwrap();
        assert!((out.get(4, 0, 4) - c(2.5, -1.0)).norm() < 1e-14);
        // Zero padding dims the corners.
        assert!((out.get(0, 0, 0) - c(2.5, -1.0) * (9.0 / 25.0)).norm() < 1e-14);
        let renorm = cross_range_average_with(&v, 4, BorderMode::Renormalize).unwrap();
        assert!((renorm.get(0, 0, 0) - c(2.5, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn impulse_spreads_to_five_by_five() {
        let r = roi(11, 2, 11);
        let center = r.index(5, 1, 5);
        let v = volume(r, |i| if i == center { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let out = cross_range_average(&v, 4).unwrap();
        for iz in 0..11 {
            for ix in 0..11 {
                let expected = if (3..=7).contains(&ix) && (3..=7).contains(&iz) { 0.04 } else { 0.0 };
                assert!((out.get(ix, 1, iz).re - expected).abs() < 1e-15);
                assert_eq!(out.get(ix, 0, iz), c(0.0, 0.0));
            }
        }
    }

    proptest! {
        #[test]
        fn averaging_is_linear(a in -3.0f64..3.0, seed in 0u64..100) {
            let r = roi(6, 2, 5);
            let x = volume(r, |i| c(((i as u64 * 7 + seed) % 11) as f64, (i % 3) as f64));
            let y = volume(r, |i| c((i % 5) as f64, ((i as u64 + seed) % 4) as f64));
            let sum = volume(r, |i| x.values[i] * a + y.values[i]);
            let lhs = cross_range_average(&sum, 2).unwrap();
            let ax = cross_range_average(&x, 2).unwrap();
            let ay = cross_range_average(&y, 2).unwrap();
            for i in 0..r.len() {
                prop_assert!((lhs.values[i] - (ax.values[i] * a + ay.values[i])).norm() < 1e-12);
            }
        }

        #[test]
        fn threshold_after_normalize_is_scale_invariant(scale in 1e-3f64..1e3, tau in 0.0f64..1.0) {
            let r = roi(5, 3, 4);
            let v = volume(r, |i| c(((i * 13) % 17) as f64, ((i * 5) % 7) as f64 - 3.0));
            let scaled = volume(r, |i| v.values[i] * scale);
            let a = threshold_volume(&normalize_magnitude(&v).unwrap(), tau);
            let b = threshold_volume(&normalize_magnitude(&scaled).unwrap(), tau);
            prop_assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn interior_sum_is_preserved() {
        let r = roi(12, 1, 12);
        let v = volume(r, |i| {
            let (ix, _, iz) = r.unindex(i);
            if (4..8).contains(&ix) && (5..7).contains(&iz) { c(ix as f64, iz as f64) } else { c(0.0, 0.0) }
        });
        let out = cross_range_average(&v, 2).unwrap();
        let sum = |v: &ReflectivityVolume| v.values.iter().sum::<Complex64>();
        assert!((sum(&out) - sum(&v)).norm() < 1e-12);
    }

    #[test]
    fn normalization() {
        let v = volume(roi(2, 1, 2), |i| [c(4.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0), c(0.0, 0.0)][i]);
        let n = normalize_magnitude(&v).unwrap();
        assert_eq!(n.values[0], c(1.0, 0.0));
        assert!((n.values[1].arg() - v.values[1].arg()).abs() < 1e-15);
        assert_eq!(normalize_magnitude(&n).unwrap(), n);
        assert!(matches!(normalize_magnitude(&volume(roi(1, 1, 1), |_| c(0.0, 0.0))), Err(Error::ZeroVolume)));
    }

    #[test]
    fn thresholds() {
        let v = normalize_magnitude(&volume(roi(3, 1, 3), |i| c(i as f64, 0.0))).unwrap();
        assert_eq!(threshold_volume(&v, 0.0).count(), 9);
        assert!(threshold_volume(&v, 0.35).count() >= 1);
        assert_eq!(threshold_volume(&v, 1.0 + 1e-12).count(), 0);
    }

    #[test]
    fn projection() {
        let r = roi(4, 3, 2);
        let hot = r.index(2, 1, 1);
        let v = volume(r, |i| if i == hot { c(0.0, -3.0) } else { c(0.0, 0.0) });
        let img = max_projection_range(&v);
        assert_eq!((img.width, img.height), (4, 2));
        assert_eq!(img.values.iter().filter(|&&x| x > 0.0).count(), 1);
        assert_eq!(img.values[1 * 4 + 2], 3.0);
        assert_eq!(img.max(), v.max_magnitude());

        let flat = volume(r, |i| c((i % r.plane_len()) as f64, 1.0));
        let img = max_projection_range(&flat);
        assert_eq!(img, range_slice(&flat, 2));
    }

    #[test]
    fn peaks() {
        assert_eq!(range_peaks(&[0.0, 1.0, 0.2, 0.9, 0.1], 0.5), vec![1, 3]);
        assert_eq!(range_peaks(&[0.0, 1.0, 0.2, 0.3, 0.1], 0.5), vec![1]);
        assert_eq!(range_peaks(&[1.0, 0.5, 0.7], 0.1), vec![0, 2]);
        assert_eq!(range_peaks(&[0.5, 0.5], 0.1), Vec::<usize>::new());
        assert!(range_peaks(&[0.0; 3], 0.1).is_empty());
    }

    #[test]
    fn resolution_examples() {
        let r = resolution_limits(4.1, 1500.0, 500.0, 5e9).unwrap();
        assert!((r.sigma_xz - 6.15).abs() < 1e-12 * 6.15);
        assert!((r.sigma_y - 29.9792458).abs() < 1e-12 * 30.0);
        let wide = resolution_limits(4.1, 1500.0, 1000.0, 5e9).unwrap();
        assert!((wide.sigma_xz * 2.0 - r.sigma_xz).abs() < 1e-12);
        assert!(resolution_limits(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let r = roi(20, 1, 10);
        let truth = BinaryVolume { roi: r, mask: (0..200).map(|i| i < 100).collect() };
        let disjoint = BinaryVolume { roi: r, mask: (0..200).map(|i| i >= 100).collect() };
        let all = BinaryVolume { roi: r, mask: vec![true; 200] };
        assert_eq!(support_iou(&truth, &truth).unwrap(), 1.0);
        assert_eq!(support_iou(&disjoint, &truth).unwrap(), 0.0);
        assert_eq!(support_iou(&all, &truth).unwrap(), 0.5);
        assert_eq!(support_iou(&truth, &all).unwrap(), support_iou(&all, &truth).unwrap());
        let empty = BinaryVolume { roi: r, mask: vec![false; 200] };
        assert_eq!(support_iou(&empty, &empty).unwrap(), 1.0);
    }

    fn matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> SensingMatrix {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        SensingMatrix::new(rows, cols, data, vec![RowIndex { frequency_hz: 1.0, tx: 0, rx: 0 }; rows]).unwrap()
    }

    #[test]
    fn orthonormal_rows_have_full_effective_rank() {
        // Rows of a unitary DFT matrix.
        let n = 16;
        let h = matrix(6, n, |r, c| Complex64::from_polar(1.0 / (n as f64).sqrt(), -std::f64::consts::TAU * (r * c) as f64 / n as f64));
        let d = spectral_diversity(&h).unwrap();
        assert!((d.effective_rank - 6.0).abs() < 1e-9);
        assert!(d.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rank_one_has_unit_effective_rank() {
        for (rows, cols) in [(5, 9), (9, 5)] {
            let h = matrix(rows, cols, |r, c| c_val(r) * c_val(c + 3));
            let d = spectral_diversity(&h).unwrap();
            assert!((d.effective_rank - 1.0).abs() < 1e-9, "{}", d.effective_rank);
            assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn c_val(i: usize) -> Complex64 {
        c(1.0 + i as f64, 0.5 * i as f64)
    }

    #[test]
    fn singular_values_match_known_diagonal() {
        let h = matrix(3, 4, |r, c| if r == c { c_val(0) * (3 - r) as f64 } else { Complex64::new(0.0, 0.0) });
        let d = spectral_diversity(&h).unwrap();
        let norm = c_val(0).norm();
        for (s, e) in d.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((s - e * norm).abs() < 1e-12);
        }
        assert!((d.condition - 3.0).abs() < 1e-12);
        assert!(d.to_csv().starts_with("index,singular_value\n0,"));
    }
}
