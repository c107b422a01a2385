use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{all_finite, czero3, ApertureGrid, CVec3, CurrentGrid, FieldGrid, RoIField, APERTURE_NORMAL};
use crate::error::{Error, Result};
use crate::scene::RoIGrid;
use crate::units::wavenumber;

/// Default minimum source-observer separation, mm.
pub const DEFAULT_MIN_DISTANCE: f64 = 1.0;

/// `M = -2 n0 x E` at every aperture node.
pub fn equivalent_currents(field: &FieldGrid) -> Result<CurrentGrid> {
    field.validate()?;
    let n = APERTURE_NORMAL.map(|c| Complex64::new(c, 0.0));
    let samples = field.samples.iter().map(|e| n.cross(e) * Complex64::new(-2.0, 0.0)).collect();
    Ok(CurrentGrid { aperture: field.aperture, frequency_hz: field.frequency_hz, samples })
}

/// Scalar part of the near-field kernel, `G0(R) exp(-j k R)` with
/// `G0 = (1 + j k R) / R^3`. Depends only on the separation.
#[inline]
pub fn scalar_kernel(k: f64, distance: f64) -> Complex64 {
    let inv = 1.0 / distance;
    Complex64::new(1.0, k * distance) * Complex64::from_polar(inv * inv * inv, -k * distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMethod {
    /// FFT convolution when the grids allow it, direct summation otherwise.
    #[default]
    Auto,
    /// Sum over every (node, voxel) pair.
    Direct,
    /// Plane-by-plane FFT convolution. Requires voxel sizes along x and z to
    /// be integer multiples of the aperture spacing and a current with no
    /// normal component.
    Fft,
}

/// Radiates aperture currents into every voxel of the RoI with one-point
/// quadrature per node (weight `spacing^2`).
pub fn propagate_to_roi(currents: &CurrentGrid, roi: &RoIGrid, frequency_hz: f64) -> Result<RoIField> {
    propagate_to_roi_with(currents, roi, frequency_hz, PropagationMethod::Auto, DEFAULT_MIN_DISTANCE)
}

pub fn propagate_to_roi_with(
    currents: &CurrentGrid,
    roi: &RoIGrid,
    frequency_hz: f64,
    method: PropagationMethod,
    min_distance: f64,
) -> Result<RoIField> {
    let propagator = Propagator::new(&currents.aperture, roi, frequency_hz, method, min_distance)?;
    propagator.apply(currents)
}

/// Precomputed aperture-to-RoI operator for one frequency, reusable across ports.
pub(crate) struct Propagator {
    aperture: ApertureGrid,
    roi: RoIGrid,
    frequency_hz: f64,
    k: f64,
    min_distance: f64,
    plan: Plan,
}

enum Plan {
    Direct,
    Fft(FftPlan),
}

impl Propagator {
    pub(crate) fn new(
        aperture: &ApertureGrid,
        roi: &RoIGrid,
        frequency_hz: f64,
        method: PropagationMethod,
        min_distance: f64,
    ) -> Result<Self> {
        aperture.validate()?;
        let k = wavenumber(frequency_hz);
        let fft_ok = fft_ratios(aperture, roi).is_some() && nearest_plane(aperture, roi) >= min_distance;
        let plan = match method {
            PropagationMethod::Direct => Plan::Direct,
            PropagationMethod::Fft if !fft_ok => {
                return Err(Error::param(
                    "method",
                    "FFT propagation needs voxel sizes that are integer multiples of the aperture spacing \
                     and every range plane clear of the aperture",
                ))
            }
            PropagationMethod::Fft => Plan::Fft(FftPlan::new(aperture, roi, k)),
            PropagationMethod::Auto => {
                if fft_ok && fft_cost(aperture, roi) < direct_cost(aperture, roi) {
                    Plan::Fft(FftPlan::new(aperture, roi, k))
                } else {
                    Plan::Direct
                }
            }
        };
        Ok(Self { aperture: *aperture, roi: *roi, frequency_hz, k, min_distance, plan })
    }

    pub(crate) fn apply(&self, currents: &CurrentGrid) -> Result<RoIField> {
        if currents.aperture != self.aperture || currents.samples.len() != self.aperture.len() {
            return Err(Error::DimensionMismatch("current grid does not match the propagator aperture".into()));
        }
        if currents.frequency_hz != self.frequency_hz {
            return Err(Error::DimensionMismatch(format!(
                "currents at {} Hz, propagator at {} Hz",
                currents.frequency_hz, self.frequency_hz
            )));
        }
        if !all_finite(&currents.samples) {
            return Err(Error::param("currents", "samples must be finite"));
        }
        let samples = match &self.plan {
            Plan::Fft(plan) if currents.samples.iter().all(|m| m.y.norm_sqr() == 0.0) => plan.apply(&currents.samples),
            _ => self.direct(&currents.samples)?,
        };
        Ok(RoIField { roi: self.roi, frequency_hz: self.frequency_hz, samples })
    }

    fn direct(&self, currents: &[CVec3]) -> Result<Vec<CVec3>> {
        let nodes = self.aperture.nodes();
        let scale = -self.aperture.cell_area() / (4.0 * PI);
        let k = self.k;
        (0..self.roi.len())
            .into_par_iter()
            .map(|voxel| {
                let r = self.roi.voxel_center(voxel);
                let mut acc = czero3();
                for (node, (p, m)) in nodes.iter().zip(currents).enumerate() {
                    let sep: Vector3<f64> = r - p;
                    let dist = sep.norm();
                    if dist < self.min_distance {
                        return Err(Error::SourceTooClose { node, voxel, distance: dist, minimum: self.min_distance });
                    }
                    let g = scalar_kernel(k, dist);
                    let sc = sep.map(|c| Complex64::new(c, 0.0));
                    acc += m.cross(&sc) * g;
                }
                Ok(acc * Complex64::new(scale, 0.0))
            })
            .collect()
    }
}

fn nearest_plane(aperture: &ApertureGrid, roi: &RoIGrid) -> f64 {
    (0..roi.counts()[1]).map(|iy| (roi.axis_center(1, iy) - aperture.origin.y).abs()).fold(f64::INFINITY, f64::min)
}

/// Integer voxel-to-spacing ratios along x and z, when they exist.
fn fft_ratios(aperture: &ApertureGrid, roi: &RoIGrid) -> Option<(usize, usize)> {
    let ratio = |v: f64| {
        let r = v / aperture.sample_spacing;
        let n = r.round();
        (n >= 1.0 && (r - n).abs() <= 1e-9 * r).then_some(n as usize)
    };
    Some((ratio(roi.voxel[0])?, ratio(roi.voxel[2])?))
}

// Rough operation counts; a kernel evaluation (with its sine and cosine)
// weighs about twenty multiply-adds.
fn direct_cost(aperture: &ApertureGrid, roi: &RoIGrid) -> f64 {
    20.0 * aperture.len() as f64 * roi.len() as f64
}

fn fft_cost(aperture: &ApertureGrid, roi: &RoIGrid) -> f64 {
    let (lx, lz) = fft_lengths(aperture, roi).unwrap_or((usize::MAX, usize::MAX));
    let n = lx as f64 * lz as f64;
    roi.counts()[1] as f64 * n * (20.0 + 6.0 * n.log2())
}

/// Padded transform lengths along x and z for the FFT path.
fn fft_lengths(aperture: &ApertureGrid, roi: &RoIGrid) -> Option<(usize, usize)> {
    let (mx, mz) = fft_ratios(aperture, roi)?;
    let (nx, nz) = aperture.counts();
    let [px, _, pz] = roi.counts();
    Some((fast_len((px - 1) * mx + nx), fast_len((pz - 1) * mz + nz)))
}

/// Smallest length `>= n` whose only prime factors are 2, 3 and 5.
fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// 2-D FFT on a row-major `rows x cols` array. The forward transform leaves
/// the spectrum transposed (`cols x rows`); the inverse undoes that, so
/// pointwise products between spectra work on either layout.
struct Fft2 {
    rows: usize,
    cols: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            fwd_row: planner.plan_fft_forward(cols),
            fwd_col: planner.plan_fft_forward(rows),
            inv_row: planner.plan_fft_inverse(cols),
            inv_col: planner.plan_fft_inverse(rows),
        }
    }

    fn forward(&self, data: &mut Vec<Complex64>) {
        self.fwd_row.process(data);
        *data = transpose(data, self.rows, self.cols);
        self.fwd_col.process(data);
    }

    fn inverse(&self, data: &mut Vec<Complex64>) {
        self.inv_col.process(data);
        *data = transpose(data, self.cols, self.rows);
        self.inv_row.process(data);
        let norm = 1.0 / (self.rows * self.cols) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Per-plane kernel spectra for the FFT path.
///
/// Along x, voxel `p` sits `p * mx` aperture spacings past the first voxel, so
/// the field is the linear convolution of the node currents with the kernel
/// sampled at lattice offsets `p * mx - i`. Zero padding to `L >= T + n`
/// keeps the circular wrap away from every sampled output.
struct FftPlan {
    fft: Fft2,
    lx: usize,
    lz: usize,
    nx: usize,
    nz: usize,
    mx: usize,
    mz: usize,
    px: usize,
    pz: usize,
    scale: f64,
    planes: Vec<PlaneKernel>,
}

struct PlaneKernel {
    ry: f64,
    k0: Vec<Complex64>,
    kx: Vec<Complex64>,
    kz: Vec<Complex64>,
}

impl FftPlan {
    fn new(aperture: &ApertureGrid, roi: &RoIGrid, k: f64) -> Self {
        let (mx, mz) = fft_ratios(aperture, roi).expect("checked by caller");
        let (nx, nz) = aperture.counts();
        let [px, py, pz] = roi.counts();
        let (tx, tz) = ((px - 1) * mx, (pz - 1) * mz);
        let (lx, lz) = fft_lengths(aperture, roi).expect("checked by caller");
        let fft = Fft2::new(lz, lx);
        let h = aperture.sample_spacing;
        let (x0, z0) = aperture.first_node();
        let off_x = roi.first_center(0) - x0;
        let off_z = roi.first_center(2) - z0;

        let planes = (0..py)
            .into_par_iter()
            .map(|iy| {
                let ry = roi.axis_center(1, iy) - aperture.origin.y;
                let mut k0 = vec![Complex64::new(0.0, 0.0); lx * lz];
                let mut kx = k0.clone();
                let mut kz = k0.clone();
                for ez in 0..(tz + nz) {
                    let dz = off_z + (ez as f64 - (nz - 1) as f64) * h;
                    for ex in 0..(tx + nx) {
                        let dx = off_x + (ex as f64 - (nx - 1) as f64) * h;
                        let dist = (dx * dx + ry * ry + dz * dz).sqrt();
                        let g = scalar_kernel(k, dist);
                        let at = ez * lx + ex;
                        k0[at] = g;
                        kx[at] = g * dx;
                        kz[at] = g * dz;
                    }
                }
                fft.forward(&mut k0);
                fft.forward(&mut kx);
                fft.forward(&mut kz);
                PlaneKernel { ry, k0, kx, kz }
            })
            .collect();

        Self { fft, lx, lz, nx, nz, mx, mz, px, pz, scale: -aperture.cell_area() / (4.0 * PI), planes }
    }

    fn spectrum(&self, currents: &[CVec3], component: usize) -> Vec<Complex64> {
        let mut grid = vec![Complex64::new(0.0, 0.0); self.lx * self.lz];
        for iz in 0..self.nz {
            for ix in 0..self.nx {
                grid[iz * self.lx + ix] = currents[iz * self.nx + ix][component];
            }
        }
        self.fft.forward(&mut grid);
        grid
    }

    fn apply(&self, currents: &[CVec3]) -> Vec<CVec3> {
        let mx_hat = self.spectrum(currents, 0);
        let mz_hat = self.spectrum(currents, 2);
        let planes: Vec<Vec<CVec3>> = self
            .planes
            .par_iter()
            .map(|plane| {
                let n = self.lx * self.lz;
                let mut ex = Vec::with_capacity(n);
                let mut ey = Vec::with_capacity(n);
                let mut ez = Vec::with_capacity(n);
                for i in 0..n {
                    // M = (Mx, 0, Mz), R = (dx, ry, dz):
                    // (M x R) = (-Mz ry, Mz dx - Mx dz, Mx ry)
                    ex.push(plane.k0[i] * mz_hat[i] * -plane.ry);
                    ey.push(plane.kx[i] * mz_hat[i] - plane.kz[i] * mx_hat[i]);
                    ez.push(plane.k0[i] * mx_hat[i] * plane.ry);
                }
                self.fft.inverse(&mut ex);
                self.fft.inverse(&mut ey);
                self.fft.inverse(&mut ez);
                self.sample(&ex, &ey, &ez)
            })
            .collect();
        planes.concat()
    }

    fn sample(&self, ex: &[Complex64], ey: &[Complex64], ez: &[Complex64]) -> Vec<CVec3> {
        let (px, pz) = (self.px, self.pz);
        let s = Complex64::new(self.scale, 0.0);
        let mut out = Vec::with_capacity(px * pz);
        for iz in 0..pz {
            let tz = iz * self.mz + self.nz - 1;
            for ix in 0..px {
                let tx = ix * self.mx + self.nx - 1;
                let at = tz * self.lx + tx;
                out.push(Vector3::new(ex[at], ey[at], ez[at]) * s);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_roi, RoISpec};
    use nalgebra::Point3;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn field_with(sample: CVec3) -> FieldGrid {
        let aperture = ApertureGrid { origin: Point3::origin(), x_extent: 0.0, z_extent: 0.0, sample_spacing: 1.0 };
        FieldGrid { aperture, frequency_hz: 73.5e9, samples: vec![sample] }
    }

    fn real3(x: f64, y: f64, z: f64) -> CVec3 {
        Vector3::new(c(x, 0.0), c(y, 0.0), c(z, 0.0))
    }

    #[test]
    fn cross_product_examples() {
        let m = |e| equivalent_currents(&field_with(e)).unwrap().samples[0];
        assert_eq!(m(real3(1.0, 0.0, 0.0)), real3(0.0, 0.0, 2.0));
        assert_eq!(m(real3(0.0, 1.0, 0.0)), real3(0.0, 0.0, 0.0));
        assert_eq!(m(real3(0.0, 0.0, 1.0)), real3(-2.0, 0.0, 0.0));
    }

    #[test]
    fn currents_are_tangential_and_linear() {
        let e = Vector3::new(c(0.3, -1.0), c(2.0, 0.5), c(-0.7, 0.1));
        let alpha = c(1.5, -0.25);
        let a = equivalent_currents(&field_with(e)).unwrap().samples[0];
        let b = equivalent_currents(&field_with(e * alpha)).unwrap().samples[0];
        assert_eq!(a.y.norm(), 0.0);
        assert!((a * alpha - b).norm() < 1e-15);
    }

    #[test]
    fn kernel_is_symmetric_in_endpoints() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        let b = Vector3::new(-40.0, 700.0, 12.5);
        let k = wavenumber(74e9);
        assert_eq!(scalar_kernel(k, (a - b).norm()), scalar_kernel(k, (b - a).norm()));
    }

    fn single_node(m: CVec3) -> CurrentGrid {
        let aperture = ApertureGrid { origin: Point3::origin(), x_extent: 0.0, z_extent: 0.0, sample_spacing: 2.0 };
        CurrentGrid { aperture, frequency_hz: 73.5e9, samples: vec![m] }
    }

    fn point_roi(at: Point3<f64>) -> RoIGrid {
        build_roi(&RoISpec { center: at, extents: [1.0; 3], voxel: [1.0; 3] }).unwrap()
    }

    #[test]
    fn current_parallel_to_separation_does_not_radiate_there() {
        let out = propagate_to_roi(&single_node(real3(0.0, 0.0, 1.0)), &point_roi(Point3::new(0.0, 0.0, 500.0)), 73.5e9).unwrap();
        assert_eq!(out.samples[0].norm(), 0.0);
    }

    #[test]
    fn broadside_decay_is_inverse_distance() {
        let m = single_node(real3(1.0, 0.0, 0.0));
        let at = |y: f64| propagate_to_roi(&m, &point_roi(Point3::new(0.0, y, 0.0)), 73.5e9).unwrap().samples[0].norm();
        let ratio = at(100.0) / at(200.0);
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn too_close_is_an_error() {
        let m = single_node(real3(1.0, 0.0, 0.0));
        let err = propagate_to_roi(&m, &point_roi(Point3::new(0.0, 0.5, 0.0)), 73.5e9).unwrap_err();
        assert!(matches!(err, Error::SourceTooClose { node: 0, voxel: 0, .. }));
    }

    /// Naive summation with hand-written complex and vector arithmetic.
    fn brute_force(currents: &CurrentGrid, roi: &RoIGrid, frequency_hz: f64) -> Vec<[Complex64; 3]> {
        let k = 2.0 * PI * frequency_hz / 299_792_458_000.0;
        let h = currents.aperture.sample_spacing;
        let (nx, nz) = currents.aperture.counts();
        let x0 = currents.aperture.origin.x - (nx - 1) as f64 * h / 2.0;
        let z0 = currents.aperture.origin.z - (nz - 1) as f64 * h / 2.0;
        let [px, py, pz] = roi.counts();
        let mut out = Vec::new();
        for iy in 0..py {
            for iz in 0..pz {
                for ix in 0..px {
                    let obs = [
                        roi.center.x - roi.extents[0] / 2.0 + (ix as f64 + 0.5) * roi.voxel[0],
                        roi.center.y - roi.extents[1] / 2.0 + (iy as f64 + 0.5) * roi.voxel[1],
                        roi.center.z - roi.extents[2] / 2.0 + (iz as f64 + 0.5) * roi.voxel[2],
                    ];
                    let mut acc = [c(0.0, 0.0); 3];
                    for jz in 0..nz {
                        for jx in 0..nx {
                            let m = currents.samples[jz * nx + jx];
                            let src = [x0 + jx as f64 * h, currents.aperture.origin.y, z0 + jz as f64 * h];
                            let r = [obs[0] - src[0], obs[1] - src[1], obs[2] - src[2]];
                            let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                            let g0 = c(1.0, k * d) / (d * d * d);
                            let ph = c((k * d).cos(), -(k * d).sin());
                            let cross = [
                                m[1] * r[2] - m[2] * r[1],
                                m[2] * r[0] - m[0] * r[2],
                                m[0] * r[1] - m[1] * r[0],
                            ];
                            for a in 0..3 {
                                acc[a] += g0 * ph * cross[a] * (h * h) * (-1.0 / (4.0 * PI));
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn test_currents(with_normal: bool) -> CurrentGrid {
        let aperture =
            ApertureGrid { origin: Point3::new(10.0, 0.0, -5.0), x_extent: 57.0, z_extent: 57.0, sample_spacing: 3.0 };
        assert_eq!(aperture.counts(), (20, 20));
        let samples = (0..aperture.len())
            .map(|i| {
                let t = i as f64;
                let y = if with_normal { c((0.11 * t).sin(), 0.2) } else { c(0.0, 0.0) };
                Vector3::new(c((0.3 * t).cos(), (0.7 * t).sin()), y, c((1.1 * t).sin(), 0.25 * (0.2 * t).cos()))
            })
            .collect();
        CurrentGrid { aperture, frequency_hz: 73.5e9, samples }
    }

    fn test_roi() -> RoIGrid {
        build_roi(&RoISpec { center: Point3::new(14.0, 300.0, 0.0), extents: [30.0, 90.0, 30.0], voxel: [6.0, 30.0, 6.0] })
            .unwrap()
    }

    fn max_relative(a: &[CVec3], b: &[[Complex64; 3]]) -> f64 {
        let scale = b.iter().flat_map(|v| v.iter()).map(|c| c.norm()).fold(0.0, f64::max);
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| (0..3).map(move |i| (x[i] - y[i]).norm()))
            .fold(0.0, f64::max)
            / scale
    }

    #[test]
    fn direct_matches_brute_force() {
        let currents = test_currents(true);
        let roi = test_roi();
        assert_eq!(roi.counts(), [5, 3, 5]);
        let oracle = brute_force(&currents, &roi, currents.frequency_hz);
        let out = propagate_to_roi_with(&currents, &roi, currents.frequency_hz, PropagationMethod::Direct, 1.0).unwrap();
        assert!(max_relative(&out.samples, &oracle) < 1e-10);
    }

    #[test]
    fn fft_matches_brute_force() {
        let currents = test_currents(false);
        let roi = test_roi();
        let oracle = brute_force(&currents, &roi, currents.frequency_hz);
        let out = propagate_to_roi_with(&currents, &roi, currents.frequency_hz, PropagationMethod::Fft, 1.0).unwrap();
        let err = max_relative(&out.samples, &oracle);
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn fft_requires_aligned_grids() {
        let currents = test_currents(false);
        let roi = build_roi(&RoISpec { voxel: [5.0, 30.0, 6.0], extents: [30.0, 90.0, 30.0], ..test_roi().spec() }).unwrap();
        assert!(propagate_to_roi_with(&currents, &roi, 73.5e9, PropagationMethod::Fft, 1.0).is_err());
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(259), 270);
        assert_eq!(fast_len(1), 1);
    }
}
