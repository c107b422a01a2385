use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

use super::feed::{FacetDrive, FacetExcitation, ReflectingPatch};
use super::{czero3, ApertureGrid, CVec3, FieldGrid};
use crate::error::{Error, Result};
use crate::units::wavenumber;

/// Facet re-radiation of a physical-optics reflected field onto a plane.
///
/// Each facet carries the equivalent current `M = -2 n x E_r` over its area
/// and radiates through the same `(1 + j k R) / R^3` kernel used for the
/// aperture-to-RoI step. The facet pattern is that of a square of equal area
/// with the incident linear phase across it,
/// `sinc(k a (o - i).t1 / 2) * sinc(k a (o - i).t2 / 2)`, which peaks on the
/// specular direction.
pub fn radiate_to_plane(
    excitation: &[FacetExcitation],
    plane: &ApertureGrid,
    frequency_hz: f64,
) -> Result<FieldGrid> {
    let sources: Vec<Source> = excitation
        .iter()
        .map(|e| Source::new(&e.patch, e.incident_dir, 0.0, e.field))
        .collect();
    let mut fields = radiate_many(&[sources], plane, &[frequency_hz])?;
    Ok(fields.remove(0).remove(0))
}

/// Frequency-independent source description for the multi-frequency path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Source {
    point: nalgebra::Point3<f64>,
    half_side: f64,
    area: f64,
    tangents: [Vector3<f64>; 2],
    incident_t: [f64; 2],
    path_length: f64,
    current: CVec3,
    lit: bool,
}

impl Source {
    fn new(patch: &ReflectingPatch, incident_dir: Vector3<f64>, path_length: f64, field: CVec3) -> Self {
        let n = patch.normal.map(|c| Complex64::new(c, 0.0));
        let current = n.cross(&field) * Complex64::new(-2.0, 0.0);
        let lit = field.iter().any(|c| c.norm_sqr() > 0.0);
        Self {
            point: patch.point,
            half_side: patch.area.sqrt() / 2.0,
            area: patch.area,
            tangents: patch.tangents,
            incident_t: [incident_dir.dot(&patch.tangents[0]), incident_dir.dot(&patch.tangents[1])],
            path_length,
            current,
            lit,
        }
    }

    pub(crate) fn from_drive(d: &FacetDrive) -> Self {
        Self::new(&d.patch, d.incident_dir, d.path_length, d.amplitude)
    }
}

/// `sin(x) / x` given `sin(x)` and `1 / x`.
#[inline]
fn sinc(x: f64, sin_x: f64, inv_x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        sin_x * inv_x
    }
}

/// Wavenumbers either stepped by a constant increment (phasors advanced by
/// recurrence) or arbitrary (phasors evaluated directly).
struct Spectrum<'a> {
    ks: &'a [f64],
    inv_ks: Vec<f64>,
    step: Option<f64>,
}

impl<'a> Spectrum<'a> {
    fn new(ks: &'a [f64]) -> Self {
        let step = if ks.len() >= 2 {
            let dk = (ks[ks.len() - 1] - ks[0]) / (ks.len() - 1) as f64;
            let even = dk > 0.0
                && ks.iter().enumerate().all(|(m, &k)| (k - (ks[0] + m as f64 * dk)).abs() <= 1e-12 * ks[0].abs());
            even.then_some(dk)
        } else {
            None
        };
        Self { ks, inv_ks: ks.iter().map(|k| 1.0 / k).collect(), step }
    }
}

/// Fields of every source set (one per port) at every wavenumber.
/// Returns `[set][frequency]`.
pub(crate) fn radiate_many(sets: &[Vec<Source>], plane: &ApertureGrid, frequencies_hz: &[f64]) -> Result<Vec<Vec<FieldGrid>>> {
    plane.validate()?;
    check_side(sets, plane)?;
    let ks: Vec<f64> = frequencies_hz.iter().map(|&f| wavenumber(f)).collect();
    let spectrum = Spectrum::new(&ks);
    let nf = ks.len();
    let np = sets.len();
    let nodes = plane.nodes();
    let stride = np * nf;

    let mut buffer = vec![czero3(); nodes.len() * stride];
    buffer.par_chunks_mut(stride).zip(nodes.par_iter()).for_each(|(acc, node)| {
        accumulate_node(sets, node, &spectrum, acc);
    });

    let mut out: Vec<Vec<FieldGrid>> = (0..np)
        .map(|_| {
            frequencies_hz
                .iter()
                .map(|&f| FieldGrid { aperture: *plane, frequency_hz: f, samples: Vec::with_capacity(nodes.len()) })
                .collect()
        })
        .collect();
    for chunk in buffer.chunks_exact(stride) {
        for (p, grids) in out.iter_mut().enumerate() {
            for (m, grid) in grids.iter_mut().enumerate() {
                grid.samples.push(chunk[p * nf + m]);
            }
        }
    }
    Ok(out)
}

fn check_side(sets: &[Vec<Source>], plane: &ApertureGrid) -> Result<()> {
    let mut sign = 0.0f64;
    for set in sets {
        for (facet, s) in set.iter().enumerate() {
            let d = plane.origin.y - s.point.y;
            if d.abs() < 1e-9 || (sign != 0.0 && d.signum() != sign) {
                return Err(Error::PlaneIntersectsMesh { facet });
            }
            sign = d.signum();
        }
    }
    Ok(())
}

fn accumulate_node(sets: &[Vec<Source>], node: &nalgebra::Point3<f64>, spectrum: &Spectrum<'_>, acc: &mut [CVec3]) {
    let nf = spectrum.ks.len();
    let k0 = spectrum.ks[0];
    let facets = sets.first().map_or(0, Vec::len);
    for f in 0..facets {
        let geom = &sets[0][f];
        let r = node - geom.point;
        let dist = r.norm();
        let inv = 1.0 / dist;
        let o1 = r.dot(&geom.tangents[0]) * inv;
        let o2 = r.dot(&geom.tangents[1]) * inv;
        let scale = -geom.area / (4.0 * PI) * inv * inv * inv;
        let rc = r.map(|c| Complex64::new(c, 0.0));

        for (p, set) in sets.iter().enumerate() {
            let s = &set[f];
            if !s.lit {
                continue;
            }
            let w = s.current.cross(&rc);
            let b1 = (o1 - s.incident_t[0]) * s.half_side;
            let b2 = (o2 - s.incident_t[1]) * s.half_side;
            let (inv_b1, inv_b2) = (1.0 / b1, 1.0 / b2);
            let path = s.path_length + dist;
            let out = &mut acc[p * nf..(p + 1) * nf];

            match spectrum.step {
                Some(dk) => {
                    let mut phase = Complex64::from_polar(1.0, -k0 * path);
                    let dphase = Complex64::from_polar(1.0, -dk * path);
                    let mut e1 = Complex64::from_polar(1.0, k0 * b1);
                    let de1 = Complex64::from_polar(1.0, dk * b1);
                    let mut e2 = Complex64::from_polar(1.0, k0 * b2);
                    let de2 = Complex64::from_polar(1.0, dk * b2);
                    for (m, (slot, &inv_k)) in out.iter_mut().zip(&spectrum.inv_ks).enumerate() {
                        let k = k0 + m as f64 * dk;
                        let pattern = sinc(k * b1, e1.im, inv_k * inv_b1) * sinc(k * b2, e2.im, inv_k * inv_b2);
                        let weight = phase * Complex64::new(1.0, k * dist) * (pattern * scale);
                        *slot += w * weight;
                        phase *= dphase;
                        e1 *= de1;
                        e2 *= de2;
                    }
                }
                None => {
                    for ((slot, &k), &inv_k) in out.iter_mut().zip(spectrum.ks).zip(&spectrum.inv_ks) {
                        let pattern = sinc(k * b1, (k * b1).sin(), inv_k * inv_b1) * sinc(k * b2, (k * b2).sin(), inv_k * inv_b2);
                        let weight = Complex64::from_polar(1.0, -k * path) * Complex64::new(1.0, k * dist) * (pattern * scale);
                        *slot += w * weight;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::feed::drives;
    use crate::forward::{feed_illumination, FeedPort, PortRole};
    use crate::geometry::{build_cra_surface, build_tra_surface, ReflectorParams};
    use nalgebra::Point3;

    fn small_params() -> ReflectorParams {
        ReflectorParams { aperture_size: 120.0, focal_length: 120.0, offset: 0.0, mean_facet_edge: 8.0, ..Default::default() }
    }

    fn focal_port(params: &ReflectorParams) -> FeedPort {
        FeedPort {
            position: params.paraboloid().focus(),
            polarization: Vector3::x(),
            pattern_exponent: 4.0,
            role: PortRole::Tx,
        }
    }

    fn plane(y: f64, extent: f64, spacing: f64) -> ApertureGrid {
        ApertureGrid { origin: Point3::new(0.0, y, 0.0), x_extent: extent, z_extent: extent, sample_spacing: spacing }
    }

    #[test]
    fn zero_excitation_gives_zero_field() {
        let params = small_params();
        let mesh = build_tra_surface(&params).unwrap();
        let mut exc = feed_illumination(&focal_port(&params), &mesh, 73.5e9).unwrap();
        for e in &mut exc {
            e.field = czero3();
        }
        let field = radiate_to_plane(&exc, &plane(200.0, 40.0, 4.0), 73.5e9).unwrap();
        assert!(field.samples.iter().all(|v| v.iter().all(|c| c.norm() == 0.0)));
    }

    #[test]
    fn single_facet_far_field_decay() {
        let params = small_params();
        let mesh = build_tra_surface(&params).unwrap();
        let exc = feed_illumination(&focal_port(&params), &mesh, 73.5e9).unwrap();
        let one = [exc[exc.len() / 2]];
        let p = one[0].patch.point;
        let at = |dist: f64| {
            let grid = ApertureGrid {
                origin: Point3::new(p.x, p.y + dist, p.z),
                x_extent: 0.0,
                z_extent: 0.0,
                sample_spacing: 1.0,
            };
            radiate_to_plane(&one, &grid, 73.5e9).unwrap().samples[0].norm()
        };
        let ratio = at(1000.0) / at(2000.0);
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn linear_in_excitation() {
        let params = small_params();
        let mesh = build_cra_surface(&params).unwrap();
        let exc = feed_illumination(&focal_port(&params), &mesh, 72e9).unwrap();
        let alpha = Complex64::new(0.3, -1.7);
        let scaled: Vec<_> = exc.iter().map(|e| FacetExcitation { field: e.field * alpha, ..*e }).collect();
        let grid = plane(250.0, 30.0, 5.0);
        let a = radiate_to_plane(&exc, &grid, 72e9).unwrap();
        let b = radiate_to_plane(&scaled, &grid, 72e9).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x * alpha - y).norm() <= 1e-12 * y.norm().max(1e-300));
        }
    }

    #[test]
    fn plane_through_mesh_is_rejected() {
        let params = small_params();
        let mesh = build_tra_surface(&params).unwrap();
        let exc = feed_illumination(&focal_port(&params), &mesh, 72e9).unwrap();
        let err = radiate_to_plane(&exc, &plane(-110.0, 20.0, 5.0), 72e9);
        assert!(matches!(err, Err(Error::PlaneIntersectsMesh { .. })));
    }

    #[test]
    fn recurrence_matches_direct_evaluation() {
        let params = small_params();
        let mesh = build_cra_surface(&params).unwrap();
        let patches = crate::forward::reflecting_patches(&mesh).unwrap();
        let sources: Vec<Source> =
            drives(&focal_port(&params), &patches).unwrap().iter().map(Source::from_drive).collect();
        let grid = plane(300.0, 20.0, 5.0);
        let freqs: Vec<f64> = (0..6).map(|i| 71e9 + i as f64 * 1e9).collect();
        let stepped = radiate_many(&[sources.clone()], &grid, &freqs).unwrap();
        for (m, &f) in freqs.iter().enumerate() {
            let single = radiate_many(&[sources.clone()], &grid, &[f]).unwrap();
            for (a, b) in stepped[0][m].samples.iter().zip(&single[0][0].samples) {
                assert!((a - b).norm() <= 1e-11 * b.norm());
            }
        }
    }

    #[test]
    fn perturbation_decorrelates_the_aperture_pattern() {
        let params = small_params();
        let port = focal_port(&params);
        let grid = plane(300.0, 160.0, 2.0);
        let magnitude = |mesh| -> Vec<f64> {
            let exc = feed_illumination(&port, &mesh, 73.5e9).unwrap();
            radiate_to_plane(&exc, &grid, 73.5e9).unwrap().samples.iter().map(|v| v.norm()).collect()
        };
        let tra = magnitude(build_tra_surface(&params).unwrap());
        let cra = magnitude(build_cra_surface(&params).unwrap());
        let corr = correlation(&tra, &cra);
        assert!(corr < 0.99, "correlation {corr}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
