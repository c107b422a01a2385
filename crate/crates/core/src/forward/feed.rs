use nalgebra::{Point3, Vector3};
use num_complex::Complex64;

use super::{CVec3, FeedPort};
use crate::error::{Error, Result};
use crate::geometry::{facet_properties, TriMesh};
use crate::units::wavenumber;

/// Boresight of every feed: from the focal region towards the reflector vertex.
pub const FEED_AXIS: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

/// Reflection geometry of one facet.
///
/// For meshes sampled from a known paraboloid the reflection point sits on
/// the smooth surface above the facet centroid (plus the mean vertex
/// distortion), and the normal combines the analytic surface slope with the
/// slope of the linearly interpolated distortion. Otherwise the flat facet
/// centroid and normal are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectingPatch {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
    pub area: f64,
    /// Orthonormal tangent basis, `t2 = normal x t1`.
    pub tangents: [Vector3<f64>; 2],
}

pub fn reflecting_patches(mesh: &TriMesh) -> Result<Vec<ReflectingPatch>> {
    let facets = facet_properties(mesh)?;
    Ok(mesh
        .faces
        .iter()
        .zip(&facets)
        .map(|(&[a, b, c], facet)| {
            let (point, normal) = match mesh.surface {
                Some(surface) => {
                    let (x, z) = (facet.centroid.x, facet.centroid.z);
                    let d = [mesh.distortions[a], mesh.distortions[b], mesh.distortions[c]];
                    let (va, vb, vc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
                    let (gx, gz) = surface.slope(x, z);
                    let (dx, dz) = linear_slope(
                        [(va.x, va.z), (vb.x, vb.z), (vc.x, vc.z)],
                        d,
                    );
                    let mean = (d[0] + d[1] + d[2]) / 3.0;
                    let point = Point3::new(x, surface.height(x, z) + mean, z);
                    let normal = Vector3::new(-(gx + dx), 1.0, -(gz + dz)).normalize();
                    (point, normal)
                }
                None => (facet.centroid, facet.unit_normal),
            };
            let seed = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
            let t1 = (seed - normal * normal.dot(&seed)).normalize();
            let t2 = normal.cross(&t1);
            ReflectingPatch { point, normal, area: facet.area, tangents: [t1, t2] }
        })
        .collect())
}

/// Gradient `(d/dx, d/dz)` of the plane through three `(x, z, value)` samples.
fn linear_slope(xz: [(f64, f64); 3], v: [f64; 3]) -> (f64, f64) {
    let (ax, az) = (xz[1].0 - xz[0].0, xz[1].1 - xz[0].1);
    let (bx, bz) = (xz[2].0 - xz[0].0, xz[2].1 - xz[0].1);
    let (dv1, dv2) = (v[1] - v[0], v[2] - v[0]);
    let det = ax * bz - az * bx;
    if det.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    ((dv1 * bz - dv2 * az) / det, (ax * dv2 - bx * dv1) / det)
}

/// Frequency-independent part of a facet's illumination by one port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FacetDrive {
    pub patch: ReflectingPatch,
    /// Unit vector from the port to the facet.
    pub incident_dir: Vector3<f64>,
    pub reflected_dir: Vector3<f64>,
    /// Distance from the port to the reflection point.
    pub path_length: f64,
    /// Reflected field without the `exp(-j k r)` propagation phase.
    pub amplitude: CVec3,
}

/// Illumination of one facet at a single frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetExcitation {
    pub patch: ReflectingPatch,
    pub incident_dir: Vector3<f64>,
    /// Specular reflection of `incident_dir` about the facet normal.
    pub reflected_dir: Vector3<f64>,
    pub path_length: f64,
    /// Accumulated propagation phase `k r`, rad.
    pub phase: f64,
    /// Reflected electric field at the reflection point, including phase.
    pub field: CVec3,
}

pub(crate) fn drives(port: &FeedPort, patches: &[ReflectingPatch]) -> Result<Vec<FacetDrive>> {
    port.validate()?;
    patches
        .iter()
        .enumerate()
        .map(|(facet, patch)| {
            let offset = patch.point - port.position;
            let r = offset.norm();
            if r < 1e-6 {
                return Err(Error::FacetAtPort { facet });
            }
            let dir = offset / r;
            let n = patch.normal;
            let reflected_dir = dir - n * (2.0 * dir.dot(&n));
            let cos_theta = dir.dot(&FEED_AXIS);
            // Lit only from the front of the feed and the front of the facet.
            let lit = cos_theta > 0.0 && dir.dot(&n) < 0.0;
            let gain = if lit { cos_theta.powf(port.pattern_exponent) / r } else { 0.0 };
            let transverse = port.polarization - dir * dir.dot(&port.polarization);
            let incident = transverse * gain;
            // Perfect conductor: tangential components flip, normal component kept.
            let reflected = -incident + n * (2.0 * n.dot(&incident));
            let amplitude = reflected.map(|c| Complex64::new(c, 0.0));
            Ok(FacetDrive { patch: *patch, incident_dir: dir, reflected_dir, path_length: r, amplitude })
        })
        .collect()
}

/// Spherical-wave illumination of every facet by `port`, reflected off the
/// facet as from a perfect conductor.
///
/// The incident field is the polarization projected transverse to the ray,
/// scaled by `cos^q(theta) / r` with `theta` measured from [`FEED_AXIS`], and
/// carries the phase `exp(-j k r)`.
pub fn feed_illumination(port: &FeedPort, mesh: &TriMesh, frequency_hz: f64) -> Result<Vec<FacetExcitation>> {
    let patches = reflecting_patches(mesh)?;
    let k = wavenumber(frequency_hz);
    Ok(drives(port, &patches)?
        .into_iter()
        .map(|d| {
            let phase = k * d.path_length;
            let phasor = Complex64::from_polar(1.0, -phase);
            FacetExcitation {
                patch: d.patch,
                incident_dir: d.incident_dir,
                reflected_dir: d.reflected_dir,
                path_length: d.path_length,
                phase,
                field: d.amplitude * phasor,
            }
        })
        .collect())
}
