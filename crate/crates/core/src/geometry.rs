//! Offset parabolic reflector surfaces and their pseudo-random perturbation.
//!
//! The traditional reflector (TRA) is the paraboloid
//!
//! ```text
//! y = ((x - L_off)^2 + z^2) / (4 f0) - f0,   (x - L_off, z) in [-D0/2, D0/2]^2
//! ```
//!
//! tessellated on a structured grid: the square footprint is cut into
//! `ceil(D0 / d0)` cells per side, each cell split into two right triangles
//! along the same diagonal. The compressive reflector (CRA) displaces every
//! vertex along +y by an i.i.d. draw from `U(-dh_m, +dh_m)`.
//!
//! Perturbation draws come from `ChaCha20Rng::seed_from_u64(seed)` and are
//! consumed in vertex-index order, so a given `(mesh, dh_m, seed)` produces
//! the same bytes on every platform.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reflector design parameters, lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectorParams {
    /// Aperture size `D0`: side of the square footprint.
    pub aperture_size: f64,
    /// Focal length `f0`.
    pub focal_length: f64,
    /// Offset `L_off` of the footprint centre along x.
    pub offset: f64,
    /// Target mean facet edge `d0`.
    pub mean_facet_edge: f64,
    /// Maximum vertex distortion `dh_m`.
    pub max_distortion: f64,
    pub seed: u64,
}

impl Default for ReflectorParams {
    fn default() -> Self {
        Self {
            aperture_size: 500.0,
            focal_length: 500.0,
            offset: 350.0,
            mean_facet_edge: 16.4,
            max_distortion: 0.8,
            seed: 1,
        }
    }
}

impl ReflectorParams {
    pub fn validate(&self) -> Result<()> {
        positive("aperture_size", self.aperture_size)?;
        positive("focal_length", self.focal_length)?;
        positive("mean_facet_edge", self.mean_facet_edge)?;
        if !self.offset.is_finite() {
            return Err(Error::param("offset", "must be finite"));
        }
        if !(self.max_distortion >= 0.0) || !self.max_distortion.is_finite() {
            return Err(Error::param(
                "max_distortion",
                format!("must be a finite value >= 0, got {}", self.max_distortion),
            ));
        }
        Ok(())
    }

    pub fn paraboloid(&self) -> Paraboloid {
        Paraboloid { focal_length: self.focal_length, offset: self.offset }
    }

    /// Centre of the reflector footprint on the unperturbed surface.
    pub fn center(&self) -> Point3<f64> {
        Point3::new(self.offset, -self.focal_length, 0.0)
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be > 0, got {value}")))
    }
}

/// The smooth surface `y = ((x - offset)^2 + z^2) / (4 f) - f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paraboloid {
    pub focal_length: f64,
    pub offset: f64,
}

impl Paraboloid {
    #[inline]
    pub fn height(&self, x: f64, z: f64) -> f64 {
        let u = x - self.offset;
        (u * u + z * z) / (4.0 * self.focal_length) - self.focal_length
    }

    /// Surface gradient `(dy/dx, dy/dz)`.
    #[inline]
    pub fn slope(&self, x: f64, z: f64) -> (f64, f64) {
        let s = 1.0 / (2.0 * self.focal_length);
        ((x - self.offset) * s, z * s)
    }

    /// Geometric focus. The surface is symmetric about the line `x = offset, z = 0`.
    pub fn focus(&self) -> Point3<f64> {
        Point3::new(self.offset, 0.0, 0.0)
    }

    /// Area of the surface patch over `|x - offset| <= h`, `|z| <= h`, by
    /// composite Gauss-Legendre quadrature of `sqrt(1 + |grad y|^2)`.
    pub fn patch_area(&self, half_width: f64) -> f64 {
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let panels = 16;
        let w = 2.0 * half_width / panels as f64;
        let mut total = 0.0;
        for pu in 0..panels {
            for pv in 0..panels {
                let cu = -half_width + (pu as f64 + 0.5) * w;
                let cv = -half_width + (pv as f64 + 0.5) * w;
                for (a, wa) in NODES.iter().zip(WEIGHTS) {
                    for (b, wb) in NODES.iter().zip(WEIGHTS) {
                        let u = cu + a * w / 2.0;
                        let v = cv + b * w / 2.0;
                        let gx = u / (2.0 * self.focal_length);
                        let gz = v / (2.0 * self.focal_length);
                        total += wa * wb * (1.0 + gx * gx + gz * gz).sqrt();
                    }
                }
            }
        }
        total * w * w / 4.0
    }
}

/// Triangle mesh with per-vertex distortion along +y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Signed displacement of each vertex along +y relative to `surface`.
    pub distortions: Vec<f64>,
    /// The smooth surface the mesh was sampled from, when known.
    pub surface: Option<Paraboloid>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<()> {
        if self.distortions.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} distortions for {} vertices",
                self.distortions.len(),
                self.vertices.len()
            )));
        }
        let count = self.vertices.len();
        for (face, tri) in self.faces.iter().enumerate() {
            if let Some(&vertex) = tri.iter().find(|&&v| v >= count) {
                return Err(Error::FaceIndexOutOfRange { face, vertex, count });
            }
        }
        Ok(())
    }

    /// Vertex position with the distortion removed.
    pub fn base_vertex(&self, i: usize) -> Point3<f64> {
        let v = self.vertices[i];
        Point3::new(v.x, v.y - self.distortions[i], v.z)
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
            .into_iter()
            .map(|(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .collect()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let lengths = self.edge_lengths();
        lengths.iter().sum::<f64>() / lengths.len().max(1) as f64
    }

    /// Writes `v x y z` / `f i j k` lines (1-based indices).
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 48 + self.faces.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    /// Parses the text produced by [`TriMesh::to_text`]. Distortions start at
    /// zero and the surface is unknown; callers restore them from the sidecar.
    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let xyz: Vec<f64> = parts
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                    if xyz.len() != 3 {
                        return Err(format!("line {}: expected 3 coordinates", lineno + 1));
                    }
                    vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(format!("line {}: expected 3 one-based indices", lineno + 1));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                Some(tag) if tag.starts_with('#') => {}
                None => {}
                Some(tag) => return Err(format!("line {}: unknown record `{tag}`", lineno + 1)),
            }
        }
        let distortions = vec![0.0; vertices.len()];
        Ok(TriMesh { vertices, faces, distortions, surface: None })
    }
}

/// Sidecar written next to an exported mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshMetadata {
    pub params: ReflectorParams,
    pub seed: u64,
    pub vertex_count: usize,
    pub face_count: usize,
    pub distortions: Vec<f64>,
    pub surface: Option<Paraboloid>,
    #[serde(default)]
    pub config_hash: String,
}

pub fn write_mesh(mesh: &TriMesh, params: &ReflectorParams, config_hash: &str, path: &Path) -> Result<()> {
    fs::write(path, mesh.to_text()).map_err(|e| Error::io(path, e))?;
    let meta = MeshMetadata {
        params: *params,
        seed: params.seed,
        vertex_count: mesh.vertices.len(),
        face_count: mesh.faces.len(),
        distortions: mesh.distortions.clone(),
        surface: mesh.surface,
        config_hash: config_hash.to_owned(),
    };
    crate::io::write_json(&crate::io::sidecar_path(path), &meta)
}

pub fn read_mesh(path: &Path) -> Result<(TriMesh, MeshMetadata)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = TriMesh::from_text(&text)
        .map_err(|reason| Error::Format { path: path.to_owned(), reason })?;
    let meta: MeshMetadata = crate::io::read_json(&crate::io::sidecar_path(path))?;
    if meta.distortions.len() != mesh.vertices.len() {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!(
                "sidecar lists {} distortions for {} vertices",
                meta.distortions.len(),
                mesh.vertices.len()
            ),
        });
    }
    mesh.distortions = meta.distortions.clone();
    mesh.surface = meta.surface;
    mesh.validate()?;
    Ok((mesh, meta))
}

/// Per-face centroid, unit normal and area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetGeometry {
    pub centroid: Point3<f64>,
    /// Oriented into the `+y` half-space (towards the focus).
    pub unit_normal: Vector3<f64>,
    pub area: f64,
}

/// Tessellates the unperturbed paraboloid.
pub fn build_tra_surface(params: &ReflectorParams) -> Result<TriMesh> {
    params.validate()?;
    let cells = (params.aperture_size / params.mean_facet_edge).ceil().max(1.0) as usize;
    let step = params.aperture_size / cells as f64;
    let half = params.aperture_size / 2.0;
    let surface = params.paraboloid();
    let side = cells + 1;

    let mut vertices = Vec::with_capacity(side * side);
    for iz in 0..side {
        let z = -half + iz as f64 * step;
        for ix in 0..side {
            let x = params.offset - half + ix as f64 * step;
            vertices.push(Point3::new(x, surface.height(x, z), z));
        }
    }

    let mut faces = Vec::with_capacity(2 * cells * cells);
    for iz in 0..cells {
        for ix in 0..cells {
            let a = iz * side + ix;
            let b = a + 1;
            let c = a + side;
            let d = c + 1;
            // Wound so that the geometric normal points to +y.
            faces.push([a, d, b]);
            faces.push([a, c, d]);
        }
    }

    let distortions = vec![0.0; vertices.len()];
    Ok(TriMesh { vertices, faces, distortions, surface: Some(surface) })
}

/// Adds an i.i.d. `U(-max_distortion, +max_distortion)` displacement along +y
/// to every vertex.
pub fn perturb_surface(mesh: &TriMesh, max_distortion: f64, seed: u64) -> Result<TriMesh> {
    mesh.validate()?;
    if !(max_distortion >= 0.0) || !max_distortion.is_finite() {
        return Err(Error::param(
            "max_distortion",
            format!("must be a finite value >= 0, got {max_distortion}"),
        ));
    }
    let mut out = mesh.clone();
    if max_distortion == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-max_distortion, max_distortion);
    for (v, d) in out.vertices.iter_mut().zip(out.distortions.iter_mut()) {
        let dh = dist.sample(&mut rng);
        v.y += dh;
        *d += dh;
    }
    Ok(out)
}

/// Builds the CRA described by `params` (TRA plus seeded perturbation).
pub fn build_cra_surface(params: &ReflectorParams) -> Result<TriMesh> {
    let tra = build_tra_surface(params)?;
    perturb_surface(&tra, params.max_distortion, params.seed)
}

pub fn facet_properties(mesh: &TriMesh) -> Result<Vec<FacetGeometry>> {
    mesh.validate()?;
    mesh.faces
        .iter()
        .enumerate()
        .map(|(index, &[a, b, c])| {
            let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
            let cross = (pb - pa).cross(&(pc - pa));
            let norm = cross.norm();
            let area = 0.5 * norm;
            let scale = (pb - pa).norm().max((pc - pa).norm()).max((pc - pb).norm());
            if !(area > 1e-12 * scale * scale) {
                return Err(Error::DegenerateFace { index, area });
            }
            let mut unit_normal = cross / norm;
            if unit_normal.y < 0.0 {
                unit_normal = -unit_normal;
            }
            let centroid = Point3::from((pa.coords + pb.coords + pc.coords) / 3.0);
            Ok(FacetGeometry { centroid, unit_normal, area })
        })
        .collect()
}
