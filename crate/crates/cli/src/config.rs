//! INI experiment configuration.
//!
//! Every key is optional; missing keys fall back to the reference design
//! (500 mm reflector, 71-76 GHz, 4 x 4 MIMO, 600 x 420 x 600 mm RoI at 1.5 m).
//! Unknown sections or keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use cra_core::forward::{cross_layout, ApertureGrid, FeedPort, PortRole, PropagationMethod};
use cra_core::geometry::ReflectorParams;
use cra_core::postproc::BorderMode;
use cra_core::scene::{build_roi, rasterize_target, RoIGrid, RoISpec, TargetShape, TargetSpec};
use cra_core::solver::AdmmConfig;
use ini::{Ini, Properties};
use nalgebra::{Point3, Vector3};
use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// One or more configuration problems, one message per problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.0 {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum PortLayout {
    /// `count` transmitters along x and `count` receivers along z.
    Cross { count: usize, pitch: f64 },
    /// Explicit offsets from the focal point.
    Custom { tx: Vec<Vector3<f64>>, rx: Vec<Vector3<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortsConfig {
    pub layout: PortLayout,
    pub polarization: Vector3<f64>,
    pub pattern_exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyConfig {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub count: usize,
}

impl FrequencyConfig {
    /// Evenly spaced, both endpoints included.
    pub fn frequencies_hz(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start_ghz * 1e9];
        }
        let step = (self.stop_ghz - self.start_ghz) / (self.count - 1) as f64;
        (0..self.count).map(|i| (self.start_ghz + step * i as f64) * 1e9).collect()
    }

    pub fn center_hz(&self) -> f64 {
        (self.start_ghz + self.stop_ghz) / 2.0 * 1e9
    }

    pub fn bandwidth_hz(&self) -> f64 {
        (self.stop_ghz - self.start_ghz) * 1e9
    }
}

/// Calibration plane normal to y, placed `distance` mm in front of the
/// reflector centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApertureConfig {
    pub distance: f64,
    pub x_extent: f64,
    pub z_extent: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoiConfig {
    /// Range of the RoI centre from the reflector centre, mm.
    pub distance: f64,
    /// Additional shift of the RoI centre, mm.
    pub offset: Vector3<f64>,
    pub extents: [f64; 3],
    pub voxel: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagationConfig {
    pub method: PropagationMethod,
    pub min_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub admm: AdmmConfig,
    /// When set, `lambda_r = lambda_fraction * max |H^H g|` on the problem
    /// actually solved.
    pub lambda_fraction: Option<f64>,
    /// Scale `H` to unit spectral norm (and `g` by the same factor) before
    /// solving.
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PostprocConfig {
    pub na: usize,
    pub tau: f64,
    pub border: BorderMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Seeds {
    pub geometry: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub reflector: ReflectorParams,
    /// Unperturbed reference reflector.
    pub tra: bool,
    pub ports: PortsConfig,
    pub frequencies: FrequencyConfig,
    pub aperture: ApertureConfig,
    pub roi: RoiConfig,
    pub propagation: PropagationConfig,
    pub target: TargetSpec,
    pub snr_db: f64,
    pub solver: SolverConfig,
    pub postproc: PostprocConfig,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            reflector: ReflectorParams::default(),
            tra: false,
            ports: PortsConfig {
                layout: PortLayout::Cross { count: 4, pitch: 10.0 },
                polarization: Vector3::x(),
                pattern_exponent: 8.0,
            },
            frequencies: FrequencyConfig { start_ghz: 71.0, stop_ghz: 76.0, count: 30 },
            aperture: ApertureConfig { distance: 900.0, x_extent: 880.0, z_extent: 640.0, spacing: 1.5 },
            roi: RoiConfig {
                distance: 1500.0,
                offset: Vector3::zeros(),
                extents: [600.0, 420.0, 600.0],
                voxel: [6.0, 30.0, 6.0],
            },
            propagation: PropagationConfig { method: PropagationMethod::Auto, min_distance: 1.0 },
            target: TargetSpec::default(),
            snr_db: 30.0,
            solver: SolverConfig { admm: AdmmConfig::default(), lambda_fraction: None, normalize: false },
            postproc: PostprocConfig { na: 4, tau: 0.35, border: BorderMode::Zero },
            seeds: Seeds { geometry: 1, noise: 1 },
        }
    }
}

impl ExperimentConfig {
    /// Reflector parameters with the geometry seed applied and the distortion
    /// removed in TRA mode.
    pub fn reflector_params(&self) -> ReflectorParams {
        ReflectorParams {
            seed: self.seeds.geometry,
            max_distortion: if self.tra { 0.0 } else { self.reflector.max_distortion },
            ..self.reflector
        }
    }

    pub fn ports(&self) -> Vec<FeedPort> {
        let focus = self.reflector.paraboloid().focus();
        let (pol, q) = (self.ports.polarization, self.ports.pattern_exponent);
        match &self.ports.layout {
            PortLayout::Cross { count, pitch } => cross_layout(focus, *count, *pitch, pol, q),
            PortLayout::Custom { tx, rx } => {
                let port = |offset: &Vector3<f64>, role| FeedPort { position: focus + offset, polarization: pol, pattern_exponent: q, role };
                tx.iter().map(|o| port(o, PortRole::Tx)).chain(rx.iter().map(|o| port(o, PortRole::Rx))).collect()
            }
        }
    }

    pub fn port_counts(&self) -> (usize, usize) {
        match &self.ports.layout {
            PortLayout::Cross { count, .. } => (*count, *count),
            PortLayout::Custom { tx, rx } => (tx.len(), rx.len()),
        }
    }

    pub fn measurement_count(&self) -> usize {
        let (t, r) = self.port_counts();
        t * r * self.frequencies.count
    }

    pub fn aperture_grid(&self) -> ApertureGrid {
        let c = self.reflector.center();
        ApertureGrid {
            origin: Point3::new(c.x, c.y + self.aperture.distance, c.z),
            x_extent: self.aperture.x_extent,
            z_extent: self.aperture.z_extent,
            sample_spacing: self.aperture.spacing,
        }
    }

    pub fn roi_spec(&self) -> RoISpec {
        let c = self.reflector.center();
        RoISpec {
            center: Point3::new(c.x, c.y + self.roi.distance, c.z) + self.roi.offset,
            extents: self.roi.extents,
            voxel: self.roi.voxel,
        }
    }

    pub fn roi_grid(&self) -> cra_core::Result<RoIGrid> {
        build_roi(&self.roi_spec())
    }

    /// Every problem with the configuration, or nothing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        if let Err(e) = self.reflector.validate() {
            check(false, format!("[reflector] {e}"));
        }
        match &self.ports.layout {
            PortLayout::Cross { count, pitch } => {
                check(*count >= 1, "[ports] count must be >= 1".into());
                check(*pitch > 0.0 && pitch.is_finite(), format!("[ports] pitch must be > 0, got {pitch}"));
            }
            PortLayout::Custom { tx, rx } => {
                check(!tx.is_empty() && !rx.is_empty(), "[ports] custom layout needs at least one tx and one rx".into());
            }
        }
        check(
            (self.ports.polarization.norm() - 1.0).abs() < 1e-9,
            "[ports] polarization must be a unit vector".into(),
        );
        check(self.ports.pattern_exponent >= 0.0, "[ports] pattern_exponent must be >= 0".into());

        let f = &self.frequencies;
        check(f.count >= 1, "[frequencies] count must be >= 1".into());
        check(f.start_ghz > 0.0 && f.stop_ghz.is_finite(), "[frequencies] start_ghz must be > 0".into());
        check(f.stop_ghz >= f.start_ghz, "[frequencies] stop_ghz must be >= start_ghz".into());
        check(f.count != 1 || f.stop_ghz == f.start_ghz, "[frequencies] a single frequency needs start_ghz == stop_ghz".into());
        if f.start_ghz < 71.0 || f.stop_ghz > 76.0 {
            log::warn!("frequency range {}-{} GHz leaves the 71-76 GHz band", f.start_ghz, f.stop_ghz);
        }

        let a = &self.aperture;
        check(a.spacing > 0.0 && a.spacing.is_finite(), "[aperture] spacing must be > 0".into());
        check(a.x_extent >= 0.0 && a.z_extent >= 0.0, "[aperture] extents must be >= 0".into());
        check(a.distance > 0.0, "[aperture] distance must be > 0".into());
        check(
            self.roi.distance - self.roi.extents[1] / 2.0 > a.distance,
            "[roi] the region of interest must lie entirely beyond the aperture plane".into(),
        );

        let roi = match self.roi_grid() {
            Ok(r) => Some(r),
            Err(e) => {
                check(false, format!("[roi] {e}"));
                None
            }
        };
        check(self.propagation.min_distance > 0.0, "[propagation] min_distance must be > 0".into());
        if let Some(roi) = roi {
            if let Err(e) = rasterize_target(&self.target, &roi) {
                check(false, format!("[target] {e}"));
            }
        }
        check(!self.snr_db.is_nan(), "[noise] snr_db must be a number or inf".into());

        if let Err(e) = self.solver.admm.validate(self.measurement_count().max(1)) {
            check(false, format!("[admm] {e}"));
        }
        if let Some(fr) = self.solver.lambda_fraction {
            check((0.0..=1.0).contains(&fr), format!("[admm] lambda_fraction must be in [0, 1], got {fr}"));
        }
        check(self.postproc.na % 2 == 0, format!("[postproc] na must be even, got {}", self.postproc.na));
        if !(0.0..=1.0).contains(&self.postproc.tau) {
            log::warn!("threshold tau = {} is outside [0, 1]", self.postproc.tau);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(problems))
        }
    }

    /// SHA-256 of the canonical JSON of everything up to and including `stage`.
    pub fn stage_hash(&self, stage: Stage) -> String {
        #[derive(Serialize)]
        struct Geometry<'a> {
            reflector: &'a ReflectorParams,
        }
        #[derive(Serialize)]
        struct Calibrate<'a> {
            ports: &'a PortsConfig,
            frequencies: &'a FrequencyConfig,
            aperture: &'a ApertureConfig,
            roi: &'a RoiConfig,
            propagation: &'a PropagationConfig,
        }
        #[derive(Serialize)]
        struct Simulate<'a> {
            target: &'a TargetSpec,
            snr_db: Option<f64>,
            noise_seed: u64,
        }
        let params = self.reflector_params();
        let mut parts = vec![serde_json::to_string(&Geometry { reflector: &params }).expect("serializable")];
        if stage >= Stage::Calibrate {
            parts.push(
                serde_json::to_string(&Calibrate {
                    ports: &self.ports,
                    frequencies: &self.frequencies,
                    aperture: &self.aperture,
                    roi: &self.roi,
                    propagation: &self.propagation,
                })
                .expect("serializable"),
            );
        }
        if stage >= Stage::Simulate {
            let snr = self.snr_db.is_finite().then_some(self.snr_db);
            parts.push(serde_json::to_string(&Simulate { target: &self.target, snr_db: snr, noise_seed: self.seeds.noise }).expect("serializable"));
        }
        if stage >= Stage::Reconstruct {
            parts.push(serde_json::to_string(&self.solver).expect("serializable"));
        }
        if stage >= Stage::Analyze {
            parts.push(serde_json::to_string(&self.postproc).expect("serializable"));
        }
        let mut hasher = Sha256::new();
        for p in &parts {
            hasher.update(p.as_bytes());
            hasher.update(b"\n");
        }
        format!("{:x}", hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Geometry,
    Calibrate,
    Simulate,
    Reconstruct,
    Analyze,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Geometry => "geometry",
            Stage::Calibrate => "calibrate",
            Stage::Simulate => "simulate",
            Stage::Reconstruct => "reconstruct",
            Stage::Analyze => "analyze",
        }
    }
}

/// Reads one INI section, remembering which keys were consumed.
struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    used: BTreeSet<String>,
    problems: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn raw(&mut self, key: &str) -> Option<String> {
        let value = self.props?.get(key)?.trim().to_owned();
        self.used.insert(key.to_owned());
        Some(value)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T {
        match self.raw(key) {
            None => default,
            Some(text) => match text.parse::<T>() {
                Ok(v) => v,
                Err(_) => {
                    self.problems.push(format!("[{}] {key}: cannot parse `{text}`", self.name));
                    default
                }
            },
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        self.parse(key, default)
    }

    fn opt_f64(&mut self, key: &str) -> Option<f64> {
        let text = self.raw(key)?;
        match text.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.problems.push(format!("[{}] {key}: cannot parse `{text}`", self.name));
                None
            }
        }
    }

    fn vec3(&mut self, key: &str, default: Vector3<f64>) -> Vector3<f64> {
        match self.raw(key) {
            None => default,
            Some(text) => match parse_vec3(&text) {
                Some(v) => v,
                None => {
                    self.problems.push(format!("[{}] {key}: expected three numbers, got `{text}`", self.name));
                    default
                }
            },
        }
    }

    fn vec3_list(&mut self, key: &str) -> Vec<Vector3<f64>> {
        let Some(text) = self.raw(key) else { return Vec::new() };
        let mut out = Vec::new();
        for item in text.split('|').map(str::trim).filter(|s| !s.is_empty()) {
            match parse_vec3(item) {
                Some(v) => out.push(v),
                None => self.problems.push(format!("[{}] {key}: expected `x y z` triples separated by `|`, got `{item}`", self.name)),
            }
        }
        out
    }

    fn finish(self) {
        if let Some(props) = self.props {
            for (key, _) in props.iter() {
                if !self.used.contains(key) {
                    self.problems.push(format!("[{}] unknown key `{key}`", self.name));
                }
            }
        }
    }
}

fn parse_vec3(text: &str) -> Option<Vector3<f64>> {
    let parts: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect::<Option<_>>()?;
    (parts.len() == 3).then(|| Vector3::new(parts[0], parts[1], parts[2]))
}

fn parse_polarization(text: &str) -> Option<Vector3<f64>> {
    match text.to_ascii_lowercase().as_str() {
        "x" => Some(Vector3::x()),
        "y" => Some(Vector3::y()),
        "z" => Some(Vector3::z()),
        other => parse_vec3(other).map(|v| if v.norm() > 0.0 { v.normalize() } else { v }),
    }
}

const SECTIONS: [&str; 12] =
    ["reflector", "ports", "frequencies", "aperture", "roi", "propagation", "target", "noise", "admm", "postproc", "seeds", "mode"];

/// Parse INI text into a validated configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError(vec![format!("syntax error: {e}")]))?;
    let mut problems = Vec::new();
    for (name, props) in ini.iter() {
        match name {
            None => {
                for (key, _) in props.iter() {
                    problems.push(format!("key `{key}` outside of any section"));
                }
            }
            Some(n) if !SECTIONS.contains(&n) => problems.push(format!("unknown section [{n}]")),
            _ => {}
        }
    }
    let d = ExperimentConfig::default();
    let mut cfg = d.clone();

    macro_rules! section {
        ($name:literal) => {
            Section { name: $name, props: ini.section(Some($name)), used: BTreeSet::new(), problems: &mut problems }
        };
    }

    let mut s = section!("reflector");
    cfg.reflector.aperture_size = s.f64("aperture_size", d.reflector.aperture_size);
    cfg.reflector.focal_length = s.f64("focal_length", d.reflector.focal_length);
    cfg.reflector.offset = s.f64("offset", d.reflector.offset);
    cfg.reflector.mean_facet_edge = s.f64("mean_facet_edge", d.reflector.mean_facet_edge);
    cfg.reflector.max_distortion = s.f64("max_distortion", d.reflector.max_distortion);
    s.finish();

    let mut s = section!("mode");
    cfg.tra = s.parse("tra", false);
    s.finish();

    let mut s = section!("ports");
    let layout = s.raw("layout").unwrap_or_else(|| "cross".into());
    cfg.ports.layout = match layout.as_str() {
        "cross" => PortLayout::Cross { count: s.parse("count", 4usize), pitch: s.f64("pitch", 10.0) },
        "custom" => PortLayout::Custom { tx: s.vec3_list("tx"), rx: s.vec3_list("rx") },
        other => {
            s.problems.push(format!("[ports] layout must be `cross` or `custom`, got `{other}`"));
            d.ports.layout.clone()
        }
    };
    if let Some(text) = s.raw("polarization") {
        match parse_polarization(&text) {
            Some(v) => cfg.ports.polarization = v,
            None => s.problems.push(format!("[ports] polarization: expected x, y, z or three numbers, got `{text}`")),
        }
    }
    cfg.ports.pattern_exponent = s.f64("pattern_exponent", d.ports.pattern_exponent);
    s.finish();

    let mut s = section!("frequencies");
    cfg.frequencies = FrequencyConfig {
        start_ghz: s.f64("start_ghz", d.frequencies.start_ghz),
        stop_ghz: s.f64("stop_ghz", d.frequencies.stop_ghz),
        count: s.parse("count", d.frequencies.count),
    };
    s.finish();

    let mut s = section!("aperture");
    cfg.aperture = ApertureConfig {
        distance: s.f64("distance", d.aperture.distance),
        x_extent: s.f64("x_extent", d.aperture.x_extent),
        z_extent: s.f64("z_extent", d.aperture.z_extent),
        spacing: s.f64("spacing", d.aperture.spacing),
    };
    s.finish();

    let mut s = section!("roi");
    cfg.roi = RoiConfig {
        distance: s.f64("distance", d.roi.distance),
        offset: s.vec3("offset", d.roi.offset),
        extents: [s.f64("extent_x", d.roi.extents[0]), s.f64("extent_y", d.roi.extents[1]), s.f64("extent_z", d.roi.extents[2])],
        voxel: [s.f64("voxel_x", d.roi.voxel[0]), s.f64("voxel_y", d.roi.voxel[1]), s.f64("voxel_z", d.roi.voxel[2])],
    };
    s.finish();

    let mut s = section!("propagation");
    if let Some(text) = s.raw("method") {
        cfg.propagation.method = match text.as_str() {
            "auto" => PropagationMethod::Auto,
            "direct" => PropagationMethod::Direct,
            "fft" => PropagationMethod::Fft,
            other => {
                s.problems.push(format!("[propagation] method must be auto, direct or fft, got `{other}`"));
                d.propagation.method
            }
        };
    }
    cfg.propagation.min_distance = s.f64("min_distance", d.propagation.min_distance);
    s.finish();

    let mut s = section!("target");
    let kind = s.raw("kind").unwrap_or_else(|| "t_shape".into());
    cfg.target.shape = match kind.as_str() {
        "t_shape" => TargetShape::TShape {
            bar_length: s.f64("bar_length", 200.0),
            bar_width: s.f64("bar_width", 50.0),
            stem_length: s.f64("stem_length", 150.0),
            stem_width: s.f64("stem_width", 50.0),
        },
        "points" => TargetShape::PointSet { points: s.vec3_list("points").into_iter().map(Point3::from).collect() },
        "box" => {
            let size = s.vec3("size", Vector3::new(30.0, 30.0, 30.0));
            TargetShape::Box { size: [size.x, size.y, size.z] }
        }
        other => {
            s.problems.push(format!("[target] kind must be t_shape, points or box, got `{other}`"));
            d.target.shape.clone()
        }
    };
    cfg.target.offset = s.vec3("offset", d.target.offset);
    cfg.target.rotation_deg = s.f64("rotation_deg", d.target.rotation_deg);
    cfg.target.reflectivity = Complex64::new(s.f64("reflectivity_re", 1.0), s.f64("reflectivity_im", 0.0));
    s.finish();

    let mut s = section!("noise");
    cfg.snr_db = s.f64("snr_db", d.snr_db);
    s.finish();

    let mut s = section!("admm");
    let a = &mut cfg.solver.admm;
    a.block_count = s.parse("block_count", d.solver.admm.block_count);
    a.lambda_r = s.f64("lambda_r", d.solver.admm.lambda_r);
    a.rho = s.f64("rho", d.solver.admm.rho);
    a.max_iters = s.parse("max_iters", d.solver.admm.max_iters);
    a.tol_primal = s.f64("tol_primal", d.solver.admm.tol_primal);
    a.tol_dual = s.f64("tol_dual", d.solver.admm.tol_dual);
    a.adaptive_rho = s.parse("adaptive_rho", d.solver.admm.adaptive_rho);
    cfg.solver.lambda_fraction = s.opt_f64("lambda_fraction");
    cfg.solver.normalize = s.parse("normalize", d.solver.normalize);
    s.finish();

    let mut s = section!("postproc");
    cfg.postproc.na = s.parse("na", d.postproc.na);
    cfg.postproc.tau = s.f64("tau", d.postproc.tau);
    if let Some(text) = s.raw("border") {
        cfg.postproc.border = match text.as_str() {
            "zero" => BorderMode::Zero,
            "renormalize" => BorderMode::Renormalize,
            other => {
                s.problems.push(format!("[postproc] border must be zero or renormalize, got `{other}`"));
                d.postproc.border
            }
        };
    }
    s.finish();

    let mut s = section!("seeds");
    cfg.seeds.geometry = s.parse("geometry", d.seeds.geometry);
    cfg.seeds.noise = s.parse("noise", d.seeds.noise);
    s.finish();

    if let Err(ConfigError(more)) = cfg.validate() {
        problems.extend(more);
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError(problems))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_design() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.reflector, ReflectorParams::default());
        assert_eq!(cfg.measurement_count(), 480);
        assert_eq!(cfg.roi_grid().unwrap().counts(), [100, 14, 100]);
    }

    #[test]
    fn frequency_grid_includes_endpoints() {
        let f = parse_config("[frequencies]\nstart_ghz = 71\nstop_ghz = 76\ncount = 30\n").unwrap().frequencies.frequencies_hz();
        assert_eq!(f.len(), 30);
        assert!((f[0] - 71e9).abs() < 1e-3 && (f[29] - 76e9).abs() < 1e-3);
        assert!((f[1] - f[0] - 5e9 / 29.0).abs() < 1e-3);
    }

    #[test]
    fn negative_distortion_is_rejected() {
        let err = parse_config("[reflector]\nmax_distortion = -1\n").unwrap_err();
        assert!(err.0.iter().any(|p| p.contains("max_distortion")), "{err}");
    }

    #[test]
    fn every_problem_is_listed() {
        let err = parse_config("[reflector]\nbogus = 1\nfocal_length = x\n[nope]\n[postproc]\nna = 3\n").unwrap_err();
        assert_eq!(err.0.len(), 4, "{err}");
    }

    #[test]
    fn aperture_and_roi_placement() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.aperture_grid().origin, Point3::new(350.0, 400.0, 0.0));
        assert_eq!(cfg.roi_spec().center, Point3::new(350.0, 1000.0, 0.0));
    }

    #[test]
    fn stage_hashes_only_track_upstream_inputs() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { snr_db: 10.0, ..a.clone() };
        assert_eq!(a.stage_hash(Stage::Calibrate), b.stage_hash(Stage::Calibrate));
        assert_ne!(a.stage_hash(Stage::Simulate), b.stage_hash(Stage::Simulate));
        let c = ExperimentConfig { tra: true, ..a.clone() };
        assert_ne!(a.stage_hash(Stage::Geometry), c.stage_hash(Stage::Geometry));
        assert_eq!(a.stage_hash(Stage::Analyze).len(), 64);
    }

    #[test]
    fn tra_mode_removes_distortion() {
        let cfg = parse_config("[mode]\ntra = true\n").unwrap();
        assert_eq!(cfg.reflector_params().max_distortion, 0.0);
    }

    #[test]
    fn point_targets_and_custom_ports() {
        let cfg = parse_config(
            "[target]\nkind = points\npoints = 0 -30 0 | 0, 30, 0\nrotation_deg = 0\n[ports]\nlayout = custom\ntx = 0 0 0\nrx = 5 0 0 | -5 0 0\n",
        )
        .unwrap();
        assert_eq!(cfg.port_counts(), (1, 2));
        match &cfg.target.shape {
            TargetShape::PointSet { points } => assert_eq!(points[1], Point3::new(0.0, 30.0, 0.0)),
            other => panic!("{other:?}"),
        }
    }
}
