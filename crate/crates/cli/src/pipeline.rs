//! Stage runners. Each stage reads its inputs from the output directory,
//! checks that they were produced by the same upstream configuration and
//! writes its own artifacts with the stage's configuration hash.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cra_core::forward::{assemble_sensing_matrix, AssemblyOptions, SensingMatrix};
use cra_core::geometry::{build_cra_surface, read_mesh, write_mesh};
use cra_core::io::{sidecar_path, write_json};
use cra_core::postproc::{
    cross_range_average_with, max_projection_range, normalize_magnitude, range_peaks, range_profile, range_slice,
    resolution_limits, spectral_diversity, support_iou, threshold_volume, BinaryVolume, DiversityReport,
    ResolutionLimits,
};
use cra_core::scene::{rasterize_target, synthesize_measurements, MeasurementVector, ReflectivityVolume};
use cra_core::solver::{admm_solve, partition_rows, AdmmConfig};
use cra_core::units::{wavelength, SPEED_OF_LIGHT};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, Stage};

#[derive(Debug)]
pub enum PipelineError {
    Config(ConfigError),
    /// Invalid input detected by a stage.
    Validation(String),
    Runtime(String),
    MissingArtifact { path: PathBuf, producer: &'static str },
    HashMismatch { path: PathBuf, producer: &'static str },
    Stage { stage: &'static str, source: Box<PipelineError>, completed: Vec<PathBuf> },
}

impl PipelineError {
    /// 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Validation(_) | PipelineError::HashMismatch { .. } => 1,
            PipelineError::Runtime(_) | PipelineError::MissingArtifact { .. } => 2,
            PipelineError::Stage { source, .. } => source.exit_code(),
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Config(e) => write!(f, "{e}"),
            PipelineError::Validation(m) | PipelineError::Runtime(m) => write!(f, "{m}"),
            PipelineError::MissingArtifact { path, producer } => {
                write!(f, "missing artifact {}; run `{producer}` first", path.display())
            }
            PipelineError::HashMismatch { path, producer } => write!(
                f,
                "{} was produced by a different configuration; rerun `{producer}` or pass --force",
                path.display()
            ),
            PipelineError::Stage { stage, source, completed } => {
                write!(f, "stage `{stage}` failed: {source}")?;
                if !completed.is_empty() {
                    write!(f, "\ncompleted artifacts:")?;
                    for p in completed {
                        write!(f, "\n  {}", p.display())?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e)
    }
}

impl From<cra_core::Error> for PipelineError {
    fn from(e: cra_core::Error) -> Self {
        use cra_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::NonDivisibleExtent { .. } | E::TargetOutsideRoi(_) => {
                PipelineError::Validation(e.to_string())
            }
            other => PipelineError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// A range maximum counts as a separate peak when it reaches half of the
/// largest one.
pub const RANGE_PEAK_FRACTION: f64 = 0.5;

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn mesh(&self) -> PathBuf {
        self.dir.join("mesh.obj")
    }
    pub fn sensing_matrix(&self) -> PathBuf {
        self.dir.join("H.bin")
    }
    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.bin")
    }
    pub fn measurements(&self) -> PathBuf {
        self.dir.join("g.bin")
    }
    pub fn recon_raw(&self) -> PathBuf {
        self.dir.join("recon_raw.bin")
    }
    pub fn solver_report(&self) -> PathBuf {
        self.dir.join("solver.json")
    }
    pub fn convergence(&self) -> PathBuf {
        self.dir.join("convergence.csv")
    }
    pub fn recon_avg(&self) -> PathBuf {
        self.dir.join("recon_avg.bin")
    }
    pub fn projection(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("projection_range.{ext}"))
    }
    pub fn slice(&self, iy: usize, ext: &str) -> PathBuf {
        self.dir.join(format!("slice_y{iy:03}.{ext}"))
    }
    pub fn diversity(&self) -> PathBuf {
        self.dir.join("diversity.csv")
    }
    pub fn diversity_compare(&self) -> PathBuf {
        self.dir.join("diversity_compare.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.txt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }
}

fn with_sidecar(path: PathBuf) -> [PathBuf; 2] {
    let side = sidecar_path(&path);
    [path, side]
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() && sidecar_path(path).exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact { path: path.to_owned(), producer })
    }
}

fn check_hash(path: &Path, found: &str, expected: &str, producer: &'static str, force: bool) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    if force {
        log::warn!("{} comes from a different configuration; continuing because of --force", path.display());
        Ok(())
    } else {
        Err(PipelineError::HashMismatch { path: path.to_owned(), producer })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Runtime(format!("{}: {e}", path.display()))
}

pub fn run_geometry(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&art.dir).map_err(|e| io_err(&art.dir, e))?;
    let params = cfg.reflector_params();
    let mesh = build_cra_surface(&params)?;
    write_mesh(&mesh, &params, &cfg.stage_hash(Stage::Geometry), &art.mesh())?;
    log::info!("mesh: {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    Ok(with_sidecar(art.mesh()).to_vec())
}

pub fn run_calibrate(cfg: &ExperimentConfig, art: &Artifacts, force: bool) -> Result<Vec<PathBuf>> {
    require(&art.mesh(), "geometry")?;
    let (mesh, meta) = read_mesh(&art.mesh())?;
    check_hash(&art.mesh(), &meta.config_hash, &cfg.stage_hash(Stage::Geometry), "geometry", force)?;
    let roi = cfg.roi_grid()?;
    let options = AssemblyOptions { method: cfg.propagation.method, min_distance: cfg.propagation.min_distance };
    let h = assemble_sensing_matrix(&cfg.ports(), &cfg.frequencies.frequencies_hz(), &mesh, &cfg.aperture_grid(), &roi, &options)?;
    h.save(&art.sensing_matrix(), Some(&roi), &cfg.stage_hash(Stage::Calibrate))?;
    log::info!("sensing matrix: {} x {}", h.rows, h.cols);
    Ok(with_sidecar(art.sensing_matrix()).to_vec())
}

fn load_sensing(cfg: &ExperimentConfig, art: &Artifacts, force: bool) -> Result<SensingMatrix> {
    require(&art.sensing_matrix(), "calibrate")?;
    let (h, meta) = SensingMatrix::load(&art.sensing_matrix())?;
    check_hash(&art.sensing_matrix(), &meta.config_hash, &cfg.stage_hash(Stage::Calibrate), "calibrate", force)?;
    Ok(h)
}

pub fn run_simulate(cfg: &ExperimentConfig, art: &Artifacts, force: bool) -> Result<Vec<PathBuf>> {
    let h = load_sensing(cfg, art, force)?;
    let roi = cfg.roi_grid()?;
    let truth = rasterize_target(&cfg.target, &roi)?;
    let hash = cfg.stage_hash(Stage::Simulate);
    truth.save(&art.truth(), "truth", &hash)?;
    let g = synthesize_measurements(&h, &truth, cfg.snr_db, cfg.seeds.noise)?;
    g.save(&art.measurements(), cfg.seeds.noise, &hash)?;
    let mut out = with_sidecar(art.truth()).to_vec();
    out.extend(with_sidecar(art.measurements()));
    Ok(out)
}

/// Solver settings actually used, written next to the reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub admm: AdmmConfig,
    /// Factor `H` and `g` were divided by (1 when not normalizing).
    pub scale: f64,
    /// `max |H^H g|` of the solved (scaled) problem.
    pub correlation_max: f64,
    pub lambda_r: f64,
    pub lambda_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

/// Largest singular value by power iteration on `H^H H`.
pub fn spectral_norm(h: &SensingMatrix) -> f64 {
    let mut x: Vec<Complex64> = (0..h.cols).map(|i| Complex64::new(1.0, ((i % 7) as f64) * 0.1)).collect();
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut estimate = 0.0;
    for _ in 0..200 {
        let y = h.apply_adjoint(&h.apply(&x));
        let (ny, nx) = (norm(&y), norm(&x));
        if ny == 0.0 {
            return 0.0;
        }
        let next = ny / nx;
        x = y.iter().map(|z| z / ny).collect();
        if (next - estimate).abs() <= 1e-10 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate.sqrt()
}

pub fn run_reconstruct(cfg: &ExperimentConfig, art: &Artifacts, force: bool) -> Result<Vec<PathBuf>> {
    let h = load_sensing(cfg, art, force)?;
    require(&art.measurements(), "simulate")?;
    let (g, meta) = MeasurementVector::load(&art.measurements())?;
    check_hash(&art.measurements(), &meta.config_hash, &cfg.stage_hash(Stage::Simulate), "simulate", force)?;
    let roi = cfg.roi_grid()?;
    if h.cols != roi.len() || g.values.len() != h.rows {
        return Err(PipelineError::Validation(format!(
            "H is {}x{}, g has {} entries and the RoI has {} voxels",
            h.rows,
            h.cols,
            g.values.len(),
            roi.len()
        )));
    }

    let scale = if cfg.solver.normalize { spectral_norm(&h) } else { 1.0 };
    if !(scale > 0.0) {
        return Err(PipelineError::Runtime("sensing matrix is identically zero".into()));
    }
    let correlation_max = h.apply_adjoint(&g.values).iter().map(|z| z.norm()).fold(0.0, f64::max) / (scale * scale);
    let lambda_r = match cfg.solver.lambda_fraction {
        Some(fr) => fr * correlation_max,
        None => cfg.solver.admm.lambda_r,
    };
    let lambda_fraction = if correlation_max > 0.0 { lambda_r / correlation_max } else { 0.0 };
    log::info!("lambda_r = {lambda_r:.6e} ({lambda_fraction:.4e} of max |H^H g|)");

    let mut blocks = partition_rows(&h, &g, cfg.solver.admm.block_count)?;
    drop(h);
    if scale != 1.0 {
        for b in &mut blocks {
            b.h.iter_mut().for_each(|v| *v /= scale);
            b.g.iter_mut().for_each(|v| *v /= scale);
        }
    }
    let admm = AdmmConfig { lambda_r, ..cfg.solver.admm };
    let (state, log) = admm_solve(&blocks, &admm)?;
    let hash = cfg.stage_hash(Stage::Reconstruct);
    let vol = ReflectivityVolume::new(roi, state.v)?;
    vol.save(&art.recon_raw(), "reconstruction", &hash)?;
    log.write_csv(&art.convergence())?;
    let report = SolverReport {
        admm,
        scale,
        correlation_max,
        lambda_r,
        lambda_fraction,
        iterations: log.entries.len(),
        converged: log.converged,
        final_objective: log.final_objective().unwrap_or(f64::NAN),
    };
    write_json(&art.solver_report(), &report)?;
    let mut out = with_sidecar(art.recon_raw()).to_vec();
    out.extend([art.convergence(), art.solver_report()]);
    Ok(out)
}

/// Numbers reported by `analyze`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub config_hash: String,
    pub iou: f64,
    pub threshold: f64,
    pub support_voxels: usize,
    pub truth_voxels: usize,
    /// Range planes that contain the target.
    pub truth_planes: Vec<usize>,
    /// Plane holding the largest averaged magnitude.
    pub peak_plane: usize,
    pub range_plane_correct: bool,
    /// Local maxima of the per-plane peak magnitude of the raw reconstruction.
    pub range_peaks: Vec<usize>,
    pub range_profile: Vec<f64>,
    pub resolution: ResolutionLimits,
    pub effective_rank: f64,
    /// `None` when the matrix is rank deficient.
    pub condition: Option<f64>,
    pub compare_effective_rank: Option<f64>,
    pub lambda_r: Option<f64>,
    pub lambda_fraction: Option<f64>,
    pub admm_iterations: Option<usize>,
    pub admm_converged: Option<bool>,
}

pub fn run_analyze(cfg: &ExperimentConfig, art: &Artifacts, compare: Option<&Path>, force: bool) -> Result<(Metrics, Vec<PathBuf>)> {
    require(&art.recon_raw(), "reconstruct")?;
    let (raw, meta) = ReflectivityVolume::load(&art.recon_raw())?;
    check_hash(&art.recon_raw(), &meta.config_hash, &cfg.stage_hash(Stage::Reconstruct), "reconstruct", force)?;
    require(&art.truth(), "simulate")?;
    let (truth, tmeta) = ReflectivityVolume::load(&art.truth())?;
    check_hash(&art.truth(), &tmeta.config_hash, &cfg.stage_hash(Stage::Simulate), "simulate", force)?;
    let h = load_sensing(cfg, art, force)?;
    let hash = cfg.stage_hash(Stage::Analyze);
    let mut written = Vec::new();

    let averaged = cross_range_average_with(&raw, cfg.postproc.na, cfg.postproc.border)?;
    averaged.save(&art.recon_avg(), "averaged_reconstruction", &hash)?;
    written.extend(with_sidecar(art.recon_avg()));
    let normalized = normalize_magnitude(&averaged)?;
    let mask = threshold_volume(&normalized, cfg.postproc.tau);
    let truth_mask = BinaryVolume::support(&truth);
    let iou = support_iou(&mask, &truth_mask)?;

    let ny = raw.roi.counts()[1];
    let plane_len = raw.roi.plane_len();
    let truth_planes: Vec<usize> =
        (0..ny).filter(|&iy| truth_mask.mask[iy * plane_len..(iy + 1) * plane_len].iter().any(|&m| m)).collect();
    let avg_profile = range_profile(&normalized);
    let peak_plane = (0..ny).fold(0, |best, iy| if avg_profile[iy] > avg_profile[best] { iy } else { best });
    let raw_profile = range_profile(&raw);
    let raw_max = raw_profile.iter().copied().fold(0.0, f64::max);
    let range_profile_rel: Vec<f64> = raw_profile.iter().map(|v| if raw_max > 0.0 { v / raw_max } else { 0.0 }).collect();
    let peaks = range_peaks(&raw_profile, RANGE_PEAK_FRACTION);

    let projection = max_projection_range(&normalized);
    projection.write_csv(&art.projection("csv"))?;
    projection.write_pgm(&art.projection("pgm"))?;
    written.extend([art.projection("csv"), art.projection("pgm")]);
    for iy in 0..ny {
        let slice = range_slice(&normalized, iy);
        slice.write_csv(&art.slice(iy, "csv"))?;
        // Slices share the global scale so planes can be compared.
        cra_core::io::write_pgm(&art.slice(iy, "pgm"), slice.width, slice.height, &slice.values, 1.0)?;
        written.extend([art.slice(iy, "csv"), art.slice(iy, "pgm")]);
    }

    let diversity = spectral_diversity(&h)?;
    diversity.write_csv(&art.diversity())?;
    written.push(art.diversity());
    let compare_report = match compare {
        Some(dir) => {
            let other_art = Artifacts::new(dir);
            require(&other_art.sensing_matrix(), "calibrate")?;
            let (other, _) = SensingMatrix::load(&other_art.sensing_matrix())?;
            let report = spectral_diversity(&other)?;
            write_comparison(&art.diversity_compare(), &diversity, &report)?;
            written.push(art.diversity_compare());
            Some(report)
        }
        None => None,
    };

    let fc = cfg.frequencies.center_hz();
    let bandwidth = cfg.frequencies.bandwidth_hz();
    let resolution = if bandwidth > 0.0 {
        resolution_limits(wavelength(fc), cfg.roi.distance, cfg.reflector.aperture_size, bandwidth)?
    } else {
        ResolutionLimits { sigma_xz: wavelength(fc) * cfg.roi.distance / (2.0 * cfg.reflector.aperture_size), sigma_y: f64::INFINITY }
    };

    let solver: Option<SolverReport> = std::fs::read_to_string(art.solver_report()).ok().and_then(|t| serde_json::from_str(&t).ok());
    let metrics = Metrics {
        config_hash: hash,
        iou,
        threshold: cfg.postproc.tau,
        support_voxels: mask.count(),
        truth_voxels: truth_mask.count(),
        range_plane_correct: truth_planes.contains(&peak_plane),
        truth_planes,
        peak_plane,
        range_peaks: peaks,
        range_profile: range_profile_rel,
        resolution,
        effective_rank: diversity.effective_rank,
        condition: diversity.condition.is_finite().then_some(diversity.condition),
        compare_effective_rank: compare_report.as_ref().map(|r| r.effective_rank),
        lambda_r: solver.as_ref().map(|s| s.lambda_r),
        lambda_fraction: solver.as_ref().map(|s| s.lambda_fraction),
        admm_iterations: solver.as_ref().map(|s| s.iterations),
        admm_converged: solver.as_ref().map(|s| s.converged),
    };
    write_json(&art.metrics(), &metrics)?;
    written.push(art.metrics());
    Ok((metrics, written))
}

fn write_comparison(path: &Path, this: &DiversityReport, other: &DiversityReport) -> Result<()> {
    let n = this.singular_values.len().max(other.singular_values.len());
    let mut text = String::from("index,singular_value,compare_singular_value\n");
    let cell = |v: Option<&f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
    for i in 0..n {
        text.push_str(&format!("{i},{},{}\n", cell(this.singular_values.get(i)), cell(other.singular_values.get(i))));
    }
    text.push_str(&format!("# effective_rank,{:.6},{:.6}\n", this.effective_rank, other.effective_rank));
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn summary_text(cfg: &ExperimentConfig, m: &Metrics, timings: &[(&'static str, f64)]) -> String {
    let mut s = String::new();
    let roi = cfg.roi_grid().map(|r| r.counts()).unwrap_or([0; 3]);
    s.push_str("CRA imaging run\n");
    s.push_str(&format!("config hash        {}\n", m.config_hash));
    s.push_str(&format!(
        "reflector          D0 {} mm, f0 {} mm, offset {} mm, d0 {} mm, dh {} mm{}\n",
        cfg.reflector.aperture_size,
        cfg.reflector.focal_length,
        cfg.reflector.offset,
        cfg.reflector.mean_facet_edge,
        cfg.reflector_params().max_distortion,
        if cfg.tra { " (TRA)" } else { "" }
    ));
    s.push_str(&format!("measurements       {}\n", cfg.measurement_count()));
    s.push_str(&format!("voxels             {} x {} x {} = {}\n", roi[0], roi[1], roi[2], roi[0] * roi[1] * roi[2]));
    s.push_str(&format!("resolution limits  cross-range {:.3} mm, range {:.3} mm\n", m.resolution.sigma_xz, m.resolution.sigma_y));
    if let (Some(l), Some(f)) = (m.lambda_r, m.lambda_fraction) {
        s.push_str(&format!("lambda_r           {l:.6e} ({f:.4e} of max |H^H g|)\n"));
    }
    if let (Some(it), Some(c)) = (m.admm_iterations, m.admm_converged) {
        s.push_str(&format!("admm               {it} iterations, converged: {c}\n"));
    }
    s.push_str(&format!("support IoU        {:.4} (tau {}, {} vs {} voxels)\n", m.iou, m.threshold, m.support_voxels, m.truth_voxels));
    s.push_str(&format!("range plane        peak {} / truth {:?} -> {}\n", m.peak_plane, m.truth_planes, if m.range_plane_correct { "correct" } else { "wrong" }));
    s.push_str(&format!("range peaks        {:?}\n", m.range_peaks));
    let condition = m.condition.map_or_else(|| "inf".to_string(), |c| format!("{c:.3e}"));
    s.push_str(&format!("effective rank     {:.3} (sigma1/sigmak {condition})\n", m.effective_rank));
    if let Some(r) = m.compare_effective_rank {
        s.push_str(&format!("compare eff. rank  {r:.3}\n"));
    }
    s.push_str(&format!("speed of light     {SPEED_OF_LIGHT} m/s\n"));
    s.push_str("timings\n");
    for (name, secs) in timings {
        s.push_str(&format!("  {name:<12} {secs:.2} s\n"));
    }
    s
}

fn stage_current(cfg: &ExperimentConfig, art: &Artifacts, stage: Stage) -> bool {
    #[derive(Deserialize)]
    struct Hashed {
        #[serde(default)]
        config_hash: String,
    }
    let paths: Vec<PathBuf> = match stage {
        Stage::Geometry => vec![art.mesh()],
        Stage::Calibrate => vec![art.sensing_matrix()],
        Stage::Simulate => vec![art.truth(), art.measurements()],
        Stage::Reconstruct => vec![art.recon_raw()],
        Stage::Analyze => return false,
    };
    let expected = cfg.stage_hash(stage);
    let current = paths.iter().all(|p| {
        p.exists()
            && std::fs::read_to_string(sidecar_path(p))
                .ok()
                .and_then(|t| serde_json::from_str::<Hashed>(&t).ok())
                .is_some_and(|h| h.config_hash == expected)
    });
    current && (stage != Stage::Reconstruct || art.solver_report().exists())
}

/// Run every stage, reusing artifacts whose configuration hash matches
/// unless `force` is set. Writes `summary.txt`.
pub fn run_pipeline(cfg: &ExperimentConfig, art: &Artifacts, force: bool) -> Result<Metrics> {
    cfg.validate()?;
    std::fs::create_dir_all(&art.dir).map_err(|e| io_err(&art.dir, e))?;
    let mut completed: Vec<PathBuf> = Vec::new();
    let mut timings = Vec::new();
    let wrap = |stage: Stage, completed: &Vec<PathBuf>| {
        let completed = completed.clone();
        move |e: PipelineError| PipelineError::Stage { stage: stage.name(), source: Box::new(e), completed }
    };
    // Once a stage reruns, everything downstream reruns with it.
    let mut rerun = force;
    for stage in [Stage::Geometry, Stage::Calibrate, Stage::Simulate, Stage::Reconstruct] {
        let t = Instant::now();
        if !rerun && stage_current(cfg, art, stage) {
            log::info!("{}: reusing existing artifacts", stage.name());
            continue;
        }
        log::info!("{}: running", stage.name());
        rerun = true;
        let paths = match stage {
            Stage::Geometry => run_geometry(cfg, art),
            Stage::Calibrate => run_calibrate(cfg, art, false),
            Stage::Simulate => run_simulate(cfg, art, false),
            Stage::Reconstruct => run_reconstruct(cfg, art, false),
            Stage::Analyze => unreachable!(),
        }
        .map_err(wrap(stage, &completed))?;
        completed.extend(paths);
        timings.push((stage.name(), t.elapsed().as_secs_f64()));
    }
    let t = Instant::now();
    let (metrics, paths) = run_analyze(cfg, art, None, false).map_err(wrap(Stage::Analyze, &completed))?;
    completed.extend(paths);
    timings.push((Stage::Analyze.name(), t.elapsed().as_secs_f64()));
    write_summary(cfg, art, &metrics, &timings)?;
    Ok(metrics)
}

pub fn write_summary(cfg: &ExperimentConfig, art: &Artifacts, metrics: &Metrics, timings: &[(&'static str, f64)]) -> Result<()> {
    let text = summary_text(cfg, metrics, timings);
    std::fs::write(art.summary(), text).map_err(|e| io_err(&art.summary(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const TINY: &str = "
[reflector]
aperture_size = 60
focal_length = 60
offset = 0
mean_facet_edge = 10
[ports]
count = 2
pitch = 4
pattern_exponent = 2
[frequencies]
start_ghz = 71
stop_ghz = 76
count = 3
[aperture]
distance = 100
x_extent = 30
z_extent = 30
spacing = 3
[roi]
distance = 200
extent_x = 24
extent_y = 60
extent_z = 24
voxel_x = 6
voxel_y = 30
voxel_z = 6
[target]
kind = points
points = 0 -15 0
rotation_deg = 0
[admm]
block_count = 2
lambda_fraction = 0.05
normalize = true
max_iters = 50
";

    fn tiny() -> ExperimentConfig {
        parse_config(TINY).unwrap()
    }

    #[test]
    fn pipeline_writes_artifacts_and_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let cfg = tiny();
        let m = run_pipeline(&cfg, &art, false).unwrap();
        assert_eq!(m.truth_voxels, 1);
        let count = std::fs::read_dir(dir.path()).unwrap().count();
        assert!(count >= 8, "{count} artifacts");
        let first = std::fs::read(art.recon_raw()).unwrap();
        let first_h = std::fs::read(art.sensing_matrix()).unwrap();
        run_pipeline(&cfg, &art, true).unwrap();
        assert_eq!(std::fs::read(art.recon_raw()).unwrap(), first);
        assert_eq!(std::fs::read(art.sensing_matrix()).unwrap(), first_h);
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let err = run_simulate(&tiny(), &art, false).unwrap_err();
        assert!(err.to_string().contains("`calibrate`"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rebuilt_stage_invalidates_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let cfg = tiny();
        run_pipeline(&cfg, &art, false).unwrap();
        let original = std::fs::read(art.sensing_matrix()).unwrap();
        let other = ExperimentConfig { seeds: crate::config::Seeds { geometry: 5, noise: 1 }, ..cfg.clone() };
        run_geometry(&other, &art).unwrap();
        run_calibrate(&cfg, &art, true).unwrap();
        assert_ne!(std::fs::read(art.sensing_matrix()).unwrap(), original);
        run_pipeline(&cfg, &art, false).unwrap();
        assert_eq!(std::fs::read(art.sensing_matrix()).unwrap(), original);
    }

    #[test]
    fn changed_snr_reuses_sensing_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let cfg = tiny();
        run_geometry(&cfg, &art).unwrap();
        run_calibrate(&cfg, &art, false).unwrap();
        let stamp = std::fs::metadata(art.sensing_matrix()).unwrap().modified().unwrap();
        let noisy = ExperimentConfig { snr_db: 5.0, ..cfg.clone() };
        assert!(stage_current(&noisy, &art, Stage::Calibrate));
        run_simulate(&noisy, &art, false).unwrap();
        assert_eq!(std::fs::metadata(art.sensing_matrix()).unwrap().modified().unwrap(), stamp);
    }

    #[test]
    fn mismatched_upstream_is_refused_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let cfg = tiny();
        run_geometry(&cfg, &art).unwrap();
        let other = ExperimentConfig { seeds: crate::config::Seeds { geometry: 99, noise: 1 }, ..cfg.clone() };
        let err = run_calibrate(&other, &art, false).unwrap_err();
        assert!(matches!(err, PipelineError::HashMismatch { .. }));
        assert_eq!(err.exit_code(), 1);
        run_calibrate(&other, &art, true).unwrap();
    }

    #[test]
    fn block_count_does_not_change_reconstruction_much() {
        let cfg = tiny();
        let run = |n: usize| {
            let dir = tempfile::tempdir().unwrap();
            let art = Artifacts::new(dir.path());
            let mut c = cfg.clone();
            c.solver.admm.block_count = n;
            c.solver.admm.max_iters = 50_000;
            c.solver.admm.tol_primal = 1e-12;
            c.solver.admm.tol_dual = 1e-12;
            let m = run_pipeline(&c, &art, false).unwrap();
            assert_eq!(m.admm_converged, Some(true));
            ReflectivityVolume::load(&art.recon_raw()).unwrap().0.values
        };
        let (a, b) = (run(1), run(4));
        let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let diff: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(norm(&diff) / norm(&a) < 1e-8, "{}", norm(&diff) / norm(&a));
    }

    #[test]
    fn tra_geometry_has_no_distortion() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let cfg = ExperimentConfig { tra: true, ..tiny() };
        run_geometry(&cfg, &art).unwrap();
        let (_, meta) = read_mesh(&art.mesh()).unwrap();
        assert!(meta.distortions.iter().all(|&d| d == 0.0));
        assert_eq!(meta.params.max_distortion, 0.0);
    }
}
