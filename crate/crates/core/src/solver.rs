//! Row-split consensus ADMM for
//!
//! ```text
//! minimize  1/2 sum_i ||H_i u_i - g_i||^2 + lambda ||v||_1   s.t.  u_i = v
//! ```
//!
//! with scaled duals, complex soft-thresholding on the consensus variable and
//! a per-block factorization that is rebuilt only when `rho` changes.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::SensingMatrix;
use crate::scene::{MeasurementVector, ReflectivityVolume, RoIGrid};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub block_count: usize,
    pub lambda_r: f64,
    pub rho: f64,
    pub max_iters: usize,
    /// Relative primal tolerance.
    pub tol_primal: f64,
    /// Relative dual tolerance.
    pub tol_dual: f64,
    /// Residual-balancing update of `rho` (x2 / /2 when one residual exceeds
    /// the other tenfold), kept within `[rho / 1000, rho * 1000]`.
    pub adaptive_rho: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { block_count: 40, lambda_r: 20.0, rho: 1.0, max_iters: 500, tol_primal: 1e-5, tol_dual: 1e-5, adaptive_rho: false }
    }
}

impl AdmmConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.block_count == 0 || self.block_count > rows {
            return Err(Error::param("block_count", format!("must be in 1..={rows}, got {}", self.block_count)));
        }
        if !(self.lambda_r >= 0.0) || !self.lambda_r.is_finite() {
            return Err(Error::param("lambda_r", "must be >= 0"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::param("rho", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be > 0"));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::param("tolerance", "must be > 0"));
        }
        Ok(())
    }
}

/// A contiguous slice of rows of `(H, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock {
    /// Index of the first row in the full system.
    pub first_row: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub h: Vec<C>,
    pub g: Vec<C>,
}

impl RowBlock {
    pub fn new(first_row: usize, rows: usize, cols: usize, h: Vec<C>, g: Vec<C>) -> Result<Self> {
        if h.len() != rows * cols || g.len() != rows {
            return Err(Error::DimensionMismatch(format!(
                "block of {rows}x{cols} with {} entries and {} measurements",
                h.len(),
                g.len()
            )));
        }
        Ok(Self { first_row, rows, cols, h, g })
    }

    fn row(&self, i: usize) -> &[C] {
        &self.h[i * self.cols..(i + 1) * self.cols]
    }

    fn apply(&self, x: &[C]) -> Vec<C> {
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn apply_adjoint(&self, w: &[C]) -> Vec<C> {
        let mut out = vec![ZERO; self.cols];
        for (i, wi) in w.iter().enumerate() {
            for (o, h) in out.iter_mut().zip(self.row(i)) {
                *o += h.conj() * wi;
            }
        }
        out
    }

    /// `1/2 ||H x - g||^2`.
    pub fn data_misfit(&self, x: &[C]) -> f64 {
        0.5 * self.apply(x).iter().zip(&self.g).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
    }
}

/// Split `(H, g)` into `n` contiguous row blocks whose sizes differ by at
/// most one; the larger blocks come first.
pub fn partition_rows(h: &SensingMatrix, g: &MeasurementVector, n: usize) -> Result<Vec<RowBlock>> {
    if g.values.len() != h.rows {
        return Err(Error::DimensionMismatch(format!("{} measurements for {} rows", g.values.len(), h.rows)));
    }
    if n == 0 || n > h.rows {
        return Err(Error::param("block_count", format!("must be in 1..={}, got {n}", h.rows)));
    }
    let (base, extra) = (h.rows / n, h.rows % n);
    let mut start = 0;
    (0..n)
        .map(|b| {
            let rows = base + usize::from(b < extra);
            let block = RowBlock::new(
                start,
                rows,
                h.cols,
                h.data[start * h.cols..(start + rows) * h.cols].to_vec(),
                g.values[start..start + rows].to_vec(),
            );
            start += rows;
            block
        })
        .collect()
}

/// Shrink each magnitude by `kappa`, keeping the phase.
pub fn soft_threshold_complex(v: &[C], kappa: f64) -> Vec<C> {
    v.iter()
        .map(|&z| {
            let m = z.norm();
            if m <= kappa || m == 0.0 {
                ZERO
            } else {
                z * ((m - kappa) / m)
            }
        })
        .collect()
}

enum Factor {
    /// `rows < cols`: Cholesky of `H H^H + rho I`, applied through the
    /// matrix inversion lemma.
    Wide(Cholesky<C, Dyn>),
    /// Cholesky of `H^H H + rho I`.
    Tall(Cholesky<C, Dyn>),
}

/// A block together with its cached normal-equation factorization.
pub struct BlockSolver<'a> {
    block: &'a RowBlock,
    gram: DMatrix<C>,
    hg: Vec<C>,
    rho: f64,
    factor: Factor,
}

impl<'a> BlockSolver<'a> {
    pub fn new(block: &'a RowBlock, rho: f64) -> Result<Self> {
        let (m, n) = (block.rows, block.cols);
        let gram = if m < n {
            let mut g = DMatrix::from_element(m, m, ZERO);
            for i in 0..m {
                for j in i..m {
                    let v: C = block.row(i).iter().zip(block.row(j)).map(|(a, b)| a * b.conj()).sum();
                    g[(i, j)] = v;
                    g[(j, i)] = v.conj();
                }
            }
            g
        } else {
            let mut g = DMatrix::from_element(n, n, ZERO);
            for r in 0..m {
                let row = block.row(r);
                for i in 0..n {
                    let a = row[i].conj();
                    for j in 0..n {
                        g[(i, j)] += a * row[j];
                    }
                }
            }
            g
        };
        let hg = block.apply_adjoint(&block.g);
        let factor = Self::factorize(&gram, m < n, rho)?;
        Ok(Self { block, gram, hg, rho, factor })
    }

    fn factorize(gram: &DMatrix<C>, wide: bool, rho: f64) -> Result<Factor> {
        if !(rho > 0.0) {
            return Err(Error::param("rho", "must be > 0"));
        }
        let mut a = gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += rho;
        }
        let chol = Cholesky::new(a).expect("H^H H + rho I is positive definite for rho > 0");
        Ok(if wide { Factor::Wide(chol) } else { Factor::Tall(chol) })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn set_rho(&mut self, rho: f64) -> Result<()> {
        if rho != self.rho {
            self.factor = Self::factorize(&self.gram, matches!(self.factor, Factor::Wide(_)), rho)?;
            self.rho = rho;
        }
        Ok(())
    }

    /// `argmin 1/2 ||H u - g||^2 + rho/2 ||u - v + y||^2`.
    pub fn update(&self, v: &[C], y: &[C]) -> Vec<C> {
        let rho = self.rho;
        let b: Vec<C> = self.hg.iter().zip(v.iter().zip(y)).map(|(h, (vi, yi))| h + (vi - yi) * rho).collect();
        match &self.factor {
            Factor::Wide(chol) => {
                // (H^H H + rho I)^-1 b = (b - H^H (H H^H + rho I)^-1 H b) / rho
                let hb = DVector::from_vec(self.block.apply(&b));
                let w = chol.solve(&hb);
                let correction = self.block.apply_adjoint(w.as_slice());
                b.iter().zip(&correction).map(|(bi, ci)| (bi - ci) / rho).collect()
            }
            Factor::Tall(chol) => chol.solve(&DVector::from_vec(b)).as_slice().to_vec(),
        }
    }
}

/// Single proximal block step without caching.
pub fn block_update(block: &RowBlock, v: &[C], y: &[C], rho: f64) -> Result<Vec<C>> {
    if v.len() != block.cols || y.len() != block.cols {
        return Err(Error::DimensionMismatch(format!("vectors of length {} and {} for {} columns", v.len(), y.len(), block.cols)));
    }
    Ok(BlockSolver::new(block, rho)?.update(v, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub iteration: usize,
    pub objective: f64,
    /// `sqrt(sum ||u_i - v||^2) / max(sqrt(sum ||u_i||^2), sqrt(N) ||v||)`.
    pub primal_residual: f64,
    /// `rho sqrt(N) ||v - v_prev|| / (rho max(sqrt(sum ||y_i||^2), sqrt(N) ||v||))`.
    pub dual_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub entries: Vec<ConvergenceEntry>,
    pub converged: bool,
}

impl ConvergenceLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,primal_residual,dual_residual,rho\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{:.12e},{:.6e},{:.6e},{}\n",
                e.iteration, e.objective, e.primal_residual, e.dual_residual, e.rho
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.entries.last().map(|e| e.objective)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub u: Vec<Vec<C>>,
    pub v: Vec<C>,
    pub y: Vec<Vec<C>>,
    pub iteration: usize,
    pub rho: f64,
}

impl AdmmState {
    fn zeros(blocks: usize, cols: usize, rho: f64) -> Self {
        Self { u: vec![vec![ZERO; cols]; blocks], v: vec![ZERO; cols], y: vec![vec![ZERO; cols]; blocks], iteration: 0, rho }
    }
}

/// `1/2 sum_i ||H_i x - g_i||^2 + lambda ||x||_1`.
pub fn objective(blocks: &[RowBlock], x: &[C], lambda_r: f64) -> f64 {
    let misfit: f64 = blocks.par_iter().map(|b| b.data_misfit(x)).collect::<Vec<_>>().iter().sum();
    misfit + lambda_r * x.iter().map(|z| z.norm()).sum::<f64>()
}

fn norm(x: &[C]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Consensus ADMM from `v = 0`, `y_i = 0`.
pub fn admm_solve(blocks: &[RowBlock], config: &AdmmConfig) -> Result<(AdmmState, ConvergenceLog)> {
    let rows: usize = blocks.iter().map(|b| b.rows).sum();
    if blocks.is_empty() {
        return Err(Error::param("blocks", "at least one block is required"));
    }
    config.validate(rows)?;
    if blocks.len() != config.block_count {
        return Err(Error::param("block_count", format!("{} blocks supplied, config expects {}", blocks.len(), config.block_count)));
    }
    let cols = blocks[0].cols;
    if blocks.iter().any(|b| b.cols != cols) {
        return Err(Error::DimensionMismatch("blocks have different column counts".into()));
    }

    let n = blocks.len() as f64;
    let mut rho = config.rho;
    let (rho_min, rho_max) = (config.rho / 1e3, config.rho * 1e3);
    let mut solvers: Vec<BlockSolver> = blocks.par_iter().map(|b| BlockSolver::new(b, rho)).collect::<Result<_>>()?;
    let mut state = AdmmState::zeros(blocks.len(), cols, rho);
    let mut log = ConvergenceLog::default();

    for it in 1..=config.max_iters {
        state.u = solvers.par_iter().zip(&state.y).map(|(s, y)| s.update(&state.v, y)).collect();

        // Ordered reduction over blocks.
        let mut mean = vec![ZERO; cols];
        for (u, y) in state.u.iter().zip(&state.y) {
            for ((m, ui), yi) in mean.iter_mut().zip(u).zip(y) {
                *m += ui + yi;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let v_prev = std::mem::replace(&mut state.v, soft_threshold_complex(&mean, config.lambda_r / (n * rho)));

        for (y, u) in state.y.iter_mut().zip(&state.u) {
            for ((yi, ui), vi) in y.iter_mut().zip(u).zip(&state.v) {
                *yi += ui - vi;
            }
        }
        state.iteration = it;

        let r = state.u.iter().map(|u| u.iter().zip(&state.v).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()).sum::<f64>().sqrt();
        let s = rho * n.sqrt() * state.v.iter().zip(&v_prev).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let u_norm = state.u.iter().map(|u| norm(u).powi(2)).sum::<f64>().sqrt();
        let y_norm = state.y.iter().map(|y| norm(y).powi(2)).sum::<f64>().sqrt();
        let primal = relative(r, u_norm.max(n.sqrt() * norm(&state.v)));
        let dual = relative(s, rho * y_norm.max(n.sqrt() * norm(&state.v)));
        let obj = objective(blocks, &state.v, config.lambda_r);
        if !obj.is_finite() || !primal.is_finite() || !dual.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        log.entries.push(ConvergenceEntry { iteration: it, objective: obj, primal_residual: primal, dual_residual: dual, rho });

        if primal <= config.tol_primal && dual <= config.tol_dual {
            log.converged = true;
            break;
        }
        if config.adaptive_rho {
            let next = if primal > 10.0 * dual {
                (rho * 2.0).min(rho_max)
            } else if dual > 10.0 * primal {
                (rho / 2.0).max(rho_min)
            } else {
                rho
            };
            if next != rho {
                // Scaled duals follow the penalty.
                let scale = rho / next;
                state.y.iter_mut().flatten().for_each(|yi| *yi *= scale);
                rho = next;
                solvers.par_iter_mut().try_for_each(|s| s.set_rho(rho))?;
                state.rho = rho;
            }
        }
    }
    Ok((state, log))
}

fn relative(value: f64, scale: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else if scale > 0.0 {
        value / scale
    } else {
        f64::INFINITY
    }
}

/// Solve and wrap the consensus variable as a reflectivity volume.
pub fn reconstruct(
    h: &SensingMatrix,
    g: &MeasurementVector,
    roi: &RoIGrid,
    config: &AdmmConfig,
) -> Result<(ReflectivityVolume, ConvergenceLog)> {
    if h.cols != roi.len() {
        return Err(Error::DimensionMismatch(format!("{} columns for {} voxels", h.cols, roi.len())));
    }
    let blocks = partition_rows(h, g, config.block_count)?;
    let (state, log) = admm_solve(&blocks, config)?;
    Ok((ReflectivityVolume::new(*roi, state.v)?, log))
}
