use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use super::feed::{drives, reflecting_patches};
use super::propagate::{Propagator, DEFAULT_MIN_DISTANCE};
use super::radiate::{radiate_many, Source};
use super::{equivalent_currents, ApertureGrid, FeedPort, PortRole, PropagationMethod, RoIField, RowIndex, SensingMatrix};
use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::scene::RoIGrid;

/// First-order Born row: per voxel, `sum_c E_tx[c] * E_rx[c]` (no conjugation).
pub fn sensing_row(tx: &RoIField, rx: &RoIField) -> Result<Vec<Complex64>> {
    if tx.roi != rx.roi || tx.samples.len() != rx.samples.len() {
        return Err(Error::DimensionMismatch("transmit and receive fields live on different grids".into()));
    }
    if tx.frequency_hz != rx.frequency_hz {
        return Err(Error::DimensionMismatch(format!(
            "transmit field at {} Hz, receive field at {} Hz",
            tx.frequency_hz, rx.frequency_hz
        )));
    }
    Ok(tx.samples.iter().zip(&rx.samples).map(|(a, b)| a.x * b.x + a.y * b.y + a.z * b.z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub method: PropagationMethod,
    pub min_distance: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { method: PropagationMethod::Auto, min_distance: DEFAULT_MIN_DISTANCE }
    }
}

/// Full-system sensing matrix.
///
/// Rows follow the input frequency list, then transmitters, then receivers,
/// each in the order they appear in `ports`: row
/// `(f * n_tx + t) * n_rx + r`. Repeated frequencies yield repeated blocks.
pub fn assemble_sensing_matrix(
    ports: &[FeedPort],
    frequencies_hz: &[f64],
    mesh: &TriMesh,
    plane: &ApertureGrid,
    roi: &RoIGrid,
    options: &AssemblyOptions,
) -> Result<SensingMatrix> {
    let tx: Vec<usize> = (0..ports.len()).filter(|&i| ports[i].role == PortRole::Tx).collect();
    let rx: Vec<usize> = (0..ports.len()).filter(|&i| ports[i].role == PortRole::Rx).collect();
    if tx.is_empty() || rx.is_empty() || frequencies_hz.is_empty() {
        return Err(Error::param("ports", "need at least one transmitter, one receiver and one frequency"));
    }
    if frequencies_hz.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::param("frequencies", "must be positive and finite"));
    }
    let first_row = RowIndex { frequency_hz: frequencies_hz[0], tx: 0, rx: 0 };
    let with_row = |row: RowIndex| move |e: Error| Error::Row { frequency_hz: row.frequency_hz, tx: row.tx, rx: row.rx, source: Box::new(e) };

    // Unique frequencies, ascending, so stepped grids use the phasor recurrence.
    let mut unique: Vec<f64> = frequencies_hz.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();

    let patches = reflecting_patches(mesh).map_err(with_row(first_row))?;
    let sources: Vec<Vec<Source>> = ports
        .iter()
        .enumerate()
        .map(|(i, port)| {
            let row = row_for_port(&tx, &rx, i, frequencies_hz[0]);
            drives(port, &patches).map(|d| d.iter().map(Source::from_drive).collect()).map_err(with_row(row))
        })
        .collect::<Result<_>>()?;
    let started = Instant::now();
    let aperture_fields = radiate_many(&sources, plane, &unique).map_err(with_row(first_row))?;
    drop(sources);
    log::debug!("aperture fields: {:.2} s", started.elapsed().as_secs_f64());
    let started = Instant::now();

    let cols = roi.len();
    let (ntx, nrx) = (tx.len(), rx.len());
    let rows = frequencies_hz.len() * ntx * nrx;
    let mut data = vec![Complex64::new(0.0, 0.0); rows * cols];

    for (u, &freq) in unique.iter().enumerate() {
        let block_row = RowIndex { frequency_hz: freq, tx: 0, rx: 0 };
        let propagator = Propagator::new(plane, roi, freq, options.method, options.min_distance)
            .map_err(with_row(block_row))?;
        let roi_fields: Vec<RoIField> = aperture_fields
            .iter()
            .enumerate()
            .map(|(p, per_freq)| {
                let row = row_for_port(&tx, &rx, p, freq);
                equivalent_currents(&per_freq[u]).and_then(|m| propagator.apply(&m)).map_err(with_row(row))
            })
            .collect::<Result<_>>()?;

        let block: Vec<Vec<Complex64>> = (0..ntx * nrx)
            .into_par_iter()
            .map(|pair| {
                let (t, r) = (pair / nrx, pair % nrx);
                sensing_row(&roi_fields[tx[t]], &roi_fields[rx[r]])
                    .map_err(with_row(RowIndex { frequency_hz: freq, tx: t, rx: r }))
            })
            .collect::<Result<_>>()?;

        for (fi, _) in frequencies_hz.iter().enumerate().filter(|(_, &f)| f == freq) {
            for (pair, values) in block.iter().enumerate() {
                let row = fi * ntx * nrx + pair;
                data[row * cols..(row + 1) * cols].copy_from_slice(values);
            }
        }
    }

    log::debug!("propagation and rows: {:.2} s", started.elapsed().as_secs_f64());

    let row_index = frequencies_hz
        .iter()
        .flat_map(|&f| (0..ntx).flat_map(move |t| (0..nrx).map(move |r| RowIndex { frequency_hz: f, tx: t, rx: r })))
        .collect();
    let h = SensingMatrix::new(rows, cols, data, row_index)?;
    if !h.all_finite() {
        return Err(Error::param("sensing_matrix", "assembled entries are not finite"));
    }
    Ok(h)
}

fn row_for_port(tx: &[usize], rx: &[usize], port: usize, frequency_hz: f64) -> RowIndex {
    let t = tx.iter().position(|&p| p == port).unwrap_or(0);
    let r = rx.iter().position(|&p| p == port).unwrap_or(0);
    RowIndex { frequency_hz, tx: t, rx: r }
}
