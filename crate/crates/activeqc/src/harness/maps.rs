//! Map-grid export: per-candidate score components, the GP quality surface
//! and sample-location overlays on the centers grid, written as CSV grids
//! and 8-bit PGM renderings.

use std::io::Write;
use std::path::Path;

use crate::acquisition::AcquisitionRecord;
use crate::gp::GpModel;

use super::{HarnessError, TrialResult};

/// Location overlay codes.
pub const LOC_NONE: u8 = 0;
pub const LOC_NOISY: u8 = 1;
pub const LOC_TRAINING: u8 = 2;
pub const LOC_BATCH: u8 = 3;

/// Everything needed to rebuild one step's maps, either from an in-memory
/// trial or from persisted logs.
pub struct MapInputs<'a> {
    /// Centers per side.
    pub n: usize,
    pub records: &'a [AcquisitionRecord],
    pub retained_ids: &'a [usize],
    pub batch_ids: &'a [usize],
    pub corrupted_ids: &'a [usize],
    pub gp_state: Option<&'a str>,
}

impl<'a> MapInputs<'a> {
    pub fn from_trial(trial: &'a TrialResult, step: usize) -> Option<Self> {
        let log = trial.log.get(step - 1)?;
        let metrics = trial.steps.get(step - 1)?;
        Some(Self {
            n: trial.centers_per_side,
            records: &log.records,
            retained_ids: &log.retained_ids,
            batch_ids: &metrics.batch_ids,
            corrupted_ids: &trial.corrupted_ids,
            gp_state: log.gp_state.as_deref(),
        })
    }
}

/// Dense n x n value grids; cells without a candidate hold NaN. The quality
/// grid covers the full field via the replayed GP when its state is present.
pub struct MapGrids {
    pub n: usize,
    pub e_hat: Vec<f64>,
    pub d: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub a: Vec<f64>,
    pub locations: Vec<u8>,
    /// Whether the component grids carry data (they do not for `Random`).
    pub has_components: bool,
    /// Whether the quality grid carries data (ActiveQC only).
    pub has_quality: bool,
}

/// Builds the map grids for one step.
pub fn export_maps(inputs: &MapInputs<'_>) -> Result<MapGrids, HarnessError> {
    let n = inputs.n;
    let cells = n * n;
    let mut grids = MapGrids {
        n,
        e_hat: vec![f64::NAN; cells],
        d: vec![f64::NAN; cells],
        r: vec![f64::NAN; cells],
        s: vec![f64::NAN; cells],
        q_hat: vec![f64::NAN; cells],
        a: vec![f64::NAN; cells],
        locations: vec![LOC_NONE; cells],
        has_components: false,
        has_quality: false,
    };
    for rec in inputs.records {
        if rec.id >= cells {
            return Err(HarnessError::Malformed(format!(
                "candidate id {} outside the {n}x{n} grid",
                rec.id
            )));
        }
        grids.e_hat[rec.id] = rec.e_hat;
        grids.d[rec.id] = rec.d;
        grids.r[rec.id] = rec.r;
        grids.s[rec.id] = rec.s;
        grids.a[rec.id] = rec.a;
        if let Some(q) = rec.q_hat {
            grids.q_hat[rec.id] = q;
        }
        if rec.e_hat != 0.0 || rec.d != 0.0 || rec.r != 0.0 {
            grids.has_components = true;
        }
    }

    if let Some(state) = inputs.gp_state {
        let gp = GpModel::from_json(state)?;
        let denom = (n - 1).max(1) as f64;
        for row in 0..n {
            for col in 0..n {
                let (m, _) = gp.predict_one([row as f64 / denom, col as f64 / denom]);
                grids.q_hat[row * n + col] = m;
            }
        }
        grids.has_quality = true;
    }

    for &id in inputs.corrupted_ids {
        grids.locations[id] = LOC_NOISY;
    }
    for &id in inputs.retained_ids {
        grids.locations[id] = LOC_TRAINING;
    }
    for &id in inputs.batch_ids {
        grids.locations[id] = LOC_BATCH;
    }
    Ok(grids)
}

/// Writes a value grid as CSV rows; NaN cells print as `nan`.
pub fn write_map_csv(path: &Path, n: usize, values: &[f64]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for row in 0..n {
        let cells: Vec<String> = (0..n)
            .map(|col| {
                let v = values[row * n + col];
                if v.is_nan() {
                    "nan".to_string()
                } else {
                    format!("{v}")
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Min-max requantization of a value grid to 8 bits; NaN maps to 0.
pub fn quantize_grid(values: &[f64]) -> Vec<u8> {
    let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return vec![0; values.len()];
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                0
            } else if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                255
            }
        })
        .collect()
}

/// Writes an 8-bit binary PGM (P5) of a value grid.
pub fn write_map_pgm(path: &Path, n: usize, values: &[f64]) -> Result<(), HarnessError> {
    let bytes = quantize_grid(values);
    write_pgm_bytes(path, n, &bytes)
}

/// Writes raw 8-bit cells as PGM (used for the categorical locations map,
/// scaled for visibility).
pub fn write_locations_pgm(path: &Path, n: usize, codes: &[u8]) -> Result<(), HarnessError> {
    let bytes: Vec<u8> = codes.iter().map(|&c| c.saturating_mul(85)).collect();
    write_pgm_bytes(path, n, &bytes)
}

fn write_pgm_bytes(path: &Path, n: usize, bytes: &[u8]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{n} {n}\n255\n")?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads back a CSV grid written by [`write_map_csv`].
pub fn read_map_csv(path: &Path) -> Result<(usize, Vec<f64>), HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut n = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        n += 1;
        for cell in line.split(',') {
            let cell = cell.trim();
            values.push(if cell == "nan" {
                f64::NAN
            } else {
                cell.parse::<f64>()
                    .map_err(|e| HarnessError::Malformed(format!("bad grid cell: {e}")))?
            });
        }
    }
    if values.len() != n * n {
        return Err(HarnessError::Malformed(format!(
            "grid is not square: {n} rows, {} cells",
            values.len()
        )));
    }
    Ok((n, values))
}
