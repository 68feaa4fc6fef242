//! Raw-spectrum serialization: columnar CSV and a little-endian binary block.
//!
//! Binary layout: `n_dc: u32`, `n_freq: u32`, then `n_freq` grid frequencies
//! as f64, then per sweep the DC bias followed by interleaved (re, im) pairs
//! for each frequency. All floats are little-endian f64.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{BiasSweep, FrequencyGrid, RawSpectrum, ShoError};

/// Writes `bias,freq,re,im` rows, one per (sweep, frequency) pair.
pub fn write_csv<W: Write>(spectrum: &RawSpectrum, mut w: W) -> Result<(), ShoError> {
    writeln!(w, "bias,freq,re,im")?;
    for sweep in spectrum.sweeps() {
        for (freq, c) in spectrum.grid().freqs().iter().zip(&sweep.response) {
            writeln!(w, "{},{},{},{}", sweep.dc_bias, freq, c.re, c.im)?;
        }
    }
    Ok(())
}

/// Reads the columnar CSV format produced by [`write_csv`]. Frequencies are
/// strictly increasing within a sweep, so each return to the first grid
/// frequency starts a new sweep.
pub fn read_csv<R: Read>(mut r: R) -> Result<RawSpectrum, ShoError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "bias,freq,re,im" => {}
        other => {
            return Err(ShoError::Malformed(format!(
                "bad csv header: {:?}",
                other.unwrap_or("")
            )))
        }
    }

    let mut rows: Vec<(f64, f64, Complex64)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = || -> Result<f64, ShoError> {
            parts
                .next()
                .ok_or_else(|| ShoError::Malformed(format!("line {}: missing field", lineno + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| ShoError::Malformed(format!("line {}: {e}", lineno + 2)))
        };
        let (bias, freq, re, im) = (field()?, field()?, field()?, field()?);
        rows.push((bias, freq, Complex64::new(re, im)));
    }
    if rows.is_empty() {
        return Err(ShoError::Malformed("no data rows".into()));
    }

    let n_freq = rows
        .iter()
        .skip(1)
        .position(|&(_, f, _)| f == rows[0].1)
        .map(|p| p + 1)
        .unwrap_or(rows.len());
    if rows.len() % n_freq != 0 {
        return Err(ShoError::Malformed(format!(
            "{} rows is not a multiple of the {n_freq}-point grid",
            rows.len()
        )));
    }
    let grid: Vec<f64> = rows[..n_freq].iter().map(|&(_, f, _)| f).collect();

    let mut sweeps = Vec::with_capacity(rows.len() / n_freq);
    for chunk in rows.chunks(n_freq) {
        let bias = chunk[0].0;
        for (k, &(b, f, _)) in chunk.iter().enumerate() {
            if b != bias {
                return Err(ShoError::Malformed(
                    "bias changed inside a frequency sweep".into(),
                ));
            }
            if (f - grid[k]).abs() > grid[k].abs() * 1e-12 {
                return Err(ShoError::Malformed(format!(
                    "frequency {f} does not match grid entry {}",
                    grid[k]
                )));
            }
        }
        sweeps.push(BiasSweep {
            dc_bias: bias,
            response: chunk.iter().map(|&(_, _, c)| c).collect(),
        });
    }
    RawSpectrum::new(sweeps, FrequencyGrid::new(grid)?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Writes the binary block format.
pub fn write_block<W: Write>(spectrum: &RawSpectrum, mut w: W) -> Result<(), ShoError> {
    w.write_all(&(spectrum.n_dc() as u32).to_le_bytes())?;
    w.write_all(&(spectrum.grid().len() as u32).to_le_bytes())?;
    for &f in spectrum.grid().freqs() {
        put_f64(&mut w, f)?;
    }
    for sweep in spectrum.sweeps() {
        put_f64(&mut w, sweep.dc_bias)?;
        for c in &sweep.response {
            put_f64(&mut w, c.re)?;
            put_f64(&mut w, c.im)?;
        }
    }
    Ok(())
}

/// Reads the binary block format.
pub fn read_block<R: Read>(mut r: R) -> Result<RawSpectrum, ShoError> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let n_dc = u32::from_le_bytes(head) as usize;
    r.read_exact(&mut head)?;
    let n_freq = u32::from_le_bytes(head) as usize;
    if n_dc == 0 || n_freq == 0 || n_dc > 1 << 24 || n_freq > 1 << 24 {
        return Err(ShoError::Malformed(format!(
            "implausible block header: n_dc={n_dc}, n_freq={n_freq}"
        )));
    }
    let mut grid = Vec::with_capacity(n_freq);
    for _ in 0..n_freq {
        grid.push(get_f64(&mut r)?);
    }
    let mut sweeps = Vec::with_capacity(n_dc);
    for _ in 0..n_dc {
        let dc_bias = get_f64(&mut r)?;
        let mut response = Vec::with_capacity(n_freq);
        for _ in 0..n_freq {
            let re = get_f64(&mut r)?;
            let im = get_f64(&mut r)?;
            response.push(Complex64::new(re, im));
        }
        sweeps.push(BiasSweep { dc_bias, response });
    }
    RawSpectrum::new(sweeps, FrequencyGrid::new(grid)?)
}
