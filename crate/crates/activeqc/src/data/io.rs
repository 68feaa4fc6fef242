//! Dataset persistence.
//!
//! Layout under the target directory:
//! - `manifest.json` - config, seeds, normalization constants, counts
//! - `patches.f64` / `patches.shape.json` - n x p^2 block
//! - `loops.f64`, `loops_clean.f64` with shape headers - n x L blocks
//! - `flags.csv` - `id,row,col,corrupted`
//! - `spectra.bin` - u32 sample count, then one raw-spectrum block each

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetConfig, NormConstants};
use crate::sho::{read_block, write_block, RawSpectrum};

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub norm: Option<NormConstants>,
    pub n_samples: usize,
    pub centers_per_side: usize,
    pub corrupted_fraction: f64,
}

/// Writes a little-endian f64 block next to a JSON shape header:
/// `<base>.f64` and `<base>.shape.json`.
pub fn write_f64_block(base: &Path, shape: &[usize], data: &[f64]) -> Result<(), DataError> {
    let expect: usize = shape.iter().product();
    if expect != data.len() {
        return Err(DataError::Malformed(format!(
            "shape {shape:?} does not match {} values",
            data.len()
        )));
    }
    std::fs::write(
        base.with_extension("shape.json"),
        serde_json::json!({ "shape": shape, "dtype": "f64le" }).to_string(),
    )?;
    let file = std::fs::File::create(base.with_extension("f64"))?;
    let mut w = BufWriter::new(file);
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a block written by [`write_f64_block`].
pub fn read_f64_block(base: &Path) -> Result<(Vec<usize>, Vec<f64>), DataError> {
    let header: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(base.with_extension("shape.json"))?,
    )
    .map_err(|e| DataError::Malformed(e.to_string()))?;
    let shape: Vec<usize> = header["shape"]
        .as_array()
        .ok_or_else(|| DataError::Malformed("missing shape".into()))?
        .iter()
        .map(|v| v.as_u64().map(|x| x as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| DataError::Malformed("bad shape entry".into()))?;
    let bytes = std::fs::read(base.with_extension("f64"))?;
    if bytes.len() != shape.iter().product::<usize>() * 8 {
        return Err(DataError::Malformed(format!(
            "block holds {} bytes, shape wants {}",
            bytes.len(),
            shape.iter().product::<usize>() * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

/// Persists the dataset artifacts.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        config: ds.config.clone(),
        norm: ds.norm,
        n_samples: ds.n_samples(),
        centers_per_side: ds.centers_per_side(),
        corrupted_fraction: ds.corrupted_fraction(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;

    let p2 = ds.config.patch_size * ds.config.patch_size;
    let patches: Vec<f64> = ds.samples.iter().flat_map(|s| s.patch.clone()).collect();
    write_f64_block(&dir.join("patches"), &[ds.n_samples(), p2], &patches)?;
    let loops: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| s.loop_values.clone())
        .collect();
    write_f64_block(&dir.join("loops"), &[ds.n_samples(), ds.config.loop_len], &loops)?;
    let loops_clean: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| s.loop_clean.clone())
        .collect();
    write_f64_block(
        &dir.join("loops_clean"),
        &[ds.n_samples(), ds.config.loop_len],
        &loops_clean,
    )?;

    let flags = std::fs::File::create(dir.join("flags.csv"))?;
    let mut w = BufWriter::new(flags);
    writeln!(w, "id,row,col,corrupted")?;
    for s in &ds.samples {
        writeln!(w, "{},{},{},{}", s.id, s.row, s.col, u8::from(s.corrupted))?;
    }
    w.flush()?;

    let spectra = std::fs::File::create(dir.join("spectra.bin"))?;
    let mut w = BufWriter::new(spectra);
    w.write_all(&(ds.n_samples() as u32).to_le_bytes())?;
    for s in &ds.samples {
        write_block(&s.raw, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the raw spectra written by [`save_dataset`].
pub fn read_spectra(path: &Path) -> Result<Vec<RawSpectrum>, DataError> {
    let mut file = std::fs::File::open(path)?;
    let mut head = [0u8; 4];
    file.read_exact(&mut head)?;
    let n = u32::from_le_bytes(head) as usize;
    (0..n)
        .map(|_| read_block(&mut file).map_err(DataError::from))
        .collect()
}
