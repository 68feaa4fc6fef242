//! Synthetic paired image/spectrum benchmark.
//!
//! A seeded blob field stands in for the pre-acquired structural map. Every
//! 16x16 patch (stride 1) becomes one sample: the patch itself, a raw
//! spectrum synthesized at the patch center from the local mean field value,
//! and the hysteresis loop fitted from that spectrum. Spatially localized
//! noise corrupts the spectra of a top-right region covering about 30% of
//! patch centers; patches stay clean. The virtual instrument serves stored
//! records through the same interface a hardware backend would implement.

mod io;
mod noise;
mod synth;

pub use io::{read_f64_block, read_spectra, save_dataset, write_f64_block, DatasetManifest};
pub use noise::{inject_noise, NoiseConfig, NoiseRegion};
pub use synth::{corrupt_spectrum, synth_raw_spectrum, SpectrumConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, stream};
use crate::sho::{analyze_spectrum, QualityScore, RawSpectrum, ShoError};

const SYNTH_TAG: u64 = 0x73796E74;
const SPLIT_TAG: u64 = 0x73706C74;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("grid size {grid} must be at least the patch size {patch}")]
    GridTooSmall { grid: usize, patch: usize },
    #[error("corrupted fraction {got:.4} outside {want:.2} +/- {tol:.2}")]
    RegionConfiguration { got: f64, want: f64, tol: f64 },
    #[error("{channel} values are globally constant; normalization undefined")]
    DegenerateNormalization { channel: &'static str },
    #[error("cannot split {0} samples three ways")]
    SplitTooSmall(usize),
    #[error("sample {0} does not exist")]
    UnknownSample(usize),
    #[error("sample {0} was already measured in this trial")]
    AlreadyMeasured(usize),
    #[error("spectral analysis failed: {0}")]
    Sho(#[from] ShoError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset artifact: {0}")]
    Malformed(String),
}

/// Benchmark geometry and generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Field side length G.
    pub grid_size: usize,
    /// Patch side length p.
    pub patch_size: usize,
    /// Hysteresis loop channels L.
    pub loop_len: usize,
    /// Number of Gaussian blobs composing the field.
    pub n_blobs: usize,
    /// Generator seed.
    pub seed: u64,
    pub spectrum: SpectrumConfig,
    pub noise: NoiseConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            grid_size: 50,
            patch_size: 16,
            loop_len: 256,
            n_blobs: 8,
            seed: 0,
            spectrum: SpectrumConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// Patch centers per side: G - p + 1.
    pub fn centers_per_side(&self) -> usize {
        self.grid_size - self.patch_size + 1
    }
}

/// Latent material state on the G x G grid, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthField {
    pub size: usize,
    values: Vec<f64>,
}

impl GroundTruthField {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sum of seeded Gaussian blobs, min-max rescaled to [0, 1].
pub fn generate_ground_truth(g: usize, n_blobs: usize, seed: u64) -> GroundTruthField {
    use rand::Rng;
    let mut rng = stream(seed, &[0x6669656C]);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let cx = rng.random_range(0.0..g as f64);
            let cy = rng.random_range(0.0..g as f64);
            let sigma = rng.random_range(g as f64 / 6.0..g as f64 / 3.0);
            let amp = rng.random_range(0.4..1.0);
            (cx, cy, sigma, amp)
        })
        .collect();
    let mut values = vec![0.0; g * g];
    for row in 0..g {
        for col in 0..g {
            let mut acc = 0.0;
            for &(cx, cy, sigma, amp) in &blobs {
                let dr = row as f64 - cx;
                let dc = col as f64 - cy;
                acc += amp * (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
            }
            values[row * g + col] = acc;
        }
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    for v in &mut values {
        *v = (*v - lo) / span;
    }
    GroundTruthField { size: g, values }
}

/// One paired sample: the acquisition unit.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: usize,
    /// Patch indices (top-left corner) on the centers grid.
    pub row: usize,
    pub col: usize,
    /// p x p patch values, row-major.
    pub patch: Vec<f64>,
    /// Working loop: derived from the possibly corrupted raw spectrum.
    pub loop_values: Vec<f64>,
    /// Clean-truth loop, sharing the working normalization constants.
    pub loop_clean: Vec<f64>,
    /// Working raw spectrum (corrupted where flagged).
    pub raw: RawSpectrum,
    /// Benchmark-only ground truth; hidden from strategies.
    pub corrupted: bool,
    /// Mean-R² quality of the working raw spectrum.
    pub quality: QualityScore,
}

/// Normalization constants recorded for inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub patch_min: f64,
    pub patch_max: f64,
    pub loop_min: f64,
    pub loop_max: f64,
}

impl NormConstants {
    pub fn denormalize_loop(&self, v: f64) -> f64 {
        v * (self.loop_max - self.loop_min) + self.loop_min
    }

    pub fn denormalize_patch(&self, v: f64) -> f64 {
        v * (self.patch_max - self.patch_min) + self.patch_min
    }
}

/// The generated benchmark.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub field: GroundTruthField,
    pub samples: Vec<SampleRecord>,
    pub norm: Option<NormConstants>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn centers_per_side(&self) -> usize {
        self.config.centers_per_side()
    }

    /// Sample coordinate on the unit square: patch indices over the centers
    /// grid extent. This is the GP input and the noise-region coordinate.
    pub fn coords(&self, id: usize) -> [f64; 2] {
        let n = self.centers_per_side();
        let denom = (n - 1).max(1) as f64;
        let s = &self.samples[id];
        [s.row as f64 / denom, s.col as f64 / denom]
    }

    pub fn corrupted_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.corrupted).count() as f64 / self.samples.len() as f64
    }
}

/// Extracts every stride-1 patch with its synthesized spectrum and fitted
/// loop. The spectrum at a patch center is driven by the patch mean.
pub fn extract_dataset(field: &GroundTruthField, config: &DatasetConfig) -> Result<Dataset, DataError> {
    let g = field.size;
    let p = config.patch_size;
    if g < p {
        return Err(DataError::GridTooSmall { grid: g, patch: p });
    }
    let n = config.centers_per_side();
    let ids: Vec<usize> = (0..n * n).collect();
    let samples: Result<Vec<SampleRecord>, DataError> = ids
        .par_iter()
        .map(|&id| {
            let row = id / n;
            let col = id % n;
            let mut patch = Vec::with_capacity(p * p);
            for r in 0..p {
                for c in 0..p {
                    patch.push(field.get(row + r, col + c));
                }
            }
            let m = patch.iter().sum::<f64>() / patch.len() as f64;
            let raw = synth_raw_spectrum(
                &config.spectrum,
                m,
                derive_seed(config.seed, &[SYNTH_TAG, id as u64]),
            );
            let (loop_values, quality) = analyze_spectrum(&raw, config.loop_len)?;
            Ok(SampleRecord {
                id,
                row,
                col,
                patch,
                loop_clean: loop_values.clone(),
                loop_values,
                raw,
                corrupted: false,
                quality,
            })
        })
        .collect();
    Ok(Dataset {
        config: config.clone(),
        field: field.clone(),
        samples: samples?,
        norm: None,
    })
}

/// Global min-max normalization: patches and loops each map to [0, 1] with
/// their own constants; clean loops share the working-loop constants so
/// error metrics stay comparable.
pub fn normalize_dataset(ds: &mut Dataset) -> Result<NormConstants, DataError> {
    fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
        values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    }
    let (patch_min, patch_max) = span(ds.samples.iter().flat_map(|s| s.patch.iter().cloned()));
    let (loop_min, loop_max) = span(
        ds.samples
            .iter()
            .flat_map(|s| s.loop_values.iter().cloned()),
    );
    if !(patch_max > patch_min) {
        return Err(DataError::DegenerateNormalization { channel: "patch" });
    }
    if !(loop_max > loop_min) {
        return Err(DataError::DegenerateNormalization { channel: "loop" });
    }
    let constants = NormConstants {
        patch_min,
        patch_max,
        loop_min,
        loop_max,
    };
    for s in &mut ds.samples {
        for v in &mut s.patch {
            *v = (*v - patch_min) / (patch_max - patch_min);
        }
        for v in &mut s.loop_values {
            *v = (*v - loop_min) / (loop_max - loop_min);
        }
        for v in &mut s.loop_clean {
            *v = (*v - loop_min) / (loop_max - loop_min);
        }
    }
    ds.norm = Some(constants);
    Ok(constants)
}

/// Disjoint id sets covering the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub pool_ids: Vec<usize>,
}

/// 1% / 9% / 90% split by seeded uniform shuffle; the seed set gets
/// `max(1, floor(0.01 n))` samples, validation `floor(0.09 n)`, the pool the
/// remainder. Each id list is sorted.
pub fn make_split(n: usize, seed: u64) -> Result<DatasetSplit, DataError> {
    use rand::seq::SliceRandom;
    if n < 3 {
        return Err(DataError::SplitTooSmall(n));
    }
    let n_seed = ((0.01 * n as f64).floor() as usize).max(1);
    let n_val = (0.09 * n as f64).floor() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, &[SPLIT_TAG]);
    ids.shuffle(&mut rng);
    let mut seed_ids: Vec<usize> = ids[..n_seed].to_vec();
    let mut val_ids: Vec<usize> = ids[n_seed..n_seed + n_val].to_vec();
    let mut pool_ids: Vec<usize> = ids[n_seed + n_val..].to_vec();
    seed_ids.sort_unstable();
    val_ids.sort_unstable();
    pool_ids.sort_unstable();
    Ok(DatasetSplit {
        seed_ids,
        val_ids,
        pool_ids,
    })
}

/// Full generation pipeline: field, extraction, noise injection,
/// normalization.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset, DataError> {
    let field = generate_ground_truth(config.grid_size, config.n_blobs, config.seed);
    let mut ds = extract_dataset(&field, config)?;
    inject_noise(&mut ds, &config.noise.clone(), config.seed)?;
    normalize_dataset(&mut ds)?;
    Ok(ds)
}

/// One measurement as served to the acquisition loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<'a> {
    pub patch: &'a [f64],
    pub loop_values: &'a [f64],
    pub raw: &'a RawSpectrum,
}

/// Software stand-in for the microscope: serves stored records, at most once
/// per location per trial. A hardware backend would implement the same
/// `measure` surface.
pub struct VirtualInstrument<'a> {
    dataset: &'a Dataset,
    measured: std::collections::HashSet<usize>,
}

impl<'a> VirtualInstrument<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self {
            dataset,
            measured: std::collections::HashSet::new(),
        }
    }

    /// Serves the record for `id`, failing on unknown or repeated ids.
    pub fn measure(&mut self, id: usize) -> Result<Measurement<'a>, DataError> {
        if id >= self.dataset.n_samples() {
            return Err(DataError::UnknownSample(id));
        }
        if !self.measured.insert(id) {
            return Err(DataError::AlreadyMeasured(id));
        }
        let s = &self.dataset.samples[id];
        Ok(Measurement {
            patch: &s.patch,
            loop_values: &s.loop_values,
            raw: &s.raw,
        })
    }

    pub fn is_measured(&self, id: usize) -> bool {
        self.measured.contains(&id)
    }

    pub fn measured_count(&self) -> usize {
        self.measured.len()
    }
}
