//! Spatially localized spectral corruption.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::rng::stream;
use crate::sho::analyze_spectrum;

const NOISE_TAG: u64 = 0x6E6F6973;

/// Rectangle in normalized patch-center coordinates: a sample is inside when
/// its row fraction is below `row_max` and its column fraction is at least
/// `col_min` (the top-right corner of the map).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRegion {
    pub row_max: f64,
    pub col_min: f64,
}

/// Corruption settings. The defaults put just under 30% of the default
/// benchmark's patch centers inside the region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub region: NoiseRegion,
    /// Per-component noise deviation as a multiple of the sample's clean
    /// response RMS.
    pub sigma_scale: f64,
    /// Intended corrupted fraction of the dataset.
    pub target_fraction: f64,
    /// Allowed absolute deviation of the realized fraction.
    pub tolerance: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            region: NoiseRegion {
                row_max: 0.55,
                col_min: 0.45,
            },
            sigma_scale: 2.0,
            target_fraction: 0.30,
            tolerance: 0.02,
        }
    }
}

/// Corrupts the raw spectra of every sample inside the noise region and
/// re-derives their loops and quality scores. Patches are untouched. Errors
/// when the region covers a fraction of centers outside the configured
/// tolerance.
pub fn inject_noise(ds: &mut Dataset, cfg: &NoiseConfig, seed: u64) -> Result<(), DataError> {
    let flagged: Vec<bool> = (0..ds.n_samples())
        .map(|id| {
            let c = ds.coords(id);
            c[0] < cfg.region.row_max && c[1] >= cfg.region.col_min
        })
        .collect();
    let got = flagged.iter().filter(|&&f| f).count() as f64 / flagged.len() as f64;
    if (got - cfg.target_fraction).abs() > cfg.tolerance {
        return Err(DataError::RegionConfiguration {
            got,
            want: cfg.target_fraction,
            tol: cfg.tolerance,
        });
    }

    let loop_len = ds.config.loop_len;
    let sigma_scale = cfg.sigma_scale;
    ds.samples
        .par_iter_mut()
        .zip(flagged.par_iter())
        .try_for_each(|(sample, &hit)| -> Result<(), DataError> {
            if !hit {
                return Ok(());
            }
            let mut rng = stream(seed, &[NOISE_TAG, sample.id as u64]);
            super::corrupt_spectrum(&mut sample.raw, sigma_scale, &mut rng);
            let (loop_values, quality) = analyze_spectrum(&sample.raw, loop_len)?;
            sample.loop_values = loop_values;
            sample.quality = quality;
            sample.corrupted = true;
            Ok(())
        })?;
    Ok(())
}
