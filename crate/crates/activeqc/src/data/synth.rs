//! Synthetic raw-spectrum generation.
//!
//! Each location gets a closed triangular DC-bias loop; at every bias point
//! the complex SHO response is evaluated on the measurement band. The signed
//! low-frequency response follows a hysteretic tanh switching curve whose
//! coercive bias and saturation amplitude grow with the local mean field
//! value, which is what ties the image patches to the loops. A small
//! baseline complex noise floor keeps fits realistic.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::sho::{sho_response, BiasSweep, FrequencyGrid, RawSpectrum, ShoParams};

/// Physical knobs of the virtual measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    /// DC bias points per loop.
    pub n_dc: usize,
    /// Frequencies per sweep.
    pub n_freq: usize,
    /// Resonance frequency (rad/s), constant across the sample.
    pub omega0: f64,
    /// Half-width of the measured band as a fraction of `omega0`.
    pub band_half_width: f64,
    /// Cantilever quality factor.
    pub quality_factor: f64,
    /// Phase offset of the up-polarized state (rad).
    pub phase0: f64,
    /// Bias loop extremum (V).
    pub v_max: f64,
    /// Coercive bias at zero field value (V).
    pub coercive_base: f64,
    /// Coercive bias growth per unit field value (V).
    pub coercive_gain: f64,
    /// Non-switching background response added to every bias point.
    pub response_offset: f64,
    /// Saturation response at zero field value.
    pub saturation_base: f64,
    /// Saturation response growth per unit field value.
    pub saturation_gain: f64,
    /// Switching transition width (V).
    pub switching_width: f64,
    /// Additive amplitude floor keeping the SHO amplitude positive.
    pub amplitude_floor: f64,
    /// Baseline complex noise, per component, as a fraction of the clean
    /// response RMS.
    pub baseline_noise: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            n_dc: 64,
            n_freq: 32,
            omega0: 2.2e6,
            band_half_width: 0.35,
            quality_factor: 5.0,
            phase0: 0.25,
            v_max: 8.0,
            coercive_base: 1.0,
            coercive_gain: 1.5,
            response_offset: 1.5,
            saturation_base: 0.5,
            saturation_gain: 3.0,
            switching_width: 1.4,
            amplitude_floor: 0.05,
            baseline_noise: 5e-4,
        }
    }
}

impl SpectrumConfig {
    /// The shared measurement band.
    pub fn frequency_grid(&self) -> FrequencyGrid {
        let lo = self.omega0 * (1.0 - self.band_half_width);
        let hi = self.omega0 * (1.0 + self.band_half_width);
        let step = (hi - lo) / (self.n_freq - 1) as f64;
        FrequencyGrid::new((0..self.n_freq).map(|i| lo + step * i as f64).collect())
            .expect("band grid is valid")
    }

    /// Closed triangular bias waveform 0 -> +v_max -> -v_max -> 0.
    pub fn bias_waveform(&self) -> Vec<f64> {
        let n = self.n_dc;
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                let w = if t < 0.25 {
                    4.0 * t
                } else if t < 0.75 {
                    2.0 - 4.0 * t
                } else {
                    4.0 * t - 4.0
                };
                self.v_max * w
            })
            .collect()
    }

    /// Signed hysteretic response at `bias` on the ascending or descending
    /// branch, for local field value `m`: a non-switching background plus a
    /// tanh switching branch whose coercive bias and saturation grow with
    /// the field value.
    fn switching_response(&self, bias: f64, ascending: bool, m: f64) -> f64 {
        let coercive = self.coercive_base + self.coercive_gain * m;
        let saturation = self.saturation_base + self.saturation_gain * m;
        let shift = if ascending { -coercive } else { coercive };
        self.response_offset + saturation * ((bias + shift) / self.switching_width).tanh()
    }
}

/// Synthesizes the raw spectrum for a location with local mean field value
/// `m`, deterministically per `(config, m, seed)`.
pub fn synth_raw_spectrum(config: &SpectrumConfig, m: f64, seed: u64) -> RawSpectrum {
    let grid = config.frequency_grid();
    let biases = config.bias_waveform();

    let mut clean: Vec<Vec<Complex64>> = Vec::with_capacity(biases.len());
    let mut prev_bias = biases[0];
    for (k, &bias) in biases.iter().enumerate() {
        let ascending = if k == 0 { true } else { bias >= prev_bias };
        prev_bias = bias;
        let signed = config.switching_response(bias, ascending, m);
        let params = ShoParams {
            amplitude: signed.abs() + config.amplitude_floor,
            resonance: config.omega0,
            quality_factor: config.quality_factor,
            phase: if signed >= 0.0 {
                config.phase0
            } else {
                config.phase0 - std::f64::consts::PI
            },
        };
        clean.push(
            grid.freqs()
                .iter()
                .map(|&w| sho_response(&params, w))
                .collect(),
        );
    }

    let mut sweeps: Vec<BiasSweep> = biases
        .into_iter()
        .zip(clean.iter())
        .map(|(dc_bias, resp)| BiasSweep {
            dc_bias,
            response: resp.clone(),
        })
        .collect();

    if config.baseline_noise > 0.0 {
        let n_total = (sweeps.len() * grid.len()) as f64;
        let rms = (clean
            .iter()
            .flat_map(|r| r.iter())
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            / n_total)
            .sqrt();
        let mut rng = stream(seed, &[]);
        let normal = Normal::new(0.0, config.baseline_noise * rms).expect("positive sigma");
        for sweep in &mut sweeps {
            for c in &mut sweep.response {
                *c += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }

    RawSpectrum::new(sweeps, grid).expect("synthesized spectrum is well formed")
}

/// Adds complex Gaussian noise with per-component deviation
/// `sigma_scale * rms` to every sweep in place.
pub fn corrupt_spectrum<R: Rng>(spectrum: &mut RawSpectrum, sigma_scale: f64, rng: &mut R) {
    if sigma_scale <= 0.0 {
        return;
    }
    let sigma = sigma_scale * spectrum.response_rms();
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for sweep in spectrum.sweeps_mut() {
        for c in &mut sweep.response {
            *c += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sho::{analyze_spectrum, quality_score};

    #[test]
    fn bias_waveform_is_a_closed_triangle() {
        let cfg = SpectrumConfig::default();
        let biases = cfg.bias_waveform();
        assert_eq!(biases.len(), 64);
        assert_eq!(biases[0], 0.0);
        assert_eq!(*biases.last().unwrap(), 0.0);
        let max = biases.iter().cloned().fold(f64::MIN, f64::max);
        let min = biases.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - cfg.v_max).abs() < cfg.v_max * 0.05);
        assert!((min + cfg.v_max).abs() < cfg.v_max * 0.05);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = SpectrumConfig::default();
        let a = synth_raw_spectrum(&cfg, 0.5, 42);
        let b = synth_raw_spectrum(&cfg, 0.5, 42);
        assert_eq!(a, b);
        let c = synth_raw_spectrum(&cfg, 0.5, 43);
        assert_ne!(a, c);
    }

    // Generator self-check oracle: the structural link must change the loop
    // saturation by at least a factor of two between field extremes.
    #[test]
    fn field_value_controls_loop_saturation() {
        let cfg = SpectrumConfig::default();
        let lo = synth_raw_spectrum(&cfg, 0.0, 1);
        let hi = synth_raw_spectrum(&cfg, 1.0, 1);
        let (loop_lo, _) = analyze_spectrum(&lo, 64).unwrap();
        let (loop_hi, _) = analyze_spectrum(&hi, 64).unwrap();
        let sat = |l: &[f64]| l.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(
            sat(&loop_hi) >= 2.0 * sat(&loop_lo),
            "saturation ratio {} too small",
            sat(&loop_hi) / sat(&loop_lo)
        );
    }

    // Round-trip oracle: every clean synthetic sweep refits with r2 >= 0.99.
    #[test]
    fn clean_sweeps_refit_cleanly() {
        let cfg = SpectrumConfig::default();
        for (i, m) in [0.0, 0.3, 0.7, 1.0].iter().enumerate() {
            let spec = synth_raw_spectrum(&cfg, *m, 100 + i as u64);
            let q = quality_score(&spec);
            for (j, r2) in q.per_bias_r2.iter().enumerate() {
                assert!(*r2 >= 0.99, "m={m}: sweep {j} refits at r2 = {r2}");
            }
            assert!(q.q > 0.99, "m={m}: mean quality {}", q.q);
        }
    }

    #[test]
    fn noiseless_synthesis_scores_near_one() {
        let cfg = SpectrumConfig {
            baseline_noise: 0.0,
            ..SpectrumConfig::default()
        };
        let spec = synth_raw_spectrum(&cfg, 0.6, 7);
        let q = quality_score(&spec);
        assert!(q.q >= 0.999, "noiseless quality {}", q.q);
    }

    #[test]
    fn corruption_destroys_quality() {
        let cfg = SpectrumConfig::default();
        let mut spec = synth_raw_spectrum(&cfg, 0.5, 11);
        let clean_q = quality_score(&spec).q;
        let mut rng = stream(12, &[]);
        corrupt_spectrum(&mut spec, 2.0, &mut rng);
        let bad_q = quality_score(&spec).q;
        assert!(clean_q > 0.97);
        assert!(bad_q < 0.5, "corrupted quality {bad_q}");
    }

    #[test]
    fn zero_sigma_corruption_is_identity() {
        let cfg = SpectrumConfig::default();
        let mut spec = synth_raw_spectrum(&cfg, 0.5, 11);
        let before = spec.clone();
        let mut rng = stream(12, &[]);
        corrupt_spectrum(&mut spec, 0.0, &mut rng);
        assert_eq!(spec, before);
    }

    // Monotonicity in expectation: mean quality does not increase with the
    // corruption level.
    #[test]
    fn quality_decreases_with_noise_scale() {
        let cfg = SpectrumConfig::default();
        let scales = [0.0, 0.5, 1.0, 2.0];
        let mut means = Vec::new();
        for (si, &scale) in scales.iter().enumerate() {
            let mut acc = 0.0;
            let n_seeds = 50;
            for seed in 0..n_seeds {
                let mut spec = synth_raw_spectrum(&cfg, 0.5, 500 + seed);
                let mut rng = stream(900 + seed, &[si as u64]);
                corrupt_spectrum(&mut spec, scale, &mut rng);
                acc += quality_score(&spec).q;
            }
            means.push(acc / n_seeds as f64);
        }
        for w in means.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "mean quality increased across scales: {means:?}"
            );
        }
    }
}
