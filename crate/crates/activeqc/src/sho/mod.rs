//! Complex simple-harmonic-oscillator model for band-excitation sweeps.
//!
//! Each measurement location carries one frequency sweep of the complex
//! cantilever response per DC bias point. Every sweep is fit independently
//! with the four-parameter SHO lineshape; the coefficient of determination of
//! each fit, averaged over bias points, is the spectral quality score used by
//! the quality gate. The bias-ordered mixed response `A cos(phi)` of the fits
//! forms the hysteresis loop that the structure-property models consume.

mod fit;
mod io;

pub use fit::{fit_sho, FitBounds, ShoFit, DEFAULT_MAX_ITER};
pub use io::{read_block, read_csv, write_block, write_csv};

use num_complex::Complex64;
use thiserror::Error;

/// Default number of channels in a resampled hysteresis loop.
pub const DEFAULT_LOOP_LEN: usize = 256;

/// Relative tolerance below which the total sum of squares counts as zero.
const DEGENERATE_REL_TOL: f64 = 1e-24;

#[derive(Debug, Error)]
pub enum ShoError {
    #[error("frequency grid needs at least 6 strictly increasing positive entries")]
    InvalidGrid,
    #[error("sweep has {got} response values, grid has {expected}")]
    SweepLengthMismatch { got: usize, expected: usize },
    #[error("sweep contains non-finite response values")]
    NonFiniteResponse,
    #[error("spectrum needs at least 2 bias sweeps, got {0}")]
    TooFewSweeps(usize),
    #[error("bias values do not close a loop: first {first}, last {last}")]
    OpenBiasLoop { first: f64, last: f64 },
    #[error("signal variance is zero; R-squared undefined")]
    DegenerateSignal,
    #[error("series lengths differ or are below 2")]
    BadSeries,
    #[error("only {valid} valid fits; at least 2 needed to assemble a loop")]
    InsufficientFits { valid: usize },
    #[error("fit bounds are empty or inverted")]
    EmptyBounds,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed spectrum data: {0}")]
    Malformed(String),
}

/// Strictly increasing, positive angular frequencies (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    freqs: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(freqs: Vec<f64>) -> Result<Self, ShoError> {
        if freqs.len() < 6 || freqs[0] <= 0.0 || !freqs[0].is_finite() {
            return Err(ShoError::InvalidGrid);
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(ShoError::InvalidGrid);
        }
        Ok(Self { freqs })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// The four SHO parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShoParams {
    /// Drive amplitude A (response units, > 0).
    pub amplitude: f64,
    /// Resonance frequency omega_0 (rad/s).
    pub resonance: f64,
    /// Quality factor Q (> 0).
    pub quality_factor: f64,
    /// Phase offset phi (rad, in [-pi, pi]).
    pub phase: f64,
}

/// One frequency sweep at a fixed DC bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSweep {
    pub dc_bias: f64,
    pub response: Vec<Complex64>,
}

/// A location's complete measurement: one sweep per DC bias point on a
/// closed bias loop, all sharing one frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpectrum {
    sweeps: Vec<BiasSweep>,
    grid: FrequencyGrid,
}

/// Tolerance for the closed-bias-loop invariant, relative to the bias span.
const BIAS_CLOSURE_REL_TOL: f64 = 1e-6;

impl RawSpectrum {
    pub fn new(sweeps: Vec<BiasSweep>, grid: FrequencyGrid) -> Result<Self, ShoError> {
        if sweeps.len() < 2 {
            return Err(ShoError::TooFewSweeps(sweeps.len()));
        }
        for sweep in &sweeps {
            if sweep.response.len() != grid.len() {
                return Err(ShoError::SweepLengthMismatch {
                    got: sweep.response.len(),
                    expected: grid.len(),
                });
            }
            if !sweep.dc_bias.is_finite()
                || sweep
                    .response
                    .iter()
                    .any(|c| !c.re.is_finite() || !c.im.is_finite())
            {
                return Err(ShoError::NonFiniteResponse);
            }
        }
        let first = sweeps.first().unwrap().dc_bias;
        let last = sweeps.last().unwrap().dc_bias;
        let span = sweeps
            .iter()
            .map(|s| s.dc_bias.abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        if (first - last).abs() > BIAS_CLOSURE_REL_TOL * span {
            return Err(ShoError::OpenBiasLoop { first, last });
        }
        Ok(Self { sweeps, grid })
    }

    pub fn sweeps(&self) -> &[BiasSweep] {
        &self.sweeps
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn n_dc(&self) -> usize {
        self.sweeps.len()
    }

    /// Mutable access for controlled in-place corruption by the benchmark
    /// generator. Invariants on lengths are preserved by the callers.
    pub(crate) fn sweeps_mut(&mut self) -> &mut [BiasSweep] {
        &mut self.sweeps
    }

    /// Root-mean-square magnitude of the response over all sweeps.
    pub fn response_rms(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for sweep in &self.sweeps {
            for c in &sweep.response {
                acc += c.norm_sqr();
                n += 1;
            }
        }
        (acc / n as f64).sqrt()
    }
}

/// Per-bias R² values and their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityScore {
    pub per_bias_r2: Vec<f64>,
    pub q: f64,
}

/// Complex SHO response `A e^{i phi} w0^2 / (w^2 - i w w0 / Q - w0^2)`.
pub fn sho_response(params: &ShoParams, omega: f64) -> Complex64 {
    let w0 = params.resonance;
    let den = Complex64::new(
        omega * omega - w0 * w0,
        -omega * w0 / params.quality_factor,
    );
    let amp = Complex64::from_polar(params.amplitude, params.phase);
    amp * w0 * w0 / den
}

/// Coefficient of determination over the stacked real and imaginary
/// channels, with per-channel means in the total sum of squares.
pub fn r_squared(observed: &[Complex64], fitted: &[Complex64]) -> Result<f64, ShoError> {
    if observed.len() != fitted.len() || observed.len() < 2 {
        return Err(ShoError::BadSeries);
    }
    let n = observed.len() as f64;
    let mean_re = observed.iter().map(|c| c.re).sum::<f64>() / n;
    let mean_im = observed.iter().map(|c| c.im).sum::<f64>() / n;

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut scale = 0.0;
    for (o, f) in observed.iter().zip(fitted) {
        ss_res += (o.re - f.re).powi(2) + (o.im - f.im).powi(2);
        ss_tot += (o.re - mean_re).powi(2) + (o.im - mean_im).powi(2);
        scale += o.norm_sqr();
    }
    if ss_tot <= DEGENERATE_REL_TOL * scale || ss_tot == 0.0 {
        return Err(ShoError::DegenerateSignal);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Fits every sweep of a spectrum independently with auto-initialization and
/// default bounds. Degenerate sweeps yield `None`.
pub fn fit_all_sweeps(spectrum: &RawSpectrum) -> Vec<Option<ShoFit>> {
    spectrum
        .sweeps()
        .iter()
        .map(|sweep| {
            let bounds = FitBounds::from_sweep(sweep, spectrum.grid());
            match bounds {
                Ok(b) => fit_sho(sweep, spectrum.grid(), &b, None).ok(),
                Err(_) => None,
            }
        })
        .collect()
}

/// Mean-R² quality of a spectrum. Degenerate sweeps contribute R² = 0.
pub fn quality_score(spectrum: &RawSpectrum) -> QualityScore {
    quality_from_fits(&fit_all_sweeps(spectrum))
}

fn quality_from_fits(fits: &[Option<ShoFit>]) -> QualityScore {
    let per_bias_r2: Vec<f64> = fits
        .iter()
        .map(|f| f.as_ref().map_or(0.0, |fit| fit.r2))
        .collect();
    let q = per_bias_r2.iter().sum::<f64>() / per_bias_r2.len() as f64;
    QualityScore { per_bias_r2, q }
}

/// Assembles the bias-ordered mixed response `A cos(phi)` of the per-sweep
/// fits and linearly resamples it to `len` channels.
pub fn loop_from_fits(spectrum: &RawSpectrum, len: usize) -> Result<Vec<f64>, ShoError> {
    loop_from_fit_results(&fit_all_sweeps(spectrum), len)
}

fn loop_from_fit_results(fits: &[Option<ShoFit>], len: usize) -> Result<Vec<f64>, ShoError> {
    let mixed: Vec<f64> = fits
        .iter()
        .filter_map(|f| {
            f.as_ref()
                .map(|fit| fit.params.amplitude * fit.params.phase.cos())
        })
        .collect();
    if mixed.len() < 2 {
        return Err(ShoError::InsufficientFits { valid: mixed.len() });
    }
    Ok(resample_linear(&mixed, len))
}

/// One shared fit pass producing both the loop and the quality score.
pub fn analyze_spectrum(
    spectrum: &RawSpectrum,
    loop_len: usize,
) -> Result<(Vec<f64>, QualityScore), ShoError> {
    let fits = fit_all_sweeps(spectrum);
    let quality = quality_from_fits(&fits);
    let loop_values = loop_from_fit_results(&fits, loop_len)?;
    Ok((loop_values, quality))
}

/// Piecewise-linear resampling of `values` onto `len` evenly spaced points
/// covering the full index range.
fn resample_linear(values: &[f64], len: usize) -> Vec<f64> {
    let n = values.len();
    if len == 1 {
        return vec![values[0]];
    }
    let scale = (n - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let t = i as f64 * scale;
            let lo = (t.floor() as usize).min(n - 2);
            let frac = t - lo as f64;
            values[lo] * (1.0 - frac) + values[lo + 1] * frac
        })
        .collect()
}
