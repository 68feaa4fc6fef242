//! Levenberg-Marquardt fitting of the complex SHO model.
//!
//! The residual stacks real and imaginary channels so amplitude and phase are
//! fit jointly. Damping uses the Marquardt diagonal scaling with lambda
//! starting at 1e-3, multiplied by 10 on a rejected step and divided by 10 on
//! an accepted one; iteration stops when the relative cost change drops below
//! 1e-10 or after 200 iterations, whichever comes first.

use num_complex::Complex64;

use super::{r_squared, BiasSweep, FrequencyGrid, ShoError, ShoParams};

pub const DEFAULT_MAX_ITER: usize = 200;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 10.0;
const LAMBDA_MAX: f64 = 1e14;
const REL_COST_TOL: f64 = 1e-10;
const FALLBACK_Q_INIT: f64 = 50.0;

/// Box constraints for the fit; phase is periodic and wrapped rather than
/// clamped.
#[derive(Debug, Clone, Copy)]
pub struct FitBounds {
    pub amplitude: (f64, f64),
    pub resonance: (f64, f64),
    pub quality_factor: (f64, f64),
}

impl FitBounds {
    pub fn new(
        amplitude: (f64, f64),
        resonance: (f64, f64),
        quality_factor: (f64, f64),
    ) -> Result<Self, ShoError> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi > lo;
        if ok(amplitude) && ok(resonance) && ok(quality_factor) {
            Ok(Self {
                amplitude,
                resonance,
                quality_factor,
            })
        } else {
            Err(ShoError::EmptyBounds)
        }
    }

    /// Default physically motivated bounds: amplitude up to ten times the
    /// response peak, resonance inside the measured band extended by half its
    /// span on each side, Q in [1, 1e4].
    pub fn from_sweep(sweep: &BiasSweep, grid: &FrequencyGrid) -> Result<Self, ShoError> {
        let peak = sweep.response.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak <= 0.0 || !peak.is_finite() {
            return Err(ShoError::DegenerateSignal);
        }
        let freqs = grid.freqs();
        let (w_lo, w_hi) = (freqs[0], freqs[freqs.len() - 1]);
        let half_span = 0.5 * (w_hi - w_lo);
        let res_lo = (w_lo - half_span).max(w_lo * 1e-3);
        Self::new(
            (peak * 1e-12, 10.0 * peak),
            (res_lo, w_hi + half_span),
            (1.0, 1e4),
        )
    }

    fn clamp(&self, p: &mut ShoParams) {
        p.amplitude = p.amplitude.clamp(self.amplitude.0, self.amplitude.1);
        p.resonance = p.resonance.clamp(self.resonance.0, self.resonance.1);
        p.quality_factor = p
            .quality_factor
            .clamp(self.quality_factor.0, self.quality_factor.1);
        p.phase = wrap_phase(p.phase);
    }
}

/// A converged (or best-so-far) SHO fit with its R².
#[derive(Debug, Clone, Copy)]
pub struct ShoFit {
    pub params: ShoParams,
    pub r2: f64,
    pub converged: bool,
}

fn wrap_phase(phi: f64) -> f64 {
    let mut p = (phi + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI);
    p -= std::f64::consts::PI;
    if p < -std::f64::consts::PI {
        p = -std::f64::consts::PI;
    }
    p
}

/// Heuristic initial guess: resonance at the magnitude peak, Q from the
/// half-power width (fallback 50), amplitude from peak/Q, phase at the peak.
fn auto_init(sweep: &BiasSweep, grid: &FrequencyGrid, bounds: &FitBounds) -> ShoParams {
    let mags: Vec<f64> = sweep.response.iter().map(|c| c.norm()).collect();
    let (peak_idx, peak) = mags
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let freqs = grid.freqs();
    let w0 = freqs[peak_idx];

    let level = peak / std::f64::consts::SQRT_2;
    let mut left = None;
    for i in (0..peak_idx).rev() {
        if mags[i] <= level {
            let frac = (level - mags[i]) / (mags[i + 1] - mags[i]).max(f64::MIN_POSITIVE);
            left = Some(freqs[i] + frac * (freqs[i + 1] - freqs[i]));
            break;
        }
    }
    let mut right = None;
    for i in peak_idx + 1..mags.len() {
        if mags[i] <= level {
            let frac = (mags[i - 1] - level) / (mags[i - 1] - mags[i]).max(f64::MIN_POSITIVE);
            right = Some(freqs[i - 1] + frac * (freqs[i] - freqs[i - 1]));
            break;
        }
    }
    let q = match (left, right) {
        (Some(l), Some(r)) if r > l => w0 / (r - l),
        _ => FALLBACK_Q_INIT,
    };

    let mut init = ShoParams {
        amplitude: peak / q,
        resonance: w0,
        quality_factor: q,
        phase: sweep.response[peak_idx].arg(),
    };
    bounds.clamp(&mut init);
    init
}

/// Model values and the analytic Jacobian d H / d (A, w0, Q, phi) at each
/// grid frequency.
fn model_and_jacobian(
    params: &ShoParams,
    freqs: &[f64],
    model: &mut Vec<Complex64>,
    jac: &mut Vec<[Complex64; 4]>,
) {
    model.clear();
    jac.clear();
    let (a, w0, q, phi) = (
        params.amplitude,
        params.resonance,
        params.quality_factor,
        params.phase,
    );
    let phase = Complex64::from_polar(1.0, phi);
    for &w in freqs {
        let den = Complex64::new(w * w - w0 * w0, -w * w0 / q);
        let d = w0 * w0 / den;
        let h = a * phase * d;
        // dH/dA = H/A, dH/dphi = iH
        let dh_da = phase * d;
        let dh_dphi = Complex64::new(0.0, 1.0) * h;
        // dD/dw0 = 2 w0 / den - w0^2 (dden/dw0) / den^2, dden/dw0 = -2 w0 - i w / q
        let dden_dw0 = Complex64::new(-2.0 * w0, -w / q);
        let dd_dw0 = 2.0 * w0 / den - w0 * w0 * dden_dw0 / (den * den);
        let dh_dw0 = a * phase * dd_dw0;
        // dden/dQ = i w w0 / Q^2
        let dden_dq = Complex64::new(0.0, w * w0 / (q * q));
        let dd_dq = -w0 * w0 * dden_dq / (den * den);
        let dh_dq = a * phase * dd_dq;
        model.push(h);
        jac.push([dh_da, dh_dw0, dh_dq, dh_dphi]);
    }
}

fn cost(observed: &[Complex64], model: &[Complex64]) -> f64 {
    observed
        .iter()
        .zip(model)
        .map(|(o, m)| (o - m).norm_sqr())
        .sum()
}

/// Solves a 4x4 linear system by Gaussian elimination with partial pivoting.
/// Returns `None` when the pivot collapses.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let mut piv = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for col in (0..4).rev() {
        let mut s = b[col];
        for k in col + 1..4 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Levenberg-Marquardt fit of one sweep. Returns the best parameters found
/// with `converged = false` when the iteration budget runs out first.
pub fn fit_sho(
    sweep: &BiasSweep,
    grid: &FrequencyGrid,
    bounds: &FitBounds,
    init: Option<ShoParams>,
) -> Result<ShoFit, ShoError> {
    if sweep.response.len() != grid.len() {
        return Err(ShoError::SweepLengthMismatch {
            got: sweep.response.len(),
            expected: grid.len(),
        });
    }
    if sweep
        .response
        .iter()
        .any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(ShoError::NonFiniteResponse);
    }
    // reject constant sweeps up front so r_squared cannot be gamed
    {
        let probe = vec![Complex64::new(0.0, 0.0); sweep.response.len()];
        if matches!(
            r_squared(&sweep.response, &probe),
            Err(ShoError::DegenerateSignal)
        ) {
            return Err(ShoError::DegenerateSignal);
        }
    }

    let mut params = match init {
        Some(mut p) => {
            bounds.clamp(&mut p);
            p
        }
        None => auto_init(sweep, grid, bounds),
    };

    let freqs = grid.freqs();
    let mut model = Vec::with_capacity(freqs.len());
    let mut jac = Vec::with_capacity(freqs.len());
    model_and_jacobian(&params, freqs, &mut model, &mut jac);
    let mut current_cost = cost(&sweep.response, &model);

    let mut lambda = LAMBDA_INIT;
    let mut converged = false;

    for _ in 0..DEFAULT_MAX_ITER {
        // normal equations from the stacked real/imag residual
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (i, h) in model.iter().enumerate() {
            let r = sweep.response[i] - h;
            let g = &jac[i];
            for j in 0..4 {
                jtr[j] += g[j].re * r.re + g[j].im * r.im;
                for k in j..4 {
                    jtj[j][k] += g[j].re * g[k].re + g[j].im * g[k].im;
                }
            }
        }
        for j in 0..4 {
            for k in 0..j {
                jtj[j][k] = jtj[k][j];
            }
        }

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = jtj;
            for (j, row) in damped.iter_mut().enumerate() {
                row[j] += lambda * jtj[j][j].max(1e-300);
            }
            if let Some(step) = solve4(damped, jtr) {
                let mut trial = ShoParams {
                    amplitude: params.amplitude + step[0],
                    resonance: params.resonance + step[1],
                    quality_factor: params.quality_factor + step[2],
                    phase: params.phase + step[3],
                };
                bounds.clamp(&mut trial);
                model_and_jacobian(&trial, freqs, &mut model, &mut jac);
                let trial_cost = cost(&sweep.response, &model);
                if trial_cost.is_finite() && trial_cost < current_cost {
                    let rel_change = (current_cost - trial_cost) / current_cost.max(1e-300);
                    params = trial;
                    current_cost = trial_cost;
                    lambda = (lambda / LAMBDA_DOWN).max(1e-12);
                    accepted = true;
                    if rel_change < REL_COST_TOL {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= LAMBDA_UP;
        }
        if !accepted {
            // no downhill step exists at any damping: a (local) minimum
            converged = true;
        }
        if converged {
            break;
        }
    }

    // model currently holds the last trial; recompute at the accepted params
    model_and_jacobian(&params, freqs, &mut model, &mut jac);
    let r2 = r_squared(&sweep.response, &model)?;
    Ok(ShoFit {
        params,
        r2,
        converged,
    })
}
