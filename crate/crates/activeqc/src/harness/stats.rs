//! Welch's t-test and the Student-t tail probability.
//!
//! The two-sided p-value is computed from the regularized incomplete beta
//! function evaluated by a continued fraction, so the crate does not depend
//! on an external statistics library.

use super::HarnessError;

/// Outcome of a two-sample Welch test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WelchResult {
    /// t statistic (positive when `a` has the larger mean).
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Set when both samples had zero variance; `t`/`df` follow conventions.
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn sem(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// ln Γ(z) for z > 0 (Lanczos approximation).
pub fn ln_gamma(z: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_9e-2,
        -0.539_523_938_495_3e-5,
    ];
    let mut sum = 1.000_000_000_190_015;
    for (i, &c) in COEF.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    (z + 0.5) * tmp.ln() - tmp + (2.506_628_274_631_000_5 * sum / z).ln()
}

/// Continued fraction for the incomplete beta function (Numerical Recipes).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability P(|T_df| >= |t|) of the Student-t distribution.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    reg_inc_beta(0.5 * df, 0.5, x)
}

/// Welch's two-sample t-test with Welch-Satterthwaite degrees of freedom.
///
/// Zero variance in both samples is degenerate: equal means give p = 1 by
/// convention, unequal means give the smallest positive p with the result
/// flagged.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, HarnessError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::WelchSampleTooSmall {
            n_a: a.len(),
            n_b: b.len(),
        });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));

    if va == 0.0 && vb == 0.0 {
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
                degenerate: true,
            }
        } else {
            WelchResult {
                t: if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                df: na + nb - 2.0,
                p: f64::MIN_POSITIVE,
                degenerate: true,
            }
        });
    }

    let sa = va / na;
    let sb = vb / nb;
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = student_t_two_sided(t, df).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(WelchResult {
        t,
        df,
        p,
        degenerate: false,
    })
}

/// Area under the ROC curve for `scores` against boolean labels, computed by
/// the rank statistic; ties share rank. Higher scores should indicate
/// `label == true`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // average rank of the tie group, 1-based
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_samples_give_p_one() {
        let a = [1.0, 2.0, 3.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn swapping_samples_negates_t() {
        let a = [2.1, 2.9, 3.2, 2.8];
        let b = [1.1, 1.9, 1.6];
        let r1 = welch_t_test(&a, &b).unwrap();
        let r2 = welch_t_test(&b, &a).unwrap();
        assert_relative_eq!(r1.t, -r2.t, max_relative = 1e-14);
        assert_relative_eq!(r1.p, r2.p, max_relative = 1e-14);
    }

    // Frozen from an independent high-precision evaluation of the Welch
    // statistic and the t CDF.
    #[test]
    fn fixed_case_matches_reference() {
        let a = [2.1, 2.9, 3.2, 2.8];
        let b = [1.1, 1.9, 1.6];
        let r = welch_t_test(&a, &b).unwrap();
        assert_relative_eq!(r.t, 3.691768683196468, max_relative = 1e-12);
        assert_relative_eq!(r.df, 4.795063199824359, max_relative = 1e-12);
        assert_relative_eq!(r.p, 0.015215698959776, max_relative = 1e-9);
    }

    #[test]
    fn equal_n_equal_variance_df() {
        // same sample variance on both sides -> df = 2n - 2 analytically
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [11.0, 12.0, 13.0, 14.0];
        let r = welch_t_test(&a, &b).unwrap();
        assert_relative_eq!(r.df, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_conventions() {
        let a = [5.0, 5.0, 5.0];
        let b = [5.0, 5.0];
        let r = welch_t_test(&a, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 1.0);
        let c = [6.0, 6.0];
        let r = welch_t_test(&a, &c).unwrap();
        assert!(r.degenerate);
        assert!(r.p > 0.0 && r.p < 1e-300);
    }

    #[test]
    fn too_small_sample_is_an_error() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn df_stays_within_classical_bounds() {
        let a = [0.3, 1.7, 2.2, 0.9, 1.1];
        let b = [4.0, 4.4, 3.1];
        let r = welch_t_test(&a, &b).unwrap();
        let lo = (a.len().min(b.len()) - 1) as f64;
        let hi = (a.len() + b.len() - 2) as f64;
        assert!(r.df >= lo && r.df <= hi, "df {} outside [{lo}, {hi}]", r.df);
    }

    #[test]
    fn auc_hand_case() {
        // scores 0.1,0.4,0.35,0.8 with labels f,f,t,t -> AUC = 0.75
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_relative_eq!(auc, 0.75, max_relative = 1e-12);
        // perfect separation
        let auc = roc_auc(&[0.0, 0.1, 0.9, 1.0], &[false, false, true, true]).unwrap();
        assert_relative_eq!(auc, 1.0, max_relative = 1e-12);
    }
}
