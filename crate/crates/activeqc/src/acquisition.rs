//! Acquisition scoring, the quality gate and batch selection.
//!
//! Candidates are scored by a weighted sum of three min-max normalized
//! components: the surrogate-predicted error, the latent-space distance to
//! the current training set, and the mean cosine similarity to the remaining
//! pool. The gate zeroes the combined score of any candidate whose
//! GP-predicted quality falls below the threshold; selection takes the top-k
//! positive gated scores with ties broken by the lowest candidate id.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("acquisition weights must be nonnegative and not all zero")]
    InvalidWeights,
    #[error("training latents required for distance scores")]
    EmptyTrainingSet,
    #[error("score vectors have mismatched lengths")]
    LengthMismatch,
    #[error("no candidate passed the gate with a positive score")]
    EmptyBatch,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("strategy requires {0}")]
    MissingContext(&'static str),
}

/// Eq.-style weights for error, distance and representativeness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl AcquisitionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, AcquisitionError> {
        if alpha < 0.0 || beta < 0.0 || gamma < 0.0 || alpha + beta + gamma == 0.0 {
            return Err(AcquisitionError::InvalidWeights);
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Published benchmark coefficients.
    pub fn benchmark_default() -> Self {
        Self {
            alpha: 0.90,
            beta: 0.05,
            gamma: 0.05,
        }
    }
}

/// How to reduce per-training-point distances to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Sum of Euclidean distances to every training latent.
    SumToTraining,
    /// Distance to the nearest training latent.
    NearestTraining,
}

/// The four acquisition strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Active,
    ActiveMt,
    ActiveQc,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Active => "active",
            Strategy::ActiveMt => "activemt",
            Strategy::ActiveQc => "activeqc",
        }
    }

    pub fn all() -> [Strategy; 4] {
        [
            Strategy::Random,
            Strategy::Active,
            Strategy::ActiveMt,
            Strategy::ActiveQc,
        ]
    }

    /// Whether the strategy trains a surrogate error model and scores
    /// candidates with the combined criterion.
    pub fn uses_components(&self) -> bool {
        !matches!(self, Strategy::Random)
    }

    /// Whether the strategy uses the multitask network.
    pub fn uses_multitask(&self) -> bool {
        matches!(self, Strategy::ActiveMt)
    }

    /// Whether the strategy fits the quality GP and applies the gate.
    pub fn uses_quality_gate(&self) -> bool {
        matches!(self, Strategy::ActiveQc)
    }
}

/// Min-max normalization to [0, 1]; a constant vector maps to all zeros.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Normalized distance component of each candidate with respect to the
/// training latents.
pub fn distance_scores(
    candidate_latents: &[Vec<f64>],
    training_latents: &[Vec<f64>],
    mode: DistanceMode,
) -> Result<Vec<f64>, AcquisitionError> {
    if training_latents.is_empty() {
        return Err(AcquisitionError::EmptyTrainingSet);
    }
    let raw: Vec<f64> = candidate_latents
        .iter()
        .map(|c| {
            let dists = training_latents.iter().map(|t| euclidean(c, t));
            match mode {
                DistanceMode::SumToTraining => dists.sum(),
                DistanceMode::NearestTraining => dists.fold(f64::INFINITY, f64::min),
            }
        })
        .collect();
    Ok(min_max_normalize(&raw))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Normalized representativeness: mean cosine similarity of each candidate
/// to all other candidates. A single candidate scores zero.
pub fn representativeness_scores(candidate_latents: &[Vec<f64>]) -> Vec<f64> {
    let n = candidate_latents.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let sum: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| cosine(&candidate_latents[i], &candidate_latents[j]))
                .sum();
            sum / (n - 1) as f64
        })
        .collect();
    min_max_normalize(&raw)
}

/// Normalized component triple for a candidate pool.
#[derive(Debug, Clone)]
pub struct AcquisitionComponents {
    pub predicted_error: Vec<f64>,
    pub distance: Vec<f64>,
    pub representativeness: Vec<f64>,
}

impl AcquisitionComponents {
    /// Normalizes raw predicted errors and pairs them with the already
    /// normalized distance and representativeness components.
    pub fn from_raw_errors(
        raw_errors: &[f64],
        distance: Vec<f64>,
        representativeness: Vec<f64>,
    ) -> Result<Self, AcquisitionError> {
        if raw_errors.len() != distance.len() || raw_errors.len() != representativeness.len() {
            return Err(AcquisitionError::LengthMismatch);
        }
        Ok(Self {
            predicted_error: min_max_normalize(raw_errors),
            distance,
            representativeness,
        })
    }
}

/// Weighted sum `alpha e + beta d + gamma r` per candidate.
pub fn combine_scores(components: &AcquisitionComponents, w: &AcquisitionWeights) -> Vec<f64> {
    components
        .predicted_error
        .iter()
        .zip(&components.distance)
        .zip(&components.representativeness)
        .map(|((&e, &d), &r)| w.alpha * e + w.beta * d + w.gamma * r)
        .collect()
}

/// Quality gate: a candidate keeps its score only when its predicted quality
/// reaches the threshold (boundary inclusive).
pub fn gate(scores: &[f64], q_hat: &[f64], tau: f64) -> Vec<f64> {
    scores
        .iter()
        .zip(q_hat)
        .map(|(&s, &q)| if q >= tau { s } else { 0.0 })
        .collect()
}

/// Picks the top-`k` candidates with positive gated scores; ties break
/// toward the lowest candidate id. Returns fewer than `k` ids when the
/// eligible set is short and `EmptyBatch` when it is empty.
pub fn select_batch(
    ids: &[usize],
    gated: &[f64],
    k: usize,
) -> Result<Vec<usize>, AcquisitionError> {
    if k == 0 {
        return Err(AcquisitionError::ZeroBatch);
    }
    if ids.len() != gated.len() {
        return Err(AcquisitionError::LengthMismatch);
    }
    let mut eligible: Vec<(usize, f64)> = ids
        .iter()
        .zip(gated)
        .filter(|(_, &a)| a > 0.0)
        .map(|(&id, &a)| (id, a))
        .collect();
    if eligible.is_empty() {
        return Err(AcquisitionError::EmptyBatch);
    }
    eligible.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(eligible.into_iter().take(k).map(|(id, _)| id).collect())
}

/// One candidate's scoring record for the acquisition log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub id: usize,
    pub e_hat: f64,
    pub d: f64,
    pub r: f64,
    pub s: f64,
    pub q_hat: Option<f64>,
    pub a: f64,
    pub selected: bool,
}

/// Everything a strategy may consult when scoring one step's candidates.
/// Fields that a strategy does not use may stay `None`.
pub struct StrategyInputs<'a> {
    pub candidate_ids: &'a [usize],
    pub raw_errors: Option<&'a [f64]>,
    pub candidate_latents: Option<&'a [Vec<f64>]>,
    pub training_latents: Option<&'a [Vec<f64>]>,
    pub q_hat: Option<&'a [f64]>,
    pub tau: f64,
    pub weights: AcquisitionWeights,
    pub distance_mode: DistanceMode,
}

/// Computes gated acquisition values per candidate for one strategy.
/// `Random` draws i.i.d. uniform scores from `rng` and skips every model
/// input; the curiosity strategies combine the three components; only
/// `ActiveQc` applies the quality gate.
pub fn strategy_scores<R: Rng>(
    strategy: Strategy,
    inputs: &StrategyInputs<'_>,
    rng: &mut R,
) -> Result<Vec<AcquisitionRecord>, AcquisitionError> {
    let n = inputs.candidate_ids.len();
    match strategy {
        Strategy::Random => Ok(inputs
            .candidate_ids
            .iter()
            .map(|&id| {
                let s: f64 = rng.random::<f64>();
                AcquisitionRecord {
                    id,
                    e_hat: 0.0,
                    d: 0.0,
                    r: 0.0,
                    s,
                    q_hat: None,
                    a: s,
                    selected: false,
                }
            })
            .collect()),
        Strategy::Active | Strategy::ActiveMt | Strategy::ActiveQc => {
            let raw_errors = inputs
                .raw_errors
                .ok_or(AcquisitionError::MissingContext("predicted errors"))?;
            let cand = inputs
                .candidate_latents
                .ok_or(AcquisitionError::MissingContext("candidate latents"))?;
            let train = inputs
                .training_latents
                .ok_or(AcquisitionError::MissingContext("training latents"))?;
            if raw_errors.len() != n || cand.len() != n {
                return Err(AcquisitionError::LengthMismatch);
            }
            let distance = distance_scores(cand, train, inputs.distance_mode)?;
            let repr = representativeness_scores(cand);
            let comp = AcquisitionComponents::from_raw_errors(raw_errors, distance, repr)?;
            let s = combine_scores(&comp, &inputs.weights);
            let (q_hat, a) = if strategy.uses_quality_gate() {
                let q = inputs
                    .q_hat
                    .ok_or(AcquisitionError::MissingContext("GP quality predictions"))?;
                if q.len() != n {
                    return Err(AcquisitionError::LengthMismatch);
                }
                (Some(q), gate(&s, q, inputs.tau))
            } else {
                (None, s.clone())
            };
            Ok((0..n)
                .map(|i| AcquisitionRecord {
                    id: inputs.candidate_ids[i],
                    e_hat: comp.predicted_error[i],
                    d: comp.distance[i],
                    r: comp.representativeness[i],
                    s: s[i],
                    q_hat: q_hat.map(|q| q[i]),
                    a: a[i],
                    selected: false,
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn weights_must_not_vanish() {
        assert!(AcquisitionWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(AcquisitionWeights::new(-0.1, 0.5, 0.5).is_err());
        assert!(AcquisitionWeights::new(1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let out = min_max_normalize(&[3.0, 9.0, 6.0]);
        assert_eq!(out, vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[4.0, 4.0, 4.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn distance_zero_at_own_latent() {
        let cands = vec![vec![1.0, 1.0], vec![5.0, 5.0]];
        let train = vec![vec![1.0, 1.0]];
        let d = distance_scores(&cands, &train, DistanceMode::SumToTraining).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
    }

    #[test]
    fn equidistant_candidates_normalize_to_zero() {
        let cands = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]];
        let train = vec![vec![0.0, 0.0]];
        let d = distance_scores(&cands, &train, DistanceMode::SumToTraining).unwrap();
        assert_eq!(d, vec![0.0, 0.0, 0.0]);
    }

    // Hand arithmetic oracle, frozen: sums of Euclidean distances for three
    // candidates against two training points.
    #[test]
    fn distance_sums_match_hand_computation() {
        let cands = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let train = vec![vec![1.0, 1.0], vec![-1.0, 0.0]];
        // raw sums: sqrt(2)+1, 1+2, sqrt(2)+sqrt(5); normalized by hand
        let d = distance_scores(&cands, &train, DistanceMode::SumToTraining).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 0.47391118, epsilon = 1e-7);
        assert_abs_diff_eq!(d[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nearest_mode_uses_minimum() {
        let cands = vec![vec![0.0], vec![3.0]];
        let train = vec![vec![0.0], vec![10.0]];
        // nearest: 0 and 3 -> normalized 0 and 1
        let d = distance_scores(&cands, &train, DistanceMode::NearestTraining).unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn empty_training_set_is_contract_violation() {
        assert!(matches!(
            distance_scores(&[vec![0.0]], &[], DistanceMode::SumToTraining),
            Err(AcquisitionError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn identical_latents_have_zero_representativeness_spread() {
        let cands = vec![vec![1.0, 2.0]; 4];
        assert_eq!(representativeness_scores(&cands), vec![0.0; 4]);
    }

    // Hand cosine oracle on four fixed vectors: the all-ones vector is most
    // representative among mutually orthogonal outliers.
    #[test]
    fn central_vector_wins_representativeness()
    {
        let cands = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let r = representativeness_scores(&cands);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn representativeness_is_sign_invariant() {
        let cands = vec![vec![1.0, 0.5], vec![0.2, -0.8], vec![-0.4, 0.3]];
        let flipped: Vec<Vec<f64>> = cands
            .iter()
            .map(|v| v.iter().map(|x| -x).collect())
            .collect();
        assert_eq!(
            representativeness_scores(&cands),
            representativeness_scores(&flipped)
        );
    }

    #[test]
    fn single_candidate_scores_zero() {
        assert_eq!(representativeness_scores(&[vec![3.0, 4.0]]), vec![0.0]);
    }

    #[test]
    fn zero_norm_latents_get_zero_similarity() {
        let cands = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.1]];
        let r = representativeness_scores(&cands);
        assert_eq!(r[0], 0.0);
        assert!(r[1] > 0.0 || r[2] > 0.0);
    }

    #[test]
    fn published_coefficients_recover_the_error_weight() {
        let comp = AcquisitionComponents {
            predicted_error: vec![1.0],
            distance: vec![0.0],
            representativeness: vec![0.0],
        };
        let w = AcquisitionWeights::benchmark_default();
        let s = combine_scores(&comp, &w);
        assert_relative_eq!(s[0], 0.90, max_relative = 1e-15);
    }

    #[test]
    fn pure_error_weighting_is_identity() {
        let comp = AcquisitionComponents {
            predicted_error: vec![0.2, 0.8, 0.5],
            distance: vec![0.9, 0.1, 0.3],
            representativeness: vec![0.4, 0.6, 0.2],
        };
        let w = AcquisitionWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(combine_scores(&comp, &w), comp.predicted_error);
    }

    #[test]
    fn convex_combination_of_equal_components() {
        let comp = AcquisitionComponents {
            predicted_error: vec![0.37; 3],
            distance: vec![0.37; 3],
            representativeness: vec![0.37; 3],
        };
        let w = AcquisitionWeights::new(0.5, 0.3, 0.2).unwrap();
        for s in combine_scores(&comp, &w) {
            assert_relative_eq!(s, 0.37, max_relative = 1e-14);
        }
    }

    #[test]
    fn combine_is_linear_in_components() {
        let comp = AcquisitionComponents {
            predicted_error: vec![0.2, 0.8],
            distance: vec![0.1, 0.4],
            representativeness: vec![0.3, 0.9],
        };
        let scaled = AcquisitionComponents {
            predicted_error: comp.predicted_error.iter().map(|v| 3.0 * v).collect(),
            distance: comp.distance.iter().map(|v| 3.0 * v).collect(),
            representativeness: comp.representativeness.iter().map(|v| 3.0 * v).collect(),
        };
        let w = AcquisitionWeights::benchmark_default();
        let s1 = combine_scores(&comp, &w);
        let s3 = combine_scores(&scaled, &w);
        for (a, b) in s1.iter().zip(&s3) {
            assert_relative_eq!(3.0 * a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn gate_boundary_is_inclusive() {
        let a = gate(&[0.5, 0.5, 0.5], &[0.9, 0.9 - 1e-12, 0.95], 0.9);
        assert_eq!(a, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn gate_below_all_quality_passes_everything() {
        let s = vec![0.3, 0.7, 0.1];
        let q = vec![0.2, 0.5, 0.9];
        assert_eq!(gate(&s, &q, f64::NEG_INFINITY), s);
    }

    #[test]
    fn raising_tau_never_enlarges_the_eligible_set() {
        let s = vec![0.4, 0.6, 0.2, 0.9];
        let q = vec![0.1, 0.5, 0.8, 0.95];
        let mut prev: Option<Vec<usize>> = None;
        for tau in [0.0, 0.3, 0.6, 0.9, 1.0] {
            let eligible: Vec<usize> = gate(&s, &q, tau)
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(i, _)| i)
                .collect();
            if let Some(p) = &prev {
                assert!(eligible.iter().all(|i| p.contains(i)));
            }
            prev = Some(eligible);
        }
    }

    #[test]
    fn select_top_k_with_distinct_scores() {
        let got = select_batch(&[10, 11, 12, 13], &[0.1, 0.9, 0.4, 0.7], 2).unwrap();
        assert_eq!(got, vec![11, 13]);
    }

    #[test]
    fn select_breaks_ties_by_lowest_id() {
        let got = select_batch(&[7, 3, 5], &[0.9, 0.9, 0.9], 1).unwrap();
        assert_eq!(got, vec![3]);
    }

    #[test]
    fn select_on_all_zero_scores_is_empty_batch() {
        assert!(matches!(
            select_batch(&[1, 2, 3], &[0.0, 0.0, 0.0], 2),
            Err(AcquisitionError::EmptyBatch)
        ));
    }

    #[test]
    fn select_returns_shortfall() {
        let got = select_batch(&[1, 2, 3], &[0.0, 0.5, 0.0], 3).unwrap();
        assert_eq!(got, vec![2]);
    }

    #[test]
    fn random_strategy_is_reproducible_and_model_free() {
        let ids = [4usize, 9, 2, 7];
        let inputs = StrategyInputs {
            candidate_ids: &ids,
            raw_errors: None,
            candidate_latents: None,
            training_latents: None,
            q_hat: None,
            tau: 0.9,
            weights: AcquisitionWeights::benchmark_default(),
            distance_mode: DistanceMode::SumToTraining,
        };
        let mut rng1 = crate::rng::stream(3, &[1]);
        let rec1 = strategy_scores(Strategy::Random, &inputs, &mut rng1).unwrap();
        let mut rng2 = crate::rng::stream(3, &[1]);
        let rec2 = strategy_scores(Strategy::Random, &inputs, &mut rng2).unwrap();
        assert_eq!(rec1, rec2);
        assert!(rec1.iter().all(|r| r.q_hat.is_none() && r.e_hat == 0.0));
    }

    #[test]
    fn disabled_gate_reduces_qc_to_active() {
        let ids = [0usize, 1, 2];
        let errors = [0.3, 0.9, 0.1];
        let cand = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]];
        let train = vec![vec![0.2, 0.2]];
        let q = [0.99, 0.99, 0.99];
        let base = StrategyInputs {
            candidate_ids: &ids,
            raw_errors: Some(&errors),
            candidate_latents: Some(&cand),
            training_latents: Some(&train),
            q_hat: Some(&q),
            tau: 0.0,
            weights: AcquisitionWeights::benchmark_default(),
            distance_mode: DistanceMode::SumToTraining,
        };
        let mut rng = crate::rng::stream(1, &[1]);
        let active = strategy_scores(Strategy::Active, &base, &mut rng).unwrap();
        let qc = strategy_scores(Strategy::ActiveQc, &base, &mut rng).unwrap();
        for (a, b) in active.iter().zip(&qc) {
            assert_eq!(a.s, b.s);
            assert_eq!(a.a, b.a);
        }
        let sel_a = select_batch(&ids, &active.iter().map(|r| r.a).collect::<Vec<_>>(), 2).unwrap();
        let sel_q = select_batch(&ids, &qc.iter().map(|r| r.a).collect::<Vec<_>>(), 2).unwrap();
        assert_eq!(sel_a, sel_q);
    }

    #[test]
    fn shifting_errors_leaves_selection_unchanged_when_only_alpha() {
        // min-max normalization removes constant shifts of the error
        let errors = [0.3, 0.9, 0.1, 0.55];
        let shifted: Vec<f64> = errors.iter().map(|e| e + 10.0).collect();
        let ids = [0usize, 1, 2, 3];
        let n1 = min_max_normalize(&errors);
        let n2 = min_max_normalize(&shifted);
        for (a, b) in n1.iter().zip(&n2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(
            select_batch(&ids, &n1, 2).unwrap(),
            select_batch(&ids, &n2, 2).unwrap()
        );
    }
}
