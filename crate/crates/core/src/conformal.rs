//! Nonconformity scores, empirical-quantile thresholds and prediction sets.
//!
//! Scores follow the regularized adaptive-set construction: for a label `y`
//! with predicted probability `f_y`,
//!
//! ```text
//! S(y) = xi * sqrt(max(k_y - k_reg, 0)) + u * f_y + rho_y
//! k_y   = |{y' : f_y' >= f_y}|
//! rho_y = sum of f_y' over labels with f_y' > f_y
//! ```
//!
//! Thresholds are read from the history of true-label scores at the level
//! `ceil(t * (1 - alpha)) / (t - 1)`. Levels above one saturate to `+inf`
//! (full set) and levels at or below zero saturate to `-inf` (empty set).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a probability vector.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("probability vector needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("label {label} out of range for {n_labels} labels")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("probability {value} at label {index} is not in [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("randomization draw {0} is not in [0, 1]")]
    RandomizationOutOfRange(f64),
    #[error("score history holds {found} scores but step t = {t} needs {expected}")]
    HistoryLength {
        t: usize,
        expected: usize,
        found: usize,
    },
    #[error("nonconformity score {0} is not finite and non-negative")]
    InvalidScore(f64),
    #[error("score parameters invalid: xi = {0}")]
    InvalidParams(f64),
}

/// Regularization of the nonconformity score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Penalty strength on the rank beyond `k_reg`.
    pub xi: f64,
    /// Number of top-ranked labels exempt from the rank penalty.
    pub k_reg: usize,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { xi: 0.01, k_reg: 2 }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<(), ConformalError> {
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(ConformalError::InvalidParams(self.xi));
        }
        Ok(())
    }
}

/// A validated view over one model's probability vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityVector<'a> {
    probs: &'a [f64],
}

impl<'a> ProbabilityVector<'a> {
    pub fn new(probs: &'a [f64]) -> Result<Self, ConformalError> {
        validate_probabilities(probs)?;
        Ok(Self { probs })
    }

    /// Wraps a slice that the caller has already validated.
    pub(crate) fn new_unchecked(probs: &'a [f64]) -> Self {
        debug_assert!(validate_probabilities(probs).is_ok());
        Self { probs }
    }

    pub fn n_labels(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.probs
    }

    /// Score of `label` with randomization `u`.
    pub fn score(&self, label: usize, params: &ScoreParams, u: f64) -> Result<f64, ConformalError> {
        if label >= self.probs.len() {
            return Err(ConformalError::LabelOutOfRange {
                label,
                n_labels: self.probs.len(),
            });
        }
        check_u(u)?;
        Ok(self.score_unchecked(label, params, u))
    }

    pub(crate) fn score_unchecked(&self, label: usize, params: &ScoreParams, u: f64) -> f64 {
        let f_label = self.probs[label];
        let mut rank = 0usize;
        let mut rho = 0.0;
        for &f in self.probs {
            if f >= f_label {
                rank += 1;
            }
            if f > f_label {
                rho += f;
            }
        }
        let excess = rank.saturating_sub(params.k_reg) as f64;
        params.xi * excess.sqrt() + u * f_label + rho
    }
}

/// Checks the probability-vector invariants: at least two labels, every
/// entry in `[0, 1]` and a total within [`NORMALIZATION_TOLERANCE`] of one.
pub fn validate_probabilities(probs: &[f64]) -> Result<(), ConformalError> {
    if probs.len() < 2 {
        return Err(ConformalError::TooFewLabels(probs.len()));
    }
    let mut sum = 0.0;
    for (index, &value) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(ConformalError::InvalidProbability { index, value });
        }
        sum += value;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(ConformalError::NotNormalized { sum });
    }
    Ok(())
}

fn check_u(u: f64) -> Result<(), ConformalError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(ConformalError::RandomizationOutOfRange(u))
    }
}

/// Nonconformity score of `label` under `probs`.
pub fn nonconformity_score(
    probs: &[f64],
    label: usize,
    params: &ScoreParams,
    u: f64,
) -> Result<f64, ConformalError> {
    ProbabilityVector::new(probs)?.score(label, params, u)
}

/// Append-only history of one model's true-label scores.
///
/// Scores are kept in arrival order. A sorted copy is maintained lazily:
/// new scores queue up until the next call to [`ScoreHistory::sorted`],
/// which merges them in one pass. Models that are rarely queried therefore
/// pay for ordering only when they are actually used.
#[derive(Debug, Clone, Default)]
pub struct ScoreHistory {
    scores: Vec<f64>,
    sorted: Vec<f64>,
}

impl ScoreHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            scores: Vec::with_capacity(capacity),
            sorted: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, score: f64) -> Result<(), ConformalError> {
        if !(score.is_finite() && score >= 0.0) {
            return Err(ConformalError::InvalidScore(score));
        }
        self.scores.push(score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores in arrival order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Number of scores not yet merged into the sorted view.
    pub fn pending(&self) -> usize {
        self.scores.len() - self.sorted.len()
    }

    /// Ascending view over every score pushed so far.
    pub fn sorted(&mut self) -> SortedScores<'_> {
        let done = self.sorted.len();
        match self.scores.len() - done {
            0 => {}
            1 => {
                let x = self.scores[done];
                let at = self.sorted.partition_point(|&s| s <= x);
                self.sorted.insert(at, x);
            }
            _ => {
                let mut fresh = self.scores[done..].to_vec();
                fresh.sort_unstable_by(f64::total_cmp);
                merge_into(&mut self.sorted, &fresh);
            }
        }
        SortedScores {
            scores: &self.sorted,
        }
    }
}

/// Merges ascending `fresh` into ascending `sorted` in place, back to front,
/// shifting each run of old scores with a single block move.
fn merge_into(sorted: &mut Vec<f64>, fresh: &[f64]) {
    let old = sorted.len();
    sorted.resize(old + fresh.len(), 0.0);
    let mut end = old;
    for (j, &x) in fresh.iter().enumerate().rev() {
        let at = sorted[..end].partition_point(|&s| s <= x);
        sorted.copy_within(at..end, at + j + 1);
        sorted[at + j] = x;
        end = at;
    }
}

/// Borrowed ascending score sequence.
#[derive(Debug, Clone, Copy)]
pub struct SortedScores<'a> {
    scores: &'a [f64],
}

impl<'a> SortedScores<'a> {
    /// Wraps a slice, returning `None` unless it is ascending.
    pub fn from_sorted(scores: &'a [f64]) -> Option<Self> {
        scores
            .windows(2)
            .all(|w| w[0] <= w[1])
            .then_some(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.scores
    }

    /// Number of scores strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        self.scores.partition_point(|&s| s < x)
    }
}

fn check_step(history: &SortedScores<'_>, t: usize) -> Result<(), ConformalError> {
    if t == 0 || history.len() != t - 1 {
        return Err(ConformalError::HistoryLength {
            t,
            expected: t.saturating_sub(1),
            found: history.len(),
        });
    }
    Ok(())
}

/// Threshold at step `t` for miscoverage `alpha_t`, given the `t - 1`
/// scores observed so far. Returns `+inf` or `-inf` when the quantile
/// level leaves `(0, 1]`.
pub fn threshold(history: SortedScores<'_>, alpha_t: f64, t: usize) -> Result<f64, ConformalError> {
    check_step(&history, t)?;
    let n = history.len();
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let rank = (t as f64 * (1.0 - alpha_t)).ceil();
    if rank > n as f64 {
        Ok(f64::INFINITY)
    } else if rank <= 0.0 {
        Ok(f64::NEG_INFINITY)
    } else {
        Ok(history.as_slice()[rank as usize - 1])
    }
}

/// Largest miscoverage level whose threshold still covers `s_true`:
/// `1 - r / t` with `r` the number of past scores strictly below `s_true`.
pub fn alpha_bar(history: SortedScores<'_>, s_true: f64, t: usize) -> Result<f64, ConformalError> {
    check_step(&history, t)?;
    if history.is_empty() {
        return Ok(1.0);
    }
    let below = history.count_below(s_true);
    Ok(1.0 - below as f64 / t as f64)
}

/// Label indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.binary_search(&label).is_ok()
    }
}

/// Labels whose score is at most `qhat`.
pub fn prediction_set(
    probs: ProbabilityVector<'_>,
    params: &ScoreParams,
    u: f64,
    qhat: f64,
) -> Result<PredictionSet, ConformalError> {
    check_u(u)?;
    Ok(prediction_set_unchecked(probs, params, u, qhat))
}

pub(crate) fn prediction_set_unchecked(
    probs: ProbabilityVector<'_>,
    params: &ScoreParams,
    u: f64,
    qhat: f64,
) -> PredictionSet {
    let k = probs.n_labels();
    let members = if qhat == f64::INFINITY {
        (0..k).collect()
    } else if qhat == f64::NEG_INFINITY {
        Vec::new()
    } else {
        (0..k)
            .filter(|&y| probs.score_unchecked(y, params, u) <= qhat)
            .collect()
    };
    PredictionSet { members }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const P: [f64; 3] = [0.7, 0.2, 0.1];

    fn plain() -> ScoreParams {
        ScoreParams { xi: 0.0, k_reg: 0 }
    }

    fn history(scores: &[f64]) -> ScoreHistory {
        let mut h = ScoreHistory::new();
        for &s in scores {
            h.push(s).unwrap();
        }
        h
    }

    #[test]
    fn score_examples() {
        assert_eq!(nonconformity_score(&P, 0, &plain(), 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            nonconformity_score(&P, 2, &plain(), 1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let reg = ScoreParams { xi: 0.1, k_reg: 1 };
        assert_abs_diff_eq!(
            nonconformity_score(&P, 2, &reg, 1.0).unwrap(),
            1.0 + 0.1 * 2f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ties_count_in_rank_but_not_in_mass() {
        let p = [0.4, 0.4, 0.2];
        let reg = ScoreParams { xi: 1.0, k_reg: 0 };
        // label 0: rank 2 (both 0.4s), rho 0
        assert_abs_diff_eq!(
            nonconformity_score(&p, 0, &reg, 0.0).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn score_rejects_bad_input() {
        assert!(matches!(
            nonconformity_score(&P, 3, &plain(), 0.5),
            Err(ConformalError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            nonconformity_score(&P, 0, &plain(), 1.5),
            Err(ConformalError::RandomizationOutOfRange(_))
        ));
        assert!(matches!(
            nonconformity_score(&[0.5, 0.3], 0, &plain(), 0.5),
            Err(ConformalError::NotNormalized { .. })
        ));
        assert!(matches!(
            nonconformity_score(&[1.0], 0, &plain(), 0.5),
            Err(ConformalError::TooFewLabels(1))
        ));
        assert!(matches!(
            nonconformity_score(&[1.2, -0.2], 0, &plain(), 0.5),
            Err(ConformalError::InvalidProbability { index: 0, .. })
        ));
    }

    #[test]
    fn threshold_examples() {
        let mut h = history(&[0.3, 0.1, 0.4, 0.2]);
        assert_eq!(threshold(h.sorted(), 0.2, 5).unwrap(), 0.4);
        assert_eq!(threshold(h.sorted(), 0.0, 5).unwrap(), f64::INFINITY);
        assert_eq!(threshold(h.sorted(), 1.0, 5).unwrap(), f64::NEG_INFINITY);
        let mut empty = ScoreHistory::new();
        assert_eq!(threshold(empty.sorted(), 0.3, 1).unwrap(), f64::INFINITY);
        assert!(matches!(
            threshold(h.sorted(), 0.1, 4),
            Err(ConformalError::HistoryLength { .. })
        ));
    }

    #[test]
    fn alpha_bar_examples() {
        let mut h = history(&[0.1, 0.2, 0.3, 0.4]);
        assert_abs_diff_eq!(
            alpha_bar(h.sorted(), 0.25, 5).unwrap(),
            0.6,
            epsilon = 1e-12
        );
        assert_eq!(alpha_bar(h.sorted(), 0.05, 5).unwrap(), 1.0);
        assert_abs_diff_eq!(alpha_bar(h.sorted(), 0.5, 5).unwrap(), 0.2, epsilon = 1e-12);
        let mut empty = ScoreHistory::new();
        assert_eq!(alpha_bar(empty.sorted(), 3.0, 1).unwrap(), 1.0);
    }

    #[test]
    fn prediction_set_examples() {
        let pv = ProbabilityVector::new(&P).unwrap();
        let all = prediction_set(pv, &plain(), 0.5, f64::INFINITY).unwrap();
        assert_eq!(all.members(), &[0, 1, 2]);
        assert!(prediction_set(pv, &plain(), 0.5, f64::NEG_INFINITY)
            .unwrap()
            .is_empty());
        // u = 1, plain: scores are [0.7, 0.9, 1.0]
        let s = prediction_set(pv, &plain(), 1.0, 0.9).unwrap();
        assert_eq!(s.members(), &[0, 1]);
        assert!(s.contains(1) && !s.contains(2));
    }

    #[test]
    fn history_merges_batches_and_singles() {
        let mut h = history(&[0.5, 0.1]);
        assert_eq!(h.sorted().as_slice(), &[0.1, 0.5]);
        h.push(0.3).unwrap();
        assert_eq!(h.pending(), 1);
        assert_eq!(h.sorted().as_slice(), &[0.1, 0.3, 0.5]);
        for s in [0.9, 0.0, 0.3, 0.2] {
            h.push(s).unwrap();
        }
        assert_eq!(h.sorted().as_slice(), &[0.0, 0.1, 0.2, 0.3, 0.3, 0.5, 0.9]);
        assert_eq!(h.scores(), &[0.5, 0.1, 0.3, 0.9, 0.0, 0.3, 0.2]);
        assert!(h.push(f64::NAN).is_err());
        assert!(h.push(-1.0).is_err());
    }

    fn prob_vector(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_map(|raw| {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            raw.iter()
                .map(|x| (x + 1e-9 / raw.len() as f64) / total)
                .collect()
        })
    }

    proptest! {
        #[test]
        fn unregularized_scores_lie_in_unit_interval(
            probs in (2usize..30).prop_flat_map(prob_vector),
            u in 0.0f64..=1.0,
            pick in any::<prop::sample::Index>(),
        ) {
            let label = pick.index(probs.len());
            let s = nonconformity_score(&probs, label, &plain(), u).unwrap();
            prop_assert!((0.0..=1.0 + 1e-9).contains(&s));
        }

        #[test]
        fn top_label_with_zero_u_scores_zero(
            probs in (2usize..30).prop_flat_map(prob_vector),
            k_reg in 1usize..5,
            xi in 0.0f64..2.0,
        ) {
            let top = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
            let s = nonconformity_score(&probs, top, &ScoreParams { xi, k_reg }, 0.0).unwrap();
            prop_assert_eq!(s, 0.0);
        }

        #[test]
        fn threshold_is_non_increasing_in_alpha(
            scores in prop::collection::vec(0.0f64..2.0, 0..60),
            a in -0.2f64..1.2,
            b in -0.2f64..1.2,
        ) {
            let mut h = history(&scores);
            let t = scores.len() + 1;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(threshold(h.sorted(), lo, t).unwrap() >= threshold(h.sorted(), hi, t).unwrap());
        }

        #[test]
        fn sets_are_nested(
            probs in (2usize..15).prop_flat_map(prob_vector),
            scores in prop::collection::vec(0.0f64..1.0, 1..60),
            u in 0.0f64..=1.0,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let mut h = history(&scores);
            let t = scores.len() + 1;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pv = ProbabilityVector::new(&probs).unwrap();
            let wide = prediction_set(pv, &ScoreParams::default(), u, threshold(h.sorted(), lo, t).unwrap()).unwrap();
            let narrow = prediction_set(pv, &ScoreParams::default(), u, threshold(h.sorted(), hi, t).unwrap()).unwrap();
            prop_assert!(narrow.members().iter().all(|&y| wide.contains(y)));
        }

        #[test]
        fn lazy_sorted_view_matches_full_sort(
            batches in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 0..8), 0..10),
        ) {
            let mut h = ScoreHistory::new();
            let mut all = Vec::new();
            for batch in batches {
                for s in batch {
                    h.push(s).unwrap();
                    all.push(s);
                }
                all.sort_by(f64::total_cmp);
                prop_assert_eq!(h.sorted().as_slice(), all.as_slice());
            }
        }
    }
}
