//! Encounter-level performance measures and their bootstrap uncertainty.

mod bootstrap;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use bootstrap::{
    bootstrap_ci, monthly_comparison, monthly_metric, resample_replicates, MetricCI, MonthlyComparisonRow,
    MonthlyRow,
};
pub(crate) use bootstrap::resampled;

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::ids::{EncounterId, MonthYear};
use crate::risk_model::encounter_max_score;
use crate::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncounterScore {
    pub encounter_id: EncounterId,
    pub admit_month: MonthYear,
    /// Maximum daily risk over the scored days.
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub entries: Vec<EncounterScore>,
}

impl ScoreSet {
    /// Encounter max scores from daily scores in matrix row order.
    pub fn from_daily(matrix: &FeatureMatrix, daily: &[f64]) -> Result<ScoreSet> {
        if daily.len() != matrix.n_rows() {
            return Err(Error::Data(format!(
                "{} daily scores for {} rows",
                daily.len(),
                matrix.n_rows()
            )));
        }
        let entries = matrix
            .encounter_rows()
            .into_iter()
            .filter_map(|(e, rows)| {
                let scores: Vec<f64> = rows.iter().map(|&i| daily[i]).collect();
                encounter_max_score(&scores).map(|score| EncounterScore {
                    encounter_id: e,
                    admit_month: matrix.rows[rows[0]].admit_month,
                    score,
                    label: matrix.labels[&e],
                })
            })
            .collect();
        Ok(ScoreSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.entries.iter().filter(|e| e.label).count()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn by_encounter(&self) -> BTreeMap<EncounterId, &EncounterScore> {
        self.entries.iter().map(|e| (e.encounter_id, e)).collect()
    }

    pub fn restrict(&self, keep: impl Fn(&EncounterScore) -> bool) -> ScoreSet {
        ScoreSet {
            entries: self.entries.iter().filter(|e| keep(e)).copied().collect(),
        }
    }
}

/// AUROC as the Mann-Whitney probability `P(s+ > s-) + P(tie) / 2`,
/// computed from midranks.
pub fn auroc_raw(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * pos_in_run as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    auroc_raw(&scores.scores(), &scores.labels())
}

pub fn brier_raw(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("Brier score of an empty set".into()));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &l)| {
            let d = s - f64::from(u8::from(l));
            d * d
        })
        .sum();
    Ok(total / scores.len() as f64)
}

pub fn brier(scores: &ScoreSet) -> Result<f64> {
    brier_raw(&scores.scores(), &scores.labels())
}

/// Empirical percentile of the reference max scores, interpolated the same
/// way as quintile bounds.
pub fn percentile_threshold(reference: &ScoreSet, pct: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("threshold from an empty reference set".into()));
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::config("evaluate.threshold_percentile", "must be within [0, 100]"));
    }
    Ok(percentile(&reference.scores(), pct))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when the denominator is zero.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts with "predicted positive" meaning `score >= threshold`.
pub fn confusion_at(scores: &ScoreSet, threshold: f64) -> Confusion {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for e in &scores.entries {
        match (e.score >= threshold, e.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Confusion {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        ppv: ratio(tp, tp + fp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Auroc,
    Brier,
}

impl Measure {
    pub fn evaluate(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Measure::Auroc => auroc_raw(scores, labels),
            Measure::Brier => brier_raw(scores, labels),
        }
    }

    pub fn on(self, set: &ScoreSet) -> Result<f64> {
        self.evaluate(&set.scores(), &set.labels())
    }

    /// Lower is better for Brier, so gaps are reported on its negation.
    pub fn negate_for_gap(self) -> bool {
        matches!(self, Measure::Brier)
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Auroc => "auroc",
            Measure::Brier => "brier",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    pub(crate) fn set(scores: &[f64], labels: &[bool]) -> ScoreSet {
        ScoreSet {
            entries: scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &label))| EncounterScore {
                    encounter_id: EncounterId(i as u64),
                    admit_month: MonthYear { year: 2020, month: 1 },
                    score,
                    label,
                })
                .collect(),
        }
    }

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn separated_and_tied_extremes() {
        assert_eq!(auroc_raw(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc_raw(&[0.3; 6], &[true, false, true, false, false, false]).unwrap(), 0.5);
        assert!(matches!(auroc_raw(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_matches_pairwise_oracle_with_ties() {
        let mut rng = stream(3, &[0]);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0..40) as f64) / 40.0).collect();
            let labels: Vec<bool> = (0..200).map(|_| rng.random::<f64>() < 0.3).collect();
            let a = auroc_raw(&scores, &labels).unwrap();
            assert!((a - pairwise(&scores, &labels)).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            assert!((a + auroc_raw(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            assert_eq!(a, auroc_raw(&transformed, &labels).unwrap());
        }
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&set(&[1.0, 0.0, 1.0], &[true, false, true])).unwrap(), 0.0);
        assert_eq!(brier(&set(&[0.5; 4], &[true, false, false, true])).unwrap(), 0.25);
        let mut rng = stream(4, &[0]);
        let s: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..100).map(|_| rng.random()).collect();
        let mut direct = 0.0;
        for i in 0..100 {
            direct += (s[i] - if l[i] { 1.0 } else { 0.0 }).powi(2);
        }
        assert!((brier_raw(&s, &l).unwrap() - direct / 100.0).abs() <= 1e-15);
    }

    #[test]
    fn brier_over_constants_is_minimized_at_base_rate() {
        let labels: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        let base = 0.2;
        let at = |c: f64| brier_raw(&vec![c; 50], &labels).unwrap();
        for c in [0.0, 0.1, 0.15, 0.19, 0.21, 0.3, 0.5, 1.0] {
            assert!(at(base) <= at(c));
        }
    }

    #[test]
    fn threshold_examples() {
        let distinct: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let s = set(&distinct, &[false; 100]);
        let t = percentile_threshold(&s, 95.0).unwrap();
        assert!(t > 0.95 && t < 0.96, "{t}");
        // h = 99 * 0.95 = 94.05 -> x[94] + 0.05 (x[95] - x[94])
        assert!((t - (0.95 + 0.05 * 0.01)).abs() < 1e-12);
        assert_eq!(percentile_threshold(&set(&[0.3; 7], &[false; 7]), 95.0).unwrap(), 0.3);
        assert_eq!(percentile_threshold(&s, 0.0).unwrap(), 0.01);
        assert!(percentile_threshold(&ScoreSet::default(), 95.0).is_err());
    }

    #[test]
    fn confusion_examples() {
        let s = set(&[0.1, 0.4, 0.6, 0.9], &[false, true, false, true]);
        let all = confusion_at(&s, 0.0);
        assert_eq!((all.sensitivity, all.specificity), (Some(1.0), Some(0.0)));
        let none = confusion_at(&s, 2.0);
        assert_eq!(none.ppv, None);
        // Hand tally on 20 encounters.
        let scores: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let labels: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let c = confusion_at(&set(&scores, &labels), 0.5);
        // Predicted positive: i = 10..19; positives among them: 12, 15, 18.
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (3, 7, 6, 4));
        assert_eq!(c.ppv, Some(0.3));
    }
}
