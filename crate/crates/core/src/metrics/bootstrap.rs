use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Measure, ScoreSet};
use crate::error::{Error, Result};
use crate::ids::MonthYear;
use crate::rng::{stream, stream_key, tag, StreamRng};
use crate::stats::percentile;

/// Redraws allowed per replicate before giving up on an undefined metric.
const MAX_REDRAWS: u64 = 1000;

/// Point estimate with a 95% empirical percentile bootstrap interval.
/// `lower <= upper` always holds; the point need not lie inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_replicates: usize,
    /// Replicates redrawn because the metric was undefined on them.
    pub redraws: usize,
}

impl MetricCI {
    pub fn from_replicates(point: f64, replicates: &[f64], redraws: usize) -> MetricCI {
        MetricCI {
            point,
            lower: percentile(replicates, 2.5),
            upper: percentile(replicates, 97.5),
            n_replicates: replicates.len(),
            redraws,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn overlaps(&self, other: &MetricCI) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Runs `n_replicates` replicates of `f`. Replicate `k` draws from stream
/// `(seed, path.., k, attempt)`; an undefined metric moves to the next
/// attempt. Output order follows `k`, independent of scheduling.
pub fn resample_replicates<T, F>(n_replicates: usize, seed: u64, path: &[u64], f: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(&mut StreamRng) -> Result<T> + Sync,
{
    let results: Vec<(T, usize)> = (0..n_replicates as u64)
        .into_par_iter()
        .map(|k| {
            for attempt in 0..MAX_REDRAWS {
                let mut key = path.to_vec();
                key.extend([k, attempt]);
                let mut rng = stream(seed, &key);
                match f(&mut rng) {
                    Ok(v) => return Ok((v, attempt as usize)),
                    Err(Error::UndefinedMetric(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::UndefinedMetric(format!(
                "replicate {k} undefined after {MAX_REDRAWS} redraws"
            )))
        })
        .collect::<Result<_>>()?;
    let redraws = results.iter().map(|(_, r)| r).sum();
    Ok((results.into_iter().map(|(v, _)| v).collect(), redraws))
}

/// Metric on a with-replacement resample of the encounters.
pub(crate) fn resampled(measure: Measure, scores: &[f64], labels: &[bool], rng: &mut StreamRng) -> Result<f64> {
    let n = scores.len();
    let mut s = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..n);
        s.push(scores[i]);
        l.push(labels[i]);
    }
    measure.evaluate(&s, &l)
}

pub fn bootstrap_ci(set: &ScoreSet, measure: Measure, n_replicates: usize, seed: u64) -> Result<MetricCI> {
    let (scores, labels) = (set.scores(), set.labels());
    let point = measure.evaluate(&scores, &labels)?;
    let (reps, redraws) = resample_replicates(n_replicates, seed, &[tag::BOOTSTRAP], |rng| {
        resampled(measure, &scores, &labels, rng)
    })?;
    Ok(MetricCI::from_replicates(point, &reps, redraws))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyRow {
    pub month: MonthYear,
    pub n: usize,
    pub n_pos: usize,
    pub ci: Option<MetricCI>,
    /// Why `ci` is missing, e.g. a month without positives.
    pub undefined: Option<String>,
}

fn month_row(set: &ScoreSet, month: MonthYear, measure: Measure, n_replicates: usize, seed: u64) -> Result<MonthlyRow> {
    let month_seed = stream_key(seed, &[tag::MONTHLY, month.year as u64, u64::from(month.month)]);
    let (ci, undefined) = match bootstrap_ci(set, measure, n_replicates, month_seed) {
        Ok(ci) => (Some(ci), None),
        Err(Error::UndefinedMetric(why)) => (None, Some(why)),
        Err(e) => return Err(e),
    };
    Ok(MonthlyRow {
        month,
        n: set.len(),
        n_pos: set.n_positive(),
        ci,
        undefined,
    })
}

/// Metric with CI per admission month-year. Months where the metric is
/// undefined are kept and marked.
pub fn monthly_metric(set: &ScoreSet, measure: Measure, n_replicates: usize, seed: u64) -> Result<Vec<MonthlyRow>> {
    let months: BTreeSet<MonthYear> = set.entries.iter().map(|e| e.admit_month).collect();
    months
        .into_iter()
        .map(|m| month_row(&set.restrict(|e| e.admit_month == m), m, measure, n_replicates, seed))
        .collect()
}

/// One calendar month of two periods, joined on the month number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyComparisonRow {
    pub month: u32,
    pub a: Option<MonthlyRow>,
    pub b: Option<MonthlyRow>,
    /// Whether the two monthly CIs overlap.
    pub ci_overlap: Option<bool>,
    /// Bootstrap CI of `b - a`, resampling both months independently.
    pub difference: Option<MetricCI>,
    /// Whether the difference CI excludes zero.
    pub difference_significant: Option<bool>,
}

pub fn monthly_comparison(
    a: &ScoreSet,
    b: &ScoreSet,
    measure: Measure,
    n_replicates: usize,
    seed: u64,
) -> Result<Vec<MonthlyComparisonRow>> {
    let months: BTreeSet<u32> = a.entries.iter().chain(&b.entries).map(|e| e.admit_month.month).collect();
    let mut out = Vec::new();
    for m in months {
        let sa = a.restrict(|e| e.admit_month.month == m);
        let sb = b.restrict(|e| e.admit_month.month == m);
        let row_of = |s: &ScoreSet, which: u64| -> Result<Option<MonthlyRow>> {
            let Some(first) = s.entries.first() else {
                return Ok(None);
            };
            let label = MonthYear {
                year: first.admit_month.year,
                month: m,
            };
            month_row(s, label, measure, n_replicates, stream_key(seed, &[which])).map(Some)
        };
        let ra = row_of(&sa, 0)?;
        let rb = row_of(&sb, 1)?;
        let ci_overlap = match (ra.as_ref().and_then(|r| r.ci), rb.as_ref().and_then(|r| r.ci)) {
            (Some(x), Some(y)) => Some(x.overlaps(&y)),
            _ => None,
        };
        let difference = if ci_overlap.is_some() {
            let (xa, la) = (sa.scores(), sa.labels());
            let (xb, lb) = (sb.scores(), sb.labels());
            let point = measure.evaluate(&xb, &lb)? - measure.evaluate(&xa, &la)?;
            let (reps, redraws) = resample_replicates(n_replicates, seed, &[tag::MONTHLY, u64::from(m)], |rng| {
                Ok(resampled(measure, &xb, &lb, rng)? - resampled(measure, &xa, &la, rng)?)
            })?;
            Some(MetricCI::from_replicates(point, &reps, redraws))
        } else {
            None
        };
        out.push(MonthlyComparisonRow {
            month: m,
            a: ra,
            b: rb,
            ci_overlap,
            difference_significant: difference.map(|d| !d.contains(0.0)),
            difference,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::EncounterId;
    use crate::metrics::EncounterScore;

    fn set(scores: &[f64], labels: &[bool], month: MonthYear) -> ScoreSet {
        ScoreSet {
            entries: scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &label))| EncounterScore {
                    encounter_id: EncounterId(i as u64),
                    admit_month: month,
                    score,
                    label,
                })
                .collect(),
        }
    }

    const JAN: MonthYear = MonthYear { year: 2020, month: 1 };

    #[test]
    fn constant_brier_has_zero_width() {
        let s = set(&[0.2; 30], &[false; 30], JAN);
        let ci = bootstrap_ci(&s, Measure::Brier, 200, 1).unwrap();
        assert_eq!((ci.lower, ci.upper), (ci.point, ci.point));
    }

    #[test]
    fn same_seed_same_interval() {
        let mut rng = stream(9, &[0]);
        let scores: Vec<f64> = (0..300).map(|_| rng.random()).collect();
        let labels: Vec<bool> = scores.iter().map(|s| rng.random::<f64>() < *s).collect();
        let s = set(&scores, &labels, JAN);
        let a = bootstrap_ci(&s, Measure::Auroc, 300, 5).unwrap();
        assert_eq!(a, bootstrap_ci(&s, Measure::Auroc, 300, 5).unwrap());
        assert_ne!(a, bootstrap_ci(&s, Measure::Auroc, 300, 6).unwrap());
        assert!(a.lower <= a.upper);
    }

    #[test]
    fn rare_positives_force_counted_redraws() {
        let mut labels = vec![false; 40];
        labels[0] = true;
        let scores: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let ci = bootstrap_ci(&set(&scores, &labels, JAN), Measure::Auroc, 200, 2).unwrap();
        assert!(ci.redraws > 0);
        assert_eq!(ci.n_replicates, 200);
    }

    #[test]
    fn single_month_and_undefined_month() {
        let s = set(&[0.1, 0.9, 0.4], &[false, true, false], JAN);
        let rows = monthly_metric(&s, Measure::Auroc, 50, 1).unwrap();
        assert_eq!(rows.len(), 1);
        let none = set(&[0.1, 0.2], &[false, false], MonthYear { year: 2020, month: 2 });
        let mut both = s.clone();
        both.entries.extend(none.entries);
        let rows = monthly_metric(&both, Measure::Auroc, 50, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].ci.is_none() && rows[1].undefined.is_some());
    }

    #[test]
    fn comparison_joins_on_month_number() {
        let mk = |months: &[(i32, u32)]| ScoreSet {
            entries: months
                .iter()
                .flat_map(|&(year, month)| {
                    (0..20).map(move |i| EncounterScore {
                        encounter_id: EncounterId(u64::from(month) * 100 + i),
                        admit_month: MonthYear { year, month },
                        score: i as f64 / 20.0,
                        label: i % 4 == 0,
                    })
                })
                .collect(),
        };
        let a = mk(&[(2019, 7), (2019, 8), (2020, 1)]);
        let b = mk(&[(2020, 8), (2021, 1), (2021, 3)]);
        let rows = monthly_comparison(&a, &b, Measure::Auroc, 50, 3).unwrap();
        assert_eq!(rows.iter().map(|r| r.month).collect::<Vec<_>>(), vec![1, 3, 7, 8]);
        let jan = &rows[0];
        assert!(jan.a.is_some() && jan.b.is_some());
        assert_eq!(jan.difference.unwrap().point, 0.0);
        assert!(rows[1].a.is_none() && rows[1].difference.is_none());
    }
}
