use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::taxonomy::GroupKey;
use crate::featurize::FeatureMatrix;
use crate::rng::{stream, tag};
use crate::stats::two_sided_p;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDrift {
    pub column: u32,
    pub label: String,
    pub group: GroupKey,
    pub count_a: usize,
    pub count_b: usize,
    pub p_a: f64,
    pub p_b: f64,
    /// `None` for columns never active in either sample; those are not tested.
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDriftCount {
    pub group: GroupKey,
    pub label: String,
    pub n_tested: usize,
    pub n_significant: usize,
    /// Significant columns more prevalent in the second period.
    pub n_increased: usize,
    pub n_decreased: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub alpha: f64,
    /// Bonferroni family size: columns with a nonzero pooled count.
    pub n_tested: usize,
    pub n_skipped: usize,
    /// `alpha / n_tested`.
    pub threshold: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub columns: Vec<ColumnDrift>,
    pub groups: Vec<GroupDriftCount>,
}

impl DriftReport {
    pub fn n_significant(&self) -> usize {
        self.columns.iter().filter(|c| c.significant).count()
    }
}

/// One row per encounter, chosen from stream `(seed, DRIFT_SAMPLE, id)`.
fn sample_days(matrix: &FeatureMatrix, seed: u64) -> Vec<usize> {
    matrix
        .encounter_rows()
        .into_iter()
        .map(|(e, rows)| {
            let mut rng = stream(seed, &[tag::DRIFT_SAMPLE, e.0]);
            rows[rng.random_range(0..rows.len())]
        })
        .collect()
}

/// Pooled two-proportion z-tests of every column between two periods, on
/// one sampled day per encounter, with a Bonferroni cut at `alpha / d`.
pub fn temporal_drift_test(a: &FeatureMatrix, b: &FeatureMatrix, alpha: f64, seed: u64) -> Result<DriftReport> {
    if a.column_ids() != b.column_ids() {
        return Err(Error::Schema("drift test periods have different columns".into()));
    }
    if a.n_rows() == 0 || b.n_rows() == 0 {
        return Err(Error::Data("drift test period has no rows".into()));
    }
    let count = |m: &FeatureMatrix, rows: &[usize]| {
        let mut counts = vec![0usize; m.n_cols()];
        for &i in rows {
            for &c in m.row(i) {
                counts[c as usize] += 1;
            }
        }
        counts
    };
    let (rows_a, rows_b) = (sample_days(a, seed), sample_days(b, seed));
    let (ca, cb) = (count(a, &rows_a), count(b, &rows_b));
    let (n1, n2) = (rows_a.len() as f64, rows_b.len() as f64);
    let n_tested = ca.iter().zip(&cb).filter(|(x, y)| **x + **y > 0).count();
    let threshold = if n_tested == 0 { 0.0 } else { alpha / n_tested as f64 };
    let columns: Vec<ColumnDrift> = a
        .columns
        .iter()
        .enumerate()
        .map(|(k, info)| {
            let (x, y) = (ca[k], cb[k]);
            let (p1, p2) = (x as f64 / n1, y as f64 / n2);
            let (z, p_value) = if x + y == 0 {
                (None, None)
            } else if p1 == p2 {
                (Some(0.0), Some(1.0))
            } else {
                let pooled = (x + y) as f64 / (n1 + n2);
                let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
                let z = (p1 - p2) / se + 0.0;
                (Some(z), Some(two_sided_p(z)))
            };
            ColumnDrift {
                column: info.id,
                label: info.label.clone(),
                group: info.group,
                count_a: x,
                count_b: y,
                p_a: p1,
                p_b: p2,
                z,
                significant: p_value.is_some_and(|p| p <= threshold),
                p_value,
            }
        })
        .collect();
    let groups = GroupKey::all()
        .filter_map(|g| {
            let tested: Vec<&ColumnDrift> = columns.iter().filter(|c| g.contains(c.group) && c.z.is_some()).collect();
            if tested.is_empty() {
                return None;
            }
            let sig: Vec<&&ColumnDrift> = tested.iter().filter(|c| c.significant).collect();
            Some(GroupDriftCount {
                group: g,
                label: g.label(),
                n_tested: tested.len(),
                n_significant: sig.len(),
                n_increased: sig.iter().filter(|c| c.p_b > c.p_a).count(),
                n_decreased: sig.iter().filter(|c| c.p_b < c.p_a).count(),
            })
        })
        .collect();
    Ok(DriftReport {
        alpha,
        n_tested,
        n_skipped: columns.len() - n_tested,
        threshold,
        n_a: rows_a.len(),
        n_b: rows_b.len(),
        columns,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{ColumnInfo, RowMeta};
    use crate::ids::{EncounterId, FeatureId, MonthYear};
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    /// `n` encounters of two days each; column `k` is active with
    /// probability `probs[k]`.
    fn period(seed: u64, offset: u64, n: u64, probs: &[f64]) -> FeatureMatrix {
        let columns = (0..probs.len() as u32)
            .map(|id| ColumnInfo {
                id,
                feature_id: FeatureId(id),
                label: format!("c{id}"),
                group: if id == 0 { GroupKey::LaboratoryResults } else { GroupKey::VitalSigns },
            })
            .collect();
        let mut rng = stream(seed, &[offset]);
        let d0 = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let mut rows = Vec::new();
        let mut labels = BTreeMap::new();
        for e in offset..offset + n {
            labels.insert(EncounterId(e), false);
            for d in 0..2u64 {
                let active = probs
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| rng.random::<f64>() < p)
                    .map(|(k, _)| k as u32)
                    .collect();
                rows.push((
                    RowMeta {
                        encounter_id: EncounterId(e),
                        date: d0 + chrono::Days::new(d),
                        day_of_stay: d as u32 + 1,
                        admit_month: MonthYear::of(d0),
                    },
                    active,
                ));
            }
        }
        FeatureMatrix::from_rows(columns, rows, labels).unwrap()
    }

    #[test]
    fn planted_shift_is_flagged_and_null_columns_are_not() {
        let mut probs = vec![0.1; 20];
        let a = period(1, 0, 2000, &probs);
        probs[0] = 0.2;
        let b = period(1, 1_000_000, 2000, &probs);
        let r = temporal_drift_test(&a, &b, 0.05, 7).unwrap();
        assert!(r.columns[0].significant);
        assert_eq!(r.n_tested, 20);
        assert_eq!(r.threshold, 0.05 / 20.0);
        let labs = r.groups.iter().find(|g| g.group == GroupKey::LaboratoryResults).unwrap();
        assert_eq!((labs.n_significant, labs.n_increased), (1, 1));
        for c in &r.columns {
            assert_eq!(c.significant, c.p_value.unwrap() <= r.threshold);
        }
    }

    #[test]
    fn swapping_periods_negates_z() {
        let a = period(2, 0, 300, &[0.1, 0.3, 0.0]);
        let b = period(3, 5_000, 300, &[0.15, 0.3, 0.0]);
        let ab = temporal_drift_test(&a, &b, 0.05, 1).unwrap();
        let ba = temporal_drift_test(&b, &a, 0.05, 1).unwrap();
        for (x, y) in ab.columns.iter().zip(&ba.columns) {
            assert_eq!(x.z.map(|z| -z), y.z);
        }
        assert_eq!(ab.n_skipped, 1);
        assert!(ab.columns[2].z.is_none() && !ab.columns[2].significant);
    }

    #[test]
    fn equal_proportions_give_zero() {
        let a = period(4, 0, 10, &[1.0, 0.0]);
        let b = period(5, 100, 10, &[1.0, 0.0]);
        let r = temporal_drift_test(&a, &b, 0.05, 1).unwrap();
        // A column active everywhere has zero pooled variance.
        assert_eq!(r.columns[0].z, Some(0.0));
        assert!(!r.columns[0].significant);
    }

    #[test]
    fn empty_period_is_a_data_error() {
        let a = period(4, 0, 10, &[0.5]);
        let b = period(4, 0, 0, &[0.5]);
        assert!(matches!(temporal_drift_test(&a, &b, 0.05, 1), Err(Error::Data(_))));
    }
}
