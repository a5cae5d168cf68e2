use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ehr_sim::{EncounterMeta, RawExtract};
use crate::error::{Error, Result};
use crate::ids::EncounterId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InclusionConfig {
    /// Minimum stay, counted in calendar dates touched.
    pub min_los_days: i64,
    /// Encounters positive on or before this day of stay are excluded.
    pub early_positive_days: i64,
    /// Encounters with a positive this many days or fewer before the
    /// admission date are excluded.
    pub prior_positive_days: i64,
    /// Keep rows after the outcome day of positive encounters.
    pub score_post_outcome_days: bool,
}

impl Default for InclusionConfig {
    fn default() -> Self {
        InclusionConfig {
            min_los_days: 3,
            early_positive_days: 2,
            prior_positive_days: 14,
            score_post_outcome_days: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub encounters_in: usize,
    pub encounters_kept: usize,
    pub short_stay: usize,
    pub early_positive: usize,
    pub prior_positive: usize,
    pub post_outcome_rows_dropped: usize,
}

/// An extract restricted to eligible encounters, with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExtract {
    pub extract: RawExtract,
    pub labels: BTreeMap<EncounterId, bool>,
    pub report: InclusionReport,
}

enum Verdict {
    Keep { last_day: Option<u32> },
    ShortStay,
    EarlyPositive,
    PriorPositive,
}

fn judge(meta: &EncounterMeta, config: &InclusionConfig) -> Result<Verdict> {
    let (Some(admit), Some(discharge)) = (meta.admit_at, meta.discharge_at) else {
        return Err(Error::MissingMetadata(meta.encounter_id));
    };
    let admit_day = admit.day();
    if discharge.day() - admit_day + 1 < config.min_los_days {
        return Ok(Verdict::ShortStay);
    }
    if let Some(prior) = meta.prior_positive_at {
        let gap = admit_day - prior.day();
        if (0..=config.prior_positive_days).contains(&gap) {
            return Ok(Verdict::PriorPositive);
        }
    }
    let outcome_day = match (meta.outcome_positive, meta.outcome_time) {
        (true, Some(t)) => Some(t.day() - admit_day + 1),
        (true, None) => {
            return Err(Error::Data(format!(
                "encounter {} is positive without an outcome time",
                meta.encounter_id
            )))
        }
        _ => None,
    };
    if outcome_day.is_some_and(|d| d <= config.early_positive_days) {
        return Ok(Verdict::EarlyPositive);
    }
    let last_day = match outcome_day {
        Some(d) if !config.score_post_outcome_days => Some(d as u32),
        _ => None,
    };
    Ok(Verdict::Keep { last_day })
}

/// Filters an extract to the study cohort and attaches encounter labels.
///
/// The outcome day itself is kept as a prediction day; later days of
/// positive encounters are dropped unless configured otherwise.
pub fn apply_inclusion(raw: &RawExtract, config: &InclusionConfig) -> Result<LabeledExtract> {
    let mut report = InclusionReport {
        encounters_in: raw.encounters.len(),
        ..InclusionReport::default()
    };
    let mut kept = Vec::new();
    let mut labels = BTreeMap::new();
    let mut last_days = BTreeMap::new();
    for meta in &raw.encounters {
        match judge(meta, config)? {
            Verdict::ShortStay => report.short_stay += 1,
            Verdict::EarlyPositive => report.early_positive += 1,
            Verdict::PriorPositive => report.prior_positive += 1,
            Verdict::Keep { last_day } => {
                kept.push(meta.clone());
                labels.insert(meta.encounter_id, meta.outcome_positive);
                if let Some(d) = last_day {
                    last_days.insert(meta.encounter_id, d);
                }
            }
        }
    }
    report.encounters_kept = kept.len();
    let known: BTreeSet<EncounterId> = raw.encounters.iter().map(|m| m.encounter_id).collect();
    let mut rows = Vec::new();
    for row in &raw.rows {
        if !known.contains(&row.encounter_id) {
            return Err(Error::Data(format!("row for encounter {} has no metadata", row.encounter_id)));
        }
        if !labels.contains_key(&row.encounter_id) {
            continue;
        }
        if last_days.get(&row.encounter_id).is_some_and(|&d| row.day_of_stay > d) {
            report.post_outcome_rows_dropped += 1;
            continue;
        }
        rows.push(row.clone());
    }
    Ok(LabeledExtract {
        extract: RawExtract { rows, encounters: kept },
        labels,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr_sim::RawDay;
    use crate::ids::{PatientId, Timestamp};
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn meta(id: u64, los_dates: i64) -> EncounterMeta {
        let admit = Timestamp::at(d("2020-03-01"), 10, 0);
        EncounterMeta {
            encounter_id: EncounterId(id),
            patient_id: PatientId(id),
            admit_at: Some(admit),
            discharge_at: Some(admit.plus_days(los_dates - 1)),
            outcome_positive: false,
            outcome_time: None,
            prior_positive_at: None,
        }
    }

    fn positive_on_day(mut m: EncounterMeta, day: i64) -> EncounterMeta {
        m.outcome_positive = true;
        m.outcome_time = Some(Timestamp::at(d("2020-03-01"), 12, 0).plus_days(day - 1));
        m
    }

    fn extract_of(metas: Vec<EncounterMeta>) -> RawExtract {
        let rows = metas
            .iter()
            .flat_map(|m| {
                let (a, b) = (m.admit_at.unwrap().day(), m.discharge_at.unwrap().day());
                (a..=b).map(move |day| RawDay {
                    encounter_id: m.encounter_id,
                    date: crate::ids::date_from_day_number(day),
                    day_of_stay: (day - a + 1) as u32,
                    values: Default::default(),
                })
            })
            .collect();
        RawExtract { rows, encounters: metas }
    }

    fn kept(m: EncounterMeta) -> bool {
        let x = apply_inclusion(&extract_of(vec![m]), &InclusionConfig::default()).unwrap();
        x.labels.len() == 1
    }

    #[test]
    fn length_of_stay_boundary() {
        assert!(!kept(meta(1, 2)));
        assert!(kept(meta(1, 3)));
    }

    #[test]
    fn early_positives_are_excluded() {
        assert!(!kept(positive_on_day(meta(1, 6), 1)));
        assert!(!kept(positive_on_day(meta(1, 6), 2)));
        assert!(kept(positive_on_day(meta(1, 6), 3)));
    }

    #[test]
    fn prior_positive_window_is_fourteen_days() {
        let admit = Timestamp::at(d("2020-03-01"), 10, 0);
        let mut m = meta(1, 5);
        m.prior_positive_at = Some(admit.plus_days(-14));
        assert!(!kept(m.clone()));
        m.prior_positive_at = Some(admit.plus_days(-15));
        assert!(kept(m));
    }

    #[test]
    fn post_outcome_days_are_dropped_but_outcome_day_kept() {
        let x = apply_inclusion(&extract_of(vec![positive_on_day(meta(1, 8), 4)]), &InclusionConfig::default()).unwrap();
        assert_eq!(x.extract.rows.iter().map(|r| r.day_of_stay).max(), Some(4));
        assert_eq!(x.report.post_outcome_rows_dropped, 4);
        assert!(x.labels[&EncounterId(1)]);
        let all = InclusionConfig {
            score_post_outcome_days: true,
            ..InclusionConfig::default()
        };
        let x = apply_inclusion(&extract_of(vec![positive_on_day(meta(1, 8), 4)]), &all).unwrap();
        assert_eq!(x.extract.rows.len(), 8);
    }

    #[test]
    fn missing_metadata_names_the_encounter() {
        let mut m = meta(42, 5);
        m.discharge_at = None;
        let raw = RawExtract {
            rows: vec![],
            encounters: vec![m],
        };
        match apply_inclusion(&raw, &InclusionConfig::default()) {
            Err(Error::MissingMetadata(id)) => assert_eq!(id, EncounterId(42)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inclusion_is_idempotent() {
        let raw = extract_of(vec![
            meta(1, 2),
            meta(2, 5),
            positive_on_day(meta(3, 9), 5),
            positive_on_day(meta(4, 9), 2),
        ]);
        let once = apply_inclusion(&raw, &InclusionConfig::default()).unwrap();
        let twice = apply_inclusion(&once.extract, &InclusionConfig::default()).unwrap();
        assert_eq!(once.extract, twice.extract);
        assert_eq!(once.labels, twice.labels);
    }
}
