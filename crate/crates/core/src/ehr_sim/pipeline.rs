//! Replays encounter records through an extraction pipeline.
//!
//! A record reaches a pipeline `lag` minutes after it was entered, with the
//! lag drawn per record from the pipeline's seed. Each encounter-day row
//! holds, per feature, the value of the latest record that occurred before
//! the end of that day and had arrived by the snapshot time. Prospective
//! snapshots for day D are taken at the daily cutoff on D+1, for days whose
//! snapshot precedes `as_of`; retrospective snapshots are taken once, at
//! `as_of`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CohortSource, PipelineConfig, PipelineMode, SimConfig};
use super::truth::generate_truth;
use super::{ClassCode, EncounterTruth, EventRecord, RevisionKind, Value};
use crate::error::{Error, Result};
use crate::ids::{date_from_day_number, EncounterId, FeatureId, PatientId, Timestamp, MINUTES_PER_DAY};
use crate::rng::{stream, tag};

/// Admission and outcome metadata that travels with an extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterMeta {
    pub encounter_id: EncounterId,
    pub patient_id: PatientId,
    pub admit_at: Option<Timestamp>,
    pub discharge_at: Option<Timestamp>,
    pub outcome_positive: bool,
    pub outcome_time: Option<Timestamp>,
    pub prior_positive_at: Option<Timestamp>,
}

/// Values visible to one pipeline for one encounter-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDay {
    pub encounter_id: EncounterId,
    pub date: NaiveDate,
    /// 1 on the admission calendar day.
    pub day_of_stay: u32,
    pub values: BTreeMap<FeatureId, Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawExtract {
    pub rows: Vec<RawDay>,
    pub encounters: Vec<EncounterMeta>,
}

impl RawExtract {
    pub fn encounter_ids(&self) -> BTreeSet<EncounterId> {
        self.encounters.iter().map(|m| m.encounter_id).collect()
    }
}

/// The prospective extract of a period and its retrospective re-extraction
/// over the same encounters.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPeriod {
    pub pro: RawExtract,
    pub ret_prime: RawExtract,
}

fn day_start(day: i64) -> Timestamp {
    Timestamp(day * MINUTES_PER_DAY)
}

fn census_days(e: &EncounterTruth, as_of: Timestamp) -> BTreeSet<i64> {
    let mut days = BTreeSet::new();
    for &(start, end) in &e.census_intervals {
        if start >= as_of {
            continue;
        }
        let last = if end < as_of { end.day() } else { as_of.plus_minutes(-1).day() };
        days.extend(start.day()..=last);
    }
    days
}

fn in_cohort(e: &EncounterTruth, source: CohortSource, as_of: Timestamp) -> bool {
    match source {
        CohortSource::Census => census_days(e, as_of).len() >= 3,
        CohortSource::ClassCodes => e.class_code_at(as_of) == Some(ClassCode::Inpatient),
    }
}

/// Encounters a pipeline would identify as hospitalized, judged at `as_of`.
pub fn select_cohort(truth: &[EncounterTruth], pipeline: &PipelineConfig, as_of: Timestamp) -> BTreeSet<EncounterId> {
    truth
        .iter()
        .filter(|e| in_cohort(e, pipeline.cohort_source, as_of))
        .map(|e| e.encounter_id)
        .collect()
}

/// Runs `pipeline` over its own cohort.
pub fn extract(truth: &[EncounterTruth], pipeline: &PipelineConfig, as_of: Timestamp) -> Result<RawExtract> {
    if let Some(first) = truth.iter().map(|e| e.admit_at).min() {
        if as_of < first {
            return Err(Error::TemporalBounds(format!(
                "as_of {as_of} precedes the first admission {first}"
            )));
        }
    }
    if pipeline.mode == PipelineMode::Retrospective {
        if let Some(last) = truth.iter().map(|e| e.admit_at).max() {
            if as_of < last {
                return Err(Error::TemporalBounds(format!(
                    "retrospective as_of {as_of} precedes admission at {last}"
                )));
            }
        }
    }
    let cohort = select_cohort(truth, pipeline, as_of);
    Ok(extract_cohort(truth, pipeline, as_of, &cohort))
}

/// Runs `pipeline` over a fixed encounter set, ignoring its cohort source.
pub fn extract_cohort(
    truth: &[EncounterTruth],
    pipeline: &PipelineConfig,
    as_of: Timestamp,
    cohort: &BTreeSet<EncounterId>,
) -> RawExtract {
    let selected: Vec<&EncounterTruth> = truth.iter().filter(|e| cohort.contains(&e.encounter_id)).collect();
    let rows = selected
        .par_iter()
        .map(|e| encounter_rows(e, pipeline, as_of))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    RawExtract {
        rows,
        encounters: selected.iter().map(|e| e.meta()).collect(),
    }
}

struct Arrived<'a> {
    record: &'a EventRecord,
    index: usize,
    arrives_at: Timestamp,
    lag: i64,
}

fn encounter_rows(e: &EncounterTruth, pipeline: &PipelineConfig, as_of: Timestamp) -> Vec<RawDay> {
    let mut rng = stream(pipeline.seed, &[tag::PIPELINE_LAG, e.encounter_id.0]);
    let lag = pipeline.extraction_lag;
    let records: Vec<Arrived> = e
        .events
        .iter()
        .enumerate()
        .map(|(index, record)| {
            let lag = rng.random_range(lag.min_minutes..=lag.max_minutes);
            Arrived {
                record,
                index,
                arrives_at: record.entered_at.plus_minutes(lag),
                lag,
            }
        })
        .collect();

    let admit_day = e.admit_at.day();
    let mut rows = Vec::new();
    for day in admit_day..=e.discharge_at.day() {
        if day_start(day) >= as_of {
            break;
        }
        let date = date_from_day_number(day);
        let day_end = day_start(day + 1);
        let arrival_horizon = match pipeline.mode {
            PipelineMode::Prospective => {
                let snapshot = day_end.plus_minutes(pipeline.daily_cutoff_minutes);
                // Days whose snapshot falls after `as_of` were never scored.
                if snapshot > as_of {
                    break;
                }
                if pipeline.outage_days.contains(&date) {
                    continue;
                }
                snapshot
            }
            PipelineMode::Retrospective => as_of,
        };
        let revision_horizon = if pipeline.sees_revisions_after_extraction {
            as_of
        } else {
            arrival_horizon
        };
        let mut latest: BTreeMap<FeatureId, (Timestamp, usize, Value)> = BTreeMap::new();
        for a in &records {
            let r = a.record;
            if r.occurred_at >= day_end || a.arrives_at > arrival_horizon {
                continue;
            }
            let Some(value) = value_on_day(r, a.lag, day_end, revision_horizon) else {
                continue;
            };
            let key = (r.occurred_at, a.index);
            match latest.get(&r.feature_id) {
                Some(&(t, i, _)) if (t, i) > key => {}
                _ => {
                    latest.insert(r.feature_id, (r.occurred_at, a.index, value));
                }
            }
        }
        rows.push(RawDay {
            encounter_id: e.encounter_id,
            date,
            day_of_stay: (day - admit_day + 1) as u32,
            values: latest.into_iter().map(|(f, (_, _, v))| (f, v)).collect(),
        });
    }
    rows
}

/// Value of a record for a day ending at `day_end`, given the revisions that
/// reached the pipeline by `horizon`; `None` once cancelled.
fn value_on_day(r: &EventRecord, lag: i64, day_end: Timestamp, horizon: Timestamp) -> Option<Value> {
    let mut value = r.value;
    for rev in &r.revisions {
        if rev.revised_at.plus_minutes(lag) > horizon {
            break;
        }
        match rev.kind {
            RevisionKind::Update => {
                if rev.revised_at < day_end {
                    value = rev.new_value.unwrap_or(value);
                }
            }
            RevisionKind::Backdate => value = rev.new_value.unwrap_or(value),
            RevisionKind::Cancel => return None,
        }
    }
    Some(value)
}

/// D_ret style extract: the retrospective pipeline over its own cohort,
/// `settle_days` after the period ends.
pub fn build_retrospective_period(config: &SimConfig, period_index: usize) -> Result<RawExtract> {
    let truth = generate_truth(config, period_index)?;
    extract(&truth, &config.retrospective, config.as_of(period_index)?)
}

/// D_pro and D_ret′: the prospective extract, and the retrospective pipeline
/// pulling exactly the prospective encounter set.
pub fn build_paired_period(config: &SimConfig, period_index: usize) -> Result<PairedPeriod> {
    let truth = generate_truth(config, period_index)?;
    let as_of = config.as_of(period_index)?;
    let pro = extract(&truth, &config.prospective, as_of)?;
    let ret_prime = extract_cohort(&truth, &config.retrospective, as_of, &pro.encounter_ids());
    Ok(PairedPeriod { pro, ret_prime })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::read(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::DataAt {
            file: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Writes one encounter-day per line to `rows_path` and one encounter per
/// line to `meta_path`.
pub fn write_extract(extract: &RawExtract, rows_path: &Path, meta_path: &Path) -> Result<()> {
    write_jsonl(rows_path, &extract.rows)?;
    write_jsonl(meta_path, &extract.encounters)
}

pub fn read_extract(rows_path: &Path, meta_path: &Path) -> Result<RawExtract> {
    Ok(RawExtract {
        rows: read_jsonl(rows_path)?,
        encounters: read_jsonl(meta_path)?,
    })
}
