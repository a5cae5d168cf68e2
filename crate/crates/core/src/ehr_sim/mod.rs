//! Synthetic hospital event stream and the two extraction pipelines.
//!
//! [`generate_truth`] produces encounters whose clinical facts are stored as
//! [`EventRecord`]s: each record has the time it happened, the time it was
//! entered into the record system, and any later revisions. [`extract`]
//! replays those records through a [`PipelineConfig`]: the prospective
//! pipeline takes a snapshot every morning and is blind to later revisions,
//! while the retrospective pipeline reads the settled values long after
//! discharge. The same population run through both pipelines gives the
//! paired datasets used to separate infrastructure shift from temporal
//! shift.

mod config;
mod pipeline;
mod presets;
mod truth;
mod world;

use serde::{Deserialize, Serialize};

use crate::ids::{EncounterId, FeatureId, PatientId, Timestamp};

pub use config::{
    CohortSource, DriftShift, GroupNoise, InfraNoise, KindWeights, LagRange, LosSpec, OutcomeSpec,
    Period, PipelineConfig, PipelineMode, SimConfig, TrueWeight, SIM_SCHEMA_VERSION,
};
pub use pipeline::{
    build_paired_period, build_retrospective_period, extract, extract_cohort, read_extract,
    select_cohort, write_extract, EncounterMeta, PairedPeriod, RawDay, RawExtract,
};
pub use presets::{desk_periods, pick_outage_days, DESK_PRO_PERIOD, DESK_RET_PERIOD, DESK_TRAIN_PERIODS};
pub use truth::generate_truth;
pub use world::World;

/// Payload of a clinical fact.
///
/// Serialized untagged: category codes as JSON integers, measurements as
/// JSON floats (always written with a fractional part).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Cat(u32),
    Num(f64),
}

impl Value {
    pub const PRESENT: Value = Value::Cat(1);

    pub fn as_num(self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_cat(self) -> Option<u32> {
        match self {
            Value::Cat(c) => Some(c),
            Value::Num(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionKind {
    /// A real change: the new value holds from the revision time onward.
    Update,
    /// A correction that replaces the value retroactively.
    Backdate,
    /// Retroactive removal of the record.
    Cancel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub revised_at: Timestamp,
    pub new_value: Option<Value>,
    pub kind: RevisionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub encounter_id: EncounterId,
    pub feature_id: FeatureId,
    pub occurred_at: Timestamp,
    pub entered_at: Timestamp,
    pub value: Value,
    pub revisions: Vec<RevisionRecord>,
}

impl EventRecord {
    /// Checks the record invariants: entry not before occurrence, revisions
    /// strictly increasing after entry, and nothing after a cancel.
    pub fn is_well_formed(&self) -> bool {
        if self.entered_at < self.occurred_at {
            return false;
        }
        let mut last = self.entered_at;
        for (i, r) in self.revisions.iter().enumerate() {
            if r.revised_at <= last {
                return false;
            }
            if r.kind == RevisionKind::Cancel && i + 1 != self.revisions.len() {
                return false;
            }
            last = r.revised_at;
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassCode {
    Inpatient,
    Outpatient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterTruth {
    pub encounter_id: EncounterId,
    pub patient_id: PatientId,
    pub admit_at: Timestamp,
    pub discharge_at: Timestamp,
    /// Class code changes in time order; the first entry is at admission.
    pub class_code_history: Vec<(Timestamp, ClassCode)>,
    pub census_intervals: Vec<(Timestamp, Timestamp)>,
    pub outcome_positive: bool,
    pub outcome_time: Option<Timestamp>,
    /// Positive test before this admission, if any.
    pub prior_positive_at: Option<Timestamp>,
    pub events: Vec<EventRecord>,
}

impl EncounterTruth {
    /// Number of calendar dates touched by the stay.
    pub fn los_calendar_days(&self) -> i64 {
        self.discharge_at.day() - self.admit_at.day() + 1
    }

    pub fn class_code_at(&self, t: Timestamp) -> Option<ClassCode> {
        self.class_code_history
            .iter()
            .take_while(|(ts, _)| *ts <= t)
            .last()
            .map(|(_, c)| *c)
    }

    pub fn meta(&self) -> EncounterMeta {
        EncounterMeta {
            encounter_id: self.encounter_id,
            patient_id: self.patient_id,
            admit_at: Some(self.admit_at),
            discharge_at: Some(self.discharge_at),
            outcome_positive: self.outcome_positive,
            outcome_time: self.outcome_time,
            prior_positive_at: self.prior_positive_at,
        }
    }
}
