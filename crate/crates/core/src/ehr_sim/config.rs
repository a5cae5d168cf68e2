use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::taxonomy::{GroupKey, TaxonomySizes};
use crate::ids::{FeatureId, Timestamp, MINUTES_PER_DAY};

pub const SIM_SCHEMA_VERSION: u32 = 1;

/// Admission window of one simulated period; both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }

    pub fn start_at(&self) -> Timestamp {
        Timestamp::from_date(self.start)
    }

    /// First minute after the period.
    pub fn end_at(&self) -> Timestamp {
        Timestamp::from_date(self.end).plus_days(1)
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Retrospective,
    Prospective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortSource {
    ClassCodes,
    Census,
}

/// Uniform extraction delay, in minutes, between entry and availability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagRange {
    pub min_minutes: i64,
    pub max_minutes: i64,
}

impl LagRange {
    pub const ZERO: LagRange = LagRange {
        min_minutes: 0,
        max_minutes: 0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub extraction_lag: LagRange,
    pub sees_revisions_after_extraction: bool,
    pub cohort_source: CohortSource,
    #[serde(default)]
    pub outage_days: BTreeSet<NaiveDate>,
    /// Minutes after midnight at which the prospective run for the previous
    /// calendar day takes its snapshot.
    pub daily_cutoff_minutes: i64,
    /// Seed for the per-record extraction delays.
    pub seed: u64,
}

impl PipelineConfig {
    /// Research-warehouse style: settled data, 1 to 7 days behind, patient
    /// class codes for cohort identification.
    pub fn retrospective() -> Self {
        PipelineConfig {
            mode: PipelineMode::Retrospective,
            extraction_lag: LagRange {
                min_minutes: MINUTES_PER_DAY,
                max_minutes: 7 * MINUTES_PER_DAY,
            },
            sees_revisions_after_extraction: true,
            cohort_source: CohortSource::ClassCodes,
            outage_days: BTreeSet::new(),
            daily_cutoff_minutes: 6 * 60,
            seed: 0x5245_5452,
        }
    }

    /// Near-real-time style: at most 8 hours behind, daily morning snapshot,
    /// census-based cohort.
    pub fn prospective() -> Self {
        PipelineConfig {
            mode: PipelineMode::Prospective,
            extraction_lag: LagRange {
                min_minutes: 0,
                max_minutes: 8 * 60,
            },
            sees_revisions_after_extraction: false,
            cohort_source: CohortSource::Census,
            outage_days: BTreeSet::new(),
            daily_cutoff_minutes: 6 * 60,
            seed: 0x5052_4f53,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let lag = self.extraction_lag;
        if lag.min_minutes < 0 || lag.max_minutes < lag.min_minutes {
            return Err(Error::config(
                format!("{path}.extraction_lag"),
                "need 0 <= min_minutes <= max_minutes",
            ));
        }
        if !(0..MINUTES_PER_DAY).contains(&self.daily_cutoff_minutes) {
            return Err(Error::config(
                format!("{path}.daily_cutoff_minutes"),
                "must be within one day",
            ));
        }
        let expected = match self.mode {
            PipelineMode::Retrospective => CohortSource::ClassCodes,
            PipelineMode::Prospective => CohortSource::Census,
        };
        if self.cohort_source != expected {
            log::warn!(
                "{path}: {:?} pipeline uses {:?} cohort source (override)",
                self.mode,
                self.cohort_source
            );
        }
        Ok(())
    }
}

/// Relative frequency of each revision kind once a record is revised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindWeights {
    pub update: f64,
    pub backdate: f64,
    pub cancel: f64,
}

impl Default for KindWeights {
    fn default() -> Self {
        KindWeights {
            update: 0.3,
            backdate: 0.4,
            cancel: 0.3,
        }
    }
}

/// Recording noise for one feature group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupNoise {
    /// Probability that a record is revised after entry.
    pub revision_rate: f64,
    pub kind_weights: KindWeights,
    /// Hours between entry and revision, uniform.
    pub revision_delay_hours: [f64; 2],
    /// Minutes between occurrence and entry, uniform.
    pub entry_lag_minutes: [i64; 2],
    /// Probability of a late entry stamped with the earlier occurrence time.
    pub backdate_prob: f64,
    /// Hours of delay for such late entries, uniform.
    pub backdate_delay_hours: [f64; 2],
}

impl Default for GroupNoise {
    fn default() -> Self {
        GroupNoise {
            revision_rate: 0.0,
            kind_weights: KindWeights::default(),
            revision_delay_hours: [12.0, 96.0],
            entry_lag_minutes: [0, 0],
            backdate_prob: 0.0,
            backdate_delay_hours: [24.0, 72.0],
        }
    }
}

impl GroupNoise {
    pub fn is_zero(&self) -> bool {
        self.revision_rate == 0.0 && self.backdate_prob == 0.0 && self.entry_lag_minutes == [0, 0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfraNoise {
    /// Noise per group; a record uses the entry of its nearest ancestor.
    pub groups: BTreeMap<GroupKey, GroupNoise>,
    /// Probability that an encounter's class code flips after discharge.
    pub class_flip_prob: f64,
    /// Days after discharge at which a flip lands, uniform.
    pub class_flip_delay_days: [f64; 2],
    /// Probability that the admission class code is not inpatient.
    pub outpatient_rate: f64,
}

impl Default for InfraNoise {
    fn default() -> Self {
        InfraNoise {
            groups: BTreeMap::new(),
            class_flip_prob: 0.0,
            class_flip_delay_days: [1.0, 14.0],
            outpatient_rate: 0.0,
        }
    }
}

impl InfraNoise {
    pub fn for_group(&self, leaf: GroupKey) -> Option<&GroupNoise> {
        leaf.ancestry().into_iter().find_map(|g| self.groups.get(&g))
    }
}

/// A nonzero coefficient in the outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueWeight {
    pub feature: FeatureId,
    /// For categorical features, the category the weight attaches to.
    #[serde(default)]
    pub category: Option<u32>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeSpec {
    /// Target fraction of positive encounters; the intercept is calibrated
    /// to it unless `intercept` is given.
    pub prevalence: f64,
    pub intercept: Option<f64>,
    /// Fraction of features in a weighted group that receive a coefficient.
    pub weight_density: f64,
    /// Coefficient scale per group; groups absent here carry no signal.
    pub group_scale: BTreeMap<GroupKey, f64>,
    /// Extra coefficients added to the generated ones.
    pub explicit_weights: Vec<TrueWeight>,
    /// Index-encounter facts count toward risk only if they occur within
    /// this many calendar days of admission.
    pub early_window_days: i64,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        let group_scale = [
            (GroupKey::Age, 0.4),
            (GroupKey::HistoryOfCdi, 1.5),
            (GroupKey::NumberOfPreviousEncounters, 0.3),
            (GroupKey::HxDiagnoses, 0.5),
            (GroupKey::HxMedications, 0.6),
            (GroupKey::EmergencyVisit, 0.2),
            (GroupKey::InHospitalLocations, 0.5),
            (GroupKey::LaboratoryResults, 0.3),
            (GroupKey::VitalSigns, 0.2),
            (GroupKey::IdxMedications, 1.0),
            (GroupKey::ColonizationUnit, 0.3),
        ]
        .into_iter()
        .collect();
        OutcomeSpec {
            prevalence: 0.007,
            intercept: None,
            weight_density: 0.3,
            group_scale,
            explicit_weights: Vec::new(),
            early_window_days: 2,
        }
    }
}

/// Multiplies presence prevalence for a fraction of a group's features in
/// one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftShift {
    pub period: usize,
    pub group: GroupKey,
    pub multiplier: f64,
    #[serde(default = "one")]
    pub fraction: f64,
}

fn one() -> f64 {
    1.0
}

/// Length of stay, log-normal in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosSpec {
    pub median_days: f64,
    pub sigma: f64,
    pub max_days: f64,
}

impl Default for LosSpec {
    fn default() -> Self {
        LosSpec {
            median_days: 5.0,
            sigma: 0.6,
            max_days: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub n_encounters: u32,
    pub periods: Vec<Period>,
    #[serde(default)]
    pub taxonomy: TaxonomySizes,
    #[serde(default)]
    pub outcome: OutcomeSpec,
    #[serde(default)]
    pub temporal_drift: Vec<DriftShift>,
    #[serde(default)]
    pub infra_noise: InfraNoise,
    #[serde(default)]
    pub los: LosSpec,
    pub retrospective: PipelineConfig,
    pub prospective: PipelineConfig,
    /// Days after a period ends at which it is re-extracted retrospectively.
    pub settle_days: i64,
}

impl SimConfig {
    pub fn period(&self, index: usize) -> Result<Period> {
        self.periods.get(index).copied().ok_or_else(|| {
            Error::config(
                "sim.periods",
                format!("period index {index} out of range ({} periods)", self.periods.len()),
            )
        })
    }

    /// Retrospective snapshot time for a period.
    pub fn as_of(&self, index: usize) -> Result<Timestamp> {
        Ok(self.period(index)?.end_at().plus_days(self.settle_days))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SIM_SCHEMA_VERSION {
            return Err(Error::config(
                "sim.schema_version",
                format!("expected {SIM_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let rate = |path: String, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(path, format!("rate {v} outside [0, 1]")))
            }
        };
        let range = |path: String, lo: f64, hi: f64| -> Result<()> {
            if lo >= 0.0 && lo <= hi && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("need 0 <= {lo} <= {hi}")))
            }
        };
        for (i, p) in self.periods.iter().enumerate() {
            if p.end < p.start {
                return Err(Error::config(format!("sim.periods[{i}]"), "end before start"));
            }
        }
        let mut sorted: Vec<Period> = self.periods.clone();
        sorted.sort_by_key(|p| p.start);
        for w in sorted.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::config("sim.periods", "periods overlap"));
            }
        }
        rate("sim.outcome.prevalence".into(), self.outcome.prevalence)?;
        rate("sim.outcome.weight_density".into(), self.outcome.weight_density)?;
        if self.outcome.early_window_days < 1 {
            return Err(Error::config("sim.outcome.early_window_days", "must be positive"));
        }
        let noise = &self.infra_noise;
        rate("sim.infra_noise.class_flip_prob".into(), noise.class_flip_prob)?;
        rate("sim.infra_noise.outpatient_rate".into(), noise.outpatient_rate)?;
        range(
            "sim.infra_noise.class_flip_delay_days".into(),
            noise.class_flip_delay_days[0],
            noise.class_flip_delay_days[1],
        )?;
        for (g, n) in &noise.groups {
            let key = serde_json::to_value(g)?;
            let base = format!("sim.infra_noise.groups.{}", key.as_str().unwrap_or("?"));
            rate(format!("{base}.revision_rate"), n.revision_rate)?;
            rate(format!("{base}.backdate_prob"), n.backdate_prob)?;
            let w = n.kind_weights;
            if w.update < 0.0 || w.backdate < 0.0 || w.cancel < 0.0 {
                return Err(Error::config(format!("{base}.kind_weights"), "weights must be non-negative"));
            }
            range(
                format!("{base}.revision_delay_hours"),
                n.revision_delay_hours[0],
                n.revision_delay_hours[1],
            )?;
            range(
                format!("{base}.backdate_delay_hours"),
                n.backdate_delay_hours[0],
                n.backdate_delay_hours[1],
            )?;
            range(
                format!("{base}.entry_lag_minutes"),
                n.entry_lag_minutes[0] as f64,
                n.entry_lag_minutes[1] as f64,
            )?;
        }
        for (i, d) in self.temporal_drift.iter().enumerate() {
            if d.period >= self.periods.len() {
                return Err(Error::config(format!("sim.temporal_drift[{i}].period"), "unknown period"));
            }
            if !(d.multiplier >= 0.0 && d.multiplier.is_finite()) {
                return Err(Error::config(format!("sim.temporal_drift[{i}].multiplier"), "must be >= 0"));
            }
            rate(format!("sim.temporal_drift[{i}].fraction"), d.fraction)?;
        }
        let los = self.los;
        if !(los.median_days > 0.0 && los.sigma >= 0.0 && los.max_days > 0.0) {
            return Err(Error::config("sim.los", "median_days and max_days must be positive"));
        }
        if self.settle_days < 0 {
            return Err(Error::config("sim.settle_days", "must be non-negative"));
        }
        self.retrospective.validate("sim.retrospective")?;
        self.prospective.validate("sim.prospective")?;
        Ok(())
    }
}
