//! Shipped simulator configurations.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::IteratorRandom;

use super::config::{
    DriftShift, GroupNoise, InfraNoise, KindWeights, LagRange, LosSpec, OutcomeSpec, Period, PipelineConfig,
    SimConfig, SIM_SCHEMA_VERSION,
};
use crate::featurize::taxonomy::{GroupKey, TaxonomySizes};
use crate::rng::{stream, tag};

/// Index of the retrospective validation period in the preset period list.
pub const DESK_RET_PERIOD: usize = 6;
/// Index of the prospective validation period in the preset period list.
pub const DESK_PRO_PERIOD: usize = 7;
/// Indices of the training years in the preset period list.
pub const DESK_TRAIN_PERIODS: [usize; 5] = [0, 1, 2, 3, 4];

const DESK_SEED: u64 = 20_200_710;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid preset date")
}

/// Five training calendar years, an extra validation year, the
/// retrospective validation year and the prospective year.
pub fn desk_periods() -> Vec<Period> {
    let mut periods: Vec<Period> = (2013..=2017)
        .map(|y| Period {
            start: date(y, 1, 1),
            end: date(y, 12, 31),
        })
        .collect();
    for y in 2018..=2020 {
        periods.push(Period {
            start: date(y, 7, 10),
            end: date(y + 1, 6, 30),
        });
    }
    periods
}

/// Deterministic choice of `n` outage dates inside a period.
pub fn pick_outage_days(seed: u64, period: &Period, n: usize) -> BTreeSet<NaiveDate> {
    let mut rng = stream(seed, &[tag::OUTAGES]);
    period.start.iter_days().take_while(|d| *d <= period.end).choose_multiple(&mut rng, n).into_iter().collect()
}

fn noise(revision_rate: f64, backdate_prob: f64, entry_lag_minutes: [i64; 2]) -> GroupNoise {
    GroupNoise {
        revision_rate,
        backdate_prob,
        entry_lag_minutes,
        ..GroupNoise::default()
    }
}

impl SimConfig {
    /// Desk-scale configuration with paper-like recording noise: medications
    /// and locations are the noisiest groups, demographics almost static.
    /// The prospective period has 10 outage days and mild temporal drift.
    pub fn desk() -> Self {
        let periods = desk_periods();
        let groups = [
            (GroupKey::Demographics, noise(0.005, 0.0, [0, 0])),
            (GroupKey::HxDiagnoses, noise(0.03, 0.05, [0, 0])),
            (GroupKey::HxMedications, noise(0.05, 0.05, [0, 0])),
            (GroupKey::AdmissionDetails, noise(0.05, 0.0, [0, 30])),
            (GroupKey::InHospitalLocations, noise(0.12, 0.1, [0, 120])),
            (GroupKey::VitalSigns, noise(0.02, 0.0, [0, 60])),
            (GroupKey::LaboratoryResults, noise(0.03, 0.02, [30, 360])),
            (GroupKey::IdxMedications, noise(0.2, 0.15, [0, 240])),
        ]
        .into_iter()
        .collect();
        let mut prospective = PipelineConfig::prospective();
        prospective.outage_days = pick_outage_days(DESK_SEED, &periods[DESK_PRO_PERIOD], 10);
        SimConfig {
            schema_version: SIM_SCHEMA_VERSION,
            seed: DESK_SEED,
            n_encounters: 2000,
            periods,
            taxonomy: TaxonomySizes::default(),
            outcome: OutcomeSpec::default(),
            temporal_drift: vec![
                DriftShift {
                    period: DESK_RET_PERIOD,
                    group: GroupKey::HxDiagnoses,
                    multiplier: 1.2,
                    fraction: 0.2,
                },
                DriftShift {
                    period: DESK_PRO_PERIOD,
                    group: GroupKey::HxDiagnoses,
                    multiplier: 1.3,
                    fraction: 0.3,
                },
                DriftShift {
                    period: DESK_PRO_PERIOD,
                    group: GroupKey::IdxMedications,
                    multiplier: 1.25,
                    fraction: 0.2,
                },
            ],
            infra_noise: InfraNoise {
                groups,
                class_flip_prob: 0.03,
                class_flip_delay_days: [1.0, 14.0],
                outpatient_rate: 0.03,
            },
            los: LosSpec::default(),
            retrospective: PipelineConfig::retrospective(),
            prospective,
            settle_days: 30,
        }
    }

    /// No recording noise, no drift, and two identical pipelines.
    pub fn zero_noise() -> Self {
        let mut c = SimConfig::desk();
        c.infra_noise = InfraNoise::default();
        c.temporal_drift.clear();
        c.prospective = c.retrospective.clone();
        c
    }

    /// Revision noise on index-encounter medications only, no drift, no
    /// class-code noise, no outages and no retrospective arrival lag.
    pub fn planted_medication_noise() -> Self {
        let mut c = SimConfig::desk();
        c.temporal_drift.clear();
        c.infra_noise = InfraNoise {
            groups: [(
                GroupKey::IdxMedications,
                GroupNoise {
                    revision_rate: 1.0,
                    kind_weights: KindWeights {
                        update: 0.0,
                        backdate: 0.0,
                        cancel: 1.0,
                    },
                    backdate_prob: 0.6,
                    ..GroupNoise::default()
                },
            )]
            .into_iter()
            .collect(),
            ..InfraNoise::default()
        };
        c.prospective.outage_days.clear();
        c.prospective.extraction_lag = LagRange {
            min_minutes: 0,
            max_minutes: 6 * 60,
        };
        // Otherwise stays running past `as_of` lose their last week in D_ret′.
        c.retrospective.extraction_lag = LagRange {
            min_minutes: 0,
            max_minutes: 0,
        };
        // Large enough for independently resampled gap intervals to resolve
        // the infrastructure effect.
        c.n_encounters = 8000;
        c.outcome.prevalence = 0.08;
        c.outcome.group_scale.insert(GroupKey::IdxMedications, 2.0);
        c
    }
}
