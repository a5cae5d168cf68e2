//! Ground-truth encounter generation.
//!
//! Each encounter is drawn in two layers. The clinical layer (truth stream)
//! decides what actually happened: demographics, history, stay length,
//! locations, measurements, medications and the outcome. The recording layer
//! (noise stream) decides how those facts reached the record system: entry
//! delays, late backdated entries and revisions. The outcome depends only on
//! the clinical layer, so recording noise corrupts features but never labels.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use rayon::prelude::*;

use super::config::SimConfig;
use super::world::{FeatureParams, World};
use super::{ClassCode, EncounterTruth, EventRecord, RevisionKind, RevisionRecord, Value};
use crate::error::Result;
use crate::featurize::taxonomy::{FeatureKind, GroupKey};
use crate::ids::{EncounterId, FeatureId, PatientId, Timestamp, MINUTES_PER_DAY};
use crate::rng::{stream, tag, StreamRng};
use crate::stats::sigmoid;

#[derive(Debug, Clone)]
pub(crate) struct TrueRecord {
    pub feature: FeatureId,
    pub occurred_at: Timestamp,
    pub value: Value,
}

#[derive(Debug, Clone)]
pub(crate) struct Latent {
    pub admit_at: Timestamp,
    pub discharge_at: Timestamp,
    pub prior_positive_at: Option<Timestamp>,
    pub records: Vec<TrueRecord>,
}

/// Encounters of one period. Deterministic in `(config.seed, period_index)`;
/// encounters are generated independently and may be produced in parallel.
pub fn generate_truth(config: &SimConfig, period_index: usize) -> Result<Vec<EncounterTruth>> {
    config.period(period_index)?;
    let world = World::build(config)?;
    (0..u64::from(config.n_encounters))
        .into_par_iter()
        .map(|i| generate_encounter(&world, config, period_index, i))
        .collect()
}

pub(crate) fn encounter_id(period_index: usize, i: u64) -> EncounterId {
    EncounterId((period_index as u64 + 1) * 10_000_000 + i)
}

fn generate_encounter(world: &World, config: &SimConfig, period_index: usize, i: u64) -> Result<EncounterTruth> {
    let p = period_index as u64;
    let mut rng = stream(config.seed, &[tag::TRUTH, p, i]);
    let latent = draw_latent(world, config, period_index, &mut rng)?;
    let risk = risk_score(world, config, &latent);
    let positive = rng.random::<f64>() < sigmoid(world.intercept + risk);
    let span = latent.discharge_at.0 - latent.admit_at.0;
    let outcome_time = positive.then(|| latent.admit_at.plus_minutes(rng.random_range(0..=span)));
    let patient_id = PatientId(rng.random::<u64>() >> 20);

    let encounter_id = encounter_id(period_index, i);
    let mut noise_rng = stream(config.seed, &[tag::NOISE, p, i]);
    let class_code_history = draw_class_codes(config, &latent, &mut noise_rng);
    let events = record_events(world, config, encounter_id, &latent.records, &mut noise_rng);

    Ok(EncounterTruth {
        encounter_id,
        patient_id,
        admit_at: latent.admit_at,
        discharge_at: latent.discharge_at,
        class_code_history,
        census_intervals: vec![(latent.admit_at, latent.discharge_at)],
        outcome_positive: positive,
        outcome_time,
        prior_positive_at: latent.prior_positive_at,
        events,
    })
}

fn categorical(rng: &mut StreamRng, probs: &[f64]) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u32;
        }
    }
    probs.len().saturating_sub(1) as u32
}

fn weighted_index(rng: &mut StreamRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

fn normal(rng: &mut StreamRng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd.max(1e-12)).expect("finite normal").sample(rng)
}

pub(crate) fn draw_latent(
    world: &World,
    config: &SimConfig,
    period_index: usize,
    rng: &mut StreamRng,
) -> Result<Latent> {
    let period = config.period(period_index)?;
    let tax = &world.taxonomy;
    let admit_at = period
        .start_at()
        .plus_days(rng.random_range(0..period.days()))
        .plus_minutes(rng.random_range(0..MINUTES_PER_DAY));
    let los = &config.los;
    let los_days = LogNormal::new(los.median_days.ln(), los.sigma.max(1e-9))
        .expect("valid log-normal")
        .sample(rng)
        .clamp(0.05, los.max_days);
    let stay_minutes = ((los_days * MINUTES_PER_DAY as f64).round() as i64).max(60);
    let discharge_at = admit_at.plus_minutes(stay_minutes);

    let mut records = Vec::new();
    let mut push = |feature: FeatureId, occurred_at: Timestamp, value: Value| {
        records.push(TrueRecord {
            feature,
            occurred_at,
            value,
        })
    };
    let ids = |g: GroupKey| -> Vec<FeatureId> { tax.features.iter().filter(|f| f.group == g).map(|f| f.id).collect() };
    let numeric = |id: FeatureId| match world.param(id) {
        FeatureParams::Numeric { mean, sd } => (*mean, *sd),
        _ => (0.0, 1.0),
    };
    let probs = |id: FeatureId| match world.param(id) {
        FeatureParams::Categorical { probs } => probs.clone(),
        _ => vec![1.0],
    };

    // Demographics, recorded at admission.
    for id in ids(GroupKey::Age) {
        let (m, s) = numeric(id);
        push(id, admit_at, Value::Num(normal(rng, m, s).clamp(18.0, 100.0).round()));
    }
    for g in [GroupKey::Gender, GroupKey::Race, GroupKey::MaritalStatus, GroupKey::CountyState] {
        for id in ids(g) {
            let c = categorical(rng, &probs(id));
            push(id, admit_at, Value::Cat(c));
        }
    }
    for id in ids(GroupKey::BodyMassIndex) {
        let (m, s) = numeric(id);
        let bmi = (normal(rng, m, s).clamp(14.0, 60.0) * 10.0).round() / 10.0;
        push(id, admit_at, Value::Num(bmi));
    }

    // History from earlier encounters.
    let mut prior_positive_at = None;
    for id in ids(GroupKey::HistoryOfCdi) {
        if rng.random::<f64>() < world.prevalence(config, period_index, id) {
            let t = admit_at.plus_minutes(-rng.random_range(MINUTES_PER_DAY..365 * MINUTES_PER_DAY));
            push(id, t, Value::PRESENT);
            if rng.random::<f64>() < 0.3 {
                prior_positive_at = Some(admit_at.plus_minutes(-rng.random_range(MINUTES_PER_DAY..90 * MINUTES_PER_DAY)));
            }
        }
    }
    let prev_count = Poisson::new(0.8).expect("valid poisson").sample(rng);
    for id in ids(GroupKey::NumberOfPreviousEncounters) {
        push(id, admit_at, Value::Num(prev_count));
    }
    for id in ids(GroupKey::PreviousLengthOfStay) {
        if prev_count > 0.0 {
            let v = LogNormal::new(4f64.ln(), 0.5).expect("valid").sample(rng);
            push(id, admit_at, Value::Num(v.round().max(1.0)));
        }
    }
    for g in [GroupKey::HxDiagnoses, GroupKey::HxMedications] {
        for id in ids(g) {
            if rng.random::<f64>() < world.prevalence(config, period_index, id) {
                let t = admit_at.plus_minutes(-rng.random_range(MINUTES_PER_DAY..90 * MINUTES_PER_DAY));
                push(id, t, Value::PRESENT);
            }
        }
    }

    // Index encounter.
    for g in [GroupKey::AdmissionType, GroupKey::PatientType, GroupKey::InsuranceType] {
        for id in ids(g) {
            let c = categorical(rng, &probs(id));
            push(id, admit_at, Value::Cat(c));
        }
    }
    for id in ids(GroupKey::EmergencyVisit) {
        if rng.random::<f64>() < world.prevalence(config, period_index, id) {
            push(id, admit_at, Value::PRESENT);
        }
    }

    let units = ids(GroupKey::InHospitalLocations);
    let mut unit_timeline: Vec<(Timestamp, usize)> = Vec::new();
    if !units.is_empty() {
        let unit_weights: Vec<f64> = units
            .iter()
            .map(|&id| world.prevalence(config, period_index, id))
            .collect();
        unit_timeline.push((admit_at, weighted_index(rng, &unit_weights)));
        let transfers = Poisson::new((los_days / 4.0).max(1e-6)).expect("valid").sample(rng) as usize;
        let mut times: Vec<i64> = (0..transfers).map(|_| rng.random_range(0..stay_minutes)).collect();
        times.sort_unstable();
        for t in times {
            unit_timeline.push((admit_at.plus_minutes(t), weighted_index(rng, &unit_weights)));
        }
        for &(t, u) in &unit_timeline {
            push(units[u], t, Value::PRESENT);
        }
    }

    let first_day = admit_at.day();
    let last_day = discharge_at.day();
    let within_day = |rng: &mut StreamRng, day: i64| -> Timestamp {
        let lo = admit_at.0.max(day * MINUTES_PER_DAY);
        let hi = discharge_at.0.min((day + 1) * MINUTES_PER_DAY);
        Timestamp(if hi > lo { rng.random_range(lo..hi) } else { lo })
    };
    for (g, daily_prob, offset_scale) in [(GroupKey::VitalSigns, 1.0, 0.5), (GroupKey::LaboratoryResults, 0.5, 0.7)] {
        for id in ids(g) {
            let (m, s) = numeric(id);
            let offset = normal(rng, 0.0, offset_scale * s);
            for day in first_day..=last_day {
                if rng.random::<f64>() < daily_prob {
                    let t = within_day(rng, day);
                    let v = normal(rng, m + offset, s);
                    push(id, t, Value::Num((v * 100.0).round() / 100.0));
                }
            }
        }
    }

    let start_delay = Exp::new(1.0).expect("valid exp");
    for id in ids(GroupKey::IdxMedications) {
        if rng.random::<f64>() < world.prevalence(config, period_index, id) {
            let mut offset = (start_delay.sample(rng) * MINUTES_PER_DAY as f64) as i64;
            if offset >= stay_minutes {
                offset = rng.random_range(0..stay_minutes);
            }
            push(id, admit_at.plus_minutes(offset), Value::PRESENT);
        }
    }

    let unit_at = |t: Timestamp| -> Option<usize> {
        unit_timeline.iter().take_while(|(s, _)| *s <= t).last().map(|(_, u)| *u)
    };
    for day in first_day..=last_day {
        let t = Timestamp(admit_at.0.max(day * MINUTES_PER_DAY));
        for id in ids(GroupKey::ColonizationUnit) {
            if let Some(u) = unit_at(t) {
                let v = world.unit_pressure[u] + normal(rng, 0.0, 0.1);
                push(id, t, Value::Num((v * 1000.0).round() / 1000.0));
            }
        }
        for id in ids(GroupKey::ColonizationHospital) {
            let season = (2.0 * std::f64::consts::PI * (day.rem_euclid(365) as f64) / 365.0).cos();
            let v = 0.5 + 0.2 * season + normal(rng, 0.0, 0.03);
            push(id, t, Value::Num((v * 1000.0).round() / 1000.0));
        }
    }

    Ok(Latent {
        admit_at,
        discharge_at,
        prior_positive_at,
        records,
    })
}

/// Linear predictor of the outcome model, without the intercept.
///
/// History and demographics always count; index-encounter facts count when
/// they occur within the early window after admission.
pub(crate) fn risk_score(world: &World, config: &SimConfig, latent: &Latent) -> f64 {
    let cutoff = Timestamp((latent.admit_at.day() + config.outcome.early_window_days) * MINUTES_PER_DAY);
    let mut first: Vec<Option<(Timestamp, Value)>> = vec![None; world.taxonomy.len()];
    for r in &latent.records {
        if r.occurred_at >= cutoff {
            continue;
        }
        let slot = &mut first[r.feature.0 as usize];
        if slot.is_none_or(|(t, _)| r.occurred_at < t) {
            *slot = Some((r.occurred_at, r.value));
        }
    }
    world
        .weights
        .iter()
        .map(|w| {
            let Some((_, value)) = first.get(w.feature.0 as usize).copied().flatten() else {
                return 0.0;
            };
            let x = match (world.taxonomy.feature(w.feature).kind, value) {
                (FeatureKind::Numeric, Value::Num(v)) => match world.param(w.feature) {
                    FeatureParams::Numeric { mean, sd } => (v - mean) / sd,
                    _ => 0.0,
                },
                (FeatureKind::Categorical { .. }, Value::Cat(c)) => f64::from(u8::from(Some(c) == w.category)),
                (FeatureKind::Presence, _) => 1.0,
                _ => 0.0,
            };
            w.weight * x
        })
        .sum()
}

fn draw_class_codes(config: &SimConfig, latent: &Latent, rng: &mut StreamRng) -> Vec<(Timestamp, ClassCode)> {
    let noise = &config.infra_noise;
    let initial = if rng.random::<f64>() < noise.outpatient_rate {
        ClassCode::Outpatient
    } else {
        ClassCode::Inpatient
    };
    let mut history = vec![(latent.admit_at, initial)];
    let flip: f64 = rng.random();
    let [lo, hi] = noise.class_flip_delay_days;
    let delay_days = lo + rng.random::<f64>() * (hi - lo);
    if flip < noise.class_flip_prob {
        let flipped = match initial {
            ClassCode::Inpatient => ClassCode::Outpatient,
            ClassCode::Outpatient => ClassCode::Inpatient,
        };
        let at = latent
            .discharge_at
            .plus_minutes(((delay_days * MINUTES_PER_DAY as f64) as i64).max(1));
        history.push((at, flipped));
    }
    history
}

fn uniform_hours_to_minutes(rng: &mut StreamRng, [lo, hi]: [f64; 2]) -> i64 {
    ((lo + rng.random::<f64>() * (hi - lo)) * 60.0).round() as i64
}

fn perturb(world: &World, feature: FeatureId, value: Value, rng: &mut StreamRng) -> Value {
    match (value, world.param(feature)) {
        (Value::Num(v), FeatureParams::Numeric { sd, .. }) => {
            let shifted = v + normal(rng, 0.0, *sd);
            Value::Num((shifted * 100.0).round() / 100.0)
        }
        (Value::Cat(c), FeatureParams::Categorical { probs }) if probs.len() > 1 => {
            let others: Vec<u32> = (0..probs.len() as u32).filter(|&k| k != c).collect();
            Value::Cat(*others.choose(rng).expect("at least one other category"))
        }
        (v, _) => v,
    }
}

/// Applies the recording layer to one encounter's true facts.
fn record_events(
    world: &World,
    config: &SimConfig,
    encounter_id: EncounterId,
    records: &[TrueRecord],
    rng: &mut StreamRng,
) -> Vec<EventRecord> {
    let tax = &world.taxonomy;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let feature = tax.feature(r.feature);
        let base = EventRecord {
            encounter_id,
            feature_id: r.feature,
            occurred_at: r.occurred_at,
            entered_at: r.occurred_at,
            value: r.value,
            revisions: Vec::new(),
        };
        let Some(noise) = config.infra_noise.for_group(feature.group).filter(|n| !n.is_zero()) else {
            out.push(base);
            continue;
        };
        let [lag_lo, lag_hi] = noise.entry_lag_minutes;
        let mut lag = rng.random_range(lag_lo..=lag_hi);
        if rng.random::<f64>() < noise.backdate_prob {
            lag = uniform_hours_to_minutes(rng, noise.backdate_delay_hours);
        }
        let entered_at = r.occurred_at.plus_minutes(lag.max(0));
        let mut record = EventRecord { entered_at, ..base };
        if rng.random::<f64>() >= noise.revision_rate {
            out.push(record);
            continue;
        }
        let revisable_value = match feature.kind {
            FeatureKind::Numeric => true,
            FeatureKind::Categorical { n_categories } => n_categories > 1,
            FeatureKind::Presence => false,
        };
        let w = noise.kind_weights;
        let kinds: Vec<(RevisionKind, f64)> = [
            (RevisionKind::Update, if revisable_value { w.update } else { 0.0 }),
            (RevisionKind::Backdate, if revisable_value { w.backdate } else { 0.0 }),
            (RevisionKind::Cancel, w.cancel),
        ]
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .collect();
        if kinds.is_empty() {
            out.push(record);
            continue;
        }
        let weights: Vec<f64> = kinds.iter().map(|(_, w)| *w).collect();
        let kind = kinds[weighted_index(rng, &weights)].0;
        let revised_at = entered_at.plus_minutes(uniform_hours_to_minutes(rng, noise.revision_delay_hours).max(1));
        match kind {
            RevisionKind::Update => {
                let new_value = perturb(world, r.feature, r.value, rng);
                record.revisions.push(RevisionRecord {
                    revised_at,
                    new_value: Some(new_value),
                    kind,
                });
                out.push(record);
            }
            RevisionKind::Backdate => {
                record.value = perturb(world, r.feature, r.value, rng);
                record.revisions.push(RevisionRecord {
                    revised_at,
                    new_value: Some(r.value),
                    kind,
                });
                out.push(record);
            }
            RevisionKind::Cancel => {
                // The true fact stands; an erroneous sibling entry is later cancelled.
                let (spurious_feature, spurious_value) = match feature.kind {
                    FeatureKind::Presence => {
                        let siblings: Vec<FeatureId> =
                            tax.features.iter().filter(|f| f.group == feature.group).map(|f| f.id).collect();
                        (*siblings.choose(rng).expect("feature is its own sibling"), Value::PRESENT)
                    }
                    _ => (r.feature, perturb(world, r.feature, r.value, rng)),
                };
                let spurious = EventRecord {
                    encounter_id,
                    feature_id: spurious_feature,
                    occurred_at: r.occurred_at,
                    entered_at,
                    value: spurious_value,
                    revisions: vec![RevisionRecord {
                        revised_at,
                        new_value: None,
                        kind,
                    }],
                };
                out.push(record);
                out.push(spurious);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr_sim::SimConfig;

    fn small(n: u32) -> SimConfig {
        let mut c = SimConfig::desk();
        c.n_encounters = n;
        c
    }

    #[test]
    fn zero_encounters_gives_empty_list() {
        assert!(generate_truth(&small(0), 0).unwrap().is_empty());
    }

    #[test]
    fn forced_zero_prevalence_has_no_positives() {
        let mut c = small(300);
        c.outcome.prevalence = 0.0;
        assert!(generate_truth(&c, 0).unwrap().iter().all(|e| !e.outcome_positive));
        let mut c = small(300);
        c.outcome.intercept = Some(f64::NEG_INFINITY);
        assert!(generate_truth(&c, 0).unwrap().iter().all(|e| !e.outcome_positive));
    }

    #[test]
    fn period_index_out_of_range_is_rejected() {
        let c = small(5);
        assert!(generate_truth(&c, c.periods.len()).is_err());
    }

    #[test]
    fn invalid_rates_are_configuration_errors() {
        let mut c = small(5);
        c.outcome.prevalence = 1.5;
        assert!(matches!(generate_truth(&c, 0), Err(crate::Error::Config { .. })));
        let mut c = small(5);
        c.infra_noise.class_flip_prob = -0.1;
        assert!(matches!(generate_truth(&c, 0), Err(crate::Error::Config { .. })));
    }

    #[test]
    fn encounters_satisfy_invariants() {
        let c = small(400);
        let truth = generate_truth(&c, 1).unwrap();
        for e in &truth {
            assert!(e.discharge_at > e.admit_at);
            if e.outcome_positive {
                let t = e.outcome_time.unwrap();
                assert!(e.admit_at <= t && t <= e.discharge_at);
            } else {
                assert!(e.outcome_time.is_none());
            }
            assert!(e.events.iter().all(EventRecord::is_well_formed), "{e:?}");
            assert_eq!(e.class_code_history[0].0, e.admit_at);
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let c = small(50);
        assert_eq!(generate_truth(&c, 2).unwrap(), generate_truth(&c, 2).unwrap());
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(generate_truth(&c, 2).unwrap(), generate_truth(&d, 2).unwrap());
    }

    #[test]
    fn length_of_stay_median_is_about_five_days() {
        let truth = generate_truth(&small(2000), 0).unwrap();
        let mut los: Vec<f64> = truth
            .iter()
            .map(|e| (e.discharge_at.0 - e.admit_at.0) as f64 / MINUTES_PER_DAY as f64)
            .collect();
        los.sort_by(f64::total_cmp);
        let median = los[los.len() / 2];
        assert!((4.5..5.5).contains(&median), "median LOS {median}");
    }
}
