//! Fixed generative parameters derived from a [`SimConfig`]: per-feature
//! distributions, the sparse outcome model and its calibrated intercept.

use rand::Rng;

use super::config::{SimConfig, TrueWeight};
use super::truth;
use crate::error::Result;
use crate::featurize::taxonomy::{FeatureKind, GroupKey, Taxonomy};
use crate::ids::FeatureId;
use crate::rng::{stream, tag};
use crate::stats::sigmoid;

const CALIBRATION_SAMPLES: u64 = 4000;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FeatureParams {
    Numeric { mean: f64, sd: f64 },
    Categorical { probs: Vec<f64> },
    /// For locations this is a relative choice weight, otherwise the
    /// probability that the fact is present in an encounter.
    Presence { prevalence: f64 },
}

#[derive(Debug, Clone)]
pub struct World {
    pub taxonomy: Taxonomy,
    pub(crate) params: Vec<FeatureParams>,
    pub weights: Vec<TrueWeight>,
    pub intercept: f64,
    /// Baseline colonization pressure per location feature, keyed by
    /// position within the location group.
    pub(crate) unit_pressure: Vec<f64>,
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn zipf(n: u32, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|k| 1.0 / f64::from(k).powf(s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

impl World {
    pub fn build(config: &SimConfig) -> Result<World> {
        config.validate()?;
        let taxonomy = Taxonomy::build(&config.taxonomy);
        let mut rng = stream(config.seed, &[tag::WORLD]);
        let mut params = Vec::with_capacity(taxonomy.len());
        for f in &taxonomy.features {
            let p = match (f.group, f.kind) {
                (GroupKey::Age, _) => FeatureParams::Numeric { mean: 58.0, sd: 18.0 },
                (GroupKey::BodyMassIndex, _) => FeatureParams::Numeric { mean: 28.0, sd: 6.0 },
                (GroupKey::NumberOfPreviousEncounters, _) => FeatureParams::Numeric { mean: 0.8, sd: 0.9 },
                (GroupKey::PreviousLengthOfStay, _) => FeatureParams::Numeric { mean: 4.5, sd: 3.0 },
                (GroupKey::VitalSigns, _) => {
                    let mean = rng.random_range(50.0..130.0);
                    FeatureParams::Numeric {
                        mean,
                        sd: mean * rng.random_range(0.05..0.15),
                    }
                }
                (GroupKey::LaboratoryResults, _) => {
                    let mean = rng.random_range(0.0f64..5.0).exp();
                    FeatureParams::Numeric {
                        mean,
                        sd: mean * rng.random_range(0.1..0.4),
                    }
                }
                (GroupKey::ColonizationUnit, _) => FeatureParams::Numeric { mean: 0.5, sd: 0.3 },
                (GroupKey::ColonizationHospital, _) => FeatureParams::Numeric { mean: 0.5, sd: 0.15 },
                (GroupKey::Gender, _) => FeatureParams::Categorical { probs: vec![0.49, 0.51] },
                (GroupKey::MaritalStatus, _) => FeatureParams::Categorical { probs: vec![0.5, 0.5] },
                (GroupKey::AdmissionType, _) => FeatureParams::Categorical {
                    probs: vec![0.6, 0.3, 0.1],
                },
                (_, FeatureKind::Categorical { n_categories }) => FeatureParams::Categorical {
                    probs: zipf(n_categories, 1.1),
                },
                (GroupKey::HistoryOfCdi, _) => FeatureParams::Presence { prevalence: 0.015 },
                (GroupKey::EmergencyVisit, _) => FeatureParams::Presence { prevalence: 0.4 },
                (GroupKey::HxDiagnoses, _) => FeatureParams::Presence {
                    prevalence: log_uniform(&mut rng, 0.005, 0.15),
                },
                (GroupKey::HxMedications, _) => FeatureParams::Presence {
                    prevalence: log_uniform(&mut rng, 0.01, 0.2),
                },
                (GroupKey::IdxMedications, _) => FeatureParams::Presence {
                    prevalence: log_uniform(&mut rng, 0.01, 0.25),
                },
                (GroupKey::InHospitalLocations, _) => FeatureParams::Presence {
                    prevalence: log_uniform(&mut rng, 0.2, 5.0),
                },
                (_, FeatureKind::Numeric) => FeatureParams::Numeric { mean: 0.0, sd: 1.0 },
                (_, FeatureKind::Presence) => FeatureParams::Presence { prevalence: 0.05 },
            };
            params.push(p);
        }
        let n_units = taxonomy.in_group(GroupKey::InHospitalLocations).count();
        let unit_pressure = (0..n_units).map(|_| rng.random_range(0.05..1.0)).collect();

        let weights = generate_weights(config, &taxonomy, &params, &mut rng);

        let mut world = World {
            taxonomy,
            params,
            weights,
            intercept: 0.0,
            unit_pressure,
        };
        world.intercept = match config.outcome.intercept {
            Some(b) => b,
            None => world.calibrate_intercept(config)?,
        };
        Ok(world)
    }

    fn calibrate_intercept(&self, config: &SimConfig) -> Result<f64> {
        let target = config.outcome.prevalence;
        if target <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if target >= 1.0 {
            return Ok(f64::INFINITY);
        }
        let scores: Vec<f64> = (0..CALIBRATION_SAMPLES)
            .map(|i| {
                let mut rng = stream(config.seed, &[tag::CALIBRATION, i]);
                let latent = truth::draw_latent(self, config, 0, &mut rng)?;
                Ok(truth::risk_score(self, config, &latent))
            })
            .collect::<Result<_>>()?;
        let mean_prob = |b: f64| scores.iter().map(|s| sigmoid(b + s)).sum::<f64>() / scores.len() as f64;
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_prob(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub(crate) fn param(&self, id: FeatureId) -> &FeatureParams {
        &self.params[id.0 as usize]
    }

    /// Presence prevalence in a period after temporal drift.
    pub(crate) fn prevalence(&self, config: &SimConfig, period: usize, id: FeatureId) -> f64 {
        let FeatureParams::Presence { prevalence } = *self.param(id) else {
            return 0.0;
        };
        let group = self.taxonomy.feature(id).group;
        let mut p = prevalence;
        for (k, shift) in config.temporal_drift.iter().enumerate() {
            if shift.period != period || !shift.group.contains(group) {
                continue;
            }
            let selected = shift.fraction >= 1.0 || {
                let mut r = stream(config.seed, &[tag::WORLD, 0xd1f7, k as u64, u64::from(id.0)]);
                r.random::<f64>() < shift.fraction
            };
            if selected {
                p *= shift.multiplier;
            }
        }
        if group == GroupKey::InHospitalLocations {
            p
        } else {
            p.min(0.95)
        }
    }
}

fn generate_weights(
    config: &SimConfig,
    taxonomy: &Taxonomy,
    params: &[FeatureParams],
    rng: &mut impl Rng,
) -> Vec<TrueWeight> {
    let spec = &config.outcome;
    let mut weights = Vec::new();
    for f in &taxonomy.features {
        let Some(scale) = f.group.ancestry().iter().find_map(|g| spec.group_scale.get(g)).copied() else {
            continue;
        };
        let single = taxonomy.features.iter().filter(|o| o.group == f.group).count() == 1;
        // Always draw both numbers so the weight set is stable under density changes.
        let u: f64 = rng.random();
        let magnitude = scale * rng.random_range(0.5..1.5);
        let sign_flip: f64 = rng.random();
        if !single && u >= spec.weight_density {
            continue;
        }
        let (category, weight) = match (f.kind, &params[f.id.0 as usize]) {
            (FeatureKind::Presence, _) => (None, magnitude),
            (FeatureKind::Numeric, _) => {
                let positive = matches!(
                    f.group,
                    GroupKey::Age | GroupKey::NumberOfPreviousEncounters | GroupKey::ColonizationUnit
                ) || sign_flip < 0.5;
                (None, if positive { magnitude } else { -magnitude })
            }
            (FeatureKind::Categorical { .. }, _) => (Some(0), magnitude),
        };
        weights.push(TrueWeight {
            feature: f.id,
            category,
            weight,
        });
    }
    weights.extend(spec.explicit_weights.iter().copied());
    weights
}
