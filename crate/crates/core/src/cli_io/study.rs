//! In-memory end-to-end study: simulate, featurize, train, score, analyze.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, StudyDesign, ThresholdReference};
use crate::ehr_sim::{build_paired_period, build_retrospective_period, RawExtract, SimConfig};
use crate::error::Result;
use crate::featurize::taxonomy::Taxonomy;
use crate::featurize::{
    apply_inclusion, encode_matrix, fit_training, EncodeReport, FeatureMatrix, FeatureSpecSet, FeaturizeConfig,
    InclusionReport, LabeledExtract,
};
use crate::gap_analysis::{
    all_swap_groups, feature_discrepancy, gap_bootstrap, outage_days_per_encounter, parse_group, score_concordance,
    swap_analysis, temporal_drift_test, ConcordanceReport, DiscrepancyReport, DriftReport, GapReport, SwapReport,
};
use crate::metrics::{
    bootstrap_ci, confusion_at, monthly_comparison, monthly_metric, percentile_threshold, Confusion, Measure, MetricCI,
    MonthlyComparisonRow, MonthlyRow, ScoreSet,
};
use crate::risk_model::{cross_validate, train, CvResult, RiskModel, TrainConfig};

/// The four datasets of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Train,
    Ret,
    RetPrime,
    Pro,
}

impl Dataset {
    pub const VALIDATION: [Dataset; 3] = [Dataset::Ret, Dataset::RetPrime, Dataset::Pro];
    pub const ALL: [Dataset; 4] = [Dataset::Train, Dataset::Ret, Dataset::RetPrime, Dataset::Pro];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Train => "train",
            Dataset::Ret => "ret",
            Dataset::RetPrime => "ret_prime",
            Dataset::Pro => "pro",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyExtracts {
    /// One extract per training period, in design order.
    pub train: Vec<RawExtract>,
    pub ret: RawExtract,
    pub pro: RawExtract,
    pub ret_prime: RawExtract,
}

pub fn simulate_study(sim: &SimConfig, design: &StudyDesign) -> Result<StudyExtracts> {
    sim.validate()?;
    let (train, rest) = rayon::join(
        || {
            design
                .train_periods
                .par_iter()
                .map(|&p| build_retrospective_period(sim, p))
                .collect::<Result<Vec<_>>>()
        },
        || {
            rayon::join(
                || build_retrospective_period(sim, design.ret_period),
                || build_paired_period(sim, design.pro_period),
            )
        },
    );
    let (ret, paired) = rest;
    let paired = paired?;
    Ok(StudyExtracts {
        train: train?,
        ret: ret?,
        pro: paired.pro,
        ret_prime: paired.ret_prime,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyMatrices {
    pub specs: FeatureSpecSet,
    pub train: FeatureMatrix,
    pub ret: FeatureMatrix,
    pub ret_prime: FeatureMatrix,
    pub pro: FeatureMatrix,
}

impl StudyMatrices {
    pub fn get(&self, d: Dataset) -> &FeatureMatrix {
        match d {
            Dataset::Train => &self.train,
            Dataset::Ret => &self.ret,
            Dataset::RetPrime => &self.ret_prime,
            Dataset::Pro => &self.pro,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeSummary {
    /// Per dataset; training periods are summed.
    pub inclusion: BTreeMap<Dataset, InclusionReport>,
    pub unseen: BTreeMap<Dataset, EncodeReport>,
    pub n_columns: usize,
    pub n_rows: BTreeMap<Dataset, usize>,
}

fn sum_reports(parts: &[LabeledExtract]) -> InclusionReport {
    let mut r = InclusionReport::default();
    for p in parts {
        let q = &p.report;
        r.encounters_in += q.encounters_in;
        r.encounters_kept += q.encounters_kept;
        r.short_stay += q.short_stay;
        r.early_positive += q.early_positive;
        r.prior_positive += q.prior_positive;
        r.post_outcome_rows_dropped += q.post_outcome_rows_dropped;
    }
    r
}

pub fn featurize_study(
    extracts: &StudyExtracts,
    taxonomy: &Taxonomy,
    config: &FeaturizeConfig,
) -> Result<(StudyMatrices, FeaturizeSummary)> {
    let inc = &config.inclusion;
    let train_parts = extracts
        .train
        .iter()
        .map(|e| apply_inclusion(e, inc))
        .collect::<Result<Vec<_>>>()?;
    let (specs, train, train_unseen) = fit_training(&train_parts, taxonomy, config)?;
    let mut summary = FeaturizeSummary::default();
    summary.inclusion.insert(Dataset::Train, sum_reports(&train_parts));
    summary.unseen.insert(Dataset::Train, train_unseen);
    let mut encoded = BTreeMap::new();
    for (d, raw) in [
        (Dataset::Ret, &extracts.ret),
        (Dataset::RetPrime, &extracts.ret_prime),
        (Dataset::Pro, &extracts.pro),
    ] {
        let data = apply_inclusion(raw, inc)?;
        let (m, unseen) = encode_matrix(&data, &specs)?;
        summary.inclusion.insert(d, data.report);
        summary.unseen.insert(d, unseen);
        encoded.insert(d, m);
    }
    let mut take = |d| encoded.remove(&d).expect("encoded above");
    let matrices = StudyMatrices {
        ret: take(Dataset::Ret),
        ret_prime: take(Dataset::RetPrime),
        pro: take(Dataset::Pro),
        specs,
        train,
    };
    summary.n_columns = matrices.train.n_cols();
    summary.n_rows = Dataset::ALL.iter().map(|&d| (d, matrices.get(d).n_rows())).collect();
    Ok((matrices, summary))
}

/// Trains at the configured penalty, or at the cross-validated one.
pub fn fit_model(matrix: &FeatureMatrix, config: &TrainConfig, cross_val: bool) -> Result<(RiskModel, Option<CvResult>)> {
    if !cross_val {
        return Ok((train(matrix, config)?, None));
    }
    let cv = cross_validate(matrix, config)?;
    log::info!("cross-validation chose penalty {}", cv.chosen);
    let config = TrainConfig {
        regularization: cv.chosen,
        ..config.clone()
    };
    Ok((train(matrix, &config)?, Some(cv)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub daily: Vec<f64>,
    pub set: ScoreSet,
}

pub fn score_dataset(model: &RiskModel, matrix: &FeatureMatrix) -> Result<Scored> {
    let daily = model.score_matrix(matrix)?;
    let set = ScoreSet::from_daily(matrix, &daily)?;
    Ok(Scored { daily, set })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Measure,
    pub period: Dataset,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub n_pos: usize,
    pub redraws: usize,
}

impl MetricRow {
    fn new(metric: Measure, period: Dataset, set: &ScoreSet, ci: MetricCI) -> Self {
        MetricRow {
            metric,
            period,
            point: ci.point,
            lo: ci.lower,
            hi: ci.upper,
            n: set.len(),
            n_pos: set.n_positive(),
            redraws: ci.redraws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub metric: Measure,
    pub period: Dataset,
    pub rows: Vec<MonthlyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyComparison {
    pub metric: Measure,
    /// Earlier period, joined on calendar month with `b`.
    pub a: Dataset,
    pub b: Dataset,
    pub rows: Vec<MonthlyComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Vec<MetricRow>,
    pub monthly: Vec<MonthlySeries>,
    pub comparisons: Vec<MonthlyComparison>,
    pub threshold_reference: ThresholdReference,
    pub threshold_percentile: f64,
    pub threshold: f64,
    pub confusion: BTreeMap<Dataset, Confusion>,
}

pub fn evaluate_study(scores: &BTreeMap<Dataset, ScoreSet>, config: &RunConfig) -> Result<Evaluation> {
    let ev = &config.evaluate;
    let seed = config.seed;
    let mut metrics = Vec::new();
    let mut monthly = Vec::new();
    let mut comparisons = Vec::new();
    for &m in &ev.measures {
        for d in Dataset::VALIDATION {
            let set = &scores[&d];
            let ci = bootstrap_ci(set, m, ev.n_replicates, seed)?;
            metrics.push(MetricRow::new(m, d, set, ci));
            monthly.push(MonthlySeries {
                metric: m,
                period: d,
                rows: monthly_metric(set, m, ev.n_replicates, seed)?,
            });
        }
        comparisons.push(MonthlyComparison {
            metric: m,
            a: Dataset::Ret,
            b: Dataset::Pro,
            rows: monthly_comparison(&scores[&Dataset::Ret], &scores[&Dataset::Pro], m, ev.n_replicates, seed)?,
        });
    }
    let reference = match ev.threshold_reference {
        ThresholdReference::Train => Dataset::Train,
        ThresholdReference::Ret => Dataset::Ret,
    };
    let threshold = percentile_threshold(&scores[&reference], ev.threshold_percentile)?;
    let confusion = Dataset::VALIDATION
        .iter()
        .map(|&d| (d, confusion_at(&scores[&d], threshold)))
        .collect();
    Ok(Evaluation {
        metrics,
        monthly,
        comparisons,
        threshold_reference: ev.threshold_reference,
        threshold_percentile: ev.threshold_percentile,
        threshold,
        confusion,
    })
}

pub fn gap_reports(scores: &BTreeMap<Dataset, ScoreSet>, config: &RunConfig) -> Result<Vec<GapReport>> {
    config
        .evaluate
        .measures
        .iter()
        .map(|&m| {
            gap_bootstrap(
                &scores[&Dataset::Ret],
                &scores[&Dataset::RetPrime],
                &scores[&Dataset::Pro],
                m,
                config.gap.n_replicates,
                config.seed,
            )
        })
        .collect()
}

pub fn concordance_report(
    scores: &BTreeMap<Dataset, ScoreSet>,
    ret_prime: &FeatureMatrix,
    outages: &BTreeSet<NaiveDate>,
    threshold: f64,
) -> Result<ConcordanceReport> {
    let outage_days = outage_days_per_encounter(ret_prime, outages);
    score_concordance(&scores[&Dataset::RetPrime], &scores[&Dataset::Pro], &outage_days, threshold)
}

pub fn swap_report(matrices: &StudyMatrices, model: &RiskModel, config: &RunConfig) -> Result<SwapReport> {
    let groups = match &config.swap.groups {
        Some(names) => names.iter().map(|n| parse_group(n)).collect::<Result<Vec<_>>>()?,
        None => all_swap_groups(),
    };
    swap_analysis(&matrices.pro, &matrices.ret_prime, model, &groups, config.swap.window_end)
}

pub fn drift_report(matrices: &StudyMatrices, config: &RunConfig) -> Result<DriftReport> {
    temporal_drift_test(&matrices.ret, &matrices.ret_prime, config.drift.alpha, config.seed)
}

/// Every artifact of one study, computed without touching the disk.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub extracts: StudyExtracts,
    pub matrices: StudyMatrices,
    pub featurize: FeaturizeSummary,
    pub model: RiskModel,
    pub cv: Option<CvResult>,
    pub scores: BTreeMap<Dataset, Scored>,
    pub evaluation: Evaluation,
    pub gaps: Vec<GapReport>,
    pub concordance: ConcordanceReport,
    pub discrepancy: DiscrepancyReport,
    pub swap: SwapReport,
    pub drift: DriftReport,
}

impl StudyOutcome {
    pub fn score_sets(&self) -> BTreeMap<Dataset, ScoreSet> {
        self.scores.iter().map(|(d, s)| (*d, s.set.clone())).collect()
    }

    pub fn gap(&self, m: Measure) -> Option<&GapReport> {
        self.gaps.iter().find(|g| g.measure == m)
    }
}

pub fn run_study(config: &RunConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let sim = config.sim_config();
    let extracts = simulate_study(&sim, &config.study)?;
    let taxonomy = Taxonomy::build(&sim.taxonomy);
    let (matrices, featurize) = featurize_study(&extracts, &taxonomy, &config.featurize)?;
    let (model, cv) = fit_model(&matrices.train, &config.train_config(), config.model.cross_validate)?;
    let scores = Dataset::ALL
        .iter()
        .map(|&d| Ok((d, score_dataset(&model, matrices.get(d))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let sets: BTreeMap<Dataset, ScoreSet> = scores.iter().map(|(d, s)| (*d, s.set.clone())).collect();
    let evaluation = evaluate_study(&sets, config)?;
    let gaps = gap_reports(&sets, config)?;
    let concordance = concordance_report(
        &sets,
        &matrices.ret_prime,
        &sim.prospective.outage_days,
        config.gap.discordance_threshold,
    )?;
    let discrepancy = feature_discrepancy(&matrices.pro, &matrices.ret_prime)?;
    let swap = swap_report(&matrices, &model, config)?;
    let drift = drift_report(&matrices, config)?;
    Ok(StudyOutcome {
        extracts,
        matrices,
        featurize,
        model,
        cv,
        scores,
        evaluation,
        gaps,
        concordance,
        discrepancy,
        swap,
        drift,
    })
}
