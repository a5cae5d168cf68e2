//! File-backed stages. Each stage reads what earlier stages wrote under the
//! output directory and writes its own artifacts there.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{
    load_matrix, load_score_set, persist_daily_scores, read_json, save_matrix, save_score_set, write_csv, write_json,
};
use super::manifest::{update_manifest, Manifest};
use super::study::{
    concordance_report, drift_report, evaluate_study, featurize_study, fit_model, gap_reports, score_dataset,
    swap_report, Dataset, Evaluation, FeaturizeSummary, StudyExtracts, StudyMatrices,
};
use crate::ehr_sim::{read_extract, write_extract, RawExtract, SimConfig};
use crate::error::{Error, Result};
use crate::featurize::taxonomy::Taxonomy;
use crate::featurize::{FeatureMatrix, FeatureSpecSet};
use crate::gap_analysis::{feature_discrepancy, ConcordanceReport, DiscrepancyReport, DriftReport, GapReport, SwapReport};
use crate::metrics::{Measure, MetricCI, ScoreSet};
use crate::risk_model::{CvResult, RiskModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Featurize,
    Train,
    Score,
    Evaluate,
    Gap,
    Swap,
    Drift,
    Report,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Score => "score",
            Command::Evaluate => "evaluate",
            Command::Gap => "gap",
            Command::Swap => "swap",
            Command::Drift => "drift",
            Command::Report => "report",
            Command::All => "all",
        }
    }

    const STAGES: [Command; 9] = [
        Command::Simulate,
        Command::Featurize,
        Command::Train,
        Command::Score,
        Command::Evaluate,
        Command::Gap,
        Command::Swap,
        Command::Drift,
        Command::Report,
    ];
}

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn file(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.file("config.json")
    }

    pub fn sim_config(&self) -> PathBuf {
        self.file("sim_config.json")
    }

    /// Extract rows and metadata files for a dataset name such as `ret` or
    /// `train_3`.
    pub fn extract(&self, name: &str) -> (PathBuf, PathBuf) {
        (
            self.file(&format!("extracts/{name}.rows.jsonl")),
            self.file(&format!("extracts/{name}.meta.jsonl")),
        )
    }

    pub fn spec(&self) -> PathBuf {
        self.file("features/spec.json")
    }

    pub fn featurize_summary(&self) -> PathBuf {
        self.file("features/summary.json")
    }

    pub fn matrix(&self, d: Dataset) -> (PathBuf, PathBuf) {
        (
            self.file(&format!("features/{d}.matrix.csv")),
            self.file(&format!("features/{d}.rows.csv")),
        )
    }

    pub fn model(&self) -> PathBuf {
        self.file("model/model.json")
    }

    pub fn cv(&self) -> PathBuf {
        self.file("model/cv.json")
    }

    pub fn scores(&self, d: Dataset) -> PathBuf {
        self.file(&format!("scores/{d}.scores.csv"))
    }

    pub fn daily_log(&self) -> PathBuf {
        self.file("scores/daily_pro.csv")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.file(&format!("reports/{name}"))
    }
}

fn train_name(period: usize) -> String {
    format!("train_{period}")
}

pub fn stage_simulate(config: &RunConfig, out: &Layout) -> Result<()> {
    let sim = config.sim_config();
    let extracts = super::study::simulate_study(&sim, &config.study)?;
    write_json(&out.sim_config(), &sim)?;
    for (&p, e) in config.study.train_periods.iter().zip(&extracts.train) {
        let (rows, meta) = out.extract(&train_name(p));
        write_extract(e, &rows, &meta)?;
    }
    for (d, e) in [
        (Dataset::Ret, &extracts.ret),
        (Dataset::RetPrime, &extracts.ret_prime),
        (Dataset::Pro, &extracts.pro),
    ] {
        let (rows, meta) = out.extract(d.name());
        write_extract(e, &rows, &meta)?;
    }
    log::info!(
        "simulated {} training periods; {} / {} / {} validation rows",
        extracts.train.len(),
        extracts.ret.rows.len(),
        extracts.ret_prime.rows.len(),
        extracts.pro.rows.len()
    );
    Ok(())
}

fn load_extract(out: &Layout, name: &str) -> Result<RawExtract> {
    let (rows, meta) = out.extract(name);
    read_extract(&rows, &meta)
}

fn load_sim(out: &Layout) -> Result<SimConfig> {
    read_json(&out.sim_config())
}

pub fn stage_featurize(config: &RunConfig, out: &Layout) -> Result<()> {
    let sim = load_sim(out)?;
    let extracts = StudyExtracts {
        train: config
            .study
            .train_periods
            .iter()
            .map(|&p| load_extract(out, &train_name(p)))
            .collect::<Result<_>>()?,
        ret: load_extract(out, Dataset::Ret.name())?,
        ret_prime: load_extract(out, Dataset::RetPrime.name())?,
        pro: load_extract(out, Dataset::Pro.name())?,
    };
    let taxonomy = Taxonomy::build(&sim.taxonomy);
    let (matrices, summary) = featurize_study(&extracts, &taxonomy, &config.featurize)?;
    write_json(&out.spec(), &matrices.specs)?;
    write_json(&out.featurize_summary(), &summary)?;
    for d in Dataset::ALL {
        let (t, r) = out.matrix(d);
        save_matrix(matrices.get(d), &t, &r)?;
    }
    log::info!("featurized {} retained columns", summary.n_columns);
    Ok(())
}

fn load_specs(out: &Layout) -> Result<FeatureSpecSet> {
    let specs: FeatureSpecSet = read_json(&out.spec())?;
    specs.check_version()?;
    Ok(specs)
}

fn load_dataset(out: &Layout, specs: &FeatureSpecSet, d: Dataset) -> Result<FeatureMatrix> {
    let (t, r) = out.matrix(d);
    Ok(load_matrix(&t, &r, specs.retained_columns())?.0)
}

fn load_matrices(out: &Layout) -> Result<StudyMatrices> {
    let specs = load_specs(out)?;
    Ok(StudyMatrices {
        train: load_dataset(out, &specs, Dataset::Train)?,
        ret: load_dataset(out, &specs, Dataset::Ret)?,
        ret_prime: load_dataset(out, &specs, Dataset::RetPrime)?,
        pro: load_dataset(out, &specs, Dataset::Pro)?,
        specs,
    })
}

pub fn stage_train(config: &RunConfig, out: &Layout) -> Result<()> {
    let specs = load_specs(out)?;
    let train = load_dataset(out, &specs, Dataset::Train)?;
    let (model, cv) = fit_model(&train, &config.train_config(), config.model.cross_validate)?;
    write_json(&out.model(), &model)?;
    if let Some(cv) = cv {
        write_json(&out.cv(), &cv)?;
    }
    Ok(())
}

fn load_model(out: &Layout) -> Result<RiskModel> {
    let model: RiskModel = read_json(&out.model())?;
    model.check_version()?;
    Ok(model)
}

pub fn stage_score(_config: &RunConfig, out: &Layout) -> Result<()> {
    let specs = load_specs(out)?;
    let model = load_model(out)?;
    for d in Dataset::ALL {
        let m = load_dataset(out, &specs, d)?;
        let scored = score_dataset(&model, &m)?;
        save_score_set(&scored.set, &out.scores(d))?;
        if d == Dataset::Pro {
            persist_daily_scores(&m, &scored.daily, &out.daily_log())?;
        }
    }
    Ok(())
}

fn load_scores(out: &Layout) -> Result<BTreeMap<Dataset, ScoreSet>> {
    Dataset::ALL
        .iter()
        .map(|&d| Ok((d, load_score_set(&out.scores(d))?)))
        .collect()
}

#[derive(Serialize)]
struct MonthlyCsvRow {
    metric: Measure,
    period: Dataset,
    month_year: String,
    n: usize,
    n_pos: usize,
    point: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
    undefined: Option<String>,
}

#[derive(Serialize)]
struct ComparisonCsvRow {
    metric: Measure,
    month: u32,
    a_month_year: Option<String>,
    a_point: Option<f64>,
    a_lo: Option<f64>,
    a_hi: Option<f64>,
    b_month_year: Option<String>,
    b_point: Option<f64>,
    b_lo: Option<f64>,
    b_hi: Option<f64>,
    ci_overlap: Option<bool>,
    difference: Option<f64>,
    difference_lo: Option<f64>,
    difference_hi: Option<f64>,
    difference_significant: Option<bool>,
}

#[derive(Serialize)]
struct ConfusionCsvRow {
    period: Dataset,
    threshold: f64,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
    ppv: Option<f64>,
}

fn write_evaluation(ev: &Evaluation, out: &Layout) -> Result<()> {
    write_csv(&out.report("metrics.csv"), &ev.metrics)?;
    let monthly: Vec<MonthlyCsvRow> = ev
        .monthly
        .iter()
        .flat_map(|s| {
            s.rows.iter().map(move |r| MonthlyCsvRow {
                metric: s.metric,
                period: s.period,
                month_year: r.month.to_string(),
                n: r.n,
                n_pos: r.n_pos,
                point: r.ci.map(|c| c.point),
                lo: r.ci.map(|c| c.lower),
                hi: r.ci.map(|c| c.upper),
                undefined: r.undefined.clone(),
            })
        })
        .collect();
    write_csv(&out.report("monthly.csv"), &monthly)?;
    let ci = |r: &Option<crate::metrics::MonthlyRow>| r.as_ref().and_then(|r| r.ci);
    let comparison: Vec<ComparisonCsvRow> = ev
        .comparisons
        .iter()
        .flat_map(|c| {
            c.rows.iter().map(move |r| ComparisonCsvRow {
                metric: c.metric,
                month: r.month,
                a_month_year: r.a.as_ref().map(|x| x.month.to_string()),
                a_point: ci(&r.a).map(|c| c.point),
                a_lo: ci(&r.a).map(|c| c.lower),
                a_hi: ci(&r.a).map(|c| c.upper),
                b_month_year: r.b.as_ref().map(|x| x.month.to_string()),
                b_point: ci(&r.b).map(|c| c.point),
                b_lo: ci(&r.b).map(|c| c.lower),
                b_hi: ci(&r.b).map(|c| c.upper),
                ci_overlap: r.ci_overlap,
                difference: r.difference.map(|d| d.point),
                difference_lo: r.difference.map(|d| d.lower),
                difference_hi: r.difference.map(|d| d.upper),
                difference_significant: r.difference_significant,
            })
        })
        .collect();
    write_csv(&out.report("monthly_comparison.csv"), &comparison)?;
    let confusion: Vec<ConfusionCsvRow> = ev
        .confusion
        .iter()
        .map(|(&period, c)| ConfusionCsvRow {
            period,
            threshold: c.threshold,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            sensitivity: c.sensitivity,
            specificity: c.specificity,
            ppv: c.ppv,
        })
        .collect();
    write_csv(&out.report("confusion.csv"), &confusion)?;
    write_json(&out.report("evaluation.json"), ev)
}

pub fn stage_evaluate(config: &RunConfig, out: &Layout) -> Result<()> {
    let scores = load_scores(out)?;
    let ev = evaluate_study(&scores, config)?;
    write_evaluation(&ev, out)
}

#[derive(Serialize)]
struct GapCsvRow {
    measure: Measure,
    quantity: &'static str,
    point: f64,
    lo: f64,
    hi: f64,
    negated: bool,
}

fn gap_rows(reports: &[GapReport]) -> Vec<GapCsvRow> {
    let mut rows = Vec::new();
    for g in reports {
        let parts: [(&'static str, MetricCI); 6] = [
            ("p_ret", g.p_ret),
            ("p_ret_prime", g.p_ret_prime),
            ("p_pro", g.p_pro),
            ("delta", g.delta),
            ("delta_time", g.delta_time),
            ("delta_infra", g.delta_infra),
        ];
        rows.extend(parts.iter().map(|&(quantity, ci)| GapCsvRow {
            measure: g.measure,
            quantity,
            point: ci.point,
            lo: ci.lower,
            hi: ci.upper,
            negated: g.negated,
        }));
    }
    rows
}

pub(crate) fn write_gap(gaps: &[GapReport], out: &Layout) -> Result<()> {
    write_csv(&out.report("gap.csv"), &gap_rows(gaps))?;
    write_json(&out.report("gap.json"), &gaps)
}

pub(crate) fn write_concordance(c: &ConcordanceReport, out: &Layout) -> Result<()> {
    write_csv(&out.report("concordance_pairs.csv"), &c.pairs)?;
    write_csv(&out.report("discordant.csv"), &c.discordant)?;
    write_json(&out.report("concordance.json"), c)
}

pub(crate) fn write_discrepancy(d: &DiscrepancyReport, out: &Layout) -> Result<()> {
    write_csv(&out.report("discrepancy_columns.csv"), &d.columns)?;
    write_csv(&out.report("discrepancy_groups.csv"), &d.groups)?;
    write_csv(&out.report("discrepancy_histogram.csv"), &d.histogram)?;
    write_json(&out.report("discrepancy.json"), d)
}

/// Gap decomposition plus the concordance and discrepancy analyses that
/// explain its infrastructure part.
pub fn stage_gap(config: &RunConfig, out: &Layout) -> Result<()> {
    let scores = load_scores(out)?;
    let sim = load_sim(out)?;
    let specs = load_specs(out)?;
    let ret_prime = load_dataset(out, &specs, Dataset::RetPrime)?;
    let pro = load_dataset(out, &specs, Dataset::Pro)?;
    write_gap(&gap_reports(&scores, config)?, out)?;
    let c = concordance_report(&scores, &ret_prime, &sim.prospective.outage_days, config.gap.discordance_threshold)?;
    write_concordance(&c, out)?;
    write_discrepancy(&feature_discrepancy(&pro, &ret_prime)?, out)
}

pub(crate) fn write_swap(s: &SwapReport, out: &Layout) -> Result<()> {
    write_csv(&out.report("swap.csv"), &s.rows)?;
    let mut table = format!("Baseline, {:.3}\n", s.baseline_auroc);
    for r in &s.rows {
        table.push_str(&r.table_line());
        table.push('\n');
    }
    std::fs::write(out.report("swap_table.txt"), table).map_err(|e| Error::io(out.report("swap_table.txt"), e))?;
    write_json(&out.report("swap.json"), s)
}

pub fn stage_swap(config: &RunConfig, out: &Layout) -> Result<()> {
    let matrices = load_matrices(out)?;
    let model = load_model(out)?;
    write_swap(&swap_report(&matrices, &model, config)?, out)
}

pub(crate) fn write_drift(d: &DriftReport, out: &Layout) -> Result<()> {
    write_csv(&out.report("drift_columns.csv"), &d.columns)?;
    write_csv(&out.report("drift_groups.csv"), &d.groups)?;
    write_json(&out.report("drift.json"), d)
}

pub fn stage_drift(config: &RunConfig, out: &Layout) -> Result<()> {
    let matrices = load_matrices(out)?;
    write_drift(&drift_report(&matrices, config)?, out)
}

/// Every report of a run in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config_hash: String,
    pub seed: u64,
    pub featurize: FeaturizeSummary,
    pub cross_validation: Option<CvResult>,
    pub evaluation: Evaluation,
    pub gap: Vec<GapReport>,
    pub concordance: ConcordanceReport,
    pub discrepancy: DiscrepancyReport,
    pub swap: SwapReport,
    pub drift: DriftReport,
}

pub fn stage_report(config: &RunConfig, out: &Layout) -> Result<()> {
    let cv_path = out.cv();
    let bundle = ReportBundle {
        config_hash: config.hash(),
        seed: config.seed,
        featurize: read_json(&out.featurize_summary())?,
        cross_validation: if cv_path.exists() { Some(read_json(&cv_path)?) } else { None },
        evaluation: read_json(&out.report("evaluation.json"))?,
        gap: read_json(&out.report("gap.json"))?,
        concordance: read_json(&out.report("concordance.json"))?,
        discrepancy: read_json(&out.report("discrepancy.json"))?,
        swap: read_json(&out.report("swap.json"))?,
        drift: read_json(&out.report("drift.json"))?,
    };
    write_json(&out.report("bundle.json"), &bundle)
}

fn run_stage(command: Command, config: &RunConfig, out: &Layout) -> Result<()> {
    log::info!("stage {}", command.name());
    match command {
        Command::Simulate => stage_simulate(config, out),
        Command::Featurize => stage_featurize(config, out),
        Command::Train => stage_train(config, out),
        Command::Score => stage_score(config, out),
        Command::Evaluate => stage_evaluate(config, out),
        Command::Gap => stage_gap(config, out),
        Command::Swap => stage_swap(config, out),
        Command::Drift => stage_drift(config, out),
        Command::Report => stage_report(config, out),
        Command::All => Command::STAGES.iter().try_for_each(|&c| run_stage(c, config, out)),
    }
}

/// Runs `command` into `out_dir` and refreshes the manifest.
pub fn run(command: Command, config: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    for sub in ["extracts", "features", "model", "scores", "reports"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let out = Layout::new(out_dir);
    write_json(&out.config(), config)?;
    run_stage(command, config, &out)?;
    update_manifest(out_dir, config, command.name())
}
