//! Multitask L2-regularized logistic regression over encounter-days.
//!
//! Each base row `x` of width `d` is expanded to `[x, 0, .., x, .., 0]` of
//! width `d * (1 + T)`: a shared block plus one block per training year,
//! with `x` copied into the block of the row's year. Dates outside the
//! training years use the block of the latest training year not after them,
//! or the earliest block for dates before all training years.

mod cv;
mod lbfgs;
mod objective;

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, CvFold, CvResult};
pub use lbfgs::{Lbfgs, OptimizerReport};
pub use objective::LogisticObjective;

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::rng::{stream, tag};
use crate::stats::sigmoid;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub days_per_encounter: usize,
    /// Penalty used by [`train`].
    pub regularization: f64,
    /// Candidates for [`cross_validate`].
    pub grid: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub lbfgs_memory: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            days_per_encounter: 3,
            regularization: 1e-3,
            grid: vec![1e-4, 1e-3, 1e-2],
            tolerance: 1e-8,
            max_iterations: 5000,
            lbfgs_memory: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days_per_encounter < 1 {
            return Err(Error::config("train.days_per_encounter", "must be at least 1"));
        }
        if self.grid.is_empty() {
            return Err(Error::config("train.grid", "must not be empty"));
        }
        if self.grid.iter().chain([&self.regularization]).any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::config("train.grid", "regularization strengths must be positive"));
        }
        Ok(())
    }
}

/// Training years, ascending; task `k` is `years[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMap {
    pub years: Vec<i32>,
}

impl TaskMap {
    pub fn from_dates(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        let years: BTreeSet<i32> = dates.into_iter().map(|d| d.year()).collect();
        TaskMap {
            years: years.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn task_of(&self, date: NaiveDate) -> usize {
        let y = date.year();
        self.years.iter().rposition(|&t| t <= y).unwrap_or(0)
    }
}

/// Expanded active positions of a sparse base row.
pub fn multitask_expand(row: &[u32], base_width: usize, task: usize, n_tasks: usize) -> Result<Vec<u32>> {
    if task >= n_tasks {
        return Err(Error::TaskMapping { task, n_tasks });
    }
    let offset = ((1 + task) * base_width) as u32;
    Ok(row.iter().copied().chain(row.iter().map(|&c| c + offset)).collect())
}

/// Exactly `days_per_encounter` rows per encounter, drawn without
/// replacement from stream `(seed, encounter_id)`. Returned ascending.
pub fn subsample_days(matrix: &FeatureMatrix, days_per_encounter: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (e, rows) in matrix.encounter_rows() {
        if rows.len() < days_per_encounter {
            return Err(Error::InclusionViolation {
                encounter: e,
                rows: rows.len(),
                required: days_per_encounter,
            });
        }
        let mut rng = stream(seed, &[tag::SUBSAMPLE, e.0]);
        let mut picked: Vec<usize> = sample(&mut rng, rows.len(), days_per_encounter)
            .into_iter()
            .map(|k| rows[k])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBlock {
    pub year: i32,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub grid: Vec<f64>,
    pub days_per_encounter: usize,
    pub n_rows: usize,
    pub n_encounters: usize,
    pub optimizer: OptimizerReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskModel {
    pub version: u32,
    /// Base column ids, in matrix column order.
    pub columns: Vec<u32>,
    pub shared: Vec<f64>,
    pub tasks: Vec<TaskBlock>,
    pub intercept: f64,
    pub lambda: f64,
    pub meta: TrainMeta,
}

impl RiskModel {
    pub fn base_width(&self) -> usize {
        self.columns.len()
    }

    pub fn task_map(&self) -> TaskMap {
        TaskMap {
            years: self.tasks.iter().map(|t| t.year).collect(),
        }
    }

    fn task_weights(&self, date: NaiveDate) -> &[f64] {
        let y = date.year();
        let k = self.tasks.iter().rposition(|t| t.year <= y).unwrap_or(0);
        &self.tasks[k].weights
    }

    /// Daily risk for a base row given as active column positions.
    pub fn predict_day(&self, row: &[u32], date: NaiveDate) -> f64 {
        let task = self.task_weights(date);
        let mut z = self.intercept;
        for &c in row {
            z += self.shared[c as usize] + task[c as usize];
        }
        sigmoid(z)
    }

    pub fn check_columns(&self, matrix: &FeatureMatrix) -> Result<()> {
        if matrix.column_ids() != self.columns {
            return Err(Error::Schema(format!(
                "matrix has {} columns that do not match the model's {}",
                matrix.n_cols(),
                self.columns.len()
            )));
        }
        Ok(())
    }

    /// Daily scores for every row of `matrix`, in row order.
    pub fn score_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_columns(matrix)?;
        Ok((0..matrix.n_rows())
            .into_par_iter()
            .map(|i| self.predict_day(matrix.row(i), matrix.rows[i].date))
            .collect())
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        Ok(())
    }
}

/// Maximum of an encounter's daily scores; `None` when it has none.
pub fn encounter_max_score(daily: &[f64]) -> Option<f64> {
    daily.iter().copied().reduce(f64::max)
}

fn check_labels(matrix: &FeatureMatrix, rows: &[usize]) -> Result<()> {
    let pos = rows.iter().any(|&i| matrix.label(i));
    let neg = rows.iter().any(|&i| !matrix.label(i));
    if pos && neg {
        Ok(())
    } else {
        Err(Error::DegenerateLabel(format!(
            "training rows are all {}",
            if pos { "positive" } else { "negative" }
        )))
    }
}

/// Fits the model at `config.regularization` on a subsample of
/// `config.days_per_encounter` days per encounter.
pub fn train(matrix: &FeatureMatrix, config: &TrainConfig) -> Result<RiskModel> {
    config.validate()?;
    if matrix.n_rows() == 0 {
        return Err(Error::DegenerateLabel("no training rows".into()));
    }
    check_labels(matrix, &(0..matrix.n_rows()).collect::<Vec<_>>())?;
    let rows = subsample_days(matrix, config.days_per_encounter, config.seed)?;
    fit_rows(matrix, &rows, config, config.regularization)
}

pub(crate) fn fit_rows(matrix: &FeatureMatrix, rows: &[usize], config: &TrainConfig, lambda: f64) -> Result<RiskModel> {
    check_labels(matrix, rows)?;
    let d = matrix.n_cols();
    let map = TaskMap::from_dates(rows.iter().map(|&i| matrix.rows[i].date));
    let n_tasks = map.len();
    let expanded = rows
        .iter()
        .map(|&i| multitask_expand(matrix.row(i), d, map.task_of(matrix.rows[i].date), n_tasks))
        .collect::<Result<Vec<_>>>()?;
    let labels = rows.iter().map(|&i| matrix.label(i)).collect();
    let objective = LogisticObjective::new(expanded, labels, d * (1 + n_tasks), lambda);
    let optimizer = Lbfgs {
        tolerance: config.tolerance,
        max_iterations: config.max_iterations,
        memory: config.lbfgs_memory.max(1),
    };
    let (theta, report) = optimizer.minimize(|t| objective.value_and_gradient(t), vec![0.0; objective.n_params()]);
    if !report.converged {
        log::warn!(
            "optimizer stopped after {} iterations with gradient norm {:.3e}",
            report.iterations,
            report.gradient_norm
        );
    }
    let n_encounters = rows.iter().map(|&i| matrix.rows[i].encounter_id).collect::<BTreeSet<_>>().len();
    Ok(RiskModel {
        version: MODEL_VERSION,
        columns: matrix.column_ids(),
        shared: theta[..d].to_vec(),
        tasks: map
            .years
            .iter()
            .enumerate()
            .map(|(k, &year)| TaskBlock {
                year,
                weights: theta[(1 + k) * d..(2 + k) * d].to_vec(),
            })
            .collect(),
        intercept: theta[d * (1 + n_tasks)],
        lambda,
        meta: TrainMeta {
            seed: config.seed,
            grid: config.grid.clone(),
            days_per_encounter: config.days_per_encounter,
            n_rows: rows.len(),
            n_encounters,
            optimizer: report,
        },
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::featurize::{ColumnInfo, RowMeta};
    use crate::featurize::taxonomy::GroupKey;
    use crate::ids::{EncounterId, FeatureId, MonthYear};
    use crate::metrics::auroc_raw;
    use rand::Rng;

    fn columns(n: u32) -> Vec<ColumnInfo> {
        (0..n)
            .map(|id| ColumnInfo {
                id,
                feature_id: FeatureId(id),
                label: format!("c{id}"),
                group: GroupKey::IdxMedications,
            })
            .collect()
    }

    /// Encounters with `days` rows each; feature and label generator per encounter.
    fn build(
        n_enc: u64,
        days: u32,
        n_cols: u32,
        year_of: impl Fn(u64) -> i32,
        mut gen: impl FnMut(u64) -> (bool, Vec<Vec<u32>>),
    ) -> FeatureMatrix {
        let mut rows = Vec::new();
        let mut labels = BTreeMap::new();
        for e in 0..n_enc {
            let (label, day_rows) = gen(e);
            labels.insert(EncounterId(e), label);
            let start = NaiveDate::from_ymd_opt(year_of(e), 3, 1).unwrap();
            for (k, active) in day_rows.into_iter().take(days as usize).enumerate() {
                let date = start + chrono::Days::new(k as u64);
                rows.push((
                    RowMeta {
                        encounter_id: EncounterId(e),
                        date,
                        day_of_stay: k as u32 + 1,
                        admit_month: MonthYear::of(start),
                    },
                    active,
                ));
            }
        }
        FeatureMatrix::from_rows(columns(n_cols), rows, labels).unwrap()
    }

    fn max_scores(model: &RiskModel, m: &FeatureMatrix) -> (Vec<f64>, Vec<bool>) {
        let daily = model.score_matrix(m).unwrap();
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (e, rows) in m.encounter_rows() {
            s.push(encounter_max_score(&rows.iter().map(|&i| daily[i]).collect::<Vec<_>>()).unwrap());
            l.push(m.labels[&e]);
        }
        (s, l)
    }

    #[test]
    fn single_task_expansion_duplicates_the_row() {
        assert_eq!(multitask_expand(&[0, 2], 3, 0, 1).unwrap(), vec![0, 2, 3, 5]);
        assert!(multitask_expand(&[], 3, 0, 1).unwrap().is_empty());
        assert!(matches!(multitask_expand(&[0], 3, 1, 1), Err(Error::TaskMapping { .. })));
    }

    #[test]
    fn expansion_has_twice_the_ones() {
        let row = [1, 4, 7, 9];
        for task in 0..5 {
            let x = multitask_expand(&row, 10, task, 5).unwrap();
            assert_eq!(x.len(), 8);
            assert!(x.iter().all(|&c| c < 60));
            assert!(x[4..].iter().all(|&c| (c as usize) / 10 == task + 1));
        }
    }

    #[test]
    fn task_map_uses_latest_training_year_not_after_the_date() {
        let map = TaskMap { years: vec![2013, 2015, 2017] };
        let d = |y| NaiveDate::from_ymd_opt(y, 6, 1).unwrap();
        assert_eq!(map.task_of(d(2012)), 0);
        assert_eq!(map.task_of(d(2014)), 0);
        assert_eq!(map.task_of(d(2015)), 1);
        assert_eq!(map.task_of(d(2016)), 1);
        assert_eq!(map.task_of(d(2021)), 2);
    }

    #[test]
    fn subsample_takes_exactly_k_rows_per_encounter() {
        let m = build(1000, 5, 2, |_| 2015, |e| (e % 2 == 0, vec![vec![]; 5]));
        let s = subsample_days(&m, 3, 9).unwrap();
        assert_eq!(s.len(), 3000);
        assert_eq!(s, subsample_days(&m, 3, 9).unwrap());
        assert_ne!(s, subsample_days(&m, 3, 10).unwrap());
        let exact = build(4, 3, 2, |_| 2015, |e| (e % 2 == 0, vec![vec![]; 3]));
        assert_eq!(subsample_days(&exact, 3, 1).unwrap(), (0..12).collect::<Vec<_>>());
        let short = build(4, 2, 2, |_| 2015, |e| (e % 2 == 0, vec![vec![]; 2]));
        assert!(matches!(subsample_days(&short, 3, 1), Err(Error::InclusionViolation { .. })));
    }

    #[test]
    fn single_class_training_data_is_rejected() {
        let m = build(10, 3, 2, |_| 2015, |_| (false, vec![vec![0]; 3]));
        assert!(matches!(train(&m, &TrainConfig::default()), Err(Error::DegenerateLabel(_))));
    }

    #[test]
    fn separable_data_is_ranked_perfectly() {
        let m = build(200, 3, 2, |_| 2015, |e| {
            let pos = e % 4 == 0;
            (pos, vec![vec![if pos { 0 } else { 1 }]; 3])
        });
        let model = train(&m, &TrainConfig::default()).unwrap();
        let (s, l) = max_scores(&model, &m);
        assert!(auroc_raw(&s, &l).unwrap() >= 0.99);
    }

    #[test]
    fn null_signal_gives_chance_auroc() {
        let mut rng = stream(5, &[0]);
        let mut gen = |_e: u64| {
            let label = rng.random::<f64>() < 0.2;
            let rows = (0..3).map(|_| (0..30u32).filter(|_| rng.random::<f64>() < 0.2).collect()).collect();
            (label, rows)
        };
        let train_m = build(5000, 3, 30, |_| 2015, &mut gen);
        let test_m = build(5000, 3, 30, |_| 2016, &mut gen);
        let config = TrainConfig {
            regularization: 1e-2,
            ..TrainConfig::default()
        };
        let model = train(&train_m, &config).unwrap();
        let (s, l) = max_scores(&model, &test_m);
        let a = auroc_raw(&s, &l).unwrap();
        assert!((a - 0.5).abs() <= 0.05, "held-out AUROC {a}");
    }

    #[test]
    fn predict_day_matches_hand_computation() {
        let model = RiskModel {
            version: MODEL_VERSION,
            columns: vec![0, 1, 2],
            shared: vec![0.5, -1.25, 2.0],
            tasks: vec![TaskBlock {
                year: 2015,
                weights: vec![0.25, 0.5, -0.75],
            }],
            intercept: -0.3,
            lambda: 1.0,
            meta: TrainMeta {
                seed: 0,
                grid: vec![],
                days_per_encounter: 3,
                n_rows: 0,
                n_encounters: 0,
                optimizer: OptimizerReport {
                    iterations: 0,
                    gradient_norm: 0.0,
                    objective: 0.0,
                    converged: true,
                    stalled: false,
                },
            },
        };
        let date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let z: f64 = -0.3 + (0.5 + 0.25) + (2.0 - 0.75);
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((model.predict_day(&[0, 2], date) - want).abs() < 1e-12);
        let mut zero = model.clone();
        zero.shared = vec![0.0; 3];
        zero.tasks[0].weights = vec![0.0; 3];
        zero.intercept = 0.0;
        assert_eq!(zero.predict_day(&[0, 1, 2], date), 0.5);
        let mut last = 0.0;
        for b in [0.0, 5.0, 20.0, 40.0] {
            zero.intercept = b;
            let p = zero.predict_day(&[1], date);
            assert!(p >= last);
            last = p;
        }
        assert!(last > 1.0 - 1e-12);
    }

    #[test]
    fn single_task_model_equals_plain_logistic_on_duplicated_columns() {
        let mut rng = stream(8, &[0]);
        let m = build(
            400,
            3,
            6,
            |_| 2015,
            |e| {
                let label = e % 5 == 0;
                let rows = (0..3)
                    .map(|_| (0..6u32).filter(|&c| rng.random::<f64>() < if label && c < 2 { 0.6 } else { 0.2 }).collect())
                    .collect();
                (label, rows)
            },
        );
        let config = TrainConfig::default();
        let model = train(&m, &config).unwrap();
        assert_eq!(model.tasks.len(), 1);

        let rows = subsample_days(&m, 3, config.seed).unwrap();
        let dup: Vec<Vec<u32>> = rows.iter().map(|&i| m.row(i).iter().copied().chain(m.row(i).iter().map(|c| c + 6)).collect()).collect();
        let labels = rows.iter().map(|&i| m.label(i)).collect();
        let plain = LogisticObjective::new(dup, labels, 12, config.regularization);
        let opt = Lbfgs {
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
            memory: 10,
        };
        let (theta, _) = opt.minimize(|t| plain.value_and_gradient(t), vec![0.0; 13]);
        let daily = model.score_matrix(&m).unwrap();
        for (i, d) in daily.iter().enumerate() {
            let z = theta[12] + m.row(i).iter().map(|&c| theta[c as usize] + theta[c as usize + 6]).sum::<f64>();
            assert!((d - sigmoid(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn data_loss_grows_with_regularization() {
        let mut rng = stream(21, &[0]);
        let m = build(
            600,
            3,
            10,
            |e| 2014 + (e % 2) as i32,
            |e| {
                let label = e % 4 == 0;
                let rows = (0..3)
                    .map(|_| (0..10u32).filter(|&c| rng.random::<f64>() < if label && c < 3 { 0.5 } else { 0.2 }).collect())
                    .collect();
                (label, rows)
            },
        );
        let mut last = f64::NEG_INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let config = TrainConfig {
                regularization: lambda,
                ..TrainConfig::default()
            };
            let model = train(&m, &config).unwrap();
            assert!(model.meta.optimizer.converged);
            let rows = subsample_days(&m, 3, config.seed).unwrap();
            let daily = model.score_matrix(&m).unwrap();
            let loss: f64 = rows
                .iter()
                .map(|&i| {
                    let p = daily[i];
                    if m.label(i) { -p.ln() } else { -(1.0 - p).ln() }
                })
                .sum::<f64>()
                / rows.len() as f64;
            assert!(loss >= last - 1e-10, "lambda {lambda}: {loss} < {last}");
            last = loss;
        }
    }

    #[test]
    fn training_is_deterministic_and_serializable() {
        let m = build(300, 4, 4, |e| 2014 + (e % 3) as i32, |e| (e % 3 == 0, vec![vec![(e % 4) as u32]; 4]));
        let a = train(&m, &TrainConfig::default()).unwrap();
        let b = train(&m, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<RiskModel>(&json).unwrap(), a);
        assert!(a.score_matrix(&m).unwrap().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn encounter_max_is_masked_max() {
        assert_eq!(encounter_max_score(&[]), None);
        assert_eq!(encounter_max_score(&[0.4]), Some(0.4));
        assert_eq!(encounter_max_score(&[0.1, 0.7, 0.3]), Some(0.7));
        let all: Vec<f64> = (0..12).map(|k| ((k * 7) % 12) as f64 / 12.0).collect();
        let missing = [1usize, 3, 4, 8, 11];
        let present: Vec<f64> = (0..12).filter(|k| !missing.contains(k)).map(|k| all[k]).collect();
        let oracle = present.iter().fold(f64::MIN, |a, &b| if b > a { b } else { a });
        assert_eq!(encounter_max_score(&present), Some(oracle));
    }
}
