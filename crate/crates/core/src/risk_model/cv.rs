use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_rows, subsample_days, TrainConfig};
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::metrics::auroc_raw;
use crate::ids::EncounterId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub lambda: f64,
    pub held_out_year: i32,
    pub n_train_encounters: usize,
    pub n_test_encounters: usize,
    /// `None` when the held-out year or the training folds lack a class.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub chosen: f64,
    pub folds: Vec<CvFold>,
    /// Mean held-out AUROC per grid value, in grid order.
    pub mean_auroc: Vec<(f64, Option<f64>)>,
}

/// Leave-one-admission-year-out selection of the regularization strength.
/// Ties in mean AUROC go to the larger strength.
pub fn cross_validate(matrix: &FeatureMatrix, config: &TrainConfig) -> Result<CvResult> {
    config.validate()?;
    let years: BTreeSet<i32> = matrix.rows.iter().map(|r| r.admit_month.year).collect();
    if years.len() < 2 {
        return Err(Error::Fold(format!(
            "year-wise folds need at least 2 admission years, found {}",
            years.len()
        )));
    }
    let sampled = subsample_days(matrix, config.days_per_encounter, config.seed)?;
    let by_encounter = matrix.encounter_rows();
    let year_of = |e: &EncounterId| matrix.rows[by_encounter[e][0]].admit_month.year;

    let jobs: Vec<(f64, i32)> = config
        .grid
        .iter()
        .flat_map(|&l| years.iter().map(move |&y| (l, y)))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&(lambda, year)| {
            let train_rows: Vec<usize> = sampled
                .iter()
                .copied()
                .filter(|&i| matrix.rows[i].admit_month.year != year)
                .collect();
            let test: Vec<(&EncounterId, &Vec<usize>)> =
                by_encounter.iter().filter(|(e, _)| year_of(e) == year).collect();
            let n_train_encounters = by_encounter.keys().filter(|e| year_of(e) != year).count();
            let auroc = match fit_rows(matrix, &train_rows, config, lambda) {
                Ok(model) => {
                    let scores: Vec<f64> = test
                        .iter()
                        .map(|(_, rows)| {
                            rows.iter()
                                .map(|&i| model.predict_day(matrix.row(i), matrix.rows[i].date))
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect();
                    let labels: Vec<bool> = test.iter().map(|(e, _)| matrix.labels[e]).collect();
                    match auroc_raw(&scores, &labels) {
                        Ok(a) => Some(a),
                        Err(Error::UndefinedMetric(_)) => None,
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::DegenerateLabel(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(CvFold {
                lambda,
                held_out_year: year,
                n_train_encounters,
                n_test_encounters: test.len(),
                auroc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (k, l) in config.grid.iter().enumerate() {
        for f in folds.iter().filter(|f| f.lambda == *l) {
            if let Some(a) = f.auroc {
                let s = sums.entry(k).or_insert((0.0, 0));
                s.0 += a;
                s.1 += 1;
            }
        }
    }
    let mean_auroc: Vec<(f64, Option<f64>)> = config
        .grid
        .iter()
        .enumerate()
        .map(|(k, &l)| (l, sums.get(&k).map(|(s, n)| s / *n as f64)))
        .collect();
    let chosen = mean_auroc
        .iter()
        .filter_map(|&(l, m)| m.map(|m| (l, m)))
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 > best.0) {
                cand
            } else {
                best
            }
        })
        .map(|(l, _)| l)
        .ok_or_else(|| Error::Fold("no fold produced a defined AUROC".into()))?;
    Ok(CvResult {
        chosen,
        folds,
        mean_auroc,
    })
}
