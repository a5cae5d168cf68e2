use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::featurize::FeatureMatrix;
use crate::ids::EncounterId;
use crate::metrics::ScoreSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub encounter_id: EncounterId,
    pub retrospective: f64,
    pub prospective: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscordantEncounter {
    pub encounter_id: EncounterId,
    pub retrospective: f64,
    pub prospective: f64,
    /// `prospective - retrospective`.
    pub difference: f64,
    pub outage_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub pairs: Vec<ScorePair>,
    /// `None` when either axis has zero variance or there are fewer than
    /// two pairs.
    pub pearson: Option<f64>,
    /// Least-squares fit of prospective on retrospective scores.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub threshold: f64,
    pub discordant: Vec<DiscordantEncounter>,
    /// Encounters only one pipeline scored.
    pub retrospective_only: usize,
    pub prospective_only: usize,
}

/// Outage dates falling on each encounter's rows of `matrix`.
pub fn outage_days_per_encounter(
    matrix: &FeatureMatrix,
    outages: &BTreeSet<NaiveDate>,
) -> BTreeMap<EncounterId, usize> {
    matrix
        .encounter_rows()
        .into_iter()
        .map(|(e, rows)| {
            let n = rows.iter().filter(|&&i| outages.contains(&matrix.rows[i].date)).count();
            (e, n)
        })
        .collect()
}

/// Compares encounter max scores of the two pipelines over encounters both
/// scored. Pairs whose absolute difference is at least `threshold` are
/// listed as discordant.
pub fn score_concordance(
    retrospective: &ScoreSet,
    prospective: &ScoreSet,
    outage_days: &BTreeMap<EncounterId, usize>,
    threshold: f64,
) -> Result<ConcordanceReport> {
    let ret = retrospective.by_encounter();
    let pro = prospective.by_encounter();
    let pairs: Vec<ScorePair> = ret
        .iter()
        .filter_map(|(e, r)| {
            pro.get(e).map(|p| ScorePair {
                encounter_id: *e,
                retrospective: r.score,
                prospective: p.score,
                label: r.label,
            })
        })
        .collect();
    let x: Vec<f64> = pairs.iter().map(|p| p.retrospective).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.prospective).collect();
    let (pearson, fit) = least_squares(&x, &y);
    let discordant = pairs
        .iter()
        .filter(|p| (p.prospective - p.retrospective).abs() >= threshold)
        .map(|p| DiscordantEncounter {
            encounter_id: p.encounter_id,
            retrospective: p.retrospective,
            prospective: p.prospective,
            difference: p.prospective - p.retrospective,
            outage_days: outage_days.get(&p.encounter_id).copied().unwrap_or(0),
        })
        .collect();
    Ok(ConcordanceReport {
        retrospective_only: ret.len() - pairs.len(),
        prospective_only: pro.len() - pairs.len(),
        pairs,
        pearson,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        threshold,
        discordant,
    })
}

/// Pearson r and the (slope, intercept) fit, each `None` when undefined.
fn least_squares(x: &[f64], y: &[f64]) -> (Option<f64>, Option<(f64, f64)>) {
    let n = x.len();
    if n < 2 {
        return (None, None);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) {
        return (None, None);
    }
    let slope = sxy / sxx;
    let fit = Some((slope, my - slope * mx));
    if constant(y) {
        return (None, fit);
    }
    (Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)), fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::MonthYear;
    use crate::metrics::EncounterScore;

    fn set(pairs: &[(u64, f64)]) -> ScoreSet {
        ScoreSet {
            entries: pairs
                .iter()
                .map(|&(e, score)| EncounterScore {
                    encounter_id: EncounterId(e),
                    admit_month: MonthYear { year: 2020, month: 1 },
                    score,
                    label: e % 2 == 0,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_pipelines_agree_perfectly() {
        let s = set(&[(1, 0.1), (2, 0.3), (3, 0.25), (4, 0.9)]);
        let r = score_concordance(&s, &s, &BTreeMap::new(), 0.5).unwrap();
        assert_eq!(r.pearson, Some(1.0));
        assert_eq!(r.slope, Some(1.0));
        assert!(r.discordant.is_empty());
        assert_eq!(r.pairs.len(), 4);
    }

    #[test]
    fn five_pairs_match_closed_form() {
        let x = [0.1, 0.2, 0.4, 0.5, 0.9];
        let y = [0.15, 0.1, 0.5, 0.45, 0.8];
        let ret = set(&x.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect::<Vec<_>>());
        let pro = set(&y.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect::<Vec<_>>());
        let r = score_concordance(&ret, &pro, &BTreeMap::new(), 0.5).unwrap();
        // Textbook sums form, independent of the centered accumulation.
        let n = 5.0;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        let pearson = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((r.slope.unwrap() - slope).abs() < 1e-12);
        assert!((r.intercept.unwrap() - intercept).abs() < 1e-12);
        assert!((r.pearson.unwrap() - pearson).abs() < 1e-12);
    }

    #[test]
    fn constant_axis_leaves_r_undefined() {
        let ret = set(&[(1, 0.2), (2, 0.2), (3, 0.2)]);
        let pro = set(&[(1, 0.1), (2, 0.4), (3, 0.3)]);
        let r = score_concordance(&ret, &pro, &BTreeMap::new(), 0.5).unwrap();
        assert!(r.pearson.is_none() && r.slope.is_none());
        let one = set(&[(1, 0.2)]);
        assert!(score_concordance(&one, &one, &BTreeMap::new(), 0.5).unwrap().pearson.is_none());
    }

    #[test]
    fn discordant_pairs_carry_outage_counts() {
        let ret = set(&[(1, 0.1), (2, 0.9), (3, 0.3), (5, 0.5)]);
        let pro = set(&[(1, 0.7), (2, 0.3), (3, 0.31), (4, 0.2)]);
        let outages = BTreeMap::from([(EncounterId(2), 4)]);
        let r = score_concordance(&ret, &pro, &outages, 0.5).unwrap();
        let ids: Vec<u64> = r.discordant.iter().map(|d| d.encounter_id.0).collect();
        assert_eq!(ids, vec![1, 2]);
        assert_eq!(r.discordant[1].outage_days, 4);
        assert_eq!((r.retrospective_only, r.prospective_only), (1, 1));
    }
}
