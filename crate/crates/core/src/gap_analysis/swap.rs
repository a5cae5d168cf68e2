use std::collections::BTreeSet;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::taxonomy::GroupKey;
use crate::featurize::{align_paired, FeatureMatrix, PairedIndex};
use crate::metrics::{auroc, ScoreSet};
use crate::risk_model::RiskModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapRow {
    pub group: GroupKey,
    pub label: String,
    pub n_columns: usize,
    pub auroc: f64,
    /// `auroc - baseline`.
    pub difference: f64,
}

impl SwapRow {
    /// Table form, e.g. `Hx: Medications, 0.787, +0.018`.
    pub fn table_line(&self) -> String {
        format!("{}, {:.3}, {:+.3}", self.label, self.auroc, self.difference)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    /// AUROC of the unswapped prospective rows.
    pub baseline_auroc: f64,
    /// Rows dated after this were left out.
    pub window_end: Option<NaiveDate>,
    pub n_pairs: usize,
    pub n_encounters: usize,
    /// Sorted by difference, largest first.
    pub rows: Vec<SwapRow>,
}

/// Resolves a group from its key or display label.
pub fn parse_group(name: &str) -> Result<GroupKey> {
    GroupKey::parse(name).ok_or_else(|| Error::Taxonomy(name.to_string()))
}

/// Leaf groups followed by roll-ups.
pub fn all_swap_groups() -> Vec<GroupKey> {
    GroupKey::leaves().chain(GroupKey::rollups()).collect()
}

struct Paired<'a> {
    pro: &'a FeatureMatrix,
    ret: &'a FeatureMatrix,
    pairs: Vec<(usize, usize)>,
    /// Paired prospective rows, which carry the encounter labels.
    base: FeatureMatrix,
}

impl<'a> Paired<'a> {
    fn new(pro: &'a FeatureMatrix, ret: &'a FeatureMatrix, index: &PairedIndex, window_end: Option<NaiveDate>) -> Self {
        let pairs: Vec<(usize, usize)> = index
            .pairs
            .iter()
            .copied()
            .filter(|&(i, _)| window_end.is_none_or(|end| pro.rows[i].date <= end))
            .collect();
        let base = pro.select_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        Paired { pro, ret, pairs, base }
    }

    /// AUROC after taking the positions in `swap` from the retrospective
    /// rows and the rest from the prospective rows.
    fn auroc_with(&self, model: &RiskModel, swap: &BTreeSet<u32>) -> Result<f64> {
        let daily: Vec<f64> = self
            .pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut row: Vec<u32> = self
                    .pro
                    .row(i)
                    .iter()
                    .filter(|c| !swap.contains(c))
                    .chain(self.ret.row(j).iter().filter(|c| swap.contains(c)))
                    .copied()
                    .collect();
                row.sort_unstable();
                model.predict_day(&row, self.pro.rows[i].date)
            })
            .collect();
        auroc(&ScoreSet::from_daily(&self.base, &daily)?)
    }
}

fn group_positions(matrix: &FeatureMatrix, group: GroupKey) -> BTreeSet<u32> {
    matrix
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| group.contains(c.group))
        .map(|(k, _)| k as u32)
        .collect()
}

/// Swaps one group's columns from `ret` into `pro` over the paired rows and
/// rescores them.
pub fn feature_swap(
    pro: &FeatureMatrix,
    ret: &FeatureMatrix,
    group: GroupKey,
    model: &RiskModel,
    baseline: f64,
) -> Result<SwapRow> {
    model.check_columns(pro)?;
    let index = align_paired(pro, ret)?;
    let paired = Paired::new(pro, ret, &index, None);
    swap_row(&paired, group, model, baseline)
}

/// AUROC over the paired rows with every column of `groups` taken from
/// `ret`, and the number of columns swapped.
pub fn swap_union_auroc(
    pro: &FeatureMatrix,
    ret: &FeatureMatrix,
    groups: &[GroupKey],
    model: &RiskModel,
) -> Result<(usize, f64)> {
    model.check_columns(pro)?;
    let index = align_paired(pro, ret)?;
    let paired = Paired::new(pro, ret, &index, None);
    let positions: BTreeSet<u32> = groups.iter().flat_map(|&g| group_positions(pro, g)).collect();
    Ok((positions.len(), paired.auroc_with(model, &positions)?))
}

fn swap_row(paired: &Paired<'_>, group: GroupKey, model: &RiskModel, baseline: f64) -> Result<SwapRow> {
    let positions = group_positions(paired.pro, group);
    let auroc = paired.auroc_with(model, &positions)?;
    Ok(SwapRow {
        group,
        label: group.label(),
        n_columns: positions.len(),
        auroc,
        difference: auroc - baseline,
    })
}

/// Swap analysis over `groups`, skipping groups without columns. With
/// `window_end`, only paired rows dated on or before it are used.
pub fn swap_analysis(
    pro: &FeatureMatrix,
    ret: &FeatureMatrix,
    model: &RiskModel,
    groups: &[GroupKey],
    window_end: Option<NaiveDate>,
) -> Result<SwapReport> {
    model.check_columns(pro)?;
    let index = align_paired(pro, ret)?;
    let paired = Paired::new(pro, ret, &index, window_end);
    let baseline_auroc = paired.auroc_with(model, &BTreeSet::new())?;
    let mut rows = groups
        .iter()
        .filter(|&&g| !group_positions(pro, g).is_empty())
        .map(|&g| swap_row(&paired, g, model, baseline_auroc))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.difference.total_cmp(&a.difference));
    Ok(SwapReport {
        baseline_auroc,
        window_end,
        n_pairs: paired.pairs.len(),
        n_encounters: paired.base.encounter_rows().len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{ColumnInfo, RowMeta};
    use crate::ids::{EncounterId, FeatureId, MonthYear};
    use crate::risk_model::{train, TrainConfig};
    use crate::rng::stream;
    use rand::Rng;
    use std::collections::BTreeMap;

    const GROUPS: [GroupKey; 4] = [
        GroupKey::IdxMedications,
        GroupKey::VitalSigns,
        GroupKey::HxDiagnoses,
        GroupKey::Age,
    ];

    fn pair(seed: u64, corrupt: f64) -> (FeatureMatrix, FeatureMatrix) {
        let columns: Vec<ColumnInfo> = (0..8u32)
            .map(|id| ColumnInfo {
                id,
                feature_id: FeatureId(id),
                label: format!("c{id}"),
                group: GROUPS[id as usize % 4],
            })
            .collect();
        let mut rng = stream(seed, &[0]);
        let mut labels = BTreeMap::new();
        let (mut ret_rows, mut pro_rows) = (Vec::new(), Vec::new());
        let d0 = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
        for e in 0..400u64 {
            let label = rng.random::<f64>() < 0.25;
            labels.insert(EncounterId(e), label);
            for d in 0..3u64 {
                let meta = RowMeta {
                    encounter_id: EncounterId(e),
                    date: d0 + chrono::Days::new(d + e % 30),
                    day_of_stay: d as u32 + 1,
                    admit_month: MonthYear::of(d0),
                };
                let active: Vec<u32> = (0..8u32)
                    .filter(|c| rng.random::<f64>() < if label && c % 2 == 0 { 0.6 } else { 0.2 })
                    .collect();
                // Prospective rows lose medication columns at random.
                let pro: Vec<u32> = active
                    .iter()
                    .copied()
                    .filter(|c| c % 4 != 0 || rng.random::<f64>() >= corrupt)
                    .collect();
                ret_rows.push((meta, active));
                pro_rows.push((meta, pro));
            }
        }
        (
            FeatureMatrix::from_rows(columns.clone(), pro_rows, labels.clone()).unwrap(),
            FeatureMatrix::from_rows(columns, ret_rows, labels).unwrap(),
        )
    }

    fn model(m: &FeatureMatrix) -> RiskModel {
        train(m, &TrainConfig { regularization: 1e-2, ..TrainConfig::default() }).unwrap()
    }

    #[test]
    fn full_swap_reproduces_retrospective_scores_bitwise() {
        let (pro, ret) = pair(1, 0.5);
        let m = model(&ret);
        let all: Vec<GroupKey> = vec![GroupKey::Demographics, GroupKey::Hx, GroupKey::Idx];
        let paired = Paired::new(&pro, &ret, &align_paired(&pro, &ret).unwrap(), None);
        let positions: BTreeSet<u32> = all.iter().flat_map(|&g| group_positions(&pro, g)).collect();
        assert_eq!(positions.len(), 8);
        let swapped = paired.auroc_with(&m, &positions).unwrap();
        let reference = auroc(&ScoreSet::from_daily(&ret, &m.score_matrix(&ret).unwrap()).unwrap()).unwrap();
        assert_eq!(swapped.to_bits(), reference.to_bits());
    }

    #[test]
    fn clean_group_swap_changes_nothing_and_corrupt_group_leads() {
        let (pro, ret) = pair(2, 0.6);
        let m = model(&ret);
        let report = swap_analysis(&pro, &ret, &m, &GROUPS, None).unwrap();
        assert_eq!(report.rows[0].group, GroupKey::IdxMedications);
        assert!(report.rows[0].difference > 0.0);
        for r in &report.rows[1..] {
            assert_eq!(r.difference, 0.0, "{}", r.label);
        }
        let single = feature_swap(&pro, &ret, GroupKey::VitalSigns, &m, report.baseline_auroc).unwrap();
        assert_eq!(single.difference, 0.0);
    }

    #[test]
    fn window_limits_rows_and_empty_groups_are_skipped() {
        let (pro, ret) = pair(3, 0.3);
        let m = model(&ret);
        let end = NaiveDate::from_ymd_opt(2019, 3, 15).unwrap();
        let r = swap_analysis(&pro, &ret, &m, &all_swap_groups(), Some(end)).unwrap();
        assert!(r.n_pairs < pro.n_rows());
        assert!(r.rows.iter().all(|row| row.n_columns > 0));
        assert!(r.rows.iter().any(|row| row.group == GroupKey::Hx));
    }

    #[test]
    fn table_line_format_and_unknown_group() {
        let row = SwapRow {
            group: GroupKey::HxMedications,
            label: GroupKey::HxMedications.label(),
            n_columns: 3,
            auroc: 0.7871,
            difference: 0.0182,
        };
        assert_eq!(row.table_line(), "Hx: Medications, 0.787, +0.018");
        assert_eq!(parse_group("hx_medications").unwrap(), GroupKey::HxMedications);
        assert!(matches!(parse_group("Hx: Nonsense"), Err(Error::Taxonomy(_))));
    }
}
