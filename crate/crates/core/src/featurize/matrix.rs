use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inclusion::LabeledExtract;
use super::spec::{ColumnInfo, EncodeReport, FeatureSpecSet};
use crate::error::{Error, Result};
use crate::ids::{EncounterId, MonthYear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub encounter_id: EncounterId,
    pub date: NaiveDate,
    pub day_of_stay: u32,
    pub admit_month: MonthYear,
}

/// Binary encounter-day matrix in compressed sparse row form. Column
/// positions index `columns`; each entry stores the active positions of one
/// row in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnInfo>,
    pub rows: Vec<RowMeta>,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    pub labels: BTreeMap<EncounterId, bool>,
}

impl FeatureMatrix {
    pub fn from_rows(
        columns: Vec<ColumnInfo>,
        rows: Vec<(RowMeta, Vec<u32>)>,
        labels: BTreeMap<EncounterId, bool>,
    ) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut metas = Vec::with_capacity(rows.len());
        for (meta, active) in rows {
            if active.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!(
                    "row {} {}: column positions not strictly increasing",
                    meta.encounter_id, meta.date
                )));
            }
            if active.last().is_some_and(|&c| c as usize >= columns.len()) {
                return Err(Error::Data(format!(
                    "row {} {}: column position out of range",
                    meta.encounter_id, meta.date
                )));
            }
            if !labels.contains_key(&meta.encounter_id) {
                return Err(Error::Data(format!("encounter {} has rows but no label", meta.encounter_id)));
            }
            indices.extend_from_slice(&active);
            indptr.push(indices.len());
            metas.push(meta);
        }
        Ok(FeatureMatrix {
            columns,
            rows: metas,
            indptr,
            indices,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Active column positions of row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn get(&self, i: usize, col: u32) -> bool {
        self.row(i).binary_search(&col).is_ok()
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[&self.rows[i].encounter_id]
    }

    pub fn column_ids(&self) -> Vec<u32> {
        self.columns.iter().map(|c| c.id).collect()
    }

    /// Row indices per encounter, in row order.
    pub fn encounter_rows(&self) -> BTreeMap<EncounterId, Vec<usize>> {
        let mut out: BTreeMap<EncounterId, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.entry(r.encounter_id).or_default().push(i);
        }
        out
    }

    /// New matrix with the given rows, in the given order. Labels are kept
    /// only for encounters that still have rows.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let rows: Vec<(RowMeta, Vec<u32>)> = idx.iter().map(|&i| (self.rows[i], self.row(i).to_vec())).collect();
        let present: BTreeSet<EncounterId> = rows.iter().map(|(m, _)| m.encounter_id).collect();
        let labels = self
            .labels
            .iter()
            .filter(|(e, _)| present.contains(e))
            .map(|(e, l)| (*e, *l))
            .collect();
        FeatureMatrix::from_rows(self.columns.clone(), rows, labels).expect("rows taken from a valid matrix")
    }

    /// Keeps only the columns whose ids are listed.
    pub fn restrict_columns(&self, keep_ids: &[u32]) -> FeatureMatrix {
        let keep: BTreeSet<u32> = keep_ids.iter().copied().collect();
        let mut remap = vec![None; self.columns.len()];
        let mut columns = Vec::new();
        for (pos, c) in self.columns.iter().enumerate() {
            if keep.contains(&c.id) {
                remap[pos] = Some(columns.len() as u32);
                columns.push(c.clone());
            }
        }
        let rows = (0..self.n_rows())
            .map(|i| (self.rows[i], self.row(i).iter().filter_map(|&c| remap[c as usize]).collect()))
            .collect();
        FeatureMatrix::from_rows(columns, rows, self.labels.clone()).expect("restriction of a valid matrix")
    }

    /// Stacks matrices with identical columns.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let Some(first) = parts.first() else {
            return Err(Error::Data("no matrices to concatenate".into()));
        };
        let mut rows = Vec::new();
        let mut labels = BTreeMap::new();
        for m in parts {
            if m.columns != first.columns {
                return Err(Error::Schema("cannot stack matrices with different columns".into()));
            }
            for (e, l) in &m.labels {
                if labels.insert(*e, *l).is_some() {
                    return Err(Error::Data(format!("encounter {e} appears in more than one matrix")));
                }
            }
            rows.extend((0..m.n_rows()).map(|i| (m.rows[i], m.row(i).to_vec())));
        }
        FeatureMatrix::from_rows(first.columns.clone(), rows, labels)
    }
}

/// Encodes a labeled extract with a frozen spec set, keeping only retained
/// columns.
pub fn encode_matrix(data: &LabeledExtract, specs: &FeatureSpecSet) -> Result<(FeatureMatrix, EncodeReport)> {
    specs.check_version()?;
    let mut position = vec![None; specs.width()];
    for (pos, &c) in specs.retained.iter().enumerate() {
        position[c as usize] = Some(pos as u32);
    }
    let admits: BTreeMap<EncounterId, MonthYear> = data
        .extract
        .encounters
        .iter()
        .map(|m| {
            m.admit_at
                .map(|a| (m.encounter_id, MonthYear::of(a.date())))
                .ok_or(Error::MissingMetadata(m.encounter_id))
        })
        .collect::<Result<_>>()?;
    let encoded: Vec<(RowMeta, Vec<u32>, EncodeReport)> = data
        .extract
        .rows
        .par_iter()
        .map(|day| {
            let mut report = EncodeReport::default();
            let active = specs
                .encode(day, &mut report)
                .into_iter()
                .filter_map(|c| position[c as usize])
                .collect();
            let admit_month = *admits
                .get(&day.encounter_id)
                .ok_or_else(|| Error::Data(format!("row for encounter {} has no metadata", day.encounter_id)))?;
            let meta = RowMeta {
                encounter_id: day.encounter_id,
                date: day.date,
                day_of_stay: day.day_of_stay,
                admit_month,
            };
            Ok((meta, active, report))
        })
        .collect::<Result<_>>()?;
    let mut report = EncodeReport::default();
    let rows = encoded
        .into_iter()
        .map(|(m, a, r)| {
            report.merge(r);
            (m, a)
        })
        .collect();
    let present: BTreeSet<EncounterId> = data.extract.rows.iter().map(|r| r.encounter_id).collect();
    let labels = data
        .labels
        .iter()
        .filter(|(e, _)| present.contains(e))
        .map(|(e, l)| (*e, *l))
        .collect();
    Ok((FeatureMatrix::from_rows(specs.retained_columns(), rows, labels)?, report))
}

/// Ids of columns active in at least `min_encounters` distinct encounters.
pub fn prune_rare(matrix: &FeatureMatrix, min_encounters: usize) -> Vec<u32> {
    let mut seen: Vec<BTreeSet<EncounterId>> = vec![BTreeSet::new(); matrix.n_cols()];
    for i in 0..matrix.n_rows() {
        for &c in matrix.row(i) {
            seen[c as usize].insert(matrix.rows[i].encounter_id);
        }
    }
    matrix
        .columns
        .iter()
        .zip(&seen)
        .filter(|(_, s)| s.len() >= min_encounters)
        .map(|(c, _)| c.id)
        .collect()
}

/// Rows shared by a prospective matrix and its retrospective counterpart.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedIndex {
    /// (prospective row, retrospective row), in prospective order.
    pub pairs: Vec<(usize, usize)>,
    pub pro_only: Vec<usize>,
    pub ret_only: Vec<usize>,
}

pub fn align_paired(pro: &FeatureMatrix, ret: &FeatureMatrix) -> Result<PairedIndex> {
    if pro.column_ids() != ret.column_ids() {
        return Err(Error::Schema(format!(
            "paired matrices have different columns ({} vs {})",
            pro.n_cols(),
            ret.n_cols()
        )));
    }
    let key = |m: &RowMeta| (m.encounter_id, m.date);
    let ret_index: BTreeMap<(EncounterId, NaiveDate), usize> =
        ret.rows.iter().enumerate().map(|(i, m)| (key(m), i)).collect();
    let mut out = PairedIndex::default();
    let mut matched = vec![false; ret.n_rows()];
    for (i, m) in pro.rows.iter().enumerate() {
        match ret_index.get(&key(m)) {
            Some(&j) => {
                out.pairs.push((i, j));
                matched[j] = true;
            }
            None => out.pro_only.push(i),
        }
    }
    out.ret_only = (0..ret.n_rows()).filter(|&j| !matched[j]).collect();
    Ok(out)
}
