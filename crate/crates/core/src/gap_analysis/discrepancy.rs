use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::featurize::taxonomy::GroupKey;
use crate::featurize::{align_paired, FeatureMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiscrepancy {
    pub column: u32,
    pub label: String,
    pub group: GroupKey,
    /// Paired encounter-days where the two pipelines disagree on this column.
    pub mismatches: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiscrepancy {
    pub group: GroupKey,
    pub label: String,
    pub n_columns: usize,
    pub columns_with_any: usize,
    pub mean_rate: f64,
    pub max_rate: f64,
}

/// Half-open bin `(lower, upper]`; the first bin holds exact zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub n_pairs: usize,
    pub columns: Vec<ColumnDiscrepancy>,
    /// Leaf groups and roll-ups that own at least one column.
    pub groups: Vec<GroupDiscrepancy>,
    pub histogram: Vec<HistogramBin>,
    pub n_columns_any: usize,
    pub n_columns_over_1pct: usize,
}

const EDGES: [f64; 8] = [0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.25, 1.0];

/// Per-column rate of disagreement over encounter-days present in both
/// matrices.
pub fn feature_discrepancy(pro: &FeatureMatrix, ret: &FeatureMatrix) -> Result<DiscrepancyReport> {
    let paired = align_paired(pro, ret)?;
    let n_pairs = paired.pairs.len();
    let mut mismatches = vec![0usize; pro.n_cols()];
    for &(i, j) in &paired.pairs {
        let (a, b) = (pro.row(i), ret.row(j));
        let (mut x, mut y) = (0, 0);
        while x < a.len() || y < b.len() {
            match (a.get(x), b.get(y)) {
                (Some(&p), Some(&q)) if p == q => {
                    x += 1;
                    y += 1;
                }
                (Some(&p), Some(&q)) if p < q => {
                    mismatches[p as usize] += 1;
                    x += 1;
                }
                (Some(&p), None) => {
                    mismatches[p as usize] += 1;
                    x += 1;
                }
                (_, Some(&q)) => {
                    mismatches[q as usize] += 1;
                    y += 1;
                }
                (None, None) => unreachable!(),
            }
        }
    }
    let rate = |m: usize| if n_pairs == 0 { 0.0 } else { m as f64 / n_pairs as f64 };
    let columns: Vec<ColumnDiscrepancy> = pro
        .columns
        .iter()
        .zip(&mismatches)
        .map(|(c, &m)| ColumnDiscrepancy {
            column: c.id,
            label: c.label.clone(),
            group: c.group,
            mismatches: m,
            rate: rate(m),
        })
        .collect();

    let groups = GroupKey::all()
        .filter_map(|g| {
            let members: Vec<&ColumnDiscrepancy> = columns.iter().filter(|c| g.contains(c.group)).collect();
            if members.is_empty() {
                return None;
            }
            Some(GroupDiscrepancy {
                group: g,
                label: g.label(),
                n_columns: members.len(),
                columns_with_any: members.iter().filter(|c| c.mismatches > 0).count(),
                mean_rate: members.iter().map(|c| c.rate).sum::<f64>() / members.len() as f64,
                max_rate: members.iter().map(|c| c.rate).fold(0.0, f64::max),
            })
        })
        .collect();

    let mut histogram: Vec<HistogramBin> = std::iter::once((0.0, 0.0))
        .chain(EDGES.windows(2).map(|w| (w[0], w[1])))
        .map(|(lower, upper)| HistogramBin { lower, upper, count: 0 })
        .collect();
    for c in &columns {
        let k = if c.rate == 0.0 {
            0
        } else {
            1 + EDGES[1..].iter().position(|&u| c.rate <= u).unwrap_or(EDGES.len() - 2)
        };
        histogram[k].count += 1;
    }

    Ok(DiscrepancyReport {
        n_pairs,
        n_columns_any: columns.iter().filter(|c| c.mismatches > 0).count(),
        n_columns_over_1pct: columns.iter().filter(|c| c.rate > 0.01).count(),
        columns,
        groups,
        histogram,
    })
}
