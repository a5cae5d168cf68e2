//! Cohort inclusion and binary encounter-day feature matrices.

mod inclusion;
mod matrix;
mod spec;
pub mod taxonomy;

use serde::{Deserialize, Serialize};

pub use inclusion::{apply_inclusion, InclusionConfig, InclusionReport, LabeledExtract};
pub use matrix::{align_paired, encode_matrix, prune_rare, FeatureMatrix, PairedIndex, RowMeta};
pub use spec::{
    fit_quintile_bins, fit_specs, quintile_bin, ColumnInfo, EncodeReport, Encoding, FeatureSpec, FeatureSpecSet,
    FEATURE_SPEC_VERSION,
};

use crate::error::Result;
use taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizeConfig {
    pub inclusion: InclusionConfig,
    pub include_missing_bin: bool,
    /// Columns active in fewer training encounters are dropped.
    pub min_encounters: usize,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            inclusion: InclusionConfig::default(),
            include_missing_bin: true,
            min_encounters: 10,
        }
    }
}

/// Fits encodings and the retained column set on the training extracts and
/// returns them with the stacked training matrix.
pub fn fit_training(
    parts: &[LabeledExtract],
    taxonomy: &Taxonomy,
    config: &FeaturizeConfig,
) -> Result<(FeatureSpecSet, FeatureMatrix, EncodeReport)> {
    let rows: Vec<_> = parts.iter().flat_map(|p| p.extract.rows.iter().cloned()).collect();
    let specs = fit_specs(&rows, taxonomy, config.include_missing_bin);
    let mut report = EncodeReport::default();
    let mut matrices = Vec::with_capacity(parts.len());
    for p in parts {
        let (m, r) = encode_matrix(p, &specs)?;
        report.merge(r);
        matrices.push(m);
    }
    let full = FeatureMatrix::concat(&matrices)?;
    let retained = prune_rare(&full, config.min_encounters);
    let train = full.restrict_columns(&retained);
    let specs = specs.with_retained(retained)?;
    Ok((specs, train, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr_sim::{build_retrospective_period, SimConfig};

    #[test]
    fn encoding_is_binary_total_and_idempotent() {
        let mut sim = SimConfig::desk();
        sim.n_encounters = 150;
        let raw = build_retrospective_period(&sim, 0).unwrap();
        let data = apply_inclusion(&raw, &InclusionConfig::default()).unwrap();
        let tax = Taxonomy::build(&sim.taxonomy);
        let config = FeaturizeConfig::default();
        let (specs, train, _) = fit_training(std::slice::from_ref(&data), &tax, &config).unwrap();
        assert_eq!(train.n_cols(), specs.retained.len());
        assert_eq!(train.n_rows(), data.extract.rows.len());
        let (again, _) = encode_matrix(&data, &specs).unwrap();
        assert_eq!(again, train);
        // Each numeric feature sets exactly one bit before pruning.
        let full = specs.clone().with_retained(0..specs.width() as u32).unwrap();
        let (m, _) = encode_matrix(&data, &full).unwrap();
        for s in specs.specs.iter().filter(|s| matches!(s.encoding, Encoding::Quintile { .. })) {
            let cols: Vec<u32> = full.columns.iter().filter(|c| c.feature_id == s.feature_id).map(|c| c.id).collect();
            for i in 0..m.n_rows() {
                assert_eq!(cols.iter().filter(|&&c| m.get(i, c)).count(), 1);
            }
        }
    }
}
