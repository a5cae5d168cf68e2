//! Retrospective-vs-prospective performance gap and its source analyses.

mod concordance;
mod discrepancy;
mod drift;
mod swap;

use serde::{Deserialize, Serialize};

pub use concordance::{outage_days_per_encounter, score_concordance, ConcordanceReport, DiscordantEncounter, ScorePair};
pub use discrepancy::{feature_discrepancy, ColumnDiscrepancy, DiscrepancyReport, GroupDiscrepancy, HistogramBin};
pub use drift::{temporal_drift_test, ColumnDrift, DriftReport, GroupDriftCount};
pub use swap::{all_swap_groups, feature_swap, parse_group, swap_analysis, swap_union_auroc, SwapReport, SwapRow};

use crate::error::Result;
use crate::metrics::{resample_replicates, MetricCI, Measure, ScoreSet};
use crate::rng::tag;

/// Point values of one measure on the three datasets and the gaps between
/// them. Gaps are oriented so that a positive value means the retrospective
/// side performed better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapValues {
    pub p_ret: f64,
    pub p_ret_prime: f64,
    pub p_pro: f64,
    pub delta: f64,
    pub delta_time: f64,
    pub delta_infra: f64,
    pub negated: bool,
}

impl GapValues {
    /// `|delta - (delta_time + delta_infra)|`.
    pub fn identity_error(&self) -> f64 {
        (self.delta - (self.delta_time + self.delta_infra)).abs()
    }
}

pub fn performance_gap(p_ret: f64, p_ret_prime: f64, p_pro: f64, negate: bool) -> GapValues {
    let s = if negate { -1.0 } else { 1.0 };
    // Adding 0.0 turns a negative zero into a positive one.
    GapValues {
        p_ret,
        p_ret_prime,
        p_pro,
        delta: s * (p_ret - p_pro) + 0.0,
        delta_time: s * (p_ret - p_ret_prime) + 0.0,
        delta_infra: s * (p_ret_prime - p_pro) + 0.0,
        negated: negate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub measure: Measure,
    /// Whether gaps are taken on the negated measure.
    pub negated: bool,
    pub point: GapValues,
    pub p_ret: MetricCI,
    pub p_ret_prime: MetricCI,
    pub p_pro: MetricCI,
    pub delta: MetricCI,
    pub delta_time: MetricCI,
    pub delta_infra: MetricCI,
    pub n_ret: usize,
    pub n_ret_prime: usize,
    pub n_pro: usize,
    pub n_replicates: usize,
    pub redraws: usize,
    /// Largest decomposition identity error over the point estimate and
    /// every replicate.
    pub max_identity_error: f64,
}

/// Bootstrap of the three measures and gaps. Each replicate resamples the
/// three datasets independently, from stream `(seed, GAP, k, attempt)`.
pub fn gap_bootstrap(
    ret: &ScoreSet,
    ret_prime: &ScoreSet,
    pro: &ScoreSet,
    measure: Measure,
    n_replicates: usize,
    seed: u64,
) -> Result<GapReport> {
    let negate = measure.negate_for_gap();
    let data: Vec<(Vec<f64>, Vec<bool>)> = [ret, ret_prime, pro].iter().map(|s| (s.scores(), s.labels())).collect();
    let point = performance_gap(
        measure.evaluate(&data[0].0, &data[0].1)?,
        measure.evaluate(&data[1].0, &data[1].1)?,
        measure.evaluate(&data[2].0, &data[2].1)?,
        negate,
    );
    let (reps, redraws) = resample_replicates(n_replicates, seed, &[tag::GAP], |rng| {
        let mut p = [0.0; 3];
        for (slot, (s, l)) in p.iter_mut().zip(&data) {
            *slot = crate::metrics::resampled(measure, s, l, rng)?;
        }
        Ok(performance_gap(p[0], p[1], p[2], negate))
    })?;
    let ci = |f: fn(&GapValues) -> f64| {
        let v: Vec<f64> = reps.iter().map(f).collect();
        MetricCI::from_replicates(f(&point), &v, redraws)
    };
    let max_identity_error = reps
        .iter()
        .chain(std::iter::once(&point))
        .map(GapValues::identity_error)
        .fold(0.0, f64::max);
    Ok(GapReport {
        measure,
        negated: negate,
        p_ret: ci(|g| g.p_ret),
        p_ret_prime: ci(|g| g.p_ret_prime),
        p_pro: ci(|g| g.p_pro),
        delta: ci(|g| g.delta),
        delta_time: ci(|g| g.delta_time),
        delta_infra: ci(|g| g.delta_infra),
        point,
        n_ret: ret.len(),
        n_ret_prime: ret_prime.len(),
        n_pro: pro.len(),
        n_replicates,
        redraws,
        max_identity_error,
    })
}
