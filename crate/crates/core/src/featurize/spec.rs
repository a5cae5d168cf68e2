use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::taxonomy::{FeatureKind, GroupKey, Taxonomy};
use crate::ehr_sim::{RawDay, Value};
use crate::error::{Error, Result};
use crate::ids::FeatureId;
use crate::stats::percentile_sorted;

pub const FEATURE_SPEC_VERSION: u32 = 1;

/// Split points at the 20/40/60/80th percentiles (linear interpolation
/// between closest ranks).
pub fn fit_quintile_bins(values: &[f64]) -> Result<[f64; 4]> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.len() < 5 {
        return Err(Error::DegenerateFeature(format!(
            "{} non-missing values, at least 5 needed for quintiles",
            sorted.len()
        )));
    }
    sorted.sort_by(f64::total_cmp);
    Ok([0.2, 0.4, 0.6, 0.8].map(|p| percentile_sorted(&sorted, p * 100.0)))
}

/// Quintile bin of `value`, 0-based. A value equal to a bound goes to the
/// lower bin.
pub fn quintile_bin(bounds: &[f64; 4], value: f64) -> usize {
    bounds.iter().filter(|&&b| value > b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Encoding {
    /// One column per category seen in training.
    Categorical { categories: Vec<u32> },
    /// Five quintile columns.
    Quintile { bounds: [f64; 4] },
    /// Too few training values to bin; only the missing column remains.
    MissingOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: FeatureId,
    pub name: String,
    pub group: GroupKey,
    pub encoding: Encoding,
    /// Numeric features only: an extra column set when no value is present.
    pub include_missing_bin: bool,
}

impl FeatureSpec {
    fn has_missing_column(&self) -> bool {
        self.include_missing_bin && !matches!(self.encoding, Encoding::Categorical { .. })
    }

    pub fn width(&self) -> usize {
        let body = match &self.encoding {
            Encoding::Categorical { categories } => categories.len(),
            Encoding::Quintile { .. } => 5,
            Encoding::MissingOnly => 0,
        };
        body + usize::from(self.has_missing_column())
    }

    fn column_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = match &self.encoding {
            Encoding::Categorical { categories } => categories.iter().map(|c| format!("{}={c}", self.name)).collect(),
            Encoding::Quintile { .. } => (1..=5).map(|q| format!("{}:q{q}", self.name)).collect(),
            Encoding::MissingOnly => Vec::new(),
        };
        if self.has_missing_column() {
            labels.push(format!("{}:missing", self.name));
        }
        labels
    }

    /// Offset within this feature's columns of the bit to set, if any.
    /// `Err(())` marks a value the spec cannot place (unseen category).
    fn slot(&self, value: Option<Value>) -> std::result::Result<Option<usize>, ()> {
        match (&self.encoding, value) {
            (Encoding::Categorical { categories }, Some(Value::Cat(c))) => {
                categories.binary_search(&c).map(Some).map_err(|_| ())
            }
            (Encoding::Categorical { .. }, None) => Ok(None),
            (Encoding::Categorical { .. }, Some(Value::Num(_))) => Err(()),
            (Encoding::Quintile { bounds }, Some(v)) => {
                let x = match v {
                    Value::Num(x) => x,
                    Value::Cat(c) => f64::from(c),
                };
                Ok(Some(quintile_bin(bounds, x)))
            }
            (Encoding::Quintile { .. }, None) => Ok(self.has_missing_column().then_some(5)),
            (Encoding::MissingOnly, Some(_)) => Ok(None),
            (Encoding::MissingOnly, None) => Ok(self.has_missing_column().then_some(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    /// Column id before pruning; stable across all matrices built from one
    /// spec set.
    pub id: u32,
    pub feature_id: FeatureId,
    pub label: String,
    pub group: GroupKey,
}

/// Counts of values the encoder could not place.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub unseen_categories: BTreeMap<FeatureId, usize>,
}

impl EncodeReport {
    pub fn total_unseen(&self) -> usize {
        self.unseen_categories.values().sum()
    }

    pub fn merge(&mut self, other: EncodeReport) {
        for (f, n) in other.unseen_categories {
            *self.unseen_categories.entry(f).or_default() += n;
        }
    }
}

/// Frozen encoding of every raw feature plus the retained column set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpecSet {
    pub version: u32,
    pub specs: Vec<FeatureSpec>,
    pub columns: Vec<ColumnInfo>,
    /// Column ids kept after rare-column pruning, ascending.
    pub retained: Vec<u32>,
}

impl FeatureSpecSet {
    pub fn new(specs: Vec<FeatureSpec>) -> Self {
        let mut columns = Vec::new();
        for s in &specs {
            for label in s.column_labels() {
                columns.push(ColumnInfo {
                    id: columns.len() as u32,
                    feature_id: s.feature_id,
                    label,
                    group: s.group,
                });
            }
        }
        let retained = (0..columns.len() as u32).collect();
        FeatureSpecSet {
            version: FEATURE_SPEC_VERSION,
            specs,
            columns,
            retained,
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn with_retained(mut self, retained: impl IntoIterator<Item = u32>) -> Result<Self> {
        let set: BTreeSet<u32> = retained.into_iter().collect();
        if set.iter().any(|&c| c as usize >= self.columns.len()) {
            return Err(Error::Schema("retained column id out of range".into()));
        }
        self.retained = set.into_iter().collect();
        Ok(self)
    }

    pub fn retained_columns(&self) -> Vec<ColumnInfo> {
        self.retained.iter().map(|&c| self.columns[c as usize].clone()).collect()
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != FEATURE_SPEC_VERSION {
            return Err(Error::Schema(format!(
                "feature spec version {} (expected {FEATURE_SPEC_VERSION})",
                self.version
            )));
        }
        Ok(())
    }

    /// Full-width binary row as sorted column ids (before pruning).
    pub fn encode(&self, day: &RawDay, report: &mut EncodeReport) -> Vec<u32> {
        let mut out = Vec::new();
        let mut offset = 0u32;
        for s in &self.specs {
            let value = day.values.get(&s.feature_id).copied();
            match s.slot(value) {
                Ok(Some(k)) => out.push(offset + k as u32),
                Ok(None) => {}
                Err(()) => *report.unseen_categories.entry(s.feature_id).or_default() += 1,
            }
            offset += s.width() as u32;
        }
        out
    }
}

/// Fits every feature's encoding on training rows only.
pub fn fit_specs(rows: &[RawDay], taxonomy: &Taxonomy, include_missing_bin: bool) -> FeatureSpecSet {
    let n = taxonomy.len();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut categories: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for row in rows {
        for (f, v) in &row.values {
            let i = f.0 as usize;
            if i >= n {
                continue;
            }
            match (taxonomy.features[i].kind, v) {
                (FeatureKind::Numeric, Value::Num(x)) => numeric[i].push(*x),
                (FeatureKind::Numeric, Value::Cat(c)) => numeric[i].push(f64::from(*c)),
                (FeatureKind::Categorical { .. }, Value::Cat(c)) => {
                    categories[i].insert(*c);
                }
                _ => {}
            }
        }
    }
    let specs = taxonomy
        .features
        .iter()
        .map(|f| {
            let i = f.id.0 as usize;
            let encoding = match f.kind {
                FeatureKind::Numeric => match fit_quintile_bins(&numeric[i]) {
                    Ok(bounds) => Encoding::Quintile { bounds },
                    Err(e) => {
                        log::debug!("{}: {e}; demoted to missing-only", f.name);
                        Encoding::MissingOnly
                    }
                },
                FeatureKind::Categorical { .. } => Encoding::Categorical {
                    categories: categories[i].iter().copied().collect(),
                },
                FeatureKind::Presence => Encoding::Categorical { categories: vec![1] },
            };
            FeatureSpec {
                feature_id: f.id,
                name: f.name.clone(),
                group: f.group,
                encoding,
                include_missing_bin,
            }
        })
        .collect();
    FeatureSpecSet::new(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::EncounterId;

    #[test]
    fn one_to_ten_bounds() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = fit_quintile_bins(&v).unwrap();
        for (got, want) in b.iter().zip([2.8, 4.6, 6.4, 8.2]) {
            assert!((got - want).abs() < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn constant_input_gives_constant_bounds() {
        let b = fit_quintile_bins(&[3.5; 20]).unwrap();
        assert_eq!(b, [3.5; 4]);
        assert_eq!(quintile_bin(&b, 3.5), 0);
    }

    #[test]
    fn two_point_mass_is_split() {
        let v: Vec<f64> = std::iter::repeat_n(0.0, 50).chain(std::iter::repeat_n(100.0, 50)).collect();
        let b = fit_quintile_bins(&v).unwrap();
        assert_eq!(b, [0.0, 0.0, 100.0, 100.0]);
        assert_ne!(quintile_bin(&b, 0.0), quintile_bin(&b, 100.0));
    }

    #[test]
    fn fewer_than_five_values_is_degenerate() {
        assert!(matches!(fit_quintile_bins(&[1.0, 2.0, 3.0, 4.0]), Err(Error::DegenerateFeature(_))));
    }

    #[test]
    fn ties_go_to_the_lower_bin() {
        let b = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quintile_bin(&b, 0.5), 0);
        assert_eq!(quintile_bin(&b, 1.0), 0);
        assert_eq!(quintile_bin(&b, 1.0001), 1);
        assert_eq!(quintile_bin(&b, 4.0), 3);
        assert_eq!(quintile_bin(&b, 9.0), 4);
    }

    fn spec(encoding: Encoding, missing: bool) -> FeatureSpec {
        FeatureSpec {
            feature_id: FeatureId(0),
            name: "x".into(),
            group: GroupKey::VitalSigns,
            encoding,
            include_missing_bin: missing,
        }
    }

    fn day(v: Option<Value>) -> RawDay {
        RawDay {
            encounter_id: EncounterId(1),
            date: "2020-01-01".parse().unwrap(),
            day_of_stay: 1,
            values: v.map(|v| (FeatureId(0), v)).into_iter().collect(),
        }
    }

    #[test]
    fn numeric_encoding_sets_one_bit() {
        let set = FeatureSpecSet::new(vec![spec(
            Encoding::Quintile {
                bounds: [1.0, 2.0, 3.0, 4.0],
            },
            true,
        )]);
        let mut r = EncodeReport::default();
        assert_eq!(set.width(), 6);
        assert_eq!(set.encode(&day(Some(Value::Num(0.0))), &mut r), vec![0]);
        assert_eq!(set.encode(&day(None), &mut r), vec![5]);
        let off = FeatureSpecSet::new(vec![spec(
            Encoding::Quintile {
                bounds: [1.0, 2.0, 3.0, 4.0],
            },
            false,
        )]);
        assert!(off.encode(&day(None), &mut r).is_empty());
    }

    #[test]
    fn unseen_categories_are_zero_and_counted() {
        let set = FeatureSpecSet::new(vec![spec(
            Encoding::Categorical {
                categories: vec![0, 2],
            },
            true,
        )]);
        let mut r = EncodeReport::default();
        assert_eq!(set.width(), 2);
        assert_eq!(set.encode(&day(Some(Value::Cat(2))), &mut r), vec![1]);
        assert!(set.encode(&day(Some(Value::Cat(1))), &mut r).is_empty());
        assert_eq!(r.total_unseen(), 1);
    }

    #[test]
    fn missing_only_feature_has_just_the_missing_column() {
        let set = FeatureSpecSet::new(vec![spec(Encoding::MissingOnly, true)]);
        let mut r = EncodeReport::default();
        assert_eq!(set.width(), 1);
        assert_eq!(set.encode(&day(None), &mut r), vec![0]);
        assert!(set.encode(&day(Some(Value::Num(1.0))), &mut r).is_empty());
    }

    #[test]
    fn spec_set_round_trips_through_json() {
        let tax = Taxonomy::build(&Default::default());
        let set = fit_specs(&[], &tax, true).with_retained([0, 3, 5]).unwrap();
        let s = serde_json::to_string(&set).unwrap();
        assert_eq!(serde_json::from_str::<FeatureSpecSet>(&s).unwrap(), set);
    }
}
