//! Hierarchical feature groups and the raw feature catalogue.
//!
//! The group tree mirrors the clinical layout used for swap and drift
//! roll-ups: static demographics, history (`Hx`) drawn from encounters before
//! the index admission, and index-encounter (`Idx`) data. Every raw feature
//! belongs to exactly one leaf group.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::FeatureId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prefix {
    Demographics,
    Hx,
    Idx,
}

impl Prefix {
    pub fn as_str(self) -> &'static str {
        match self {
            Prefix::Demographics => "Demographics",
            Prefix::Hx => "Hx",
            Prefix::Idx => "Idx",
        }
    }
}

/// Every node in the group tree, leaves and roll-ups alike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Demographics,
    Age,
    Gender,
    Race,
    MaritalStatus,
    CountyState,
    BodyMassIndex,
    Hx,
    HistoryOfCdi,
    PreviousEncounters,
    NumberOfPreviousEncounters,
    PreviousLengthOfStay,
    HxDiagnoses,
    HxMedications,
    Idx,
    AdmissionDetails,
    AdmissionType,
    PatientType,
    InsuranceType,
    EmergencyVisit,
    InHospitalLocations,
    VitalSigns,
    LaboratoryResults,
    IdxMedications,
    ColonizationPressure,
    ColonizationUnit,
    ColonizationHospital,
}

/// Static description of one node of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureGroup {
    pub key: GroupKey,
    pub name: &'static str,
    pub parent: Option<GroupKey>,
    pub prefix: Prefix,
}

use GroupKey as G;

const TREE: &[FeatureGroup] = &[
    node(G::Demographics, "Demographics", None, Prefix::Demographics),
    node(G::Age, "Age", Some(G::Demographics), Prefix::Demographics),
    node(G::Gender, "Gender", Some(G::Demographics), Prefix::Demographics),
    node(G::Race, "Race", Some(G::Demographics), Prefix::Demographics),
    node(G::MaritalStatus, "Marital Status", Some(G::Demographics), Prefix::Demographics),
    node(G::CountyState, "County & State", Some(G::Demographics), Prefix::Demographics),
    node(G::BodyMassIndex, "Body Mass Index", Some(G::Demographics), Prefix::Demographics),
    node(G::Hx, "Historical Encounters", None, Prefix::Hx),
    node(G::HistoryOfCdi, "History of CDI", Some(G::Hx), Prefix::Hx),
    node(G::PreviousEncounters, "Previous Encounters", Some(G::Hx), Prefix::Hx),
    node(G::NumberOfPreviousEncounters, "Number of Previous Encounters", Some(G::PreviousEncounters), Prefix::Hx),
    node(G::PreviousLengthOfStay, "Length of Stay", Some(G::PreviousEncounters), Prefix::Hx),
    node(G::HxDiagnoses, "Diagnoses", Some(G::Hx), Prefix::Hx),
    node(G::HxMedications, "Medications", Some(G::Hx), Prefix::Hx),
    node(G::Idx, "Index Encounter", None, Prefix::Idx),
    node(G::AdmissionDetails, "Admission Details", Some(G::Idx), Prefix::Idx),
    node(G::AdmissionType, "Admission Type", Some(G::AdmissionDetails), Prefix::Idx),
    node(G::PatientType, "Patient Type", Some(G::AdmissionDetails), Prefix::Idx),
    node(G::InsuranceType, "Insurance Type", Some(G::AdmissionDetails), Prefix::Idx),
    node(G::EmergencyVisit, "Emergency Visit", Some(G::AdmissionDetails), Prefix::Idx),
    node(G::InHospitalLocations, "In-Hospital Locations", Some(G::Idx), Prefix::Idx),
    node(G::VitalSigns, "Vital Sign Measurements", Some(G::Idx), Prefix::Idx),
    node(G::LaboratoryResults, "Laboratory Results", Some(G::Idx), Prefix::Idx),
    node(G::IdxMedications, "Medications", Some(G::Idx), Prefix::Idx),
    node(G::ColonizationPressure, "Colonization Pressure", Some(G::Idx), Prefix::Idx),
    node(G::ColonizationUnit, "Unit-based", Some(G::ColonizationPressure), Prefix::Idx),
    node(G::ColonizationHospital, "Hospital-wide", Some(G::ColonizationPressure), Prefix::Idx),
];

const fn node(key: GroupKey, name: &'static str, parent: Option<GroupKey>, prefix: Prefix) -> FeatureGroup {
    FeatureGroup {
        key,
        name,
        parent,
        prefix,
    }
}

impl GroupKey {
    pub fn all() -> impl Iterator<Item = GroupKey> {
        TREE.iter().map(|g| g.key)
    }

    pub fn info(self) -> &'static FeatureGroup {
        TREE.iter().find(|g| g.key == self).expect("every key is in the tree")
    }

    pub fn parent(self) -> Option<GroupKey> {
        self.info().parent
    }

    pub fn is_leaf(self) -> bool {
        !TREE.iter().any(|g| g.parent == Some(self))
    }

    pub fn leaves() -> impl Iterator<Item = GroupKey> {
        Self::all().filter(|g| g.is_leaf())
    }

    /// Roll-up groups: every internal node of the tree.
    pub fn rollups() -> impl Iterator<Item = GroupKey> {
        Self::all().filter(|g| !g.is_leaf())
    }

    /// This group and all of its ancestors, nearest first.
    pub fn ancestry(self) -> Vec<GroupKey> {
        let mut out = vec![self];
        let mut cur = self;
        while let Some(p) = cur.parent() {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn contains(self, leaf: GroupKey) -> bool {
        leaf.ancestry().contains(&self)
    }

    /// Display label in the clinical-table style, e.g. `Hx: Medications`,
    /// `Demographics: Body Mass Index`, `Idx: Admission Details (Patient Type)`.
    pub fn label(self) -> String {
        let info = self.info();
        let chain: Vec<&str> = self
            .ancestry()
            .iter()
            .rev()
            .skip(1)
            .map(|g| g.info().name)
            .collect();
        match chain.as_slice() {
            [] => info.prefix.as_str().to_string(),
            [one] => format!("{}: {}", info.prefix.as_str(), one),
            [first, rest @ ..] => format!("{}: {} ({})", info.prefix.as_str(), first, rest.join(" / ")),
        }
    }

    /// Resolves either the snake_case key or the display label.
    pub fn parse(s: &str) -> Option<GroupKey> {
        Self::all().find(|g| {
            g.label() == s
                || serde_json::to_value(g)
                    .ok()
                    .and_then(|v| v.as_str().map(|k| k == s))
                    .unwrap_or(false)
        })
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FeatureKind {
    /// Real-valued; binarized into quintiles.
    Numeric,
    /// One of `n_categories` codes `0..n`.
    Categorical { n_categories: u32 },
    /// Present or absent; present records carry category code 1.
    Presence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeature {
    pub id: FeatureId,
    pub name: String,
    pub group: GroupKey,
    pub kind: FeatureKind,
}

/// Number of raw features per leaf group that has a variable size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaxonomySizes {
    pub race_categories: u32,
    pub county_categories: u32,
    pub hx_diagnoses: u32,
    pub hx_medications: u32,
    pub locations: u32,
    pub vitals: u32,
    pub labs: u32,
    pub idx_medications: u32,
}

impl Default for TaxonomySizes {
    fn default() -> Self {
        TaxonomySizes {
            race_categories: 6,
            county_categories: 20,
            hx_diagnoses: 60,
            hx_medications: 40,
            locations: 24,
            vitals: 6,
            labs: 16,
            idx_medications: 60,
        }
    }
}

/// The raw feature catalogue, ordered by feature id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub features: Vec<RawFeature>,
}

impl Taxonomy {
    pub fn build(sizes: &TaxonomySizes) -> Self {
        let mut features = Vec::new();
        let mut push = |group: GroupKey, name: String, kind: FeatureKind| {
            let id = FeatureId(features.len() as u32);
            features.push(RawFeature { id, name, group, kind });
        };
        push(G::Age, "age".into(), FeatureKind::Numeric);
        push(G::Gender, "gender".into(), FeatureKind::Categorical { n_categories: 2 });
        push(
            G::Race,
            "race".into(),
            FeatureKind::Categorical {
                n_categories: sizes.race_categories.max(1),
            },
        );
        push(G::MaritalStatus, "marital_status".into(), FeatureKind::Categorical { n_categories: 2 });
        push(
            G::CountyState,
            "county_state".into(),
            FeatureKind::Categorical {
                n_categories: sizes.county_categories.max(1),
            },
        );
        push(G::BodyMassIndex, "bmi".into(), FeatureKind::Numeric);
        push(G::HistoryOfCdi, "hx_cdi".into(), FeatureKind::Presence);
        push(G::NumberOfPreviousEncounters, "prev_encounters".into(), FeatureKind::Numeric);
        push(G::PreviousLengthOfStay, "prev_los".into(), FeatureKind::Numeric);
        for i in 0..sizes.hx_diagnoses {
            push(G::HxDiagnoses, format!("hx_dx_{i:03}"), FeatureKind::Presence);
        }
        for i in 0..sizes.hx_medications {
            push(G::HxMedications, format!("hx_med_{i:03}"), FeatureKind::Presence);
        }
        push(G::AdmissionType, "admission_type".into(), FeatureKind::Categorical { n_categories: 3 });
        push(G::PatientType, "patient_type".into(), FeatureKind::Categorical { n_categories: 4 });
        push(G::InsuranceType, "insurance_type".into(), FeatureKind::Categorical { n_categories: 6 });
        push(G::EmergencyVisit, "emergency_visit".into(), FeatureKind::Presence);
        for i in 0..sizes.locations {
            push(G::InHospitalLocations, format!("unit_{i:03}"), FeatureKind::Presence);
        }
        for i in 0..sizes.vitals {
            push(G::VitalSigns, format!("vital_{i:02}"), FeatureKind::Numeric);
        }
        for i in 0..sizes.labs {
            push(G::LaboratoryResults, format!("lab_{i:02}"), FeatureKind::Numeric);
        }
        for i in 0..sizes.idx_medications {
            push(G::IdxMedications, format!("med_{i:03}"), FeatureKind::Presence);
        }
        push(G::ColonizationUnit, "colonization_unit".into(), FeatureKind::Numeric);
        push(G::ColonizationHospital, "colonization_hospital".into(), FeatureKind::Numeric);
        Taxonomy { features }
    }

    pub fn feature(&self, id: FeatureId) -> &RawFeature {
        &self.features[id.0 as usize]
    }

    pub fn in_group(&self, group: GroupKey) -> impl Iterator<Item = &RawFeature> + '_ {
        self.features.iter().filter(move |f| group.contains(f.group))
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
