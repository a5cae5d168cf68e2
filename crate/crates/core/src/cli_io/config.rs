use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ehr_sim::{SimConfig, DESK_PRO_PERIOD, DESK_RET_PERIOD, DESK_TRAIN_PERIODS};
use crate::error::{Error, Result};
use crate::featurize::FeaturizeConfig;
use crate::gap_analysis::parse_group;
use crate::metrics::Measure;
use crate::risk_model::TrainConfig;

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "SHIFTLAB_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "shiftlab-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    ZeroNoise,
    PlantedMedicationNoise,
}

impl Preset {
    pub fn config(self) -> SimConfig {
        match self {
            Preset::Desk => SimConfig::desk(),
            Preset::ZeroNoise => SimConfig::zero_noise(),
            Preset::PlantedMedicationNoise => SimConfig::planted_medication_noise(),
        }
    }
}

/// Which simulated periods play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyDesign {
    pub train_periods: Vec<usize>,
    /// Period extracted retrospectively (D_ret).
    pub ret_period: usize,
    /// Period extracted by both pipelines (D_pro and D_ret′).
    pub pro_period: usize,
}

impl Default for StudyDesign {
    fn default() -> Self {
        StudyDesign {
            train_periods: DESK_TRAIN_PERIODS.to_vec(),
            ret_period: DESK_RET_PERIOD,
            pro_period: DESK_PRO_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Pick the penalty by year-wise cross-validation over `train.grid`.
    pub cross_validate: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { cross_validate: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdReference {
    Train,
    Ret,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub measures: Vec<Measure>,
    pub n_replicates: usize,
    pub threshold_percentile: f64,
    pub threshold_reference: ThresholdReference,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            measures: vec![Measure::Auroc, Measure::Brier],
            n_replicates: 1000,
            threshold_percentile: 95.0,
            threshold_reference: ThresholdReference::Ret,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapSection {
    pub n_replicates: usize,
    pub discordance_threshold: f64,
}

impl Default for GapSection {
    fn default() -> Self {
        GapSection {
            n_replicates: 1000,
            discordance_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapSection {
    /// Group keys or display labels; every group when absent.
    pub groups: Option<Vec<String>>,
    /// Restrict to prospective rows dated on or before this day.
    pub window_end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub alpha: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection { alpha: 0.05 }
    }
}

/// One JSON document configuring every stage. `seed` replaces the simulator
/// and training seeds; bootstrap and sampling streams derive from it too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Named simulator configuration; mutually exclusive with `sim`.
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub study: StudyDesign,
    #[serde(default)]
    pub featurize: FeaturizeConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub gap: GapSection,
    #[serde(default)]
    pub swap: SwapSection,
    #[serde(default)]
    pub drift: DriftSection,
}

impl RunConfig {
    pub fn new(seed: u64, preset: Preset) -> Self {
        RunConfig {
            schema_version: RUN_SCHEMA_VERSION,
            seed,
            output_dir: None,
            preset: Some(preset),
            sim: None,
            study: StudyDesign::default(),
            featurize: FeaturizeConfig::default(),
            train: TrainConfig::default(),
            model: ModelSection::default(),
            evaluate: EvaluateSection::default(),
            gap: GapSection::default(),
            swap: SwapSection::default(),
            drift: DriftSection::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        Self::from_json(&text)
    }

    /// Simulator configuration with the global seed applied.
    pub fn sim_config(&self) -> SimConfig {
        let mut sim = match (&self.sim, self.preset) {
            (Some(sim), _) => sim.clone(),
            (None, Some(p)) => p.config(),
            (None, None) => SimConfig::desk(),
        };
        sim.seed = self.seed;
        sim
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {RUN_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.sim.is_some() && self.preset.is_some() {
            return Err(Error::config("preset", "give either `preset` or `sim`, not both"));
        }
        let sim = self.sim_config();
        sim.validate()?;
        let n = sim.periods.len();
        let check = |path: String, i: usize| {
            if i < n {
                Ok(())
            } else {
                Err(Error::config(path, format!("period {i} out of range ({n} periods)")))
            }
        };
        for (k, &i) in self.study.train_periods.iter().enumerate() {
            check(format!("study.train_periods[{k}]"), i)?;
        }
        if self.study.train_periods.is_empty() {
            return Err(Error::config("study.train_periods", "must not be empty"));
        }
        check("study.ret_period".into(), self.study.ret_period)?;
        check("study.pro_period".into(), self.study.pro_period)?;
        self.train.validate()?;
        if self.evaluate.n_replicates == 0 {
            return Err(Error::config("evaluate.n_replicates", "must be positive"));
        }
        if self.gap.n_replicates == 0 {
            return Err(Error::config("gap.n_replicates", "must be positive"));
        }
        if !(0.0..=100.0).contains(&self.evaluate.threshold_percentile) {
            return Err(Error::config("evaluate.threshold_percentile", "must be within [0, 100]"));
        }
        if !(self.drift.alpha > 0.0 && self.drift.alpha < 1.0) {
            return Err(Error::config("drift.alpha", "must be within (0, 1)"));
        }
        if let Some(groups) = &self.swap.groups {
            for (k, g) in groups.iter().enumerate() {
                parse_group(g).map_err(|e| Error::config(format!("swap.groups[{k}]"), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    /// `flag` > `output_dir` in the config > `$SHIFTLAB_OUTPUT_DIR` > `./shiftlab-out`.
    pub fn resolve_output_dir(&self, flag: Option<&Path>, env: Option<&str>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
