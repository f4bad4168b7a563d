//! Experiment configuration files.
//!
//! A config is a TOML document with the sections below; every section except
//! `[data]` is optional, and unknown sections or keys are rejected. Relative
//! paths are resolved against the directory containing the config file.
//!
//! ```toml
//! [data]
//! csv = "../data/adult.csv"        # required
//! schema = "../data/adult.schema"  # required
//! train_fraction = 0.9
//! vocab = "strict"                 # strict | reserve_unknown
//!
//! [train]
//! mode = "sl"                      # sl | fsl
//! epochs = 10
//! batch_size = 128                 # SL mini-batch size
//! samples_per_client = 16          # FSL shard size
//! learning_rate = 0.01
//! retain = "best_test_auc"         # best_test_auc | last
//! embed_dim = 16
//! cut_width = 32
//! server_hidden = [128, 64]
//! client_hidden = [256, 128]
//!
//! [dp]                             # presence enables cut-gradient DP
//! noise_multiplier = 0.01
//! clip_norm = 1.0                  # omit for the adaptive median clip
//! delta = 1e-5
//!
//! [label_dp]                       # presence enables label flipping
//! flip_probability = 0.1
//!
//! [attack]
//! variants = ["exact", "topk:5", "topk:10"]
//! max_samples = 2000               # 0 attacks the whole test split
//! candidate_cap = 1000000
//!
//! [baseline]
//! enabled = true
//! k = 5
//!
//! [run]
//! seed = 42                        # repetition r uses seed + r
//! repetitions = 3
//! out = "runs/adult"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackVariant, DEFAULT_BASELINE_K, DEFAULT_CANDIDATE_CAP};
use crate::data::VocabPolicy;
use crate::dp::{ClipMode, DpConfig, LabelDpConfig};
use crate::error::{Error, Result};
use crate::nn::{Architecture, DEFAULT_LEARNING_RATE};
use crate::protocol::{Retain, TrainConfig, TrainMode};

pub const DEFAULT_MAX_SAMPLES: usize = 2000;
pub const DEFAULT_REPETITIONS: usize = 3;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabSetting {
    #[default]
    Strict,
    ReserveUnknown,
}

impl From<VocabSetting> for VocabPolicy {
    fn from(v: VocabSetting) -> Self {
        match v {
            VocabSetting::Strict => VocabPolicy::Strict,
            VocabSetting::ReserveUnknown => VocabPolicy::ReserveUnknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub csv: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub vocab: VocabSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_client: usize,
    pub learning_rate: f64,
    pub retain: Retain,
    pub embed_dim: usize,
    pub cut_width: usize,
    pub server_hidden: Vec<usize>,
    pub client_hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = Architecture::default();
        Self {
            mode: t.mode,
            epochs: t.epochs,
            batch_size: t.batch_size,
            samples_per_client: t.fsl_samples_per_client,
            learning_rate: DEFAULT_LEARNING_RATE,
            retain: t.retain,
            embed_dim: a.embed_dim,
            cut_width: a.cut_width,
            server_hidden: a.server_hidden,
            client_hidden: a.client_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    #[serde(default = "default_noise_multiplier")]
    pub noise_multiplier: f64,
    /// Fixed clip norm; absent means the adaptive median clip.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            noise_multiplier: default_noise_multiplier(),
            clip_norm: None,
            delta: default_delta(),
        }
    }
}

impl From<DpSection> for DpConfig {
    fn from(d: DpSection) -> Self {
        DpConfig {
            noise_multiplier: d.noise_multiplier,
            clip: d.clip_norm.map_or(ClipMode::AdaptiveMedian, ClipMode::Fixed),
            delta: d.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub variants: Vec<String>,
    pub max_samples: usize,
    pub candidate_cap: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            variants: vec!["exact".into()],
            max_samples: DEFAULT_MAX_SAMPLES,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub enabled: bool,
    pub k: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            enabled: true,
            k: DEFAULT_BASELINE_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub repetitions: usize,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            repetitions: DEFAULT_REPETITIONS,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dp: Option<DpSection>,
    #[serde(default)]
    pub label_dp: Option<LabelDpConfig>,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub run: RunSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

fn default_noise_multiplier() -> f64 {
    DpConfig::default().noise_multiplier
}

fn default_delta() -> f64 {
    DpConfig::default().delta
}

impl ExperimentConfig {
    /// Parses TOML text; relative paths will resolve against `base_dir`.
    /// Only the grammar is checked here, see [`Self::validate`].
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    /// Reads, parses and validates a config file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn csv_path(&self) -> PathBuf {
        self.resolve(&self.data.csv)
    }

    pub fn schema_path(&self) -> PathBuf {
        self.resolve(&self.data.schema)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.run.out)
    }

    pub fn variants(&self) -> Result<Vec<AttackVariant>> {
        self.attack.variants.iter().map(|v| v.parse()).collect()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            mode: t.mode,
            learning_rate: t.learning_rate,
            architecture: Architecture {
                embed_dim: t.embed_dim,
                cut_width: t.cut_width,
                server_hidden: t.server_hidden.clone(),
                client_hidden: t.client_hidden.clone(),
            },
            batch_size: t.batch_size,
            epochs: t.epochs,
            fsl_samples_per_client: t.samples_per_client,
            seed,
            dp: self.dp.map(Into::into),
            label_dp: self.label_dp,
            retain: t.retain,
        }
    }

    /// Checks values and that the referenced files exist.
    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("data.csv", self.csv_path()), ("data.schema", self.schema_path())] {
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!("{what}: file not found: {}", p.display())));
            }
        }
        let f = self.data.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "data.train_fraction must lie in (0,1), got {f}"
            )));
        }
        self.train_config(self.run.seed).validate()?;
        self.variants()?;
        if self.attack.candidate_cap == 0 {
            return Err(Error::InvalidConfig("attack.candidate_cap must be >= 1".into()));
        }
        if self.baseline.k == 0 {
            return Err(Error::InvalidConfig("baseline.k must be >= 1".into()));
        }
        if self.run.repetitions == 0 {
            return Err(Error::InvalidConfig("run.repetitions must be >= 1".into()));
        }
        Ok(())
    }

    /// Short tag of the training setting: `SL`, `FSL`, `LabelDP(p)`,
    /// `DP(σ)` or `Comb(σ,p)`.
    pub fn scenario(&self) -> String {
        match (&self.dp, &self.label_dp) {
            (None, None) => self.train.mode.to_string(),
            (Some(d), None) => format!("DP({})", d.noise_multiplier),
            (None, Some(l)) => format!("LabelDP({})", l.flip_probability),
            (Some(d), Some(l)) => format!("Comb({},{})", d.noise_multiplier, l.flip_probability),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory left out so relocating a run keeps its hash.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.run.out = PathBuf::new();
        let text = toml::to_string(&canon).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\ncsv = \"a.csv\"\nschema = \"a.schema\"\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ExperimentConfig::parse(MINIMAL, "/cfg").unwrap();
        assert_eq!(cfg.data.train_fraction, 0.9);
        assert_eq!(cfg.train, TrainSection::default());
        assert_eq!(cfg.run.repetitions, 3);
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.attack.max_samples, 2000);
        assert_eq!(cfg.baseline.k, 5);
        assert_eq!(cfg.csv_path(), PathBuf::from("/cfg/a.csv"));
        assert_eq!(cfg.scenario(), "SL");
        assert_eq!(
            cfg.train_config(7),
            TrainConfig {
                seed: 7,
                ..Default::default()
            }
        );
    }

    #[test]
    fn unknown_keys_are_errors() {
        let cases = [
            format!("{MINIMAL}foo = 1\n"),
            format!("{MINIMAL}[train]\nepoch = 3\n"),
            format!("{MINIMAL}[bogus]\n"),
            format!("{MINIMAL}[dp]\nsigma = 0.1\n"),
        ];
        for text in cases {
            let err = ExperimentConfig::parse(&text, ".").unwrap_err().to_string();
            assert!(err.contains("unknown"), "{err}");
        }
    }

    #[test]
    fn mitigation_sections_and_scenarios() {
        let text = format!("{MINIMAL}[dp]\nnoise_multiplier = 0.01\n[label_dp]\nflip_probability = 0.1\n");
        let cfg = ExperimentConfig::parse(&text, ".").unwrap();
        let t = cfg.train_config(1);
        assert_eq!(t.dp.unwrap().clip, ClipMode::AdaptiveMedian);
        assert_eq!(t.label_dp.unwrap().flip_probability, 0.1);
        assert_eq!(cfg.scenario(), "Comb(0.01,0.1)");

        let text = format!("{MINIMAL}[dp]\nclip_norm = 2.5\n");
        let cfg = ExperimentConfig::parse(&text, ".").unwrap();
        assert_eq!(cfg.train_config(1).dp.unwrap().clip, ClipMode::Fixed(2.5));
        assert_eq!(cfg.scenario(), "DP(0.01)");
    }

    #[test]
    fn validation_reports_missing_files_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse(MINIMAL, dir.path()).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("data.csv") && err.contains("not found"), "{err}");

        fs::write(dir.path().join("a.csv"), "x\n").unwrap();
        fs::write(dir.path().join("a.schema"), "x\n").unwrap();
        cfg.validate().unwrap();
        let bad = format!("{MINIMAL}[attack]\nvariants = [\"topk:0\"]\n");
        assert!(ExperimentConfig::parse(&bad, dir.path()).unwrap().validate().is_err());
        let bad = format!("{MINIMAL}[train]\nbatch_size = 0\n");
        assert!(ExperimentConfig::parse(&bad, dir.path()).unwrap().validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::parse(MINIMAL, ".").unwrap();
        let mut b = a.clone();
        b.run.out = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.train.epochs = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn toml_round_trip() {
        let text = format!("{MINIMAL}[train]\nmode = \"fsl\"\nclient_hidden = [64, 32]\n[dp]\n");
        let cfg = ExperimentConfig::parse(&text, ".").unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml(), ".").unwrap();
        assert_eq!(cfg, again);
    }
}
