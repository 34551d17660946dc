//! Run configuration: one JSON file describing paths, ensemble members,
//! training, curation, and stacking parameters, validated before any work.

use crate::curation::{AugmenterKind, SigmaFallback};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::MemberConfig;
use crate::numerics::ActivationKind;
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that overrides `paths.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SEMBED_OUTPUT_DIR";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunPaths {
    pub corpus_dir: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub lexicon: PathBuf,
    pub output_dir: PathBuf,
}

/// One ensemble member's architecture. The vocabulary size is bound at
/// model-build time from the vocab file; the member seed defaults to a
/// stream derived from the global seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemberSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub use_cross_attention: bool,
    #[serde(default = "default_kernel_width")]
    pub kernel_width: usize,
    #[serde(default = "default_activation")]
    pub activation: ActivationKind,
}

fn default_true() -> bool {
    true
}

fn default_kernel_width() -> usize {
    3
}

fn default_activation() -> ActivationKind {
    ActivationKind::Relu
}

impl MemberSpec {
    pub fn to_member_config(&self, index: usize, global_seed: u64, vocab_size: usize) -> MemberConfig {
        MemberConfig {
            encoder: EncoderConfig {
                d_model: self.d_model,
                n_heads: self.n_heads,
                n_layers: self.n_layers,
                ffn_dim: self.ffn_dim,
                max_len: self.max_len,
                vocab_size,
                seed: self.seed.unwrap_or_else(|| derive_seed(global_seed, &format!("member:{index}"))),
                use_cross_attention: self.use_cross_attention,
            },
            kernel_width: self.kernel_width,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    /// Full mode when a curation checkpoint is configured, mean otherwise.
    Auto,
    /// encode -> refine -> pool through the curation model.
    Full,
    /// Mean of word-embedding rows.
    Mean,
}

impl Default for EmbedMode {
    fn default() -> Self {
        EmbedMode::Auto
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurationSection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub sigma_fallback: SigmaFallback,
    pub augment_rate: f64,
    #[serde(default = "default_augmenter")]
    pub augmenter: AugmenterKind,
    /// Trained checkpoint used as retrieval embedder and pseudo-label
    /// scorer; member 0's seeded initialization stands in when absent.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub embed_mode: EmbedMode,
    #[serde(default)]
    pub keyword_allowlist: Vec<String>,
}

fn default_k() -> usize {
    crate::curation::DEFAULT_TOP_K
}

fn default_augmenter() -> AugmenterKind {
    AugmenterKind::SynonymReplace
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_calibration_fraction")]
    pub calibration_fraction: f64,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_calibration_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: RunPaths,
    pub members: Vec<MemberSpec>,
    pub train: TrainSection,
    pub curation: CurationSection,
    pub ensemble: EnsembleSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            cfg.paths.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, path) in [
            ("corpus_dir", &self.paths.corpus_dir),
            ("train", &self.paths.train),
            ("val", &self.paths.val),
            ("test", &self.paths.test),
            ("lexicon", &self.paths.lexicon),
        ] {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "paths.{name} {} does not exist",
                    path.display()
                )));
            }
        }
        if self.members.is_empty() {
            return Err(Error::Config("member list must be non-empty".into()));
        }
        for (i, m) in self.members.iter().enumerate() {
            // Validate with a placeholder vocab size; the real one is bound later.
            m.to_member_config(i, self.seed, 2)
                .validate()
                .map_err(|e| Error::Config(format!("members[{i}]: {e}")))?;
        }
        if self.curation.k == 0 {
            return Err(Error::Config("curation.k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.curation.augment_rate) {
            return Err(Error::Config(format!(
                "curation.augment_rate {} outside [0,1]",
                self.curation.augment_rate
            )));
        }
        if let SigmaFallback::Const(c) = self.curation.sigma_fallback {
            if c < 0.0 {
                return Err(Error::Config(format!("sigma fallback constant {c} must be >= 0")));
            }
        }
        if self.ensemble.lambda < 0.0 {
            return Err(Error::Config(format!(
                "ensemble.lambda {} must be >= 0",
                self.ensemble.lambda
            )));
        }
        if !(0.0 < self.ensemble.calibration_fraction && self.ensemble.calibration_fraction < 1.0) {
            return Err(Error::Config(format!(
                "ensemble.calibration_fraction {} outside (0,1)",
                self.ensemble.calibration_fraction
            )));
        }
        self.train_config(0).validate()?;
        Ok(())
    }

    /// Trainer settings for one member; the shuffle stream is derived from
    /// the global seed and the member index.
    pub fn train_config(&self, member_index: usize) -> crate::trainer::TrainConfig {
        crate::trainer::TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: derive_seed(self.seed, &format!("train:{member_index}")),
            l2: self.train.l2,
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths.output_dir.join("vocab.tsv")
    }

    pub fn d_final_path(&self) -> PathBuf {
        self.paths.output_dir.join("d_final.jsonl")
    }

    pub fn bootstrap_checkpoint_path(&self) -> PathBuf {
        self.paths.output_dir.join("bootstrap.ckpt")
    }

    pub fn member_checkpoint_path(&self, index: usize) -> PathBuf {
        self.paths.output_dir.join(format!("member_{index}.ckpt"))
    }

    pub fn member_trace_path(&self, index: usize) -> PathBuf {
        self.paths.output_dir.join(format!("member_{index}_trace.csv"))
    }

    pub fn ensemble_manifest_path(&self) -> PathBuf {
        self.paths.output_dir.join("ensemble.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config_json(dir: &Path) -> String {
        // Create the referenced inputs so path validation passes.
        std::fs::create_dir_all(dir.join("corpus")).unwrap();
        std::fs::write(dir.join("corpus/doc0.txt"), "alpha beta gamma").unwrap();
        for name in ["train", "val", "test"] {
            std::fs::write(
                dir.join(format!("{name}.jsonl")),
                "{\"text\":\"alpha beta\",\"label\":1.0,\"origin\":\"gold\"}\n",
            )
            .unwrap();
        }
        std::fs::write(dir.join("lexicon.tsv"), "alpha\tbeta\n").unwrap();
        format!(
            r#"{{
  "seed": 42,
  "paths": {{
    "corpus_dir": "{0}/corpus",
    "train": "{0}/train.jsonl",
    "val": "{0}/val.jsonl",
    "test": "{0}/test.jsonl",
    "lexicon": "{0}/lexicon.tsv",
    "output_dir": "{0}/out"
  }},
  "members": [
    {{ "d_model": 8, "n_heads": 2, "n_layers": 1, "ffn_dim": 16, "max_len": 6 }}
  ],
  "train": {{ "learning_rate": 0.05, "epochs": 2, "batch_size": 4 }},
  "curation": {{ "augment_rate": 0.3 }},
  "ensemble": {{}}
}}"#,
            dir.display()
        )
    }

    #[test]
    fn loads_and_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, minimal_config_json(dir.path())).unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.curation.k, 5);
        assert_eq!(cfg.ensemble.lambda, 1.0);
        assert_eq!(cfg.ensemble.calibration_fraction, 0.2);
        assert!(cfg.members[0].use_cross_attention);
        assert_eq!(cfg.members[0].kernel_width, 3);
        // Derived member seeds are stable across calls.
        let a = cfg.members[0].to_member_config(0, cfg.seed, 10).encoder.seed;
        let b = cfg.members[0].to_member_config(0, cfg.seed, 10).encoder.seed;
        assert_eq!(a, b);
    }

    #[test]
    fn missing_path_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        let json = minimal_config_json(dir.path()).replace("corpus\"", "corpus-missing\"");
        std::fs::write(&cfg_path, json).unwrap();
        match RunConfig::load(&cfg_path) {
            Err(Error::Config(msg)) => assert!(msg.contains("corpus"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn env_var_overrides_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, minimal_config_json(dir.path())).unwrap();
        std::env::set_var(OUTPUT_DIR_ENV, "/tmp/sembed-override");
        let cfg = RunConfig::load(&cfg_path).unwrap();
        std::env::remove_var(OUTPUT_DIR_ENV);
        assert_eq!(cfg.paths.output_dir, PathBuf::from("/tmp/sembed-override"));
    }

    #[test]
    fn bad_member_geometry_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        let json = minimal_config_json(dir.path()).replace("\"n_heads\": 2", "\"n_heads\": 3");
        std::fs::write(&cfg_path, json).unwrap();
        assert!(matches!(RunConfig::load(&cfg_path), Err(Error::Config(_))));
    }
}
