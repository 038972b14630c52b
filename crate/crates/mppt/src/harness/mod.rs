//! Experiment lifecycle: NLE preparation, training, evaluation, ablations,
//! γ sweep, and report rendering, all driven by one declarative run config.
//!
//! A [`RunConfig`] names the task, hyperparameters, ablation, seed, and
//! artifact paths; [`execute_run`] carries it through NLE generation,
//! fine-tuning, and evaluation, producing a fully reproducible
//! [`RunResult`]. Ablation and sweep drivers fan out over derived configs
//! with shared seeds and disjoint artifact directories.

pub mod report;
mod run;

pub use run::{
    evaluate_run, execute_run, gamma_sweep, prepare_nles, prepare_perspectives, run_ablations,
    EvalOutcome, PreparedNles, RunProvenance, RunResult, SYNTHETIC_BACKBONE_ID,
};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, TaskMode, TaskSpec};
use crate::multipln::MultiplnError;
use crate::tscot::{LlmBackendConfig, TscotError, GAMMA_RANGE};
use crate::verbalizer::VerbalizerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {reason}")]
    Config { reason: String },
    #[error("backbone `{id}` unavailable: {reason}")]
    BackboneUnavailable { id: String, reason: String },
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("missing NLEs: {reason}")]
    MissingNles { reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tscot(#[from] TscotError),
    #[error(transparent)]
    Multipln(#[from] MultiplnError),
    #[error(transparent)]
    Verbalizer(#[from] VerbalizerError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to encode {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 validation, 3 backend failure, 4 partial
    /// completion, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Tscot(TscotError::PartialCompletion { .. }) => 4,
            HarnessError::Tscot(
                TscotError::BackendUnavailable { .. } | TscotError::BackendRejected { .. },
            ) => 3,
            HarnessError::Divergence { .. } => 1,
            _ => 2,
        }
    }
}

/// Which pipeline component is removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Full model.
    #[default]
    None,
    /// No perspectives or explanations: γ forced to 1 and the reduced
    /// prompt template used; the LLM backend is never contacted.
    NoTscot,
    /// No lexicon expansion of the verbalizer.
    NoSenticnet,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::None, Ablation::NoTscot, Ablation::NoSenticnet];

    /// Canonical config-file / CLI spelling.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoTscot => "no_tscot",
            Ablation::NoSenticnet => "no_senticnet",
        }
    }

    /// Row label used in comparison tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Ablation::None => "MPPT",
            Ablation::NoTscot => "- w/o T",
            Ablation::NoSenticnet => "- w/o S",
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Ablation, String> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Ablation::None),
            "no_tscot" => Ok(Ablation::NoTscot),
            "no_senticnet" => Ok(Ablation::NoSenticnet),
            other => Err(format!(
                "unknown ablation `{other}` (expected none, no_tscot, or no_senticnet)"
            )),
        }
    }
}

fn default_lr() -> f64 {
    2e-5
}

fn default_batch_size() -> usize {
    32
}

fn default_epochs() -> usize {
    10
}

fn default_optimizer_name() -> String {
    "AdamW".to_string()
}

/// Optimizer block of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_optimizer_name")]
    pub name: String,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            name: default_optimizer_name(),
            lr: default_lr(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
        }
    }
}

/// Artifact locations. `data` and `nle_corpus` are files, the rest are
/// directories; relative paths in a config file resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Dataset manifest.
    pub data: PathBuf,
    /// LLM response cache directory.
    pub cache: PathBuf,
    /// NLE corpus file (TSV; a sibling manifest is written next to it).
    pub nle_corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

fn default_gamma() -> usize {
    4
}

fn default_expansion_limit() -> usize {
    4
}

fn default_backbone_id() -> String {
    "synthetic-compact".to_string()
}

fn default_llm() -> LlmBackendConfig {
    LlmBackendConfig::mock(Path::new(""))
}

/// One experiment, fully specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Task name: `stadium->harbor` (synthetic), one of the SEM16 pairs
    /// (`F->L`, `L->F`, `H->D`, `D->H`), or `VAST`.
    pub task: String,
    #[serde(default = "default_gamma")]
    pub gamma: usize,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    /// `synthetic-compact` (seeded compact backbone) or a checkpoint
    /// directory to start from.
    #[serde(default = "default_backbone_id")]
    pub backbone_id: String,
    pub paths: PathsSection,
    /// Related words added per label from the lexicon (0 disables).
    #[serde(default = "default_expansion_limit")]
    pub expansion_limit: usize,
    #[serde(default = "default_llm")]
    pub llm: LlmBackendConfig,
}

/// Independent seed streams derived from the master seed, logged per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    /// Mini-batch shuffling order.
    pub data_order: u64,
    /// Attention query (h) initialization.
    pub query_init: u64,
    /// Backbone dropout masks.
    pub dropout: u64,
    /// Backbone weight initialization; consumed only by the seeded compact
    /// backbone (a loaded checkpoint brings its own weights).
    pub backbone_init: u64,
}

impl RunConfig {
    /// Parse a TOML config file; relative paths resolve against the file's
    /// directory. The result is normalized and validated.
    pub fn from_path(path: &Path) -> Result<RunConfig, HarnessError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        let mut config: RunConfig = toml::from_str(&raw)
            .map_err(|e| HarnessError::Config { reason: format!("{}: {e}", path.display()) })?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            for p in [
                &mut config.paths.data,
                &mut config.paths.cache,
                &mut config.paths.nle_corpus,
                &mut config.paths.checkpoints,
                &mut config.paths.reports,
            ] {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        let config = config.normalized();
        config.validate()?;
        Ok(config)
    }

    /// Apply the ablation-forced settings: NO_TSCOT pins γ = 1 (reduced
    /// template), NO_SENTICNET pins expansion_limit = 0.
    pub fn normalized(mut self) -> RunConfig {
        match self.ablation {
            Ablation::None => {}
            Ablation::NoTscot => self.gamma = 1,
            Ablation::NoSenticnet => self.expansion_limit = 0,
        }
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |reason: String| Err(HarnessError::Config { reason });
        if !GAMMA_RANGE.contains(&self.gamma) {
            return fail(format!(
                "gamma {} outside [{}, {}]",
                self.gamma,
                GAMMA_RANGE.start(),
                GAMMA_RANGE.end()
            ));
        }
        if !self.optimizer.name.eq_ignore_ascii_case("adamw") {
            return fail(format!("unsupported optimizer `{}`", self.optimizer.name));
        }
        if !self.optimizer.lr.is_finite() || self.optimizer.lr < 0.0 {
            return fail(format!("learning rate {} must be finite and >= 0", self.optimizer.lr));
        }
        if self.optimizer.batch_size == 0 {
            return fail("batch_size must be positive".to_string());
        }
        if self.optimizer.epochs == 0 {
            return fail("epochs must be positive".to_string());
        }
        if self.backbone_id.trim().is_empty() {
            return fail("backbone_id must be non-empty".to_string());
        }
        self.task_spec()?;
        Ok(())
    }

    /// Resolve the task name to its source→destination assignment.
    pub fn task_spec(&self) -> Result<TaskSpec, HarnessError> {
        if self.task == crate::synthetic::task().name {
            return Ok(crate::synthetic::task());
        }
        if let Some(spec) = crate::corpus::sem16_task(&self.task) {
            return Ok(spec);
        }
        if self.task.eq_ignore_ascii_case("vast") {
            return Ok(TaskSpec {
                name: "VAST".to_string(),
                source_targets: Vec::new(),
                dest_targets: Vec::new(),
                mode: TaskMode::ZeroShot,
            });
        }
        Err(HarnessError::Config {
            reason: format!(
                "unknown task `{}` (expected {}, F->L, L->F, H->D, D->H, or VAST)",
                self.task,
                crate::synthetic::task().name
            ),
        })
    }

    /// Derive the named seed streams from the master seed.
    pub fn seeds(&self) -> SeedStreams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        SeedStreams {
            data_order: rng.next_u64(),
            query_init: rng.next_u64(),
            dropout: rng.next_u64(),
            backbone_init: rng.next_u64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
task = "stadium->harbor"

[paths]
data = "data/manifest.toml"
cache = "cache"
nle_corpus = "nles/corpus.tsv"
checkpoints = "ckpt"
reports = "reports"
"#
    }

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn defaults_fill_in_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig::from_path(&write_config(dir.path(), minimal_toml())).unwrap();
        assert_eq!(config.gamma, 4);
        assert_eq!(config.ablation, Ablation::None);
        assert_eq!(config.seed, 0);
        assert_eq!(config.optimizer.name, "AdamW");
        assert_eq!(config.optimizer.lr, 2e-5);
        assert_eq!(config.optimizer.batch_size, 32);
        assert_eq!(config.optimizer.epochs, 10);
        assert_eq!(config.expansion_limit, 4);
        assert_eq!(config.backbone_id, "synthetic-compact");
        assert_eq!(config.paths.data, dir.path().join("data/manifest.toml"));
        assert_eq!(config.paths.reports, dir.path().join("reports"));
        assert!(matches!(config.llm.endpoint, crate::tscot::Endpoint::Mock { .. }));
    }

    #[test]
    fn ablations_force_their_settings() {
        let dir = tempfile::tempdir().unwrap();
        // Top-level keys must precede the [paths] table.
        let body = format!("ablation = \"no_tscot\"\ngamma = 6\n{}", minimal_toml());
        let config = RunConfig::from_path(&write_config(dir.path(), &body)).unwrap();
        assert_eq!(config.gamma, 1);

        let body = format!("ablation = \"no_senticnet\"\nexpansion_limit = 7\n{}", minimal_toml());
        let config = RunConfig::from_path(&write_config(dir.path(), &body)).unwrap();
        assert_eq!(config.expansion_limit, 0);
        assert_eq!(config.gamma, 4);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "gamma = 0\n",
            "gamma = 17\n",
            "task = \"unknown-task\"\n",
            "[optimizer]\nname = \"SGD\"\n",
            "[optimizer]\nbatch_size = 0\n",
            "[optimizer]\nepochs = 0\n",
            "[optimizer]\nlr = -0.1\n",
        ];
        for case in cases {
            // Overrides appended after the base keys must not collide with
            // them, so splice table sections carefully: scalar overrides go
            // right after `task`, table overrides at the end.
            let body = if case.starts_with('[') {
                format!("{}\n{case}", minimal_toml())
            } else if case.starts_with("task") {
                minimal_toml().replace("task = \"stadium->harbor\"", case.trim())
            } else {
                format!("{case}{}", minimal_toml())
            };
            let err = RunConfig::from_path(&write_config(dir.path(), &body)).unwrap_err();
            assert!(matches!(err, HarnessError::Config { .. }), "case `{case}` gave {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn task_names_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig::from_path(&write_config(dir.path(), minimal_toml())).unwrap();
        assert_eq!(config.task_spec().unwrap().name, "stadium->harbor");

        for (name, mode) in [
            ("D->H", TaskMode::CrossTarget),
            ("H->D", TaskMode::CrossTarget),
            ("F->L", TaskMode::CrossTarget),
            ("L->F", TaskMode::CrossTarget),
            ("VAST", TaskMode::ZeroShot),
        ] {
            let mut c = config.clone();
            c.task = name.to_string();
            assert_eq!(c.task_spec().unwrap().mode, mode, "{name}");
        }
    }

    #[test]
    fn seed_streams_are_deterministic_and_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::from_path(&write_config(dir.path(), minimal_toml())).unwrap();
        config.seed = 7;
        let a = config.seeds();
        assert_eq!(a, config.seeds());
        let all = [a.data_order, a.query_init, a.dropout, a.backbone_init];
        let unique: std::collections::BTreeSet<u64> = all.into_iter().collect();
        assert_eq!(unique.len(), 4);
        config.seed = 8;
        assert_ne!(config.seeds(), a);
    }

    #[test]
    fn ablation_parses_from_cli_spellings() {
        assert_eq!("none".parse::<Ablation>().unwrap(), Ablation::None);
        assert_eq!("NO_TSCOT".parse::<Ablation>().unwrap(), Ablation::NoTscot);
        assert_eq!("no-senticnet".parse::<Ablation>().unwrap(), Ablation::NoSenticnet);
        assert!("full".parse::<Ablation>().is_err());
    }

    #[test]
    fn exit_codes_map_failure_classes() {
        let partial = HarnessError::Tscot(TscotError::PartialCompletion {
            completed: Vec::new(),
            failed: Vec::new(),
        });
        assert_eq!(partial.exit_code(), 4);
        let backend = HarnessError::Tscot(TscotError::BackendUnavailable {
            attempts: 3,
            last_error: "refused".to_string(),
        });
        assert_eq!(backend.exit_code(), 3);
        let diverged = HarnessError::Divergence { step: 5, loss: f64::NAN };
        assert_eq!(diverged.exit_code(), 1);
        let config = HarnessError::Config { reason: "bad".to_string() };
        assert_eq!(config.exit_code(), 2);
    }
}
