//! Run configuration: one JSON document, sections mirror the pipeline
//! stages. Unknown keys are rejected; omitted keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{CoreError, Result};
use crate::eval::ScoreMap;
use crate::scrb::{ObjectiveConfig, ScrbConfig};
use crate::tag::{GenConfig, SamplerConfig, DEFAULT_MAX_SUMMARY_TOKENS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Synthetic generator settings, used when `source_files` is empty.
    pub generate: GenConfig,
    /// TAG-JSONL source domains. Overrides the generator when non-empty.
    pub source_files: Vec<PathBuf>,
    /// TAG-JSONL held-out domains for evaluation.
    pub target_files: Vec<PathBuf>,
    /// Label prompt files (`{class: prompt}` JSON), parallel to `target_files`.
    pub prompt_files: Vec<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            generate: GenConfig::default(),
            source_files: Vec::new(),
            target_files: Vec::new(),
            prompt_files: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            steps: 300,
            lr: 1e-5,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            tau: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    pub k_list: Vec<usize>,
    pub link_threshold: f64,
    pub score_map: ScoreMap,
    /// Nodes scored per seed for classification; 0 means all labeled nodes.
    pub max_nodes: usize,
    /// Positive edges sampled per seed for link prediction.
    pub max_edges: usize,
    /// Node-text pairs sampled per seed for retrieval.
    pub retrieval_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tasks: vec!["classify".into(), "link".into(), "retrieval".into()],
            seeds: vec![0, 1, 2, 3, 4],
            k_list: vec![1, 5, 10],
            link_threshold: 0.5,
            score_map: ScoreMap::Affine,
            max_nodes: 0,
            max_edges: 200,
            retrieval_size: 100,
        }
    }
}

/// Settings for the theorem checks run by `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub domains: usize,
    pub d_inv: usize,
    pub d_spu: usize,
    pub n_samples: usize,
    pub tol_rel: f64,
    /// Give each domain its own label law, which must break equalization.
    pub violate: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            domains: 3,
            d_inv: 2,
            d_spu: 1,
            n_samples: 200_000,
            tol_rel: 0.02,
            violate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Fraction of texted source nodes that keep their text during training.
    pub keep_fraction: f64,
    /// Apply `keep_fraction` when writing generated corpora to disk.
    pub sparsify_at_generate: bool,
    pub sampler: SamplerConfig,
    pub max_summary_tokens: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub scrb: ScrbConfig,
    pub objective: ObjectiveConfig,
    pub eval: EvalConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            keep_fraction: 0.10,
            sparsify_at_generate: false,
            sampler: SamplerConfig::default(),
            max_summary_tokens: DEFAULT_MAX_SUMMARY_TOKENS,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            scrb: ScrbConfig::default(),
            objective: ObjectiveConfig::default(),
            eval: EvalConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

pub const TASKS: [&str; 3] = ["classify", "link", "retrieval"];

pub fn check_task(name: &str) -> Result<()> {
    if TASKS.contains(&name) {
        Ok(())
    } else {
        Err(CoreError::UnknownTask {
            name: name.to_owned(),
            valid: TASKS.join(", "),
        })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.corpus.source_files.is_empty() {
            self.corpus.generate.validate()?;
        }
        if !self.corpus.prompt_files.is_empty()
            && self.corpus.prompt_files.len() != self.corpus.target_files.len()
        {
            return bad("corpus.prompt_files must parallel corpus.target_files".into());
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction {} is outside (0, 1]", self.keep_fraction));
        }
        self.sampler.validate()?;
        self.encoder.validate()?;
        self.scrb.validate()?;
        self.objective.validate()?;
        let t = &self.train;
        if t.batch_size < 2 {
            return bad("train.batch_size must be at least 2".into());
        }
        if !(t.lr >= 0.0 && t.weight_decay >= 0.0 && t.tau > 0.0 && t.adam_eps > 0.0) {
            return bad("train.lr and weight_decay must be >= 0, tau and adam_eps > 0".into());
        }
        if !((0.0..1.0).contains(&t.beta1) && (0.0..1.0).contains(&t.beta2)) {
            return bad("train betas must be in [0, 1)".into());
        }
        for task in &self.eval.tasks {
            check_task(task)?;
        }
        if self.eval.seeds.is_empty() {
            return bad("eval.seeds must not be empty".into());
        }
        if self.eval.k_list.contains(&0) {
            return bad("eval.k_list entries must be positive".into());
        }
        let v = &self.verify;
        if v.domains < 2 || v.d_inv == 0 || v.n_samples == 0 || !(v.tol_rel >= 0.0) {
            return bad("verify needs domains >= 2, d_inv >= 1, n_samples >= 1, tol_rel >= 0".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
