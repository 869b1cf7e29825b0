//! Trainable model state, inference helpers and JSON checkpoints.

use std::path::Path;

use rayon::prelude::*;

use s2align_autodiff::{ParamVars, Params, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoders::{graph_forward, hash_embed, init_linear, init_params, text_content, SampleInputs};
use crate::error::{CoreError, Result};
use crate::scrb::init_density_params;
use crate::seed;
use crate::tag::DomainId;

pub const CHECKPOINT_FORMAT: &str = "s2align-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: RunConfig,
    /// Source domains with a density model, ascending.
    pub domains: Vec<DomainId>,
    pub steps_trained: usize,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    seed: u64,
    model: Model,
}

impl Model {
    /// Fresh parameters: encoders, reconstruction head and density models.
    pub fn init(config: &RunConfig, domains: &[DomainId]) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let init_seed = seed::derive(config.seed, "model", 0);
        let mut params = init_params(enc, init_seed)?;
        init_linear(&mut params, "rec", enc.embed_dim, enc.embed_dim, init_seed)?;
        let mut domains = domains.to_vec();
        domains.sort_unstable();
        domains.dedup();
        init_density_params(&mut params, &domains, enc.embed_dim)?;
        Ok(Self {
            config: config.clone(),
            domains,
            steps_trained: 0,
            params,
        })
    }

    /// Content readouts `z_g^c` of several subgraphs.
    pub fn graph_content(&self, inputs: &[SampleInputs]) -> Result<Vec<Vec<f64>>> {
        inputs
            .par_iter()
            .map(|x| {
                let tape = Tape::new();
                let vars = ParamVars::register(&tape, &self.params);
                let (zc, _) = graph_forward(&tape, &vars, self.config.encoder.mp_layers, x)?;
                Ok(zc.value().into_data())
            })
            .collect()
    }

    /// Text content embeddings `z_t^c` through the frozen hasher and projector.
    pub fn text_content(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let vars = ParamVars::register(&tape, &self.params);
        texts
            .iter()
            .map(|t| {
                let h = Tensor::vector(hash_embed(t, self.config.encoder.hash_dim).vector);
                Ok(text_content(&tape, &vars, &h)?.value().into_data())
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.config.seed,
            model: self.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let fresh = Model::init(&ck.model.config, &ck.model.domains)
            .map_err(|e| CoreError::Checkpoint(format!("embedded config is invalid: {e}")))?;
        for (name, t) in fresh.params.iter() {
            match ck.model.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(CoreError::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(CoreError::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        if fresh.params.len() != ck.model.params.len() {
            return Err(CoreError::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(ck.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_json(&text)
    }
}
