//! Content/structure factorized encoders: a message-passing graph encoder
//! with two readout heads and two trainable projectors over a frozen
//! feature-hashing text embedder.

use rand::Rng;
use s2align_autodiff::{ParamVars, Params, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::seed;
use crate::tag::{Sample, SparseTag, Subgraph, UNKNOWN_TEXT};

/// Structural features appended to each node's hashed text.
pub const NUM_STRUCT_FEATURES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub mp_layers: usize,
    pub hash_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            embed_dim: 64,
            mp_layers: 2,
            hash_dim: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 2 || self.embed_dim < 2 || self.hash_dim < 2 {
            return Err(CoreError::Config(
                "encoder hidden_dim, embed_dim and hash_dim must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn node_input_dim(&self) -> usize {
        self.hash_dim + NUM_STRUCT_FEATURES
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], salt: u8) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in std::iter::once(&salt).chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashEmbedding {
    pub vector: Vec<f64>,
    /// No tokens: `vector` is all zeros rather than unit-norm.
    pub empty: bool,
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
pub fn hash_embed(text: &str, hash_dim: usize) -> HashEmbedding {
    let mut vector = vec![0.0; hash_dim];
    let mut empty = true;
    for token in tokenize(text) {
        empty = false;
        let bucket = (fnv1a(token.as_bytes(), 0) % hash_dim as u64) as usize;
        let sign = if fnv1a(token.as_bytes(), 1) & 1 == 0 { 1.0 } else { -1.0 };
        vector[bucket] += sign;
    }
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        vector.iter_mut().for_each(|x| *x /= norm);
    }
    HashEmbedding { vector, empty }
}

/// Precomputed encoder inputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleInputs {
    /// `[n, hash_dim + 3]`: hashed text, normalized degree, center flag, text flag.
    pub node_features: Tensor,
    /// `[n, n]` row-normalized adjacency (isolated rows are zero).
    pub mean_adj: Tensor,
    pub semantic: Tensor,
    pub structure: Tensor,
}

pub fn node_features(tag: &SparseTag, sg: &Subgraph, hash_dim: usize) -> Tensor {
    let n = sg.len();
    let width = hash_dim + NUM_STRUCT_FEATURES;
    let deg = sg.degrees();
    let denom = n.saturating_sub(1).max(1) as f64;
    let mut data = Vec::with_capacity(n * width);
    for (i, &id) in sg.node_ids.iter().enumerate() {
        let text = tag.node(id).text.as_deref();
        data.extend(hash_embed(text.unwrap_or(UNKNOWN_TEXT), hash_dim).vector);
        data.push(deg[i] as f64 / denom);
        data.push(if i == sg.center { 1.0 } else { 0.0 });
        data.push(if text.is_some() { 1.0 } else { 0.0 });
    }
    Tensor::matrix(n, width, data).expect("row width matches")
}

pub fn mean_adjacency(sg: &Subgraph) -> Tensor {
    let n = sg.len();
    let mut data = vec![0.0; n * n];
    for (i, nbrs) in sg.adjacency().iter().enumerate() {
        for &j in nbrs {
            data[i * n + j] = 1.0 / nbrs.len() as f64;
        }
    }
    Tensor::matrix(n, n, data).expect("square")
}

pub fn sample_inputs(tag: &SparseTag, sample: &Sample, hash_dim: usize) -> SampleInputs {
    SampleInputs {
        node_features: node_features(tag, &sample.subgraph, hash_dim),
        mean_adj: mean_adjacency(&sample.subgraph),
        semantic: Tensor::vector(hash_embed(&sample.semantic_summary, hash_dim).vector),
        structure: Tensor::vector(hash_embed(&sample.structure_description, hash_dim).vector),
    }
}

fn uniform_matrix(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized")
}

/// Encoder weights (`graph.*`, `text.*`): uniform in `±1/sqrt(fan_in)`,
/// biases zero.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut rng = seed::rng_for(seed, "init", 0);
    let mut p = Params::new();
    let (h, d) = (cfg.hidden_dim, cfg.embed_dim);
    p.insert("graph.in.w", uniform_matrix(&mut rng, cfg.node_input_dim(), h))?;
    p.insert("graph.in.b", Tensor::zeros(&[h]))?;
    for l in 0..cfg.mp_layers {
        p.insert(format!("graph.mp{l}.self.w"), uniform_matrix(&mut rng, h, h))?;
        p.insert(format!("graph.mp{l}.neigh.w"), uniform_matrix(&mut rng, h, h))?;
        p.insert(format!("graph.mp{l}.b"), Tensor::zeros(&[h]))?;
    }
    for head in ["content", "structure"] {
        p.insert(format!("graph.{head}.w"), uniform_matrix(&mut rng, h, d))?;
        p.insert(format!("graph.{head}.b"), Tensor::zeros(&[d]))?;
    }
    for head in ["content", "structure"] {
        p.insert(format!("text.{head}.w"), uniform_matrix(&mut rng, cfg.hash_dim, d))?;
        p.insert(format!("text.{head}.b"), Tensor::zeros(&[d]))?;
    }
    Ok(p)
}

/// Uniform fan-in weights and zero bias under `prefix.w` / `prefix.b`.
pub fn init_linear(params: &mut Params, prefix: &str, fan_in: usize, fan_out: usize, seed: u64) -> Result<()> {
    let mut rng = seed::rng_for(seed, prefix, 0);
    params.insert(format!("{prefix}.w"), uniform_matrix(&mut rng, fan_in, fan_out))?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?;
    Ok(())
}

fn affine<'t>(x: Var<'t>, vars: &ParamVars<'t>, prefix: &str) -> Result<Var<'t>> {
    let w = vars.get(&format!("{prefix}.w"))?;
    let b = vars.get(&format!("{prefix}.b"))?;
    Ok(x.matmul(w)?.add(b)?)
}

/// `(z_g^c, z_g^s)` for one subgraph.
pub fn graph_forward<'t>(
    tape: &'t Tape,
    vars: &ParamVars<'t>,
    mp_layers: usize,
    inputs: &SampleInputs,
) -> Result<(Var<'t>, Var<'t>)> {
    let x = tape.constant(inputs.node_features.clone());
    let adj = tape.constant(inputs.mean_adj.clone());
    let mut h = affine(x, vars, "graph.in")?.tanh();
    for l in 0..mp_layers {
        let own = h.matmul(vars.get(&format!("graph.mp{l}.self.w"))?)?;
        let neigh = adj
            .matmul(h)?
            .matmul(vars.get(&format!("graph.mp{l}.neigh.w"))?)?;
        h = own
            .add(neigh)?
            .add(vars.get(&format!("graph.mp{l}.b"))?)?
            .tanh();
    }
    let pooled = h.mean_rows()?;
    let z_c = affine(pooled, vars, "graph.content")?.l2_normalize();
    let z_s = affine(pooled, vars, "graph.structure")?.l2_normalize();
    Ok((z_c, z_s))
}

/// Content projector alone, used for label prompts.
pub fn text_content<'t>(tape: &'t Tape, vars: &ParamVars<'t>, semantic: &Tensor) -> Result<Var<'t>> {
    let s = tape.constant(semantic.clone());
    Ok(affine(s, vars, "text.content")?.tanh().l2_normalize())
}

/// `(z_t^c, z_t^s)` from the frozen hashed text views.
pub fn text_forward<'t>(
    tape: &'t Tape,
    vars: &ParamVars<'t>,
    semantic: &Tensor,
    structure: &Tensor,
) -> Result<(Var<'t>, Var<'t>)> {
    let z_c = text_content(tape, vars, semantic)?;
    let s = tape.constant(structure.clone());
    let z_s = affine(s, vars, "text.structure")?.tanh().l2_normalize();
    Ok((z_c, z_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag::{make_sample, NodeRecord, SamplerConfig};

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 6,
            embed_dim: 4,
            mp_layers: 2,
            hash_dim: 16,
        }
    }

    #[test]
    fn hash_embed_basics() {
        let e = hash_embed("", 32);
        assert!(e.empty);
        assert!(e.vector.iter().all(|&x| x == 0.0));
        let a = hash_embed("a", 32);
        assert_eq!(a, hash_embed("A a", 32));
        assert!(!a.empty);
        let n: f64 = a.vector.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_splits_on_punctuation() {
        let t: Vec<_> = tokenize("Graph-Neural, nets!!x2").collect();
        assert_eq!(t, ["graph", "neural", "nets", "x2"]);
    }

    #[test]
    fn init_is_seeded_and_biases_are_zero() {
        let cfg = small_cfg();
        let a = init_params(&cfg, 1).unwrap();
        assert_eq!(a, init_params(&cfg, 1).unwrap());
        assert_ne!(a, init_params(&cfg, 2).unwrap());
        for (name, t) in a.iter() {
            if name.ends_with(".b") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            } else {
                let bound = 1.0 / (t.rows() as f64).sqrt();
                assert!(t.data().iter().all(|x| x.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn single_node_subgraph_is_well_defined() {
        let cfg = small_cfg();
        let nodes = vec![NodeRecord::new(0, Some("solo"), None)];
        let tag = SparseTag::new("s", 1, nodes, []).unwrap();
        let sample = make_sample(&tag, 0, &SamplerConfig::default(), 64, 0);
        let inputs = sample_inputs(&tag, &sample, cfg.hash_dim);
        let params = init_params(&cfg, 3).unwrap();
        let tape = Tape::new();
        let vars = ParamVars::register(&tape, &params);
        let (zc, zs) = graph_forward(&tape, &vars, cfg.mp_layers, &inputs).unwrap();
        for z in [zc, zs] {
            assert!((z.value().l2_norm() - 1.0).abs() < 1e-9);
        }
    }
}
