//! Corpus assembly, zero-shot evaluation suites and the ablation grid.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{check_task, RunConfig};
use crate::encoders::{sample_inputs, SampleInputs};
use crate::error::{CoreError, Result};
use crate::eval::{
    auc, retrieval_metrics, threshold_metrics, zero_shot_classify, LabelPromptSet, MetricsReport,
};
use crate::model::Model;
use crate::seed;
use crate::tag::{generate_synthetic_corpus, load_tag, make_sample, SparseTag};
use crate::train::{sparsify_sources, train, TrainingSet, Variant};

/// A held-out domain with its label prompts.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub tag: SparseTag,
    pub prompts: Option<LabelPromptSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sources: Vec<SparseTag>,
    pub targets: Vec<Target>,
}

/// Sources and targets from files when configured, otherwise generated.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let c = &cfg.corpus;
    if c.source_files.is_empty() {
        let gen = &c.generate;
        let synth = generate_synthetic_corpus(gen, cfg.seed)?;
        let targets = synth
            .targets
            .into_iter()
            .enumerate()
            .map(|(t, tag)| {
                let prompts = LabelPromptSet::new(gen.prompts(gen.num_domains + t))?;
                Ok(Target {
                    tag,
                    prompts: Some(prompts),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut corpus = Corpus {
            sources: synth.sources,
            targets,
        };
        if !c.target_files.is_empty() {
            corpus.targets = load_targets(cfg)?;
        }
        return Ok(corpus);
    }
    Ok(Corpus {
        sources: c.source_files.iter().map(load_tag).collect::<Result<_>>()?,
        targets: load_targets(cfg)?,
    })
}

fn load_targets(cfg: &RunConfig) -> Result<Vec<Target>> {
    let c = &cfg.corpus;
    c.target_files
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let prompts = match c.prompt_files.get(i) {
                Some(p) => Some(LabelPromptSet::from_json_file(p)?),
                None => None,
            };
            Ok(Target {
                tag: load_tag(path)?,
                prompts,
            })
        })
        .collect()
}

fn eval_inputs(model: &Model, tag: &SparseTag, eval_seed: u64) -> Vec<SampleInputs> {
    let cfg = &model.config;
    (0..tag.num_nodes())
        .map(|v| {
            let s = seed::derive(eval_seed, "eval-subgraph", (tag.domain_id() as u64) << 32 | v as u64);
            let sample = make_sample(tag, v, &cfg.sampler, cfg.max_summary_tokens, s);
            sample_inputs(tag, &sample, cfg.encoder.hash_dim)
        })
        .collect()
}

fn pick(n: usize, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if cap == 0 || cap >= n {
        return (0..n).collect();
    }
    let mut idx = index::sample(rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Accuracy of prompt-similarity classification over labeled nodes.
pub fn classify_accuracy(
    model: &Model,
    tag: &SparseTag,
    prompts: &LabelPromptSet,
    embeddings: &[Vec<f64>],
    eval_seed: u64,
) -> Result<f64> {
    let prompt_emb = model.text_content(prompts.prompts())?;
    let labeled: Vec<usize> = (0..tag.num_nodes()).filter(|&v| tag.node(v).label.is_some()).collect();
    if labeled.is_empty() {
        return Err(CoreError::Validation(format!("target `{}` has no labels", tag.name())));
    }
    let mut rng = seed::rng_for(eval_seed, "eval-classify", tag.domain_id() as u64);
    let chosen = pick(labeled.len(), model.config.eval.max_nodes, &mut rng);
    let mut correct = 0usize;
    for &i in &chosen {
        let v = labeled[i];
        if zero_shot_classify(&embeddings[v], &prompt_emb)? == tag.node(v).label.unwrap() {
            correct += 1;
        }
    }
    Ok(correct as f64 / chosen.len() as f64)
}

fn link_metrics(model: &Model, tag: &SparseTag, emb: &[Vec<f64>], eval_seed: u64) -> Result<BTreeMap<String, f64>> {
    let ev = &model.config.eval;
    let n = tag.num_nodes();
    let mut rng = seed::rng_for(eval_seed, "eval-link", tag.domain_id() as u64);
    let pos_idx = pick(tag.num_edges(), ev.max_edges, &mut rng);
    let max_pairs = n * n.saturating_sub(1) / 2;
    if pos_idx.is_empty() || tag.num_edges() >= max_pairs {
        return Err(CoreError::EmptyClass);
    }
    let score = |u: usize, v: usize| ev.score_map.apply(crate::eval::cosine(&emb[u], &emb[v]));
    let positive: Vec<f64> = pos_idx
        .iter()
        .map(|&i| {
            let (u, v) = tag.edges()[i];
            score(u, v)
        })
        .collect();
    let mut negative = Vec::with_capacity(positive.len());
    while negative.len() < positive.len() {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v && !tag.has_edge(u, v) {
            negative.push(score(u, v));
        }
    }
    let bin = threshold_metrics(&positive, &negative, ev.link_threshold);
    Ok(BTreeMap::from([
        ("auc".to_owned(), auc(&positive, &negative)?),
        ("precision".to_owned(), bin.precision),
        ("recall".to_owned(), bin.recall),
        ("f1".to_owned(), bin.f1),
    ]))
}

fn retrieval(model: &Model, tag: &SparseTag, emb: &[Vec<f64>], eval_seed: u64) -> Result<BTreeMap<String, f64>> {
    let ev = &model.config.eval;
    let texted: Vec<usize> = (0..tag.num_nodes()).filter(|&v| tag.node(v).has_text()).collect();
    if texted.is_empty() {
        return Err(CoreError::Validation(format!("target `{}` has no text to retrieve", tag.name())));
    }
    let mut rng = seed::rng_for(eval_seed, "eval-retrieval", tag.domain_id() as u64);
    let chosen: Vec<usize> = pick(texted.len(), ev.retrieval_size, &mut rng)
        .into_iter()
        .map(|i| texted[i])
        .collect();
    let graphs: Vec<Vec<f64>> = chosen.iter().map(|&v| emb[v].clone()).collect();
    let texts: Vec<String> = chosen
        .iter()
        .map(|&v| tag.node(v).text.clone().expect("texted"))
        .collect();
    let text_emb = model.text_content(&texts)?;
    let mut out = BTreeMap::new();
    for (dir, q, c) in [("n2t", &graphs, &text_emb), ("t2n", &text_emb, &graphs)] {
        let m = retrieval_metrics(q, c, &ev.k_list)?;
        out.insert(format!("{dir}_mrr"), m.mrr);
        for (k, r) in m.recall_at {
            out.insert(format!("{dir}_recall@{k}"), r);
        }
    }
    Ok(out)
}

/// Run `tasks` on every target for every seed. Seeds drive subgraph
/// sampling, node subsets and negative edges.
pub fn evaluate_suite(model: &Model, targets: &[Target], tasks: &[String], seeds: &[u64]) -> Result<Vec<MetricsReport>> {
    for t in tasks {
        check_task(t)?;
    }
    let mut reports = Vec::new();
    for target in targets {
        let tag = &target.tag;
        let mut runs: BTreeMap<&str, Vec<BTreeMap<String, f64>>> = BTreeMap::new();
        for &s in seeds {
            let emb = model.graph_content(&eval_inputs(model, tag, s))?;
            for task in tasks {
                let metrics = match task.as_str() {
                    "classify" => {
                        let prompts = target.prompts.as_ref().ok_or_else(|| {
                            CoreError::Config(format!("target `{}` has no label prompts", tag.name()))
                        })?;
                        BTreeMap::from([(
                            "accuracy".to_owned(),
                            classify_accuracy(model, tag, prompts, &emb, s)?,
                        )])
                    }
                    "link" => link_metrics(model, tag, &emb, s)?,
                    "retrieval" => retrieval(model, tag, &emb, s)?,
                    _ => unreachable!("tasks validated above"),
                };
                runs.entry(task.as_str()).or_default().push(metrics);
            }
        }
        for task in tasks {
            if let Some(r) = runs.get(task.as_str()) {
                reports.push(MetricsReport::from_runs(task, tag.name(), seeds, r));
            }
        }
    }
    Ok(reports)
}

/// Train one variant from a fresh initialization with `cfg.seed`.
pub fn train_variant(cfg: &RunConfig, sources: &[SparseTag], variant: Variant) -> Result<Model> {
    let sparse = sparsify_sources(sources, cfg)?;
    let set = TrainingSet::build(&sparse, cfg)?;
    let mut model = Model::init(cfg, &set.domains)?;
    train(&mut model, &set, variant, |_| {})?;
    Ok(model)
}

/// Mean held-out accuracy of a model over the first target.
pub fn heldout_accuracy(model: &Model, targets: &[Target], eval_seed: u64) -> Result<f64> {
    let target = targets
        .first()
        .ok_or_else(|| CoreError::Config("no held-out target domain".into()))?;
    let reports = evaluate_suite(model, std::slice::from_ref(target), &["classify".into()], &[eval_seed])?;
    Ok(reports[0].metrics["accuracy"].mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub target: String,
    pub rows: Vec<AblationRow>,
    /// Accuracy of the untrained initialization for each seed.
    pub untrained: Vec<f64>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<16}", "variant");
        for s in &self.seeds {
            out.push_str(&format!(" {:>8}", format!("seed{s}")));
        }
        out.push_str(&format!(" {:>8}\n", "mean"));
        for r in &self.rows {
            out.push_str(&format!("{:<16}", r.variant.name()));
            for v in &r.per_seed {
                out.push_str(&format!(" {v:>8.4}"));
            }
            out.push_str(&format!(" {:>8.4}\n", r.mean));
        }
        let untrained_mean = self.untrained.iter().sum::<f64>() / self.untrained.len().max(1) as f64;
        out.push_str(&format!("untrained baseline mean {untrained_mean:.4}\n"));
        out
    }
}

/// Train `variants` for every seed and score held-out zero-shot accuracy.
pub fn run_ablation(cfg: &RunConfig, corpus: &Corpus, variants: &[Variant], seeds: &[u64]) -> Result<AblationReport> {
    let target = corpus
        .targets
        .first()
        .ok_or_else(|| CoreError::Config("ablation needs a held-out target domain".into()))?;
    let targets = std::slice::from_ref(target);
    let domains: Vec<_> = corpus.sources.iter().map(|t| t.domain_id()).collect();
    let mut untrained = Vec::new();
    let mut per_variant: BTreeMap<Variant, Vec<f64>> = BTreeMap::new();
    for &s in seeds {
        let run_cfg = RunConfig { seed: s, ..cfg.clone() };
        untrained.push(heldout_accuracy(&Model::init(&run_cfg, &domains)?, targets, s)?);
        for &v in variants {
            let model = train_variant(&run_cfg, &corpus.sources, v)?;
            per_variant.entry(v).or_default().push(heldout_accuracy(&model, targets, s)?);
        }
    }
    let rows = variants
        .iter()
        .map(|&v| {
            let per_seed = per_variant.remove(&v).unwrap_or_default();
            let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
            AblationRow {
                variant: v,
                per_seed,
                mean,
            }
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        target: target.tag.name().to_owned(),
        rows,
        untrained,
    })
}
