//! Multi-domain stochastic-block-model corpora with class-correlated text.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{DomainId, NodeRecord, SparseTag};
use crate::error::{CoreError, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Source domains used for training.
    pub num_domains: usize,
    /// Additional held-out domains generated with the same recipe.
    pub num_target_domains: usize,
    pub nodes_per_domain: usize,
    pub num_classes: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Domain `e` (0-based) scales both edge probabilities by `1 + e * density_step`.
    pub density_step: f64,
    /// Background vocabulary visible to each domain.
    pub vocab_size: usize,
    /// Offset of the background window between consecutive domains.
    pub vocab_shift: usize,
    /// Class-specific tokens available per class across all domains.
    pub class_vocab: usize,
    /// Class tokens a single domain draws from.
    pub class_window: usize,
    /// Offset of the class window between consecutive domains.
    pub class_shift: usize,
    pub tokens_per_node: usize,
    /// Probability that a token is class-specific rather than background.
    pub class_signal: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_domains: 3,
            num_target_domains: 1,
            nodes_per_domain: 200,
            num_classes: 4,
            p_intra: 0.1,
            p_inter: 0.005,
            density_step: 0.25,
            vocab_size: 48,
            vocab_shift: 16,
            class_vocab: 12,
            class_window: 6,
            class_shift: 2,
            tokens_per_node: 12,
            class_signal: 0.5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.num_domains == 0 {
            return fail("num_domains must be at least 1".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be at least 1".into());
        }
        if self.nodes_per_domain < self.num_classes {
            return fail("nodes_per_domain must be at least num_classes".into());
        }
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("class_signal", self.class_signal),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if !(self.density_step >= 0.0 && self.density_step.is_finite()) {
            return fail("density_step must be a finite non-negative number".into());
        }
        if self.vocab_size == 0 || self.class_vocab == 0 || self.tokens_per_node == 0 {
            return fail("vocab_size, class_vocab and tokens_per_node must be positive".into());
        }
        if self.class_window == 0 || self.class_window > self.class_vocab {
            return fail("class_window must be in 1..=class_vocab".into());
        }
        Ok(())
    }

    fn total_domains(&self) -> usize {
        self.num_domains + self.num_target_domains
    }

    /// Class-specific tokens visible in domain `e` (0-based over sources then targets).
    pub fn class_tokens(&self, e: usize, class: usize) -> Vec<String> {
        (0..self.class_window)
            .map(|k| {
                let j = (e * self.class_shift + k) % self.class_vocab;
                format!("c{class}w{j}")
            })
            .collect()
    }

    fn background_token(&self, e: usize, k: usize) -> String {
        format!("b{}", e * self.vocab_shift + k)
    }

    /// Label prompt for `class` written in the vocabulary of domain `e`.
    pub fn prompt(&self, e: usize, class: usize) -> String {
        format!(
            "this node belongs to class{class} {}",
            self.class_tokens(e, class).join(" ")
        )
    }

    pub fn prompts(&self, e: usize) -> BTreeMap<usize, String> {
        (0..self.num_classes).map(|c| (c, self.prompt(e, c))).collect()
    }
}

/// Generated source and held-out target domains. Domain ids run `1..=K` for
/// sources and continue for targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub sources: Vec<SparseTag>,
    pub targets: Vec<SparseTag>,
}

impl SyntheticCorpus {
    pub fn all(&self) -> impl Iterator<Item = &SparseTag> {
        self.sources.iter().chain(&self.targets)
    }
}

fn generate_domain(gen: &GenConfig, e: usize, seed: u64) -> Result<SparseTag> {
    let n = gen.nodes_per_domain;
    let scale = 1.0 + e as f64 * gen.density_step;
    let p_in = (gen.p_intra * scale).min(1.0);
    let p_out = (gen.p_inter * scale).min(1.0);

    let mut labels: Vec<usize> = (0..n).map(|i| i % gen.num_classes).collect();
    labels.shuffle(&mut seed::rng_for(seed, "labels", e as u64));

    let mut rng = seed::rng_for(seed, "edges", e as u64);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut rng = seed::rng_for(seed, "text", e as u64);
    let nodes = labels
        .iter()
        .enumerate()
        .map(|(id, &c)| {
            let mut class_pool = gen.class_tokens(e, c);
            class_pool.push(format!("class{c}"));
            let tokens: Vec<String> = (0..gen.tokens_per_node)
                .map(|_| {
                    if rng.random::<f64>() < gen.class_signal {
                        class_pool[rng.random_range(0..class_pool.len())].clone()
                    } else {
                        gen.background_token(e, rng.random_range(0..gen.vocab_size))
                    }
                })
                .collect();
            NodeRecord::new(id, Some(&tokens.join(" ")), Some(c))
        })
        .collect();

    let (name, domain_id) = if e < gen.num_domains {
        (format!("synthetic-{}", e + 1), e + 1)
    } else {
        (format!("synthetic-target-{}", e + 1 - gen.num_domains), e + 1)
    };
    SparseTag::new(name, domain_id as DomainId, nodes, edges)
}

pub fn generate_synthetic_corpus(gen: &GenConfig, seed: u64) -> Result<SyntheticCorpus> {
    gen.validate()?;
    let mut all = (0..gen.total_domains())
        .map(|e| generate_domain(gen, e, seed))
        .collect::<Result<Vec<_>>>()?;
    let targets = all.split_off(gen.num_domains);
    Ok(SyntheticCorpus {
        sources: all,
        targets,
    })
}

/// Keep text on exactly `round(keep_fraction * texted)` uniformly chosen nodes.
pub fn sparsify_text(tag: &SparseTag, keep_fraction: f64, seed: u64) -> Result<SparseTag> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CoreError::Config(format!(
            "keep_fraction {keep_fraction} is outside (0, 1]"
        )));
    }
    let texted: Vec<usize> = tag
        .nodes()
        .iter()
        .filter(|n| n.has_text())
        .map(|n| n.id)
        .collect();
    let keep = (keep_fraction * texted.len() as f64).round() as usize;
    if keep == texted.len() {
        return Ok(tag.clone());
    }
    let mut rng = seed::rng_for(seed, "sparsify", tag.domain_id() as u64);
    let mut kept = vec![false; tag.num_nodes()];
    for i in index::sample(&mut rng, texted.len(), keep) {
        kept[texted[i]] = true;
    }
    let texts = tag
        .nodes()
        .iter()
        .map(|n| if kept[n.id] { n.text.clone() } else { None })
        .collect();
    Ok(tag.with_texts(texts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            nodes_per_domain: 40,
            ..GenConfig::default()
        }
    }

    #[test]
    fn default_shape() {
        let corpus = generate_synthetic_corpus(&GenConfig::default(), 3).unwrap();
        assert_eq!(corpus.sources.len(), 3);
        assert_eq!(corpus.targets.len(), 1);
        for (i, tag) in corpus.all().enumerate() {
            assert_eq!(tag.num_nodes(), 200);
            assert_eq!(tag.domain_id() as usize, i + 1);
            assert!(tag.nodes().iter().all(|n| n.label.is_some() && n.has_text()));
        }
    }

    #[test]
    fn labels_are_balanced() {
        let corpus = generate_synthetic_corpus(&small(), 1).unwrap();
        let mut counts = [0; 4];
        for n in corpus.sources[0].nodes() {
            counts[n.label.unwrap()] += 1;
        }
        assert_eq!(counts, [10; 4]);
    }

    #[test]
    fn rejects_bad_probability() {
        let gen = GenConfig {
            p_intra: 1.5,
            ..GenConfig::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&gen, 0),
            Err(CoreError::Config(_))
        ));
        let gen = GenConfig {
            num_classes: 0,
            ..GenConfig::default()
        };
        assert!(generate_synthetic_corpus(&gen, 0).is_err());
    }

    #[test]
    fn class_windows_shift_by_domain() {
        let gen = GenConfig::default();
        assert_eq!(gen.class_tokens(0, 1)[0], "c1w0");
        assert_eq!(gen.class_tokens(1, 1)[0], "c1w2");
        assert_eq!(gen.class_tokens(5, 0)[5], "c0w3");
    }

    #[test]
    fn sparsify_counts() {
        let corpus = generate_synthetic_corpus(&small(), 9).unwrap();
        let tag = &corpus.sources[0];
        assert_eq!(sparsify_text(tag, 1.0, 0).unwrap(), *tag);
        let sparse = sparsify_text(tag, 0.1, 4).unwrap();
        assert_eq!(sparse.num_texted(), 4);
        assert_eq!(sparse.edges(), tag.edges());
    }

    #[test]
    fn sparsify_rejects_zero_fraction() {
        let corpus = generate_synthetic_corpus(&small(), 9).unwrap();
        assert!(sparsify_text(&corpus.sources[0], 0.0, 0).is_err());
    }
}
