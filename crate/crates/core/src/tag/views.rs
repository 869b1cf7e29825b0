use super::graph::{NodeId, Sample, SparseTag, Subgraph};
use super::sampler::{sample_subgraph, SamplerConfig};

pub const UNKNOWN_TEXT: &str = "unknown";
pub const SUMMARY_DELIMITER: &str = " | ";
pub const DEFAULT_MAX_SUMMARY_TOKENS: usize = 64;

fn log_bin(x: usize) -> u32 {
    (x + 1).ilog2()
}

fn decile(num: usize, den: usize) -> usize {
    if den == 0 {
        0
    } else {
        (10 * num / den).min(10)
    }
}

/// Observed texts of the subgraph, center first, joined by `" | "` and cut
/// after `max_tokens` whitespace tokens. `"unknown"` when nothing is observed.
pub fn semantic_summary(tag: &SparseTag, sg: &Subgraph, max_tokens: usize) -> String {
    let mut budget = max_tokens;
    let mut parts = Vec::new();
    for &id in &sg.node_ids {
        if budget == 0 {
            break;
        }
        if let Some(text) = &tag.node(id).text {
            let words: Vec<&str> = text.split_whitespace().take(budget).collect();
            budget -= words.len();
            parts.push(words.join(" "));
        }
    }
    if parts.is_empty() {
        UNKNOWN_TEXT.to_owned()
    } else {
        parts.join(SUMMARY_DELIMITER)
    }
}

/// Templated description of subgraph topology and text coverage.
pub fn structure_description(tag: &SparseTag, sg: &Subgraph) -> String {
    let n = sg.len();
    let m = sg.num_edges();
    let tri = sg.triangles();
    let deg = sg.degrees();
    let center_deg = deg[sg.center];
    let mut hist = [0usize; 6];
    for &d in &deg {
        let bucket = match d {
            0 => 0,
            1 => 1,
            2 => 2,
            3..=4 => 3,
            5..=8 => 4,
            _ => 5,
        };
        hist[bucket] += 1;
    }
    let texted = sg
        .node_ids
        .iter()
        .filter(|&&id| tag.node(id).has_text())
        .count();
    let pairs = n * n.saturating_sub(1) / 2;
    format!(
        "nodes {n} edges {m} triangles {tri} center degree {center_deg} \
         degree histogram {} {} {} {} {} {} text nodes {texted} | \
         sizebin{} edgebin{} tribin{} hubbin{} densitybin{} coverbin{}",
        hist[0],
        hist[1],
        hist[2],
        hist[3],
        hist[4],
        hist[5],
        log_bin(n),
        log_bin(m),
        log_bin(tri),
        log_bin(center_deg),
        decile(m, pairs),
        decile(texted, n),
    )
}

pub fn build_text_views(tag: &SparseTag, sg: &Subgraph, max_summary_tokens: usize) -> (String, String) {
    (
        semantic_summary(tag, sg, max_summary_tokens),
        structure_description(tag, sg),
    )
}

/// Sample a subgraph around `center` and render both text views.
pub fn make_sample(
    tag: &SparseTag,
    center: NodeId,
    sampler: &SamplerConfig,
    max_summary_tokens: usize,
    seed: u64,
) -> Sample {
    let subgraph = sample_subgraph(tag, center, sampler, seed);
    let (semantic_summary, structure_description) =
        build_text_views(tag, &subgraph, max_summary_tokens);
    Sample {
        subgraph,
        semantic_summary,
        structure_description,
        domain_id: tag.domain_id(),
    }
}
