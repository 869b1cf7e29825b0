//! Text-attributed graphs: data model, TAG-JSONL ingestion, synthetic
//! corpora, text sparsification, subgraph sampling, text views and
//! personalized PageRank.

mod graph;
mod jsonl;
mod ppr;
mod sampler;
mod synth;
mod views;

pub use graph::{clean_text, DomainId, NodeId, NodeRecord, Sample, SparseTag, Subgraph};
pub use jsonl::{load_tag, read_tag, save_tag, write_tag};
pub use ppr::{ppr_distribution, DEFAULT_RESTART, DEFAULT_TOL};
pub use sampler::{sample_subgraph, SamplerConfig};
pub use synth::{generate_synthetic_corpus, sparsify_text, GenConfig, SyntheticCorpus};
pub use views::{
    build_text_views, make_sample, semantic_summary, structure_description,
    DEFAULT_MAX_SUMMARY_TOKENS, SUMMARY_DELIMITER, UNKNOWN_TEXT,
};
