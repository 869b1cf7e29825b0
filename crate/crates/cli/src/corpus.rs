//! On-disk corpus layout written by `generate` and read back by `--corpus`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use s2align_core::config::RunConfig;
use s2align_core::tag::{save_tag, sparsify_text, GenConfig, SparseTag};
use s2align_core::seed;

use crate::commands::write_json;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "s2align-corpus";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub role: Role,
    /// Relative to the manifest's directory.
    pub path: String,
    pub prompts: Option<String>,
    pub name: String,
    pub domain_id: u32,
    pub nodes: usize,
    pub edges: usize,
    pub texted: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub generate: GenConfig,
    /// Keep fraction applied to source texts at generation time, if any.
    pub sparsified: Option<f64>,
    pub files: Vec<FileEntry>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn entry(dir: &Path, tag: &SparseTag, role: Role, prompts: Option<String>) -> Result<FileEntry, CliError> {
    let file = format!("{}.jsonl", tag.name());
    let path = dir.join(&file);
    save_tag(tag, &path)?;
    Ok(FileEntry {
        role,
        sha256: sha256_file(&path)?,
        path: file,
        prompts,
        name: tag.name().to_owned(),
        domain_id: tag.domain_id(),
        nodes: tag.num_nodes(),
        edges: tag.num_edges(),
        texted: tag.num_texted(),
    })
}

/// Generate and write the configured synthetic corpus.
pub fn write_corpus(cfg: &RunConfig, dir: &Path) -> Result<Manifest, CliError> {
    let gen = &cfg.corpus.generate;
    let synth = s2align_core::tag::generate_synthetic_corpus(gen, cfg.seed)?;
    let mut files = Vec::new();
    for tag in &synth.sources {
        let tag = if cfg.sparsify_at_generate {
            sparsify_text(tag, cfg.keep_fraction, seed::derive(cfg.seed, "sparsify", 0))?
        } else {
            tag.clone()
        };
        files.push(entry(dir, &tag, Role::Source, None)?);
    }
    for (t, tag) in synth.targets.iter().enumerate() {
        let prompt_file = format!("{}.prompts.json", tag.name());
        write_json(&dir.join(&prompt_file), &gen.prompts(gen.num_domains + t))?;
        files.push(entry(dir, tag, Role::Target, Some(prompt_file))?);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        seed: cfg.seed,
        generate: gen.clone(),
        sparsified: cfg.sparsify_at_generate.then_some(cfg.keep_fraction),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Point the config's corpus section at the files of a generated corpus.
pub fn apply_corpus_dir(cfg: &mut RunConfig, dir: &Path) -> Result<(), CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CliError::Config(format!("{} is not a corpus manifest", path.display())));
    }
    let join = |p: &str| -> PathBuf { dir.join(p) };
    let c = &mut cfg.corpus;
    c.source_files.clear();
    c.target_files.clear();
    c.prompt_files.clear();
    for f in &manifest.files {
        match f.role {
            Role::Source => c.source_files.push(join(&f.path)),
            Role::Target => {
                c.target_files.push(join(&f.path));
                let prompts = f.prompts.as_deref().ok_or_else(|| {
                    CliError::Config(format!("target {} has no prompt file in the manifest", f.name))
                })?;
                c.prompt_files.push(join(prompts));
            }
        }
    }
    if manifest.sparsified.is_some() {
        // Source texts were already sparsified when the corpus was written.
        cfg.keep_fraction = 1.0;
    }
    cfg.validate().map_err(CliError::from)
}
