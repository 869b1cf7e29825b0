use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use s2align_core::config::RunConfig;
use s2align_core::eval::{render_table, MetricsReport};
use s2align_core::model::Model;
use s2align_core::pipeline::{evaluate_suite, load_corpus, run_ablation, AblationReport};
use s2align_core::train::{sparsify_sources, train as run_training, TrainingSet, Variant};
use s2align_theory::VerifyReport;

use crate::corpus::{apply_corpus_dir, write_corpus};
use crate::{CliError, GlobalArgs};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Configuration from `--config` or defaults, with `--seed` applied.
fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_variant(name: &str) -> Result<Variant, CliError> {
    Variant::ALL.into_iter().find(|v| v.name() == name).ok_or_else(|| {
        let valid: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        CliError::Config(format!("unknown variant `{name}`, expected one of {}", valid.join(", ")))
    })
}

pub fn generate(g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = resolve_config(g)?;
    create_dir(&g.out)?;
    let manifest = write_corpus(&cfg, &g.out)?;
    if !g.quiet {
        for f in &manifest.files {
            println!(
                "{:<6} {:<24} nodes {:>6} edges {:>7} texted {:>6}",
                if f.role == crate::corpus::Role::Source { "source" } else { "target" },
                f.name,
                f.nodes,
                f.edges,
                f.texted
            );
        }
    }
    Ok(())
}

pub fn train(g: &GlobalArgs, corpus: Option<&Path>, variant: &str) -> Result<(), CliError> {
    let variant = parse_variant(variant)?;
    let mut cfg = resolve_config(g)?;
    if let Some(dir) = corpus {
        apply_corpus_dir(&mut cfg, dir)?;
    }
    let data = load_corpus(&cfg)?;
    let sparse = sparsify_sources(&data.sources, &cfg)?;
    let set = TrainingSet::build(&sparse, &cfg)?;
    let mut model = Model::init(&cfg, &set.domains)?;

    create_dir(&g.out)?;
    let log_path = g.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    let mut write_err = None;
    let every = (cfg.train.steps / 20).max(1);
    let result = run_training(&mut model, &set, variant, |s| {
        if write_err.is_none() {
            let line = serde_json::to_string(s).expect("step log serializes");
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
        if !g.quiet && (s.step % every == 0 || s.step + 1 == cfg.train.steps) {
            println!("step {:>6} total {:.6} align {:.6}", s.step, s.total, s.align);
        }
    });
    log.flush().map_err(|e| io_err(&log_path, e))?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path, e));
    }
    result?;
    model.save(g.out.join("checkpoint.json"))?;
    write_json(&g.out.join("config.json"), &cfg)?;
    if !g.quiet {
        println!("wrote {}", g.out.join("checkpoint.json").display());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct MetricsFile {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
}

pub fn eval(
    g: &GlobalArgs,
    checkpoint: &Path,
    corpus: Option<&Path>,
    tasks: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
) -> Result<(), CliError> {
    let mut model = Model::load(checkpoint)?;
    let mut cfg = match &g.config {
        Some(_) => resolve_config(g)?,
        None => model.config.clone(),
    };
    if let Some(dir) = corpus {
        apply_corpus_dir(&mut cfg, dir)?;
    }
    if let Some(t) = tasks {
        cfg.eval.tasks = t;
    }
    if let Some(s) = seeds {
        cfg.eval.seeds = s;
    }
    cfg.validate()?;
    model.config.eval = cfg.eval.clone();
    let data = load_corpus(&cfg)?;
    let reports = evaluate_suite(&model, &data.targets, &cfg.eval.tasks, &cfg.eval.seeds)?;
    let table = render_table(&reports);
    create_dir(&g.out)?;
    write_json(
        &g.out.join("metrics.json"),
        &MetricsFile {
            config: cfg.clone(),
            seeds: cfg.eval.seeds.clone(),
            reports,
        },
    )?;
    write_text(&g.out.join("metrics.txt"), &table)?;
    if !g.quiet {
        print!("{table}");
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct VerifyFile {
    pub config: s2align_core::config::VerifyConfig,
    pub seed: u64,
    pub report: VerifyReport,
}

pub fn verify_summary(r: &VerifyReport) -> String {
    let eq = &r.equalization;
    let sp = &r.spurious;
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    out.push_str(&format!("weighted risks      {}\n", fmt(&eq.risks)));
    out.push_str(&format!("relative gap        {:.5} (tol {})\n", eq.gap, eq.tol_rel));
    out.push_str(&format!("unweighted risks    {}\n", fmt(&eq.unweighted_risks)));
    out.push_str(&format!("unweighted gap      {:.5}\n", eq.unweighted_gap));
    out.push_str(&format!("equalization        {}\n", if eq.pass { "pass" } else { "FAIL" }));
    out.push_str(&format!("constrained |w_spu| {:.3e}\n", sp.w_spu_norm));
    out.push_str(&format!("pooled OLS |w_spu|  {:.3e}\n", sp.ols_w_spu_norm));
    out.push_str(&format!("spurious            {}\n", if sp.pass { "pass" } else { "FAIL" }));
    out.push_str(&format!("overall             {}\n", if r.pass { "pass" } else { "FAIL" }));
    out
}

pub fn verify(g: &GlobalArgs, violate: bool, tol_rel: Option<f64>) -> Result<(), CliError> {
    let mut cfg = resolve_config(g)?;
    cfg.verify.violate |= violate;
    if let Some(t) = tol_rel {
        cfg.verify.tol_rel = t;
    }
    cfg.validate()?;
    let report = s2align_theory::run_verify(&cfg.verify, cfg.seed)?;
    create_dir(&g.out)?;
    let pass = report.pass;
    let summary = verify_summary(&report);
    write_json(
        &g.out.join("verify.json"),
        &VerifyFile {
            config: cfg.verify,
            seed: cfg.seed,
            report,
        },
    )?;
    if !g.quiet {
        print!("{summary}");
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed("theorem verification".into()))
    }
}

#[derive(Serialize, Deserialize)]
pub struct AblationFile {
    pub config: RunConfig,
    pub report: AblationReport,
}

pub fn ablate(g: &GlobalArgs, corpus: Option<&Path>, seeds: Option<Vec<u64>>) -> Result<(), CliError> {
    let mut cfg = resolve_config(g)?;
    if let Some(dir) = corpus {
        apply_corpus_dir(&mut cfg, dir)?;
    }
    let seeds = seeds.unwrap_or_else(|| cfg.eval.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Config("ablation needs at least one seed".into()));
    }
    let data = load_corpus(&cfg)?;
    let report = run_ablation(&cfg, &data, &Variant::ALL, &seeds)?;
    let table = report.table();
    create_dir(&g.out)?;
    write_json(&g.out.join("ablation.json"), &AblationFile { config: cfg, report })?;
    write_text(&g.out.join("ablation.txt"), &table)?;
    if !g.quiet {
        print!("{table}");
    }
    Ok(())
}

pub fn report(dir: &Path, quiet: bool) -> Result<(), CliError> {
    let mut out = String::new();
    let metrics = dir.join("metrics.json");
    if metrics.exists() {
        let m: MetricsFile = read_json(&metrics)?;
        out.push_str(&render_table(&m.reports));
    }
    let ablation = dir.join("ablation.json");
    if ablation.exists() {
        let a: AblationFile = read_json(&ablation)?;
        out.push_str(&a.report.table());
    }
    let verify = dir.join("verify.json");
    if verify.exists() {
        let v: VerifyFile = read_json(&verify)?;
        out.push_str(&verify_summary(&v.report));
    }
    if out.is_empty() {
        return Err(CliError::Io(format!("{}: no metrics.json, ablation.json or verify.json", dir.display())));
    }
    if !quiet {
        print!("{out}");
    }
    Ok(())
}
