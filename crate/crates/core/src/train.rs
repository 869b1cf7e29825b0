//! Stratified mini-batch training of the full objective.

use std::collections::BTreeMap;

use rand::seq::index;
use s2align_autodiff::{value_and_grad, AdamState, AdamW, ParamVars, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::alignment::{enhance_text, per_sample_losses, recon_loss, reconstruct_structure, weighted_align_loss};
use crate::config::RunConfig;
use crate::encoders::{graph_forward, sample_inputs, text_forward, SampleInputs};
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::scrb::{
    clamp_log_vars, consistency_score, density_loss, density_ratio, domain_risks, reliability,
    risk_balance_loss, sample_weights, structural_stability, text_coverage, total_loss,
    ObjectiveConfig, ScrbDiagnostics, ScrbState,
};
use crate::seed;
use crate::tag::{make_sample, ppr_distribution, sparsify_text, DomainId, SparseTag};

/// Objective variants for the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// `α = 0` and the structural gate forced shut.
    NoRec,
    /// `μ = 0` and uniform sample weights.
    NoScrb,
    NoRecNoScrb,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoRec, Variant::NoScrb, Variant::NoRecNoScrb];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRec => "no_rec",
            Variant::NoScrb => "no_scrb",
            Variant::NoRecNoScrb => "no_rec_no_scrb",
        }
    }

    pub fn uses_rec(self) -> bool {
        matches!(self, Variant::Full | Variant::NoScrb)
    }

    pub fn uses_scrb(self) -> bool {
        matches!(self, Variant::Full | Variant::NoRec)
    }

    pub fn objective(self, base: &ObjectiveConfig) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha: if self.uses_rec() { base.alpha } else { 0.0 },
            mu: if self.uses_scrb() { base.mu } else { 0.0 },
            nu: base.nu,
        }
    }
}

/// A training sample with its encoder inputs and graph-only reliability terms.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub domain: DomainId,
    pub inputs: SampleInputs,
    pub stability: f64,
    pub coverage: f64,
}

pub fn prepare_sample(tag: &SparseTag, node: usize, cfg: &RunConfig) -> Result<PreparedSample> {
    let sample_seed = seed::derive(cfg.seed, "subgraph", (tag.domain_id() as u64) << 32 | node as u64);
    let sample = make_sample(tag, node, &cfg.sampler, cfg.max_summary_tokens, sample_seed);
    let p = ppr_distribution(&sample.subgraph, cfg.scrb.ppr_restart, cfg.scrb.ppr_tol);
    Ok(PreparedSample {
        domain: tag.domain_id(),
        inputs: sample_inputs(tag, &sample, cfg.encoder.hash_dim),
        stability: structural_stability(&p, sample.subgraph.len())?,
        coverage: text_coverage(&sample.subgraph, tag),
    })
}

/// Source domains sparsified to `keep_fraction`.
pub fn sparsify_sources(sources: &[SparseTag], cfg: &RunConfig) -> Result<Vec<SparseTag>> {
    let s = seed::derive(cfg.seed, "sparsify", 0);
    sources
        .iter()
        .map(|t| sparsify_text(t, cfg.keep_fraction, s))
        .collect()
}

/// One prepared sample per node, grouped by domain.
pub struct TrainingSet {
    pub domains: Vec<DomainId>,
    pub samples: Vec<Vec<PreparedSample>>,
}

impl TrainingSet {
    /// Build from already-sparsified source domains.
    pub fn build(sources: &[SparseTag], cfg: &RunConfig) -> Result<Self> {
        if sources.is_empty() {
            return Err(CoreError::Config("training needs at least one source domain".into()));
        }
        let mut by_domain: BTreeMap<DomainId, &SparseTag> = BTreeMap::new();
        for tag in sources {
            if tag.is_text_free() {
                return Err(CoreError::Validation(format!(
                    "source `{}` has no text and cannot be used for training",
                    tag.name()
                )));
            }
            if tag.num_nodes() == 0 {
                return Err(CoreError::Validation(format!("source `{}` is empty", tag.name())));
            }
            if by_domain.insert(tag.domain_id(), tag).is_some() {
                return Err(CoreError::Validation(format!(
                    "domain id {} appears twice among sources",
                    tag.domain_id()
                )));
            }
        }
        let mut domains = Vec::new();
        let mut samples = Vec::new();
        for (e, tag) in by_domain {
            domains.push(e);
            samples.push(
                (0..tag.num_nodes())
                    .map(|v| prepare_sample(tag, v, cfg))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { domains, samples })
    }

    /// Equal draws per domain without replacement.
    pub fn stratified_batch(&self, batch_size: usize, seed: u64, step: usize) -> Result<Vec<&PreparedSample>> {
        let k = self.domains.len();
        let per = batch_size / k;
        if per < 2 {
            return Err(CoreError::Config(format!(
                "batch size {batch_size} gives fewer than 2 samples for each of {k} domains"
            )));
        }
        let mut rng = seed::rng_for(seed, "batch", step as u64);
        let mut batch = Vec::with_capacity(per * k);
        for pool in &self.samples {
            let take = per.min(pool.len());
            let mut idx = index::sample(&mut rng, pool.len(), take).into_vec();
            idx.sort_unstable();
            batch.extend(idx.into_iter().map(|i| &pool[i]));
        }
        Ok(batch)
    }
}

/// Every component of the objective for one batch, on one tape.
pub struct BatchObjective<'t> {
    pub total: Var<'t>,
    pub align: Var<'t>,
    pub rec: Var<'t>,
    pub risk: Var<'t>,
    pub den: Var<'t>,
    /// Per-sample enhanced contrastive losses `[B]`.
    pub losses: Var<'t>,
    pub state: ScrbState,
}

pub fn batch_objective<'t>(
    tape: &'t Tape,
    vars: &ParamVars<'t>,
    batch: &[&PreparedSample],
    cfg: &RunConfig,
    variant: Variant,
) -> Result<BatchObjective<'t>> {
    let b = batch.len();
    let domains: Vec<DomainId> = batch.iter().map(|s| s.domain).collect();
    let mut zgc = Vec::with_capacity(b);
    let mut zgs = Vec::with_capacity(b);
    let mut ztc = Vec::with_capacity(b);
    let mut recon = Vec::with_capacity(b);
    for s in batch {
        let (gc, gs) = graph_forward(tape, vars, cfg.encoder.mp_layers, &s.inputs)?;
        let (tc, ts) = text_forward(tape, vars, &s.inputs.semantic, &s.inputs.structure)?;
        zgc.push(gc);
        zgs.push(gs);
        ztc.push(tc);
        recon.push(reconstruct_structure(vars, ts)?);
    }
    let rec = recon_loss(&recon, &zgs)?;
    let enhanced = (0..b)
        .map(|i| enhance_text(ztc[i], recon[i], zgs[i].detach()?, variant.uses_rec()))
        .collect::<Result<Vec<_>>>()?;
    let losses = per_sample_losses(&zgc, &enhanced, cfg.train.tau)?;
    let dens = density_loss(vars, &zgs, &domains)?;

    let mut state = ScrbState {
        domain: domains.clone(),
        d: Vec::with_capacity(b),
        a: Vec::with_capacity(b),
        c: Vec::with_capacity(b),
        rho: Vec::with_capacity(b),
        r: Vec::with_capacity(b),
        omega: Vec::new(),
        fallback_domains: Vec::new(),
        risks: BTreeMap::new(),
    };
    for (i, s) in batch.iter().enumerate() {
        let lp0 = dens.log_global[i].detach()?.item();
        let lpe = dens.log_domain[i].detach()?.item();
        let c = consistency_score(&zgc[i].detach()?.value().into_data(), &ztc[i].detach()?.value().into_data())?;
        state.d.push(s.stability);
        state.a.push(s.coverage);
        state.c.push(c);
        state.rho.push(reliability(s.stability, s.coverage, c, &cfg.scrb));
        state.r.push(density_ratio(lp0, lpe, cfg.scrb.gamma, cfg.scrb.epsilon));
    }
    if variant.uses_scrb() {
        let r_rho: Vec<f64> = state.r.iter().zip(&state.rho).map(|(r, p)| r * p).collect();
        let w = sample_weights(&r_rho, &domains);
        state.omega = w.weights;
        state.fallback_domains = w.fallback_domains;
    } else {
        state.omega = vec![1.0; b];
    }

    let align = weighted_align_loss(losses, &state.omega)?;
    let risks = domain_risks(losses, &state.omega, &domains)?;
    for (e, r) in risks.domains.iter().zip(&risks.risks) {
        state.risks.insert(*e, r.item());
    }
    let risk = risk_balance_loss(&risks.risks)?;
    let objective = variant.objective(&cfg.objective);
    let total = total_loss(align, rec, risk, dens.loss, &objective)?;
    Ok(BatchObjective {
        total,
        align,
        rec,
        risk,
        den: dens.loss,
        losses,
        state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(rename = "L_align")]
    pub align: f64,
    #[serde(rename = "L_rec")]
    pub rec: f64,
    #[serde(rename = "L_risk")]
    pub risk: f64,
    #[serde(rename = "L_den")]
    pub den: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    /// Components as they enter the total: `α L_rec`, `μ L_risk`, `ν L_den`.
    pub weighted: BTreeMap<String, f64>,
    pub scrb: ScrbDiagnostics,
}

fn finite(value: f64, component: &'static str, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CoreError::NonFiniteLoss { component, step })
    }
}

/// Run `cfg.train.steps` AdamW steps on `model`, reporting each step.
pub fn train(
    model: &mut Model,
    set: &TrainingSet,
    variant: Variant,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    let cfg = model.config.clone();
    for e in &set.domains {
        if !model.domains.contains(e) {
            return Err(CoreError::UnknownDomain(*e));
        }
    }
    let opt = AdamW {
        lr: cfg.train.lr,
        weight_decay: cfg.train.weight_decay,
        beta1: cfg.train.beta1,
        beta2: cfg.train.beta2,
        eps: cfg.train.adam_eps,
    };
    let objective = variant.objective(&cfg.objective);
    let batch_seed = seed::derive(cfg.seed, "train", 0);
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(cfg.train.steps);
    for step in 0..cfg.train.steps {
        let batch = set.stratified_batch(cfg.train.batch_size, batch_seed, step)?;
        let mut record = None;
        let (_, grads) = value_and_grad::<_, CoreError>(&model.params, |tape, vars| {
            let obj = batch_objective(tape, vars, &batch, &cfg, variant)?;
            let parts = (
                finite(obj.align.item(), "align", step)?,
                finite(obj.rec.item(), "rec", step)?,
                finite(obj.risk.item(), "risk", step)?,
                finite(obj.den.item(), "den", step)?,
                finite(obj.total.item(), "total", step)?,
            );
            record = Some((parts, obj.state));
            Ok(obj.total)
        })?;
        if !grads.global_norm().is_finite() {
            return Err(CoreError::NonFiniteLoss {
                component: "gradient",
                step,
            });
        }
        let ((align, rec, risk, den, total), state) = record.expect("objective evaluated");
        opt.step(&mut model.params, &grads, &mut adam);
        clamp_log_vars(&mut model.params);
        model.steps_trained += 1;

        let weighted = BTreeMap::from([
            ("rec".to_owned(), objective.alpha * rec),
            ("risk".to_owned(), objective.mu * risk),
            ("den".to_owned(), objective.nu * den),
        ]);
        let log = StepLog {
            step,
            align,
            rec,
            risk,
            den,
            total,
            weighted,
            scrb: state.diagnostics(step, risk, den),
        };
        on_step(&log);
        history.push(log);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_objectives() {
        let base = ObjectiveConfig::default();
        assert_eq!(Variant::Full.objective(&base), base);
        let nr = Variant::NoRec.objective(&base);
        assert_eq!((nr.alpha, nr.mu, nr.nu), (0.0, 1.0, 0.5));
        let ns = Variant::NoScrb.objective(&base);
        assert_eq!((ns.alpha, ns.mu, ns.nu), (1.0, 0.0, 0.5));
        let both = Variant::NoRecNoScrb.objective(&base);
        assert_eq!((both.alpha, both.mu), (0.0, 0.0));
    }
}
