//! Sparse-aware cross-domain risk balancing: density models and their
//! ratio, per-sample reliability, intra-domain weights, per-domain risks
//! and the risk-dispersion penalty.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use s2align_autodiff::{stack, ParamVars, Params, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::alignment::consistency_gate;
use crate::error::{CoreError, Result};
use crate::tag::{DomainId, SparseTag, Subgraph};

pub const LOG_VAR_BOUND: f64 = 10.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrbConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub lambda_d: f64,
    pub lambda_a: f64,
    pub lambda_c: f64,
    pub ppr_restart: f64,
    pub ppr_tol: f64,
}

impl Default for ScrbConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            epsilon: 1e-8,
            lambda_d: 0.5,
            lambda_a: 0.5,
            lambda_c: 0.5,
            ppr_restart: 0.15,
            ppr_tol: 1e-8,
        }
    }
}

impl ScrbConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.into()));
        if !(self.gamma >= 0.0) {
            return bad("scrb.gamma must be non-negative");
        }
        if !(self.epsilon > 0.0) {
            return bad("scrb.epsilon must be positive");
        }
        if [self.lambda_d, self.lambda_a, self.lambda_c]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return bad("scrb lambdas must be non-negative");
        }
        if !(self.ppr_restart > 0.0 && self.ppr_restart < 1.0) {
            return bad("scrb.ppr_restart must be in (0, 1)");
        }
        if !(self.ppr_tol > 0.0) {
            return bad("scrb.ppr_tol must be positive");
        }
        Ok(())
    }
}

/// Weights of the overall objective `align + α rec + μ risk + ν den`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub mu: f64,
    pub nu: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mu: 1.0,
            nu: 0.5,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.mu, self.nu].iter().any(|w| !(*w >= 0.0)) {
            return Err(CoreError::Config("objective weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over a structural key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DensityModel {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn from_params(params: &Params, prefix: &str) -> Result<Self> {
        Ok(Self {
            mean: params.require(&format!("{prefix}.mean"))?.data().to_vec(),
            log_var: params.require(&format!("{prefix}.log_var"))?.data().to_vec(),
        })
    }
}

pub fn global_prefix() -> &'static str {
    "density.global"
}

pub fn domain_prefix(e: DomainId) -> String {
    format!("density.domain{e}")
}

/// Register a standard-normal global model and one per domain.
pub fn init_density_params(params: &mut Params, domains: &[DomainId], dim: usize) -> Result<()> {
    let prefixes =
        std::iter::once(global_prefix().to_owned()).chain(domains.iter().map(|&e| domain_prefix(e)));
    for prefix in prefixes {
        params.insert(format!("{prefix}.mean"), Tensor::zeros(&[dim]))?;
        params.insert(format!("{prefix}.log_var"), Tensor::zeros(&[dim]))?;
    }
    Ok(())
}

/// Keep every `density.*.log_var` inside `[-10, 10]`.
pub fn clamp_log_vars(params: &mut Params) {
    for (name, t) in params.iter_mut() {
        if name.starts_with("density.") && name.ends_with(".log_var") {
            for x in t.data_mut() {
                *x = x.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND);
            }
        }
    }
}

/// `-½ Σ_k [(z_k - μ_k)² / σ_k² + log σ_k² + log 2π]`.
pub fn log_density(model: &DensityModel, z: &[f64]) -> Result<f64> {
    if model.mean.len() != z.len() || model.log_var.len() != z.len() {
        return Err(CoreError::Autodiff(s2align_autodiff::AutodiffError::Shape {
            op: "log_density",
            lhs: vec![model.mean.len()],
            rhs: vec![z.len()],
        }));
    }
    let s: f64 = z
        .iter()
        .zip(&model.mean)
        .zip(&model.log_var)
        .map(|((z, m), lv)| (z - m).powi(2) * (-lv).exp() + lv + LN_2PI)
        .sum();
    Ok(-0.5 * s)
}

/// Tape form of [`log_density`] for the model stored under `prefix`.
pub fn log_density_var<'t>(vars: &ParamVars<'t>, prefix: &str, z: Var<'t>) -> Result<Var<'t>> {
    let mean = vars.get(&format!("{prefix}.mean"))?;
    let log_var = vars.get(&format!("{prefix}.log_var"))?;
    let diff = z.sub(mean)?;
    let quad = diff.mul(diff)?.mul(log_var.neg().exp())?.sum();
    let dim = z.len() as f64;
    Ok(quad.add(log_var.sum())?.add_scalar(dim * LN_2PI).scale(-0.5))
}

/// Per-sample `(log p_0(z_i), log p_e(i)(z_i))` on detached keys.
pub struct DensityTerms<'t> {
    pub loss: Var<'t>,
    pub log_global: Vec<Var<'t>>,
    pub log_domain: Vec<Var<'t>>,
}

/// `L_den = -mean_i [log p_0(z_i) + log p_e(i)(z_i)]` with `z_i` detached.
pub fn density_loss<'t>(
    vars: &ParamVars<'t>,
    keys: &[Var<'t>],
    domains: &[DomainId],
) -> Result<DensityTerms<'t>> {
    if keys.is_empty() || keys.len() != domains.len() {
        return Err(CoreError::BatchTooSmall(keys.len()));
    }
    let mut log_global = Vec::with_capacity(keys.len());
    let mut log_domain = Vec::with_capacity(keys.len());
    let mut terms = Vec::with_capacity(keys.len());
    for (&z, &e) in keys.iter().zip(domains) {
        let prefix = domain_prefix(e);
        if vars.get(&format!("{prefix}.mean")).is_err() {
            return Err(CoreError::UnknownDomain(e));
        }
        let key = z.detach()?;
        let g = log_density_var(vars, global_prefix(), key)?;
        let d = log_density_var(vars, &prefix, key)?;
        terms.push(g.add(d)?);
        log_global.push(g);
        log_domain.push(d);
    }
    Ok(DensityTerms {
        loss: stack(&terms)?.mean().neg(),
        log_global,
        log_domain,
    })
}

/// `log(exp(a) + exp(b))` without overflow.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `r = (p_0 / (p_e + ε))^γ`, evaluated in log space from log densities.
pub fn density_ratio(log_p0: f64, log_pe: f64, gamma: f64, epsilon: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    let log_r = gamma * (log_p0 - log_add_exp(log_pe, epsilon.ln()));
    log_r.clamp(-700.0, 700.0).exp()
}

/// `d = exp(Σ_j p_j ln p_j / ln N)`, with `0 ln 0 = 0` and `d = 1` for `N <= 1`.
pub fn structural_stability(p: &[f64], n: usize) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 || p.iter().any(|x| *x < 0.0) {
        return Err(CoreError::NotADistribution(total));
    }
    if n <= 1 {
        return Ok(1.0);
    }
    let neg_entropy: f64 = p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum();
    Ok((neg_entropy / (n as f64).ln()).exp().min(1.0))
}

/// Fraction of subgraph nodes with observed text.
pub fn text_coverage(sg: &Subgraph, tag: &SparseTag) -> f64 {
    let texted = sg
        .node_ids
        .iter()
        .filter(|&&id| tag.node(id).has_text())
        .count();
    texted as f64 / sg.len().max(1) as f64
}

/// `c = (1 + cos(z_g^c, z_t^c)) / 2`.
pub fn consistency_score(z_g_c: &[f64], z_t_c: &[f64]) -> Result<f64> {
    consistency_gate(z_g_c, z_t_c)
}

/// `ρ = clip(λ_d d + λ_a a + λ_c c, 0, 1)`.
pub fn reliability(d: f64, a: f64, c: f64, cfg: &ScrbConfig) -> f64 {
    (cfg.lambda_d * d + cfg.lambda_a * a + cfg.lambda_c * c).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights {
    pub weights: Vec<f64>,
    /// Domains whose `Σ r ρ` was zero and fell back to uniform weights.
    pub fallback_domains: Vec<DomainId>,
}

/// `ω_i = |T_e| r_i ρ_i / Σ_{j ∈ T_e} r_j ρ_j` within each domain.
pub fn sample_weights(r_rho: &[f64], domains: &[DomainId]) -> SampleWeights {
    let mut groups: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
    for (i, &e) in domains.iter().enumerate() {
        groups.entry(e).or_default().push(i);
    }
    let mut weights = vec![1.0; r_rho.len()];
    let mut fallback_domains = Vec::new();
    for (e, idx) in groups {
        let total: f64 = idx.iter().map(|&i| r_rho[i]).sum();
        if !(total > 0.0 && total.is_finite()) {
            fallback_domains.push(e);
            continue;
        }
        let count = idx.len() as f64;
        for &i in &idx {
            weights[i] = count * r_rho[i] / total;
        }
    }
    SampleWeights {
        weights,
        fallback_domains,
    }
}

/// Weighted per-domain risks `R_e` in ascending domain order and their mean.
pub struct DomainRisks<'t> {
    pub domains: Vec<DomainId>,
    pub risks: Vec<Var<'t>>,
    pub mean: Var<'t>,
}

/// `R_e = Σ_{i∈T_e} ω_i ℓ_i / Σ_{i∈T_e} ω_i`; `R̄` averages over domains present.
pub fn domain_risks<'t>(losses: Var<'t>, weights: &[f64], domains: &[DomainId]) -> Result<DomainRisks<'t>> {
    if losses.len() != weights.len() || weights.len() != domains.len() || weights.is_empty() {
        return Err(CoreError::Validation(format!(
            "{} losses, {} weights, {} domain ids",
            losses.len(),
            weights.len(),
            domains.len()
        )));
    }
    let present: Vec<DomainId> = {
        let mut d = domains.to_vec();
        d.sort_unstable();
        d.dedup();
        d
    };
    let tape = losses.tape();
    let mut risks = Vec::with_capacity(present.len());
    for &e in &present {
        let mask: Vec<f64> = weights
            .iter()
            .zip(domains)
            .map(|(&w, &d)| if d == e { w } else { 0.0 })
            .collect();
        let total = crate::alignment::check_weights(&mask)?;
        let masked = losses.dot(tape.constant(Tensor::vector(mask)))?;
        risks.push(masked.scale(1.0 / total));
    }
    let mean = stack(&risks)?.mean();
    Ok(DomainRisks {
        domains: present,
        risks,
        mean,
    })
}

/// `L_risk = mean_e (R_e - R̄)²`.
pub fn risk_balance_loss<'t>(risks: &[Var<'t>]) -> Result<Var<'t>> {
    let r = stack(risks)?;
    let centered = r.sub(r.mean())?;
    Ok(centered.mul(centered)?.mean())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub align: f64,
    pub rec: f64,
    pub risk: f64,
    pub den: f64,
}

/// `L_total = align + α rec + μ risk + ν den`.
pub fn total_loss<'t>(
    align: Var<'t>,
    rec: Var<'t>,
    risk: Var<'t>,
    den: Var<'t>,
    obj: &ObjectiveConfig,
) -> Result<Var<'t>> {
    Ok(align
        .add(rec.scale(obj.alpha))?
        .add(risk.scale(obj.mu))?
        .add(den.scale(obj.nu))?)
}

pub fn total_loss_value(parts: LossParts, obj: &ObjectiveConfig) -> f64 {
    parts.align + obj.alpha * parts.rec + obj.mu * parts.risk + obj.nu * parts.den
}

/// Per-sample weighting quantities for one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrbState {
    pub domain: Vec<DomainId>,
    pub d: Vec<f64>,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub rho: Vec<f64>,
    pub r: Vec<f64>,
    pub omega: Vec<f64>,
    pub fallback_domains: Vec<DomainId>,
    pub risks: BTreeMap<DomainId, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDiagnostics {
    pub count: usize,
    pub mean_r: f64,
    pub mean_rho: f64,
    pub mean_omega: f64,
    #[serde(rename = "R_e")]
    pub risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrbDiagnostics {
    pub step: usize,
    pub per_domain: BTreeMap<DomainId, DomainDiagnostics>,
    #[serde(rename = "L_risk")]
    pub l_risk: f64,
    #[serde(rename = "L_den")]
    pub l_den: f64,
    pub fallback_domains: Vec<DomainId>,
}

impl ScrbState {
    pub fn diagnostics(&self, step: usize, l_risk: f64, l_den: f64) -> ScrbDiagnostics {
        let mut per_domain = BTreeMap::new();
        for (&e, &risk) in &self.risks {
            let idx: Vec<usize> = (0..self.domain.len()).filter(|&i| self.domain[i] == e).collect();
            let mean = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
            per_domain.insert(
                e,
                DomainDiagnostics {
                    count: idx.len(),
                    mean_r: mean(&self.r),
                    mean_rho: mean(&self.rho),
                    mean_omega: mean(&self.omega),
                    risk,
                },
            );
        }
        ScrbDiagnostics {
            step,
            per_domain,
            l_risk,
            l_den,
            fallback_domains: self.fallback_domains.clone(),
        }
    }
}

/// Closed-form log-density of a standard normal at its mean, for `dim` axes.
pub fn standard_peak_log_density(dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use s2align_autodiff::Tape;

    #[test]
    fn log_density_at_mean() {
        let m = DensityModel::standard(2);
        let lp = log_density(&m, &[0.0, 0.0]).unwrap();
        assert!((lp - (-1.83788)).abs() < 1e-5);
        assert!((lp - standard_peak_log_density(2)).abs() < 1e-15);
    }

    #[test]
    fn log_density_translation_and_monotonicity() {
        let m = DensityModel {
            mean: vec![0.5, -1.0],
            log_var: vec![0.3, -0.2],
        };
        let shifted = DensityModel {
            mean: vec![2.5, 0.0],
            log_var: m.log_var.clone(),
        };
        let a = log_density(&m, &[1.0, 1.0]).unwrap();
        let b = log_density(&shifted, &[3.0, 2.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        let c = log_density(&m, &[1.5, 1.0]).unwrap();
        assert!(c < a);
    }

    #[test]
    fn tape_density_matches_plain() {
        let mut params = Params::new();
        params.insert("density.global.mean", Tensor::vector(vec![0.2, -0.4, 1.0])).unwrap();
        params.insert("density.global.log_var", Tensor::vector(vec![0.1, 0.5, -0.3])).unwrap();
        let tape = Tape::new();
        let vars = ParamVars::register(&tape, &params);
        let z = [0.7, 0.1, -0.2];
        let lp = log_density_var(&vars, "density.global", tape.constant(Tensor::vector(z.to_vec())))
            .unwrap()
            .item();
        let m = DensityModel::from_params(&params, "density.global").unwrap();
        assert!((lp - log_density(&m, &z).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn density_loss_at_means() {
        let mut params = Params::new();
        init_density_params(&mut params, &[1, 2], 2).unwrap();
        let tape = Tape::new();
        let vars = ParamVars::register(&tape, &params);
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let terms = density_loss(&vars, &[z, z], &[1, 2]).unwrap();
        assert!((terms.loss.item() - 3.67576).abs() < 1e-5);
        assert!(matches!(
            density_loss(&vars, &[z], &[7]),
            Err(CoreError::UnknownDomain(7))
        ));
    }

    #[test]
    fn ratio_landmarks() {
        assert_eq!(density_ratio(-3.0, 5.0, 0.0, 1e-8), 1.0);
        assert!((density_ratio(-2.0, -2.0, 0.5, 1e-300) - 1.0).abs() < 1e-12);
        let r = density_ratio(2f64.ln() - 1.0, -1.0, 0.5, 1e-12);
        assert!((r - 2f64.sqrt()).abs() < 1e-9);
        assert!(density_ratio(-1e6, 1e6, 0.5, 1e-8) > 0.0);
    }

    #[test]
    fn stability_landmarks() {
        assert_eq!(structural_stability(&[1.0, 0.0, 0.0], 3).unwrap(), 1.0);
        for n in [2, 5, 17] {
            let p = vec![1.0 / n as f64; n];
            let d = structural_stability(&p, n).unwrap();
            assert!((d - (-1f64).exp()).abs() < 1e-12);
        }
        assert_eq!(structural_stability(&[1.0], 1).unwrap(), 1.0);
        let p0 = 0.15 / (1.0 - 0.85 * 0.85);
        let d = structural_stability(&[p0, 1.0 - p0], 2).unwrap();
        assert!((d - 0.369_630_08).abs() < 1e-8);
        assert!(matches!(
            structural_stability(&[0.5, 0.2], 2),
            Err(CoreError::NotADistribution(_))
        ));
    }

    #[test]
    fn reliability_by_hand() {
        let cfg = ScrbConfig::default();
        assert_eq!(reliability(1.0, 1.0, 1.0, &cfg), 1.0);
        assert_eq!(reliability(0.0, 0.0, 0.0, &cfg), 0.0);
        assert!((reliability(0.4, 0.2, 0.6, &cfg) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn weights_by_hand() {
        let w = sample_weights(&[3.0, 1.0, 2.0, 2.0], &[1, 1, 2, 2]);
        assert_eq!(w.weights, vec![1.5, 0.5, 1.0, 1.0]);
        assert!(w.fallback_domains.is_empty());
        let w = sample_weights(&[0.0, 0.0, 5.0], &[4, 4, 2]);
        assert_eq!(w.weights, vec![1.0, 1.0, 1.0]);
        assert_eq!(w.fallback_domains, vec![4]);
    }

    #[test]
    fn risks_by_hand() {
        let tape = Tape::new();
        let losses = tape.constant(Tensor::vector(vec![1.0, 1.0, 3.0, 3.0]));
        let r = domain_risks(losses, &[1.0; 4], &[2, 2, 1, 1]).unwrap();
        assert_eq!(r.domains, vec![1, 2]);
        assert_eq!(r.risks[0].item(), 3.0);
        assert_eq!(r.mean.item(), 2.0);
        assert_eq!(risk_balance_loss(&r.risks).unwrap().item(), 1.0);
        let single = domain_risks(losses, &[1.0; 4], &[1; 4]).unwrap();
        assert_eq!(risk_balance_loss(&single.risks).unwrap().item(), 0.0);
    }

    #[test]
    fn total_by_hand() {
        let obj = ObjectiveConfig::default();
        assert_eq!((obj.alpha, obj.mu, obj.nu), (1.0, 1.0, 0.5));
        let parts = LossParts {
            align: 0.5,
            rec: 0.2,
            risk: 0.1,
            den: 2.0,
        };
        assert!((total_loss_value(parts, &obj) - 1.8).abs() < 1e-15);
        let zero = ObjectiveConfig {
            alpha: 0.0,
            mu: 0.0,
            nu: 0.0,
        };
        assert_eq!(total_loss_value(parts, &zero), 0.5);
    }
}
