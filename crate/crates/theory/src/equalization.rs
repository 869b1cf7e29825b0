//! Monte Carlo estimates of reliability- and density-ratio-weighted risks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use s2align_core::seed;

use crate::domains::{dot, log_density_ratio, SyntheticDomain};

const CHUNK: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `E_{p_e}[r_e(Z) ρ(Z) (f(Z) - Y)²]` over `n` draws, or the plain
/// `ρ`-weighted risk when `weighted` is false.
pub fn weighted_risk_mc<F, R>(
    domains: &[SyntheticDomain],
    e: usize,
    predictor: F,
    rho: R,
    n: usize,
    seed_value: u64,
    weighted: bool,
) -> RiskEstimate
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Fn(&[f64]) -> f64 + Sync,
{
    if n == 0 {
        return RiskEstimate { mean: 0.0, std_error: 0.0 };
    }
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::rng_for(seed_value, "theory-mc", (e as u64) << 32 | c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let draw = domains[e].draw(&mut rng);
                let r = if weighted { log_density_ratio(domains, e, &draw.z).exp() } else { 1.0 };
                let err = predictor(&draw.z) - draw.y;
                let x = r * rho(&draw.z) * err * err;
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let nf = n as f64;
    let mean = s / nf;
    let var = if n > 1 { ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    RiskEstimate {
        mean,
        std_error: (var / nf).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualizationReport {
    pub risks: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub gap: f64,
    pub unweighted_risks: Vec<f64>,
    pub unweighted_gap: f64,
    pub n_samples: usize,
    pub tol_rel: f64,
    /// Weighted risks agree within `tol_rel`.
    pub pass: bool,
    /// Unweighted risks differ by more than `tol_rel`.
    pub unweighted_differ: bool,
}

/// Largest pairwise difference relative to the mean.
pub fn relative_gap(risks: &[f64]) -> f64 {
    let max = risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = risks.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = risks.iter().sum::<f64>() / risks.len() as f64;
    (max - min) / mean.abs().max(1e-8)
}

pub fn verify_equalization<F, R>(
    domains: &[SyntheticDomain],
    predictor: F,
    rho: R,
    n: usize,
    tol_rel: f64,
    seed_value: u64,
) -> EqualizationReport
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Fn(&[f64]) -> f64 + Sync,
{
    let weighted: Vec<RiskEstimate> = (0..domains.len())
        .map(|e| weighted_risk_mc(domains, e, &predictor, &rho, n, seed_value, true))
        .collect();
    let plain: Vec<f64> = (0..domains.len())
        .map(|e| weighted_risk_mc(domains, e, &predictor, &rho, n, seed_value, false).mean)
        .collect();
    let risks: Vec<f64> = weighted.iter().map(|r| r.mean).collect();
    let gap = relative_gap(&risks);
    let unweighted_gap = relative_gap(&plain);
    EqualizationReport {
        std_errors: weighted.iter().map(|r| r.std_error).collect(),
        risks,
        gap,
        unweighted_risks: plain,
        unweighted_gap,
        n_samples: n,
        tol_rel,
        pass: gap <= tol_rel,
        unweighted_differ: unweighted_gap > tol_rel,
    }
}

/// Reliability used by the built-in check: a logistic function of the
/// first invariant coordinate.
pub fn default_rho(z: &[f64]) -> f64 {
    1.0 / (1.0 + (-z[0]).exp())
}

/// Predictor `f(Z) = ½ w*ᵀZ` built from the first domain's label law.
pub fn default_predictor(domains: &[SyntheticDomain]) -> impl Fn(&[f64]) -> f64 + Sync {
    let w: Vec<f64> = domains[0].w_star.iter().map(|w| 0.5 * w).collect();
    move |z: &[f64]| dot(&w, z)
}
