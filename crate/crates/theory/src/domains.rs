//! Analytically specified source domains for the linear regression setting.
//!
//! Each domain draws an invariant component `Z ~ N(mean, diag(var))`, a label
//! `Y = w*ᵀZ + noise` and a domain-private component `V = β Y + η`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use s2align_core::seed;

use crate::{Result, TheoryError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomain {
    pub z_mean: Vec<f64>,
    pub z_var: Vec<f64>,
    pub w_star: Vec<f64>,
    pub label_noise_std: f64,
    /// Loading of the spurious component on the label, one per coordinate.
    pub spu_beta: Vec<f64>,
    pub spu_noise_std: f64,
    pub pi: f64,
}

/// One draw `(z, v, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub y: f64,
}

impl SyntheticDomain {
    pub fn d_inv(&self) -> usize {
        self.z_mean.len()
    }

    pub fn d_spu(&self) -> usize {
        self.spu_beta.len()
    }

    /// `ln p_e(z)` of the invariant marginal.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        z.iter()
            .zip(&self.z_mean)
            .zip(&self.z_var)
            .map(|((z, m), v)| -0.5 * (ln2pi + v.ln() + (z - m) * (z - m) / v))
            .sum()
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Draw {
        let z: Vec<f64> = self
            .z_mean
            .iter()
            .zip(&self.z_var)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise: f64 = rng.sample(StandardNormal);
        let y = dot(&self.w_star, &z) + self.label_noise_std * noise;
        let v = self
            .spu_beta
            .iter()
            .map(|b| b * y + self.spu_noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Draw { z, v, y }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `K` domains with shifted means and growing variances of `Z`, a shared
/// label law and spurious loadings that change sign across domains.
pub fn build_synthetic_domains(k: usize, d_inv: usize, d_spu: usize, seed_value: u64) -> Result<Vec<SyntheticDomain>> {
    if k < 2 {
        return Err(TheoryError::InvalidInput(format!("need at least 2 domains, got {k}")));
    }
    if d_inv == 0 {
        return Err(TheoryError::InvalidInput("d_inv must be positive".into()));
    }
    let mut rng = seed::rng_for(seed_value, "theory-domains", 0);
    let unit = |rng: &mut _| {
        let v: Vec<f64> = (0..d_inv).map(|_| Rng::sample::<f64, _>(rng, StandardNormal)).collect();
        let n = dot(&v, &v).sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let w_star = unit(&mut rng);
    let shift = unit(&mut rng);
    let domains = (0..k)
        .map(|e| {
            let t = e as f64 / (k - 1) as f64;
            let spu_beta = (0..d_spu)
                .map(|j| (1.0 - 1.5 * t) * (1.0 + 0.5 * j as f64) + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SyntheticDomain {
                z_mean: shift.iter().map(|s| 0.5 * e as f64 * s).collect(),
                z_var: vec![1.0 + 0.25 * e as f64; d_inv],
                w_star: w_star.clone(),
                label_noise_std: 0.5,
                spu_beta,
                spu_noise_std: 0.5,
                pi: 1.0 / k as f64,
            }
        })
        .collect();
    Ok(domains)
}

/// Give every domain the invariant law of the first one.
pub fn make_identical(domains: &mut [SyntheticDomain]) {
    let (mean, var) = (domains[0].z_mean.clone(), domains[0].z_var.clone());
    for d in domains {
        d.z_mean = mean.clone();
        d.z_var = var.clone();
    }
}

/// Make the label law domain-dependent: `w*_e = (1 + 0.5 e) w*`.
pub fn violate_label_invariance(domains: &mut [SyntheticDomain]) {
    for (e, d) in domains.iter_mut().enumerate() {
        for w in &mut d.w_star {
            *w *= 1.0 + 0.5 * e as f64;
        }
    }
}

/// Remove any dependence of the spurious component on the label.
pub fn decouple_spurious(domains: &mut [SyntheticDomain]) {
    for d in domains {
        d.spu_beta.iter_mut().for_each(|b| *b = 0.0);
    }
}

/// `ln r_e(z) = ln p_0(z) - ln p_e(z)` with `p_0 = Σ π_j p_j`.
pub fn log_density_ratio(domains: &[SyntheticDomain], e: usize, z: &[f64]) -> f64 {
    let terms: Vec<f64> = domains.iter().map(|d| d.pi.ln() + d.log_density(z)).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lp0 = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    lp0 - domains[e].log_density(z)
}

pub fn exact_density_ratio(domains: &[SyntheticDomain], e: usize, z: &[f64]) -> f64 {
    log_density_ratio(domains, e, z).exp()
}
