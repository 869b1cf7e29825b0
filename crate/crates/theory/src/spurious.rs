//! Risk-invariance constrained linear regression versus pooled least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use s2align_core::seed;

use crate::domains::{build_synthetic_domains, log_density_ratio, SyntheticDomain};
use crate::{Result, TheoryError};

pub const PENALTY_SCHEDULE: [f64; 3] = [1e1, 1e2, 1e3];
const MAX_ITERS: usize = 200_000;
const GRAD_TOL: f64 = 1e-6;

/// Sample moments of a quadratic risk `wᵀA w - 2 wᵀb + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticRisk {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticRisk {
    pub fn value(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.a * w)[(0, 0)] - 2.0 * w.dot(&self.b) + self.c
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.a * w - &self.b)
    }
}

/// Density-ratio weighted (or plain) squared-error moments over `[Z, V]`.
pub fn risk_moments(domains: &[SyntheticDomain], e: usize, n: usize, seed_value: u64, weighted: bool) -> QuadraticRisk {
    let d = domains[e].d_inv() + domains[e].d_spu();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    let mut c = 0.0;
    let mut rng = seed::rng_for(seed_value, "theory-moments", e as u64);
    for _ in 0..n {
        let draw = domains[e].draw(&mut rng);
        let r = if weighted { log_density_ratio(domains, e, &draw.z).exp() } else { 1.0 };
        let x = DVector::from_iterator(d, draw.z.iter().chain(&draw.v).cloned());
        a.ger(r, &x, &x, 1.0);
        b.axpy(r * draw.y, &x, 1.0);
        c += r * draw.y * draw.y;
    }
    let nf = n as f64;
    QuadraticRisk { a: a / nf, b: b / nf, c: c / nf }
}

/// Population moments of the density-ratio weighted (or plain) risk of
/// domain `e` in closed form. Weighting by `r_e` replaces the law of `Z` by
/// the mixture `p_0` while keeping the domain's `V | Y` law.
pub fn population_moments(domains: &[SyntheticDomain], e: usize, weighted: bool) -> QuadraticRisk {
    let dom = &domains[e];
    let (d_inv, d_spu) = (dom.d_inv(), dom.d_spu());
    let second_moment = |d: &SyntheticDomain| {
        let mu = DVector::from_column_slice(&d.z_mean);
        DMatrix::from_diagonal(&DVector::from_column_slice(&d.z_var)) + &mu * mu.transpose()
    };
    let m = if weighted {
        domains
            .iter()
            .fold(DMatrix::zeros(d_inv, d_inv), |acc, d| acc + d.pi * second_moment(d))
    } else {
        second_moment(dom)
    };
    let w = DVector::from_column_slice(&dom.w_star);
    let beta = DVector::from_column_slice(&dom.spu_beta);
    let mw = &m * &w;
    let ey2 = w.dot(&mw) + dom.label_noise_std.powi(2);
    let mut a = DMatrix::zeros(d_inv + d_spu, d_inv + d_spu);
    a.view_mut((0, 0), (d_inv, d_inv)).copy_from(&m);
    let zv = &mw * beta.transpose();
    a.view_mut((0, d_inv), (d_inv, d_spu)).copy_from(&zv);
    a.view_mut((d_inv, 0), (d_spu, d_inv)).copy_from(&zv.transpose());
    let vv = &beta * beta.transpose() * ey2
        + DMatrix::identity(d_spu, d_spu) * dom.spu_noise_std.powi(2);
    a.view_mut((d_inv, d_inv), (d_spu, d_spu)).copy_from(&vv);
    let mut b = DVector::zeros(d_inv + d_spu);
    b.rows_mut(0, d_inv).copy_from(&mw);
    b.rows_mut(d_inv, d_spu).copy_from(&(&beta * ey2));
    QuadraticRisk { a, b, c: ey2 }
}

/// `mean_e R_e + λ Σ_{e<e'} (R_e - R_e')²`.
pub fn penalized_objective(risks: &[QuadraticRisk], lambda: f64, w: &DVector<f64>) -> (f64, DVector<f64>) {
    let k = risks.len() as f64;
    let values: Vec<f64> = risks.iter().map(|r| r.value(w)).collect();
    let grads: Vec<DVector<f64>> = risks.iter().map(|r| r.gradient(w)).collect();
    let mut f = values.iter().sum::<f64>() / k;
    let mut g = grads.iter().fold(DVector::zeros(w.len()), |acc, x| acc + x) / k;
    for i in 0..risks.len() {
        for j in i + 1..risks.len() {
            let gap = values[i] - values[j];
            f += lambda * gap * gap;
            g += 2.0 * lambda * gap * (&grads[i] - &grads[j]);
        }
    }
    (f, g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub lambda: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub max_gap: f64,
}

/// Gradient descent with Armijo backtracking, warm-started through the
/// penalty continuation.
pub fn solve_constrained(risks: &[QuadraticRisk], schedule: &[f64]) -> Result<(DVector<f64>, Vec<StageLog>)> {
    let d = risks[0].b.len();
    let mut w = DVector::zeros(d);
    let mut logs = Vec::new();
    for &lambda in schedule {
        let mut step = 1.0;
        let (mut f, mut g) = penalized_objective(risks, lambda, &w);
        let mut iters = 0;
        while g.norm() > GRAD_TOL {
            if iters == MAX_ITERS {
                return Err(TheoryError::NonConvergence { grad_norm: g.norm(), iterations: iters });
            }
            let g2 = g.norm_squared();
            loop {
                let cand = &w - step * &g;
                let (fc, gc) = penalized_objective(risks, lambda, &cand);
                if fc <= f - 1e-4 * step * g2 {
                    w = cand;
                    f = fc;
                    g = gc;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
                if step < 1e-300 {
                    // No further decrease is representable.
                    return Ok(finish(risks, w, lambda, iters, g, logs));
                }
            }
            iters += 1;
        }
        logs.push(stage(risks, &w, lambda, iters, &g));
    }
    Ok((w, logs))
}

fn stage(risks: &[QuadraticRisk], w: &DVector<f64>, lambda: f64, iterations: usize, g: &DVector<f64>) -> StageLog {
    let values: Vec<f64> = risks.iter().map(|r| r.value(w)).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    StageLog {
        lambda,
        iterations,
        grad_norm: g.norm(),
        max_gap: max - min,
    }
}

fn finish(
    risks: &[QuadraticRisk],
    w: DVector<f64>,
    lambda: f64,
    iters: usize,
    g: DVector<f64>,
    mut logs: Vec<StageLog>,
) -> (DVector<f64>, Vec<StageLog>) {
    logs.push(stage(risks, &w, lambda, iters, &g));
    (w, logs)
}

/// Pooled unweighted least squares over all domains.
pub fn pooled_ols(risks: &[QuadraticRisk]) -> Result<DVector<f64>> {
    let a = risks.iter().fold(DMatrix::zeros(risks[0].b.len(), risks[0].b.len()), |acc, r| acc + &r.a);
    let b = risks.iter().fold(DVector::zeros(risks[0].b.len()), |acc, r| acc + &r.b);
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| TheoryError::InvalidInput("pooled design matrix is singular".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousReport {
    pub domains: usize,
    pub d_spu: usize,
    pub sufficient_domains: bool,
    pub w_inv: Vec<f64>,
    pub w_spu: Vec<f64>,
    pub w_spu_norm: f64,
    pub w_inv_error: f64,
    pub w_star_norm: f64,
    pub ols_w_spu: Vec<f64>,
    pub ols_w_spu_norm: f64,
    pub stages: Vec<StageLog>,
    pub pass: bool,
}

/// Constrained and OLS fits on the population risks of the given domains.
pub fn spurious_elimination_on(domains: &[SyntheticDomain]) -> Result<SpuriousReport> {
    let d_inv = domains[0].d_inv();
    let d_spu = domains[0].d_spu();
    let weighted: Vec<QuadraticRisk> = (0..domains.len()).map(|e| population_moments(domains, e, true)).collect();
    let plain: Vec<QuadraticRisk> = (0..domains.len()).map(|e| population_moments(domains, e, false)).collect();
    let (w, stages) = solve_constrained(&weighted, &PENALTY_SCHEDULE)?;
    let ols = pooled_ols(&plain)?;
    let w_star = DVector::from_column_slice(&domains[0].w_star);
    let w_inv = w.rows(0, d_inv).into_owned();
    let w_spu = w.rows(d_inv, d_spu).into_owned();
    let ols_spu = ols.rows(d_inv, d_spu).into_owned();
    let sufficient = domains.len() > d_spu;
    let w_spu_norm = w_spu.norm();
    let ols_w_spu_norm = ols_spu.norm();
    Ok(SpuriousReport {
        domains: domains.len(),
        d_spu,
        sufficient_domains: sufficient,
        w_inv_error: (&w_inv - &w_star).norm(),
        w_star_norm: w_star.norm(),
        w_inv: w_inv.iter().cloned().collect(),
        w_spu: w_spu.iter().cloned().collect(),
        w_spu_norm,
        ols_w_spu: ols_spu.iter().cloned().collect(),
        ols_w_spu_norm,
        stages,
        pass: sufficient && w_spu_norm <= 0.05 * w_star.norm() && ols_w_spu_norm >= 5.0 * w_spu_norm,
    })
}

pub fn verify_spurious_elimination(k: usize, d_inv: usize, d_spu: usize, seed_value: u64) -> Result<SpuriousReport> {
    let domains = build_synthetic_domains(k, d_inv, d_spu, seed_value)?;
    spurious_elimination_on(&domains)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_differences() {
        let d = build_synthetic_domains(3, 2, 1, 0).unwrap();
        let risks: Vec<_> = (0..3).map(|e| risk_moments(&d, e, 500, 1, true)).collect();
        let w = DVector::from_vec(vec![0.3, -0.2, 0.4]);
        let (_, g) = penalized_objective(&risks, 10.0, &w);
        for i in 0..3 {
            let h = 1e-6;
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (penalized_objective(&risks, 10.0, &wp).0 - penalized_objective(&risks, 10.0, &wm).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn sampled_moments_converge_to_closed_form() {
        let d = build_synthetic_domains(3, 2, 2, 5).unwrap();
        for weighted in [true, false] {
            for e in 0..3 {
                let exact = population_moments(&d, e, weighted);
                let mc = risk_moments(&d, e, 200_000, 7, weighted);
                let scale = exact.a.norm();
                assert!((&mc.a - &exact.a).norm() < 0.05 * scale, "{e} {weighted}");
                assert!((&mc.b - &exact.b).norm() < 0.05 * exact.b.norm().max(1.0));
                assert!((mc.c - exact.c).abs() < 0.05 * exact.c);
            }
        }
    }

    #[test]
    fn ols_matches_normal_equations_on_exact_data() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = DVector::from_vec(vec![1.0, -2.0]);
        let r = QuadraticRisk { b: &a * &w, a, c: 0.0 };
        let got = pooled_ols(&[r.clone(), r]).unwrap();
        assert!((got - w).norm() < 1e-12);
    }
}
