//! Structure-oriented reconstruction, consistency-gated structural
//! injection, the enhanced symmetric contrastive loss and its weighted
//! batch reduction.

use s2align_autodiff::{stack, ParamVars, Var};

use crate::error::{CoreError, Result};

/// Pre-normalization norm below which `enhance_text` keeps `z_t^c` as is.
pub const CANCELLATION_FLOOR: f64 = 1e-8;

/// `ẑ_g^s = norm(tanh(W_rec z_t^s + b_rec))`.
pub fn reconstruct_structure<'t>(vars: &ParamVars<'t>, z_t_s: Var<'t>) -> Result<Var<'t>> {
    let w = vars.get("rec.w")?;
    let b = vars.get("rec.b")?;
    Ok(z_t_s.matmul(w)?.add(b)?.tanh().l2_normalize())
}

/// `mean_i [1 - cos(ẑ_i, detach(z_g,i^s))]`. Targets are detached here, so no
/// gradient reaches the graph-side structural branch.
pub fn recon_loss<'t>(recon: &[Var<'t>], graph_structure: &[Var<'t>]) -> Result<Var<'t>> {
    if recon.is_empty() || recon.len() != graph_structure.len() {
        return Err(CoreError::BatchTooSmall(recon.len()));
    }
    let terms = recon
        .iter()
        .zip(graph_structure)
        .map(|(&zhat, &zg)| {
            let target = zg.detach()?;
            Ok(zhat.cosine_similarity(target)?.neg().add_scalar(1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(&terms)?.mean())
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `κ(a, b) = (1 + cos(a, b)) / 2`.
pub fn consistency_gate(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(0.5 * (1.0 + cosine(a, b)?))
}

/// Differentiable gate over tape values.
pub fn consistency_gate_var<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    Ok(a.cosine_similarity(b)?.add_scalar(1.0).scale(0.5))
}

/// `z̃_t^c = norm(z_t^c + κ(ẑ, z̄) ẑ)`. With `gate_enabled == false` the
/// gate is forced to zero and `z_t^c` is returned unchanged.
pub fn enhance_text<'t>(
    z_t_c: Var<'t>,
    recon: Var<'t>,
    target: Var<'t>,
    gate_enabled: bool,
) -> Result<Var<'t>> {
    if !gate_enabled {
        return Ok(z_t_c);
    }
    let kappa = consistency_gate_var(recon, target)?;
    let sum = z_t_c.add(recon.mul(kappa)?)?;
    if sum.value().l2_norm() < CANCELLATION_FLOOR {
        return Ok(z_t_c);
    }
    Ok(sum.l2_normalize())
}

/// Plain-value form of [`enhance_text`].
pub fn enhance_text_values(z_t_c: &[f64], recon: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let kappa = consistency_gate(recon, target)?;
    let sum: Vec<f64> = z_t_c.iter().zip(recon).map(|(a, b)| a + kappa * b).collect();
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < CANCELLATION_FLOOR {
        return Ok(z_t_c.to_vec());
    }
    Ok(sum.iter().map(|x| x / norm).collect())
}

/// Symmetric InfoNCE per sample over matched `(graph_i, text_i)` pairs with
/// in-batch negatives: `ℓ_i = ½[(lse_j s_ij - s_ii) + (lse_j s_ji - s_ii)]`
/// with `s = cos / τ`. Returns a `[B]` vector.
pub fn per_sample_losses<'t>(graph: &[Var<'t>], text: &[Var<'t>], tau: f64) -> Result<Var<'t>> {
    let b = graph.len();
    if b < 2 || text.len() != b {
        return Err(CoreError::BatchTooSmall(b.min(text.len())));
    }
    if !(tau > 0.0) {
        return Err(CoreError::Config(format!("temperature {tau} must be positive")));
    }
    let norm = |v: &[Var<'t>]| stack(&v.iter().map(|z| z.l2_normalize()).collect::<Vec<_>>());
    let g = norm(graph)?;
    let t = norm(text)?;
    let sim = g.matmul(t.transpose()?)?.scale(1.0 / tau);
    let pos = sim.diag()?;
    let g2t = sim.logsumexp_rows()?.sub(pos)?;
    let t2g = sim.transpose()?.logsumexp_rows()?.sub(pos)?;
    Ok(g2t.add(t2g)?.scale(0.5))
}

/// `ℓ_i^+` for one index of the batch.
pub fn per_sample_loss<'t>(graph: &[Var<'t>], text: &[Var<'t>], tau: f64, i: usize) -> Result<Var<'t>> {
    Ok(per_sample_losses(graph, text, tau)?.select(i)?)
}

/// Unweighted, unenhanced symmetric contrastive loss averaged over the batch.
pub fn contrastive_loss<'t>(graph: &[Var<'t>], text: &[Var<'t>], tau: f64) -> Result<Var<'t>> {
    Ok(per_sample_losses(graph, text, tau)?.mean())
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<f64> {
    if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(CoreError::NegativeWeight(w));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::AllZeroWeights);
    }
    Ok(total)
}

/// `Σ ω_i ℓ_i / Σ ω_i` with the weights entering as constants.
pub fn weighted_align_loss<'t>(losses: Var<'t>, weights: &[f64]) -> Result<Var<'t>> {
    let total = check_weights(weights)?;
    if losses.len() != weights.len() {
        return Err(CoreError::Validation(format!(
            "{} losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    let w = losses
        .tape()
        .constant(s2align_autodiff::Tensor::vector(weights.to_vec()));
    Ok(losses.mul(w)?.sum().scale(1.0 / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use s2align_autodiff::{Tape, Tensor};

    fn vecs<'t>(tape: &'t Tape, rows: &[&[f64]]) -> Vec<Var<'t>> {
        rows.iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect()
    }

    #[test]
    fn gate_landmarks() {
        let a = [1.0, 2.0];
        assert!((consistency_gate(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(consistency_gate(&a, &[-1.0, -2.0]).unwrap().abs() < 1e-15);
        assert_eq!(consistency_gate(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(
            consistency_gate(&[0.0, 0.0], &a),
            Err(CoreError::ZeroVector)
        ));
    }

    #[test]
    fn enhance_closed_gate_and_parallel_injection() {
        let z = [0.6, 0.8];
        let out = enhance_text_values(&z, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(out, z);
        let out = enhance_text_values(&z, &z, &z).unwrap();
        assert!(out.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn enhance_orthogonal_open_gate() {
        let out = enhance_text_values(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out[0] - h).abs() < 1e-15 && (out[1] - h).abs() < 1e-15);
    }

    #[test]
    fn enhance_var_matches_values() {
        let tape = Tape::new();
        let v = vecs(&tape, &[&[0.6, 0.8], &[0.0, 1.0], &[0.28, 0.96]]);
        let out = enhance_text(v[0], v[1], v[2], true).unwrap().value();
        let want = enhance_text_values(&[0.6, 0.8], &[0.0, 1.0], &[0.28, 0.96]).unwrap();
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cancellation_falls_back() {
        let tape = Tape::new();
        let v = vecs(&tape, &[&[1.0, 0.0], &[-1.0, 0.0], &[-1.0, 0.0]]);
        let out = enhance_text(v[0], v[1], v[2], true).unwrap();
        assert_eq!(out.value().data(), &[1.0, 0.0]);
    }

    #[test]
    fn orthonormal_pairs_at_unit_temperature() {
        let tape = Tape::new();
        let g = vecs(&tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let losses = per_sample_losses(&g, &g, 1.0).unwrap().value();
        let want = (1.0 + (-1.0f64).exp()).ln();
        for l in losses.data() {
            assert!((l - want).abs() < 1e-12);
        }
        assert!((want - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn identical_embeddings_give_log_batch() {
        let tape = Tape::new();
        let g = vecs(&tape, &[&[1.0, 2.0][..]; 5]);
        let losses = per_sample_losses(&g, &g, 0.1).unwrap().value();
        for l in losses.data() {
            assert!((l - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_batch_is_rejected() {
        let tape = Tape::new();
        let g = vecs(&tape, &[&[1.0, 0.0]]);
        assert!(matches!(
            per_sample_losses(&g, &g, 0.1),
            Err(CoreError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn weighted_mean_by_hand() {
        let tape = Tape::new();
        let l = tape.constant(Tensor::vector(vec![1.0, 3.0]));
        assert_eq!(weighted_align_loss(l, &[3.0, 1.0]).unwrap().item(), 1.5);
        assert_eq!(weighted_align_loss(l, &[1.0, 1.0]).unwrap().item(), 2.0);
        assert_eq!(weighted_align_loss(l, &[0.0, 1.0]).unwrap().item(), 3.0);
        assert!(matches!(
            weighted_align_loss(l, &[0.0, 0.0]),
            Err(CoreError::AllZeroWeights)
        ));
    }

    #[test]
    fn recon_loss_extremes() {
        let tape = Tape::new();
        let z = vecs(&tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let neg = vecs(&tape, &[&[-1.0, 0.0], &[0.0, -1.0]]);
        assert!(recon_loss(&z, &z).unwrap().item().abs() < 1e-15);
        assert!((recon_loss(&neg, &z).unwrap().item() - 2.0).abs() < 1e-15);
    }
}
