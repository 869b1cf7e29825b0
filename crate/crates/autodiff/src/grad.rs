//! Gradient evaluation and finite-difference checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::AutodiffError;
use crate::params::{Grads, ParamVars, Params};
use crate::tape::{DetachLog, Tape, Var};

/// Evaluate `loss_fn` and its exact reverse-mode gradient with respect to
/// every tensor in `params`.
pub fn value_and_grad<F, E>(params: &Params, loss_fn: F) -> Result<(f64, Grads), E>
where
    F: for<'t> FnOnce(&'t Tape, &ParamVars<'t>) -> Result<Var<'t>, E>,
    E: From<AutodiffError>,
{
    let tape = Tape::new();
    let vars = ParamVars::register(&tape, params);
    let loss = loss_fn(&tape, &vars)?;
    let value = loss.item();
    let gradients = tape.backward(loss)?;
    Ok((value, vars.grads(&gradients)))
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Tensors larger than this are checked on a seeded random subset of
    /// this many coordinates.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
    /// Smallest denominator of the relative error. Central differences at
    /// `eps = 1e-5` carry about 1e-10 absolute error, so coordinates with
    /// gradients below this scale are effectively compared absolutely.
    pub denom_floor: f64,
    /// Restrict the check to parameters whose names start with one of
    /// these prefixes. Empty means all parameters.
    pub prefixes: Vec<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_coords_per_tensor: 64,
            seed: 0,
            denom_floor: 1e-6,
            prefixes: Vec::new(),
        }
    }
}

impl GradCheckConfig {
    pub fn only(mut self, prefix: impl Into<String>) -> Self {
        self.prefixes.push(prefix.into());
        self
    }

    fn selects(&self, name: &str) -> bool {
        self.prefixes.is_empty() || self.prefixes.iter().any(|p| name.starts_with(p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a `relu`/`clip` kink.
    pub skipped: usize,
    pub worst: Option<CoordError>,
    pub passed: bool,
}

/// Compare reverse-mode gradients against central differences
/// `(f(x + eps) - f(x - eps)) / (2 eps)`.
///
/// Values cut by `detach` during the base pass are replayed unchanged in
/// every perturbed pass, so the numeric side differentiates the same
/// stop-gradient function the tape does. Coordinates whose perturbation
/// changes a `relu`/`clip` branch are skipped and counted.
pub fn check_gradients<F, E>(
    params: &Params,
    loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradReport, E>
where
    F: for<'t> Fn(&'t Tape, &ParamVars<'t>) -> Result<Var<'t>, E>,
    E: From<AutodiffError>,
{
    let tape = Tape::with_detach_log(DetachLog::Record(Vec::new()));
    let vars = ParamVars::register(&tape, params);
    let loss = loss_fn(&tape, &vars)?;
    let base_sig = tape.branch_signature();
    let DetachLog::Record(detached) = tape.take_detach_log() else {
        unreachable!("base pass records detached values");
    };
    let analytic = vars.grads(&tape.backward(loss)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| cfg.selects(n))
        .map(str::to_string)
        .collect();

    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
        passed: true,
    };
    for name in names {
        let len = params.require(&name)?.len();
        let coords: Vec<usize> = if len <= cfg.max_coords_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, cfg.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for index in coords {
            let original = params.require(&name)?.data()[index];
            let mut eval_at = |x: f64| -> Result<(f64, u64), E> {
                work.get_mut(&name).expect("param exists").data_mut()[index] = x;
                let tape = Tape::with_detach_log(DetachLog::Replay {
                    values: detached.clone(),
                    cursor: 0,
                });
                let vars = ParamVars::register(&tape, &work);
                let value = loss_fn(&tape, &vars)?.item();
                Ok((value, tape.branch_signature()))
            };
            let (f_plus, sig_plus) = eval_at(original + cfg.eps)?;
            let (f_minus, sig_minus) = eval_at(original - cfg.eps)?;
            work.get_mut(&name).expect("param exists").data_mut()[index] = original;

            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * cfg.eps);
            let a = analytic.get(&name).expect("registered").data()[index];
            let denom = a.abs().max(numeric.abs()).max(cfg.denom_floor);
            let rel_error = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel_error);
                report.worst = Some(CoordError {
                    param: name.clone(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}
