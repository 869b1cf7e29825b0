//! Executable checks of weighted risk equalization and spurious feature
//! elimination on analytically constructed linear-Gaussian domains.

pub mod domains;
pub mod equalization;
pub mod spurious;

use serde::{Deserialize, Serialize};

use s2align_core::config::VerifyConfig;

pub use domains::{
    build_synthetic_domains, decouple_spurious, exact_density_ratio, log_density_ratio, make_identical,
    violate_label_invariance, SyntheticDomain,
};
pub use equalization::{verify_equalization, weighted_risk_mc, EqualizationReport, RiskEstimate};
pub use spurious::{spurious_elimination_on, verify_spurious_elimination, SpuriousReport};

#[derive(Debug, thiserror::Error)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("gradient descent did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NonConvergence { grad_norm: f64, iterations: usize },
}

pub type Result<T> = std::result::Result<T, TheoryError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub equalization: EqualizationReport,
    pub spurious: SpuriousReport,
    pub pass: bool,
}

/// Both theorem checks with the configured sizes and tolerance.
pub fn run_verify(cfg: &VerifyConfig, seed: u64) -> Result<VerifyReport> {
    let mut domains = build_synthetic_domains(cfg.domains, cfg.d_inv, cfg.d_spu, seed)?;
    if cfg.violate {
        violate_label_invariance(&mut domains);
    }
    let predictor = equalization::default_predictor(&domains);
    let equalization = verify_equalization(
        &domains,
        predictor,
        equalization::default_rho,
        cfg.n_samples,
        cfg.tol_rel,
        seed,
    );
    let spurious = verify_spurious_elimination(cfg.domains, cfg.d_inv, cfg.d_spu, seed)?;
    let pass = equalization.pass && equalization.unweighted_differ && spurious.pass;
    Ok(VerifyReport {
        equalization,
        spurious,
        pass,
    })
}
