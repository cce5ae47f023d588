//! Registration losses and their analytic gradients.
//!
//! * [`pca`]: eigenvalue concentration of the normalized correlation matrix
//!   of pixel signal profiles, `Σ i·λ_i`.
//! * [`relax`]: mean squared residual against the fitted signal model, with
//!   the fitted parameters held fixed.
//! * [`regularizers`]: forward-difference smoothness and cyclic
//!   consistency of the displacement fields.
//! * [`nmi`]: soft-histogram normalized mutual information for the
//!   template-based baselines.
//! * [`total`]: the weighted objective and its gradient w.r.t. the fields.

pub mod nmi;
pub mod pca;
pub mod regularizers;
pub mod relax;
pub mod total;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{correlation_spectrum, pca_loss, pca_loss_backward, CorrelationSpectrum};
pub use total::{total_loss, LossEval, LossTerms, NmiTemplate, Objective};

/// Weights of the objective terms. JSON keys: `pca`, `reg`, `cyclic`,
/// `relax`, `nmi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default)]
    pub pca: f64,
    #[serde(default)]
    pub reg: f64,
    #[serde(default)]
    pub cyclic: f64,
    #[serde(default)]
    pub relax: f64,
    #[serde(default)]
    pub nmi: f64,
}

impl LossWeights {
    /// The full objective: `pca 1, reg 10, cyclic 0.1, relax 10`.
    pub const PCA_RELAX: Self = Self {
        pca: 1.0,
        reg: 10.0,
        cyclic: 0.1,
        relax: 10.0,
        nmi: 0.0,
    };

    /// The PCA-only objective: relaxometry weight zero.
    pub const PCA: Self = Self {
        relax: 0.0,
        ..Self::PCA_RELAX
    };

    /// Pairwise NMI baseline, `λ_NMI = 10` with the same smoothness weight.
    pub const PAIRWISE_NMI: Self = Self {
        pca: 0.0,
        reg: 10.0,
        cyclic: 0.0,
        relax: 0.0,
        nmi: 10.0,
    };

    /// Mean-template NMI baseline, adding the cyclic term.
    pub const GROUP_NMI: Self = Self {
        cyclic: 0.1,
        ..Self::PAIRWISE_NMI
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.pca, self.reg, self.cyclic, self.relax, self.nmi];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::NoObjective);
        }
        Ok(())
    }
}
