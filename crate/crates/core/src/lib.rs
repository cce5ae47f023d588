//! Template-free groupwise motion correction for MOLLI T1 mapping.
//!
//! The crate is `no_std` and only needs an allocator. It contains the
//! numerical pieces: the MOLLI signal model and Nelder-Mead fitting with
//! error-propagated SD maps, differentiable bilinear warping, the PCA
//! eigenvalue-concentration loss and its companions (relaxometry residual,
//! smoothness, cyclic consistency, soft-histogram NMI), an adaptive-moment
//! optimizer over dense displacement fields, the registration driver and a
//! synthetic phantom generator with ground truth.
//!
//! File formats, evaluation reports and the command-line front end live in
//! the `t1reg` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod filter;
pub mod linalg;
pub mod losses;
mod math;
pub mod optimizer;
pub mod phantom;
pub mod registration;
pub mod relaxometry;
pub mod series;
pub mod warp;

pub use error::{Error, Result};
pub use losses::{CorrelationSpectrum, LossWeights};
pub use phantom::{PhantomSpec, PhantomTruth};
pub use registration::{RegistrationConfig, RegistrationReport, Scenario};
pub use relaxometry::{FitConfig, FitResult, MolliParams};
pub use series::{DeformationSet, ImageSeries, Mask, ParameterMaps, WarpedSeries};
