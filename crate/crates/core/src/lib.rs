//! Deep-equilibrium POCS reconstruction for calibration-free parallel MRI.
//!
//! A learned self-consistency operator `Φ` with a certified Lipschitz bound
//! `L < 1` is driven to the fixed point `x = P_C(Φ(x))` under the
//! data-consistency projection `P_C`, and trained by implicit differentiation
//! at that fixed point. The crate also ships a classical SPIRiT baseline,
//! synthetic multi-coil phantoms, image-quality metrics and a harness that
//! checks the convergence and noise-robustness guarantees empirically.

pub mod error;
pub mod fixed_point;
pub mod forward;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod parallel;
pub mod phantom;
pub mod rng;
pub mod spirit;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, ConvKernel, KSpace};
