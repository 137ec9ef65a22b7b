//! Robust online-convex-optimization (OCO) disturbance rejection.
//!
//! The crate covers:
//!
//! * [`lti`]: discrete-time state-space systems and SISO realizations.
//! * [`norms`]: vector, matrix and induced ℓ∞ system norms.
//! * [`robust`]: the LFT interconnection of plant, estimator and feedback
//!   gain, a scaled small-gain test, D-scale search, and bisection for the
//!   largest admissible FIR gain bound.
//! * [`oco`]: the disturbance-action controller (estimator, FIR term, ideal
//!   cost and its gradient, projected online gradient descent).
//! * [`sim`]: closed-loop simulation of the uncertain plant.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lti;
pub mod norms;
pub mod oco;
pub mod robust;
pub mod sim;

pub use error::{Error, Result};
pub use lti::{StateSpace, SystemState, TransferFunction};
pub use norms::{induced_linf_norm, matrix_inf_norm, vector_norm, NormResult, PNorm};
pub use oco::{CostWeights, DisturbanceHistory, EstimatorMemory, FirGains, IdealRollout};
pub use robust::{InterconnectionP, ScaleSearchResult, StabilityReport};
pub use sim::{DisturbanceSpec, ExperimentConfig, SimulationResult, SweepRow};
