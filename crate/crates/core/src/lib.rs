//! Knowledge-distillation workbench: small convolutional and dense
//! classifiers trained from scratch, the confidence-conditioned distillation
//! regimes, self-regulated sample selection, FGSM robustness evaluation and
//! mistake-repetition metrics.

pub mod adversarial;
pub mod checkpoint;
pub mod data;
pub mod distill;
mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod selfreg;
pub mod tensor;

pub use adversarial::AdversarialSet;
pub use data::{Dataset, Split};
pub use distill::{DistillPlan, DistillReport, Regime};
pub use error::{Error, Result};
pub use loss::Distribution;
pub use nn::{Architecture, LayerSpec, Network, Role};
pub use optim::{Algorithm, OptimizerState};
pub use selfreg::RegulationState;
pub use tensor::Tensor;
