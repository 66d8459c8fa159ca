//! Adversarial machine unlearning at desk scale.
//!
//! A trained classifier (the defender) unlearns a forget set by playing a
//! min-max game against a membership-inference attacker, optionally
//! regularized by a cross-correlation redundancy-reduction term between
//! forget-set and validation-set features. The crate also ships reference
//! unlearners (retrain, fine-tune, gradient ascent, Fisher forgetting,
//! influence unlearning), one-shot magnitude pruning, and an evaluation
//! suite with accuracy metrics and metric-based membership attacks.
//!
//! Everything is f64 and deterministic: a run is a pure function of its
//! configuration and seed.

pub mod attacker;
pub mod baselines;
pub mod data;
pub mod defender;
pub mod engine;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod ssreg;

pub use attacker::{AttackerConfig, AttackerModel, MiaInput, SensitivityCfg};
pub use data::{ForgetScheme, LabeledDataset, SplitSet};
pub use defender::{DefenderConfig, DefenderModel, TrainConfig};
pub use engine::{RunHistory, UnlearnConfig};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use nn::{Mat, ParamStore};
pub use pruning::SparsityMask;
