//! Retain-free class-level machine unlearning.
//!
//! The unlearning method works in two phases against a frozen copy of the
//! original classifier:
//!
//! 1. **Probing** ([`probing`]): projected gradient ascent inside an L∞ ball
//!    moves every forget-set input toward the decision boundary; the frozen
//!    model's own prediction at the probed point becomes the edit label.
//! 2. **Editing** ([`editing`]): alternating *push* steps (cross-entropy on the
//!    edit instructions) and *pull* steps (masked, temperature-scaled
//!    distillation from the frozen model on forget inputs).
//!
//! Only the original model and the forget set are consumed. Baselines,
//! evaluation metrics and a config-driven experiment harness live alongside.

pub mod baselines;
pub mod data;
pub mod editing;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod model;
pub mod probing;

pub use error::{PteError, Result};
