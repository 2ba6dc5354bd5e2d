//! Glucose-insulin dynamics modeling toolkit.
//!
//! The crate pairs a 5-state linear compartmental model of glucose-insulin
//! dynamics with a biologically informed GRU network (BI-RNN): the network is
//! trained on measured glucose plus the compartmental model's state
//! predictions, with a loss that penalizes deviation from the model's
//! discrete dynamics. A surrogate virtual patient with circadian insulin
//! sensitivity and a saturating insulin action supplies ground truth, and an
//! evaluation layer compares the trained network against the regularized
//! least-squares linear baseline.
//!
//! Modules follow the data flow:
//!
//! - [`scenario`]: randomized multi-day meal and insulin input schedules
//! - [`patient`]: nonlinear time-varying virtual patient (ground truth)
//! - [`compartmental`]: linear model, simulation, IOB/Ra, equilibrium
//! - [`ident`]: regularized least-squares parameter identification
//! - [`gru`]: GRU state-space network forward pass and initialization
//! - [`standardize`]: per-channel standardization fitted on training data
//! - [`loss`]: augmented loss (data + biological + auxiliary) and exact
//!   gradients by backpropagation through time
//! - [`train`]: Adam optimizer with validation-based early stopping
//! - [`eval`]: RMSE / goodness-of-fit metrics and cohort reports
//! - [`io`]: CSV/JSON artifact formats shared with the CLI

pub mod compartmental;
pub mod error;
pub mod eval;
pub mod gru;
pub mod ident;
pub mod io;
pub mod loss;
pub mod patient;
pub mod rng;
pub mod scenario;
pub mod standardize;
pub mod train;

pub use error::{Error, Result};
