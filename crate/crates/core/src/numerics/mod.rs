//! Dense `f64` arrays, a define-by-run reverse-mode tape, MLP and GRU
//! layers, Adam, and finite-difference gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;
pub mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, TensorCheck, DEFAULT_STEP};
pub use graph::{Gradients, Graph, Var};
pub use layers::{gru_step, mlp_forward, Activation, GruSpec, MlpSpec, WeightInit};
pub use params::{evaluate, evaluate_with_gradients, Bound, Parameter, ParameterSet};
pub use tensor::Tensor;

pub(crate) use graph::log_sum_exp;
