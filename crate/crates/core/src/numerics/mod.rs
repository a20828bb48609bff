//! Dense linear algebra, activations and losses, RMSProp, and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod rmsprop;

pub use gradcheck::{finite_diff_gradient, relative_error};
pub use matrix::{dot, norm, Matrix};
pub use ops::{argmax, cosine_similarity, cosine_with_grad, cross_entropy, sigmoid, softmax};
pub use rmsprop::{rmsprop_step, OptimizerConfig, RmsPropState};
