//! A compact reverse-mode autodiff engine over dynamic-dimension `f64`
//! tensors, plus the layers, initializers and optimizer used by the resona
//! audio encoders.
//!
//! The design favors verifiability over throughput: every operation stores a
//! standard-layout value and a closure computing exact parent gradients, and
//! the whole engine is exercised by central-finite-difference checks.

mod adam;
mod conv;
mod gradcheck;
pub mod init;
mod layers;
mod norm;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, GradCheckFailure, GradCheckReport};
pub use layers::{BatchNorm2d, BiLstm, Conv2d, FwdCtx, LayerNorm, Linear, Lstm};
pub use params::{Entry, ParamStore};
pub use tape::{Grads, Tape, Var};
