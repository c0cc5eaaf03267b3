//! Dense tensors and the reverse-mode tape the whole model is built on.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{analytic_gradients, grad_check, GradCheckReport, DEFAULT_STEP};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, PROB_CLAMP};
pub use tensor::Tensor;

/// Receptive field of one dilated convolution layer.
pub fn receptive_field(width: usize, dilation: usize) -> usize {
    (width - 1) * dilation + 1
}
