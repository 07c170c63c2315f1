//! Dense numerical core: arrays, layers, AdamW, checkpoints and a gradient oracle.

mod adamw;
mod array;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod params;

pub use adamw::{AdamW, AdamWConfig};
pub use array::{mat_vec_acc, outer_acc, vec_mat_acc, DenseArray};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use layers::{
    affine, affine_backward, log_sum_exp, sigmoid, sigmoid_grad, softmax, softmax_backward,
    softmax_in_place, AffineGrads, SIGMOID_CLAMP,
};
pub use params::{Param, ParamId, ParamStore};
