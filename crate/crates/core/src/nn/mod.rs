//! Differentiable-network substrate: matrices, a reverse-mode tape,
//! parameter storage with checkpoints, optimizers, self-attention, and a
//! finite-difference gradient checker.

pub mod attention;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use attention::{init_attention_params, mhsa_forward, AttentionConfig};
pub use gradcheck::grad_check;
pub use optim::{Adam, SgdMomentum};
pub use params::{glorot_uniform, load_checkpoint, save_checkpoint, ParamBinding, ParamStore};
pub use tape::{Tape, ValueId};
pub use tensor::{solve_dense, Mat};
