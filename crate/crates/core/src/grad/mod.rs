//! Reverse-mode differentiation over the geometry and model primitives,
//! finite-difference checking, and (Riemannian) Adam.

pub mod check;
pub mod param;
pub mod tape;

pub use check::{grad_check, Primitive, REL_FLOOR};
pub use param::{adam_step, AdamConfig, Gradients, Manifold, ParamId, ParamStore, ParamTensor};
pub use tape::{multi_step_loss_from_logits, Groups, RowMix, Tape, Var};
