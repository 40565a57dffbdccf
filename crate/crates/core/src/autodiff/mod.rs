//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every node holds a 2-D array (scalars are `1 x 1`). Forward values are
//! computed eagerly as operations are recorded. [`Tape::grad`] walks the
//! tape backwards and records the adjoint computations as ordinary tape
//! operations, so a gradient is itself differentiable: differentiating a
//! function of `grad` (the gradient-penalty term of the critic objective)
//! is just a second call to `grad`.

mod kernels;
mod tape;

pub(crate) use kernels::rowwise_matvec;
pub use tape::{Tape, Var};
