//! Dense double-precision matrix engine with reverse-mode automatic
//! differentiation, the Adam optimizer, and bit-exact parameter-store
//! serialization. Deliberately minimal: exactly the primitives a
//! graph-attention encoder-decoder needs, all on CPU, all deterministic.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{AdamHyper, ParamStore, StoreError};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Tensor, TensorError};
