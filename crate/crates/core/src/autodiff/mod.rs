//! Reverse-mode differentiation and the small reference classifier it drives.

pub mod fd;
pub mod mlp;
pub mod tape;

pub use fd::{fd_check, FdReport};
pub use mlp::{Activation, MlpSpec};
pub use tape::{Gradients, Tape, Var};
