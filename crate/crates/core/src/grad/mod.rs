//! Reverse-mode differentiation over a small closed op set.
//!
//! [`Tape`] is the working engine used by the flow and the losses;
//! [`Expr`] is a declarative front end over the same ops. Running the tape
//! with [`Dual`] scalars gives forward-over-reverse products, which is how
//! the score-matching loss obtains parameter gradients of an input gradient.

mod expr;
mod params;
mod scalar;
mod tape;

pub use expr::{evaluate, value_and_gradient, Expr};
pub use params::{NamedSlice, ParameterStore};
pub use scalar::{Dual, Scalar};
pub use tape::{Adjoints, Tape, Var};
