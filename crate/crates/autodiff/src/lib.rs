//! Minimal dense reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; operations on [`Var`] handles record
//! themselves, and [`Tape::backward`] returns exact gradients. Everything is
//! double precision and dense, sized for small graph models.
//!
//! ```
//! use s2align_autodiff::{value_and_grad, AutodiffError, Params, Tensor};
//!
//! let mut params = Params::new();
//! params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
//! let (value, grads) = value_and_grad::<_, AutodiffError>(&params, |_, vars| {
//!     let w = vars.get("w")?;
//!     Ok(w.mul(w)?.sum())
//! })
//! .unwrap();
//! assert_eq!(value, 5.0);
//! assert_eq!(grads.get("w").unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
mod grad;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use grad::{check_gradients, value_and_grad, CoordError, GradCheckConfig, GradReport};
pub use optim::{AdamState, AdamW};
pub use params::{Grads, ParamVars, Params};
pub use tape::{logsumexp_slice, stack, Gradients, Tape, Var, NORM_FLOOR};
pub use tensor::Tensor;
