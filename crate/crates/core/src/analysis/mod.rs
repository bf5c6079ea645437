//! Study harness: norms, deep-quench rate fits, perturbation tables,
//! time-step self-convergence and the gradient and control oracles.

mod norms;
mod oracles;
mod rates;

pub use norms::{NormKind, NormSuite};
pub use oracles::*;
pub use rates::*;
