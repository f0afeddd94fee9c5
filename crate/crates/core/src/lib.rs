//! Nonlinear multitask learning through structured prediction.
//!
//! Each task gets its own kernel ridge regression, which yields score
//! functions `alpha_it(x)`. A prediction is the point of a constraint set
//! `C ⊆ R^T` minimising the score-weighted training loss. The square loss
//! reduces this to a weighted projection onto `C`; other losses go through
//! candidate enumeration. Pairwise ranking is the special case where `C` is
//! the set of acyclic comparison graphs.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod constraints;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod kernels;
mod linalg;
pub mod par;
pub mod ranking;
pub mod scores;

pub use constraints::{ConstraintDoc, ConstraintSpec, CurveKind};
pub use error::{Error, Result};
pub use estimator::{LossKind, MultitaskData, NlMtlModel};
pub use kernels::{InputMatrix, KernelSpec};
pub use ranking::{PairIndex, RankingModel};
pub use scores::{fit_scores, LambdaSchedule, ScoreModel, TaskData};
