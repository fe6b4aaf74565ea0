//! Sparse Bayesian learning for the multiple-measurement-vector model
//! `Y = ΦX + V` when the nonzero rows of `X` are temporally correlated.
//!
//! Three solvers share one set of types:
//!
//! * [`tsbl`]: EM over the Kronecker block model (exact, slower).
//! * [`tmsbl`]: the same updates mapped back to the N×M space.
//! * [`msbl`]: the correlation-blind baseline (`B = I`).
//!
//! [`datagen`] builds seeded synthetic problems, [`metrics`] holds the
//! performance measures and theory checks, and [`oracle`] has dense
//! reference computations used for verification.

// `!(x > 0.0)` is used on purpose so NaN takes the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod msbl;
pub mod oracle;
pub mod tmsbl;
pub mod tsbl;

pub use error::{Result, SblError};
pub use model::{
    build_block_dictionary, cost, map_estimate, posterior_moments, GroundTruth, Hyperparams,
    MmvProblem, PosteriorMoments, SolverResult,
};
pub use msbl::{msbl_em_step, msbl_solve, MsblState};
pub use tmsbl::{
    estimate_b, tmsbl_gamma_update, tmsbl_lambda_update, tmsbl_solve, BPolicy, Regime,
    TmsblOptions, TmsblState,
};
pub use tsbl::{tsbl_em_step, tsbl_solve, LambdaPolicy, TsblOptions};
