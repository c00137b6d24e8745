//! Advantage-weighted regression: an off-policy RL method built from two
//! supervised regressions per iteration, one onto TD(λ) returns for the value
//! function and one onto actions weighted by exponentiated advantages for the
//! policy.

pub mod algorithm;
pub mod envs;
pub mod error;
pub mod mlp;
pub mod policy;
pub mod replay;
pub mod returns;
pub mod tabular;

pub use error::{Error, Result};
pub use mlp::Mlp;
pub use policy::{Action, ActionSpace, HeadKind, PolicyHead};
pub use replay::ReplayBuffer;
pub use returns::{ReturnConfig, ReturnEstimator, Termination, Trajectory, Transition, Weighting};
pub use tabular::{TabularMdp, TabularPolicy};

/// The guide's chapters, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/returns.md")]
    struct Returns;
    #[doc = include_str!("../../../book/src/tabular.md")]
    struct Tabular;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/offline.md")]
    struct Offline;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
