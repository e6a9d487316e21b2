//! DiL-piKL: KL-regularized no-regret learning toward anchor policies, with exact
//! equilibrium oracles, tabular RL self-play, BayesElo rating and a population harness.

pub mod error;
pub mod experiment;
pub mod game;
pub mod learners;
pub mod markov;
pub mod oracle;
pub mod popeval;
pub mod rating;
pub mod rl;
pub mod serde_ext;
pub mod simplex;

pub use error::{Error, Result};
pub use game::{make_builtin_game, AnchorPolicy, GameParams, NormalFormGame};
pub use learners::{Feedback, LearnerOptions, LearnerState, TemperatureSchedule, Trace, TypeDistribution};
pub use markov::TabularMarkovGame;
