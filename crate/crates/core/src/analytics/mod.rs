//! Observational statistics over traces.

pub mod kernel;
pub mod matrix;
pub mod roles;
pub mod sweep;
pub mod trajectory;

pub use kernel::{entropy_of, log_softmax, surprise_of, Distribution};
pub use matrix::{class_advantages, cross_matrices, self_advantage, self_advantages, ClassAdvantage, CrossMatrix, SelfAdvantage};
pub use roles::{default_edges, histogram, role_stats, RoleStats, Summary};
pub use sweep::{default_ranks, fit_feedback, fit_line, single_step_sweep, FeedbackFit, LineFit, SweepRecord};
pub use trajectory::{body_entropy, moving_average, trace_trajectory, trajectory, BodyEntropy, Trajectory, BODY_END, BODY_START};
