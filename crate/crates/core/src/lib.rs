//! Token-level credit assignment for group-relative policy optimization.
//!
//! The pipeline scores each generated token by how much the visual input
//! shifts the policy's next-token distribution ([`dependency`]), maps those
//! scores to sum-preserving token weights and reshapes group-relative
//! advantages ([`advantage`]). A toy visually grounded policy
//! ([`policy_sim`]) and a clipped-surrogate trainer ([`trainer`]) exercise
//! the pipeline end to end; [`verification`] holds the independent oracles.

pub mod advantage;
pub mod dependency;
pub mod dump;
pub mod error;
pub mod policy_sim;
pub mod trainer;
pub mod verification;

pub use advantage::{
    base_weight, gate, group_normalize, reshape_advantages, reshape_flat, sum_preserve,
    token_weights, FlatReshape, GroupAdvantages, ReshapeConfig, ReshapeMode, ReshapedTrajectory,
    SumPreserved, WeightVector,
};
pub use dependency::{
    compress, kl_exact, kl_exact_with, kl_k3, minmax_normalize, score_sampled, score_trajectory,
    DependencyTrace, ScoreMode, TokenDistribution,
};
pub use dump::{parse_dump, score_records, write_dump, DumpRecord};
pub use error::{Error, Result};
pub use policy_sim::{
    generate_task, rollout_group, rollout_one, PolicyParams, RolloutGroup, Sampling, TaskFamily,
    TaskInstance, TaskShape, TrajectoryRecord,
};
pub use trainer::{
    gradient, read_checkpoint, surrogate_loss, train, train_from, write_checkpoint, StepMetrics,
    TrainAbort, TrainConfig, TrainOutcome,
};
pub use verification::{CheckOutcome, NuisancePartition, VarianceReport};
