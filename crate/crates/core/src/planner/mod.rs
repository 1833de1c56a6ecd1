mod field;
mod rmp;
mod rollout;

pub use field::{AnalyticField, DistanceField, EmptyField, FieldSample, HeadField, QueryCounts};
pub use rmp::{
    combine, goal_policy, min_eigenvalue, obstacle_policy, Combined, GoalParams, ObstacleParams, RmpEval,
    PINV_CUTOFF,
};
pub use rollout::{
    audit, blocked_pairs, rollout, AuditReport, RolloutConfig, Termination, Trajectory, TrajectoryRecord,
    DIVERGENCE_RADIUS,
};
