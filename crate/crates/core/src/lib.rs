//! Policy mirror descent on tabular MDPs.
//!
//! The crate covers exact policy evaluation and Bellman quantities ([`mdp`]),
//! mirror maps and the per-state proximal update ([`mirror`]), step-size
//! schedules ([`schedule`]), the exact and inexact PMD loops ([`exact`],
//! [`inexact`]) and adversarial MDP generators ([`hard`]). Everything is
//! generic over the scalar type; the aliases below fix it to `f64` or `f32`.

pub mod error;
pub mod exact;
pub mod hard;
pub mod inexact;
pub mod linalg;
pub mod mdp;
pub mod mirror;
pub mod scalar;
pub mod schedule;
pub mod trace;

pub use error::{PmdError, Result};
pub use exact::{necessity_threshold, run_exact_pmd, ExactRunConfig};
pub use hard::{
    duplicate_action_mdp, lower_bound_chain, mismatch_mdp, proof_parameter_chain, simulation_chain,
    ChainSpec,
};
pub use inexact::{
    accuracy_bound, estimate_q, run_inexact_pmd, run_inexact_pmd_with, theorem4_parameters,
    EstimatorConfig, ExactEstimator, GenerativeModel, InexactRunConfig, MonteCarloEstimator,
    QEstimator, Theorem4Params,
};
pub use mdp::{
    bellman_optimality, evaluate_policy, greedy_policy, mismatch_coefficient, optimal_values,
    policy_gradient, q_from_v, sub_optimality_gap, visitation_distribution, MdpDocument, Policy,
    QFunction, RewardRange, TabularMdp, ValueFunction, GREEDY_TOL,
};
pub use mirror::{
    bregman_divergence, min_greedy_divergence, pmd_update_state, MirrorMap, SeparableFn,
};
pub use scalar::Scalar;
pub use schedule::{
    adaptive_step_size, theorem1_bound, CkSequence, ScheduleKind, StepSize, StepSizeSchedule,
};
pub use trace::{IterationRecord, IterationTrace};

pub type Mdp = TabularMdp<f64>;
pub type MdpF32 = TabularMdp<f32>;
pub type PolicyF64 = Policy<f64>;
pub type PolicyF32 = Policy<f32>;
pub type Values = ValueFunction<f64>;
pub type ValuesF32 = ValueFunction<f32>;
pub type QValues = QFunction<f64>;
pub type QValuesF32 = QFunction<f32>;
pub type Map = MirrorMap<f64>;
pub type MapF32 = MirrorMap<f32>;
pub type Schedule = StepSizeSchedule<f64>;
pub type ScheduleF32 = StepSizeSchedule<f32>;
pub type Trace = IterationTrace<f64>;
pub type TraceF32 = IterationTrace<f32>;
