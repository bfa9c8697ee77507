//! Exact dynamic programming on a [`TabularMdp`](crate::env::TabularMdp).
//!
//! Policies enter either as a probability table `π(s, a)` (value quantities)
//! or as a softmax [`Policy`](crate::policy::Policy) plus one feature vector per
//! state (derivatives). All linear systems are solved with partially pivoted
//! LU followed by one step of iterative refinement.

mod bounds;
mod gradient;
mod horizon;
mod solve;

pub use bounds::{
    advantage_lambda, perf_difference, solve_recursion, surrogate_and_bound, PerfDifference, Recursion,
    SurrogateBound,
};
pub use gradient::{
    exact_gradient_eta, exact_gradient_j, exact_gradient_nu2, hessian_eta, hessian_eta_fd, one_hot_features,
    perf_stats_at, HessianMethod,
};
pub use horizon::{
    finite_horizon_gradient, finite_horizon_stats, state_marginals, FiniteHorizonStats, HorizonTarget,
};
pub use solve::{
    action_values, check_policy_table, occupancy, perf_stats, policy_transition, solve_discounted, solve_q,
    solve_x, t_step, value_tables, Occupancy, PerfStats, ValueTables,
};
