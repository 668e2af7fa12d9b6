//! Mean-field game problem statements: coefficient functions, closed-form
//! control rules, initial densities, and domains for the shipped setups.

pub mod mu;
pub mod problem;

pub use mu::{MuSnapshot, MuView};
pub use problem::{
    check_control_rule, crowd_2d_defaults, crowd_50d_defaults, interaction_cost,
    make_crowd_motion, make_crowd_obstacle, make_half_terminal, make_traffic_flow, Domain,
    MfgProblem, Obstacle, ProblemDescriptor,
};
