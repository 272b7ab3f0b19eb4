//! LP formulations of the revenue-maximization problem and an exact
//! rational simplex solver.

pub mod aux;
pub mod build;
pub mod program;
pub mod solver;

pub use aux::{compute_aux_weights, AuxKey, AuxWeights};
pub use build::{
    build_naive, build_naive_capped, build_succinct_k_bidders, build_succinct_k_items, optimum, solve_to_mechanism, tied_blocks,
    Formulation, LpBuild, Mode, SizeReport,
};
pub use program::{LinearProgram, Row, Sense, Variable};
pub use solver::{solve, LpSolution, LpStatus};
