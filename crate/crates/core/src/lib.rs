//! Flexible job-shop scheduling (FJSP) solver suite.
//!
//! The crate models FJSP instances, frames solving as a sequential
//! assignment MDP, learns a Q-function with a small heterogeneous graph
//! neural network, and benchmarks the learned solver against FIFO
//! dispatch, simulated annealing, and an exact branch-and-bound oracle
//! using the optimality-gap metric.
//!
//! Modules follow the pipeline:
//! - [`instance`]: instance data model, random generation, file I/O
//! - [`sched`]: solutions, feasibility (gridlock) checks, makespan decoder
//! - [`env`]: the assignment MDP with tick-based processing
//! - [`neural`]: state encoding, the heterogeneous GNN Q-network, Adam
//! - [`qlearn`]: replay, TD targets, the training loop, checkpoints
//! - [`baselines`]: FIFO, simulated annealing, branch-and-bound
//! - [`report`]: optimality gap, evaluation harness, size-ladder bench

pub mod baselines;
pub mod env;
pub mod instance;
pub mod neural;
pub mod qlearn;
pub mod report;
pub mod sched;

/// Discrete time unit shared by durations, schedules, and the environment clock.
pub type Tick = u64;
