//! Classical solvers: FIFO dispatch, simulated annealing, and an exact
//! branch-and-bound oracle for C* at small scale.

mod bnb;
mod fifo;
mod sa;

pub use bnb::{bnb_solve, BnbConfig, BnbResult};
pub use fifo::fifo_solve;
pub use sa::{sa_solve, sa_trace_to_csv, SaConfig, SaError, SaTracePoint};
