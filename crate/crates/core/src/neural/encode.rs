//! Scheduling-state encoding into a [`HeteroGraph`].
//!
//! Operation features (per row, in order):
//! 1. remaining processing time, normalized by the max base duration:
//!    effective remaining ticks once assigned, base duration before;
//! 2. completion percentage in [0, 1];
//! 3. downstream same-job dependents, normalized by job length;
//! 4.-6. status one-hot over {queued, processing, completed}
//!    (all-zero = unassigned);
//! 7. remaining job time: the sum, over this op and its job successors,
//!    of machine-averaged effective durations, normalized by the largest
//!    such sum in the instance.
//!
//! Machine features: queue length, normalized by the operation count, and
//! the minimum remaining effective runtime over queued ops (0 for an empty
//! queue), normalized like op feature 1.
//!
//! All normalizers are per-instance constants >= 1, so features stay
//! scale-free across problem sizes.
//!
//! Compatibility edges mirror the state: an unassigned op keeps all its
//! compat edges (the dashed candidates), while an assigned op keeps only
//! the edge to its machine (the solid assignment arc).

use crate::env::{OpStatus, SchedulingState};
use crate::instance::FjspInstance;

use super::linalg::Matrix;
use super::{HeteroGraph, MACHINE_FEATURES, OP_FEATURES};

/// Per-instance constants reused across the many encodes of one rollout.
#[derive(Debug, Clone)]
pub struct EncodeCtx {
    max_base: f64,
    /// Per op: sum of machine-averaged effective durations over the op and
    /// its job successors.
    remaining_job_time: Vec<f64>,
    job_time_norm: f64,
}

impl EncodeCtx {
    pub fn new(instance: &FjspInstance) -> Self {
        let n = instance.n_ops();
        let max_base = instance
            .operations
            .iter()
            .map(|o| o.base_duration)
            .max()
            .unwrap_or(1)
            .max(1) as f64;
        let mean_eff: Vec<f64> = (0..n)
            .map(|op| {
                let edges = instance.compat_of(op);
                let total: f64 = edges
                    .iter()
                    .map(|e| instance.effective_duration(op, e.machine).unwrap() as f64)
                    .sum();
                total / edges.len() as f64
            })
            .collect();
        let mut remaining_job_time = vec![0.0; n];
        let mut job_time_norm = 1.0f64;
        for chain in &instance.jobs {
            let mut acc = 0.0;
            for &op in chain.iter().rev() {
                acc += mean_eff[op];
                remaining_job_time[op] = acc;
            }
            job_time_norm = job_time_norm.max(acc);
        }
        EncodeCtx {
            max_base,
            remaining_job_time,
            job_time_norm,
        }
    }

    pub fn encode(&self, instance: &FjspInstance, state: &SchedulingState) -> HeteroGraph {
        let n = instance.n_ops();
        let mut op_feats = Matrix::zeros(n, OP_FEATURES);
        for op in 0..n {
            let meta = &instance.operations[op];
            let status = state.op_status[op];
            let row = op_feats.row_mut(op);
            let (remaining, completion) = match status {
                OpStatus::Unassigned => (meta.base_duration as f64, 0.0),
                OpStatus::Completed => (0.0, 1.0),
                OpStatus::Queued | OpStatus::Processing => {
                    let machine = state.assignment[op].expect("assigned status");
                    let dur = instance.effective_duration(op, machine).unwrap();
                    let progress = state.op_progress[op];
                    (
                        (dur - progress) as f64,
                        progress as f64 / dur as f64,
                    )
                }
            };
            row[0] = remaining / self.max_base;
            row[1] = completion;
            let job_len = instance.jobs[meta.job].len();
            row[2] = (job_len - 1 - meta.pos_in_job) as f64 / job_len as f64;
            match status {
                OpStatus::Unassigned => {}
                OpStatus::Queued => row[3] = 1.0,
                OpStatus::Processing => row[4] = 1.0,
                OpStatus::Completed => row[5] = 1.0,
            }
            row[6] = self.remaining_job_time[op] / self.job_time_norm;
        }

        let mut mach_feats = Matrix::zeros(instance.n_machines, MACHINE_FEATURES);
        let mut edges_queue = Vec::new();
        for machine in 0..instance.n_machines {
            let queue = state.queue(machine);
            let row = mach_feats.row_mut(machine);
            row[0] = queue.len() as f64 / n as f64;
            row[1] = queue
                .iter()
                .map(|&op| {
                    let dur = instance.effective_duration(op, machine).unwrap();
                    (dur - state.op_progress[op]) as f64
                })
                .fold(f64::INFINITY, f64::min)
                / self.max_base;
            if queue.is_empty() {
                row[1] = 0.0;
            }
            for pair in queue.windows(2) {
                edges_queue.push((pair[0], pair[1]));
            }
        }

        let mut edges_job = Vec::new();
        for chain in &instance.jobs {
            for pair in chain.windows(2) {
                edges_job.push((pair[0], pair[1]));
            }
        }
        let edges_compat: Vec<(usize, usize, f64)> = instance
            .compat
            .iter()
            .filter(|e| match state.assignment[e.op] {
                None => true,
                Some(machine) => machine == e.machine,
            })
            .map(|e| (e.op, e.machine, e.weight))
            .collect();
        let candidate_mask: Vec<(usize, usize)> = instance
            .compat
            .iter()
            .filter(|e| state.op_status[e.op] == OpStatus::Unassigned)
            .map(|e| (e.op, e.machine))
            .collect();

        HeteroGraph {
            op_feats,
            mach_feats,
            edges_job,
            edges_queue,
            edges_compat,
            candidate_mask,
        }
    }
}

/// One-shot convenience wrapper around [`EncodeCtx`].
pub fn encode_state(instance: &FjspInstance, state: &SchedulingState) -> HeteroGraph {
    EncodeCtx::new(instance).encode(instance, state)
}
