//! FJSP instance data model, random instance generation, and file serialization.
//!
//! An instance is a set of machines plus jobs made of ordered operation
//! chains. Each operation carries an integer base duration; compatibility
//! edges link operations to the machines that may process them, with a
//! positive weight acting as a speedup (< 1) or slowdown (> 1) multiplier.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Tick;

/// One operation in a job chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    /// Dense id in `0..n_ops`.
    pub id: usize,
    /// Index of the job this operation belongs to.
    pub job: usize,
    /// 0-based position within the job chain.
    pub pos_in_job: usize,
    /// Base processing time in ticks, always >= 1.
    pub base_duration: Tick,
}

/// Operation-machine compatibility with a duration multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatEdge {
    pub op: usize,
    pub machine: usize,
    /// Positive multiplier: < 1 speeds the operation up, > 1 slows it down.
    pub weight: f64,
}

/// A complete FJSP instance.
///
/// Invariants (enforced by [`FjspInstance::new`] and on load):
/// - every operation appears in exactly one job chain, ids dense from 0;
/// - every operation has at least one compatibility edge;
/// - base durations and weights are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FjspInstance {
    pub n_machines: usize,
    /// Operation ids per job, in processing order.
    pub jobs: Vec<Vec<usize>>,
    pub operations: Vec<Operation>,
    /// Sorted by (op, machine); at most one edge per pair.
    pub compat: Vec<CompatEdge>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid instance: {0}")]
    Validation(String),
    #[error("failed to parse instance file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl FjspInstance {
    /// Builds an instance from job chains, base durations (indexed by op id),
    /// and compatibility triples, validating all invariants.
    pub fn new(
        n_machines: usize,
        jobs: Vec<Vec<usize>>,
        base_durations: Vec<Tick>,
        compat: Vec<(usize, usize, f64)>,
    ) -> Result<Self, InstanceError> {
        let n_ops = base_durations.len();
        if n_machines == 0 {
            return Err(InstanceError::Validation("n_machines must be >= 1".into()));
        }

        let mut seen = vec![false; n_ops];
        let mut operations = vec![None; n_ops];
        for (job, chain) in jobs.iter().enumerate() {
            if chain.is_empty() {
                return Err(InstanceError::Validation(format!("job {job} is empty")));
            }
            for (pos, &op) in chain.iter().enumerate() {
                if op >= n_ops {
                    return Err(InstanceError::Validation(format!(
                        "job {job} references unknown op {op}"
                    )));
                }
                if seen[op] {
                    return Err(InstanceError::Validation(format!(
                        "op {op} appears in more than one chain position"
                    )));
                }
                seen[op] = true;
                operations[op] = Some(Operation {
                    id: op,
                    job,
                    pos_in_job: pos,
                    base_duration: base_durations[op],
                });
            }
        }
        if let Some(op) = seen.iter().position(|s| !s) {
            return Err(InstanceError::Validation(format!(
                "op {op} is missing from every job"
            )));
        }
        let operations: Vec<Operation> = operations.into_iter().map(|o| o.unwrap()).collect();
        for op in &operations {
            if op.base_duration < 1 {
                return Err(InstanceError::Validation(format!(
                    "op {}: base_duration must be >= 1",
                    op.id
                )));
            }
        }

        let mut compat: Vec<CompatEdge> = compat
            .into_iter()
            .map(|(op, machine, weight)| CompatEdge {
                op,
                machine,
                weight,
            })
            .collect();
        compat.sort_by(|a, b| (a.op, a.machine).cmp(&(b.op, b.machine)));
        let mut has_edge = vec![false; n_ops];
        for (i, e) in compat.iter().enumerate() {
            if e.op >= n_ops {
                return Err(InstanceError::Validation(format!(
                    "compat edge references unknown op {}",
                    e.op
                )));
            }
            if e.machine >= n_machines {
                return Err(InstanceError::Validation(format!(
                    "compat edge references unknown machine {}",
                    e.machine
                )));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(InstanceError::Validation(format!(
                    "compat edge ({}, {}): weight must be a positive finite real",
                    e.op, e.machine
                )));
            }
            if i > 0 && compat[i - 1].op == e.op && compat[i - 1].machine == e.machine {
                return Err(InstanceError::Validation(format!(
                    "duplicate compat edge ({}, {})",
                    e.op, e.machine
                )));
            }
            has_edge[e.op] = true;
        }
        if let Some(op) = has_edge.iter().position(|h| !h) {
            return Err(InstanceError::Validation(format!(
                "op {op} has no compatibility edge"
            )));
        }

        Ok(FjspInstance {
            n_machines,
            jobs,
            operations,
            compat,
        })
    }

    pub fn n_ops(&self) -> usize {
        self.operations.len()
    }

    /// Compatibility edges of `op` as `(machine, weight)`, ascending by machine.
    pub fn compat_of(&self, op: usize) -> &[CompatEdge] {
        let lo = self.compat.partition_point(|e| e.op < op);
        let hi = self.compat.partition_point(|e| e.op <= op);
        &self.compat[lo..hi]
    }

    /// Weight of the (op, machine) edge, if compatible.
    pub fn compat_weight(&self, op: usize, machine: usize) -> Option<f64> {
        self.compat_of(op)
            .iter()
            .find(|e| e.machine == machine)
            .map(|e| e.weight)
    }

    /// Effective processing time of `op` on `machine`:
    /// `max(1, round(base_duration * weight))`, an integer tick count.
    ///
    /// This is the single shared duration rule used by the decoder, the
    /// environment, and every solver. Returns `None` for incompatible pairs.
    pub fn effective_duration(&self, op: usize, machine: usize) -> Option<Tick> {
        let w = self.compat_weight(op, machine)?;
        let base = self.operations[op].base_duration;
        Some(effective_duration_raw(base, w))
    }

    /// Minimum effective duration of `op` over its compatible machines.
    pub fn min_effective_duration(&self, op: usize) -> Tick {
        self.compat_of(op)
            .iter()
            .map(|e| effective_duration_raw(self.operations[op].base_duration, e.weight))
            .min()
            .expect("every op has >= 1 compat edge")
    }

    /// Maximum effective duration of `op` over its compatible machines.
    pub fn max_effective_duration(&self, op: usize) -> Tick {
        self.compat_of(op)
            .iter()
            .map(|e| effective_duration_raw(self.operations[op].base_duration, e.weight))
            .max()
            .expect("every op has >= 1 compat edge")
    }

    /// Job predecessor of `op`, if it is not the first in its chain.
    pub fn job_predecessor(&self, op: usize) -> Option<usize> {
        let o = &self.operations[op];
        (o.pos_in_job > 0).then(|| self.jobs[o.job][o.pos_in_job - 1])
    }
}

/// `max(1, round(base * weight))` on raw values.
pub fn effective_duration_raw(base: Tick, weight: f64) -> Tick {
    ((base as f64 * weight).round() as Tick).max(1)
}

/// Generator parameters for random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_jobs: usize,
    pub n_machines: usize,
    pub avg_ops_per_job: f64,
    /// Probability of dropping each compatibility edge.
    pub drop_fraction: f64,
    /// Inclusive base-duration range in ticks.
    pub duration_range: (Tick, Tick),
    /// Inclusive weight range.
    pub weight_range: (f64, f64),
}

impl GeneratorSpec {
    /// Repo defaults: durations in [1,10], weights spanning speedup and
    /// slowdown in [0.5, 2.0], drop fraction 0.3, ~2 operations per job.
    pub fn new(n_jobs: usize, n_machines: usize) -> Self {
        GeneratorSpec {
            n_jobs,
            n_machines,
            avg_ops_per_job: 2.0,
            drop_fraction: 0.3,
            duration_range: (1, 10),
            weight_range: (0.5, 2.0),
        }
    }
}

/// Generates a random instance, deterministic in `seed`.
///
/// The total operation count is `n_jobs * avg_ops_per_job` rounded to the
/// nearest integer, partitioned uniformly at random into nonempty chains.
/// Compatibility starts fully connected; each edge is dropped independently
/// with probability `drop_fraction`, and any operation left edgeless gets
/// one uniformly random edge restored so the instance stays solvable.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<FjspInstance, InstanceError> {
    let (lo, hi) = spec.duration_range;
    let (wlo, whi) = spec.weight_range;
    if spec.n_jobs < 1 || spec.n_machines < 1 {
        return Err(InstanceError::Parameter(
            "n_jobs and n_machines must be >= 1".into(),
        ));
    }
    if !(lo >= 1 && lo <= hi) {
        return Err(InstanceError::Parameter(format!(
            "duration range [{lo},{hi}] must satisfy 1 <= lo <= hi"
        )));
    }
    if !(wlo > 0.0 && wlo <= whi) || !whi.is_finite() {
        return Err(InstanceError::Parameter(format!(
            "weight range [{wlo},{whi}] must satisfy 0 < wlo <= whi"
        )));
    }
    if !(0.0..1.0).contains(&spec.drop_fraction) {
        return Err(InstanceError::Parameter(format!(
            "drop_fraction {} must lie in [0,1)",
            spec.drop_fraction
        )));
    }
    if !(spec.avg_ops_per_job > 0.0) {
        return Err(InstanceError::Parameter(
            "avg_ops_per_job must be positive".into(),
        ));
    }
    let n_ops = (spec.n_jobs as f64 * spec.avg_ops_per_job).round() as usize;
    if n_ops < spec.n_jobs {
        return Err(InstanceError::Parameter(format!(
            "avg_ops_per_job {} yields {} ops for {} nonempty jobs",
            spec.avg_ops_per_job, n_ops, spec.n_jobs
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Chain lengths: one op per job, extras assigned uniformly at random.
    let mut lengths = vec![1usize; spec.n_jobs];
    for _ in 0..(n_ops - spec.n_jobs) {
        lengths[rng.random_range(0..spec.n_jobs)] += 1;
    }
    let mut jobs = Vec::with_capacity(spec.n_jobs);
    let mut next_id = 0;
    for &len in &lengths {
        jobs.push((next_id..next_id + len).collect::<Vec<_>>());
        next_id += len;
    }

    let base_durations: Vec<Tick> = (0..n_ops).map(|_| rng.random_range(lo..=hi)).collect();

    let mut compat = Vec::new();
    for op in 0..n_ops {
        for machine in 0..spec.n_machines {
            if rng.random::<f64>() >= spec.drop_fraction {
                compat.push((op, machine, rng.random_range(wlo..=whi)));
            }
        }
    }
    // Repair: an op that lost every edge gets one random edge back.
    let mut degree = vec![0usize; n_ops];
    for &(op, _, _) in &compat {
        degree[op] += 1;
    }
    for op in 0..n_ops {
        if degree[op] == 0 {
            let machine = rng.random_range(0..spec.n_machines);
            compat.push((op, machine, rng.random_range(wlo..=whi)));
        }
    }

    FjspInstance::new(spec.n_machines, jobs, base_durations, compat)
}

// --- file format ---------------------------------------------------------
// {n_machines, jobs: [[op_ids]], ops: [{id, base}], compat: [{op, machine, weight}]}

#[derive(Serialize, Deserialize)]
struct OpRecord {
    id: usize,
    base: Tick,
}

#[derive(Serialize, Deserialize)]
struct CompatRecord {
    op: usize,
    machine: usize,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n_machines: usize,
    jobs: Vec<Vec<usize>>,
    ops: Vec<OpRecord>,
    compat: Vec<CompatRecord>,
}

/// Serializes an instance as canonical JSON (fixed key order, ids dense).
pub fn to_json(instance: &FjspInstance) -> String {
    let file = InstanceFile {
        n_machines: instance.n_machines,
        jobs: instance.jobs.clone(),
        ops: instance
            .operations
            .iter()
            .map(|o| OpRecord {
                id: o.id,
                base: o.base_duration,
            })
            .collect(),
        compat: instance
            .compat
            .iter()
            .map(|e| CompatRecord {
                op: e.op,
                machine: e.machine,
                weight: e.weight,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("instance serialization");
    s.push('\n');
    s
}

/// Parses and validates an instance from its JSON form.
pub fn from_json(s: &str) -> Result<FjspInstance, InstanceError> {
    let file: InstanceFile = serde_json::from_str(s)?;
    let n_ops = file.ops.len();
    let mut base_durations = vec![0; n_ops];
    for (i, rec) in file.ops.iter().enumerate() {
        if rec.id != i {
            return Err(InstanceError::Validation(format!(
                "ops[{i}].id = {}: ids must be dense from 0",
                rec.id
            )));
        }
        base_durations[i] = rec.base;
    }
    FjspInstance::new(
        file.n_machines,
        file.jobs,
        base_durations,
        file.compat
            .into_iter()
            .map(|e| (e.op, e.machine, e.weight))
            .collect(),
    )
}

pub fn save(instance: &FjspInstance, path: &Path) -> Result<(), InstanceError> {
    fs::write(path, to_json(instance))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FjspInstance, InstanceError> {
    from_json(&fs::read_to_string(path)?)
}
