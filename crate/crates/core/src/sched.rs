//! Solution representation, gridlock (cycle) checking, and the semi-active
//! makespan decoder shared by all solvers and the evaluator.
//!
//! Gridlock is formalized as a cycle in the digraph over assigned
//! operations whose edges are job precedence (when the predecessor is
//! assigned) and machine queue order. Queue order is fixed once assigned,
//! so a cycle can never be broken by later assignments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::FjspInstance;
use crate::Tick;

/// A machine assignment plus per-machine processing order.
///
/// May be partial: unassigned operations simply appear in no `order` list
/// and have no `assignment` entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSolution {
    /// `assignment[op]` is the machine of `op`, `None` while unassigned.
    pub assignment: Vec<Option<usize>>,
    /// `order[machine]` lists the ops queued on that machine, in order.
    pub order: Vec<Vec<usize>>,
}

impl CandidateSolution {
    pub fn empty(instance: &FjspInstance) -> Self {
        CandidateSolution {
            assignment: vec![None; instance.n_ops()],
            order: vec![Vec::new(); instance.n_machines],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.assignment.iter().all(|a| a.is_some())
    }
}

/// Start/finish times per operation under semi-active decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub start: Vec<Tick>,
    pub finish: Vec<Tick>,
    pub makespan: Tick,
}

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("inconsistent solution: {0}")]
    Structural(String),
    #[error("solution is incomplete: op {0} unassigned")]
    Incomplete(usize),
    #[error("infeasible solution: gridlock cycle through ops {cycle:?}")]
    Infeasible { cycle: Vec<usize> },
    #[error("failed to parse solution file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Checks structural consistency of a (possibly partial) solution:
/// orders match assignments, each op appears once, machines compatible.
fn check_consistent(sol: &CandidateSolution, instance: &FjspInstance) -> Result<(), SchedError> {
    if sol.assignment.len() != instance.n_ops() || sol.order.len() != instance.n_machines {
        return Err(SchedError::Structural(format!(
            "solution shaped for {} ops / {} machines, instance has {} / {}",
            sol.assignment.len(),
            sol.order.len(),
            instance.n_ops(),
            instance.n_machines
        )));
    }
    let mut placed = vec![false; instance.n_ops()];
    for (machine, queue) in sol.order.iter().enumerate() {
        for &op in queue {
            if op >= instance.n_ops() {
                return Err(SchedError::Structural(format!("unknown op {op} in order")));
            }
            if placed[op] {
                return Err(SchedError::Structural(format!(
                    "op {op} appears in more than one queue position"
                )));
            }
            placed[op] = true;
            if sol.assignment[op] != Some(machine) {
                return Err(SchedError::Structural(format!(
                    "op {op} queued on machine {machine} but assigned to {:?}",
                    sol.assignment[op]
                )));
            }
            if instance.compat_weight(op, machine).is_none() {
                return Err(SchedError::Structural(format!(
                    "op {op} assigned to incompatible machine {machine}"
                )));
            }
        }
    }
    for op in 0..instance.n_ops() {
        if sol.assignment[op].is_some() && !placed[op] {
            return Err(SchedError::Structural(format!(
                "op {op} assigned but missing from its machine order"
            )));
        }
    }
    Ok(())
}

/// Adjacency of the combined precedence digraph over assigned ops:
/// job-predecessor -> op (when the predecessor is assigned) and
/// queue-predecessor -> op.
fn precedence_edges(sol: &CandidateSolution, instance: &FjspInstance) -> Vec<Vec<usize>> {
    let mut succ = vec![Vec::new(); instance.n_ops()];
    for op in 0..instance.n_ops() {
        if sol.assignment[op].is_none() {
            continue;
        }
        if let Some(pred) = instance.job_predecessor(op) {
            if sol.assignment[pred].is_some() {
                succ[pred].push(op);
            }
        }
    }
    for queue in &sol.order {
        for pair in queue.windows(2) {
            succ[pair[0]].push(pair[1]);
        }
    }
    succ
}

/// Finds a cycle in the precedence digraph, if any, as a list of op ids.
fn find_cycle(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let n = succ.len();
    let mut color = vec![WHITE; n];
    let mut parent = vec![usize::MAX; n];
    // Iterative DFS; a back edge to a GRAY node closes a cycle.
    for root in 0..n {
        if color[root] != WHITE {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = GRAY;
        while let Some(&mut (u, ref mut i)) = stack.last_mut() {
            if *i < succ[u].len() {
                let v = succ[u][*i];
                *i += 1;
                match color[v] {
                    WHITE => {
                        color[v] = GRAY;
                        parent[v] = u;
                        stack.push((v, 0));
                    }
                    GRAY => {
                        let mut cycle = vec![v];
                        let mut w = u;
                        while w != v {
                            cycle.push(w);
                            w = parent[w];
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[u] = BLACK;
                stack.pop();
            }
        }
    }
    None
}

/// True iff the partial solution is free of gridlock, i.e. the combined
/// job-precedence/queue-order digraph over assigned ops is acyclic.
pub fn is_feasible(sol: &CandidateSolution, instance: &FjspInstance) -> Result<bool, SchedError> {
    check_consistent(sol, instance)?;
    Ok(find_cycle(&precedence_edges(sol, instance)).is_none())
}

/// Semi-active start/finish times over the assigned ops of a consistent
/// (possibly partial) solution. Unassigned ops keep start = finish = 0.
fn semi_active_times(
    sol: &CandidateSolution,
    instance: &FjspInstance,
) -> Result<(Vec<Tick>, Vec<Tick>), SchedError> {
    let succ = precedence_edges(sol, instance);
    let n = instance.n_ops();
    let mut indegree = vec![0usize; n];
    for edges in &succ {
        for &v in edges {
            indegree[v] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n)
        .filter(|&v| indegree[v] == 0 && sol.assignment[v].is_some())
        .collect();
    let mut start = vec![0 as Tick; n];
    let mut finish = vec![0 as Tick; n];
    let mut done = 0usize;
    let assigned = sol.assignment.iter().filter(|a| a.is_some()).count();
    while let Some(u) = ready.pop() {
        done += 1;
        let machine = sol.assignment[u].unwrap();
        let dur = instance
            .effective_duration(u, machine)
            .expect("consistency checked");
        finish[u] = start[u] + dur;
        for &v in &succ[u] {
            start[v] = start[v].max(finish[u]);
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(v);
            }
        }
    }
    if done != assigned {
        let cycle = find_cycle(&succ).expect("unprocessed ops imply a cycle");
        return Err(SchedError::Infeasible { cycle });
    }
    Ok((start, finish))
}

/// Semi-active decoding: every op starts as early as its job predecessor
/// and queue predecessor allow. Returns the full schedule with makespan.
pub fn decode(sol: &CandidateSolution, instance: &FjspInstance) -> Result<Schedule, SchedError> {
    check_consistent(sol, instance)?;
    if let Some(op) = sol.assignment.iter().position(|a| a.is_none()) {
        return Err(SchedError::Incomplete(op));
    }
    let (start, finish) = semi_active_times(sol, instance)?;
    let makespan = finish.iter().copied().max().unwrap_or(0);
    Ok(Schedule {
        start,
        finish,
        makespan,
    })
}

/// Lower bound on the optimal makespan: the larger of
/// - the job-chain bound, max over jobs of the sum of per-op minimum
///   effective durations, and
/// - the machine-load bound, `ceil(total minimum work / n_machines)`.
pub fn makespan_lower_bound(instance: &FjspInstance) -> Tick {
    let job_bound = instance
        .jobs
        .iter()
        .map(|chain| {
            chain
                .iter()
                .map(|&op| instance.min_effective_duration(op))
                .sum::<Tick>()
        })
        .max()
        .unwrap_or(0);
    let total: Tick = (0..instance.n_ops())
        .map(|op| instance.min_effective_duration(op))
        .sum();
    let load_bound = total.div_ceil(instance.n_machines as Tick);
    job_bound.max(load_bound)
}

// --- file formats ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    assignment: BTreeMap<usize, usize>,
    order: BTreeMap<usize, Vec<usize>>,
}

/// Solution JSON: `{assignment: {op: machine}, order: {machine: [ops]}}`.
pub fn solution_to_json(sol: &CandidateSolution) -> String {
    let file = SolutionFile {
        assignment: sol
            .assignment
            .iter()
            .enumerate()
            .filter_map(|(op, m)| m.map(|m| (op, m)))
            .collect(),
        order: sol
            .order
            .iter()
            .enumerate()
            .map(|(m, q)| (m, q.clone()))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("solution serialization");
    s.push('\n');
    s
}

/// Parses a solution file against an instance, restoring dense layout.
pub fn solution_from_json(s: &str, instance: &FjspInstance) -> Result<CandidateSolution, SchedError> {
    let file: SolutionFile = serde_json::from_str(s)?;
    let mut sol = CandidateSolution::empty(instance);
    for (op, machine) in file.assignment {
        if op >= instance.n_ops() {
            return Err(SchedError::Structural(format!("unknown op {op}")));
        }
        sol.assignment[op] = Some(machine);
    }
    for (machine, queue) in file.order {
        if machine >= instance.n_machines {
            return Err(SchedError::Structural(format!("unknown machine {machine}")));
        }
        sol.order[machine] = queue;
    }
    check_consistent(&sol, instance)?;
    Ok(sol)
}

pub fn save_solution(sol: &CandidateSolution, path: &Path) -> Result<(), SchedError> {
    fs::write(path, solution_to_json(sol))?;
    Ok(())
}

pub fn load_solution(path: &Path, instance: &FjspInstance) -> Result<CandidateSolution, SchedError> {
    solution_from_json(&fs::read_to_string(path)?, instance)
}

/// Schedule CSV rows: `op, machine, start, finish`.
pub fn schedule_to_csv(schedule: &Schedule, sol: &CandidateSolution) -> String {
    let mut out = String::from("op,machine,start,finish\n");
    for op in 0..schedule.start.len() {
        let machine = sol.assignment[op].expect("schedule implies complete solution");
        out.push_str(&format!(
            "{op},{machine},{},{}\n",
            schedule.start[op], schedule.finish[op]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, GeneratorSpec};
    use proptest::prelude::*;

    /// 2 machines; J0 = o0 -> o1, J1 = o2; bases o0=2, o1=3, o2=2;
    /// weights 1.0 except (o0, M1) runs at weight 2.0 (duration 4);
    /// o1 is compatible with M1 only.
    fn i1() -> FjspInstance {
        FjspInstance::new(
            2,
            vec![vec![0, 1], vec![2]],
            vec![2, 3, 2],
            vec![
                (0, 0, 1.0),
                (0, 1, 2.0),
                (1, 1, 1.0),
                (2, 0, 1.0),
                (2, 1, 1.0),
            ],
        )
        .unwrap()
    }

    fn solution(instance: &FjspInstance, parts: &[(usize, usize)]) -> CandidateSolution {
        // parts: (op, machine) appended in the given order.
        let mut sol = CandidateSolution::empty(instance);
        for &(op, machine) in parts {
            sol.assignment[op] = Some(machine);
            sol.order[machine].push(op);
        }
        sol
    }

    #[test]
    fn empty_solution_is_feasible() {
        let inst = i1();
        assert!(is_feasible(&CandidateSolution::empty(&inst), &inst).unwrap());
    }

    #[test]
    fn queue_against_job_order_is_gridlock() {
        let inst = i1();
        // o1 before o0 on M1: o1 waits on o0 via the job edge, o0 waits on o1
        // via the queue edge.
        let sol = solution(&inst, &[(1, 1), (0, 1)]);
        assert!(!is_feasible(&sol, &inst).unwrap());
    }

    #[test]
    fn consistent_partial_is_feasible() {
        let inst = i1();
        let sol = solution(&inst, &[(0, 0), (2, 1), (1, 1)]);
        assert!(is_feasible(&sol, &inst).unwrap());
    }

    #[test]
    fn inconsistent_solution_is_structural_error() {
        let inst = i1();
        let mut sol = solution(&inst, &[(0, 0)]);
        sol.order[1].push(0); // queued twice
        assert!(matches!(
            is_feasible(&sol, &inst),
            Err(SchedError::Structural(_))
        ));
        // incompatible machine
        let bad = solution(&inst, &[(1, 0)]);
        assert!(matches!(
            is_feasible(&bad, &inst),
            Err(SchedError::Structural(_))
        ));
    }

    #[test]
    fn decode_i1_best() {
        let inst = i1();
        let sol = solution(&inst, &[(0, 0), (2, 1), (1, 1)]);
        let sched = decode(&sol, &inst).unwrap();
        assert_eq!(sched.start, vec![0, 2, 0]);
        assert_eq!(sched.makespan, 5);
    }

    #[test]
    fn decode_i1_slow_machine() {
        let inst = i1();
        let sol = solution(&inst, &[(0, 1), (1, 1), (2, 0)]);
        let sched = decode(&sol, &inst).unwrap();
        assert_eq!((sched.start[0], sched.finish[0]), (0, 4));
        assert_eq!((sched.start[1], sched.finish[1]), (4, 7));
        assert_eq!((sched.start[2], sched.finish[2]), (0, 2));
        assert_eq!(sched.makespan, 7);
    }

    #[test]
    fn decode_single_op_is_its_duration() {
        let inst = FjspInstance::new(1, vec![vec![0]], vec![4], vec![(0, 0, 1.0)]).unwrap();
        let sol = solution(&inst, &[(0, 0)]);
        assert_eq!(decode(&sol, &inst).unwrap().makespan, 4);
    }

    #[test]
    fn decode_infeasible_reports_cycle() {
        let inst = i1();
        let sol = solution(&inst, &[(1, 1), (0, 1), (2, 0)]);
        match decode(&sol, &inst) {
            Err(SchedError::Infeasible { cycle }) => {
                let mut c = cycle.clone();
                c.sort_unstable();
                assert_eq!(c, vec![0, 1]);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn decode_incomplete_errors() {
        let inst = i1();
        let sol = solution(&inst, &[(0, 0)]);
        assert!(matches!(decode(&sol, &inst), Err(SchedError::Incomplete(_))));
    }

    #[test]
    fn lower_bound_i1() {
        assert_eq!(makespan_lower_bound(&i1()), 5);
    }

    #[test]
    fn lower_bound_serial_machine() {
        let inst = FjspInstance::new(
            1,
            vec![vec![0], vec![1]],
            vec![2, 3],
            vec![(0, 0, 1.0), (1, 0, 1.0)],
        )
        .unwrap();
        assert_eq!(makespan_lower_bound(&inst), 5);
    }

    #[test]
    fn lower_bound_single_op() {
        let inst = FjspInstance::new(2, vec![vec![0]], vec![7], vec![(0, 0, 1.0), (0, 1, 2.0)])
            .unwrap();
        assert_eq!(makespan_lower_bound(&inst), 7);
    }

    #[test]
    fn solution_round_trip() {
        let inst = i1();
        let sol = solution(&inst, &[(0, 0), (2, 1), (1, 1)]);
        let back = solution_from_json(&solution_to_json(&sol), &inst).unwrap();
        assert_eq!(back, sol);
    }

    #[test]
    fn schedule_csv_shape() {
        let inst = i1();
        let sol = solution(&inst, &[(0, 0), (2, 1), (1, 1)]);
        let sched = decode(&sol, &inst).unwrap();
        let csv = schedule_to_csv(&sched, &sol);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("op,machine,start,finish\n"));
        assert!(csv.contains("1,1,2,5"));
    }

    proptest! {
        /// Appending one more op to any machine order never decreases makespan.
        #[test]
        fn makespan_monotone_under_extension(seed in 0u64..200) {
            let inst = generate(&GeneratorSpec::new(3, 2), seed).unwrap();
            // Build a feasible full solution by ready-op dispatch order.
            let mut rng_state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            let mut next = || {
                rng_state ^= rng_state << 13;
                rng_state ^= rng_state >> 7;
                rng_state ^= rng_state << 17;
                rng_state
            };
            let mut sol = CandidateSolution::empty(&inst);
            let mut scheduled = vec![false; inst.n_ops()];
            let mut appended = Vec::new();
            for _ in 0..inst.n_ops() {
                let ready: Vec<usize> = (0..inst.n_ops())
                    .filter(|&o| !scheduled[o]
                        && inst.job_predecessor(o).map_or(true, |p| scheduled[p]))
                    .collect();
                let op = ready[(next() as usize) % ready.len()];
                let edges = inst.compat_of(op);
                let m = edges[(next() as usize) % edges.len()].machine;
                scheduled[op] = true;
                sol.assignment[op] = Some(m);
                sol.order[m].push(op);
                appended.push(op);
            }
            // Appending each next op never decreases the partial makespan.
            let mut prev = 0;
            let mut partial = CandidateSolution::empty(&inst);
            for &op in &appended {
                let m = sol.assignment[op].unwrap();
                partial.assignment[op] = Some(m);
                partial.order[m].push(op);
                prop_assert!(is_feasible(&partial, &inst).unwrap());
                let (_, finish) = semi_active_times(&partial, &inst).unwrap();
                let ms = finish.iter().copied().max().unwrap();
                prop_assert!(ms >= prev, "partial makespan dropped: {} -> {}", prev, ms);
                prev = ms;
            }
            let ms = decode(&sol, &inst).unwrap().makespan;
            prop_assert_eq!(ms, prev);
        }
    }
}
