//! The FJSP-as-MDP environment: sequential assignment actions, tick-based
//! processing, unit completion rewards, a per-tick penalty of -0.1, and
//! gridlock termination.
//!
//! Decision steps and time steps are bound 1:1. Each step optionally
//! appends one (op, machine) assignment, then advances the clock a single
//! tick: every machine whose head op is ready processes it for one tick,
//! and ops reaching their effective duration complete and leave the queue.
//! Once all ops are assigned the environment auto-advances (WAIT) until
//! termination; WAIT is never a choice while assignable ops remain.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::instance::FjspInstance;
use crate::sched::{self, CandidateSolution, Schedule};
use crate::Tick;

/// Assign one unassigned operation to the end of a machine queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Action {
    pub op: usize,
    pub machine: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpStatus {
    Unassigned,
    Queued,
    Processing,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    Gridlock,
    Horizon,
}

/// How the environment decides that a rollout is gridlocked.
///
/// The two rules terminate the same episodes; `Cycle` fires at the
/// assignment step that forms the cycle, `NoProgress` only after full
/// assignment when a tick passes without any op advancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridlockDetection {
    #[default]
    Cycle,
    NoProgress,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub termination: Option<Termination>,
    /// Ops that finished during this tick.
    pub completed_this_tick: usize,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action ({op}, {machine}): {reason}")]
    InvalidAction {
        op: usize,
        machine: usize,
        reason: String,
    },
    #[error("WAIT is only allowed once every op is assigned")]
    WaitWithActionsAvailable,
    #[error("episode already terminated")]
    EpisodeFinished,
    #[error("cannot extract a solution: op {0} is unassigned")]
    IncompleteAssignment(usize),
    #[error("simulation gridlocked: no machine can progress")]
    SimulationGridlock,
    #[error(transparent)]
    Sched(#[from] sched::SchedError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Full MDP state of one rollout. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingState {
    pub clock: Tick,
    /// Per-machine assignment order; completed ops form a prefix.
    pub machine_order: Vec<Vec<usize>>,
    /// Index of the first non-completed op per machine (the queue head).
    queue_head: Vec<usize>,
    pub op_status: Vec<OpStatus>,
    pub op_progress: Vec<Tick>,
    pub assignment: Vec<Option<usize>>,
    n_unassigned: usize,
    n_completed: usize,
    horizon: Tick,
    termination: Option<Termination>,
}

impl SchedulingState {
    /// Ops currently in `machine`'s queue (queued or processing), in order.
    pub fn queue(&self, machine: usize) -> &[usize] {
        &self.machine_order[machine][self.queue_head[machine]..]
    }

    pub fn all_assigned(&self) -> bool {
        self.n_unassigned == 0
    }

    pub fn done(&self) -> bool {
        self.termination.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// The partial solution accumulated so far (assignment order per machine).
    pub fn partial_solution(&self) -> CandidateSolution {
        CandidateSolution {
            assignment: self.assignment.clone(),
            order: self.machine_order.clone(),
        }
    }
}

/// Initial state: clock 0, all queues empty, all ops unassigned.
pub fn reset(instance: &FjspInstance) -> SchedulingState {
    let n = instance.n_ops();
    let max_total: Tick = (0..n).map(|op| instance.max_effective_duration(op)).sum();
    SchedulingState {
        clock: 0,
        machine_order: vec![Vec::new(); instance.n_machines],
        queue_head: vec![0; instance.n_machines],
        op_status: vec![OpStatus::Unassigned; n],
        op_progress: vec![0; n],
        assignment: vec![None; n],
        n_unassigned: n,
        n_completed: 0,
        // Generous upper bound; only pathological policies ever reach it.
        horizon: n as Tick + max_total + 1,
        termination: None,
    }
}

/// All (unassigned op, compatible machine) pairs, ordered by (op, machine).
/// Empty iff every op is assigned.
pub fn valid_actions(instance: &FjspInstance, state: &SchedulingState) -> Vec<Action> {
    let mut actions = Vec::new();
    for op in 0..instance.n_ops() {
        if state.op_status[op] == OpStatus::Unassigned {
            for e in instance.compat_of(op) {
                actions.push(Action {
                    op,
                    machine: e.machine,
                });
            }
        }
    }
    actions
}

/// Advances one step with the default cycle-based gridlock detection.
pub fn step(
    instance: &FjspInstance,
    state: &mut SchedulingState,
    action: Option<Action>,
) -> Result<StepOutcome, EnvError> {
    step_with_mode(instance, state, action, GridlockDetection::Cycle)
}

/// Advances one step: apply the action (None = WAIT, valid only after full
/// assignment), process one tick on every machine whose head op is ready,
/// then check termination under the chosen gridlock rule.
pub fn step_with_mode(
    instance: &FjspInstance,
    state: &mut SchedulingState,
    action: Option<Action>,
    mode: GridlockDetection,
) -> Result<StepOutcome, EnvError> {
    if state.done() {
        return Err(EnvError::EpisodeFinished);
    }
    match action {
        Some(Action { op, machine }) => {
            if op >= instance.n_ops() || state.op_status[op] != OpStatus::Unassigned {
                return Err(EnvError::InvalidAction {
                    op,
                    machine,
                    reason: "op is not unassigned".into(),
                });
            }
            if instance.compat_weight(op, machine).is_none() {
                return Err(EnvError::InvalidAction {
                    op,
                    machine,
                    reason: "no compatibility edge".into(),
                });
            }
            state.assignment[op] = Some(machine);
            state.machine_order[machine].push(op);
            state.op_status[op] = OpStatus::Queued;
            state.n_unassigned -= 1;
        }
        None => {
            if !state.all_assigned() {
                return Err(EnvError::WaitWithActionsAvailable);
            }
        }
    }

    // Collect the heads that may process, judged on statuses at tick start:
    // a completion during this tick must not unblock a successor until the
    // next tick (its finish time is the end of this tick).
    let mut progressing: Vec<(usize, usize)> = Vec::new(); // (machine, op)
    for machine in 0..instance.n_machines {
        let head_idx = state.queue_head[machine];
        if head_idx >= state.machine_order[machine].len() {
            continue;
        }
        let op = state.machine_order[machine][head_idx];
        let ready = instance
            .job_predecessor(op)
            .map_or(true, |p| state.op_status[p] == OpStatus::Completed);
        if ready {
            progressing.push((machine, op));
        }
    }
    let mut completed_this_tick = 0usize;
    for &(machine, op) in &progressing {
        state.op_progress[op] += 1;
        let dur = instance
            .effective_duration(op, machine)
            .expect("assignment respects compatibility");
        if state.op_progress[op] == dur {
            state.op_status[op] = OpStatus::Completed;
            state.queue_head[machine] += 1;
            state.n_completed += 1;
            completed_this_tick += 1;
        } else {
            state.op_status[op] = OpStatus::Processing;
        }
    }
    state.clock += 1;

    let reward = completed_this_tick as f64 - 0.1;
    let termination = if state.n_completed == instance.n_ops() {
        Some(Termination::Completed)
    } else {
        let gridlocked = match mode {
            // A cycle can only appear when an assignment is appended.
            GridlockDetection::Cycle => {
                action.is_some()
                    && !sched::is_feasible(&state.partial_solution(), instance)
                        .expect("env state is structurally consistent")
            }
            GridlockDetection::NoProgress => {
                state.all_assigned() && progressing.is_empty()
            }
        };
        if gridlocked {
            Some(Termination::Gridlock)
        } else if state.clock >= state.horizon {
            Some(Termination::Horizon)
        } else {
            None
        }
    };
    state.termination = termination;
    Ok(StepOutcome {
        reward,
        done: termination.is_some(),
        termination,
        completed_this_tick,
    })
}

/// The proposed solution of a fully assigned state: the machine assignment
/// plus per-machine queues in chronological assignment order.
pub fn extract_solution(state: &SchedulingState) -> Result<CandidateSolution, EnvError> {
    if let Some(op) = state.assignment.iter().position(|a| a.is_none()) {
        return Err(EnvError::IncompleteAssignment(op));
    }
    Ok(state.partial_solution())
}

/// Event simulation of a complete solution with every op queued upfront
/// (no assignment steps): ticks until completion and reports per-op start
/// and finish times. This is the tick-level counterpart of
/// [`sched::decode`]; the two must agree on every feasible solution.
pub fn simulate_assigned(
    instance: &FjspInstance,
    solution: &CandidateSolution,
) -> Result<Schedule, EnvError> {
    let mut state = reset(instance);
    for (machine, queue) in solution.order.iter().enumerate() {
        for &op in queue {
            if state.op_status[op] != OpStatus::Unassigned {
                return Err(EnvError::InvalidAction {
                    op,
                    machine,
                    reason: "op queued twice".into(),
                });
            }
            if solution.assignment[op] != Some(machine) {
                return Err(EnvError::InvalidAction {
                    op,
                    machine,
                    reason: "queue disagrees with assignment".into(),
                });
            }
            if instance.compat_weight(op, machine).is_none() {
                return Err(EnvError::InvalidAction {
                    op,
                    machine,
                    reason: "no compatibility edge".into(),
                });
            }
            state.assignment[op] = Some(machine);
            state.machine_order[machine].push(op);
            state.op_status[op] = OpStatus::Queued;
            state.n_unassigned -= 1;
        }
    }
    if let Some(op) = state.assignment.iter().position(|a| a.is_none()) {
        return Err(EnvError::IncompleteAssignment(op));
    }

    let n = instance.n_ops();
    let mut start = vec![0 as Tick; n];
    let mut finish = vec![0 as Tick; n];
    loop {
        let before: Vec<Tick> = state.op_progress.clone();
        let tick_start = state.clock;
        let outcome = step_with_mode(instance, &mut state, None, GridlockDetection::NoProgress)?;
        for op in 0..n {
            if before[op] == 0 && state.op_progress[op] == 1 {
                start[op] = tick_start;
            }
            if state.op_status[op] == OpStatus::Completed && before[op] != state.op_progress[op] {
                finish[op] = state.clock;
            }
        }
        match outcome.termination {
            Some(Termination::Completed) => {
                return Ok(Schedule {
                    start,
                    finish,
                    makespan: state.clock,
                });
            }
            Some(_) => return Err(EnvError::SimulationGridlock),
            None => {}
        }
    }
}

/// One row of the debug trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: Tick,
    /// None for auto-wait ticks.
    pub action: Option<Action>,
    pub reward: f64,
    pub n_completed: usize,
}

/// Trajectory CSV: `t, action_op, action_machine, reward, n_completed`;
/// action columns are empty on WAIT ticks.
pub fn trajectory_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("t,action_op,action_machine,reward,n_completed\n");
    for r in rows {
        let (op, machine) = match r.action {
            Some(a) => (a.op.to_string(), a.machine.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t, op, machine, r.reward, r.n_completed
        ));
    }
    out
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<(), EnvError> {
    fs::write(path, trajectory_to_csv(rows))?;
    Ok(())
}
