//! Simulated annealing over (machine assignment, queue order) space,
//! seeded from the FIFO solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::FjspInstance;
use crate::sched::{decode, is_feasible, CandidateSolution};
use crate::Tick;

use super::fifo_solve;

/// Annealing parameters. All values are repo defaults; none are dictated by
/// the problem itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub initial_temp: f64,
    /// Geometric cooling factor per step, in (0, 1).
    pub cooling_rate: f64,
    pub steps: usize,
    /// Probabilities of (reassign-machine, swap-adjacent-in-queue) moves.
    pub move_probs: (f64, f64),
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            initial_temp: 10.0,
            cooling_rate: 0.9995,
            steps: 20_000,
            move_probs: (0.5, 0.5),
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SaError {
    #[error("invalid SA config: {0}")]
    Config(String),
}

/// One row of the annealing trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTracePoint {
    pub step: usize,
    pub current: Tick,
    pub best: Tick,
    pub temperature: f64,
}

/// Anneals from the FIFO seed. Moves that produce a gridlocked (cyclic)
/// solution are rejected outright; otherwise the usual Metropolis rule
/// applies on the makespan delta. Returns the best solution seen plus the
/// per-step makespan trace.
pub fn sa_solve(
    instance: &FjspInstance,
    cfg: &SaConfig,
) -> Result<(CandidateSolution, Vec<SaTracePoint>), SaError> {
    if !(cfg.initial_temp > 0.0) {
        return Err(SaError::Config("initial_temp must be positive".into()));
    }
    if !(cfg.cooling_rate > 0.0 && cfg.cooling_rate < 1.0) {
        return Err(SaError::Config("cooling_rate must lie in (0,1)".into()));
    }
    let (p_reassign, p_swap) = cfg.move_probs;
    if p_reassign < 0.0 || p_swap < 0.0 || (p_reassign + p_swap - 1.0).abs() > 1e-9 {
        return Err(SaError::Config("move probabilities must sum to 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = fifo_solve(instance);
    let mut current_ms = decode(&current, instance)
        .expect("FIFO solutions are always feasible")
        .makespan;
    let mut best = current.clone();
    let mut best_ms = current_ms;
    let mut temperature = cfg.initial_temp;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let proposal = if rng.random::<f64>() < p_reassign {
            propose_reassign(instance, &current, &mut rng)
        } else {
            propose_swap(&current, &mut rng)
        };
        if let Some(candidate) = proposal {
            if is_feasible(&candidate, instance).expect("moves preserve consistency") {
                let ms = decode(&candidate, instance).unwrap().makespan;
                let delta = ms as f64 - current_ms as f64;
                if delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp() {
                    current = candidate;
                    current_ms = ms;
                    if current_ms < best_ms {
                        best = current.clone();
                        best_ms = current_ms;
                    }
                }
            }
        }
        trace.push(SaTracePoint {
            step,
            current: current_ms,
            best: best_ms,
            temperature,
        });
        temperature *= cfg.cooling_rate;
    }
    Ok((best, trace))
}

/// Moves a random op (with at least one alternative machine) to another
/// compatible machine, at a uniformly random queue position.
fn propose_reassign(
    instance: &FjspInstance,
    sol: &CandidateSolution,
    rng: &mut ChaCha8Rng,
) -> Option<CandidateSolution> {
    let movable: Vec<usize> = (0..instance.n_ops())
        .filter(|&op| instance.compat_of(op).len() >= 2)
        .collect();
    if movable.is_empty() {
        return None;
    }
    let op = movable[rng.random_range(0..movable.len())];
    let from = sol.assignment[op].expect("SA operates on complete solutions");
    let alternatives: Vec<usize> = instance
        .compat_of(op)
        .iter()
        .map(|e| e.machine)
        .filter(|&m| m != from)
        .collect();
    let to = alternatives[rng.random_range(0..alternatives.len())];
    let mut next = sol.clone();
    next.order[from].retain(|&o| o != op);
    let pos = rng.random_range(0..=next.order[to].len());
    next.order[to].insert(pos, op);
    next.assignment[op] = Some(to);
    Some(next)
}

/// Swaps two adjacent ops in one machine queue.
fn propose_swap(sol: &CandidateSolution, rng: &mut ChaCha8Rng) -> Option<CandidateSolution> {
    let machines: Vec<usize> = (0..sol.order.len())
        .filter(|&m| sol.order[m].len() >= 2)
        .collect();
    if machines.is_empty() {
        return None;
    }
    let m = machines[rng.random_range(0..machines.len())];
    let i = rng.random_range(0..sol.order[m].len() - 1);
    let mut next = sol.clone();
    next.order[m].swap(i, i + 1);
    Some(next)
}

/// Trace CSV: `step, current, best, temperature`.
pub fn sa_trace_to_csv(trace: &[SaTracePoint]) -> String {
    let mut out = String::from("step,current,best,temperature\n");
    for p in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.step, p.current, p.best, p.temperature
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, GeneratorSpec};

    #[test]
    fn zero_steps_returns_fifo_seed() {
        let inst = generate(&GeneratorSpec::new(4, 2), 3).unwrap();
        let cfg = SaConfig {
            steps: 0,
            ..SaConfig::default()
        };
        let (sol, trace) = sa_solve(&inst, &cfg).unwrap();
        assert_eq!(sol, fifo_solve(&inst));
        assert!(trace.is_empty());
    }

    #[test]
    fn best_trace_is_non_increasing() {
        let inst = generate(&GeneratorSpec::new(5, 3), 11).unwrap();
        let cfg = SaConfig {
            steps: 2000,
            seed: 5,
            ..SaConfig::default()
        };
        let (_, trace) = sa_solve(&inst, &cfg).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1].best <= pair[0].best);
        }
    }

    #[test]
    fn never_worse_than_fifo_seed() {
        for seed in 0..20 {
            let inst = generate(&GeneratorSpec::new(4, 3), seed).unwrap();
            let fifo_ms = decode(&fifo_solve(&inst), &inst).unwrap().makespan;
            let cfg = SaConfig {
                steps: 500,
                seed,
                ..SaConfig::default()
            };
            let (sol, _) = sa_solve(&inst, &cfg).unwrap();
            assert!(is_feasible(&sol, &inst).unwrap());
            assert!(decode(&sol, &inst).unwrap().makespan <= fifo_ms);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let inst = generate(&GeneratorSpec::new(2, 2), 0).unwrap();
        let cfg = SaConfig {
            move_probs: (0.7, 0.6),
            ..SaConfig::default()
        };
        assert!(matches!(sa_solve(&inst, &cfg), Err(SaError::Config(_))));
        let cfg = SaConfig {
            cooling_rate: 1.5,
            ..SaConfig::default()
        };
        assert!(sa_solve(&inst, &cfg).is_err());
    }
}
