//! FIFO dispatch: event-driven, ready-ops-only assignment. Never gridlocks.

use crate::instance::FjspInstance;
use crate::sched::CandidateSolution;
use crate::Tick;

/// Repeatedly, at the earliest time when a machine is free and at least one
/// op is ready (job predecessor finished, not yet assigned), assigns the
/// ready op with the earliest release time (tie: lowest op id) to the free
/// compatible machine with the lowest id.
///
/// Only ready ops are ever assigned, so the resulting queues are acyclic by
/// construction. Deterministic: no randomness anywhere.
pub fn fifo_solve(instance: &FjspInstance) -> CandidateSolution {
    let n = instance.n_ops();
    let mut sol = CandidateSolution::empty(instance);
    // Release time: finish of the job predecessor; known once it is scheduled.
    let mut release: Vec<Option<Tick>> = (0..n)
        .map(|op| {
            if instance.job_predecessor(op).is_none() {
                Some(0)
            } else {
                None
            }
        })
        .collect();
    let mut machine_free = vec![0 as Tick; instance.n_machines];
    let mut assigned = 0usize;
    let mut now: Tick = 0;

    while assigned < n {
        loop {
            // Ready op with a currently free compatible machine, earliest
            // release first (ties by op id, then lowest machine id).
            let mut pick: Option<(Tick, usize, usize)> = None;
            for op in 0..n {
                if sol.assignment[op].is_some() {
                    continue;
                }
                let rel = match release[op] {
                    Some(r) if r <= now => r,
                    _ => continue,
                };
                let machine = instance
                    .compat_of(op)
                    .iter()
                    .map(|e| e.machine)
                    .find(|&m| machine_free[m] <= now);
                if let Some(m) = machine {
                    if pick.map_or(true, |(r, o, _)| (rel, op) < (r, o)) {
                        pick = Some((rel, op, m));
                    }
                }
            }
            let Some((_, op, machine)) = pick else { break };
            let finish = now + instance.effective_duration(op, machine).unwrap();
            sol.assignment[op] = Some(machine);
            sol.order[machine].push(op);
            machine_free[machine] = finish;
            assigned += 1;
            let meta = &instance.operations[op];
            if let Some(&succ) = instance.jobs[meta.job].get(meta.pos_in_job + 1) {
                release[succ] = Some(finish);
            }
        }
        if assigned < n {
            let next = machine_free
                .iter()
                .copied()
                .filter(|&t| t > now)
                .chain(
                    (0..n)
                        .filter(|&op| sol.assignment[op].is_none())
                        .filter_map(|op| release[op])
                        .filter(|&t| t > now),
                )
                .min()
                .expect("dispatch must always have a next event");
            now = next;
        }
    }
    sol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, FjspInstance, GeneratorSpec};
    use crate::sched::{decode, is_feasible};

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

    #[test]
    fn fifo_is_feasible_on_i1() {
        let inst = i1();
        let sol = fifo_solve(&inst);
        assert!(sol.is_complete());
        assert!(is_feasible(&sol, &inst).unwrap());
        decode(&sol, &inst).unwrap();
    }

    #[test]
    fn fifo_serial_chain_is_optimal() {
        let inst = FjspInstance::new(
            1,
            vec![vec![0, 1, 2]],
            vec![2, 3, 4],
            vec![(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)],
        )
        .unwrap();
        let sol = fifo_solve(&inst);
        assert_eq!(decode(&sol, &inst).unwrap().makespan, 9);
    }

    #[test]
    fn fifo_always_feasible_on_random_instances() {
        for seed in 0..100 {
            let inst = generate(&GeneratorSpec::new(4, 3), seed).unwrap();
            let sol = fifo_solve(&inst);
            assert!(is_feasible(&sol, &inst).unwrap());
            decode(&sol, &inst).unwrap();
        }
    }

    #[test]
    fn fifo_is_deterministic() {
        let inst = generate(&GeneratorSpec::new(5, 3), 9).unwrap();
        assert_eq!(fifo_solve(&inst), fifo_solve(&inst));
    }
}
