//! Debug probe: dump Q-values of a trained net on a fresh instance.

use fjsp_core::baselines::{bnb_solve, BnbConfig};
use fjsp_core::env;
use fjsp_core::instance::{generate, GeneratorSpec};
use fjsp_core::neural::{encode_state, load_network};
use fjsp_core::qlearn::rollout;
use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let net = load_network(std::path::Path::new(&args[1])).unwrap();
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(123);
    let spec = GeneratorSpec::new(6, 3);
    let inst = generate(&spec, seed).unwrap();

    let state = env::reset(&inst);
    let g = encode_state(&inst, &state);
    let q = net.forward(&g).unwrap();
    println!("reset-state Q values (op, machine, eff_duration, q):");
    let mut rows: Vec<_> = g
        .candidate_mask
        .iter()
        .zip(&q)
        .map(|(&(o, m), &qv)| (o, m, inst.effective_duration(o, m).unwrap(), qv))
        .collect();
    rows.sort_by(|a, b| b.3.partial_cmp(&a.3).unwrap());
    for (o, m, eff, qv) in rows {
        let pos = inst.operations[o].pos_in_job;
        println!("  op {o:2} (pos {pos}) -> m{m}  eff {eff:2}  q {qv:8.4}");
    }

    // Greedy episode + comparison.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (_, stats) = rollout(&net, &inst, 0.0, 1.0, &mut rng).unwrap();
    let oracle = bnb_solve(&inst, &BnbConfig::default());
    println!(
        "greedy: success={} makespan={:?} clock={}  C*={} (proved {})",
        stats.success, stats.makespan, stats.length, oracle.makespan, oracle.proved
    );
    let mut q_spread = 0.0;
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    for v in &q {
        q_spread += (v - mean).powi(2);
    }
    println!(
        "q mean {:.4} std {:.4} min {:.4} max {:.4}",
        mean,
        (q_spread / q.len() as f64).sqrt(),
        q.iter().cloned().fold(f64::INFINITY, f64::min),
        q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
}
