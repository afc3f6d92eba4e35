//! Debug probe: overfit DQN on one fixed instance to separate
//! "algorithm broken" from "generalization hard".

use fjsp_core::baselines::{bnb_solve, BnbConfig};
use fjsp_core::instance::{generate, GeneratorSpec};
use fjsp_core::neural::{AdamConfig, AdamState, Params, QNetwork};
use fjsp_core::qlearn::{rollout, td_targets, ReplayBuffer, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8e-4);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);
    let inst_seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(123);
    let init_scale: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let sync: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1);

    let spec = GeneratorSpec::new(6, 3);
    let inst = generate(&spec, inst_seed).unwrap();
    let oracle = bnb_solve(&inst, &BnbConfig::default());
    println!("C* = {} (proved {})", oracle.makespan, oracle.proved);

    let mut net = QNetwork::new(16, 2, 0);
    net.params.add_scaled(&net.params.clone(), init_scale - 1.0);
    let mut target = net.clone();
    let mut adam = AdamState::new(16);
    let mut buffer = ReplayBuffer::new(5000);
    let cfg = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for epoch in 0..epochs {
        if epoch % sync == 0 {
            target = net.clone();
        }
        let mut r_sum = 0.0;
        for _ in 0..128 {
            let (ts, stats) = rollout(&net, &inst, 0.1, 1.0, &mut rng).unwrap();
            r_sum += stats.episode_return;
            for t in ts {
                buffer.push(t);
            }
        }
        let mut loss_sum = 0.0;
        for _ in 0..64 {
            let idx = buffer.sample_indices(32, &mut rng);
            let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
            let ys = td_targets(&batch, &target, 1.0).unwrap();
            let mut grads = Params::zeros(16);
            let mut loss = 0.0;
            for (t, &y) in batch.iter().zip(&ys) {
                let trace = net.forward_trace(&t.state).unwrap();
                let err = trace.q_values[t.action_index] - y;
                loss += err * err / 32.0;
                let mut up = vec![0.0; t.state.candidate_mask.len()];
                up[t.action_index] = 2.0 * err / 32.0;
                let g = net.backward(&t.state, &trace, &up).unwrap();
                grads.add_scaled(&g, 1.0);
            }
            loss_sum += loss;
            adam.step(&mut net.params, &grads, &cfg).unwrap();
        }
        if epoch % 10 == 9 || epoch == epochs - 1 {
            let mut erng = ChaCha8Rng::seed_from_u64(99);
            let (_, stats) = rollout(&net, &inst, 0.0, 1.0, &mut erng).unwrap();
            println!(
                "epoch {epoch}: loss {:.4} r_train {:.3} greedy makespan {:?} clock {} gap {:.3}",
                loss_sum / 64.0,
                r_sum / 128.0,
                stats.makespan,
                stats.length,
                stats
                    .makespan
                    .map(|m| m as f64 / oracle.makespan as f64 - 1.0)
                    .unwrap_or(f64::NAN)
            );
        }
    }
}
