use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{self, Action};
use crate::instance::{generate, FjspInstance, GeneratorSpec};

use super::*;

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

/// Random partial rollout state on a small random instance.
fn random_graph(seed: u64) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = GeneratorSpec {
        n_jobs: 1 + (seed as usize % 3),
        n_machines: 2,
        avg_ops_per_job: 2.0,
        drop_fraction: 0.2,
        duration_range: (1, 6),
        weight_range: (0.5, 2.0),
    };
    let instance = generate(&spec, seed).unwrap();
    let mut state = env::reset(&instance);
    let n_steps = rng.random_range(0..=instance.n_ops());
    for _ in 0..n_steps {
        let actions = env::valid_actions(&instance, &state);
        if actions.is_empty() || state.done() {
            break;
        }
        let a = actions[rng.random_range(0..actions.len())];
        env::step(&instance, &mut state, Some(a)).unwrap();
    }
    encode_state(&instance, &state)
}

#[test]
fn parameter_count_at_default_dim() {
    let net = QNetwork::new(DEFAULT_EMBED_DIM, DEFAULT_LOOPS, 0);
    // (7*16 + 16) + (2*16 + 16) + 8 * (16*16)
    assert_eq!(net.n_params(), 2224);
    assert_eq!(net.n_params(), 11 * 16 + 8 * 16 * 16);
}

#[test]
fn zero_network_outputs_zero_q() {
    let net = QNetwork::zeros(8, 2);
    let g = random_graph(3);
    let q = net.forward(&g).unwrap();
    assert!(!q.is_empty());
    assert!(q.iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_deterministic() {
    let net = QNetwork::new(8, 2, 11);
    let g = random_graph(5);
    assert_eq!(net.forward(&g).unwrap(), net.forward(&g).unwrap());
}

#[test]
fn q_values_finite_on_random_graphs() {
    let net = QNetwork::new(16, 2, 1);
    for seed in 0..50 {
        let g = random_graph(seed);
        let q = net.forward(&g).unwrap();
        assert!(q.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn dimension_mismatch_is_structural_error() {
    let net = QNetwork::new(8, 2, 0);
    let mut g = random_graph(1);
    g.op_feats = Matrix::zeros(g.n_ops(), 3);
    assert!(matches!(net.forward(&g), Err(NeuralError::Dimension(_))));
}

/// Relabels ops and machines of a graph, keeping edge positions aligned so
/// outputs can be compared index-by-index.
fn permute_graph(g: &HeteroGraph, op_perm: &[usize], mach_perm: &[usize]) -> HeteroGraph {
    let mut op_feats = Matrix::zeros(g.n_ops(), OP_FEATURES);
    for (old, &new) in op_perm.iter().enumerate() {
        op_feats.row_mut(new).copy_from_slice(g.op_feats.row(old));
    }
    let mut mach_feats = Matrix::zeros(g.n_machines(), MACHINE_FEATURES);
    for (old, &new) in mach_perm.iter().enumerate() {
        mach_feats
            .row_mut(new)
            .copy_from_slice(g.mach_feats.row(old));
    }
    HeteroGraph {
        op_feats,
        mach_feats,
        edges_job: g
            .edges_job
            .iter()
            .map(|&(a, b)| (op_perm[a], op_perm[b]))
            .collect(),
        edges_queue: g
            .edges_queue
            .iter()
            .map(|&(a, b)| (op_perm[a], op_perm[b]))
            .collect(),
        edges_compat: g
            .edges_compat
            .iter()
            .map(|&(o, m, w)| (op_perm[o], mach_perm[m], w))
            .collect(),
        candidate_mask: g
            .candidate_mask
            .iter()
            .map(|&(o, m)| (op_perm[o], mach_perm[m]))
            .collect(),
    }
}

#[test]
fn permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let net = QNetwork::new(16, 2, 4);
    for trial in 0..100 {
        let g = random_graph(trial);
        let mut op_perm: Vec<usize> = (0..g.n_ops()).collect();
        let mut mach_perm: Vec<usize> = (0..g.n_machines()).collect();
        for i in (1..op_perm.len()).rev() {
            op_perm.swap(i, rng.random_range(0..=i));
        }
        for i in (1..mach_perm.len()).rev() {
            mach_perm.swap(i, rng.random_range(0..=i));
        }
        let q = net.forward(&g).unwrap();
        let q_perm = net.forward(&permute_graph(&g, &op_perm, &mach_perm)).unwrap();
        for (a, b) in q.iter().zip(&q_perm) {
            assert!((a - b).abs() <= 1e-9, "trial {trial}: {a} vs {b}");
        }
    }
}

/// Central finite differences against the analytic backward pass.
fn finite_difference_check(net: &QNetwork, g: &HeteroGraph, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = net.forward_trace(g).unwrap();
    let upstream: Vec<f64> = trace
        .q_values
        .iter()
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let analytic = net.backward(g, &trace, &upstream).unwrap();

    let loss = |net: &QNetwork| -> f64 {
        net.forward(g)
            .unwrap()
            .iter()
            .zip(&upstream)
            .map(|(q, u)| q * u)
            .sum()
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    let n_tensors = analytic.named_slices().len();
    for t in 0..n_tensors {
        let len = analytic.named_slices()[t].1.len();
        for i in 0..len {
            let orig = probe.params.named_slices_mut()[t].1[i];
            probe.params.named_slices_mut()[t].1[i] = orig + h;
            let up = loss(&probe);
            probe.params.named_slices_mut()[t].1[i] = orig - h;
            let down = loss(&probe);
            probe.params.named_slices_mut()[t].1[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.named_slices()[t].1[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let net = QNetwork::new(6, 2, 1000 + seed);
        let g = random_graph(seed);
        if g.candidate_mask.is_empty() {
            continue;
        }
        let worst = finite_difference_check(&net, &g, 500 + seed);
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let net = QNetwork::new(8, 2, 2);
    let g = random_graph(7);
    let trace = net.forward_trace(&g).unwrap();
    let grads = net
        .backward(&g, &trace, &vec![0.0; g.candidate_mask.len()])
        .unwrap();
    for (_, s) in grads.named_slices() {
        assert!(s.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn unused_relation_gets_gradient_only_via_self_path() {
    // A single-op instance has no job and no queue edges, so the neighbor
    // weights of those relations can only be zero-gradient.
    let inst = FjspInstance::new(1, vec![vec![0]], vec![3], vec![(0, 0, 1.0)]).unwrap();
    let state = env::reset(&inst);
    let g = encode_state(&inst, &state);
    assert!(g.edges_job.is_empty() && g.edges_queue.is_empty());
    let net = QNetwork::new(8, 2, 3);
    let trace = net.forward_trace(&g).unwrap();
    let grads = net.backward(&g, &trace, &[1.0]).unwrap();
    for r in [Relation::Job, Relation::Queue] {
        let nbr = &grads.relations[r as usize].w_nbr;
        assert!(nbr.data.iter().all(|&v| v == 0.0));
        let selfw = &grads.relations[r as usize].w_self;
        assert!(selfw.data.iter().any(|&v| v != 0.0));
    }
}

// --- encoding ---------------------------------------------------------------

#[test]
fn encode_reset_state_of_i1() {
    let inst = i1();
    let state = env::reset(&inst);
    let g = encode_state(&inst, &state);
    assert_eq!(g.n_ops(), 3);
    assert_eq!(g.n_machines(), 2);
    for op in 0..3 {
        let row = g.op_feats.row(op);
        assert_eq!(&row[3..6], &[0.0, 0.0, 0.0], "status one-hots at reset");
        assert_eq!(row[1], 0.0, "completion at reset");
    }
    assert_eq!(g.mach_feats.row(0), &[0.0, 0.0]);
    assert_eq!(g.mach_feats.row(1), &[0.0, 0.0]);
    assert_eq!(g.candidate_mask.len(), 5);
    assert!(g.edges_queue.is_empty());
    assert_eq!(g.edges_job, vec![(0, 1)]);
}

#[test]
fn encode_processing_op_features() {
    let inst = i1();
    let mut state = env::reset(&inst);
    env::step(&inst, &mut state, Some(Action { op: 0, machine: 0 })).unwrap();
    let g = encode_state(&inst, &state);
    let row = g.op_feats.row(0);
    // max base duration is 3 (o1); o0 has 1 of 2 ticks left.
    assert!((row[0] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(row[1], 0.5);
    assert_eq!(&row[3..6], &[0.0, 1.0, 0.0]);
    // o0 no longer assignable; candidates drop to o1 and o2 edges.
    assert_eq!(g.candidate_mask.len(), 3);
    // o0's compat edges collapse to its assignment arc.
    assert_eq!(
        g.edges_compat,
        vec![(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)]
    );
    // M0 holds one of three ops; its head has 1 of max-base-3 ticks left.
    assert_eq!(g.mach_feats.row(0), &[1.0 / 3.0, 1.0 / 3.0]);
}

#[test]
fn encode_completed_op_features() {
    let inst = i1();
    let mut state = env::reset(&inst);
    env::step(&inst, &mut state, Some(Action { op: 0, machine: 0 })).unwrap();
    env::step(&inst, &mut state, Some(Action { op: 2, machine: 1 })).unwrap();
    assert_eq!(state.op_status[0], env::OpStatus::Completed);
    let g = encode_state(&inst, &state);
    let row = g.op_feats.row(0);
    assert_eq!(row[0], 0.0);
    assert_eq!(row[1], 1.0);
    assert_eq!(&row[3..6], &[0.0, 0.0, 1.0]);
}

#[test]
fn candidate_mask_matches_valid_actions() {
    let inst = generate(&GeneratorSpec::new(3, 2), 17).unwrap();
    let mut state = env::reset(&inst);
    loop {
        let g = encode_state(&inst, &state);
        let actions = env::valid_actions(&inst, &state);
        let from_mask: Vec<Action> = g
            .candidate_mask
            .iter()
            .map(|&(op, machine)| Action { op, machine })
            .collect();
        assert_eq!(from_mask, actions);
        if actions.is_empty() || state.done() {
            break;
        }
        env::step(&inst, &mut state, Some(actions[0])).unwrap();
    }
}

// --- checkpoints -------------------------------------------------------------

#[test]
fn network_checkpoint_round_trips_exactly() {
    let net = QNetwork::new(16, 2, 123);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_network(&net, &path).unwrap();
    let loaded = load_network(&path).unwrap();
    assert_eq!(loaded, net);
}

#[test]
fn network_checkpoint_rejects_schema_mismatch() {
    let net = QNetwork::new(4, 2, 0);
    let json = network_to_json(&net).replace("\"schema\":1", "\"schema\":999");
    assert!(matches!(
        network_from_json(&json),
        Err(NeuralError::SchemaMismatch { .. })
    ));
}

#[test]
fn network_checkpoint_rejects_corruption() {
    let net = QNetwork::new(4, 2, 0);
    let json = network_to_json(&net);
    assert!(network_from_json(&json[..json.len() / 2]).is_err());
}
