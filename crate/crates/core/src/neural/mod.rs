//! The heterogeneous GNN Q-function: dense linear algebra, state encoding,
//! relation-typed message passing with a dot-product edge readout, exact
//! reverse-mode gradients, and the Adam optimizer.
//!
//! Everything runs in f64 with a fixed summation order, so forward,
//! backward, and training are bit-reproducible for a given seed.

mod adam;
mod encode;
mod linalg;

pub use adam::{AdamConfig, AdamState};
pub use encode::{encode_state, EncodeCtx};
pub use linalg::{dot, Matrix};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OP_FEATURES: usize = 7;
pub const MACHINE_FEATURES: usize = 2;
/// Bumped whenever the meaning of graph features changes.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Typed-node, typed-edge graph encoding of a scheduling state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    /// One row per operation, [`OP_FEATURES`] columns.
    pub op_feats: Matrix,
    /// One row per machine, [`MACHINE_FEATURES`] columns.
    pub mach_feats: Matrix,
    /// Directed job-precedence pairs (pred op, succ op).
    pub edges_job: Vec<(usize, usize)>,
    /// Directed queue-order pairs (pred op, succ op) of current queues.
    pub edges_queue: Vec<(usize, usize)>,
    /// All (op, machine, weight) compatibility triples.
    pub edges_compat: Vec<(usize, usize, f64)>,
    /// Subset of `edges_compat` whose op is unassigned: the Q-value
    /// readout set, index-aligned with the environment's valid actions.
    pub candidate_mask: Vec<(usize, usize)>,
}

impl HeteroGraph {
    pub fn n_ops(&self) -> usize {
        self.op_feats.rows
    }

    pub fn n_machines(&self) -> usize {
        self.mach_feats.rows
    }
}

/// Message-passing relations, each with its own weight pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Job = 0,
    Queue = 1,
    CompatToOp = 2,
    CompatToMach = 3,
}

pub const N_RELATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationWeights {
    pub w_self: Matrix,
    pub w_nbr: Matrix,
}

/// All learnable tensors. Convolution maps are linear (no bias); the two
/// embedding layers are affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub embed_op_w: Matrix,
    pub embed_op_b: Vec<f64>,
    pub embed_mach_w: Matrix,
    pub embed_mach_b: Vec<f64>,
    /// Indexed by [`Relation`]: job, queue, compat->op, compat->mach.
    pub relations: Vec<RelationWeights>,
}

impl Params {
    pub fn zeros(d: usize) -> Self {
        Params {
            embed_op_w: Matrix::zeros(d, OP_FEATURES),
            embed_op_b: vec![0.0; d],
            embed_mach_w: Matrix::zeros(d, MACHINE_FEATURES),
            embed_mach_b: vec![0.0; d],
            relations: (0..N_RELATIONS)
                .map(|_| RelationWeights {
                    w_self: Matrix::zeros(d, d),
                    w_nbr: Matrix::zeros(d, d),
                })
                .collect(),
        }
    }

    /// Named flat views in a fixed order (checkpoint and optimizer layout).
    pub fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("embed_op_w".into(), &self.embed_op_w.data),
            ("embed_op_b".into(), &self.embed_op_b),
            ("embed_mach_w".into(), &self.embed_mach_w.data),
            ("embed_mach_b".into(), &self.embed_mach_b),
        ];
        for (name, rel) in RELATION_NAMES.iter().zip(&self.relations) {
            out.push((format!("{name}_self"), &rel.w_self.data));
            out.push((format!("{name}_nbr"), &rel.w_nbr.data));
        }
        out
    }

    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("embed_op_w".into(), &mut self.embed_op_w.data[..]),
            ("embed_op_b".into(), &mut self.embed_op_b[..]),
            ("embed_mach_w".into(), &mut self.embed_mach_w.data[..]),
            ("embed_mach_b".into(), &mut self.embed_mach_b[..]),
        ];
        for (name, rel) in RELATION_NAMES.iter().zip(self.relations.iter_mut()) {
            out.push((format!("{name}_self"), &mut rel.w_self.data[..]));
            out.push((format!("{name}_nbr"), &mut rel.w_nbr.data[..]));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, elementwise over every tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, a), (_, b)) in self
            .named_slices_mut()
            .into_iter()
            .zip(other.named_slices())
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

const RELATION_NAMES: [&str; N_RELATIONS] = ["job", "queue", "compat_op", "compat_mach"];

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("graph/network dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("checkpoint schema mismatch: found {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("failed to parse checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The Q-network. Weights are shared across the `k` message-passing loops;
/// the readout `Q(o, m) = <h_o, h_m>` has no parameters of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub d: usize,
    pub k: usize,
    pub params: Params,
}

pub const DEFAULT_EMBED_DIM: usize = 16;
pub const DEFAULT_LOOPS: usize = 2;

impl QNetwork {
    /// Fresh network with every tensor drawn uniformly from
    /// (-1/sqrt(fan_in), 1/sqrt(fan_in)), deterministic in `seed`.
    pub fn new(d: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(d);
        let mut fill = |v: &mut [f64], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for x in v.iter_mut() {
                *x = rng.random_range(-a..a);
            }
        };
        fill(&mut params.embed_op_w.data, OP_FEATURES);
        fill(&mut params.embed_op_b, OP_FEATURES);
        fill(&mut params.embed_mach_w.data, MACHINE_FEATURES);
        fill(&mut params.embed_mach_b, MACHINE_FEATURES);
        for rel in params.relations.iter_mut() {
            fill(&mut rel.w_self.data, d);
            fill(&mut rel.w_nbr.data, d);
        }
        QNetwork { d, k, params }
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        QNetwork {
            d,
            k,
            params: Params::zeros(d),
        }
    }

    /// Total number of independent weights: `11 d + 8 d^2`.
    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    /// Q-value per candidate edge, in `candidate_mask` order.
    pub fn forward(&self, graph: &HeteroGraph) -> Result<Vec<f64>, NeuralError> {
        Ok(self.forward_trace(graph)?.q_values)
    }

    /// Forward pass that records every intermediate needed by
    /// [`QNetwork::backward`].
    pub fn forward_trace(&self, graph: &HeteroGraph) -> Result<ForwardTrace, NeuralError> {
        check_graph(graph)?;
        let d = self.d;
        let p = &self.params;
        let edges = RelationEdges::from_graph(graph);

        let mut z_op0 = graph.op_feats.matmul_bt(&p.embed_op_w);
        z_op0.add_row_vector(&p.embed_op_b);
        let mut z_mach0 = graph.mach_feats.matmul_bt(&p.embed_mach_w);
        z_mach0.add_row_vector(&p.embed_mach_b);

        let mut h_op = vec![z_op0.relu()];
        let mut h_mach = vec![z_mach0.relu()];
        let mut means: Vec<[Matrix; N_RELATIONS]> = Vec::with_capacity(self.k);

        for _ in 0..self.k {
            let ho = h_op.last().unwrap();
            let hm = h_mach.last().unwrap();
            let mean = [
                edges.mean(Relation::Job, ho, graph.n_ops()),
                edges.mean(Relation::Queue, ho, graph.n_ops()),
                edges.mean(Relation::CompatToOp, hm, graph.n_ops()),
                edges.mean(Relation::CompatToMach, ho, graph.n_machines()),
            ];

            let mut z_op = Matrix::zeros(graph.n_ops(), d);
            for r in [Relation::Job, Relation::Queue, Relation::CompatToOp] {
                let rel = &p.relations[r as usize];
                z_op.add_assign(&ho.matmul_bt(&rel.w_self));
                z_op.add_assign(&mean[r as usize].matmul_bt(&rel.w_nbr));
            }
            let rel = &p.relations[Relation::CompatToMach as usize];
            let mut z_mach = hm.matmul_bt(&rel.w_self);
            z_mach.add_assign(&mean[Relation::CompatToMach as usize].matmul_bt(&rel.w_nbr));

            h_op.push(z_op.relu());
            h_mach.push(z_mach.relu());
            means.push(mean);
        }

        let ho = h_op.last().unwrap();
        let hm = h_mach.last().unwrap();
        let q_values = graph
            .candidate_mask
            .iter()
            .map(|&(o, m)| dot(ho.row(o), hm.row(m)))
            .collect();
        Ok(ForwardTrace {
            h_op,
            h_mach,
            means,
            q_values,
        })
    }

    /// Exact reverse-mode gradients of `sum_e upstream[e] * q[e]` with
    /// respect to every parameter. Requires the trace of the same graph.
    pub fn backward(
        &self,
        graph: &HeteroGraph,
        trace: &ForwardTrace,
        upstream: &[f64],
    ) -> Result<Params, NeuralError> {
        if upstream.len() != graph.candidate_mask.len() {
            return Err(NeuralError::Dimension(format!(
                "upstream has {} entries for {} candidate edges",
                upstream.len(),
                graph.candidate_mask.len()
            )));
        }
        if trace.h_op.len() != self.k + 1 {
            return Err(NeuralError::Dimension(
                "trace does not match network loop count".into(),
            ));
        }
        let d = self.d;
        let p = &self.params;
        let edges = RelationEdges::from_graph(graph);
        let mut grads = Params::zeros(d);

        let mut g_op = Matrix::zeros(graph.n_ops(), d);
        let mut g_mach = Matrix::zeros(graph.n_machines(), d);
        let ho_k = &trace.h_op[self.k];
        let hm_k = &trace.h_mach[self.k];
        for (&(o, m), &u) in graph.candidate_mask.iter().zip(upstream) {
            for c in 0..d {
                g_op.data[o * d + c] += u * hm_k.get(m, c);
                g_mach.data[m * d + c] += u * ho_k.get(o, c);
            }
        }

        for l in (0..self.k).rev() {
            let g_z_op = g_op.mask_relu(&trace.h_op[l + 1]);
            let g_z_mach = g_mach.mask_relu(&trace.h_mach[l + 1]);
            let ho = &trace.h_op[l];
            let hm = &trace.h_mach[l];
            let mean = &trace.means[l];

            let mut g_op_prev = Matrix::zeros(graph.n_ops(), d);
            let mut g_mach_prev = Matrix::zeros(graph.n_machines(), d);

            for r in [Relation::Job, Relation::Queue, Relation::CompatToOp] {
                let rel = &p.relations[r as usize];
                let gr = &mut grads.relations[r as usize];
                gr.w_self.add_assign(&g_z_op.matmul_at(ho));
                gr.w_nbr.add_assign(&g_z_op.matmul_at(&mean[r as usize]));
                g_op_prev.add_assign(&g_z_op.matmul(&rel.w_self));
                let through_nbr = g_z_op.matmul(&rel.w_nbr);
                match r {
                    Relation::CompatToOp => {
                        edges.scatter_mean_adjoint(r, &through_nbr, &mut g_mach_prev)
                    }
                    _ => edges.scatter_mean_adjoint(r, &through_nbr, &mut g_op_prev),
                }
            }
            {
                let r = Relation::CompatToMach;
                let rel = &p.relations[r as usize];
                let gr = &mut grads.relations[r as usize];
                gr.w_self.add_assign(&g_z_mach.matmul_at(hm));
                gr.w_nbr.add_assign(&g_z_mach.matmul_at(&mean[r as usize]));
                g_mach_prev.add_assign(&g_z_mach.matmul(&rel.w_self));
                let through_nbr = g_z_mach.matmul(&rel.w_nbr);
                edges.scatter_mean_adjoint(r, &through_nbr, &mut g_op_prev);
            }
            g_op = g_op_prev;
            g_mach = g_mach_prev;
        }

        let g_z_op0 = g_op.mask_relu(&trace.h_op[0]);
        let g_z_mach0 = g_mach.mask_relu(&trace.h_mach[0]);
        grads.embed_op_w.add_assign(&g_z_op0.matmul_at(&graph.op_feats));
        grads.embed_op_b = g_z_op0.column_sums();
        grads
            .embed_mach_w
            .add_assign(&g_z_mach0.matmul_at(&graph.mach_feats));
        grads.embed_mach_b = g_z_mach0.column_sums();
        Ok(grads)
    }
}

/// Recorded intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    h_op: Vec<Matrix>,
    h_mach: Vec<Matrix>,
    means: Vec<[Matrix; N_RELATIONS]>,
    pub q_values: Vec<f64>,
}

fn check_graph(graph: &HeteroGraph) -> Result<(), NeuralError> {
    if graph.op_feats.cols != OP_FEATURES {
        return Err(NeuralError::Dimension(format!(
            "op features have {} columns, expected {OP_FEATURES}",
            graph.op_feats.cols
        )));
    }
    if graph.mach_feats.cols != MACHINE_FEATURES {
        return Err(NeuralError::Dimension(format!(
            "machine features have {} columns, expected {MACHINE_FEATURES}",
            graph.mach_feats.cols
        )));
    }
    let n = graph.n_ops();
    let m = graph.n_machines();
    for &(a, b) in graph.edges_job.iter().chain(&graph.edges_queue) {
        if a >= n || b >= n {
            return Err(NeuralError::Dimension(format!(
                "op edge ({a}, {b}) out of range"
            )));
        }
    }
    for &(o, ma, _) in &graph.edges_compat {
        if o >= n || ma >= m {
            return Err(NeuralError::Dimension(format!(
                "compat edge ({o}, {ma}) out of range"
            )));
        }
    }
    for &(o, ma) in &graph.candidate_mask {
        if o >= n || ma >= m {
            return Err(NeuralError::Dimension(format!(
                "candidate edge ({o}, {ma}) out of range"
            )));
        }
    }
    Ok(())
}

/// Per-relation edge lists as (src, dst, weight), plus dst in-degrees.
struct RelationEdges {
    edges: [Vec<(usize, usize, f64)>; N_RELATIONS],
    degree: [Vec<usize>; N_RELATIONS],
}

impl RelationEdges {
    fn from_graph(graph: &HeteroGraph) -> Self {
        let n = graph.n_ops();
        let m = graph.n_machines();
        let mut edges: [Vec<(usize, usize, f64)>; N_RELATIONS] = Default::default();
        for &(u, v) in &graph.edges_job {
            edges[Relation::Job as usize].push((u, v, 1.0));
        }
        for &(u, v) in &graph.edges_queue {
            edges[Relation::Queue as usize].push((u, v, 1.0));
        }
        for &(o, ma, w) in &graph.edges_compat {
            edges[Relation::CompatToOp as usize].push((ma, o, w));
            edges[Relation::CompatToMach as usize].push((o, ma, w));
        }
        let dst_count = [n, n, n, m];
        let mut degree: [Vec<usize>; N_RELATIONS] = Default::default();
        for r in 0..N_RELATIONS {
            degree[r] = vec![0; dst_count[r]];
            for &(_, dst, _) in &edges[r] {
                degree[r][dst] += 1;
            }
        }
        RelationEdges { edges, degree }
    }

    /// Weighted neighbor mean per destination; empty neighborhoods stay zero.
    fn mean(&self, r: Relation, h_src: &Matrix, n_dst: usize) -> Matrix {
        let d = h_src.cols;
        let mut out = Matrix::zeros(n_dst, d);
        for &(src, dst, w) in &self.edges[r as usize] {
            for c in 0..d {
                out.data[dst * d + c] += w * h_src.get(src, c);
            }
        }
        for dst in 0..n_dst {
            let deg = self.degree[r as usize][dst];
            if deg > 1 {
                let inv = 1.0 / deg as f64;
                for v in out.row_mut(dst) {
                    *v *= inv;
                }
            }
        }
        out
    }

    /// Adjoint of [`RelationEdges::mean`]: routes destination gradients back
    /// to source states, scaled by weight / in-degree.
    fn scatter_mean_adjoint(&self, r: Relation, g_dst: &Matrix, g_src: &mut Matrix) {
        let d = g_dst.cols;
        for &(src, dst, w) in &self.edges[r as usize] {
            let scale = w / self.degree[r as usize][dst] as f64;
            for c in 0..d {
                g_src.data[src * d + c] += scale * g_dst.get(dst, c);
            }
        }
    }
}

// --- checkpoint file -------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub(crate) struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    schema: u32,
    d: usize,
    k: usize,
    params: BTreeMap<String, TensorRecord>,
}

pub(crate) fn params_to_records(params: &Params) -> BTreeMap<String, TensorRecord> {
    let shapes = param_shapes(params);
    params
        .named_slices()
        .into_iter()
        .map(|(name, data)| {
            let shape = shapes[&name].clone();
            (
                name,
                TensorRecord {
                    shape,
                    data: data.to_vec(),
                },
            )
        })
        .collect()
}

fn param_shapes(params: &Params) -> BTreeMap<String, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    shapes.insert(
        "embed_op_w".into(),
        vec![params.embed_op_w.rows, params.embed_op_w.cols],
    );
    shapes.insert("embed_op_b".into(), vec![params.embed_op_b.len()]);
    shapes.insert(
        "embed_mach_w".into(),
        vec![params.embed_mach_w.rows, params.embed_mach_w.cols],
    );
    shapes.insert("embed_mach_b".into(), vec![params.embed_mach_b.len()]);
    for (name, rel) in RELATION_NAMES.iter().zip(&params.relations) {
        shapes.insert(format!("{name}_self"), vec![rel.w_self.rows, rel.w_self.cols]);
        shapes.insert(format!("{name}_nbr"), vec![rel.w_nbr.rows, rel.w_nbr.cols]);
    }
    shapes
}

pub(crate) fn params_from_records(
    d: usize,
    records: &BTreeMap<String, TensorRecord>,
) -> Result<Params, NeuralError> {
    let mut params = Params::zeros(d);
    let shapes = param_shapes(&params);
    for (name, slice) in params.named_slices_mut() {
        let rec = records
            .get(&name)
            .ok_or_else(|| NeuralError::Malformed(format!("missing tensor {name}")))?;
        if rec.shape != shapes[&name] || rec.data.len() != slice.len() {
            return Err(NeuralError::Malformed(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                rec.shape, shapes[&name]
            )));
        }
        slice.copy_from_slice(&rec.data);
    }
    Ok(params)
}

/// Writes the network as named parameter arrays with shapes; exact
/// round-trip (f64 values survive the JSON encoding bit-for-bit).
pub fn save_network(net: &QNetwork, path: &Path) -> Result<(), NeuralError> {
    fs::write(path, network_to_json(net))?;
    Ok(())
}

pub fn network_to_json(net: &QNetwork) -> String {
    let file = NetworkFile {
        schema: FEATURE_SCHEMA_VERSION,
        d: net.d,
        k: net.k,
        params: params_to_records(&net.params),
    };
    let mut s = serde_json::to_string(&file).expect("network serialization");
    s.push('\n');
    s
}

pub fn load_network(path: &Path) -> Result<QNetwork, NeuralError> {
    network_from_json(&fs::read_to_string(path)?)
}

pub fn network_from_json(s: &str) -> Result<QNetwork, NeuralError> {
    let file: NetworkFile = serde_json::from_str(s)?;
    if file.schema != FEATURE_SCHEMA_VERSION {
        return Err(NeuralError::SchemaMismatch {
            found: file.schema,
            expected: FEATURE_SCHEMA_VERSION,
        });
    }
    let params = params_from_records(file.d, &file.params)?;
    Ok(QNetwork {
        d: file.d,
        k: file.k,
        params,
    })
}

#[cfg(test)]
mod tests;
