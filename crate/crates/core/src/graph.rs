//! Product relation graph, the graph-convolutional forecaster that produces
//! node embeddings, and embedding-based proxy-task selection.
//!
//! The forecaster trains on a one-day-ahead sales task with MAE loss: per
//! node, a static encoder, a dynamic (windowed series) encoder, and two
//! graph-convolution layers over the degree-normalized adjacency. The
//! per-node embedding is the concatenation (static ‖ dynamic ‖ graph) of the
//! hidden encodings, 50 + 8 + 32 = 90 by default.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, Matrix};
use crate::seeding::rng_for;
use crate::task::{TaskId, TaskUniverse};

/// Undirected graph over product nodes. Edges are stored as normalized
/// (low, high) pairs; self-loops are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationGraph {
    pub node_count: usize,
    pub edges: BTreeSet<(usize, usize)>,
    pub node_labels: Vec<String>,
}

impl RelationGraph {
    pub fn new(node_count: usize, node_labels: Vec<String>) -> Self {
        RelationGraph {
            node_count,
            edges: BTreeSet::new(),
            node_labels,
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        assert!(a < self.node_count && b < self.node_count, "node out of range");
        if a == b {
            return;
        }
        self.edges.insert((a.min(b), a.max(b)));
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|(a, b)| *a == node || *b == node)
            .count()
    }
}

/// Connect all nodes sharing a label: edge (i, j) iff labels[i] = labels[j]
/// and i != j.
pub fn build_brand_graph(labels: &[String]) -> RelationGraph {
    let mut graph = RelationGraph::new(labels.len(), labels.to_vec());
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] == labels[j] {
                graph.add_edge(i, j);
            }
        }
    }
    graph
}

/// Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.
pub fn normalized_adjacency(graph: &RelationGraph) -> Matrix {
    let n = graph.node_count;
    let mut adj = Matrix::identity(n);
    for &(a, b) in &graph.edges {
        adj.set(a, b, 1.0);
        adj.set(b, a, 1.0);
    }
    let degrees: Vec<f64> = (0..n).map(|i| adj.row(i).iter().sum::<f64>()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = adj.get(i, j);
            if v != 0.0 {
                adj.set(i, j, v / (degrees[i].sqrt() * degrees[j].sqrt()));
            }
        }
    }
    adj
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcnActivation {
    Linear,
    Relu,
}

/// Apply graph-convolution layers `h' = act(Â h W)` in sequence. Weight
/// matrices are (in × out); inputs are one row per node.
pub fn gcn_forward(
    graph: &RelationGraph,
    inputs: &Matrix,
    layers: &[Matrix],
    activation: GcnActivation,
) -> Result<Matrix> {
    if inputs.rows != graph.node_count {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count,
            got: inputs.rows,
        });
    }
    let norm = normalized_adjacency(graph);
    let mut hidden = inputs.clone();
    for weight in layers {
        if weight.rows != hidden.cols {
            return Err(Error::DimensionMismatch {
                expected: hidden.cols,
                got: weight.rows,
            });
        }
        let mut next = norm.matmul(&hidden).matmul(weight);
        if activation == GcnActivation::Relu {
            for v in next.data.iter_mut() {
                *v = v.max(0.0);
            }
        }
        hidden = next;
    }
    Ok(hidden)
}

/// Per-node embedding vectors, indexed by node (product) id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn empty() -> Self {
        EmbeddingTable {
            dim: 0,
            vectors: Vec::new(),
        }
    }

    pub fn get(&self, node: usize) -> Option<&Vec<f64>> {
        self.vectors.get(node)
    }

    /// One line per node: node id then the embedding components, written in
    /// shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.vectors.iter().enumerate() {
            out.push_str(&i.to_string());
            for c in v {
                out.push(' ');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fail = |reason: String| Error::MalformedFile {
            file: "<embedding table>".into(),
            reason,
        };
        let mut vectors = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id: usize = parts
                .next()
                .ok_or_else(|| fail(format!("line {}: empty", line_no + 1)))?
                .parse()
                .map_err(|e| fail(format!("line {}: bad node id: {e}", line_no + 1)))?;
            if id != vectors.len() {
                return Err(fail(format!(
                    "line {}: node ids must be consecutive from 0",
                    line_no + 1
                )));
            }
            let vector: std::result::Result<Vec<f64>, _> =
                parts.map(|p| p.parse::<f64>()).collect();
            vectors.push(vector.map_err(|e| fail(format!("line {}: {e}", line_no + 1)))?);
        }
        let dim = vectors.first().map_or(0, |v| v.len());
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(fail("inconsistent embedding dimensions".into()));
        }
        Ok(EmbeddingTable { dim, vectors })
    }
}

/// Configuration of the graph forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub static_dim: usize,
    pub dynamic_dim: usize,
    pub graph_dim: usize,
    pub context_days: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            static_dim: 50,
            dynamic_dim: 8,
            graph_dim: 32,
            context_days: 16,
            epochs: 100,
            learning_rate: 1e-3,
        }
    }
}

impl GcnConfig {
    pub fn embedding_dim(&self) -> usize {
        self.static_dim + self.dynamic_dim + self.graph_dim
    }
}

/// Per-node inputs to the forecaster: static features plus daily sales and
/// price series of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeHistory {
    pub static_features: Vec<f64>,
    pub sales: Vec<f64>,
    pub prices: Vec<f64>,
}

impl From<&crate::task::ProductMeta> for NodeHistory {
    fn from(meta: &crate::task::ProductMeta) -> Self {
        NodeHistory {
            static_features: meta.features.clone(),
            sales: meta.sales_history.clone(),
            prices: meta.price_history.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnTrainResult {
    pub embeddings: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

struct Dense {
    weight: Matrix, // in × out
    bias: Vec<f64>,
}

impl Dense {
    fn init(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut weight = Matrix::zeros(n_in, n_out);
        for v in weight.data.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Dense {
            weight,
            bias: vec![0.0; n_out],
        }
    }

    /// relu(X W + b) rowwise.
    fn forward_relu(&self, inputs: &Matrix) -> Matrix {
        let mut out = inputs.matmul(&self.weight);
        for r in 0..out.rows {
            for c in 0..out.cols {
                let v = out.get(r, c) + self.bias[c];
                out.set(r, c, v.max(0.0));
            }
        }
        out
    }

    /// Backprop through relu(X W + b): takes dL/d(out) and the cached
    /// activations; accumulates weight/bias grads, returns dL/d(inputs).
    fn backward_relu(
        &self,
        inputs: &Matrix,
        outputs: &Matrix,
        d_out: &Matrix,
        grad_w: &mut Matrix,
        grad_b: &mut [f64],
    ) -> Matrix {
        let mut dz = d_out.clone();
        for (z, o) in dz.data.iter_mut().zip(outputs.data.iter()) {
            if *o <= 0.0 {
                *z = 0.0;
            }
        }
        // grad_w += X^T dz ; d_inputs = dz W^T
        grad_w.add_assign(&inputs.transpose().matmul(&dz));
        for r in 0..dz.rows {
            for c in 0..dz.cols {
                grad_b[c] += dz.get(r, c);
            }
        }
        dz.matmul_transpose(&self.weight)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Train the graph forecaster on the one-day-ahead sales task (MAE loss,
/// full-batch Adam) and extract per-node embeddings from the most recent
/// context window. Deterministic given the seed.
pub fn train_gcn_forecaster(
    graph: &RelationGraph,
    histories: &[NodeHistory],
    config: &GcnConfig,
    seed: u64,
) -> Result<GcnTrainResult> {
    let n = graph.node_count;
    if histories.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: histories.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("graph has no nodes".into()));
    }
    let series_len = histories[0].sales.len();
    let static_len = histories[0].static_features.len();
    for h in histories {
        if h.sales.len() != series_len || h.prices.len() != series_len {
            return Err(Error::InvalidConfig("ragged history series".into()));
        }
        if h.static_features.len() != static_len {
            return Err(Error::InvalidConfig("ragged static features".into()));
        }
    }
    let c = config.context_days;
    if series_len <= c {
        return Err(Error::SeriesTooShort {
            needed: c,
            got: series_len,
        });
    }

    let norm = normalized_adjacency(graph);
    let window_dim = 2 * c;
    let emb_dim = config.embedding_dim();

    let mut static_enc = Dense::init(static_len, config.static_dim, &mut rng_for(seed, &[0x30]));
    let mut dynamic_enc = Dense::init(window_dim, config.dynamic_dim, &mut rng_for(seed, &[0x31]));
    let gcn_in = config.static_dim + config.dynamic_dim;
    let mut gcn1 = Dense::init(gcn_in, config.graph_dim, &mut rng_for(seed, &[0x32]));
    let mut gcn2 = Dense::init(config.graph_dim, config.graph_dim, &mut rng_for(seed, &[0x33]));
    // GCN layers carry no bias: zero them and never update.
    gcn1.bias.iter_mut().for_each(|b| *b = 0.0);
    gcn2.bias.iter_mut().for_each(|b| *b = 0.0);
    let mut head_w: Vec<f64> = {
        let mut rng = rng_for(seed, &[0x34]);
        let bound = 1.0 / (emb_dim as f64).sqrt();
        (0..emb_dim).map(|_| rng.random_range(-bound..bound)).collect()
    };
    let mut head_b = 0.0f64;

    let static_inputs = Matrix::from_rows(histories.iter().map(|h| h.static_features.clone()).collect());
    let window_features = |t: usize| -> Matrix {
        let mut rows = Vec::with_capacity(n);
        for h in histories {
            let mut row = Vec::with_capacity(window_dim);
            row.extend_from_slice(&h.sales[t + 1 - c..=t]);
            row.extend_from_slice(&h.prices[t + 1 - c..=t]);
            rows.push(row);
        }
        Matrix::from_rows(rows)
    };

    let windows: Vec<usize> = (c - 1..series_len - 1).collect();
    let count = (windows.len() * n) as f64;

    let mut opt_static_w = Adam::new(static_enc.weight.data.len());
    let mut opt_static_b = Adam::new(static_enc.bias.len());
    let mut opt_dyn_w = Adam::new(dynamic_enc.weight.data.len());
    let mut opt_dyn_b = Adam::new(dynamic_enc.bias.len());
    let mut opt_g1 = Adam::new(gcn1.weight.data.len());
    let mut opt_g2 = Adam::new(gcn2.weight.data.len());
    let mut opt_head_w = Adam::new(head_w.len());
    let mut opt_head_b = Adam::new(1);

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let se = static_enc.forward_relu(&static_inputs);

        let mut g_static_w = Matrix::zeros(static_enc.weight.rows, static_enc.weight.cols);
        let mut g_static_b = vec![0.0; static_enc.bias.len()];
        let mut g_dyn_w = Matrix::zeros(dynamic_enc.weight.rows, dynamic_enc.weight.cols);
        let mut g_dyn_b = vec![0.0; dynamic_enc.bias.len()];
        let mut g_g1 = Matrix::zeros(gcn1.weight.rows, gcn1.weight.cols);
        let mut g_g2 = Matrix::zeros(gcn2.weight.rows, gcn2.weight.cols);
        let mut g_head_w = vec![0.0; head_w.len()];
        let mut g_head_b = 0.0;
        let mut d_se_total = Matrix::zeros(n, config.static_dim);

        let mut loss = 0.0;
        for &t in &windows {
            let feats = window_features(t);
            let de = dynamic_enc.forward_relu(&feats);

            let mut x = Matrix::zeros(n, gcn_in);
            for i in 0..n {
                x.row_mut(i)[..config.static_dim].copy_from_slice(se.row(i));
                x.row_mut(i)[config.static_dim..].copy_from_slice(de.row(i));
            }
            let ax = norm.matmul(&x);
            let h1 = gcn1.forward_relu(&ax);
            let ah1 = norm.matmul(&h1);
            let h2 = gcn2.forward_relu(&ah1);

            // Prediction and MAE loss per node; sign(0) = 0.
            let mut d_emb = Matrix::zeros(n, emb_dim);
            for i in 0..n {
                let mut emb = Vec::with_capacity(emb_dim);
                emb.extend_from_slice(se.row(i));
                emb.extend_from_slice(de.row(i));
                emb.extend_from_slice(h2.row(i));
                let pred = crate::linalg::dot(&head_w, &emb) + head_b;
                let target = histories[i].sales[t + 1];
                let r = pred - target;
                loss += r.abs() / count;
                let d_pred = if r > 0.0 {
                    1.0 / count
                } else if r < 0.0 {
                    -1.0 / count
                } else {
                    0.0
                };
                if d_pred != 0.0 {
                    for d in 0..emb_dim {
                        g_head_w[d] += d_pred * emb[d];
                        d_emb.row_mut(i)[d] = d_pred * head_w[d];
                    }
                    g_head_b += d_pred;
                }
            }

            // Split the embedding gradient into its three sources.
            let mut d_se = Matrix::zeros(n, config.static_dim);
            let mut d_de = Matrix::zeros(n, config.dynamic_dim);
            let mut d_h2 = Matrix::zeros(n, config.graph_dim);
            for i in 0..n {
                let row = d_emb.row(i);
                d_se.row_mut(i).copy_from_slice(&row[..config.static_dim]);
                d_de.row_mut(i)
                    .copy_from_slice(&row[config.static_dim..config.static_dim + config.dynamic_dim]);
                d_h2.row_mut(i)
                    .copy_from_slice(&row[config.static_dim + config.dynamic_dim..]);
            }

            // GCN backward: h2 = relu(ah1 W2), ah1 = Â h1.
            let d_ah1 = gcn2.backward_relu(&ah1, &h2, &d_h2, &mut g_g2, &mut vec![0.0; config.graph_dim]);
            let d_h1 = norm.matmul(&d_ah1);
            let d_ax = gcn1.backward_relu(&ax, &h1, &d_h1, &mut g_g1, &mut vec![0.0; gcn_in]);
            let d_x = norm.matmul(&d_ax);

            for i in 0..n {
                let row = d_x.row(i);
                for d in 0..config.static_dim {
                    d_se.row_mut(i)[d] += row[d];
                }
                for d in 0..config.dynamic_dim {
                    d_de.row_mut(i)[d] += row[config.static_dim + d];
                }
            }

            dynamic_enc.backward_relu(&feats, &de, &d_de, &mut g_dyn_w, &mut g_dyn_b);
            d_se_total.add_assign(&d_se);
        }

        static_enc.backward_relu(&static_inputs, &se, &d_se_total, &mut g_static_w, &mut g_static_b);

        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(loss);

        let lr = config.learning_rate;
        opt_static_w.step(&mut static_enc.weight.data, &g_static_w.data, lr);
        opt_static_b.step(&mut static_enc.bias, &g_static_b, lr);
        opt_dyn_w.step(&mut dynamic_enc.weight.data, &g_dyn_w.data, lr);
        opt_dyn_b.step(&mut dynamic_enc.bias, &g_dyn_b, lr);
        opt_g1.step(&mut gcn1.weight.data, &g_g1.data, lr);
        opt_g2.step(&mut gcn2.weight.data, &g_g2.data, lr);
        opt_head_w.step(&mut head_w, &g_head_w, lr);
        let mut b = [head_b];
        opt_head_b.step(&mut b, &[g_head_b], lr);
        head_b = b[0];
    }

    // Extract embeddings from the most recent context window.
    let se = static_enc.forward_relu(&static_inputs);
    let t_last = series_len - 2;
    let feats = window_features(t_last);
    let de = dynamic_enc.forward_relu(&feats);
    let mut x = Matrix::zeros(n, gcn_in);
    for i in 0..n {
        x.row_mut(i)[..config.static_dim].copy_from_slice(se.row(i));
        x.row_mut(i)[config.static_dim..].copy_from_slice(de.row(i));
    }
    let h1 = gcn1.forward_relu(&norm.matmul(&x));
    let h2 = gcn2.forward_relu(&norm.matmul(&h1));
    let mut vectors = Vec::with_capacity(n);
    for i in 0..n {
        let mut emb = Vec::with_capacity(emb_dim);
        emb.extend_from_slice(se.row(i));
        emb.extend_from_slice(de.row(i));
        emb.extend_from_slice(h2.row(i));
        if emb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch: config.epochs });
        }
        vectors.push(emb);
    }

    Ok(GcnTrainResult {
        embeddings: EmbeddingTable {
            dim: emb_dim,
            vectors,
        },
        epoch_losses,
    })
}

/// Tasks selected as proxy data for a target, with similarity scores sorted
/// best-first (ties broken by ascending task id).
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySet {
    pub target: TaskId,
    pub members: Vec<(TaskId, f64)>,
}

impl ProxySet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Fixed-length encoding of a proxy set, consumed by the modulation
/// generator. The zero vector encodes the empty set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyEncoding {
    pub z: Vec<f64>,
}

impl ProxyEncoding {
    pub fn zeros(len: usize) -> Self {
        ProxyEncoding { z: vec![0.0; len] }
    }

    pub fn is_zero(&self) -> bool {
        self.z.iter().all(|&v| v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// True when two tasks are related: embedding distance under theta, or the
/// same hierarchy label.
pub fn edge_decision(
    emb_i: &[f64],
    emb_j: &[f64],
    label_i: &str,
    label_j: &str,
    theta: f64,
) -> Result<bool> {
    if emb_i.len() != emb_j.len() {
        return Err(Error::DimensionMismatch {
            expected: emb_i.len(),
            got: emb_j.len(),
        });
    }
    Ok(euclidean(emb_i, emb_j) < theta || label_i == label_j)
}

/// Similarity mapping distance into (0, 1]: identical embeddings score 1.
pub fn embedding_similarity(a: &[f64], b: &[f64]) -> f64 {
    1.0 / (1.0 + euclidean(a, b))
}

/// Select all tasks in the universe whose embedding similarity to the target
/// exceeds delta. Product embeddings are shared across the environments of
/// the same product.
pub fn select_proxy(
    target: TaskId,
    universe: &TaskUniverse,
    embeddings: &EmbeddingTable,
    delta: f64,
    include_target: bool,
) -> Result<ProxySet> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "similarity threshold must lie in (0,1), got {delta}"
        )));
    }
    let target_emb = embeddings
        .get(target.product_index)
        .ok_or(Error::MissingEmbedding {
            product: target.product_index,
        })?;

    let mut members = Vec::new();
    for task in &universe.tasks {
        if !include_target && task.id == target {
            continue;
        }
        let emb = embeddings
            .get(task.id.product_index)
            .ok_or(Error::MissingEmbedding {
                product: task.id.product_index,
            })?;
        let score = embedding_similarity(target_emb, emb);
        if score > delta {
            members.push((task.id, score));
        }
    }
    members.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(ProxySet { target, members })
}

/// Encode a proxy set as (mean member embedding ‖ mean member support
/// target ‖ member count normalized by universe size). The empty set maps
/// to the zero vector.
pub fn encode_proxy(
    proxy: &ProxySet,
    universe: &TaskUniverse,
    embeddings: &EmbeddingTable,
) -> ProxyEncoding {
    let dim = embeddings.dim;
    let mut z = vec![0.0; dim + 2];
    if proxy.members.is_empty() {
        return ProxyEncoding { z };
    }

    let mut mean_y = 0.0;
    let mut found = 0usize;
    for (id, _) in &proxy.members {
        if let Some(emb) = embeddings.get(id.product_index) {
            for (acc, v) in z[..dim].iter_mut().zip(emb.iter()) {
                *acc += v;
            }
        }
        if let Some(task) = universe.task(*id) {
            mean_y += task.mean_support_target();
        }
        found += 1;
    }
    let inv = 1.0 / found as f64;
    for v in z[..dim].iter_mut() {
        *v *= inv;
    }
    z[dim] = mean_y * inv;
    z[dim + 1] = proxy.members.len() as f64 / universe.tasks.len().max(1) as f64;
    ProxyEncoding { z }
}
