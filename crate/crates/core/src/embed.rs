//! Superpoint encoder, gated graph network, segmentation head and the masked
//! segmentation loss.

use alloc::vec::Vec;

use rand::Rng;

use crate::cloud::PointCloud;
use crate::nn::{BoundParams, GruCell, Linear, Mlp2, NnError, ParamId, ParamSet, Tape, Tensor, Var};
use crate::partition::{EdgeAttr, SuperpointGraph};

/// Guard on the coordinate scale of degenerate superpoints.
pub const SCALE_EPS: f64 = 1e-6;

/// Width of the per-point input: centered xyz, rgb, diameter.
pub const POINT_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no supervised superpoint in the batch")]
    NoSupervision,
    #[error("superpoint {0} has no points")]
    EmptySuperpoint(usize),
    #[error("{labels} labels for {rows} logit rows")]
    LabelCount { labels: usize, rows: usize },
}

/// Per-point MLP followed by a channel-wise max over each superpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub mlp: Mlp2,
}

impl EncoderParams {
    pub fn new<R: Rng>(set: &mut ParamSet, hidden: usize, dim: usize, rng: &mut R) -> Result<Self, NnError> {
        Ok(Self { mlp: Mlp2::new(set, "encoder", POINT_FEATURES, hidden, dim, rng)? })
    }
}

/// Edge-conditioned messages feeding a GRU update, repeated `steps` times.
///
/// A message from `j` into `i` is `relu(h_j Wn + e_ij We + b)`, i.e. one
/// linear layer on the concatenation `[h_j, e_ij]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnParams {
    pub msg_node: ParamId,
    pub msg_edge: ParamId,
    pub msg_bias: ParamId,
    pub gru: GruCell,
    pub steps: usize,
}

impl GnnParams {
    pub fn new<R: Rng>(set: &mut ParamSet, dim: usize, steps: usize, rng: &mut R) -> Result<Self, NnError> {
        let fan_in = dim + EdgeAttr::WIDTH;
        Ok(Self {
            msg_node: set.add_uniform("gnn.msg.node", &[dim, dim], fan_in, rng)?,
            msg_edge: set.add_uniform("gnn.msg.edge", &[EdgeAttr::WIDTH, dim], fan_in, rng)?,
            msg_bias: set.add_uniform("gnn.msg.bias", &[dim], fan_in, rng)?,
            gru: GruCell::new(set, "gnn.gru", dim, rng)?,
            steps,
        })
    }
}

/// Constant inputs of one scene: per-point features grouped by superpoint
/// and the directed message lists of its graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    /// `[points, POINT_FEATURES]`, rows grouped by superpoint id.
    pub point_features: Tensor,
    /// Row ranges of each superpoint inside `point_features`.
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    /// `[messages, EdgeAttr::WIDTH]`
    pub edge_attrs: Tensor,
    pub num_superpoints: usize,
}

impl SceneInput {
    pub fn new(cloud: &PointCloud, graph: &SuperpointGraph) -> Result<Self, EmbedError> {
        let mut rows = Vec::with_capacity(cloud.len() * POINT_FEATURES);
        let mut offsets = Vec::with_capacity(graph.len() + 1);
        offsets.push(0);
        for sp in graph.nodes() {
            if sp.is_empty() {
                return Err(EmbedError::EmptySuperpoint(sp.id));
            }
            let scale = sp.diameter.max(SCALE_EPS);
            for &i in &sp.point_indices {
                let p = cloud.positions()[i];
                let c = cloud.colors()[i];
                rows.extend([
                    (p[0] - sp.centroid[0]) / scale,
                    (p[1] - sp.centroid[1]) / scale,
                    (p[2] - sp.centroid[2]) / scale,
                    c[0],
                    c[1],
                    c[2],
                    sp.diameter,
                ]);
            }
            offsets.push(offsets.last().unwrap() + sp.len());
        }
        let points = *offsets.last().unwrap();
        let directed = graph.directed();
        let messages = directed.targets.len();
        Ok(Self {
            point_features: Tensor::new(&[points, POINT_FEATURES], rows)?,
            offsets,
            targets: directed.targets,
            sources: directed.sources,
            edge_attrs: Tensor::new(&[messages, EdgeAttr::WIDTH], directed.attrs)?,
            num_superpoints: graph.len(),
        })
    }
}

/// Superpoint features `[N, D]`.
pub fn encode_superpoints(tape: &mut Tape, p: &BoundParams, enc: &EncoderParams, input: &SceneInput) -> Result<Var, EmbedError> {
    let x = tape.constant(input.point_features.clone());
    let h = enc.mlp.forward(tape, p, x)?;
    let h = tape.relu(h);
    Ok(tape.segment_max(h, &input.offsets)?)
}

/// Gated message passing; returns the embeddings after `gnn.steps` rounds.
pub fn gnn_forward(tape: &mut Tape, p: &BoundParams, gnn: &GnnParams, input: &SceneInput, features: Var) -> Result<Var, EmbedError> {
    let shape = tape.shape(features).to_vec();
    let (n, dim) = (shape[0], shape[1]);
    let edge_term = if input.targets.is_empty() {
        None
    } else {
        let attrs = tape.constant(input.edge_attrs.clone());
        let ew = tape.matmul(attrs, p.var(gnn.msg_edge))?;
        Some(tape.add_bias(ew, p.var(gnn.msg_bias))?)
    };
    let mut h = features;
    for _ in 0..gnn.steps {
        let message = match edge_term {
            None => tape.constant(Tensor::zeros(&[n, dim])),
            Some(ew) => {
                let hw = tape.matmul(h, p.var(gnn.msg_node))?;
                let from = tape.gather_rows(hw, &input.sources)?;
                let pre = tape.add(from, ew)?;
                let act = tape.relu(pre);
                tape.scatter_add_rows(act, &input.targets, n)?
            }
        };
        h = gnn.gru.forward(tape, p, h, message)?;
    }
    Ok(h)
}

/// Segmentation logits `[N, c]`.
pub fn seg_logits(tape: &mut Tape, p: &BoundParams, head: &Linear, h: Var) -> Result<Var, EmbedError> {
    Ok(head.forward(tape, p, h)?)
}

/// Cross-entropy averaged over the rows that carry a label.
pub fn loss_s(tape: &mut Tape, logits: Var, labels: &[Option<usize>]) -> Result<Var, EmbedError> {
    let rows = tape.shape(logits)[0];
    if labels.len() != rows {
        return Err(EmbedError::LabelCount { labels: labels.len(), rows });
    }
    let (idx, targets): (Vec<usize>, Vec<usize>) = labels.iter().enumerate().filter_map(|(i, l)| l.map(|z| (i, z))).unzip();
    if idx.is_empty() {
        return Err(EmbedError::NoSupervision);
    }
    let picked = tape.gather_rows(logits, &idx)?;
    Ok(tape.cross_entropy(picked, &targets)?)
}

/// Row-wise argmax with ties to the smallest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Row-wise softmax of a plain `[N, c]` tensor.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = t.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
