//! Coupled attention between supervised and extended superpoints.
//!
//! Forward pass: every supervised superpoint `i` attends over the extended
//! set with channel-wise weights
//!
//! ```text
//! W_es[i, j, l] = softmax_j( phi(h_i - h_j)_l )
//! X_s[i]        = sum_j W_es[i, j] * alpha(h_j)
//! ```
//!
//! Reverse pass: every extended superpoint `j` attends over the attended
//! supervised features
//!
//! ```text
//! W_ese[i, j, l] = softmax_i( psi(h_j - X_s[i])_l )
//! Y_e[j]         = sum_i W_ese[i, j] * beta(X_s[i])
//! ```

use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{BoundParams, Linear, Mlp2, NnError, ParamSet, SetAxis, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("attention inactive: the extended set is empty")]
    NoExtended,
    #[error("attention inactive: the supervised set is empty")]
    NoSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnParams {
    pub phi: Mlp2,
    pub alpha: Mlp2,
    pub psi: Mlp2,
    pub beta: Mlp2,
    pub head_es: Linear,
    pub head_ese: Linear,
}

impl AttnParams {
    pub fn new<R: Rng>(set: &mut ParamSet, dim: usize, classes: usize, rng: &mut R) -> Result<Self, NnError> {
        Ok(Self {
            phi: Mlp2::new(set, "attn.phi", dim, dim, dim, rng)?,
            alpha: Mlp2::new(set, "attn.alpha", dim, dim, dim, rng)?,
            psi: Mlp2::new(set, "attn.psi", dim, dim, dim, rng)?,
            beta: Mlp2::new(set, "attn.beta", dim, dim, dim, rng)?,
            head_es: Linear::new(set, "attn.head_es", dim, classes, rng)?,
            head_ese: Linear::new(set, "attn.head_ese", dim, classes, rng)?,
        })
    }
}

/// Applies `mlp` to every `[A, B, D]` pair row.
fn pair_mlp(tape: &mut Tape, p: &BoundParams, mlp: &Mlp2, pairs: Var) -> Result<Var, NnError> {
    let shape = tape.shape(pairs).to_vec();
    let flat = tape.reshape(pairs, &[shape[0] * shape[1], shape[2]])?;
    let out = mlp.forward(tape, p, flat)?;
    let width = tape.shape(out)[1];
    tape.reshape(out, &[shape[0], shape[1], width])
}

fn check_sets(tape: &Tape, h_s: Var, h_e: Var) -> Result<(), AttentionError> {
    if tape.shape(h_s)[0] == 0 {
        return Err(AttentionError::NoSupervised);
    }
    if tape.shape(h_e)[0] == 0 {
        return Err(AttentionError::NoExtended);
    }
    Ok(())
}

/// Returns `(X_s [|S|, D], W_es [|S|, |E|, D])`.
pub fn forward_attention(tape: &mut Tape, p: &BoundParams, attn: &AttnParams, h_s: Var, h_e: Var) -> Result<(Var, Var), AttentionError> {
    check_sets(tape, h_s, h_e)?;
    let diff = tape.pairwise_diff(h_s, h_e)?;
    let scores = pair_mlp(tape, p, &attn.phi, diff)?;
    let w_es = tape.softmax(scores, 1)?;
    let values = attn.alpha.forward(tape, p, h_e)?;
    let x_s = tape.weighted_set_sum(w_es, values, SetAxis::Second)?;
    Ok((x_s, w_es))
}

/// Returns `(Y_e [|E|, D], W_ese [|S|, |E|, D])`.
pub fn reverse_attention(tape: &mut Tape, p: &BoundParams, attn: &AttnParams, h_e: Var, x_s: Var) -> Result<(Var, Var), AttentionError> {
    check_sets(tape, x_s, h_e)?;
    let values = attn.beta.forward(tape, p, x_s)?;
    // [i, j] = X_s[i] - h_j, negated to h_j - X_s[i]
    let diff = tape.pairwise_diff(x_s, h_e)?;
    let diff = tape.scale(diff, -1.0);
    let scores = pair_mlp(tape, p, &attn.psi, diff)?;
    let w_ese = tape.softmax(scores, 0)?;
    let y_e = tape.weighted_set_sum(w_ese, values, SetAxis::First)?;
    Ok((y_e, w_ese))
}

/// Cross-entropy of `head_es(X_s)` against the supervised labels.
pub fn loss_es(tape: &mut Tape, p: &BoundParams, attn: &AttnParams, x_s: Var, labels: &[usize]) -> Result<Var, AttentionError> {
    let logits = attn.head_es.forward(tape, p, x_s)?;
    Ok(tape.cross_entropy(logits, labels)?)
}

/// Cross-entropy of `head_ese(Y_e)` against the pseudo labels.
pub fn loss_ese(tape: &mut Tape, p: &BoundParams, attn: &AttnParams, y_e: Var, pseudo: &[usize]) -> Result<Var, AttentionError> {
    let logits = attn.head_ese.forward(tape, p, y_e)?;
    Ok(tape.cross_entropy(logits, pseudo)?)
}

/// Where a gathered row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowSource {
    pub cloud: usize,
    pub superpoint: usize,
}

/// Supervised and extended rows of a batch, concatenated in (cloud, superpoint) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSets {
    pub supervised: Vec<RowSource>,
    pub labels: Vec<usize>,
    pub extended: Vec<RowSource>,
    pub pseudo_labels: Vec<usize>,
}

impl BatchSets {
    /// `members[c]` lists `(superpoint, class)` for one cloud, ascending by superpoint.
    pub fn from_members(supervised: &[Vec<(usize, usize)>], extended: &[Vec<(usize, usize)>]) -> Self {
        let flatten = |sets: &[Vec<(usize, usize)>]| -> (Vec<RowSource>, Vec<usize>) {
            sets.iter()
                .enumerate()
                .flat_map(|(cloud, m)| m.iter().map(move |&(superpoint, class)| (RowSource { cloud, superpoint }, class)))
                .unzip()
        };
        let (supervised, labels) = flatten(supervised);
        let (extended, pseudo_labels) = flatten(extended);
        Self { supervised, labels, extended, pseudo_labels }
    }

    /// Stacks the selected rows of per-cloud embeddings on the tape.
    pub fn gather(tape: &mut Tape, embeddings: &[Var], rows: &[RowSource]) -> Result<Option<Var>, NnError> {
        let mut parts = Vec::new();
        for (cloud, &h) in embeddings.iter().enumerate() {
            let idx: Vec<usize> = rows.iter().filter(|r| r.cloud == cloud).map(|r| r.superpoint).collect();
            if !idx.is_empty() {
                parts.push(tape.gather_rows(h, &idx)?);
            }
        }
        if parts.is_empty() {
            return Ok(None);
        }
        Ok(Some(tape.concat_rows(&parts)?))
    }

    /// Plain-tensor version of [`BatchSets::gather`].
    pub fn gather_plain(embeddings: &[Tensor], rows: &[RowSource]) -> Tensor {
        let width = embeddings.first().map_or(0, Tensor::cols);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            data.extend_from_slice(embeddings[r.cloud].row(r.superpoint));
        }
        Tensor::new(&[rows.len(), width], data).expect("rows of equal width")
    }

    /// Writes gathered rows back into per-cloud tensors at their source positions.
    pub fn scatter_plain(gathered: &Tensor, rows: &[RowSource], into: &mut [Tensor]) {
        for (k, r) in rows.iter().enumerate() {
            let width = into[r.cloud].cols();
            into[r.cloud].data_mut()[r.superpoint * width..(r.superpoint + 1) * width].copy_from_slice(gathered.row(k));
        }
    }
}
