use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::AttnParams;
use crate::embed::{self, EmbedError, EncoderParams, GnnParams, SceneInput};
use crate::nn::{BoundParams, Linear, NnError, ParamSet, Tape, Tensor, Var};

/// Layer widths of the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
    pub gnn_steps: usize,
}

impl ModelDims {
    pub fn new(classes: usize) -> Self {
        Self { hidden: 32, embed: 32, classes, gnn_steps: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid dimensions: {0}")]
    BadDims(&'static str),
    #[error("parameter layout mismatch at `{name}`: {detail}")]
    Layout { name: String, detail: String },
}

/// Every trainable tensor of the network together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub params: ParamSet,
    pub encoder: EncoderParams,
    pub gnn: GnnParams,
    pub head: Linear,
    pub attention: AttnParams,
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        if dims.embed < 2 {
            return Err(ModelError::BadDims("embedding width must be at least 2"));
        }
        if dims.hidden == 0 || dims.classes == 0 {
            return Err(ModelError::BadDims("hidden width and class count must be positive"));
        }
        if dims.gnn_steps == 0 {
            return Err(ModelError::BadDims("need at least one GNN step"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::new(&mut params, dims.hidden, dims.embed, &mut rng)?;
        let gnn = GnnParams::new(&mut params, dims.embed, dims.gnn_steps, &mut rng)?;
        let head = Linear::new(&mut params, "head", dims.embed, dims.classes, &mut rng)?;
        let attention = AttnParams::new(&mut params, dims.embed, dims.classes, &mut rng)?;
        Ok(Self { dims, params, encoder, gnn, head, attention })
    }

    /// Rebuilds a model from stored `(name, tensor)` pairs, which must match
    /// the layout for `dims` exactly, in order.
    pub fn from_tensors(dims: ModelDims, stored: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut model = Self::init(dims, 0)?;
        if stored.len() != model.params.len() {
            return Err(ModelError::Layout {
                name: String::from("*"),
                detail: alloc::format!("expected {} parameters, found {}", model.params.len(), stored.len()),
            });
        }
        for (slot, (name, tensor)) in model.params.iter_mut().zip(stored) {
            if slot.name != name || slot.tensor.shape() != tensor.shape() {
                return Err(ModelError::Layout {
                    name,
                    detail: alloc::format!("expected `{}` with shape {:?}, found {:?}", slot.name, slot.tensor.shape(), tensor.shape()),
                });
            }
            slot.tensor = tensor;
        }
        Ok(model)
    }

    /// Whether a parameter belongs to the attention branch (unused at inference).
    pub fn is_attention_param(name: &str) -> bool {
        name.starts_with("attn.")
    }

    /// Encoder, GNN and head on one scene; returns `(embeddings, logits)`.
    pub fn forward_scene(&self, tape: &mut Tape, p: &BoundParams, input: &SceneInput) -> Result<(Var, Var), EmbedError> {
        let features = embed::encode_superpoints(tape, p, &self.encoder, input)?;
        let h = embed::gnn_forward(tape, p, &self.gnn, input, features)?;
        let logits = embed::seg_logits(tape, p, &self.head, h)?;
        Ok((h, logits))
    }

    /// Plain `(embeddings, logits)` without keeping the tape.
    pub fn infer(&self, input: &SceneInput) -> Result<(Tensor, Tensor), EmbedError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let (h, logits) = self.forward_scene(&mut tape, &p, input)?;
        Ok((tape.value(h).clone(), tape.value(logits).clone()))
    }
}
