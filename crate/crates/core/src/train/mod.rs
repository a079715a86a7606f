//! Training loop with scheduled label propagation, plus prediction and metrics.

mod metrics;

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{evaluate, extended_hits, metrics_from_confusion, oa_extended, Metrics, MetricsError};

use crate::attention::{self, AttentionError, BatchSets};
use crate::cloud::{PointCloud, SupervisionMask};
use crate::embed::{self, argmax_rows, softmax_rows, EmbedError, SceneInput};
use crate::model::{ModelDims, ModelError, ModelParams};
use crate::nn::{Adam, AdamState, NnError, Tape, Tensor, Var};
use crate::partition::{self, PartitionError, PartitionParams, SuperpointGraph, SuperpointLabels};
use crate::propagate::{self, Membership, PropagationParams, SupervisionState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no supervised superpoint in any cloud")]
    NoSupervision,
    #[error("no scenes to train on")]
    NoScenes,
    #[error("scenes disagree on class count: {0} vs {1}")]
    ClassCount(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// A cloud with its superpoint graph, supervision and cached network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub graph: SuperpointGraph,
    pub labels: SuperpointLabels,
    pub input: SceneInput,
    /// Superpoint id of every point.
    pub assignment: Vec<usize>,
}

impl Scene {
    pub fn prepare(cloud: PointCloud, mask: &SupervisionMask, params: &PartitionParams, k: usize) -> Result<Self, TrainError> {
        let superpoints = partition::partition_cloud(&cloud, params)?;
        let graph = partition::build_graph(superpoints, k)?;
        Self::from_graph(cloud, graph, mask)
    }

    pub fn from_graph(cloud: PointCloud, graph: SuperpointGraph, mask: &SupervisionMask) -> Result<Self, TrainError> {
        let labels = partition::superpoint_labels(graph.nodes(), &cloud, mask)?;
        let input = SceneInput::new(&cloud, &graph)?;
        let assignment = partition::point_assignment(graph.nodes(), cloud.len());
        Ok(Self { cloud, graph, labels, input, assignment })
    }

    pub fn num_superpoints(&self) -> usize {
        self.graph.len()
    }

    fn initial_state(&self) -> SupervisionState {
        SupervisionState::from_members(
            self.labels
                .as_slice()
                .iter()
                .map(|l| l.map_or(Membership::Unsupervised, Membership::Supervised))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub propagation: PropagationParams,
    /// Run label propagation and dropout every `interval_m` epochs.
    pub propagate: bool,
    /// Add the coupled-attention losses once extended superpoints exist.
    pub attention: bool,
    pub seed: u64,
    pub dims: ModelDims,
}

impl TrainConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            epochs: 400,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            lambda1: 1.0,
            lambda2: 1.0,
            propagation: PropagationParams::default(),
            propagate: true,
            attention: true,
            seed: 0,
            dims: ModelDims::new(classes),
        }
    }

    /// Segmentation loss only: no propagation, no attention.
    pub fn baseline(mut self) -> Self {
        self.propagate = false;
        self.attention = false;
        self
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(TrainError::Config("lambdas must be non-negative"));
        }
        if self.propagation.interval_m == 0 {
            return Err(TrainError::Config("interval_m must be positive"));
        }
        if !(self.propagation.tau > 0.0 && self.propagation.tau < 1.0) {
            return Err(TrainError::Config("tau must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.propagation.drop_fraction) {
            return Err(TrainError::Config("drop_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// Losses, set sizes and training-set metrics after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_s: f64,
    pub loss_es: f64,
    pub loss_ese: f64,
    pub loss_final: f64,
    pub supervised: usize,
    pub extended: usize,
    pub unsupervised: usize,
    pub overall_accuracy: f64,
    pub mean_iou: f64,
    pub mean_accuracy: f64,
    pub oa_extended: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Extend,
    Drop,
}

/// A change to the extended set; `score` is the confidence of an extension
/// or the feature distance of a drop.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEvent {
    pub epoch: usize,
    pub kind: EventKind,
    pub cloud: usize,
    pub source: Option<usize>,
    pub target: usize,
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<SetEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub states: Vec<SupervisionState>,
    pub log: RunLog,
}

struct BatchResult {
    loss_s: f64,
    loss_es: f64,
    loss_ese: f64,
    loss_final: f64,
    logits: Vec<(usize, Tensor)>,
}

fn train_batch(
    model: &mut ModelParams,
    adam_state: &mut AdamState,
    scenes: &[Scene],
    states: &[SupervisionState],
    batch: &[usize],
    config: &TrainConfig,
) -> Result<BatchResult, TrainError> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let mut embeddings = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut labels: Vec<Option<usize>> = Vec::new();
    for &c in batch {
        let (h, y) = model.forward_scene(&mut tape, &p, &scenes[c].input)?;
        embeddings.push(h);
        logits.push(y);
        labels.extend_from_slice(scenes[c].labels.as_slice());
    }

    let mut terms: Vec<Var> = Vec::new();
    let mut loss_s = 0.0;
    if labels.iter().any(Option::is_some) {
        let all = tape.concat_rows(&logits)?;
        let l = embed::loss_s(&mut tape, all, &labels)?;
        loss_s = tape.value(l).item();
        terms.push(l);
    }

    let (mut loss_es, mut loss_ese) = (0.0, 0.0);
    if config.attention {
        let sup: Vec<Vec<(usize, usize)>> = batch.iter().map(|&c| states[c].supervised_labels()).collect();
        let ext: Vec<Vec<(usize, usize)>> = batch.iter().map(|&c| states[c].pseudo_labels()).collect();
        let sets = BatchSets::from_members(&sup, &ext);
        if !sets.supervised.is_empty() && !sets.extended.is_empty() {
            let h_s = BatchSets::gather(&mut tape, &embeddings, &sets.supervised)?.expect("supervised rows");
            let h_e = BatchSets::gather(&mut tape, &embeddings, &sets.extended)?.expect("extended rows");
            let attn = &model.attention;
            let (x_s, _) = attention::forward_attention(&mut tape, &p, attn, h_s, h_e)?;
            let (y_e, _) = attention::reverse_attention(&mut tape, &p, attn, h_e, x_s)?;
            let l_es = attention::loss_es(&mut tape, &p, attn, x_s, &sets.labels)?;
            let l_ese = attention::loss_ese(&mut tape, &p, attn, y_e, &sets.pseudo_labels)?;
            loss_es = tape.value(l_es).item();
            loss_ese = tape.value(l_ese).item();
            terms.push(tape.scale(l_es, config.lambda1));
            terms.push(tape.scale(l_ese, config.lambda2));
        }
    }

    let logits_plain = batch.iter().zip(&logits).map(|(&c, &y)| (c, tape.value(y).clone())).collect();
    let mut loss_final = 0.0;
    if let Some((&first, rest)) = terms.split_first() {
        let mut total = first;
        for &t in rest {
            total = tape.add(total, t)?;
        }
        loss_final = tape.value(total).item();
        let mut grads = tape.backward(total)?;
        let grads = p.collect_grads(&tape, &mut grads);
        config.adam().step(&mut model.params, &grads, adam_state);
    }
    Ok(BatchResult { loss_s, loss_es, loss_ese, loss_final, logits: logits_plain })
}

/// Propagation then dropout on every scene, using the current network.
fn propagation_round(
    model: &ModelParams,
    scenes: &[Scene],
    states: &mut [SupervisionState],
    params: &PropagationParams,
    epoch: usize,
    events: &mut Vec<SetEvent>,
) -> Result<(), TrainError> {
    for (c, (scene, state)) in scenes.iter().zip(states.iter_mut()).enumerate() {
        let (h, logits) = model.infer(&scene.input)?;
        let probs = softmax_rows(&logits);
        for e in propagate::propagate_once(state, &scene.graph, &probs, params) {
            events.push(SetEvent {
                epoch,
                kind: EventKind::Extend,
                cloud: c,
                source: Some(e.source),
                target: e.target,
                class: e.class,
                score: e.confidence,
            });
        }
        for d in propagate::dropout_superpoints(state, &h, model.dims.classes, params.drop_fraction) {
            events.push(SetEvent {
                epoch,
                kind: EventKind::Drop,
                cloud: c,
                source: None,
                target: d.target,
                class: d.class,
                score: d.distance,
            });
        }
    }
    Ok(())
}

/// Trains from scratch on `scenes`.
///
/// Epochs are numbered from 0. At the start of every epoch `e > 0` with
/// `e % interval_m == 0` (when propagation is enabled) each scene gets one
/// propagation sweep followed by dropout. Every epoch then visits the scenes
/// in a seeded order, one Adam step per batch on
/// `L_s + lambda1 L_es + lambda2 L_ese`.
pub fn train(scenes: &[Scene], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let Some(first) = scenes.first() else {
        return Err(TrainError::NoScenes);
    };
    let classes = first.cloud.num_classes();
    if let Some(s) = scenes.iter().find(|s| s.cloud.num_classes() != classes) {
        return Err(TrainError::ClassCount(classes, s.cloud.num_classes()));
    }
    if config.dims.classes != classes {
        return Err(TrainError::ClassCount(config.dims.classes, classes));
    }
    if scenes.iter().all(|s| s.labels.supervised_count() == 0) {
        return Err(TrainError::NoSupervision);
    }

    let mut model = ModelParams::init(config.dims, config.seed)?;
    let mut adam_state = AdamState::zeros(&model.params);
    let mut states: Vec<SupervisionState> = scenes.iter().map(Scene::initial_state).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut log = RunLog::default();

    for epoch in 0..config.epochs {
        let m = config.propagation.interval_m;
        if config.propagate && epoch > 0 && epoch % m == 0 {
            propagation_round(&model, scenes, &mut states, &config.propagation, epoch, &mut log.events)?;
        }

        order.shuffle(&mut order_rng);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut sums = [0.0; 4];
        let mut epoch_logits: Vec<Option<Tensor>> = vec![None; scenes.len()];
        for batch in &batches {
            let r = train_batch(&mut model, &mut adam_state, scenes, &states, batch, config)?;
            for (s, v) in sums.iter_mut().zip([r.loss_s, r.loss_es, r.loss_ese, r.loss_final]) {
                *s += v;
            }
            for (c, y) in r.logits {
                epoch_logits[c] = Some(y);
            }
        }
        let nb = batches.len() as f64;

        let mut pred = Vec::new();
        let mut gt = Vec::new();
        let (mut hits, mut covered) = (0, 0);
        let (mut s, mut u, mut e) = (0, 0, 0);
        for ((scene, state), logits) in scenes.iter().zip(&states).zip(&epoch_logits) {
            let sp_pred = argmax_rows(logits.as_ref().expect("every scene is in a batch"));
            pred.extend(scene.assignment.iter().map(|&sp| sp_pred[sp]));
            gt.extend_from_slice(scene.cloud.gt_labels());
            let (h, t) = extended_hits(state, scene.graph.nodes(), scene.cloud.gt_labels());
            hits += h;
            covered += t;
            let sizes = state.sizes();
            s += sizes.0;
            u += sizes.1;
            e += sizes.2;
        }
        let metrics = evaluate(&pred, &gt, classes)?;
        log.epochs.push(EpochRecord {
            epoch,
            loss_s: sums[0] / nb,
            loss_es: sums[1] / nb,
            loss_ese: sums[2] / nb,
            loss_final: sums[3] / nb,
            supervised: s,
            extended: e,
            unsupervised: u,
            overall_accuracy: metrics.overall_accuracy,
            mean_iou: metrics.mean_iou,
            mean_accuracy: metrics.mean_accuracy,
            oa_extended: (covered > 0).then(|| hits as f64 / covered as f64),
        });
    }
    Ok(TrainOutcome { model, states, log })
}

/// Per-point classes from the segmentation head alone.
pub fn predict(model: &ModelParams, scene: &Scene) -> Result<Vec<usize>, TrainError> {
    let (_, logits) = model.infer(&scene.input)?;
    let sp_pred = argmax_rows(&logits);
    Ok(scene.assignment.iter().map(|&sp| sp_pred[sp]).collect())
}

/// Point-level metrics of `model` over all `scenes` pooled together.
pub fn evaluate_scenes(model: &ModelParams, scenes: &[Scene]) -> Result<Metrics, TrainError> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for scene in scenes {
        pred.extend(predict(model, scene)?);
        gt.extend_from_slice(scene.cloud.gt_labels());
    }
    Ok(evaluate(&pred, &gt, model.dims.classes)?)
}
