//! Supervision state over superpoints: graph label propagation and
//! distance-based dropout of extended superpoints.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::nn::Tensor;
use crate::partition::{SuperpointGraph, SuperpointLabels};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PropagateError {
    #[error("no supervised superpoint")]
    NoSupervision,
}

/// Role of one superpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Membership {
    /// In `S`, with its annotated class.
    Supervised(usize),
    /// In `U`.
    Unsupervised,
    /// In `E`, with its pseudo label.
    Extended(usize),
}

/// Partition of superpoint ids into supervised, unsupervised and extended sets.
///
/// Stored as one role per id, so the three sets are disjoint and cover every id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupervisionState {
    members: Vec<Membership>,
}

impl SupervisionState {
    /// `S` from the labeled superpoints, `E` empty, everything else in `U`.
    pub fn init(labels: &SuperpointLabels) -> Result<Self, PropagateError> {
        let members: Vec<Membership> = labels
            .as_slice()
            .iter()
            .map(|l| l.map_or(Membership::Unsupervised, Membership::Supervised))
            .collect();
        if !members.iter().any(|m| matches!(m, Membership::Supervised(_))) {
            return Err(PropagateError::NoSupervision);
        }
        Ok(Self { members })
    }

    pub fn from_members(members: Vec<Membership>) -> Self {
        Self { members }
    }

    pub fn members(&self) -> &[Membership] {
        &self.members
    }

    pub fn membership(&self, i: usize) -> Membership {
        self.members[i]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Class of a superpoint in `S` (its label) or `E` (its pseudo label).
    pub fn label_of(&self, i: usize) -> Option<usize> {
        match self.members[i] {
            Membership::Supervised(c) | Membership::Extended(c) => Some(c),
            Membership::Unsupervised => None,
        }
    }

    pub fn is_unsupervised(&self, i: usize) -> bool {
        self.members[i] == Membership::Unsupervised
    }

    fn ids_where(&self, f: impl Fn(&Membership) -> bool) -> Vec<usize> {
        self.members.iter().enumerate().filter(|(_, m)| f(m)).map(|(i, _)| i).collect()
    }

    pub fn supervised(&self) -> Vec<usize> {
        self.ids_where(|m| matches!(m, Membership::Supervised(_)))
    }

    pub fn unsupervised(&self) -> Vec<usize> {
        self.ids_where(|m| matches!(m, Membership::Unsupervised))
    }

    pub fn extended(&self) -> Vec<usize> {
        self.ids_where(|m| matches!(m, Membership::Extended(_)))
    }

    /// `(id, label)` over `S`, ascending.
    pub fn supervised_labels(&self) -> Vec<(usize, usize)> {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| match m {
                Membership::Supervised(c) => Some((i, *c)),
                _ => None,
            })
            .collect()
    }

    /// `(id, pseudo label)` over `E`, ascending.
    pub fn pseudo_labels(&self) -> Vec<(usize, usize)> {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| match m {
                Membership::Extended(c) => Some((i, *c)),
                _ => None,
            })
            .collect()
    }

    /// `(|S|, |U|, |E|)`
    pub fn sizes(&self) -> (usize, usize, usize) {
        self.members.iter().fold((0, 0, 0), |(s, u, e), m| match m {
            Membership::Supervised(_) => (s + 1, u, e),
            Membership::Unsupervised => (s, u + 1, e),
            Membership::Extended(_) => (s, u, e + 1),
        })
    }
}

/// Sorted neighbor lists of a graph.
pub trait Adjacency {
    fn num_nodes(&self) -> usize;
    fn neighbors(&self, i: usize) -> &[usize];
}

impl Adjacency for SuperpointGraph {
    fn num_nodes(&self) -> usize {
        self.len()
    }

    fn neighbors(&self, i: usize) -> &[usize] {
        SuperpointGraph::neighbors(self, i)
    }
}

/// Bare undirected adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyList(Vec<Vec<usize>>);

impl AdjacencyList {
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); nodes];
        for &(i, j) in edges {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Self(adj)
    }
}

impl Adjacency for AdjacencyList {
    fn num_nodes(&self) -> usize {
        self.0.len()
    }

    fn neighbors(&self, i: usize) -> &[usize] {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    /// Minimum confidence for an extension.
    pub tau: f64,
    /// Share of each class's extended superpoints dropped per dropout call.
    pub drop_fraction: f64,
    /// Epochs between propagation rounds.
    pub interval_m: usize,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self { tau: 0.9, drop_fraction: 0.05, interval_m: 40 }
    }
}

/// One accepted extension `source -> target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extension {
    pub source: usize,
    pub target: usize,
    pub class: usize,
    pub confidence: f64,
}

/// One extended superpoint returned to `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropped {
    pub target: usize,
    pub class: usize,
    pub distance: f64,
}

/// Unsupervised neighbors of `i` whose predicted class equals `i`'s label,
/// ascending. Empty when `i` is itself unsupervised.
pub fn candidate_set<G: Adjacency>(i: usize, state: &SupervisionState, graph: &G, probs: &Tensor) -> Vec<usize> {
    let Some(class) = state.label_of(i) else {
        return Vec::new();
    };
    graph
        .neighbors(i)
        .iter()
        .copied()
        .filter(|&j| state.is_unsupervised(j) && predicted_class(probs, j) == class)
        .collect()
}

fn predicted_class(probs: &Tensor, j: usize) -> usize {
    let row = probs.row(j);
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// One extension sweep.
///
/// Sources are a snapshot of `S ∪ E` taken on entry, visited in ascending id
/// order. Each source extends at most its most confident candidate (ties to
/// the smallest id), and only when that confidence reaches `tau`; the
/// confidence of `j` for source `i` is `probs[j][label(i)]`. A superpoint
/// extended during the sweep is no longer a candidate for later sources but
/// only acts as a source from the next sweep on.
pub fn propagate_once<G: Adjacency>(state: &mut SupervisionState, graph: &G, probs: &Tensor, params: &PropagationParams) -> Vec<Extension> {
    let sources: Vec<usize> = (0..state.len()).filter(|&i| state.label_of(i).is_some()).collect();
    let mut log = Vec::new();
    for i in sources {
        let class = state.label_of(i).expect("sources keep their label during a sweep");
        let candidates = candidate_set(i, state, graph, probs);
        let mut best: Option<(usize, f64)> = None;
        for j in candidates {
            let m = probs.row(j)[class];
            if best.map_or(true, |(_, bm)| m > bm) {
                best = Some((j, m));
            }
        }
        if let Some((j, m)) = best {
            if m >= params.tau {
                state.members[j] = Membership::Extended(class);
                log.push(Extension { source: i, target: j, class, confidence: m });
            }
        }
    }
    log
}

/// Mean feature row of each class over `S ∪ E`; `None` for empty classes.
pub fn cluster_centers(state: &SupervisionState, features: &Tensor, classes: usize) -> Vec<Option<Vec<f64>>> {
    let width = features.cols();
    let mut sums = vec![vec![0.0; width]; classes];
    let mut counts = vec![0usize; classes];
    for i in 0..state.len() {
        if let Some(c) = state.label_of(i) {
            counts[c] += 1;
            for (s, &f) in sums[c].iter_mut().zip(features.row(i)) {
                *s += f;
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            (n > 0).then(|| {
                s.iter_mut().for_each(|v| *v /= n as f64);
                s
            })
        })
        .collect()
}

/// `floor(fraction * extended)`, tolerant of round-off just below an integer.
pub fn drop_count(fraction: f64, extended: usize) -> usize {
    libm::floor(fraction * extended as f64 + 1e-9) as usize
}

/// Returns the farthest extended superpoints of every class to `U`.
///
/// Per class, distances are taken to the mean feature of the class over
/// `S ∪ E`; `drop_count(drop_fraction, |E ∩ C|)` members with the largest
/// distance are dropped, ties dropping the larger id first.
pub fn dropout_superpoints(state: &mut SupervisionState, features: &Tensor, classes: usize, drop_fraction: f64) -> Vec<Dropped> {
    let centers = cluster_centers(state, features, classes);
    let mut log = Vec::new();
    for (class, center) in centers.iter().enumerate() {
        let Some(center) = center else { continue };
        let mut scored: Vec<(f64, usize)> = state
            .members
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == Membership::Extended(class))
            .map(|(j, _)| {
                let d2: f64 = features.row(j).iter().zip(center).map(|(f, v)| (f - v) * (f - v)).sum();
                (libm::sqrt(d2), j)
            })
            .collect();
        let k = drop_count(drop_fraction, scored.len());
        if k == 0 {
            continue;
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(b.1.cmp(&a.1)));
        for &(distance, j) in &scored[..k] {
            state.members[j] = Membership::Unsupervised;
            log.push(Dropped { target: j, class, distance });
        }
    }
    log
}
