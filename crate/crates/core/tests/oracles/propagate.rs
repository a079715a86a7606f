//! Straight-line references for label propagation and superpoint dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sspc_core::nn::Tensor;
use sspc_core::propagate::{self, AdjacencyList};
use sspc_core::{Membership, PropagationParams, SupervisionState};

pub fn random_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        // sharpen a random class so a good share of rows clear tau
        let hot = rng.gen_range(0..c);
        let raw: Vec<f64> = (0..c).map(|k| if k == hot { rng.gen_range(0.0..40.0) } else { rng.gen_range(0.0..1.0) }).collect();
        let total: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / total));
    }
    Tensor::new(&[n, c], data).unwrap()
}

pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn random_members(rng: &mut ChaCha8Rng, n: usize, c: usize, p_sup: f64, p_ext: f64) -> Vec<Membership> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen();
            if x < p_sup {
                Membership::Supervised(rng.gen_range(0..c))
            } else if x < p_sup + p_ext {
                Membership::Extended(rng.gen_range(0..c))
            } else {
                Membership::Unsupervised
            }
        })
        .collect()
}

pub fn label(m: Membership) -> Option<usize> {
    match m {
        Membership::Supervised(c) | Membership::Extended(c) => Some(c),
        Membership::Unsupervised => None,
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

pub fn graph_has(edges: &[(usize, usize)], a: usize, b: usize) -> bool {
    edges.contains(&(a.min(b), a.max(b)))
}

/// Direct transcription of one sweep over plain vectors and an edge list.
pub fn reference_sweep(members: &mut [Membership], edges: &[(usize, usize)], probs: &Tensor, tau: f64) -> Vec<(usize, usize, usize, f64)> {
    let n = members.len();
    let snapshot: Vec<Option<usize>> = members.iter().map(|&m| label(m)).collect();
    let mut log = Vec::new();
    for i in 0..n {
        let Some(z) = snapshot[i] else { continue };
        let mut best: Option<usize> = None;
        for j in 0..n {
            let adjacent = edges.iter().any(|&(a, b)| (a == i && b == j) || (a == j && b == i));
            if !adjacent || i == j || members[j] != Membership::Unsupervised || argmax(probs.row(j)) != z {
                continue;
            }
            best = match best {
                Some(b) if probs.row(b)[z] >= probs.row(j)[z] => Some(b),
                _ => Some(j),
            };
        }
        if let Some(j) = best {
            if probs.row(j)[z] >= tau {
                members[j] = Membership::Extended(z);
                log.push((i, j, z, probs.row(j)[z]));
            }
        }
    }
    log
}

/// Sweeps on `graphs` random graphs (2..=20 nodes, 2..=4 classes) against
/// [`reference_sweep`]; returns the number of extensions exercised.
pub fn sweep_oracle(graphs: u64) -> Result<usize, String> {
    let params = PropagationParams::default();
    let mut total = 0;
    for seed in 0..graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=20);
        let c = rng.gen_range(2..=4);
        let density = rng.gen_range(0.05..0.4);
        let edges = random_edges(&mut rng, n, density);
        let probs = random_probs(&mut rng, n, c);
        let members = random_members(&mut rng, n, c, 0.15, 0.15);
        let mut want = members.clone();
        let want_log = reference_sweep(&mut want, &edges, &probs, params.tau);
        let mut state = SupervisionState::from_members(members);
        let graph = AdjacencyList::from_edges(n, &edges);
        let log = propagate::propagate_once(&mut state, &graph, &probs, &params);
        if state.members() != &want[..] {
            return Err(format!("graph {seed}: sets differ from the reference"));
        }
        let got: Vec<_> = log.iter().map(|e| (e.source, e.target, e.class, e.confidence)).collect();
        if got != want_log {
            return Err(format!("graph {seed}: extension log differs from the reference"));
        }
        if let Some(e) = log.iter().find(|e| e.confidence < params.tau) {
            return Err(format!("graph {seed}: extension {} -> {} below tau ({})", e.source, e.target, e.confidence));
        }
        total += log.len();
    }
    Ok(total)
}

/// Dropout on `states` random states against a sort oracle with coarse grid
/// features, so distance ties are common; returns the number of drops.
pub fn dropout_oracle(states: u64) -> Result<usize, String> {
    let mut dropped_total = 0;
    for seed in 0..states {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(10..200);
        let c = rng.gen_range(1..4);
        let members = random_members(&mut rng, n, c, 0.05, 0.8);
        let feats = Tensor::new(&[n, 2], (0..n * 2).map(|_| rng.gen_range(0..4) as f64).collect()).unwrap();
        let mut state = SupervisionState::from_members(members.clone());
        let log = propagate::dropout_superpoints(&mut state, &feats, c, 0.05);

        let mut expected_after = members.clone();
        let mut expected_log = Vec::new();
        for k in 0..c {
            let class_rows: Vec<usize> = (0..n).filter(|&i| label(members[i]) == Some(k)).collect();
            let ext: Vec<usize> = (0..n).filter(|&i| members[i] == Membership::Extended(k)).collect();
            if class_rows.is_empty() || ext.is_empty() {
                continue;
            }
            let center: Vec<f64> = (0..2).map(|d| class_rows.iter().map(|&i| feats.row(i)[d]).sum::<f64>() / class_rows.len() as f64).collect();
            let dist = |i: usize| ((feats.row(i)[0] - center[0]).powi(2) + (feats.row(i)[1] - center[1]).powi(2)).sqrt();
            let mut order = ext.clone();
            // farthest first, equal distances: larger id first
            order.sort_by(|&a, &b| dist(b).partial_cmp(&dist(a)).unwrap().then(b.cmp(&a)));
            let k_drop = (0.05 * ext.len() as f64 + 1e-9).floor() as usize;
            for &j in &order[..k_drop] {
                expected_after[j] = Membership::Unsupervised;
                expected_log.push((j, k));
            }
            let per_class = log.iter().filter(|d| d.class == k).count();
            if per_class != k_drop {
                return Err(format!("state {seed} class {k}: dropped {per_class}, expected {k_drop}"));
            }
        }
        if state.members() != &expected_after[..] {
            return Err(format!("state {seed}: sets differ from the sort oracle"));
        }
        if log.iter().map(|d| (d.target, d.class)).collect::<Vec<_>>() != expected_log {
            return Err(format!("state {seed}: dropped ids differ from the sort oracle"));
        }
        dropped_total += log.len();
    }
    Ok(dropped_total)
}

/// Random interleavings of sweeps and dropout checked against the set
/// invariants after every operation.
pub fn state_machine(steps: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 120;
    let c = 3;
    let edges = random_edges(&mut rng, n, 0.05);
    let graph = AdjacencyList::from_edges(n, &edges);
    let initial = random_members(&mut rng, n, c, 0.05, 0.0);
    let mut state = SupervisionState::from_members(initial.clone());
    let params = PropagationParams::default();
    let fail = |step: usize, what: &str| Err(format!("step {step}: {what}"));
    for step in 0..steps {
        let before = state.clone();
        if rng.gen_bool(0.6) {
            let probs = random_probs(&mut rng, n, c);
            let log = propagate::propagate_once(&mut state, &graph, &probs, &params);
            let mut targets: Vec<usize> = log.iter().map(|e| e.target).collect();
            targets.sort_unstable();
            targets.dedup();
            if targets.len() != log.len() {
                return fail(step, "target extended twice");
            }
            for e in &log {
                if before.membership(e.target) != Membership::Unsupervised
                    || state.membership(e.target) != Membership::Extended(e.class)
                    || before.label_of(e.source) != Some(e.class)
                    || e.confidence < params.tau
                    || !graph_has(&edges, e.source, e.target)
                {
                    return fail(step, "extension violates its preconditions");
                }
            }
            if state.sizes().2 != before.sizes().2 + log.len() {
                return fail(step, "|E| grew by the wrong amount");
            }
        } else {
            let feats = Tensor::new(&[n, 2], (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let log = propagate::dropout_superpoints(&mut state, &feats, c, 0.05);
            for d in &log {
                if before.membership(d.target) != Membership::Extended(d.class) || state.membership(d.target) != Membership::Unsupervised {
                    return fail(step, "drop moved a non-extended superpoint");
                }
            }
            for k in 0..c {
                let ext = before.members().iter().filter(|&&m| m == Membership::Extended(k)).count();
                if log.iter().filter(|d| d.class == k).count() != ext / 20 {
                    return fail(step, "wrong drop count");
                }
            }
        }
        let (s, u, e) = state.sizes();
        if s + u + e != n {
            return fail(step, "S, U, E no longer partition the superpoints");
        }
        for i in 0..n {
            let ok = match initial[i] {
                Membership::Supervised(k) => state.membership(i) == Membership::Supervised(k),
                _ => !matches!(state.membership(i), Membership::Supervised(_)),
            };
            if !ok {
                return fail(step, "S changed");
            }
        }
    }
    Ok(())
}
