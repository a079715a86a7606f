//! Loop-form reference for the coupled attention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sspc_core::attention::{self, AttentionError, AttnParams};
use sspc_core::nn::{Linear, Mlp2, ParamSet, Tape, Tensor};

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn lin(set: &ParamSet, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = &set.get(l.weight).tensor;
    let b = set.get(l.bias).tensor.data();
    let out = w.cols();
    (0..out).map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * out + o]).sum::<f64>()).collect()
}

pub fn mlp(set: &ParamSet, m: &Mlp2, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = lin(set, &m.hidden, x).into_iter().map(|v| v.max(0.0)).collect();
    lin(set, &m.out, &h)
}

pub struct Reference {
    pub w_es: Vec<Vec<Vec<f64>>>,
    pub x_s: Vec<Vec<f64>>,
    pub w_ese: Vec<Vec<Vec<f64>>>,
    pub y_e: Vec<Vec<f64>>,
}

/// Straight loops over the attention definitions.
pub fn reference(set: &ParamSet, a: &AttnParams, hs: &[Vec<f64>], he: &[Vec<f64>]) -> Reference {
    let d = hs[0].len();
    let (ns, ne) = (hs.len(), he.len());
    let sub = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();

    let mut w_es = vec![vec![vec![0.0; d]; ne]; ns];
    let mut x_s = vec![vec![0.0; d]; ns];
    let alpha: Vec<Vec<f64>> = he.iter().map(|h| mlp(set, &a.alpha, h)).collect();
    for i in 0..ns {
        let scores: Vec<Vec<f64>> = he.iter().map(|hj| mlp(set, &a.phi, &sub(&hs[i], hj))).collect();
        for l in 0..d {
            let z: f64 = (0..ne).map(|j| scores[j][l].exp()).sum();
            for j in 0..ne {
                w_es[i][j][l] = scores[j][l].exp() / z;
                x_s[i][l] += w_es[i][j][l] * alpha[j][l];
            }
        }
    }

    let mut w_ese = vec![vec![vec![0.0; d]; ne]; ns];
    let mut y_e = vec![vec![0.0; d]; ne];
    let beta: Vec<Vec<f64>> = x_s.iter().map(|x| mlp(set, &a.beta, x)).collect();
    for j in 0..ne {
        let scores: Vec<Vec<f64>> = x_s.iter().map(|xi| mlp(set, &a.psi, &sub(&he[j], xi))).collect();
        for l in 0..d {
            let z: f64 = (0..ns).map(|i| scores[i][l].exp()).sum();
            for i in 0..ns {
                w_ese[i][j][l] = scores[i][l].exp() / z;
                y_e[j][l] += w_ese[i][j][l] * beta[i][l];
            }
        }
    }
    Reference { w_es, x_s, w_ese, y_e }
}

pub struct Run {
    pub x_s: Tensor,
    pub w_es: Tensor,
    pub y_e: Tensor,
    pub w_ese: Tensor,
}

pub fn run(set: &ParamSet, a: &AttnParams, hs: &Tensor, he: &Tensor) -> Result<Run, AttentionError> {
    let mut tape = Tape::new();
    let p = set.bind(&mut tape);
    let s = tape.constant(hs.clone());
    let e = tape.constant(he.clone());
    let (x_s, w_es) = attention::forward_attention(&mut tape, &p, a, s, e)?;
    let (y_e, w_ese) = attention::reverse_attention(&mut tape, &p, a, e, x_s)?;
    Ok(Run {
        x_s: tape.value(x_s).clone(),
        w_es: tape.value(w_es).clone(),
        y_e: tape.value(y_e).clone(),
        w_ese: tape.value(w_ese).clone(),
    })
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn setup(seed: u64, d: usize, classes: usize) -> (ParamSet, AttnParams, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    let a = AttnParams::new(&mut set, d, classes, &mut rng).unwrap();
    (set, a, rng)
}

/// A random instance with `|S|, |E| <= 8` and `D <= 4`.
pub fn instance(seed: u64) -> (ParamSet, AttnParams, Tensor, Tensor) {
    let mut pick = ChaCha8Rng::seed_from_u64(1000 + seed);
    let (ns, ne, d) = (pick.gen_range(1..=8), pick.gen_range(1..=8), pick.gen_range(1..=4));
    let (set, a, mut rng) = setup(seed, d, 3);
    let hs = rand_tensor(&mut rng, ns, d);
    let he = rand_tensor(&mut rng, ne, d);
    (set, a, hs, he)
}

/// Largest absolute gap between the tape implementation and the loop
/// reference over `count` instances, across weights and outputs.
pub fn reference_gap(count: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..count {
        let (set, a, hs, he) = instance(seed);
        let (ns, ne, d) = (hs.rows(), he.rows(), hs.cols());
        let got = run(&set, &a, &hs, &he).unwrap();
        let want = reference(&set, &a, &rows(&hs), &rows(&he));
        assert_eq!(got.w_es.shape(), &[ns, ne, d]);
        assert_eq!(got.w_ese.shape(), &[ns, ne, d]);
        for i in 0..ns {
            for j in 0..ne {
                for l in 0..d {
                    worst = worst.max((got.w_es.at3(i, j, l) - want.w_es[i][j][l]).abs());
                    worst = worst.max((got.w_ese.at3(i, j, l) - want.w_ese[i][j][l]).abs());
                }
            }
            for l in 0..d {
                worst = worst.max((got.x_s.at2(i, l) - want.x_s[i][l]).abs());
            }
        }
        for j in 0..ne {
            for l in 0..d {
                worst = worst.max((got.y_e.at2(j, l) - want.y_e[j][l]).abs());
            }
        }
    }
    worst
}

/// Largest deviation from 1 of a per-(query, channel) weight sum over `count`
/// instances: W_es sums over E, W_ese over S.
pub fn normalization_gap(count: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..count {
        let (set, a, hs, he) = instance(seed);
        let (ns, ne, d) = (hs.rows(), he.rows(), hs.cols());
        let r = run(&set, &a, &hs, &he).unwrap();
        for l in 0..d {
            for i in 0..ns {
                let total: f64 = (0..ne).map(|j| r.w_es.at3(i, j, l)).sum();
                worst = worst.max((total - 1.0).abs());
            }
            for j in 0..ne {
                let total: f64 = (0..ns).map(|i| r.w_ese.at3(i, j, l)).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    worst
}
