//! Finite-difference gradient suites over every tape op and the composite losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sspc_core::attention;
use sspc_core::embed::{self, SceneInput};
use sspc_core::nn::{grad_check, BoundParams, GruCell, Linear, Mlp2, NnError, ParamSet, SetAxis, Tape, Tensor, Var};
use sspc_core::{build_graph, gen_synthetic, partition_cloud, ModelDims, ModelParams, PartitionParams, SceneSpec};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero, so ReLU kinks sit outside the difference stencil.
pub fn rand_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(out * r)` for a fixed random `r`, so every output coordinate matters.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(rand_tensor(&mut rng, &shape));
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

/// Worst relative error over [`SEEDS`] random inputs.
pub fn max_err<F>(make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var], u64) -> Result<Var, NnError>,
{
    (0..SEEDS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = make(&mut rng);
            grad_check(|t, v| f(t, v, seed), &inputs, EPS).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

type LayerFn = Box<dyn Fn(&mut Tape, &BoundParams, &[Var]) -> Result<Var, NnError>>;

/// Layer parameters become explicit inputs so the checker perturbs them too.
pub fn layer_max_err(build: impl Fn(&mut ParamSet, &mut ChaCha8Rng) -> LayerFn, extra: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>) -> f64 {
    (0..SEEDS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut set = ParamSet::new();
            let fwd = build(&mut set, &mut rng);
            let mut inputs: Vec<Tensor> = set.iter().map(|p| p.tensor.clone()).collect();
            let np = inputs.len();
            inputs.extend(extra(&mut rng));
            let f = |t: &mut Tape, v: &[Var]| {
                let p = BoundParams::from_vars(v[..np].to_vec());
                let y = fwd(t, &p, &v[np..])?;
                project(t, y, seed)
            };
            grad_check(f, &inputs, EPS).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error per differentiable op.
pub fn op_suite() -> Vec<(String, f64)> {
    let two = |r: &mut ChaCha8Rng| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])];
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, err: f64| out.push((name.to_string(), err));

    push("matmul", max_err(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 2])], |t, v, s| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, s)
    }));
    push("add_bias", max_err(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4])], |t, v, s| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, s)
    }));
    push("linear", max_err(|r| vec![rand_tensor(r, &[5, 3]), rand_tensor(r, &[3, 4]), rand_tensor(r, &[4])], |t, v, s| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, s)
    }));
    push("add", max_err(two, |t, v, s| {
        let y = t.add(v[0], v[1])?;
        project(t, y, s)
    }));
    push("sub", max_err(two, |t, v, s| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, s)
    }));
    push("mul", max_err(two, |t, v, s| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, s)
    }));
    push("scale", max_err(|r| vec![rand_tensor(r, &[2, 5])], |t, v, s| {
        let y = t.scale(v[0], -1.7);
        project(t, y, s)
    }));
    push("relu", max_err(|r| vec![rand_nonzero(r, &[4, 4])], |t, v, s| {
        let y = t.relu(v[0]);
        project(t, y, s)
    }));
    push("sigmoid", max_err(|r| vec![rand_tensor(r, &[4, 3])], |t, v, s| {
        let y = t.sigmoid(v[0]);
        project(t, y, s)
    }));
    push("tanh", max_err(|r| vec![rand_tensor(r, &[4, 3])], |t, v, s| {
        let y = t.tanh(v[0]);
        project(t, y, s)
    }));
    push("sum", max_err(|r| vec![rand_tensor(r, &[3, 3])], |t, v, _| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    }));
    push("mean", max_err(|r| vec![rand_tensor(r, &[2, 3, 2])], |t, v, _| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.mean(sq))
    }));
    push("reshape", max_err(|r| vec![rand_tensor(r, &[2, 6])], |t, v, s| {
        let y = t.reshape(v[0], &[3, 2, 2])?;
        project(t, y, s)
    }));
    for axis in 0..3 {
        let name = format!("softmax/3d axis {axis}");
        push(&name, max_err(|r| vec![rand_tensor(r, &[3, 4, 2])], move |t, v, s| {
            let y = t.softmax(v[0], axis)?;
            project(t, y, s)
        }));
    }
    for axis in 0..2 {
        let name = format!("softmax/2d axis {axis}");
        push(&name, max_err(|r| vec![rand_tensor(r, &[4, 3])], move |t, v, s| {
            let y = t.softmax(v[0], axis)?;
            project(t, y, s)
        }));
    }
    push("softmax_lastdim", max_err(|r| vec![rand_tensor(r, &[5, 3])], |t, v, s| {
        let y = t.softmax_lastdim(v[0])?;
        project(t, y, s)
    }));
    push("cross_entropy", max_err(|r| vec![rand_tensor(r, &[6, 4])], |t, v, s| {
        let targets: Vec<usize> = (0..6).map(|i| (i + s as usize) % 4).collect();
        t.cross_entropy(v[0], &targets)
    }));
    push("gather_rows", max_err(|r| vec![rand_tensor(r, &[4, 3])], |t, v, s| {
        let y = t.gather_rows(v[0], &[2, 0, 2, 3, 1, 2])?;
        project(t, y, s)
    }));
    push("scatter_add_rows", max_err(|r| vec![rand_tensor(r, &[5, 3])], |t, v, s| {
        let y = t.scatter_add_rows(v[0], &[1, 1, 0, 3, 1], 4)?;
        project(t, y, s)
    }));
    push("segment_max", max_err(|r| vec![rand_tensor(r, &[7, 3])], |t, v, s| {
        let y = t.segment_max(v[0], &[0, 2, 3, 7])?;
        project(t, y, s)
    }));
    push("concat_rows", max_err(|r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[1, 3]), rand_tensor(r, &[3, 3])], |t, v, s| {
        let y = t.concat_rows(v)?;
        project(t, y, s)
    }));
    push("pairwise_diff", max_err(|r| vec![rand_tensor(r, &[3, 2]), rand_tensor(r, &[4, 2])], |t, v, s| {
        let y = t.pairwise_diff(v[0], v[1])?;
        project(t, y, s)
    }));
    push("weighted_set_sum/second", max_err(|r| vec![rand_tensor(r, &[3, 4, 2]), rand_tensor(r, &[4, 2])], |t, v, s| {
        let y = t.weighted_set_sum(v[0], v[1], SetAxis::Second)?;
        project(t, y, s)
    }));
    push("weighted_set_sum/first", max_err(|r| vec![rand_tensor(r, &[3, 4, 2]), rand_tensor(r, &[3, 2])], |t, v, s| {
        let y = t.weighted_set_sum(v[0], v[1], SetAxis::First)?;
        project(t, y, s)
    }));
    push(
        "gru",
        layer_max_err(
            |set, rng| {
                let cell = GruCell::new(set, "gru", 3, rng).unwrap();
                Box::new(move |t, p, x| cell.forward(t, p, x[0], x[1]))
            },
            |r| vec![rand_tensor(r, &[4, 3]), rand_tensor(r, &[4, 3])],
        ),
    );
    push(
        "mlp2",
        layer_max_err(
            |set, rng| {
                let mlp = Mlp2::new(set, "mlp", 3, 5, 2, rng).unwrap();
                Box::new(move |t, p, x| mlp.forward(t, p, x[0]))
            },
            |r| vec![rand_tensor(r, &[4, 3])],
        ),
    );
    push(
        "segmentation head + L_s",
        layer_max_err(
            |set, rng| {
                let head = Linear::new(set, "head", 4, 3, rng).unwrap();
                let labels = [Some(0), None, Some(2), Some(1), None];
                Box::new(move |t, p, x| {
                    let y = embed::seg_logits(t, p, &head, x[0]).unwrap();
                    Ok(embed::loss_s(t, y, &labels).unwrap())
                })
            },
            |r| vec![rand_tensor(r, &[5, 4])],
        ),
    );
    out
}

/// Parameters with phi and alpha sharpened: at the default init every X_s
/// row is close to the plain mean of alpha(h_E), which leaves the reverse
/// branch with ~1e-9 gradients that differences cannot resolve.
pub fn sharpened(set: &ParamSet) -> Vec<Tensor> {
    set.iter()
        .map(|p| {
            let k = if p.name.starts_with("attn.phi") || p.name.starts_with("attn.alpha") { 3.0 } else { 1.0 };
            Tensor::new(p.tensor.shape(), p.tensor.data().iter().map(|v| v * k).collect()).unwrap()
        })
        .collect()
}

fn scaled(t: Tensor, k: f64) -> Tensor {
    let shape = t.shape().to_vec();
    Tensor::new(&shape, t.into_data().into_iter().map(|v| v * k).collect()).unwrap()
}

/// `L_es + L_ese` over fixed labels.
pub fn attention_loss(tape: &mut Tape, p: &BoundParams, a: &attention::AttnParams, hs: Var, he: Var) -> Var {
    let (x_s, _) = attention::forward_attention(tape, p, a, hs, he).unwrap();
    let (y_e, _) = attention::reverse_attention(tape, p, a, he, x_s).unwrap();
    let l1 = attention::loss_es(tape, p, a, x_s, &[0, 1, 2]).unwrap();
    let l2 = attention::loss_ese(tape, p, a, y_e, &[2, 2, 0, 1]).unwrap();
    tape.add(l1, l2).unwrap()
}

pub fn attention_losses_max_err() -> f64 {
    (0..SEEDS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut set = ParamSet::new();
            let a = attention::AttnParams::new(&mut set, 3, 3, &mut rng).unwrap();
            let mut inputs = sharpened(&set);
            let np = inputs.len();
            inputs.push(scaled(rand_tensor(&mut rng, &[3, 3]), 3.0));
            inputs.push(scaled(rand_tensor(&mut rng, &[4, 3]), 3.0));
            // Exact-zero coordinates (dead ReLUs, softmax shift directions) pick up
            // one ulp of the loss from the differences; the 1e-3 scale keeps that
            // below the checker's absolute 1e-8 floor.
            let f = |tape: &mut Tape, v: &[Var]| {
                let p = BoundParams::from_vars(v[..np].to_vec());
                let l = attention_loss(tape, &p, &a, v[np], v[np + 1]);
                Ok(tape.scale(l, 1e-3))
            };
            grad_check(f, &inputs, EPS).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

/// `L_s + L_es + L_ese` through encoder, GNN, head and attention on a real
/// (small) partitioned scene, with every model parameter perturbed.
pub fn full_pipeline_max_err() -> f64 {
    (0..SEEDS)
        .map(|seed| {
            let spec = SceneSpec { num_objects: 2, classes: 4, extent: 2.0, points_per_object: 12 };
            let cloud = gen_synthetic(&spec, seed).unwrap();
            let graph = build_graph(partition_cloud(&cloud, &PartitionParams::default()).unwrap(), 3).unwrap();
            let input = SceneInput::new(&cloud, &graph).unwrap();
            let model = ModelParams::init(ModelDims { hidden: 3, embed: 3, classes: 4, gnn_steps: 2 }, seed).unwrap();
            let n = graph.len();
            assert!(n >= 4, "seed {seed}: only {n} superpoints");
            let labels: Vec<Option<usize>> = (0..n).map(|i| (i % 3 == 0).then_some(i % 4)).collect();
            let sup: Vec<(usize, usize)> = labels.iter().enumerate().filter_map(|(i, l)| l.map(|c| (i, c))).collect();
            let ext: Vec<(usize, usize)> = (0..n).filter(|i| i % 3 == 1).map(|i| (i, (i + 1) % 4)).collect();
            let inputs = sharpened(&model.params);
            let f = |tape: &mut Tape, v: &[Var]| {
                let p = BoundParams::from_vars(v.to_vec());
                let (h, logits) = model.forward_scene(tape, &p, &input).unwrap();
                let l_s = embed::loss_s(tape, logits, &labels).unwrap();
                let h_s = tape.gather_rows(h, &sup.iter().map(|x| x.0).collect::<Vec<_>>())?;
                let h_e = tape.gather_rows(h, &ext.iter().map(|x| x.0).collect::<Vec<_>>())?;
                let a = &model.attention;
                let (x_s, _) = attention::forward_attention(tape, &p, a, h_s, h_e).unwrap();
                let (y_e, _) = attention::reverse_attention(tape, &p, a, h_e, x_s).unwrap();
                let l_es = attention::loss_es(tape, &p, a, x_s, &sup.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
                let l_ese = attention::loss_ese(tape, &p, a, y_e, &ext.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
                let l = tape.add(l_s, l_es)?;
                let l = tape.add(l, l_ese)?;
                // keeps one-ulp noise at exact-zero coordinates under the absolute floor
                Ok(tape.scale(l, 1e-3))
            };
            grad_check(f, &inputs, EPS).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

/// Both composite losses.
pub fn composite_suite() -> Vec<(String, f64)> {
    vec![
        ("L_es + L_ese".to_string(), attention_losses_max_err()),
        ("L_s + L_es + L_ese (full model)".to_string(), full_pipeline_max_err()),
    ]
}
