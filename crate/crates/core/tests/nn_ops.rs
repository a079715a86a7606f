use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspc_core::nn::{grad_check, Adam, AdamState, GruCell, Linear, Mlp2, NnError, ParamSet, Tape, Tensor};

mod oracles;

use oracles::grad::{project, rand_tensor, EPS, SEEDS, TOL};

#[test]
fn every_op_passes_gradient_check() {
    let suite = oracles::grad::op_suite();
    assert!(suite.len() >= 25);
    for (name, err) in suite {
        assert!(err < TOL, "{name}: rel err {err:e}");
    }
}

#[test]
fn grad_linear_tight() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[3, 2]), rand_tensor(&mut rng, &[2])];
        let err = grad_check(
            |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                project(t, y, seed)
            },
            &inputs,
            EPS,
        )
        .unwrap();
        assert!(err < 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn grad_check_examples() {
    let ones = Tensor::full(&[5], 1.0);
    let err = grad_check(|t, v| Ok(t.sum(v[0])), &[ones.clone()], EPS).unwrap();
    assert!(err < 1e-9);

    let mut tape = Tape::new();
    let x = tape.leaf(ones.clone());
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0; 5]);
    let err = grad_check(
        |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        },
        &[ones],
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn grad_check_reports_non_finite() {
    let x = Tensor::full(&[2], 1.0);
    let r = grad_check(
        |t, v| {
            let big = t.scale(v[0], 1e300);
            let big = t.scale(big, 1e300);
            Ok(t.sum(big))
        },
        &[x],
        EPS,
    );
    assert_eq!(r, Err(NnError::NonFinite));
}

#[test]
fn linear_identity_and_zero_input() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 4.0]]).unwrap());
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let w = tape.constant(eye);
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let zero = tape.constant(Tensor::zeros(&[4, 2]));
    let w = tape.constant(Tensor::full(&[2, 3], 0.7));
    let b = tape.constant(Tensor::new(&[3], vec![1.0, -1.0, 2.5]).unwrap());
    let y = tape.linear(zero, w, b).unwrap();
    for r in 0..4 {
        assert_eq!(tape.value(y).row(r), &[1.0, -1.0, 2.5]);
    }
}

#[test]
fn linear_rejects_mismatched_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[4, 2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(tape.linear(x, w, b), Err(NnError::ShapeMismatch { .. })));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    for w in 1..8 {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, w], 3.3));
        let y = tape.softmax_lastdim(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / w as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn cross_entropy_vanishes_with_growing_margin() {
    let mut last = f64::INFINITY;
    for gap in [1.0, 5.0, 10.0, 20.0, 40.0] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![gap, 0.0, 0.0]]).unwrap());
        let l = tape.cross_entropy(x, &[0]).unwrap();
        let v = tape.value(l).item();
        assert!(v < last);
        last = v;
    }
    assert!(last < 1e-15);
}

#[test]
fn cross_entropy_rejects_bad_target() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3]));
    assert_eq!(tape.cross_entropy(x, &[3]).unwrap_err(), NnError::TargetOutOfRange { target: 3, classes: 3 });
}

#[test]
fn gru_with_closed_update_gate_keeps_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut set = ParamSet::new();
    let cell = GruCell::new(&mut set, "gru", 3, &mut rng).unwrap();
    let bias = set.find("gru.update.bias").unwrap();
    set.get_mut(bias).tensor = Tensor::full(&[3], -1e4);
    let mut tape = Tape::new();
    let p = set.bind(&mut tape);
    let h0 = rand_tensor(&mut rng, &[2, 3]);
    let h = tape.constant(h0.clone());
    let m = tape.constant(rand_tensor(&mut rng, &[2, 3]));
    let out = cell.forward(&mut tape, &p, h, m).unwrap();
    for (a, b) in tape.value(out).data().iter().zip(h0.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut set = ParamSet::new();
    Linear::new(&mut set, "l", 3, 2, &mut rng).unwrap();
    let before = set.clone();
    let mut state = AdamState::zeros(&set);
    let grads: Vec<Tensor> = set.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
    for _ in 0..5 {
        Adam::default().step(&mut set, &grads, &mut state);
    }
    assert_eq!(set, before);
}

#[test]
fn adam_descends_on_square() {
    assert_eq!(Adam::default().lr, 0.01);
    let mut set = ParamSet::new();
    set.add("x", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
    let mut state = AdamState::zeros(&set);
    let grads = vec![Tensor::new(&[1], vec![2.0]).unwrap()];
    Adam::default().step(&mut set, &grads, &mut state);
    let x = set.iter().next().unwrap().tensor.data()[0];
    assert!(x * x < 1.0);
    // first bias-corrected step moves by exactly lr * g / (|g| + eps)
    assert!((x - (1.0 - 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
}

#[test]
fn constants_never_receive_gradients() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::full(&[2, 2], 1.0));
    let x = tape.leaf(Tensor::full(&[2, 2], 2.0));
    let y = tape.mul(c, x).unwrap();
    let l = tape.sum(y);
    let grads = tape.backward(l).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut set = ParamSet::new();
        let mlp = Mlp2::new(&mut set, "m", 4, 8, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let p = set.bind(&mut tape);
        let x = tape.constant(rand_tensor(&mut rng, &[5, 4]));
        let y = mlp.forward(&mut tape, &p, x).unwrap();
        let y = tape.softmax(y, 0).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run(), run());
}
