//! Central-difference checks of every op's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds `sum(f(inputs) * weights)` and compares its analytic gradient with central differences.
fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ins: &[Tensor], weights: Option<&Tensor>, grad: bool| {
        let mut g = if grad { Graph::new() } else { Graph::inference() };
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out, weights.cloned())
    };
    let (mut g, vars, out, _) = eval(&inputs, None, true);
    let weights = rand_tensor(&mut rng, g.value(out).shape());
    let wv = g.constant(weights.clone());
    let prod = g.mul(out, wv);
    let loss = g.sum(prod);
    let grads = g.backward(loss);

    let h = 1e-6;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            let l = |ins: &[Tensor]| {
                let (g, _, out, _) = eval(ins, None, false);
                g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let numeric = (l(&plus) - l(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            let tol = 1e-6 + 1e-5 * a.abs().max(numeric.abs());
            assert!((a - numeric).abs() <= tol, "input {i} elem {j}: analytic {a} vs numeric {numeric}");
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn elementwise_ops() {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[3, 4]);
    check(vec![a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]);
        let d = g.sub(s, v[1]);
        let m = g.mul(d, v[1]);
        let t = g.tanh(m);
        let s2 = g.sigmoid(t);
        let sc = g.scale(s2, 1.7);
        g.add_scalar(sc, 0.3)
    });
    check(vec![a.map(|v| v + 0.05 * v.signum()), Tensor::scalar(0.2)], |g, v| g.prelu(v[0], v[1]));
    check(vec![a.map(|v| if v.abs() < 0.05 { 0.3 } else { v })], |g, v| g.relu(v[0]));
}

#[test]
fn reductions_and_broadcasts() {
    let mut r = rng();
    let x = rand_tensor(&mut r, &[3, 5]);
    let b = rand_tensor(&mut r, &[3]);
    check(vec![x.clone(), b.clone()], |g, v| g.add_row_bias(v[0], v[1]));
    check(vec![x.clone(), b.clone()], |g, v| g.mul_rows(v[0], v[1]));
    check(vec![x.clone()], |g, v| g.sum_sq(v[0]));
    check(vec![x.clone()], |g, v| g.mean(v[0]));
    check(vec![x.clone()], |g, v| g.softmax_rows(v[0]));
    check(vec![x.clone(), x.map(|v| v * 0.5)], |g, v| g.add_n(&[v[0], v[1], v[0]]));
}

#[test]
fn matmul_all_transposes() {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[4, 2]);
    check(vec![a.clone(), b.clone()], |g, v| g.matmul(v[0], v[1], false, false));
    let at = rand_tensor(&mut r, &[4, 3]);
    check(vec![at.clone(), b.clone()], |g, v| g.matmul(v[0], v[1], true, false));
    let bt = rand_tensor(&mut r, &[2, 4]);
    check(vec![a.clone(), bt.clone()], |g, v| g.matmul(v[0], v[1], false, true));
    check(vec![at, bt], |g, v| g.matmul(v[0], v[1], true, true));
}

#[test]
fn shape_ops() {
    let mut r = rng();
    let x = rand_tensor(&mut r, &[4, 7]);
    let y = rand_tensor(&mut r, &[2, 7]);
    check(vec![x.clone(), y.clone()], |g, v| {
        let c = g.concat_rows(&[v[0], v[1]]);
        g.slice_rows(c, 1, 4)
    });
    check(vec![x.clone()], |g, v| g.crop_cols(v[0], 2, 8));
    check(vec![x.clone()], |g, v| g.reshape(v[0], &[1, 28]));
    check(vec![y.clone()], |g, v| g.scatter_rows(v[0], &[3, 3], 5));
    check(vec![x.clone()], |g, v| g.resample_cols(v[0], 19));
    check(vec![x.clone()], |g, v| g.resample_cols(v[0], 3));
    check(vec![x.clone()], |g, v| g.maxpool2_cols(v[0]));
}

#[test]
fn convolutions() {
    let mut r = rng();
    let x = rand_tensor(&mut r, &[3, 20]);
    let w = rand_tensor(&mut r, &[4, 3, 5]);
    let b = rand_tensor(&mut r, &[4]);
    for spec in [
        ConvSpec::default(),
        ConvSpec { stride: 3, pad_left: 2, pad_right: 1, dilation: 1, groups: 1 },
        ConvSpec { stride: 1, pad_left: 4, pad_right: 4, dilation: 2, groups: 1 },
    ] {
        check(vec![x.clone(), w.clone(), b.clone()], move |g, v| g.conv1d(v[0], v[1], Some(v[2]), spec));
    }
    let pw = rand_tensor(&mut r, &[4, 3, 1]);
    check(vec![x.clone(), pw], |g, v| g.conv1d(v[0], v[1], None, ConvSpec::default()));
    let dw = rand_tensor(&mut r, &[3, 1, 3]);
    let db = rand_tensor(&mut r, &[3]);
    let spec = ConvSpec { stride: 1, pad_left: 2, pad_right: 2, dilation: 2, groups: 3 };
    check(vec![x.clone(), dw, db], move |g, v| g.conv1d(v[0], v[1], Some(v[2]), spec));
    let wt = rand_tensor(&mut r, &[3, 2, 6]);
    check(vec![x.clone(), wt], |g, v| g.conv_transpose1d(v[0], v[1], 4));
}

#[test]
fn group_norm_gradients_and_statistics() {
    let mut r = rng();
    let x = rand_tensor(&mut r, &[4, 6]);
    let gm = rand_tensor(&mut r, &[4]);
    let bt = rand_tensor(&mut r, &[4]);
    for groups in [1, 2] {
        check(vec![x.clone(), gm.clone(), bt.clone()], move |g, v| g.group_norm(v[0], v[1], v[2], groups));
    }
    let mut g = Graph::inference();
    let xv = g.constant(x.map(|v| 3.0 * v + 1.5));
    let ones = g.constant(Tensor::full(&[4], 1.0));
    let zeros = g.constant(Tensor::zeros(&[4]));
    let y = g.group_norm(xv, ones, zeros, 2);
    for grp in 0..2 {
        let s = &g.value(y).data()[grp * 12..(grp + 1) * 12];
        let mean = s.iter().sum::<f64>() / 12.0;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn attention_gradients() {
    let mut r = rng();
    let q = rand_tensor(&mut r, &[4, 5]);
    let k = rand_tensor(&mut r, &[4, 7]);
    let v = rand_tensor(&mut r, &[4, 7]);
    check(vec![q, k, v], |g, x| g.attention(x[0], x[1], x[2], 2));
}

#[test]
fn attention_blocked_inference_matches_tracked() {
    let mut r = rng();
    let (c, t) = (4, 1100);
    let q = rand_tensor(&mut r, &[c, t]);
    let k = rand_tensor(&mut r, &[c, t]);
    let v = rand_tensor(&mut r, &[c, t]);
    let mut gi = Graph::inference();
    let (a, b, cc) = (gi.constant(q.clone()), gi.constant(k.clone()), gi.constant(v.clone()));
    let oi = gi.attention(a, b, cc, 2);
    let mut gt = Graph::new();
    let (a, b, cc) = (gt.leaf(q), gt.leaf(k), gt.leaf(v));
    let ot = gt.attention(a, b, cc, 2);
    assert!(gi.value(oi).max_abs_diff(gt.value(ot)) < 1e-12);
}

#[test]
fn param_leaves_respect_freezing() {
    let mut store = ParamStore::new();
    let a = store.add("a.w", Tensor::full(&[2], 2.0));
    let b = store.add("b.w", Tensor::full(&[2], 3.0));
    store.set_frozen_prefix("b.", true);
    let mut g = Graph::new();
    let va = g.param(&store, a);
    let vb = g.param(&store, b);
    let m = g.mul(va, vb);
    let s = g.sum(m);
    let grads = g.backward(s);
    assert_eq!(grads.param(a).unwrap().data(), &[3.0, 3.0]);
    assert!(grads.param(b).is_none());
}
