//! Channel selection: Gumbel selection (GCS) with its residual variant (ResGS), and the
//! convolutional regularized selector (ConvRS).

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, Graph, Init, Linear, PRelu, ParamId, ParamStore, Tensor, Var};
use crate::signal::EegTrial;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Full,
    Gcs,
    Resgs,
    Convrs,
}

/// Selection budget: `K` neurons for Gumbel selection, `gamma` for ConvRS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaOrK {
    K(usize),
    Gamma(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSubset {
    pub method: SelectionMethod,
    #[serde(rename = "gamma_or_K")]
    pub gamma_or_k: GammaOrK,
    pub indices: Vec<usize>,
    pub duplicate_count: usize,
    pub mean_probabilities: Vec<f64>,
}

impl ChannelSubset {
    pub fn new(method: SelectionMethod, gamma_or_k: GammaOrK, indices: Vec<usize>, mean_probabilities: Vec<f64>) -> Self {
        let duplicate_count = count_duplicates(&indices);
        ChannelSubset { method, gamma_or_k, indices, duplicate_count, mean_probabilities }
    }

    /// Distinct channel ids in ascending order.
    pub fn unique(&self) -> Vec<usize> {
        let mut u = self.indices.clone();
        u.sort_unstable();
        u.dedup();
        u
    }
}

pub fn count_duplicates(indices: &[usize]) -> usize {
    let mut u = indices.to_vec();
    u.sort_unstable();
    u.dedup();
    indices.len() - u.len()
}

/// Learnable selection logits `log_alpha` (`K x Q`) and the current temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSelectorState {
    pub log_alpha: Tensor,
    pub tau: f64,
}

impl GumbelSelectorState {
    pub fn new(log_alpha: Tensor, tau: f64) -> Result<Self> {
        let (k, q) = log_alpha.dims2();
        if k == 0 || k > q {
            return Err(Error::invalid(format!("selector needs 1 <= K <= Q, got K = {k}, Q = {q}")));
        }
        check_tau(tau)?;
        Ok(GumbelSelectorState { log_alpha, tau })
    }

    /// State from positive `alpha` values (`log_alpha = ln alpha`).
    pub fn from_alpha(alpha: &Tensor, tau: f64) -> Result<Self> {
        if alpha.data().iter().any(|&a| !(a > 0.0)) {
            return Err(Error::invalid("alpha entries must be positive"));
        }
        Self::new(alpha.map(f64::ln), tau)
    }

    pub fn k(&self) -> usize {
        self.log_alpha.rows()
    }

    pub fn q(&self) -> usize {
        self.log_alpha.cols()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// Standard Gumbel noise of the given shape.
pub fn sample_gumbel<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel parameters are valid");
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| g.sample(rng)).collect())
}

/// Row-wise `softmax((log_alpha + noise) / tau)`.
pub fn gumbel_weights(log_alpha: &Tensor, noise: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    if log_alpha.shape() != noise.shape() {
        return Err(Error::shape("Gumbel noise shape must match log_alpha"));
    }
    let mut g = Graph::inference();
    let la = g.constant(log_alpha.clone());
    let w = gumbel_weights_var(&mut g, la, noise, tau);
    Ok(g.value(w).clone())
}

pub fn gumbel_sample_weights<R: Rng + ?Sized>(state: &GumbelSelectorState, rng: &mut R) -> Result<Tensor> {
    let noise = sample_gumbel(state.k(), state.q(), rng);
    gumbel_weights(&state.log_alpha, &noise, state.tau)
}

/// Differentiable relaxed selection weights; gradients flow into `log_alpha`.
pub fn gumbel_weights_var(g: &mut Graph, log_alpha: Var, noise: &Tensor, tau: f64) -> Var {
    let n = g.constant(noise.clone());
    let z = g.add(log_alpha, n);
    let z = g.scale(z, 1.0 / tau);
    g.softmax_rows(z)
}

/// Per-neuron channel probabilities `alpha_nk / sum_j alpha_jk`.
pub fn gcs_probabilities(state: &GumbelSelectorState) -> Tensor {
    let mut p = state.log_alpha.clone();
    let q = state.q();
    for row in p.data_mut().chunks_mut(q) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Hard selection: each neuron keeps its most probable channel; duplicates are counted, not removed.
pub fn gcs_test_select(state: &GumbelSelectorState, method: SelectionMethod) -> ChannelSubset {
    let q = state.q();
    let p = gcs_probabilities(state);
    let indices: Vec<usize> = state.log_alpha.data().chunks(q).map(argmax_lowest).collect();
    let mut mean = vec![0.0; q];
    for row in p.data().chunks(q) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / state.k() as f64);
    }
    ChannelSubset::new(method, GammaOrK::K(state.k()), indices, mean)
}

fn selected_labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("Sel{i}")).collect()
}

/// `z_k = w_k^T e` for every time sample: a `K`-channel trial.
pub fn gcs_apply(e: &EegTrial, w: &Tensor) -> Result<EegTrial> {
    let (k, q) = w.dims2();
    if q != e.n_channels() {
        return Err(Error::shape(format!("weights have {q} columns, trial has {} channels", e.n_channels())));
    }
    let mut g = Graph::inference();
    let wv = g.constant(w.clone());
    let ev = g.constant(e.to_tensor());
    let z = g.matmul(wv, ev, false, false);
    EegTrial::from_channel_major(k, g.value(z).data().to_vec(), e.fs(), selected_labels(k), e.stage())
}

/// Where selected channels land when padded back to `Q` channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingPlacement {
    /// Neuron `k` occupies channel slot `k`.
    #[default]
    Leading,
    /// Neuron `k` occupies the slot of its most probable channel.
    Argmax,
}

/// Destination channel slot of every neuron under `placement`.
pub fn padding_slots(state: &GumbelSelectorState, placement: PaddingPlacement) -> Vec<usize> {
    match placement {
        PaddingPlacement::Leading => (0..state.k()).collect(),
        PaddingPlacement::Argmax => state.log_alpha.data().chunks(state.q()).map(argmax_lowest).collect(),
    }
}

/// `(1 - a) e + a Padding(z)` with `z` in the leading channel slots.
pub fn resgs_combine(e: &EegTrial, z: &EegTrial, a: f64) -> Result<EegTrial> {
    let slots: Vec<usize> = (0..z.n_channels()).collect();
    resgs_combine_at(e, z, a, &slots)
}

/// Residual combination with explicit destination slots (slots may repeat; contributions add).
pub fn resgs_combine_at(e: &EegTrial, z: &EegTrial, a: f64, slots: &[usize]) -> Result<EegTrial> {
    let (q, k) = (e.n_channels(), z.n_channels());
    if k > q {
        return Err(Error::invalid(format!("cannot pad {k} selected channels into {q}")));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("residual weight must lie in [0, 1], got {a}")));
    }
    if z.n_samples() != e.n_samples() || slots.len() != k || slots.iter().any(|&s| s >= q) {
        return Err(Error::shape("selected channels do not fit the trial"));
    }
    let t = e.n_samples();
    let mut out: Vec<f64> = e.data().iter().map(|v| (1.0 - a) * v).collect();
    for (i, &s) in slots.iter().enumerate() {
        for (o, zv) in out[s * t..(s + 1) * t].iter_mut().zip(z.channel(i)) {
            *o += a * zv;
        }
    }
    EegTrial::from_channel_major(q, out, e.fs(), e.labels().to_vec(), e.stage())
}

/// Trainable Gumbel selection layer; `log_alpha` lives in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GcsLayer {
    pub log_alpha: ParamId,
    pub k: usize,
    pub q: usize,
}

impl GcsLayer {
    /// Logits start near zero (uniform selection) with small noise to break neuron symmetry.
    pub fn new<R: Rng>(init: &mut Init<'_, R>, k: usize, q: usize) -> Result<Self> {
        if k == 0 || k > q {
            return Err(Error::invalid(format!("selector needs 1 <= K <= Q, got K = {k}, Q = {q}")));
        }
        Ok(GcsLayer { log_alpha: init.normal("log_alpha", &[k, q], 0.01), k, q })
    }

    pub fn state(&self, store: &ParamStore, tau: f64) -> Result<GumbelSelectorState> {
        GumbelSelectorState::new(store.value(self.log_alpha).clone(), tau)
    }
}

/// Convolutional selector: `n1` blocks of depthwise conv, pointwise conv, PReLU and
/// stride-2 max pooling, then a linear head with PReLU and sigmoid giving `s` in `[0, 1]^Q`.
#[derive(Clone, Debug)]
pub struct ConvRsSelector {
    blocks: Vec<(Conv1d, Conv1d, PRelu)>,
    head: Linear,
    head_act: PRelu,
    q: usize,
    in_len: usize,
}

/// Temporal length after `n1` halvings (odd lengths are padded to even first).
pub fn convrs_reduced_len(in_len: usize, n1: usize) -> usize {
    (0..n1).fold(in_len, |t, _| t.div_ceil(2))
}

impl ConvRsSelector {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, q: usize, n1: usize, in_len: usize) -> Result<Self> {
        if in_len < 1 << n1 {
            return Err(Error::TooShort { what: "selector input", got: in_len, need: 1 << n1 });
        }
        let blocks = (0..n1)
            .map(|i| {
                let mut b = init.sub(&format!("block{i}"));
                (Conv1d::depthwise(&mut b, "depth", q, 3, 1), Conv1d::pointwise(&mut b, "point", q, q), PRelu::new(&mut b, "act"))
            })
            .collect();
        let flat = q * convrs_reduced_len(in_len, n1);
        let head = Linear::new(init, "head", flat, q);
        let head_act = PRelu::new(init, "head_act");
        Ok(ConvRsSelector { blocks, head, head_act, q, in_len })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n1(&self) -> usize {
        self.blocks.len()
    }

    /// Input length the linear head was built for.
    pub fn in_len(&self) -> usize {
        self.in_len
    }

    /// Selection vector `[1, Q]` for a `[Q, in_len]` input.
    pub fn forward_window(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Var {
        let mut h = e;
        for (depth, point, act) in &self.blocks {
            h = depth.forward(g, store, h);
            h = point.forward(g, store, h);
            h = act.forward(g, store, h);
            h = g.maxpool2_cols(h);
        }
        let n = g.value(h).len();
        let flat = g.reshape(h, &[1, n]);
        let y = self.head.forward(g, store, flat);
        let y = self.head_act.forward(g, store, y);
        g.sigmoid(y)
    }

    /// Selection vector for any input at least `in_len` long: the mean over consecutive
    /// non-overlapping windows of the trained length (a trailing partial window is dropped).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<Var> {
        let (q, t) = g.value(e).dims2();
        if q != self.q {
            return Err(Error::shape(format!("selector built for {} channels, got {q}", self.q)));
        }
        if t < self.in_len {
            return Err(Error::TooShort { what: "selector input", got: t, need: self.in_len });
        }
        if t == self.in_len {
            return Ok(self.forward_window(g, store, e));
        }
        let outs: Vec<Var> = (0..t / self.in_len)
            .map(|w| {
                let win = g.crop_cols(e, w * self.in_len, self.in_len);
                self.forward_window(g, store, win)
            })
            .collect();
        let sum = g.add_n(&outs);
        Ok(g.scale(sum, 1.0 / outs.len() as f64))
    }
}

/// Selection vector of one trial (inference only).
pub fn convrs_forward(sel: &ConvRsSelector, store: &ParamStore, e: &EegTrial) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let ev = g.constant(e.to_tensor());
    let s = sel.forward(&mut g, store, ev)?;
    Ok(g.value(s).data().to_vec())
}

/// `e ⊙ expand(s)`: channel `c` scaled by `s[c]`.
pub fn convrs_apply(e: &EegTrial, s: &[f64]) -> Result<EegTrial> {
    if s.len() != e.n_channels() {
        return Err(Error::shape(format!("{} gains for {} channels", s.len(), e.n_channels())));
    }
    let t = e.n_samples();
    let data = e.data().chunks(t).zip(s).flat_map(|(ch, &k)| ch.iter().map(move |v| v * k)).collect();
    EegTrial::from_channel_major(e.n_channels(), data, e.fs(), e.labels().to_vec(), e.stage())
}

/// Channels whose mean selection probability reaches `threshold` (inclusive).
pub fn aggregate_selection(vectors: &[Vec<f64>], threshold: f64, gamma: f64) -> Result<ChannelSubset> {
    let first = vectors.first().ok_or_else(|| Error::invalid("no selection vectors to aggregate"))?;
    let q = first.len();
    if vectors.iter().any(|v| v.len() != q) {
        return Err(Error::shape("selection vectors differ in length"));
    }
    let n = vectors.len() as f64;
    let mean: Vec<f64> = (0..q).map(|c| vectors.iter().map(|v| v[c]).sum::<f64>() / n).collect();
    let indices = (0..q).filter(|&c| mean[c] >= threshold).collect();
    Ok(ChannelSubset::new(SelectionMethod::Convrs, GammaOrK::Gamma(gamma), indices, mean))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::signal::EegStage;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(&[rows, cols], (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    fn trial(r: &mut ChaCha8Rng, q: usize, t: usize) -> EegTrial {
        let d = random_tensor(r, q, t);
        EegTrial::from_channel_major(q, d.into_data(), 128.0, EegTrial::default_labels(q), EegStage::Mua).unwrap()
    }

    #[test]
    fn sampled_rows_are_distributions() {
        let mut r = rng(1);
        let st = GumbelSelectorState::new(random_tensor(&mut r, 4, 16), 0.7).unwrap();
        let w = gumbel_sample_weights(&st, &mut r).unwrap();
        for row in w.data().chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let mut r = rng(2);
        let st = GumbelSelectorState::new(Tensor::zeros(&[3, 10]), 1e6).unwrap();
        let w = gumbel_sample_weights(&st, &mut r).unwrap();
        assert!(w.data().iter().all(|v| (v - 0.1).abs() < 1e-3));
    }

    #[test]
    fn tiny_temperature_without_noise_is_one_hot() {
        let mut r = rng(3);
        let la = random_tensor(&mut r, 3, 10);
        let w = gumbel_weights(&la, &Tensor::zeros(&[3, 10]), 1e-4).unwrap();
        for (row, lrow) in w.data().chunks(10).zip(la.data().chunks(10)) {
            let m = row.iter().copied().fold(0.0, f64::max);
            assert!(m > 0.999);
            assert_eq!(argmax_lowest(row), argmax_lowest(lrow));
        }
    }

    #[test]
    fn invalid_temperature_is_rejected() {
        assert!(GumbelSelectorState::new(Tensor::zeros(&[1, 2]), 0.0).is_err());
        assert!(gumbel_weights(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 2]), -1.0).is_err());
    }

    #[test]
    fn sharpening_is_monotone_in_temperature() {
        let mut r = rng(4);
        let la = random_tensor(&mut r, 5, 8);
        let noise = sample_gumbel(5, 8, &mut r);
        let mut prev = vec![0.0; 5];
        for tau in [10.0, 1.0, 0.1, 0.01] {
            let w = gumbel_weights(&la, &noise, tau).unwrap();
            for (k, row) in w.data().chunks(8).enumerate() {
                let m = row.iter().copied().fold(0.0, f64::max);
                assert!(m >= prev[k] - 1e-12);
                prev[k] = m;
            }
        }
    }

    #[test]
    fn reparametrized_gradient_matches_differences() {
        let mut r = rng(5);
        let la = random_tensor(&mut r, 3, 6);
        let noise = sample_gumbel(3, 6, &mut r);
        let c = random_tensor(&mut r, 3, 6);
        let tau = 0.5;
        let f = |la: &Tensor| -> f64 {
            let w = gumbel_weights(la, &noise, tau).unwrap();
            w.data().iter().zip(c.data()).map(|(a, b)| a * b * b + a * a * b).sum()
        };
        let mut g = Graph::new();
        let lv = g.leaf(la.clone());
        let w = gumbel_weights_var(&mut g, lv, &noise, tau);
        let cv = g.constant(c.clone());
        let ww = g.mul(w, w);
        let a = g.mul(w, cv);
        let a = g.mul(a, cv);
        let b = g.mul(ww, cv);
        let s = g.add(a, b);
        let loss = g.sum(s);
        assert!((g.value(loss).item() - f(&la)).abs() < 1e-12);
        let grads = g.backward(loss);
        let grad = grads.wrt(lv).unwrap();
        for i in 0..la.len() {
            let h = 1e-6;
            let mut p = la.clone();
            p.data_mut()[i] += h;
            let mut m = la.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let rel = (grad.data()[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-3 || (grad.data()[i] - fd).abs() < 1e-9, "{i}: {} vs {fd}", grad.data()[i]);
        }
    }

    #[test]
    fn gcs_apply_special_cases_and_oracle() {
        let mut r = rng(6);
        let e = trial(&mut r, 4, 20);
        let mut onehot = Tensor::zeros(&[2, 4]);
        onehot.data_mut()[2] = 1.0;
        onehot.data_mut()[4] = 1.0;
        let z = gcs_apply(&e, &onehot).unwrap();
        assert_eq!(z.channel(0), e.channel(2));
        assert_eq!(z.channel(1), e.channel(0));

        let z = gcs_apply(&e, &Tensor::full(&[3, 4], 0.25)).unwrap();
        for k in 0..3 {
            for t in 0..20 {
                let mean = (0..4).map(|c| e.channel(c)[t]).sum::<f64>() / 4.0;
                assert!((z.channel(k)[t] - mean).abs() < 1e-12);
            }
        }

        let w = random_tensor(&mut r, 3, 4);
        let z = gcs_apply(&e, &w).unwrap();
        for k in 0..3 {
            for t in 0..20 {
                let mut acc = 0.0;
                for c in 0..4 {
                    acc += w.data()[k * 4 + c] * e.channel(c)[t];
                }
                assert!((z.channel(k)[t] - acc).abs() < 1e-6);
            }
        }
        assert!(gcs_apply(&e, &Tensor::zeros(&[2, 5])).is_err());
    }

    #[test]
    fn probabilities_normalize_alpha() {
        let st = GumbelSelectorState::from_alpha(&Tensor::new(&[1, 3], vec![1.0, 1.0, 2.0]), 1.0).unwrap();
        let p = gcs_probabilities(&st);
        for (a, b) in p.data().iter().zip([0.25, 0.25, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        let st = GumbelSelectorState::new(Tensor::zeros(&[2, 5]), 1.0).unwrap();
        assert!(gcs_probabilities(&st).data().iter().all(|v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn test_select_counts_duplicates_and_breaks_ties_low() {
        let st = GumbelSelectorState::new(Tensor::new(&[2, 3], vec![0.0, 5.0, 0.0, 1.0, 7.0, 2.0]), 1.0).unwrap();
        let s = gcs_test_select(&st, SelectionMethod::Gcs);
        assert_eq!(s.indices, vec![1, 1]);
        assert_eq!(s.duplicate_count, 1);
        let st = GumbelSelectorState::new(Tensor::new(&[1, 3], vec![2.0, 2.0, 1.0]), 1.0).unwrap();
        assert_eq!(gcs_test_select(&st, SelectionMethod::Gcs).indices, vec![0]);
        let st = GumbelSelectorState::from_alpha(&Tensor::new(&[2, 3], vec![1e-9, 1.0, 1e-9, 1e-9, 1e-9, 1.0]), 1.0).unwrap();
        let s = gcs_test_select(&st, SelectionMethod::Resgs);
        assert_eq!((s.indices.clone(), s.duplicate_count), (vec![1, 2], 0));
    }

    #[test]
    fn resgs_combine_hand_values() {
        let e = EegTrial::new(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]],
            128.0,
            EegTrial::default_labels(4),
            EegStage::Mua,
        )
        .unwrap();
        let z = EegTrial::new(vec![vec![10.0, 20.0], vec![30.0, 40.0]], 128.0, EegTrial::default_labels(2), EegStage::Mua)
            .unwrap();
        let out = resgs_combine(&e, &z, 0.1).unwrap();
        let expect = [1.9, 3.8, 5.7, 7.6, 4.5, 5.4, 6.3, 7.2];
        for (a, b) in out.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(resgs_combine(&e, &z, 0.0).unwrap().data(), e.data());
        let zero = e.zero_except(&[]).unwrap();
        let out = resgs_combine(&zero, &z, 0.1).unwrap();
        for (a, b) in out.data().iter().zip([1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let big = EegTrial::new(vec![vec![0.0; 2]; 5], 128.0, EegTrial::default_labels(5), EegStage::Mua).unwrap();
        assert!(resgs_combine(&e, &big, 0.1).is_err());
        let scattered = resgs_combine_at(&e, &z, 0.1, &[3, 1]).unwrap();
        assert!((scattered.channel(3)[0] - (0.9 * 7.0 + 1.0)).abs() < 1e-12);
    }

    fn selector(seed: u64, q: usize, t: usize) -> (ParamStore, ConvRsSelector) {
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        let mut init = Init::new(&mut store, &mut r, "selector");
        let sel = ConvRsSelector::new(&mut init, q, 4, t).unwrap();
        (store, sel)
    }

    #[test]
    fn convrs_shapes_and_range() {
        assert_eq!(convrs_reduced_len(256, 4), 16);
        assert_eq!(convrs_reduced_len(250, 4), 16);
        let (store, sel) = selector(7, 6, 256);
        assert_eq!(store.value(store.lookup("selector.head.weight").unwrap()).shape(), &[6, 6 * 16]);
        let mut r = rng(8);
        for t in [256, 600] {
            let s = convrs_forward(&sel, &store, &trial(&mut r, 6, t)).unwrap();
            assert_eq!(s.len(), 6);
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(convrs_forward(&sel, &store, &trial(&mut r, 6, 100)).is_err());
        assert!(convrs_forward(&sel, &store, &trial(&mut r, 5, 256)).is_err());
    }

    #[test]
    fn convrs_apply_matches_broadcast() {
        let mut r = rng(9);
        let e = trial(&mut r, 3, 10);
        assert_eq!(convrs_apply(&e, &[1.0; 3]).unwrap().data(), e.data());
        let out = convrs_apply(&e, &[1.0, 0.0, 1.0]).unwrap();
        assert!(out.channel(1).iter().all(|&v| v == 0.0));
        let s = [0.3, 0.9, 0.05];
        let out = convrs_apply(&e, &s).unwrap();
        for c in 0..3 {
            for t in 0..10 {
                assert!((out.channel(c)[t] - e.channel(c)[t] * s[c]).abs() < 1e-7);
            }
        }
        assert!(convrs_apply(&e, &[1.0]).is_err());
    }

    #[test]
    fn aggregation_thresholds_inclusively() {
        let s = aggregate_selection(&[vec![0.9, 0.1, 0.6]], 0.5, 0.1).unwrap();
        assert_eq!(s.indices, vec![0, 2]);
        assert_eq!(s.duplicate_count, 0);
        let s = aggregate_selection(&[vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]], 0.5, 0.0).unwrap();
        assert_eq!(s.indices, vec![0, 2]);
        let s = aggregate_selection(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.5, 0.0).unwrap();
        assert_eq!(s.indices, vec![0, 1]);
        assert!(aggregate_selection(&[], 0.5, 0.0).is_err());
    }

    #[test]
    fn subset_json_layout() {
        let s = ChannelSubset::new(SelectionMethod::Resgs, GammaOrK::K(4), vec![3, 7, 3], vec![0.5; 2]);
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["method"], "resgs");
        assert_eq!(v["gamma_or_K"], 4);
        assert_eq!(v["duplicate_count"], 1);
        let back: ChannelSubset = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let c = ChannelSubset::new(SelectionMethod::Convrs, GammaOrK::Gamma(0.0), vec![], vec![]);
        let back: ChannelSubset = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn selections_are_deterministic() {
        let (s1, a) = selector(11, 4, 64);
        let (s2, b) = selector(11, 4, 64);
        let e = trial(&mut rng(12), 4, 64);
        assert_eq!(convrs_forward(&a, &s1, &e).unwrap(), convrs_forward(&b, &s2, &e).unwrap());
        let st = GumbelSelectorState::new(random_tensor(&mut rng(13), 2, 4), 1.0).unwrap();
        assert_eq!(
            gumbel_sample_weights(&st, &mut rng(14)).unwrap(),
            gumbel_sample_weights(&st, &mut rng(14)).unwrap()
        );
    }

    proptest::proptest! {
        #[test]
        fn probabilities_ignore_per_neuron_shifts(
            la in proptest::collection::vec(-3.0f64..3.0, 12),
            shift in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let base = GumbelSelectorState::new(Tensor::new(&[3, 4], la.clone()), 1.0).unwrap();
            let shifted: Vec<f64> = la.iter().enumerate().map(|(i, v)| v + shift[i / 4]).collect();
            let moved = GumbelSelectorState::new(Tensor::new(&[3, 4], shifted), 1.0).unwrap();
            proptest::prop_assert!(gcs_probabilities(&base).max_abs_diff(&gcs_probabilities(&moved)) < 1e-12);
        }

        #[test]
        fn hard_selection_survives_monotone_rescaling(
            alpha in proptest::collection::vec(0.01f64..10.0, 12),
            p in 0.2f64..3.0,
            c in 0.1f64..10.0,
        ) {
            let a = Tensor::new(&[3, 4], alpha.clone());
            let b = Tensor::new(&[3, 4], alpha.iter().map(|v| c * v.powf(p)).collect());
            let sa = gcs_test_select(&GumbelSelectorState::from_alpha(&a, 1.0).unwrap(), SelectionMethod::Gcs);
            let sb = gcs_test_select(&GumbelSelectorState::from_alpha(&b, 1.0).unwrap(), SelectionMethod::Gcs);
            proptest::prop_assert_eq!(sa.indices, sb.indices);
        }
    }
}
