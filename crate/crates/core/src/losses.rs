//! SI-SDR, selection regularizers and their weighted combination.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BackwardFn, Graph, Tensor, Var};

/// Stabilizer added to both norms inside SI-SDR.
pub const SI_SDR_EPS: f64 = 1e-8;

/// Candidate sparsity weights for the progressive ConvRS sweep.
pub const GAMMA_GRID: [f64; 8] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: f64,
    pub k2: f64,
    pub b: f64,
    pub q: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.5, gamma: 0.0, k1: 100.0, k2: 0.25, b: 0.25, q: 0.5 }
    }
}

impl LossWeights {
    /// Separation-only weights (`beta = gamma = 0`).
    pub fn separation_only() -> Self {
        LossWeights { beta: 0.0, gamma: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("k1", self.k1),
            ("k2", self.k2),
            ("b", self.b),
            ("q", self.q),
        ];
        let bad: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(k, v)| format!("loss.{k}: must be finite and >= 0, got {v}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub si_sdr_db: f64,
    pub l_d: f64,
    pub l_reg: f64,
    pub total: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct SiSdrParts {
    alpha: f64,
    ref_norm: f64,
    target_norm: f64,
    residual: Vec<f64>,
    residual_norm: f64,
}

fn si_sdr_parts(est: &[f64], reference: &[f64]) -> Result<SiSdrParts> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!(
            "SI-SDR needs equal lengths, got {} and {}",
            est.len(),
            reference.len()
        )));
    }
    let rr = dot(reference, reference);
    if rr <= 0.0 {
        return Err(Error::invalid("SI-SDR reference has zero norm"));
    }
    let alpha = dot(est, reference) / rr;
    let residual: Vec<f64> = reference.iter().zip(est).map(|(r, e)| alpha * r - e).collect();
    let residual_norm = dot(&residual, &residual).sqrt();
    let ref_norm = rr.sqrt();
    Ok(SiSdrParts { alpha, ref_norm, target_norm: alpha.abs() * ref_norm, residual, residual_norm })
}

impl SiSdrParts {
    fn db(&self) -> f64 {
        20.0 * ((self.target_norm + SI_SDR_EPS) / (self.residual_norm + SI_SDR_EPS)).log10()
    }
}

/// Scale-invariant signal-to-distortion ratio in dB:
/// `20 log10((|x_t| + eps) / (|x_t - est| + eps))` with `x_t` the projection of `est` onto `reference`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(si_sdr_parts(est, reference)?.db())
}

/// SI-SDR of a `[1, L]` (or flat) estimate against a fixed reference, as a differentiable scalar.
pub fn si_sdr_var(g: &mut Graph, est: Var, reference: &[f64]) -> Result<Var> {
    let parts = si_sdr_parts(g.value(est).data(), reference)?;
    let value = Tensor::scalar(parts.db());
    let shape = g.value(est).shape().to_vec();
    let reference = reference.to_vec();
    let k = 20.0 / LN_10;
    let backward: BackwardFn = Box::new(move |gout: &Tensor, _: &[bool]| {
        let scale = gout.item() * k;
        let sign = if parts.alpha > 0.0 {
            1.0
        } else if parts.alpha < 0.0 {
            -1.0
        } else {
            0.0
        };
        let ca = sign / (parts.ref_norm * (parts.target_norm + SI_SDR_EPS));
        let cb = if parts.residual_norm > 0.0 {
            1.0 / (parts.residual_norm * (parts.residual_norm + SI_SDR_EPS))
        } else {
            0.0
        };
        let grad = reference.iter().zip(&parts.residual).map(|(r, res)| scale * (ca * r + cb * res)).collect();
        vec![Some(Tensor::new(&shape, grad))]
    });
    Ok(g.push_op(value, &[est], Some(backward)))
}

fn check_unit_interval(s: &Tensor) -> Result<()> {
    if s.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::invalid("selection probabilities must lie in [0, 1]"))
    }
}

/// `k1 * (b - |S - q|^2 / (Q B))` for a `[B, Q]` batch of selection vectors.
pub fn discretization_loss(s: &Tensor, k1: f64, b: f64, q: f64) -> Result<f64> {
    check_unit_interval(s)?;
    let n = s.len() as f64;
    let dd: f64 = s.data().iter().map(|v| (v - q) * (v - q)).sum();
    Ok(k1 * (-dd / n + b))
}

/// `k2` times the batch mean of `|s|^2` over the rows of a `[B, Q]` batch.
pub fn sparsity_loss(s: &Tensor, k2: f64) -> Result<f64> {
    check_unit_interval(s)?;
    let rows = s.rows().max(1) as f64;
    Ok(k2 * s.sum_sq() / rows)
}

/// Discretization loss of a single selection vector (`B = 1`); averaging it over a batch
/// gives the batch formula.
pub fn discretization_loss_var(g: &mut Graph, s: Var, w: &LossWeights) -> Var {
    let q = g.value(s).len() as f64;
    let d = g.add_scalar(s, -w.q);
    let dd = g.sum_sq(d);
    let scaled = g.scale(dd, -w.k1 / q);
    g.add_scalar(scaled, w.k1 * w.b)
}

pub fn sparsity_loss_var(g: &mut Graph, s: Var, w: &LossWeights) -> Var {
    let ss = g.sum_sq(s);
    g.scale(ss, w.k2)
}

/// `total = -alpha * si_sdr + beta * l_d + gamma * l_reg`.
pub fn total_loss(si_sdr_db: f64, l_d: f64, l_reg: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown { si_sdr_db, l_d, l_reg, total: -w.alpha * si_sdr_db + w.beta * l_d + w.gamma * l_reg }
}

/// Slot for perceptual metrics computed outside this crate (PESQ, STOI, ...).
pub trait ExternalMetric {
    fn name(&self) -> &str;
    fn score(&self, est: &[f64], reference: &[f64], fs: f64) -> Result<f64>;
}

impl<F> ExternalMetric for (&str, F)
where
    F: Fn(&[f64], &[f64], f64) -> Result<f64>,
{
    fn name(&self) -> &str {
        self.0
    }

    fn score(&self, est: &[f64], reference: &[f64], fs: f64) -> Result<f64> {
        (self.1)(est, reference, fs)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Textbook SI-SDR with the projection written out separately from the library code.
    fn oracle(est: &[f64], r: &[f64]) -> f64 {
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let a: f64 = est.iter().zip(r).map(|(e, v)| e * v).sum::<f64>() / rr;
        let t: Vec<f64> = r.iter().map(|v| a * v).collect();
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let en = t.iter().zip(est).map(|(x, e)| (x - e) * (x - e)).sum::<f64>().sqrt();
        20.0 * ((tn + 1e-8) / (en + 1e-8)).log10()
    }

    #[test]
    fn hand_example_is_zero_db() {
        assert!(si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-6);
    }

    #[test]
    fn scaled_reference_is_clamped_high() {
        let r = [0.3, -1.0, 2.0, 0.5];
        let e: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert!(si_sdr(&e, &r).unwrap() >= 140.0);
    }

    #[test]
    fn orthogonal_estimate_is_strongly_negative() {
        assert!(si_sdr(&[0.0, 1.0], &[1.0, 0.0]).unwrap() <= -40.0);
    }

    #[test]
    fn zero_reference_is_rejected() {
        assert!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(si_sdr(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn discretization_hand_values() {
        let half = Tensor::full(&[4, 8], 0.5);
        assert!((discretization_loss(&half, 100.0, 0.25, 0.5).unwrap() - 25.0).abs() < 1e-9);
        let binary = Tensor::new(&[2, 4], vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(discretization_loss(&binary, 100.0, 0.25, 0.5).unwrap(), 0.0);
        let mixed = Tensor::new(&[1, 4], vec![0.5, 0.5, 0.0, 1.0]);
        assert!((discretization_loss(&mixed, 100.0, 0.25, 0.5).unwrap() - 12.5).abs() < 1e-9);
    }

    #[test]
    fn sparsity_hand_values() {
        assert!((sparsity_loss(&Tensor::full(&[3, 128], 1.0), 0.25).unwrap() - 32.0).abs() < 1e-9);
        assert_eq!(sparsity_loss(&Tensor::zeros(&[2, 5]), 0.25).unwrap(), 0.0);
        assert!((sparsity_loss(&Tensor::new(&[1, 2], vec![0.5, 0.5]), 0.25).unwrap() - 0.125).abs() < 1e-12);
        assert!(sparsity_loss(&Tensor::new(&[1, 1], vec![1.5]), 0.25).is_err());
    }

    #[test]
    fn total_combines_components() {
        let w = LossWeights::default();
        assert_eq!(total_loss(10.0, 0.0, 0.0, &w).total, -5.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w).total, 0.0);
        let w = LossWeights { gamma: 0.2, ..w };
        let br = total_loss(4.0, 3.0, 2.0, &w);
        assert!((br.total - (-0.5 * 4.0 + 0.5 * 3.0 + 0.2 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn graph_losses_match_plain_functions() {
        let w = LossWeights::default();
        let s = Tensor::new(&[1, 4], vec![0.1, 0.9, 0.5, 0.3]);
        let mut g = Graph::new();
        let v = g.leaf(s.clone());
        let ld = discretization_loss_var(&mut g, v, &w);
        let lr = sparsity_loss_var(&mut g, v, &w);
        assert!((g.value(ld).item() - discretization_loss(&s, w.k1, w.b, w.q).unwrap()).abs() < 1e-12);
        assert!((g.value(lr).item() - sparsity_loss(&s, w.k2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn discretization_gradient_matches_closed_form_and_differences() {
        let w = LossWeights::default();
        let s = Tensor::new(&[1, 5], vec![0.1, 0.9, 0.45, 0.3, 0.77]);
        let mut g = Graph::new();
        let v = g.leaf(s.clone());
        let ld = discretization_loss_var(&mut g, v, &w);
        let grads = g.backward(ld);
        let grad = grads.wrt(v).unwrap();
        let q = s.len() as f64;
        for i in 0..s.len() {
            let closed = -2.0 * w.k1 * (s.data()[i] - w.q) / q;
            let h = 1e-6;
            let mut p = s.clone();
            p.data_mut()[i] += h;
            let mut m = s.clone();
            m.data_mut()[i] -= h;
            let fd = (discretization_loss(&p, w.k1, w.b, w.q).unwrap() - discretization_loss(&m, w.k1, w.b, w.q).unwrap())
                / (2.0 * h);
            assert!((grad.data()[i] - closed).abs() <= 1e-9 * closed.abs().max(1.0));
            assert!((fd - closed).abs() <= 1e-6 * closed.abs().max(1e-3));
        }
    }

    #[test]
    fn si_sdr_gradient_matches_differences() {
        let r = vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7];
        let e = vec![0.5, -0.2, 1.0, 0.9, -0.4, 0.3];
        let mut g = Graph::new();
        let v = g.leaf(Tensor::new(&[1, 6], e.clone()));
        let out = si_sdr_var(&mut g, v, &r).unwrap();
        assert!((g.value(out).item() - oracle(&e, &r)).abs() < 1e-12);
        let grads = g.backward(out);
        let grad = grads.wrt(v).unwrap();
        for i in 0..e.len() {
            let h = 1e-6;
            let mut p = e.clone();
            p[i] += h;
            let mut m = e.clone();
            m[i] -= h;
            let fd = (oracle(&p, &r) - oracle(&m, &r)) / (2.0 * h);
            assert!((grad.data()[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {} vs {fd}", grad.data()[i]);
        }
    }

    #[test]
    fn external_metric_slot_accepts_closures() {
        let m = ("energy_ratio", |e: &[f64], r: &[f64], _fs: f64| Ok(dot(e, e) / dot(r, r)));
        assert_eq!(m.name(), "energy_ratio");
        assert_eq!(m.score(&[2.0], &[1.0], 8000.0).unwrap(), 4.0);
    }

    proptest! {
        #[test]
        fn si_sdr_is_scale_invariant(
            r in prop::collection::vec(-1.0f64..1.0, 16),
            n in prop::collection::vec(-1.0f64..1.0, 16),
            c in prop::sample::select(vec![0.1, 1.0, 10.0, 3.7]),
        ) {
            prop_assume!(r.iter().map(|v| v * v).sum::<f64>() > 0.1);
            let e: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + 0.5 * b).collect();
            let ce: Vec<f64> = e.iter().map(|v| c * v).collect();
            let base = si_sdr(&e, &r).unwrap();
            prop_assert!((si_sdr(&ce, &r).unwrap() - base).abs() < 1e-6);
            prop_assert!((base - oracle(&e, &r)).abs() < 1e-9);
        }

        #[test]
        fn discretization_loss_is_bounded(s in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let t = Tensor::new(&[1, s.len()], s);
            let l = discretization_loss(&t, 100.0, 0.25, 0.5).unwrap();
            prop_assert!((-1e-9..=25.0 + 1e-9).contains(&l));
        }

        #[test]
        fn sparsity_loss_is_monotone(
            s in prop::collection::vec(0.0f64..0.9, 1..20),
            bump in prop::collection::vec(0.001f64..0.1, 20),
        ) {
            let t = Tensor::new(&[1, s.len()], s.clone());
            let up: Vec<f64> = s.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let tu = Tensor::new(&[1, up.len()], up);
            prop_assert!(sparsity_loss(&tu, 0.25).unwrap() > sparsity_loss(&t, 0.25).unwrap());
        }
    }
}
