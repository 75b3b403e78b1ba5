use std::sync::Arc;

use super::graph::{BackwardFn, Graph, Var};
use super::tensor::Tensor;

pub const GROUP_NORM_EPS: f64 = 1e-8;

impl Graph {
    /// Group normalization over `[channels, time]` with per-channel affine `gamma`, `beta`.
    /// Statistics are taken over all samples of all channels in a group.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xv = self.arc(x);
        let (c, t) = xv.dims2();
        assert!(groups >= 1 && c % groups == 0, "channels must divide evenly into groups");
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        assert!(gv.len() == c && bv.len() == c, "affine length mismatch");
        let per = c / groups;
        let n = (per * t) as f64;
        let mut xhat = vec![0.0; c * t];
        let mut inv = vec![0.0; groups];
        for g in 0..groups {
            let span = g * per * t..(g + 1) * per * t;
            let xs = &xv.data()[span.clone()];
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let iv = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            inv[g] = iv;
            for (h, v) in xhat[span].iter_mut().zip(xs) {
                *h = (v - mean) * iv;
            }
        }
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            for i in ch * t..(ch + 1) * t {
                out[i] = xhat[i] * gv[ch] + bv[ch];
            }
        }
        let xhat = Arc::new(xhat);
        let backward: Option<BackwardFn> = self.tracking(&[x, gamma, beta]).then(|| {
            Box::new(move |g: &Tensor, need: &[bool]| {
                let gd = g.data();
                let ggamma = need[1].then(|| {
                    Tensor::new(
                        &[c],
                        (0..c).map(|ch| (ch * t..(ch + 1) * t).map(|i| gd[i] * xhat[i]).sum()).collect(),
                    )
                });
                let gbeta = need[2]
                    .then(|| Tensor::new(&[c], (0..c).map(|ch| gd[ch * t..(ch + 1) * t].iter().sum()).collect()));
                let gx = need[0].then(|| {
                    let mut dx = vec![0.0; c * t];
                    for grp in 0..groups {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for ch in grp * per..(grp + 1) * per {
                            for i in ch * t..(ch + 1) * t {
                                let dxh = gd[i] * gv[ch];
                                s1 += dxh;
                                s2 += dxh * xhat[i];
                            }
                        }
                        let iv = inv[grp];
                        for ch in grp * per..(grp + 1) * per {
                            for i in ch * t..(ch + 1) * t {
                                let dxh = gd[i] * gv[ch];
                                dx[i] = iv / n * (n * dxh - s1 - xhat[i] * s2);
                            }
                        }
                    }
                    Tensor::new(&[c, t], dx)
                });
                vec![gx, ggamma, gbeta]
            }) as BackwardFn
        });
        self.push_op(Tensor::new(&[c, t], out), &[x, gamma, beta], backward)
    }
}
