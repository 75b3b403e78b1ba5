//! Fused multi-head scaled dot-product attention over time.

use super::gemm::{gemm, MatRef};
use super::graph::{BackwardFn, Graph, Var};
use super::ops::softmax_in_place;
use super::tensor::Tensor;

/// Query rows processed at once when no probabilities are kept for backward.
const QUERY_BLOCK: usize = 512;

impl Graph {
    /// `q: [c, tq]`, `k, v: [c, tk]`; channels are split evenly across `heads`.
    /// Output `[c, tq]`: for each query frame, a softmax-weighted mix of value frames.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.arc(q), self.arc(k), self.arc(v));
        let (c, tq) = qv.dims2();
        let (ck, tk) = kv.dims2();
        assert_eq!(c, ck, "query/key channel mismatch");
        assert_eq!(vv.dims2(), (c, tk), "key/value shape mismatch");
        assert!(heads >= 1 && c % heads == 0, "channels must divide evenly into heads");
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let tracking = self.tracking(&[q, k, v]);

        let mut out = vec![0.0; c * tq];
        let mut probs: Vec<Vec<f64>> = Vec::new();
        for h in 0..heads {
            let qh = &qv.data()[h * d * tq..(h + 1) * d * tq];
            let kh = MatRef::new(&kv.data()[h * d * tk..(h + 1) * d * tk], d, tk);
            let vh = MatRef::new(&vv.data()[h * d * tk..(h + 1) * d * tk], d, tk);
            let block = if tracking { tq } else { QUERY_BLOCK.min(tq) };
            let mut p_full = if tracking { vec![0.0; tq * tk] } else { Vec::new() };
            let mut start = 0;
            while start < tq {
                let rows = block.min(tq - start);
                // S[i, j] = sum_c Q[c, start + i] K[c, j]
                let q_blk = MatRef { data: &qh[start..], rows: d, cols: rows, rs: tq as isize, cs: 1 };
                let mut s = vec![0.0; rows * tk];
                gemm(scale, q_blk.t(), kh, 0.0, &mut s);
                s.chunks_mut(tk).for_each(softmax_in_place);
                // O[:, start..start+rows] = V P^T
                let mut o = vec![0.0; d * rows];
                gemm(1.0, vh, MatRef::new(&s, rows, tk).t(), 0.0, &mut o);
                for r in 0..d {
                    out[(h * d + r) * tq + start..(h * d + r) * tq + start + rows]
                        .copy_from_slice(&o[r * rows..(r + 1) * rows]);
                }
                if tracking {
                    p_full[start * tk..(start + rows) * tk].copy_from_slice(&s);
                }
                start += rows;
            }
            if tracking {
                probs.push(p_full);
            }
        }

        let backward: Option<BackwardFn> = tracking.then(|| {
            Box::new(move |g: &Tensor, need: &[bool]| {
                let mut gq = vec![0.0; c * tq];
                let mut gk = vec![0.0; c * tk];
                let mut gv = vec![0.0; c * tk];
                for (h, p) in probs.iter().enumerate() {
                    let pm = MatRef::new(p, tq, tk);
                    let go = MatRef::new(&g.data()[h * d * tq..(h + 1) * d * tq], d, tq);
                    let qh = MatRef::new(&qv.data()[h * d * tq..(h + 1) * d * tq], d, tq);
                    let kh = MatRef::new(&kv.data()[h * d * tk..(h + 1) * d * tk], d, tk);
                    let vh = MatRef::new(&vv.data()[h * d * tk..(h + 1) * d * tk], d, tk);
                    if need[2] {
                        gemm(1.0, go, pm, 0.0, &mut gv[h * d * tk..(h + 1) * d * tk]);
                    }
                    if need[0] || need[1] {
                        let mut dp = vec![0.0; tq * tk];
                        gemm(1.0, go.t(), vh, 0.0, &mut dp);
                        for (dr, pr) in dp.chunks_mut(tk).zip(p.chunks(tk)) {
                            let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                            for (dv, &pv) in dr.iter_mut().zip(pr) {
                                *dv = pv * (*dv - dot) * scale;
                            }
                        }
                        let ds = MatRef::new(&dp, tq, tk);
                        if need[0] {
                            gemm(1.0, kh, ds.t(), 0.0, &mut gq[h * d * tq..(h + 1) * d * tq]);
                        }
                        if need[1] {
                            gemm(1.0, qh, ds, 0.0, &mut gk[h * d * tk..(h + 1) * d * tk]);
                        }
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(&[c, tq], gq)),
                    need[1].then(|| Tensor::new(&[c, tk], gk)),
                    need[2].then(|| Tensor::new(&[c, tk], gv)),
                ]
            }) as BackwardFn
        });
        self.push_op(Tensor::new(&[c, tq], out), &[q, k, v], backward)
    }
}
