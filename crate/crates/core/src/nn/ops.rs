//! Elementwise, reduction and reshaping ops.

use std::sync::Arc;

use super::gemm::{gemm, MatRef};
use super::graph::{BackwardFn, Graph, Var};
use super::tensor::Tensor;

fn bw(f: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static) -> Option<BackwardFn> {
    Some(Box::new(f))
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(out, &[a, b], bw(|g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(out, &[a, b], bw(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.arc(a), self.arc(b));
        let out = av.zip_map(&bv, |x, y| x * y);
        self.push_op(
            out,
            &[a, b],
            bw(move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&bv, |g, y| g * y)),
                    need[1].then(|| g.zip_map(&av, |g, x| g * x)),
                ]
            }),
        )
    }

    /// Sum of several same-shaped vars.
    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let mut out = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            out.add_assign(self.value(x));
        }
        let n = xs.len();
        self.push_op(out, xs, bw(move |g, _| (0..n).map(|_| Some(g.clone())).collect()))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push_op(out, &[a], bw(move |g, _| vec![Some(g.map(|v| v * c))]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push_op(out, &[a], bw(|g, _| vec![Some(g.clone())]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.arc(a);
        let out = av.map(|v| v.max(0.0));
        self.push_op(out, &[a], bw(move |g, _| vec![Some(g.zip_map(&av, |g, x| if x > 0.0 { g } else { 0.0 }))]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = Arc::new(self.value(a).map(sigmoid));
        let y = Arc::clone(&out);
        self.push_op_arc(out, &[a], bw(move |g, _| vec![Some(g.zip_map(&y, |g, y| g * y * (1.0 - y)))]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = Arc::new(self.value(a).map(f64::tanh));
        let y = Arc::clone(&out);
        self.push_op_arc(out, &[a], bw(move |g, _| vec![Some(g.zip_map(&y, |g, y| g * (1.0 - y * y)))]))
    }

    /// Parametric ReLU with a single learnable negative slope (`slope` has one element).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let xv = self.arc(x);
        let a = self.value(slope).item();
        let out = xv.map(|v| if v > 0.0 { v } else { a * v });
        self.push_op(
            out,
            &[x, slope],
            bw(move |g, need| {
                let gx = need[0].then(|| g.zip_map(&xv, |g, v| if v > 0.0 { g } else { a * g }));
                let ga = need[1].then(|| {
                    let s: f64 = g.data().iter().zip(xv.data()).filter(|(_, &v)| v <= 0.0).map(|(g, v)| g * v).sum();
                    Tensor::scalar(s)
                });
                vec![gx, ga]
            }),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, &[a], bw(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let av = self.arc(a);
        let out = Tensor::scalar(av.sum_sq());
        self.push_op(out, &[a], bw(move |g, _| vec![Some(av.map(|v| 2.0 * v * g.item()))]))
    }

    /// `x[c, t] + b[c]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        assert_eq!(self.value(b).len(), r, "bias length must equal row count");
        let mut out = self.value(x).clone();
        let bv = self.value(b).data().to_vec();
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            row.iter_mut().for_each(|v| *v += bv[i]);
        }
        let bshape = self.value(b).shape().to_vec();
        self.push_op(
            out,
            &[x, b],
            bw(move |g, need| {
                let gb = need[1].then(|| {
                    Tensor::new(&bshape, g.data().chunks(c).map(|row| row.iter().sum()).collect())
                });
                vec![need[0].then(|| g.clone()), gb]
            }),
        )
    }

    /// `x[c, t] * s[c]`: per-row gain, broadcast over columns.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.arc(x), self.arc(s));
        let (r, c) = xv.dims2();
        assert_eq!(sv.len(), r, "row gain length must equal row count");
        let mut out = (*xv).clone();
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            let k = sv.data()[i];
            row.iter_mut().for_each(|v| *v *= k);
        }
        self.push_op(
            out,
            &[x, s],
            bw(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = g.clone();
                    for (i, row) in gx.data_mut().chunks_mut(c).enumerate() {
                        let k = sv.data()[i];
                        row.iter_mut().for_each(|v| *v *= k);
                    }
                    gx
                });
                let gs = need[1].then(|| {
                    let d = g
                        .data()
                        .chunks(c)
                        .zip(xv.data().chunks(c))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    Tensor::new(sv.shape(), d)
                });
                vec![gx, gs]
            }),
        )
    }

    /// Row-wise softmax of a `[rows, cols]` matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, c) = self.value(x).dims2();
        let mut out = self.value(x).clone();
        out.data_mut().chunks_mut(c).for_each(softmax_in_place);
        let out = Arc::new(out);
        let y = Arc::clone(&out);
        self.push_op_arc(
            out,
            &[x],
            bw(move |g, _| {
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Plain matrix product with optional transposition of either operand.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (av, bv) = (self.arc(a), self.arc(b));
        let am = mat(&av, ta);
        let bm = mat(&bv, tb);
        let (m, n) = (am.rows, bm.cols);
        let mut out = vec![0.0; m * n];
        gemm(1.0, am, bm, 0.0, &mut out);
        self.push_op(
            Tensor::new(&[m, n], out),
            &[a, b],
            bw(move |g, need| {
                let gm = MatRef::new(g.data(), m, n);
                let ga = need[0].then(|| {
                    // dA = dC * B^T (or its transpose when A was transposed)
                    let (ar, ac) = av.dims2();
                    let mut d = vec![0.0; ar * ac];
                    if ta {
                        gemm(1.0, mat(&bv, tb), gm.t(), 0.0, &mut d);
                    } else {
                        gemm(1.0, gm, mat(&bv, tb).t(), 0.0, &mut d);
                    }
                    Tensor::new(av.shape(), d)
                });
                let gb = need[1].then(|| {
                    let (br, bc) = bv.dims2();
                    let mut d = vec![0.0; br * bc];
                    if tb {
                        gemm(1.0, gm.t(), mat(&av, ta), 0.0, &mut d);
                    } else {
                        gemm(1.0, mat(&av, ta).t(), gm, 0.0, &mut d);
                    }
                    Tensor::new(bv.shape(), d)
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let c = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut counts = Vec::with_capacity(xs.len());
        for &x in xs {
            let v = self.value(x);
            assert_eq!(v.cols(), c, "concat_rows column mismatch");
            counts.push(v.len());
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / c.max(1);
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&x| self.value(x).shape().to_vec()).collect();
        self.push_op(
            Tensor::new(&[rows, c], data),
            xs,
            bw(move |g, need| {
                let mut off = 0;
                counts
                    .iter()
                    .zip(&shapes)
                    .zip(need)
                    .map(|((&n, s), &nd)| {
                        let piece = nd.then(|| Tensor::new(s, g.data()[off..off + n].to_vec()));
                        off += n;
                        piece
                    })
                    .collect()
            }),
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.value(x).dims2();
        assert!(start + len <= r, "slice_rows out of range");
        let out = Tensor::new(&[len, c], self.value(x).data()[start * c..(start + len) * c].to_vec());
        self.push_op(
            out,
            &[x],
            bw(move |g, _| {
                let mut gx = Tensor::zeros(&[r, c]);
                gx.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                vec![Some(gx)]
            }),
        )
    }

    /// Columns `[start, start + len)`; columns past the end read as zero.
    pub fn crop_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.value(x).dims2();
        let mut out = Tensor::zeros(&[r, len]);
        let avail = c.saturating_sub(start).min(len);
        {
            let xv = self.value(x);
            for i in 0..r {
                out.row_mut(i)[..avail].copy_from_slice(&xv.row(i)[start..start + avail]);
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push_op(
            out,
            &[x],
            bw(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                for i in 0..r {
                    gx.data_mut()[i * c + start..i * c + start + avail].copy_from_slice(&g.row(i)[..avail]);
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old = self.value(x).shape().to_vec();
        let out = self.value(x).clone().reshape(shape);
        self.push_op(out, &[x], bw(move |g, _| vec![Some(g.clone().reshape(&old))]))
    }

    /// Places row `k` of `z` at row `dest[k]` of a `rows`-row zero matrix (rows add on collision).
    pub fn scatter_rows(&mut self, z: Var, dest: &[usize], rows: usize) -> Var {
        let (k, c) = self.value(z).dims2();
        assert_eq!(dest.len(), k, "one destination per row");
        let mut out = Tensor::zeros(&[rows, c]);
        for (i, &d) in dest.iter().enumerate() {
            assert!(d < rows, "scatter destination out of range");
            let src = self.value(z).row(i).to_vec();
            out.row_mut(d).iter_mut().zip(&src).for_each(|(o, s)| *o += s);
        }
        let dest = dest.to_vec();
        self.push_op(
            out,
            &[z],
            bw(move |g, _| {
                let mut gz = Tensor::zeros(&[k, c]);
                for (i, &d) in dest.iter().enumerate() {
                    gz.row_mut(i).copy_from_slice(g.row(d));
                }
                vec![Some(gz)]
            }),
        )
    }

    /// Linear interpolation along columns to `out_len` samples (half-pixel centres).
    pub fn resample_cols(&mut self, x: Var, out_len: usize) -> Var {
        let (r, c) = self.value(x).dims2();
        let taps = interp_taps(c, out_len);
        let mut out = Tensor::zeros(&[r, out_len]);
        {
            let xv = self.value(x);
            for i in 0..r {
                let src = xv.row(i);
                let dst = out.row_mut(i);
                for (j, &(i0, i1, w)) in taps.iter().enumerate() {
                    dst[j] = (1.0 - w) * src[i0] + w * src[i1];
                }
            }
        }
        self.push_op(
            out,
            &[x],
            bw(move |g, _| {
                let mut gx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let gr = g.row(i);
                    let dst = gx.row_mut(i);
                    for (j, &(i0, i1, w)) in taps.iter().enumerate() {
                        dst[i0] += (1.0 - w) * gr[j];
                        dst[i1] += w * gr[j];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Max-pool with window 2 / stride 2; odd lengths are edge-padded to even first.
    pub fn maxpool2_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let out_len = c.div_ceil(2);
        let mut out = Tensor::zeros(&[r, out_len]);
        let mut argmax = vec![0usize; r * out_len];
        {
            let xv = self.value(x);
            for i in 0..r {
                let src = xv.row(i);
                for j in 0..out_len {
                    let a = 2 * j;
                    let b = (2 * j + 1).min(c - 1);
                    let k = if src[b] > src[a] { b } else { a };
                    out.data_mut()[i * out_len + j] = src[k];
                    argmax[i * out_len + j] = k;
                }
            }
        }
        self.push_op(
            out,
            &[x],
            bw(move |g, _| {
                let mut gx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..out_len {
                        gx.data_mut()[i * c + argmax[i * out_len + j]] += g.data()[i * out_len + j];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

pub(crate) fn mat(t: &Tensor, transpose: bool) -> MatRef<'_> {
    let (r, c) = t.dims2();
    let m = MatRef::new(t.data(), r, c);
    if transpose {
        m.t()
    } else {
        m
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// `(left index, right index, right weight)` for each output sample.
pub(crate) fn interp_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}
