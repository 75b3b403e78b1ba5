//! 1-D convolutions over `[channels, time]` matrices.

use super::gemm::{gemm, MatRef};
use super::graph::{Graph, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub dilation: usize,
    /// 1 (dense) or equal to the channel count (depthwise).
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: 1, pad_left: 0, pad_right: 0, dilation: 1, groups: 1 }
    }
}

impl ConvSpec {
    pub fn out_len(&self, in_len: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = in_len + self.pad_left + self.pad_right;
        if padded < span {
            0
        } else {
            (padded - span) / self.stride + 1
        }
    }
}

struct Geometry {
    channels: usize,
    in_len: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    out_len: usize,
}

impl Geometry {
    #[inline]
    fn src(&self, t: usize, k: usize) -> Option<usize> {
        let idx = (t * self.stride + k * self.dilation) as isize - self.pad_left as isize;
        (idx >= 0 && (idx as usize) < self.in_len).then_some(idx as usize)
    }
}

fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let mut col = vec![0.0; g.channels * g.kernel * g.out_len];
    for c in 0..g.channels {
        let xr = &x[c * g.in_len..(c + 1) * g.in_len];
        for k in 0..g.kernel {
            let dst = &mut col[(c * g.kernel + k) * g.out_len..(c * g.kernel + k + 1) * g.out_len];
            for (t, d) in dst.iter_mut().enumerate() {
                if let Some(i) = g.src(t, k) {
                    *d = xr[i];
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], g: &Geometry) -> Vec<f64> {
    let mut x = vec![0.0; g.channels * g.in_len];
    for c in 0..g.channels {
        let xr = &mut x[c * g.in_len..(c + 1) * g.in_len];
        for k in 0..g.kernel {
            let src = &col[(c * g.kernel + k) * g.out_len..(c * g.kernel + k + 1) * g.out_len];
            for (t, s) in src.iter().enumerate() {
                if let Some(i) = g.src(t, k) {
                    xr[i] += s;
                }
            }
        }
    }
    x
}

fn row_sums(g: &Tensor) -> Vec<f64> {
    let c = g.cols();
    g.data().chunks(c).map(|r| r.iter().sum()).collect()
}

impl Graph {
    /// `x: [cin, t]`, `w: [cout, cin / groups, k]`, optional `b: [cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let xv = self.arc(x);
        let wv = self.arc(w);
        let (cin, t_in) = xv.dims2();
        let ws = wv.shape().to_vec();
        assert_eq!(ws.len(), 3, "conv weight must be [cout, cin/groups, k]");
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        let t_out = spec.out_len(t_in, k);
        assert!(t_out > 0, "conv1d input of length {t_in} too short for kernel {k}");
        let depthwise = spec.groups > 1;
        if depthwise {
            assert!(spec.groups == cin && cout == cin && wcin == 1, "only depthwise grouping is supported");
        } else {
            assert_eq!(wcin, cin, "conv1d channel mismatch");
        }
        let geo = Geometry {
            channels: cin,
            in_len: t_in,
            kernel: k,
            stride: spec.stride,
            dilation: spec.dilation,
            pad_left: spec.pad_left,
            out_len: t_out,
        };
        let bias: Option<Vec<f64>> = b.map(|b| self.value(b).data().to_vec());
        let mut parents = vec![x, w];
        if let Some(b) = b {
            parents.push(b);
        }
        let tracking = self.tracking(&parents);
        let has_bias = b.is_some();

        if depthwise {
            let mut out = vec![0.0; cout * t_out];
            for c in 0..cin {
                let xr = &xv.data()[c * t_in..(c + 1) * t_in];
                let wr = &wv.data()[c * k..(c + 1) * k];
                let bc = bias.as_ref().map_or(0.0, |b| b[c]);
                let dst = &mut out[c * t_out..(c + 1) * t_out];
                for (t, d) in dst.iter_mut().enumerate() {
                    let mut acc = bc;
                    for (kk, wk) in wr.iter().enumerate() {
                        if let Some(i) = geo.src(t, kk) {
                            acc += wk * xr[i];
                        }
                    }
                    *d = acc;
                }
            }
            let backward = tracking.then(|| {
                Box::new(move |g: &Tensor, need: &[bool]| {
                    let gd = g.data();
                    let mut gx = need[0].then(|| vec![0.0; cin * t_in]);
                    let mut gw = need[1].then(|| vec![0.0; cin * k]);
                    for c in 0..cin {
                        let xr = &xv.data()[c * t_in..(c + 1) * t_in];
                        let wr = &wv.data()[c * k..(c + 1) * k];
                        let gr = &gd[c * t_out..(c + 1) * t_out];
                        for (t, &gt) in gr.iter().enumerate() {
                            for kk in 0..k {
                                if let Some(i) = geo.src(t, kk) {
                                    if let Some(gx) = gx.as_mut() {
                                        gx[c * t_in + i] += wr[kk] * gt;
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        gw[c * k + kk] += xr[i] * gt;
                                    }
                                }
                            }
                        }
                    }
                    let mut v = vec![
                        gx.map(|d| Tensor::new(xv.shape(), d)),
                        gw.map(|d| Tensor::new(wv.shape(), d)),
                    ];
                    if has_bias {
                        v.push(need[2].then(|| Tensor::new(&[cout], row_sums(g))));
                    }
                    v
                }) as super::graph::BackwardFn
            });
            return self.push_op(Tensor::new(&[cout, t_out], out), &parents, backward);
        }

        let pointwise = k == 1 && spec.stride == 1 && spec.pad_left == 0 && spec.pad_right == 0;
        let col: Vec<f64> = if pointwise { Vec::new() } else { im2col(xv.data(), &geo) };
        let ck = cin * k;
        let mut out = vec![0.0; cout * t_out];
        {
            let colm = if pointwise { MatRef::new(xv.data(), ck, t_out) } else { MatRef::new(&col, ck, t_out) };
            gemm(1.0, MatRef::new(wv.data(), cout, ck), colm, 0.0, &mut out);
        }
        if let Some(b) = &bias {
            for (c, row) in out.chunks_mut(t_out).enumerate() {
                row.iter_mut().for_each(|v| *v += b[c]);
            }
        }
        let backward = tracking.then(|| {
            Box::new(move |g: &Tensor, need: &[bool]| {
                let gm = MatRef::new(g.data(), cout, t_out);
                let colm = if pointwise { MatRef::new(xv.data(), ck, t_out) } else { MatRef::new(&col, ck, t_out) };
                let gw = need[1].then(|| {
                    let mut d = vec![0.0; cout * ck];
                    gemm(1.0, gm, colm.t(), 0.0, &mut d);
                    Tensor::new(wv.shape(), d)
                });
                let gx = need[0].then(|| {
                    let mut dcol = vec![0.0; ck * t_out];
                    gemm(1.0, MatRef::new(wv.data(), cout, ck).t(), gm, 0.0, &mut dcol);
                    let d = if pointwise { dcol } else { col2im(&dcol, &geo) };
                    Tensor::new(xv.shape(), d)
                });
                let mut v = vec![gx, gw];
                if has_bias {
                    v.push(need[2].then(|| Tensor::new(&[cout], row_sums(g))));
                }
                v
            }) as super::graph::BackwardFn
        });
        self.push_op(Tensor::new(&[cout, t_out], out), &parents, backward)
    }

    /// Transposed convolution, `x: [cin, t]`, `w: [cin, cout, k]`, output length `(t - 1) * stride + k`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize) -> Var {
        let xv = self.arc(x);
        let wv = self.arc(w);
        let (cin, t_in) = xv.dims2();
        let ws = wv.shape().to_vec();
        assert_eq!(ws.len(), 3, "transposed conv weight must be [cin, cout, k]");
        assert_eq!(ws[0], cin, "transposed conv channel mismatch");
        let (cout, k) = (ws[1], ws[2]);
        let t_out = (t_in - 1) * stride + k;
        let geo = Geometry { channels: cout, in_len: t_out, kernel: k, stride, dilation: 1, pad_left: 0, out_len: t_in };
        let ck = cout * k;
        let mut cols = vec![0.0; ck * t_in];
        gemm(1.0, MatRef::new(wv.data(), cin, ck).t(), MatRef::new(xv.data(), cin, t_in), 0.0, &mut cols);
        let out = col2im(&cols, &geo);
        let backward = self.tracking(&[x, w]).then(|| {
            Box::new(move |g: &Tensor, need: &[bool]| {
                let dcols = im2col(g.data(), &geo);
                let dm = MatRef::new(&dcols, ck, t_in);
                let gx = need[0].then(|| {
                    let mut d = vec![0.0; cin * t_in];
                    gemm(1.0, MatRef::new(wv.data(), cin, ck), dm, 0.0, &mut d);
                    Tensor::new(xv.shape(), d)
                });
                let gw = need[1].then(|| {
                    let mut d = vec![0.0; cin * ck];
                    gemm(1.0, MatRef::new(xv.data(), cin, t_in), dm.t(), 0.0, &mut d);
                    Tensor::new(wv.shape(), d)
                });
                vec![gx, gw]
            }) as super::graph::BackwardFn
        });
        self.push_op(Tensor::new(&[cout, t_out], out), &[x, w], backward)
    }
}
