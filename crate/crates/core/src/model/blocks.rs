//! Building blocks of the separation network.

use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvSpec, ConvTranspose1d, Graph, GroupNorm, Init, PRelu, ParamStore, Var};

/// Residual depthwise-separable block: pointwise expand, PReLU, norm, dilated depthwise,
/// PReLU, norm, pointwise project, plus the skip path.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    expand: Conv1d,
    act1: PRelu,
    norm1: GroupNorm,
    depth: Conv1d,
    act2: PRelu,
    norm2: GroupNorm,
    project: Conv1d,
}

impl TcnBlock {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, channels: usize, hidden: usize, dilation: usize, groups: usize) -> Self {
        TcnBlock {
            expand: Conv1d::pointwise(init, "expand", channels, hidden),
            act1: PRelu::new(init, "act1"),
            norm1: GroupNorm::new(init, "norm1", hidden, groups),
            depth: Conv1d::depthwise(init, "depth", hidden, 3, dilation),
            act2: PRelu::new(init, "act2"),
            norm2: GroupNorm::new(init, "norm2", hidden, groups),
            project: Conv1d::pointwise(init, "project", hidden, channels),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.expand.forward(g, store, x);
        let h = self.act1.forward(g, store, h);
        let h = self.norm1.forward(g, store, h);
        let h = self.depth.forward(g, store, h);
        let h = self.act2.forward(g, store, h);
        let h = self.norm2.forward(g, store, h);
        let h = self.project.forward(g, store, h);
        g.add(x, h)
    }
}

fn stride_layer(cfg: &ModelConfig, i: usize) -> (usize, usize, usize, usize) {
    let s = cfg.audio_strides[i];
    let k = if i == 0 { cfg.audio_kernel } else { (2 * s).max(3) };
    let total = k - s;
    (k, s, total / 2, total - total / 2)
}

/// Strided 1-D convolutions with ReLU; `F = L / prod(strides)` frames.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    layers: Vec<Conv1d>,
}

impl AudioEncoder {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.audio_strides.len())
            .map(|i| {
                let (k, s, pl, pr) = stride_layer(cfg, i);
                let cin = if i == 0 { 1 } else { cfg.embed_dim };
                let spec = ConvSpec { stride: s, pad_left: pl, pad_right: pr, ..ConvSpec::default() };
                Conv1d::new(init, &format!("conv{i}"), cin, cfg.embed_dim, k, spec, true)
            })
            .collect();
        AudioEncoder { layers }
    }

    /// `x: [1, L]` to `[C, F]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, cfg: &ModelConfig) -> Result<Var> {
        let len = g.value(x).cols();
        let need = cfg.stride_product().max(cfg.audio_kernel);
        if len < need {
            return Err(Error::TooShort { what: "audio input", got: len, need });
        }
        let mut h = x;
        for conv in &self.layers {
            h = conv.forward(g, store, h);
            h = g.relu(h);
        }
        Ok(h)
    }
}

/// Mirror of the audio encoder built from bias-free transposed convolutions and no
/// nonlinearity, so decoding is linear in its input.
#[derive(Clone, Debug)]
pub struct Decoder {
    layers: Vec<(ConvTranspose1d, usize)>,
}

impl Decoder {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) -> Self {
        let n = cfg.audio_strides.len();
        let layers = (0..n)
            .rev()
            .map(|i| {
                let (k, s, pl, _) = stride_layer(cfg, i);
                let cout = if i == 0 { 1 } else { cfg.embed_dim };
                (ConvTranspose1d::new(init, &format!("deconv{i}"), cfg.embed_dim, cout, k, s), pl)
            })
            .collect();
        Decoder { layers }
    }

    /// `[C, F]` to `[1, out_len]`, trimmed or zero-padded at the end.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, out_len: usize) -> Var {
        let mut h = x;
        for (layer, pad_left) in &self.layers {
            let t = g.value(h).cols();
            h = layer.forward(g, store, h);
            h = g.crop_cols(h, *pad_left, t * layer.stride);
        }
        g.crop_cols(h, 0, out_len)
    }
}

/// Strided convolution over all EEG channels, residual depthwise blocks, linear resampling
/// to the audio frame count and a pointwise projection.
#[derive(Clone, Debug)]
pub struct EegEncoder {
    down: Conv1d,
    blocks: Vec<TcnBlock>,
    project: Conv1d,
    stride: usize,
}

impl EegEncoder {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig, q: usize) -> Self {
        let spec = ConvSpec { stride: cfg.eeg_stride, ..ConvSpec::default() };
        let down = Conv1d::new(init, "down", q, cfg.embed_dim, cfg.eeg_stride, spec, true);
        let blocks = (0..cfg.eeg_tcn_layers)
            .map(|i| {
                let dilation = 1 << (i % 4);
                TcnBlock::new(&mut init.sub(&format!("block{i}")), cfg.embed_dim, cfg.eeg_hidden, dilation, cfg.gn_groups)
            })
            .collect();
        let project = Conv1d::pointwise(init, "project", cfg.embed_dim, cfg.embed_dim);
        EegEncoder { down, blocks, project, stride: cfg.eeg_stride }
    }

    /// `e: [Q, T]` to `[C, frames]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e: Var, frames: usize) -> Result<Var> {
        let t = g.value(e).cols();
        if t < self.stride {
            return Err(Error::TooShort { what: "EEG input", got: t, need: self.stride });
        }
        let mut h = self.down.forward(g, store, e);
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        let h = g.resample_cols(h, frames);
        Ok(self.project.forward(g, store, h))
    }
}

/// Multi-head attention with pointwise query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    q: Conv1d,
    k: Conv1d,
    v: Conv1d,
    o: Conv1d,
    heads: usize,
}

impl CrossAttention {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, channels: usize, heads: usize) -> Self {
        CrossAttention {
            q: Conv1d::pointwise(init, "query", channels, channels),
            k: Conv1d::pointwise(init, "key", channels, channels),
            v: Conv1d::pointwise(init, "value", channels, channels),
            o: Conv1d::pointwise(init, "out", channels, channels),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, key: Var, value: Var) -> Var {
        let q = self.q.forward(g, store, query);
        let k = self.k.forward(g, store, key);
        let v = self.v.forward(g, store, value);
        let a = g.attention(q, k, v, self.heads);
        self.o.forward(g, store, a)
    }
}

/// One bidirectional fusion layer: each branch attends with the other branch as query.
#[derive(Clone, Debug)]
pub struct CmcaLayer {
    audio_att: CrossAttention,
    audio_norm: GroupNorm,
    eeg_att: CrossAttention,
    eeg_norm: GroupNorm,
}

impl CmcaLayer {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) -> Self {
        CmcaLayer {
            audio_att: CrossAttention::new(&mut init.sub("audio_att"), cfg.embed_dim, cfg.heads),
            audio_norm: GroupNorm::new(init, "audio_norm", cfg.embed_dim, cfg.gn_groups),
            eeg_att: CrossAttention::new(&mut init.sub("eeg_att"), cfg.embed_dim, cfg.heads),
            eeg_norm: GroupNorm::new(init, "eeg_norm", cfg.embed_dim, cfg.gn_groups),
        }
    }

    /// `(w, e) -> (GN(w + Att(e, w, w)), GN(e + Att(w, e, e)))`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, w: Var, e: Var) -> (Var, Var) {
        let aw = self.audio_att.forward(g, store, e, w, w);
        let w_sum = g.add(w, aw);
        let w_next = self.audio_norm.forward(g, store, w_sum);
        let ae = self.eeg_att.forward(g, store, w, e, e);
        let e_sum = g.add(e, ae);
        let e_next = self.eeg_norm.forward(g, store, e_sum);
        (w_next, e_next)
    }
}

/// Stack of fusion layers; layer outputs are summed per branch, concatenated with the
/// original embeddings and projected back to `C` channels.
#[derive(Clone, Debug)]
pub struct Cmca {
    layers: Vec<CmcaLayer>,
    merge: Conv1d,
}

impl Cmca {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.cmca_layers).map(|i| CmcaLayer::new(&mut init.sub(&format!("layer{i}")), cfg)).collect();
        let merge = Conv1d::pointwise(init, "merge", 4 * cfg.embed_dim, cfg.embed_dim);
        Cmca { layers, merge }
    }

    pub fn layers(&self) -> &[CmcaLayer] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, w_x: Var, e_x: Var) -> Result<Var> {
        if g.value(w_x).shape() != g.value(e_x).shape() {
            return Err(Error::shape(format!(
                "audio embedding {:?} and EEG embedding {:?} differ",
                g.value(w_x).shape(),
                g.value(e_x).shape()
            )));
        }
        let (mut w, mut e) = (w_x, e_x);
        let mut ws = Vec::with_capacity(self.layers.len());
        let mut es = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            (w, e) = layer.forward(g, store, w, e);
            ws.push(w);
            es.push(e);
        }
        let w_all = g.add_n(&ws);
        let e_all = g.add_n(&es);
        let cat = g.concat_rows(&[w_all, e_all, w_x, e_x]);
        Ok(self.merge.forward(g, store, cat))
    }
}

/// Mask estimator: norm, bottleneck, repeated dilated blocks, PReLU, pointwise expansion to
/// `T * C` rows and a sigmoid.
#[derive(Clone, Debug)]
pub struct Separator {
    norm: GroupNorm,
    bottleneck: Conv1d,
    blocks: Vec<TcnBlock>,
    act: PRelu,
    masks: Conv1d,
    n_sources: usize,
    channels: usize,
}

impl Separator {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) -> Self {
        let c = cfg.embed_dim;
        let norm = GroupNorm::new(init, "norm", c, cfg.gn_groups);
        let bottleneck = Conv1d::pointwise(init, "bottleneck", c, cfg.sep_bottleneck);
        let mut blocks = Vec::new();
        for r in 0..cfg.sep_repeats {
            for x in 0..cfg.sep_blocks {
                let mut sub = init.sub(&format!("r{r}b{x}"));
                blocks.push(TcnBlock::new(&mut sub, cfg.sep_bottleneck, cfg.sep_hidden, 1 << x, cfg.gn_groups));
            }
        }
        let act = PRelu::new(init, "act");
        let masks = Conv1d::pointwise(init, "masks", cfg.sep_bottleneck, cfg.n_sources * c);
        Separator { norm, bottleneck, blocks, act, masks, n_sources: cfg.n_sources, channels: c }
    }

    /// `T` masks of shape `[C, F]`, entries in `[0, 1]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fused: Var) -> Vec<Var> {
        let h = self.norm.forward(g, store, fused);
        let mut h = self.bottleneck.forward(g, store, h);
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        let h = self.act.forward(g, store, h);
        let h = self.masks.forward(g, store, h);
        let m = g.sigmoid(h);
        (0..self.n_sources).map(|t| g.slice_rows(m, t * self.channels, self.channels)).collect()
    }
}
