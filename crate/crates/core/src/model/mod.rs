//! The brain-assisted separation network with an optional channel selector in front of
//! its EEG branch.

mod blocks;
mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{AudioEncoder, Cmca, CmcaLayer, CrossAttention, Decoder, EegEncoder, Separator, TcnBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};

use crate::error::{Error, Result};
use crate::nn::{Graph, Init, ParamStore, Tensor, Var};
use crate::selection::{
    argmax_lowest, gcs_test_select, gumbel_weights_var, ChannelSubset, ConvRsSelector, GcsLayer, GumbelSelectorState,
    PaddingPlacement, SelectionMethod,
};
use crate::signal::{AudioWaveform, EegTrial};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub audio_kernel: usize,
    pub audio_strides: Vec<usize>,
    pub eeg_stride: usize,
    pub eeg_tcn_layers: usize,
    pub eeg_hidden: usize,
    pub cmca_layers: usize,
    pub heads: usize,
    pub sep_bottleneck: usize,
    pub sep_hidden: usize,
    pub sep_blocks: usize,
    pub sep_repeats: usize,
    pub n_sources: usize,
    pub gn_groups: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            audio_kernel: 16,
            audio_strides: vec![8, 1],
            eeg_stride: 8,
            eeg_tcn_layers: 8,
            eeg_hidden: 128,
            cmca_layers: 3,
            heads: 4,
            sep_bottleneck: 64,
            sep_hidden: 128,
            sep_blocks: 4,
            sep_repeats: 2,
            n_sources: 2,
            gn_groups: 1,
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains in seconds on one core.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 16,
            eeg_tcn_layers: 4,
            eeg_hidden: 32,
            cmca_layers: 2,
            heads: 2,
            sep_bottleneck: 16,
            sep_hidden: 32,
            sep_blocks: 3,
            sep_repeats: 1,
            ..Self::default()
        }
    }

    pub fn stride_product(&self) -> usize {
        self.audio_strides.iter().product()
    }

    /// Frames produced for an input of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        len / self.stride_product()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                bad.push(format!("model.{msg}"));
            }
        };
        need(self.embed_dim >= 1, "embed_dim: must be >= 1");
        need(self.heads >= 1 && self.embed_dim % self.heads.max(1) == 0, "heads: must divide embed_dim");
        need(
            self.gn_groups >= 1
                && [self.embed_dim, self.eeg_hidden, self.sep_hidden, self.sep_bottleneck]
                    .iter()
                    .all(|c| c % self.gn_groups.max(1) == 0),
            "gn_groups: must divide every normalized width",
        );
        need(
            !self.audio_strides.is_empty() && self.audio_strides.iter().all(|&s| s >= 1),
            "audio_strides: must be a non-empty list of positive strides",
        );
        let s0 = self.audio_strides.first().copied().unwrap_or(1);
        need(
            self.audio_kernel >= s0 && (self.audio_kernel - s0.min(self.audio_kernel)) % 2 == 0,
            "audio_kernel: must be >= the first stride with an even difference",
        );
        need(self.eeg_stride >= 1, "eeg_stride: must be >= 1");
        need(self.eeg_hidden >= 1, "eeg_hidden: must be >= 1");
        need(self.cmca_layers >= 1, "cmca_layers: must be >= 1");
        need(self.sep_bottleneck >= 1 && self.sep_hidden >= 1, "sep_bottleneck: widths must be >= 1");
        need(self.sep_blocks >= 1 && self.sep_repeats >= 1, "sep_blocks: depth must be >= 1");
        need(self.n_sources >= 2, "n_sources: must be >= 2");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Which selector sits in front of the EEG encoder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SelectorConfig {
    #[default]
    None,
    /// `K` Gumbel neurons; `residual = Some(a)` blends `(1 - a) e + a Padding(z)`.
    Gcs { k: usize, residual: Option<f64>, padding: PaddingPlacement },
    /// Convolutional selector for inputs of `in_len` EEG samples.
    Convrs { n1: usize, in_len: usize },
}

/// How the selector is run for one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum SelectMode<'a> {
    /// Ignore any selector and feed the EEG as given.
    Bypass,
    /// Relaxed Gumbel weights at temperature `tau`; `noise = None` means zero noise.
    GumbelSoft { tau: f64, noise: Option<&'a Tensor> },
    /// Hard argmax channels of each Gumbel neuron.
    GumbelHard,
    /// Input-dependent ConvRS mask.
    Mask,
}

impl SelectMode<'_> {
    /// Inference default for a selector kind.
    pub fn for_selector(cfg: &SelectorConfig) -> SelectMode<'static> {
        match cfg {
            SelectorConfig::None => SelectMode::Bypass,
            SelectorConfig::Gcs { .. } => SelectMode::GumbelHard,
            SelectorConfig::Convrs { .. } => SelectMode::Mask,
        }
    }
}

#[derive(Clone, Debug)]
enum Selector {
    Gcs(GcsLayer),
    ConvRs(ConvRsSelector),
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Estimated waveforms `[1, L]`, index 0 is the target.
    pub sources: Vec<Var>,
    pub masks: Vec<Var>,
    /// ConvRS selection vector `[1, Q]` when the mask selector ran.
    pub selection: Option<Var>,
    pub audio_embedding: Var,
    pub eeg_embedding: Var,
}

pub const BASEN_PREFIXES: [&str; 5] = ["audio_enc", "eeg_enc", "cmca", "separator", "decoder"];
pub const SELECTOR_PREFIX: &str = "selector";

#[derive(Clone, Debug)]
pub struct BrainModel {
    cfg: ModelConfig,
    q: usize,
    selector_cfg: SelectorConfig,
    audio: AudioEncoder,
    eeg: EegEncoder,
    cmca: Cmca,
    separator: Separator,
    decoder: Decoder,
    selector: Option<Selector>,
    pub store: ParamStore,
}

impl BrainModel {
    pub fn new(cfg: &ModelConfig, q: usize, selector: &SelectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if q == 0 {
            return Err(Error::invalid("EEG channel count must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (audio, eeg, cmca, separator, decoder) = {
            let mut root = Init::new(&mut store, &mut rng, "");
            (
                AudioEncoder::new(&mut root.sub("audio_enc"), cfg),
                EegEncoder::new(&mut root.sub("eeg_enc"), cfg, q),
                Cmca::new(&mut root.sub("cmca"), cfg),
                Separator::new(&mut root.sub("separator"), cfg),
                Decoder::new(&mut root.sub("decoder"), cfg),
            )
        };
        let mut model = BrainModel {
            cfg: cfg.clone(),
            q,
            selector_cfg: SelectorConfig::None,
            audio,
            eeg,
            cmca,
            separator,
            decoder,
            selector: None,
            store,
        };
        model.attach_selector(selector, seed.wrapping_add(0x5e1ec7))?;
        Ok(model)
    }

    /// Adds a selector in front of a model that has none (for example a pretrained network).
    pub fn attach_selector(&mut self, cfg: &SelectorConfig, seed: u64) -> Result<()> {
        if self.selector.is_some() {
            return Err(Error::invalid("model already has a selector"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut self.store, &mut rng, SELECTOR_PREFIX);
        self.selector = match *cfg {
            SelectorConfig::None => None,
            SelectorConfig::Gcs { k, residual, .. } => {
                if let Some(a) = residual {
                    if !(0.0..=1.0).contains(&a) {
                        return Err(Error::Config(vec![format!("selector.residual: must lie in [0, 1], got {a}")]));
                    }
                }
                Some(Selector::Gcs(GcsLayer::new(&mut init, k, self.q)?))
            }
            SelectorConfig::Convrs { n1, in_len } => Some(Selector::ConvRs(ConvRsSelector::new(&mut init, self.q, n1, in_len)?)),
        };
        self.selector_cfg = cfg.clone();
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn selector_config(&self) -> &SelectorConfig {
        &self.selector_cfg
    }

    pub fn cmca(&self) -> &Cmca {
        &self.cmca
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Parameters outside the selector.
    pub fn num_basen_params(&self) -> usize {
        self.store.num_scalars() - self.store.num_scalars_with_prefix(SELECTOR_PREFIX)
    }

    pub fn set_selector_frozen(&mut self, frozen: bool) {
        self.store.set_frozen_prefix(SELECTOR_PREFIX, frozen);
    }

    pub fn set_basen_frozen(&mut self, frozen: bool) {
        for p in BASEN_PREFIXES {
            self.store.set_frozen_prefix(p, frozen);
        }
    }

    /// Gumbel selector state at temperature `tau`, if the model has one.
    pub fn gumbel_state(&self, tau: f64) -> Option<Result<GumbelSelectorState>> {
        match &self.selector {
            Some(Selector::Gcs(l)) => Some(l.state(&self.store, tau)),
            _ => None,
        }
    }

    /// Hard Gumbel selection (argmax per neuron), if the model has a Gumbel selector.
    pub fn gumbel_subset(&self) -> Option<ChannelSubset> {
        let method = match self.selector_cfg {
            SelectorConfig::Gcs { residual: Some(_), .. } => SelectionMethod::Resgs,
            _ => SelectionMethod::Gcs,
        };
        self.gumbel_state(1.0).map(|s| gcs_test_select(&s.expect("stored logits have a valid shape"), method))
    }

    pub fn convrs(&self) -> Option<&ConvRsSelector> {
        match &self.selector {
            Some(Selector::ConvRs(s)) => Some(s),
            _ => None,
        }
    }

    /// EEG as seen by the encoder after the selector, plus the ConvRS vector when one ran.
    fn select(&self, g: &mut Graph, e: Var, mode: SelectMode<'_>) -> Result<(Var, Option<Var>)> {
        match (mode, &self.selector, &self.selector_cfg) {
            (SelectMode::Bypass, _, _) => Ok((e, None)),
            (SelectMode::Mask, Some(Selector::ConvRs(sel)), _) => {
                let s = sel.forward(g, &self.store, e)?;
                let flat = g.reshape(s, &[self.q]);
                Ok((g.mul_rows(e, flat), Some(s)))
            }
            (SelectMode::GumbelSoft { tau, noise }, Some(Selector::Gcs(layer)), SelectorConfig::Gcs { residual, padding, .. }) => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
                }
                let zero;
                let noise = match noise {
                    Some(n) => n,
                    None => {
                        zero = Tensor::zeros(&[layer.k, layer.q]);
                        &zero
                    }
                };
                let la = g.param(&self.store, layer.log_alpha);
                let w = gumbel_weights_var(g, la, noise, tau);
                let z = g.matmul(w, e, false, false);
                let slots = self.slots(layer, *padding);
                Ok((self.pad_and_blend(g, e, z, &slots, *residual), None))
            }
            (SelectMode::GumbelHard, Some(Selector::Gcs(layer)), SelectorConfig::Gcs { padding, .. }) => {
                let la = self.store.value(layer.log_alpha);
                let mut onehot = Tensor::zeros(&[layer.k, layer.q]);
                for (k, row) in la.data().chunks(layer.q).enumerate() {
                    onehot.data_mut()[k * layer.q + argmax_lowest(row)] = 1.0;
                }
                let w = g.constant(onehot);
                let z = g.matmul(w, e, false, false);
                let slots = self.slots(layer, *padding);
                Ok((g.scatter_rows(z, &slots, self.q), None))
            }
            (mode, _, cfg) => Err(Error::invalid(format!("select mode {mode:?} does not fit selector {cfg:?}"))),
        }
    }

    fn slots(&self, layer: &GcsLayer, padding: PaddingPlacement) -> Vec<usize> {
        match padding {
            PaddingPlacement::Leading => (0..layer.k).collect(),
            PaddingPlacement::Argmax => self.store.value(layer.log_alpha).data().chunks(layer.q).map(argmax_lowest).collect(),
        }
    }

    fn pad_and_blend(&self, g: &mut Graph, e: Var, z: Var, slots: &[usize], residual: Option<f64>) -> Var {
        let padded = g.scatter_rows(z, slots, self.q);
        match residual {
            None => padded,
            Some(a) => {
                let keep = g.scale(e, 1.0 - a);
                let add = g.scale(padded, a);
                g.add(keep, add)
            }
        }
    }

    /// Full forward pass: `mix` is `[1, L]`, `eeg` is `[Q, T]`.
    pub fn forward(&self, g: &mut Graph, mix: Var, eeg: Var, mode: SelectMode<'_>) -> Result<ForwardOutput> {
        let (q, _) = g.value(eeg).dims2();
        if q != self.q {
            return Err(Error::shape(format!("model expects {} EEG channels, got {q}", self.q)));
        }
        let len = g.value(mix).cols();
        let w_x = self.audio.forward(g, &self.store, mix, &self.cfg)?;
        let frames = g.value(w_x).cols();
        let (e_in, selection) = self.select(g, eeg, mode)?;
        let e_x = self.eeg.forward(g, &self.store, e_in, frames)?;
        let fused = self.cmca.forward(g, &self.store, w_x, e_x)?;
        let masks = self.separator.forward(g, &self.store, fused);
        let sources = masks
            .iter()
            .map(|&m| {
                let masked = g.mul(w_x, m);
                self.decoder.forward(g, &self.store, masked, len)
            })
            .collect();
        Ok(ForwardOutput { sources, masks, selection, audio_embedding: w_x, eeg_embedding: e_x })
    }

    /// Decodes an arbitrary `[C, F]` embedding to `len` samples (inference helper).
    pub fn decode(&self, embedding: &Tensor, len: usize) -> Tensor {
        let mut g = Graph::inference();
        let x = g.constant(embedding.clone());
        let y = self.decoder.forward(&mut g, &self.store, x, len);
        g.value(y).clone()
    }

    /// Audio embedding `[C, F]` of a waveform.
    pub fn audio_encode(&self, x: &AudioWaveform) -> Result<Tensor> {
        let mut g = Graph::inference();
        let xv = g.constant(x.to_tensor());
        let w = self.audio.forward(&mut g, &self.store, xv, &self.cfg)?;
        Ok(g.value(w).clone())
    }

    /// EEG embedding `[C, frames]` of a trial (no selector).
    pub fn eeg_encode(&self, e: &EegTrial, frames: usize) -> Result<Tensor> {
        if e.n_channels() != self.q {
            return Err(Error::shape(format!("model expects {} EEG channels, got {}", self.q, e.n_channels())));
        }
        let mut g = Graph::inference();
        let ev = g.constant(e.to_tensor());
        let out = self.eeg.forward(&mut g, &self.store, ev, frames)?;
        Ok(g.value(out).clone())
    }

    /// Separated waveforms for one example, target first.
    pub fn separate(&self, mix: &AudioWaveform, eeg: &EegTrial, mode: SelectMode<'_>) -> Result<Vec<AudioWaveform>> {
        let mut g = Graph::inference();
        let x = g.constant(mix.to_tensor());
        let e = g.constant(eeg.to_tensor());
        let out = self.forward(&mut g, x, e, mode)?;
        out.sources.iter().map(|&s| AudioWaveform::new(g.value(s).data().to_vec(), mix.fs())).collect()
    }
}
