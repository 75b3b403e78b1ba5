//! DSP front-end: band-pass filtering, MUA extraction, mixing, segmentation, resampling.

mod filter;
mod hilbert;
mod mix;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use filter::{bandpass, Biquad, ButterworthBandpass};
pub use hilbert::{analytic_signal, compute_mua, MuaOutput, DELTA_BAND, GAMMA_BAND};
pub use mix::{mix_at_snr, resample, segment, segment_bounds, Mixture};

pub const DEFAULT_AUDIO_FS: f64 = 14_700.0;
pub const DEFAULT_EEG_FS: f64 = 128.0;

/// EEG pre-filter passband.
pub const EEG_PREFILTER: BandSpec = BandSpec { lo_hz: 0.1, hi_hz: 45.0, order: 2 };

/// Mono waveform with its sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioWaveform {
    samples: Vec<f64>,
    fs: f64,
}

impl AudioWaveform {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {fs}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(AudioWaveform { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.samples.len()], self.samples.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EegStage {
    Raw,
    Filtered,
    Mua,
}

impl EegStage {
    pub fn as_str(self) -> &'static str {
        match self {
            EegStage::Raw => "raw",
            EegStage::Filtered => "filtered",
            EegStage::Mua => "mua",
        }
    }
}

/// Multichannel EEG, stored channel-major (`Q x T`).
#[derive(Clone, Debug, PartialEq)]
pub struct EegTrial {
    data: Vec<f64>,
    channels: usize,
    fs: f64,
    labels: Vec<String>,
    stage: EegStage,
}

impl EegTrial {
    pub fn new(channels: Vec<Vec<f64>>, fs: f64, labels: Vec<String>, stage: EegStage) -> Result<Self> {
        let q = channels.len();
        let t = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::shape("all EEG channels must have the same length"));
        }
        Self::from_channel_major(q, channels.concat(), fs, labels, stage)
    }

    pub fn from_channel_major(
        channels: usize,
        data: Vec<f64>,
        fs: f64,
        labels: Vec<String>,
        stage: EegStage,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("EEG trial needs at least one channel"));
        }
        if data.len() % channels != 0 {
            return Err(Error::shape(format!("{} samples do not split into {channels} channels", data.len())));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("EEG sample rate must be positive, got {fs}")));
        }
        if labels.len() != channels {
            return Err(Error::shape(format!("{} labels for {channels} channels", labels.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("EEG contains non-finite values"));
        }
        Ok(EegTrial { data, channels, fs, labels, stage })
    }

    /// Channel labels `Ch0..Ch{q-1}`.
    pub fn default_labels(q: usize) -> Vec<String> {
        (0..q).map(|i| format!("Ch{i}")).collect()
    }

    pub fn n_channels(&self) -> usize {
        self.channels
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn stage(&self) -> EegStage {
        self.stage
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let t = self.n_samples();
        &self.data[i * t..(i + 1) * t]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.n_samples()], self.data.clone())
    }

    /// Same metadata, new channel data (`Q` rows of equal length).
    pub fn with_channels(&self, channels: Vec<Vec<f64>>, stage: EegStage) -> Result<Self> {
        EegTrial::new(channels, self.fs, self.labels.clone(), stage)
    }

    /// Copy with every channel not in `keep` set to zero.
    pub fn zero_except(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&bad) = keep.iter().find(|&&c| c >= self.channels) {
            return Err(Error::invalid(format!("channel index {bad} out of range for {} channels", self.channels)));
        }
        let t = self.n_samples();
        let mut data = vec![0.0; self.data.len()];
        for &c in keep {
            data[c * t..(c + 1) * t].copy_from_slice(self.channel(c));
        }
        Ok(EegTrial { data, ..self.clone() })
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_samples() || len == 0 {
            return Err(Error::invalid("EEG slice out of range"));
        }
        let chans = (0..self.channels).map(|c| self.channel(c)[start..start + len].to_vec()).collect();
        self.with_channels(chans, self.stage)
    }
}

/// Band edges plus the Butterworth prototype order. A band-pass built from an order-`n`
/// prototype has `2n` poles; a zero lower edge gives an order-`n` low-pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub order: usize,
}

impl BandSpec {
    pub fn new(lo_hz: f64, hi_hz: f64) -> Self {
        BandSpec { lo_hz, hi_hz, order: 2 }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        let ok = self.lo_hz >= 0.0 && self.lo_hz < self.hi_hz && self.hi_hz < fs / 2.0 && self.order >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBand { lo_hz: self.lo_hz, hi_hz: self.hi_hz, fs })
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Single-sided FFT magnitudes `|X[k]|` for `k = 0..=n/2`.
pub fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().take(n / 2 + 1).map(|c| c.norm()).collect()
}
