//! Synthetic paired audio/EEG corpus with planted informative channels.
//!
//! Each example mixes two amplitude-modulated band-limited noise sources at a fixed SNR. The
//! target is picked at random, so the audio alone cannot tell which source to keep; the
//! informative EEG channels carry the delta-band envelope of the target plus noise.

mod io;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use io::{read_dataset, write_dataset, ExampleMeta};

use crate::error::{Error, Result};
use crate::signal::{
    bandpass, compute_mua, mix_at_snr, segment_bounds, AudioWaveform, BandSpec, EegStage, EegTrial, DEFAULT_EEG_FS,
    DELTA_BAND, EEG_PREFILTER,
};

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    pub mixture: AudioWaveform,
    pub target: AudioWaveform,
    pub interferer: AudioWaveform,
    pub eeg: EegTrial,
    pub subject_id: String,
    pub example_id: String,
    /// Ground-truth informative channels, when known.
    pub informative_channels: Option<Vec<usize>>,
}

/// Serializes infinite SNRs (noise disabled) as the string `"inf"`.
mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub q_channels: usize,
    pub informative_channels: Vec<usize>,
    /// SNR of the planted envelope on informative channels; `"inf"` disables the noise.
    #[serde(with = "snr_serde")]
    pub eeg_snr_db: f64,
    pub seg_len_s: f64,
    pub n_examples: usize,
    pub seed: u64,
    pub fs_audio: f64,
    pub fs_eeg: f64,
    pub n_subjects: usize,
    /// SNR between target and interferer in the mixture.
    pub mix_snr_db: f64,
    /// Envelope modulation rates are drawn from this range (Hz).
    pub mod_rate_hz: (f64, f64),
    /// Minimum difference between the two sources' modulation rates (Hz).
    pub min_rate_gap_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            q_channels: 16,
            informative_channels: vec![1, 5, 9, 13],
            eeg_snr_db: 0.0,
            seg_len_s: 2.0,
            n_examples: 200,
            seed: 0,
            fs_audio: 1000.0,
            fs_eeg: DEFAULT_EEG_FS,
            n_subjects: 4,
            mix_snr_db: 0.0,
            mod_rate_hz: (1.5, 3.5),
            min_rate_gap_hz: 0.75,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.q_channels == 0 {
            bad.push("synth.q_channels: must be >= 1".to_string());
        }
        if let Some(c) = self.informative_channels.iter().find(|&&c| c >= self.q_channels) {
            bad.push(format!("synth.informative_channels: channel {c} is outside [0, {})", self.q_channels));
        }
        let mut sorted = self.informative_channels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.informative_channels.len() {
            bad.push("synth.informative_channels: duplicate channel".to_string());
        }
        if self.n_examples == 0 {
            bad.push("synth.n_examples: must be >= 1".to_string());
        }
        if !(self.seg_len_s > 0.0) {
            bad.push("synth.seg_len_s: must be positive".to_string());
        }
        if !(self.fs_audio >= 200.0) {
            bad.push("synth.fs_audio: must be at least 200 Hz".to_string());
        }
        if !(self.fs_eeg > 2.0 * DELTA_BAND.hi_hz) {
            bad.push("synth.fs_eeg: must exceed twice the delta band edge".to_string());
        }
        if self.n_subjects == 0 {
            bad.push("synth.n_subjects: must be >= 1".to_string());
        }
        if self.eeg_snr_db.is_nan() {
            bad.push("synth.eeg_snr_db: must be a number or \"inf\"".to_string());
        }
        let (lo, hi) = self.mod_rate_hz;
        if !(lo > 0.0 && hi > lo && hi - lo >= self.min_rate_gap_hz && self.min_rate_gap_hz >= 0.0) {
            bad.push("synth.mod_rate_hz: need 0 < lo < hi with hi - lo >= min_rate_gap_hz".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn n_audio_samples(&self) -> usize {
        (self.seg_len_s * self.fs_audio).round() as usize
    }

    pub fn n_eeg_samples(&self) -> usize {
        (self.seg_len_s * self.fs_eeg).round() as usize
    }
}

/// Number of equal-width carrier bands the audio spectrum is split into.
const CARRIER_SLOTS: usize = 6;
/// Envelope floor, so sources never fall completely silent.
const ENVELOPE_FLOOR: f64 = 0.05;

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Speech-like source envelope `(0.5 (1 + sin(2 pi f t + phi)))^2 + floor`.
pub fn envelope(rate_hz: f64, phase: f64, t: f64) -> f64 {
    let s = 0.5 * (1.0 + (2.0 * PI * rate_hz * t + phase).sin());
    s * s + ENVELOPE_FLOOR
}

/// Per-example generator stream: the seed selects the key, the example index the stream.
pub fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

pub fn example_id(index: usize) -> String {
    format!("ex{index:05}")
}

struct Source {
    samples: Vec<f64>,
    rate: f64,
    phase: f64,
}

fn carrier_band(slot: usize, fs: f64) -> BandSpec {
    let lo = 0.06 * fs;
    let width = (0.44 * fs - lo) / CARRIER_SLOTS as f64;
    let start = lo + slot as f64 * width;
    BandSpec { lo_hz: start + 0.1 * width, hi_hz: start + 0.9 * width, order: 4 }
}

fn make_source(cfg: &SynthConfig, slot: usize, rate: f64, rng: &mut ChaCha8Rng) -> Result<Source> {
    let n = cfg.n_audio_samples();
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let carrier = bandpass(&white, &carrier_band(slot, cfg.fs_audio), cfg.fs_audio)?;
    let phase = rng.random_range(0.0..2.0 * PI);
    let samples = carrier
        .iter()
        .enumerate()
        .map(|(i, c)| c * envelope(rate, phase, i as f64 / cfg.fs_audio))
        .collect();
    Ok(Source { samples, rate, phase })
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    x.iter_mut().for_each(|v| *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 });
}

/// The delta-band envelope planted on informative channels (zero mean, unit variance).
pub fn planted_envelope(rate: f64, phase: f64, n: usize, fs: f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..n).map(|i| envelope(rate, phase, i as f64 / fs)).collect();
    let mut d = bandpass(&raw, &DELTA_BAND, fs)?;
    standardize(&mut d);
    Ok(d)
}

/// One example, fully determined by `(cfg.seed, index)`.
pub fn generate_example(cfg: &SynthConfig, index: usize) -> Result<MixtureExample> {
    cfg.validate()?;
    let mut rng = example_rng(cfg.seed, index);
    let (lo, hi) = cfg.mod_rate_hz;
    let rate_a = rng.random_range(lo..hi);
    let rate_b = loop {
        let r = rng.random_range(lo..hi);
        if (r - rate_a).abs() >= cfg.min_rate_gap_hz {
            break r;
        }
    };
    let slots = sample(&mut rng, CARRIER_SLOTS, 2);
    let a = make_source(cfg, slots.index(0), rate_a, &mut rng)?;
    let b = make_source(cfg, slots.index(1), rate_b, &mut rng)?;
    let (target, interferer) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };

    let s1 = AudioWaveform::new(target.samples, cfg.fs_audio)?;
    let s2 = AudioWaveform::new(interferer.samples, cfg.fs_audio)?;
    let mixed = mix_at_snr(&s1, &s2, cfg.mix_snr_db)?;
    let t: Vec<f64> = mixed.target.samples().iter().copied().map(round_f32).collect();
    let i: Vec<f64> = mixed.interferer.samples().iter().copied().map(round_f32).collect();
    let m: Vec<f64> = t.iter().zip(&i).map(|(a, b)| round_f32(a + b)).collect();

    let ne = cfg.n_eeg_samples();
    let planted = planted_envelope(target.rate, target.phase, ne, cfg.fs_eeg)?;
    let noise_sd = if cfg.eeg_snr_db.is_infinite() { 0.0 } else { 10f64.powf(-cfg.eeg_snr_db / 20.0) };
    let total_sd = (1.0 + noise_sd * noise_sd).sqrt();
    let channels: Vec<Vec<f64>> = (0..cfg.q_channels)
        .map(|c| {
            let informative = cfg.informative_channels.contains(&c);
            (0..ne)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    round_f32(if informative { planted[k] + noise_sd * z } else { total_sd * z })
                })
                .collect()
        })
        .collect();
    let eeg = EegTrial::new(channels, cfg.fs_eeg, EegTrial::default_labels(cfg.q_channels), EegStage::Raw)?;
    Ok(MixtureExample {
        mixture: AudioWaveform::new(m, cfg.fs_audio)?,
        target: AudioWaveform::new(t, cfg.fs_audio)?,
        interferer: AudioWaveform::new(i, cfg.fs_audio)?,
        eeg,
        subject_id: format!("S{:02}", index % cfg.n_subjects),
        example_id: example_id(index),
        informative_channels: Some(cfg.informative_channels.clone()),
    })
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<MixtureExample>> {
    (0..cfg.n_examples).map(|i| generate_example(cfg, i)).collect()
}

/// Mean-squared error of lagged linear decoders reconstructing the planted envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub mse_informative: f64,
    pub mse_random: f64,
    pub random_channels: Vec<usize>,
    pub ratio: f64,
}

/// Decoder lags (EEG samples on each side of the reconstructed instant).
const DECODER_LAGS: usize = 8;

/// Lagged design matrix plus the `(example, sample)` each row reconstructs.
fn decoder_design(examples: &[MixtureExample], channels: &[usize]) -> (DMatrix<f64>, Vec<(usize, usize)>) {
    let width = channels.len() * (2 * DECODER_LAGS + 1) + 1;
    let mut rows = Vec::new();
    let mut owners = Vec::new();
    for (n, ex) in examples.iter().enumerate() {
        let t = ex.eeg.n_samples();
        for k in DECODER_LAGS..t.saturating_sub(DECODER_LAGS) {
            for &c in channels {
                rows.extend_from_slice(&ex.eeg.channel(c)[k - DECODER_LAGS..=k + DECODER_LAGS]);
            }
            rows.push(1.0);
            owners.push((n, k));
        }
    }
    (DMatrix::from_row_slice(owners.len(), width, &rows), owners)
}

fn decoder_mse(
    train: &[MixtureExample],
    test: &[MixtureExample],
    train_envs: &[Vec<f64>],
    test_envs: &[Vec<f64>],
    channels: &[usize],
) -> Result<f64> {
    let (x, owners) = decoder_design(train, channels);
    let y = DVector::from_iterator(owners.len(), owners.iter().map(|&(n, k)| train_envs[n][k]));
    let xtx = x.transpose() * &x + DMatrix::identity(x.ncols(), x.ncols()) * 1e-6;
    let xty = x.transpose() * y;
    let w = xtx.cholesky().ok_or_else(|| Error::invalid("decoder normal equations are singular"))?.solve(&xty);
    let (xt, towners) = decoder_design(test, channels);
    let pred = xt * w;
    let se: f64 = towners.iter().enumerate().map(|(i, &(n, k))| (pred[i] - test_envs[n][k]).powi(2)).sum();
    Ok(se / towners.len().max(1) as f64)
}

/// Trains lagged least-squares decoders of the target's delta envelope on the first 70% of
/// `examples` and scores them on the rest: once on the informative channels, once on an
/// equal-size random subset of the other channels.
pub fn identifiability_check(examples: &[MixtureExample], informative: &[usize], seed: u64) -> Result<IdentifiabilityReport> {
    if examples.len() < 4 || informative.is_empty() {
        return Err(Error::invalid("identifiability check needs >= 4 examples and a non-empty channel set"));
    }
    let q = examples[0].eeg.n_channels();
    let others: Vec<usize> = (0..q).filter(|c| !informative.contains(c)).collect();
    if others.len() < informative.len() {
        return Err(Error::invalid("not enough non-informative channels for a matched comparison"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_channels: Vec<usize> =
        sample(&mut rng, others.len(), informative.len()).into_iter().map(|i| others[i]).collect();
    random_channels.sort_unstable();
    let envs: Vec<Vec<f64>> = examples
        .iter()
        .map(|ex| target_envelope(&ex.target, ex.eeg.n_samples(), ex.eeg.fs()))
        .collect::<Result<_>>()?;
    let split = (examples.len() * 7 / 10).max(1);
    let (train, test) = examples.split_at(split);
    let (train_envs, test_envs) = envs.split_at(split);
    let mse_informative = decoder_mse(train, test, train_envs, test_envs, informative)?;
    let mse_random = decoder_mse(train, test, train_envs, test_envs, &random_channels)?;
    Ok(IdentifiabilityReport { mse_informative, mse_random, random_channels, ratio: mse_random / mse_informative })
}

/// Delta-band amplitude envelope of an audio waveform, resampled to `n` samples at `fs`
/// (block RMS over each EEG sample period), standardized.
pub fn target_envelope(target: &AudioWaveform, n: usize, fs: f64) -> Result<Vec<f64>> {
    let x = target.samples();
    let per = target.fs() / fs;
    let blocks: Vec<f64> = (0..n)
        .map(|k| {
            let a = (k as f64 * per).round() as usize;
            let b = (((k + 1) as f64 * per).round() as usize).min(x.len()).max(a + 1);
            (x[a.min(x.len() - 1)..b].iter().map(|v| v * v).sum::<f64>() / (b - a) as f64).sqrt()
        })
        .collect();
    let mut d = bandpass(&blocks, &DELTA_BAND, fs)?;
    standardize(&mut d);
    Ok(d)
}

/// Filter, MUA transform and segmentation of one example. Audio and EEG are cut at the same
/// wall-clock instants; segment ids extend the example id with `_sNN`.
pub fn preprocess_example(ex: &MixtureExample, seg_len_s: f64, a_gamma: f64, a_delta: f64) -> Result<Vec<MixtureExample>> {
    let eeg = match ex.eeg.stage() {
        EegStage::Raw => {
            let chans = (0..ex.eeg.n_channels())
                .map(|c| bandpass(ex.eeg.channel(c), &EEG_PREFILTER, ex.eeg.fs()))
                .collect::<Result<Vec<_>>>()?;
            ex.eeg.with_channels(chans, EegStage::Filtered)?
        }
        _ => ex.eeg.clone(),
    };
    let eeg = match eeg.stage() {
        EegStage::Filtered => compute_mua(&eeg, a_gamma, a_delta)?.trial,
        _ => eeg,
    };
    let fs_a = ex.mixture.fs();
    let audio_bounds = segment_bounds(ex.mixture.len(), fs_a, seg_len_s, seg_len_s)?;
    let eeg_bounds = segment_bounds(eeg.n_samples(), eeg.fs(), seg_len_s, seg_len_s)?;
    let cut = |w: &AudioWaveform, (s, l): (usize, usize)| AudioWaveform::new(w.samples()[s..s + l].to_vec(), fs_a);
    audio_bounds
        .into_iter()
        .zip(eeg_bounds)
        .enumerate()
        .map(|(k, (ab, eb))| {
            Ok(MixtureExample {
                mixture: cut(&ex.mixture, ab)?,
                target: cut(&ex.target, ab)?,
                interferer: cut(&ex.interferer, ab)?,
                eeg: round_trial(eeg.slice(eb.0, eb.1)?)?,
                subject_id: ex.subject_id.clone(),
                example_id: format!("{}_s{k:02}", ex.example_id),
                informative_channels: ex.informative_channels.clone(),
            })
        })
        .collect()
}

/// Rounds EEG values to `f32` so a written dataset reads back identically.
fn round_trial(e: EegTrial) -> Result<EegTrial> {
    let data = e.data().iter().copied().map(round_f32).collect();
    EegTrial::from_channel_major(e.n_channels(), data, e.fs(), e.labels().to_vec(), e.stage())
}

#[cfg(test)]
mod tests;
