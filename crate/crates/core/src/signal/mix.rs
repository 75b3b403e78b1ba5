use std::f64::consts::PI;

use super::AudioWaveform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mixture: AudioWaveform,
    /// Rescaled `s1`, the reference for loss computation.
    pub target: AudioWaveform,
    /// Rescaled `s2`.
    pub interferer: AudioWaveform,
}

/// Normalizes `s2` to unit RMS and `s1` to `10^(snr_db / 20)`, then sums them.
pub fn mix_at_snr(s1: &AudioWaveform, s2: &AudioWaveform, snr_db: f64) -> Result<Mixture> {
    if s1.len() != s2.len() {
        return Err(Error::shape(format!("source lengths differ: {} vs {}", s1.len(), s2.len())));
    }
    if s1.fs() != s2.fs() {
        return Err(Error::invalid(format!("source sample rates differ: {} vs {}", s1.fs(), s2.fs())));
    }
    let (r1, r2) = (s1.rms(), s2.rms());
    if r1 <= 0.0 {
        return Err(Error::DegenerateSource("first source has zero RMS".into()));
    }
    if r2 <= 0.0 {
        return Err(Error::DegenerateSource("second source has zero RMS".into()));
    }
    let g1 = 10f64.powf(snr_db / 20.0) / r1;
    let g2 = 1.0 / r2;
    let t: Vec<f64> = s1.samples().iter().map(|v| v * g1).collect();
    let i: Vec<f64> = s2.samples().iter().map(|v| v * g2).collect();
    let m: Vec<f64> = t.iter().zip(&i).map(|(a, b)| a + b).collect();
    let fs = s1.fs();
    Ok(Mixture {
        mixture: AudioWaveform::new(m, fs)?,
        target: AudioWaveform::new(t, fs)?,
        interferer: AudioWaveform::new(i, fs)?,
    })
}

/// `(start, len)` sample ranges of every full segment. Boundaries sit at the same wall-clock
/// instants (`k * hop_s`) for any sample rate, so audio and EEG cut with their own rates stay
/// aligned. A trailing remainder shorter than one segment is dropped.
pub fn segment_bounds(n_samples: usize, fs: f64, seg_len_s: f64, hop_s: f64) -> Result<Vec<(usize, usize)>> {
    if !(seg_len_s > 0.0 && hop_s > 0.0 && fs > 0.0) {
        return Err(Error::invalid("segment length, hop and sample rate must be positive"));
    }
    let len = (seg_len_s * fs).round() as usize;
    if len == 0 {
        return Err(Error::invalid("segment shorter than one sample"));
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = (k as f64 * hop_s * fs).round() as usize;
        if start + len > n_samples {
            break;
        }
        out.push((start, len));
        k += 1;
    }
    if out.is_empty() {
        log::warn!("segment length {seg_len_s} s exceeds signal duration {} s", n_samples as f64 / fs);
    }
    Ok(out)
}

pub fn segment(x: &[f64], fs: f64, seg_len_s: f64, hop_s: f64) -> Result<Vec<Vec<f64>>> {
    Ok(segment_bounds(x.len(), fs, seg_len_s, hop_s)?
        .into_iter()
        .map(|(s, l)| x[s..s + l].to_vec())
        .collect())
}

/// Zero crossings of the interpolation kernel on each side.
const SINC_ZEROS: f64 = 16.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel. When downsampling the
/// kernel cutoff is lowered to the new Nyquist rate.
pub fn resample(x: &AudioWaveform, to_fs: f64) -> Result<AudioWaveform> {
    if !(to_fs > 0.0 && to_fs.is_finite()) {
        return Err(Error::invalid(format!("target sample rate must be positive, got {to_fs}")));
    }
    let from = x.fs();
    if to_fs == from {
        return Ok(x.clone());
    }
    let n_in = x.len();
    let ratio = to_fs / from;
    let n_out = output_len(n_in, from, to_fs);
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZEROS / cutoff;
    let src = x.samples();
    let out: Vec<f64> = (0..n_out)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(n_in - 1);
            let mut acc = 0.0;
            for (k, &s) in src.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                acc += s * cutoff * sinc(cutoff * d) * blackman(d / half_width);
            }
            acc
        })
        .collect();
    AudioWaveform::new(out, to_fs)
}

fn output_len(n_in: usize, from: f64, to: f64) -> usize {
    // exact for integer rates, e.g. 44100 -> 14700 gives ceil(n / 3)
    if from.fract() == 0.0 && to.fract() == 0.0 {
        let (f, t) = (from as u64, to as u64);
        ((n_in as u64 * t).div_ceil(f)) as usize
    } else {
        (n_in as f64 * to / from).ceil() as usize
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `[-1, 1]`.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let p = PI * (u + 1.0);
    0.42 - 0.5 * p.cos() + 0.08 * (2.0 * p).cos()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::signal::{magnitude_spectrum, rms};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    fn wav(x: Vec<f64>, fs: f64) -> AudioWaveform {
        AudioWaveform::new(x, fs).unwrap()
    }

    #[test]
    fn identical_sources_at_zero_db_double() {
        let s = wav(noise(1, 500), 1000.0);
        let m = mix_at_snr(&s, &s, 0.0).unwrap();
        for (a, b) in m.mixture.samples().iter().zip(m.target.samples()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn rms_ratio_matches_requested_snr() {
        let s1 = wav(noise(2, 4000), 1000.0);
        let s2 = wav(noise(3, 4000).iter().map(|v| v * 7.0).collect(), 1000.0);
        for snr in [0.0, 6.0, -3.5] {
            let m = mix_at_snr(&s1, &s2, snr).unwrap();
            let ratio = m.target.rms() / m.interferer.rms();
            assert!((ratio - 10f64.powf(snr / 20.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_rms_source_is_degenerate() {
        let s1 = wav(vec![0.0; 10], 100.0);
        let s2 = wav(noise(4, 10), 100.0);
        assert!(matches!(mix_at_snr(&s1, &s2, 0.0), Err(Error::DegenerateSource(_))));
        assert!(matches!(mix_at_snr(&s2, &s1, 0.0), Err(Error::DegenerateSource(_))));
    }

    #[test]
    fn segment_counts() {
        let fs = 128.0;
        let x = vec![0.0; 60 * 128];
        assert_eq!(segment(&x, fs, 2.0, 2.0).unwrap().len(), 30);
        assert_eq!(segment(&x, fs, 20.0, 20.0).unwrap().len(), 3);
        assert!(segment(&x[..128], fs, 2.0, 2.0).unwrap().is_empty());
        // audio and EEG boundaries agree in seconds
        let a = segment_bounds(60 * 14700, 14700.0, 2.0, 2.0).unwrap();
        let e = segment_bounds(60 * 128, 128.0, 2.0, 2.0).unwrap();
        assert_eq!(a.len(), e.len());
        for (x, y) in a.iter().zip(&e) {
            assert!((x.0 as f64 / 14700.0 - y.0 as f64 / 128.0).abs() < 1.0 / 128.0);
        }
    }

    #[test]
    fn segments_concatenate_to_truncated_original() {
        let x = noise(5, 1000);
        let segs = segment(&x, 100.0, 0.75, 0.75).unwrap();
        let joined: Vec<f64> = segs.concat();
        assert_eq!(joined.as_slice(), &x[..joined.len()]);
        assert_eq!(joined.len(), 975);
    }

    #[test]
    fn resample_identity_and_length() {
        let x = wav(noise(6, 1001), 44100.0);
        assert_eq!(resample(&x, 44100.0).unwrap(), x);
        let y = resample(&x, 14700.0).unwrap();
        assert_eq!(y.len(), 1001usize.div_ceil(3));
        assert!((y.duration_s() - x.duration_s()).abs() <= 1.0 / 14700.0);
    }

    #[test]
    fn resampled_tone_keeps_its_frequency() {
        let n = 44100;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 1000.0 * i as f64 / 44100.0).sin()).collect();
        let y = resample(&wav(x, 44100.0), 14700.0).unwrap();
        let mag = magnitude_spectrum(y.samples());
        let peak = mag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let f = peak as f64 * 14700.0 / y.len() as f64;
        assert!((f - 1000.0).abs() < 2.0, "peak at {f} Hz");
        assert!((rms(y.samples()) - (0.5f64).sqrt()).abs() < 0.02);
    }

    #[test]
    fn downsampling_suppresses_aliases() {
        // 9 kHz lies above the 7.35 kHz target Nyquist and would alias to 5.7 kHz
        let n = 44100;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 9000.0 * i as f64 / 44100.0).sin()).collect();
        let y = resample(&wav(x, 44100.0), 14700.0).unwrap();
        let interior = &y.samples()[200..y.len() - 200];
        assert!(rms(interior) < 0.01, "alias rms {}", rms(interior));
    }

    #[test]
    fn equal_rms_noise_mixture_scores_near_zero_db() {
        for seed in 0..5 {
            let s1 = wav(noise(100 + seed, 8000), 1000.0);
            let s2 = wav(noise(200 + seed, 8000), 1000.0);
            let m = mix_at_snr(&s1, &s2, 0.0).unwrap();
            // scale-invariant SDR by direct projection
            let (est, r) = (m.mixture.samples(), m.target.samples());
            let alpha = est.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / r.iter().map(|v| v * v).sum::<f64>();
            let tgt: f64 = r.iter().map(|v| (alpha * v).powi(2)).sum();
            let res: f64 = est.iter().zip(r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
            let sdr = 10.0 * (tgt / res).log10();
            assert!(sdr.abs() <= 1.0, "SI-SDR {sdr}");
        }
    }
}
