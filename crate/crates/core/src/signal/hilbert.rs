use rustfft::{num_complex::Complex, FftPlanner};

use super::{bandpass, rms, BandSpec, EegStage, EegTrial};
use crate::error::{Error, Result};

pub const GAMMA_BAND: BandSpec = BandSpec { lo_hz: 30.0, hi_hz: 45.0, order: 2 };
pub const DELTA_BAND: BandSpec = BandSpec { lo_hz: 0.5, hi_hz: 4.0, order: 2 };

/// Analytic signal `x + i H{x}` via the FFT (negative frequencies zeroed).
pub fn analytic_signal(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

#[derive(Clone, Debug)]
pub struct MuaOutput {
    pub trial: EegTrial,
    /// Channels whose delta band carried no energy; their output is all zero.
    pub undefined_phase_channels: Vec<usize>,
}

impl MuaOutput {
    pub fn has_warning(&self) -> bool {
        !self.undefined_phase_channels.is_empty()
    }
}

/// Per channel `U(t) = a_gamma * |gamma(t)| + a_delta * arg(delta(t))`, where the gamma
/// amplitude and delta phase come from the analytic signals of the two band-passed copies.
pub fn compute_mua(e: &EegTrial, a_gamma: f64, a_delta: f64) -> Result<MuaOutput> {
    if e.stage() != EegStage::Filtered {
        return Err(Error::invalid(format!("MUA expects a filtered trial, got stage {}", e.stage().as_str())));
    }
    let fs = e.fs();
    let mut channels = Vec::with_capacity(e.n_channels());
    let mut undefined = Vec::new();
    for c in 0..e.n_channels() {
        let x = e.channel(c);
        let delta = bandpass(x, &DELTA_BAND, fs)?;
        if rms(&delta) <= 1e-12 * rms(x) {
            log::warn!("channel {c}: delta band is empty, phase undefined; emitting zeros");
            undefined.push(c);
            channels.push(vec![0.0; x.len()]);
            continue;
        }
        let gamma = bandpass(x, &GAMMA_BAND, fs)?;
        let amp = analytic_signal(&gamma);
        let phase = analytic_signal(&delta);
        channels.push(amp.iter().zip(&phase).map(|(g, d)| a_gamma * g.norm() + a_delta * d.arg()).collect());
    }
    Ok(MuaOutput { trial: e.with_channels(channels, EegStage::Mua)?, undefined_phase_channels: undefined })
}
