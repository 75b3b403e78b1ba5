use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::BandSpec;
use crate::error::{Error, Result};

/// Second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Section with the digital pole pair `p, conj(p)` and the given numerator, scaled to
    /// unit magnitude at normalized angular frequency `w`.
    fn from_pole(p: Complex<f64>, b: [f64; 3], w: f64) -> Self {
        let a = [-2.0 * p.re, p.norm_sqr()];
        let z = Complex::from_polar(1.0, -w);
        let num = b[0] + b[1] * z + b[2] * z * z;
        let den = 1.0 + a[0] * z + a[1] * z * z;
        let g = (den / num).norm();
        Biquad { b: [b[0] * g, b[1] * g, b[2] * g], a }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state that holds a constant unit input at steady state.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[1] * g]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b[0] * xin + z[0];
            z[0] = self.b[1] * xin - self.a[0] * y + z[1];
            z[1] = self.b[2] * xin - self.a[1] * y;
            *v = y;
        }
    }
}

/// Butterworth band-pass (or low-pass when the lower edge is zero) as second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct ButterworthBandpass {
    sections: Vec<Biquad>,
}

impl ButterworthBandpass {
    pub fn design(band: &BandSpec, fs: f64) -> Result<Self> {
        band.validate(fs)?;
        let n = band.order;
        let k = 2.0 * fs;
        let warp = |f: f64| k * (PI * f / fs).tan();
        let proto = (0..n).map(|i| Complex::from_polar(1.0, PI * (2 * i + n + 1) as f64 / (2 * n) as f64));
        let bilinear = |s: Complex<f64>| (k + s) / (k - s);
        let (analog, numerator, w_ref): (Vec<Complex<f64>>, [f64; 3], f64) = if band.lo_hz > 0.0 {
            let (wl, wh) = (warp(band.lo_hz), warp(band.hi_hz));
            let (bw, w0) = (wh - wl, (wl * wh).sqrt());
            let poles = proto
                .flat_map(|p| {
                    let h = p * (bw / 2.0);
                    let r = (h * h - w0 * w0).sqrt();
                    [h + r, h - r]
                })
                .collect();
            (poles, [1.0, 0.0, -1.0], 2.0 * (w0 / k).atan())
        } else {
            (proto.map(|p| p * warp(band.hi_hz)).collect(), [1.0, 2.0, 1.0], 0.0)
        };
        let digital: Vec<Complex<f64>> = analog.into_iter().map(bilinear).collect();
        let mut sections: Vec<Biquad> = digital
            .iter()
            .filter(|p| p.im > 1e-12)
            .map(|&p| Biquad::from_pole(p, numerator, w_ref))
            .collect();
        // an odd low-pass prototype leaves one real pole
        let real: Vec<f64> = digital.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
        for pair in real.chunks(2) {
            let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
            let b = if pair.len() == 2 { numerator } else { [1.0, 1.0, 0.0] };
            let a = [-(p1 + p2), p1 * p2];
            let z = Complex::from_polar(1.0, -w_ref);
            let g = ((1.0 + a[0] * z + a[1] * z * z) / (b[0] + b[1] * z + b[2] * z * z)).norm();
            sections.push(Biquad { b: [b[0] * g, b[1] * g, b[2] * g], a });
        }
        Ok(ButterworthBandpass { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Minimum input length accepted by [`Self::filtfilt`] is one more than this.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Causal pass with steady-state initial conditions scaled by the first sample.
    fn lfilter(&self, x: &mut [f64]) {
        let x0 = x[0];
        let mut gain = 1.0;
        for s in &self.sections {
            let zi = s.steady_state();
            s.run(x, [zi[0] * x0 * gain, zi[1] * x0 * gain]);
            gain *= s.dc_gain();
        }
    }

    /// Zero-phase forward-backward filtering. The input is mirrored across both ends
    /// (whole-signal symmetric reflection) so slow bands settle before the kept samples.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let min = self.pad_len();
        if x.len() <= min {
            return Err(Error::TooShort { what: "band-pass input", got: x.len(), need: min + 1 });
        }
        let n = x.len();
        let pad = n - 1;
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| x[n - 1 - i]));
        self.lfilter(&mut ext);
        ext.reverse();
        self.lfilter(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase Butterworth band-pass of `x` sampled at `fs`; output has the input length.
pub fn bandpass(x: &[f64], band: &BandSpec, fs: f64) -> Result<Vec<f64>> {
    ButterworthBandpass::design(band, fs)?.filtfilt(x)
}
