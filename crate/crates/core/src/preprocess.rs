//! Powerline notch filtering, IQR-based artifact clipping and amplitude
//! normalisation, and segmentation into tapered 5-second windows.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::record_io::{AnnotationTrack, ChannelId, PsgRecord, FS};

/// Samples per 5-second window at 200 Hz.
pub const WINDOW_LEN: usize = 1000;

/// Net (forward-backward) -3 dB width of each notch, in Hz.
pub const NOTCH_WIDTH_HZ: f64 = 2.0;

/// Powerline frequencies removed from every channel.
pub const NOTCH_FREQS: [f64; 2] = [60.0, 80.0];

/// Clipping threshold and normalisation scale, in multiples of the IQR.
pub const IQR_MULTIPLE: f64 = 8.0;

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Notch at `f0` whose response, applied twice, is -3 dB at `f0 +- width/2`.
    ///
    /// Each pass has gain `2^-1/4` at the band edges, so the squared magnitude
    /// of the two passes is 1/2 there.
    pub fn notch(f0: f64, width: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let dw = 2.0 * PI * width / fs;
        let edge_gain_sq = std::f64::consts::FRAC_1_SQRT_2;
        let beta = ((1.0 - edge_gain_sq) / edge_gain_sq).sqrt() * (dw / 2.0).tan();
        let g = 1.0 / (1.0 + beta);
        let c = w0.cos();
        Biquad {
            b: [g, -2.0 * g * c, g],
            a: [-2.0 * g * c, 2.0 * g - 1.0],
        }
    }

    /// Complex response magnitude at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        use rustfft::num_complex::Complex64;
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z1 + self.a[1] * z2;
        (num / den).norm()
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Samples for the impulse response to decay by e.
    fn time_constant(&self) -> f64 {
        let r = self.a[1].abs().sqrt();
        if r <= 0.0 {
            1.0
        } else {
            -1.0 / r.ln()
        }
    }

    /// Direct form II transposed, starting from the steady state of a constant `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let g = self.dc_gain();
        let mut z1 = (g - self.b[0]) * first;
        let mut z2 = (self.b[2] - self.a[1] * g) * first;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }

    /// Zero-phase forward-backward filtering.
    ///
    /// Edges are padded by periodic continuation of the first/last `period`
    /// samples when a period is given, otherwise by odd reflection. Both
    /// paddings are linear in the signal.
    pub fn filtfilt(&self, signal: &[f64], period: Option<usize>) -> Vec<f64> {
        let n = signal.len();
        if n < 2 {
            return signal.to_vec();
        }
        let pad = ((8.0 * self.time_constant()).ceil() as usize).clamp(1, n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        match period.filter(|&p| p >= 1 && p <= n) {
            Some(p) => {
                // x[-k] = x[-k + jp] and x[n-1+k] = x[n-1+k - jp], landing in the edge cycle.
                ext.extend((1..=pad).rev().map(|k| signal[(p - k % p) % p]));
                ext.extend_from_slice(signal);
                ext.extend((1..=pad).map(|k| signal[n - p + (k - 1) % p]));
            }
            None => {
                let (head, tail) = (signal[0], signal[n - 1]);
                ext.extend((1..=pad).rev().map(|k| 2.0 * head - signal[k]));
                ext.extend_from_slice(signal);
                ext.extend((1..=pad).map(|k| 2.0 * tail - signal[n - 1 - k]));
            }
        }

        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Smallest sample count holding a whole number of `f0` cycles, if one
/// exists below one second.
pub fn whole_cycle_period(f0: f64, fs: f64) -> Option<usize> {
    (1..=fs as usize).find(|&p| {
        let cycles = p as f64 * f0 / fs;
        (cycles - cycles.round()).abs() < 1e-9
    })
}

/// Removes a narrow band around `f0` with zero net phase.
pub fn notch_filter(signal: &[f64], f0: f64, fs: f64) -> Result<Vec<f64>> {
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "notch frequency {f0} outside (0, {})",
            fs / 2.0
        )));
    }
    if signal.len() < 64 {
        return Err(Error::TooShort {
            needed: 64,
            got: signal.len(),
        });
    }
    Ok(Biquad::notch(f0, NOTCH_WIDTH_HZ, fs).filtfilt(signal, whole_cycle_period(f0, fs)))
}

/// Linear-interpolation quantile of sorted data (the numpy default).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interquartile range of the sample amplitudes.
pub fn iqr(signal: &[f64]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    let mut sorted = signal.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)
}

/// Zeroes samples beyond 8 IQR, then divides by 8 IQR. Output lies in [-1, 1].
/// A flat signal (IQR below 1e-12) maps to zeros.
pub fn clip_and_normalize(signal: &[f64]) -> Vec<f64> {
    let scale = IQR_MULTIPLE * iqr(signal);
    if scale < IQR_MULTIPLE * 1e-12 {
        return vec![0.0; signal.len()];
    }
    signal
        .iter()
        .map(|&x| if x.abs() > scale { 0.0 } else { x / scale })
        .collect()
}

/// Notch at 60 and 80 Hz on every channel; clipping and normalisation on
/// channels 1-11 (SaO2 and ECG are only notched).
pub fn preprocess_record(record: &PsgRecord) -> Result<PsgRecord> {
    record.map_channels(|c, samples| {
        let mut x = samples.to_vec();
        for f0 in NOTCH_FREQS {
            x = notch_filter(&x, f0, FS)?;
        }
        Ok(match c {
            ChannelId::Sao2 | ChannelId::Ecg => x,
            _ => clip_and_normalize(&x),
        })
    })
}

/// Symmetric triangular taper with zero endpoints and unit peak.
pub fn triangular_taper(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let span = (len - 1) as f64;
    (0..len)
        .map(|k| 1.0 - (2.0 * k as f64 / span - 1.0).abs())
        .collect()
}

/// Non-overlapping tapered windows of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedChannel {
    pub source: ChannelId,
    data: Vec<f64>,
    count: usize,
}

impl WindowedChannel {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn window(&self, m: usize) -> &[f64] {
        &self.data[m * WINDOW_LEN..(m + 1) * WINDOW_LEN]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(WINDOW_LEN)
    }
}

/// Splits into `floor(N / 1000)` windows, each multiplied by the taper.
/// Trailing samples are dropped.
pub fn segment(signal: &[f64], source: ChannelId) -> Result<WindowedChannel> {
    if signal.len() < WINDOW_LEN {
        return Err(Error::RecordTooShort {
            needed: WINDOW_LEN,
            got: signal.len(),
        });
    }
    let taper = triangular_taper(WINDOW_LEN);
    let count = signal.len() / WINDOW_LEN;
    let data = signal[..count * WINDOW_LEN]
        .chunks_exact(WINDOW_LEN)
        .flat_map(|w| w.iter().zip(&taper).map(|(x, t)| x * t))
        .collect();
    Ok(WindowedChannel {
        source,
        data,
        count,
    })
}

/// Windows every channel of a record, in channel order.
pub fn segment_record(record: &PsgRecord) -> Result<Vec<WindowedChannel>> {
    ChannelId::ALL
        .iter()
        .map(|&c| segment(record.channel(c), c))
        .collect()
}

/// One label per window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowLabels {
    pub labels: Vec<i8>,
}

/// Majority label of each window; ties go to 1, then -1, then 0.
pub fn window_labels(track: &AnnotationTrack) -> Result<WindowLabels> {
    if track.len() < WINDOW_LEN {
        return Err(Error::RecordTooShort {
            needed: WINDOW_LEN,
            got: track.len(),
        });
    }
    let labels = track
        .labels()
        .chunks_exact(WINDOW_LEN)
        .map(|w| {
            let mut counts = [0usize; 3];
            for &l in w {
                counts[(l + 1) as usize] += 1;
            }
            let best = *counts.iter().max().unwrap();
            // Tie priority: 1, then -1, then 0.
            [1i8, -1, 0]
                .into_iter()
                .find(|&l| counts[(l + 1) as usize] == best)
                .unwrap()
        })
        .collect();
    Ok(WindowLabels { labels })
}
