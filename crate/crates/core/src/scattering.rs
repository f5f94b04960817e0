//! Two-layer Gabor scattering transform of 5-second windows.
//!
//! Filters live in the frequency domain of an `FFT_LEN`-point transform and
//! are analytic (zero on negative frequencies). Each coefficient is the
//! window-average of a modulus signal smoothed by the Gaussian low-pass `phi`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::preprocess::{WindowedChannel, WINDOW_LEN};
use crate::record_io::{ChannelId, FS};

/// Circular convolution length; windows are zero-padded to it.
pub const FFT_LEN: usize = 2048;
/// Translation-invariance scale in seconds.
pub const AVERAGING_SCALE_S: f64 = 5.0;

pub const SCATTER_CHANNELS: [ChannelId; 6] = [
    ChannelId::Eog,
    ChannelId::Abdominal,
    ChannelId::Chest,
    ChannelId::Airflow,
    ChannelId::Sao2,
    ChannelId::Ecg,
];

/// Gaussian standard deviation as a fraction of the centre frequency that
/// makes neighbours `2^(1/q)` apart cross at half maximum.
fn relative_sigma(q: u32) -> f64 {
    let r = 2f64.powf(1.0 / q as f64);
    ((r - 1.0) / (r + 1.0)) / (2.0 * 2f64.ln()).sqrt()
}

fn gaussian(f: f64, center: f64, sigma: f64) -> f64 {
    let z = (f - center) / sigma;
    (-0.5 * z * z).exp()
}

/// Frequency of FFT bin `k` in Hz; bins past the middle are negative.
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    if k <= n / 2 {
        k as f64 * fs / n as f64
    } else {
        (k as f64 - n as f64) * fs / n as f64
    }
}

/// Constant-Q bank of Gaussian band-pass filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub q: u32,
    pub j: usize,
    pub p: usize,
    pub fs: f64,
    pub mother_center: f64,
    /// Centre frequency of each filter in Hz, strictly decreasing.
    pub centers: Vec<f64>,
    /// Gaussian standard deviation of each filter in Hz.
    pub sigmas: Vec<f64>,
    /// Common gain applied to every filter.
    pub gain: f64,
}

impl FilterBank {
    /// `J` log-spaced filters from the mother centre down, then `P`
    /// equally spaced filters below the last one with its bandwidth.
    pub fn build(q: u32, j: usize, p: usize, fs: f64) -> Result<FilterBank> {
        if q == 0 || j == 0 || !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "filter bank needs Q >= 1, J >= 1, fs > 0 (got Q={q}, J={j}, fs={fs})"
            )));
        }
        let mother_center = (1.0 + 2f64.powf(-1.0 / q as f64)) / 2.0 * (fs / 2.0);
        let s = relative_sigma(q);
        let mut centers: Vec<f64> = (0..j)
            .map(|k| mother_center * 2f64.powf(-(k as f64) / q as f64))
            .collect();
        let mut sigmas: Vec<f64> = centers.iter().map(|c| s * c).collect();
        let last = centers[j - 1];
        let last_sigma = sigmas[j - 1];
        for i in 1..=p {
            centers.push(last * (1.0 - i as f64 / (p + 1) as f64));
            sigmas.push(last_sigma);
        }
        let mut bank = FilterBank {
            q,
            j,
            p,
            fs,
            mother_center,
            centers,
            sigmas,
            gain: 1.0,
        };
        let peak = (0..=FFT_LEN / 2)
            .map(|k| bank.power_sum(bin_frequency(k, FFT_LEN, fs)))
            .fold(0.0, f64::max);
        bank.gain = 1.0 / peak.sqrt();
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `|psi_hat_i(f)|`; zero for negative `f`.
    pub fn response(&self, i: usize, f: f64) -> f64 {
        if f < 0.0 {
            0.0
        } else {
            self.gain * gaussian(f, self.centers[i], self.sigmas[i])
        }
    }

    /// `sum_i |psi_hat_i(f)|^2`.
    pub fn power_sum(&self, f: f64) -> f64 {
        (0..self.len()).map(|i| self.response(i, f).powi(2)).sum()
    }

    fn sampled(&self, i: usize) -> Vec<f64> {
        (0..FFT_LEN)
            .map(|k| self.response(i, bin_frequency(k, FFT_LEN, self.fs)))
            .collect()
    }
}

/// Gaussian low-pass whose time-domain standard deviation is a quarter of
/// the averaging scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPass {
    pub sigma_hz: f64,
    pub gain: f64,
}

impl LowPass {
    pub fn for_scale(scale_s: f64) -> LowPass {
        let sigma_t = scale_s / 4.0;
        LowPass {
            sigma_hz: 1.0 / (2.0 * PI * sigma_t),
            gain: 1.0,
        }
    }

    pub fn response(&self, f: f64) -> f64 {
        self.gain * gaussian(f, 0.0, self.sigma_hz)
    }
}

/// Knobs for turning coefficients into the per-channel feature block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScatterConfig {
    /// Keep every `decimate`-th coefficient starting at the first.
    pub decimate: usize,
    /// Block length after decimation (zero-padded or truncated).
    pub target_dim: usize,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig {
            decimate: 4,
            target_dim: 65,
        }
    }
}

impl ScatterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decimate == 0 || self.target_dim == 0 {
            return Err(Error::InvalidParameter(
                "scatter.decimate and scatter.target_dim must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.target_dim * SCATTER_CHANNELS.len()
    }
}

/// Coefficients of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterCoefficients {
    pub s0: f64,
    pub s1: Vec<f64>,
    /// One entry per path of [`ScatteringNet::paths`].
    pub s2: Vec<f64>,
    /// `sum_j sum_t U1_j(t)^2` over the padded length.
    pub u1_energy: f64,
    /// `sum_(j1,j2) sum_t U2(t)^2` over the padded length.
    pub u2_energy: f64,
}

impl ScatterCoefficients {
    /// `[S0, S1.., S2..]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.s1.len() + self.s2.len());
        v.push(self.s0);
        v.extend_from_slice(&self.s1);
        v.extend_from_slice(&self.s2);
        v
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Decimates and pads/truncates the flattened coefficients.
    pub fn to_block(&self, cfg: &ScatterConfig) -> Vec<f64> {
        let mut block: Vec<f64> = self
            .flatten()
            .into_iter()
            .step_by(cfg.decimate.max(1))
            .collect();
        block.resize(cfg.target_dim, 0.0);
        block
    }
}

/// Both banks, the low-pass, the path list and the FFT plans. Build once and
/// share; scattering a window does not mutate it.
#[derive(Clone)]
pub struct ScatteringNet {
    pub bank1: FilterBank,
    pub bank2: FilterBank,
    pub phi: LowPass,
    /// `(j1, j2)` with `center2[j2] < center1[j1]`, ordered by `j1` then `j2`.
    pub paths: Vec<(usize, usize)>,
    psi1: Vec<Vec<f64>>,
    psi2: Vec<Vec<f64>>,
    /// Window-average of `U * phi` equals `<U, avg_kernel>`.
    avg_kernel: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for ScatteringNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScatteringNet")
            .field("bank1", &self.bank1)
            .field("bank2", &self.bank2)
            .field("phi", &self.phi)
            .field("paths", &self.paths.len())
            .finish()
    }
}

impl ScatteringNet {
    /// The default network: (Q=2, J=13, P=1) then (Q=1, J=8, P=0) at 200 Hz.
    pub fn standard() -> ScatteringNet {
        let bank1 = FilterBank::build(2, 13, 1, FS).expect("valid bank");
        let bank2 = FilterBank::build(1, 8, 0, FS).expect("valid bank");
        Self::from_banks(bank1, bank2, AVERAGING_SCALE_S)
    }

    /// Rescales everything by one factor if `phi` plus either bank exceeds a
    /// Littlewood-Paley sum of 1.
    pub fn from_banks(mut bank1: FilterBank, mut bank2: FilterBank, scale_s: f64) -> ScatteringNet {
        let mut phi = LowPass::for_scale(scale_s);
        let fs = bank1.fs;
        let peak = [&bank1, &bank2]
            .iter()
            .flat_map(|b| {
                (0..FFT_LEN).map(move |k| {
                    let f = bin_frequency(k, FFT_LEN, fs);
                    phi.response(f).powi(2) + b.power_sum(f)
                })
            })
            .fold(0.0, f64::max);
        if peak > 1.0 {
            let c = 1.0 / peak.sqrt();
            phi.gain *= c;
            bank1.gain *= c;
            bank2.gain *= c;
        }

        let paths = (0..bank1.len())
            .flat_map(|j1| {
                let c1 = bank1.centers[j1];
                bank2
                    .centers
                    .iter()
                    .enumerate()
                    .filter(move |(_, &c2)| c2 < c1)
                    .map(move |(j2, _)| (j1, j2))
            })
            .collect();

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(FFT_LEN);
        let ifft = planner.plan_fft_inverse(FFT_LEN);

        // Box over the window, circularly convolved with phi (phi is even).
        let mut boxed: Vec<Complex64> = (0..FFT_LEN)
            .map(|t| Complex64::new(if t < WINDOW_LEN { 1.0 } else { 0.0 }, 0.0))
            .collect();
        fft.process(&mut boxed);
        for (k, v) in boxed.iter_mut().enumerate() {
            *v *= phi.response(bin_frequency(k, FFT_LEN, fs)) / FFT_LEN as f64;
        }
        ifft.process(&mut boxed);
        let avg_kernel = boxed.iter().map(|c| c.re / WINDOW_LEN as f64).collect();

        ScatteringNet {
            psi1: (0..bank1.len()).map(|i| bank1.sampled(i)).collect(),
            psi2: (0..bank2.len()).map(|i| bank2.sampled(i)).collect(),
            bank1,
            bank2,
            phi,
            paths,
            avg_kernel,
            fft,
            ifft,
        }
    }

    /// Maximum over the FFT grid of `|phi_hat|^2 + sum |psi_hat|^2` for each bank.
    pub fn littlewood_paley_peak(&self) -> [f64; 2] {
        let fs = self.bank1.fs;
        let peak = |b: &FilterBank| {
            (0..FFT_LEN)
                .map(|k| {
                    let f = bin_frequency(k, FFT_LEN, fs);
                    self.phi.response(f).powi(2) + b.power_sum(f)
                })
                .fold(0.0, f64::max)
        };
        [peak(&self.bank1), peak(&self.bank2)]
    }

    /// Number of flattened coefficients per window.
    pub fn coefficient_count(&self) -> usize {
        1 + self.bank1.len() + self.paths.len()
    }

    fn average(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.avg_kernel).map(|(a, b)| a * b).sum()
    }

    /// Modulus of the band-passed spectrum, written back as a real signal in `buf`.
    fn modulus(&self, spectrum: &[Complex64], filter: &[f64], buf: &mut [Complex64], scratch: &mut [Complex64]) -> Vec<f64> {
        for ((b, s), h) in buf.iter_mut().zip(spectrum).zip(filter) {
            *b = s * (h / FFT_LEN as f64);
        }
        self.ifft.process_with_scratch(buf, scratch);
        buf.iter().map(|c| c.norm()).collect()
    }

    /// Scatters one window of at most `FFT_LEN` samples.
    pub fn scatter_window(&self, window: &[f64]) -> Result<ScatterCoefficients> {
        if window.len() > FFT_LEN {
            return Err(Error::Shape(format!(
                "window of {} samples exceeds transform length {FFT_LEN}",
                window.len()
            )));
        }
        let mut scratch =
            vec![Complex64::default(); self.fft.get_inplace_scratch_len().max(self.ifft.get_inplace_scratch_len())];
        let mut buf = vec![Complex64::default(); FFT_LEN];

        let mut x = vec![0.0; FFT_LEN];
        x[..window.len()].copy_from_slice(window);
        let s0 = self.average(&x);

        let mut spectrum: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process_with_scratch(&mut spectrum, &mut scratch);

        let mut s1 = Vec::with_capacity(self.bank1.len());
        let mut u1_spectra = Vec::with_capacity(self.bank1.len());
        let mut u1_energy = 0.0;
        for psi in &self.psi1 {
            let u1 = self.modulus(&spectrum, psi, &mut buf, &mut scratch);
            s1.push(self.average(&u1));
            u1_energy += u1.iter().map(|v| v * v).sum::<f64>();
            let mut spectrum: Vec<Complex64> = u1.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            u1_spectra.push(spectrum);
        }

        let mut s2 = Vec::with_capacity(self.paths.len());
        let mut u2_energy = 0.0;
        for &(j1, j2) in &self.paths {
            let u2 = self.modulus(&u1_spectra[j1], &self.psi2[j2], &mut buf, &mut scratch);
            s2.push(self.average(&u2));
            u2_energy += u2.iter().map(|v| v * v).sum::<f64>();
        }

        Ok(ScatterCoefficients {
            s0,
            s1,
            s2,
            u1_energy,
            u2_energy,
        })
    }
}

/// The scattering block of window `m`: one `cfg.target_dim` block for each
/// channel of [`SCATTER_CHANNELS`], taken from the 13 windowed channels.
pub fn scattering_features(
    windows: &[WindowedChannel],
    m: usize,
    net: &ScatteringNet,
    cfg: &ScatterConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.feature_dim());
    for c in SCATTER_CHANNELS {
        let channel = windows
            .iter()
            .find(|w| w.source == c)
            .ok_or_else(|| Error::MissingChannel(c.name().into()))?;
        if m >= channel.len() {
            return Err(Error::Shape(format!("window {m} of {}", channel.len())));
        }
        out.extend(net.scatter_window(channel.window(m))?.to_block(cfg));
    }
    Ok(out)
}
