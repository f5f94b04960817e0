//! Numerical kernels shared by the feature extractors: Burg AR fitting,
//! AR power spectra, band power, moments, correlation tests and the
//! three-channel singular-value summary.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// PSD grid points over `[0, fs/2]`.
pub const DEFAULT_GRID: usize = 512;

/// Threshold below which a standard deviation counts as zero.
pub const STD_EPS: f64 = 1e-12;

/// Autoregressive model `x_n = -sum_k a_k x_{n-k} + v_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    /// `a_1 ..= a_p`.
    pub coeffs: Vec<f64>,
    /// Final forward/backward prediction-error power.
    pub noise_var: f64,
    /// Lattice reflection coefficients, one per stage.
    pub reflection: Vec<f64>,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// `a_k` with 1-based `k`.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k - 1]
    }

    fn degenerate(order: usize) -> Self {
        ArModel {
            coeffs: vec![0.0; order],
            noise_var: 0.0,
            reflection: vec![0.0; order],
        }
    }
}

/// Burg's method: minimises the summed forward and backward lattice
/// prediction error stage by stage.
pub fn burg(signal: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidParameter("AR order must be >= 1".into()));
    }
    if signal.len() <= 2 * order {
        return Err(Error::TooShort {
            needed: 2 * order + 1,
            got: signal.len(),
        });
    }
    let n = signal.len();
    let energy = signal.iter().map(|x| x * x).sum::<f64>();
    if energy == 0.0 {
        return Ok(ArModel::degenerate(order));
    }

    let mut forward = signal.to_vec();
    let mut backward = signal.to_vec();
    // a[0] = 1 is implicit in the recursion.
    let mut a = vec![1.0];
    let mut err_power = energy / n as f64;
    let mut reflection = Vec::with_capacity(order);

    for stage in 0..order {
        // After `stage` stages the valid errors are f[stage+1..] and b[stage..n-1].
        let f = &forward[stage + 1..];
        let b = &backward[stage..n - 1];
        let mut num = 0.0;
        let mut den = 0.0;
        for (fi, bi) in f.iter().zip(b) {
            num += fi * bi;
            den += fi * fi + bi * bi;
        }
        if den <= energy * 1e-20 {
            // Perfectly predicted already; the remaining stages add nothing.
            reflection.resize(order, 0.0);
            a.resize(order + 1, 0.0);
            break;
        }
        let k = (-2.0 * num / den).clamp(-1.0, 1.0);

        for i in (stage + 1..n).rev() {
            let fi = forward[i];
            let bi = backward[i - 1];
            forward[i] = fi + k * bi;
            backward[i] = bi + k * fi;
        }

        let prev = a.clone();
        a.push(0.0);
        for j in 1..=stage + 1 {
            a[j] = prev.get(j).copied().unwrap_or(0.0) + k * prev[stage + 1 - j];
        }
        err_power *= 1.0 - k * k;
        reflection.push(k);
    }

    Ok(ArModel {
        coeffs: a[1..].to_vec(),
        noise_var: err_power.max(0.0),
        reflection,
    })
}

/// One-sided power spectral density on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl PsdEstimate {
    /// A constant density over `[0, f_max]`, mostly useful in tests.
    pub fn flat(level: f64, f_max: f64, grid_size: usize) -> Self {
        let step = f_max / (grid_size - 1) as f64;
        PsdEstimate {
            freqs: (0..grid_size).map(|k| k as f64 * step).collect(),
            values: vec![level; grid_size],
        }
    }

    pub fn f_max(&self) -> f64 {
        *self.freqs.last().unwrap_or(&0.0)
    }

    /// Frequency of the largest density value.
    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
        self.freqs[i]
    }
}

/// Evaluates the AR spectrum `noise_var / (fs |A(f)|^2)`, doubled for the
/// one-sided density except at 0 and fs/2.
pub fn ar_psd(model: &ArModel, fs: f64, grid_size: usize) -> PsdEstimate {
    let grid_size = grid_size.max(2);
    let nyquist = fs / 2.0;
    let step = nyquist / (grid_size - 1) as f64;
    let mut freqs = Vec::with_capacity(grid_size);
    let mut values = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let f = i as f64 * step;
        let w = 2.0 * PI * f / fs;
        let mut denom = Complex64::new(1.0, 0.0);
        for (k, &a) in model.coeffs.iter().enumerate() {
            denom += Complex64::from_polar(a, -w * (k + 1) as f64);
        }
        let mut p = if model.noise_var == 0.0 {
            0.0
        } else {
            model.noise_var / (fs * denom.norm_sqr().max(1e-30))
        };
        if i != 0 && i != grid_size - 1 {
            p *= 2.0;
        }
        freqs.push(f);
        values.push(p);
    }
    PsdEstimate { freqs, values }
}

fn interpolate(psd: &PsdEstimate, i: usize, f: f64) -> f64 {
    let (f0, f1) = (psd.freqs[i], psd.freqs[i + 1]);
    let (p0, p1) = (psd.values[i], psd.values[i + 1]);
    p0 + (p1 - p0) * (f - f0) / (f1 - f0)
}

/// Power in `[f1, f2]`: exact integral of the linearly interpolated density.
pub fn band_power(psd: &PsdEstimate, f1: f64, f2: f64) -> Result<f64> {
    if !(f1 >= 0.0 && f1 < f2 && f2 <= psd.f_max() + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "band ({f1}, {f2}) not inside [0, {}]",
            psd.f_max()
        )));
    }
    let mut total = 0.0;
    for i in 0..psd.freqs.len() - 1 {
        let lo = f1.max(psd.freqs[i]);
        let hi = f2.min(psd.freqs[i + 1]);
        if lo < hi {
            total += 0.5 * (hi - lo) * (interpolate(psd, i, lo) + interpolate(psd, i, hi));
        }
    }
    Ok(total)
}

/// Spectral centroid by trapezoidal integration; 0 when the total power is below 1e-15.
pub fn mean_frequency(psd: &PsdEstimate) -> f64 {
    let mut power = 0.0;
    let mut moment = 0.0;
    for i in 0..psd.freqs.len().saturating_sub(1) {
        let df = psd.freqs[i + 1] - psd.freqs[i];
        power += 0.5 * df * (psd.values[i] + psd.values[i + 1]);
        moment +=
            0.5 * df * (psd.freqs[i] * psd.values[i] + psd.freqs[i + 1] * psd.values[i + 1]);
    }
    if power < 1e-15 {
        0.0
    } else {
        moment / power
    }
}

/// Population moments. Skewness and kurtosis (non-excess) are 0 for flat signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub rms: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(signal: &[f64]) -> Result<Moments> {
    if signal.len() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: signal.len(),
        });
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for &x in signal {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        sq += x * x;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let std = m2.sqrt();
    let (skewness, kurtosis) = if std < STD_EPS {
        (0.0, 0.0)
    } else {
        (m3 / (std * m2), m4 / (m2 * m2))
    };
    Ok(Moments {
        mean,
        std: if std < STD_EPS { 0.0 } else { std },
        rms: (sq / n).sqrt(),
        skewness,
        kurtosis,
    })
}

/// First and second forward differences.
pub fn diffs(signal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: signal.len(),
        });
    }
    let d1: Vec<f64> = signal.windows(2).map(|w| w[1] - w[0]).collect();
    let d2: Vec<f64> = signal
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .collect();
    Ok((d1, d2))
}

/// Pearson correlation and the two-sided p-value of the t test for zero
/// correlation with `n - 2` degrees of freedom. A constant input gives `(0, 1)`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "pearson inputs".into(),
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if (sxx / n).sqrt() < STD_EPS || (syy / n).sqrt() < STD_EPS {
        return Ok((0.0, 1.0));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok((r, correlation_p_value(r, x.len())))
}

/// Two-sided p-value for sample correlation `r` over `n` pairs.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / one_minus).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

/// Singular values of the stacked 3 x N matrix and their summary statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdFeatures {
    /// Descending.
    pub sigma: [f64; 3],
    pub arith_mean: f64,
    pub geom_mean: f64,
    pub std: f64,
    /// `sigma1 / max(sigma3, 1e-12)`, or 0 when `sigma1 == 0`.
    pub ratio: f64,
}

impl SvdFeatures {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.sigma[0],
            self.sigma[1],
            self.sigma[2],
            self.arith_mean,
            self.geom_mean,
            self.std,
            self.ratio,
        ]
    }
}

pub fn svd_features(rows: [&[f64]; 3]) -> Result<SvdFeatures> {
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("svd rows differ in length".into()));
    }
    if n < 3 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    // N x 3 has the same singular values and a cheaper decomposition.
    let m = DMatrix::from_fn(n, 3, |i, j| rows[j][i]);
    let mut sigma: Vec<f64> = m.singular_values().iter().map(|s| s.max(0.0)).collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let sigma = [sigma[0], sigma[1], sigma[2]];

    let arith_mean = sigma.iter().sum::<f64>() / 3.0;
    let geom_mean = (sigma[0] * sigma[1] * sigma[2]).cbrt();
    let std = (sigma.iter().map(|s| (s - arith_mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let ratio = if sigma[0] == 0.0 {
        0.0
    } else {
        sigma[0] / sigma[2].max(1e-12)
    };
    Ok(SvdFeatures {
        sigma,
        arith_mean,
        geom_mean,
        std,
        ratio,
    })
}
