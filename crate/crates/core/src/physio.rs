//! The 75 physiology-informed features of one 5-second window.
//!
//! Layout (index ranges are stable; see [`PHYSIO_FEATURE_NAMES`]):
//!
//! | range   | group                      | count |
//! |---------|----------------------------|-------|
//! | 0..13   | abdominal/chest/airflow    | 13    |
//! | 13..19  | abdominal                  | 6     |
//! | 19..24  | chest                      | 5     |
//! | 24..36  | airflow                    | 12    |
//! | 36..41  | SaO2                       | 5     |
//! | 41..48  | F3-M2                      | 7     |
//! | 48..55  | F4-M1                      | 7     |
//! | 55..62  | EOG                        | 7     |
//! | 62..70  | C3-M2, C4-M1, O1-M2, O2-M1 | 2 x 4 |
//! | 70..73  | chin EMG                   | 3     |
//! | 73..75  | ECG                        | 2     |

use crate::error::{Error, Result};
use crate::preprocess::WindowedChannel;
use crate::record_io::{ChannelId, FS, NUM_CHANNELS};
use crate::spectral::{
    ar_psd, band_power, burg, diffs, mean_frequency, moments, pearson, svd_features, ArModel,
    PsdEstimate, DEFAULT_GRID,
};

pub const PHYSIO_DIM: usize = 75;

/// Order of the AR model whose coefficients are used directly as features.
pub const AR_FEATURE_ORDER: usize = 10;
/// Order of the AR model behind every band-power estimate.
pub const AR_PSD_ORDER: usize = 30;

/// Denominators below this make a ratio feature 0.
pub const RATIO_EPS: f64 = 1e-15;

pub const PHYSIO_FEATURE_NAMES: [&str; PHYSIO_DIM] = [
    // cross-channel
    "xc_r_abd_chest",
    "xc_p_abd_chest",
    "xc_r_abd_airflow",
    "xc_p_abd_airflow",
    "xc_r_chest_airflow",
    "xc_p_chest_airflow",
    "xc_sigma1",
    "xc_sigma2",
    "xc_sigma3",
    "xc_sigma_mean",
    "xc_sigma_geomean",
    "xc_sigma_std",
    "xc_sigma1_over_sigma3",
    // abdominal
    "abd_std",
    "abd_rms",
    "abd_ar9",
    "abd_p_0.01_0.4",
    "abd_p_0.4_0.75",
    "abd_p_0.75_1.2_over_1.2_1.6",
    // chest
    "chest_rms",
    "chest_std",
    "chest_skew",
    "chest_p_0.01_0.4",
    "chest_p_0.75_1.2_over_1.2_1.6",
    // airflow
    "air_rms",
    "air_skew",
    "air_p_0.01_0.4",
    "air_p_0.4_0.75",
    "air_p_0.75_1.2",
    "air_p_1.2_1.6",
    "air_p_1.6_3",
    "air_p_0.4_0.75_x_1.2_1.6",
    "air_p_0.75_1.2_x_1.2_1.6",
    "air_p_0.75_1.2_over_1.2_1.6",
    "air_p_0.01_0.4_over_0.75_1.2_plus_1.6_3",
    "air_std_d2_x_std_d1_over_std",
    // SaO2
    "sao2_mean",
    "sao2_std",
    "sao2_rms",
    "sao2_mean_freq",
    "sao2_std_d1",
    // F3-M2
    "f3_rms",
    "f3_std",
    "f3_skew",
    "f3_kurt",
    "f3_ar3",
    "f3_ar5",
    "f3_p_0.1_4",
    // F4-M1
    "f4_rms",
    "f4_std",
    "f4_skew",
    "f4_kurt",
    "f4_ar3",
    "f4_ar5",
    "f4_p_0.1_4",
    // EOG
    "eog_rms",
    "eog_std",
    "eog_skew",
    "eog_kurt",
    "eog_ar3",
    "eog_ar5",
    "eog_p_0.1_4",
    // central and occipital EEG
    "c3_rms",
    "c3_ar3",
    "c4_rms",
    "c4_ar3",
    "o1_rms",
    "o1_ar3",
    "o2_rms",
    "o2_ar3",
    // chin EMG
    "chin_rms",
    "chin_kurt",
    "chin_p_0.1_15_over_30_45_plus_70_100",
    // ECG
    "ecg_p_7.5_12_over_12_16",
    "ecg_p_12_16_over_7.5_12_plus_16_25",
];

/// Group sizes in layout order.
pub const GROUP_SIZES: [(&str, usize); 14] = [
    ("cross_channel", 13),
    ("abdominal", 6),
    ("chest", 5),
    ("airflow", 12),
    ("sao2", 5),
    ("f3", 7),
    ("f4", 7),
    ("eog", 7),
    ("c3", 2),
    ("c4", 2),
    ("o1", 2),
    ("o2", 2),
    ("chin_emg", 3),
    ("ecg", 2),
];

/// Indices of the six p-value features.
pub const P_VALUE_INDICES: [usize; 3] = [1, 3, 5];

fn ratio(num: f64, den: f64) -> f64 {
    if den.abs() < RATIO_EPS {
        0.0
    } else {
        num / den
    }
}

fn spectrum(window: &[f64]) -> Result<PsdEstimate> {
    Ok(ar_psd(&burg(window, AR_PSD_ORDER)?, FS, DEFAULT_GRID))
}

fn ar_features(window: &[f64]) -> Result<ArModel> {
    burg(window, AR_FEATURE_ORDER)
}

/// Correlations and p-values for the three respiratory pairs, then the
/// singular-value summary of the stacked windows.
pub fn cross_channel(abd: &[f64], chest: &[f64], airflow: &[f64]) -> Result<[f64; 13]> {
    let mut out = [0.0; 13];
    for (i, (x, y)) in [(abd, chest), (abd, airflow), (chest, airflow)]
        .into_iter()
        .enumerate()
    {
        let (r, p) = pearson(x, y)?;
        out[2 * i] = r;
        out[2 * i + 1] = p;
    }
    out[6..].copy_from_slice(&svd_features([abd, chest, airflow])?.to_array());
    Ok(out)
}

pub fn abdominal_features(window: &[f64]) -> Result<[f64; 6]> {
    let m = moments(window)?;
    let ar = ar_features(window)?;
    let psd = spectrum(window)?;
    Ok([
        m.std,
        m.rms,
        ar.coeff(9),
        band_power(&psd, 0.01, 0.4)?,
        band_power(&psd, 0.4, 0.75)?,
        ratio(band_power(&psd, 0.75, 1.2)?, band_power(&psd, 1.2, 1.6)?),
    ])
}

pub fn chest_features(window: &[f64]) -> Result<[f64; 5]> {
    let m = moments(window)?;
    let psd = spectrum(window)?;
    Ok([
        m.rms,
        m.std,
        m.skewness,
        band_power(&psd, 0.01, 0.4)?,
        ratio(band_power(&psd, 0.75, 1.2)?, band_power(&psd, 1.2, 1.6)?),
    ])
}

pub fn airflow_features(window: &[f64]) -> Result<[f64; 12]> {
    let m = moments(window)?;
    let psd = spectrum(window)?;
    let p1 = band_power(&psd, 0.01, 0.4)?;
    let p2 = band_power(&psd, 0.4, 0.75)?;
    let p3 = band_power(&psd, 0.75, 1.2)?;
    let p4 = band_power(&psd, 1.2, 1.6)?;
    let p5 = band_power(&psd, 1.6, 3.0)?;
    let (d1, d2) = diffs(window)?;
    let std_d1 = moments(&d1)?.std;
    let std_d2 = moments(&d2)?.std;
    Ok([
        m.rms,
        m.skewness,
        p1,
        p2,
        p3,
        p4,
        p5,
        p2 * p4,
        p3 * p4,
        ratio(p3, p4),
        ratio(p1, p3 + p5),
        ratio(std_d2 * std_d1, m.std),
    ])
}

pub fn sao2_features(window: &[f64]) -> Result<[f64; 5]> {
    let m = moments(window)?;
    let psd = spectrum(window)?;
    let (d1, _) = diffs(window)?;
    Ok([
        m.mean,
        m.std,
        m.rms,
        mean_frequency(&psd),
        moments(&d1)?.std,
    ])
}

/// Frontal EEG and EOG.
pub fn eeg_frontal_eog_features(window: &[f64]) -> Result<[f64; 7]> {
    let m = moments(window)?;
    let ar = ar_features(window)?;
    let psd = spectrum(window)?;
    Ok([
        m.rms,
        m.std,
        m.skewness,
        m.kurtosis,
        ar.coeff(3),
        ar.coeff(5),
        band_power(&psd, 0.1, 4.0)?,
    ])
}

/// Central and occipital EEG.
pub fn eeg_co_features(window: &[f64]) -> Result<[f64; 2]> {
    Ok([moments(window)?.rms, ar_features(window)?.coeff(3)])
}

pub fn chin_emg_features(window: &[f64]) -> Result<[f64; 3]> {
    let m = moments(window)?;
    let psd = spectrum(window)?;
    let low = band_power(&psd, 0.1, 15.0)?;
    let high = band_power(&psd, 30.0, 45.0)? + band_power(&psd, 70.0, 100.0)?;
    Ok([m.rms, m.kurtosis, ratio(low, high)])
}

pub fn ecg_features(window: &[f64]) -> Result<[f64; 2]> {
    let psd = spectrum(window)?;
    let a = band_power(&psd, 7.5, 12.0)?;
    let b = band_power(&psd, 12.0, 16.0)?;
    let c = band_power(&psd, 16.0, 25.0)?;
    Ok([ratio(a, b), ratio(b, a + c)])
}

/// The 75 physiology features of window `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysioFeatureVector {
    pub values: Vec<f64>,
}

/// Computes the features of window `m` from the 13 windowed channels
/// (in channel order).
pub fn extract_physio(windows: &[WindowedChannel], m: usize) -> Result<PhysioFeatureVector> {
    if windows.len() != NUM_CHANNELS {
        return Err(Error::ChannelCount(windows.len()));
    }
    let count = windows[0].len();
    if windows.iter().any(|w| w.len() != count) {
        return Err(Error::Shape("channels have different window counts".into()));
    }
    if m >= count {
        return Err(Error::Shape(format!("window {m} of {count}")));
    }
    let w = |c: ChannelId| windows[c.position()].window(m);

    let mut values = Vec::with_capacity(PHYSIO_DIM);
    values.extend(cross_channel(
        w(ChannelId::Abdominal),
        w(ChannelId::Chest),
        w(ChannelId::Airflow),
    )?);
    values.extend(abdominal_features(w(ChannelId::Abdominal))?);
    values.extend(chest_features(w(ChannelId::Chest))?);
    values.extend(airflow_features(w(ChannelId::Airflow))?);
    values.extend(sao2_features(w(ChannelId::Sao2))?);
    for c in [ChannelId::F3M2, ChannelId::F4M1, ChannelId::Eog] {
        values.extend(eeg_frontal_eog_features(w(c))?);
    }
    for c in [
        ChannelId::C3M2,
        ChannelId::C4M1,
        ChannelId::O1M2,
        ChannelId::O2M1,
    ] {
        values.extend(eeg_co_features(w(c))?);
    }
    values.extend(chin_emg_features(w(ChannelId::ChinEmg))?);
    values.extend(ecg_features(w(ChannelId::Ecg))?);
    debug_assert_eq!(values.len(), PHYSIO_DIM);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "feature {} is not finite",
            PHYSIO_FEATURE_NAMES[i]
        )));
    }
    Ok(PhysioFeatureVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::segment;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn tone(freq: f64, phase: f64) -> Vec<f64> {
        (0..1000)
            .map(|i| (2.0 * PI * freq * i as f64 / FS + phase).sin())
            .collect()
    }

    fn noisy(freq: f64) -> Vec<f64> {
        tone(freq, 0.3)
            .iter()
            .zip(noise(9))
            .map(|(t, n)| t + 0.01 * n)
            .collect()
    }

    fn noise(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..1000).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn layout_sizes_add_up() {
        assert_eq!(GROUP_SIZES.iter().map(|g| g.1).sum::<usize>(), PHYSIO_DIM);
        let mut names = PHYSIO_FEATURE_NAMES.to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), PHYSIO_DIM);
        for i in P_VALUE_INDICES {
            assert!(PHYSIO_FEATURE_NAMES[i].starts_with("xc_p_"));
        }
    }

    #[test]
    fn cross_channel_identical_windows() {
        let x = noise(1);
        let f = cross_channel(&x, &x, &x).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(f[2 * i], 1.0, epsilon = 1e-12);
            assert!(f[2 * i + 1] < 1e-12);
        }
        assert!(f[7] < 1e-9 * f[6] && f[8] < 1e-9 * f[6]);
    }

    #[test]
    fn cross_channel_orthogonal_windows() {
        // Whole numbers of cycles over 1000 samples: mutually orthogonal, equal power.
        let a = tone(1.0, 0.0);
        let b = tone(2.0, 0.0);
        let c = tone(3.0, 0.0);
        let f = cross_channel(&a, &b, &c).unwrap();
        for i in 0..3 {
            assert!(f[2 * i].abs() < 1e-9);
        }
        assert_abs_diff_eq!(f[6], f[8], epsilon = 1e-9);
        assert_abs_diff_eq!(f[6], (500f64).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn zero_windows_give_zero_features() {
        let z = vec![0.0; 1000];
        assert_eq!(abdominal_features(&z).unwrap(), [0.0; 6]);
        assert_eq!(chest_features(&z).unwrap(), [0.0; 5]);
        assert_eq!(airflow_features(&z).unwrap(), [0.0; 12]);
        assert_eq!(sao2_features(&z).unwrap(), [0.0; 5]);
        assert_eq!(eeg_frontal_eog_features(&z).unwrap(), [0.0; 7]);
        assert_eq!(eeg_co_features(&z).unwrap(), [0.0; 2]);
        assert_eq!(chin_emg_features(&z).unwrap(), [0.0; 3]);
        assert_eq!(ecg_features(&z).unwrap(), [0.0; 2]);
    }

    #[test]
    fn abdominal_slow_breathing() {
        let x = noisy(0.25);
        let f = abdominal_features(&x).unwrap();
        assert!(f[3] > 10.0 * f[4], "{} vs {}", f[3], f[4]);
        // The ninth coefficient of the order-10 fit.
        let ar = burg(&x, 10).unwrap();
        assert_eq!(f[2], ar.coeffs[8]);
    }

    #[test]
    fn airflow_one_hz_dominates_bands() {
        let f = airflow_features(&noisy(1.0)).unwrap();
        let bands = &f[2..7];
        for (i, p) in bands.iter().enumerate() {
            if i != 2 {
                assert!(bands[2] > 10.0 * p, "band {i}: {p} vs {}", bands[2]);
            }
        }
    }

    #[test]
    fn airflow_constant_derivative_feature() {
        let f = airflow_features(&[0.4; 1000]).unwrap();
        assert_eq!(f[11], 0.0);
    }

    #[test]
    fn sao2_constant() {
        let f = sao2_features(&[0.97; 1000]).unwrap();
        assert_abs_diff_eq!(f[0], 0.97, epsilon = 1e-12);
        assert_eq!(f[1], 0.0);
        assert_abs_diff_eq!(f[2], 0.97, epsilon = 1e-12);
        assert!(f[3] < 1.0, "mean frequency {}", f[3]);
        assert_eq!(f[4], 0.0);
    }

    #[test]
    fn frontal_two_hz_is_delta() {
        let x = noisy(2.0);
        let f = eeg_frontal_eog_features(&x).unwrap();
        let psd = spectrum(&x).unwrap();
        let total = band_power(&psd, 0.0, 100.0).unwrap();
        assert!(f[6] > 0.9 * total);
    }

    #[test]
    fn central_ar2_has_small_a3() {
        let v = noise(3);
        let mut x = vec![0.0; 1000];
        for i in 2..1000 {
            x[i] = 1.5 * x[i - 1] - 0.7 * x[i - 2] + v[i];
        }
        let f = eeg_co_features(&x).unwrap();
        assert!(f[1].abs() < 0.05, "a3 = {}", f[1]);
    }

    #[test]
    fn chin_and_ecg_ratios() {
        let chin = chin_emg_features(&noisy(10.0)).unwrap();
        assert!(chin[2] > 10.0, "{}", chin[2]);
        let ecg = ecg_features(&noisy(14.0)).unwrap();
        assert!(ecg[1] > 10.0, "{}", ecg[1]);
    }

    fn windowed(channels: Vec<Vec<f64>>) -> Vec<WindowedChannel> {
        ChannelId::ALL
            .iter()
            .zip(channels)
            .map(|(&c, x)| segment(&x, c).unwrap())
            .collect()
    }

    #[test]
    fn zero_record_gives_zero_vector_with_unit_p_values() {
        let w = windowed(vec![vec![0.0; 2000]; NUM_CHANNELS]);
        let f = extract_physio(&w, 1).unwrap();
        assert_eq!(f.values.len(), PHYSIO_DIM);
        for (i, v) in f.values.iter().enumerate() {
            let want = if P_VALUE_INDICES.contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(*v, want, "{}", PHYSIO_FEATURE_NAMES[i]);
        }
    }

    #[test]
    fn extract_rejects_inconsistent_windows() {
        let mut channels = vec![vec![0.0; 2000]; NUM_CHANNELS];
        channels[4] = vec![0.0; 3000];
        let w = windowed(channels);
        assert!(matches!(extract_physio(&w, 0), Err(Error::Shape(_))));
        assert!(extract_physio(&w[..5], 0).is_err());
    }

    #[test]
    fn extraction_is_deterministic() {
        let channels: Vec<Vec<f64>> = (0..NUM_CHANNELS as u64)
            .map(|s| noise(s).into_iter().chain(noise(s + 50)).collect())
            .collect();
        let w = windowed(channels);
        let a = extract_physio(&w, 1).unwrap();
        let b = extract_physio(&w, 1).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn cross_channel_scale_covariance(seed in 0u64..1000, c in 0.01f64..100.0) {
            let (a, b, d) = (noise(seed), noise(seed + 1), noise(seed + 2));
            let scale = |x: &[f64]| x.iter().map(|v| v * c).collect::<Vec<_>>();
            let f = cross_channel(&a, &b, &d).unwrap();
            let g = cross_channel(&scale(&a), &scale(&b), &scale(&d)).unwrap();
            for i in 0..6 {
                prop_assert!((f[i] - g[i]).abs() < 1e-9);
            }
            for i in 6..9 {
                prop_assert!((g[i] - c * f[i]).abs() < 1e-9 * c * f[i].max(1.0));
            }
        }

        #[test]
        fn ratio_features_always_finite(
            seed in 0u64..1000,
            kind in 0usize..4,
            level in -2.0f64..2.0,
        ) {
            let x = match kind {
                0 => vec![0.0; 1000],
                1 => vec![level; 1000],
                2 => noise(seed),
                _ => noise(seed).iter().map(|v| v * 1e-9).collect(),
            };
            let all: Vec<f64> = abdominal_features(&x).unwrap().into_iter()
                .chain(chest_features(&x).unwrap())
                .chain(airflow_features(&x).unwrap())
                .chain(sao2_features(&x).unwrap())
                .chain(eeg_frontal_eog_features(&x).unwrap())
                .chain(eeg_co_features(&x).unwrap())
                .chain(chin_emg_features(&x).unwrap())
                .chain(ecg_features(&x).unwrap())
                .chain(cross_channel(&x, &x, &x).unwrap())
                .collect();
            prop_assert!(all.iter().all(|v| v.is_finite()));
        }
    }
}
