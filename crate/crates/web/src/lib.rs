//! Browser bindings: filter-bank curves, Burg spectra of synthetic signals
//! and scattering coefficients. The plain functions are usable natively;
//! the `#[wasm_bindgen]` wrappers only convert errors.

use somnoscat::preprocess::{preprocess_record, segment, triangular_taper, WINDOW_LEN};
use somnoscat::record_io::{generate_synthetic, ArousalWindow, ChannelId, FS};
use somnoscat::scattering::{FilterBank, ScatteringNet};
use somnoscat::spectral::{ar_psd, burg, DEFAULT_GRID};
use somnoscat::{Error, Result};
use wasm_bindgen::prelude::*;

/// Magnitudes of every filter on `points` frequencies spanning 0 to Nyquist,
/// filter-major.
pub fn bank_curves(q: u32, j: usize, p: usize, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidParameter("need at least 2 points".into()));
    }
    let bank = FilterBank::build(q, j, p, FS)?;
    let step = FS / 2.0 / (points - 1) as f64;
    Ok((0..bank.len())
        .flat_map(|i| {
            let bank = &bank;
            (0..points).map(move |k| bank.response(i, k as f64 * step))
        })
        .collect())
}

pub fn bank_centers(q: u32, j: usize, p: usize) -> Result<Vec<f64>> {
    Ok(FilterBank::build(q, j, p, FS)?.centers)
}

/// First preprocessed, tapered window of `channel` from a 10 s synthetic
/// record, optionally covered by a target arousal.
pub fn synthetic_window(seed: u64, channel: &str, arousal: bool) -> Result<Vec<f64>> {
    let id = ChannelId::from_name(channel)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown channel '{channel}'")))?;
    let windows = if arousal {
        vec![ArousalWindow::target(0.0, 10.0)]
    } else {
        Vec::new()
    };
    let (record, _) = generate_synthetic(seed, 10.0, &windows)?;
    let clean = preprocess_record(&record)?;
    let w = segment(clean.channel(id), id)?;
    Ok(w.window(0).to_vec())
}

/// Burg AR(`order`) spectrum on the default 512-point grid; returns
/// frequencies followed by densities.
pub fn burg_spectrum(signal: &[f64], order: usize) -> Result<Vec<f64>> {
    let psd = ar_psd(&burg(signal, order)?, FS, DEFAULT_GRID);
    Ok(psd.freqs.into_iter().chain(psd.values).collect())
}

/// `[S0, S1.., S2..]` of one window with the standard network.
pub fn scatter(signal: &[f64]) -> Result<Vec<f64>> {
    Ok(ScatteringNet::standard().scatter_window(signal)?.flatten())
}

/// A pure tone through the same taper, for comparison.
pub fn tone_window(freq_hz: f64) -> Vec<f64> {
    triangular_taper(WINDOW_LEN)
        .iter()
        .enumerate()
        .map(|(i, w)| w * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / FS).sin())
        .collect()
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = bankCurves)]
pub fn bank_curves_js(q: u32, j: usize, p: usize, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    bank_curves(q, j, p, points).map_err(js)
}

#[wasm_bindgen(js_name = bankCenters)]
pub fn bank_centers_js(q: u32, j: usize, p: usize) -> std::result::Result<Vec<f64>, JsError> {
    bank_centers(q, j, p).map_err(js)
}

#[wasm_bindgen(js_name = syntheticWindow)]
pub fn synthetic_window_js(seed: u32, channel: &str, arousal: bool) -> std::result::Result<Vec<f64>, JsError> {
    synthetic_window(u64::from(seed), channel, arousal).map_err(js)
}

#[wasm_bindgen(js_name = toneWindow)]
pub fn tone_window_js(freq_hz: f64) -> Vec<f64> {
    tone_window(freq_hz)
}

#[wasm_bindgen(js_name = burgSpectrum)]
pub fn burg_spectrum_js(signal: &[f64], order: usize) -> std::result::Result<Vec<f64>, JsError> {
    burg_spectrum(signal, order).map_err(js)
}

#[wasm_bindgen(js_name = scatter)]
pub fn scatter_js(signal: &[f64]) -> std::result::Result<Vec<f64>, JsError> {
    scatter(signal).map_err(js)
}
