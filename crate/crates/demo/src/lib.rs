//! Browser bindings: a range-Doppler map of the three-target desk scene,
//! the exact and first-order bistatic Doppler over heading, and a one-trial
//! comparison of the receivers.
//!
//! Everything runs single-threaded; the core is built without its rayon
//! feature for the wasm target.

use isac_core::channel::{doppler_approx, doppler_exact};
use isac_core::harness::{corrupt_symbols, generate_trial, run_methods, Method};
use isac_core::sensing::{quotient_grid, Transforms};
use isac_core::unfolded::NetworkParams;
use isac_core::Scene;
use wasm_bindgen::prelude::*;

const SCENE: &str = include_str!("../../../scenes/desk-three-target.toml");

fn scene() -> Scene {
    Scene::from_toml_str(SCENE).expect("bundled scene parses")
}

fn js_err(e: isac_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Shape of [`range_doppler_map`]: `[velocity bins, range bins, range bin m, velocity bin m/s]`.
#[wasm_bindgen]
pub fn map_shape() -> Vec<f64> {
    let cfg = scene().config;
    vec![cfg.dft_points_doppler as f64, cfg.idft_points_range as f64, cfg.range_bin_m(), cfg.velocity_bin_m_s()]
}

/// Range-Doppler magnitude in dB (row-major, velocity rows) from one
/// antenna pair, with a fraction `corruption` of the reference symbols
/// replaced at random.
#[wasm_bindgen]
pub fn range_doppler_map(snr_db: f64, corruption: f64, seed: u64) -> Result<Vec<f32>, JsError> {
    let s = scene();
    let cfg = s.config.with_snr(snr_db).with_antennas(1, 1);
    let frame = generate_trial(&cfg, &s.targets, seed).map_err(js_err)?;
    let reference = corrupt_symbols(&frame, corruption.clamp(0.0, 1.0), seed).map_err(js_err)?;
    let q = quotient_grid(&frame.rx[0], &reference[0]).map_err(js_err)?;
    let map = Transforms::new(&cfg).range_doppler_map(&q.values);
    let peak = map.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    Ok(map.iter().map(|v| (20.0 * (v.max(1e-12) / peak).log10()) as f32).collect())
}

/// `points` headings over [-π, π) as interleaved `[α, exact Hz, approx Hz]`.
#[wasm_bindgen]
pub fn doppler_curve(speed_m_s: f64, aod_rad: f64, aoa_rad: f64, points: usize) -> Vec<f64> {
    let fc = scene().config.carrier_freq_hz;
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let alpha = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / points as f64;
        out.push(alpha);
        out.push(doppler_exact(speed_m_s, alpha, aod_rad, aoa_rad, fc));
        out.push(doppler_approx(speed_m_s, alpha, aod_rad, aoa_rad, fc));
    }
    out
}

/// One trial of every receiver with untrained parameters, as JSON rows
/// `{method, ber, nmse_range, nmse_velocity, detected}`. Metrics a method
/// does not produce are null.
#[wasm_bindgen]
pub fn trial_summary(snr_db: f64, layers: usize, seed: u64) -> Result<String, JsError> {
    let s = scene();
    let cfg = s.config.with_snr(snr_db);
    let params = NetworkParams::untrained(layers.max(1), snr_db);
    let results = run_methods(&cfg, &s.targets, &params, &Method::ALL, seed).map_err(js_err)?;
    let num = |v: f64, keep: bool| if keep && v.is_finite() { format!("{v:.6e}") } else { "null".into() };
    let rows: Vec<String> = Method::ALL
        .iter()
        .zip(&results)
        .map(|(m, r)| {
            let (c, sense) = (m.reports_communication(), m.reports_sensing());
            format!(
                "{{\"method\":\"{}\",\"ber\":{},\"nmse_range\":{},\"nmse_velocity\":{},\"detected\":{}}}",
                m.name(),
                num(r.ber, c),
                num(r.nmse_range, sense),
                num(r.nmse_velocity, sense),
                if sense { r.detected_count.to_string() } else { "null".into() }
            )
        })
        .collect();
    Ok(format!("[{}]", rows.join(",")))
}
