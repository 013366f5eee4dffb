//! System configuration and scene files.
//!
//! A scene file is TOML: flat top-level keys named after the [`SystemConfig`]
//! fields, followed by zero or more `[[target]]` tables named after the
//! [`Target`] fields. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::channel::Target;
use crate::error::{Error, Result};

/// Speed of light used throughout, in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// OFDM symbols per slot; pilot rows are placed at the start of each slot.
pub const SLOT_SYMBOLS: usize = 14;

const DEFAULT_PILOT_SEED: u64 = 0x5eed_0f_9170;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// M
    pub num_symbols: usize,
    /// N
    pub num_subcarriers: usize,
    /// M_I
    pub dft_points_doppler: usize,
    /// N_I
    pub idft_points_range: usize,
    pub symbol_period_s: f64,
    pub elementary_period_s: f64,
    pub guard_period_s: f64,
    pub num_tx_antennas: usize,
    pub num_rx_antennas: usize,
    pub pilot_ratio: f64,
    pub qam_order: u32,
    pub snr_db: f64,
    pub speed_of_light_m_s: f64,
    pub wavelength_m: f64,
    pub element_spacing_m: f64,
    /// Seed of the pseudo-random QPSK pilot sequence.
    pub pilot_seed: u64,
}

impl SystemConfig {
    /// Reduced grid used for tests and sweeps: 64 subcarriers, 28 symbols
    /// (two pilot rows), 2x2 antennas, 10x zero padding.
    pub fn desk() -> Self {
        Self::with_grid(28, 64, 2, 2)
    }

    /// Full-size numerology: 1024 subcarriers, 256 symbols, 8x8 antennas.
    pub fn full_scale() -> Self {
        Self::with_grid(256, 1024, 8, 8)
    }

    /// Base numerology (4 GHz carrier, 120 kHz spacing, 10.38 us symbols,
    /// 16-QAM, one pilot symbol per slot) on an arbitrary grid. Transform
    /// sizes are ten times the grid dimensions.
    pub fn with_grid(symbols: usize, subcarriers: usize, n_tx: usize, n_rx: usize) -> Self {
        let c = SPEED_OF_LIGHT;
        let fc = 4.0e9;
        let wavelength = c / fc;
        Self {
            carrier_freq_hz: fc,
            subcarrier_spacing_hz: 120.0e3,
            num_symbols: symbols,
            num_subcarriers: subcarriers,
            dft_points_doppler: 10 * symbols,
            idft_points_range: 10 * subcarriers,
            symbol_period_s: 10.38e-6,
            elementary_period_s: 8.3e-6,
            guard_period_s: 2.08e-6,
            num_tx_antennas: n_tx,
            num_rx_antennas: n_rx,
            pilot_ratio: 1.0 / 14.0,
            qam_order: 16,
            snr_db: 10.0,
            speed_of_light_m_s: c,
            wavelength_m: wavelength,
            element_spacing_m: wavelength / 2.0,
            pilot_seed: DEFAULT_PILOT_SEED,
        }
    }

    pub fn with_snr(&self, snr_db: f64) -> Self {
        Self { snr_db, ..self.clone() }
    }

    pub fn with_antennas(&self, n_tx: usize, n_rx: usize) -> Self {
        Self { num_tx_antennas: n_tx, num_rx_antennas: n_rx, ..self.clone() }
    }

    /// Width of one range bin, c / (N_I Δf).
    pub fn range_bin_m(&self) -> f64 {
        self.speed_of_light_m_s / (self.idft_points_range as f64 * self.subcarrier_spacing_hz)
    }

    /// Width of one velocity bin, c / (T M_I f_c).
    pub fn velocity_bin_m_s(&self) -> f64 {
        self.speed_of_light_m_s
            / (self.symbol_period_s * self.dft_points_doppler as f64 * self.carrier_freq_hz)
    }

    /// Pilot symbols at the start of each 14-symbol slot.
    pub fn pilots_per_slot(&self) -> usize {
        (self.pilot_ratio * SLOT_SYMBOLS as f64).round() as usize
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.qam_order.trailing_zeros() as usize
    }

    /// Element spacing in wavelengths.
    pub fn spacing_wavelengths(&self) -> f64 {
        self.element_spacing_m / self.wavelength_m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("symbol_period_s", self.symbol_period_s),
            ("elementary_period_s", self.elementary_period_s),
            ("speed_of_light_m_s", self.speed_of_light_m_s),
            ("wavelength_m", self.wavelength_m),
            ("element_spacing_m", self.element_spacing_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.guard_period_s.is_finite() && self.guard_period_s >= 0.0) {
            return bad(format!("guard_period_s must be nonnegative, got {}", self.guard_period_s));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        for (name, v) in [
            ("num_symbols", self.num_symbols),
            ("num_subcarriers", self.num_subcarriers),
            ("num_tx_antennas", self.num_tx_antennas),
            ("num_rx_antennas", self.num_rx_antennas),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.dft_points_doppler < self.num_symbols {
            return bad(format!(
                "dft_points_doppler ({}) must be >= num_symbols ({})",
                self.dft_points_doppler, self.num_symbols
            ));
        }
        if self.idft_points_range < self.num_subcarriers {
            return bad(format!(
                "idft_points_range ({}) must be >= num_subcarriers ({})",
                self.idft_points_range, self.num_subcarriers
            ));
        }
        let t_sum = self.elementary_period_s + self.guard_period_s;
        if (self.symbol_period_s - t_sum).abs() > 1e-9 * self.symbol_period_s {
            return bad(format!(
                "symbol_period_s ({}) must equal elementary_period_s + guard_period_s ({t_sum})",
                self.symbol_period_s
            ));
        }
        if !matches!(self.qam_order, 4 | 16 | 64) {
            return Err(Error::UnsupportedOrder(self.qam_order));
        }
        let count = self.pilot_ratio * SLOT_SYMBOLS as f64;
        if !(count.is_finite() && (count - count.round()).abs() < 1e-6 && count.round() >= 1.0)
            || count.round() as usize >= SLOT_SYMBOLS
        {
            return bad(format!(
                "pilot_ratio * 14 must be an integer in [1, 13], got {count}"
            ));
        }
        let lambda = self.speed_of_light_m_s / self.carrier_freq_hz;
        if (self.wavelength_m - lambda).abs() > 1e-12 * lambda {
            return bad(format!("wavelength_m ({}) must equal c / f_c ({lambda})", self.wavelength_m));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(Scene::from_toml_str(text)?.config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Scene::from_file(path)?.config)
    }
}

/// A system configuration together with the targets it illuminates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SystemConfig,
    pub targets: Vec<Target>,
}

impl Scene {
    pub fn new(config: SystemConfig, targets: Vec<Target>) -> Self {
        Self { config, targets }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScene = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.into_scene()
    }

    /// Serializes back to the scene file format.
    pub fn to_toml_string(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("carrier_freq_hz", fmt_float(c.carrier_freq_hz));
        kv("subcarrier_spacing_hz", fmt_float(c.subcarrier_spacing_hz));
        kv("num_symbols", c.num_symbols.to_string());
        kv("num_subcarriers", c.num_subcarriers.to_string());
        kv("dft_points_doppler", c.dft_points_doppler.to_string());
        kv("idft_points_range", c.idft_points_range.to_string());
        kv("symbol_period_s", fmt_float(c.symbol_period_s));
        kv("elementary_period_s", fmt_float(c.elementary_period_s));
        kv("guard_period_s", fmt_float(c.guard_period_s));
        kv("num_tx_antennas", c.num_tx_antennas.to_string());
        kv("num_rx_antennas", c.num_rx_antennas.to_string());
        kv("pilot_ratio", fmt_float(c.pilot_ratio));
        kv("qam_order", c.qam_order.to_string());
        kv("snr_db", fmt_float(c.snr_db));
        kv("speed_of_light_m_s", fmt_float(c.speed_of_light_m_s));
        kv("wavelength_m", fmt_float(c.wavelength_m));
        kv("element_spacing_m", fmt_float(c.element_spacing_m));
        kv("pilot_seed", c.pilot_seed.to_string());
        for t in &self.targets {
            s.push_str("\n[[target]]\n");
            let mut kv = |k: &str, v: f64| {
                s.push_str(&format!("{k} = {}\n", fmt_float(v)));
            };
            kv("range_tx_leg_m", t.range_tx_leg_m);
            kv("range_rx_leg_m", t.range_rx_leg_m);
            kv("absolute_speed_m_s", t.absolute_speed_m_s);
            kv("heading_rad", t.heading_rad);
            kv("aod_rad", t.aod_rad);
            kv("aoa_rad", t.aoa_rad);
            kv("rcs_m2", t.rcs_m2);
        }
        s
    }
}

/// Float formatting that TOML reads back as a float with the same value.
fn fmt_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    carrier_freq_hz: f64,
    subcarrier_spacing_hz: f64,
    num_symbols: usize,
    num_subcarriers: usize,
    dft_points_doppler: usize,
    idft_points_range: usize,
    symbol_period_s: f64,
    elementary_period_s: f64,
    guard_period_s: f64,
    num_tx_antennas: usize,
    num_rx_antennas: usize,
    pilot_ratio: f64,
    qam_order: u32,
    #[serde(default)]
    snr_db: Option<f64>,
    #[serde(default)]
    speed_of_light_m_s: Option<f64>,
    #[serde(default)]
    wavelength_m: Option<f64>,
    #[serde(default)]
    element_spacing_m: Option<f64>,
    #[serde(default)]
    pilot_seed: Option<u64>,
    #[serde(default)]
    target: Vec<RawTarget>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    range_tx_leg_m: f64,
    range_rx_leg_m: f64,
    #[serde(default)]
    bistatic_range_m: Option<f64>,
    #[serde(default)]
    absolute_speed_m_s: Option<f64>,
    heading_rad: f64,
    aod_rad: f64,
    aoa_rad: f64,
    rcs_m2: f64,
    #[serde(default)]
    radial_speed_m_s: Option<f64>,
}

impl RawScene {
    fn into_scene(self) -> Result<Scene> {
        let c = self.speed_of_light_m_s.unwrap_or(SPEED_OF_LIGHT);
        let wavelength = self.wavelength_m.unwrap_or(c / self.carrier_freq_hz);
        let config = SystemConfig {
            carrier_freq_hz: self.carrier_freq_hz,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            num_symbols: self.num_symbols,
            num_subcarriers: self.num_subcarriers,
            dft_points_doppler: self.dft_points_doppler,
            idft_points_range: self.idft_points_range,
            symbol_period_s: self.symbol_period_s,
            elementary_period_s: self.elementary_period_s,
            guard_period_s: self.guard_period_s,
            num_tx_antennas: self.num_tx_antennas,
            num_rx_antennas: self.num_rx_antennas,
            pilot_ratio: self.pilot_ratio,
            qam_order: self.qam_order,
            snr_db: self.snr_db.unwrap_or(10.0),
            speed_of_light_m_s: c,
            wavelength_m: wavelength,
            element_spacing_m: self.element_spacing_m.unwrap_or(wavelength / 2.0),
            pilot_seed: self.pilot_seed.unwrap_or(DEFAULT_PILOT_SEED),
        };
        config.validate()?;
        let targets = self
            .target
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.into_target().map_err(|e| Error::Config(format!("target {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene { config, targets })
    }
}

impl RawTarget {
    fn into_target(self) -> Result<Target> {
        let target = match (self.absolute_speed_m_s, self.radial_speed_m_s) {
            (Some(v_abs), radial) => {
                let t = Target::new(
                    self.range_tx_leg_m,
                    self.range_rx_leg_m,
                    v_abs,
                    self.heading_rad,
                    self.aod_rad,
                    self.aoa_rad,
                    self.rcs_m2,
                )?;
                if let Some(v) = radial {
                    let tol = 1e-9 * v.abs().max(t.radial_speed_m_s.abs()).max(1e-12);
                    if (v - t.radial_speed_m_s).abs() > tol {
                        return Err(Error::Config(format!(
                            "radial_speed_m_s {v} inconsistent with kinematics ({})",
                            t.radial_speed_m_s
                        )));
                    }
                }
                t
            }
            (None, Some(v)) => Target::from_radial_speed(
                self.range_tx_leg_m,
                self.range_rx_leg_m,
                v,
                self.heading_rad,
                self.aod_rad,
                self.aoa_rad,
                self.rcs_m2,
            )?,
            (None, None) => {
                return Err(Error::Config(
                    "one of absolute_speed_m_s or radial_speed_m_s is required".into(),
                ))
            }
        };
        if let Some(r) = self.bistatic_range_m {
            if r != target.bistatic_range_m {
                return Err(Error::Config(format!(
                    "bistatic_range_m {r} differs from the sum of the legs ({})",
                    target.bistatic_range_m
                )));
            }
        }
        Ok(target)
    }
}
