//! Range and velocity estimation from the quotient of received and
//! (estimated) transmitted grids, with successive cancellation of targets.
//!
//! Both transforms are evaluated half a bin off the usual DFT frequencies:
//! velocity bin `k` is centred on `(k + 0.5)` velocity-bin widths and range
//! bin `k` on `(k + 0.5)` range-bin widths, so the peak of a target at `x`
//! bin widths lands in bin `floor(x)` and the reported midpoint is within
//! half a bin of the truth. Velocity bins in the upper half of the DFT map
//! to negative velocities.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::channel::{check_grids, ChannelOperator, PathChannel};
use crate::config::SystemConfig;
use crate::error::{precondition, Error, Result};
use crate::grid::ResourceGrid;
use crate::reconstruction::{self, delay_doppler_from_rv};

/// Division guard on |x̂|.
pub const GUARD: f64 = 1e-12;
/// Hard cap on detections per call of [`detect_targets`].
pub const DETECTION_CAP: usize = 8;
/// Relative tolerance under which two spectrum values count as tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientGrid {
    pub values: ResourceGrid,
    /// Elements zeroed by the division guard.
    pub guarded: usize,
}

/// Element-wise `y / x̂`; elements with `|x̂| < GUARD` are set to zero and counted.
pub fn quotient_grid(rx: &ResourceGrid, tx_hat: &ResourceGrid) -> Result<QuotientGrid> {
    if rx.dims() != tx_hat.dims() {
        return Err(Error::Dimension(format!("rx {:?} vs tx {:?}", rx.dims(), tx_hat.dims())));
    }
    let mut guarded = 0;
    let values: Vec<Complex64> = rx
        .values()
        .iter()
        .zip(tx_hat.values())
        .map(|(&y, &x)| {
            if x.norm() < GUARD {
                guarded += 1;
                Complex64::new(0.0, 0.0)
            } else {
                y / x
            }
        })
        .collect();
    let (m, n) = rx.dims();
    Ok(QuotientGrid { values: ResourceGrid::from_row_major(m, n, rx.antenna_index, values)?, guarded })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    pub index: usize,
    pub magnitude: f64,
    /// Bin midpoint in physical units (m/s or m).
    pub value: f64,
}

/// Velocity of DFT bin `k`.
pub fn velocity_of_bin(k: usize, config: &SystemConfig) -> f64 {
    let mi = config.dft_points_doppler;
    let signed = if 2 * k < mi { k as f64 + 0.5 } else { k as f64 + 0.5 - mi as f64 };
    signed * config.velocity_bin_m_s()
}

/// Range of IDFT bin `k`.
pub fn range_of_bin(k: usize, config: &SystemConfig) -> f64 {
    (k as f64 + 0.5) * config.range_bin_m()
}

/// Planned transforms for one configuration.
pub struct Transforms {
    m: usize,
    n: usize,
    mi: usize,
    ni: usize,
    fft_v: Arc<dyn Fft<f64>>,
    ifft_r: Arc<dyn Fft<f64>>,
    tw_v: Vec<Complex64>,
    tw_r: Vec<Complex64>,
}

impl Transforms {
    pub fn new(config: &SystemConfig) -> Self {
        let (m, n) = (config.num_symbols, config.num_subcarriers);
        let (mi, ni) = (config.dft_points_doppler, config.idft_points_range);
        let mut planner = FftPlanner::new();
        let pi = std::f64::consts::PI;
        Self {
            m,
            n,
            mi,
            ni,
            fft_v: planner.plan_fft_forward(mi),
            ifft_r: planner.plan_fft_inverse(ni),
            tw_v: (0..m).map(|k| Complex64::from_polar(1.0, -pi * k as f64 / mi as f64)).collect(),
            tw_r: (0..n).map(|k| Complex64::from_polar(1.0, pi * k as f64 / ni as f64)).collect(),
        }
    }

    /// Mean over subcarriers of the normalized |DFT| along the symbol axis.
    /// `None` when the grid is all zero.
    pub fn velocity_spectrum(&self, q: &ResourceGrid) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.mi];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.mi];
        let mut used = 0usize;
        for n in 0..self.n {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            let mut count = 0usize;
            for m in 0..self.m {
                let v = q.get(m, n);
                if v != Complex64::new(0.0, 0.0) {
                    count += 1;
                }
                buf[m] = v * self.tw_v[m];
            }
            if count == 0 {
                continue;
            }
            self.fft_v.process(&mut buf);
            let scale = 1.0 / count as f64;
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += v.norm() * scale;
            }
            used += 1;
        }
        (used > 0).then(|| {
            acc.iter_mut().for_each(|a| *a /= used as f64);
            acc
        })
    }

    /// Mean over symbols of the normalized |IDFT| along the subcarrier axis.
    pub fn range_spectrum(&self, q: &ResourceGrid) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.ni];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.ni];
        let mut used = 0usize;
        for m in 0..self.m {
            let row = q.row(m);
            let count = row.iter().filter(|v| **v != Complex64::new(0.0, 0.0)).count();
            if count == 0 {
                continue;
            }
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (k, v) in row.iter().enumerate() {
                buf[k] = v * self.tw_r[k];
            }
            self.ifft_r.process(&mut buf);
            let scale = 1.0 / count as f64;
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += v.norm() * scale;
            }
            used += 1;
        }
        (used > 0).then(|| {
            acc.iter_mut().for_each(|a| *a /= used as f64);
            acc
        })
    }

    /// |2D transform| over (velocity bin, range bin), row-major with
    /// `M_I` rows of `N_I` values, normalized by the number of nonzero elements.
    pub fn range_doppler_map(&self, q: &ResourceGrid) -> Vec<f64> {
        let mut rows = vec![Complex64::new(0.0, 0.0); self.m * self.ni];
        let mut count = 0usize;
        for m in 0..self.m {
            let row = q.row(m);
            count += row.iter().filter(|v| **v != Complex64::new(0.0, 0.0)).count();
            let buf = &mut rows[m * self.ni..(m + 1) * self.ni];
            for (k, v) in row.iter().enumerate() {
                buf[k] = v * self.tw_r[k];
            }
            self.ifft_r.process(buf);
        }
        let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        let mut out = vec![0.0; self.mi * self.ni];
        let mut col = vec![Complex64::new(0.0, 0.0); self.mi];
        for r in 0..self.ni {
            col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for m in 0..self.m {
                col[m] = rows[m * self.ni + r] * self.tw_v[m];
            }
            self.fft_v.process(&mut col);
            for (k, v) in col.iter().enumerate() {
                out[k * self.ni + r] = v.norm() * scale;
            }
        }
        out
    }
}

/// Greatest common divisor of the gaps between active symbol rows (0 if
/// fewer than two rows are active).
fn row_spacing(q: &ResourceGrid) -> usize {
    let active: Vec<usize> = (0..q.symbols())
        .filter(|&m| q.row(m).iter().any(|v| *v != Complex64::new(0.0, 0.0)))
        .collect();
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    active.windows(2).fold(0, |g, w| gcd(g, w[1] - w[0]))
}

/// Velocity bins searched: with rows spaced `s` apart the Doppler spectrum
/// repeats every `M_I / s` bins, so only the period centred on zero is used.
fn velocity_window(mi: usize, spacing: usize) -> usize {
    if spacing <= 1 {
        mi
    } else {
        mi.div_ceil(spacing).min(mi)
    }
}

fn argmax_tied_low(spectrum: &[f64], allowed: impl Fn(usize) -> bool) -> (usize, f64) {
    let max = spectrum
        .iter()
        .enumerate()
        .filter(|(k, _)| allowed(*k))
        .fold(f64::NEG_INFINITY, |a, (_, &v)| a.max(v));
    let index = spectrum
        .iter()
        .enumerate()
        .position(|(k, &v)| allowed(k) && v >= max * (1.0 - TIE_TOL))
        .unwrap_or(0);
    (index, spectrum[index])
}

fn velocity_peak(spectrum: &[f64], spacing: usize, config: &SystemConfig) -> PeakEstimate {
    let mi = spectrum.len();
    let width = velocity_window(mi, spacing);
    let half_lo = width / 2;
    let half_hi = width - half_lo;
    let (index, magnitude) = argmax_tied_low(spectrum, |k| k < half_hi || k >= mi - half_lo);
    PeakEstimate { index, magnitude, value: velocity_of_bin(index, config) }
}

fn range_peak(spectrum: &[f64], config: &SystemConfig) -> PeakEstimate {
    let (index, magnitude) = argmax_tied_low(spectrum, |_| true);
    PeakEstimate { index, magnitude, value: range_of_bin(index, config) }
}

/// Range bins searched during detection: echoes must arrive within the guard
/// interval, so bins past `c·T_c` (aliases of negative delays) are skipped.
fn range_window(config: &SystemConfig) -> usize {
    let ni = config.idft_points_range;
    let max_range = config.speed_of_light_m_s * config.guard_period_s;
    if !(max_range > 0.0) {
        return ni;
    }
    ((max_range / config.range_bin_m()).ceil() as usize).clamp(1, ni)
}

fn zero_peak() -> PeakEstimate {
    PeakEstimate { index: 0, magnitude: 0.0, value: 0.0 }
}

pub fn estimate_velocity(sg: &QuotientGrid, config: &SystemConfig) -> PeakEstimate {
    let t = Transforms::new(config);
    match t.velocity_spectrum(&sg.values) {
        Some(s) => velocity_peak(&s, row_spacing(&sg.values), config),
        None => zero_peak(),
    }
}

pub fn estimate_range(sg: &QuotientGrid, config: &SystemConfig) -> PeakEstimate {
    let t = Transforms::new(config);
    match t.range_spectrum(&sg.values) {
        Some(s) => range_peak(&s, config),
        None => zero_peak(),
    }
}

/// Detected targets; all vectors share one length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensingEstimate {
    pub ranges_m: Vec<f64>,
    pub velocities_m_s: Vec<f64>,
    pub range_indices: Vec<usize>,
    pub velocity_indices: Vec<usize>,
    pub range_peaks: Vec<f64>,
    pub velocity_peaks: Vec<f64>,
    pub aod_rad: Vec<f64>,
    pub aoa_rad: Vec<f64>,
}

/// One entry of a [`SensingEstimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub range_m: f64,
    pub velocity_m_s: f64,
    pub range_index: usize,
    pub velocity_index: usize,
    pub range_peak: f64,
    pub velocity_peak: f64,
    pub aod_rad: f64,
    pub aoa_rad: f64,
}

impl SensingEstimate {
    pub fn len(&self) -> usize {
        self.ranges_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges_m.is_empty()
    }

    pub fn push(&mut self, d: Detection) {
        self.ranges_m.push(d.range_m);
        self.velocities_m_s.push(d.velocity_m_s);
        self.range_indices.push(d.range_index);
        self.velocity_indices.push(d.velocity_index);
        self.range_peaks.push(d.range_peak);
        self.velocity_peaks.push(d.velocity_peak);
        self.aod_rad.push(d.aod_rad);
        self.aoa_rad.push(d.aoa_rad);
    }

    pub fn get(&self, i: usize) -> Detection {
        Detection {
            range_m: self.ranges_m[i],
            velocity_m_s: self.velocities_m_s[i],
            range_index: self.range_indices[i],
            velocity_index: self.velocity_indices[i],
            range_peak: self.range_peaks[i],
            velocity_peak: self.velocity_peaks[i],
            aod_rad: self.aod_rad[i],
            aoa_rad: self.aoa_rad[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Detection> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

impl FromIterator<Detection> for SensingEstimate {
    fn from_iter<I: IntoIterator<Item = Detection>>(iter: I) -> Self {
        let mut e = SensingEstimate::default();
        for d in iter {
            e.push(d);
        }
        e
    }
}

/// Output of [`detect_targets`].
#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    pub estimate: SensingEstimate,
    /// One path per detection, gain fitted on the residual it was removed from.
    pub paths: Vec<PathChannel>,
    pub residual: Vec<ResourceGrid>,
}

/// Averaged velocity and range spectra over all (receive, transmit) antenna
/// pairs. For pair (k, i) the contributions of the other transmit streams,
/// as predicted by `cross` applied to `x_ref`, are removed from receive
/// grid k before dividing by x̂_i.
fn pair_spectra(
    residual: &[ResourceGrid],
    x_ref: &[ResourceGrid],
    cross: &ChannelOperator,
    transforms: &Transforms,
) -> Result<Option<(Vec<f64>, Vec<f64>, usize)>> {
    let n_rx = residual.len();
    let n_tx = x_ref.len();
    let (m_len, n_len) = residual[0].dims();
    let cancel = n_tx > 1 && !cross.is_empty();
    // Per-element composite channel, only needed when cancelling.
    let mut composite = Vec::new();
    if cancel {
        composite = vec![Complex64::new(0.0, 0.0); m_len * n_len * n_rx * n_tx];
        for m in 0..m_len {
            for n in 0..n_len {
                let e = (m * n_len + n) * n_rx * n_tx;
                cross.composite_into(m, n, &mut composite[e..e + n_rx * n_tx]);
            }
        }
    }
    let mut vel: Option<Vec<f64>> = None;
    let mut rng: Option<Vec<f64>> = None;
    let mut pairs = 0usize;
    let mut spacing = 0usize;
    for k in 0..n_rx {
        for i in 0..n_tx {
            let y = if cancel {
                let mut g = residual[k].clone();
                for m in 0..m_len {
                    for n in 0..n_len {
                        let e = (m * n_len + n) * n_rx * n_tx + k * n_tx;
                        let mut c = g.get(m, n);
                        for ip in (0..n_tx).filter(|&ip| ip != i) {
                            c -= composite[e + ip] * x_ref[ip].get(m, n);
                        }
                        g.set(m, n, c);
                    }
                }
                g
            } else {
                residual[k].clone()
            };
            let q = quotient_grid(&y, &x_ref[i])?;
            let (Some(v), Some(r)) =
                (transforms.velocity_spectrum(&q.values), transforms.range_spectrum(&q.values))
            else {
                continue;
            };
            spacing = row_spacing(&q.values);
            add_into(&mut vel, &v);
            add_into(&mut rng, &r);
            pairs += 1;
        }
    }
    Ok(match (vel, rng) {
        (Some(mut v), Some(mut r)) => {
            let s = 1.0 / pairs as f64;
            v.iter_mut().for_each(|a| *a *= s);
            r.iter_mut().for_each(|a| *a *= s);
            Some((v, r, spacing))
        }
        _ => None,
    })
}

fn add_into(acc: &mut Option<Vec<f64>>, v: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        None => *acc = Some(v.to_vec()),
    }
}

/// Successive detection and cancellation.
///
/// `x_ref` holds the transmit grids used as the division reference (zero
/// where unknown); `reference` is the current channel belief, used only to
/// remove cross-stream leakage from each antenna-pair quotient. A target is
/// accepted while its velocity or range peak is at least `threshold` times
/// the corresponding first-pass peak; the loop also ends when the peak falls
/// in a (range, velocity) cell already detected. Range peaks are searched
/// only up to the bistatic range the guard interval can hold.
pub fn detect_targets(
    rx: &[ResourceGrid],
    x_ref: &[ResourceGrid],
    threshold: f64,
    config: &SystemConfig,
    reference: &[PathChannel],
) -> Result<DetectionOutcome> {
    if !(threshold > 0.0) {
        return Err(precondition("detect_targets: threshold must be positive"));
    }
    let (m_len, n_len) = (config.num_symbols, config.num_subcarriers);
    check_grids(rx, config.num_rx_antennas, m_len, n_len)?;
    check_grids(x_ref, config.num_tx_antennas, m_len, n_len)?;
    let transforms = Transforms::new(config);
    let mut residual = rx.to_vec();
    let mut cross: Vec<PathChannel> = reference.to_vec();
    let mut estimate = SensingEstimate::default();
    let mut paths = Vec::new();
    let mut first: Option<(f64, f64)> = None;
    while estimate.len() < DETECTION_CAP {
        let op = ChannelOperator::new(&cross, config);
        let Some((vs, rs, spacing)) = pair_spectra(&residual, x_ref, &op, &transforms)? else {
            break;
        };
        let vp = velocity_peak(&vs, spacing, config);
        let width = range_window(config);
        let (index, magnitude) = argmax_tied_low(&rs, |k| k < width);
        let rp = PeakEstimate { index, magnitude, value: range_of_bin(index, config) };
        let (v0, r0) = *first.get_or_insert((vp.magnitude, rp.magnitude));
        if v0 <= 0.0 && r0 <= 0.0 {
            break;
        }
        if !(vp.magnitude >= threshold * v0 || rp.magnitude >= threshold * r0) {
            break;
        }
        // A peak in an already detected cell is what is left after an
        // imperfect cancellation, not a new target.
        if estimate.range_indices.iter().zip(&estimate.velocity_indices).any(|(&r, &v)| r == rp.index && v == vp.index) {
            break;
        }
        let (delay, doppler) = delay_doppler_from_rv(rp.value, vp.value, config)?;
        let snapshot = reconstruction::spatial_snapshot(&residual, x_ref, delay, doppler, config);
        let angles = reconstruction::estimate_angles_spaced(&snapshot, config.spacing_wavelengths())
            .unwrap_or_default();
        let unit = PathChannel::new(
            Complex64::new(1.0, 0.0),
            delay,
            doppler,
            angles.aod_rad,
            angles.aoa_rad,
            config,
        );
        let gain = reconstruction::fit_gains(std::slice::from_ref(&unit), &residual, x_ref, config)[0];
        let path = unit.with_gain(gain);
        reconstruction::subtract_paths(&mut residual, std::slice::from_ref(&path), x_ref, config);
        cross.push(path.with_gain(-gain));
        estimate.push(Detection {
            range_m: rp.value,
            velocity_m_s: vp.value,
            range_index: rp.index,
            velocity_index: vp.index,
            range_peak: rp.magnitude,
            velocity_peak: vp.magnitude,
            aod_rad: angles.aod_rad,
            aoa_rad: angles.aoa_rad,
        });
        paths.push(path);
    }
    Ok(DetectionOutcome { estimate, paths, residual })
}
