//! Pilot stage, Monte Carlo trials and SNR sweeps.
//!
//! A trial draws bits, fading and noise from streams keyed by its seed, so
//! every method evaluated on that seed sees the same received frame.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{
    apply_channel, awgn_variance_for_snr, mean_power, synthesize_paths, ChannelOperator, ChannelRealization,
    PathChannel, Target,
};
use crate::config::SystemConfig;
use crate::detection::{conventional_detect, ml_detect, zf_solve, ML_MAX_CANDIDATES};
use crate::error::{precondition, Error, Result};
use crate::grid::{FrameLayout, ResourceGrid};
use crate::metrics;
use crate::reconstruction::reconstruct_fitted;
use crate::rng::{self, derive_seed, rng_for};
use crate::sensing::{detect_targets, SensingEstimate, GUARD};
use crate::unfolded::{
    iterative_receiver, network_forward, reference_grids, LayerSnapshot, NetworkOutput, NetworkParams,
    ParamStore, PilotInit, ReceivedFrame, TrainingExample, SceneSampler, DEFAULT_THRESHOLD,
};
use crate::waveform::{assemble_frame, keep_rows, pilot_symbols, random_bits, Constellation};

/// Least-squares channel estimates on the pilot rows, the conventional
/// non-parametric estimator.
///
/// Each pilot element gets an N_r x N_t estimate fitted over a window of
/// `2 N_t - 1` adjacent subcarriers (the channel is assumed flat across the
/// window). With one transmit antenna the window is a single element and the
/// estimate is the plain division `y / x`. Data rows are served by linear
/// interpolation between pilot rows, holding the nearest pilot row outside.
#[derive(Debug, Clone)]
pub struct PilotChannelEstimate {
    pub pilot_rows: Vec<usize>,
    pub subcarriers: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    /// Row-major N_r x N_t blocks, indexed by (pilot row index, subcarrier).
    pub samples: Vec<Complex64>,
    /// Mean of `y x^H` over pilot elements (N_r x N_t).
    pub snapshot: DMatrix<Complex64>,
}

impl PilotChannelEstimate {
    pub fn sample(&self, pilot_index: usize, n: usize) -> &[Complex64] {
        let b = self.n_rx * self.n_tx;
        let e = (pilot_index * self.subcarriers + n) * b;
        &self.samples[e..e + b]
    }

    /// Interpolated channel at any symbol row.
    pub fn channel_at(&self, m: usize, n: usize, out: &mut [Complex64]) {
        let rows = &self.pilot_rows;
        let after = rows.partition_point(|&p| p < m);
        if after < rows.len() && rows[after] == m || after == 0 {
            out.copy_from_slice(self.sample(after.min(rows.len() - 1), n));
        } else if after == rows.len() {
            out.copy_from_slice(self.sample(rows.len() - 1, n));
        } else {
            let (a, b) = (rows[after - 1], rows[after]);
            let w = (m - a) as f64 / (b - a) as f64;
            let (sa, sb) = (self.sample(after - 1, n), self.sample(after, n));
            for ((o, x), y) in out.iter_mut().zip(sa).zip(sb) {
                *o = x * (1.0 - w) + y * w;
            }
        }
    }
}

pub fn pilot_channel_estimate(
    rx: &[ResourceGrid],
    pilots: &[ResourceGrid],
    layout: &FrameLayout,
) -> Result<PilotChannelEstimate> {
    if rx.is_empty() || pilots.is_empty() {
        return Err(precondition("pilot_channel_estimate: no antennas"));
    }
    let dims = (layout.num_symbols, layout.num_subcarriers);
    if rx.iter().chain(pilots).any(|g| g.dims() != dims) {
        return Err(Error::Dimension("pilot and receive grids differ in size".into()));
    }
    if layout.pilot_rows.is_empty() {
        return Err(precondition("pilot_channel_estimate: frame has no pilot rows"));
    }
    let (n_rx, n_tx, n_len) = (rx.len(), pilots.len(), dims.1);
    for &m in &layout.pilot_rows {
        for n in 0..n_len {
            if pilots.iter().any(|g| g.get(m, n).norm() < GUARD) {
                return Err(precondition("pilot_channel_estimate: zero pilot symbol"));
            }
        }
    }
    let width = (2 * n_tx - 1).min(n_len);
    let mut samples = Vec::with_capacity(layout.pilot_rows.len() * n_len * n_rx * n_tx);
    let mut snapshot = DMatrix::<Complex64>::zeros(n_rx, n_tx);
    for &m in &layout.pilot_rows {
        for n in 0..n_len {
            let start = n.saturating_sub(width / 2).min(n_len - width);
            let x = DMatrix::from_fn(width, n_tx, |r, i| pilots[i].get(m, start + r));
            let xh = x.adjoint();
            let gram = &xh * &x;
            let trace: f64 = (0..n_tx).map(|i| gram[(i, i)].re).sum();
            for y in rx {
                let yw = DVector::from_fn(width, |r, _| y.get(m, start + r));
                let h = zf_solve(&gram, &(&xh * yw), trace);
                samples.extend(h.iter().copied());
            }
            for (k, y) in rx.iter().enumerate() {
                for (i, p) in pilots.iter().enumerate() {
                    snapshot[(k, i)] += y.get(m, n) * p.get(m, n).conj();
                }
            }
        }
    }
    snapshot /= Complex64::new((layout.pilot_rows.len() * n_len) as f64, 0.0);
    Ok(PilotChannelEstimate { pilot_rows: layout.pilot_rows.clone(), subcarriers: n_len, n_rx, n_tx, samples, snapshot })
}

/// Coarse sensing on the pilot rows: a detection pass, then a second pass
/// that uses the first pass's paths to cancel cross-stream leakage, then a
/// joint gain fit.
pub fn pilot_initial_sensing(rx: &[ResourceGrid], pilots: &[ResourceGrid], config: &SystemConfig) -> Result<PilotInit> {
    let first = detect_targets(rx, pilots, DEFAULT_THRESHOLD, config, &[])?;
    if first.estimate.is_empty() {
        return Ok(PilotInit::default());
    }
    let estimate = if config.num_tx_antennas > 1 {
        let seed = reconstruct_fitted(&first.estimate, rx, pilots, config)?;
        detect_targets(rx, pilots, DEFAULT_THRESHOLD, config, &seed)?.estimate
    } else {
        first.estimate
    };
    let paths = reconstruct_fitted(&estimate, rx, pilots, config)?;
    Ok(PilotInit { paths, estimate })
}

/// Everything one trial generates before any receiver runs.
#[derive(Debug, Clone)]
pub struct TrialFrame {
    pub config: SystemConfig,
    pub layout: FrameLayout,
    pub tx: Vec<ResourceGrid>,
    pub pilots: Vec<ResourceGrid>,
    /// Transmitted constellation indices per antenna (data rows, row-major).
    pub true_symbols: Vec<Vec<usize>>,
    pub realization: ChannelRealization,
    pub rx: Vec<ResourceGrid>,
}

impl TrialFrame {
    pub fn received(&self) -> ReceivedFrame {
        ReceivedFrame { rx: self.rx.clone(), pilots: self.pilots.clone(), layout: self.layout.clone() }
    }
}

/// Pilot-only transmit grids (zero on data rows).
pub fn pilot_grids(config: &SystemConfig, layout: &FrameLayout) -> Result<Vec<ResourceGrid>> {
    let zeros = vec![Complex64::new(0.0, 0.0); layout.data_len()];
    (0..config.num_tx_antennas)
        .map(|i| assemble_frame(&zeros, &pilot_symbols(config, layout, i), layout, i))
        .collect()
}

/// Builds the frame of trial `seed` at `config.snr_db`. The SNR is the mean
/// noiseless receive power per element over the noise variance.
pub fn generate_trial(config: &SystemConfig, targets: &[Target], seed: u64) -> Result<TrialFrame> {
    config.validate()?;
    if targets.is_empty() {
        return Err(precondition("a trial needs at least one target"));
    }
    let layout = FrameLayout::new(config);
    if layout.data_rows.is_empty() {
        return Err(precondition("frame has no data rows"));
    }
    let constellation = Constellation::new(config.qam_order)?;
    let mut tx = Vec::with_capacity(config.num_tx_antennas);
    let mut pilots = Vec::with_capacity(config.num_tx_antennas);
    let mut true_symbols = Vec::with_capacity(config.num_tx_antennas);
    for i in 0..config.num_tx_antennas {
        let bits = random_bits(derive_seed(seed, 0x100 + i as u64), layout.data_len() * config.bits_per_symbol())?;
        let data = constellation.modulate(&bits)?;
        true_symbols.push(data.iter().map(|&s| constellation.nearest(s)).collect());
        let grid = assemble_frame(&data, &pilot_symbols(config, &layout, i), &layout, i)?;
        pilots.push(keep_rows(&grid, &layout.pilot_rows));
        tx.push(grid);
    }
    let paths = synthesize_paths(targets, config, &mut rng_for(seed, rng::FADING))?;
    let clean = ChannelOperator::new(&paths, config).apply(&tx)?;
    let noise_variance = awgn_variance_for_snr(config.snr_db, mean_power(&clean))?;
    let realization = ChannelRealization { paths, noise_variance };
    let rx = apply_channel(&tx, &realization, config, &mut rng_for(seed, rng::NOISE))?;
    Ok(TrialFrame { config: config.clone(), layout, tx, pilots, true_symbols, realization, rx })
}

/// Receiver and baseline variants compared by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// ML detection with the true channel; sensing with the true symbols.
    Perfect,
    /// The unfolded network with parameters from the store (defaults if none).
    IsacNet,
    /// The untrained iterative receiver.
    Alg3,
    /// Zero-forcing with the channel rebuilt by the pilot stage.
    Conventional,
    /// One sensing pass on zero-forcing decisions.
    Dft2d,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Perfect, Method::IsacNet, Method::Alg3, Method::Conventional, Method::Dft2d];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Perfect => "perfect",
            Method::IsacNet => "isac-net",
            Method::Alg3 => "alg3",
            Method::Conventional => "conventional",
            Method::Dft2d => "2d-dft",
        }
    }

    pub fn reports_communication(&self) -> bool {
        !matches!(self, Method::Dft2d)
    }

    pub fn reports_sensing(&self) -> bool {
        !matches!(self, Method::Conventional)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(Method::name).collect();
            Error::Config(format!("unknown method '{s}', expected one of: {}", names.join(", ")))
        })
    }
}

/// Per-layer metrics of the iterative receivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerMetrics {
    pub ber: f64,
    pub ser: f64,
    pub nmse_range: f64,
    pub nmse_velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub ber: f64,
    pub ser: f64,
    pub nmse_range: f64,
    pub nmse_velocity: f64,
    pub detected_count: usize,
    /// One entry per layer; empty for non-iterative methods.
    pub per_layer_trace: Vec<LayerMetrics>,
    pub seed: u64,
    pub snr_db: f64,
}

/// BER, SER and Γ metrics of one set of decisions and one estimate.
pub fn compute_metrics(
    hard: &[Vec<usize>],
    truth: &[Vec<usize>],
    estimate: &SensingEstimate,
    targets: &[Target],
    constellation: &Constellation,
) -> LayerMetrics {
    let (be, bn) = metrics::bit_errors(hard, truth, constellation);
    let (se, sn) = metrics::symbol_errors(hard, truth);
    let s = metrics::sensing_error(estimate, targets);
    LayerMetrics {
        ber: metrics::ratio(be, bn),
        ser: metrics::ratio(se, sn),
        nmse_range: s.nmse_range,
        nmse_velocity: s.nmse_velocity,
    }
}

fn trace_metrics(
    trace: &[LayerSnapshot],
    truth: &[Vec<usize>],
    targets: &[Target],
    constellation: &Constellation,
) -> Vec<LayerMetrics> {
    trace.iter().map(|s| compute_metrics(&s.hard, truth, &s.estimate, targets, constellation)).collect()
}

fn result_from(
    m: LayerMetrics,
    detected: usize,
    trace: Vec<LayerMetrics>,
    seed: u64,
    snr_db: f64,
) -> TrialResult {
    TrialResult {
        ber: m.ber,
        ser: m.ser,
        nmse_range: m.nmse_range,
        nmse_velocity: m.nmse_velocity,
        detected_count: detected,
        per_layer_trace: trace,
        seed,
        snr_db,
    }
}

fn network_result(
    out: &NetworkOutput,
    frame: &TrialFrame,
    targets: &[Target],
    constellation: &Constellation,
    seed: u64,
) -> TrialResult {
    let m = compute_metrics(&out.hard, &frame.true_symbols, &out.estimate, targets, constellation);
    let trace = trace_metrics(&out.trace, &frame.true_symbols, targets, constellation);
    result_from(m, out.estimate.len(), trace, seed, frame.config.snr_db)
}

/// Depth of the iterative receivers when no parameter set fixes it.
pub const DEFAULT_LAYERS: usize = 5;

/// One trial of the unfolded network.
pub fn run_trial(config: &SystemConfig, targets: &[Target], params: &NetworkParams, seed: u64) -> Result<TrialResult> {
    let frame = generate_trial(config, targets, seed)?;
    let init = pilot_initial_sensing(&frame.rx, &frame.pilots, config)?;
    let out = network_forward(&frame.received(), &init, params, config)?;
    let constellation = Constellation::new(config.qam_order)?;
    Ok(network_result(&out, &frame, targets, &constellation, seed))
}

/// Sensing reference with a fraction `p` of data symbols replaced by
/// uniformly random constellation points (pilots untouched).
pub fn corrupt_symbols(frame: &TrialFrame, p: f64, seed: u64) -> Result<Vec<ResourceGrid>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(precondition("corruption fraction must lie in [0, 1]"));
    }
    let constellation = Constellation::new(frame.config.qam_order)?;
    let mut r = rng_for(seed, rng::CORRUPT);
    let order = constellation.order() as usize;
    let mut out = frame.tx.clone();
    for g in out.iter_mut() {
        for &m in &frame.layout.data_rows {
            for n in 0..g.subcarriers() {
                // Both draws are always taken so that the replaced set for a
                // smaller p is a subset of the one for a larger p.
                let u: f64 = r.random();
                let s = r.random_range(0..order);
                if u < p {
                    g.set(m, n, constellation.point(s));
                }
            }
        }
    }
    Ok(out)
}

/// One sensing pass with a given symbol reference and the true channel for
/// cross-stream cancellation; returns (Γ_r, Γ_v, detections).
pub fn sense_with_reference(
    frame: &TrialFrame,
    x_ref: &[ResourceGrid],
    targets: &[Target],
) -> Result<(f64, f64, usize)> {
    let out = detect_targets(&frame.rx, x_ref, DEFAULT_THRESHOLD, &frame.config, &frame.realization.paths)?;
    let e = metrics::sensing_error(&out.estimate, targets);
    Ok((e.nmse_range, e.nmse_velocity, out.estimate.len()))
}

/// Runs every requested method on the same trial frame.
pub fn run_methods(
    config: &SystemConfig,
    targets: &[Target],
    params: &NetworkParams,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<TrialResult>> {
    let frame = generate_trial(config, targets, seed)?;
    let constellation = Constellation::new(config.qam_order)?;
    let rows = &frame.layout.data_rows;
    let snr = config.snr_db;
    let needs_pilot = methods.iter().any(|m| *m != Method::Perfect);
    let init = if needs_pilot { pilot_initial_sensing(&frame.rx, &frame.pilots, config)? } else { PilotInit::default() };
    let mut conventional: Option<Vec<Vec<usize>>> = None;
    let mut conv = |frame: &TrialFrame, init: &PilotInit| -> Result<Vec<Vec<usize>>> {
        if conventional.is_none() {
            conventional = Some(conventional_detect(&frame.rx, &init.paths, rows, &constellation, config)?);
        }
        Ok(conventional.clone().unwrap())
    };
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let r = match method {
            Method::Perfect => {
                let order = constellation.order() as usize;
                let feasible = order.checked_pow(config.num_tx_antennas as u32).is_some_and(|t| t <= ML_MAX_CANDIDATES);
                let hard = if feasible {
                    ml_detect(&frame.rx, &frame.realization.paths, rows, &constellation, config)?
                } else {
                    conventional_detect(&frame.rx, &frame.realization.paths, rows, &constellation, config)?
                };
                let sensed =
                    detect_targets(&frame.rx, &frame.tx, DEFAULT_THRESHOLD, config, &frame.realization.paths)?;
                let m = compute_metrics(&hard, &frame.true_symbols, &sensed.estimate, targets, &constellation);
                result_from(m, sensed.estimate.len(), Vec::new(), seed, snr)
            }
            Method::IsacNet => {
                let o = network_forward(&frame.received(), &init, params, config)?;
                network_result(&o, &frame, targets, &constellation, seed)
            }
            Method::Alg3 => {
                let o = iterative_receiver(&frame.received(), &init, params.depth(), config)?;
                network_result(&o, &frame, targets, &constellation, seed)
            }
            Method::Conventional => {
                let hard = conv(&frame, &init)?;
                let m = compute_metrics(&hard, &frame.true_symbols, &init.estimate, targets, &constellation);
                result_from(m, init.estimate.len(), Vec::new(), seed, snr)
            }
            Method::Dft2d => {
                let hard = conv(&frame, &init)?;
                let x_ref = decisions_to_grids(&frame, &hard, &constellation);
                let sensed = detect_targets(&frame.rx, &x_ref, DEFAULT_THRESHOLD, config, &init.paths)?;
                let m = compute_metrics(&hard, &frame.true_symbols, &sensed.estimate, targets, &constellation);
                result_from(m, sensed.estimate.len(), Vec::new(), seed, snr)
            }
        };
        out.push(r);
    }
    Ok(out)
}

/// Pilots plus the symbols of the given decisions.
fn decisions_to_grids(frame: &TrialFrame, hard: &[Vec<usize>], constellation: &Constellation) -> Vec<ResourceGrid> {
    let n_len = frame.config.num_subcarriers;
    frame
        .pilots
        .iter()
        .zip(hard)
        .map(|(p, h)| {
            let mut g = p.clone();
            for (k, &m) in frame.layout.data_rows.iter().enumerate() {
                for n in 0..n_len {
                    g.set(m, n, constellation.point(h[k * n_len + n]));
                }
            }
            g
        })
        .collect()
}

/// Mean of per-trial results for one (method, SNR).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub snr_db: f64,
    pub trials: usize,
    pub ber: f64,
    pub ser: f64,
    pub nmse_range: f64,
    pub nmse_velocity: f64,
    pub detected_mean: f64,
    /// Mean per-layer metrics (empty for non-iterative methods).
    pub per_layer: Vec<LayerMetrics>,
}

fn average(method: Method, snr_db: f64, results: &[TrialResult]) -> SweepRow {
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&TrialResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let depth = results.first().map_or(0, |r| r.per_layer_trace.len());
    let per_layer = (0..depth)
        .map(|k| {
            let layer = |f: &dyn Fn(&LayerMetrics) -> f64| results.iter().map(|r| f(&r.per_layer_trace[k])).sum::<f64>() / n;
            LayerMetrics {
                ber: layer(&|m| m.ber),
                ser: layer(&|m| m.ser),
                nmse_range: layer(&|m| m.nmse_range),
                nmse_velocity: layer(&|m| m.nmse_velocity),
            }
        })
        .collect();
    SweepRow {
        method,
        snr_db,
        trials: results.len(),
        ber: mean(&|r| r.ber),
        ser: mean(&|r| r.ser),
        nmse_range: mean(&|r| r.nmse_range),
        nmse_velocity: mean(&|r| r.nmse_velocity),
        detected_mean: mean(&|r| r.detected_count as f64),
        per_layer,
    }
}

/// Seed of trial `t` in a sweep started from `base_seed`.
pub fn trial_seed(base_seed: u64, t: usize) -> u64 {
    base_seed.wrapping_add(t as u64)
}

#[derive(Debug, Clone)]
pub struct SweepSpec<'a> {
    pub config: &'a SystemConfig,
    pub targets: &'a [Target],
    pub store: &'a ParamStore,
    pub snr_list: &'a [f64],
    pub trials: usize,
    pub methods: &'a [Method],
    pub base_seed: u64,
    /// Depth used when the store is empty.
    pub default_layers: usize,
}

/// Runs every method at every SNR over `trials` seeds. Rows come out SNR
/// major, methods in the requested order; trial results are reduced in seed
/// order whatever the evaluation order was.
pub fn sweep(spec: &SweepSpec<'_>) -> Result<Vec<SweepRow>> {
    if spec.trials == 0 {
        return Err(precondition("sweep: trials must be at least 1"));
    }
    if spec.methods.is_empty() {
        return Err(precondition("sweep: no methods"));
    }
    let mut rows = Vec::with_capacity(spec.snr_list.len() * spec.methods.len());
    for &snr in spec.snr_list {
        let config = spec.config.with_snr(snr);
        let params = spec
            .store
            .lookup(snr)
            .cloned()
            .unwrap_or_else(|| NetworkParams::untrained(spec.default_layers, ParamStore::key_for(snr)));
        let run = |t: usize| run_methods(&config, spec.targets, &params, spec.methods, trial_seed(spec.base_seed, t));
        #[cfg(feature = "parallel")]
        let per_trial: Vec<Result<Vec<TrialResult>>> = {
            use rayon::prelude::*;
            (0..spec.trials).into_par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let per_trial: Vec<Result<Vec<TrialResult>>> = (0..spec.trials).map(run).collect();
        let per_trial: Vec<Vec<TrialResult>> = per_trial.into_iter().collect::<Result<_>>()?;
        for (j, &method) in spec.methods.iter().enumerate() {
            let results: Vec<TrialResult> = per_trial.iter().map(|r| r[j].clone()).collect();
            rows.push(average(method, snr, &results));
        }
    }
    Ok(rows)
}

/// Draws training examples from a fixed scene at a fixed SNR.
#[derive(Debug, Clone)]
pub struct FixedSceneSampler {
    pub config: SystemConfig,
    pub targets: Vec<Target>,
}

impl SceneSampler for FixedSceneSampler {
    fn config(&self) -> &SystemConfig {
        &self.config
    }

    fn sample(&self, seed: u64) -> Result<TrainingExample> {
        let frame = generate_trial(&self.config, &self.targets, seed)?;
        let init = pilot_initial_sensing(&frame.rx, &frame.pilots, &self.config)?;
        Ok(TrainingExample {
            frame: frame.received(),
            init,
            true_symbols: frame.true_symbols,
            targets: self.targets.clone(),
        })
    }
}

/// The reference grids the network would build from the true symbols;
/// exposed for checks that compare against perfect demodulation.
pub fn true_reference(frame: &TrialFrame) -> Result<Vec<ResourceGrid>> {
    let constellation = Constellation::new(frame.config.qam_order)?;
    Ok(reference_grids(&frame.received(), &frame.tx, &constellation))
}

/// The paths of a trial as seen by a receiver that knows the channel.
pub fn true_paths(frame: &TrialFrame) -> &[PathChannel] {
    &frame.realization.paths
}
