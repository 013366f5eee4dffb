//! The unfolded joint receiver: each layer runs one detector iteration, one
//! sensing pass on the detector's current decisions, and a channel rebuild,
//! with five learnable scalars per layer.
//!
//! Per layer (η₁..η₅):
//! 1. detector step with memories η₁ (estimate) and η₂ (residual);
//! 2. successive detection with fractional threshold η₃, using the pilots
//!    plus hard decisions of the current estimate as the division reference;
//! 3. range/velocity memory: a new detection within one range bin and one
//!    velocity bin of an old entry becomes `η₄·old + (1 − η₄)·new`; unmatched
//!    new detections are appended; unmatched old entries survive only when
//!    η₄ > 0.5;
//! 4. channel rebuild with jointly fitted gains, then channel memory: the
//!    gain of a matched path becomes `η₅·g_old + g_new`.
//!
//! The defaults (1, 0, 0.5, 0, 0) make every memory term vanish exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::channel::{PathChannel, Target};
use crate::config::SystemConfig;
use crate::detection::{damp_step, hard_decisions, DetectorState, DETECTOR_NORMALIZATION};
use crate::error::{precondition, Error, Result};
use crate::grid::{FrameLayout, ResourceGrid};
use crate::metrics::{self, MISS_PENALTY};
use crate::reconstruction::reconstruct_fitted;
use crate::sensing::{detect_targets, SensingEstimate, DETECTION_CAP, GUARD};
use crate::waveform::Constellation;

/// Threshold used by the untrained receiver.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const ETA3_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub eta5: f64,
}

impl Default for LayerParams {
    fn default() -> Self {
        Self { eta1: 1.0, eta2: 0.0, eta3: DEFAULT_THRESHOLD, eta4: 0.0, eta5: 0.0 }
    }
}

impl LayerParams {
    pub fn to_array(&self) -> [f64; 5] {
        [self.eta1, self.eta2, self.eta3, self.eta4, self.eta5]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { eta1: a[0], eta2: a[1], eta3: a[2], eta4: a[3], eta5: a[4] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(precondition("layer parameters must be finite"));
        }
        if !(self.eta3 > 0.0 && self.eta3 <= 1.0) {
            return Err(precondition(format!("eta3 must lie in (0, 1], got {}", self.eta3)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub snr_key_db: f64,
}

impl NetworkParams {
    pub fn untrained(k: usize, snr_key_db: f64) -> Self {
        Self { layers: vec![LayerParams::default(); k], snr_key_db }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(precondition("network needs at least one layer"));
        }
        self.layers.iter().try_for_each(LayerParams::validate)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.to_array()).collect()
    }

    pub fn from_vector(v: &[f64], snr_key_db: f64) -> Self {
        let layers = v.chunks(5).map(|c| LayerParams::from_array([c[0], c[1], c[2], c[3], c[4]])).collect();
        Self { layers, snr_key_db }
    }

    /// Text form: K, the SNR key, then K rows of five numbers. Numbers are
    /// written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# layers").unwrap();
        writeln!(s, "{}", self.layers.len()).unwrap();
        writeln!(s, "# snr_key_db").unwrap();
        writeln!(s, "{}", self.snr_key_db).unwrap();
        writeln!(s, "# eta1 eta2 eta3 eta4 eta5").unwrap();
        for l in &self.layers {
            let a = l.to_array();
            writeln!(s, "{} {} {} {} {}", a[0], a[1], a[2], a[3], a[4]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let store = ParamStore::from_text(text)?;
        match <[NetworkParams; 1]>::try_from(store.sets) {
            Ok([p]) => Ok(p),
            Err(v) => Err(Error::Parse(format!("expected one parameter block, found {}", v.len()))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Parameter sets keyed by training SNR; lookup returns the nearest key
/// (lower key on a tie).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub sets: Vec<NetworkParams>,
}

impl ParamStore {
    pub const KEY_STEP_DB: f64 = 5.0;
    pub const KEY_RANGE_DB: (f64, f64) = (-20.0, 60.0);

    /// Nearest multiple of 5 dB within [-20, 60].
    pub fn key_for(snr_db: f64) -> f64 {
        let (lo, hi) = Self::KEY_RANGE_DB;
        ((snr_db / Self::KEY_STEP_DB).round() * Self::KEY_STEP_DB).clamp(lo, hi)
    }

    pub fn insert(&mut self, params: NetworkParams) {
        self.sets.retain(|p| p.snr_key_db != params.snr_key_db);
        self.sets.push(params);
        self.sets.sort_by(|a, b| a.snr_key_db.total_cmp(&b.snr_key_db));
    }

    pub fn lookup(&self, snr_db: f64) -> Option<&NetworkParams> {
        self.sets.iter().min_by(|a, b| {
            let da = (a.snr_key_db - snr_db).abs();
            let db = (b.snr_key_db - snr_db).abs();
            da.total_cmp(&db).then(a.snr_key_db.total_cmp(&b.snr_key_db))
        })
    }

    pub fn to_text(&self) -> String {
        self.sets.iter().map(NetworkParams::to_text).collect::<Vec<_>>().join("\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let bad = |i: usize, what: &str| Error::Parse(format!("line {}: {what}", i + 1));
        let mut store = ParamStore::default();
        while let Some((i, line)) = lines.next() {
            let k: usize = line.parse().map_err(|_| bad(i, "expected layer count"))?;
            if k == 0 {
                return Err(bad(i, "layer count must be positive"));
            }
            let (i, line) = lines.next().ok_or_else(|| bad(i, "missing snr_key_db"))?;
            let snr: f64 = line.parse().map_err(|_| bad(i, "expected snr_key_db"))?;
            let mut layers = Vec::with_capacity(k);
            for _ in 0..k {
                let (i, line) = lines.next().ok_or_else(|| bad(i, "missing layer row"))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(i, "expected five numbers"))?;
                let arr: [f64; 5] = vals.try_into().map_err(|_| bad(i, "expected five numbers"))?;
                layers.push(LayerParams::from_array(arr));
            }
            let p = NetworkParams { layers, snr_key_db: snr };
            p.validate()?;
            store.sets.push(p);
        }
        if store.sets.is_empty() {
            return Err(Error::Parse("no parameter blocks".into()));
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// What the receiver has: the receive grids and the known pilot grids.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub rx: Vec<ResourceGrid>,
    /// Transmit pilots per antenna, zero on data rows.
    pub pilots: Vec<ResourceGrid>,
    pub layout: FrameLayout,
}

/// Output of the pilot stage.
#[derive(Debug, Clone, Default)]
pub struct PilotInit {
    pub paths: Vec<PathChannel>,
    pub estimate: SensingEstimate,
}

#[derive(Debug, Clone)]
pub struct NetworkState {
    pub detector: DetectorState,
    pub estimate: SensingEstimate,
    /// One path per entry of `estimate`.
    pub paths: Vec<PathChannel>,
}

impl NetworkState {
    pub fn initial(init: &PilotInit, config: &SystemConfig) -> Self {
        Self { detector: DetectorState::zeros(config), estimate: init.estimate.clone(), paths: init.paths.clone() }
    }
}

/// Pilot grids with hard decisions of `x_soft` filled into the data rows
/// (elements with a zero soft estimate stay zero).
pub fn reference_grids(
    frame: &ReceivedFrame,
    x_soft: &[ResourceGrid],
    constellation: &Constellation,
) -> Vec<ResourceGrid> {
    frame
        .pilots
        .iter()
        .zip(x_soft)
        .map(|(p, x)| {
            let mut g = p.clone();
            for &m in &frame.layout.data_rows {
                for n in 0..g.subcarriers() {
                    let v = x.get(m, n);
                    if v.norm() >= GUARD {
                        g.set(m, n, constellation.project(v));
                    }
                }
            }
            g
        })
        .collect()
}

/// Matches new detections to old entries within one range bin and one
/// velocity bin (closest old entry first, in detection order).
fn match_entries(old: &SensingEstimate, new: &SensingEstimate, config: &SystemConfig) -> Vec<Option<usize>> {
    let (wr, wv) = (config.range_bin_m(), config.velocity_bin_m_s());
    let mut used = vec![false; old.len()];
    (0..new.len())
        .map(|j| {
            let (r, v) = (new.ranges_m[j], new.velocities_m_s[j]);
            let best = (0..old.len())
                .filter(|&i| {
                    !used[i] && (old.ranges_m[i] - r).abs() <= wr && (old.velocities_m_s[i] - v).abs() <= wv
                })
                .min_by(|&a, &b| {
                    let da = (old.ranges_m[a] - r).abs() / wr + (old.velocities_m_s[a] - v).abs() / wv;
                    let db = (old.ranges_m[b] - r).abs() / wr + (old.velocities_m_s[b] - v).abs() / wv;
                    da.total_cmp(&db)
                });
            if let Some(i) = best {
                used[i] = true;
            }
            best
        })
        .collect()
}

/// Range/velocity memory blend. Returns the blended estimate and, per
/// entry, the old entry it came from.
fn blend_estimates(
    old: &SensingEstimate,
    new: &SensingEstimate,
    eta4: f64,
    config: &SystemConfig,
) -> (SensingEstimate, Vec<Option<usize>>) {
    let matches = match_entries(old, new, config);
    let mut out = SensingEstimate::default();
    let mut origin = Vec::new();
    for (j, m) in matches.iter().enumerate() {
        let mut d = new.get(j);
        if let Some(i) = *m {
            d.range_m = eta4 * old.ranges_m[i] + (1.0 - eta4) * d.range_m;
            d.velocity_m_s = eta4 * old.velocities_m_s[i] + (1.0 - eta4) * d.velocity_m_s;
        }
        out.push(d);
        origin.push(*m);
    }
    if eta4 > 0.5 {
        for i in 0..old.len() {
            if out.len() >= DETECTION_CAP {
                break;
            }
            if !matches.contains(&Some(i)) {
                out.push(old.get(i));
                origin.push(Some(i));
            }
        }
    }
    (out, origin)
}

/// One layer of the network.
pub fn layer_forward(
    state: &NetworkState,
    frame: &ReceivedFrame,
    params: &LayerParams,
    constellation: &Constellation,
    config: &SystemConfig,
) -> Result<NetworkState> {
    let detector = damp_step(
        &state.detector,
        &frame.rx,
        &state.paths,
        &frame.layout.data_rows,
        params.eta1,
        params.eta2,
        DETECTOR_NORMALIZATION,
        config,
    )?;
    let x_ref = reference_grids(frame, &detector.x_estimate, constellation);
    let outcome = detect_targets(&frame.rx, &x_ref, params.eta3, config, &state.paths)?;
    let (estimate, origin) = blend_estimates(&state.estimate, &outcome.estimate, params.eta4, config);
    let mut paths = reconstruct_fitted(&estimate, &frame.rx, &x_ref, config)?;
    for (p, o) in paths.iter_mut().zip(&origin) {
        if let Some(prev) = o.and_then(|i| state.paths.get(i)) {
            p.complex_gain = params.eta5 * prev.complex_gain + p.complex_gain;
        }
    }
    Ok(NetworkState { detector, estimate, paths })
}

/// Per-layer snapshot kept for convergence traces.
#[derive(Debug, Clone)]
pub struct LayerSnapshot {
    pub hard: Vec<Vec<usize>>,
    pub estimate: SensingEstimate,
    pub residual_energy: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkOutput {
    /// Final hard decisions, per antenna, row-major over data rows.
    pub hard: Vec<Vec<usize>>,
    pub estimate: SensingEstimate,
    pub trace: Vec<LayerSnapshot>,
    pub state: NetworkState,
}

fn snapshot(state: &NetworkState, layout: &FrameLayout, constellation: &Constellation) -> LayerSnapshot {
    LayerSnapshot {
        hard: hard_decisions(&state.detector.x_estimate, &layout.data_rows, constellation),
        estimate: state.estimate.clone(),
        residual_energy: state.detector.residual_energy(),
    }
}

pub fn network_forward(
    frame: &ReceivedFrame,
    init: &PilotInit,
    params: &NetworkParams,
    config: &SystemConfig,
) -> Result<NetworkOutput> {
    params.validate()?;
    let constellation = Constellation::new(config.qam_order)?;
    let mut state = NetworkState::initial(init, config);
    let mut trace = Vec::with_capacity(params.depth());
    for layer in &params.layers {
        state = layer_forward(&state, frame, layer, &constellation, config)?;
        trace.push(snapshot(&state, &frame.layout, &constellation));
    }
    let last = trace.last().expect("at least one layer");
    Ok(NetworkOutput { hard: last.hard.clone(), estimate: state.estimate.clone(), trace, state })
}

/// The receiver without learned parameters: plain detector steps, a fixed
/// threshold of 0.5, and no memory between iterations.
pub fn iterative_receiver(
    frame: &ReceivedFrame,
    init: &PilotInit,
    iterations: usize,
    config: &SystemConfig,
) -> Result<NetworkOutput> {
    if iterations == 0 {
        return Err(precondition("iterative_receiver: at least one iteration"));
    }
    let constellation = Constellation::new(config.qam_order)?;
    let mut state = NetworkState::initial(init, config);
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let detector = damp_step(
            &state.detector,
            &frame.rx,
            &state.paths,
            &frame.layout.data_rows,
            1.0,
            0.0,
            DETECTOR_NORMALIZATION,
            config,
        )?;
        let x_ref = reference_grids(frame, &detector.x_estimate, &constellation);
        let outcome = detect_targets(&frame.rx, &x_ref, DEFAULT_THRESHOLD, config, &state.paths)?;
        let paths = reconstruct_fitted(&outcome.estimate, &frame.rx, &x_ref, config)?;
        state = NetworkState { detector, estimate: outcome.estimate, paths };
        trace.push(snapshot(&state, &frame.layout, &constellation));
    }
    let last = trace.last().expect("at least one iteration");
    Ok(NetworkOutput { hard: last.hard.clone(), estimate: state.estimate.clone(), trace, state })
}

/// Training objective: `λ·SER + (1 − λ)·(Γ_r + Γ_v)/2`, where misses and
/// detections without a target each add [`MISS_PENALTY`] to both Γ sums.
pub fn loss(
    hard: &[Vec<usize>],
    truth: &[Vec<usize>],
    estimate: &SensingEstimate,
    targets: &[Target],
    lambda: f64,
) -> f64 {
    let (e, n) = metrics::symbol_errors(hard, truth);
    let ser = metrics::ratio(e, n);
    let s = metrics::sensing_error(estimate, targets);
    let denom = targets.len().max(1) as f64;
    let extra = s.false_alarms as f64 * MISS_PENALTY / denom;
    let gr = s.nmse_range + extra;
    let gv = s.nmse_velocity + extra;
    lambda * ser + (1.0 - lambda) * 0.5 * (gr + gv)
}

/// A training example: what the receiver sees plus the truth.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub frame: ReceivedFrame,
    pub init: PilotInit,
    pub true_symbols: Vec<Vec<usize>>,
    pub targets: Vec<Target>,
}

pub trait SceneSampler: Sync {
    fn config(&self) -> &SystemConfig;
    fn sample(&self, seed: u64) -> Result<TrainingExample>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    /// Weight of SER in the loss.
    pub lambda: f64,
    pub validation_size: usize,
    /// Per-coordinate cap on one update.
    pub max_update: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 8, step_size: 0.02, lambda: 0.5, validation_size: 8, max_update: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: NetworkParams,
    /// Validation loss of the initial parameters followed by the running
    /// minimum after every epoch.
    pub history: Vec<f64>,
}

fn project(theta: &mut [f64]) {
    for (i, v) in theta.iter_mut().enumerate() {
        match i % 5 {
            2 => *v = v.clamp(ETA3_MIN, 1.0),
            3 => *v = v.clamp(0.0, 1.0),
            _ => {}
        }
    }
}

fn example_loss(ex: &TrainingExample, params: &NetworkParams, config: &SystemConfig, lambda: f64) -> Result<f64> {
    let out = network_forward(&ex.frame, &ex.init, params, config)?;
    Ok(loss(&out.hard, &ex.true_symbols, &out.estimate, &ex.targets, lambda))
}

/// Mean loss over examples, evaluated concurrently and summed in order.
pub fn batch_loss(examples: &[TrainingExample], params: &NetworkParams, config: &SystemConfig, lambda: f64) -> Result<f64> {
    #[cfg(feature = "parallel")]
    let losses: Vec<Result<f64>> = {
        use rayon::prelude::*;
        examples.par_iter().map(|ex| example_loss(ex, params, config, lambda)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let losses: Vec<Result<f64>> = examples.iter().map(|ex| example_loss(ex, params, config, lambda)).collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len().max(1) as f64)
}

fn draw_examples<S: SceneSampler + ?Sized, R: Rng + ?Sized>(
    sampler: &S,
    count: usize,
    rng: &mut R,
) -> Result<Vec<TrainingExample>> {
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    seeds.into_iter().map(|s| sampler.sample(s)).collect()
}

/// Simultaneous-perturbation training. Each epoch perturbs all 5K scalars
/// by `±δ` (Rademacher signs, `δ = 0.05|θ| + 0.01`), evaluates the loss on a
/// fresh batch at both points, and steps against the gradient estimate.
/// The returned parameters are the ones with the lowest validation loss
/// seen, the initial ones included. Training starts from whichever of
/// `initial` and the untrained defaults scores lower on the validation set.
pub fn train<S: SceneSampler + ?Sized, R: Rng + ?Sized>(
    initial: &NetworkParams,
    sampler: &S,
    options: &TrainOptions,
    rng: &mut R,
) -> Result<TrainReport> {
    train_with_progress(initial, sampler, options, rng, |_, _| {})
}

pub fn train_with_progress<S: SceneSampler + ?Sized, R: Rng + ?Sized>(
    initial: &NetworkParams,
    sampler: &S,
    options: &TrainOptions,
    rng: &mut R,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if options.epochs == 0 {
        return Err(precondition("train: epochs must be at least 1"));
    }
    if options.batch_size == 0 || options.validation_size == 0 {
        return Err(Error::Precondition("train: degenerate sampler batch".into()));
    }
    initial.validate()?;
    let config = sampler.config().clone();
    let snr = initial.snr_key_db;
    let validation = draw_examples(sampler, options.validation_size, rng)?;
    // A warm start from another SNR can be worse than the plain loop here.
    let mut best = initial.clone();
    let mut best_loss = batch_loss(&validation, initial, &config, options.lambda)?;
    let defaults = NetworkParams::untrained(initial.depth(), snr);
    if defaults != *initial {
        let l = batch_loss(&validation, &defaults, &config, options.lambda)?;
        if l < best_loss {
            best_loss = l;
            best = defaults;
        }
    }
    let mut theta = best.to_vector();
    let mut history = vec![best_loss];
    for epoch in 0..options.epochs {
        let batch = draw_examples(sampler, options.batch_size, rng)?;
        let signs: Vec<f64> = theta.iter().map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let deltas: Vec<f64> = theta.iter().map(|t| 0.05 * t.abs() + 0.01).collect();
        let mut plus: Vec<f64> = theta.iter().zip(&signs).zip(&deltas).map(|((t, s), d)| t + s * d).collect();
        let mut minus: Vec<f64> = theta.iter().zip(&signs).zip(&deltas).map(|((t, s), d)| t - s * d).collect();
        project(&mut plus);
        project(&mut minus);
        let lp = batch_loss(&batch, &NetworkParams::from_vector(&plus, snr), &config, options.lambda)?;
        let lm = batch_loss(&batch, &NetworkParams::from_vector(&minus, snr), &config, options.lambda)?;
        for i in 0..theta.len() {
            let g = (lp - lm) / (2.0 * deltas[i] * signs[i]);
            theta[i] -= (options.step_size * g).clamp(-options.max_update, options.max_update);
        }
        project(&mut theta);
        let candidate = NetworkParams::from_vector(&theta, snr);
        let l = batch_loss(&validation, &candidate, &config, options.lambda)?;
        if l < best_loss {
            best_loss = l;
            best = candidate;
        }
        history.push(best_loss);
        progress(epoch, best_loss);
    }
    Ok(TrainReport { params: best, history })
}
