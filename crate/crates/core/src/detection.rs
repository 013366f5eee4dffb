//! Data symbol recovery: the damped iterative detector and per-element
//! baselines (zero-forcing and exhaustive maximum likelihood).
//!
//! The iterative detector works element by element on the composite
//! channel `H(m, n) = Σ_l g_l h_φ,l(m, n) d_r,l d_t,l^H`:
//!
//! ```text
//! X ← η₁ X + P Hᴴ Z
//! Z ← η₂ Z + Y − H X
//! ```
//!
//! The residual update uses the freshly updated X, so with η₁ = 1, η₂ = 0 the
//! pair is a preconditioned Landweber iteration. The default preconditioner
//! whitens the step, `P Hᴴ = (HᴴH)⁻¹Hᴴ`, so a step from X = 0 with residual Y
//! lands on the zero-forcing solution. With column normalization the
//! preconditioner is `P = diag(1 / (c_i² σ²))`, where `c_i` are the column
//! norms of H and σ is the spectral norm of the column-normalized H: the
//! normalized operator has unit spectral norm.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{check_grids, ChannelOperator, PathChannel};
use crate::config::SystemConfig;
use crate::error::{precondition, Result};
use crate::grid::ResourceGrid;
use crate::waveform::Constellation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Plain adjoint step.
    None,
    /// Column-normalized, unit spectral norm.
    #[default]
    Column,
    /// Whitened by the per-element Gram matrix: the step is
    /// `(HᴴH)⁻¹ Hᴴ Z`, so every singular value of the normalized operator
    /// is one.
    Whitened,
}

/// Normalization used by the receivers.
pub const DETECTOR_NORMALIZATION: Normalization = Normalization::Whitened;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    /// Soft transmit estimate, one grid per transmit antenna (data rows only
    /// are updated).
    pub x_estimate: Vec<ResourceGrid>,
    /// Residual, one grid per receive antenna.
    pub residual: Vec<ResourceGrid>,
    /// Number of the next iteration, starting at 1.
    pub iteration: usize,
}

impl DetectorState {
    pub fn zeros(config: &SystemConfig) -> Self {
        let (m, n) = (config.num_symbols, config.num_subcarriers);
        Self {
            x_estimate: (0..config.num_tx_antennas).map(|i| ResourceGrid::zeros(m, n, i)).collect(),
            residual: (0..config.num_rx_antennas).map(|k| ResourceGrid::zeros(m, n, k)).collect(),
            iteration: 1,
        }
    }

    pub fn residual_energy(&self) -> f64 {
        self.residual.iter().map(|g| g.energy()).sum()
    }
}

/// Largest eigenvalue of a Hermitian matrix with unit diagonal.
fn lambda_max_unit_diag(g: &[Complex64], n: usize) -> f64 {
    match n {
        1 => 1.0,
        2 => 1.0 + g[1].norm(),
        _ => {
            let m = DMatrix::from_row_slice(n, n, g);
            m.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Per-column step sizes for one composite channel (row-major N_r x N_t).
fn column_steps(h: &[Complex64], n_rx: usize, n_tx: usize, mode: Normalization, out: &mut [f64]) {
    if mode == Normalization::None {
        out.iter_mut().for_each(|p| *p = 1.0);
        return;
    }
    let norms: Vec<f64> =
        (0..n_tx).map(|i| (0..n_rx).map(|k| h[k * n_tx + i].norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut gram = vec![Complex64::new(0.0, 0.0); n_tx * n_tx];
    for a in 0..n_tx {
        for b in 0..n_tx {
            if a == b {
                gram[a * n_tx + b] = Complex64::new(if norms[a] > 0.0 { 1.0 } else { 0.0 }, 0.0);
            } else if norms[a] > 0.0 && norms[b] > 0.0 {
                let s: Complex64 = (0..n_rx).map(|k| h[k * n_tx + a].conj() * h[k * n_tx + b]).sum();
                gram[a * n_tx + b] = s / (norms[a] * norms[b]);
            }
        }
    }
    let sigma2 = lambda_max_unit_diag(&gram, n_tx);
    for i in 0..n_tx {
        out[i] = if norms[i] > 0.0 && sigma2 > 0.0 { 1.0 / (norms[i] * norms[i] * sigma2) } else { 0.0 };
    }
}

/// Replaces `grad` (= Hᴴ z) by `(HᴴH)⁻¹ Hᴴ z`, with the same singular-channel
/// fallback as zero-forcing.
fn whitened_step(h: &[Complex64], n_rx: usize, n_tx: usize, grad: &mut [Complex64]) {
    let hm = DMatrix::from_row_slice(n_rx, n_tx, h);
    let gram = hm.adjoint() * &hm;
    let trace: f64 = (0..n_tx).map(|i| gram[(i, i)].re).sum();
    let rhs = DVector::from_column_slice(grad);
    let d = zf_solve(&gram, &rhs, trace);
    grad.copy_from_slice(d.as_slice());
}

/// One iteration on the given symbol rows.
#[allow(clippy::too_many_arguments)]
pub fn damp_step(
    state: &DetectorState,
    rx: &[ResourceGrid],
    paths: &[PathChannel],
    rows: &[usize],
    eta1: f64,
    eta2: f64,
    normalization: Normalization,
    config: &SystemConfig,
) -> Result<DetectorState> {
    let (n_tx, n_rx) = (config.num_tx_antennas, config.num_rx_antennas);
    let (m_len, n_len) = (config.num_symbols, config.num_subcarriers);
    check_grids(rx, n_rx, m_len, n_len)?;
    check_grids(&state.x_estimate, n_tx, m_len, n_len)?;
    check_grids(&state.residual, n_rx, m_len, n_len)?;
    let op = ChannelOperator::new(paths, config);
    let mut next = state.clone();
    next.iteration += 1;
    let mut h = vec![Complex64::new(0.0, 0.0); n_rx * n_tx];
    let mut p = vec![0.0; n_tx];
    let mut grad = vec![Complex64::new(0.0, 0.0); n_tx];
    let mut x = vec![Complex64::new(0.0, 0.0); n_tx];
    for &m in rows {
        for n in 0..n_len {
            op.composite_into(m, n, &mut h);
            for (i, g) in grad.iter_mut().enumerate() {
                *g = (0..n_rx).map(|k| h[k * n_tx + i].conj() * state.residual[k].get(m, n)).sum();
            }
            if normalization == Normalization::Whitened {
                whitened_step(&h, n_rx, n_tx, &mut grad);
            } else {
                column_steps(&h, n_rx, n_tx, normalization, &mut p);
                grad.iter_mut().zip(&p).for_each(|(g, p)| *g *= *p);
            }
            for i in 0..n_tx {
                x[i] = eta1 * state.x_estimate[i].get(m, n) + grad[i];
                next.x_estimate[i].set(m, n, x[i]);
            }
            for k in 0..n_rx {
                let hx: Complex64 = (0..n_tx).map(|i| h[k * n_tx + i] * x[i]).sum();
                let z = eta2 * state.residual[k].get(m, n) + (rx[k].get(m, n) - hx);
                next.residual[k].set(m, n, z);
            }
        }
    }
    Ok(next)
}

/// Hard decisions (constellation indices), per antenna, row-major over `rows`.
pub fn hard_decisions(x: &[ResourceGrid], rows: &[usize], constellation: &Constellation) -> Vec<Vec<usize>> {
    x.iter()
        .map(|g| rows.iter().flat_map(|&m| g.row(m).iter().map(|&v| constellation.nearest(v))).collect())
        .collect()
}

/// Runs `K` iterations from the zero state with the default normalization.
#[allow(clippy::too_many_arguments)]
pub fn damp_detect(
    rx: &[ResourceGrid],
    paths: &[PathChannel],
    rows: &[usize],
    k: usize,
    eta1_seq: &[f64],
    eta2_seq: &[f64],
    constellation: &Constellation,
    config: &SystemConfig,
) -> Result<(Vec<ResourceGrid>, Vec<Vec<usize>>)> {
    if k == 0 {
        return Err(precondition("damp_detect: K must be at least 1"));
    }
    if eta1_seq.len() != k || eta2_seq.len() != k {
        return Err(precondition("damp_detect: parameter sequences must have length K"));
    }
    let mut state = DetectorState::zeros(config);
    for t in 0..k {
        state = damp_step(&state, rx, paths, rows, eta1_seq[t], eta2_seq[t], DETECTOR_NORMALIZATION, config)?;
    }
    let hard = hard_decisions(&state.x_estimate, rows, constellation);
    Ok((state.x_estimate, hard))
}

/// Zero-forcing equalization per element followed by nearest-symbol decisions.
/// A numerically singular channel falls back to a ridge of 1e-6 relative to
/// its mean column energy.
pub fn conventional_detect(
    rx: &[ResourceGrid],
    paths: &[PathChannel],
    rows: &[usize],
    constellation: &Constellation,
    config: &SystemConfig,
) -> Result<Vec<Vec<usize>>> {
    let op = ChannelOperator::new(paths, config);
    zf_detect_with(rx, rows, constellation, config, |m, n, h| op.composite_into(m, n, h))
}

/// Zero-forcing with a caller-supplied per-element channel, written
/// row-major (N_r x N_t) into the buffer.
pub fn zf_detect_with(
    rx: &[ResourceGrid],
    rows: &[usize],
    constellation: &Constellation,
    config: &SystemConfig,
    channel: impl Fn(usize, usize, &mut [Complex64]),
) -> Result<Vec<Vec<usize>>> {
    let (n_tx, n_rx) = (config.num_tx_antennas, config.num_rx_antennas);
    if n_rx < n_tx {
        return Err(precondition("conventional_detect: needs N_r >= N_t"));
    }
    check_grids(rx, n_rx, config.num_symbols, config.num_subcarriers)?;
    let mut out = vec![Vec::with_capacity(rows.len() * config.num_subcarriers); n_tx];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_rx * n_tx];
    for &m in rows {
        for n in 0..config.num_subcarriers {
            channel(m, n, &mut buf);
            let h = DMatrix::from_row_slice(n_rx, n_tx, &buf);
            let y = DVector::from_iterator(n_rx, rx.iter().map(|g| g.get(m, n)));
            let hh = h.adjoint();
            let gram = &hh * &h;
            let rhs = &hh * y;
            let trace: f64 = (0..n_tx).map(|i| gram[(i, i)].re).sum();
            let x = zf_solve(&gram, &rhs, trace);
            for i in 0..n_tx {
                out[i].push(constellation.nearest(x[i]));
            }
        }
    }
    Ok(out)
}

pub(crate) fn zf_solve(gram: &DMatrix<Complex64>, rhs: &DVector<Complex64>, trace: f64) -> DVector<Complex64> {
    let n = gram.nrows();
    if !(trace > 0.0) {
        return DVector::zeros(n);
    }
    let well_posed = gram.clone().cholesky().filter(|c| {
        let l = c.l_dirty();
        (0..n).all(|i| l[(i, i)].norm_sqr() >= 1e-12 * trace / n as f64)
    });
    if let Some(c) = well_posed {
        return c.solve(rhs);
    }
    let mut g = gram.clone();
    let ridge = 1e-6 * trace / n as f64;
    for i in 0..n {
        g[(i, i)] += Complex64::new(ridge, 0.0);
    }
    g.lu().solve(rhs).unwrap_or_else(|| DVector::zeros(n))
}

/// Largest `order^N_t` searched by [`ml_detect`].
pub const ML_MAX_CANDIDATES: usize = 4096;

/// Exhaustive maximum-likelihood detection per element. Ties go to the
/// candidate whose per-antenna indices come first lexicographically.
pub fn ml_detect(
    rx: &[ResourceGrid],
    paths: &[PathChannel],
    rows: &[usize],
    constellation: &Constellation,
    config: &SystemConfig,
) -> Result<Vec<Vec<usize>>> {
    let n_tx = config.num_tx_antennas;
    let order = constellation.order() as usize;
    let total = order.checked_pow(n_tx as u32).filter(|&t| t <= ML_MAX_CANDIDATES);
    let Some(total) = total else {
        return Err(precondition("ml_detect: search space too large"));
    };
    check_grids(rx, config.num_rx_antennas, config.num_symbols, config.num_subcarriers)?;
    let op = ChannelOperator::new(paths, config);
    let pts = constellation.points();
    let n_rx = config.num_rx_antennas;
    let mut out = vec![Vec::with_capacity(rows.len() * config.num_subcarriers); n_tx];
    let mut h = vec![Complex64::new(0.0, 0.0); n_rx * n_tx];
    // images[(i * order + s) * n_rx + k] = H[k, i] * point s
    let mut images = vec![Complex64::new(0.0, 0.0); n_tx * order * n_rx];
    let mut r = vec![Complex64::new(0.0, 0.0); n_rx];
    let mut idx = vec![0usize; n_tx];
    for &m in rows {
        for n in 0..config.num_subcarriers {
            op.composite_into(m, n, &mut h);
            for i in 0..n_tx {
                for (s, &p) in pts.iter().enumerate() {
                    for k in 0..n_rx {
                        images[(i * order + s) * n_rx + k] = h[k * n_tx + i] * p;
                    }
                }
            }
            let mut best = (f64::INFINITY, 0usize);
            for cand in 0..total {
                let mut c = cand;
                for i in (0..n_tx).rev() {
                    idx[i] = c % order;
                    c /= order;
                }
                for (k, v) in r.iter_mut().enumerate() {
                    *v = rx[k].get(m, n);
                }
                for i in 0..n_tx {
                    let base = (i * order + idx[i]) * n_rx;
                    for k in 0..n_rx {
                        r[k] -= images[base + k];
                    }
                }
                let d: f64 = r.iter().map(|v| v.norm_sqr()).sum();
                if d < best.0 {
                    best = (d, cand);
                }
            }
            let mut c = best.1;
            for i in (0..n_tx).rev() {
                idx[i] = c % order;
                c /= order;
            }
            for i in 0..n_tx {
                out[i].push(idx[i]);
            }
        }
    }
    Ok(out)
}
