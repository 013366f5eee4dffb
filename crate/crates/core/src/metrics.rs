//! Error rates and normalized estimation errors.

use crate::channel::Target;
use crate::sensing::SensingEstimate;
use crate::waveform::Constellation;

/// Penalty contributed by a missed target (and, in the training loss, by a
/// detection with no target).
pub const MISS_PENALTY: f64 = 1.0;

/// One-to-one assignment of detections to true targets by bistatic range:
/// repeatedly pair the closest remaining (target, detection). Returns, per
/// true target, the index of its detection.
pub fn match_targets(estimated_ranges: &[f64], true_ranges: &[f64]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = true_ranges
        .iter()
        .enumerate()
        .flat_map(|(t, &r)| estimated_ranges.iter().enumerate().map(move |(d, &e)| ((e - r).abs(), t, d)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; true_ranges.len()];
    let mut used = vec![false; estimated_ranges.len()];
    for (_, t, d) in pairs {
        if out[t].is_none() && !used[d] {
            out[t] = Some(d);
            used[d] = true;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingError {
    pub nmse_range: f64,
    pub nmse_velocity: f64,
    pub misses: usize,
    pub false_alarms: usize,
}

/// Γ_r = mean |r̂ − r|² / r² and Γ_v likewise over the true targets, with
/// misses contributing [`MISS_PENALTY`]. Targets with zero radial speed are
/// left out of Γ_v (the ratio is undefined for them).
pub fn sensing_error(estimate: &SensingEstimate, targets: &[Target]) -> SensingError {
    let truth_r: Vec<f64> = targets.iter().map(|t| t.bistatic_range_m).collect();
    let assignment = match_targets(&estimate.ranges_m, &truth_r);
    let (mut sum_r, mut sum_v, mut count_v, mut misses) = (0.0, 0.0, 0usize, 0usize);
    for (t, a) in targets.iter().zip(&assignment) {
        let moving = t.radial_speed_m_s != 0.0;
        match a {
            Some(d) => {
                let r = t.bistatic_range_m;
                sum_r += (estimate.ranges_m[*d] - r).powi(2) / (r * r);
                if moving {
                    let v = t.radial_speed_m_s;
                    sum_v += (estimate.velocities_m_s[*d] - v).powi(2) / (v * v);
                }
            }
            None => {
                misses += 1;
                sum_r += MISS_PENALTY;
                if moving {
                    sum_v += MISS_PENALTY;
                }
            }
        }
        if moving {
            count_v += 1;
        }
    }
    let matched = assignment.iter().filter(|a| a.is_some()).count();
    SensingError {
        nmse_range: if targets.is_empty() { 0.0 } else { sum_r / targets.len() as f64 },
        nmse_velocity: if count_v == 0 { 0.0 } else { sum_v / count_v as f64 },
        misses,
        false_alarms: estimate.len() - matched,
    }
}

/// (symbol errors, symbols) over per-antenna index vectors.
pub fn symbol_errors(hard: &[Vec<usize>], truth: &[Vec<usize>]) -> (usize, usize) {
    let mut errors = 0;
    let mut total = 0;
    for (h, t) in hard.iter().zip(truth) {
        errors += h.iter().zip(t).filter(|(a, b)| a != b).count();
        total += t.len();
    }
    (errors, total)
}

/// (bit errors, bits) over per-antenna index vectors.
pub fn bit_errors(hard: &[Vec<usize>], truth: &[Vec<usize>], constellation: &Constellation) -> (usize, usize) {
    let k = constellation.bits_per_symbol();
    let mut errors = 0;
    let mut total = 0;
    for (h, t) in hard.iter().zip(truth) {
        errors += h.iter().zip(t).map(|(a, b)| (a ^ b).count_ones() as usize).sum::<usize>();
        total += t.len() * k;
    }
    (errors, total)
}

pub fn ratio(errors: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        errors as f64 / total as f64
    }
}
