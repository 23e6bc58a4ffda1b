//! First-arrival time extraction from FMC traces.
//!
//! The pickers target the wavefront onset: the threshold method finds the
//! first envelope excursion above a relative threshold and refines it to the
//! preceding zero crossing of the raw trace, so a clean toneburst arriving
//! at `t` picks at `t` plus a fixed waveform-dependent offset. That offset
//! is removed by the `delay_correction` parameter, normally calibrated by
//! picking the transmitted burst itself ([`auto_delay_correction`]).
//!
//! A rolling-mean high-pass is available as a pre-filter for traces with
//! low-frequency baseline artefacts.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::arrival::{ArrivalMatrix, Provenance};
use crate::wave::{FmcData, Toneburst};

#[derive(Debug, Error)]
pub enum PickError {
    #[error("rolling-mean window must span at least 2 samples, got {0}")]
    WindowTooShort(usize),
    #[error("trace contains non-finite samples")]
    NonFinite,
}

/// Picking algorithm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickMethod {
    /// First envelope sample above `threshold * max`, refined to the
    /// preceding zero crossing of the raw trace.
    Threshold,
    /// First raw-amplitude excursion above `threshold * max|x|`, refined to
    /// the preceding zero crossing.
    ZeroCrossing,
    /// Earliest local maximum of windowed energy above the threshold; picks
    /// near the burst energy centroid rather than the onset.
    MovingMax,
}

#[derive(Debug, Clone)]
pub struct PickParams {
    pub method: PickMethod,
    /// Relative threshold η in (0, 1).
    pub threshold: f64,
    /// Energy window for [`PickMethod::MovingMax`], seconds.
    pub energy_window: f64,
    /// Fixed offset subtracted from every pick (picker delay convention).
    pub delay_correction: f64,
}

impl Default for PickParams {
    fn default() -> Self {
        Self {
            method: PickMethod::Threshold,
            threshold: 0.2,
            energy_window: 5.0e-6,
            delay_correction: 0.0,
        }
    }
}

/// A successful pick: time relative to the trace origin, with a heuristic
/// confidence in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub tau: f64,
    pub confidence: f64,
}

/// Remove a centred rolling mean (edge-truncated) from the trace.
pub fn rolling_mean_highpass(trace: &[f32], dt: f64, window: f64) -> Result<Vec<f32>, PickError> {
    let half = ((window / dt) / 2.0).round() as usize;
    if 2 * half + 1 < 2 {
        return Err(PickError::WindowTooShort(2 * half + 1));
    }
    let n = trace.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for &v in trace {
        prefix.push(prefix.last().unwrap() + v as f64);
    }
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            (trace[i] as f64 - mean) as f32
        })
        .collect())
}

/// Envelope by the magnitude of the analytic signal (spectral one-sided
/// doubling).
pub fn envelope(trace: &[f32]) -> Vec<f64> {
    let n = trace.len();
    if n == 0 {
        return Vec::new();
    }
    let m = n.next_power_of_two();
    let mut planner = FftPlanner::new();
    envelope_with(trace, &planner.plan_fft_forward(m), &planner.plan_fft_inverse(m))
}

fn envelope_with(trace: &[f32], fwd: &Arc<dyn Fft<f64>>, inv: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let n = trace.len();
    let m = fwd.len();
    let mut buf: Vec<Complex<f64>> = trace
        .iter()
        .map(|&v| Complex::new(v as f64, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    fwd.process(&mut buf);
    // one-sided doubling: keep DC and Nyquist, double positive, zero negative
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || (m % 2 == 0 && k == m / 2) {
            continue;
        } else if k < m / 2 + m % 2 {
            *v *= 2.0;
        } else {
            *v = Complex::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    buf[..n].iter().map(|z| z.norm() / m as f64).collect()
}

/// Pick the first arrival of one trace. Returns `None` when there is nothing
/// above the threshold (masked pick, confidence 0).
pub fn pick_first_arrival(trace: &[f32], dt: f64, params: &PickParams) -> Option<Pick> {
    if trace.iter().any(|v| !v.is_finite()) {
        return None;
    }
    match params.method {
        PickMethod::Threshold => {
            let env = envelope(trace);
            pick_threshold(trace, &env, dt, params)
        }
        PickMethod::ZeroCrossing => {
            let env: Vec<f64> = trace.iter().map(|&v| (v as f64).abs()).collect();
            pick_threshold(trace, &env, dt, params)
        }
        PickMethod::MovingMax => pick_moving_max(trace, dt, params),
    }
}

fn pick_threshold(trace: &[f32], env: &[f64], dt: f64, params: &PickParams) -> Option<Pick> {
    let max = env.iter().cloned().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let thresh = params.threshold * max;
    let k0 = env.iter().position(|&v| v >= thresh)?;
    // Refine to the zero crossing of the raw trace immediately before k0,
    // searching only while the envelope stays on the coherent rise (a
    // quarter of the threshold level); an unbounded walk can slide down a
    // broad leading lobe into precursor noise.
    let floor = 0.25 * thresh;
    let mut tau = None;
    let mut j = k0;
    while j >= 1 && env[j] >= floor {
        let a = trace[j - 1] as f64;
        let b = trace[j] as f64;
        if a == 0.0 || a.signum() != b.signum() {
            let frac = if (b - a).abs() > 0.0 { -a / (b - a) } else { 0.0 };
            tau = Some((j as f64 - 1.0 + frac.clamp(0.0, 1.0)) * dt);
            break;
        }
        j -= 1;
    }
    // fallback: linear interpolation of the envelope threshold crossing
    let refined = tau.is_some();
    let tau = tau.unwrap_or_else(|| {
        if k0 == 0 {
            return 0.0;
        }
        let a = env[k0 - 1];
        let b = env[k0];
        let frac = if b > a { (thresh - a) / (b - a) } else { 1.0 };
        (k0 as f64 - 1.0 + frac.clamp(0.0, 1.0)) * dt
    });
    let med = median(env);
    let mut confidence = (1.0 - med / max).clamp(0.0, 1.0);
    if !refined {
        confidence *= 0.75;
    }
    Some(Pick {
        tau: tau - params.delay_correction,
        confidence,
    })
}

fn pick_moving_max(trace: &[f32], dt: f64, params: &PickParams) -> Option<Pick> {
    let n = trace.len();
    if n < 3 {
        return None;
    }
    let half = ((params.energy_window / dt) / 2.0).round().max(1.0) as usize;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for &v in trace {
        prefix.push(prefix.last().unwrap() + (v as f64) * (v as f64));
    }
    // fixed-width normalization (zero-padding semantics) so truncated edge
    // windows are not inflated
    let width = (2 * half + 1) as f64;
    let energy: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / width
        })
        .collect();
    let max = energy.iter().cloned().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let thresh = params.threshold * params.threshold * max;
    // earliest window-scale local maximum above threshold (a 3-point test
    // would trip on carrier ripple along the rising edge)
    let k = (0..n).find(|&i| {
        if energy[i] < thresh {
            return false;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        energy[lo..hi].iter().all(|&e| e <= energy[i])
    })?;
    let med = median(&energy);
    Some(Pick {
        tau: k as f64 * dt - params.delay_correction,
        confidence: (1.0 - med / max).clamp(0.0, 1.0),
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        0.0
    } else {
        v[v.len() / 2]
    }
}

/// Systematic pick offset of the configured picker on the clean transmitted
/// burst: picking a trace containing the burst at time zero returns this
/// offset. Subtracting it aligns picks with the wavefront onset.
pub fn auto_delay_correction(burst: &Toneburst, dt: f64, params: &PickParams) -> f64 {
    let n = ((3.0 * burst.duration()) / dt).ceil() as usize;
    let trace: Vec<f32> = (0..n).map(|i| burst.value(i as f64 * dt) as f32).collect();
    let raw = PickParams {
        delay_correction: 0.0,
        ..params.clone()
    };
    pick_first_arrival(&trace, dt, &raw).map_or(0.0, |p| p.tau)
}

/// Systematic pick offset for traces produced by two-sided virtual-array
/// migration. Each delay-and-sum focusing leg in 2D applies a -45° carrier
/// rotation and a 1/sqrt(omega) spectral tilt, so the focused waveform is
/// the burst filtered by `e^{-i pi/2} / omega`; this builds that reference
/// waveform and picks it with the configured picker.
pub fn virtual_reference_correction(burst: &Toneburst, dt: f64, params: &PickParams) -> f64 {
    let n = (((3.0 * burst.duration()) / dt).ceil() as usize).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(burst.value(i as f64 * dt), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    let rot = Complex::new(0.0, -1.0);
    for (k, v) in buf.iter_mut().enumerate() {
        // signed frequency of the bin; the filter is Hermitian so the
        // result stays real
        let fk = if k <= n / 2 {
            k as f64 * df
        } else {
            (k as f64 - n as f64) * df
        };
        if fk == 0.0 {
            *v = Complex::new(0.0, 0.0);
        } else {
            let w = 2.0 * std::f64::consts::PI * fk;
            let h = if fk > 0.0 { rot } else { rot.conj() };
            *v = *v * h / w.abs();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let trace: Vec<f32> = buf.iter().map(|z| (z.re / n as f64) as f32).collect();
    let raw = PickParams {
        delay_correction: 0.0,
        ..params.clone()
    };
    pick_first_arrival(&trace, dt, &raw).map_or(0.0, |p| p.tau)
}

/// Per-matrix picking statistics.
#[derive(Debug, Clone)]
pub struct PickReport {
    pub n_pairs: usize,
    pub n_masked: usize,
    pub mean_confidence: f64,
    /// Set when more than 20 % of the pairs failed to pick.
    pub high_mask_warning: bool,
}

/// Configuration for matrix picking: optional rolling-mean pre-filter plus
/// the per-trace picker parameters.
#[derive(Debug, Clone, Default)]
pub struct PickMatrixConfig {
    pub params: PickParams,
    /// Rolling-mean high-pass window in seconds; 0 disables the filter.
    pub rolling_mean_window: f64,
}

/// Pick every trace of an FMC dataset (parallel across sources).
pub fn pick_matrix(
    fmc: &FmcData,
    config: &PickMatrixConfig,
) -> Result<(ArrivalMatrix, PickReport), PickError> {
    let n_src = fmc.n_src();
    let n_rcv = fmc.n_rcv();
    let dt = fmc.dt();
    let m = fmc.n_t().next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);

    let rows: Result<Vec<Vec<Option<Pick>>>, PickError> = (0..n_src)
        .into_par_iter()
        .map(|i| {
            (0..n_rcv)
                .map(|l| {
                    let trace = fmc.trace(i, l);
                    if trace.iter().any(|v| !v.is_finite()) {
                        return Err(PickError::NonFinite);
                    }
                    let filtered;
                    let trace = if config.rolling_mean_window > 0.0 {
                        filtered =
                            rolling_mean_highpass(trace, dt, config.rolling_mean_window)?;
                        &filtered[..]
                    } else {
                        trace
                    };
                    Ok(match config.params.method {
                        PickMethod::Threshold => {
                            let env = envelope_with(trace, &fwd, &inv);
                            pick_threshold(trace, &env, dt, &config.params)
                        }
                        _ => pick_first_arrival(trace, dt, &config.params),
                    })
                })
                .collect()
        })
        .collect();
    let rows = rows?;

    let mut matrix = ArrivalMatrix::empty(n_src, n_rcv, Provenance::Picked);
    let mut n_masked = 0usize;
    let mut conf_sum = 0.0f64;
    for (i, row) in rows.iter().enumerate() {
        for (l, pick) in row.iter().enumerate() {
            match pick {
                Some(p) if p.tau >= 0.0 => {
                    matrix.set(i, l, fmc.t0() + p.tau);
                    conf_sum += p.confidence;
                }
                _ => n_masked += 1,
            }
        }
    }
    let n_pairs = n_src * n_rcv;
    let n_valid = n_pairs - n_masked;
    let report = PickReport {
        n_pairs,
        n_masked,
        mean_confidence: if n_valid > 0 {
            conf_sum / n_valid as f64
        } else {
            0.0
        },
        high_mask_warning: n_masked as f64 > 0.2 * n_pairs as f64,
    };
    Ok((matrix, report))
}
