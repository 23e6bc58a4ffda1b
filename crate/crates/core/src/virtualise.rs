//! Migration of a physical FMC dataset onto a virtual array.
//!
//! Each virtual transducer on the ROI boundary is synthesized from the
//! physical array by a per-frequency weighted double summation: every
//! physical-to-virtual leg is compensated by a phase advance `e^{i k r}`
//! (undoing the external-region propagation delay), a geometric-spreading
//! factor `sqrt(r)`, a trapezium angular quadrature weight, and an apodized
//! one-sided cardioid directivity `max(cos theta, 0)^n` that restricts
//! illumination to the known external region. Transmission and reception
//! sides use the same construction (reciprocity), so the whole migration is
//! one complex matrix product per side per frequency bin.
//!
//! The homogeneous external-region sound speed sets the wavenumber for every
//! bin; external-region inhomogeneity is not corrected.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::field::{FieldError, TransducerArray};
use crate::geom;
use crate::wave::{FmcData, WaveError};

#[derive(Debug, Error)]
pub enum VirtError {
    #[error("virtual array needs outward normals")]
    MissingNormals,
    #[error("external-region speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("directivity exponent must be >= 1, got {0}")]
    BadExponent(u32),
    #[error("virtual transducer {0} lies outside the physical array hull")]
    VirtualOutsideHull(usize),
    #[error("operator built for {expected} transducers, FMC has {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// Apodized one-sided cardioid directivity: `max(cos theta, 0)^n`.
pub fn directivity(theta: f64, n: u32) -> f64 {
    let c = theta.cos().max(0.0);
    c.powi(n as i32)
}

/// One physical-to-virtual coupling entry.
#[derive(Debug, Clone, Copy)]
pub struct OperatorEntry {
    /// Distance from the physical to the virtual transducer (m).
    pub r: f64,
    /// Angle between the incoming direction and the boundary normal (rad).
    pub theta: f64,
    /// Trapezium angular quadrature weight (rad); 0 outside the illuminated
    /// half-space.
    pub weight: f64,
    /// Directivity value at `theta`.
    pub directivity: f64,
}

/// Geometry-dependent part of the migration: distances, angles, quadrature
/// weights and directivity per (virtual, physical) pair. Frequency enters
/// later through the phase `e^{i k r}`.
#[derive(Debug, Clone)]
pub struct MigrationOperator {
    physical: TransducerArray,
    virtual_array: TransducerArray,
    exponent: u32,
    /// Entries flattened virtual-major: `entries[j * n_physical + i]`.
    entries: Vec<OperatorEntry>,
}

impl MigrationOperator {
    pub fn n_physical(&self) -> usize {
        self.physical.len()
    }
    pub fn n_virtual(&self) -> usize {
        self.virtual_array.len()
    }
    pub fn physical(&self) -> &TransducerArray {
        &self.physical
    }
    pub fn virtual_array(&self) -> &TransducerArray {
        &self.virtual_array
    }
    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    #[inline]
    pub fn entry(&self, j: usize, i: usize) -> &OperatorEntry {
        &self.entries[j * self.physical.len() + i]
    }

    pub fn entries_for(&self, j: usize) -> &[OperatorEntry] {
        let n = self.physical.len();
        &self.entries[j * n..(j + 1) * n]
    }

    /// Sum of angular weights over the illuminated arc for virtual point `j`
    /// (telescopes to the arc's angular extent).
    pub fn weight_sum(&self, j: usize) -> f64 {
        self.entries_for(j).iter().map(|e| e.weight).sum()
    }

    /// CSV dump for debugging: one row per (virtual, physical) pair.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "virtual,physical,r,theta,weight,directivity")?;
        for j in 0..self.n_virtual() {
            for (i, e) in self.entries_for(j).iter().enumerate() {
                writeln!(
                    w,
                    "{j},{i},{:e},{:e},{:e},{:e}",
                    e.r, e.theta, e.weight, e.directivity
                )?;
            }
        }
        Ok(())
    }
}

/// Build the migration operator between a physical array and a virtual array
/// carrying outward normals. `c_er` is unused by the geometry itself but
/// validated here because the operator is meaningless without it.
pub fn build_operator(
    physical: &TransducerArray,
    virtual_array: &TransducerArray,
    c_er: f64,
    exponent: u32,
) -> Result<MigrationOperator, VirtError> {
    if !(c_er > 0.0) {
        return Err(VirtError::BadSpeed(c_er));
    }
    if exponent < 1 {
        return Err(VirtError::BadExponent(exponent));
    }
    let normals = virtual_array.normals().ok_or(VirtError::MissingNormals)?;
    let hull = geom::convex_hull(physical.positions());
    if hull.len() >= 3 {
        for (j, p) in virtual_array.positions().iter().enumerate() {
            if !geom::point_in_polygon(*p, &hull) {
                return Err(VirtError::VirtualOutsideHull(j));
            }
        }
    }

    let n_phys = physical.len();
    let mut entries = vec![
        OperatorEntry {
            r: 0.0,
            theta: 0.0,
            weight: 0.0,
            directivity: 0.0,
        };
        n_phys * virtual_array.len()
    ];
    for (j, (&vp, &nrm)) in virtual_array
        .positions()
        .iter()
        .zip(normals)
        .enumerate()
    {
        // signed azimuth of each incoming direction relative to the normal
        let mut illuminated: Vec<(f64, usize)> = Vec::new();
        for (i, &pp) in physical.positions().iter().enumerate() {
            let d = pp - vp;
            let r = d.norm();
            let phi = nrm.cross(d).atan2(nrm.dot(d));
            let e = &mut entries[j * n_phys + i];
            e.r = r;
            e.theta = phi.abs();
            e.directivity = directivity(phi, exponent);
            if phi.abs() < std::f64::consts::FRAC_PI_2 {
                illuminated.push((phi, i));
            }
        }
        illuminated.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        match illuminated.len() {
            0 => {}
            1 => {
                // degenerate quadrature: a single incoming direction gets
                // unit weight
                entries[j * n_phys + illuminated[0].1].weight = 1.0;
            }
            m => {
                for (k, &(phi, i)) in illuminated.iter().enumerate() {
                    let lo = if k == 0 { phi } else { illuminated[k - 1].0 };
                    let hi = if k + 1 == m { phi } else { illuminated[k + 1].0 };
                    entries[j * n_phys + i].weight = (hi - lo) / 2.0;
                }
            }
        }
    }
    Ok(MigrationOperator {
        physical: physical.clone(),
        virtual_array: virtual_array.clone(),
        exponent,
        entries,
    })
}

/// Apply a cosine ramp tapering the final `fraction` of every trace to zero.
pub fn cosine_taper(fmc: &mut FmcData, fraction: f64) {
    let n_t = fmc.n_t();
    let start = ((1.0 - fraction) * n_t as f64).floor() as usize;
    if start >= n_t {
        return;
    }
    let span = (n_t - start) as f64;
    let ramp: Vec<f32> = (0..n_t - start)
        .map(|k| (0.5 * (1.0 + (std::f64::consts::PI * k as f64 / span).cos())) as f32)
        .collect();
    for s in 0..fmc.n_src() {
        for r in 0..fmc.n_rcv() {
            let tr = fmc.trace_mut(s, r);
            for (k, v) in tr[start..].iter_mut().enumerate() {
                *v *= ramp[k];
            }
        }
    }
}

/// One-sided complex spectra of an FMC dataset, bin-major:
/// `spectra[bin * n_pairs + src * n_rcv + rcv]`.
#[derive(Debug, Clone)]
pub struct SpectralFmc {
    pub n_src: usize,
    pub n_rcv: usize,
    /// FFT length the spectra were computed with.
    pub n_fft: usize,
    /// Number of one-sided bins (`n_fft / 2 + 1`).
    pub n_bins: usize,
    /// Number of lowest bins that were zeroed.
    pub n_zeroed: usize,
    /// Angular frequency of each bin (rad/s).
    pub omega: Vec<f64>,
    pub spectra: Vec<Complex<f64>>,
}

impl SpectralFmc {
    /// Wavenumber of bin `b` in a homogeneous region of speed `c`.
    pub fn wavenumber(&self, b: usize, c: f64) -> f64 {
        self.omega[b] / c
    }

    #[inline]
    pub fn bin(&self, b: usize) -> &[Complex<f64>] {
        let n = self.n_src * self.n_rcv;
        &self.spectra[b * n..(b + 1) * n]
    }
}

/// Forward-transform all traces to one-sided spectra, zeroing the lowest
/// `low_freq_fraction` of the bins (including DC).
pub fn forward_spectra(fmc: &FmcData, low_freq_fraction: f64) -> SpectralFmc {
    let n_t = fmc.n_t();
    let n_fft = n_t.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let n_src = fmc.n_src();
    let n_rcv = fmc.n_rcv();
    let n_pairs = n_src * n_rcv;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);

    let mut spectra = vec![Complex::new(0.0, 0.0); n_bins * n_pairs];
    // per-source chunks computed in parallel, then transposed into bin-major
    let per_src: Vec<Vec<Complex<f64>>> = (0..n_src)
        .into_par_iter()
        .map(|s| {
            let mut out = vec![Complex::new(0.0, 0.0); n_rcv * n_bins];
            let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
            for r in 0..n_rcv {
                let tr = fmc.trace(s, r);
                for (b, v) in buf.iter_mut().enumerate() {
                    *v = if b < n_t {
                        Complex::new(tr[b] as f64, 0.0)
                    } else {
                        Complex::new(0.0, 0.0)
                    };
                }
                fft.process(&mut buf);
                out[r * n_bins..(r + 1) * n_bins].copy_from_slice(&buf[..n_bins]);
            }
            out
        })
        .collect();
    for (s, chunk) in per_src.iter().enumerate() {
        for r in 0..n_rcv {
            for b in 0..n_bins {
                spectra[b * n_pairs + s * n_rcv + r] = chunk[r * n_bins + b];
            }
        }
    }

    let n_zeroed = (low_freq_fraction * n_bins as f64).ceil() as usize;
    for b in 0..n_zeroed.min(n_bins) {
        for v in &mut spectra[b * n_pairs..(b + 1) * n_pairs] {
            *v = Complex::new(0.0, 0.0);
        }
    }
    let df = 1.0 / (n_fft as f64 * fmc.dt());
    let omega = (0..n_bins)
        .map(|b| 2.0 * std::f64::consts::PI * b as f64 * df)
        .collect();
    SpectralFmc {
        n_src,
        n_rcv,
        n_fft,
        n_bins,
        n_zeroed,
        omega,
        spectra,
    }
}

/// Inverse-transform one-sided spectra back to real traces of length `n_t`.
pub fn inverse_spectra(sp: &SpectralFmc, n_t: usize, dt: f64, t0: f64) -> Vec<f32> {
    let n_fft = sp.n_fft;
    let n_pairs = sp.n_src * sp.n_rcv;
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let _ = (dt, t0);
    let traces: Vec<Vec<f32>> = (0..sp.n_src)
        .into_par_iter()
        .map(|s| {
            let mut out = vec![0.0f32; sp.n_rcv * n_t];
            let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
            for r in 0..sp.n_rcv {
                let pair = s * sp.n_rcv + r;
                for b in 0..sp.n_bins {
                    buf[b] = sp.spectra[b * n_pairs + pair];
                }
                // Hermitian mirror for a real signal
                buf[0].im = 0.0;
                if n_fft % 2 == 0 {
                    buf[n_fft / 2].im = 0.0;
                }
                for b in 1..sp.n_bins - 1 {
                    buf[n_fft - b] = buf[b].conj();
                }
                ifft.process(&mut buf);
                for k in 0..n_t {
                    out[r * n_t + k] = (buf[k].re / n_fft as f64) as f32;
                }
            }
            out
        })
        .collect();
    let mut flat = Vec::with_capacity(n_pairs * n_t);
    for t in traces {
        flat.extend_from_slice(&t);
    }
    flat
}

/// Virtualisation configuration.
#[derive(Debug, Clone)]
pub struct VirtualiseConfig {
    /// Homogeneous external-region speed (m/s) used for all wavenumbers.
    pub c_er: f64,
    /// Cosine taper fraction applied to the trace tails before the FFT.
    pub taper_fraction: f64,
    /// Fraction of the lowest frequency bins zeroed after the FFT.
    pub low_freq_fraction: f64,
    /// Per-pair time window: `[0.5 chord / c_max_expected,
    /// 1.5 chord / c_er + burst_duration]`. `None` disables windowing.
    pub window: Option<WindowConfig>,
}

#[derive(Debug, Clone)]
pub struct WindowConfig {
    /// Fastest plausible ROI speed (sets the earliest admissible arrival).
    pub c_max_expected: f64,
    /// Transmitted burst duration (extends the window tail).
    pub burst_duration: f64,
}

impl VirtualiseConfig {
    pub fn new(c_er: f64) -> Self {
        Self {
            c_er,
            taper_fraction: 0.1,
            low_freq_fraction: 0.01,
            window: None,
        }
    }
}

/// Post-run diagnostics.
#[derive(Debug, Clone)]
pub struct VirtualiseReport {
    pub n_bins: usize,
    pub n_zeroed_bins: usize,
    /// Pairs whose time window removed essentially all energy.
    pub window_empty_pairs: usize,
}

/// Migrate a physical FMC dataset to the virtual arrays of the given
/// operators. `transmit` maps sources, `receive` maps receivers (pass `None`
/// to leave the receive side physical, e.g. for single-sided tests).
pub fn virtualise_fmc(
    fmc: &FmcData,
    transmit: &MigrationOperator,
    receive: Option<&MigrationOperator>,
    config: &VirtualiseConfig,
) -> Result<(FmcData, VirtualiseReport), VirtError> {
    if transmit.n_physical() != fmc.n_src() {
        return Err(VirtError::SizeMismatch {
            expected: transmit.n_physical(),
            got: fmc.n_src(),
        });
    }
    if let Some(rx) = receive {
        if rx.n_physical() != fmc.n_rcv() {
            return Err(VirtError::SizeMismatch {
                expected: rx.n_physical(),
                got: fmc.n_rcv(),
            });
        }
    }
    if !(config.c_er > 0.0) {
        return Err(VirtError::BadSpeed(config.c_er));
    }

    // taper, then transform
    let mut tapered = fmc.clone();
    if config.taper_fraction > 0.0 {
        cosine_taper(&mut tapered, config.taper_fraction);
    }
    let sp = forward_spectra(&tapered, config.low_freq_fraction);

    let n_pairs_in = sp.n_src * sp.n_rcv;
    let n_virt_t = transmit.n_virtual();
    let n_virt_r = receive.map_or(fmc.n_rcv(), |rx| rx.n_virtual());
    let n_pairs_out = n_virt_t * n_virt_r;

    // per-bin two-sided product, bins in parallel
    let out_bins: Vec<Vec<Complex<f64>>> = (0..sp.n_bins)
        .into_par_iter()
        .map(|b| {
            let x = &sp.spectra[b * n_pairs_in..(b + 1) * n_pairs_in];
            let mut out = vec![Complex::new(0.0, 0.0); n_pairs_out];
            if b < sp.n_zeroed {
                return out;
            }
            let k_er = sp.omega[b] / config.c_er;
            let wt = weight_matrix(transmit, k_er);
            // T = W_T X : (n_virt_t x n_rcv)
            let n_rcv = sp.n_rcv;
            let mut t = vec![Complex::new(0.0, 0.0); n_virt_t * n_rcv];
            for j in 0..n_virt_t {
                let wrow = &wt[j * transmit.n_physical()..(j + 1) * transmit.n_physical()];
                let trow = &mut t[j * n_rcv..(j + 1) * n_rcv];
                for (i, &w) in wrow.iter().enumerate() {
                    if w.re == 0.0 && w.im == 0.0 {
                        continue;
                    }
                    let xrow = &x[i * n_rcv..(i + 1) * n_rcv];
                    for (o, &xv) in trow.iter_mut().zip(xrow) {
                        *o += w * xv;
                    }
                }
            }
            match receive {
                Some(rx) => {
                    let wr = weight_matrix(rx, k_er);
                    let n_phys_r = rx.n_physical();
                    for j in 0..n_virt_t {
                        let trow = &t[j * n_rcv..(j + 1) * n_rcv];
                        let orow = &mut out[j * n_virt_r..(j + 1) * n_virt_r];
                        for (kk, o) in orow.iter_mut().enumerate() {
                            let wrow = &wr[kk * n_phys_r..(kk + 1) * n_phys_r];
                            let mut acc = Complex::new(0.0, 0.0);
                            for (l, &w) in wrow.iter().enumerate() {
                                if w.re == 0.0 && w.im == 0.0 {
                                    continue;
                                }
                                acc += trow[l] * w;
                            }
                            *o = acc;
                        }
                    }
                }
                None => out.copy_from_slice(&t),
            }
            out
        })
        .collect();

    let mut spectra = vec![Complex::new(0.0, 0.0); sp.n_bins * n_pairs_out];
    for (b, bin) in out_bins.into_iter().enumerate() {
        spectra[b * n_pairs_out..(b + 1) * n_pairs_out].copy_from_slice(&bin);
    }
    let out_sp = SpectralFmc {
        n_src: n_virt_t,
        n_rcv: n_virt_r,
        n_fft: sp.n_fft,
        n_bins: sp.n_bins,
        n_zeroed: sp.n_zeroed,
        omega: sp.omega.clone(),
        spectra,
    };
    let mut traces = inverse_spectra(&out_sp, fmc.n_t(), fmc.dt(), fmc.t0());

    // per-pair time window
    let src_positions = transmit.virtual_array().positions();
    let rcv_positions = receive.map_or(fmc.receiver_array().positions(), |rx| {
        rx.virtual_array().positions()
    });
    let mut window_empty = 0usize;
    if let Some(win) = &config.window {
        let n_t = fmc.n_t();
        let dt = fmc.dt();
        let t0 = fmc.t0();
        for (j, &sp_pos) in src_positions.iter().enumerate() {
            for (k, &rp) in rcv_positions.iter().enumerate() {
                let chord = sp_pos.dist(rp);
                let lo = 0.5 * chord / win.c_max_expected;
                let hi = 1.5 * chord / config.c_er + win.burst_duration;
                let tr = &mut traces[(j * rcv_positions.len() + k) * n_t
                    ..(j * rcv_positions.len() + k + 1) * n_t];
                let mut energy_in = 0.0f64;
                let mut energy_out = 0.0f64;
                for (m, v) in tr.iter_mut().enumerate() {
                    let t = t0 + m as f64 * dt;
                    if t < lo || t > hi {
                        energy_out += (*v as f64) * (*v as f64);
                        *v = 0.0;
                    } else {
                        energy_in += (*v as f64) * (*v as f64);
                    }
                }
                if energy_in <= 1e-12 * (energy_in + energy_out) && energy_out > 0.0 {
                    window_empty += 1;
                }
            }
        }
    }

    let virt_src = transmit.virtual_array().clone();
    let virt_rcv = match receive {
        Some(rx) => rx.virtual_array().clone(),
        None => fmc.receiver_array().clone(),
    };
    let out = FmcData::new(fmc.dt(), fmc.t0(), fmc.n_t(), traces, virt_src, virt_rcv)?;
    Ok((
        out,
        VirtualiseReport {
            n_bins: sp.n_bins,
            n_zeroed_bins: sp.n_zeroed,
            window_empty_pairs: window_empty,
        },
    ))
}

/// Complex weights for one operator at wavenumber `k`:
/// `e^{+i k r} sqrt(r) w B` (zero outside the illuminated half-space).
fn weight_matrix(op: &MigrationOperator, k: f64) -> Vec<Complex<f64>> {
    op.entries_iter()
        .map(|e| {
            let amp = e.weight * e.directivity * e.r.sqrt();
            if amp == 0.0 {
                Complex::new(0.0, 0.0)
            } else {
                let ph = k * e.r;
                Complex::new(ph.cos(), ph.sin()) * amp
            }
        })
        .collect()
}

impl MigrationOperator {
    fn entries_iter(&self) -> impl Iterator<Item = &OperatorEntry> + '_ {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ArrayKind;
    use crate::geom::Vec2;
    use crate::wave::hann_toneburst;
    use approx::assert_relative_eq;

    #[test]
    fn directivity_values() {
        assert_eq!(directivity(0.0, 1), 1.0);
        assert_eq!(directivity(0.0, 4), 1.0);
        assert!(directivity(std::f64::consts::FRAC_PI_2, 1) < 1e-15);
        assert!(directivity(2.0, 1) == 0.0);
        assert!(directivity(-2.0, 3) == 0.0);
        assert_relative_eq!(
            directivity(std::f64::consts::FRAC_PI_3, 1),
            0.5,
            max_relative = 1e-12
        );
    }

    fn circle_virtual(centre: Vec2, radius: f64, n: usize) -> TransducerArray {
        let positions: Vec<Vec2> = (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                centre + Vec2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        let normals: Vec<Vec2> = positions
            .iter()
            .map(|p| (*p - centre).normalized().unwrap())
            .collect();
        TransducerArray::new(positions, Some(normals), ArrayKind::Virtual).unwrap()
    }

    #[test]
    fn operator_at_circle_centre_is_symmetric() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.04, 32);
        // one virtual point at the centre, normal +x
        let virt = TransducerArray::new(
            vec![Vec2::new(0.0, 0.0)],
            Some(vec![Vec2::new(1.0, 0.0)]),
            ArrayKind::Virtual,
        )
        .unwrap();
        let op = build_operator(&physical, &virt, 1500.0, 1).unwrap();
        let illuminated: Vec<&OperatorEntry> = op
            .entries_for(0)
            .iter()
            .filter(|e| e.weight > 0.0)
            .collect();
        assert!(!illuminated.is_empty());
        for e in &illuminated {
            assert_relative_eq!(e.r, 0.04, max_relative = 1e-12);
        }
        // on a uniform circle the two arc-end entries get half weights and
        // every interior entry gets the full angular gap
        let mut weights: Vec<f64> = illuminated.iter().map(|e| e.weight).collect();
        weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gap = 2.0 * std::f64::consts::PI / 32.0;
        assert_relative_eq!(weights[0], gap / 2.0, max_relative = 1e-9);
        assert_relative_eq!(weights[1], gap / 2.0, max_relative = 1e-9);
        for w in &weights[2..] {
            assert_relative_eq!(*w, gap, max_relative = 1e-9);
        }
    }

    #[test]
    fn two_transducer_trapezium_degenerates_to_half_gap() {
        let physical = TransducerArray::new(
            vec![Vec2::new(0.03, 0.01), Vec2::new(0.03, -0.01)],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        // virtual point at origin facing +x; add a third far transducer to
        // form a hull containing the origin
        let physical3 = TransducerArray::new(
            vec![
                Vec2::new(0.03, 0.01),
                Vec2::new(0.03, -0.01),
                Vec2::new(-0.05, 0.0),
            ],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        let _ = physical;
        let virt = TransducerArray::new(
            vec![Vec2::new(0.0, 0.0)],
            Some(vec![Vec2::new(1.0, 0.0)]),
            ArrayKind::Virtual,
        )
        .unwrap();
        let op = build_operator(&physical3, &virt, 1500.0, 1).unwrap();
        let e = op.entries_for(0);
        // the two front transducers are illuminated, the rear one is not
        assert_eq!(e[2].weight, 0.0);
        let gap = e[0].theta + e[1].theta; // symmetric about the normal
        assert_relative_eq!(e[0].weight, gap / 2.0, max_relative = 1e-9);
        assert_relative_eq!(e[1].weight, gap / 2.0, max_relative = 1e-9);
        assert_relative_eq!(op.weight_sum(0), gap, max_relative = 1e-9);
    }

    #[test]
    fn weight_sums_equal_visible_extent_on_smiley_geometry() {
        // paper-scale smiley acquisition geometry: 317 physical, 300 virtual
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.04, 317);
        let virt = circle_virtual(Vec2::new(5.0e-3, 2.5e-3), 12.0e-3, 300);
        let op = build_operator(&physical, &virt, 1588.4, 1).unwrap();
        for j in 0..virt.len() {
            let entries = op.entries_for(j);
            let mut phis: Vec<f64> = Vec::new();
            let nrm = virt.normals().unwrap()[j];
            let vp = virt.positions()[j];
            for (i, &pp) in physical.positions().iter().enumerate() {
                let d = pp - vp;
                let phi = nrm.cross(d).atan2(nrm.dot(d));
                if phi.abs() < std::f64::consts::FRAC_PI_2 {
                    phis.push(phi);
                    assert!(entries[i].weight >= 0.0);
                } else {
                    assert_eq!(entries[i].weight, 0.0);
                    assert_eq!(entries[i].directivity, 0.0);
                }
            }
            phis.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let extent = phis.last().unwrap() - phis.first().unwrap();
            assert!(
                (op.weight_sum(j) - extent).abs() < 1e-9,
                "virtual {j}: weight sum {} vs extent {extent}",
                op.weight_sum(j)
            );
            // dense angular quadrature oracle for the same extent
            let n_dense = 100_000usize;
            let dphi = std::f64::consts::PI / n_dense as f64;
            let mut first_bin = None;
            let mut last_bin = 0usize;
            for (bin_idx, &phi) in phis.iter().enumerate() {
                let _ = bin_idx;
                let b = ((phi + std::f64::consts::FRAC_PI_2) / dphi).floor() as usize;
                if first_bin.is_none() || b < first_bin.unwrap() {
                    first_bin = Some(first_bin.map_or(b, |f: usize| f.min(b)));
                }
                last_bin = last_bin.max(b);
            }
            let oracle_extent = (last_bin - first_bin.unwrap()) as f64 * dphi;
            assert!(
                (extent - oracle_extent).abs() <= 2.0 * dphi,
                "extent {extent} vs oracle {oracle_extent}"
            );
        }
    }

    #[test]
    fn virtual_point_outside_hull_rejected() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.02, 16);
        let virt = TransducerArray::new(
            vec![Vec2::new(0.03, 0.0)],
            Some(vec![Vec2::new(1.0, 0.0)]),
            ArrayKind::Virtual,
        )
        .unwrap();
        assert!(matches!(
            build_operator(&physical, &virt, 1500.0, 1),
            Err(VirtError::VirtualOutsideHull(0))
        ));
    }

    #[test]
    fn missing_normals_rejected() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.02, 16);
        let virt = TransducerArray::new(vec![Vec2::new(0.0, 0.0)], None, ArrayKind::Virtual)
            .unwrap();
        assert!(matches!(
            build_operator(&physical, &virt, 1500.0, 1),
            Err(VirtError::MissingNormals)
        ));
    }

    /// Single physical source, single on-axis virtual point: the virtual
    /// trace is the original advanced by r/c and rescaled. Oracle: cubic
    /// interpolation time shift.
    #[test]
    fn single_source_advance_matches_time_shift_oracle() {
        let c = 1588.4;
        let f = 1.0e6;
        let dt = 2.0e-8;
        let r = 0.02;
        let physical = TransducerArray::new(
            vec![
                Vec2::new(-r, 0.0),
                Vec2::new(0.05, 0.06),
                Vec2::new(0.05, -0.06),
            ],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        let virt = TransducerArray::new(
            vec![Vec2::new(0.0, 0.0)],
            Some(vec![Vec2::new(-1.0, 0.0)]),
            ArrayKind::Virtual,
        )
        .unwrap();
        let burst = hann_toneburst(f, 5, dt).unwrap();
        let n_t = 2048;
        // receivers arbitrary (receive side stays physical): one receiver
        let rcv = TransducerArray::new(vec![Vec2::new(0.0, 0.05)], None, ArrayKind::Physical)
            .unwrap();
        // only source 0 carries signal, inserted at 30 us
        let insert = 30.0e-6;
        let mut traces = vec![0.0f32; 3 * n_t];
        for k in 0..n_t {
            traces[k] = burst.value(k as f64 * dt - insert) as f32;
        }
        let fmc = FmcData::new(dt, 0.0, n_t, traces.clone(), physical.clone(), rcv.clone())
            .unwrap();
        let op = build_operator(&physical, &virt, c, 1).unwrap();
        let mut config = VirtualiseConfig::new(c);
        config.taper_fraction = 0.0;
        config.low_freq_fraction = 0.0;
        let (vfmc, _) = virtualise_fmc(&fmc, &op, None, &config).unwrap();

        // oracle: per-entry advance + scale of the contributing trace
        let e = op.entry(0, 0);
        assert!(e.weight > 0.0);
        let scale = e.weight * e.directivity * e.r.sqrt();
        let advance = e.r / c;
        let oracle: Vec<f64> = (0..n_t)
            .map(|k| {
                let t = k as f64 * dt + advance;
                cubic_sample(&traces[..n_t], t / dt) * scale
            })
            .collect();
        let got = vfmc.trace(0, 0);
        let rms_ref = (oracle.iter().map(|v| v * v).sum::<f64>() / n_t as f64).sqrt();
        let rms_err = (got
            .iter()
            .zip(&oracle)
            .map(|(&g, &o)| (g as f64 - o) * (g as f64 - o))
            .sum::<f64>()
            / n_t as f64)
            .sqrt();
        assert!(rms_ref > 0.0);
        assert!(
            rms_err / rms_ref < 0.01,
            "shift-oracle mismatch: {:.4}",
            rms_err / rms_ref
        );
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.03, 12);
        let virt = circle_virtual(Vec2::new(0.0, 0.0), 0.01, 16);
        let op = build_operator(&physical, &virt, 1500.0, 1).unwrap();
        let n_t = 256;
        let fmc = FmcData::new(
            1.0e-7,
            0.0,
            n_t,
            vec![0.0f32; 12 * 12 * n_t],
            physical.clone(),
            physical.clone(),
        )
        .unwrap();
        let (v, _) = virtualise_fmc(&fmc, &op, Some(&op), &VirtualiseConfig::new(1500.0))
            .unwrap();
        assert!(v.traces().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linearity_superposition() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.03, 8);
        let virt = circle_virtual(Vec2::new(0.0, 0.0), 0.01, 16);
        let op = build_operator(&physical, &virt, 1500.0, 1).unwrap();
        let n_t = 512;
        let dt = 5.0e-8;
        let mk = |seed: u64| {
            let mut v = vec![0.0f32; 8 * 8 * n_t];
            let mut state = seed;
            for x in v.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *x = ((state >> 33) as f32 / 2.0_f32.powi(31)) - 1.0;
            }
            v
        };
        let a = mk(1);
        let b = mk(2);
        let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let mut config = VirtualiseConfig::new(1500.0);
        config.taper_fraction = 0.0;
        let run = |tr: Vec<f32>| {
            let fmc = FmcData::new(dt, 0.0, n_t, tr, physical.clone(), physical.clone())
                .unwrap();
            virtualise_fmc(&fmc, &op, Some(&op), &config).unwrap().0
        };
        let va = run(a);
        let vb = run(b);
        let vsum = run(sum);
        let peak = vsum.traces().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for ((x, y), z) in va.traces().iter().zip(vb.traces()).zip(vsum.traces()) {
            assert!(
                ((x + y) - z).abs() <= 1e-6 * peak.max(1.0),
                "superposition violated: {x} + {y} vs {z}"
            );
        }
    }

    #[test]
    fn reciprocity_preserved_for_symmetric_input() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.03, 10);
        let virt = circle_virtual(Vec2::new(0.0, 0.0), 0.012, 12);
        let op = build_operator(&physical, &virt, 1500.0, 1).unwrap();
        let n_t = 512;
        let dt = 5.0e-8;
        let burst = hann_toneburst(1.0e6, 5, 1.0e-8).unwrap();
        let mut traces = vec![0.0f32; 10 * 10 * n_t];
        for i in 0..10 {
            for l in 0..10 {
                let d = physical.positions()[i].dist(physical.positions()[l]);
                for k in 0..n_t {
                    traces[(i * 10 + l) * n_t + k] =
                        burst.value(k as f64 * dt - d / 1500.0 - 5.0e-6) as f32;
                }
            }
        }
        let fmc = FmcData::new(dt, 0.0, n_t, traces, physical.clone(), physical.clone())
            .unwrap();
        let mut config = VirtualiseConfig::new(1500.0);
        config.taper_fraction = 0.0;
        let (v, _) = virtualise_fmc(&fmc, &op, Some(&op), &config).unwrap();
        let mut peak = 0.0f64;
        for t in v.traces() {
            peak = peak.max(t.abs() as f64);
        }
        for j in 0..12 {
            for k in (j + 1)..12 {
                let a = v.trace(j, k);
                let b = v.trace(k, j);
                for (x, y) in a.iter().zip(b) {
                    assert!(
                        ((x - y).abs() as f64) < 1e-9 * peak.max(1e-30) + 1e-12,
                        "asymmetry at ({j},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.03, 8);
        let other = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.03, 9);
        let virt = circle_virtual(Vec2::new(0.0, 0.0), 0.01, 16);
        let op = build_operator(&physical, &virt, 1500.0, 1).unwrap();
        let n_t = 64;
        let fmc = FmcData::new(
            1.0e-7,
            0.0,
            n_t,
            vec![0.0f32; 9 * 9 * n_t],
            other.clone(),
            other,
        )
        .unwrap();
        assert!(matches!(
            virtualise_fmc(&fmc, &op, Some(&op), &VirtualiseConfig::new(1500.0)),
            Err(VirtError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn spectra_invariants() {
        let physical = TransducerArray::circle(Vec2::new(0.0, 0.0), 0.03, 4);
        let n_t = 300;
        let dt = 5.0e-8;
        let burst = hann_toneburst(1.0e6, 5, 1.0e-8).unwrap();
        let mut traces = vec![0.0f32; 16 * n_t];
        for p in 0..16 {
            for k in 0..n_t {
                traces[p * n_t + k] = burst.value(k as f64 * dt - 1.0e-6) as f32 + 0.25;
            }
        }
        let fmc = FmcData::new(dt, 0.0, n_t, traces, physical.clone(), physical.clone())
            .unwrap();
        let sp = forward_spectra(&fmc, 0.01);
        assert_eq!(sp.n_fft, 512);
        assert_eq!(sp.n_bins, 257);
        assert_eq!(sp.n_zeroed, 3);
        // zeroed bins (incl. DC: the 0.25 offset is removed)
        for b in 0..sp.n_zeroed {
            assert!(sp.bin(b).iter().all(|z| z.norm() == 0.0));
        }
        // inverse gives real traces (validates one-sided Hermitian handling)
        let back = inverse_spectra(&sp, n_t, dt, 0.0);
        assert_eq!(back.len(), 16 * n_t);
        assert!(back.iter().all(|v| v.is_finite()));
    }

    /// Catmull-Rom cubic interpolation of a trace at fractional index.
    fn cubic_sample(trace: &[f32], x: f64) -> f64 {
        let n = trace.len() as isize;
        let i = x.floor() as isize;
        let t = x - i as f64;
        let get = |k: isize| -> f64 {
            if k < 0 || k >= n {
                0.0
            } else {
                trace[k as usize] as f64
            }
        };
        let p0 = get(i - 1);
        let p1 = get(i);
        let p2 = get(i + 1);
        let p3 = get(i + 2);
        0.5 * ((2.0 * p1)
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }
}
