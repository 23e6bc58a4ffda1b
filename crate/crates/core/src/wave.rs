//! Scalar-acoustic finite-difference time-domain simulation and FMC data.
//!
//! The engine integrates the 2D wave equation on the velocity grid with a
//! second-order leapfrog scheme, spatially varying speed and (optionally)
//! density, monopole or normal-dipole sources, and an exponential
//! amplitude-taper sponge layer that absorbs outgoing waves. Full matrix
//! capture runs one shot per source; shots share the immutable medium and
//! execute in parallel.
//!
//! # FMC1 file format
//!
//! Six ASCII header lines terminated by `\n`:
//!
//! ```text
//! FMC1
//! n_src <usize>
//! n_rcv <usize>
//! n_t <usize>
//! dt <f64>
//! t0 <f64>
//! ```
//!
//! followed by `n_src` source positions and `n_rcv` receiver positions as
//! little-endian f64 `(x, y)` pairs, then the traces as little-endian f32 in
//! `(src, rcv, t)` order.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{ArrayKind, FieldError, TransducerArray, VelocityField};
use crate::geom::Vec2;

#[derive(Debug, Error)]
pub enum WaveError {
    #[error("courant number must be in (0, 1], got {0}")]
    BadCourant(f64),
    #[error("toneburst needs dt < 1/(20 f); got dt = {dt}, f = {f}")]
    BurstUndersampled { dt: f64, f: f64 },
    #[error("transducer ({0}, {1}) outside the sponge-free interior")]
    TransducerInSponge(f64, f64),
    #[error("dipole sources need normals on the source array")]
    MissingNormals,
    #[error("simulation unstable at step {step}: max |p| = {max}")]
    Instability { step: usize, max: f64 },
    #[error("t_max must be positive, got {0}")]
    BadTmax(f64),
    #[error("invalid FMC1 file: {0}")]
    Format(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Toneburst
// ---------------------------------------------------------------------------

/// Hann-windowed toneburst excitation signal.
#[derive(Debug, Clone)]
pub struct Toneburst {
    frequency: f64,
    cycles: u32,
    amplitude: f64,
    dt: f64,
    samples: Vec<f64>,
}

impl Toneburst {
    pub fn frequency(&self) -> f64 {
        self.frequency
    }
    pub fn cycles(&self) -> u32 {
        self.cycles
    }
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Discrete samples at `dt` covering the support.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Signal duration `cycles / f`.
    pub fn duration(&self) -> f64 {
        self.cycles as f64 / self.frequency
    }

    /// Temporal centroid of the envelope (half the duration).
    pub fn centroid(&self) -> f64 {
        self.duration() / 2.0
    }

    /// Same burst with the amplitude scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Toneburst {
        let mut b = self.clone();
        b.amplitude *= alpha;
        for s in &mut b.samples {
            *s *= alpha;
        }
        b
    }

    /// Continuous evaluation: `A sin(2πft) · 0.5 (1 − cos(2πft/cycles))` on
    /// `[0, cycles/f]`, zero elsewhere.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration() {
            return 0.0;
        }
        let w = 2.0 * std::f64::consts::PI * self.frequency * t;
        self.amplitude * w.sin() * 0.5 * (1.0 - (w / self.cycles as f64).cos())
    }
}

/// Build a unit-amplitude Hann toneburst of `cycles` cycles at centre
/// frequency `f`, sampled at `dt`.
pub fn hann_toneburst(f: f64, cycles: u32, dt: f64) -> Result<Toneburst, WaveError> {
    if !(dt > 0.0) || dt >= 1.0 / (20.0 * f) {
        return Err(WaveError::BurstUndersampled { dt, f });
    }
    let duration = cycles as f64 / f;
    let n = (duration / dt).floor() as usize + 1;
    let burst = Toneburst {
        frequency: f,
        cycles,
        amplitude: 1.0,
        dt,
        samples: Vec::new(),
    };
    let samples = (0..n).map(|i| burst.value(i as f64 * dt)).collect();
    Ok(Toneburst { samples, ..burst })
}

/// Stable time step for the 2D leapfrog scheme:
/// `dt = courant · spacing / (c_max · √2)`.
pub fn stable_dt(field: &VelocityField, courant: f64) -> Result<f64, WaveError> {
    if !(courant > 0.0 && courant <= 1.0) {
        return Err(WaveError::BadCourant(courant));
    }
    Ok(courant * field.spacing() / (field.max_speed() * std::f64::consts::SQRT_2))
}

// ---------------------------------------------------------------------------
// FMC data
// ---------------------------------------------------------------------------

/// Full-matrix-capture dataset: one trace per (source, receiver) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FmcData {
    dt: f64,
    t0: f64,
    n_t: usize,
    traces: Vec<f32>,
    source_array: TransducerArray,
    receiver_array: TransducerArray,
}

impl FmcData {
    pub fn new(
        dt: f64,
        t0: f64,
        n_t: usize,
        traces: Vec<f32>,
        source_array: TransducerArray,
        receiver_array: TransducerArray,
    ) -> Result<Self, WaveError> {
        if !(dt > 0.0) {
            return Err(WaveError::Format(format!("dt must be positive, got {dt}")));
        }
        let expected = source_array.len() * receiver_array.len() * n_t;
        if traces.len() != expected {
            return Err(WaveError::Format(format!(
                "traces length {} does not match {} x {} x {}",
                traces.len(),
                source_array.len(),
                receiver_array.len(),
                n_t
            )));
        }
        if traces.iter().any(|v| !v.is_finite()) {
            return Err(WaveError::Format("non-finite trace sample".into()));
        }
        Ok(Self {
            dt,
            t0,
            n_t,
            traces,
            source_array,
            receiver_array,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_src(&self) -> usize {
        self.source_array.len()
    }
    pub fn n_rcv(&self) -> usize {
        self.receiver_array.len()
    }
    pub fn source_array(&self) -> &TransducerArray {
        &self.source_array
    }
    pub fn receiver_array(&self) -> &TransducerArray {
        &self.receiver_array
    }

    #[inline]
    pub fn trace(&self, src: usize, rcv: usize) -> &[f32] {
        let start = (src * self.n_rcv() + rcv) * self.n_t;
        &self.traces[start..start + self.n_t]
    }

    #[inline]
    pub fn trace_mut(&mut self, src: usize, rcv: usize) -> &mut [f32] {
        let n_rcv = self.n_rcv();
        let start = (src * n_rcv + rcv) * self.n_t;
        &mut self.traces[start..start + self.n_t]
    }

    pub fn traces(&self) -> &[f32] {
        &self.traces
    }

    /// Time of sample index `k`.
    pub fn time_of(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn write_fmc1<W: Write>(&self, w: &mut W) -> Result<(), WaveError> {
        write!(
            w,
            "FMC1\nn_src {}\nn_rcv {}\nn_t {}\ndt {}\nt0 {}\n",
            self.n_src(),
            self.n_rcv(),
            self.n_t,
            self.dt,
            self.t0
        )?;
        let mut buf = Vec::new();
        for p in self
            .source_array
            .positions()
            .iter()
            .chain(self.receiver_array.positions())
        {
            buf.extend_from_slice(&p.x.to_le_bytes());
            buf.extend_from_slice(&p.y.to_le_bytes());
        }
        for v in &self.traces {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Parse the FMC1 format. Array normals are not part of the format; the
    /// loaded arrays carry positions only.
    pub fn read_fmc1<R: Read>(r: &mut R) -> Result<Self, WaveError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        fn next_line(bytes: &[u8], pos: &mut usize) -> Result<String, WaveError> {
            let start = *pos;
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            if *pos >= bytes.len() {
                return Err(WaveError::Format("truncated header".into()));
            }
            let s = std::str::from_utf8(&bytes[start..*pos])
                .map_err(|_| WaveError::Format("non-utf8 header".into()))?
                .to_string();
            *pos += 1;
            Ok(s)
        }
        fn read_f64(bytes: &[u8], pos: &mut usize) -> Result<f64, WaveError> {
            if *pos + 8 > bytes.len() {
                return Err(WaveError::Format("truncated positions".into()));
            }
            let v = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            Ok(v)
        }
        if next_line(&bytes, &mut pos)? != "FMC1" {
            return Err(WaveError::Format("bad magic, expected FMC1".into()));
        }
        let mut vals = [0f64; 5];
        for (i, key) in ["n_src", "n_rcv", "n_t", "dt", "t0"].iter().enumerate() {
            let l = next_line(&bytes, &mut pos)?;
            let (k, v) = l
                .split_once(' ')
                .ok_or_else(|| WaveError::Format(format!("malformed header line {l:?}")))?;
            if k != *key {
                return Err(WaveError::Format(format!("expected key {key}, got {k}")));
            }
            vals[i] = v
                .parse()
                .map_err(|_| WaveError::Format(format!("bad value in {l:?}")))?;
        }
        let (n_src, n_rcv, n_t) = (vals[0] as usize, vals[1] as usize, vals[2] as usize);
        let mut read_positions = |n: usize| -> Result<Vec<Vec2>, WaveError> {
            (0..n)
                .map(|_| {
                    let x = read_f64(&bytes, &mut pos)?;
                    let y = read_f64(&bytes, &mut pos)?;
                    Ok(Vec2::new(x, y))
                })
                .collect()
        };
        let src_pos = read_positions(n_src)?;
        let rcv_pos = read_positions(n_rcv)?;
        let expected = n_src
            .checked_mul(n_rcv)
            .and_then(|n| n.checked_mul(n_t))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WaveError::Format("trace size overflow".into()))?;
        let data = &bytes[pos..];
        if data.len() != expected {
            return Err(WaveError::Format(format!(
                "expected {expected} trace bytes, got {}",
                data.len()
            )));
        }
        let traces: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(
            vals[3],
            vals[4],
            n_t,
            traces,
            TransducerArray::new(src_pos, None, ArrayKind::Physical)?,
            TransducerArray::new(rcv_pos, None, ArrayKind::Physical)?,
        )
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// FDTD configuration. `t_max` is the recorded window; everything else has
/// sensible defaults.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Courant number in (0, 1].
    pub courant: f64,
    /// Sponge thickness in wavelengths of the external region.
    pub sponge_wavelengths: f64,
    /// Speed used for the sponge wavelength; `None` takes the grid corner
    /// value (the external region in padded phantom grids).
    pub sponge_speed: Option<f64>,
    /// Record every k-th step; 0 selects automatically (>= 40 samples per
    /// burst period).
    pub record_every: usize,
    /// Recorded window length in seconds.
    pub t_max: f64,
    /// Drive sources as dipoles along the source-array normals.
    pub dipole_sources: bool,
    /// Use the field's density (when present) in the update stencil.
    pub use_density: bool,
}

impl SimConfig {
    pub fn new(t_max: f64) -> Self {
        Self {
            courant: 0.4,
            sponge_wavelengths: 9.0,
            sponge_speed: None,
            record_every: 0,
            t_max,
            dipole_sources: false,
            use_density: true,
        }
    }
}

/// Extend a field by `thickness` on all sides, replicating edge cells; used
/// to make room for the sponge layer around a phantom grid.
pub fn pad_field(field: &VelocityField, thickness: f64) -> VelocityField {
    let h = field.spacing();
    let pad = (thickness / h).ceil() as usize;
    let (nx, ny) = (field.nx(), field.ny());
    let (mx, my) = (nx + 2 * pad, ny + 2 * pad);
    let mut values = vec![0.0; mx * my];
    let mut density = field.density().map(|_| vec![0.0; mx * my]);
    for jy in 0..my {
        let iy = jy.saturating_sub(pad).min(ny - 1);
        for jx in 0..mx {
            let ix = jx.saturating_sub(pad).min(nx - 1);
            values[jy * mx + jx] = field.at(ix, iy);
            if let (Some(d), Some(src)) = (density.as_mut(), field.density()) {
                d[jy * mx + jx] = src[iy * nx + ix];
            }
        }
    }
    let origin = field.origin() - Vec2::new(pad as f64 * h, pad as f64 * h);
    let mut out = VelocityField::new(origin, h, mx, my, values).expect("padded grid is valid");
    if let Some(d) = density {
        out = out.with_density(d).expect("density length matches");
    }
    out
}

/// Full matrix capture: one simulation per source, recording at every
/// receiver. The field must already contain room for the sponge layer; all
/// transducers must sit strictly inside the sponge-free interior.
pub fn simulate_fmc(
    field: &VelocityField,
    sources: &TransducerArray,
    receivers: &TransducerArray,
    burst: &Toneburst,
    config: &SimConfig,
) -> Result<FmcData, WaveError> {
    let engine = Engine::new(field, burst.frequency(), config)?;
    for p in sources.positions().iter().chain(receivers.positions()) {
        if !engine.in_interior(*p) {
            return Err(WaveError::TransducerInSponge(p.x, p.y));
        }
    }
    let normals = if config.dipole_sources {
        Some(sources.normals().ok_or(WaveError::MissingNormals)?)
    } else {
        None
    };

    let gathers: Vec<Gather> = receivers
        .positions()
        .iter()
        .map(|&p| engine.gather(p))
        .collect();

    let shot_traces: Result<Vec<Vec<f32>>, WaveError> = sources
        .positions()
        .par_iter()
        .enumerate()
        .map(|(i, &src)| {
            let injection = match normals {
                Some(ns) => engine.dipole_injection(src, ns[i]),
                None => engine.monopole_injection(src),
            };
            engine.run_shot(&injection, burst, &gathers, &mut |_, _, _| {})
        })
        .collect();
    let shot_traces = shot_traces?;

    let n_t = engine.n_samples();
    let mut traces = Vec::with_capacity(sources.len() * receivers.len() * n_t);
    for shot in shot_traces {
        traces.extend_from_slice(&shot);
    }
    FmcData::new(
        engine.dt * engine.record_every as f64,
        0.0,
        n_t,
        traces,
        sources.clone(),
        receivers.clone(),
    )
}

/// One bilinear stencil: cell indices and weights.
struct Gather {
    idx: [usize; 4],
    w: [f64; 4],
}

type Injection = Vec<(usize, f64)>;

struct Engine {
    nx: usize,
    ny: usize,
    dt: f64,
    n_steps: usize,
    record_every: usize,
    origin: Vec2,
    spacing: f64,
    /// Per-cell stencil coefficient: (c dt / h)², or ρ c² dt² / h² in the
    /// variable-density scheme.
    coeff: Vec<f64>,
    /// Inverse density per cell when the variable-density stencil is active.
    inv_rho: Option<Vec<f64>>,
    /// Per-cell amplitude taper (1 in the interior, < 1 inside the sponge).
    taper: Vec<f64>,
    sponge_cells: usize,
}

impl Engine {
    fn new(field: &VelocityField, f: f64, config: &SimConfig) -> Result<Self, WaveError> {
        if !(config.t_max > 0.0) {
            return Err(WaveError::BadTmax(config.t_max));
        }
        let dt = stable_dt(field, config.courant)?;
        let (nx, ny) = (field.nx(), field.ny());
        let h = field.spacing();
        let c_sponge = config.sponge_speed.unwrap_or_else(|| field.at(0, 0));
        let thickness = config.sponge_wavelengths * c_sponge / f;
        let sponge_cells = (thickness / h).ceil() as usize;

        let record_every = if config.record_every == 0 {
            ((1.0 / (40.0 * f)) / dt).floor().max(1.0) as usize
        } else {
            config.record_every
        };
        let n_steps = (config.t_max / dt).ceil() as usize;

        let use_density = config.use_density && field.density().is_some();
        let inv_rho: Option<Vec<f64>> = if use_density {
            Some(field.density().unwrap().iter().map(|&r| 1.0 / r).collect())
        } else {
            None
        };
        let coeff: Vec<f64> = if inv_rho.is_some() {
            let rho = field.density().unwrap();
            field
                .values()
                .iter()
                .zip(rho)
                .map(|(&c, &r)| r * c * c * dt * dt / (h * h))
                .collect()
        } else {
            field
                .values()
                .iter()
                .map(|&c| {
                    let k = c * dt / h;
                    k * k
                })
                .collect()
        };

        // Exponential amplitude taper with a quadratic depth profile. The
        // decay constant targets 0.5 % round-trip amplitude through the
        // layer: exp(-2 a N / 3) = 0.005 with N steps to cross it.
        let crossing_steps = thickness / (c_sponge * dt);
        let a = 3.0 * (1.0 / 0.005f64).ln() / (2.0 * crossing_steps);
        let mut taper = vec![1.0; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let depth_x = sponge_depth(ix, nx, sponge_cells);
                let depth_y = sponge_depth(iy, ny, sponge_cells);
                let xi = depth_x.max(depth_y);
                if xi > 0.0 {
                    taper[iy * nx + ix] = (-a * xi * xi).exp();
                }
            }
        }

        Ok(Self {
            nx,
            ny,
            dt,
            n_steps,
            record_every,
            origin: field.origin(),
            spacing: h,
            coeff,
            inv_rho,
            taper,
            sponge_cells,
        })
    }

    fn n_samples(&self) -> usize {
        self.n_steps / self.record_every + 1
    }

    fn in_interior(&self, p: Vec2) -> bool {
        let fx = (p.x - self.origin.x) / self.spacing;
        let fy = (p.y - self.origin.y) / self.spacing;
        let m = self.sponge_cells as f64 + 1.0;
        fx >= m && fy >= m && fx <= (self.nx - 1) as f64 - m && fy <= (self.ny - 1) as f64 - m
    }

    fn gather(&self, p: Vec2) -> Gather {
        let fx = (p.x - self.origin.x) / self.spacing;
        let fy = (p.y - self.origin.y) / self.spacing;
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        Gather {
            idx: [
                iy * self.nx + ix,
                iy * self.nx + ix + 1,
                (iy + 1) * self.nx + ix,
                (iy + 1) * self.nx + ix + 1,
            ],
            w: [
                (1.0 - tx) * (1.0 - ty),
                tx * (1.0 - ty),
                (1.0 - tx) * ty,
                tx * ty,
            ],
        }
    }

    fn monopole_injection(&self, p: Vec2) -> Injection {
        let g = self.gather(p);
        g.idx.iter().zip(&g.w).map(|(&i, &w)| (i, w)).collect()
    }

    /// Two opposite-sign monopoles half a cell either side of `p` along the
    /// normal approximate a dipole driven in the normal direction.
    fn dipole_injection(&self, p: Vec2, normal: Vec2) -> Injection {
        let d = normal * (self.spacing / 2.0);
        let mut inj = Vec::with_capacity(8);
        for (q, sign) in [(p + d, 1.0), (p - d, -1.0)] {
            let g = self.gather(q);
            for (&i, &w) in g.idx.iter().zip(&g.w) {
                inj.push((i, sign * w));
            }
        }
        inj
    }

    /// Run one shot, returning traces flattened in (rcv, t) order.
    fn run_shot(
        &self,
        injection: &Injection,
        burst: &Toneburst,
        gathers: &[Gather],
        probe: &mut dyn FnMut(usize, &[f64], &[f64]),
    ) -> Result<Vec<f32>, WaveError> {
        let n = self.nx * self.ny;
        let mut prev = vec![0.0f64; n];
        let mut cur = vec![0.0f64; n];
        let mut next = vec![0.0f64; n];
        let n_t = self.n_samples();
        let mut traces = vec![0.0f32; gathers.len() * n_t];
        // sample index 0 is t = 0 (all-zero field)
        let mut sample = 1usize;

        for step in 0..self.n_steps {
            self.stencil(&prev, &cur, &mut next);
            self.apply_taper(&mut next, &mut cur);
            let s = burst.value((step + 1) as f64 * self.dt);
            if s != 0.0 {
                for &(i, w) in injection {
                    next[i] += s * w;
                }
            }
            if (step + 1) % self.record_every == 0 && sample < n_t {
                for (r, g) in gathers.iter().enumerate() {
                    let v = g
                        .idx
                        .iter()
                        .zip(&g.w)
                        .map(|(&i, &w)| next[i] * w)
                        .sum::<f64>();
                    traces[r * n_t + sample] = v as f32;
                }
                sample += 1;
            }
            if (step + 1) % 256 == 0 {
                let max = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if max > 1e12 {
                    return Err(WaveError::Instability { step, max });
                }
            }
            probe(step, &cur, &next);
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(traces)
    }

    fn stencil(&self, prev: &[f64], cur: &[f64], next: &mut [f64]) {
        let nx = self.nx;
        match &self.inv_rho {
            None => {
                for iy in 1..self.ny - 1 {
                    let row = &cur[iy * nx..(iy + 1) * nx];
                    let below = &cur[(iy - 1) * nx..iy * nx];
                    let above = &cur[(iy + 1) * nx..(iy + 2) * nx];
                    let old = &prev[iy * nx..(iy + 1) * nx];
                    let k = &self.coeff[iy * nx..(iy + 1) * nx];
                    let out = &mut next[iy * nx..(iy + 1) * nx];
                    for ix in 1..nx - 1 {
                        let lap =
                            row[ix - 1] + row[ix + 1] + below[ix] + above[ix] - 4.0 * row[ix];
                        out[ix] = 2.0 * row[ix] - old[ix] + k[ix] * lap;
                    }
                }
            }
            Some(ir) => {
                // div((1/ρ) grad p) with arithmetic-mean face coefficients;
                // `coeff` carries ρ c² dt² / h².
                for iy in 1..self.ny - 1 {
                    let row = &cur[iy * nx..(iy + 1) * nx];
                    let below = &cur[(iy - 1) * nx..iy * nx];
                    let above = &cur[(iy + 1) * nx..(iy + 2) * nx];
                    let old = &prev[iy * nx..(iy + 1) * nx];
                    let k = &self.coeff[iy * nx..(iy + 1) * nx];
                    let ir_row = &ir[iy * nx..(iy + 1) * nx];
                    let ir_below = &ir[(iy - 1) * nx..iy * nx];
                    let ir_above = &ir[(iy + 1) * nx..(iy + 2) * nx];
                    let out = &mut next[iy * nx..(iy + 1) * nx];
                    for ix in 1..nx - 1 {
                        let be = 0.5 * (ir_row[ix] + ir_row[ix + 1]);
                        let bw = 0.5 * (ir_row[ix] + ir_row[ix - 1]);
                        let bn = 0.5 * (ir_row[ix] + ir_above[ix]);
                        let bs = 0.5 * (ir_row[ix] + ir_below[ix]);
                        let div = be * (row[ix + 1] - row[ix]) - bw * (row[ix] - row[ix - 1])
                            + bn * (above[ix] - row[ix])
                            - bs * (row[ix] - below[ix]);
                        out[ix] = 2.0 * row[ix] - old[ix] + k[ix] * div;
                    }
                }
            }
        }
    }

    fn apply_taper(&self, next: &mut [f64], cur: &mut [f64]) {
        let nx = self.nx;
        let sc = self.sponge_cells;
        if sc == 0 {
            return;
        }
        for iy in 0..self.ny {
            let full_row = iy < sc || iy + sc >= self.ny;
            let row_off = iy * nx;
            if full_row {
                for ix in 0..nx {
                    let t = self.taper[row_off + ix];
                    next[row_off + ix] *= t;
                    cur[row_off + ix] *= t;
                }
            } else {
                for ix in 0..sc.min(nx) {
                    let t = self.taper[row_off + ix];
                    next[row_off + ix] *= t;
                    cur[row_off + ix] *= t;
                }
                for ix in nx.saturating_sub(sc)..nx {
                    let t = self.taper[row_off + ix];
                    next[row_off + ix] *= t;
                    cur[row_off + ix] *= t;
                }
            }
        }
    }

    /// Discrete field energy proxy: squared time derivative plus the
    /// gradient term weighted by the stencil coefficient.
    #[cfg(test)]
    fn energy(&self, prev: &[f64], cur: &[f64]) -> f64 {
        let nx = self.nx;
        let mut e = 0.0;
        for iy in 1..self.ny - 1 {
            for ix in 1..nx - 1 {
                let i = iy * nx + ix;
                let vt = cur[i] - prev[i];
                let gx = cur[i + 1] - cur[i];
                let gy = cur[i + nx] - cur[i];
                e += vt * vt + self.coeff[i] * (gx * gx + gy * gy);
            }
        }
        e
    }
}

/// Depth into the sponge in [0, 1]; 0 in the interior.
fn sponge_depth(i: usize, n: usize, sponge: usize) -> f64 {
    if sponge == 0 {
        return 0.0;
    }
    if i < sponge {
        (sponge - i) as f64 / sponge as f64
    } else if i + sponge >= n {
        (i + sponge + 1 - n) as f64 / sponge as f64
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn toneburst_support_and_shape() {
        let dt = 1.0e-8;
        let b = hann_toneburst(1.0e6, 5, dt).unwrap();
        assert_eq!(b.value(0.0), 0.0);
        assert_eq!(b.value(-1.0e-6), 0.0);
        assert_eq!(b.value(5.1e-6), 0.0);
        assert!(b.value(2.4e-6).abs() > 0.1);
        // nonzero support is exactly [0, 5 us]
        let first_nonzero = b.samples().iter().position(|&v| v != 0.0).unwrap();
        let last_nonzero = b.samples().iter().rposition(|&v| v != 0.0).unwrap();
        assert!(first_nonzero as f64 * dt < 0.1e-6);
        assert!((last_nonzero as f64 * dt - 5.0e-6).abs() < 0.1e-6);
        // The envelope peaks at the centroid (2.5 us) where the carrier has
        // a zero crossing, so |s| itself peaks half a carrier period either
        // side. Dense scan: envelope max at 2.5 us, |s| max at 2.5 ± 0.25 us.
        let envelope = |t: f64| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * 1.0e6 * t / 5.0).cos());
        let fine = 1.0e-10;
        let mut best = (0.0f64, 0.0f64);
        let mut best_env = (0.0f64, 0.0f64);
        let mut t = 0.0;
        while t <= 5.0e-6 {
            if b.value(t).abs() > best.1 {
                best = (t, b.value(t).abs());
            }
            if envelope(t) > best_env.1 {
                best_env = (t, envelope(t));
            }
            t += fine;
        }
        assert!(
            (best_env.0 - 2.5e-6).abs() <= dt + fine,
            "envelope peak at {}",
            best_env.0
        );
        let off = (best.0 - 2.5e-6).abs();
        assert!(
            (off - 0.25e-6).abs() <= dt + fine,
            "|s| peak at {} (offset {off})",
            best.0
        );
    }

    #[test]
    fn toneburst_rejects_coarse_sampling() {
        assert!(matches!(
            hann_toneburst(1.0e6, 5, 1.0e-7),
            Err(WaveError::BurstUndersampled { .. })
        ));
    }

    #[test]
    fn stable_dt_examples() {
        let f1 = VelocityField::uniform(Vec2::new(0.0, 0.0), 0.05e-3, 4, 4, 3935.2).unwrap();
        assert_relative_eq!(stable_dt(&f1, 0.4).unwrap(), 3.5937e-9, max_relative = 1e-3);
        let f2 = VelocityField::uniform(Vec2::new(0.0, 0.0), 0.1e-3, 4, 4, 1588.4).unwrap();
        assert_relative_eq!(stable_dt(&f2, 0.4).unwrap(), 1.7806e-8, max_relative = 1e-3);
        assert!(matches!(stable_dt(&f1, 0.0), Err(WaveError::BadCourant(_))));
        assert!(matches!(stable_dt(&f1, 1.5), Err(WaveError::BadCourant(_))));
    }

    /// Small homogeneous medium: 500 kHz burst, two transducers separated by
    /// `separation` along the domain diagonal.
    fn homogeneous_setup(
        separation: f64,
        spacing: f64,
    ) -> (VelocityField, TransducerArray, Toneburst, SimConfig) {
        let c = 1588.4;
        let f = 0.5e6;
        let sponge = 9.0 * c / f;
        let gap = 2.0e-3;
        let half = separation / std::f64::consts::SQRT_2 / 2.0 + gap + sponge;
        let n = (2.0 * half / spacing).ceil() as usize;
        let origin = Vec2::new(-half + spacing / 2.0, -half + spacing / 2.0);
        let field = VelocityField::uniform(origin, spacing, n, n, c).unwrap();
        let d = separation / std::f64::consts::SQRT_2 / 2.0;
        let array = TransducerArray::new(
            vec![Vec2::new(-d, -d), Vec2::new(d, d)],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        let burst = hann_toneburst(f, 5, 1.0e-8).unwrap();
        let t_max = separation / c + burst.duration() + 4.0e-6;
        let config = SimConfig::new(t_max);
        (field, array, burst, config)
    }

    #[test]
    fn homogeneous_envelope_peak_matches_straight_ray() {
        let sep = 40.0e-3;
        let (field, array, burst, config) = homogeneous_setup(sep, 0.127e-3);
        let fmc = simulate_fmc(&field, &array, &array, &burst, &config).unwrap();
        let trace = fmc.trace(0, 1);
        // crude envelope peak: max |x| location (adequate at this SNR)
        let (k, _) = trace
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        let got = fmc.time_of(k);
        let expected = sep / 1588.4 + burst.centroid();
        assert!(
            (got - expected).abs() / expected < 0.03,
            "envelope peak {got}, expected {expected}"
        );
    }

    #[test]
    fn reciprocity_in_homogeneous_medium() {
        let (field, array, burst, config) = homogeneous_setup(12.0e-3, 0.25e-3);
        let fmc = simulate_fmc(&field, &array, &array, &burst, &config).unwrap();
        let fwd = fmc.trace(0, 1);
        let bwd = fmc.trace(1, 0);
        let peak = fwd.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak > 0.0);
        let mut worst = 0.0f32;
        for (a, b) in fwd.iter().zip(bwd) {
            worst = worst.max((a - b).abs());
        }
        assert!(
            worst / peak < 1e-6,
            "reciprocity violated: {} of peak",
            worst / peak
        );
    }

    #[test]
    fn linearity_and_zero_burst() {
        let (field, array, burst, config) = homogeneous_setup(12.0e-3, 0.25e-3);
        let base = simulate_fmc(&field, &array, &array, &burst, &config).unwrap();
        let doubled = simulate_fmc(&field, &array, &array, &burst.scaled(2.0), &config).unwrap();
        for (a, b) in base.traces().iter().zip(doubled.traces()) {
            // exact in the f64 engine; the f32 storage cast may differ by
            // one ulp at the subnormal floor
            assert!(
                (a * 2.0 - b).abs() <= 2.0 * f32::MIN_POSITIVE,
                "scaling by 2 must be exact: {a} vs {b}"
            );
        }
        let quiet = simulate_fmc(&field, &array, &array, &burst.scaled(0.0), &config).unwrap();
        assert!(quiet.traces().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_non_increasing_after_source_off() {
        let c = 1500.0;
        let f = 1.0e6;
        let spacing = 0.2e-3;
        let n = 220;
        let half = n as f64 * spacing / 2.0;
        let origin = Vec2::new(-half + spacing / 2.0, -half + spacing / 2.0);
        let field = VelocityField::uniform(origin, spacing, n, n, c).unwrap();
        let burst = hann_toneburst(f, 5, 1.0e-8).unwrap();
        let mut config = SimConfig::new(30.0e-6);
        config.sponge_wavelengths = 6.0; // fits the reduced test domain
        let engine = Engine::new(&field, f, &config).unwrap();
        let injection = engine.monopole_injection(Vec2::new(0.0, 0.0));
        let mut energies: Vec<(usize, f64)> = Vec::new();
        let burst_steps = (burst.duration() / engine.dt).ceil() as usize;
        engine
            .run_shot(&injection, &burst, &[], &mut |step, prev, cur| {
                if step > burst_steps && step % 100 == 0 {
                    energies.push((step, engine.energy(prev, cur)));
                }
            })
            .unwrap();
        assert!(energies.len() >= 4);
        for w in energies.windows(2) {
            let (s0, e0) = w[0];
            let (s1, e1) = w[1];
            let steps = (s1 - s0) as f64;
            // allow 0.1 % per 1000 steps of numerical tolerance
            assert!(
                e1 <= e0 * (1.0 + 1e-3 * steps / 1000.0),
                "energy grew from {e0} to {e1}"
            );
        }
    }

    #[test]
    fn grid_refinement_shifts_arrival_below_one_percent() {
        let sep = 15.0e-3;
        let pick = |spacing: f64| {
            let (field, array, burst, config) = homogeneous_setup(sep, spacing);
            let fmc = simulate_fmc(&field, &array, &array, &burst, &config).unwrap();
            let tr = fmc.trace(0, 1);
            let peak = tr.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let k = tr.iter().position(|v| v.abs() > 0.3 * peak).unwrap();
            let prev = tr[k - 1].abs() as f64;
            let here = tr[k].abs() as f64;
            let frac = (0.3 * peak as f64 - prev) / (here - prev);
            fmc.t0() + (k as f64 - 1.0 + frac) * fmc.dt()
        };
        let coarse = pick(0.254e-3);
        let fine = pick(0.127e-3);
        assert!(
            (coarse - fine).abs() / fine < 0.01,
            "coarse {coarse} vs fine {fine}"
        );
    }

    #[test]
    fn instability_detected_with_oversized_dt() {
        let field = VelocityField::uniform(Vec2::new(0.0, 0.0), 0.5e-3, 64, 64, 1500.0).unwrap();
        let f = 1.0e6;
        let config = SimConfig {
            sponge_wavelengths: 2.0,
            ..SimConfig::new(40.0e-6)
        };
        let mut engine = Engine::new(&field, f, &config).unwrap();
        engine.dt *= 4.0; // deliberately break the Courant condition
        for k in engine.coeff.iter_mut() {
            *k *= 16.0;
        }
        let burst = hann_toneburst(f, 5, 1.0e-8).unwrap();
        let injection = engine.monopole_injection(Vec2::new(0.016, 0.016));
        let err = engine.run_shot(&injection, &burst, &[], &mut |_, _, _| {});
        assert!(matches!(err, Err(WaveError::Instability { .. })));
    }

    #[test]
    fn transducer_in_sponge_rejected() {
        let (field, _, burst, config) = homogeneous_setup(12.0e-3, 0.25e-3);
        let bad = TransducerArray::new(
            vec![field.origin() + Vec2::new(1e-3, 1e-3)],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        assert!(matches!(
            simulate_fmc(&field, &bad, &bad, &burst, &config),
            Err(WaveError::TransducerInSponge(..))
        ));
    }

    #[test]
    fn fmc1_round_trip_bit_exact() {
        let src = TransducerArray::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(0.01, 0.0)],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        let rcv = TransducerArray::new(
            vec![
                Vec2::new(0.0, 0.01),
                Vec2::new(0.01, 0.01),
                Vec2::new(0.02, 0.0),
            ],
            None,
            ArrayKind::Physical,
        )
        .unwrap();
        let traces: Vec<f32> = (0..2 * 3 * 5).map(|i| (i as f32).sin()).collect();
        let fmc = FmcData::new(1.0e-8, 0.0, 5, traces, src, rcv).unwrap();
        let mut buf = Vec::new();
        fmc.write_fmc1(&mut buf).unwrap();
        let back = FmcData::read_fmc1(&mut buf.as_slice()).unwrap();
        assert_eq!(fmc, back);
        let mut buf2 = Vec::new();
        back.write_fmc1(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn pad_field_replicates_edges() {
        let f = VelocityField::new(
            Vec2::new(0.0, 0.0),
            1.0e-3,
            2,
            2,
            vec![1500.0, 1600.0, 1700.0, 1800.0],
        )
        .unwrap();
        let p = pad_field(&f, 2.0e-3);
        assert_eq!(p.nx(), 6);
        assert_eq!(p.at(0, 0), 1500.0);
        assert_eq!(p.at(5, 0), 1600.0);
        assert_eq!(p.at(0, 5), 1700.0);
        assert_eq!(p.at(5, 5), 1800.0);
        assert_eq!(p.origin(), Vec2::new(-2.0e-3, -2.0e-3));
    }
}
