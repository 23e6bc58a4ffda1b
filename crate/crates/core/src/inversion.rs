//! Bent-ray travel-time inversion.
//!
//! Gauss-Newton-style outer loop: forward arrival times by fast marching,
//! residuals back-traced along rays (steepest descent on the travel-time
//! field), a sparse path-length system solved for a slowness update by
//! conjugate gradients with Huber-smoothed total-variation and first-
//! derivative regularization, then a damped, bounded update. Accepted
//! iterations never increase the data misfit; a backtracking line search
//! halves the damping otherwise.
//!
//! The same entry point serves every imaging configuration - only the
//! arrival matrix, the arrays and the starting field differ.

use rayon::prelude::*;
use thiserror::Error;

use crate::arrival::ArrivalMatrix;
use crate::eikonal::{fmm_solve, EikonalError, TravelTimeField, UpwindOrder};
use crate::field::{FieldError, TransducerArray, VelocityField};
use crate::geom::Vec2;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("no valid arrival pairs to invert")]
    NoValidPairs,
    #[error("arrival matrix is {got_src}x{got_rcv}, arrays are {src}x{rcv}")]
    ShapeMismatch {
        got_src: usize,
        got_rcv: usize,
        src: usize,
        rcv: usize,
    },
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Inversion parameters. Regularization weights are dimensionless: they are
/// scaled internally by the mean ray-coverage diagonal of the normal system,
/// so useful values sit around 0.01..10 regardless of grid or units.
#[derive(Debug, Clone)]
pub struct InversionConfig {
    pub max_outer: usize,
    pub inner_cg: usize,
    /// Total-variation weight (Huber-smoothed).
    pub lambda_tv: f64,
    /// First-derivative (Tikhonov-on-gradient) weight.
    pub lambda_d1: f64,
    /// Reconstructed speeds are clamped into this range (m/s).
    pub speed_bounds: (f64, f64),
    /// Step damping applied to each update (halved on backtracking).
    pub damping: f64,
    /// Stop when the relative misfit decrease falls below this.
    pub convergence: f64,
    pub order: UpwindOrder,
    /// Ray-tracing step as a fraction of the grid spacing.
    pub ray_step_factor: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_outer: 15,
            inner_cg: 30,
            lambda_tv: 0.1,
            lambda_d1: 0.0,
            speed_bounds: (1300.0, 4200.0),
            damping: 0.7,
            convergence: 1.0e-3,
            order: UpwindOrder::Second,
            ray_step_factor: 0.5,
        }
    }
}

/// One accepted outer iteration.
#[derive(Debug, Clone)]
pub struct MisfitRow {
    pub iteration: usize,
    /// Data misfit (sum of squared residuals), s².
    pub misfit: f64,
    pub n_valid: usize,
    pub n_trapped: usize,
    pub max_abs_residual: f64,
    /// L2 norm of the applied slowness update.
    pub update_norm: f64,
    pub damping_used: f64,
}

/// Per-run convergence record.
#[derive(Debug, Clone)]
pub struct MisfitReport {
    pub rows: Vec<MisfitRow>,
    /// Cells whose cumulative |update| exceeds 5x the median over all
    /// ray-touched cells - a proxy for ray-like artefacts.
    pub ray_artefact_cells: usize,
    pub stopped_early: bool,
}

impl MisfitReport {
    pub fn final_misfit(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.misfit)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "iteration,misfit,n_valid,n_trapped,max_abs_residual,update_norm,damping"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{},{},{:e},{:e},{}",
                r.iteration,
                r.misfit,
                r.n_valid,
                r.n_trapped,
                r.max_abs_residual,
                r.update_norm,
                r.damping_used
            )?;
        }
        Ok(())
    }
}

/// A back-traced ray: the polyline and the per-cell path lengths.
#[derive(Debug, Clone)]
pub struct RayPath {
    pub points: Vec<Vec2>,
    /// (cell index, length inside that cell), unordered.
    pub cells: Vec<(u32, f64)>,
}

#[derive(Debug, Error)]
#[error("ray from ({0}, {1}) did not reach the source (trapped)")]
pub struct TrappedRay(pub f64, pub f64);

/// Trace the first-arrival ray from `receiver` back to the source of `tt`
/// by stepping against the travel-time gradient. Step length is
/// `step_factor * spacing`; the walk must reach within one spacing of the
/// source in `10 (nx + ny)` steps.
pub fn backtrace_ray(
    tt: &TravelTimeField,
    receiver: Vec2,
    step_factor: f64,
) -> Result<RayPath, TrappedRay> {
    let h = tt.spacing();
    let step = step_factor * h;
    let source = tt.source();
    let max_steps = 10 * (tt.nx() + tt.ny());
    let mut points = vec![receiver];
    let mut cells: Vec<(u32, f64)> = Vec::new();
    let mut p = receiver;

    if receiver.dist(source) <= h {
        return Ok(RayPath {
            points,
            cells: Vec::new(),
        });
    }

    for _ in 0..max_steps {
        let g = tt.gradient(p);
        let gn = g.norm();
        if !(gn > 0.0) || !gn.is_finite() {
            return Err(TrappedRay(receiver.x, receiver.y));
        }
        let dir = g / gn;
        let mut q = p - dir * step;
        // final hop straight to the source once we are within one spacing
        let finished = q.dist(source) <= h || p.dist(source) <= h;
        if finished {
            q = source;
        }
        // clamp to the grid interior
        let (fx, fy) = field_coords(tt, q);
        if fx < 0.0 || fy < 0.0 || fx > (tt.nx() - 1) as f64 || fy > (tt.ny() - 1) as f64 {
            return Err(TrappedRay(receiver.x, receiver.y));
        }
        accumulate_segment(tt, p, q, &mut cells);
        points.push(q);
        p = q;
        if finished {
            return Ok(RayPath { points, cells });
        }
    }
    Err(TrappedRay(receiver.x, receiver.y))
}

fn field_coords(tt: &TravelTimeField, p: Vec2) -> (f64, f64) {
    (
        (p.x - tt.origin().x) / tt.spacing(),
        (p.y - tt.origin().y) / tt.spacing(),
    )
}

/// Attribute the segment length to the cell containing its midpoint.
fn accumulate_segment(tt: &TravelTimeField, a: Vec2, b: Vec2, cells: &mut Vec<(u32, f64)>) {
    let len = a.dist(b);
    if len == 0.0 {
        return;
    }
    let mid = (a + b) * 0.5;
    let (fx, fy) = field_coords(tt, mid);
    let ix = (fx.round().max(0.0) as usize).min(tt.nx() - 1);
    let iy = (fy.round().max(0.0) as usize).min(tt.ny() - 1);
    let idx = (iy * tt.nx() + ix) as u32;
    // rays revisit the same cell in consecutive segments; merge in place
    if let Some(last) = cells.last_mut() {
        if last.0 == idx {
            last.1 += len;
            return;
        }
    }
    cells.push((idx, len));
}

/// Resolution limit of ray tomography: `sqrt(c * l / f)` for background
/// speed `c`, longest propagation path `l` and centre frequency `f`.
pub fn resolution_limit(c: f64, l: f64, f: f64) -> f64 {
    (c * l / f).sqrt()
}

/// First-Fresnel-zone resolution limits of a physical acquisition and of a
/// virtual-boundary acquisition.
#[derive(Debug, Clone, Copy)]
pub struct ResolutionReport {
    /// Limit from the longest physical source-receiver pair.
    pub physical: f64,
    /// Limit across the ROI from the virtual boundary array.
    pub virtual_boundary: f64,
}

pub fn resolution_report(
    physical: &TransducerArray,
    c0: f64,
    d_roi: f64,
    c_roi: f64,
    f: f64,
) -> ResolutionReport {
    let mut longest = 0.0f64;
    for (i, a) in physical.positions().iter().enumerate() {
        for b in physical.positions().iter().skip(i + 1) {
            longest = longest.max(a.dist(*b));
        }
    }
    ResolutionReport {
        physical: resolution_limit(c0, longest, f),
        virtual_boundary: resolution_limit(c_roi, d_roi, f),
    }
}

struct RaySystem {
    /// Per row: residual and the entry range into `entries`.
    rows: Vec<(f64, usize, usize)>,
    entries: Vec<(u32, f64)>,
    n_trapped: usize,
    n_valid: usize,
    misfit: f64,
    max_abs_residual: f64,
}

/// Forward model all sources, sample receivers, back-trace rays for valid
/// pairs and assemble the sparse system. Row order is (source, receiver),
/// fixed regardless of thread count.
fn forward_with_rays(
    field: &VelocityField,
    sources: &TransducerArray,
    receivers: &TransducerArray,
    arrivals: &ArrivalMatrix,
    config: &InversionConfig,
) -> Result<RaySystem, InversionError> {
    type PerSource = (Vec<(usize, f64, Option<RayPath>)>, usize);
    let per_source: Result<Vec<PerSource>, EikonalError> = sources
        .positions()
        .par_iter()
        .enumerate()
        .map(|(i, &src)| {
            let tt = fmm_solve(field, src, config.order)?;
            let mut rows = Vec::new();
            let mut trapped = 0usize;
            for (l, &rcv) in receivers.positions().iter().enumerate() {
                let Some(tau_meas) = arrivals.get(i, l) else {
                    continue;
                };
                if i == l && sources.positions()[i] == rcv {
                    continue;
                }
                let tau_model = tt.sample(rcv);
                let resid = tau_model - tau_meas;
                match backtrace_ray(&tt, rcv, config.ray_step_factor) {
                    Ok(ray) => rows.push((l, resid, Some(ray))),
                    Err(_) => {
                        trapped += 1;
                        rows.push((l, resid, None));
                    }
                }
            }
            Ok((rows, trapped))
        })
        .collect();
    let per_source = per_source?;

    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut n_trapped = 0usize;
    let mut misfit = 0.0;
    let mut max_abs = 0.0f64;
    let mut n_valid = 0usize;
    for (source_rows, trapped) in per_source {
        n_trapped += trapped;
        for (_l, resid, ray) in source_rows {
            misfit += resid * resid;
            max_abs = max_abs.max(resid.abs());
            n_valid += 1;
            if let Some(ray) = ray {
                let start = entries.len();
                entries.extend_from_slice(&ray.cells);
                rows.push((resid, start, entries.len()));
            }
        }
    }
    if n_valid == 0 {
        return Err(InversionError::NoValidPairs);
    }
    Ok(RaySystem {
        rows,
        entries,
        n_trapped,
        n_valid,
        misfit,
        max_abs_residual: max_abs,
    })
}

/// Plain forward misfit (no rays), for line-search evaluations.
fn forward_misfit(
    field: &VelocityField,
    sources: &TransducerArray,
    receivers: &TransducerArray,
    arrivals: &ArrivalMatrix,
    order: UpwindOrder,
) -> Result<f64, InversionError> {
    let sums: Result<Vec<f64>, EikonalError> = sources
        .positions()
        .par_iter()
        .enumerate()
        .map(|(i, &src)| {
            let tt = fmm_solve(field, src, order)?;
            let mut m = 0.0;
            for (l, &rcv) in receivers.positions().iter().enumerate() {
                if let Some(tau_meas) = arrivals.get(i, l) {
                    if i == l && src == rcv {
                        continue;
                    }
                    let r = tt.sample(rcv) - tau_meas;
                    m += r * r;
                }
            }
            Ok(m)
        })
        .collect();
    Ok(sums?.iter().sum())
}

/// Invert arrival times starting from `start`, returning the reconstructed
/// field and the per-iteration misfit report.
pub fn invert(
    start: &VelocityField,
    arrivals: &ArrivalMatrix,
    sources: &TransducerArray,
    receivers: &TransducerArray,
    config: &InversionConfig,
) -> Result<(VelocityField, MisfitReport), InversionError> {
    if arrivals.n_src() != sources.len() || arrivals.n_rcv() != receivers.len() {
        return Err(InversionError::ShapeMismatch {
            got_src: arrivals.n_src(),
            got_rcv: arrivals.n_rcv(),
            src: sources.len(),
            rcv: receivers.len(),
        });
    }
    let (nx, ny) = (start.nx(), start.ny());
    let n_cells = nx * ny;
    let (s_lo, s_hi) = (1.0 / config.speed_bounds.1, 1.0 / config.speed_bounds.0);

    let mut slowness: Vec<f64> = start.values().iter().map(|&c| 1.0 / c).collect();
    let start_slowness = slowness.clone();
    let mut field = start.clone();
    let mut rows = Vec::new();
    let mut touched = vec![false; n_cells];
    let mut stopped_early = false;
    let mut prev_misfit = f64::INFINITY;

    for iteration in 0..config.max_outer {
        let sys = forward_with_rays(&field, sources, receivers, arrivals, config)?;
        for &(_, a, b) in &sys.rows {
            for &(cell, _) in &sys.entries[a..b] {
                touched[cell as usize] = true;
            }
        }
        if sys.rows.is_empty() {
            stopped_early = true;
            break;
        }

        // normal-system diagonal scale for the regularization weights
        let mut diag_sum = 0.0;
        for &(cell, len) in &sys.entries {
            let _ = cell;
            diag_sum += len * len;
        }
        let n_touched = touched.iter().filter(|&&t| t).count().max(1);
        let sigma = diag_sum / n_touched as f64;

        let eps = 1.0e-3 * slowness.iter().sum::<f64>() / n_cells as f64;
        let (wx, wy) = huber_edge_weights(&slowness, nx, ny, eps);

        // right-hand side: -(L^T r + reg gradients)
        let mut b = vec![0.0f64; n_cells];
        for &(resid, a0, b0) in &sys.rows {
            for &(cell, len) in &sys.entries[a0..b0] {
                b[cell as usize] -= resid * len;
            }
        }
        let gtv = apply_weighted_laplacian(&slowness, &wx, &wy, nx, ny);
        let ones = vec![1.0f64; (nx - 1) * ny];
        let ones_y = vec![1.0f64; nx * (ny - 1)];
        let gd1 = apply_weighted_laplacian(&slowness, &ones, &ones_y, nx, ny);
        for i in 0..n_cells {
            b[i] -= config.lambda_tv * sigma * gtv[i] + config.lambda_d1 * sigma * gd1[i];
        }

        // conjugate gradients on the SPD normal operator
        let apply = |x: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0f64; n_cells];
            for &(_, a0, b0) in &sys.rows {
                let mut dot = 0.0;
                for &(cell, len) in &sys.entries[a0..b0] {
                    dot += len * x[cell as usize];
                }
                for &(cell, len) in &sys.entries[a0..b0] {
                    out[cell as usize] += dot * len;
                }
            }
            let tv = apply_weighted_laplacian(x, &wx, &wy, nx, ny);
            let d1 = apply_weighted_laplacian(x, &ones, &ones_y, nx, ny);
            for i in 0..n_cells {
                out[i] += config.lambda_tv * sigma * tv[i] + config.lambda_d1 * sigma * d1[i];
            }
            out
        };
        let delta = conjugate_gradient(&apply, &b, config.inner_cg);

        // damped, bounded update with backtracking on the data misfit
        let mut damping = config.damping;
        let mut accepted = false;
        let mut update_norm = 0.0;
        for _ in 0..5 {
            let candidate: Vec<f64> = slowness
                .iter()
                .zip(&delta)
                .map(|(&s, &d)| (s + damping * d).clamp(s_lo, s_hi))
                .collect();
            let cand_field = VelocityField::new(
                field.origin(),
                field.spacing(),
                nx,
                ny,
                candidate.iter().map(|&s| 1.0 / s).collect(),
            )?;
            let m_new = forward_misfit(&cand_field, sources, receivers, arrivals, config.order)?;
            if m_new <= sys.misfit {
                update_norm = candidate
                    .iter()
                    .zip(&slowness)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                slowness = candidate;
                field = cand_field;
                accepted = true;
                break;
            }
            damping /= 2.0;
        }
        rows.push(MisfitRow {
            iteration,
            misfit: sys.misfit,
            n_valid: sys.n_valid,
            n_trapped: sys.n_trapped,
            max_abs_residual: sys.max_abs_residual,
            update_norm,
            damping_used: damping,
        });
        if !accepted {
            stopped_early = true;
            break;
        }
        if prev_misfit.is_finite() {
            let rel = (prev_misfit - sys.misfit) / prev_misfit.max(f64::MIN_POSITIVE);
            if rel >= 0.0 && rel < config.convergence {
                break;
            }
        }
        prev_misfit = sys.misfit;
    }

    // ray-artefact proxy: cumulative |update| vs its median on touched cells
    let mut updates: Vec<f64> = touched
        .iter()
        .enumerate()
        .filter(|(_, &t)| t)
        .map(|(i, _)| (slowness[i] - start_slowness[i]).abs())
        .collect();
    let ray_artefact_cells = if updates.is_empty() {
        0
    } else {
        updates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = updates[updates.len() / 2];
        if med > 0.0 {
            touched
                .iter()
                .enumerate()
                .filter(|&(i, &t)| t && (slowness[i] - start_slowness[i]).abs() > 5.0 * med)
                .count()
        } else {
            0
        }
    };

    Ok((
        field,
        MisfitReport {
            rows,
            ray_artefact_cells,
            stopped_early,
        },
    ))
}

/// Normalized Huber edge weights `eps / sqrt((D s)^2 + eps^2)` for x- and
/// y-edges: 1 on flat regions, small across sharp jumps, so the TV operator
/// has Laplacian scale and stays edge-preserving.
fn huber_edge_weights(s: &[f64], nx: usize, ny: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut wx = vec![0.0; (nx - 1) * ny];
    for iy in 0..ny {
        for ix in 0..nx - 1 {
            let g = s[iy * nx + ix + 1] - s[iy * nx + ix];
            wx[iy * (nx - 1) + ix] = eps / (g * g + eps * eps).sqrt();
        }
    }
    let mut wy = vec![0.0; nx * (ny - 1)];
    for iy in 0..ny - 1 {
        for ix in 0..nx {
            let g = s[(iy + 1) * nx + ix] - s[iy * nx + ix];
            wy[iy * nx + ix] = eps / (g * g + eps * eps).sqrt();
        }
    }
    (wx, wy)
}

/// Weighted graph Laplacian: `Dx^T (wx . Dx x) + Dy^T (wy . Dy x)`.
fn apply_weighted_laplacian(
    x: &[f64],
    wx: &[f64],
    wy: &[f64],
    nx: usize,
    ny: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx - 1 {
            let g = wx[iy * (nx - 1) + ix] * (x[iy * nx + ix + 1] - x[iy * nx + ix]);
            out[iy * nx + ix] -= g;
            out[iy * nx + ix + 1] += g;
        }
    }
    for iy in 0..ny - 1 {
        for ix in 0..nx {
            let g = wy[iy * nx + ix] * (x[(iy + 1) * nx + ix] - x[iy * nx + ix]);
            out[iy * nx + ix] -= g;
            out[(iy + 1) * nx + ix] += g;
        }
    }
    out
}

/// Plain conjugate gradients with sequential reductions (bit-stable across
/// thread counts).
fn conjugate_gradient(apply: &dyn Fn(&[f64]) -> Vec<f64>, b: &[f64], max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let rs0 = rs;
    if rs0 == 0.0 {
        return x;
    }
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new < 1.0e-6 * rs0 {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    x
}
