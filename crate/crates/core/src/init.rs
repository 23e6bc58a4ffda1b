//! Bi-velocity starting models.
//!
//! The reconstruction starts from a two-speed field: a known external-region
//! speed outside the ROI boundary and a single unknown interior speed. With
//! a virtual array on a convex boundary the interior travel times are plain
//! chords, so the misfit is closed-form and a golden-section search finds
//! the interior speed in milliseconds. The physical-array variant needs one
//! full eikonal forward model per candidate speed, which is orders of
//! magnitude slower - that asymmetry is the whole point of the virtual
//! route.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::arrival::ArrivalMatrix;
use crate::eikonal::{arrival_matrix_model, EikonalError, UpwindOrder};
use crate::field::{FieldError, RoiBoundary, TransducerArray, VelocityField};
use crate::geom::Vec2;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("bracket ({0}, {1}) is not an increasing interval")]
    BadBracket(f64, f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("misfit evaluated to a non-finite value at c = {0}")]
    NonFiniteMisfit(f64),
    #[error("need at least {min} valid pairs, got {got}")]
    TooFewPairs { min: usize, got: usize },
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Piecewise-constant starting model: `c_roi` inside the boundary polygon,
/// `c_er` outside.
#[derive(Debug, Clone)]
pub struct BiVelocityModel {
    pub c_er: f64,
    pub c_roi: f64,
    pub boundary: RoiBoundary,
}

impl BiVelocityModel {
    /// Rasterize onto a grid: every cell centre inside the boundary polygon
    /// takes `c_roi`, every other cell `c_er`.
    pub fn materialize(
        &self,
        origin: Vec2,
        spacing: f64,
        nx: usize,
        ny: usize,
    ) -> Result<VelocityField, FieldError> {
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = origin.y + iy as f64 * spacing;
            for ix in 0..nx {
                let p = Vec2::new(origin.x + ix as f64 * spacing, y);
                values.push(if self.boundary.contains(p) {
                    self.c_roi
                } else {
                    self.c_er
                });
            }
        }
        VelocityField::new(origin, spacing, nx, ny, values)
    }
}

/// Result of a golden-section minimisation.
#[derive(Debug, Clone)]
pub struct GoldenResult {
    pub minimizer: f64,
    pub minimum: f64,
    /// Final bracket (width <= tolerance).
    pub bracket: (f64, f64),
    /// Number of interval reductions (deterministic for fixed inputs).
    pub iterations: usize,
    /// Every (c, misfit) evaluation in order.
    pub evaluations: Vec<(f64, f64)>,
}

/// Golden-section search for the minimum of `misfit` on `[lo, hi]`,
/// shrinking the bracket to width `tol`.
pub fn golden_section(
    mut misfit: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<GoldenResult, InitError> {
    if !(lo < hi) {
        return Err(InitError::BadBracket(lo, hi));
    }
    if !(tol > 0.0) {
        return Err(InitError::BadTolerance(tol));
    }
    const RHO: f64 = 0.618_033_988_749_894_9; // (sqrt(5) - 1) / 2
    let iterations = (((hi - lo) / tol).ln() / (1.0 / RHO).ln()).ceil().max(0.0) as usize;

    let mut evaluations = Vec::new();
    let mut eval = |c: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64, InitError> {
        let m = misfit(c);
        if !m.is_finite() {
            return Err(InitError::NonFiniteMisfit(c));
        }
        evals.push((c, m));
        Ok(m)
    };

    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - RHO * (b - a);
    let mut x2 = a + RHO * (b - a);
    let mut f1 = eval(x1, &mut evaluations)?;
    let mut f2 = eval(x2, &mut evaluations)?;
    for _ in 0..iterations {
        if (b - a) <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - RHO * (b - a);
            f1 = eval(x1, &mut evaluations)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + RHO * (b - a);
            f2 = eval(x2, &mut evaluations)?;
        }
    }
    let (minimizer, minimum) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok(GoldenResult {
        minimizer,
        minimum,
        bracket: (a, b),
        iterations,
        evaluations,
    })
}

/// Initialisation diagnostics.
#[derive(Debug, Clone)]
pub struct InitReport {
    pub c_roi: f64,
    pub n_pairs_used: usize,
    pub elapsed: Duration,
    /// Mean signed residual (model - measured) at the optimum, seconds.
    pub mean_residual: f64,
    pub evaluations: Vec<(f64, f64)>,
}

impl InitReport {
    /// Misfit curve as CSV (`c,misfit` per evaluation, in search order).
    pub fn write_misfit_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "c,misfit")?;
        for (c, m) in &self.evaluations {
            writeln!(w, "{c:e},{m:e}")?;
        }
        Ok(())
    }
}

/// Estimate the interior speed from virtual-array arrivals: interior paths
/// are straight chords on a convex boundary, so the misfit is closed-form.
/// Pairs with chords shorter than `2 * wavelength_er` are excluded (their
/// rays graze the boundary).
pub fn init_virtual(
    arrivals: &ArrivalMatrix,
    array: &TransducerArray,
    boundary: &RoiBoundary,
    c_er: f64,
    wavelength_er: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<(BiVelocityModel, InitReport), InitError> {
    let start = Instant::now();
    let min_chord = 2.0 * wavelength_er;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (j, k, tau) in arrivals.valid_pairs() {
        if j == k {
            continue;
        }
        let chord = array.positions()[j].dist(array.positions()[k]);
        if chord >= min_chord {
            pairs.push((chord, tau));
        }
    }
    if pairs.len() < 10 {
        return Err(InitError::TooFewPairs {
            min: 10,
            got: pairs.len(),
        });
    }
    let misfit = |c: f64| {
        pairs
            .iter()
            .map(|&(d, tau)| {
                let r = d / c - tau;
                r * r
            })
            .sum::<f64>()
    };
    let result = golden_section(misfit, bracket.0, bracket.1, tol)?;
    let c_roi = result.minimizer;
    let mean_residual =
        pairs.iter().map(|&(d, tau)| d / c_roi - tau).sum::<f64>() / pairs.len() as f64;
    Ok((
        BiVelocityModel {
            c_er,
            c_roi,
            boundary: boundary.clone(),
        },
        InitReport {
            c_roi,
            n_pairs_used: pairs.len(),
            elapsed: start.elapsed(),
            mean_residual,
            evaluations: result.evaluations,
        },
    ))
}

/// Grid parameters (origin, nx, ny) covering the bounding box of a
/// transducer array with a three-cell margin.
pub fn grid_covering_array(array: &TransducerArray, spacing: f64) -> (Vec2, usize, usize) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in array.positions() {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let margin = 3.0 * spacing;
    let origin = lo - Vec2::new(margin, margin);
    let nx = (((hi.x - lo.x) + 2.0 * margin) / spacing).ceil() as usize + 1;
    let ny = (((hi.y - lo.y) + 2.0 * margin) / spacing).ceil() as usize + 1;
    (origin, nx, ny)
}

/// Physical-array initialisation: every candidate interior speed requires
/// rasterizing the bi-velocity field and running one eikonal forward model
/// over all sources. The grid covers the physical array plus a margin.
pub fn init_physical_bestbrt(
    arrivals: &ArrivalMatrix,
    array: &TransducerArray,
    boundary: &RoiBoundary,
    c_er: f64,
    grid_spacing: f64,
    bracket: (f64, f64),
    tol: f64,
    order: UpwindOrder,
) -> Result<(BiVelocityModel, InitReport), InitError> {
    let start = Instant::now();
    let n_valid = arrivals.valid_pairs().filter(|&(i, l, _)| i != l).count();
    if n_valid < 10 {
        return Err(InitError::TooFewPairs {
            min: 10,
            got: n_valid,
        });
    }
    let (origin, nx, ny) = grid_covering_array(array, grid_spacing);

    let template = BiVelocityModel {
        c_er,
        c_roi: 0.0,
        boundary: boundary.clone(),
    };
    // rasterize the membership mask once; candidate speeds only swap values
    let mask: Vec<bool> = {
        let mut m = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = origin.y + iy as f64 * grid_spacing;
            for ix in 0..nx {
                let p = Vec2::new(origin.x + ix as f64 * grid_spacing, y);
                m.push(template.boundary.contains(p));
            }
        }
        m
    };

    let misfit = |c: f64| -> f64 {
        let values: Vec<f64> = mask.iter().map(|&in_roi| if in_roi { c } else { c_er }).collect();
        let field = match VelocityField::new(origin, grid_spacing, nx, ny, values) {
            Ok(f) => f,
            Err(_) => return f64::NAN,
        };
        match arrival_matrix_model(&field, array, array, order) {
            Ok(model) => {
                let mut m = 0.0;
                for (i, l, tau) in arrivals.valid_pairs() {
                    if i == l {
                        continue;
                    }
                    if let Some(t_model) = model.get(i, l) {
                        let r = t_model - tau;
                        m += r * r;
                    }
                }
                m
            }
            Err(_) => f64::NAN,
        }
    };
    let result = golden_section(misfit, bracket.0, bracket.1, tol)?;
    let c_roi = result.minimizer;
    Ok((
        BiVelocityModel {
            c_er,
            c_roi,
            boundary: boundary.clone(),
        },
        InitReport {
            c_roi,
            n_pairs_used: n_valid,
            elapsed: start.elapsed(),
            mean_residual: 0.0,
            evaluations: result.evaluations,
        },
    ))
}
