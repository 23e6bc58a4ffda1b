//! Periodic cubic spline interpolation.
//!
//! Used to turn tabulated diameter/thickness values at a handful of azimuths
//! into smooth 360°-periodic profiles. The interpolant is C²-continuous and
//! matches value and first two derivatives across the period wrap.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("need at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("duplicate knot abscissa {0}")]
    DuplicateKnot(f64),
    #[error("knot abscissa {0} outside [0, {1})")]
    KnotOutOfRange(f64, f64),
}

/// Cubic spline with periodic end conditions on a fixed period.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    /// Knot abscissae, sorted ascending within [0, period).
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
    period: f64,
}

impl PeriodicSpline {
    /// Interpolate `(x, y)` knots with period `period`. Knots may be given in
    /// any order; abscissae must be distinct and lie in `[0, period)`.
    pub fn new(knots: &[(f64, f64)], period: f64) -> Result<Self, SplineError> {
        let n = knots.len();
        if n < 3 {
            return Err(SplineError::TooFewKnots(n));
        }
        let mut sorted: Vec<(f64, f64)> = knots.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(SplineError::DuplicateKnot(w[0].0));
            }
        }
        for &(x, _) in &sorted {
            if !(0.0..period).contains(&x) {
                return Err(SplineError::KnotOutOfRange(x, period));
            }
        }
        let xs: Vec<f64> = sorted.iter().map(|k| k.0).collect();
        let ys: Vec<f64> = sorted.iter().map(|k| k.1).collect();

        // Interval widths, the last one wrapping around the period.
        let h: Vec<f64> = (0..n)
            .map(|i| {
                if i + 1 < n {
                    xs[i + 1] - xs[i]
                } else {
                    xs[0] + period - xs[n - 1]
                }
            })
            .collect();

        // Cyclic tridiagonal system for the knot second derivatives:
        //   h[i-1]/6 m[i-1] + (h[i-1]+h[i])/3 m[i] + h[i]/6 m[i+1] = rhs[i]
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let hm = h[(i + n - 1) % n];
            let hi = h[i];
            a[i] = hm / 6.0;
            b[i] = (hm + hi) / 3.0;
            c[i] = hi / 6.0;
            let ym = ys[(i + n - 1) % n];
            let yp = ys[(i + 1) % n];
            d[i] = (yp - ys[i]) / hi - (ys[i] - ym) / hm;
        }
        let m = solve_cyclic_tridiagonal(&a, &b, &c, &d);
        Ok(Self { xs, ys, m, period })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Evaluate at `x`; any real argument is wrapped into the period.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let mut t = (x - self.xs[0]).rem_euclid(self.period) + self.xs[0];
        // Guard against rem_euclid landing exactly on the upper wrap.
        if t >= self.xs[0] + self.period {
            t = self.xs[0];
        }
        // Find the interval [xs[i], xs[i+1]) containing t (last one wraps).
        let i = match self.xs.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(ins) => ins - 1,
        };
        let x0 = self.xs[i];
        let (x1, y1, m1) = if i + 1 < n {
            (self.xs[i + 1], self.ys[i + 1], self.m[i + 1])
        } else {
            (self.xs[0] + self.period, self.ys[0], self.m[0])
        };
        let h = x1 - x0;
        let (y0, m0) = (self.ys[i], self.m[i]);
        let u = x1 - t;
        let v = t - x0;
        m0 * u * u * u / (6.0 * h)
            + m1 * v * v * v / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * u
            + (y1 / h - m1 * h / 6.0) * v
    }

    /// First derivative, for smoothness checks.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        let eps = self.period * 1e-7;
        (self.eval(x + eps) - self.eval(x - eps)) / (2.0 * eps)
    }
}

/// Solve a cyclic tridiagonal system by the Sherman–Morrison correction of a
/// plain Thomas solve. `a` is the sub-diagonal (with `a[0]` the top-right
/// corner), `c` the super-diagonal (with `c[n-1]` the bottom-left corner).
fn solve_cyclic_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    assert!(n >= 3);
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= a[0] * c[n - 1] / gamma;
    let y = solve_tridiagonal(a, &bb, c, d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = c[n - 1];
    let z = solve_tridiagonal(a, &bb, c, &u);
    let vy = y[0] + a[0] / gamma * y[n - 1];
    let vz = z[0] + a[0] / gamma * z[n - 1];
    let factor = vy / (1.0 + vz);
    (0..n).map(|i| y[i] - factor * z[i]).collect()
}

fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let denom = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / denom;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}
