//! Velocity grids, transducer arrays, ROI boundaries and tissue properties.
//!
//! `VelocityField` is the common currency of the crate: the reconstruction
//! target, the wave-simulation medium and the eikonal input. Grids are
//! regular with square cells; `origin` is the centre of cell `(0, 0)` and
//! values are stored row-major with the y index outermost
//! (`index = iy * nx + ix`).
//!
//! # VGRID file format
//!
//! Six ASCII header lines terminated by `\n`:
//!
//! ```text
//! VGRID
//! nx <usize>
//! ny <usize>
//! spacing <f64>
//! origin_x <f64>
//! origin_y <f64>
//! ```
//!
//! followed by `nx * ny` little-endian IEEE-754 32-bit floats, row-major,
//! y-outer. Speeds are m/s.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::geom::{self, Vec2};

/// Sanity bounds on sound speed values (m/s).
pub const SPEED_MIN: f64 = 100.0;
pub const SPEED_MAX: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid must be at least 2x2 cells, got {0}x{1}")]
    GridTooSmall(usize, usize),
    #[error("grid spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("value buffer has {got} entries, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("speed {0} m/s outside sanity range [{SPEED_MIN}, {SPEED_MAX}]")]
    SpeedOutOfRange(f64),
    #[error("transducer positions must be pairwise distinct (indices {0} and {1})")]
    DuplicatePosition(usize, usize),
    #[error("normal at index {0} is not unit length (|n| = {1})")]
    BadNormal(usize, f64),
    #[error("normals length {0} does not match positions length {1}")]
    NormalCount(usize, usize),
    #[error("boundary polygon is not convex")]
    NotConvex,
    #[error("boundary needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid VGRID file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Regular 2D grid of sound speed (m/s), optionally with density (kg/m³).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    origin: Vec2,
    spacing: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    density: Option<Vec<f64>>,
}

impl VelocityField {
    pub fn new(
        origin: Vec2,
        spacing: f64,
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if nx < 2 || ny < 2 {
            return Err(FieldError::GridTooSmall(nx, ny));
        }
        if !(spacing > 0.0) {
            return Err(FieldError::BadSpacing(spacing));
        }
        if values.len() != nx * ny {
            return Err(FieldError::BadLength {
                got: values.len(),
                expected: nx * ny,
            });
        }
        for &v in &values {
            if !(SPEED_MIN..=SPEED_MAX).contains(&v) {
                return Err(FieldError::SpeedOutOfRange(v));
            }
        }
        Ok(Self {
            origin,
            spacing,
            nx,
            ny,
            values,
            density: None,
        })
    }

    /// Uniform field of speed `c` covering the same parameters.
    pub fn uniform(
        origin: Vec2,
        spacing: f64,
        nx: usize,
        ny: usize,
        c: f64,
    ) -> Result<Self, FieldError> {
        Self::new(origin, spacing, nx, ny, vec![c; nx * ny])
    }

    pub fn with_density(mut self, density: Vec<f64>) -> Result<Self, FieldError> {
        if density.len() != self.values.len() {
            return Err(FieldError::BadLength {
                got: density.len(),
                expected: self.values.len(),
            });
        }
        self.density = Some(density);
        Ok(self)
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn density(&self) -> Option<&[f64]> {
        self.density.as_deref()
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.idx(ix, iy)]
    }

    /// Physical position of the centre of cell `(ix, iy)`.
    #[inline]
    pub fn cell_centre(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + ix as f64 * self.spacing,
            self.origin.y + iy as f64 * self.spacing,
        )
    }

    /// Fractional grid coordinates of a physical position.
    #[inline]
    pub fn grid_coords(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.spacing,
            (p.y - self.origin.y) / self.spacing,
        )
    }

    /// Cell whose centre is nearest to `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let (fx, fy) = self.grid_coords(p);
        let ix = fx.round();
        let iy = fy.round();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            return None;
        }
        Some((ix as usize, iy as usize))
    }

    /// True if `p` lies within the cell-centre bounding box of the grid.
    pub fn contains(&self, p: Vec2) -> bool {
        let (fx, fy) = self.grid_coords(p);
        fx >= 0.0 && fy >= 0.0 && fx <= (self.nx - 1) as f64 && fy <= (self.ny - 1) as f64
    }

    /// Bilinear interpolation of the speed at `p`. Panics outside the grid.
    pub fn sample(&self, p: Vec2) -> f64 {
        bilinear(&self.values, self.nx, self.ny, self.grid_coords(p))
    }

    pub fn max_speed(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min_speed(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Serialize in the VGRID format (speed only).
    pub fn write_vgrid<W: Write>(&self, w: &mut W) -> Result<(), FieldError> {
        write!(
            w,
            "VGRID\nnx {}\nny {}\nspacing {}\norigin_x {}\norigin_y {}\n",
            self.nx, self.ny, self.spacing, self.origin.x, self.origin.y
        )?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Parse the VGRID format. Values are promoted to f64.
    pub fn read_vgrid<R: Read>(r: &mut R) -> Result<Self, FieldError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut line = |bytes: &[u8]| -> Result<String, FieldError> {
            let start = pos;
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(FieldError::Format("truncated header".into()));
            }
            let s = std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| FieldError::Format("non-utf8 header".into()))?
                .to_string();
            pos += 1;
            Ok(s)
        };
        if line(&bytes)? != "VGRID" {
            return Err(FieldError::Format("bad magic, expected VGRID".into()));
        }
        let mut fields = [0f64; 5];
        for (i, key) in ["nx", "ny", "spacing", "origin_x", "origin_y"]
            .iter()
            .enumerate()
        {
            let l = line(&bytes)?;
            let (k, v) = l
                .split_once(' ')
                .ok_or_else(|| FieldError::Format(format!("malformed header line {l:?}")))?;
            if k != *key {
                return Err(FieldError::Format(format!("expected key {key}, got {k}")));
            }
            fields[i] = v
                .parse()
                .map_err(|_| FieldError::Format(format!("bad value in line {l:?}")))?;
        }
        let (nx, ny) = (fields[0] as usize, fields[1] as usize);
        let expected = nx
            .checked_mul(ny)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| FieldError::Format("grid size overflow".into()))?;
        let data = &bytes[pos..];
        if data.len() != expected {
            return Err(FieldError::Format(format!(
                "expected {expected} payload bytes, got {}",
                data.len()
            )));
        }
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(Vec2::new(fields[3], fields[4]), fields[2], nx, ny, values)
    }
}

/// Bilinear interpolation on a row-major y-outer grid at fractional
/// coordinates `(fx, fy)`. Clamps to the valid cell range.
pub fn bilinear(values: &[f64], nx: usize, ny: usize, (fx, fy): (f64, f64)) -> f64 {
    let fx = fx.clamp(0.0, (nx - 1) as f64);
    let fy = fy.clamp(0.0, (ny - 1) as f64);
    let ix = (fx as usize).min(nx - 2);
    let iy = (fy as usize).min(ny - 2);
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let v00 = values[iy * nx + ix];
    let v10 = values[iy * nx + ix + 1];
    let v01 = values[(iy + 1) * nx + ix];
    let v11 = values[(iy + 1) * nx + ix + 1];
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

/// Physical or virtual transducer array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Physical,
    Virtual,
}

/// Ordered transducer positions, with outward unit normals for arrays that
/// sit on a boundary (virtual arrays, boundary-mounted sources).
#[derive(Debug, Clone, PartialEq)]
pub struct TransducerArray {
    positions: Vec<Vec2>,
    normals: Option<Vec<Vec2>>,
    kind: ArrayKind,
}

impl TransducerArray {
    pub fn new(
        positions: Vec<Vec2>,
        normals: Option<Vec<Vec2>>,
        kind: ArrayKind,
    ) -> Result<Self, FieldError> {
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if positions[i] == positions[j] {
                    return Err(FieldError::DuplicatePosition(i, j));
                }
            }
        }
        if let Some(ns) = &normals {
            if ns.len() != positions.len() {
                return Err(FieldError::NormalCount(ns.len(), positions.len()));
            }
            for (i, n) in ns.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-9 {
                    return Err(FieldError::BadNormal(i, n.norm()));
                }
            }
        }
        Ok(Self {
            positions,
            normals,
            kind,
        })
    }

    /// `count` transducers equally spaced on a circle, no normals.
    pub fn circle(centre: Vec2, radius: f64, count: usize) -> Self {
        let positions = (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                centre + Vec2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        Self {
            positions,
            normals: None,
            kind: ArrayKind::Physical,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vec2]> {
        self.normals.as_deref()
    }

    pub fn kind(&self) -> ArrayKind {
        self.kind
    }
}

/// Closed convex curve separating the region of interest from the external
/// region, sampled as an ordered polygon with outward normals.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiBoundary {
    samples: Vec<Vec2>,
    normals: Vec<Vec2>,
    d_roi: f64,
}

impl RoiBoundary {
    /// Build from ordered boundary samples. Outward normals and the maximum
    /// diameter are derived from the polygon.
    pub fn new(samples: Vec<Vec2>) -> Result<Self, FieldError> {
        if samples.len() < 3 {
            return Err(FieldError::TooFewSamples(samples.len()));
        }
        if !geom::is_convex(&samples) {
            return Err(FieldError::NotConvex);
        }
        let n = samples.len();
        let centroid = samples.iter().fold(Vec2::default(), |a, &p| a + p) / n as f64;
        let normals = (0..n)
            .map(|i| {
                let prev = samples[(i + n - 1) % n];
                let next = samples[(i + 1) % n];
                let tangent = (next - prev).normalized().expect("distinct samples");
                let mut normal = tangent.perp();
                if normal.dot(samples[i] - centroid) < 0.0 {
                    normal = -normal;
                }
                normal
            })
            .collect();
        let mut d_roi = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                d_roi = d_roi.max(samples[i].dist(samples[j]));
            }
        }
        Ok(Self {
            samples,
            normals,
            d_roi,
        })
    }

    pub fn samples(&self) -> &[Vec2] {
        &self.samples
    }

    pub fn normals(&self) -> &[Vec2] {
        &self.normals
    }

    /// Maximum diameter of the region of interest.
    pub fn d_roi(&self) -> f64 {
        self.d_roi
    }

    pub fn contains(&self, p: Vec2) -> bool {
        geom::point_in_polygon(p, &self.samples)
    }

    pub fn perimeter(&self) -> f64 {
        geom::closed_polyline_length(&self.samples)
    }
}

/// Mean and standard deviation of a tissue property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Property {
    pub mean: f64,
    pub sd: f64,
}

impl Property {
    /// `mean + k * sd`, the convention used for all phantom feature offsets.
    pub fn offset(&self, k: f64) -> f64 {
        self.mean + k * self.sd
    }
}

/// One tissue's acoustic properties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tissue {
    /// Dilational wave velocity, m/s.
    pub speed: Property,
    /// Density, kg/m³.
    pub density: Property,
}

/// Reference acoustic properties for the tissues used by the phantoms.
/// Muscle is the proxy for all soft tissue in the external region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueTable {
    pub cortical: Tissue,
    pub cancellous: Tissue,
    pub soft: Tissue,
}

impl Default for TissueTable {
    fn default() -> Self {
        Self {
            cortical: Tissue {
                speed: Property {
                    mean: 3514.9,
                    sd: 420.3,
                },
                density: Property {
                    mean: 1908.0,
                    sd: 133.0,
                },
            },
            cancellous: Tissue {
                speed: Property {
                    mean: 2117.5,
                    sd: 288.7,
                },
                density: Property {
                    mean: 1178.0,
                    sd: 149.0,
                },
            },
            soft: Tissue {
                speed: Property {
                    mean: 1588.4,
                    sd: 21.6,
                },
                density: Property {
                    mean: 1090.0,
                    sd: 52.0,
                },
            },
        }
    }
}
