//! Built-in test objects: a bone-speed smiley face in soft tissue and a
//! simplified long-bone cross-section, plus virtual-array placement on an
//! ROI boundary.
//!
//! Both phantoms are defined by exact region predicates; rasterization
//! assigns each cell the property of the region containing its centre, so
//! identical inputs give bit-identical fields. Geometry can be scaled
//! uniformly (0.5 = half-size desk configuration).

use crate::field::{ArrayKind, FieldError, RoiBoundary, TissueTable, TransducerArray, VelocityField};
use crate::geom::Vec2;
use crate::spline::{PeriodicSpline, SplineError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("grid spacing {got} m too coarse, needs <= {max} m")]
    SpacingTooCoarse { got: f64, max: f64 },
    #[error("virtual array needs at least 16 transducers, got {0}")]
    TooFewVirtual(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// A phantom: ground-truth field, ROI boundary, and the physical array.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub field: VelocityField,
    pub boundary: RoiBoundary,
    pub array: TransducerArray,
}

/// Number of boundary polygon samples used by both phantoms.
const BOUNDARY_SAMPLES: usize = 2048;

// ---------------------------------------------------------------------------
// Smiley80
// ---------------------------------------------------------------------------

/// Region labels for the smiley phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmileyRegion {
    Soft,
    Face,
    LeftEye,
    RightEye,
    Mouth,
}

/// Exact geometry of the smiley phantom: a 24 mm cortical-speed disc with
/// two eyes and a crescent mouth, offset inside an 80 mm circular array,
/// surrounded by soft tissue. All lengths scale with `scale`.
#[derive(Debug, Clone)]
pub struct Smiley80 {
    pub scale: f64,
    pub tissues: TissueTable,
    array_radius: f64,
    face_centre: Vec2,
    face_radius: f64,
    eye_offset: Vec2,
    eye_radius: f64,
    mouth_centre: Vec2,
    mouth_radius: f64,
    mouth_line_y: f64,
}

impl Smiley80 {
    pub fn new(scale: f64) -> Self {
        let s = scale;
        let face_centre = Vec2::new(5.0e-3 * s, 2.5e-3 * s);
        let mouth_centre = face_centre + Vec2::new(0.0, -1.5e-3 * s);
        Self {
            scale: s,
            tissues: TissueTable::default(),
            array_radius: 40.0e-3 * s,
            face_centre,
            face_radius: 12.0e-3 * s,
            eye_offset: Vec2::new(4.8e-3 * s, 4.8e-3 * s),
            eye_radius: 2.4e-3 * s,
            mouth_centre,
            mouth_radius: 7.2e-3 * s,
            mouth_line_y: mouth_centre.y + 2.4e-3 * s,
        }
    }

    pub fn array_radius(&self) -> f64 {
        self.array_radius
    }

    pub fn face_centre(&self) -> Vec2 {
        self.face_centre
    }

    pub fn face_radius(&self) -> f64 {
        self.face_radius
    }

    /// Centres of the (left, right) eyes; "left" is the -x side.
    pub fn eye_centres(&self) -> (Vec2, Vec2) {
        (
            self.face_centre + Vec2::new(-self.eye_offset.x, self.eye_offset.y),
            self.face_centre + Vec2::new(self.eye_offset.x, self.eye_offset.y),
        )
    }

    pub fn eye_radius(&self) -> f64 {
        self.eye_radius
    }

    pub fn region_at(&self, p: Vec2) -> SmileyRegion {
        let (left, right) = self.eye_centres();
        if p.dist(left) <= self.eye_radius {
            return SmileyRegion::LeftEye;
        }
        if p.dist(right) <= self.eye_radius {
            return SmileyRegion::RightEye;
        }
        if self.in_mouth(p) {
            return SmileyRegion::Mouth;
        }
        if p.dist(self.face_centre) <= self.face_radius {
            return SmileyRegion::Face;
        }
        SmileyRegion::Soft
    }

    /// The mouth is the crescent between the lower arc of the mouth circle
    /// and the upper arc folded down across the horizontal line above its
    /// centre: points of the disc below the line whose mirror image is
    /// outside the disc.
    fn in_mouth(&self, p: Vec2) -> bool {
        if p.y > self.mouth_line_y {
            return false;
        }
        if p.dist(self.mouth_centre) > self.mouth_radius {
            return false;
        }
        let mirror = Vec2::new(p.x, 2.0 * self.mouth_line_y - p.y);
        mirror.dist(self.mouth_centre) > self.mouth_radius
    }

    pub fn speed_at(&self, p: Vec2) -> f64 {
        let t = &self.tissues;
        match self.region_at(p) {
            SmileyRegion::LeftEye => t.cortical.speed.offset(1.0),
            SmileyRegion::RightEye => t.cortical.speed.offset(-1.0),
            SmileyRegion::Mouth => t.cortical.speed.offset(-0.5),
            SmileyRegion::Face => t.cortical.speed.mean,
            SmileyRegion::Soft => t.soft.speed.mean,
        }
    }

    pub fn density_at(&self, p: Vec2) -> f64 {
        let t = &self.tissues;
        match self.region_at(p) {
            SmileyRegion::LeftEye => t.cortical.density.offset(1.0),
            SmileyRegion::RightEye => t.cortical.density.offset(-1.0),
            SmileyRegion::Mouth => t.cortical.density.offset(-0.5),
            SmileyRegion::Face => t.cortical.density.mean,
            SmileyRegion::Soft => t.soft.density.mean,
        }
    }

    /// ROI boundary: the face circle.
    pub fn boundary(&self) -> RoiBoundary {
        circle_boundary(self.face_centre, self.face_radius, BOUNDARY_SAMPLES)
    }
}

/// Build the smiley phantom at paper geometry: 80 mm array of 317
/// transducers, all features at full size.
pub fn build_smiley80(spacing: f64) -> Result<Phantom, PhantomError> {
    build_smiley80_scaled(spacing, 1.0, 317)
}

/// Scaled smiley phantom with an explicit physical transducer count.
pub fn build_smiley80_scaled(
    spacing: f64,
    scale: f64,
    n_transducers: usize,
) -> Result<Phantom, PhantomError> {
    if spacing > 0.5e-3 * scale {
        return Err(PhantomError::SpacingTooCoarse {
            got: spacing,
            max: 0.5e-3 * scale,
        });
    }
    let geo = Smiley80::new(scale);
    let field = rasterize(
        geo.array_radius,
        spacing,
        |p| geo.speed_at(p),
        |p| geo.density_at(p),
    )?;
    let boundary = geo.boundary();
    let array = TransducerArray::circle(Vec2::new(0.0, 0.0), geo.array_radius, n_transducers);
    Ok(Phantom {
        field,
        boundary,
        array,
    })
}

// ---------------------------------------------------------------------------
// Bone200
// ---------------------------------------------------------------------------

/// Region labels for the bone phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoneRegion {
    Soft,
    Cortical,
    Cancellous,
}

/// Table of azimuth/diameter/thickness knots defining the bone cross-section
/// (azimuth degrees, periosteal diameter mm, cortical thickness mm).
pub const BONE_KNOTS: [(f64, f64, f64); 8] = [
    (0.0, 24.5, 1.12),
    (45.0, 27.5, 0.72),
    (90.0, 30.5, 0.75),
    (135.0, 27.5, 0.72),
    (180.0, 24.5, 1.07),
    (225.0, 27.5, 1.97),
    (270.0, 30.5, 3.14),
    (315.0, 27.5, 2.16),
];

/// Exact geometry of the bone phantom: an ellipse-like periosteum whose
/// diameter and cortical thickness follow periodic splines of [`BONE_KNOTS`],
/// a uniform cortical shell, and a cancellous interior with a left-to-right
/// ±1 s.d. property gradient, offset horizontally inside a 200 mm array.
#[derive(Debug, Clone)]
pub struct Bone200 {
    pub scale: f64,
    pub tissues: TissueTable,
    array_radius: f64,
    bone_centre: Vec2,
    diameter: PeriodicSpline,
    thickness: PeriodicSpline,
    cancellous_x_min: f64,
    cancellous_x_max: f64,
}

impl Bone200 {
    pub fn new(scale: f64) -> Result<Self, SplineError> {
        let s = scale;
        let d_knots: Vec<(f64, f64)> = BONE_KNOTS.iter().map(|k| (k.0, k.1)).collect();
        let t_knots: Vec<(f64, f64)> = BONE_KNOTS.iter().map(|k| (k.0, k.2)).collect();
        let diameter = PeriodicSpline::new(&d_knots, 360.0)?;
        let thickness = PeriodicSpline::new(&t_knots, 360.0)?;
        let bone_centre = Vec2::new(20.0e-3 * s, 0.0);
        // Horizontal extent of the cancellous interior along y = centre.y.
        let r_endo_left = (diameter.eval(180.0) / 2.0 - thickness.eval(180.0)) * 1.0e-3 * s;
        let r_endo_right = (diameter.eval(0.0) / 2.0 - thickness.eval(0.0)) * 1.0e-3 * s;
        Ok(Self {
            scale: s,
            tissues: TissueTable::default(),
            array_radius: 100.0e-3 * s,
            bone_centre,
            diameter,
            thickness,
            cancellous_x_min: bone_centre.x - r_endo_left,
            cancellous_x_max: bone_centre.x + r_endo_right,
        })
    }

    pub fn array_radius(&self) -> f64 {
        self.array_radius
    }

    pub fn bone_centre(&self) -> Vec2 {
        self.bone_centre
    }

    /// Periosteal radius at azimuth `phi_deg` (degrees from +x).
    pub fn periosteum_radius(&self, phi_deg: f64) -> f64 {
        self.diameter.eval(phi_deg) / 2.0 * 1.0e-3 * self.scale
    }

    /// Endosteal radius at azimuth `phi_deg`.
    pub fn endosteum_radius(&self, phi_deg: f64) -> f64 {
        self.periosteum_radius(phi_deg) - self.cortical_thickness(phi_deg)
    }

    /// Cortical thickness at azimuth `phi_deg`.
    pub fn cortical_thickness(&self, phi_deg: f64) -> f64 {
        self.thickness.eval(phi_deg) * 1.0e-3 * self.scale
    }

    /// Horizontal extent `[x_min, x_max]` of the cancellous interior.
    pub fn cancellous_extent(&self) -> (f64, f64) {
        (self.cancellous_x_min, self.cancellous_x_max)
    }

    pub fn region_at(&self, p: Vec2) -> BoneRegion {
        let v = p - self.bone_centre;
        let r = v.norm();
        let phi = wrap_deg(v.y.atan2(v.x).to_degrees());
        let r_peri = self.periosteum_radius(phi);
        if r > r_peri {
            return BoneRegion::Soft;
        }
        if r > r_peri - self.cortical_thickness(phi) {
            return BoneRegion::Cortical;
        }
        BoneRegion::Cancellous
    }

    /// Linear left-to-right gradient factor in [-1, 1] across the cancellous
    /// extent.
    fn gradient_k(&self, x: f64) -> f64 {
        let xi = (x - self.cancellous_x_min) / (self.cancellous_x_max - self.cancellous_x_min);
        2.0 * xi - 1.0
    }

    pub fn speed_at(&self, p: Vec2) -> f64 {
        let t = &self.tissues;
        match self.region_at(p) {
            BoneRegion::Soft => t.soft.speed.mean,
            BoneRegion::Cortical => t.cortical.speed.mean,
            BoneRegion::Cancellous => t.cancellous.speed.offset(self.gradient_k(p.x)),
        }
    }

    pub fn density_at(&self, p: Vec2) -> f64 {
        let t = &self.tissues;
        match self.region_at(p) {
            BoneRegion::Soft => t.soft.density.mean,
            BoneRegion::Cortical => t.cortical.density.mean,
            BoneRegion::Cancellous => t.cancellous.density.offset(self.gradient_k(p.x)),
        }
    }

    /// ROI boundary: the periosteum curve.
    pub fn boundary(&self) -> Result<RoiBoundary, FieldError> {
        let n = 2 * BOUNDARY_SAMPLES;
        let samples: Vec<Vec2> = (0..n)
            .map(|i| {
                let phi = 360.0 * i as f64 / n as f64;
                let r = self.periosteum_radius(phi);
                let a = phi.to_radians();
                self.bone_centre + Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        RoiBoundary::new(samples)
    }
}

/// Build the bone phantom at paper geometry: 200 mm array of 792 transducers.
pub fn build_bone200(spacing: f64) -> Result<Phantom, PhantomError> {
    build_bone200_scaled(spacing, 1.0, 792)
}

/// Scaled bone phantom with an explicit physical transducer count.
pub fn build_bone200_scaled(
    spacing: f64,
    scale: f64,
    n_transducers: usize,
) -> Result<Phantom, PhantomError> {
    if spacing > 0.25e-3 * scale {
        return Err(PhantomError::SpacingTooCoarse {
            got: spacing,
            max: 0.25e-3 * scale,
        });
    }
    let geo = Bone200::new(scale)?;
    let field = rasterize(
        geo.array_radius,
        spacing,
        |p| geo.speed_at(p),
        |p| geo.density_at(p),
    )?;
    let boundary = geo.boundary()?;
    let array = TransducerArray::circle(Vec2::new(0.0, 0.0), geo.array_radius, n_transducers);
    Ok(Phantom {
        field,
        boundary,
        array,
    })
}

// ---------------------------------------------------------------------------
// Virtual array placement
// ---------------------------------------------------------------------------

/// Place `count` virtual transducers equally spaced by arc length around the
/// boundary polygon, each carrying the outward boundary normal.
pub fn place_virtual_array(
    boundary: &RoiBoundary,
    count: usize,
) -> Result<TransducerArray, PhantomError> {
    if count < 16 {
        return Err(PhantomError::TooFewVirtual(count));
    }
    let samples = boundary.samples();
    let normals = boundary.normals();
    let n = samples.len();
    let seg_len: Vec<f64> = (0..n)
        .map(|i| samples[i].dist(samples[(i + 1) % n]))
        .collect();
    let total: f64 = seg_len.iter().sum();
    let step = total / count as f64;

    let mut positions = Vec::with_capacity(count);
    let mut out_normals = Vec::with_capacity(count);
    let mut seg = 0usize;
    let mut seg_start = 0.0f64;
    for k in 0..count {
        let target = k as f64 * step;
        while seg_start + seg_len[seg] < target && seg + 1 < n {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let t = if seg_len[seg] > 0.0 {
            ((target - seg_start) / seg_len[seg]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = samples[seg];
        let b = samples[(seg + 1) % n];
        positions.push(a + (b - a) * t);
        let na = normals[seg];
        let nb = normals[(seg + 1) % n];
        let nrm = (na + (nb - na) * t).normalized().expect("non-degenerate normals");
        out_normals.push(nrm);
    }
    Ok(TransducerArray::new(
        positions,
        Some(out_normals),
        ArrayKind::Virtual,
    )?)
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn wrap_deg(mut d: f64) -> f64 {
    if d < 0.0 {
        d += 360.0;
    }
    if d >= 360.0 {
        d -= 360.0;
    }
    d
}

fn circle_boundary(centre: Vec2, radius: f64, n: usize) -> RoiBoundary {
    let samples: Vec<Vec2> = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            centre + Vec2::new(radius * a.cos(), radius * a.sin())
        })
        .collect();
    RoiBoundary::new(samples).expect("circle is convex")
}

/// Rasterize region functions over the square domain that exactly inscribes
/// the array circle; each cell takes the value at its centre.
fn rasterize(
    half_extent: f64,
    spacing: f64,
    speed_at: impl Fn(Vec2) -> f64,
    density_at: impl Fn(Vec2) -> f64,
) -> Result<VelocityField, FieldError> {
    let n = (2.0 * half_extent / spacing).round() as usize;
    let origin = Vec2::new(-half_extent + spacing / 2.0, -half_extent + spacing / 2.0);
    let mut speed = Vec::with_capacity(n * n);
    let mut density = Vec::with_capacity(n * n);
    for iy in 0..n {
        let y = origin.y + iy as f64 * spacing;
        for ix in 0..n {
            let p = Vec2::new(origin.x + ix as f64 * spacing, y);
            speed.push(speed_at(p));
            density.push(density_at(p));
        }
    }
    VelocityField::new(origin, spacing, n, n, speed)?.with_density(density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;
    use approx::assert_relative_eq;

    #[test]
    fn smiley_feature_speeds_are_exact_table_values() {
        let geo = Smiley80::new(1.0);
        let t = TissueTable::default();
        let c = geo.face_centre();
        assert_eq!(geo.speed_at(c), t.cortical.speed.mean);
        let (left, right) = geo.eye_centres();
        assert_eq!(geo.speed_at(left), t.cortical.speed.offset(1.0));
        assert_eq!(geo.speed_at(right), t.cortical.speed.offset(-1.0));
        assert_eq!(geo.speed_at(left), 3514.9 + 420.3);
        // mouth probe: on the vertical through the face centre, 5 mm below
        // the mouth circle centre
        let mouth_probe = c + Vec2::new(0.0, -1.5e-3 - 5.0e-3);
        assert_eq!(geo.speed_at(mouth_probe), t.cortical.speed.offset(-0.5));
        // 30 mm from the array centre is outside the ROI
        assert_eq!(geo.speed_at(Vec2::new(0.03, 0.0)), t.soft.speed.mean);
    }

    #[test]
    fn smiley_mouth_is_a_crescent() {
        let geo = Smiley80::new(1.0);
        let m = geo.face_centre() + Vec2::new(0.0, -1.5e-3);
        // crescent spans [-7.2, -2.4] mm below the mouth-circle centre
        assert_eq!(geo.region_at(m + Vec2::new(0.0, -3.0e-3)), SmileyRegion::Mouth);
        assert_eq!(geo.region_at(m + Vec2::new(0.0, -7.0e-3)), SmileyRegion::Mouth);
        // inside the fold (above the reflected arc) is plain face
        assert_eq!(geo.region_at(m), SmileyRegion::Face);
        assert_eq!(geo.region_at(m + Vec2::new(0.0, -2.0e-3)), SmileyRegion::Face);
        // above the fold line is face
        assert_eq!(geo.region_at(m + Vec2::new(0.0, 3.0e-3)), SmileyRegion::Face);
    }

    #[test]
    fn smiley_raster_and_boundary() {
        let phantom = build_smiley80(0.5e-3).unwrap();
        assert_eq!(phantom.field.nx(), 160);
        assert_eq!(phantom.array.len(), 317);
        assert!(geom::is_convex(phantom.boundary.samples()));
        assert_relative_eq!(phantom.boundary.d_roi(), 24.0e-3, epsilon = 0.5e-3);
        // determinism: rebuilding gives bit-identical values
        let again = build_smiley80(0.5e-3).unwrap();
        assert_eq!(phantom.field.values(), again.field.values());
        assert_eq!(phantom.field.density(), again.field.density());
    }

    #[test]
    fn smiley_cortical_area_matches_disc() {
        let spacing = 1.0e-4;
        let phantom = build_smiley80(spacing).unwrap();
        let t = TissueTable::default();
        let feature = [
            t.cortical.speed.mean,
            t.cortical.speed.offset(1.0),
            t.cortical.speed.offset(-1.0),
            t.cortical.speed.offset(-0.5),
        ];
        let cells = phantom
            .field
            .values()
            .iter()
            .filter(|v| feature.contains(v))
            .count();
        let area = cells as f64 * spacing * spacing;
        let exact = std::f64::consts::PI * 12.0e-3 * 12.0e-3;
        assert!(
            (area - exact).abs() / exact < 0.02,
            "area {area}, expected {exact}"
        );
    }

    #[test]
    fn smiley_spacing_precondition() {
        assert!(matches!(
            build_smiley80(0.6e-3),
            Err(PhantomError::SpacingTooCoarse { .. })
        ));
    }

    #[test]
    fn bone_regions_and_gradient() {
        let geo = Bone200::new(1.0).unwrap();
        let t = TissueTable::default();
        let b = geo.bone_centre();
        // a point in the middle of the cortical ring at azimuth 0
        let r_mid = (geo.periosteum_radius(0.0) + geo.endosteum_radius(0.0)) / 2.0;
        assert_eq!(geo.speed_at(b + Vec2::new(r_mid, 0.0)), t.cortical.speed.mean);
        // horizontal centre of the cancellous extent is exactly the mean
        let (x_min, x_max) = geo.cancellous_extent();
        let mid = Vec2::new((x_min + x_max) / 2.0, 0.0);
        assert_eq!(geo.speed_at(mid), t.cancellous.speed.mean);
        // leftmost cancellous point sits 1 s.d. below the mean
        let left = Vec2::new(x_min, 0.0);
        let expected = t.cancellous.speed.offset(-1.0);
        assert_relative_eq!(geo.speed_at(left), expected, epsilon = 1e-9);
        assert_eq!(geo.speed_at(Vec2::new(x_min + 1e-12, 0.0)), {
            let k = geo.gradient_k(x_min + 1e-12);
            t.cancellous.speed.offset(k)
        });
        // far outside: soft tissue
        assert_eq!(geo.speed_at(Vec2::new(-0.08, 0.0)), t.soft.speed.mean);
    }

    #[test]
    fn bone_thickness_matches_knots_on_raster() {
        let spacing = 0.25e-3;
        let geo = Bone200::new(1.0).unwrap();
        let phantom = build_bone200(spacing).unwrap();
        let t = TissueTable::default();
        for &(phi, _, thick_mm) in BONE_KNOTS.iter() {
            let dir = Vec2::new(phi.to_radians().cos(), phi.to_radians().sin());
            // march along the azimuth in fine steps, classify by cell value
            let step = spacing / 4.0;
            let mut r = 0.0;
            let mut first = None;
            let mut last = None;
            while r < geo.periosteum_radius(phi) + 20.0 * spacing {
                let p = geo.bone_centre() + dir * r;
                if let Some((ix, iy)) = phantom.field.cell_of(p) {
                    if phantom.field.at(ix, iy) == t.cortical.speed.mean {
                        if first.is_none() {
                            first = Some(r);
                        }
                        last = Some(r);
                    }
                }
                r += step;
            }
            let measured = last.unwrap() - first.unwrap() + step;
            let expected = thick_mm * 1.0e-3;
            assert!(
                (measured - expected).abs() <= spacing + step,
                "azimuth {phi}: measured {measured}, expected {expected}"
            );
        }
    }

    #[test]
    fn bone_boundary_convex() {
        let geo = Bone200::new(1.0).unwrap();
        let b = geo.boundary().unwrap();
        assert!(geom::is_convex(b.samples()));
        assert_relative_eq!(b.d_roi(), 30.5e-3, epsilon = 0.2e-3);
    }

    #[test]
    fn virtual_placement_on_circle() {
        let boundary = circle_boundary(Vec2::new(0.0, 0.0), 12.0e-3, 2048);
        let arr = place_virtual_array(&boundary, 16).unwrap();
        assert_eq!(arr.len(), 16);
        let normals = arr.normals().unwrap();
        for (p, n) in arr.positions().iter().zip(normals) {
            assert_relative_eq!(p.norm(), 12.0e-3, max_relative = 1e-4);
            assert!(n.dot(p.normalized().unwrap()) > 0.9999);
        }
        // every 4th point of a count-16 placement advances by 90°
        let p0 = arr.positions()[0];
        let p4 = arr.positions()[4];
        let angle = (p4.angle() - p0.angle()).to_degrees();
        assert_relative_eq!(angle, 90.0, epsilon = 1e-6);
    }

    #[test]
    fn virtual_placement_equal_arc_gaps() {
        let geo = Smiley80::new(1.0);
        let boundary = geo.boundary();
        let arr = place_virtual_array(&boundary, 300).unwrap();
        let gaps = polygon_arc_gaps(&boundary, arr.positions());
        let mean: f64 = gaps.iter().sum::<f64>() / gaps.len() as f64;
        for g in &gaps {
            assert!(
                (g - mean).abs() / mean < 1e-9,
                "gap {g} deviates from mean {mean}"
            );
        }
    }

    #[test]
    fn virtual_placement_bone_gaps_vs_dense_oracle() {
        // Dense-oracle check: measure inter-transducer gaps by arc length on
        // a 1e6-segment polyline of the analytic periosteum curve.
        let geo = Bone200::new(1.0).unwrap();
        let boundary = geo.boundary().unwrap();
        let arr = place_virtual_array(&boundary, 400).unwrap();

        let n_dense = 1_000_000usize;
        let mut arc = Vec::with_capacity(n_dense + 1);
        let mut prev = dense_point(&geo, 0.0);
        let mut total = 0.0;
        arc.push(0.0);
        for i in 1..=n_dense {
            let p = dense_point(&geo, 360.0 * i as f64 / n_dense as f64);
            total += p.dist(prev);
            arc.push(total);
            prev = p;
        }
        // arc position of each virtual transducer = arc at nearest azimuth
        let mut positions: Vec<f64> = arr
            .positions()
            .iter()
            .map(|p| {
                let v = *p - geo.bone_centre();
                let phi = wrap_deg(v.y.atan2(v.x).to_degrees());
                let idx = (phi / 360.0 * n_dense as f64).round() as usize % n_dense;
                arc[idx]
            })
            .collect();
        positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut gaps: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.push(total - positions.last().unwrap() + positions[0]);
        let mean: f64 = gaps.iter().sum::<f64>() / gaps.len() as f64;
        for g in &gaps {
            assert!(
                (g - mean).abs() / mean < 1e-3,
                "gap {g} deviates from mean {mean}"
            );
        }
    }

    #[test]
    fn virtual_placement_count_precondition() {
        let boundary = circle_boundary(Vec2::new(0.0, 0.0), 12.0e-3, 256);
        assert!(matches!(
            place_virtual_array(&boundary, 8),
            Err(PhantomError::TooFewVirtual(8))
        ));
    }

    fn dense_point(geo: &Bone200, phi: f64) -> Vec2 {
        let r = geo.periosteum_radius(phi);
        geo.bone_centre() + Vec2::new(r * phi.to_radians().cos(), r * phi.to_radians().sin())
    }

    /// Arc-length gaps between consecutive points measured along the
    /// boundary polygon itself.
    fn polygon_arc_gaps(boundary: &RoiBoundary, points: &[Vec2]) -> Vec<f64> {
        let samples = boundary.samples();
        let n = samples.len();
        let mut cum = vec![0.0f64; n + 1];
        for i in 0..n {
            cum[i + 1] = cum[i] + samples[i].dist(samples[(i + 1) % n]);
        }
        let total = cum[n];
        let mut arcs: Vec<f64> = points
            .iter()
            .map(|p| {
                // nearest segment projection
                let mut best = (f64::MAX, 0.0);
                for i in 0..n {
                    let a = samples[i];
                    let b = samples[(i + 1) % n];
                    let ab = b - a;
                    let t = ((*p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
                    let q = a + ab * t;
                    let d = p.dist(q);
                    if d < best.0 {
                        best = (d, cum[i] + ab.norm() * t);
                    }
                }
                best.1
            })
            .collect();
        arcs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut gaps: Vec<f64> = arcs.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.push(total - arcs.last().unwrap() + arcs[0]);
        gaps
    }
}
