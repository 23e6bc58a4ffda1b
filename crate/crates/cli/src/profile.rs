//! Cross-section extraction along a line segment.

use std::io::Write;

use vert_core::field::VelocityField;
use vert_core::geom::Vec2;

/// One profile sample: distance along the segment and the interpolated value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub distance: f64,
    pub value: f64,
}

/// Bilinear samples along the segment from `a` to `b` (inclusive). A
/// zero-length segment yields a single sample.
pub fn extract_profile(field: &VelocityField, a: Vec2, b: Vec2, samples: usize) -> Vec<ProfileSample> {
    let len = a.dist(b);
    if len == 0.0 || samples <= 1 {
        return vec![ProfileSample {
            distance: 0.0,
            value: field.sample(a),
        }];
    }
    (0..samples)
        .map(|k| {
            let t = k as f64 / (samples - 1) as f64;
            let p = a + (b - a) * t;
            ProfileSample {
                distance: t * len,
                value: field.sample(p),
            }
        })
        .collect()
}

pub fn write_profile_csv<W: Write>(samples: &[ProfileSample], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "distance,value")?;
    for s in samples {
        writeln!(w, "{:e},{:e}", s.distance, s.value)?;
    }
    Ok(())
}
