//! Field rendering to binary PGM (P5) images.
//!
//! Layout: `P5\n<width> <height>\n255\n` followed by one byte per pixel,
//! rows top to bottom (largest y first), columns left to right (increasing
//! x). Values map linearly from `[lo, hi]` to 0..=255 and clamp outside.

use std::io::Write;

use thiserror::Error;
use vert_core::field::VelocityField;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("degenerate colour range [{0}, {1}]")]
    DegenerateRange(f64, f64),
    #[error("field contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn render_field<W: Write>(
    field: &VelocityField,
    lo: f64,
    hi: f64,
    w: &mut W,
) -> Result<(), RenderError> {
    if !(hi > lo) {
        return Err(RenderError::DegenerateRange(lo, hi));
    }
    if field.values().iter().any(|v| !v.is_finite()) {
        return Err(RenderError::NonFinite);
    }
    let (nx, ny) = (field.nx(), field.ny());
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let mut row = vec![0u8; nx];
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = field.at(ix, iy);
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            row[ix] = (t * 255.0).round() as u8;
        }
        w.write_all(&row)?;
    }
    Ok(())
}
