use crate::error::{Error, Result};
use crate::image::RasterImage;

use super::affine::AffineTransform;

/// Fill for samples that fall outside the source: slide background.
pub const FILL: [f64; 3] = [1.0, 1.0, 1.0];

/// Bilinear sample at `(x, y)`, or `None` outside `[0, w-1] × [0, h-1]`.
pub fn sample_bilinear(img: &RasterImage, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = img.dims();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        // weights of exactly 0 leave lattice samples untouched
        let top = if fx == 0.0 { p00[c] } else { p00[c] * (1.0 - fx) + p10[c] * fx };
        let bot = if fx == 0.0 { p01[c] } else { p01[c] * (1.0 - fx) + p11[c] * fx };
        out[c] = if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy };
    }
    Some(out)
}

/// Resamples `img` into an `out_w × out_h` frame where `t` maps source to output coordinates.
pub fn warp_affine(img: &RasterImage, t: &AffineTransform, out_w: usize, out_h: usize) -> Result<RasterImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("output size {out_w}x{out_h}")));
    }
    let inv = t.inverse()?;
    Ok(RasterImage::from_fn(out_w, out_h, |x, y| {
        let (sx, sy) = inv.apply(x as f64, y as f64);
        sample_bilinear(img, sx, sy).unwrap_or(FILL)
    }))
}

/// Bilinear resize with pixel-centre alignment; equal sizes give an exact copy.
pub fn resize_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> Result<RasterImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("output size {out_w}x{out_h}")));
    }
    if img.dims() == (out_w, out_h) {
        return Ok(img.clone());
    }
    let (w, h) = img.dims();
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    Ok(RasterImage::from_fn(out_w, out_h, |x, y| {
        let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        sample_bilinear(img, u, v).expect("clamped inside")
    }))
}
