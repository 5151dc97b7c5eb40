//! Oriented FAST corners ranked by Harris response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;

/// Segment-test threshold on the `[0, 1]` intensity scale.
pub const FAST_THRESHOLD: f64 = 0.08;
/// Contiguous arc length required out of the 16 circle pixels.
pub const FAST_ARC: usize = 9;
pub const HARRIS_K: f64 = 0.04;
/// Half-size of the Harris structure-tensor window (7×7).
pub const HARRIS_RADIUS: usize = 3;
/// Gaussian weighting of that window.
pub const HARRIS_SIGMA: f64 = 1.0;
/// Radius of the intensity-centroid disc used for orientation.
pub const ORIENTATION_RADIUS: i64 = 15;
pub const MIN_DIMENSION: usize = 32;

const NMS_RADIUS: i64 = 2;
const MARGIN: usize = 4;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const CIRCLE: [(i64, i64); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Harris corner response.
    pub response: f64,
    /// Intensity-centroid orientation in radians.
    pub angle: f64,
}

/// Row-major single-channel plane.
#[derive(Debug, Clone)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn from_image(img: &RasterImage) -> Self {
        Self { width: img.width(), height: img.height(), data: img.luma() }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn at_i(&self, x: i64, y: i64) -> f64 {
        self.data[y as usize * self.width + x as usize]
    }

    /// Bilinear sample; caller guarantees `0 <= x <= w-1`, `0 <= y <= h-1`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor().max(0.0) as usize;
        let y0 = y.floor().max(0.0) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Separable Gaussian blur with edge clamping.
    pub fn gaussian_blur(&self, sigma: f64) -> Self {
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = (x + k as i64 - r).clamp(0, w - 1);
                    s += kv * self.at_i(xx, y);
                }
                tmp[(y * w + x) as usize] = s;
            }
        }
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = (y + k as i64 - r).clamp(0, h - 1);
                    s += kv * tmp[(yy * w + x) as usize];
                }
                out[(y * w + x) as usize] = s;
            }
        }
        Self { width: self.width, height: self.height, data: out }
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// 9-of-16 segment test at an interior pixel (needs a 3 px margin).
pub fn is_fast_corner(gray: &Gray, x: usize, y: usize, threshold: f64) -> bool {
    let c = gray.at(x, y);
    let mut brighter = 0u32;
    let mut darker = 0u32;
    for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = gray.at_i(x as i64 + dx, y as i64 + dy);
        if v > c + threshold {
            brighter |= 1 << i;
        } else if v < c - threshold {
            darker |= 1 << i;
        }
    }
    has_arc(brighter) || has_arc(darker)
}

fn has_arc(mask: u32) -> bool {
    if mask.count_ones() < FAST_ARC as u32 {
        return false;
    }
    // unroll the circle twice so wrapping arcs are contiguous
    let doubled = mask | (mask << 16);
    let mut run = 0;
    for i in 0..32 {
        if doubled & (1 << i) != 0 {
            run += 1;
            if run >= FAST_ARC {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Harris response for every pixel (zero within the border band).
pub fn harris_response(gray: &Gray) -> Vec<f64> {
    let (w, h) = (gray.width, gray.height);
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: i64, dy: i64| gray.at((x as i64 + dx) as usize, (y as i64 + dy) as usize);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = window_sum(&ixx, w, h);
    let syy = window_sum(&iyy, w, h);
    let sxy = window_sum(&ixy, w, h);
    let r = HARRIS_RADIUS + 1;
    let mut out = vec![0.0; w * h];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            let i = y * w + x;
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            out[i] = det - HARRIS_K * tr * tr;
        }
    }
    out
}

/// Gaussian-weighted sum over the (2r+1)² window; zero where the window leaves the grid.
fn window_sum(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let r = HARRIS_RADIUS;
    let k: Vec<f64> = (0..=2 * r).map(|i| (-((i as f64 - r as f64).powi(2)) / (2.0 * HARRIS_SIGMA * HARRIS_SIGMA)).exp()).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in r..w.saturating_sub(r) {
            tmp[y * w + x] = (0..=2 * r).map(|i| k[i] * v[y * w + x + i - r]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            out[y * w + x] = (0..=2 * r).map(|i| k[i] * tmp[(y + i - r) * w + x]).sum();
        }
    }
    out
}

/// Intensity-centroid angle over the in-bounds part of a radius-15 disc.
pub fn centroid_angle(gray: &Gray, x: f64, y: f64) -> f64 {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    let r = ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0.0, 0.0);
    for dy in -r..=r {
        let yy = cy + dy;
        if yy < 0 || yy >= gray.height as i64 {
            continue;
        }
        let span = ((r * r - dy * dy) as f64).sqrt().floor() as i64;
        for dx in -span..=span {
            let xx = cx + dx;
            if xx < 0 || xx >= gray.width as i64 {
                continue;
            }
            let v = gray.at_i(xx, yy);
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10)
}

/// Detects up to `max_count` oriented corners, strongest first.
pub fn detect_keypoints(img: &RasterImage, max_count: usize) -> Result<Vec<Keypoint>> {
    let (w, h) = img.dims();
    if w.min(h) < MIN_DIMENSION {
        return Err(Error::ImageTooSmall { width: w, height: h, min: MIN_DIMENSION });
    }
    let gray = Gray::from_image(img);
    let harris = harris_response(&gray);

    let mut is_corner = vec![false; w * h];
    for y in MARGIN..h - MARGIN {
        for x in MARGIN..w - MARGIN {
            is_corner[y * w + x] = is_fast_corner(&gray, x, y, FAST_THRESHOLD);
        }
    }

    let mut keypoints = Vec::new();
    for y in MARGIN..h - MARGIN {
        for x in MARGIN..w - MARGIN {
            let i = y * w + x;
            if !is_corner[i] || harris[i] <= 0.0 {
                continue;
            }
            if !is_local_max(&harris, &is_corner, w, h, x, y) {
                continue;
            }
            let (sx, sy) = refine(&harris, w, x, y);
            keypoints.push(Keypoint { x: sx, y: sy, response: harris[i], angle: centroid_angle(&gray, sx, sy) });
        }
    }
    keypoints.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    keypoints.truncate(max_count);
    Ok(keypoints)
}

/// Strict maximum among corner neighbours; ties go to the earlier pixel in raster order.
fn is_local_max(r: &[f64], corner: &[bool], w: usize, h: usize, x: usize, y: usize) -> bool {
    let v = r[y * w + x];
    for dy in -NMS_RADIUS..=NMS_RADIUS {
        for dx in -NMS_RADIUS..=NMS_RADIUS {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (xx, yy) = (x as i64 + dx, y as i64 + dy);
            if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                continue;
            }
            let j = yy as usize * w + xx as usize;
            if !corner[j] {
                continue;
            }
            let before = (dy, dx) < (0, 0);
            if r[j] > v || (r[j] == v && before) {
                return false;
            }
        }
    }
    true
}

/// Parabolic sub-pixel refinement of the response peak, clamped to ±0.5 px.
fn refine(r: &[f64], w: usize, x: usize, y: usize) -> (f64, f64) {
    let c = r[y * w + x];
    let offset = |m: f64, p: f64| {
        let denom = m - 2.0 * c + p;
        if denom < 0.0 {
            (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let dx = offset(r[y * w + x - 1], r[y * w + x + 1]);
    let dy = offset(r[(y - 1) * w + x], r[(y + 1) * w + x]);
    (x as f64 + dx, y as f64 + dy)
}
