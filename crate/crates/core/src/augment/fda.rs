//! Low-frequency amplitude transfer in the Fourier domain.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdaParams {
    /// Window half-width as a fraction of `min(H, W)`, in `[0, 0.5]`.
    pub beta: f64,
}

impl Default for FdaParams {
    fn default() -> Self {
        Self { beta: 0.05 }
    }
}

impl FdaParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta {} not in [0, 0.5]", self.beta)));
        }
        Ok(())
    }

    /// Half-width in frequency bins.
    pub fn half_width(&self, width: usize, height: usize) -> usize {
        (self.beta * width.min(height) as f64).floor() as usize
    }
}

/// Forward or inverse 2-D DFT of a row-major `w × h` grid (unnormalized).
pub fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut buf = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[y * w + x];
        }
        col.process(&mut buf);
        for y in 0..h {
            data[y * w + x] = buf[y];
        }
    }
}

/// Signed frequency of DFT bin `k` out of `n`.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Bins `(kx, ky)` with `|fx| < b` and `|fy| < b`: the DC-centred square swapped by the transfer.
pub fn in_window(kx: usize, ky: usize, w: usize, h: usize, b: usize) -> bool {
    signed_frequency(kx, w).unsigned_abs() < b as u64 && signed_frequency(ky, h).unsigned_abs() < b as u64
}

pub fn spectrum(plane: &[f64], w: usize, h: usize) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut data, w, h, false);
    data
}

/// Keeps the source phase everywhere and the source amplitude outside the
/// low-frequency window; inside it the amplitude comes from `target`.
pub fn fda_transfer(source: &RasterImage, target: &RasterImage, params: &FdaParams) -> Result<RasterImage> {
    params.validate()?;
    if source.dims() != target.dims() {
        return Err(Error::DimensionMismatch(format!(
            "source {:?} vs target {:?}",
            source.dims(),
            target.dims()
        )));
    }
    let (w, h) = source.dims();
    let b = params.half_width(w, h);
    let n = (w * h) as f64;
    let mut planes: [Vec<f64>; 3] = Default::default();
    for (c, plane) in planes.iter_mut().enumerate() {
        let mut s = spectrum(&source.channel(c), w, h);
        let t = spectrum(&target.channel(c), w, h);
        for ky in 0..h {
            for kx in 0..w {
                if !in_window(kx, ky, w, h, b) {
                    continue;
                }
                let i = ky * w + kx;
                let amp = t[i].norm();
                let src_amp = s[i].norm();
                s[i] = if src_amp > 0.0 { s[i] * (amp / src_amp) } else { Complex::new(amp, 0.0) };
            }
        }
        fft2(&mut s, w, h, true);
        *plane = s.iter().map(|z| z.re / n).collect();
    }
    RasterImage::from_planes(w, h, [&planes[0], &planes[1], &planes[2]])
}
