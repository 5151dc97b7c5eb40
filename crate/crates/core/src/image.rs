//! Raster, label and probability grids plus 8-bit PNG/PPM I/O.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fileio::atomic_write;

/// H×W×3 RGB raster, row-major interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height}x3 image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let data = (0..width * height).flat_map(|_| rgb.map(clamp01)).collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp01));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb.map(clamp01));
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Applies `f` per pixel and clamps the result.
    pub fn map_pixels(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let data = self.pixels().flat_map(|p| f(p).map(clamp01)).collect();
        Self { width: self.width, height: self.height, data }
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn from_planes(width: usize, height: usize, planes: [&[f64]; 3]) -> Result<Self> {
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch("plane length".into()));
        }
        let data = (0..n).flat_map(|i| [planes[0][i], planes[1][i], planes[2][i]]).collect();
        Self::from_clamped(width, height, data)
    }

    /// Grayscale luma `0.299 R + 0.587 G + 0.114 B`, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels().map(luma).collect()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop ({x0},{y0}) {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Self { width: w, height: h, data })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        s / self.data.len() as f64
    }

    /// 8-bit quantization, round half up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| dequantize(b)).collect())
    }
}

pub fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

pub fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// `round(v * 255)` with halves rounded up.
pub fn quantize(v: f64) -> u8 {
    (clamp01(v) * 255.0 + 0.5).floor().min(255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Per-pixel class indices in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("empty mask {width}x{height}")));
        }
        if !(1..=256).contains(&num_classes) {
            return Err(Error::InvalidArgument(format!("num_classes {num_classes}")));
        }
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {l} >= {num_classes} classes")));
        }
        Ok(Self { width, height, num_classes, labels })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        num_classes: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self::new(width, height, num_classes, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        let labels = (0..self.labels.len()).map(|i| self.labels[(i / w) * w + w - 1 - i % w]).collect();
        Self { labels, ..self.clone() }
    }

    pub fn flip_vertical(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let labels = (0..self.labels.len()).map(|i| self.labels[(h - 1 - i / w) * w + i % w]).collect();
        Self { labels, ..self.clone() }
    }

    /// One-hot probability map.
    pub fn one_hot(&self) -> ProbMap {
        let k = self.num_classes;
        let mut probs = vec![0.0; self.labels.len() * k];
        for (i, &l) in self.labels.iter().enumerate() {
            probs[i * k + l as usize] = 1.0;
        }
        ProbMap { width: self.width, height: self.height, num_classes: k, probs }
    }
}

/// Per-pixel class probabilities, pixel-major (`probs[pixel * K + class]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

pub const PROB_SUM_TOL: f64 = 1e-5;

impl ProbMap {
    pub fn new(width: usize, height: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty probability map {width}x{height}x{num_classes}"
            )));
        }
        if probs.len() != width * height * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height}x{num_classes} map",
                probs.len()
            )));
        }
        for (i, px) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i}: probabilities {px:?} are not a distribution"
                )));
            }
        }
        Ok(Self { width, height, num_classes, probs })
    }

    pub(crate) fn new_unchecked(width: usize, height: usize, num_classes: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), width * height * num_classes);
        Self { width, height, num_classes, probs }
    }

    pub fn uniform(width: usize, height: usize, num_classes: usize) -> Self {
        let p = 1.0 / num_classes as f64;
        Self::new_unchecked(width, height, num_classes, vec![p; width * height * num_classes])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Reads an 8-bit RGB PNG or binary PPM (P6). RGBA PNGs are accepted with alpha dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else {
        Err(Error::UnsupportedFormat { path: path.into(), reason: "not a PNG or P6 PPM file".into() })
    }
}

/// Writes PNG or PPM depending on the extension (`.png`, `.ppm`), atomically.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Png => encode_png(img.width, img.height, png::ColorType::Rgb, &img.to_bytes())?,
        ImageFormat::Ppm => encode_ppm(img),
    };
    atomic_write(path, |w| w.write_all(&bytes))
}

/// Width and height from the file header without decoding pixels.
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::new();
    file.by_ref().take(512).read_to_end(&mut head).map_err(|e| Error::io(path, e))?;
    if head.starts_with(&PNG_SIGNATURE) {
        if head.len() < 24 || &head[12..16] != b"IHDR" {
            return Err(Error::Truncated { path: path.into(), reason: "missing IHDR".into() });
        }
        let w = u32::from_be_bytes(head[16..20].try_into().unwrap()) as usize;
        let h = u32::from_be_bytes(head[20..24].try_into().unwrap()) as usize;
        Ok((w, h))
    } else if head.starts_with(b"P6") || head.starts_with(b"P5") {
        let (w, h, _, _) = parse_pnm_header(path, &head)?;
        Ok((w, h))
    } else {
        Err(Error::UnsupportedFormat { path: path.into(), reason: "not a PNG or PPM file".into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Ok(Self::Png),
            Some("ppm") | Some("pgm") => Ok(Self::Ppm),
            other => Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: format!("unknown extension {other:?}; use .png or .ppm"),
            }),
        }
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<RasterImage> {
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes))
        .read_info()
        .map_err(|e| png_error(path, e))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("bit depth {:?}, need 8", info.bit_depth),
        });
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: format!("color type {other:?}, need RGB"),
            })
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h * channels)];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let buf = &buf[..frame.buffer_size()];
    let rgb: Vec<u8> = if channels == 3 {
        buf.to_vec()
    } else {
        buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    };
    RasterImage::from_bytes(w, h, &rgb)
}

fn png_error(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated { path: path.into(), reason: io.to_string() }
        }
        png::DecodingError::IoError(io) => Error::io(path, io),
        png::DecodingError::Format(f) => {
            let reason = f.to_string();
            if reason.to_ascii_lowercase().contains("eof") || reason.contains("end of") {
                Error::Truncated { path: path.into(), reason }
            } else {
                Error::UnsupportedFormat { path: path.into(), reason }
            }
        }
        other => Error::UnsupportedFormat { path: path.into(), reason: other.to_string() },
    }
}

pub(crate) fn encode_png(width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    Ok(out)
}

fn encode_ppm(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

/// Parses `P5`/`P6` headers. Returns (width, height, maxval, payload offset).
fn parse_pnm_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Truncated { path: path.into(), reason: "header".into() }),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::UnsupportedFormat { path: path.into(), reason: "malformed PPM header".into() });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat { path: path.into(), reason: "header number".into() })?;
    }
    // exactly one whitespace byte before the payload
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Truncated { path: path.into(), reason: "header".into() });
    }
    Ok((fields[0], fields[1], fields[2], pos + 1))
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RasterImage> {
    let (w, h, maxval, offset) = parse_pnm_header(path, bytes)?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat { path: path.into(), reason: format!("maxval {maxval}, need 255") });
    }
    if w == 0 || h == 0 {
        return Err(Error::UnsupportedFormat { path: path.into(), reason: "zero dimension".into() });
    }
    let need = w * h * 3;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(Error::Truncated {
            path: path.into(),
            reason: format!("{} of {need} payload bytes", payload.len()),
        });
    }
    RasterImage::from_bytes(w, h, &payload[..need])
}

/// Label masks are stored as 8-bit grayscale PNG (or PGM) with the class index as value.
pub fn save_label_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Png => encode_png(mask.width, mask.height, png::ColorType::Grayscale, &mask.labels)?,
        ImageFormat::Ppm => {
            let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
            out.extend_from_slice(&mask.labels);
            out
        }
    };
    atomic_write(path, |w| w.write_all(&bytes))
}

pub fn load_label_mask(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, labels) = if bytes.starts_with(&PNG_SIGNATURE) {
        let mut reader = png::Decoder::new(std::io::Cursor::new(&bytes[..]))
            .read_info()
            .map_err(|e| png_error(path, e))?;
        let info = reader.info();
        let (w, h) = (info.width as usize, info.height as usize);
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::UnsupportedFormat { path: path.into(), reason: "mask must be 8-bit grayscale".into() });
        }
        let mut buf = vec![0u8; w * h];
        reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
        (w, h, buf)
    } else if bytes.starts_with(b"P5") {
        let (w, h, _, offset) = parse_pnm_header(path, &bytes)?;
        let payload = &bytes[offset..];
        if payload.len() < w * h {
            return Err(Error::Truncated { path: path.into(), reason: "mask payload".into() });
        }
        (w, h, payload[..w * h].to_vec())
    } else {
        return Err(Error::UnsupportedFormat { path: path.into(), reason: "mask must be PNG or P5".into() });
    };
    LabelMask::new(w, h, num_classes, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn ppm_all_max_bytes_load_as_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        let img = load_image(write(dir.path(), "a.ppm", &bytes)).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ppm_byte_mapping_is_linear() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P6 # comment\n1 1\n255\n".to_vec();
        bytes.extend([0u8, 128, 255]);
        let img = load_image(write(dir.path(), "a.ppm", &bytes)).unwrap();
        assert_eq!(img.get(0, 0), [0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn truncated_png_is_reported_as_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(32, 32, |x, y| [x as f64 / 31.0, y as f64 / 31.0, 0.5]);
        let full = dir.path().join("full.png");
        save_image(&img, &full).unwrap();
        let bytes = fs::read(&full).unwrap();
        // cut inside the IDAT chunk
        let idat = bytes.windows(4).position(|w| w == b"IDAT").unwrap();
        let cut = write(dir.path(), "cut.png", &bytes[..idat + 20]);
        assert!(matches!(load_image(cut), Err(Error::Truncated { .. })));
    }

    #[test]
    fn truncated_ppm_is_reported_as_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([1u8; 7]);
        let p = write(dir.path(), "a.ppm", &bytes);
        assert!(matches!(load_image(p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn missing_and_unsupported_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("nope.png")), Err(Error::NotFound(_))));
        let p = write(dir.path(), "a.bmp", b"BM....");
        assert!(matches!(load_image(p), Err(Error::UnsupportedFormat { .. })));
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend([0u8; 6]);
        let p = write(dir.path(), "deep.ppm", &bytes);
        assert!(matches!(load_image(p), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn gray_png_is_unsupported_for_rgb_loading() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = encode_png(2, 2, png::ColorType::Grayscale, &[0, 1, 2, 3]).unwrap();
        let p = write(dir.path(), "g.png", &bytes);
        assert!(matches!(load_image(p), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn half_quantizes_up() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.ppm");
        save_image(&RasterImage::filled(3, 2, [0.5; 3]), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes[bytes.len() - 18..].iter().all(|&b| b == 128));
        save_image(&RasterImage::filled(3, 2, [0.0; 3]), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes[bytes.len() - 18..].iter().all(|&b| b == 0));
    }

    #[test]
    fn quantizer_matches_round_half_up_over_byte_grid() {
        // Oracle: for every byte b, values within half a step round back to b,
        // and the exact midpoint above b rounds up.
        for b in 0u8..=255 {
            let v = b as f64 / 255.0;
            assert_eq!(quantize(v), b);
            assert_eq!(quantize(dequantize(b)), b);
            if b < 255 {
                let mid = (b as f64 + 0.5) / 255.0;
                assert_eq!(quantize(mid), b + 1, "midpoint above {b}");
                assert_eq!(quantize(mid - 1e-9), b);
            }
        }
    }

    #[test]
    fn label_mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = LabelMask::from_fn(5, 3, 3, |x, y| ((x + y) % 3) as u8).unwrap();
        for name in ["m.png", "m.pgm"] {
            let p = dir.path().join(name);
            save_label_mask(&m, &p).unwrap();
            assert_eq!(load_label_mask(&p, 3).unwrap(), m);
        }
    }

    #[test]
    fn constructors_validate() {
        assert!(RasterImage::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(RasterImage::new(2, 1, vec![0.0; 3]).is_err());
        assert!(LabelMask::new(2, 1, 2, vec![0, 2]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.3, 0.3]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn flips_are_involutions() {
        let img = RasterImage::from_fn(4, 3, |x, y| [x as f64 / 4.0, y as f64 / 3.0, 0.0]);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(0, 1), img.get(3, 1));
        let m = LabelMask::from_fn(4, 3, 4, |x, y| (x + y) as u8 % 4).unwrap();
        assert_eq!(m.flip_vertical().get(1, 0), m.get(1, 2));
        assert_eq!(m.flip_horizontal().get(0, 2), m.get(3, 2));
    }
}
