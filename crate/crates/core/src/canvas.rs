//! Canvas representation, image I/O and pixel-space resampling.
//!
//! Pixel `(row, col)` has its centre at continuous coordinates
//! `(col + 0.5, row + 0.5)`, with x pointing right and y pointing down.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `height x width x channels` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Canvas {
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        })
    }

    /// Builds a canvas from raw values, clamping them into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn from_data(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::validation(format!(
                "canvas data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite pixel value at index {i}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    pub fn same_shape(&self, other: &Canvas) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn from_clamped_unchecked(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Nearest-pixel colour at a normalised position, clamped to the image.
    pub fn sample_normalised(&self, x: f64, y: f64) -> Vec<f64> {
        let col = ((x * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let row = ((y * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        let i = self.index(row, col, 0);
        self.data[i..i + self.channels].to_vec()
    }

    /// Converts to single-channel luma; single-channel canvases are returned as is.
    pub fn to_grayscale(&self) -> Canvas {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        Canvas::from_clamped_unchecked(self.width, self.height, 1, data)
    }

    pub fn to_rgb(&self) -> Canvas {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Canvas::from_clamped_unchecked(self.width, self.height, 3, data)
    }

    /// 8-bit binary PPM (P6). Single-channel canvases are written as neutral grey.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.width * self.height * 3);
        for px in self.data.chunks_exact(self.channels) {
            if self.channels == 1 {
                let b = to_byte(px[0]);
                out.extend_from_slice(&[b, b, b]);
            } else {
                out.extend(px.iter().map(|&v| to_byte(v)));
            }
        }
        out
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::validation(format!("zero-dimension image {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::validation(format!("unsupported channel count {channels}")));
    }
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rec. 709 luma. Neutral pixels pass through unchanged so that grey
/// content round-trips exactly.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    if r == g && g == b {
        return r;
    }
    (0.2126 * r + 0.7152 * g + 0.0722 * b).clamp(0.0, 1.0)
}

/// Unconstrained image-shaped buffer, used for gradients with respect to a canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct CanvasGrad {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl CanvasGrad {
    pub fn zeros_like(c: &Canvas) -> Self {
        Self::zeros(c.width, c.height, c.channels)
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn matches(&self, c: &Canvas) -> bool {
        self.width == c.width && self.height == c.height && self.channels == c.channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColourMode {
    Grayscale,
    Rgb,
}

impl ColourMode {
    pub fn channels(self) -> usize {
        match self {
            ColourMode::Grayscale => 1,
            ColourMode::Rgb => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetImage {
    pub canvas: Canvas,
    pub source_path: String,
    pub colour_mode: ColourMode,
}

impl TargetImage {
    pub fn from_canvas(canvas: Canvas, source_path: impl Into<String>) -> Self {
        let colour_mode = if canvas.channels() == 1 {
            ColourMode::Grayscale
        } else {
            ColourMode::Rgb
        };
        Self {
            canvas,
            source_path: source_path.into(),
            colour_mode,
        }
    }
}

/// Loads a PNG or binary PPM/PGM file and converts it to the requested colour mode.
pub fn load_image(path: impl AsRef<Path>, colour_mode: ColourMode) -> Result<TargetImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rgb = decode_image(&bytes)?;
    let canvas = match colour_mode {
        ColourMode::Grayscale => rgb.to_grayscale(),
        ColourMode::Rgb => rgb,
    };
    Ok(TargetImage {
        canvas,
        source_path: path.display().to_string(),
        colour_mode,
    })
}

/// Decodes to a 3-channel canvas.
pub fn decode_image(bytes: &[u8]) -> Result<Canvas> {
    if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        decode_pnm(bytes)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else {
        Err(Error::format("unrecognised image magic (expected PNG or binary PPM)"))
    }
}

fn decode_png(bytes: &[u8]) -> Result<Canvas> {
    let img = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Png)
        .map_err(|e| Error::format(format!("png decode: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Canvas::from_data(w as usize, h as usize, 3, data)
}

fn decode_pnm(bytes: &[u8]) -> Result<Canvas> {
    let gray = bytes[1] == b'5';
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = pnm_header_number(bytes, &mut pos)?;
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("ppm: missing raster separator"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::validation(format!("zero-dimension image {w}x{h}")));
    }
    if maxval != 255 {
        return Err(Error::format(format!("ppm: unsupported maxval {maxval}")));
    }
    let src_ch = if gray { 1 } else { 3 };
    let need = w * h * src_ch;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::format("ppm: truncated raster"))?;
    let data: Vec<f64> = if gray {
        raster.iter().flat_map(|&b| [b as f64 / 255.0; 3]).collect()
    } else {
        raster.iter().map(|&b| b as f64 / 255.0).collect()
    };
    Canvas::from_data(w, h, 3, data)
}

fn pnm_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("ppm: truncated header")),
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("ppm: malformed header number"))
}

/// Bilinear resampling with centre-aligned sample positions and edge clamping.
pub fn resize_bilinear(img: &Canvas, new_w: usize, new_h: usize) -> Result<Canvas> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::validation(format!("resize target {new_w}x{new_h} has a zero dimension")));
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut data = Vec::with_capacity(new_w * new_h * ch);
    for oy in 0..new_h {
        let (y0, y1, fy) = axis(oy, sy, h);
        for ox in 0..new_w {
            let (x0, x1, fx) = axis(ox, sx, w);
            for c in 0..ch {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Canvas::from_clamped_unchecked(new_w, new_h, ch, data))
}

/// Halves both dimensions (rounding up) by 2x2 block means. Blocks along an
/// odd trailing row or column are clamped to the image bounds.
pub fn downsample_avg2(img: &Canvas) -> Result<Canvas> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::validation(format!(
            "downsample needs at least 2x2, got {}x{}",
            img.width, img.height
        )));
    }
    let (data, ow, oh) = block_mean(img.data(), img.width, img.height, img.channels);
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Canvas::from_clamped_unchecked(ow, oh, img.channels, data))
}

pub(crate) fn block_mean(src: &[f64], w: usize, h: usize, ch: usize) -> (Vec<f64>, usize, usize) {
    let ow = w.div_ceil(2);
    let oh = h.div_ceil(2);
    let mut out = vec![0.0; ow * oh * ch];
    for oy in 0..oh {
        let ys = 2 * oy..(2 * oy + 2).min(h);
        for ox in 0..ow {
            let xs = 2 * ox..(2 * ox + 2).min(w);
            let count = (ys.len() * xs.len()) as f64;
            for c in 0..ch {
                let mut s = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        s += src[(y * w + x) * ch + c];
                    }
                }
                out[(oy * ow + ox) * ch + c] = s / count;
            }
        }
    }
    (out, ow, oh)
}

/// Adjoint of [`block_mean`]: spreads each output gradient evenly over its block.
pub(crate) fn block_mean_backward(grad_out: &[f64], w: usize, h: usize, ch: usize) -> Vec<f64> {
    let ow = w.div_ceil(2);
    let mut out = vec![0.0; w * h * ch];
    for y in 0..h {
        let oy = y / 2;
        let ny = if 2 * oy + 1 < h { 2 } else { 1 };
        for x in 0..w {
            let ox = x / 2;
            let nx = if 2 * ox + 1 < w { 2 } else { 1 };
            let count = (ny * nx) as f64;
            for c in 0..ch {
                out[(y * w + x) * ch + c] = grad_out[(oy * ow + ox) * ch + c] / count;
            }
        }
    }
    out
}
