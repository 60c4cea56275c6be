//! Raster types, PNG I/O, median denoising and the model-frame geometry.
//!
//! The promptable backend works on a fixed `1024 x 1024` three-channel frame.
//! [`to_model_input`] scales the longest image side to that size, replicates
//! the gray channel and zero-pads on the right and bottom, so the origin stays
//! put and every coordinate transform is a pure scale. [`ModelInput`] keeps the
//! geometry needed to map prompts in and masks back out.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::prompt::PromptSet;

/// Side length of the square model frame.
pub const MODEL_SIDE: usize = 1024;

/// Single-channel 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "image data has {} pixels, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }
}

/// Boolean raster; `true` marks foreground (pore / defect).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "mask data has {} pixels, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground coordinates as `(x, y)` in row-major order.
    pub fn foreground(&self) -> Vec<(u32, u32)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| ((i % self.width) as u32, (i / self.width) as u32))
            .collect()
    }

    /// Pixelwise AND. Panics if shapes differ.
    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        assert!(self.same_shape(other), "mask shapes differ");
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// {0, 255} gray rendering of the mask.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        }
    }
}

fn decode_error(path: &Path, err: image::ImageError) -> Error {
    match err {
        image::ImageError::Unsupported(e) => Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        other => Error::io(path, other),
    }
}

/// Read an 8-bit gray or RGB raster. RGB is averaged with round-half-up;
/// alpha channels are dropped.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| decode_error(path, e))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.into_raw().chunks_exact(2).map(|p| p[0]).collect(),
        DynamicImage::ImageRgb8(buf) => buf.into_raw().chunks_exact(3).map(rgb_mean).collect(),
        DynamicImage::ImageRgba8(buf) => buf.into_raw().chunks_exact(4).map(rgb_mean).collect(),
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit gray or RGB, found {:?}", other.color()),
            })
        }
    };
    GrayImage::new(width, height, data)
}

/// Mean of the first three channels, rounded half up.
fn rgb_mean(px: &[u8]) -> u8 {
    let sum = px[0] as u32 + px[1] as u32 + px[2] as u32;
    ((2 * sum + 3) / 6) as u8
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, e))
}

/// Masks are stored as {0, 255} PNG.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_gray(&mask.to_gray(), path)
}

/// Any nonzero pixel is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_gray(path)?;
    let (w, h) = (img.width, img.height);
    BinaryMask::new(w, h, img.data.into_iter().map(|v| v > 0).collect())
}

/// Median of each `k x k` window with edge replication.
///
/// Uses a sliding 256-bin histogram per row, so cost is `O(k)` per pixel.
pub fn median_filter(img: &GrayImage, k: usize) -> Result<GrayImage> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "median window must be odd and positive, got {k}"
        )));
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width, img.height);
    let r = (k / 2) as isize;
    let rank = (k * k) / 2; // 0-based index of the median
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let mut out = vec![0u8; w * h];

    for y in 0..h {
        let rows: Vec<usize> = (-r..=r).map(|dy| clamp_y(y as isize + dy)).collect();
        let mut hist = [0u32; 256];
        for &yy in &rows {
            for dx in -r..=r {
                hist[img.get(clamp_x(dx), yy) as usize] += 1;
            }
        }
        out[y * w] = hist_rank(&hist, rank);
        for x in 1..w {
            let leaving = clamp_x(x as isize - r - 1);
            let entering = clamp_x(x as isize + r);
            for &yy in &rows {
                hist[img.get(leaving, yy) as usize] -= 1;
                hist[img.get(entering, yy) as usize] += 1;
            }
            out[y * w + x] = hist_rank(&hist, rank);
        }
    }
    GrayImage::new(w, h, out)
}

fn hist_rank(hist: &[u32; 256], rank: usize) -> u8 {
    let mut seen = 0usize;
    for (v, &c) in hist.iter().enumerate() {
        seen += c as usize;
        if seen > rank {
            return v as u8;
        }
    }
    255
}

/// Bilinear resample with half-pixel centers (no antialiasing).
pub fn resize_bilinear(img: &GrayImage, new_w: usize, new_h: usize) -> Result<GrayImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::arg("target size must be positive"));
    }
    let (w, h) = (img.width, img.height);
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let taps = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let xs: Vec<_> = (0..new_w).map(|x| taps(x, sx, w)).collect();
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let (y0, y1, fy) = taps(y, sy, h);
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bot = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            let v = top * (1.0 - fy) + bot * fy;
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(new_w, new_h, out)
}

/// Image resampled into the backend's square frame, plus the geometry that
/// produced it.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// Planar CHW, three identical channels of `MODEL_SIDE * MODEL_SIDE`.
    pixels: Vec<u8>,
    /// original -> model ratio.
    pub scale: f64,
    pub pad_x: usize,
    pub pad_y: usize,
    pub orig_width: usize,
    pub orig_height: usize,
}

impl ModelInput {
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// One channel of the model frame (all three are equal).
    pub fn channel(&self, c: usize) -> &[u8] {
        let plane = MODEL_SIDE * MODEL_SIDE;
        &self.pixels[c * plane..(c + 1) * plane]
    }

    pub fn content_width(&self) -> usize {
        MODEL_SIDE - self.pad_x
    }

    pub fn content_height(&self) -> usize {
        MODEL_SIDE - self.pad_y
    }

    /// Model-frame point for an original pixel coordinate, kept inside the
    /// content region.
    pub fn to_model(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x * self.scale).min((self.content_width() - 1) as f64),
            (y * self.scale).min((self.content_height() - 1) as f64),
        ]
    }

    /// Inverse of [`ModelInput::to_model`], rounded to the nearest original pixel.
    pub fn to_original(&self, mx: f64, my: f64) -> (usize, usize) {
        let x = (mx / self.scale).round().clamp(0.0, (self.orig_width - 1) as f64);
        let y = (my / self.scale).round().clamp(0.0, (self.orig_height - 1) as f64);
        (x as usize, y as usize)
    }

    /// Map a `MODEL_SIDE x MODEL_SIDE` model-frame mask back to the original
    /// resolution by nearest-neighbour sampling of the content region.
    pub fn mask_to_original(&self, model_mask: &[bool]) -> Result<BinaryMask> {
        if model_mask.len() != MODEL_SIDE * MODEL_SIDE {
            return Err(Error::arg(format!(
                "model-frame mask has {} pixels, expected {}",
                model_mask.len(),
                MODEL_SIDE * MODEL_SIDE
            )));
        }
        let (cw, ch) = (self.content_width(), self.content_height());
        let (w, h) = (self.orig_width, self.orig_height);
        let src_x: Vec<usize> = (0..w)
            .map(|x| (((x as f64 + 0.5) * cw as f64 / w as f64) as usize).min(cw - 1))
            .collect();
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = (((y as f64 + 0.5) * ch as f64 / h as f64) as usize).min(ch - 1);
            let row = &model_mask[sy * MODEL_SIDE..];
            data.extend(src_x.iter().map(|&sx| row[sx]));
        }
        BinaryMask::new(w, h, data)
    }
}

/// Scale the longest side to [`MODEL_SIDE`], replicate to three channels and
/// zero-pad right/bottom.
pub fn to_model_input(img: &GrayImage) -> ModelInput {
    let (w, h) = (img.width, img.height);
    let scale = MODEL_SIDE as f64 / w.max(h) as f64;
    let cw = ((w as f64 * scale).round() as usize).clamp(1, MODEL_SIDE);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, MODEL_SIDE);
    let resized = if cw == w && ch == h {
        img.clone()
    } else {
        resize_bilinear(img, cw, ch).expect("content size is positive")
    };
    let plane = MODEL_SIDE * MODEL_SIDE;
    let mut pixels = vec![0u8; 3 * plane];
    for y in 0..ch {
        let src = &resized.data[y * cw..(y + 1) * cw];
        for c in 0..3 {
            let off = c * plane + y * MODEL_SIDE;
            pixels[off..off + cw].copy_from_slice(src);
        }
    }
    ModelInput {
        pixels,
        scale,
        pad_x: MODEL_SIDE - cw,
        pad_y: MODEL_SIDE - ch,
        orig_width: w,
        orig_height: h,
    }
}

/// Prompts expressed in model-frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrompts {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

impl ModelPrompts {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Map prompts into the model frame with the geometry of `input`. Order and
/// labels are preserved.
pub fn transform_coords(prompts: &PromptSet, input: &ModelInput) -> Result<ModelPrompts> {
    let points = prompts
        .points
        .iter()
        .map(|&[x, y]| {
            if x as usize >= input.orig_width || y as usize >= input.orig_height {
                return Err(Error::arg(format!(
                    "prompt ({x}, {y}) lies outside the {}x{} image",
                    input.orig_width, input.orig_height
                )));
            }
            Ok(input.to_model(x as f64, y as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelPrompts {
        points,
        labels: prompts.labels.clone(),
    })
}
