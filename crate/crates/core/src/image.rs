//! Float RGB images, categorical label maps, and their file encodings.
//!
//! PNG encodings: RGB images as 8-bit RGB, label maps as 8-bit grayscale
//! holding the raw part codes 0–5. Depth buffers use a small binary
//! container documented in `docs/formats.md`.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use thiserror::Error;

use crate::mesh::PartLabel;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image shape mismatch: {0}")]
    Shape(String),
    #[error("label code {code} at pixel {index} is outside 0..=5")]
    LabelCode { code: u8, index: usize },
    #[error("codec error: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<image::ImageError> for ImageError {
    fn from(e: image::ImageError) -> Self {
        ImageError::Codec(e.to_string())
    }
}

/// Row-major RGB image with `f64` channels, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::Shape(format!(
                "{} values for {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, index: usize) -> [f64; 3] {
        let o = index * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, index: usize, rgb: [f64; 3]) {
        self.data[index * 3..index * 3 + 3].copy_from_slice(&rgb);
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.shape() != other.shape() {
            return Err(ImageError::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour resample.
    pub fn resized(&self, width: usize, height: usize) -> Image {
        if self.shape() == (width, height) {
            return self.clone();
        }
        let mut out = Image::new(width, height);
        for r in 0..height {
            let sr = (r * self.height / height.max(1)).min(self.height.saturating_sub(1));
            for c in 0..width {
                let sc = (c * self.width / width.max(1)).min(self.width.saturating_sub(1));
                out.set_pixel(r * width + c, self.pixel(sr * self.width + sc));
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer sized")
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding to memory");
        out.into_inner()
    }

    /// Decodes any PNG; alpha is dropped and gray is expanded.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Image, ImageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png_bytes())?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image, ImageError> {
        Image::from_png_bytes(&std::fs::read(path)?)
    }
}

/// Per-pixel part codes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    codes: Vec<PartLabel>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap::filled(width, height, PartLabel::Background)
    }

    pub fn filled(width: usize, height: usize, label: PartLabel) -> Self {
        LabelMap {
            width,
            height,
            codes: vec![label; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, codes: Vec<PartLabel>) -> Result<Self, ImageError> {
        if codes.len() != width * height {
            return Err(ImageError::Shape(format!("{} labels for {width}x{height}", codes.len())));
        }
        Ok(LabelMap { width, height, codes })
    }

    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self, ImageError> {
        let labels = codes
            .iter()
            .enumerate()
            .map(|(index, &code)| PartLabel::from_code(code).ok_or(ImageError::LabelCode { code, index }))
            .collect::<Result<Vec<_>, _>>()?;
        LabelMap::from_labels(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[PartLabel] {
        &self.codes
    }

    pub fn get(&self, index: usize) -> PartLabel {
        self.codes[index]
    }

    pub fn set(&mut self, index: usize, label: PartLabel) {
        self.codes[index] = label;
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let img = GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.codes.iter().map(|l| l.code()).collect(),
        )
        .expect("buffer sized");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).expect("PNG encoding to memory");
        out.into_inner()
    }

    /// Decodes a PNG whose first channel holds raw part codes.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        LabelMap::from_codes(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png_bytes())?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        LabelMap::from_png_bytes(&std::fs::read(path)?)
    }

    /// False-color preview, one fixed color per code.
    pub fn to_preview(&self) -> Image {
        const PALETTE: [[f64; 3]; 6] = [
            [1.0, 1.0, 1.0],
            [0.9, 0.3, 0.2],
            [0.2, 0.5, 0.9],
            [0.2, 0.7, 0.3],
            [0.6, 0.4, 0.1],
            [0.6, 0.6, 0.6],
        ];
        let mut img = Image::new(self.width, self.height);
        for (i, l) in self.codes.iter().enumerate() {
            img.set_pixel(i, PALETTE[l.code() as usize]);
        }
        img
    }
}

const DEPTH_MAGIC: &[u8; 8] = b"PTDEPTH1";

/// Depth container: magic `PTDEPTH1`, `u32` width, `u32` height (little
/// endian), then `width*height` little-endian `f32` values row-major, with
/// `+inf` on background pixels.
pub fn encode_depth(width: usize, height: usize, depth: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + depth.len() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for &d in depth {
        out.extend_from_slice(&(d as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), ImageError> {
    if bytes.len() < 16 || &bytes[..8] != DEPTH_MAGIC {
        return Err(ImageError::Codec("missing PTDEPTH1 header".into()));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != w * h * 4 {
        return Err(ImageError::Shape(format!("depth body has {} bytes for {w}x{h}", body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((w, h, values))
}
