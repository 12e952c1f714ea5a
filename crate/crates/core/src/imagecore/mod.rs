//! Grayscale images, projection profiles and character preprocessing.
//!
//! All intensity arithmetic rounds to the nearest integer with ties away from
//! zero (`f64::round`), then clamps to `0..=255`.

mod pgm;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use crate::{Error, Result};

/// Side of the network input produced by [`preprocess_char`].
pub const CHAR_INPUT_SIZE: usize = 64;
/// Side of the resized glyph inside the padded character input.
pub const CHAR_INTERIOR_SIZE: usize = 60;
/// Background frame added around the resized glyph.
pub const CHAR_PAD: usize = 2;

/// Row-major 8-bit grayscale image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero-area image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with a single value.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
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

    /// Sum of all intensities.
    pub fn mass(&self) -> u64 {
        self.data.iter().map(|&p| p as u64).sum()
    }

    /// Copy of the half-open window `[left, right) × [top, bottom)`.
    pub fn crop(&self, left: usize, top: usize, right: usize, bottom: usize) -> Result<GrayImage> {
        if right > self.width || bottom > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop [{left},{right})x[{top},{bottom}) outside {}x{} image",
                self.width, self.height
            )));
        }
        if right <= left || bottom <= top {
            return Err(Error::InvalidImage(format!(
                "zero-area crop [{left},{right})x[{top},{bottom})"
            )));
        }
        let w = right - left;
        let mut data = Vec::with_capacity(w * (bottom - top));
        for y in top..bottom {
            data.extend_from_slice(&self.data[y * self.width + left..y * self.width + right]);
        }
        GrayImage::new(w, bottom - top, data)
    }

    /// Places `self` into a larger zero canvas with its top-left corner at `(left, top)`.
    pub fn pad(&self, left: usize, top: usize, right: usize, bottom: usize) -> GrayImage {
        let w = self.width + left + right;
        let h = self.height + top + bottom;
        let mut data = vec![0u8; w * h];
        for y in 0..self.height {
            let dst = (y + top) * w + left;
            data[dst..dst + self.width].copy_from_slice(&self.data[y * self.width..(y + 1) * self.width]);
        }
        GrayImage { width: w, height: h, data }
    }
}

/// Per-column (or per-row) intensity sums.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub values: Vec<u64>,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }
}

/// Complements every pixel: `p -> 255 - p`.
pub fn invert(img: &GrayImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&p| 255 - p).collect(),
    }
}

/// `values[x] = Σ_y I(x, y)`.
pub fn column_profile(img: &GrayImage) -> Profile {
    let mut values = vec![0u64; img.width];
    for row in img.data.chunks_exact(img.width) {
        for (acc, &p) in values.iter_mut().zip(row) {
            *acc += p as u64;
        }
    }
    Profile { values }
}

/// `values[y] = Σ_x I(x, y)`.
pub fn row_profile(img: &GrayImage) -> Profile {
    Profile {
        values: img
            .data
            .chunks_exact(img.width)
            .map(|row| row.iter().map(|&p| p as u64).sum())
            .collect(),
    }
}

#[inline]
pub(crate) fn round_intensity(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resize with pixel-center alignment; edge samples are clamped.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!("zero-area resize target {width}x{height}")));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let axis = |dst: usize, scale: f64, len: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            data.push(round_intensity(top * (1.0 - fy) + bottom * fy));
        }
    }
    GrayImage::new(width, height, data)
}

/// Resizes an (already inverted) character crop to 60×60 and frames it with
/// a 2-pixel background border, giving the 64×64 network input.
pub fn preprocess_char(img: &GrayImage) -> Result<GrayImage> {
    let interior = resize_bilinear(img, CHAR_INTERIOR_SIZE, CHAR_INTERIOR_SIZE)?;
    Ok(interior.pad(CHAR_PAD, CHAR_PAD, CHAR_PAD, CHAR_PAD))
}

/// Average of inverted, 64×64-resized images, rounded per pixel.
pub fn average_heatmap(imgs: &[GrayImage]) -> Result<GrayImage> {
    if imgs.is_empty() {
        return Err(Error::Empty("average_heatmap needs at least one image".into()));
    }
    let n = CHAR_INPUT_SIZE * CHAR_INPUT_SIZE;
    let mut acc = vec![0u64; n];
    for img in imgs {
        let resized = resize_bilinear(&invert(img), CHAR_INPUT_SIZE, CHAR_INPUT_SIZE)?;
        for (a, &p) in acc.iter_mut().zip(resized.data()) {
            *a += p as u64;
        }
    }
    let count = imgs.len() as f64;
    GrayImage::new(
        CHAR_INPUT_SIZE,
        CHAR_INPUT_SIZE,
        acc.into_iter().map(|s| round_intensity(s as f64 / count)).collect(),
    )
}
