//! Raster types and stain-agnostic image transforms.

mod augment;
mod blur;
mod deconv;
mod histogram;
pub mod io;
mod transform;

pub use augment::{augment_variants, flip_horizontal, rotate90, Variant, VARIANT_COUNT};
pub use blur::{gaussian_blur, gaussian_kernel};
pub use deconv::{color_deconvolve, render_amount, StainBasis, StainChannels};
pub use histogram::{gray_histogram, shannon_entropy, NormalizedHistogram};
pub use transform::{threshold_mask, to_grayscale, white_balance, Keep, WhiteBalanceConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("invalid image dimensions {width}x{height} for {samples} samples")]
    Dimensions {
        width: usize,
        height: usize,
        samples: usize,
    },
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("black background: channel {channel} of the background window has mean 0")]
    BlackBackground { channel: usize },
    #[error("window {window} (stride {stride}) does not fit a {width}x{height} image")]
    BadWindow {
        window: usize,
        stride: usize,
        width: usize,
        height: usize,
    },
    #[error("degenerate stain basis: {0}")]
    DegenerateBasis(String),
    #[error("non-square image {width}x{height}")]
    NonSquare { width: usize, height: usize },
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
}

fn check_dims(width: usize, height: usize, samples: usize, per_pixel: usize) -> Result<(), ImagingError> {
    if width == 0 || height == 0 || width.checked_mul(height).and_then(|n| n.checked_mul(per_pixel)) != Some(samples) {
        return Err(ImagingError::Dimensions {
            width,
            height,
            samples,
        });
    }
    Ok(())
}

/// 8-bit RGB image, row-major, interleaved `R,G,B`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height, data.len(), 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Copy of the `w`×`h` rectangle with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> RasterImage {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        RasterImage::from_fn(w, h, |cx, cy| self.pixel(x + cx, y + cy))
    }
}

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height, data.len(), 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

/// One boolean per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of set bits inside the axis-aligned rectangle.
    pub fn count_in_rect(&self, x: usize, y: usize, w: usize, h: usize) -> usize {
        (y..y + h)
            .map(|row| {
                let start = row * self.width + x;
                self.bits[start..start + w].iter().filter(|&&b| b).count()
            })
            .sum()
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize) {
        for row in y..y + h {
            let start = row * self.width + x;
            self.bits[start..start + w].iter_mut().for_each(|b| *b = true);
        }
    }
}
