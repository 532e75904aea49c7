use super::histogram::{gray_histogram, shannon_entropy};
use super::{BitMask, GrayImage, ImagingError, RasterImage};
use crate::num::LogBase;

/// Luminance `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    let data = img
        .pixels()
        .map(|[r, g, b]| {
            let v = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
            ((v + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same dimensions")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteBalanceConfig {
    pub window: usize,
    pub stride: usize,
    pub log_base: LogBase,
}

impl Default for WhiteBalanceConfig {
    fn default() -> Self {
        Self {
            window: 100,
            stride: 50,
            log_base: LogBase::Natural,
        }
    }
}

/// Finds the minimal-entropy window and returns its per-channel mean color.
pub fn background_color(
    img: &RasterImage,
    cfg: &WhiteBalanceConfig,
) -> Result<[f64; 3], ImagingError> {
    let (w, h) = (img.width(), img.height());
    if cfg.window == 0 || cfg.stride == 0 || cfg.window > w.min(h) {
        return Err(ImagingError::BadWindow {
            window: cfg.window,
            stride: cfg.stride,
            width: w,
            height: h,
        });
    }
    let gray = to_grayscale(img);
    let win = cfg.window;
    let mut best: Option<(f64, usize, usize)> = None;
    for y in (0..=h - win).step_by(cfg.stride) {
        for x in (0..=w - win).step_by(cfg.stride) {
            let hist = gray_histogram::<f64>(&gray, x, y, win, win);
            let e = shannon_entropy(&hist, cfg.log_base)?;
            if best.map_or(true, |(b, _, _)| e < b) {
                best = Some((e, x, y));
            }
        }
    }
    let (_, bx, by) = best.expect("at least one window");
    let mut sums = [0u64; 3];
    for y in by..by + win {
        for x in bx..bx + win {
            let p = img.pixel(x, y);
            for c in 0..3 {
                sums[c] += p[c] as u64;
            }
        }
    }
    let n = (win * win) as f64;
    Ok(sums.map(|s| s as f64 / n))
}

/// Divides every pixel by the background color found by a sliding
/// minimal-entropy window and rescales to 255.
pub fn white_balance(
    img: &RasterImage,
    cfg: &WhiteBalanceConfig,
) -> Result<RasterImage, ImagingError> {
    let bg = background_color(img, cfg)?;
    if let Some(channel) = bg.iter().position(|&c| c <= 0.0) {
        return Err(ImagingError::BlackBackground { channel });
    }
    // per-channel lookup table
    let mut lut = [[0u8; 256]; 3];
    for c in 0..3 {
        for v in 0..256 {
            lut[c][v] = (v as f64 / bg[c] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| [lut[0][p[0] as usize], lut[1][p[1] as usize], lut[2][p[2] as usize]])
        .collect();
    RasterImage::new(img.width(), img.height(), data)
}

/// Which side of the threshold becomes the set bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    /// `pixel <= t`
    Below,
    /// `pixel > t`
    Above,
}

pub fn threshold_mask(img: &GrayImage, t: u8, keep: Keep) -> BitMask {
    BitMask::from_fn(img.width(), img.height(), |x, y| {
        let v = img.get(x, y);
        match keep {
            Keep::Below => v <= t,
            Keep::Above => v > t,
        }
    })
}
