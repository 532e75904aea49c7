//! Random patch sampling under foreground, overlap and entropy constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::{gaussian_blur, gray_histogram, shannon_entropy, threshold_mask, to_grayscale, BitMask, GrayImage, ImagingError, Keep, RasterImage};
use crate::num::LogBase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("image too small: {width}x{height} for {side}px patches")]
    ImageTooSmall { width: usize, height: usize, side: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub candidates: usize,
    pub side: usize,
    pub fg_threshold: u8,
    pub blur_sigma: f64,
    pub min_fg_fraction: f64,
    pub max_overlap_fraction: f64,
    pub min_entropy: f64,
    pub log_base: LogBase,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            candidates: 1000,
            side: 227,
            fg_threshold: 230,
            blur_sigma: 2.0,
            min_fg_fraction: 0.80,
            max_overlap_fraction: 0.50,
            min_entropy: 4.6,
            log_base: LogBase::Natural,
            seed: 1,
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<(), PatchError> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.min_fg_fraction) || !frac(self.max_overlap_fraction) {
            return Err(PatchError::InvalidConfig("fractions must lie in [0, 1]".into()));
        }
        if self.side == 0 {
            return Err(PatchError::InvalidConfig("patch side must be positive".into()));
        }
        Ok(())
    }
}

/// Square patch; `x`, `y` is the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Patch {
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl Patch {
    /// `{spot_id}_{id:03}`, also the PNG file stem.
    pub fn unit_id(&self, spot_id: &str) -> String {
        format!("{spot_id}_{:03}", self.id)
    }
}

/// Gray → Gaussian blur → `≤ fg_threshold`.
pub fn foreground_mask(img: &RasterImage, cfg: &SamplerConfig) -> Result<BitMask, PatchError> {
    let blurred = gaussian_blur(&to_grayscale(img), cfg.blur_sigma)?;
    Ok(threshold_mask(&blurred, cfg.fg_threshold, Keep::Below))
}

/// Summed-area table over a mask.
struct Integral {
    stride: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(mask: &BitMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask.get(x, y) as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn count(&self, x: usize, y: usize, w: usize, h: usize) -> u32 {
        let s = self.stride;
        self.sums[(y + h) * s + x + w] + self.sums[y * s + x] - self.sums[y * s + x + w] - self.sums[(y + h) * s + x]
    }
}

fn patch_entropy(gray: &GrayImage, x: usize, y: usize, side: usize, base: LogBase) -> f64 {
    shannon_entropy(&gray_histogram::<f64>(gray, x, y, side, side), base).expect("non-empty patch")
}

/// Greedy sequential acceptance over `cfg.candidates` uniformly drawn
/// origins. Returns accepted patches in acceptance order.
pub fn sample_patches(img: &RasterImage, cfg: &SamplerConfig) -> Result<Vec<Patch>, PatchError> {
    cfg.validate()?;
    let (w, h, side) = (img.width(), img.height(), cfg.side);
    if w < side || h < side {
        return Err(PatchError::ImageTooSmall { width: w, height: h, side });
    }
    let fg = Integral::new(&foreground_mask(img, cfg)?);
    let gray = to_grayscale(img);
    let area = (side * side) as f64;
    let mut covered = BitMask::empty(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut accepted = Vec::new();
    for _ in 0..cfg.candidates {
        let x = rng.gen_range(0..=w - side);
        let y = rng.gen_range(0..=h - side);
        if (fg.count(x, y, side, side) as f64) < cfg.min_fg_fraction * area {
            continue;
        }
        if covered.count_in_rect(x, y, side, side) as f64 > cfg.max_overlap_fraction * area {
            continue;
        }
        if patch_entropy(&gray, x, y, side, cfg.log_base) < cfg.min_entropy {
            continue;
        }
        covered.fill_rect(x, y, side, side);
        accepted.push(Patch {
            id: accepted.len(),
            x,
            y,
            side,
        });
    }
    Ok(accepted)
}

pub fn crop_patch(img: &RasterImage, p: &Patch) -> RasterImage {
    img.crop(p.x, p.y, p.side, p.side)
}
