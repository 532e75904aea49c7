//! Nucleus detection on the nucleus stain channel and cytoplasm-ring ROIs.
//!
//! The detector is a distance-transform watershed-style seed finder:
//! Gaussian smoothing, Otsu binarization of dark regions, small-component
//! removal, exact Euclidean distance transform, and separated local maxima.

use std::collections::VecDeque;

use thiserror::Error;

use crate::imaging::{gaussian_blur, BitMask, GrayImage, RasterImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("empty ROI: {0}")]
    EmptyRoi(&'static str),
    #[error("nucleus at ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nucleus {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NucleusSet {
    pub nuclei: Vec<Nucleus>,
}

impl NucleusSet {
    pub fn len(&self) -> usize {
        self.nuclei.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nuclei.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Nucleus> {
        self.nuclei.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub sigma: f64,
    /// Components smaller than this many pixels are discarded.
    pub min_area: usize,
    /// Minimum distance between accepted centers.
    pub min_separation: f64,
    /// Distance-transform maxima below this value are ignored.
    pub min_radius: f64,
    /// Use the distance-transform value as radius; otherwise `fallback_radius`.
    pub estimate_radius: bool,
    pub fallback_radius: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            min_area: 20,
            min_separation: 8.0,
            min_radius: 2.0,
            estimate_radius: true,
            fallback_radius: 8.0,
        }
    }
}

/// Otsu threshold: the value `t` maximizing between-class variance of
/// `{v <= t}` vs `{v > t}`. `None` for single-valued images.
pub fn otsu_threshold(img: &GrayImage) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 0..255 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Some(best.1)
}

/// 8-connected components; returns a label per pixel (0 = background) and
/// component sizes indexed by label.
pub fn connected_components(mask: &BitMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits()[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// 1-D squared distance transform of a sampled function (Felzenszwalb &
/// Huttenlocher lower envelope of parabolas). Infinite samples are skipped.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from each set pixel to the nearest unset pixel
/// (0 on unset pixels). Pixels outside the image do not count as unset; if
/// no unset pixel exists every distance is infinite.
pub fn distance_transform(mask: &BitMask) -> Vec<f64> {
    let (w, h) = (mask.width(), mask.height());
    let mut grid: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { f64::INFINITY } else { 0.0 })
        .collect();
    let n = w.max(h);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid.iter_mut().for_each(|d| *d = d.sqrt());
    grid
}

/// Detects nucleus centers on a nucleus channel where dark means strong stain.
pub fn detect_nuclei(
    nucleus_channel: &GrayImage,
    cfg: &DetectionConfig,
) -> Result<NucleusSet, SegmentationError> {
    let (w, h) = (nucleus_channel.width(), nucleus_channel.height());
    let smooth = gaussian_blur(nucleus_channel, cfg.sigma)?;
    let Some(t) = otsu_threshold(&smooth) else {
        return Ok(NucleusSet::default());
    };
    let dark = BitMask::from_fn(w, h, |x, y| smooth.get(x, y) <= t);
    let (labels, sizes) = connected_components(&dark);
    let kept = BitMask::from_fn(w, h, |x, y| {
        let l = labels[y * w + x] as usize;
        l != 0 && sizes[l] >= cfg.min_area
    });
    if kept.count() == 0 {
        return Ok(NucleusSet::default());
    }
    let dist = distance_transform(&kept);
    let cap = (w.max(h)) as f64;

    let mut maxima: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d = dist[y * w + x].min(cap);
            if d < cfg.min_radius.max(f64::MIN_POSITIVE) {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if (dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if dist[ny as usize * w + nx as usize].min(cap) > d {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                maxima.push((d, x, y));
            }
        }
    }
    // strongest first; row-major among equals (the sort is stable)
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0));

    let sep2 = cfg.min_separation * cfg.min_separation;
    let mut accepted: Vec<Nucleus> = Vec::new();
    for (d, x, y) in maxima {
        let (fx, fy) = (x as f64, y as f64);
        if accepted
            .iter()
            .any(|n| (n.x - fx).powi(2) + (n.y - fy).powi(2) < sep2)
        {
            continue;
        }
        accepted.push(Nucleus {
            x: fx,
            y: fy,
            radius: if cfg.estimate_radius { d } else { cfg.fallback_radius },
        });
    }
    accepted.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
    Ok(NucleusSet { nuclei: accepted })
}

/// Cytoplasm region of interest: union of rings minus nucleus disks minus
/// bright background.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub mask: BitMask,
    pub pixel_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingConfig {
    pub thickness: f64,
    pub bg_threshold: u8,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            thickness: 10.0,
            bg_threshold: 220,
        }
    }
}

/// Rings `r_in < d <= r_in + thickness` around every nucleus, excluding
/// any pixel within any nucleus disk and pixels brighter than the threshold.
pub fn build_cytoplasm_rings(
    nuclei: &NucleusSet,
    spot_gray: &GrayImage,
    cfg: &RingConfig,
) -> Result<RoiMask, SegmentationError> {
    if nuclei.is_empty() {
        return Err(SegmentationError::EmptyRoi("no nuclei"));
    }
    let (w, h) = (spot_gray.width(), spot_gray.height());
    for n in nuclei.iter() {
        if !(n.x >= 0.0 && n.y >= 0.0 && n.x < w as f64 && n.y < h as f64) || !(n.radius > 0.0) {
            return Err(SegmentationError::OutOfBounds {
                x: n.x,
                y: n.y,
                width: w,
                height: h,
            });
        }
    }
    let mut ring = BitMask::empty(w, h);
    let mut inner = BitMask::empty(w, h);
    for n in nuclei.iter() {
        let outer = n.radius + cfg.thickness;
        let (outer2, inner2) = (outer * outer, n.radius * n.radius);
        let x0 = (n.x - outer).floor().max(0.0) as usize;
        let x1 = ((n.x + outer).ceil() as usize).min(w - 1);
        let y0 = (n.y - outer).floor().max(0.0) as usize;
        let y1 = ((n.y + outer).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - n.x).powi(2) + (y as f64 - n.y).powi(2);
                if d2 <= inner2 {
                    inner.set(x, y, true);
                } else if d2 <= outer2 {
                    ring.set(x, y, true);
                }
            }
        }
    }
    let mask = BitMask::from_fn(w, h, |x, y| {
        ring.get(x, y) && !inner.get(x, y) && spot_gray.get(x, y) <= cfg.bg_threshold
    });
    let pixel_count = mask.count();
    Ok(RoiMask { mask, pixel_count })
}

/// Debug rendering: ROI purple, nucleus centers green, rest dimmed.
pub fn roi_overlay(spot: &RasterImage, roi: &RoiMask, nuclei: &NucleusSet) -> Result<RasterImage, SegmentationError> {
    if spot.width() != roi.mask.width() || spot.height() != roi.mask.height() {
        return Err(SegmentationError::DimensionMismatch("overlay".into()));
    }
    let mut out = RasterImage::from_fn(spot.width(), spot.height(), |x, y| {
        if roi.mask.get(x, y) {
            [160, 32, 240]
        } else {
            spot.pixel(x, y).map(|c| c / 2 + 64)
        }
    });
    for n in nuclei.iter() {
        let (cx, cy) = (n.x.round() as isize, n.y.round() as isize);
        for d in -2isize..=2 {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                if x >= 0 && y >= 0 && (x as usize) < spot.width() && (y as usize) < spot.height() {
                    out.set_pixel(x as usize, y as usize, [0, 200, 0]);
                }
            }
        }
    }
    Ok(out)
}
