//! The 517-value cytoplasm histogram feature vector and the
//! mean-intensity baseline feature.
//!
//! Layout of [`FlatFeatureVector`]:
//!
//! | range     | content                                            |
//! |-----------|----------------------------------------------------|
//! | 0..256    | normalized 256-bin histogram                       |
//! | 256..384  | 128 bins                                           |
//! | 384..448  | 64 bins                                            |
//! | 448..480  | 32 bins                                            |
//! | 480..496  | 16 bins                                            |
//! | 496..504  | 8 bins                                             |
//! | 504..508  | 4 bins                                             |
//! | 508..512  | quartile intensities q1, q2, q3, q4                |
//! | 512       | mean                                               |
//! | 513       | median                                             |
//! | 514       | skewness (`m3 / m2^1.5`)                           |
//! | 515       | kurtosis (`m4 / m2^2`, non-excess)                 |
//! | 516       | H-score in `[100, 400]`                            |

use thiserror::Error;

use crate::imaging::{BitMask, GrayImage, NormalizedHistogram};
use crate::num::Real;

pub const PYRAMID_BINS: [usize; 7] = [256, 128, 64, 32, 16, 8, 4];
pub const PYRAMID_LEN: usize = 508;
pub const QUARTILES_AT: usize = 508;
pub const MEAN_AT: usize = 512;
pub const MEDIAN_AT: usize = 513;
pub const SKEWNESS_AT: usize = 514;
pub const KURTOSIS_AT: usize = 515;
pub const HSCORE_AT: usize = 516;
pub const FEATURE_LEN: usize = 517;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("empty ROI")]
    EmptyRoi,
    #[error("mask is {mask_w}x{mask_h} but image is {img_w}x{img_h}")]
    DimensionMismatch {
        img_w: usize,
        img_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
}

fn check_same(img: &GrayImage, mask: &BitMask) -> Result<(), FeatureError> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(FeatureError::DimensionMismatch {
            img_w: img.width(),
            img_h: img.height(),
            mask_w: mask.width(),
            mask_h: mask.height(),
        });
    }
    Ok(())
}

/// Mitochondria-channel intensities at ROI pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiIntensitySample {
    values: Vec<u8>,
    counts: [u64; 256],
    pub spot_id: String,
}

impl RoiIntensitySample {
    pub fn new(values: Vec<u8>, spot_id: impl Into<String>) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::EmptyRoi);
        }
        let mut counts = [0u64; 256];
        for &v in &values {
            counts[v as usize] += 1;
        }
        Ok(Self {
            values,
            counts,
            spot_id: spot_id.into(),
        })
    }

    /// Collects `channel` values under the set bits of `roi`, row-major.
    pub fn from_roi(
        channel: &GrayImage,
        roi: &BitMask,
        spot_id: impl Into<String>,
    ) -> Result<Self, FeatureError> {
        check_same(channel, roi)?;
        let values = channel
            .data()
            .iter()
            .zip(roi.bits())
            .filter_map(|(&v, &b)| b.then_some(v))
            .collect();
        Self::new(values, spot_id)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalized histograms with 256, 128, ..., 4 bins; each coarser level
/// merges adjacent bin pairs of the previous one.
pub fn histogram_pyramid<T: Real>(s: &RoiIntensitySample) -> Vec<NormalizedHistogram<T>> {
    let mut levels = Vec::with_capacity(PYRAMID_BINS.len());
    let mut current = NormalizedHistogram::<T>::from_counts(s.counts()).expect("256 bins");
    for _ in 1..PYRAMID_BINS.len() {
        let next = current.halve().expect("even bin count");
        levels.push(current);
        current = next;
    }
    levels.push(current);
    levels
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuartileStats<T> {
    pub quartiles: [T; 4],
    pub mean: T,
    pub median: T,
    pub skewness: T,
    pub kurtosis: T,
}

/// Quartile intensities, mean, median and Pearson moment ratios.
///
/// `q_k` is the smallest intensity whose cumulative mass reaches `k/4`.
/// Skewness and kurtosis are 0 when the sample has no spread.
pub fn quartile_stats<T: Real>(s: &RoiIntensitySample) -> QuartileStats<T> {
    let counts = s.counts();
    let n = s.len() as u64;

    let mut quartiles = [T::zero(); 4];
    let mut cum = 0u64;
    let mut k = 1u64;
    for (v, &c) in counts.iter().enumerate() {
        cum += c;
        while k <= 4 && 4 * cum >= k * n {
            quartiles[(k - 1) as usize] = T::from_usize_lossy(v);
            k += 1;
        }
    }

    let nth = |rank: u64| -> usize {
        let mut cum = 0u64;
        for (v, &c) in counts.iter().enumerate() {
            cum += c;
            if cum > rank {
                return v;
            }
        }
        255
    };
    let median = if n % 2 == 1 {
        T::from_usize_lossy(nth(n / 2))
    } else {
        (T::from_usize_lossy(nth(n / 2 - 1)) + T::from_usize_lossy(nth(n / 2))) / T::lit(2.0)
    };

    let nt = T::from_u64(n).unwrap();
    let weighted = |f: &dyn Fn(T) -> T| -> T {
        counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| T::from_u64(c).unwrap() * f(T::from_usize_lossy(v)))
            .sum::<T>()
            / nt
    };
    let mean = weighted(&|v| v);
    let m2 = weighted(&|v| (v - mean).powi(2));
    let m3 = weighted(&|v| (v - mean).powi(3));
    let m4 = weighted(&|v| (v - mean).powi(4));
    let (skewness, kurtosis) = if m2 > T::zero() {
        (m3 / m2.powf(T::lit(1.5)), m4 / (m2 * m2))
    } else {
        (T::zero(), T::zero())
    };

    QuartileStats {
        quartiles,
        mean,
        median,
        skewness,
        kurtosis,
    }
}

/// Mass fractions of the four intensity bands, strongest stain first:
/// `[0,63]`, `[64,127]`, `[128,191]`, `[192,255]`.
pub fn band_fractions<T: Real>(s: &RoiIntensitySample) -> [T; 4] {
    let n = T::from_usize_lossy(s.len());
    let mut bands = [0u64; 4];
    for (v, &c) in s.counts().iter().enumerate() {
        bands[v / 64] += c;
    }
    bands.map(|b| T::from_u64(b).unwrap() / n)
}

/// `100 * Σ i * f_i`, where `f_i` is the fraction in band `i` and band 4
/// is the darkest.
pub fn h_score<T: Real>(s: &RoiIntensitySample) -> T {
    let [dark, mid_dark, mid_bright, bright] = band_fractions::<T>(s);
    T::lit(100.0)
        * (bright + T::lit(2.0) * mid_bright + T::lit(3.0) * mid_dark + T::lit(4.0) * dark)
}

/// Fixed-layout 517-value histogram feature vector (see module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct FlatFeatureVector<T> {
    values: Vec<T>,
}

impl<T: Real> FlatFeatureVector<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Pyramid level `k` (0 = 256 bins, 6 = 4 bins).
    pub fn level(&self, k: usize) -> &[T] {
        let start: usize = PYRAMID_BINS[..k].iter().sum();
        &self.values[start..start + PYRAMID_BINS[k]]
    }

    pub fn quartiles(&self) -> &[T] {
        &self.values[QUARTILES_AT..QUARTILES_AT + 4]
    }

    pub fn mean(&self) -> T {
        self.values[MEAN_AT]
    }

    pub fn median(&self) -> T {
        self.values[MEDIAN_AT]
    }

    pub fn skewness(&self) -> T {
        self.values[SKEWNESS_AT]
    }

    pub fn kurtosis(&self) -> T {
        self.values[KURTOSIS_AT]
    }

    pub fn h_score(&self) -> T {
        self.values[HSCORE_AT]
    }
}

pub fn assemble_hist_features<T: Real>(s: &RoiIntensitySample) -> FlatFeatureVector<T> {
    let mut values = Vec::with_capacity(FEATURE_LEN);
    for level in histogram_pyramid::<T>(s) {
        values.extend_from_slice(level.masses());
    }
    let st = quartile_stats::<T>(s);
    values.extend_from_slice(&st.quartiles);
    values.extend_from_slice(&[st.mean, st.median, st.skewness, st.kurtosis, h_score(s)]);
    debug_assert_eq!(values.len(), FEATURE_LEN);
    FlatFeatureVector { values }
}

/// Mean gray intensity over the foreground.
pub fn mean_intensity_baseline<T: Real>(spot_gray: &GrayImage, fg: &BitMask) -> Result<T, FeatureError> {
    check_same(spot_gray, fg)?;
    let (sum, n) = spot_gray
        .data()
        .iter()
        .zip(fg.bits())
        .filter(|(_, &b)| b)
        .fold((0u64, 0u64), |(s, n), (&v, _)| (s + v as u64, n + 1));
    if n == 0 {
        return Err(FeatureError::EmptyRoi);
    }
    Ok(T::from_u64(sum).unwrap() / T::from_u64(n).unwrap())
}
