use super::{GrayImage, ImagingError};
use crate::num::{LogBase, Real};

/// Histogram whose masses sum to one, or an explicitly empty histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHistogram<T> {
    mass: Vec<T>,
    empty: bool,
}

impl<T: Real> NormalizedHistogram<T> {
    /// Normalizes raw bin counts. A zero total yields an empty histogram.
    pub fn from_counts(counts: &[u64]) -> Result<Self, ImagingError> {
        if counts.is_empty() {
            return Err(ImagingError::InvalidHistogram("zero bins".into()));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Ok(Self {
                mass: vec![T::zero(); counts.len()],
                empty: true,
            });
        }
        let total = T::from_u64(total).unwrap();
        Ok(Self {
            mass: counts
                .iter()
                .map(|&c| T::from_u64(c).unwrap() / total)
                .collect(),
            empty: false,
        })
    }

    /// Accepts masses that already sum to one (±1e-9 relative to the bin count).
    pub fn from_masses(mass: Vec<T>) -> Result<Self, ImagingError> {
        if mass.is_empty() {
            return Err(ImagingError::InvalidHistogram("zero bins".into()));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < T::zero()) {
            return Err(ImagingError::InvalidHistogram(
                "masses must be finite and nonnegative".into(),
            ));
        }
        let total: T = mass.iter().copied().sum();
        if total == T::zero() {
            return Ok(Self { mass, empty: true });
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::from_usize_lossy(4 * mass.len()));
        if (total - T::one()).abs() > tol {
            return Err(ImagingError::InvalidHistogram(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { mass, empty: false })
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_weights(weights: &[T]) -> Result<Self, ImagingError> {
        if weights.iter().any(|m| !m.is_finite() || *m < T::zero()) {
            return Err(ImagingError::InvalidHistogram(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: T = weights.iter().copied().sum();
        if total == T::zero() {
            return Self::from_masses(weights.to_vec());
        }
        Ok(Self {
            mass: weights.iter().map(|&w| w / total).collect(),
            empty: weights.is_empty(),
        })
    }

    pub fn uniform(bins: usize) -> Self {
        assert!(bins > 0);
        let m = T::one() / T::from_usize_lossy(bins);
        Self {
            mass: vec![m; bins],
            empty: false,
        }
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn masses(&self) -> &[T] {
        &self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Merges adjacent bin pairs; `None` if the bin count is odd.
    pub fn halve(&self) -> Option<Self> {
        if self.mass.len() % 2 != 0 || self.mass.len() < 2 {
            return None;
        }
        Some(Self {
            mass: self.mass.chunks_exact(2).map(|p| p[0] + p[1]).collect(),
            empty: self.empty,
        })
    }
}

/// 256-bin normalized histogram of a gray image region.
pub fn gray_histogram<T: Real>(
    img: &GrayImage,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
) -> NormalizedHistogram<T> {
    let mut counts = [0u64; 256];
    for row in y..y + h {
        let start = row * img.width() + x;
        for &v in &img.data()[start..start + w] {
            counts[v as usize] += 1;
        }
    }
    NormalizedHistogram::from_counts(&counts).expect("256 bins")
}

/// Shannon entropy `-Σ m ln m` (or base 2), with `0 ln 0 = 0`.
pub fn shannon_entropy<T: Real>(
    h: &NormalizedHistogram<T>,
    base: LogBase,
) -> Result<T, ImagingError> {
    if h.is_empty() {
        return Err(ImagingError::EmptyHistogram);
    }
    let nats: T = h
        .masses()
        .iter()
        .filter(|&&m| m > T::zero())
        .map(|&m| -m * m.ln())
        .sum();
    Ok(nats.max(T::zero()) / base.ln_of_base::<T>())
}
