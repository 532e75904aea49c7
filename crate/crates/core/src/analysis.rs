//! Histogram divergence analysis: smoothed and symmetrized KL divergence,
//! class mean histograms and classical (Torgerson) MDS.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::NormalizedHistogram;
use crate::num::Real;
use crate::table::{format_value, Label};

pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("bin count mismatch: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error("class {0} has no histograms")]
    EmptyClass(Label),
    #[error("too few items for MDS: {0} (need at least 3)")]
    TooFewItems(usize),
    #[error("matrix is not {n}x{n}")]
    Shape { n: usize },
    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("nonzero diagonal at {0}")]
    NonzeroDiagonal(usize),
    #[error("negative or non-finite dissimilarity at ({i}, {j})")]
    InvalidEntry { i: usize, j: usize },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

fn smoothed<T: Real>(h: &NormalizedHistogram<T>, eps: T) -> Vec<T> {
    let total: T = h.masses().iter().map(|&m| m + eps).sum();
    h.masses().iter().map(|&m| (m + eps) / total).collect()
}

fn check_pair<T: Real>(p: &NormalizedHistogram<T>, q: &NormalizedHistogram<T>, eps: T) -> Result<(), AnalysisError> {
    if p.bins() != q.bins() {
        return Err(AnalysisError::BinMismatch {
            left: p.bins(),
            right: q.bins(),
        });
    }
    if !(eps > T::zero()) {
        return Err(AnalysisError::BadEpsilon);
    }
    Ok(())
}

fn kl_smoothed<T: Real>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum::<T>().max(T::zero())
}

/// `Σ p_i ln(p_i / q_i)` after adding `eps` to every bin of both inputs and
/// renormalizing.
pub fn kl_divergence<T: Real>(p: &NormalizedHistogram<T>, q: &NormalizedHistogram<T>, eps: T) -> Result<T, AnalysisError> {
    check_pair(p, q, eps)?;
    Ok(kl_smoothed(&smoothed(p, eps), &smoothed(q, eps)))
}

/// Mean of the two directed divergences.
pub fn kl_sym<T: Real>(p: &NormalizedHistogram<T>, q: &NormalizedHistogram<T>, eps: T) -> Result<T, AnalysisError> {
    check_pair(p, q, eps)?;
    let (a, b) = (smoothed(p, eps), smoothed(q, eps));
    Ok((kl_smoothed(&a, &b) + kl_smoothed(&b, &a)) / T::lit(2.0))
}

/// Bin-wise mean of the histograms of each class, in class order.
pub fn class_mean_histograms<T: Real>(
    items: &[(Label, &NormalizedHistogram<T>)],
) -> Result<[NormalizedHistogram<T>; 3], AnalysisError> {
    let bins = items.first().map_or(0, |(_, h)| h.bins());
    let mut sums = [vec![T::zero(); bins], vec![T::zero(); bins], vec![T::zero(); bins]];
    let mut counts = [0usize; 3];
    for (label, h) in items {
        if h.bins() != bins {
            return Err(AnalysisError::BinMismatch {
                left: bins,
                right: h.bins(),
            });
        }
        let k = label.index();
        counts[k] += 1;
        for (s, &m) in sums[k].iter_mut().zip(h.masses()) {
            *s = *s + m;
        }
    }
    let mut out = Vec::with_capacity(3);
    for (k, sum) in sums.into_iter().enumerate() {
        if counts[k] == 0 {
            return Err(AnalysisError::EmptyClass(Label::from_index(k)));
        }
        let n = T::from_usize_lossy(counts[k]);
        let mean: Vec<T> = sum.into_iter().map(|s| s / n).collect();
        out.push(NormalizedHistogram::from_weights(&mean).expect("means of valid histograms"));
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

/// Symmetric, zero-diagonal, nonnegative n×n matrix with item ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix<T> {
    ids: Vec<String>,
    values: Vec<T>,
}

impl<T: Real> DissimilarityMatrix<T> {
    /// Row-major values; symmetry is checked to a relative 1e-12.
    pub fn new(ids: Vec<String>, values: Vec<T>) -> Result<Self, AnalysisError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(AnalysisError::Shape { n });
        }
        let scale = values.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let tol = scale * T::lit(1e-12);
        for i in 0..n {
            if values[i * n + i] != T::zero() {
                return Err(AnalysisError::NonzeroDiagonal(i));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < T::zero() {
                    return Err(AnalysisError::InvalidEntry { i, j });
                }
                if (v - values[j * n + i]).abs() > tol {
                    return Err(AnalysisError::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self { ids, values })
    }

    /// Fills the upper triangle with `f(i, j)` in parallel and mirrors it.
    pub fn from_pairs<F>(ids: Vec<String>, f: F) -> Result<Self, AnalysisError>
    where
        F: Fn(usize, usize) -> Result<T, AnalysisError> + Sync,
    {
        let n = ids.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        let vals: Vec<T> = pairs.par_iter().map(|&(i, j)| f(i, j)).collect::<Result<_, _>>()?;
        let mut values = vec![T::zero(); n * n];
        for (&(i, j), &v) in pairs.iter().zip(&vals) {
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        Self::new(ids, values)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.len() + j]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Header `id,<ids>` followed by one row per item.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for id in &self.ids {
            write!(s, ",{id}").unwrap();
        }
        s.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            s.push_str(id);
            for j in 0..self.len() {
                write!(s, ",{}", format_value(self.get(i, j).as_f64())).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Pairwise symmetrized KL divergences.
pub fn kl_matrix<T: Real>(
    ids: Vec<String>,
    hists: &[NormalizedHistogram<T>],
    eps: T,
) -> Result<DissimilarityMatrix<T>, AnalysisError> {
    if ids.len() != hists.len() {
        return Err(AnalysisError::LengthMismatch {
            left: ids.len(),
            right: hists.len(),
        });
    }
    DissimilarityMatrix::from_pairs(ids, |i, j| kl_sym(&hists[i], &hists[j], eps))
}

/// Pairwise Euclidean distances, e.g. between deep-feature vectors.
pub fn euclidean_matrix<T: Real, V: AsRef<[T]> + Sync>(
    ids: Vec<String>,
    vectors: &[V],
) -> Result<DissimilarityMatrix<T>, AnalysisError> {
    if ids.len() != vectors.len() {
        return Err(AnalysisError::LengthMismatch {
            left: ids.len(),
            right: vectors.len(),
        });
    }
    DissimilarityMatrix::from_pairs(ids, |i, j| {
        let (a, b) = (vectors[i].as_ref(), vectors[j].as_ref());
        if a.len() != b.len() {
            return Err(AnalysisError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        Ok(a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt())
    })
}

/// Mean off-diagonal dissimilarity within classes and between classes.
pub fn intra_inter_means<T: Real>(d: &DissimilarityMatrix<T>, labels: &[Label]) -> Option<(T, T)> {
    if labels.len() != d.len() {
        return None;
    }
    let (mut intra, mut ni, mut inter, mut nx) = (T::zero(), 0usize, T::zero(), 0usize);
    for i in 0..d.len() {
        for j in (i + 1)..d.len() {
            if labels[i] == labels[j] {
                intra = intra + d.get(i, j);
                ni += 1;
            } else {
                inter = inter + d.get(i, j);
                nx += 1;
            }
        }
    }
    (ni > 0 && nx > 0).then(|| (intra / T::from_usize_lossy(ni), inter / T::from_usize_lossy(nx)))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and matching unit eigenvectors.
pub fn symmetric_eigen<T: Real>(matrix: &[T], n: usize) -> (Vec<T>, Vec<Vec<T>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let norm = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let target = norm * T::epsilon();
    for _sweep in 0..100 {
        let off = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<T>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].partial_cmp(&a[x * n + x]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order.iter().map(|&k| (0..n).map(|i| v[i * n + k]).collect()).collect();
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D<T> {
    pub ids: Vec<String>,
    pub points: Vec<[T; 2]>,
    /// The two leading eigenvalues of the centered Gram matrix.
    pub eigenvalues: [T; 2],
}

impl<T: Real> Embedding2D<T> {
    pub fn distance(&self, i: usize, j: usize) -> T {
        let (a, b) = (self.points[i], self.points[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// `id,x,y`, optionally with a label column.
    pub fn to_csv(&self, labels: Option<&[Label]>) -> String {
        let mut s = String::from(if labels.is_some() { "id,label,x,y\n" } else { "id,x,y\n" });
        for (i, (id, p)) in self.ids.iter().zip(&self.points).enumerate() {
            s.push_str(id);
            if let Some(l) = labels {
                write!(s, ",{}", l[i]).unwrap();
            }
            writeln!(s, ",{},{}", format_value(p[0].as_f64()), format_value(p[1].as_f64())).unwrap();
        }
        s
    }
}

/// Torgerson MDS into two dimensions. Each axis is oriented so that its
/// largest-magnitude coordinate is positive.
pub fn classical_mds<T: Real>(d: &DissimilarityMatrix<T>) -> Result<Embedding2D<T>, AnalysisError> {
    let n = d.len();
    if n < 3 {
        return Err(AnalysisError::TooFewItems(n));
    }
    let nt = T::from_usize_lossy(n);
    let sq: Vec<T> = d.values().iter().map(|&x| x * x).collect();
    let row_mean: Vec<T> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().copied().sum::<T>() / nt).collect();
    let grand = row_mean.iter().copied().sum::<T>() / nt;
    let mut b = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -(sq[i * n + j] - row_mean[i] - row_mean[j] + grand) / T::lit(2.0);
        }
    }
    // exact symmetry before the eigen solve
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (b[i * n + j] + b[j * n + i]) / T::lit(2.0);
            b[i * n + j] = m;
            b[j * n + i] = m;
        }
    }
    let (values, vectors) = symmetric_eigen(&b, n);
    let mut points = vec![[T::zero(); 2]; n];
    for axis in 0..2 {
        let scale = values[axis].max(T::zero()).sqrt();
        let mut coords: Vec<T> = vectors[axis].iter().map(|&x| x * scale).collect();
        let mut lead = 0;
        for (i, c) in coords.iter().enumerate() {
            if c.abs() > coords[lead].abs() {
                lead = i;
            }
        }
        if coords[lead] < T::zero() {
            coords.iter_mut().for_each(|c| *c = -*c);
        }
        for (p, c) in points.iter_mut().zip(coords) {
            p[axis] = c;
        }
    }
    Ok(Embedding2D {
        ids: d.ids().to_vec(),
        points,
        eigenvalues: [values[0], values[1]],
    })
}
