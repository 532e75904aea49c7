use super::{GrayImage, ImagingError, RasterImage};
use crate::num::Real;

/// Three unit optical-density vectors, one per stain channel:
/// nucleus counter-stain, mitochondria (DAB-like) stain and residual.
#[derive(Debug, Clone, PartialEq)]
pub struct StainBasis<T> {
    vectors: [[T; 3]; 3],
    inverse: [[T; 3]; 3],
}

/// Hematoxylin optical-density direction from the Ruifrok & Johnston tables.
pub const HEMATOXYLIN_OD: [f64; 3] = [0.650, 0.704, 0.286];
/// DAB optical-density direction from the Ruifrok & Johnston tables.
pub const DAB_OD: [f64; 3] = [0.268, 0.570, 0.776];

fn norm<T: Real>(v: &[T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn invert3<T: Real>(m: &[[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let c0 = cross(&m[1], &m[2]);
    let c1 = cross(&m[2], &m[0]);
    let c2 = cross(&m[0], &m[1]);
    let det = m[0][0] * c0[0] + m[0][1] * c0[1] + m[0][2] * c0[2];
    if !det.is_finite() || det.abs() < T::lit(1e-9) {
        return None;
    }
    // inverse = adjugate / det; columns of the inverse are the cofactor rows
    let mut inv = [[T::zero(); 3]; 3];
    for r in 0..3 {
        inv[r][0] = c0[r] / det;
        inv[r][1] = c1[r] / det;
        inv[r][2] = c2[r] / det;
    }
    Some(inv)
}

impl<T: Real> StainBasis<T> {
    /// Normalizes the three vectors and checks the basis is invertible.
    pub fn new(vectors: [[T; 3]; 3]) -> Result<Self, ImagingError> {
        let mut unit = vectors;
        for (i, v) in unit.iter_mut().enumerate() {
            let n = norm(v);
            if !n.is_finite() || n <= T::epsilon() {
                return Err(ImagingError::DegenerateBasis(format!("vector {i} has zero length")));
            }
            v.iter_mut().for_each(|c| *c = *c / n);
        }
        let inverse = invert3(&unit)
            .ok_or_else(|| ImagingError::DegenerateBasis("stain vectors are linearly dependent".into()))?;
        Ok(Self {
            vectors: unit,
            inverse,
        })
    }

    /// Two measured stains plus their normalized cross product as residual.
    pub fn from_two(nucleus: [T; 3], stain: [T; 3]) -> Result<Self, ImagingError> {
        let residual = cross(&nucleus, &stain);
        Self::new([nucleus, stain, residual])
    }

    /// Hematoxylin / DAB / residual.
    pub fn hematoxylin_dab() -> Self {
        Self::from_two(HEMATOXYLIN_OD.map(T::lit), DAB_OD.map(T::lit)).expect("independent vectors")
    }

    pub fn vectors(&self) -> &[[T; 3]; 3] {
        &self.vectors
    }

    /// Frobenius-norm condition number estimate.
    pub fn condition_number(&self) -> T {
        let fro = |m: &[[T; 3]; 3]| m.iter().flatten().map(|&v| v * v).sum::<T>().sqrt();
        fro(&self.vectors) * fro(&self.inverse)
    }

    /// Optical density of a transmitted intensity triple (0..=255 scale).
    pub fn optical_density(rgb: [T; 3]) -> [T; 3] {
        let full = T::lit(255.0);
        rgb.map(|i| -(i.max(T::one()) / full).log10())
    }

    /// Stain amounts for an optical-density triple, negatives clamped to 0.
    pub fn amounts(&self, od: [T; 3]) -> [T; 3] {
        let mut a = [T::zero(); 3];
        for (s, out) in a.iter_mut().enumerate() {
            let v = od[0] * self.inverse[0][s] + od[1] * self.inverse[1][s] + od[2] * self.inverse[2][s];
            *out = v.max(T::zero());
        }
        a
    }

    /// Forward model: transmitted intensity (unquantized) for stain amounts.
    pub fn synthesize(&self, amounts: [T; 3]) -> [T; 3] {
        let mut rgb = [T::zero(); 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let od = amounts[0] * self.vectors[0][c]
                + amounts[1] * self.vectors[1][c]
                + amounts[2] * self.vectors[2][c];
            *out = T::lit(255.0) * T::lit(10.0).powf(-od);
        }
        rgb
    }

    /// Forward model quantized to an 8-bit pixel.
    pub fn synthesize_u8(&self, amounts: [T; 3]) -> [u8; 3] {
        self.synthesize(amounts)
            .map(|v| v.round().max(T::zero()).min(T::lit(255.0)).as_f64() as u8)
    }
}

/// Renders a stain amount as an 8-bit intensity (dark = strong stain).
pub fn render_amount<T: Real>(a: T) -> u8 {
    (T::lit(255.0) * T::lit(10.0).powf(-a))
        .round()
        .max(T::zero())
        .min(T::lit(255.0))
        .as_f64() as u8
}

/// Per-stain 8-bit intensity images.
#[derive(Debug, Clone, PartialEq)]
pub struct StainChannels {
    pub channels: [GrayImage; 3],
}

impl StainChannels {
    pub fn nucleus(&self) -> &GrayImage {
        &self.channels[0]
    }

    pub fn mitochondria(&self) -> &GrayImage {
        &self.channels[1]
    }

    pub fn residual(&self) -> &GrayImage {
        &self.channels[2]
    }
}

pub fn color_deconvolve<T: Real>(img: &RasterImage, basis: &StainBasis<T>) -> StainChannels {
    let od_lut: Vec<T> = (0..256)
        .map(|v| StainBasis::<T>::optical_density([T::from_usize_lossy(v); 3])[0])
        .collect();
    let n = img.width() * img.height();
    let mut out = [vec![0u8; n], vec![0u8; n], vec![0u8; n]];
    for (i, p) in img.data().chunks_exact(3).enumerate() {
        let od = [od_lut[p[0] as usize], od_lut[p[1] as usize], od_lut[p[2] as usize]];
        let a = basis.amounts(od);
        for s in 0..3 {
            out[s][i] = render_amount(a[s]);
        }
    }
    let [c0, c1, c2] = out;
    let mk = |d| GrayImage::new(img.width(), img.height(), d).expect("same dimensions");
    StainChannels {
        channels: [mk(c0), mk(c1), mk(c2)],
    }
}
