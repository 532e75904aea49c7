use super::{GrayImage, ImagingError};

/// Normalized 1-D Gaussian weights with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian blur with replicate-border handling.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage, ImagingError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(ImagingError::BadSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let src = img.data();

    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        let row = (y * w) as usize;
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sx = (x + k as isize - r).clamp(0, w - 1) as usize;
                acc += wt * src[row + sx] as f64;
            }
            horiz[row + x as usize] = acc;
        }
    }

    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sy = (y + k as isize - r).clamp(0, h - 1);
                acc += wt * horiz[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage::new(img.width(), img.height(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[12]);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = GrayImage::filled(17, 9, 143);
        assert_eq!(gaussian_blur(&img, 2.0).unwrap(), img);
    }

    #[test]
    fn impulse_center_matches_kernel() {
        // independent evaluation of the 2-D weight at the origin
        let sigma: f64 = 2.0;
        let norm: f64 = (-6..=6).map(|i: i32| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).sum();
        let center = 255.0 / (norm * norm);
        let mut img = GrayImage::filled(31, 31, 0);
        img.set(15, 15, 255);
        let out = gaussian_blur(&img, sigma).unwrap();
        assert_eq!(out.get(15, 15), center.round() as u8);
        assert_eq!(out.get(15, 15), 10);
    }

    #[test]
    fn impulse_mass_preserved_within_rounding() {
        let mut img = GrayImage::filled(41, 41, 0);
        img.set(20, 20, 255);
        let out = gaussian_blur(&img, 2.0).unwrap();
        let total: i64 = out.data().iter().map(|&v| v as i64).sum();
        // 169 support pixels, each rounded by at most 0.5
        assert!((total - 255).abs() <= 85, "total {total}");
        let mut big = GrayImage::filled(41, 41, 0);
        for y in 18..23 {
            for x in 18..23 {
                big.set(x, y, 200);
            }
        }
        let out = gaussian_blur(&big, 1.0).unwrap();
        let total: i64 = out.data().iter().map(|&v| v as i64).sum();
        assert!((total - 25 * 200).abs() <= 40, "total {total}");
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(gaussian_blur(&GrayImage::filled(3, 3, 0), 0.0).is_err());
        assert!(gaussian_blur(&GrayImage::filled(3, 3, 0), f64::NAN).is_err());
    }
}
