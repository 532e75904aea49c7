//! PNG / TIFF reading and writing.

use std::path::Path;

use super::{BitMask, GrayImage, RasterImage};

pub type IoResult<T> = Result<T, image::ImageError>;

/// Reads any supported file as 8-bit RGB (alpha dropped, gray expanded).
pub fn read_rgb(path: impl AsRef<Path>) -> IoResult<RasterImage> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok(RasterImage::new(w as usize, h as usize, img.into_raw()).expect("decoder dimensions"))
}

pub fn read_gray(path: impl AsRef<Path>) -> IoResult<GrayImage> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(GrayImage::new(w as usize, h as usize, img.into_raw()).expect("decoder dimensions"))
}

/// Format is chosen from the file extension (`.png`, `.tif`, `.tiff`).
pub fn write_rgb(img: &RasterImage, path: impl AsRef<Path>) -> IoResult<()> {
    image::save_buffer(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
}

pub fn write_gray(img: &GrayImage, path: impl AsRef<Path>) -> IoResult<()> {
    image::save_buffer(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
    )
}

/// Set bits black, unset bits white.
pub fn write_mask(mask: &BitMask, path: impl AsRef<Path>) -> IoResult<()> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 0 } else { 255 }).collect();
    image::save_buffer(
        path,
        &data,
        mask.width() as u32,
        mask.height() as u32,
        image::ExtendedColorType::L8,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_tiff_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(7, 5, |x, y| [(x * 30) as u8, (y * 40) as u8, 77]);
        for name in ["a.png", "a.tif", "a.tiff"] {
            let p = dir.path().join(name);
            write_rgb(&img, &p).unwrap();
            assert_eq!(read_rgb(&p).unwrap(), img);
        }
        let g = GrayImage::from_fn(4, 3, |x, y| (x * 50 + y) as u8);
        let p = dir.path().join("g.png");
        write_gray(&g, &p).unwrap();
        assert_eq!(read_gray(&p).unwrap(), g);
    }
}
