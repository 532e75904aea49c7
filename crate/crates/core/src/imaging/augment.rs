use super::{ImagingError, RasterImage};

pub const VARIANT_COUNT: usize = 8;

/// Element of the dihedral group of the square: an optional horizontal
/// flip followed by a clockwise rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Orig,
    Rot90,
    Rot180,
    Rot270,
    Flip,
    FlipRot90,
    FlipRot180,
    FlipRot270,
}

impl Variant {
    pub const ALL: [Variant; VARIANT_COUNT] = [
        Variant::Orig,
        Variant::Rot90,
        Variant::Rot180,
        Variant::Rot270,
        Variant::Flip,
        Variant::FlipRot90,
        Variant::FlipRot180,
        Variant::FlipRot270,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Orig => "orig",
            Variant::Rot90 => "rot90",
            Variant::Rot180 => "rot180",
            Variant::Rot270 => "rot270",
            Variant::Flip => "flip",
            Variant::FlipRot90 => "flip_rot90",
            Variant::FlipRot180 => "flip_rot180",
            Variant::FlipRot270 => "flip_rot270",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    fn flipped(self) -> bool {
        matches!(
            self,
            Variant::Flip | Variant::FlipRot90 | Variant::FlipRot180 | Variant::FlipRot270
        )
    }

    fn quarter_turns(self) -> usize {
        match self {
            Variant::Orig | Variant::Flip => 0,
            Variant::Rot90 | Variant::FlipRot90 => 1,
            Variant::Rot180 | Variant::FlipRot180 => 2,
            Variant::Rot270 | Variant::FlipRot270 => 3,
        }
    }

    pub fn apply(self, img: &RasterImage) -> RasterImage {
        let mut out = if self.flipped() {
            flip_horizontal(img)
        } else {
            img.clone()
        };
        for _ in 0..self.quarter_turns() {
            out = rotate90(&out);
        }
        out
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Clockwise quarter turn.
pub fn rotate90(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    RasterImage::from_fn(h, w, |x, y| img.pixel(y, h - 1 - x))
}

/// Mirror left-right.
pub fn flip_horizontal(img: &RasterImage) -> RasterImage {
    let w = img.width();
    RasterImage::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y))
}

/// The eight rotation/flip variants of a square image, identity first.
pub fn augment_variants(img: &RasterImage) -> Result<Vec<(Variant, RasterImage)>, ImagingError> {
    if img.width() != img.height() {
        return Err(ImagingError::NonSquare {
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(Variant::ALL.iter().map(|&v| (v, v.apply(img))).collect())
}
