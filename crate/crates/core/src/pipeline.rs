//! Spot-level HIST pipeline: white balance, color deconvolution, nucleus
//! detection, cytoplasm rings and the flat feature vector.

use thiserror::Error;

use crate::features::{assemble_hist_features, FeatureError, FlatFeatureVector, RoiIntensitySample};
use crate::imaging::{color_deconvolve, to_grayscale, white_balance, ImagingError, RasterImage, StainBasis, StainChannels, WhiteBalanceConfig};
use crate::num::Real;
use crate::segmentation::{build_cytoplasm_rings, detect_nuclei, DetectionConfig, NucleusSet, RingConfig, RoiMask, SegmentationError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("spot {spot}: {source}")]
    Imaging { spot: String, source: ImagingError },
    #[error("spot {spot}: {source}")]
    Segmentation { spot: String, source: SegmentationError },
    #[error("spot {spot}: {source}")]
    Features { spot: String, source: FeatureError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistPipelineConfig<T> {
    pub white_balance: WhiteBalanceConfig,
    /// Skip white balancing for inputs that are already balanced.
    pub balance: bool,
    pub basis: StainBasis<T>,
    pub detection: DetectionConfig,
    pub rings: RingConfig,
}

impl<T: Real> Default for HistPipelineConfig<T> {
    fn default() -> Self {
        Self {
            white_balance: WhiteBalanceConfig::default(),
            balance: true,
            basis: StainBasis::hematoxylin_dab(),
            detection: DetectionConfig::default(),
            rings: RingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpotAnalysis<T> {
    pub balanced: RasterImage,
    pub channels: StainChannels,
    pub nuclei: NucleusSet,
    pub roi: RoiMask,
    pub sample: RoiIntensitySample,
    pub features: FlatFeatureVector<T>,
}

pub fn analyze_spot<T: Real>(img: &RasterImage, spot_id: &str, cfg: &HistPipelineConfig<T>) -> Result<SpotAnalysis<T>, PipelineError> {
    let spot = || spot_id.to_string();
    let balanced = if cfg.balance {
        white_balance(img, &cfg.white_balance).map_err(|source| PipelineError::Imaging { spot: spot(), source })?
    } else {
        img.clone()
    };
    let channels = color_deconvolve(&balanced, &cfg.basis);
    let nuclei = detect_nuclei(channels.nucleus(), &cfg.detection).map_err(|source| PipelineError::Segmentation { spot: spot(), source })?;
    let roi = build_cytoplasm_rings(&nuclei, &to_grayscale(&balanced), &cfg.rings)
        .map_err(|source| PipelineError::Segmentation { spot: spot(), source })?;
    let sample = RoiIntensitySample::from_roi(channels.mitochondria(), &roi.mask, spot_id)
        .map_err(|source| PipelineError::Features { spot: spot(), source })?;
    let features = assemble_hist_features(&sample);
    Ok(SpotAnalysis {
        balanced,
        channels,
        nuclei,
        roi,
        sample,
        features,
    })
}
