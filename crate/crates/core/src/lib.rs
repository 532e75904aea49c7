//! Mitochondria-stain based subtype classification of renal tumor
//! tissue-microarray (TMA) spots.
//!
//! The crate covers the full batch pipeline: white balancing, color
//! deconvolution, nucleus detection, cytoplasm-ring ROIs, the 517-value
//! histogram feature vector, constrained random patch sampling, a
//! from-scratch random forest, leave-one-patient-out cross-validation with
//! hierarchical vote aggregation, and the symmetrized-KL / classical MDS
//! histogram analysis. A deterministic synthetic cohort generator drives
//! end-to-end validation, and a shared image manifest format hands spot
//! and patch images to external feature extractors.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the command-line tool uses.

pub mod analysis;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod imaging;
pub mod manifest;
pub mod num;
pub mod patching;
pub mod pipeline;
pub mod segmentation;
pub mod synth;
pub mod table;

pub use num::{LogBase, Real};

pub use table::{Label, Source};
pub use imaging::{BitMask, GrayImage, RasterImage};

pub type Histogram = imaging::NormalizedHistogram<f64>;
pub type Basis = imaging::StainBasis<f64>;
pub type FeatureVector = features::FlatFeatureVector<f64>;
pub type Row = table::FeatureRow<f64>;
pub type Table = table::FeatureTable<f64>;
pub type Forest = forest::RandomForestModel<f64>;
pub type Report = evaluation::CvReport<f64>;
pub type Dissimilarity = analysis::DissimilarityMatrix<f64>;
pub type Embedding = analysis::Embedding2D<f64>;
pub type SpotAnalysis = pipeline::SpotAnalysis<f64>;
