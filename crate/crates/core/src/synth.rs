//! Deterministic synthetic TMA cohort: near-white background, a tissue disk
//! of textured stroma and cells, each cell a hematoxylin nucleus inside a
//! DAB-stained cytoplasm annulus whose intensities follow a per-class model.
//!
//! The class models are chosen for separability, not histological fidelity:
//! CC is bimodal, CCP unimodal and bright, ONC dominated by dark pixels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{io, RasterImage, StainBasis};
use crate::manifest::{save_manifest, ManifestEntry, ManifestError};
use crate::num::mix_seed;
use crate::segmentation::Nucleus;
use crate::table::Label;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("overcrowded spec: placed {placed} of {requested} nuclei")]
    Overcrowded { placed: usize, requested: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mixture of Gaussians over mitochondria-channel intensity, sampled values
/// rounded and clamped to `1..=254`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityModel {
    /// `(weight, mean, sd)`; weights sum to one.
    pub components: Vec<(f64, f64, f64)>,
}

pub const MIN_INTENSITY: u8 = 1;
pub const MAX_INTENSITY: u8 = 254;

impl IntensityModel {
    pub fn for_class(label: Label) -> Self {
        let components = match label {
            Label::Cc => vec![(0.5, 70.0, 15.0), (0.5, 150.0, 15.0)],
            Label::Ccp => vec![(1.0, 140.0, 18.0)],
            Label::Onc => vec![(0.85, 40.0, 12.0), (0.15, 100.0, 20.0)],
        };
        Self { components }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u8 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.0;
            if u < acc {
                pick = i;
                break;
            }
        }
        let (_, mean, sd) = self.components[pick];
        let v = Normal::new(mean, sd).expect("positive sd").sample(rng);
        v.round().clamp(MIN_INTENSITY as f64, MAX_INTENSITY as f64) as u8
    }

    /// Probability of each sampled intensity, by midpoint integration of the
    /// mixture density; the clamped tails fold into the end bins.
    pub fn pmf(&self) -> [f64; 256] {
        const SUB: usize = 64;
        let density = |x: f64| {
            self.components
                .iter()
                .map(|&(w, m, s)| w * (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
                .sum::<f64>()
        };
        let mut p = [0.0f64; 256];
        let (lo, hi) = (MIN_INTENSITY as usize, MAX_INTENSITY as usize);
        for v in lo + 1..hi {
            let a = v as f64 - 0.5;
            p[v] = (0..SUB).map(|k| density(a + (k as f64 + 0.5) / SUB as f64)).sum::<f64>() / SUB as f64;
        }
        // lower tail: everything below lo + 0.5
        let lower: f64 = self
            .components
            .iter()
            .map(|&(w, m, s)| w * normal_cdf((lo as f64 + 0.5 - m) / s))
            .sum();
        p[lo] = lower;
        let inner: f64 = p.iter().sum();
        p[hi] = (1.0 - inner).max(0.0);
        p
    }
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error below 1.5e-7).
fn normal_cdf(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    if z >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

/// Bhattacharyya coefficient `Σ sqrt(p q)` of two pmfs.
pub fn bhattacharyya(p: &[f64; 256], q: &[f64; 256]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub patients_per_class: usize,
    pub spots_per_patient: usize,
    /// Square spot side in pixels.
    pub size: usize,
    /// Inclusive range of nuclei per spot.
    pub nuclei: (usize, usize),
    pub nucleus_radius: f64,
    /// Cytoplasm extends this far beyond the nucleus.
    pub cytoplasm_width: f64,
    /// Minimum distance between cell centers.
    pub min_spacing: f64,
    /// Tissue disk radius as a fraction of the spot side.
    pub tissue_radius: f64,
    pub background: u8,
    /// Per-channel illumination jitter below `background`.
    pub tint: u8,
    pub models: [IntensityModel; 3],
    /// Hematoxylin counterstain in the cytoplasm.
    pub counterstain: f64,
    /// Hematoxylin amount in nuclei, `(mean, sd)`.
    pub nucleus_stain: (f64, f64),
    /// Uniform range of the hematoxylin amount that textures the stroma.
    pub stroma_stain: (f64, f64),
    /// Standard deviation of additive per-channel sensor noise on tissue.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            patients_per_class: 8,
            spots_per_patient: 3,
            size: 750,
            nuclei: (60, 90),
            nucleus_radius: 8.0,
            cytoplasm_width: 12.0,
            min_spacing: 42.0,
            tissue_radius: 0.45,
            background: 245,
            tint: 6,
            models: Label::ALL.map(IntensityModel::for_class),
            counterstain: 0.02,
            nucleus_stain: (0.9, 0.08),
            stroma_stain: (0.0, 0.15),
            noise: 4.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.patients_per_class == 0 || self.spots_per_patient == 0 {
            return bad("need at least one patient per class and one spot per patient");
        }
        if self.nuclei.0 > self.nuclei.1 || self.nuclei.1 == 0 {
            return bad("nuclei range must be nonempty");
        }
        if !(self.nucleus_radius > 0.0 && self.cytoplasm_width >= 0.0 && self.min_spacing > 0.0) {
            return bad("radii and spacing must be positive");
        }
        if !(self.tissue_radius > 0.0 && self.tissue_radius <= 0.5) {
            return bad("tissue radius must lie in (0, 0.5]");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be nonnegative");
        }
        if self.tint >= self.background {
            return bad("tint must be below the background level");
        }
        for m in &self.models {
            let w: f64 = m.components.iter().map(|c| c.0).sum();
            if m.components.is_empty() || (w - 1.0).abs() > 1e-9 || m.components.iter().any(|c| !(c.2 > 0.0) || c.0 < 0.0) {
                return bad("class model weights must sum to one with positive sd");
            }
        }
        Ok(())
    }

    pub fn cell_radius(&self) -> f64 {
        self.nucleus_radius + self.cytoplasm_width
    }

    pub fn patient_count(&self) -> usize {
        3 * self.patients_per_class
    }

    /// Union bound on the error of the Bayes-optimal classifier that sees
    /// `pixels` independent cytoplasm intensities from one spot, with equal
    /// class priors: `Σ_{i<j} (1/3) ρ_ij^pixels`.
    pub fn bayes_error_bound(&self, pixels: usize) -> f64 {
        let pmf: Vec<[f64; 256]> = self.models.iter().map(IntensityModel::pmf).collect();
        let mut bound = 0.0;
        for i in 0..3 {
            for j in (i + 1)..3 {
                bound += bhattacharyya(&pmf[i], &pmf[j]).powf(pixels as f64) / 3.0;
            }
        }
        bound.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub nuclei: Vec<Nucleus>,
    /// Counts of the sampled cytoplasm intensities.
    pub cytoplasm_counts: [u64; 256],
}

impl GroundTruth {
    pub fn cytoplasm_pixels(&self) -> u64 {
        self.cytoplasm_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpot {
    pub patient_id: String,
    pub spot_id: String,
    pub label: Label,
    pub image: RasterImage,
    pub truth: GroundTruth,
}

fn place_nuclei<R: Rng>(spec: &SynthSpec, count: usize, rng: &mut R) -> Result<Vec<(f64, f64)>, SynthError> {
    let c = spec.size as f64 / 2.0;
    let reach = spec.tissue_radius * spec.size as f64 - spec.cell_radius() - 1.0;
    if reach <= 0.0 {
        return Err(SynthError::Overcrowded { placed: 0, requested: count });
    }
    let sep2 = spec.min_spacing * spec.min_spacing;
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while placed.len() < count && attempts < 500 * count.max(1) {
        attempts += 1;
        let (x, y) = (rng.gen_range(-reach..reach), rng.gen_range(-reach..reach));
        if x * x + y * y > reach * reach {
            continue;
        }
        let (x, y) = ((c + x).round(), (c + y).round());
        if placed.iter().all(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) >= sep2) {
            placed.push((x, y));
        }
    }
    if placed.len() < count {
        return Err(SynthError::Overcrowded {
            placed: placed.len(),
            requested: count,
        });
    }
    Ok(placed)
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Background,
    Stroma,
    Cytoplasm,
    Nucleus,
}

/// One spot; deterministic in `(label, spec, seed)`.
pub fn generate_spot(label: Label, spec: &SynthSpec, seed: u64) -> Result<(RasterImage, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.size;
    let count = rng.gen_range(spec.nuclei.0..=spec.nuclei.1);
    let centers = place_nuclei(spec, count, &mut rng)?;

    let c = n as f64 / 2.0;
    let tissue2 = (spec.tissue_radius * n as f64).powi(2);
    let mut region: Vec<Region> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
            if x * x + y * y <= tissue2 {
                Region::Stroma
            } else {
                Region::Background
            }
        })
        .collect();
    let (rn2, rc2) = (spec.nucleus_radius.powi(2), spec.cell_radius().powi(2));
    let span = spec.cell_radius().ceil() as isize;
    for &(cx, cy) in &centers {
        for dy in -span..=span {
            for dx in -span..=span {
                let d2 = (dx * dx + dy * dy) as f64;
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if d2 > rc2 || x < 0 || y < 0 || x >= n as isize || y >= n as isize {
                    continue;
                }
                region[y as usize * n + x as usize] = if d2 <= rn2 { Region::Nucleus } else { Region::Cytoplasm };
            }
        }
    }

    let basis = StainBasis::<f64>::hematoxylin_dab();
    let light: [f64; 3] = std::array::from_fn(|_| (spec.background - rng.gen_range(0..=spec.tint)) as f64);
    let model = &spec.models[label.index()];
    let nucleus_h = Normal::new(spec.nucleus_stain.0, spec.nucleus_stain.1).expect("positive sd");
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut counts = [0u64; 256];
    let mut data = Vec::with_capacity(n * n * 3);
    for r in &region {
        let amounts = match r {
            Region::Background => [rng.gen_range(0.0..0.004), 0.0, 0.0],
            Region::Stroma => [rng.gen_range(spec.stroma_stain.0..spec.stroma_stain.1), rng.gen_range(0.0..0.03), 0.0],
            Region::Nucleus => [nucleus_h.sample(&mut rng).max(0.3), 0.02, 0.0],
            Region::Cytoplasm => {
                let v = model.sample(&mut rng);
                counts[v as usize] += 1;
                [spec.counterstain, -(v as f64 / 255.0).log10(), 0.0]
            }
        };
        let t = basis.synthesize(amounts);
        for ch in 0..3 {
            let e = if *r == Region::Background || spec.noise == 0.0 { 0.0 } else { noise.sample(&mut rng) };
            data.push((t[ch] * light[ch] / 255.0 + e).round().clamp(0.0, 255.0) as u8);
        }
    }
    let image = RasterImage::new(n, n, data).expect("square spot");
    let nuclei = centers
        .iter()
        .map(|&(x, y)| Nucleus {
            x,
            y,
            radius: spec.nucleus_radius,
        })
        .collect();
    Ok((
        image,
        GroundTruth {
            nuclei,
            cytoplasm_counts: counts,
        },
    ))
}

/// Patients `P001..` in class order, spots `{patient}_S1..`; each spot uses
/// the seed derived from the master seed and its cohort index.
pub fn generate_cohort(spec: &SynthSpec) -> Result<Vec<SynthSpot>, SynthError> {
    spec.validate()?;
    let jobs: Vec<(String, String, Label)> = Label::ALL
        .iter()
        .flat_map(|&l| (0..spec.patients_per_class).map(move |p| (l, p)))
        .enumerate()
        .flat_map(|(pi, (l, _))| {
            let patient = format!("P{:03}", pi + 1);
            (1..=spec.spots_per_patient).map(move |s| (patient.clone(), format!("{patient}_S{s}"), l))
        })
        .collect();
    jobs.into_par_iter()
        .enumerate()
        .map(|(i, (patient_id, spot_id, label))| {
            let (image, truth) = generate_spot(label, spec, mix_seed(spec.seed, i as u64))?;
            Ok(SynthSpot {
                patient_id,
                spot_id,
                label,
                image,
                truth,
            })
        })
        .collect()
}

pub const SPOT_DIR: &str = "spots";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FILE: &str = "nuclei_truth.csv";

/// Writes `spots/{spot_id}.png`, `manifest.csv` and `nuclei_truth.csv`.
pub fn write_cohort(spots: &[SynthSpot], dir: &Path) -> Result<Vec<ManifestEntry>, SynthError> {
    std::fs::create_dir_all(dir.join(SPOT_DIR))?;
    spots
        .par_iter()
        .try_for_each(|s| io::write_rgb(&s.image, dir.join(SPOT_DIR).join(format!("{}.png", s.spot_id))))?;
    let entries: Vec<ManifestEntry> = spots
        .iter()
        .map(|s| ManifestEntry {
            patient_id: s.patient_id.clone(),
            spot_id: s.spot_id.clone(),
            unit_id: s.spot_id.clone(),
            variant: "orig".into(),
            label: s.label,
            path: format!("{SPOT_DIR}/{}.png", s.spot_id),
            region: None,
        })
        .collect();
    save_manifest(dir.join(MANIFEST_FILE), &entries)?;
    let mut truth = String::from("spot_id,x,y,radius\n");
    for s in spots {
        for nu in &s.truth.nuclei {
            truth.push_str(&format!("{},{},{},{}\n", s.spot_id, nu.x, nu.y, nu.radius));
        }
    }
    std::fs::write(dir.join(TRUTH_FILE), truth)?;
    Ok(entries)
}
