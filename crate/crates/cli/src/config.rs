//! Flat `key = value` configuration mirroring every tunable default.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mitoclass::analysis::DEFAULT_EPSILON;
use mitoclass::forest::TrainConfig;
use mitoclass::patching::SamplerConfig;
use mitoclass::pipeline::HistPipelineConfig;
use mitoclass::synth::SynthSpec;
use mitoclass::LogBase;

#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub hist: HistPipelineConfig<f64>,
    pub sampler: SamplerConfig,
    pub forest: TrainConfig,
    pub synth: SynthSpec,
    pub kl_epsilon: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 1,
            hist: HistPipelineConfig::default(),
            sampler: SamplerConfig::default(),
            forest: TrainConfig::default(),
            synth: SynthSpec::default(),
            kl_epsilon: DEFAULT_EPSILON,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("invalid value '{value}' for {key}"))
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut s = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), i + 1))?;
            s.set(k.trim(), v.trim()).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let h = &mut self.hist;
        let p = &mut self.sampler;
        let f = &mut self.forest;
        let y = &mut self.synth;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "log_base" => {
                let b: LogBase = parse(key, v)?;
                h.white_balance.log_base = b;
                p.log_base = b;
            }
            "wb.window" => h.white_balance.window = parse(key, v)?,
            "wb.stride" => h.white_balance.stride = parse(key, v)?,
            "detect.sigma" => h.detection.sigma = parse(key, v)?,
            "detect.min_area" => h.detection.min_area = parse(key, v)?,
            "detect.min_separation" => h.detection.min_separation = parse(key, v)?,
            "detect.min_radius" => h.detection.min_radius = parse(key, v)?,
            "detect.estimate_radius" => h.detection.estimate_radius = parse(key, v)?,
            "detect.fallback_radius" => h.detection.fallback_radius = parse(key, v)?,
            "ring.thickness" => h.rings.thickness = parse(key, v)?,
            "ring.bg_threshold" => h.rings.bg_threshold = parse(key, v)?,
            "patch.candidates" => p.candidates = parse(key, v)?,
            "patch.side" => p.side = parse(key, v)?,
            "patch.fg_threshold" => p.fg_threshold = parse(key, v)?,
            "patch.blur_sigma" => p.blur_sigma = parse(key, v)?,
            "patch.min_fg_fraction" => p.min_fg_fraction = parse(key, v)?,
            "patch.max_overlap_fraction" => p.max_overlap_fraction = parse(key, v)?,
            "patch.min_entropy" => p.min_entropy = parse(key, v)?,
            "forest.n_trees" => f.n_trees = parse(key, v)?,
            "forest.mtry" => f.mtry = if v == "auto" { None } else { Some(parse(key, v)?) },
            "forest.min_node_size" => f.min_node_size = parse(key, v)?,
            "forest.bootstrap" => f.bootstrap = parse(key, v)?,
            "kl.epsilon" => self.kl_epsilon = parse(key, v)?,
            "synth.patients_per_class" => y.patients_per_class = parse(key, v)?,
            "synth.spots_per_patient" => y.spots_per_patient = parse(key, v)?,
            "synth.size" => y.size = parse(key, v)?,
            "synth.nuclei_min" => y.nuclei.0 = parse(key, v)?,
            "synth.nuclei_max" => y.nuclei.1 = parse(key, v)?,
            "synth.nucleus_radius" => y.nucleus_radius = parse(key, v)?,
            "synth.cytoplasm_width" => y.cytoplasm_width = parse(key, v)?,
            "synth.min_spacing" => y.min_spacing = parse(key, v)?,
            "synth.tissue_radius" => y.tissue_radius = parse(key, v)?,
            "synth.background" => y.background = parse(key, v)?,
            "synth.noise" => y.noise = parse(key, v)?,
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    /// Propagates the master seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sampler.seed = seed;
        self.forest.seed = seed;
        self.synth.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_apply() {
        let mut s = Settings::default();
        s.set("forest.n_trees", "7").unwrap();
        s.set("log_base", "2").unwrap();
        s.set("forest.mtry", "auto").unwrap();
        assert_eq!(s.forest.n_trees, 7);
        assert_eq!(s.sampler.log_base, LogBase::Two);
        assert!(s.set("nope", "1").is_err());
        assert!(s.set("patch.side", "x").is_err());
    }

    #[test]
    fn file_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(&p, "# defaults\nseed = 9\n\nsynth.size=400\n").unwrap();
        let s = Settings::load(&p).unwrap();
        assert_eq!((s.seed, s.synth.size), (9, 400));
        std::fs::write(&p, "seed 9\n").unwrap();
        assert!(Settings::load(&p).is_err());
    }
}
