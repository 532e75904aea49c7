use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use mitoclass::analysis::{class_mean_histograms, classical_mds, euclidean_matrix, intra_inter_means, kl_matrix, DissimilarityMatrix};
use mitoclass::evaluation::{run_lopo, tree_count_sweep, AggregationMode, LopoConfig, SweepScope};
use mitoclass::features::{mean_intensity_baseline, FEATURE_LEN};
use mitoclass::forest::train_forest;
use mitoclass::imaging::{augment_variants, color_deconvolve, io, to_grayscale, white_balance, NormalizedHistogram, RasterImage};
use mitoclass::manifest::{load_manifest, save_manifest, ManifestEntry};
use mitoclass::num::mix_seed;
use mitoclass::patching::{crop_patch, foreground_mask, sample_patches};
use mitoclass::pipeline::analyze_spot;
use mitoclass::segmentation::{build_cytoplasm_rings, detect_nuclei, roi_overlay};
use mitoclass::synth::{generate_cohort, write_cohort};
use mitoclass::table::{format_value, FeatureRow, FeatureTable, Label, Source};

use crate::config::Settings;
use crate::{Cli, Command, FeaturesCommand, TableSource};

pub fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.global.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(seed) = cli.global.seed {
        settings.seed = seed;
    }
    let settings = settings.clone().with_seed(settings.seed);
    let out = cli.global.out_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    pool.install(|| dispatch(cli.command, &settings, &out))
}

fn dispatch(cmd: Command, s: &Settings, out: &Path) -> Result<()> {
    match cmd {
        Command::Synth => synth(s, out),
        Command::Balance { manifest, augment } => balance(s, out, &manifest, augment),
        Command::Deconv { manifest, skip_balance } => deconv(s, out, &manifest, skip_balance),
        Command::Nuclei {
            manifest,
            overlay,
            skip_balance,
        } => nuclei(s, out, &manifest, overlay, skip_balance),
        Command::Features(FeaturesCommand::Hist { manifest, skip_balance }) => features_hist(s, out, &manifest, skip_balance),
        Command::Features(FeaturesCommand::Import { tables }) => features_import(out, &tables),
        Command::Features(FeaturesCommand::Combine { tables, sources }) => features_combine(out, &tables, &sources),
        Command::Patches { manifest, skip_balance } => patches(s, out, &manifest, skip_balance),
        Command::Train(input) => train(s, out, &input),
        Command::Crossval { input, mode } => crossval(s, out, &input, &mode),
        Command::SweepTrees { input, grid, fold, mode } => sweep(s, out, &input, &grid, fold, &mode),
        Command::Mds(input) => mds(s, out, &input),
        Command::Report { input, mds } => report(s, out, &input, mds),
    }
}

struct Inputs {
    base: PathBuf,
    entries: Vec<ManifestEntry>,
}

fn read_inputs(manifest: &Path) -> Result<Inputs> {
    let entries = load_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    if entries.is_empty() {
        bail!("manifest {} lists no images", manifest.display());
    }
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Inputs { base, entries })
}

impl Inputs {
    fn image(&self, e: &ManifestEntry) -> Result<RasterImage> {
        let p = self.base.join(&e.path);
        io::read_rgb(&p).with_context(|| format!("reading {}", p.display()))
    }

    fn balanced(&self, e: &ManifestEntry, s: &Settings, skip: bool) -> Result<RasterImage> {
        let img = self.image(e)?;
        if skip {
            return Ok(img);
        }
        white_balance(&img, &s.hist.white_balance).with_context(|| format!("white balance of {}", e.unit_id))
    }
}

fn write_png(img: &RasterImage, path: &Path) -> Result<()> {
    io::write_rgb(img, path).with_context(|| format!("writing {}", path.display()))
}

fn parse_source(s: &str) -> Result<Source> {
    s.parse().map_err(|_| anyhow!("unknown source '{s}'"))
}

fn load_table(path: &Path) -> Result<FeatureTable<f64>> {
    FeatureTable::load(path).with_context(|| format!("loading table {}", path.display()))
}

fn load_selected(input: &TableSource) -> Result<(FeatureTable<f64>, Source)> {
    let source = parse_source(&input.source)?;
    let table = load_table(&input.table)?;
    let sub = table.select(source).with_context(|| format!("selecting {source} from {}", input.table.display()))?;
    Ok((sub, source))
}

fn synth(s: &Settings, out: &Path) -> Result<()> {
    let cohort = generate_cohort(&s.synth)?;
    let entries = write_cohort(&cohort, out)?;
    println!("wrote {} spots for {} patients to {}", entries.len(), s.synth.patient_count(), out.display());
    Ok(())
}

fn balance(s: &Settings, out: &Path, manifest: &Path, augment: bool) -> Result<()> {
    let inputs = read_inputs(manifest)?;
    let dir = out.join("balanced");
    std::fs::create_dir_all(&dir)?;
    let groups: Vec<Vec<ManifestEntry>> = inputs
        .entries
        .par_iter()
        .map(|e| {
            let img = inputs.balanced(e, s, false)?;
            let variants = if augment {
                augment_variants(&img).with_context(|| format!("augmenting {}", e.unit_id))?
            } else {
                vec![(mitoclass::imaging::Variant::Orig, img)]
            };
            variants
                .into_iter()
                .map(|(v, im)| {
                    let unit_id = if augment { format!("{}_{}", e.unit_id, v.name()) } else { e.unit_id.clone() };
                    let rel = format!("balanced/{unit_id}.png");
                    write_png(&im, &out.join(&rel))?;
                    Ok(ManifestEntry {
                        unit_id,
                        variant: v.name().to_string(),
                        path: rel,
                        region: None,
                        ..e.clone()
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let entries: Vec<ManifestEntry> = groups.into_iter().flatten().collect();
    save_manifest(out.join("balanced_manifest.csv"), &entries)?;
    println!("wrote {} balanced images from {} inputs", entries.len(), inputs.entries.len());
    Ok(())
}

fn deconv(s: &Settings, out: &Path, manifest: &Path, skip: bool) -> Result<()> {
    let inputs = read_inputs(manifest)?;
    let dir = out.join("deconv");
    std::fs::create_dir_all(&dir)?;
    inputs.entries.par_iter().try_for_each(|e| -> Result<()> {
        let ch = color_deconvolve(&inputs.balanced(e, s, skip)?, &s.hist.basis);
        for (name, img) in [("nucleus", ch.nucleus()), ("mitochondria", ch.mitochondria()), ("residual", ch.residual())] {
            let p = dir.join(format!("{}_{name}.png", e.unit_id));
            io::write_gray(img, &p).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    })?;
    println!("deconvolved {} images", inputs.entries.len());
    Ok(())
}

fn nuclei(s: &Settings, out: &Path, manifest: &Path, overlay: bool, skip: bool) -> Result<()> {
    let inputs = read_inputs(manifest)?;
    if overlay {
        std::fs::create_dir_all(out.join("overlay"))?;
    }
    let found: Vec<String> = inputs
        .entries
        .par_iter()
        .map(|e| -> Result<String> {
            let img = inputs.balanced(e, s, skip)?;
            let ch = color_deconvolve(&img, &s.hist.basis);
            let set = detect_nuclei(ch.nucleus(), &s.hist.detection)?;
            if overlay && !set.is_empty() {
                let roi = build_cytoplasm_rings(&set, &to_grayscale(&img), &s.hist.rings)?;
                write_png(&roi_overlay(&img, &roi, &set)?, &out.join("overlay").join(format!("{}.png", e.unit_id)))?;
            }
            let mut lines = String::new();
            for n in set.iter() {
                writeln!(lines, "{},{},{},{}", e.unit_id, n.x, n.y, format_value(n.radius)).unwrap();
            }
            Ok(lines)
        })
        .collect::<Result<_>>()?;
    let total: usize = found.iter().map(|l| l.lines().count()).sum();
    std::fs::write(out.join("nuclei.csv"), format!("unit_id,x,y,radius\n{}", found.concat()))?;
    println!("detected {total} nuclei in {} images", inputs.entries.len());
    Ok(())
}

fn row_for(e: &ManifestEntry, source: Source, values: Vec<f64>) -> FeatureRow<f64> {
    FeatureRow {
        patient_id: e.patient_id.clone(),
        spot_id: e.spot_id.clone(),
        unit_id: e.unit_id.clone(),
        variant: e.variant.clone(),
        label: e.label,
        source,
        values,
    }
}

fn features_hist(s: &Settings, out: &Path, manifest: &Path, skip: bool) -> Result<()> {
    let inputs = read_inputs(manifest)?;
    let mut cfg = s.hist.clone();
    cfg.balance = !skip;
    let rows: Vec<(FeatureRow<f64>, FeatureRow<f64>)> = inputs
        .entries
        .par_iter()
        .map(|e| {
            let img = inputs.image(e)?;
            let a = analyze_spot::<f64>(&img, &e.unit_id, &cfg)?;
            let fg = foreground_mask(&a.balanced, &s.sampler)?;
            let base: f64 = mean_intensity_baseline(&to_grayscale(&a.balanced), &fg).with_context(|| format!("baseline of {}", e.unit_id))?;
            Ok((row_for(e, Source::Hist, a.features.into_values()), row_for(e, Source::Baseline, vec![base])))
        })
        .collect::<Result<_>>()?;
    let (hist, base): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let hist = FeatureTable::from_rows(hist)?;
    let base = FeatureTable::from_rows(base)?;
    let header = format!("HIST: {FEATURE_LEN} values per unit");
    hist.write_with_comments(std::fs::File::create(out.join("features_hist.csv"))?, &[&header])?;
    base.write_with_comments(std::fs::File::create(out.join("features_baseline.csv"))?, &["baseline: mean foreground gray intensity"])?;
    println!("wrote {} HIST rows and {} baseline rows", hist.len(), base.len());
    Ok(())
}

fn merged(tables: &[PathBuf]) -> Result<FeatureTable<f64>> {
    let mut acc = load_table(&tables[0])?;
    for p in &tables[1..] {
        acc = acc.merge(&load_table(p)?).with_context(|| format!("merging {}", p.display()))?;
    }
    Ok(acc)
}

fn features_import(out: &Path, tables: &[PathBuf]) -> Result<()> {
    let t = merged(tables)?;
    t.save(out.join("features.csv"))?;
    for src in t.sources() {
        let n = t.rows().iter().filter(|r| r.source == src).count();
        println!("{src}: {n} rows, dimension {}", t.dimension(src).unwrap_or(0));
    }
    Ok(())
}

fn features_combine(out: &Path, tables: &[PathBuf], sources: &[String]) -> Result<()> {
    let sources: Vec<Source> = sources.iter().map(|s| parse_source(s)).collect::<Result<_>>()?;
    let combined = merged(tables)?.concatenate_sources(&sources)?;
    let names: Vec<&str> = sources.iter().map(|s| s.name()).collect();
    let header = format!("combined: {}", names.join("+"));
    combined.write_with_comments(std::fs::File::create(out.join("features_combined.csv"))?, &[&header])?;
    println!(
        "wrote {} combined rows of dimension {}",
        combined.len(),
        combined.dimension(Source::Combined).unwrap_or(0)
    );
    Ok(())
}

fn patches(s: &Settings, out: &Path, manifest: &Path, skip: bool) -> Result<()> {
    let inputs = read_inputs(manifest)?;
    std::fs::create_dir_all(out.join("patches"))?;
    let groups: Vec<Vec<ManifestEntry>> = inputs
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let img = inputs.balanced(e, s, skip)?;
            let cfg = mitoclass::patching::SamplerConfig {
                seed: mix_seed(s.sampler.seed, i as u64),
                ..s.sampler
            };
            let found = sample_patches(&img, &cfg).with_context(|| format!("sampling {}", e.unit_id))?;
            found
                .iter()
                .map(|p| {
                    let unit_id = p.unit_id(&e.unit_id);
                    let rel = format!("patches/{unit_id}.png");
                    write_png(&crop_patch(&img, p), &out.join(&rel))?;
                    Ok(ManifestEntry {
                        unit_id,
                        path: rel,
                        region: Some((p.x, p.y, p.side)),
                        ..e.clone()
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let entries: Vec<ManifestEntry> = groups.into_iter().flatten().collect();
    save_manifest(out.join("patch_manifest.csv"), &entries)?;
    println!(
        "accepted {} patches from {} images (min {}, max {})",
        entries.len(),
        counts.len(),
        counts.iter().min().unwrap_or(&0),
        counts.iter().max().unwrap_or(&0)
    );
    Ok(())
}

fn train(s: &Settings, out: &Path, input: &TableSource) -> Result<()> {
    let (t, source) = load_selected(input)?;
    let x: Vec<&[f64]> = t.rows().iter().map(|r| r.values.as_slice()).collect();
    let y: Vec<usize> = t.rows().iter().map(|r| r.label.index()).collect();
    let model = train_forest(&x, &y, Label::COUNT, &s.forest)?;
    std::fs::write(out.join("model.txt"), model.to_text())?;
    let oob = if s.forest.bootstrap {
        let o = model.oob_error(&x, &y)?;
        format!("source={source}\nunits={}\noob_error={}\noob_evaluated={}\n", t.len(), format_value(o.error), o.evaluated)
    } else {
        format!("source={source}\nunits={}\noob_error=NA\n", t.len())
    };
    std::fs::write(out.join("oob.txt"), &oob)?;
    print!("{oob}");
    Ok(())
}

fn lopo_config(s: &Settings, mode: &str) -> Result<LopoConfig> {
    let mode: AggregationMode = mode.parse().map_err(|e: String| anyhow!(e))?;
    Ok(LopoConfig { forest: s.forest, mode })
}

fn crossval(s: &Settings, out: &Path, input: &TableSource, mode: &str) -> Result<()> {
    let (t, source) = load_selected(input)?;
    let report = run_lopo(&t, source, &lopo_config(s, mode)?)?;
    report.write_to_dir(&out.join("crossval"))?;
    print!("{}", report.summary_text());
    Ok(())
}

fn sweep(s: &Settings, out: &Path, input: &TableSource, grid: &[usize], fold: Option<usize>, mode: &str) -> Result<()> {
    let (t, source) = load_selected(input)?;
    let scope = fold.map_or(SweepScope::Lopo, SweepScope::SingleFold);
    let table = tree_count_sweep(&t, source, grid, &lopo_config(s, mode)?, scope)?;
    std::fs::write(out.join("sweep.csv"), table.to_csv())?;
    for r in &table.rows {
        println!("trees {:>4}  accuracy {:.4}  {:.3}s", r.n_trees, r.accuracy, r.seconds);
    }
    Ok(())
}

/// Unit dissimilarities (plus class means for HIST) for the selected source.
fn dissimilarities(s: &Settings, t: &FeatureTable<f64>, source: Source) -> Result<(DissimilarityMatrix<f64>, Vec<Label>)> {
    let mut ids: Vec<String> = t.rows().iter().map(|r| r.unit_id.clone()).collect();
    let mut labels: Vec<Label> = t.rows().iter().map(|r| r.label).collect();
    if source == Source::Hist {
        let hists = unit_histograms(t)?;
        let pairs: Vec<(Label, &NormalizedHistogram<f64>)> = labels.iter().copied().zip(hists.iter()).collect();
        let means = class_mean_histograms(&pairs)?;
        let mut all = hists.clone();
        for (l, m) in Label::ALL.iter().zip(means) {
            ids.push(format!("mean_{l}"));
            labels.push(*l);
            all.push(m);
        }
        Ok((kl_matrix(ids, &all, s.kl_epsilon)?, labels))
    } else {
        let vecs: Vec<&[f64]> = t.rows().iter().map(|r| r.values.as_slice()).collect();
        Ok((euclidean_matrix(ids, &vecs)?, labels))
    }
}

/// The 256-bin level of each HIST row.
fn unit_histograms(t: &FeatureTable<f64>) -> Result<Vec<NormalizedHistogram<f64>>> {
    t.rows()
        .iter()
        .map(|r| {
            if r.values.len() < 256 {
                bail!("row {} has no 256-bin histogram", r.unit_id);
            }
            NormalizedHistogram::from_weights(&r.values[..256]).map_err(|e| anyhow!("row {}: {e}", r.unit_id))
        })
        .collect()
}

fn write_mds(dir: &Path, d: &DissimilarityMatrix<f64>, labels: &[Label]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let e = classical_mds(d)?;
    std::fs::write(dir.join("dissimilarity.csv"), d.to_csv())?;
    std::fs::write(dir.join("coordinates.csv"), e.to_csv(Some(labels)))?;
    println!(
        "embedded {} items; leading eigenvalues {} {}",
        d.len(),
        format_value(e.eigenvalues[0]),
        format_value(e.eigenvalues[1])
    );
    Ok(())
}

fn mds(s: &Settings, out: &Path, input: &TableSource) -> Result<()> {
    let (t, source) = load_selected(input)?;
    let (d, labels) = dissimilarities(s, &t, source)?;
    write_mds(&out.join("mds"), &d, &labels)
}

fn report(s: &Settings, out: &Path, input: &TableSource, with_mds: bool) -> Result<()> {
    let (t, source) = load_selected(input)?;
    if source != Source::Hist {
        bail!("report needs HIST rows, got {source}");
    }
    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    let hists = unit_histograms(&t)?;
    let labels: Vec<Label> = t.rows().iter().map(|r| r.label).collect();
    let pairs: Vec<(Label, &NormalizedHistogram<f64>)> = labels.iter().copied().zip(hists.iter()).collect();
    let means = class_mean_histograms(&pairs)?;
    let mut csv = String::from("bin,CC,CCP,ONC\n");
    for b in 0..256 {
        writeln!(
            csv,
            "{b},{},{},{}",
            format_value(means[0].masses()[b]),
            format_value(means[1].masses()[b]),
            format_value(means[2].masses()[b])
        )
        .unwrap();
    }
    std::fs::write(dir.join("class_means.csv"), csv)?;

    let ids: Vec<String> = t.rows().iter().map(|r| r.unit_id.clone()).collect();
    let d = kl_matrix(ids, &hists, s.kl_epsilon)?;
    let (intra, inter) = intra_inter_means(&d, &labels).ok_or_else(|| anyhow!("need two classes and two units per class"))?;
    let mut summary = String::new();
    writeln!(summary, "units: {}", t.len()).unwrap();
    writeln!(summary, "mean intra-class KL_sym: {}", format_value(intra)).unwrap();
    writeln!(summary, "mean inter-class KL_sym: {}", format_value(inter)).unwrap();
    for (i, a) in Label::ALL.iter().enumerate() {
        for (j, b) in Label::ALL.iter().enumerate().skip(i + 1) {
            let v = mitoclass::analysis::kl_sym(&means[i], &means[j], s.kl_epsilon)?;
            writeln!(summary, "KL_sym(mean {a}, mean {b}): {}", format_value(v)).unwrap();
        }
    }
    std::fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    if with_mds {
        let (d, labels) = dissimilarities(s, &t, source)?;
        write_mds(&dir, &d, &labels)?;
    }
    Ok(())
}
