//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mitoclass::analysis::{classical_mds, intra_inter_means, kl_matrix, kl_sym, DissimilarityMatrix};
use mitoclass::evaluation::ConfusionMatrix;
use mitoclass::features::{assemble_hist_features, RoiIntensitySample, FEATURE_LEN, PYRAMID_BINS};
use mitoclass::forest::{best_split, train_forest, TrainConfig};
use mitoclass::imaging::{
    augment_variants, io, shannon_entropy, to_grayscale, white_balance, NormalizedHistogram, StainBasis,
    WhiteBalanceConfig,
};
use mitoclass::manifest::load_manifest;
use mitoclass::num::mix_seed;
use mitoclass::patching::{foreground_mask, sample_patches, SamplerConfig};
use mitoclass::{Label, LogBase, RasterImage, Table};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mitoclass"))
}

fn run_cli(args: &[&str], out: &Path, extra: &[&str]) -> Result<Output, String> {
    let o = bin()
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()));
    }
    Ok(o)
}

/// Default synthetic cohort (seed 1) pushed through the HIST workflow by
/// the binary. Shared by several criteria.
struct Cohort {
    dir: PathBuf,
    build_seconds: f64,
    crossval_stdout: String,
    crossval_seconds: f64,
}

fn build_cohort(root: &Path) -> Result<Cohort, String> {
    let dir = root.join("cohort");
    let seed = ["--seed", "1"];
    let t0 = Instant::now();
    run_cli(&["synth"], &dir, &seed)?;
    let manifest = dir.join("manifest.csv");
    run_cli(&["features", "hist", "--manifest", manifest.to_str().unwrap()], &dir, &seed)?;
    let build_seconds = t0.elapsed().as_secs_f64();
    let table = dir.join("features_hist.csv");
    let t1 = Instant::now();
    let o = run_cli(
        &["crossval", "--table", table.to_str().unwrap(), "--source", "HIST"],
        &dir,
        &seed,
    )?;
    Ok(Cohort {
        dir,
        build_seconds,
        crossval_stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        crossval_seconds: t1.elapsed().as_secs_f64(),
    })
}

fn feature_layout() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = rng.gen_range(1..5000);
        let values: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
        let f = assemble_hist_features::<f64>(&RoiIntensitySample::new(values, format!("s{k}")).unwrap());
        if f.values().len() != FEATURE_LEN {
            return Err(format!("length {}", f.values().len()));
        }
        let mut at = 0;
        for &bins in &PYRAMID_BINS {
            let s: f64 = f.values()[at..at + bins].iter().sum();
            worst = worst.max((s - 1.0).abs());
            at += bins;
        }
    }
    check(worst <= 1e-9, format!("517 values, worst level-sum deviation {worst:.2e}"))
}

fn balanced_error_oracle() -> Outcome {
    // 3 patients per class, one CCP patient called CC
    let mut m = ConfusionMatrix::default();
    for l in Label::ALL {
        for _ in 0..3 {
            m.add(l, l);
        }
    }
    m.counts[1][1] -= 1;
    m.add(Label::Ccp, Label::Cc);
    let oracle = (0.0 + 1.0 / 3.0 + 0.0) / 3.0 * 100.0;
    let got = m.balanced_error::<f64>().map_err(|e| e.to_string())? * 100.0;
    check(
        (got - 11.11).abs() <= 0.05 && (got - oracle).abs() < 1e-12,
        format!("BE {got:.4}% (oracle {oracle:.4}%)"),
    )
}

fn end_to_end(c: &Cohort) -> Outcome {
    let be: f64 = c
        .crossval_stdout
        .lines()
        .find_map(|l| l.strip_prefix("balanced error: "))
        .ok_or("no balanced error in crossval output")?
        .trim()
        .parse()
        .map_err(|e| format!("{e}"))?;
    let patients = c.crossval_stdout.lines().find_map(|l| l.strip_prefix("patients: ")).unwrap_or("?");
    let total = c.build_seconds + c.crossval_seconds;
    check(
        be <= 0.05 && total <= 600.0 && patients == "24",
        format!("{patients} patients, BE {:.2}%, {total:.1}s", be * 100.0),
    )
}

/// Brute-force re-check of every accepted patch on the balanced cohort.
fn patch_audit(c: &Cohort) -> Outcome {
    let entries = load_manifest(c.dir.join("manifest.csv")).map_err(|e| e.to_string())?;
    let base = SamplerConfig::default();
    let mut counts = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let img = io::read_rgb(c.dir.join(&e.path)).map_err(|e| e.to_string())?;
        let img = white_balance(&img, &WhiteBalanceConfig::default()).map_err(|e| e.to_string())?;
        let cfg = SamplerConfig {
            seed: mix_seed(1, i as u64),
            ..base
        };
        let patches = sample_patches(&img, &cfg).map_err(|e| e.to_string())?;
        let fg = foreground_mask(&img, &cfg).map_err(|e| e.to_string())?;
        let gray = to_grayscale(&img);
        let w = img.width();
        let mut covered = vec![false; w * img.height()];
        for p in &patches {
            let area = (p.side * p.side) as f64;
            let (mut fg_n, mut cov_n, mut hist) = (0usize, 0usize, [0usize; 256]);
            for y in p.y..p.y + p.side {
                for x in p.x..p.x + p.side {
                    fg_n += fg.get(x, y) as usize;
                    cov_n += covered[y * w + x] as usize;
                    hist[gray.get(x, y) as usize] += 1;
                }
            }
            let entropy: f64 = hist
                .iter()
                .filter(|&&n| n > 0)
                .map(|&n| {
                    let q = n as f64 / area;
                    -q * q.ln()
                })
                .sum();
            if (fg_n as f64) < 0.8 * area || cov_n as f64 > 0.5 * area || entropy < 4.6 {
                return Err(format!(
                    "{} patch {}: fg {:.3} overlap {:.3} entropy {entropy:.3}",
                    e.unit_id,
                    p.id,
                    fg_n as f64 / area,
                    cov_n as f64 / area
                ));
            }
            for y in p.y..p.y + p.side {
                covered[y * w + p.x..y * w + p.x + p.side].fill(true);
            }
        }
        counts.push(patches.len());
    }
    let white = sample_patches(&RasterImage::filled(750, 750, [255, 255, 255]), &base).map_err(|e| e.to_string())?;
    let total: usize = counts.iter().sum();
    check(
        white.is_empty() && !counts.is_empty(),
        format!(
            "{} spots, {total} patches all valid (per spot {}..{}), white image {} patches",
            counts.len(),
            counts.iter().min().unwrap(),
            counts.iter().max().unwrap(),
            white.len()
        ),
    )
}

fn imaging_identities() -> Outcome {
    let h = shannon_entropy(&NormalizedHistogram::<f64>::uniform(256), LogBase::Natural).map_err(|e| e.to_string())?;
    let entropy_dev = (h - 256f64.ln()).abs();

    // tinted constant background with a textured blob in the middle
    let bg = [226u8, 214, 238];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = RasterImage::from_fn(400, 400, |x, y| {
        let (dx, dy) = (x as f64 - 200.0, y as f64 - 200.0);
        if dx * dx + dy * dy < 90.0 * 90.0 {
            [rng.gen_range(60..200), rng.gen_range(40..180), rng.gen_range(80..220)]
        } else {
            bg
        }
    });
    let out = white_balance(&img, &WhiteBalanceConfig::default()).map_err(|e| e.to_string())?;
    let wb_dev = out
        .pixels()
        .zip(img.pixels())
        .filter(|(_, p)| *p == bg)
        .flat_map(|(q, _)| q.map(|c| 255 - c as i32))
        .max()
        .unwrap_or(0);

    // continuous forward model, then optical density and unmixing
    let basis = StainBasis::<f64>::hematoxylin_dab();
    let mut round = 0.0f64;
    for _ in 0..10_000 {
        let a: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let back = basis.amounts(StainBasis::<f64>::optical_density(basis.synthesize(a)));
        for c in 0..3 {
            round = round.max((back[c] - a[c]).abs());
        }
    }

    let inputs: Vec<RasterImage> = (0..75)
        .map(|k| RasterImage::from_fn(8, 8, |x, y| [(x * 20 + k) as u8, (y * 30) as u8, k as u8]))
        .collect();
    let mut rows = 0;
    let mut all_eight = true;
    for img in &inputs {
        let v = augment_variants(img).map_err(|e| e.to_string())?;
        let mut names: Vec<_> = v.iter().map(|(variant, _)| variant.name()).collect();
        names.sort_unstable();
        names.dedup();
        all_eight &= v.len() == 8 && names.len() == 8;
        rows += v.len();
    }
    check(
        entropy_dev <= 1e-12 && wb_dev <= 1 && round <= 1.0 / 255.0 && all_eight && rows == 600,
        format!(
            "entropy dev {entropy_dev:.1e}, background max dev {wb_dev}, round trip {round:.1e}, {rows} augmented rows"
        ),
    )
}

/// Exhaustive split search with exact rational Gini impurities.
fn oracle_split(x: &[Vec<f64>], y: &[usize], samples: &[usize], features: &[usize]) -> Option<(usize, f64)> {
    let gini = |idx: &[usize]| -> Ratio<i64> {
        let n = idx.len() as i64;
        if n == 0 {
            return Ratio::from_integer(0);
        }
        let mut c = [0i64; 3];
        for &i in idx {
            c[y[i]] += 1;
        }
        let sq: i64 = c.iter().map(|v| v * v).sum();
        Ratio::new(n * n - sq, n)
    };
    let parent = gini(samples);
    let mut best: Option<(Ratio<i64>, usize, f64)> = None;
    for &f in features {
        let mut vals: Vec<f64> = samples.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i][f] <= t);
            let imp = gini(&l) + gini(&r);
            if imp < parent && best.as_ref().map_or(true, |(b, _, _)| imp < *b) {
                best = Some((imp, f, t));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

fn two_clouds(n: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| {
        // Box-Muller
        let (u, v): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    };
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = y
        .iter()
        .map(|&c| (0..d).map(|_| normal(&mut rng) + sep * c as f64).collect())
        .collect();
    (x, y)
}

fn forest_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases = 5000;
    for case in 0..cases {
        let n = rng.gen_range(2..=12);
        let d = rng.gen_range(1..=3);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let samples: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let features: Vec<usize> = (0..d).collect();
        let got = best_split(&x, &y, 3, &samples, &features, 1).map(|s| (s.feature, s.threshold));
        let want = oracle_split(&x, &y, &samples, &features);
        if got != want {
            return Err(format!("split mismatch in case {case}: got {got:?}, oracle {want:?}"));
        }
    }

    let (x, y) = two_clouds(200, 5, 4.0, 7);
    let m = train_forest::<f64, _>(&x, &y, 2, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let oob = m.oob_error(&x, &y).map_err(|e| e.to_string())?;

    let (x3, y3) = two_clouds(120, 6, 1.0, 8);
    let cfg = TrainConfig { n_trees: 40, seed: 9, ..Default::default() };
    let text = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_forest::<f64, _>(&x3, &y3, 2, &cfg).unwrap().to_text())
    };
    let same = text(1) == text(4) && text(4) == text(3);
    check(
        oob.error <= 0.02 && same,
        format!(
            "{cases} split fixtures match, OOB {:.1}% on 4-sigma clouds, models identical across 1/3/4 threads: {same}",
            oob.error * 100.0
        ),
    )
}

fn random_hist(rng: &mut ChaCha8Rng, bins: usize) -> NormalizedHistogram<f64> {
    // sparse so that smoothing matters
    let w: Vec<f64> = (0..bins).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).collect();
    NormalizedHistogram::from_weights(&w).unwrap_or_else(|_| NormalizedHistogram::uniform(bins))
}

fn kl_and_mds(c: &Cohort) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = mitoclass::analysis::DEFAULT_EPSILON;
    let mut asym = 0.0f64;
    let mut min = f64::INFINITY;
    for _ in 0..1000 {
        let bins = rng.gen_range(2..=256);
        let (p, q) = (random_hist(&mut rng, bins), random_hist(&mut rng, bins));
        let (a, b) = (kl_sym(&p, &q, eps).unwrap(), kl_sym(&q, &p, eps).unwrap());
        asym = asym.max((a - b).abs());
        min = min.min(a);
    }

    let p = NormalizedHistogram::from_masses(vec![0.5, 0.5]).unwrap();
    let q = NormalizedHistogram::from_masses(vec![0.9, 0.1]).unwrap();
    let direct = (0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln() + 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln()) / 2.0;
    let two_bin = (kl_sym(&p, &q, 1e-12).unwrap() - direct).abs();

    // planar configuration: MDS distances must match the input ones
    let pts: Vec<[f64; 2]> = (0..10)
        .map(|i| {
            let t = i as f64;
            [3.0 * t.cos() + 0.4 * t, 2.0 * (1.7 * t).sin() - 0.1 * t * t]
        })
        .collect();
    let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    let d = DissimilarityMatrix::from_pairs(ids, |i, j| {
        Ok::<_, mitoclass::analysis::AnalysisError>(((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt())
    })
    .map_err(|e| e.to_string())?;
    let emb = classical_mds(&d).map_err(|e| e.to_string())?;
    let mut mds_dev = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            mds_dev = mds_dev.max((emb.distance(i, j) - d.get(i, j)).abs());
        }
    }

    let table = Table::load(c.dir.join("features_hist.csv")).map_err(|e| e.to_string())?;
    let hists: Vec<NormalizedHistogram<f64>> = table
        .rows()
        .iter()
        .map(|r| NormalizedHistogram::from_masses(r.values[..256].to_vec()).unwrap())
        .collect();
    let labels: Vec<Label> = table.rows().iter().map(|r| r.label).collect();
    let ids = table.rows().iter().map(|r| r.unit_id.clone()).collect();
    let km = kl_matrix(ids, &hists, eps).map_err(|e| e.to_string())?;
    let (intra, inter) = intra_inter_means(&km, &labels).ok_or("label count mismatch")?;

    check(
        asym == 0.0 && min >= 0.0 && two_bin <= 1e-6 && mds_dev <= 1e-9 && intra < inter,
        format!(
            "1000 pairs max asymmetry {asym:.1e} min {min:.1e}; 2-bin dev {two_bin:.1e}; MDS dev {mds_dev:.1e}; cohort KL intra {intra:.4} < inter {inter:.4}"
        ),
    )
}

fn tree_sweep(c: &Cohort) -> Outcome {
    let table = c.dir.join("features_hist.csv");
    let o = run_cli(
        &["sweep-trees", "--table", table.to_str().unwrap(), "--source", "HIST", "--grid", "1,5,10,25,50,100"],
        &c.dir,
        &["--seed", "1"],
    )?;
    let _ = o;
    let csv = std::fs::read_to_string(c.dir.join("sweep.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<(usize, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[f.len() - 1].parse().unwrap())
        })
        .collect();
    let grid: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let acc = |n: usize| rows.iter().find(|r| r.0 == n).map(|r| r.1);
    let (a1, a50) = (acc(1).ok_or("no 1-tree row")?, acc(50).ok_or("no 50-tree row")?);
    let summary: Vec<String> = rows.iter().map(|(n, a)| format!("{n}:{a:.3}")).collect();
    check(
        grid == [1, 5, 10, 25, 50, 100] && a50 >= a1,
        format!("accuracy by trees {}", summary.join(" ")),
    )
}

const SMALL: &str = "synth.patients_per_class = 2
synth.spots_per_patient = 2
synth.size = 300
synth.nuclei_min = 10
synth.nuclei_max = 13
patch.side = 96
patch.candidates = 200
forest.n_trees = 15
";

fn all_commands(out: &Path, config: &Path, threads: &str) -> Result<(), String> {
    let cfg = ["--config", config.to_str().unwrap(), "--threads", threads, "--seed", "5"];
    let o = |p: &str| out.join(p).to_str().unwrap().to_string();
    let m = o("manifest.csv");
    let hist = o("features_hist.csv");
    run_cli(&["synth"], out, &cfg)?;
    run_cli(&["balance", "--manifest", &m, "--augment"], out, &cfg)?;
    run_cli(&["deconv", "--manifest", &m], out, &cfg)?;
    run_cli(&["nuclei", "--manifest", &m, "--overlay"], out, &cfg)?;
    run_cli(&["features", "hist", "--manifest", &m], out, &cfg)?;
    run_cli(&["patches", "--manifest", &m], out, &cfg)?;
    run_cli(&["features", "import", "--table", &hist, "--table", &o("features_baseline.csv")], out, &cfg)?;
    run_cli(&["features", "combine", "--table", &o("features.csv"), "--sources", "HIST,baseline"], out, &cfg)?;
    run_cli(&["train", "--table", &hist, "--source", "HIST"], out, &cfg)?;
    run_cli(&["crossval", "--table", &hist, "--source", "HIST"], out, &cfg)?;
    run_cli(&["crossval", "--table", &hist, "--source", "HIST", "--mode", "patch"], &out.join("pm"), &cfg)?;
    run_cli(&["sweep-trees", "--table", &hist, "--source", "HIST", "--grid", "1,5"], out, &cfg)?;
    run_cli(&["mds", "--table", &hist, "--source", "HIST"], out, &cfg)?;
    run_cli(&["report", "--table", &hist, "--source", "HIST", "--mds"], out, &cfg)?;
    Ok(())
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism(root: &Path) -> Outcome {
    let config = root.join("small.conf");
    std::fs::write(&config, SMALL).map_err(|e| e.to_string())?;
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    let mut snaps = Vec::new();
    for (name, threads) in runs {
        let out = root.join(name);
        all_commands(&out, &config, threads)?;
        snaps.push(snapshot(&out));
    }
    let first = &snaps[0];
    for (s, (name, _)) in snaps.iter().zip(runs).skip(1) {
        if s.keys().ne(first.keys()) {
            return Err(format!("run {name} wrote a different file set"));
        }
        if let Some((p, _)) = s.iter().find(|(p, bytes)| first[*p] != **bytes) {
            return Err(format!("run {name} differs in {}", p.display()));
        }
    }
    check(
        first.len() > 100,
        format!("{} output files byte-identical across 3 runs (1, 1 and 4 threads)", first.len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let cohort = build_cohort(root);
    let with_cohort = |f: fn(&Cohort) -> Outcome| -> Outcome {
        match &cohort {
            Ok(c) => f(c),
            Err(e) => Err(format!("cohort build failed: {e}")),
        }
    };

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("feature-layout", Box::new(feature_layout)),
        ("balanced-error-oracle", Box::new(balanced_error_oracle)),
        ("end-to-end-lopo", Box::new(move || with_cohort(end_to_end))),
        ("patch-audit", Box::new(move || with_cohort(patch_audit))),
        ("imaging-identities", Box::new(imaging_identities)),
        ("forest-correctness", Box::new(forest_correctness)),
        ("kl-mds", Box::new(move || with_cohort(kl_and_mds))),
        ("tree-sweep", Box::new(move || with_cohort(tree_sweep))),
        ("cli-determinism", Box::new(|| determinism(root))),
    ];

    let mut failed = 0;
    for (name, f) in &criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
