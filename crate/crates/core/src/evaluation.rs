//! Leave-one-patient-out cross-validation, hierarchical vote aggregation,
//! entropy-based confidence and the reported metrics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::forest::{train_forest, ForestError, TrainConfig};
use crate::num::{mix_seed, Real};
use crate::table::{format_value, FeatureTable, Label, Source, TableError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 3 patients, found {0}")]
    TooFewPatients(usize),
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("empty patient {0}")]
    EmptyPatient(String),
    #[error("class {0} has no patients")]
    EmptyClass(Label),
    #[error("degenerate class {class} for ROC: {positives} positives, {negatives} negatives")]
    DegenerateRoc {
        class: Label,
        positives: usize,
        negatives: usize,
    },
    #[error("score/label length mismatch")]
    LengthMismatch,
    #[error("fold {fold} is invalid: {reason}")]
    InvalidFold { fold: usize, reason: String },
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpotEntry {
    pub id: String,
    /// Row indices of this spot's units in the source table.
    pub units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientEntry {
    pub id: String,
    pub label: Label,
    pub spots: Vec<SpotEntry>,
}

impl PatientEntry {
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.spots.iter().flat_map(|s| s.units.iter().copied())
    }

    pub fn row_count(&self) -> usize {
        self.spots.iter().map(|s| s.units.len()).sum()
    }
}

/// Patients → spots → units, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortIndex {
    pub patients: Vec<PatientEntry>,
}

impl CohortIndex {
    pub fn from_table<T: Real>(table: &FeatureTable<T>) -> Self {
        let mut idx = CohortIndex::default();
        let mut patient_pos: HashMap<&str, usize> = HashMap::new();
        for (r, row) in table.rows().iter().enumerate() {
            let p = *patient_pos.entry(&row.patient_id).or_insert_with(|| {
                idx.patients.push(PatientEntry {
                    id: row.patient_id.clone(),
                    label: row.label,
                    spots: Vec::new(),
                });
                idx.patients.len() - 1
            });
            let patient = &mut idx.patients[p];
            match patient.spots.iter_mut().find(|s| s.id == row.spot_id) {
                Some(s) => s.units.push(r),
                None => patient.spots.push(SpotEntry {
                    id: row.spot_id.clone(),
                    units: vec![r],
                }),
            }
        }
        idx
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in &self.patients {
            c[p.label.index()] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub test_patient: usize,
    pub train_patients: Vec<usize>,
}

impl Fold {
    pub fn train_rows(&self, idx: &CohortIndex) -> Vec<usize> {
        self.train_patients
            .iter()
            .flat_map(|&p| idx.patients[p].rows())
            .collect()
    }

    pub fn test_rows(&self, idx: &CohortIndex) -> Vec<usize> {
        idx.patients[self.test_patient].rows().collect()
    }
}

/// One fold per patient, holding out all of that patient's rows.
pub fn lopo_split(idx: &CohortIndex) -> Result<Vec<Fold>, EvalError> {
    if let Some(p) = idx.patients.iter().find(|p| p.row_count() == 0) {
        return Err(EvalError::EmptyPatient(p.id.clone()));
    }
    if idx.patients.len() < 3 {
        return Err(EvalError::TooFewPatients(idx.patients.len()));
    }
    let classes = idx.class_counts().iter().filter(|&&c| c > 0).count();
    if classes < 2 {
        return Err(EvalError::TooFewClasses(classes));
    }
    Ok((0..idx.patients.len())
        .map(|test| Fold {
            test_patient: test,
            train_patients: (0..idx.patients.len()).filter(|&p| p != test).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    /// Every unit is an image (spot or augmented spot variant).
    WholeImage,
    /// Units are patches; an image's class is the majority of its patches.
    Patch,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole" | "whole-image" | "image" => Ok(AggregationMode::WholeImage),
            "patch" | "patches" => Ok(AggregationMode::Patch),
            other => Err(format!("unknown aggregation mode '{other}'")),
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationMode::WholeImage => "whole-image",
            AggregationMode::Patch => "patch",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitPrediction<T> {
    pub spot_id: String,
    pub unit_id: String,
    pub variant: String,
    pub predicted: Label,
    pub proba: [T; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientCall<T> {
    pub label: Label,
    pub confidence: T,
    /// Image-level labels the patient majority was taken over.
    pub image_labels: Vec<Label>,
}

/// Majority label; ties broken by the larger mean vote fraction, then by
/// class order.
fn majority<T: Real>(labels: &[Label], fractions: &[[T; 3]]) -> Label {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let n = T::from_usize_lossy(fractions.len().max(1));
    let mean = |k: usize| fractions.iter().map(|f| f[k]).sum::<T>() / n;
    let mut best: Option<(usize, T)> = None;
    for k in (0..3).filter(|&k| counts[k] == top) {
        let m = mean(k);
        if best.map_or(true, |(_, bm)| m > bm) {
            best = Some((k, m));
        }
    }
    Label::from_index(best.unwrap().0)
}

/// `1 - H(p) / ln 3` for the empirical label distribution `p`.
pub fn confidence<T: Real>(labels: &[Label]) -> T {
    if labels.is_empty() {
        return T::zero();
    }
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = T::from_usize_lossy(labels.len());
    let h: T = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = T::from_usize_lossy(c) / n;
            -p * p.ln()
        })
        .sum();
    (T::one() - h / T::lit(3f64.ln())).max(T::zero()).min(T::one())
}

/// Patient-level call from unit predictions. `None` for an empty slice.
pub fn aggregate_patient<T: Real>(units: &[UnitPrediction<T>], mode: AggregationMode) -> Option<PatientCall<T>> {
    if units.is_empty() {
        return None;
    }
    let (image_labels, image_fractions): (Vec<Label>, Vec<[T; 3]>) = match mode {
        AggregationMode::WholeImage => units.iter().map(|u| (u.predicted, u.proba)).unzip(),
        AggregationMode::Patch => {
            let mut order: Vec<&str> = Vec::new();
            let mut groups: HashMap<&str, Vec<&UnitPrediction<T>>> = HashMap::new();
            for u in units {
                groups
                    .entry(&u.spot_id)
                    .or_insert_with(|| {
                        order.push(&u.spot_id);
                        Vec::new()
                    })
                    .push(u);
            }
            order
                .iter()
                .map(|spot| {
                    let g = &groups[spot];
                    let labels: Vec<Label> = g.iter().map(|u| u.predicted).collect();
                    let fr: Vec<[T; 3]> = g.iter().map(|u| u.proba).collect();
                    let n = T::from_usize_lossy(fr.len());
                    let mean = [0, 1, 2].map(|k| fr.iter().map(|f| f[k]).sum::<T>() / n);
                    (majority(&labels, &fr), mean)
                })
                .unzip()
        }
    };
    Some(PatientCall {
        label: majority(&image_labels, &image_fractions),
        confidence: confidence(&image_labels),
        image_labels,
    })
}

/// Rows: true class; columns: predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn row_sum(&self, class: Label) -> usize {
        self.counts[class.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Misclassified fraction of each true class, `None` for empty rows.
    pub fn class_errors(&self) -> [Option<f64>; 3] {
        [0, 1, 2].map(|k| {
            let n = self.counts[k].iter().sum::<usize>();
            (n > 0).then(|| (n - self.counts[k][k]) as f64 / n as f64)
        })
    }

    /// Mean per-class error rate; every class must be present.
    pub fn balanced_error<T: Real>(&self) -> Result<T, EvalError> {
        let errs = self.class_errors();
        let mut sum = T::zero();
        for (k, e) in errs.iter().enumerate() {
            sum = sum + T::lit(e.ok_or(EvalError::EmptyClass(Label::from_index(k)))?);
        }
        Ok(sum / T::lit(3.0))
    }

    /// Mean per-class error over the classes that occur.
    pub fn balanced_error_present<T: Real>(&self) -> Option<T> {
        let errs: Vec<f64> = self.class_errors().into_iter().flatten().collect();
        (!errs.is_empty()).then(|| T::lit(errs.iter().sum::<f64>() / errs.len() as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint<T> {
    pub threshold: T,
    pub fpr: T,
    pub tpr: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRoc<T> {
    pub class: Label,
    /// From `(0, 0)` to `(1, 1)`, thresholds descending.
    pub points: Vec<RocPoint<T>>,
    pub auc: T,
}

impl<T: Real> ClassRoc<T> {
    pub fn trapezoid_auc(&self) -> T {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / T::lit(2.0))
            .sum()
    }
}

/// One-vs-rest ROC for one class; AUC by the rank statistic with ties
/// counted one half.
pub fn roc_for_class<T: Real>(scores: &[T], positive: &[bool], class: Label) -> Result<ClassRoc<T>, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch);
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::DegenerateRoc {
            class,
            positives: p,
            negatives: n,
        });
    }
    let mut wins = 0.0f64;
    for (i, &si) in scores.iter().enumerate().filter(|(i, _)| positive[*i]) {
        let _ = i;
        for (_, &sj) in scores.iter().enumerate().filter(|(j, _)| !positive[*j]) {
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    let auc = T::lit(wins / (p as f64 * n as f64));

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let (pt, nt) = (T::from_usize_lossy(p), T::from_usize_lossy(n));
    let mut points = vec![RocPoint {
        threshold: T::infinity(),
        fpr: T::zero(),
        tpr: T::zero(),
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: T::from_usize_lossy(fp) / nt,
            tpr: T::from_usize_lossy(tp) / pt,
        });
    }
    Ok(ClassRoc { class, points, auc })
}

/// ROC curves for all three classes; fails on the first degenerate class.
pub fn roc_auc<T: Real>(scores: &[[T; 3]], labels: &[Label]) -> Result<Vec<ClassRoc<T>>, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    Label::ALL
        .iter()
        .map(|&c| {
            let s: Vec<T> = scores.iter().map(|v| v[c.index()]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            roc_for_class(&s, &pos, c)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LopoConfig {
    pub forest: TrainConfig,
    pub mode: AggregationMode,
}

impl Default for LopoConfig {
    fn default() -> Self {
        Self {
            forest: TrainConfig::default(),
            mode: AggregationMode::WholeImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult<T> {
    pub patient_id: String,
    pub label: Label,
    pub train_rows: usize,
    pub units: Vec<UnitPrediction<T>>,
    pub call: PatientCall<T>,
    /// Mean unit-level vote fraction per class.
    pub score: [T; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport<T> {
    pub source: Source,
    pub mode: AggregationMode,
    pub config: TrainConfig,
    pub folds: Vec<FoldResult<T>>,
    pub confusion: ConfusionMatrix,
    /// Balanced patient-level error over the classes present.
    pub balanced_error: T,
    /// Fraction of wrongly classified images (image-level majority labels).
    pub image_error: T,
    pub roc: Vec<Option<ClassRoc<T>>>,
    pub warnings: Vec<String>,
}

fn train_and_predict<T: Real>(
    table: &FeatureTable<T>,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<UnitPrediction<T>>, EvalError> {
    let rows = table.rows();
    let x: Vec<&[T]> = train.iter().map(|&r| rows[r].values.as_slice()).collect();
    let y: Vec<usize> = train.iter().map(|&r| rows[r].label.index()).collect();
    let model = train_forest(&x, &y, Label::COUNT, cfg)?;
    test.iter()
        .map(|&r| {
            let row = &rows[r];
            let p = model.predict_proba(&row.values)?;
            Ok(UnitPrediction {
                spot_id: row.spot_id.clone(),
                unit_id: row.unit_id.clone(),
                variant: row.variant.clone(),
                predicted: Label::from_index(model.predict_class(&row.values)?),
                proba: [p[0], p[1], p[2]],
            })
        })
        .collect()
}

/// Runs every fold (in parallel, each with its own derived seed) and
/// assembles the report in fold order.
pub fn run_lopo<T: Real>(table: &FeatureTable<T>, source: Source, cfg: &LopoConfig) -> Result<CvReport<T>, EvalError> {
    let sub = table.select(source)?;
    let idx = CohortIndex::from_table(&sub);
    let folds = lopo_split(&idx)?;

    let results: Vec<FoldResult<T>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let train = fold.train_rows(&idx);
            let test = fold.test_rows(&idx);
            let held_out = &idx.patients[fold.test_patient];
            if train.iter().any(|&r| sub.rows()[r].patient_id == held_out.id) {
                return Err(EvalError::InvalidFold {
                    fold: f,
                    reason: "test patient row in training set".into(),
                });
            }
            let forest = TrainConfig {
                seed: mix_seed(cfg.forest.seed, f as u64),
                ..cfg.forest
            };
            let units = train_and_predict(&sub, &train, &test, &forest)?;
            let call = aggregate_patient(&units, cfg.mode).expect("patient has rows");
            let n = T::from_usize_lossy(units.len());
            let score = [0, 1, 2].map(|k| units.iter().map(|u| u.proba[k]).sum::<T>() / n);
            Ok(FoldResult {
                patient_id: held_out.id.clone(),
                label: held_out.label,
                train_rows: train.len(),
                units,
                call,
                score,
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let mut confusion = ConfusionMatrix::default();
    let (mut wrong_images, mut images) = (0usize, 0usize);
    for r in &results {
        confusion.add(r.label, r.call.label);
        images += r.call.image_labels.len();
        wrong_images += r.call.image_labels.iter().filter(|&&l| l != r.label).count();
    }
    let mut warnings = Vec::new();
    let scores: Vec<[T; 3]> = results.iter().map(|r| r.score).collect();
    let roc = Label::ALL
        .iter()
        .map(|&c| {
            let s: Vec<T> = scores.iter().map(|v| v[c.index()]).collect();
            let pos: Vec<bool> = results.iter().map(|r| r.label == c).collect();
            match roc_for_class(&s, &pos, c) {
                Ok(roc) => Some(roc),
                Err(e) => {
                    warnings.push(format!("ROC skipped: {e}"));
                    None
                }
            }
        })
        .collect();
    Ok(CvReport {
        source,
        mode: cfg.mode,
        config: cfg.forest,
        balanced_error: confusion.balanced_error_present().unwrap_or_else(T::zero),
        image_error: T::from_usize_lossy(wrong_images) / T::from_usize_lossy(images.max(1)),
        confusion,
        folds: results,
        roc,
        warnings,
    })
}

fn fv<T: Real>(v: T) -> String {
    format_value(v.as_f64())
}

impl<T: Real> CvReport<T> {
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "LOPO cross-validation").unwrap();
        writeln!(s, "source: {}", self.source).unwrap();
        writeln!(s, "aggregation: {}", self.mode).unwrap();
        writeln!(
            s,
            "forest: n_trees={} min_node_size={} bootstrap={} seed={}",
            self.config.n_trees, self.config.min_node_size, self.config.bootstrap, self.config.seed
        )
        .unwrap();
        writeln!(s, "patients: {}", self.folds.len()).unwrap();
        writeln!(s, "balanced error: {}", fv(self.balanced_error)).unwrap();
        writeln!(s, "image error: {}", fv(self.image_error)).unwrap();
        let errs = self.confusion.class_errors();
        for l in Label::ALL {
            let e = errs[l.index()].map_or("NA".to_string(), format_value);
            writeln!(s, "class error {l}: {e}").unwrap();
        }
        writeln!(s, "confusion (rows true, columns predicted: CC CCP ONC)").unwrap();
        for l in Label::ALL {
            let c = self.confusion.counts[l.index()];
            writeln!(s, "  {:<4} {} {} {}", l.name(), c[0], c[1], c[2]).unwrap();
        }
        for (l, roc) in Label::ALL.iter().zip(&self.roc) {
            match roc {
                Some(r) => writeln!(s, "AUC {l}: {}", fv(r.auc)).unwrap(),
                None => writeln!(s, "AUC {l}: NA").unwrap(),
            }
        }
        for w in &self.warnings {
            writeln!(s, "warning: {w}").unwrap();
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true,CC,CCP,ONC\n");
        for l in Label::ALL {
            let c = self.confusion.counts[l.index()];
            writeln!(s, "{},{},{},{}", l, c[0], c[1], c[2]).unwrap();
        }
        s
    }

    pub fn patients_csv(&self) -> String {
        let mut s = String::from("patient_id,label,predicted,confidence,score_CC,score_CCP,score_ONC,images,units\n");
        for f in &self.folds {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                f.patient_id,
                f.label,
                f.call.label,
                fv(f.call.confidence),
                fv(f.score[0]),
                fv(f.score[1]),
                fv(f.score[2]),
                f.call.image_labels.len(),
                f.units.len()
            )
            .unwrap();
        }
        s
    }

    pub fn units_csv(&self) -> String {
        let mut s = String::from("patient_id,spot_id,unit_id,variant,label,predicted,p_CC,p_CCP,p_ONC\n");
        for f in &self.folds {
            for u in &f.units {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    f.patient_id,
                    u.spot_id,
                    u.unit_id,
                    u.variant,
                    f.label,
                    u.predicted,
                    fv(u.proba[0]),
                    fv(u.proba[1]),
                    fv(u.proba[2])
                )
                .unwrap();
            }
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("class,threshold,fpr,tpr\n");
        for r in self.roc.iter().flatten() {
            for p in &r.points {
                let t = if p.threshold.is_infinite() { "inf".to_string() } else { fv(p.threshold) };
                writeln!(s, "{},{},{},{}", r.class, t, fv(p.fpr), fv(p.tpr)).unwrap();
            }
        }
        s
    }

    /// Writes `report.txt`, `confusion.csv`, `patients.csv`, `units.csv`
    /// and `roc.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.summary_text())?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv())?;
        std::fs::write(dir.join("patients.csv"), self.patients_csv())?;
        std::fs::write(dir.join("units.csv"), self.units_csv())?;
        std::fs::write(dir.join("roc.csv"), self.roc_csv())?;
        Ok(())
    }
}

/// Whether a sweep point runs the full LOPO or a single held-out fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepScope {
    Lopo,
    SingleFold(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_trees: usize,
    /// Per-class accuracy; patient recall for LOPO, unit recall for a
    /// single fold. `None` where the class does not occur.
    pub class_accuracy: [Option<f64>; 3],
    /// Mean of the present per-class accuracies.
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Plot-ready CSV; timings are left out so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_trees,acc_CC,acc_CCP,acc_ONC,accuracy\n");
        for r in &self.rows {
            let a = r.class_accuracy.map(|v| v.map_or("NA".to_string(), format_value));
            writeln!(s, "{},{},{},{},{}", r.n_trees, a[0], a[1], a[2], format_value(r.accuracy)).unwrap();
        }
        s
    }
}

fn mean_present(v: &[Option<f64>; 3]) -> f64 {
    let xs: Vec<f64> = v.iter().flatten().copied().collect();
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Repeats the evaluation for each forest size with the same master seed.
pub fn tree_count_sweep<T: Real>(
    table: &FeatureTable<T>,
    source: Source,
    grid: &[usize],
    cfg: &LopoConfig,
    scope: SweepScope,
) -> Result<SweepTable, EvalError> {
    let mut rows = Vec::with_capacity(grid.len());
    for &n_trees in grid {
        let started = Instant::now();
        let point = LopoConfig {
            forest: TrainConfig { n_trees, ..cfg.forest },
            ..*cfg
        };
        let class_accuracy = match scope {
            SweepScope::Lopo => {
                let report = run_lopo(table, source, &point)?;
                report.confusion.class_errors().map(|e| e.map(|e| 1.0 - e))
            }
            SweepScope::SingleFold(k) => {
                let sub = table.select(source)?;
                let idx = CohortIndex::from_table(&sub);
                let folds = lopo_split(&idx)?;
                let fold = folds.get(k).ok_or_else(|| EvalError::InvalidFold {
                    fold: k,
                    reason: format!("only {} folds", folds.len()),
                })?;
                let forest = TrainConfig {
                    seed: mix_seed(cfg.forest.seed, k as u64),
                    ..point.forest
                };
                let test = fold.test_rows(&idx);
                let units = train_and_predict(&sub, &fold.train_rows(&idx), &test, &forest)?;
                let mut hit = [0usize; 3];
                let mut tot = [0usize; 3];
                for (u, &r) in units.iter().zip(&test) {
                    let truth = sub.rows()[r].label.index();
                    tot[truth] += 1;
                    if u.predicted.index() == truth {
                        hit[truth] += 1;
                    }
                }
                [0, 1, 2].map(|k| (tot[k] > 0).then(|| hit[k] as f64 / tot[k] as f64))
            }
        };
        rows.push(SweepRow {
            n_trees,
            accuracy: mean_present(&class_accuracy),
            class_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::FeatureRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(spot: &str, l: Label, p: [f64; 3]) -> UnitPrediction<f64> {
        UnitPrediction {
            spot_id: spot.into(),
            unit_id: format!("{spot}_u"),
            variant: "orig".into(),
            predicted: l,
            proba: p,
        }
    }

    #[test]
    fn confidence_of_two_thirds_majority() {
        let us = [
            unit("a", Label::Cc, [0.8, 0.2, 0.0]),
            unit("b", Label::Cc, [0.7, 0.3, 0.0]),
            unit("c", Label::Ccp, [0.4, 0.6, 0.0]),
        ];
        let call = aggregate_patient(&us, AggregationMode::WholeImage).unwrap();
        assert_eq!(call.label, Label::Cc);
        let h = -(2.0f64 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        assert!((h - 0.6365).abs() < 1e-4);
        assert!((call.confidence - (1.0 - h / 3f64.ln())).abs() < 1e-12);
        assert!((call.confidence - 0.4206).abs() < 1e-4);
    }

    #[test]
    fn unanimous_and_uniform_confidence() {
        let same: Vec<_> = (0..4).map(|_| unit("a", Label::Onc, [0.0, 0.0, 1.0])).collect();
        let call = aggregate_patient(&same, AggregationMode::WholeImage).unwrap();
        assert_eq!((call.label, call.confidence), (Label::Onc, 1.0));
        let spread = [
            unit("a", Label::Cc, [1.0, 0.0, 0.0]),
            unit("b", Label::Ccp, [0.0, 1.0, 0.0]),
            unit("c", Label::Onc, [0.0, 0.0, 1.0]),
        ];
        let call = aggregate_patient(&spread, AggregationMode::WholeImage).unwrap();
        assert!(call.confidence.abs() < 1e-12);
        // full tie on counts and fractions: class order
        assert_eq!(call.label, Label::Cc);
        assert!(aggregate_patient::<f64>(&[], AggregationMode::Patch).is_none());
    }

    #[test]
    fn ties_use_mean_vote_fraction() {
        let us = [unit("a", Label::Cc, [0.5, 0.4, 0.1]), unit("b", Label::Onc, [0.0, 0.1, 0.9])];
        let call = aggregate_patient(&us, AggregationMode::WholeImage).unwrap();
        assert_eq!(call.label, Label::Onc);
    }

    #[test]
    fn patch_mode_is_hierarchical() {
        // spot a: 2 CC patches, 1 ONC; spot b: 3 ONC; spot c: 2 CC
        let us = [
            unit("a", Label::Cc, [0.9, 0.0, 0.1]),
            unit("a", Label::Cc, [0.9, 0.0, 0.1]),
            unit("a", Label::Onc, [0.1, 0.0, 0.9]),
            unit("b", Label::Onc, [0.0, 0.0, 1.0]),
            unit("b", Label::Onc, [0.0, 0.0, 1.0]),
            unit("b", Label::Onc, [0.0, 0.0, 1.0]),
            unit("c", Label::Cc, [1.0, 0.0, 0.0]),
            unit("c", Label::Cc, [1.0, 0.0, 0.0]),
        ];
        let patch = aggregate_patient(&us, AggregationMode::Patch).unwrap();
        assert_eq!(patch.image_labels, vec![Label::Cc, Label::Onc, Label::Cc]);
        assert_eq!(patch.label, Label::Cc);
        // pooled directly, ONC (4) vs CC (4) ties and ONC has the higher mean fraction
        let whole = aggregate_patient(&us, AggregationMode::WholeImage).unwrap();
        assert_eq!(whole.label, Label::Onc);
    }

    #[test]
    fn balanced_error_values() {
        let mut cm = ConfusionMatrix::default();
        for _ in 0..3 {
            cm.add(Label::Cc, Label::Cc);
            cm.add(Label::Onc, Label::Onc);
        }
        cm.add(Label::Ccp, Label::Ccp);
        cm.add(Label::Ccp, Label::Ccp);
        cm.add(Label::Ccp, Label::Cc);
        let be: f64 = cm.balanced_error().unwrap();
        assert!((be - 1.0 / 9.0).abs() < 1e-12);
        assert!((be * 100.0 - 11.11).abs() < 0.05);

        let mut id = ConfusionMatrix::default();
        let mut uniform = ConfusionMatrix::default();
        let mut one_wrong = ConfusionMatrix::default();
        for t in Label::ALL {
            id.add(t, t);
            for p in Label::ALL {
                uniform.add(t, p);
            }
            one_wrong.add(t, if t == Label::Onc { Label::Cc } else { t });
        }
        assert_eq!(id.balanced_error::<f64>().unwrap(), 0.0);
        assert!((uniform.balanced_error::<f64>().unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((one_wrong.balanced_error::<f64>().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let mut missing = ConfusionMatrix::default();
        missing.add(Label::Cc, Label::Cc);
        assert!(matches!(missing.balanced_error::<f64>(), Err(EvalError::EmptyClass(Label::Ccp))));
    }

    #[test]
    fn auc_edge_cases() {
        let pos = [true, true, false, false];
        let r = roc_for_class(&[0.9, 0.8, 0.2, 0.1], &pos, Label::Cc).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_for_class(&[0.5; 4], &pos, Label::Cc).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.trapezoid_auc(), 0.5);
        assert!(matches!(
            roc_for_class(&[0.5; 2], &[true, true], Label::Onc),
            Err(EvalError::DegenerateRoc { class: Label::Onc, .. })
        ));
    }

    #[test]
    fn random_scores_auc_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
        let pos: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.5)).collect();
        let r = roc_for_class(&s, &pos, Label::Ccp).unwrap();
        assert!((r.auc - 0.5).abs() <= 0.1, "auc {}", r.auc);
    }

    #[test]
    fn rank_auc_equals_trapezoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(2..40);
            let s: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            pos[0] = true;
            pos[1] = false;
            let r = roc_for_class(&s, &pos, Label::Cc).unwrap();
            assert!((r.auc - r.trapezoid_auc()).abs() <= 1e-12);
            // ties too
            let s: Vec<f64> = s.iter().map(|v| (v * 4.0).floor()).collect();
            let r = roc_for_class(&s, &pos, Label::Cc).unwrap();
            assert!((r.auc - r.trapezoid_auc()).abs() <= 1e-12);
        }
    }

    fn cohort(patients: usize, spots: usize, sep: f64, seed: u64) -> FeatureTable<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for p in 0..patients {
            let label = Label::from_index(p % 3);
            for s in 0..spots {
                let spot = format!("P{p:02}_S{s}");
                rows.push(FeatureRow {
                    patient_id: format!("P{p:02}"),
                    spot_id: spot.clone(),
                    unit_id: spot,
                    variant: "orig".into(),
                    label,
                    source: Source::Hist,
                    values: (0..6).map(|d| rng.gen::<f64>() + if d % 3 == label.index() { sep } else { 0.0 }).collect(),
                });
            }
        }
        FeatureTable::from_rows(rows).unwrap()
    }

    #[test]
    fn lopo_partitions_patients() {
        let t = cohort(28, 3, 1.0, 1);
        let idx = CohortIndex::from_table(&t);
        let folds = lopo_split(&idx).unwrap();
        assert_eq!(folds.len(), 28);
        let mut tested: Vec<usize> = folds.iter().map(|f| f.test_patient).collect();
        tested.sort_unstable();
        assert_eq!(tested, (0..28).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train_patients.len(), 27);
            let test = f.test_rows(&idx);
            assert!(f.train_rows(&idx).iter().all(|r| !test.contains(r)));
        }
        let small = CohortIndex::from_table(&cohort(3, 1, 1.0, 1));
        let folds = lopo_split(&small).unwrap();
        assert_eq!(folds.len(), 3);
        assert!(folds.iter().all(|f| f.train_patients.len() == 2));
    }

    #[test]
    fn lopo_split_errors() {
        assert!(matches!(lopo_split(&CohortIndex::from_table(&cohort(2, 1, 1.0, 1))), Err(EvalError::TooFewPatients(2))));
        let mut idx = CohortIndex::from_table(&cohort(4, 1, 1.0, 1));
        idx.patients[1].spots.clear();
        assert!(matches!(lopo_split(&idx), Err(EvalError::EmptyPatient(_))));
        let mut same = CohortIndex::from_table(&cohort(4, 1, 1.0, 1));
        same.patients.iter_mut().for_each(|p| p.label = Label::Cc);
        assert!(matches!(lopo_split(&same), Err(EvalError::TooFewClasses(1))));
    }

    #[test]
    fn separable_cohort_runs_clean() {
        let t = cohort(12, 3, 3.0, 4);
        let a = run_lopo(&t, Source::Hist, &LopoConfig::default()).unwrap();
        assert_eq!(a.folds.len(), 12);
        assert!(a.balanced_error <= 0.05);
        for l in Label::ALL {
            assert_eq!(a.confusion.row_sum(l), 4);
        }
        for f in &a.folds {
            assert_eq!(f.train_rows, 33);
            assert!((0.0..=1.0).contains(&f.call.confidence));
        }
        let b = run_lopo(&t, Source::Hist, &LopoConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.units_csv(), b.units_csv());
    }

    #[test]
    fn one_patient_per_class() {
        let t = cohort(3, 2, 3.0, 4);
        let r = run_lopo(&t, Source::Hist, &LopoConfig::default()).unwrap();
        assert_eq!(r.folds.len(), 3);
        assert!(r.summary_text().contains("balanced error"));
    }

    #[test]
    fn sweep_singleton_matches_single_run() {
        let t = cohort(9, 2, 1.0, 6);
        let cfg = LopoConfig {
            forest: TrainConfig { n_trees: 1, ..Default::default() },
            ..Default::default()
        };
        let sweep = tree_count_sweep(&t, Source::Hist, &[1], &cfg, SweepScope::Lopo).unwrap();
        let run = run_lopo(&t, Source::Hist, &cfg).unwrap();
        let acc = run.confusion.class_errors().map(|e| e.map(|e| 1.0 - e));
        assert_eq!(sweep.rows[0].class_accuracy, acc);
        let one = tree_count_sweep(&t, Source::Hist, &[1, 5], &cfg, SweepScope::SingleFold(0)).unwrap();
        assert_eq!(one.rows.len(), 2);
        assert!(one.rows[0].class_accuracy[0].is_some());
        assert!(one.rows[0].class_accuracy[1].is_none());
        assert!(one.to_csv().starts_with("n_trees,acc_CC"));
    }
}
