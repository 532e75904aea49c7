//! Feature rows with cohort identifiers, and their delimited text format.
//!
//! File layout (UTF-8, comma separated):
//!
//! ```text
//! # optional comment lines, e.g. extractor provenance
//! patient_id,spot_id,unit_id,variant,label,source,f0,f1,...,f{D-1}
//! P001,P001_S1,P001_S1,orig,CC,HIST,0.0123,...
//! ```
//!
//! `D` is the largest dimension in the file. A file may hold one source or
//! several; rows of a source with fewer than `D` values leave the trailing
//! fields empty, so every record has exactly `6 + D` fields. The dimension
//! of each source is the number of leading non-empty values and must be the
//! same on all of its rows.
//!
//! Spot-level rows (`HIST`, `baseline`) use the spot id as their unit id.
//! Values are written with 9 significant digits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Cc,
    Ccp,
    Onc,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Cc, Label::Ccp, Label::Onc];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Cc => "CC",
            Label::Ccp => "CCP",
            Label::Onc => "ONC",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Hist,
    Fc6,
    Fc7,
    Fc8,
    Baseline,
    Combined,
}

impl Source {
    pub const ALL: [Source; 6] = [
        Source::Hist,
        Source::Fc6,
        Source::Fc7,
        Source::Fc8,
        Source::Baseline,
        Source::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Hist => "HIST",
            Source::Fc6 => "fc6",
            Source::Fc7 => "fc7",
            Source::Fc8 => "fc8",
            Source::Baseline => "baseline",
            Source::Combined => "combined",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("empty table")]
    Empty,
    #[error("line {line}: bad header: {reason}")]
    Header { line: u64, reason: String },
    #[error("line {line}: dimension mismatch for source {src}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: u64,
        src: Source,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown label '{value}'")]
    UnknownLabel { line: u64, value: String },
    #[error("line {line}: unknown source '{value}'")]
    UnknownSource { line: u64, value: String },
    #[error("line {line}: duplicate key ({patient}, {spot}, {unit}, {src})")]
    DuplicateKey {
        line: u64,
        patient: String,
        spot: String,
        unit: String,
        src: Source,
    },
    #[error("line {line}: column {column}: invalid value '{value}'")]
    BadValue { line: u64, column: usize, value: String },
    #[error("line {line}: value after an empty field in column {column}")]
    Gap { line: u64, column: usize },
    #[error("line {line}: invalid identifier '{value}'")]
    BadId { line: u64, value: String },
    #[error("line {line}: patient {patient} has conflicting labels")]
    LabelConflict { line: u64, patient: String },
    #[error("incomplete unit ({patient}, {spot}, {unit}): missing {missing}")]
    IncompleteUnit {
        patient: String,
        spot: String,
        unit: String,
        missing: Source,
    },
    #[error("source {0} is not present in the table")]
    MissingSource(Source),
    #[error("no sources requested")]
    NoSources,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow<T> {
    pub patient_id: String,
    pub spot_id: String,
    pub unit_id: String,
    pub variant: String,
    pub label: Label,
    pub source: Source,
    pub values: Vec<T>,
}

impl<T> FeatureRow<T> {
    pub fn is_spot_level(&self) -> bool {
        self.unit_id == self.spot_id
    }

    fn key(&self) -> (&str, &str, &str, Source) {
        (&self.patient_id, &self.spot_id, &self.unit_id, self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    rows: Vec<FeatureRow<T>>,
    dims: BTreeMap<Source, usize>,
}

const FIXED_COLUMNS: [&str; 6] = ["patient_id", "spot_id", "unit_id", "variant", "label", "source"];

fn valid_id(s: &str) -> bool {
    !s.is_empty() && !s.contains([',', '"', '\n', '\r']) && !s.starts_with('#')
}

/// Shortest decimal text that round-trips the value rounded to 9
/// significant digits.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float");
    format!("{rounded}")
}

impl<T: Real> FeatureTable<T> {
    /// Validates rows the same way the file loader does; the reported line
    /// is the row's position as if written to a file (header on line 1).
    pub fn from_rows(rows: Vec<FeatureRow<T>>) -> Result<Self, TableError> {
        if rows.is_empty() {
            return Err(TableError::Empty);
        }
        let mut dims = BTreeMap::new();
        let mut keys = HashSet::new();
        let mut labels: HashMap<&str, Label> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            let line = i as u64 + 2;
            for id in [&row.patient_id, &row.spot_id, &row.unit_id, &row.variant] {
                if !valid_id(id) {
                    return Err(TableError::BadId {
                        line,
                        value: id.clone(),
                    });
                }
            }
            let expected = *dims.entry(row.source).or_insert(row.values.len());
            if row.values.is_empty() || expected != row.values.len() {
                return Err(TableError::DimensionMismatch {
                    line,
                    src: row.source,
                    expected,
                    found: row.values.len(),
                });
            }
            if !keys.insert(row.key()) {
                return Err(TableError::DuplicateKey {
                    line,
                    patient: row.patient_id.clone(),
                    spot: row.spot_id.clone(),
                    unit: row.unit_id.clone(),
                    src: row.source,
                });
            }
            if *labels.entry(&row.patient_id).or_insert(row.label) != row.label {
                return Err(TableError::LabelConflict {
                    line,
                    patient: row.patient_id.clone(),
                });
            }
        }
        Ok(Self { rows, dims })
    }

    pub fn rows(&self) -> &[FeatureRow<T>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<FeatureRow<T>> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dimension(&self, source: Source) -> Option<usize> {
        self.dims.get(&source).copied()
    }

    pub fn sources(&self) -> Vec<Source> {
        self.dims.keys().copied().collect()
    }

    /// Rows of a single source, in table order.
    pub fn select(&self, source: Source) -> Result<FeatureTable<T>, TableError> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.source == source).cloned().collect();
        if rows.is_empty() {
            return Err(TableError::MissingSource(source));
        }
        FeatureTable::from_rows(rows)
    }

    /// Appends the rows of `other`, re-validating the union.
    pub fn merge(&self, other: &FeatureTable<T>) -> Result<FeatureTable<T>, TableError> {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        FeatureTable::from_rows(rows)
    }

    /// Patient ids in order of first appearance.
    pub fn patients(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.patient_id.as_str()))
            .map(|r| r.patient_id.as_str())
            .collect()
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), TableError> {
        self.write_with_comments(writer, &[])
    }

    /// Writes `# comment` lines before the header.
    pub fn write_with_comments<W: Write>(&self, mut writer: W, comments: &[&str]) -> Result<(), TableError> {
        for c in comments {
            writeln!(writer, "# {c}")?;
        }
        let width = self.dims.values().copied().max().unwrap_or(0);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..width).map(|i| format!("f{i}")));
        writeln!(writer, "{}", header.join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for field in [
                row.patient_id.as_str(),
                &row.spot_id,
                &row.unit_id,
                &row.variant,
                row.label.name(),
                row.source.name(),
            ] {
                line.push_str(field);
                line.push(',');
            }
            let vals: Vec<String> = row.values.iter().map(|v| format_value(v.as_f64())).collect();
            line.push_str(&vals.join(","));
            for _ in row.values.len()..width {
                line.push(',');
            }
            writeln!(writer, "{line}")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut records = rdr.records();

        let Some(header) = records.next() else {
            return Err(TableError::Empty);
        };
        let header = header?;
        let header_line = header.position().map_or(1, |p| p.line());
        let bad_header = |reason: String| TableError::Header {
            line: header_line,
            reason,
        };
        if header.len() < FIXED_COLUMNS.len() + 1 {
            return Err(bad_header(format!("expected at least {} columns", FIXED_COLUMNS.len() + 1)));
        }
        for (i, name) in FIXED_COLUMNS.iter().enumerate() {
            if &header[i] != *name {
                return Err(bad_header(format!("column {} should be '{name}', found '{}'", i + 1, &header[i])));
            }
        }
        let width = header.len() - FIXED_COLUMNS.len();
        for j in 0..width {
            let got = &header[FIXED_COLUMNS.len() + j];
            if got != format!("f{j}") {
                return Err(bad_header(format!("feature column {j} should be 'f{j}', found '{got}'")));
            }
        }

        let mut rows = Vec::new();
        let mut lines = Vec::new();
        let mut dims: HashMap<Source, usize> = HashMap::new();
        for record in records {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let source: Source = record
                .get(5)
                .unwrap_or("")
                .parse()
                .map_err(|value| TableError::UnknownSource { line, value })?;
            if record.len() != FIXED_COLUMNS.len() + width {
                let found = record.len().saturating_sub(FIXED_COLUMNS.len());
                return Err(TableError::DimensionMismatch {
                    line,
                    src: source,
                    expected: dims.get(&source).copied().unwrap_or(width),
                    found,
                });
            }
            let label: Label = record[4]
                .parse()
                .map_err(|value| TableError::UnknownLabel { line, value })?;
            let mut values = Vec::with_capacity(width);
            let mut ended = false;
            for (j, field) in record.iter().skip(FIXED_COLUMNS.len()).enumerate() {
                let column = FIXED_COLUMNS.len() + j + 1;
                if field.is_empty() {
                    ended = true;
                    continue;
                }
                if ended {
                    return Err(TableError::Gap { line, column });
                }
                let v: f64 = field.trim().parse().map_err(|_| TableError::BadValue {
                    line,
                    column,
                    value: field.to_string(),
                })?;
                values.push(T::from_f64(v).ok_or_else(|| TableError::BadValue {
                    line,
                    column,
                    value: field.to_string(),
                })?);
            }
            let expected = *dims.entry(source).or_insert(values.len());
            if values.is_empty() || values.len() != expected {
                return Err(TableError::DimensionMismatch {
                    line,
                    src: source,
                    expected,
                    found: values.len(),
                });
            }
            rows.push(FeatureRow {
                patient_id: record[0].to_string(),
                spot_id: record[1].to_string(),
                unit_id: record[2].to_string(),
                variant: record[3].to_string(),
                label,
                source,
                values,
            });
            lines.push(line);
        }
        if rows.is_empty() {
            return Err(TableError::Empty);
        }
        if dims.values().copied().max() != Some(width) {
            return Err(bad_header(format!(
                "header declares {width} features but the widest source has {}",
                dims.values().copied().max().unwrap_or(0)
            )));
        }
        // remaining checks (ids, duplicates, labels) with real line numbers
        FeatureTable::from_rows(rows).map_err(|e| relabel_line(e, &lines))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    /// Concatenates the requested sources per unit into a `combined` row.
    ///
    /// Units are matched on `(patient_id, spot_id, unit_id)`. A spot-level
    /// row (unit id equal to spot id) stands in for every unit of its spot
    /// that has no row of that source, which pairs each whole-image variant
    /// with the spot's single histogram row.
    pub fn concatenate_sources(&self, sources: &[Source]) -> Result<FeatureTable<T>, TableError> {
        if sources.is_empty() {
            return Err(TableError::NoSources);
        }
        for &s in sources {
            if !self.dims.contains_key(&s) {
                return Err(TableError::MissingSource(s));
            }
        }
        type SpotKey<'a> = (&'a str, &'a str);
        let mut spot_order: Vec<SpotKey> = Vec::new();
        let mut by_spot: HashMap<SpotKey, Vec<&FeatureRow<T>>> = HashMap::new();
        for row in self.rows.iter().filter(|r| sources.contains(&r.source)) {
            let key = (row.patient_id.as_str(), row.spot_id.as_str());
            by_spot
                .entry(key)
                .or_insert_with(|| {
                    spot_order.push(key);
                    Vec::new()
                })
                .push(row);
        }

        let mut out = Vec::new();
        for key in spot_order {
            let rows = &by_spot[&key];
            // unit ids in first-appearance order, spot-level id only if alone
            let mut units: Vec<&str> = Vec::new();
            for r in rows.iter().filter(|r| !r.is_spot_level()) {
                if !units.contains(&r.unit_id.as_str()) {
                    units.push(&r.unit_id);
                }
            }
            if units.is_empty() {
                units.push(key.1);
            }
            for unit in units {
                let mut values = Vec::new();
                let mut variant: Option<&str> = None;
                let mut fallback: Option<&str> = None;
                let mut label = None;
                for &source in sources {
                    let own = rows.iter().find(|r| r.source == source && r.unit_id == unit);
                    let row = own
                        .or_else(|| rows.iter().find(|r| r.source == source && r.is_spot_level()))
                        .ok_or_else(|| TableError::IncompleteUnit {
                            patient: key.0.to_string(),
                            spot: key.1.to_string(),
                            unit: unit.to_string(),
                            missing: source,
                        })?;
                    if row.is_spot_level() {
                        fallback.get_or_insert(row.variant.as_str());
                    } else {
                        variant.get_or_insert(row.variant.as_str());
                    }
                    label = Some(row.label);
                    values.extend_from_slice(&row.values);
                }
                out.push(FeatureRow {
                    patient_id: key.0.to_string(),
                    spot_id: key.1.to_string(),
                    unit_id: unit.to_string(),
                    variant: variant.or(fallback).unwrap_or("orig").to_string(),
                    label: label.expect("at least one source"),
                    source: Source::Combined,
                    values,
                });
            }
        }
        FeatureTable::from_rows(out)
    }
}

fn relabel_line(e: TableError, lines: &[u64]) -> TableError {
    let fix = |l: u64| lines.get(l.saturating_sub(2) as usize).copied().unwrap_or(l);
    match e {
        TableError::DimensionMismatch {
            line,
            src,
            expected,
            found,
        } => TableError::DimensionMismatch {
            line: fix(line),
            src,
            expected,
            found,
        },
        TableError::DuplicateKey {
            line,
            patient,
            spot,
            unit,
            src,
        } => TableError::DuplicateKey {
            line: fix(line),
            patient,
            spot,
            unit,
            src,
        },
        TableError::BadId { line, value } => TableError::BadId { line: fix(line), value },
        TableError::LabelConflict { line, patient } => TableError::LabelConflict {
            line: fix(line),
            patient,
        },
        other => other,
    }
}
