//! Image manifest CSV: one line per spot image or patch, the hand-off
//! between the generator, the patch sampler and external feature extractors.
//!
//! Columns: `patient_id,spot_id,unit_id,variant,label,path,x,y,side`. The
//! last three are empty for whole images.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::table::Label;

pub const HEADER: [&str; 9] = ["patient_id", "spot_id", "unit_id", "variant", "label", "path", "x", "y", "side"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("bad manifest header")]
    Header,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub spot_id: String,
    pub unit_id: String,
    pub variant: String,
    pub label: Label,
    /// Relative to the manifest's directory.
    pub path: String,
    /// Patch origin and side, `None` for whole images.
    pub region: Option<(usize, usize, usize)>,
}

pub fn write_manifest<W: Write>(writer: W, entries: &[ManifestEntry]) -> Result<(), ManifestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for e in entries {
        let (x, y, side) = match e.region {
            Some((x, y, s)) => (x.to_string(), y.to_string(), s.to_string()),
            None => Default::default(),
        };
        w.write_record([
            e.patient_id.as_str(),
            &e.spot_id,
            &e.unit_id,
            &e.variant,
            e.label.name(),
            &e.path,
            &x,
            &y,
            &side,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), ManifestError> {
    write_manifest(std::fs::File::create(path)?, entries)
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    if r.headers()?.iter().collect::<Vec<_>>() != HEADER {
        return Err(ManifestError::Header);
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: String| ManifestError::Line { line, reason };
        let label: Label = rec[4].parse().map_err(|_| bad(format!("unknown label '{}'", &rec[4])))?;
        let region = if rec[6].is_empty() && rec[7].is_empty() && rec[8].is_empty() {
            None
        } else {
            let num = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(format!("bad integer '{}'", &rec[i])));
            Some((num(6)?, num(7)?, num(8)?))
        };
        out.push(ManifestEntry {
            patient_id: rec[0].to_string(),
            spot_id: rec[1].to_string(),
            unit_id: rec[2].to_string(),
            variant: rec[3].to_string(),
            label,
            path: rec[5].to_string(),
            region,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, ManifestError> {
    read_manifest(std::fs::File::open(path)?)
}
