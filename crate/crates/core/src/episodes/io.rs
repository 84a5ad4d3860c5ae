//! Line-oriented sequence files and their sidecar manifests.
//!
//! Each line is a JSON object `{"id", "label", "frame_labels"?, "frames"}`.
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so write→read→write reproduces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::model::FeatureSequence;
use crate::numerics::Matrix;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_labels: Option<Vec<usize>>,
    frames: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_classes: usize,
    pub d: usize,
    pub count: usize,
    pub class_counts: BTreeMap<usize, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl Manifest {
    /// Counts and shapes of `seqs`; `num_classes` is one past the largest
    /// label unless the caller knows better.
    pub fn describe(seqs: &[FeatureSequence], generator: Option<serde_json::Value>) -> Result<Self> {
        let d = check_dims(seqs)?;
        let mut class_counts = BTreeMap::new();
        for s in seqs {
            if let Some(l) = s.label {
                *class_counts.entry(l).or_insert(0) += 1;
            }
        }
        let num_classes = class_counts.keys().next_back().map_or(0, |&c| c + 1);
        Ok(Self { num_classes, d, count: seqs.len(), class_counts, generator })
    }
}

fn check_dims(seqs: &[FeatureSequence]) -> Result<usize> {
    let Some(first) = seqs.first() else {
        return arg_err("no sequences");
    };
    for s in seqs {
        s.validate()?;
        if s.dim() != first.dim() {
            return arg_err(format!("sequence {:?} has d={}, expected {}", s.id, s.dim(), first.dim()));
        }
    }
    Ok(first.dim())
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn to_lines(seqs: &[FeatureSequence]) -> Result<String> {
    check_dims(seqs)?;
    let mut out = String::new();
    for s in seqs {
        let rec = Record {
            id: s.id.clone(),
            label: s.label,
            frame_labels: s.frame_labels.clone(),
            frames: s.frames.row_iter().map(<[f64]>::to_vec).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Parse(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_lines(text: &str) -> Result<Vec<FeatureSequence>> {
    let reader = BufReader::new(text.as_bytes());
    read_records(reader, "<memory>")
}

fn read_records<R: BufRead>(reader: R, origin: &str) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{origin}:{}: {e}", n + 1)))?;
        let tau = rec.frames.len();
        let d = rec.frames.first().map_or(0, Vec::len);
        if rec.frames.iter().any(|r| r.len() != d) {
            return Err(Error::Parse(format!("{origin}:{}: ragged frames in {:?}", n + 1, rec.id)));
        }
        let frames = Matrix::from_vec(tau, d, rec.frames.concat())
            .map_err(|e| Error::Parse(format!("{origin}:{}: {e}", n + 1)))?;
        let mut seq = FeatureSequence::new(rec.id, frames, rec.label)
            .map_err(|e| Error::Parse(format!("{origin}:{}: {e}", n + 1)))?;
        if let Some(fl) = rec.frame_labels {
            seq = seq.with_frame_labels(fl).map_err(|e| Error::Parse(format!("{origin}:{}: {e}", n + 1)))?;
        }
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::Parse(format!("{origin}: no records")));
    }
    Ok(out)
}

/// Writes the sequence file and its manifest.
pub fn write_sequences(path: &Path, seqs: &[FeatureSequence], generator: Option<serde_json::Value>) -> Result<Manifest> {
    let manifest = Manifest::describe(seqs, generator)?;
    let text = to_lines(seqs)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    write_manifest(path, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    fs::write(manifest_path(path), json)?;
    Ok(())
}

pub fn read_sequences(path: &Path) -> Result<Vec<FeatureSequence>> {
    let f = fs::File::open(path)?;
    read_records(BufReader::new(f), &path.display().to_string())
}

/// Reads the manifest if present.
pub fn read_manifest(path: &Path) -> Result<Option<Manifest>> {
    let mp = manifest_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mp)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Parse(format!("{}: {e}", mp.display())))
}
