//! Readers and writers for kinematics, gesture transcriptions, visual feature
//! exports and plain label files, plus channel fusion.
//!
//! All numeric parsing goes through `str::parse::<f64>`, so it is
//! locale-independent and accepts only `.` as the decimal separator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, Matrix, Segment, Segmentation, BACKGROUND_LABEL};

/// Number of columns in a JIGSAWS kinematics file.
pub const JIGSAWS_COLUMNS: usize = 76;

/// Which raw kinematics columns to keep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSelection {
    All,
    /// 0-based column indices, in output order.
    Indices(Vec<usize>),
}

impl ColumnSelection {
    /// The 38 patient-side manipulator columns (39..=76 in 1-based JIGSAWS numbering).
    pub fn jigsaws_slave() -> Self {
        ColumnSelection::Indices((38..JIGSAWS_COLUMNS).collect())
    }

    /// Resolves the selection against a file with `width` columns.
    pub fn resolve(&self, width: usize) -> Result<Vec<usize>> {
        match self {
            ColumnSelection::All => Ok((0..width).collect()),
            ColumnSelection::Indices(idx) => {
                if idx.is_empty() {
                    return Err(Error::Config("column selection is empty".into()));
                }
                let mut seen = vec![false; width];
                for &i in idx {
                    if i >= width {
                        return Err(Error::Config(format!(
                            "column {i} out of range for a {width}-column file"
                        )));
                    }
                    if std::mem::replace(&mut seen[i], true) {
                        return Err(Error::Config(format!("column {i} selected twice")));
                    }
                }
                Ok(idx.clone())
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_number(token: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("non-numeric token `{token}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value `{token}`")));
    }
    Ok(v)
}

/// Parses rows of numbers split by `split`; blank lines are skipped.
fn parse_rows<'a, F, I>(text: &'a str, path: &Path, split: F) -> Result<(Vec<f64>, usize, usize)>
where
    F: Fn(&'a str) -> I,
    I: Iterator<Item = &'a str>,
{
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for token in split(line) {
            values.push(parse_number(token.trim(), path, i + 1)?);
        }
        let n = values.len() - before;
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(Error::parse(path, i + 1, format!("expected {w} values, found {n}")));
            }
            Some(_) => {}
        }
        rows += 1;
    }
    match width {
        Some(w) if w > 0 => Ok((values, rows, w)),
        _ => Err(Error::parse(path, 1, "file contains no data rows")),
    }
}

/// Whitespace-delimited kinematics, one frame per row.
pub fn load_kinematics(path: impl AsRef<Path>, cols: &ColumnSelection) -> Result<Matrix> {
    let path = path.as_ref();
    let text = read(path)?;
    let (values, rows, width) = parse_rows(&text, path, str::split_whitespace)?;
    let keep = cols.resolve(width)?;
    Ok(Matrix::from_fn(rows, keep.len(), |r, c| values[r * width + keep[c]]))
}

/// Headerless CSV of visual features, one frame per row.
pub fn load_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 1);
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        for field in record.iter() {
            values.push(parse_number(field.trim(), path, line)?);
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::parse(path, line, format!("expected {w} values, found {}", record.len())));
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::parse(path, 1, "file contains no data rows"))?;
    Ok(Matrix::from_row_slice(rows, width, &values))
}

/// One annotated gesture from a transcription file (0-based, inclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptionEntry {
    pub start_frame: usize,
    pub end_frame: usize,
    pub gesture_name: String,
}

/// A parsed transcription: exhaustive segmentation plus label names.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub segmentation: Segmentation,
    pub names: BTreeMap<Label, String>,
    pub entries: Vec<TranscriptionEntry>,
}

fn gesture_number(name: &str) -> Option<Label> {
    name.strip_prefix('G')
        .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|d| d.parse().ok())
}

/// Reads `start end label` lines with 1-based inclusive frames.
///
/// Frames not covered by any entry receive [`BACKGROUND_LABEL`]. When
/// `frames` is given the segmentation covers exactly that many frames,
/// otherwise it ends at the last annotated frame. Names of the form `G<n>`
/// map to label `n`; any other naming scheme is numbered by first appearance.
pub fn load_transcription(path: impl AsRef<Path>, frames: Option<usize>) -> Result<Transcription> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, format!("expected `start end label`, found `{}`", line.trim())));
        }
        let parse_frame = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("invalid frame index `{s}`")))?;
            v.checked_sub(1)
                .ok_or_else(|| Error::parse(path, i + 1, "frame indices are 1-based"))
        };
        let start = parse_frame(fields[0])?;
        let end = parse_frame(fields[1])?;
        if end < start {
            return Err(Error::parse(path, i + 1, format!("end {} before start {}", end + 1, start + 1)));
        }
        entries.push(TranscriptionEntry {
            start_frame: start,
            end_frame: end,
            gesture_name: fields[2].to_string(),
        });
        lines.push(i + 1);
    }
    if entries.is_empty() {
        return Err(Error::parse(path, 1, "transcription has no entries"));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| (entries[i].start_frame, entries[i].end_frame));
    let entries: Vec<TranscriptionEntry> = order.iter().map(|&i| entries[i].clone()).collect();
    let lines: Vec<usize> = order.iter().map(|&i| lines[i]).collect();
    for w in 0..entries.len().saturating_sub(1) {
        if entries[w + 1].start_frame <= entries[w].end_frame {
            return Err(Error::parse(
                path,
                lines[w + 1],
                format!(
                    "entry {}..{} overlaps entry {}..{}",
                    entries[w + 1].start_frame + 1,
                    entries[w + 1].end_frame + 1,
                    entries[w].start_frame + 1,
                    entries[w].end_frame + 1
                ),
            ));
        }
    }
    let last_end = entries.last().map(|e| e.end_frame).unwrap_or(0);
    let total = frames.unwrap_or(last_end + 1);
    if last_end >= total {
        return Err(Error::DimensionMismatch(format!(
            "{}: annotation ends at frame {} but the demonstration has {total} frames",
            path.display(),
            last_end + 1
        )));
    }

    let numbered = entries.iter().all(|e| gesture_number(&e.gesture_name).is_some());
    let mut names = BTreeMap::new();
    let mut by_name: BTreeMap<&str, Label> = BTreeMap::new();
    let mut labels = Vec::with_capacity(entries.len());
    for e in &entries {
        let label = if numbered {
            gesture_number(&e.gesture_name).expect("checked")
        } else {
            let next = by_name.len() as Label;
            *by_name.entry(&e.gesture_name).or_insert(next)
        };
        names.insert(label, e.gesture_name.clone());
        labels.push(label);
    }

    let mut segments = Vec::new();
    let mut cursor = 0;
    for (e, &label) in entries.iter().zip(&labels) {
        if e.start_frame > cursor {
            segments.push(Segment::new(cursor, e.start_frame - 1, BACKGROUND_LABEL));
        }
        segments.push(Segment::new(e.start_frame, e.end_frame, label));
        cursor = e.end_frame + 1;
    }
    if cursor < total {
        segments.push(Segment::new(cursor, total - 1, BACKGROUND_LABEL));
    }
    Ok(Transcription {
        segmentation: Segmentation::new(segments)?,
        names,
        entries,
    })
}

/// Reads one integer label per line.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        labels.push(
            token
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("invalid label `{token}`")))?,
        );
    }
    if labels.is_empty() {
        return Err(Error::parse(path, 1, "label file is empty"));
    }
    Ok(labels)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn format_rows(data: &Matrix, sep: &str) -> String {
    let mut out = String::new();
    for r in 0..data.nrows() {
        for c in 0..data.ncols() {
            if c > 0 {
                out.push_str(sep);
            }
            // `Display` for f64 is the shortest representation that round-trips.
            write!(out, "{}", data[(r, c)]).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_kinematics(path: impl AsRef<Path>, data: &Matrix) -> Result<()> {
    write(path.as_ref(), &format_rows(data, " "))
}

pub fn write_features(path: impl AsRef<Path>, data: &Matrix) -> Result<()> {
    write(path.as_ref(), &format_rows(data, ","))
}

/// Writes non-background segments as 1-based `start end name` lines.
pub fn write_transcription(
    path: impl AsRef<Path>,
    seg: &Segmentation,
    names: &BTreeMap<Label, String>,
) -> Result<()> {
    let mut out = String::new();
    for s in seg.segments().iter().filter(|s| s.label != BACKGROUND_LABEL) {
        let name = names.get(&s.label).cloned().unwrap_or_else(|| format!("G{}", s.label));
        writeln!(out, "{} {} {}", s.start + 1, s.end + 1, name).expect("writing to a String");
    }
    write(path.as_ref(), &out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[Label]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(out, "{l}").expect("writing to a String");
    }
    write(path.as_ref(), &out)
}

/// Z-scores every column in place; zero-variance columns become all zeros.
pub fn standardize_columns(data: &mut Matrix) {
    let n = data.nrows() as f64;
    if data.nrows() == 0 {
        return;
    }
    for mut col in data.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
}

/// Column-concatenates kinematic and visual channels, optionally z-scoring each column.
pub fn fuse(kin: &Matrix, vis: Option<&Matrix>, standardize: bool) -> Result<Matrix> {
    let mut out = match vis {
        None => kin.clone(),
        Some(vis) => {
            if vis.nrows() != kin.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "kinematics have {} frames, visual features {}",
                    kin.nrows(),
                    vis.nrows()
                )));
            }
            let mut m = Matrix::zeros(kin.nrows(), kin.ncols() + vis.ncols());
            m.columns_mut(0, kin.ncols()).copy_from(kin);
            m.columns_mut(kin.ncols(), vis.ncols()).copy_from(vis);
            m
        }
    };
    if standardize {
        standardize_columns(&mut out);
    }
    Ok(out)
}
