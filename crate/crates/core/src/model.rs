//! Shared data types: demonstrations, segments, segmentations and frame labelings.
//!
//! Frames are the canonical time unit everywhere. `rate_hz` is carried for display only.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-per-frame matrix.
pub type Matrix = DMatrix<f64>;

/// Opaque cluster or gesture identifier.
pub type Label = i64;

/// Reserved label for frames no annotation covers.
pub const BACKGROUND_LABEL: Label = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Skill {
    Expert,
    Intermediate,
    Novice,
    #[default]
    Unknown,
}

/// One recording: synchronized kinematic and optional visual channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    id: String,
    rate_hz: f64,
    kinematic: Matrix,
    visual: Option<Matrix>,
    skill: Skill,
}

impl Demonstration {
    pub fn new(
        id: impl Into<String>,
        rate_hz: f64,
        kinematic: Matrix,
        visual: Option<Matrix>,
        skill: Skill,
    ) -> Result<Self> {
        let id = id.into();
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::Config(format!("{id}: rate_hz must be positive, got {rate_hz}")));
        }
        if kinematic.nrows() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "{id}: a demonstration needs at least 2 frames, got {}",
                kinematic.nrows()
            )));
        }
        if kinematic.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("{id}: kinematic data contains NaN/Inf")));
        }
        if let Some(vis) = &visual {
            if vis.nrows() != kinematic.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{id}: visual features have {} rows, kinematics {}",
                    vis.nrows(),
                    kinematic.nrows()
                )));
            }
            if vis.iter().any(|v| !v.is_finite()) {
                return Err(Error::OutOfRange(format!("{id}: visual data contains NaN/Inf")));
            }
        }
        Ok(Self {
            id,
            rate_hz,
            kinematic,
            visual,
            skill,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn kinematic(&self) -> &Matrix {
        &self.kinematic
    }

    pub fn visual(&self) -> Option<&Matrix> {
        self.visual.as_ref()
    }

    pub fn skill(&self) -> Skill {
        self.skill
    }

    pub fn frames(&self) -> usize {
        self.kinematic.nrows()
    }
}

/// Inclusive frame interval carrying a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

impl Segment {
    pub fn new(start: usize, end: usize, label: Label) -> Self {
        Self { start, end, label }
    }

    /// Number of frames covered (inclusive bounds).
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Frames shared with `other`, counting both endpoints.
    pub fn overlap(&self, other: &Segment) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if hi >= lo {
            hi - lo + 1
        } else {
            0
        }
    }
}

/// Contiguous, exhaustive, ordered list of segments over `0..frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    segments: Vec<Segment>,
}

impl Segmentation {
    /// Builds a segmentation and checks contiguity; the frame count is implied by the last segment.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let seg = Self { segments };
        let frames = seg.segments.last().map(|s| s.end + 1).unwrap_or(0);
        seg.validate(frames)?;
        Ok(seg)
    }

    /// A single segment spanning every frame.
    pub fn single(frames: usize, label: Label) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Empty("segmentation over zero frames"));
        }
        Ok(Self {
            segments: vec![Segment::new(0, frames - 1, label)],
        })
    }

    /// Segmentation whose segments start at `0` and at every entry of `boundaries`.
    ///
    /// `boundaries` must be strictly increasing and lie in `1..frames`.
    pub fn from_boundaries(frames: usize, boundaries: &[usize], labels: &[Label]) -> Result<Self> {
        if labels.len() != boundaries.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} boundaries need {} labels, got {}",
                boundaries.len(),
                boundaries.len() + 1,
                labels.len()
            )));
        }
        let mut starts = Vec::with_capacity(boundaries.len() + 1);
        starts.push(0);
        starts.extend_from_slice(boundaries);
        let mut segments = Vec::with_capacity(starts.len());
        for (i, &start) in starts.iter().enumerate() {
            let end = match starts.get(i + 1) {
                Some(&next) => next.checked_sub(1).ok_or_else(|| {
                    Error::InvalidSegmentation("boundary at frame 0".into())
                })?,
                None => frames.checked_sub(1).ok_or(Error::Empty("zero frames"))?,
            };
            if end < start {
                return Err(Error::InvalidSegmentation(format!(
                    "boundaries not strictly increasing inside 1..{frames}: {boundaries:?}"
                )));
            }
            segments.push(Segment::new(start, end, labels[i]));
        }
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total frame count covered.
    pub fn frames(&self) -> usize {
        self.segments.last().map(|s| s.end + 1).unwrap_or(0)
    }

    /// Start frames of every segment after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// Checks the contiguity and exhaustiveness invariant over `frames` frames.
    pub fn validate(&self, frames: usize) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or(Error::InvalidSegmentation("no segments".into()))?;
        if first.start != 0 {
            return Err(Error::InvalidSegmentation(format!(
                "first segment starts at {}, not 0",
                first.start
            )));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.start > s.end {
                return Err(Error::InvalidSegmentation(format!(
                    "segment {i} has start {} > end {}",
                    s.start, s.end
                )));
            }
            if let Some(next) = self.segments.get(i + 1) {
                if next.start != s.end + 1 {
                    let kind = if next.start <= s.end { "overlap" } else { "gap" };
                    return Err(Error::InvalidSegmentation(format!(
                        "{kind} between segment {i} (ends {}) and segment {} (starts {})",
                        s.end,
                        i + 1,
                        next.start
                    )));
                }
            }
        }
        let last = self.segments.last().expect("non-empty");
        if last.end + 1 != frames {
            return Err(Error::InvalidSegmentation(format!(
                "segments cover {} frames, expected {frames}",
                last.end + 1
            )));
        }
        Ok(())
    }

    /// Merges segment `index` with its right neighbour, keeping the left label.
    pub(crate) fn merge_with_next(&mut self, index: usize) {
        let right = self.segments.remove(index + 1);
        self.segments[index].end = right.end;
    }
}

/// One label per frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabeling {
    labels: Vec<Label>,
}

impl FrameLabeling {
    pub fn new(labels: Vec<Label>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_inner(self) -> Vec<Label> {
        self.labels
    }
}

impl From<Vec<Label>> for FrameLabeling {
    fn from(labels: Vec<Label>) -> Self {
        Self::new(labels)
    }
}

/// Maximal runs of equal labels become segments.
pub fn segmentation_from_labels(labels: &FrameLabeling) -> Result<Segmentation> {
    let labels = labels.labels();
    let Some(&first) = labels.first() else {
        return Err(Error::Empty("frame labeling"));
    };
    let mut segments = Vec::new();
    let mut current = Segment::new(0, 0, first);
    for (t, &label) in labels.iter().enumerate().skip(1) {
        if label == current.label {
            current.end = t;
        } else {
            segments.push(current);
            current = Segment::new(t, t, label);
        }
    }
    segments.push(current);
    Ok(Segmentation { segments })
}

/// Expands a segmentation into one label per frame over `frames` frames.
pub fn segmentation_to_labels(seg: &Segmentation, frames: usize) -> Result<FrameLabeling> {
    seg.validate(frames)?;
    let mut labels = Vec::with_capacity(frames);
    for s in seg.segments() {
        labels.extend(std::iter::repeat_n(s.label, s.len()));
    }
    Ok(FrameLabeling::new(labels))
}
