//! Normalized mutual information between frame labelings and segmentation
//! accuracy with maximum-overlap matching and an IOU gate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{segmentation_to_labels, FrameLabeling, Label, Segment, Segmentation, BACKGROUND_LABEL};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.40;

// Counts are summed in sorted order so the result ignores label names.
fn entropy<K>(counts: &BTreeMap<K, usize>, n: f64) -> f64 {
    let mut sorted: Vec<usize> = counts.values().copied().collect();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A,B) / sqrt(H(A) H(B))` from the joint contingency table, natural log.
///
/// Two single-label inputs score 1; exactly one single-label input scores 0.
pub fn nmi(a: &FrameLabeling, b: &FrameLabeling) -> Result<f64> {
    nmi_slices(a.labels(), b.labels())
}

pub fn nmi_slices(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("labeling"));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<Label, usize> = BTreeMap::new();
    let mut cb: BTreeMap<Label, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(Label, Label), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let ha = entropy(&ca, n);
    let hb = entropy(&cb, n);
    let hab = entropy(&joint, n);
    let mi = (ha + hb - hab).max(0.0);
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// A ground-truth segment and the predicted segment overlapping it most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    pub truth: Segment,
    pub predicted: Option<Segment>,
    /// Shared frames, inclusive of both endpoints.
    pub overlap: usize,
    pub iou: f64,
    pub true_positive: bool,
}

fn check_same_length(pred: &Segmentation, truth: &Segmentation) -> Result<()> {
    if pred.frames() != truth.frames() {
        return Err(Error::DimensionMismatch(format!(
            "prediction covers {} frames, ground truth {}",
            pred.frames(),
            truth.frames()
        )));
    }
    Ok(())
}

/// Matches every ground-truth segment independently to the predicted segment
/// of maximum frame overlap; ties go to the earlier predicted segment.
pub fn match_segments(pred: &Segmentation, truth: &Segmentation) -> Result<Vec<SegmentMatch>> {
    check_same_length(pred, truth)?;
    let ps = pred.segments();
    let mut out = Vec::with_capacity(truth.len());
    for g in truth.segments() {
        // First predicted segment that can overlap g.
        let first = ps.partition_point(|s| s.end < g.start);
        let mut best: Option<(usize, usize)> = None;
        for (i, s) in ps.iter().enumerate().skip(first) {
            if s.start > g.end {
                break;
            }
            let ov = s.overlap(g);
            if best.is_none_or(|(_, b)| ov > b) {
                best = Some((i, ov));
            }
        }
        let (predicted, overlap, iou) = match best {
            Some((i, ov)) if ov > 0 => {
                let s = ps[i];
                let union = s.len() + g.len() - ov;
                (Some(s), ov, ov as f64 / union as f64)
            }
            _ => (None, 0, 0.0),
        };
        out.push(SegmentMatch {
            truth: *g,
            predicted,
            overlap,
            iou,
            true_positive: false,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// A match is a true positive when its IOU is strictly above this.
    pub iou_threshold: f64,
    /// Count background frames in the accuracy denominator and in NMI.
    pub count_background: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            count_background: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Sum of true-positive overlaps over the evaluated frame count.
///
/// Background ground-truth segments never take part in matching.
pub fn seg_acc_with(
    pred: &Segmentation,
    truth: &Segmentation,
    opts: &EvalOptions,
) -> Result<(f64, Vec<SegmentMatch>)> {
    opts.validate()?;
    let mut matches = match_segments(pred, truth)?;
    matches.retain(|m| m.truth.label != BACKGROUND_LABEL);
    let total: usize = if opts.count_background {
        truth.frames()
    } else {
        matches.iter().map(|m| m.truth.len()).sum()
    };
    let mut covered = 0;
    for m in &mut matches {
        m.true_positive = m.iou > opts.iou_threshold;
        if m.true_positive {
            covered += m.overlap;
        }
    }
    let acc = if total == 0 { 0.0 } else { covered as f64 / total as f64 };
    Ok((acc, matches))
}

pub fn seg_acc(pred: &Segmentation, truth: &Segmentation, iou_threshold: f64) -> Result<(f64, Vec<SegmentMatch>)> {
    seg_acc_with(
        pred,
        truth,
        &EvalOptions {
            iou_threshold,
            ..EvalOptions::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nmi: f64,
    pub seg_acc: f64,
    pub iou_threshold: f64,
    /// Frames in the accuracy denominator.
    pub evaluated_frames: usize,
    pub predicted_segments: usize,
    pub truth_segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments_before_promote: Option<usize>,
    pub matches: Vec<SegmentMatch>,
}

/// NMI and seg-acc of `pred` against `truth`.
///
/// Unless `opts.count_background` is set, NMI is computed over annotated frames only.
pub fn evaluate(pred: &Segmentation, truth: &Segmentation, opts: &EvalOptions) -> Result<EvalReport> {
    let (acc, matches) = seg_acc_with(pred, truth, opts)?;
    let frames = truth.frames();
    let p = segmentation_to_labels(pred, frames)?.into_inner();
    let t = segmentation_to_labels(truth, frames)?.into_inner();
    let (p, t): (Vec<Label>, Vec<Label>) = if opts.count_background {
        (p, t)
    } else {
        p.into_iter().zip(t).filter(|(_, t)| *t != BACKGROUND_LABEL).unzip()
    };
    let nmi = if t.is_empty() { 0.0 } else { nmi_slices(&p, &t)? };
    let evaluated_frames = if opts.count_background {
        frames
    } else {
        matches.iter().map(|m| m.truth.len()).sum()
    };
    Ok(EvalReport {
        nmi,
        seg_acc: acc,
        iou_threshold: opts.iou_threshold,
        evaluated_frames,
        predicted_segments: pred.len(),
        truth_segments: truth.segments().iter().filter(|s| s.label != BACKGROUND_LABEL).count(),
        segments_before_promote: None,
        matches,
    })
}
