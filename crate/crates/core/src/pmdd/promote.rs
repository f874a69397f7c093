//! The merge loop: score every adjacent pair, merge the best one while its
//! fused score is above `tau`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::measures::{sm_da, sm_dtw_capped, sm_mi, sm_pca, SegmentView};
use super::normalize::{fuse, Orientation, PopulationStats};
use super::{DtwNormalization, MiNormalization, NormalizationScope, PmddConfig};
use crate::error::{Error, Result};
use crate::model::{Matrix, Segmentation};

/// Conditions under which a measure fell back to a degraded computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SimilarityFlags {
    /// Fewer principal components than `q` were available.
    pub pca_reduced: bool,
    /// One of the segments has no variance; the PCA measure is at its maximum.
    pub pca_zero_variance: bool,
    /// DTW ran on stride-subsampled copies.
    pub dtw_subsampled: bool,
}

/// The four raw measures for one adjacent pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSimilarity {
    pub sm_pca: f64,
    pub sm_mi: f64,
    pub sm_da: f64,
    pub sm_dtw: f64,
    pub flags: SimilarityFlags,
}

/// Raw and normalized measures plus the fused score for segments `a` and `a + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub a: usize,
    pub b: usize,
    pub sm_pca: f64,
    pub sm_mi: f64,
    pub sm_da: f64,
    pub sm_dtw: f64,
    pub y_pca: f64,
    pub y_mi: f64,
    pub y_da: f64,
    pub y_dtw: f64,
    pub o: f64,
    pub flags: SimilarityFlags,
}

/// Per-measure population statistics that normalization is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub pca: PopulationStats,
    pub mi: PopulationStats,
    pub da: PopulationStats,
    pub dtw: PopulationStats,
}

impl ReferenceStats {
    pub fn of(raw: &[RawSimilarity]) -> Result<Self> {
        let column = |f: fn(&RawSimilarity) -> f64| PopulationStats::of(&raw.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            pca: column(|r| r.sm_pca)?,
            mi: column(|r| r.sm_mi)?,
            da: column(|r| r.sm_da)?,
            dtw: column(|r| r.sm_dtw)?,
        })
    }
}

/// Raw measures between two segments.
pub fn pair_similarity(a: &SegmentView<'_>, b: &SegmentView<'_>, cfg: &PmddConfig) -> Result<RawSimilarity> {
    let pca = sm_pca(a, b, cfg.q, cfg.pca_normalization)?;
    let mi = sm_mi(a, b, cfg.mi_bins)?;
    let da = sm_da(a, b)?;
    let dtw = sm_dtw_capped(a, b, cfg.dtw_max_len)?;
    // Estimator noise can dip a hair below zero.
    let mi_value = mi.value.max(0.0);
    let sm_mi = match cfg.mi_normalization {
        MiNormalization::Raw => mi_value,
        MiNormalization::Normalized => {
            let scale = (mi.h_a * mi.h_b).sqrt();
            if scale > 0.0 {
                (mi_value / scale).min(1.0)
            } else {
                0.0
            }
        }
    };
    let sm_dtw = match cfg.dtw_normalization {
        DtwNormalization::RootCostOverLength => dtw.value,
        DtwNormalization::PathMean => (dtw.cost / dtw.path_len() as f64).sqrt(),
    };
    Ok(RawSimilarity {
        sm_pca: pca.value,
        sm_mi,
        sm_da: da,
        sm_dtw,
        flags: SimilarityFlags {
            pca_reduced: pca.reduced,
            pca_zero_variance: pca.zero_variance,
            dtw_subsampled: dtw.subsampled,
        },
    })
}

/// Normalizes and fuses raw measures of consecutive pairs `0..raw.len()`.
///
/// With `reference = None` the population is `raw` itself.
pub fn normalize_similarities(
    raw: &[RawSimilarity],
    reference: Option<&ReferenceStats>,
) -> Result<Vec<SimilarityRecord>> {
    let own;
    let stats = match reference {
        Some(r) => r,
        None => {
            own = ReferenceStats::of(raw)?;
            &own
        }
    };
    raw.iter()
        .enumerate()
        .map(|(a, r)| {
            let y_pca = stats.pca.normalize(r.sm_pca, Orientation::SmallerIsSimilar);
            let y_mi = stats.mi.normalize(r.sm_mi, Orientation::LargerIsSimilar);
            let y_da = stats.da.normalize(r.sm_da, Orientation::SmallerIsSimilar);
            let y_dtw = stats.dtw.normalize(r.sm_dtw, Orientation::SmallerIsSimilar);
            Ok(SimilarityRecord {
                a,
                b: a + 1,
                sm_pca: r.sm_pca,
                sm_mi: r.sm_mi,
                sm_da: r.sm_da,
                sm_dtw: r.sm_dtw,
                y_pca,
                y_mi,
                y_da,
                y_dtw,
                o: fuse(y_pca, y_mi, y_da, y_dtw)?,
                flags: r.flags,
            })
        })
        .collect()
}

/// One iteration of the loop: the scores it saw and the pair it merged, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub iteration: usize,
    pub segments: usize,
    pub records: Vec<SimilarityRecord>,
    /// Index `a` of the merged pair `(a, a + 1)`.
    pub merged: Option<usize>,
    /// First frame of the boundary removed by the merge.
    pub removed_boundary: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromoteOutput {
    pub segmentation: Segmentation,
    pub trace: Vec<MergeStep>,
    /// Statistics of the input's pairs; anchors normalization under the initial scope.
    pub reference: Option<ReferenceStats>,
}

impl PromoteOutput {
    pub fn merges(&self) -> usize {
        self.trace.iter().filter(|s| s.merged.is_some()).count()
    }

    /// The argmax pair sequence.
    pub fn merge_sequence(&self) -> Vec<usize> {
        self.trace.iter().filter_map(|s| s.merged).collect()
    }
}

fn view<'a>(data: &'a Matrix, seg: &Segmentation, i: usize) -> SegmentView<'a> {
    let s = seg.segments()[i];
    data.rows(s.start, s.len())
}

/// Raw measures of every adjacent pair of `seg`, in pair order.
pub fn adjacent_similarities(seg: &Segmentation, data: &Matrix, cfg: &PmddConfig) -> Result<Vec<RawSimilarity>> {
    seg.validate(data.nrows())?;
    if seg.len() < 2 {
        return Ok(Vec::new());
    }
    (0..seg.len() - 1)
        .into_par_iter()
        .map(|a| pair_similarity(&view(data, seg, a), &view(data, seg, a + 1), cfg))
        .collect()
}

/// Merges adjacent segments of `seg` over `data` until no pair scores above `cfg.tau`.
pub fn promote(seg: &Segmentation, data: &Matrix, cfg: &PmddConfig) -> Result<PromoteOutput> {
    promote_with_reference(seg, data, cfg, None)
}

/// As [`promote`], with the initial-scope statistics supplied by the caller,
/// e.g. pooled over the initial pairs of several demonstrations.
///
/// `reference` is ignored under [`NormalizationScope::PerIteration`].
pub fn promote_with_reference(
    seg: &Segmentation,
    data: &Matrix,
    cfg: &PmddConfig,
    reference: Option<ReferenceStats>,
) -> Result<PromoteOutput> {
    cfg.validate()?;
    seg.validate(data.nrows())?;
    if data.ncols() == 0 {
        return Err(Error::DimensionMismatch("feature matrix has no columns".into()));
    }
    let mut current = seg.clone();
    let mut trace = Vec::new();
    if current.len() < 2 {
        return Ok(PromoteOutput {
            segmentation: current,
            trace,
            reference,
        });
    }

    // A pair's raw measures depend only on its two segments, so only the
    // pairs touching a merge need recomputing.
    let mut raw = adjacent_similarities(&current, data, cfg)?;
    let reference = match reference {
        Some(r) => r,
        None => ReferenceStats::of(&raw)?,
    };
    let max_iterations = cfg.max_iterations.unwrap_or(current.len() - 1);

    for iteration in 0.. {
        let anchor = match cfg.normalization_scope {
            NormalizationScope::Initial => Some(&reference),
            NormalizationScope::PerIteration => None,
        };
        let records = normalize_similarities(&raw, anchor)?;
        let mut best: Option<(usize, f64)> = None;
        for r in &records {
            if best.is_none_or(|(_, o)| r.o > o) {
                best = Some((r.a, r.o));
            }
        }
        let merge = match best {
            Some((a, o)) if o > cfg.tau && iteration < max_iterations => Some(a),
            _ => None,
        };
        let segments = current.len();
        let removed_boundary = merge.map(|a| current.segments()[a + 1].start);
        trace.push(MergeStep {
            iteration,
            segments,
            records,
            merged: merge,
            removed_boundary,
        });
        let Some(a) = merge else { break };
        current.merge_with_next(a);
        raw.remove(a);
        if current.len() < 2 {
            break;
        }
        if a > 0 {
            raw[a - 1] = pair_similarity(&view(data, &current, a - 1), &view(data, &current, a), cfg)?;
        }
        if a < raw.len() {
            raw[a] = pair_similarity(&view(data, &current, a), &view(data, &current, a + 1), cfg)?;
        }
    }
    current.validate(data.nrows())?;
    Ok(PromoteOutput {
        segmentation: current,
        trace,
        reference: Some(reference),
    })
}

/// Writes one JSON object per iteration.
pub fn write_trace_jsonl<W: Write>(trace: &[MergeStep], mut out: W) -> Result<()> {
    for step in trace {
        serde_json::to_writer(&mut out, step).map_err(|e| Error::Serialize(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::Serialize(e.to_string()))?;
    }
    Ok(())
}
