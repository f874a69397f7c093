//! Segmentation promoting: repairs over-segmentation by repeatedly merging
//! the adjacent pair of segments with the highest fused similarity.
//!
//! Every adjacent pair gets four raw measures (principal-subspace angles,
//! histogram mutual information, mean distance, normalized DTW). Each measure
//! is mapped to `[0, 1]` relative to the mean of its population, the four are
//! fused by root mean square, and the best pair is merged while its fused
//! score exceeds `tau`.

mod measures;
mod normalize;
mod promote;

pub use measures::{
    principal_directions, resample_indices, segment_entropy, sm_da, sm_dtw, sm_dtw_capped, sm_mi, sm_pca,
    DtwAlignment, MiEstimate, PcaNormalization, PcaSimilarity, SegmentView, DTW_MAX_LEN,
};
pub use normalize::{fuse, normalize_population, Orientation, PopulationStats};
pub use promote::{
    adjacent_similarities, normalize_similarities, pair_similarity, promote, promote_with_reference, write_trace_jsonl, MergeStep, PromoteOutput, RawSimilarity,
    ReferenceStats, SimilarityFlags, SimilarityRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which population anchors the normalization in later merge iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Statistics of the adjacent pairs of the input segmentation, fixed for
    /// the whole run; later raw values are normalized against them.
    #[default]
    Initial,
    /// Statistics recomputed from the current adjacent pairs every iteration.
    PerIteration,
}

/// Scaling of the DTW path cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DtwNormalization {
    /// `sqrt(cost) / K`; shrinks as segments grow.
    RootCostOverLength,
    /// `sqrt(cost / K)`; root of the mean frame distance along the path.
    #[default]
    PathMean,
}

/// Scaling of the histogram mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MiNormalization {
    /// `H(Sa) + H(Sb) - H(Sa, Sb)` in nats; bounded by the log of the aligned length.
    Raw,
    /// Divided by `sqrt(H(Sa) H(Sb))`, which lies in `[0, 1]`.
    #[default]
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmddConfig {
    /// Principal components compared by the subspace measure.
    pub q: usize,
    /// Histogram bins per dimension for entropy estimation.
    pub mi_bins: usize,
    /// Merging continues while the best fused score is above this.
    pub tau: f64,
    /// Merge cap; `None` means `n - 1` for `n` input segments.
    pub max_iterations: Option<usize>,
    pub pca_normalization: PcaNormalization,
    pub mi_normalization: MiNormalization,
    pub dtw_normalization: DtwNormalization,
    pub normalization_scope: NormalizationScope,
    /// Segments longer than this are stride-subsampled before DTW.
    pub dtw_max_len: usize,
}

impl Default for PmddConfig {
    fn default() -> Self {
        Self {
            q: 3,
            mi_bins: 16,
            tau: 0.5,
            max_iterations: None,
            pca_normalization: PcaNormalization::MeanOverQ,
            mi_normalization: MiNormalization::Normalized,
            dtw_normalization: DtwNormalization::PathMean,
            normalization_scope: NormalizationScope::Initial,
            dtw_max_len: DTW_MAX_LEN,
        }
    }
}

impl PmddConfig {
    /// Unscaled MI and `sqrt(cost) / K` DTW, both of which drift with segment length.
    pub fn length_sensitive() -> Self {
        Self {
            mi_normalization: MiNormalization::Raw,
            dtw_normalization: DtwNormalization::RootCostOverLength,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.mi_bins < 2 {
            return Err(Error::Config(format!("mi_bins must be at least 2, got {}", self.mi_bins)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.dtw_max_len == 0 {
            return Err(Error::Config("dtw_max_len must be at least 1".into()));
        }
        Ok(())
    }
}
