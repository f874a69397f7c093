//! Transition-state clustering across a set of demonstrations.
//!
//! Frames are clustered jointly over all demonstrations, label changes become
//! candidate transitions, candidates are clustered in (state, normalized time)
//! and clusters that too few demonstrations share are pruned. Surviving
//! transitions are the segment boundaries.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::gmm::{select_gmm, EmOptions, GmmModel};
use crate::error::{Error, Result};
use crate::model::{Label, Matrix, Segmentation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TscConfig {
    pub frame_k: RangeInclusive<usize>,
    pub transition_k: RangeInclusive<usize>,
    /// Lag of the state augmentation `[x_t, x_{t+window}]`.
    pub window: usize,
    /// Scale of the normalized-time channel in transition clustering.
    pub time_weight: f64,
    /// Fraction of demonstrations a transition cluster must appear in to survive.
    pub prune_fraction: f64,
    /// Kept boundaries closer than this to the previous one (or to the end) are dropped.
    pub min_segment_len: usize,
    pub seed: u64,
    pub em_restarts: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
}

impl Default for TscConfig {
    fn default() -> Self {
        Self {
            frame_k: 3..=10,
            transition_k: 3..=10,
            window: 1,
            time_weight: 1.0,
            prune_fraction: 0.6,
            min_segment_len: 3,
            seed: 0,
            em_restarts: 5,
            em_tol: 1e-6,
            em_max_iter: 300,
        }
    }
}

impl TscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_k.is_empty() || *self.frame_k.start() == 0 {
            return Err(Error::Config(format!("frame_k range {:?} is empty or starts at 0", self.frame_k)));
        }
        if self.transition_k.is_empty() || *self.transition_k.start() == 0 {
            return Err(Error::Config(format!(
                "transition_k range {:?} is empty or starts at 0",
                self.transition_k
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1 frame".into()));
        }
        if !(0.0..=1.0).contains(&self.prune_fraction) {
            return Err(Error::Config(format!("prune_fraction must lie in [0, 1], got {}", self.prune_fraction)));
        }
        if self.min_segment_len == 0 {
            return Err(Error::Config("min_segment_len must be at least 1".into()));
        }
        if !self.time_weight.is_finite() || self.time_weight < 0.0 {
            return Err(Error::Config(format!("time_weight must be finite and >= 0, got {}", self.time_weight)));
        }
        Ok(())
    }

    fn em(&self, stream: u64) -> EmOptions {
        EmOptions {
            seed: self.seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            restarts: self.em_restarts,
            tol: self.em_tol,
            max_iter: self.em_max_iter,
        }
    }
}

/// One candidate transition: label change between `frame` and `frame + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub demo: usize,
    pub frame: usize,
    pub cluster: usize,
    pub kept: bool,
    /// Dropped for sitting within `min_segment_len` of a kept boundary.
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCluster {
    pub id: usize,
    pub size: usize,
    pub demonstrations: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TransitionReport {
    pub frame_k: usize,
    pub frame_bic: f64,
    pub transition_k: usize,
    pub transitions: Vec<Transition>,
    pub clusters: Vec<TransitionCluster>,
    pub warnings: Vec<String>,
}

impl TransitionReport {
    pub fn detected(&self, demo: usize) -> usize {
        self.transitions.iter().filter(|t| t.demo == demo).count()
    }

    pub fn kept(&self, demo: usize) -> usize {
        self.transitions.iter().filter(|t| t.demo == demo && t.kept).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TscOutput {
    pub segmentations: Vec<Segmentation>,
    /// Frame-level mixture component per frame, per demonstration.
    pub frame_labels: Vec<Vec<Label>>,
    pub report: TransitionReport,
}

fn pooled_moments(demos: &[Matrix]) -> (Vec<f64>, Vec<f64>) {
    let d = demos[0].ncols();
    let n: usize = demos.iter().map(Matrix::nrows).sum();
    let mut mean = vec![0.0; d];
    for m in demos {
        for (j, mj) in mean.iter_mut().enumerate() {
            *mj += m.column(j).sum();
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut var = vec![0.0; d];
    for m in demos {
        for (j, vj) in var.iter_mut().enumerate() {
            *vj += m.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>();
        }
    }
    let sd = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    (mean, sd)
}

fn standardize(m: &Matrix, mean: &[f64], sd: &[f64]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        if sd[c] > 1e-12 * (1.0 + mean[c].abs()) {
            (m[(r, c)] - mean[c]) / sd[c]
        } else {
            0.0
        }
    })
}

fn augment(z: &Matrix, lag: usize) -> Matrix {
    let (t, d) = z.shape();
    Matrix::from_fn(t, 2 * d, |r, c| {
        if c < d {
            z[(r, c)]
        } else {
            z[((r + lag).min(t - 1), c - d)]
        }
    })
}

fn stack(parts: &[Matrix]) -> Matrix {
    let rows: usize = parts.iter().map(Matrix::nrows).sum();
    let cols = parts[0].ncols();
    let mut out = Matrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        out.rows_mut(r0, p.nrows()).copy_from(p);
        r0 += p.nrows();
    }
    out
}

fn clamp_range(range: &RangeInclusive<usize>, samples: usize, dim: usize) -> Option<RangeInclusive<usize>> {
    // fit_gmm needs strictly more samples than components, and a full
    // covariance is singular unless a component owns more than `dim` points.
    let hi = (*range.end()).min(samples.saturating_sub(1)).min(samples / (dim + 1)).max(1);
    if samples < 2 {
        return None;
    }
    let lo = (*range.start()).min(hi);
    Some(lo..=hi)
}

/// Most frequent value; ties go to the smallest.
fn mode(values: &[Label]) -> Label {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best = (values[0], 0);
    for (&v, &c) in &counts {
        if c > best.1 {
            best = (v, c);
        }
    }
    best.0
}

/// Label for a segment: mode over its interior frames (endpoints dropped when it has 3+ frames).
fn segment_label(labels: &[Label], start: usize, end: usize) -> Label {
    if end >= start + 2 {
        mode(&labels[start + 1..end])
    } else {
        mode(&labels[start..=end])
    }
}

fn fit_stage(data: &Matrix, range: &RangeInclusive<usize>, em: &EmOptions) -> Result<GmmModel> {
    let range = clamp_range(range, data.nrows(), data.ncols()).ok_or(Error::TooFewSamples {
        samples: data.nrows(),
        components: *range.start(),
    })?;
    select_gmm(data, range, em)
}

/// Segments every demonstration; see the module docs for the pipeline.
pub fn tsc_segment(demos: &[Matrix], cfg: &TscConfig) -> Result<TscOutput> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Empty("demonstration list"));
    }
    let d = demos[0].ncols();
    for (i, m) in demos.iter().enumerate() {
        if m.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "demonstration {i} has {} channels, demonstration 0 has {d}",
                m.ncols()
            )));
        }
        if m.nrows() < cfg.window + 2 {
            return Err(Error::DimensionMismatch(format!(
                "demonstration {i} has {} frames; window {} needs at least {}",
                m.nrows(),
                cfg.window,
                cfg.window + 2
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("demonstration {i} contains NaN/Inf")));
        }
    }

    let (mean, sd) = pooled_moments(demos);
    let standardized: Vec<Matrix> = demos.iter().map(|m| standardize(m, &mean, &sd)).collect();
    let augmented: Vec<Matrix> = standardized.iter().map(|z| augment(z, cfg.window)).collect();
    let pooled = stack(&augmented);

    let frame_model = fit_stage(&pooled, &cfg.frame_k, &cfg.em(1))?;
    let mut report = TransitionReport {
        frame_k: frame_model.k,
        frame_bic: frame_model.bic,
        ..TransitionReport::default()
    };
    let mut frame_labels = Vec::with_capacity(demos.len());
    for aug in &augmented {
        frame_labels.push(
            frame_model
                .predict(aug)?
                .into_iter()
                .map(|c| c as Label)
                .collect::<Vec<_>>(),
        );
    }

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (demo, labels) in frame_labels.iter().enumerate() {
        for t in 0..labels.len() - 1 {
            if labels[t] != labels[t + 1] {
                candidates.push((demo, t));
            }
        }
    }

    if candidates.is_empty() {
        report.warnings.push("no transitions found; every demonstration is a single segment".into());
        let segmentations = frame_labels
            .iter()
            .map(|l| Segmentation::single(l.len(), segment_label(l, 0, l.len() - 1)))
            .collect::<Result<_>>()?;
        return Ok(TscOutput {
            segmentations,
            frame_labels,
            report,
        });
    }

    let features = Matrix::from_fn(candidates.len(), d + 1, |r, c| {
        let (demo, t) = candidates[r];
        if c < d {
            standardized[demo][(t, c)]
        } else {
            t as f64 / demos[demo].nrows() as f64 * cfg.time_weight
        }
    });
    let clusters: Vec<usize> = if candidates.len() < 2 {
        report.transition_k = 1;
        vec![0; candidates.len()]
    } else {
        let model = fit_stage(&features, &cfg.transition_k, &cfg.em(2))?;
        report.transition_k = model.k;
        model.predict(&features)?
    };

    let n_clusters = clusters.iter().copied().max().unwrap_or(0) + 1;
    let mut members: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_clusters];
    let mut sizes = vec![0usize; n_clusters];
    for (&(demo, _), &c) in candidates.iter().zip(&clusters) {
        members[c].insert(demo);
        sizes[c] += 1;
    }
    let needed = cfg.prune_fraction * demos.len() as f64;
    let kept: Vec<bool> = members
        .iter()
        .map(|m| !m.is_empty() && m.len() as f64 >= needed - 1e-9)
        .collect();
    report.clusters = (0..n_clusters)
        .filter(|&c| sizes[c] > 0)
        .map(|c| TransitionCluster {
            id: c,
            size: sizes[c],
            demonstrations: members[c].len(),
            kept: kept[c],
        })
        .collect();
    report.transitions = candidates
        .iter()
        .zip(&clusters)
        .map(|(&(demo, frame), &cluster)| Transition {
            demo,
            frame,
            cluster,
            kept: kept[cluster],
            collapsed: false,
        })
        .collect();
    if !kept.iter().any(|&k| k) {
        report.warnings.push("every transition cluster was pruned".into());
    }

    // The lagged state gives a crossing its own short-lived cluster, so one
    // change of regime usually shows up as a burst of adjacent transitions.
    for (demo, labels) in frame_labels.iter().enumerate() {
        let frames = labels.len();
        let mut last_start = 0;
        for t in report.transitions.iter_mut().filter(|t| t.demo == demo && t.kept) {
            let b = t.frame + 1;
            if b - last_start < cfg.min_segment_len || frames - b < cfg.min_segment_len {
                t.collapsed = true;
                t.kept = false;
            } else {
                last_start = b;
            }
        }
    }

    let mut segmentations = Vec::with_capacity(demos.len());
    for (demo, labels) in frame_labels.iter().enumerate() {
        let boundaries: Vec<usize> = report
            .transitions
            .iter()
            .filter(|t| t.demo == demo && t.kept)
            .map(|t| t.frame + 1)
            .collect();
        let mut starts = vec![0];
        starts.extend(&boundaries);
        let seg_labels: Vec<Label> = starts
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let e = starts.get(i + 1).map(|n| n - 1).unwrap_or(labels.len() - 1);
                segment_label(labels, s, e)
            })
            .collect();
        segmentations.push(Segmentation::from_boundaries(labels.len(), &boundaries, &seg_labels)?);
    }
    Ok(TscOutput {
        segmentations,
        frame_labels,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn plateaus(levels: &[f64], lens: &[usize], sigma: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let values: Vec<f64> = levels
            .iter()
            .zip(lens)
            .flat_map(|(&l, &n)| std::iter::repeat_n(l, n))
            .map(|v| v + normal.sample(&mut rng))
            .collect();
        Matrix::from_column_slice(values.len(), 1, &values)
    }

    #[test]
    fn constant_demonstration_is_one_segment() {
        let demo = Matrix::from_element(50, 2, 1.5);
        let out = tsc_segment(&[demo], &TscConfig::default()).unwrap();
        assert_eq!(out.segmentations[0].len(), 1);
        assert_eq!(out.segmentations[0].frames(), 50);
        assert!(!out.report.warnings.is_empty());
    }

    #[test]
    fn three_plateaus_give_three_segments() {
        let truth = [60, 140];
        let demos: Vec<Matrix> = (0..5)
            .map(|i| plateaus(&[0.0, 1.0, 2.0], &[60, 80, 70 + i], 0.02, i as u64))
            .collect();
        // Two transition groups exist, so the transition range must admit k = 2.
        let cfg = TscConfig { transition_k: 1..=10, ..TscConfig::default() };
        let out = tsc_segment(&demos, &cfg).unwrap();
        for seg in &out.segmentations {
            assert_eq!(seg.len(), 3, "{:?}", seg.boundaries());
            for (b, t) in seg.boundaries().iter().zip(truth) {
                assert!(b.abs_diff(t) <= 3);
            }
        }
    }

    #[test]
    fn pruning_drops_a_transition_only_one_demo_has() {
        let mut demos: Vec<Matrix> = (0..4)
            .map(|i| plateaus(&[0.0, 3.0], &[50, 50], 0.02, 10 + i))
            .collect();
        // A late excursion to a level no other demonstration visits.
        demos.push(plateaus(&[0.0, 3.0, -3.0, 3.0], &[50, 30, 10, 10], 0.02, 99));
        let cfg = TscConfig {
            frame_k: 2..=4,
            transition_k: 1..=4,
            prune_fraction: 1.0,
            ..TscConfig::default()
        };
        let out = tsc_segment(&demos, &cfg).unwrap();
        for seg in &out.segmentations {
            assert_eq!(seg.boundaries().len(), 1, "{:?}", seg.boundaries());
            assert!(seg.boundaries()[0].abs_diff(50) <= 3);
        }
        assert!(out.report.clusters.iter().any(|c| !c.kept));
    }

    #[test]
    fn segment_count_bounded_by_transitions() {
        let demos: Vec<Matrix> = (0..3)
            .map(|i| plateaus(&[0.0, 1.0, 0.0, 1.0], &[30, 30, 30, 30], 0.3, i))
            .collect();
        let out = tsc_segment(&demos, &TscConfig { prune_fraction: 0.0, ..TscConfig::default() }).unwrap();
        for (i, seg) in out.segmentations.iter().enumerate() {
            assert!(!seg.is_empty() && seg.len() <= out.report.detected(i) + 1);
            seg.validate(120).unwrap();
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(tsc_segment(&[], &TscConfig::default()).is_err());
        let short = Matrix::zeros(2, 1);
        assert!(tsc_segment(&[short], &TscConfig::default()).is_err());
        let a = Matrix::zeros(10, 1);
        let b = Matrix::zeros(10, 2);
        assert!(tsc_segment(&[a.clone(), b], &TscConfig::default()).is_err());
        let bad = TscConfig { prune_fraction: 1.5, ..TscConfig::default() };
        assert!(tsc_segment(&[a], &bad).is_err());
    }

    #[test]
    fn positive_column_scaling_does_not_change_segmentations() {
        let demos: Vec<Matrix> = (0..4)
            .map(|i| {
                let a = plateaus(&[0.0, 2.0, 1.0], &[40, 40, 40], 0.05, 20 + i);
                let b = plateaus(&[1.0, -1.0, 0.0], &[40, 40, 40], 0.05, 40 + i);
                Matrix::from_fn(120, 2, |r, c| if c == 0 { a[(r, 0)] } else { b[(r, 0)] })
            })
            .collect();
        let scaled: Vec<Matrix> = demos
            .iter()
            .map(|m| Matrix::from_fn(m.nrows(), 2, |r, c| m[(r, c)] * if c == 0 { 3.7 } else { 0.01 }))
            .collect();
        let cfg = TscConfig { seed: 4, ..TscConfig::default() };
        let a = tsc_segment(&demos, &cfg).unwrap();
        let b = tsc_segment(&scaled, &cfg).unwrap();
        assert_eq!(a.segmentations, b.segmentations);
    }
}
