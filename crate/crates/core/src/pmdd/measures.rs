//! The four raw segment-similarity measures: principal-subspace angles,
//! mutual information, mean distance and normalized DTW.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Read-only row-per-frame view of a segment.
pub type SegmentView<'a> = nalgebra::DMatrixView<'a, f64>;

/// How the double sum of principal angles is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PcaNormalization {
    /// `(1/q) sum_i sum_j theta(i, j)`.
    #[default]
    MeanOverQ,
    /// `(1/q^2) sum_i sum_j theta(i, j)`.
    MeanOverQSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaSimilarity {
    pub value: f64,
    pub components: usize,
    /// Fewer components than requested were usable.
    pub reduced: bool,
    /// One segment has no variance; `value` is the maximum dissimilarity.
    pub zero_variance: bool,
}

fn centered(s: &SegmentView<'_>) -> DMatrix<f64> {
    let mut m = s.clone_owned();
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    m
}

/// Right singular vectors of the centered segment, by descending singular
/// value, restricted to numerically non-zero singular values.
pub fn principal_directions(s: &SegmentView<'_>) -> Vec<Vec<f64>> {
    let c = centered(s);
    if c.nrows() == 0 || c.ncols() == 0 {
        return Vec::new();
    }
    let (rows, cols) = c.shape();
    let svd = c.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = (rows.max(cols) as f64) * f64::EPSILON * s_max.max(scale);
    order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol && svd.singular_values[i] > 0.0)
        .map(|i| v_t.row(i).iter().copied().collect())
        .collect()
}

/// Sum of angles between every pair of the top-`q` principal directions.
pub fn sm_pca(a: &SegmentView<'_>, b: &SegmentView<'_>, q: usize, norm: PcaNormalization) -> Result<PcaSimilarity> {
    if q == 0 {
        return Err(Error::Config("q must be at least 1".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!("segments have {} and {} channels", a.ncols(), b.ncols())));
    }
    let q_cap = q.min(a.ncols());
    let scale = |q: usize, total: f64| match norm {
        PcaNormalization::MeanOverQ => total / q as f64,
        PcaNormalization::MeanOverQSquared => total / (q * q) as f64,
    };
    let da = principal_directions(a);
    let db = principal_directions(b);
    if da.is_empty() || db.is_empty() {
        return Ok(PcaSimilarity {
            value: scale(q_cap, (q_cap * q_cap) as f64 * FRAC_PI_2),
            components: q_cap,
            reduced: q_cap < q,
            zero_variance: true,
        });
    }
    let q_eff = q_cap.min(da.len()).min(db.len());
    let mut total = 0.0;
    for u in &da[..q_eff] {
        for v in &db[..q_eff] {
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            total += dot.abs().min(1.0).acos();
        }
    }
    Ok(PcaSimilarity {
        value: scale(q_eff, total),
        components: q_eff,
        reduced: q_eff < q,
        zero_variance: false,
    })
}

/// Nearest-index resampling of `n` frames to `len` frames.
pub fn resample_indices(n: usize, len: usize) -> Vec<usize> {
    if len <= 1 || n <= 1 {
        return vec![0; len];
    }
    (0..len)
        .map(|i| ((i * (n - 1)) as f64 / (len - 1) as f64).round() as usize)
        .collect()
}

/// Per-dimension quantile edges over the union of both segments.
fn quantile_edges(a: &SegmentView<'_>, b: &SegmentView<'_>, bins: usize) -> Vec<Vec<f64>> {
    (0..a.ncols())
        .map(|j| {
            let mut values: Vec<f64> = a.column(j).iter().chain(b.column(j).iter()).copied().collect();
            values.sort_by(f64::total_cmp);
            let m = values.len();
            (1..bins).map(|k| values[(k * m / bins).min(m - 1)]).collect()
        })
        .collect()
}

fn symbolize(s: &SegmentView<'_>, rows: &[usize], edges: &[Vec<f64>]) -> Vec<Vec<u16>> {
    rows.iter()
        .map(|&r| {
            edges
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    let v = s[(r, j)];
                    e.partition_point(|&edge| edge <= v) as u16
                })
                .collect()
        })
        .collect()
}

/// Plug-in entropy in nats; counts are summed in sorted order so equal
/// histograms give bit-identical results regardless of key order.
fn entropy_of_counts(mut counts: Vec<usize>, n: usize) -> f64 {
    counts.sort_unstable();
    let n = n as f64;
    counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn symbol_entropy<K: Ord>(symbols: impl Iterator<Item = K>) -> f64 {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    let mut n = 0;
    for s in symbols {
        *counts.entry(s).or_default() += 1;
        n += 1;
    }
    entropy_of_counts(counts.into_values().collect(), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub h_a: f64,
    pub h_b: f64,
    pub h_joint: f64,
    /// Frames compared after resampling both segments.
    pub aligned: usize,
}

/// `H(Sa) + H(Sb) - H(Sa, Sb)` with histogram entropies.
///
/// Frames become symbols by quantile binning each dimension over the union of
/// both segments. Both segments are resampled to the shorter length by
/// nearest index and the joint entropy is taken over index-aligned pairs.
pub fn sm_mi(a: &SegmentView<'_>, b: &SegmentView<'_>, bins: usize) -> Result<MiEstimate> {
    if bins < 2 {
        return Err(Error::Config(format!("mi_bins must be at least 2, got {bins}")));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("segment"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!("segments have {} and {} channels", a.ncols(), b.ncols())));
    }
    let len = a.nrows().min(b.nrows());
    let edges = quantile_edges(a, b, bins);
    let sa = symbolize(a, &resample_indices(a.nrows(), len), &edges);
    let sb = symbolize(b, &resample_indices(b.nrows(), len), &edges);
    let h_a = symbol_entropy(sa.iter());
    let h_b = symbol_entropy(sb.iter());
    let h_joint = symbol_entropy(sa.iter().zip(&sb));
    Ok(MiEstimate {
        value: h_a + h_b - h_joint,
        h_a,
        h_b,
        h_joint,
        aligned: len,
    })
}

/// Histogram entropy of a single segment with edges taken from itself.
pub fn segment_entropy(s: &SegmentView<'_>, bins: usize) -> Result<f64> {
    Ok(sm_mi(s, s, bins)?.h_a)
}

/// Euclidean distance between the segment means.
pub fn sm_da(a: &SegmentView<'_>, b: &SegmentView<'_>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!("segments have {} and {} channels", a.ncols(), b.ncols())));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("segment"));
    }
    let (na, nb) = (a.nrows() as f64, b.nrows() as f64);
    let sq: f64 = (0..a.ncols())
        .map(|j| (a.column(j).sum() / na - b.column(j).sum() / nb).powi(2))
        .sum();
    Ok(sq.sqrt())
}

/// Longest segment DTW runs on before stride subsampling kicks in.
pub const DTW_MAX_LEN: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwAlignment {
    /// `sqrt(sum of path distances) / path length`.
    pub value: f64,
    pub cost: f64,
    /// Cells of the optimal path from `(0, 0)` to the last frame pair.
    pub path: Vec<(usize, usize)>,
    pub subsampled: bool,
}

impl DtwAlignment {
    pub fn path_len(&self) -> usize {
        self.path.len()
    }
}

fn frame_distance(a: &SegmentView<'_>, i: usize, b: &SegmentView<'_>, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum::<f64>().sqrt()
}

fn stride_rows(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        (0..n).collect()
    } else {
        let stride = n.div_ceil(cap);
        (0..n).step_by(stride).collect()
    }
}

/// DTW over Euclidean frame distances.
///
/// The accumulated cost follows `g(i,j) = d(i,j) + min(g(i-1,j-1), g(i-1,j), g(i,j-1))`.
/// Among minimum-cost paths the shortest is chosen, so `K` (the path length)
/// is well defined; the diagonal move wins remaining ties during backtracking.
pub fn sm_dtw(a: &SegmentView<'_>, b: &SegmentView<'_>) -> Result<DtwAlignment> {
    sm_dtw_capped(a, b, DTW_MAX_LEN)
}

pub fn sm_dtw_capped(a: &SegmentView<'_>, b: &SegmentView<'_>, cap: usize) -> Result<DtwAlignment> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("segment"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!("segments have {} and {} channels", a.ncols(), b.ncols())));
    }
    let cap = cap.max(1);
    let ra = stride_rows(a.nrows(), cap);
    let rb = stride_rows(b.nrows(), cap);
    let subsampled = ra.len() < a.nrows() || rb.len() < b.nrows();
    let (n, m) = (ra.len(), rb.len());

    // (accumulated cost, path length) compared lexicographically.
    let mut cost = vec![0.0f64; n * m];
    let mut len = vec![0u32; n * m];
    let better = |c1: f64, l1: u32, c2: f64, l2: u32| c1 < c2 || (c1 == c2 && l1 < l2);
    for (i, &ri) in ra.iter().enumerate() {
        for (j, &rj) in rb.iter().enumerate() {
            let d = frame_distance(a, ri, b, rj);
            let idx = i * m + j;
            if i == 0 && j == 0 {
                cost[idx] = d;
                len[idx] = 1;
                continue;
            }
            let mut best: Option<(f64, u32)> = None;
            let mut consider = |p: usize| {
                let cand = (cost[p], len[p]);
                if best.is_none_or(|(c, l)| better(cand.0, cand.1, c, l)) {
                    best = Some(cand);
                }
            };
            if i > 0 && j > 0 {
                consider((i - 1) * m + (j - 1));
            }
            if i > 0 {
                consider((i - 1) * m + j);
            }
            if j > 0 {
                consider(i * m + (j - 1));
            }
            let (c, l) = best.expect("at least one predecessor");
            cost[idx] = d + c;
            len[idx] = l + 1;
        }
    }

    let mut path = Vec::with_capacity(len[n * m - 1] as usize);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((ra[i], rb[j]));
    while i > 0 || j > 0 {
        let mut best: Option<((usize, usize), f64, u32)> = None;
        let mut consider = |pi: usize, pj: usize| {
            let p = pi * m + pj;
            if best.is_none_or(|(_, c, l)| better(cost[p], len[p], c, l)) {
                best = Some(((pi, pj), cost[p], len[p]));
            }
        };
        if i > 0 && j > 0 {
            consider(i - 1, j - 1);
        }
        if i > 0 {
            consider(i - 1, j);
        }
        if j > 0 {
            consider(i, j - 1);
        }
        (i, j) = best.expect("predecessor exists").0;
        path.push((ra[i], rb[j]));
    }
    path.reverse();
    debug_assert_eq!(path.len(), len[n * m - 1] as usize);

    let total = cost[n * m - 1];
    Ok(DtwAlignment {
        value: total.sqrt() / path.len() as f64,
        cost: total,
        path,
        subsampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(values: &[f64]) -> Matrix {
        Matrix::from_column_slice(values.len(), 1, values)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pca_identical_segments() {
        let s = random(40, 4, 1);
        let r = sm_pca(&s.as_view(), &s.as_view(), 1, PcaNormalization::MeanOverQ).unwrap();
        assert!(r.value.abs() < 1e-7);
        // q = 3: diagonal angles vanish, the six off-diagonal ones are right angles.
        let r = sm_pca(&s.as_view(), &s.as_view(), 3, PcaNormalization::MeanOverQ).unwrap();
        assert!((r.value - 6.0 * FRAC_PI_2 / 3.0).abs() < 1e-7, "{}", r.value);
    }

    #[test]
    fn pca_orthogonal_directions() {
        let xs = Matrix::from_fn(20, 2, |r, c| if c == 0 { r as f64 } else { 0.01 * ((r % 2) as f64) });
        let ys = Matrix::from_fn(20, 2, |r, c| if c == 1 { r as f64 } else { 0.01 * ((r % 2) as f64) });
        let r = sm_pca(&xs.as_view(), &ys.as_view(), 1, PcaNormalization::MeanOverQ).unwrap();
        assert!((r.value - FRAC_PI_2).abs() < 1e-3, "{}", r.value);
    }

    #[test]
    fn pca_fallbacks() {
        let flat = Matrix::from_element(10, 3, 2.0);
        let s = random(10, 3, 4);
        let r = sm_pca(&flat.as_view(), &s.as_view(), 2, PcaNormalization::MeanOverQ).unwrap();
        assert!(r.zero_variance);
        assert!((r.value - 2.0 * FRAC_PI_2).abs() < 1e-12);
        let r = sm_pca(&flat.as_view(), &s.as_view(), 2, PcaNormalization::MeanOverQSquared).unwrap();
        assert!((r.value - FRAC_PI_2).abs() < 1e-12);
        // Two frames have rank one after centering.
        let short = random(2, 3, 5);
        let r = sm_pca(&short.as_view(), &s.as_view(), 3, PcaNormalization::MeanOverQ).unwrap();
        assert!(r.reduced && r.components == 1);
        assert!(sm_pca(&s.as_view(), &s.as_view(), 0, PcaNormalization::MeanOverQ).is_err());
    }

    #[test]
    fn da_closed_form() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]);
        let b = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(sm_da(&a.as_view(), &b.as_view()).unwrap(), 5.0);
        assert_eq!(sm_da(&b.as_view(), &b.as_view()).unwrap(), 0.0);
        assert!(sm_da(&a.as_view(), &Matrix::zeros(1, 3).as_view()).is_err());
    }

    #[test]
    fn dtw_single_cell() {
        let r = sm_dtw(&col(&[0.0]).as_view(), &col(&[3.0]).as_view()).unwrap();
        assert_eq!(r.value, 3f64.sqrt());
        assert_eq!(r.path, vec![(0, 0)]);
    }

    #[test]
    fn dtw_identity_takes_the_diagonal() {
        let s = random(30, 3, 9);
        let r = sm_dtw(&s.as_view(), &s.as_view()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.path, (0..30).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn dtw_subsamples_long_segments() {
        let a = random(25, 1, 1);
        let b = random(9, 1, 2);
        let r = sm_dtw_capped(&a.as_view(), &b.as_view(), 10).unwrap();
        assert!(r.subsampled);
        assert!(r.path.iter().all(|&(i, _)| i % 3 == 0));
        assert_eq!(r.path.last(), Some(&(24, 8)));
        assert!(!sm_dtw(&a.as_view(), &b.as_view()).unwrap().subsampled);
        assert!(sm_dtw(&Matrix::zeros(0, 1).as_view(), &b.as_view()).is_err());
    }

    #[test]
    fn mi_of_a_segment_with_itself_is_its_entropy() {
        let s = random(300, 2, 7);
        let r = sm_mi(&s.as_view(), &s.as_view(), 16).unwrap();
        assert_eq!(r.value, r.h_a);
        assert!(r.h_a > 0.0);
        assert!(sm_mi(&s.as_view(), &s.as_view(), 1).is_err());
    }

    #[test]
    fn mi_of_independent_noise_vanishes() {
        let a = random(2000, 1, 100);
        let b = random(2000, 1, 200);
        let r = sm_mi(&a.as_view(), &b.as_view(), 16).unwrap();
        assert!(r.value < 0.1, "{}", r.value);
    }

    #[test]
    fn mi_of_invertible_map_recovers_entropy() {
        // Channel 1 is a shuffle of channel 0, so both share one value set and
        // the shared edges; swapping channels is then a bijection on symbols.
        let a0 = random(400, 1, 13);
        let mut order: Vec<usize> = (0..400).collect();
        order.reverse();
        order.rotate_left(137);
        let a = Matrix::from_fn(400, 2, |r, c| if c == 0 { a0[(r, 0)] } else { a0[(order[r], 0)] });
        let b = Matrix::from_fn(400, 2, |r, c| a[(r, 1 - c)]);
        let r = sm_mi(&a.as_view(), &b.as_view(), 16).unwrap();
        assert!((r.value - r.h_a).abs() < 1e-9, "{} vs {}", r.value, r.h_a);

        // A non-affine monotone map moves values across the shared edges, so
        // the estimate falls short of H(Sa) but stays far above independence.
        let c = Matrix::from_fn(400, 2, |r, c| {
            let v = a[(r, 1 - c)];
            v.powi(3) + 2.0 * v
        });
        let r = sm_mi(&a.as_view(), &c.as_view(), 16).unwrap();
        assert!(r.value > 0.75 * r.h_a, "{} vs {}", r.value, r.h_a);
    }

    #[test]
    fn resampling_keeps_endpoints() {
        assert_eq!(resample_indices(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(resample_indices(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(resample_indices(5, 1), vec![0]);
    }
}
