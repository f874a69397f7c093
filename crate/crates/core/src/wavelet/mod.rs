//! Orthogonal discrete wavelet transform over the Daubechies family and the
//! low-pass denoising filter applied to kinematic and visual channels.
//!
//! Boundaries use half-point symmetric extension (`x[-1] = x[0]`,
//! `x[n] = x[n-1]`). A level with input length `n` and a `2N`-tap filter
//! produces `(n + 2N - 1) / 2` approximation and detail coefficients; the
//! input length of every level is kept in the pyramid so reconstruction can
//! drop the padding exactly.

mod daubechies;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Matrix;

/// Filter bank of one orthogonal Daubechies wavelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WaveletBasis {
    order: usize,
    dec_lo: Vec<f64>,
    dec_hi: Vec<f64>,
    rec_lo: Vec<f64>,
    rec_hi: Vec<f64>,
}

impl WaveletBasis {
    /// `dbN` for `N` in `1..=10`.
    pub fn daubechies(order: usize) -> Result<Self> {
        let lo = daubechies::lowpass(order).ok_or_else(|| {
            Error::Config(format!("unsupported Daubechies order {order}; expected 1..=10"))
        })?;
        let taps = lo.len();
        let dec_lo = lo.to_vec();
        // Quadrature mirror: g[j] = (-1)^j h[F-1-j].
        let dec_hi: Vec<f64> = (0..taps)
            .map(|j| if j % 2 == 0 { lo[taps - 1 - j] } else { -lo[taps - 1 - j] })
            .collect();
        let rec_lo = dec_lo.iter().rev().copied().collect();
        let rec_hi = dec_hi.iter().rev().copied().collect();
        Ok(Self {
            order,
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        })
    }

    pub fn db10() -> Self {
        Self::daubechies(10).expect("db10 is embedded")
    }

    pub fn name(&self) -> String {
        format!("db{}", self.order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn taps(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn dec_lo(&self) -> &[f64] {
        &self.dec_lo
    }

    pub fn dec_hi(&self) -> &[f64] {
        &self.dec_hi
    }

    pub fn rec_lo(&self) -> &[f64] {
        &self.rec_lo
    }

    pub fn rec_hi(&self) -> &[f64] {
        &self.rec_hi
    }

    /// Deepest decomposition a signal of `len` samples supports.
    pub fn max_level(&self, len: usize) -> usize {
        let span = self.taps() - 1;
        if span == 0 || len < span {
            return 0;
        }
        let mut level = 0;
        while (len >> (level + 1)) >= span {
            level += 1;
        }
        level
    }
}

impl Default for WaveletBasis {
    fn default() -> Self {
        Self::db10()
    }
}

impl fmt::Display for WaveletBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "db{}", self.order)
    }
}

impl TryFrom<String> for WaveletBasis {
    type Error = Error;

    fn try_from(name: String) -> Result<Self> {
        name.parse()
    }
}

impl From<WaveletBasis> for String {
    fn from(basis: WaveletBasis) -> String {
        basis.name()
    }
}

impl std::str::FromStr for WaveletBasis {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let order = name
            .strip_prefix("db")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown wavelet `{name}`; expected db1..db10")))?;
        Self::daubechies(order)
    }
}

/// Multi-level coefficients. `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPyramid {
    pub approximation: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    /// Input length of each level; `lengths[0]` is the original signal length.
    pub lengths: Vec<usize>,
}

impl CoefficientPyramid {
    /// All-zero pyramid with the shapes `dwt_multilevel` would produce.
    pub fn zeros(len: usize, basis: &WaveletBasis, levels: usize) -> Self {
        let mut lengths = Vec::with_capacity(levels);
        let mut details = Vec::with_capacity(levels);
        let mut n = len;
        for _ in 0..levels {
            lengths.push(n);
            n = coefficient_len(n, basis.taps());
            details.push(vec![0.0; n]);
        }
        Self {
            approximation: vec![0.0; n],
            details,
            lengths,
        }
    }

    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Total number of stored coefficients.
    pub fn coefficient_count(&self) -> usize {
        self.approximation.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }
}

fn coefficient_len(input_len: usize, taps: usize) -> usize {
    (input_len + taps - 1) / 2
}

#[inline]
fn symmetric_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let i = i.rem_euclid(period) as usize;
    if i < n {
        i
    } else {
        2 * n - 1 - i
    }
}

/// One analysis step: `a[k] = sum_j lo[j] x[2k + 1 - j]` over the extended signal.
fn analysis_step(signal: &[f64], basis: &WaveletBasis) -> (Vec<f64>, Vec<f64>) {
    let n = signal.len();
    let taps = basis.taps();
    let out_len = coefficient_len(n, taps);
    let mut approx = Vec::with_capacity(out_len);
    let mut detail = Vec::with_capacity(out_len);
    for k in 0..out_len {
        let centre = 2 * k as isize + 1;
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..taps {
            let x = signal[symmetric_index(centre - j as isize, n)];
            a += basis.dec_lo[j] * x;
            d += basis.dec_hi[j] * x;
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

/// Transpose of `analysis_step`, restricted to the original `len` samples.
fn synthesis_step(approx: &[f64], detail: &[f64], len: usize, basis: &WaveletBasis) -> Vec<f64> {
    let taps = basis.taps();
    let mut out = vec![0.0; len];
    for (m, slot) in out.iter_mut().enumerate() {
        // Contributions come from k with 0 <= 2k + 1 - m < taps.
        let k_lo = m.saturating_sub(1).div_ceil(2);
        let k_hi = (m + taps - 1) / 2;
        let mut acc = 0.0;
        for k in k_lo..=k_hi.min(approx.len().saturating_sub(1)) {
            let j = 2 * k + 1;
            if j < m || j - m >= taps {
                continue;
            }
            let r = taps - 1 - (j - m);
            acc += approx[k] * basis.rec_lo[r] + detail[k] * basis.rec_hi[r];
        }
        *slot = acc;
    }
    out
}

/// Decomposes `signal` into `levels` detail bands plus the deepest approximation.
pub fn dwt_multilevel(signal: &[f64], basis: &WaveletBasis, levels: usize) -> Result<CoefficientPyramid> {
    if signal.is_empty() {
        return Err(Error::Empty("signal"));
    }
    if levels == 0 {
        return Err(Error::Config("levels must be at least 1".into()));
    }
    if signal.len() < basis.taps() || levels > basis.max_level(signal.len()) {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            levels,
            taps: basis.taps(),
        });
    }
    let mut lengths = Vec::with_capacity(levels);
    let mut details = Vec::with_capacity(levels);
    let mut approx = signal.to_vec();
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = analysis_step(&approx, basis);
        details.push(d);
        approx = a;
    }
    Ok(CoefficientPyramid {
        approximation: approx,
        details,
        lengths,
    })
}

/// Inverts `dwt_multilevel`, returning the first `original_length` samples.
pub fn idwt_multilevel(
    pyramid: &CoefficientPyramid,
    basis: &WaveletBasis,
    original_length: usize,
) -> Result<Vec<f64>> {
    let levels = pyramid.levels();
    if levels == 0 || pyramid.lengths.len() != levels {
        return Err(Error::DimensionMismatch(format!(
            "pyramid has {levels} detail bands and {} level lengths",
            pyramid.lengths.len()
        )));
    }
    for (level, (&n, d)) in pyramid.lengths.iter().zip(&pyramid.details).enumerate() {
        let expected = coefficient_len(n, basis.taps());
        if d.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "level {} detail band has {} coefficients, expected {expected}",
                level + 1,
                d.len()
            )));
        }
        let next = pyramid.lengths.get(level + 1).copied();
        if let Some(next) = next {
            if next != expected {
                return Err(Error::DimensionMismatch(format!(
                    "level {} input length {next} does not match level {} output {expected}",
                    level + 2,
                    level + 1
                )));
            }
        }
    }
    if pyramid.approximation.len() != pyramid.details[levels - 1].len() {
        return Err(Error::DimensionMismatch(format!(
            "approximation has {} coefficients, deepest detail band {}",
            pyramid.approximation.len(),
            pyramid.details[levels - 1].len()
        )));
    }
    if original_length > pyramid.lengths[0] {
        return Err(Error::DimensionMismatch(format!(
            "requested {original_length} samples from a pyramid of a {}-sample signal",
            pyramid.lengths[0]
        )));
    }
    let mut approx = pyramid.approximation.clone();
    for level in (0..levels).rev() {
        approx = synthesis_step(&approx, &pyramid.details[level], pyramid.lengths[level], basis);
    }
    approx.truncate(original_length);
    Ok(approx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMode {
    /// Reconstruct from the deepest approximation only.
    #[default]
    ZeroDetails,
    /// Soft-threshold every detail band.
    SoftThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `sigma * sqrt(2 ln n)` with `sigma = median(|d1|) / 0.6745`.
    #[default]
    Universal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    #[serde(rename = "wavelet")]
    pub basis: WaveletBasis,
    pub levels: usize,
    pub mode: DenoiseMode,
    pub threshold_rule: ThresholdRule,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            basis: WaveletBasis::db10(),
            levels: 5,
            mode: DenoiseMode::ZeroDetails,
            threshold_rule: ThresholdRule::Universal,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("denoise levels must be at least 1".into()));
        }
        Ok(())
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Wavelet denoising of one channel. Output length equals input length.
///
/// When the signal cannot support `cfg.levels` levels, the deepest feasible
/// depth is used instead (with a warning); a signal too short for even one
/// level is returned unchanged.
pub fn denoise(signal: &[f64], cfg: &DenoiseConfig) -> Result<Vec<f64>> {
    denoise_channel(signal, cfg, true)
}

fn denoise_channel(signal: &[f64], cfg: &DenoiseConfig, warn: bool) -> Result<Vec<f64>> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(Error::Empty("signal"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("signal contains NaN/Inf".into()));
    }
    let feasible = if signal.len() < cfg.basis.taps() {
        0
    } else {
        cfg.basis.max_level(signal.len())
    };
    let levels = cfg.levels.min(feasible);
    if warn && levels < cfg.levels {
        log::warn!(
            "{}-sample signal supports {levels} {} levels, {} requested; using {levels}",
            signal.len(),
            cfg.basis,
            cfg.levels
        );
    }
    if levels == 0 {
        return Ok(signal.to_vec());
    }
    let mut pyramid = dwt_multilevel(signal, &cfg.basis, levels)?;
    match cfg.mode {
        DenoiseMode::ZeroDetails => {
            for d in &mut pyramid.details {
                d.iter_mut().for_each(|c| *c = 0.0);
            }
        }
        DenoiseMode::SoftThreshold => {
            let ThresholdRule::Universal = cfg.threshold_rule;
            let sigma = median(pyramid.details[0].iter().map(|c| c.abs()).collect()) / 0.6745;
            let threshold = sigma * (2.0 * (signal.len() as f64).ln()).sqrt();
            for d in &mut pyramid.details {
                d.iter_mut().for_each(|c| *c = soft_threshold(*c, threshold));
            }
        }
    }
    idwt_multilevel(&pyramid, &cfg.basis, signal.len())
}

/// Applies [`denoise`] to every column independently; a depth warning is logged once per matrix.
pub fn denoise_matrix(data: &Matrix, cfg: &DenoiseConfig) -> Result<Matrix> {
    let columns: Vec<Vec<f64>> = (0..data.ncols())
        .into_par_iter()
        .map(|j| denoise_channel(data.column(j).as_slice(), cfg, j == 0))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(data.nrows(), data.ncols());
    for (j, col) in columns.iter().enumerate() {
        out.column_mut(j).copy_from_slice(col);
    }
    Ok(out)
}
