//! Full-covariance Gaussian mixtures fitted by EM, with BIC model selection.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Matrix;

/// EM run parameters shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmOptions {
    pub seed: u64,
    pub restarts: usize,
    /// Relative log-likelihood change that ends a run.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 5,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

impl EmOptions {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("em restarts must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config(format!("em tolerance must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// A fitted mixture. Covariances are stored row-major, `dim * dim` each, and
/// already include the `regularization * I` floor.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub n_samples: usize,
    pub regularization: f64,
    /// Log-likelihood after every E-step of the winning run.
    pub history: Vec<f64>,
    pub converged: bool,
    /// All samples were identical; the model is a single point mass with a floor covariance.
    pub degenerate: bool,
    chol: Vec<Vec<f64>>,
    log_dets: Vec<f64>,
}

/// Free parameters of a `k`-component full-covariance mixture in `dim` dimensions.
pub fn parameter_count(k: usize, dim: usize) -> usize {
    (k - 1) + k * dim + k * dim * (dim + 1) / 2
}

fn bic(log_likelihood: f64, k: usize, dim: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + parameter_count(k, dim) as f64 * (n as f64).ln()
}

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for p in 0..j {
                s -= l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// `log N(x | mean, L L^T)` given the Cholesky factor and its log-determinant.
fn log_density(x: &[f64], mean: &[f64], chol: &[f64], log_det: f64, scratch: &mut [f64]) -> f64 {
    let d = x.len();
    let mut maha = 0.0;
    for i in 0..d {
        let mut s = x[i] - mean[i];
        for p in 0..i {
            s -= chol[i * d + p] * scratch[p];
        }
        let y = s / chol[i * d + i];
        scratch[i] = y;
        maha += y * y;
    }
    -0.5 * (d as f64 * (2.0 * PI).ln() + log_det + maha)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-major copy of the samples.
struct Samples {
    values: Vec<f64>,
    n: usize,
    d: usize,
}

impl Samples {
    fn from_matrix(m: &Matrix) -> Self {
        let (n, d) = m.shape();
        let mut values = Vec::with_capacity(n * d);
        for r in 0..n {
            values.extend(m.row(r).iter());
        }
        Self { values, n, d }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for i in 0..self.n {
            for (m, x) in mean.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n as f64);
        mean
    }

    fn mean_variance(&self) -> f64 {
        let mean = self.mean();
        let mut total = 0.0;
        for i in 0..self.n {
            for (x, m) in self.row(i).iter().zip(&mean) {
                total += (x - m).powi(2);
            }
        }
        total / (self.n * self.d) as f64
    }
}

#[derive(Clone)]
struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    log_dets: Vec<f64>,
}

impl Params {
    fn factorize(&mut self) -> Result<()> {
        let d = self.means.first().map(Vec::len).unwrap_or(0);
        self.chol.clear();
        self.log_dets.clear();
        for cov in &self.covariances {
            let l = cholesky(cov, d).ok_or_else(|| {
                Error::OutOfRange("covariance lost positive definiteness during EM".into())
            })?;
            self.log_dets.push(2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>());
            self.chol.push(l);
        }
        Ok(())
    }

    /// Fills `resp` with normalized responsibilities and returns the log-likelihood.
    fn e_step(&self, data: &Samples, resp: &mut [f64]) -> f64 {
        let k = self.weights.len();
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut scratch = vec![0.0; data.d];
        let mut total = 0.0;
        for i in 0..data.n {
            let row = &mut resp[i * k..(i + 1) * k];
            for c in 0..k {
                row[c] = log_w[c]
                    + log_density(data.row(i), &self.means[c], &self.chol[c], self.log_dets[c], &mut scratch);
            }
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|r| *r = (*r - lse).exp());
            total += lse;
        }
        total
    }

    fn m_step(data: &Samples, resp: &[f64], k: usize, reg: f64) -> Self {
        let (n, d) = (data.n, data.d);
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covariances = Vec::with_capacity(k);
        let global_mean = data.mean();
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            let (mean, mut cov) = if nk > 1e-10 {
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    let r = resp[i * k + c];
                    for (m, x) in mean.iter_mut().zip(data.row(i)) {
                        *m += r * x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nk);
                let mut cov = vec![0.0; d * d];
                let mut diff = vec![0.0; d];
                for i in 0..n {
                    let r = resp[i * k + c];
                    if r == 0.0 {
                        continue;
                    }
                    for (df, (x, m)) in diff.iter_mut().zip(data.row(i).iter().zip(&mean)) {
                        *df = x - m;
                    }
                    for a in 0..d {
                        let ra = r * diff[a];
                        for b in 0..=a {
                            cov[a * d + b] += ra * diff[b];
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..=a {
                        cov[a * d + b] /= nk;
                        cov[b * d + a] = cov[a * d + b];
                    }
                }
                (mean, cov)
            } else {
                // Empty component: park it on the global mean with unit-scale covariance.
                let mut cov = vec![0.0; d * d];
                for a in 0..d {
                    cov[a * d + a] = 1.0;
                }
                (global_mean.clone(), cov)
            };
            for a in 0..d {
                cov[a * d + a] += reg;
            }
            weights.push(nk.max(1e-300) / n as f64);
            means.push(mean);
            covariances.push(cov);
        }
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        Params {
            weights,
            means,
            covariances,
            chol: Vec::new(),
            log_dets: Vec::new(),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding; returns the chosen sample indices.
fn kmeans_plus_plus(data: &Samples, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers = vec![rng.random_range(0..data.n)];
    let mut dist: Vec<f64> = (0..data.n)
        .map(|i| squared_distance(data.row(i), data.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = data.n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..data.n)
        };
        centers.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), data.row(next)));
        }
    }
    centers
}

struct RunResult {
    params: Params,
    log_likelihood: f64,
    history: Vec<f64>,
    converged: bool,
}

fn run_em(data: &Samples, k: usize, reg: f64, opts: &EmOptions, restart: usize) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(restart as u64);
    let centers = kmeans_plus_plus(data, k, &mut rng);
    let mut resp = vec![0.0; data.n * k];
    for i in 0..data.n {
        let best = (0..k)
            .min_by(|&a, &b| {
                squared_distance(data.row(i), data.row(centers[a]))
                    .total_cmp(&squared_distance(data.row(i), data.row(centers[b])))
            })
            .expect("k >= 1");
        resp[i * k + best] = 1.0;
    }
    let mut params = Params::m_step(data, &resp, k, reg);
    params.factorize()?;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut previous: Option<Params> = None;
    loop {
        let ll = params.e_step(data, &mut resp);
        if let Some(&prev) = history.last() {
            // The covariance floor makes the M-step an approximate maximizer, so a
            // step can lose a sliver of likelihood; keep the better parameters.
            if ll < prev {
                if let Some(p) = previous.take() {
                    params = p;
                }
                converged = true;
                break;
            }
            if ll - prev <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if history.len() > opts.max_iter {
            break;
        }
        let next = Params::m_step(data, &resp, k, reg);
        previous = Some(std::mem::replace(&mut params, next));
        params.factorize()?;
    }
    Ok(RunResult {
        log_likelihood: *history.last().expect("at least one E-step"),
        params,
        history,
        converged,
    })
}

/// Fits a `k`-component mixture; the best of `opts.restarts` k-means++ runs wins.
pub fn fit_gmm(data: &Matrix, k: usize, opts: &EmOptions) -> Result<GmmModel> {
    opts.validate()?;
    let (n, d) = data.shape();
    if d == 0 {
        return Err(Error::DimensionMismatch("data has no columns".into()));
    }
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if n <= k {
        return Err(Error::TooFewSamples { samples: n, components: k });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("data contains NaN/Inf".into()));
    }
    let samples = Samples::from_matrix(data);
    let mean_var = samples.mean_variance();
    if mean_var <= 1e-300 {
        return Ok(degenerate_model(&samples));
    }
    let reg = 1e-6 * mean_var;

    let runs: Vec<Result<RunResult>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_em(&samples, k, reg, opts, r))
        .collect();
    let mut best: Option<RunResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
            best = Some(run);
        }
    }
    let best = best.expect("restarts >= 1");
    let params = best.params;
    Ok(GmmModel {
        k,
        dim: d,
        weights: params.weights,
        means: params.means,
        covariances: params.covariances,
        log_likelihood: best.log_likelihood,
        bic: bic(best.log_likelihood, k, d, n),
        n_samples: n,
        regularization: reg,
        history: best.history,
        converged: best.converged,
        degenerate: false,
        chol: params.chol,
        log_dets: params.log_dets,
    })
}

const DEGENERATE_FLOOR: f64 = 1e-6;

fn degenerate_model(samples: &Samples) -> GmmModel {
    let d = samples.d;
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        cov[a * d + a] = DEGENERATE_FLOOR;
    }
    let mut params = Params {
        weights: vec![1.0],
        means: vec![samples.row(0).to_vec()],
        covariances: vec![cov],
        chol: Vec::new(),
        log_dets: Vec::new(),
    };
    params.factorize().expect("floor covariance is SPD");
    let mut resp = vec![0.0; samples.n];
    let ll = params.e_step(samples, &mut resp);
    GmmModel {
        k: 1,
        dim: d,
        weights: params.weights,
        means: params.means,
        covariances: params.covariances,
        log_likelihood: ll,
        bic: bic(ll, 1, d, samples.n),
        n_samples: samples.n,
        regularization: DEGENERATE_FLOOR,
        history: vec![ll],
        converged: true,
        degenerate: true,
        chol: params.chol,
        log_dets: params.log_dets,
    }
}

impl GmmModel {
    /// Per-sample component posteriors, row-major `n * k`.
    pub fn responsibilities(&self, data: &Matrix) -> Result<Vec<f64>> {
        if data.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "model has {} dimensions, data {}",
                self.dim,
                data.ncols()
            )));
        }
        let samples = Samples::from_matrix(data);
        let params = Params {
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: Vec::new(),
            chol: self.chol.clone(),
            log_dets: self.log_dets.clone(),
        };
        let mut resp = vec![0.0; samples.n * self.k];
        params.e_step(&samples, &mut resp);
        Ok(resp)
    }

    /// Most probable component per sample; ties go to the lower index.
    pub fn predict(&self, data: &Matrix) -> Result<Vec<usize>> {
        let resp = self.responsibilities(data)?;
        Ok(resp
            .chunks(self.k)
            .map(|row| {
                let mut best = 0;
                for (c, &r) in row.iter().enumerate() {
                    if r > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    /// Total log-likelihood of `data` under the model.
    pub fn score(&self, data: &Matrix) -> Result<f64> {
        let samples = Samples::from_matrix(data);
        let params = Params {
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: Vec::new(),
            chol: self.chol.clone(),
            log_dets: self.log_dets.clone(),
        };
        let mut resp = vec![0.0; samples.n * self.k];
        Ok(params.e_step(&samples, &mut resp))
    }
}

/// Fits every `k` in `k_range` and keeps the lowest BIC; ties favour the smaller `k`.
pub fn select_gmm(data: &Matrix, k_range: RangeInclusive<usize>, opts: &EmOptions) -> Result<GmmModel> {
    if k_range.is_empty() {
        return Err(Error::Config("k range is empty".into()));
    }
    let mut best: Option<GmmModel> = None;
    for k in k_range {
        let model = fit_gmm(data, k, opts)?;
        if best.as_ref().is_none_or(|b| model.bic < b.bic) {
            best = Some(model);
        }
    }
    Ok(best.expect("non-empty range"))
}
