//! Comparison estimators: inverse-distance KNN, ordinary kriging with an
//! exponential variogram, a differenced AR(1) forecaster, and a scalar
//! random-walk Kalman filter.
//!
//! Spatial baselines see the interval's observations as `(segment, value)`
//! pairs so the evaluation harness controls exactly what each method may
//! read.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::Point;
use crate::speed::SpeedTable;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no valued neighbor available")]
    NoNeighbors,
    #[error("kriging system is singular")]
    SingularSystem,
    #[error("not enough populated history")]
    InsufficientHistory,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub knn_k: usize,
    /// Kriging solves against at most this many nearest observations.
    pub kriging_max_neighbors: usize,
    /// Random-walk process variance, (m/s)^2.
    pub kf_process_var: f64,
    /// Observation variance, (m/s)^2.
    pub kf_obs_var: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            knn_k: 4,
            kriging_max_neighbors: 16,
            kf_process_var: 0.5,
            kf_obs_var: 1.0,
        }
    }
}

/// Inverse-distance-weighted mean of the `k` nearest valued segments
/// (straight-line between central points). Fewer than `k` observations use
/// them all; a coincident observation is returned directly.
pub fn knn_estimate(
    query: Point,
    observations: &[(usize, f64)],
    cps: &[Point],
    k: usize,
) -> Result<f64, BaselineError> {
    let (value, _) = knn_solve(query, observations, cps, k)?;
    Ok(value.max(0.0))
}

pub(crate) fn knn_solve(
    query: Point,
    observations: &[(usize, f64)],
    cps: &[Point],
    k: usize,
) -> Result<(f64, Vec<f64>), BaselineError> {
    if observations.is_empty() {
        return Err(BaselineError::NoNeighbors);
    }
    let mut ranked: Vec<(f64, usize, f64)> = observations
        .iter()
        .map(|&(seg, v)| (query.dist(&cps[seg]), seg, v))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(k.max(1));
    if ranked[0].0 < 1e-9 {
        return Ok((ranked[0].2, vec![1.0]));
    }
    let raw: Vec<f64> = ranked.iter().map(|&(d, _, _)| 1.0 / d).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let value = ranked
        .iter()
        .zip(&weights)
        .map(|(&(_, _, v), &w)| v * w)
        .sum();
    Ok((value, weights))
}

/// Exponential semivariogram `gamma(h) = nugget + psill (1 - exp(-3h/range))`
/// with the exact-interpolation convention `gamma(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variogram {
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl Variogram {
    pub fn at(&self, h: f64) -> f64 {
        if h < 1e-9 {
            0.0
        } else {
            self.nugget + (self.sill - self.nugget) * (1.0 - (-3.0 * h / self.range).exp())
        }
    }
}

/// Fit the exponential model to distance-binned empirical semivariances:
/// a grid over the range parameter with a non-negative linear solve for
/// nugget and partial sill at each candidate.
pub fn fit_variogram(observations: &[(usize, f64)], cps: &[Point]) -> Variogram {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut max_d: f64 = 0.0;
    for (i, &(si, vi)) in observations.iter().enumerate() {
        for &(sj, vj) in &observations[i + 1..] {
            let d = cps[si].dist(&cps[sj]);
            if d > 1e-9 {
                pairs.push((d, 0.5 * (vi - vj) * (vi - vj)));
                max_d = max_d.max(d);
            }
        }
    }
    if pairs.is_empty() || max_d == 0.0 {
        return Variogram {
            nugget: 0.0,
            sill: 1e-9,
            range: 1.0,
        };
    }

    let n_bins = 12usize;
    let mut bins = vec![(0.0f64, 0.0f64, 0usize); n_bins];
    for (d, g) in &pairs {
        let b = (((d / max_d) * n_bins as f64) as usize).min(n_bins - 1);
        bins[b].0 += d;
        bins[b].1 += g;
        bins[b].2 += 1;
    }
    let filled: Vec<(f64, f64, f64)> = bins
        .iter()
        .filter(|(_, _, c)| *c > 0)
        .map(|&(d, g, c)| (d / c as f64, g / c as f64, c as f64))
        .collect();

    let overall_var = filled.iter().map(|&(_, g, c)| g * c).sum::<f64>()
        / filled.iter().map(|&(_, _, c)| c).sum::<f64>();
    let mut best = Variogram {
        nugget: 0.0,
        sill: overall_var.max(1e-9),
        range: max_d,
    };
    let mut best_sse = f64::INFINITY;
    for step in 1..=24 {
        let range = max_d * f64::from(step) / 12.0;
        // Weighted least squares for (nugget, psill) on the model basis.
        let (mut s_ww, mut s_wb, mut s_bb, mut s_wg, mut s_bg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(d, g, c) in &filled {
            let basis = 1.0 - (-3.0 * d / range).exp();
            s_ww += c;
            s_wb += c * basis;
            s_bb += c * basis * basis;
            s_wg += c * g;
            s_bg += c * basis * g;
        }
        let det = s_ww * s_bb - s_wb * s_wb;
        let (nugget, psill) = if det.abs() < 1e-12 {
            (0.0, if s_bb > 0.0 { s_bg / s_bb } else { 0.0 })
        } else {
            (
                (s_wg * s_bb - s_bg * s_wb) / det,
                (s_ww * s_bg - s_wb * s_wg) / det,
            )
        };
        let nugget = nugget.max(0.0);
        let psill = psill.max(1e-9);
        let sse: f64 = filled
            .iter()
            .map(|&(d, g, c)| {
                let model = nugget + psill * (1.0 - (-3.0 * d / range).exp());
                c * (model - g) * (model - g)
            })
            .sum();
        if sse < best_sse {
            best_sse = sse;
            best = Variogram {
                nugget,
                sill: nugget + psill,
                range,
            };
        }
    }
    best
}

/// Ordinary kriging at `query` from the nearest observations, with the
/// unbiasedness constraint. Falls back to KNN when the system is singular.
pub fn kriging_estimate(
    query: Point,
    observations: &[(usize, f64)],
    cps: &[Point],
    config: &BaselineConfig,
) -> Result<f64, BaselineError> {
    if observations.len() < 3 {
        return Err(BaselineError::NoNeighbors);
    }
    let variogram = fit_variogram(observations, cps);
    let mut ranked: Vec<(f64, usize, f64)> = observations
        .iter()
        .map(|&(seg, v)| (query.dist(&cps[seg]), seg, v))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(config.kriging_max_neighbors.max(3));
    let points: Vec<(Point, f64)> = ranked
        .iter()
        .map(|&(_, seg, v)| (cps[seg], v))
        .collect();
    match kriging_solve(query, &points, &variogram) {
        Ok((value, _)) => Ok(value.max(0.0)),
        Err(BaselineError::SingularSystem) => {
            knn_estimate(query, observations, cps, config.knn_k)
        }
        Err(e) => Err(e),
    }
}

/// Solve the ordinary-kriging system for the given variogram; returns the
/// estimate and the observation weights.
pub fn kriging_solve(
    query: Point,
    points: &[(Point, f64)],
    variogram: &Variogram,
) -> Result<(f64, Vec<f64>), BaselineError> {
    let m = points.len();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = variogram.at(points[i].0.dist(&points[j].0));
        }
        a[(i, m)] = 1.0;
        a[(m, i)] = 1.0;
    }
    let mut b = DMatrix::zeros(m + 1, 1);
    for i in 0..m {
        b[(i, 0)] = variogram.at(query.dist(&points[i].0));
    }
    b[(m, 0)] = 1.0;

    let solution = a.lu().solve(&b).ok_or(BaselineError::SingularSystem)?;
    let weights: Vec<f64> = (0..m).map(|i| solution[(i, 0)]).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(BaselineError::SingularSystem);
    }
    let value = points
        .iter()
        .zip(&weights)
        .map(|(&(_, v), &w)| v * w)
        .sum();
    Ok((value, weights))
}

/// Differenced AR(1) forecast of `X_r(n)` from the segment's own past
/// `w - 1` values: fit the lag-1 regression on first differences, step once,
/// un-difference, clamp at zero. Degenerate difference series fall back to
/// the mean difference (which also covers constant series and linear ramps).
pub fn arima_estimate(
    r_idx: usize,
    n: u32,
    table: &SpeedTable,
    w: u32,
) -> Result<f64, BaselineError> {
    if w < 3 || i64::from(n) - i64::from(w) + 1 < 1 {
        return Err(BaselineError::InsufficientHistory);
    }
    let window = table
        .slice(r_idx, n - w + 1, n - 1)
        .map_err(|_| BaselineError::InsufficientHistory)?;
    let diffs: Vec<f64> = window.windows(2).map(|p| p[1] - p[0]).collect();
    let last = *window.last().expect("w >= 3");
    let last_diff = *diffs.last().expect("w >= 3 gives a difference");

    let step = ar1_step(&diffs, last_diff);
    Ok((last + step).max(0.0))
}

/// One-step AR(1)-with-intercept forecast of the next difference.
fn ar1_step(diffs: &[f64], last_diff: f64) -> f64 {
    if diffs.len() < 3 {
        return diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
    }
    let x = &diffs[..diffs.len() - 1];
    let y = &diffs[1..];
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return diffs.iter().sum::<f64>() / diffs.len() as f64;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let phi = sxy / sxx;
    let c = my - phi * mx;
    c + phi * last_diff
}

/// Scalar random-walk Kalman filter over `X_r(1..=n)`; returns the one-step
/// prior estimate for interval `n + 1` (identical to the posterior at `n`
/// under a random walk).
pub fn kalman_predict(
    r_idx: usize,
    n: u32,
    table: &SpeedTable,
    q: f64,
    obs_var: f64,
) -> Result<f64, BaselineError> {
    let mut state: Option<(f64, f64)> = None;
    for j in 1..=n {
        let Some(z) = table.speed(r_idx, j) else {
            continue;
        };
        state = Some(match state {
            None => (z, obs_var),
            Some((x, p)) => {
                let prior_p = p + q;
                let gain = prior_p / (prior_p + obs_var);
                (x + gain * (z - x), (1.0 - gain) * prior_p)
            }
        });
    }
    state
        .map(|(x, _)| x.max(0.0))
        .ok_or(BaselineError::InsufficientHistory)
}
