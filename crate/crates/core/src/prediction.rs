//! One-step speed prediction: regress the target on each positively lagged
//! upstream contributor and blend the per-contributor forecasts with
//! determination-coefficient weights.

use thiserror::Error;

use crate::correlation::{c_now, LagTable};
use crate::roadnet::{RoadNet, UpstreamRoad};
use crate::speed::SpeedTable;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("no contributor with positive lag and usable correlation")]
    EmptyR0,
    #[error("predictor series has zero variance")]
    DegeneratePredictor,
}

/// Least-squares line `target = slope * contributor + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
}

/// Contributor admitted to the prediction set: positive lag and a defined
/// current-window correlation given the now-known `X_r(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionContributor {
    pub u_idx: usize,
    pub k: u32,
    pub c_now: f64,
}

/// The set `R_0`: upstream contributors whose lag to `r` is at least one
/// interval, with their current correlations. Sorted by segment index so
/// downstream sums do not depend on enumeration order.
pub fn positive_lag_contributors(
    r_idx: usize,
    n: u32,
    w: u32,
    upstream: &[UpstreamRoad],
    net: &RoadNet,
    table: &SpeedTable,
    lags: &LagTable,
) -> Result<Vec<PredictionContributor>, PredictError> {
    let x_r_now = table
        .speed(r_idx, n)
        .expect("interval n is fully populated before prediction");
    let mut out = Vec::new();
    for up in upstream {
        let u_idx = net.index_of(up.id).expect("neighborhood id");
        let Some(lag) = lags.get(u_idx, r_idx) else {
            continue;
        };
        if lag.k < 1 {
            continue;
        }
        let Ok(c) = c_now(u_idx, r_idx, n, w, lag.k, table, x_r_now) else {
            continue;
        };
        out.push(PredictionContributor {
            u_idx,
            k: lag.k,
            c_now: c,
        });
    }
    if out.is_empty() {
        return Err(PredictError::EmptyR0);
    }
    out.sort_by_key(|c| c.u_idx);
    Ok(out)
}

/// Ordinary least squares of `X_r(j)` on `X_u(j - k)` over the last `w`
/// aligned pairs (the same alignment the current-window correlation uses).
pub fn fit_regression(
    u_idx: usize,
    r_idx: usize,
    n: u32,
    w: u32,
    k: u32,
    table: &SpeedTable,
) -> Result<Regression, PredictError> {
    let lo = i64::from(n) - i64::from(k) - i64::from(w) + 1;
    if lo < 1 {
        return Err(PredictError::DegeneratePredictor);
    }
    let x = table
        .slice(u_idx, lo as u32, n - k)
        .map_err(|_| PredictError::DegeneratePredictor)?;
    let y = table
        .slice(r_idx, n - w + 1, n)
        .map_err(|_| PredictError::DegeneratePredictor)?;
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(PredictError::DegeneratePredictor);
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(Regression {
        slope,
        intercept: my - slope * mx,
    })
}

/// Determination-coefficient weights over the surviving contributors:
/// `c_now^2` normalized to sum to one.
pub fn determination_weights(contributors: &[(PredictionContributor, Regression)]) -> Vec<f64> {
    let total: f64 = contributors.iter().map(|(c, _)| c.c_now * c.c_now).sum();
    if total == 0.0 {
        // All correlations exactly zero: nothing distinguishes the
        // contributors, so weight them equally.
        let m = contributors.len() as f64;
        return vec![1.0 / m; contributors.len()];
    }
    contributors
        .iter()
        .map(|(c, _)| c.c_now * c.c_now / total)
        .collect()
}

/// Predict `X_r(n+1)` as the weighted sum of per-contributor regression
/// forecasts evaluated at `X_u(n - k + 1)`, clamped to `[0, v_max]`. Falls
/// back to persistence (`X_r(n)`) when no contributor survives.
pub fn predict_next(
    r_idx: usize,
    n: u32,
    w: u32,
    upstream: &[UpstreamRoad],
    net: &RoadNet,
    table: &SpeedTable,
    lags: &LagTable,
    v_max: f64,
) -> f64 {
    let persistence = table
        .speed(r_idx, n)
        .expect("interval n is fully populated before prediction");
    let Ok(candidates) = positive_lag_contributors(r_idx, n, w, upstream, net, table, lags)
    else {
        return persistence;
    };
    let mut fitted = Vec::with_capacity(candidates.len());
    for c in candidates {
        let Ok(reg) = fit_regression(c.u_idx, r_idx, n, w, c.k, table) else {
            continue;
        };
        if table.speed(c.u_idx, n - c.k + 1).is_none() {
            continue;
        }
        fitted.push((c, reg));
    }
    if fitted.is_empty() {
        return persistence;
    }
    let weights = determination_weights(&fitted);
    let mut prediction = 0.0;
    for ((c, reg), weight) in fitted.iter().zip(&weights) {
        let x = table
            .speed(c.u_idx, n - c.k + 1)
            .expect("checked during fitting");
        prediction += (reg.slope * x + reg.intercept) * weight;
    }
    prediction.clamp(0.0, v_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::LagEntry;
    use crate::roadnet::{Point, RoadSegment, SegmentId, VertexId};
    use crate::speed::Provenance;

    fn wiggly(j: i64) -> f64 {
        11.0 + (j as f64 * 0.53).sin() * 4.0 + (j as f64 * 0.21).cos()
    }

    fn seg(id: u64, x0: f64, entrance: u64, exit: u64) -> RoadSegment {
        RoadSegment {
            id: SegmentId(id),
            polyline: vec![Point::new(x0, 0.0), Point::new(x0 + 400.0, 0.0)],
            entrance: VertexId(entrance),
            exit: VertexId(exit),
            length: 0.0,
        }
    }

    /// Three upstream roads feeding r (index 3), with lags 0, 1, 2.
    fn fan_setup(n: u32) -> (RoadNet, SpeedTable, LagTable) {
        let net = RoadNet::from_segments(vec![
            RoadSegment {
                id: SegmentId(1),
                polyline: vec![Point::new(0.0, 400.0), Point::new(400.0, 0.0)],
                entrance: VertexId(10),
                exit: VertexId(0),
                length: 0.0,
            },
            RoadSegment {
                id: SegmentId(2),
                polyline: vec![Point::new(0.0, -400.0), Point::new(400.0, 0.0)],
                entrance: VertexId(11),
                exit: VertexId(0),
                length: 0.0,
            },
            RoadSegment {
                id: SegmentId(3),
                polyline: vec![Point::new(-400.0, 0.0), Point::new(400.0, 0.0)],
                entrance: VertexId(12),
                exit: VertexId(0),
                length: 0.0,
            },
            seg(4, 400.0, 0, 1),
        ])
        .unwrap();
        let mut table = SpeedTable::new(4, n);
        for j in 1..=n {
            let t = j as i64;
            table.set(0, j, wiggly(t), Provenance::Measured);
            table.set(1, j, wiggly(t + 2), Provenance::Measured);
            table.set(2, j, wiggly(t - 1) * 0.8 + 2.0, Provenance::Measured);
            table.set(3, j, wiggly(t - 2), Provenance::Measured);
        }
        let mut lags = LagTable::new(n);
        lags.insert(0, 3, LagEntry { k: 0, samples: 2 });
        lags.insert(1, 3, LagEntry { k: 1, samples: 2 });
        lags.insert(2, 3, LagEntry { k: 2, samples: 2 });
        (net, table, lags)
    }

    #[test]
    fn filters_to_positive_lags() {
        let (net, table, lags) = fan_setup(16);
        let upstream = net.upstream_sets(8000.0);
        let got =
            positive_lag_contributors(3, 16, 8, &upstream[3], &net, &table, &lags).unwrap();
        let ids: Vec<usize> = got.iter().map(|c| c.u_idx).collect();
        assert_eq!(ids, vec![1, 2]);

        // Brute-force recount: every upstream entry with k >= 1 and a
        // computable c_now must appear.
        let x_r = table.speed(3, 16).unwrap();
        let mut expect = Vec::new();
        for up in &upstream[3] {
            let u = net.index_of(up.id).unwrap();
            if let Some(l) = lags.get(u, 3) {
                if l.k >= 1 && c_now(u, 3, 16, 8, l.k, &table, x_r).is_ok() {
                    expect.push(u);
                }
            }
        }
        expect.sort_unstable();
        assert_eq!(ids, expect);
    }

    #[test]
    fn all_zero_lags_is_empty_r0() {
        let (net, table, mut lags) = fan_setup(16);
        lags.insert(1, 3, LagEntry { k: 0, samples: 2 });
        lags.insert(2, 3, LagEntry { k: 0, samples: 2 });
        let upstream = net.upstream_sets(8000.0);
        assert_eq!(
            positive_lag_contributors(3, 16, 8, &upstream[3], &net, &table, &lags),
            Err(PredictError::EmptyR0)
        );
    }

    #[test]
    fn exact_linear_relation_recovered() {
        let n = 16u32;
        let k = 1u32;
        let net = RoadNet::from_segments(vec![seg(1, 0.0, 0, 1), seg(2, 400.0, 1, 2)]).unwrap();
        let _ = &net;
        let mut table = SpeedTable::new(2, n);
        for j in 1..=n {
            let t = j as i64;
            table.set(0, j, wiggly(t), Provenance::Measured);
            table.set(1, j, 2.0 * wiggly(t - 1) + 3.0, Provenance::Measured);
        }
        let reg = fit_regression(0, 1, n, 8, k, &table).unwrap();
        assert!((reg.slope - 2.0).abs() < 1e-9);
        assert!((reg.intercept - 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_predictor_is_degenerate() {
        let n = 16u32;
        let mut table = SpeedTable::new(2, n);
        for j in 1..=n {
            table.set(0, j, 9.0, Provenance::Measured);
            table.set(1, j, wiggly(j as i64), Provenance::Measured);
        }
        assert_eq!(
            fit_regression(0, 1, n, 8, 1, &table),
            Err(PredictError::DegeneratePredictor)
        );
    }

    #[test]
    fn ols_matches_normal_equations_oracle() {
        let mut state = 0xABCDEFu64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(7);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let n = 20u32;
            let w = 10u32;
            let k = 2u32;
            let mut table = SpeedTable::new(2, n);
            for j in 1..=n {
                table.set(0, j, next() * 25.0, Provenance::Measured);
                table.set(1, j, next() * 25.0, Provenance::Measured);
            }
            let reg = fit_regression(0, 1, n, w, k, &table).unwrap();

            // Normal equations on the same aligned pairs.
            let xs: Vec<f64> = (n - k - w + 1..=n - k)
                .map(|j| table.speed(0, j).unwrap())
                .collect();
            let ys: Vec<f64> =
                (n - w + 1..=n).map(|j| table.speed(1, j).unwrap()).collect();
            let m = xs.len() as f64;
            let sx: f64 = xs.iter().sum();
            let sy: f64 = ys.iter().sum();
            let sxx: f64 = xs.iter().map(|v| v * v).sum();
            let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
            let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
            let intercept = (sy - slope * sx) / m;
            assert!((reg.slope - slope).abs() < 1e-9);
            assert!((reg.intercept - intercept).abs() < 1e-9);
        }
    }

    #[test]
    fn single_contributor_weight_is_one() {
        let (net, table, mut lags) = fan_setup(16);
        lags.insert(1, 3, LagEntry { k: 0, samples: 2 });
        // Only segment 2 (k = 2) survives.
        let upstream = net.upstream_sets(8000.0);
        let got =
            positive_lag_contributors(3, 16, 8, &upstream[3], &net, &table, &lags).unwrap();
        assert_eq!(got.len(), 1);
        let reg = fit_regression(got[0].u_idx, 3, 16, 8, got[0].k, &table).unwrap();
        let weights = determination_weights(&[(got[0], reg)]);
        assert_eq!(weights, vec![1.0]);

        let x = table.speed(got[0].u_idx, 16 - got[0].k + 1).unwrap();
        let expect = (reg.slope * x + reg.intercept).clamp(0.0, 40.0);
        let pred = predict_next(3, 16, 8, &upstream[3], &net, &table, &lags, 40.0);
        assert_eq!(pred, expect);
    }

    #[test]
    fn exact_lagged_field_predicts_with_zero_error() {
        // X_r(j) = X_u(j - 1) exactly: the regression is the identity and
        // the prediction for n+1 equals the already-observed X_u(n).
        let n = 16u32;
        let net = RoadNet::from_segments(vec![seg(1, 0.0, 0, 1), seg(2, 400.0, 1, 2)]).unwrap();
        let mut table = SpeedTable::new(2, n);
        for j in 1..=n {
            let t = j as i64;
            table.set(0, j, wiggly(t), Provenance::Measured);
            table.set(1, j, wiggly(t - 1), Provenance::Measured);
        }
        let mut lags = LagTable::new(n);
        lags.insert(0, 1, LagEntry { k: 1, samples: 4 });
        let upstream = net.upstream_sets(8000.0);
        let pred = predict_next(1, n, 8, &upstream[1], &net, &table, &lags, 40.0);
        let truth = wiggly(i64::from(n));
        assert!((pred - truth).abs() < 1e-9, "pred {pred} truth {truth}");
    }

    #[test]
    fn weights_sum_to_one_and_order_does_not_matter() {
        let (net, table, lags) = fan_setup(16);
        let upstream = net.upstream_sets(8000.0);
        let got =
            positive_lag_contributors(3, 16, 8, &upstream[3], &net, &table, &lags).unwrap();
        let fitted: Vec<_> = got
            .iter()
            .map(|c| (*c, fit_regression(c.u_idx, 3, 16, 8, c.k, &table).unwrap()))
            .collect();
        let weights = determination_weights(&fitted);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(weights.iter().all(|&w| w >= 0.0));

        // Reversed upstream enumeration produces the identical prediction.
        let mut reversed = upstream[3].clone();
        reversed.reverse();
        let a = predict_next(3, 16, 8, &upstream[3], &net, &table, &lags, 40.0);
        let b = predict_next(3, 16, 8, &reversed, &net, &table, &lags, 40.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn persistence_fallback_on_empty_r0() {
        let (net, table, mut lags) = fan_setup(16);
        lags.insert(1, 3, LagEntry { k: 0, samples: 2 });
        lags.insert(2, 3, LagEntry { k: 0, samples: 2 });
        let upstream = net.upstream_sets(8000.0);
        let pred = predict_next(3, 16, 8, &upstream[3], &net, &table, &lags, 40.0);
        assert_eq!(pred, table.speed(3, 16).unwrap());
    }
}
