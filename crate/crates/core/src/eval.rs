//! Evaluation harness: relative error, seeded hide-and-recover
//! cross-validation over the estimation methods, parameter sweeps over
//! (T, w), and one-step prediction comparisons.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines;
use crate::pipeline::{measured_at, Dataset, Pipeline, PipelineConfig};
use crate::speed::Provenance;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground-truth vector has zero norm")]
    ZeroTruthNorm,
    #[error("vectors differ in length")]
    LengthMismatch,
}

/// Relative error between a truth vector and an estimate vector: the ratio
/// of the Euclidean norm of the difference to the norm of the truth.
pub fn relative_error(truth: &[f64], est: &[f64]) -> Result<f64, EvalError> {
    if truth.len() != est.len() {
        return Err(EvalError::LengthMismatch);
    }
    let denom: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(EvalError::ZeroTruthNorm);
    }
    let num: f64 = truth
        .iter()
        .zip(est)
        .map(|(t, e)| (e - t) * (e - t))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Stc,
    Knn,
    Kriging,
    Arima,
    Kf,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Stc,
        Method::Knn,
        Method::Kriging,
        Method::Arima,
        Method::Kf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Stc => "stc",
            Method::Knn => "knn",
            Method::Kriging => "kriging",
            Method::Arima => "arima",
            Method::Kf => "kf",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stc" => Ok(Method::Stc),
            "knn" => Ok(Method::Knn),
            "kriging" => Ok(Method::Kriging),
            "arima" => Ok(Method::Arima),
            "kf" => Ok(Method::Kf),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub interval: u32,
    pub method: Method,
    pub missing_ratio: f64,
    pub epsilon: f64,
    pub hidden: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean_epsilon(&self, method: Method) -> f64 {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.epsilon)
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval,method,missing_ratio,epsilon,hidden\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.9},{}\n",
                r.interval,
                r.method.as_str(),
                r.missing_ratio,
                r.epsilon,
                r.hidden
            ));
        }
        out
    }
}

/// Deterministic hidden-cell choice for one interval: a seeded shuffle of
/// the measured cells keyed by (seed, interval), truncated to the requested
/// fraction. Returns indices into `measured`.
pub fn hidden_cells(n_measured: usize, ratio: f64, seed: u64, interval: u32) -> Vec<usize> {
    let count = ((n_measured as f64) * ratio).round() as usize;
    if count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ u64::from(interval).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut order: Vec<usize> = (0..n_measured).collect();
    order.shuffle(&mut rng);
    order.truncate(count.min(n_measured));
    order.sort_unstable();
    order
}

/// Recover the hidden cells of interval `n` with one method. `kept` holds
/// the still-visible measured observations; returns the estimates in the
/// order of `hidden_segs`.
fn recover(
    dataset: &Dataset,
    pipeline: &Pipeline,
    n: u32,
    hidden_segs: &[usize],
    kept: &[(usize, f64)],
    method: Method,
) -> Vec<f64> {
    let cfg = &pipeline.config;
    let cps: Vec<_> = dataset
        .net
        .segments()
        .iter()
        .map(|s| s.central_point())
        .collect();
    let kept_mean = if kept.is_empty() {
        cfg.completion.default_speed
    } else {
        kept.iter().map(|&(_, v)| v).sum::<f64>() / kept.len() as f64
    };

    match method {
        Method::Stc => {
            // Re-run completion for the interval against the reduced
            // measured set; everything non-measured is recomputed.
            let mut table = pipeline.table.clone();
            for s in 0..table.n_segments() {
                table.clear(s, n);
            }
            for &(s, v) in kept {
                table.set(s, n, v, Provenance::Measured);
            }
            let lags = pipeline.lag_table(n).expect("completed interval");
            crate::completion::complete_all(
                n,
                cfg.w,
                &mut table,
                &dataset.net,
                &pipeline.neighborhoods,
                lags,
                &cfg.completion,
            );
            hidden_segs
                .iter()
                .map(|&s| table.speed(s, n).expect("total fill"))
                .collect()
        }
        Method::Knn => hidden_segs
            .iter()
            .map(|&s| {
                baselines::knn_estimate(cps[s], kept, &cps, cfg.baselines.knn_k)
                    .unwrap_or(kept_mean)
            })
            .collect(),
        Method::Kriging => hidden_segs
            .iter()
            .map(|&s| {
                baselines::kriging_estimate(cps[s], kept, &cps, &cfg.baselines)
                    .unwrap_or(kept_mean)
            })
            .collect(),
        Method::Arima => hidden_segs
            .iter()
            .map(|&s| {
                baselines::arima_estimate(s, n, &pipeline.table, cfg.w).unwrap_or(kept_mean)
            })
            .collect(),
        Method::Kf => hidden_segs
            .iter()
            .map(|&s| {
                baselines::kalman_predict(
                    s,
                    n - 1,
                    &pipeline.table,
                    cfg.baselines.kf_process_var,
                    cfg.baselines.kf_obs_var,
                )
                .unwrap_or(kept_mean)
            })
            .collect(),
    }
}

/// Hide-and-recover cross-validation over the given intervals: per interval
/// a seeded `missing_ratio` fraction of measured cells is hidden, every
/// method recovers them, and the relative error is taken over the hidden
/// cells only.
pub fn cross_validate_intervals(
    dataset: &Dataset,
    pipeline: &Pipeline,
    missing_ratio: f64,
    methods: &[Method],
    seed: u64,
    intervals: &[u32],
) -> EvalReport {
    let mut report = EvalReport::default();
    for &n in intervals {
        let measured = measured_at(&pipeline.table, n);
        let hidden_idx = hidden_cells(measured.len(), missing_ratio, seed, n);
        let hidden_segs: Vec<usize> = hidden_idx.iter().map(|&i| measured[i].0).collect();
        let truth: Vec<f64> = hidden_idx.iter().map(|&i| measured[i].1).collect();
        let kept: Vec<(usize, f64)> = measured
            .iter()
            .enumerate()
            .filter(|(i, _)| !hidden_idx.contains(i))
            .map(|(_, &cell)| cell)
            .collect();
        for &method in methods {
            let epsilon = if hidden_segs.is_empty() {
                0.0
            } else {
                let est = recover(dataset, pipeline, n, &hidden_segs, &kept, method);
                relative_error(&truth, &est).unwrap_or(0.0)
            };
            report.rows.push(EvalRow {
                interval: n,
                method,
                missing_ratio,
                epsilon,
                hidden: hidden_segs.len(),
            });
        }
    }
    report
}

/// Cross-validation over every interval with a full completion window.
pub fn cross_validate(
    dataset: &Dataset,
    pipeline: &Pipeline,
    missing_ratio: f64,
    methods: &[Method],
    seed: u64,
) -> EvalReport {
    let intervals: Vec<u32> =
        (pipeline.first_completed_interval()..=pipeline.n_intervals).collect();
    cross_validate_intervals(dataset, pipeline, missing_ratio, methods, seed, &intervals)
}

/// Non-overlapping hour-long spans drawn without replacement from the
/// dataset's time expansion.
pub fn sample_hour_spans(
    start_time: f64,
    total_seconds: f64,
    count: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let available = (total_seconds / 3600.0).floor() as usize;
    let mut hours: Vec<usize> = (0..available).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x517C_C1B7_2722_0A95));
    hours.shuffle(&mut rng);
    hours.truncate(count.min(available));
    hours.sort_unstable();
    hours
        .into_iter()
        .map(|h| {
            let begin = start_time + h as f64 * 3600.0;
            (begin, begin + 3600.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub interval_seconds: f64,
    pub w: u32,
    pub mean_epsilon: f64,
    pub intervals_used: usize,
}

pub fn sweep_to_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("T,w,mean_epsilon,intervals\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{:.9},{}\n",
            c.interval_seconds, c.w, c.mean_epsilon, c.intervals_used
        ));
    }
    out
}

/// Error of one sweep cell: rebuild the pipeline at (T, w) and average the
/// hidden-cell recovery error over the intervals inside the sampled hours.
pub fn sweep_cell(
    dataset: &Dataset,
    base: &PipelineConfig,
    interval_seconds: f64,
    w: u32,
    missing_ratio: f64,
    hour_spans: &[(f64, f64)],
    seed: u64,
) -> Option<SweepCell> {
    let config = PipelineConfig {
        interval_seconds,
        w,
        ..*base
    };
    let pipeline = Pipeline::build(dataset, config).ok()?;
    let mut intervals: Vec<u32> = (pipeline.first_completed_interval()..=pipeline.n_intervals)
        .filter(|&j| {
            let (b, e) = pipeline.intervals.span(j);
            hour_spans.iter().any(|&(hb, he)| b >= hb && e <= he)
        })
        .collect();
    if intervals.is_empty() {
        intervals = (pipeline.first_completed_interval()..=pipeline.n_intervals).collect();
    }
    let report = cross_validate_intervals(
        dataset,
        &pipeline,
        missing_ratio,
        &[Method::Stc],
        seed,
        &intervals,
    );
    Some(SweepCell {
        interval_seconds,
        w,
        mean_epsilon: report.mean_epsilon(Method::Stc),
        intervals_used: intervals.len(),
    })
}

/// Mean recovery error per (T, w) over hours sampled once for the whole
/// sweep. Cells are independent jobs.
pub fn parameter_sweep(
    dataset: &Dataset,
    base: &PipelineConfig,
    t_values: &[f64],
    w_values: &[u32],
    missing_ratio: f64,
    sample_hours: usize,
    seed: u64,
) -> Vec<SweepCell> {
    use rayon::prelude::*;
    let start = dataset
        .matched
        .iter()
        .map(|r| r.timestamp)
        .fold(f64::INFINITY, f64::min);
    let end = dataset
        .matched
        .iter()
        .map(|r| r.timestamp)
        .fold(f64::NEG_INFINITY, f64::max);
    let hour_spans = sample_hour_spans(start, end - start, sample_hours, seed);

    let cells: Vec<(f64, u32)> = t_values
        .iter()
        .flat_map(|&t| w_values.iter().map(move |&w| (t, w)))
        .collect();
    cells
        .par_iter()
        .filter_map(|&(t, w)| {
            sweep_cell(dataset, base, t, w, missing_ratio, &hour_spans, seed)
        })
        .collect()
}

/// Per-interval one-step prediction errors of the lagged-regression
/// predictor against the Kalman and differenced-AR baselines. Truth for
/// interval `n + 1` is the table's own value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub target_interval: u32,
    pub stc: f64,
    pub kf: f64,
    pub arima: f64,
}

pub fn prediction_errors(dataset: &Dataset, pipeline: &Pipeline) -> Vec<PredictionRow> {
    let cfg = &pipeline.config;
    let mut rows = Vec::new();
    for n in pipeline.first_completed_interval()..pipeline.n_intervals {
        let target = n + 1;
        let truth: Vec<f64> = (0..dataset.net.len())
            .map(|s| pipeline.table.speed(s, target).expect("total fill"))
            .collect();
        let stc_est = pipeline.predict_all(&dataset.net, n);
        let kf_est: Vec<f64> = (0..dataset.net.len())
            .map(|s| {
                baselines::kalman_predict(
                    s,
                    n,
                    &pipeline.table,
                    cfg.baselines.kf_process_var,
                    cfg.baselines.kf_obs_var,
                )
                .unwrap_or(cfg.completion.default_speed)
            })
            .collect();
        let arima_est: Vec<f64> = (0..dataset.net.len())
            .map(|s| {
                baselines::arima_estimate(s, target, &pipeline.table, cfg.w)
                    .unwrap_or(cfg.completion.default_speed)
            })
            .collect();
        rows.push(PredictionRow {
            target_interval: target,
            stc: relative_error(&truth, &stc_est).unwrap_or(0.0),
            kf: relative_error(&truth, &kf_est).unwrap_or(0.0),
            arima: relative_error(&truth, &arima_est).unwrap_or(0.0),
        });
    }
    rows
}

pub fn prediction_to_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("target_interval,stc,kf,arima\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9}\n",
            r.target_interval, r.stc, r.kf, r.arima
        ));
    }
    out
}
