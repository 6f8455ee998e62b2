//! Time-lagged cross-correlation over sliding windows and self-adaptive
//! lag-factor estimation from vehicle tracking.
//!
//! The lag factor `k` between roads `u` and `r` counts how many calculation
//! intervals traffic features take to travel from `u`'s central point to
//! `r`'s. It is measured from vehicles seen on both roads, never by scanning
//! for the lag that maximizes correlation (the best lag does not have to
//! maximize it).

use std::collections::HashMap;

use thiserror::Error;

use crate::ingest::IntervalIndex;
use crate::roadnet::{RoadNet, UpstreamRoad};
use crate::speed::{MatchedTrace, SliceError, SpeedTable};

#[derive(Debug, Error, PartialEq)]
pub enum CorrError {
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("window reaches before the first interval")]
    InsufficientHistory,
    #[error("vacant entries at ordinals {ordinals:?}")]
    VacantEntry { ordinals: Vec<u32> },
    #[error("no tracked vehicle traversed the pair")]
    NoTraversals,
    #[error("slices must have equal length >= 2")]
    BadInput,
}

impl From<SliceError> for CorrError {
    fn from(e: SliceError) -> Self {
        match e {
            SliceError::OutOfRange { .. } => CorrError::InsufficientHistory,
            SliceError::Vacant { ordinals } => CorrError::VacantEntry { ordinals },
        }
    }
}

/// Sliding window of `w` intervals ending at ordinal `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub end: u32,
    pub w: u32,
}

impl Window {
    pub fn new(end: u32, w: u32) -> Self {
        assert!(w >= 2, "windows need at least two intervals");
        Window { end, w }
    }

    pub fn start(&self) -> u32 {
        self.end + 1 - self.w
    }

    pub fn time_span(&self, intervals: &IntervalIndex) -> (f64, f64) {
        (intervals.span(self.start()).0, intervals.span(self.end).1)
    }
}

/// Sample Pearson correlation of two aligned equal-length slices. Lag
/// alignment is the caller's job; this sees already-aligned windows.
pub fn cross_correlation(x: &[f64], y: &[f64]) -> Result<f64, CorrError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CorrError::BadInput);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrError::DegenerateSeries);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn checked_lo(n: u32, k: u32, w: u32, shift: i64) -> Result<u32, CorrError> {
    let lo = i64::from(n) - i64::from(k) - i64::from(w) + shift;
    if lo < 1 {
        Err(CorrError::InsufficientHistory)
    } else {
        Ok(lo as u32)
    }
}

/// Correlation between contributor `u` and target `r` over the window that
/// ends just before interval `n`:
/// `c(X_u(n-k-w .. n-k-1), X_r(n-w .. n-1))`.
pub fn c_pre(
    u_idx: usize,
    r_idx: usize,
    n: u32,
    w: u32,
    k: u32,
    table: &SpeedTable,
) -> Result<f64, CorrError> {
    let xlo = checked_lo(n, k, w, 0)?;
    checked_lo(n, 0, w, 0)?;
    let x = table.slice(u_idx, xlo, n - k - 1)?;
    let y = table.slice(r_idx, n - w, n - 1)?;
    cross_correlation(&x, &y)
}

/// Correlation over the window ending at interval `n`, with the unknown
/// `X_r(n)` replaced by `candidate`:
/// `c(X_u(n-k-w+1 .. n-k), X_r(n-w+1 .. n-1) ++ [candidate])`.
pub fn c_now(
    u_idx: usize,
    r_idx: usize,
    n: u32,
    w: u32,
    k: u32,
    table: &SpeedTable,
    candidate: f64,
) -> Result<f64, CorrError> {
    let xlo = checked_lo(n, k, w, 1)?;
    checked_lo(n, 0, w, 1)?;
    let x = table.slice(u_idx, xlo, n - k)?;
    let mut y = table.slice(r_idx, n - w + 1, n - 1)?;
    y.push(candidate);
    cross_correlation(&x, &y)
}

/// Estimated lag factor for a road pair plus the tracked-vehicle count
/// behind it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagEntry {
    pub k: u32,
    pub samples: u32,
}

/// Lag factors for the road pairs of one window, keyed `(u_idx, r_idx)`.
#[derive(Debug, Clone)]
pub struct LagTable {
    pub window_end: u32,
    entries: HashMap<(usize, usize), LagEntry>,
}

impl LagTable {
    pub fn new(window_end: u32) -> Self {
        LagTable {
            window_end,
            entries: HashMap::new(),
        }
    }

    pub fn get(&self, u_idx: usize, r_idx: usize) -> Option<LagEntry> {
        self.entries.get(&(u_idx, r_idx)).copied()
    }

    pub fn insert(&mut self, u_idx: usize, r_idx: usize, entry: LagEntry) {
        self.entries.insert((u_idx, r_idx), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rows sorted by (u, r) for deterministic dumps.
    pub fn sorted_rows(&self) -> Vec<(usize, usize, LagEntry)> {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .map(|(&(u, r), &e)| (u, r, e))
            .collect();
        rows.sort_by_key(|&(u, r, _)| (r, u));
        rows
    }
}

/// Trace records indexed for lag estimation: per segment sorted by time,
/// and per (trace, segment) sorted point lists.
pub struct TraceDb<'a> {
    traces: &'a [MatchedTrace],
    per_seg: Vec<Vec<(f64, usize, usize)>>,
    per_trace_seg: Vec<HashMap<usize, Vec<usize>>>,
}

impl<'a> TraceDb<'a> {
    pub fn build(traces: &'a [MatchedTrace], n_segments: usize) -> Self {
        let mut per_seg = vec![Vec::new(); n_segments];
        let mut per_trace_seg = Vec::with_capacity(traces.len());
        for (ti, trace) in traces.iter().enumerate() {
            let mut by_seg: HashMap<usize, Vec<usize>> = HashMap::new();
            for (pi, p) in trace.points.iter().enumerate() {
                per_seg[p.seg_idx].push((p.timestamp, ti, pi));
                by_seg.entry(p.seg_idx).or_default().push(pi);
            }
            per_trace_seg.push(by_seg);
        }
        for list in &mut per_seg {
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        TraceDb {
            traces,
            per_seg,
            per_trace_seg,
        }
    }

    fn on_segment_in(&self, seg_idx: usize, t0: f64, t1: f64) -> &[(f64, usize, usize)] {
        let list = &self.per_seg[seg_idx];
        let lo = list.partition_point(|e| e.0 < t0);
        let hi = list.partition_point(|e| e.0 < t1);
        &list[lo..hi]
    }
}

/// Vehicle-tracking estimate of the lag factor `k(u, r)` over one window.
///
/// Vehicles seen on `r` during the window that earlier passed `u` define the
/// sample: for each, the `u` record nearest `u`'s central point (ties to the
/// latest timestamp) and the `r` record nearest `r`'s central point (ties to
/// the earliest) give an observed average speed, which converts the
/// central-point distance into a travel time. `k` is the floored mean travel
/// time in interval units.
pub fn estimate_lag(
    u_idx: usize,
    r_idx: usize,
    window: Window,
    db: &TraceDb,
    net: &RoadNet,
    intervals: &IntervalIndex,
) -> Result<LagEntry, CorrError> {
    let dist_ur = net
        .cp_distance(net.segment(u_idx).id, net.segment(r_idx).id)
        .map_err(|_| CorrError::NoTraversals)?;
    estimate_lag_with_dist(u_idx, r_idx, dist_ur, window, db, net, intervals)
}

pub fn estimate_lag_with_dist(
    u_idx: usize,
    r_idx: usize,
    dist_ur: f64,
    window: Window,
    db: &TraceDb,
    net: &RoadNet,
    intervals: &IntervalIndex,
) -> Result<LagEntry, CorrError> {
    let (t0, t1) = window.time_span(intervals);
    let half_u = net.segment(u_idx).length / 2.0;
    let half_r = net.segment(r_idx).length / 2.0;

    let mut travel_sum = 0.0;
    let mut samples = 0u32;
    let mut seen: Vec<usize> = db.on_segment_in(r_idx, t0, t1).iter().map(|e| e.1).collect();
    seen.sort_unstable();
    seen.dedup();
    for ti in seen {
        let trace = &db.traces[ti];

        // s''(v, r): nearest the central point, earliest timestamp on ties.
        let Some(on_r) = db.per_trace_seg[ti].get(&r_idx) else {
            continue;
        };
        let mut s2: Option<(f64, f64, usize)> = None;
        for &pi in on_r {
            let p = &trace.points[pi];
            if p.timestamp < t0 || p.timestamp >= t1 {
                continue;
            }
            let d = (p.offset_m - half_r).abs();
            let better = match s2 {
                None => true,
                Some((bd, bt, _)) => d < bd || (d == bd && p.timestamp < bt),
            };
            if better {
                s2 = Some((d, p.timestamp, pi));
            }
        }
        let Some((_, t2, p2)) = s2 else { continue };

        // s'(v, u): records on u strictly before s''; nearest the central
        // point, latest timestamp on ties. They may precede the window.
        let Some(on_u) = db.per_trace_seg[ti].get(&u_idx) else {
            continue;
        };
        let mut s1: Option<(f64, f64, usize)> = None;
        for &pi in on_u {
            let p = &trace.points[pi];
            if p.timestamp >= t2 {
                continue;
            }
            let d = (p.offset_m - half_u).abs();
            let better = match s1 {
                None => true,
                Some((bd, bt, _)) => d < bd || (d == bd && p.timestamp > bt),
            };
            if better {
                s1 = Some((d, p.timestamp, pi));
            }
        }
        let Some((_, t1x, p1)) = s1 else { continue };

        let dt = t2 - t1x;
        if dt <= 0.0 {
            continue;
        }
        let a = trace.points[p1].position(net);
        let b = trace.points[p2].position(net);
        let Ok(d) = net.network_distance(&a, &b) else {
            continue;
        };
        let avg = d / dt;
        if avg <= 0.0 || !avg.is_finite() {
            continue;
        }
        travel_sum += dist_ur / avg;
        samples += 1;
    }

    if samples == 0 {
        return Err(CorrError::NoTraversals);
    }
    let k = (travel_sum / (f64::from(samples) * intervals.interval_seconds)).floor();
    Ok(LagEntry {
        k: k.max(0.0) as u32,
        samples,
    })
}

/// Build the lag table for one window over every (upstream contributor,
/// target) pair. Pairs without tracked traversals fall back to the previous
/// window's estimate and then to a free-flow travel-time guess.
pub fn build_lag_table(
    net: &RoadNet,
    db: &TraceDb,
    neighborhoods: &[Vec<UpstreamRoad>],
    window: Window,
    intervals: &IntervalIndex,
    previous: Option<&LagTable>,
    free_flow_mps: f64,
) -> LagTable {
    use rayon::prelude::*;
    let rows: Vec<Vec<((usize, usize), LagEntry)>> = (0..net.len())
        .into_par_iter()
        .map(|r_idx| {
            let mut row = Vec::with_capacity(neighborhoods[r_idx].len());
            for up in &neighborhoods[r_idx] {
                let u_idx = net.index_of(up.id).expect("neighborhood ids valid");
                let entry = estimate_lag_with_dist(
                    u_idx,
                    r_idx,
                    up.distance_m,
                    window,
                    db,
                    net,
                    intervals,
                )
                .unwrap_or_else(|_| {
                    previous
                        .and_then(|p| p.get(u_idx, r_idx))
                        .map(|e| LagEntry {
                            k: e.k,
                            samples: 0,
                        })
                        .unwrap_or(LagEntry {
                            k: (up.distance_m
                                / (free_flow_mps * intervals.interval_seconds))
                                .floor() as u32,
                            samples: 0,
                        })
                });
                row.push(((u_idx, r_idx), entry));
            }
            row
        })
        .collect();

    let mut table = LagTable::new(window.end);
    for row in rows {
        for ((u, r), e) in row {
            table.insert(u, r, e);
        }
    }
    table
}

/// Stationarity diagnostic: mean per-window standard deviation of a series
/// for each window width. Reported, not asserted (beyond finiteness).
pub fn stationarity_profile(series: &[f64], widths: &[u32]) -> Vec<(u32, f64)> {
    widths
        .iter()
        .filter(|&&w| w >= 2 && (w as usize) <= series.len())
        .map(|&w| {
            let w_usize = w as usize;
            let mut total = 0.0;
            let mut count = 0usize;
            for win in series.windows(w_usize) {
                let mean = win.iter().sum::<f64>() / w_usize as f64;
                let var =
                    win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w_usize as f64 - 1.0);
                total += var.sqrt();
                count += 1;
            }
            (w, if count == 0 { 0.0 } else { total / count as f64 })
        })
        .collect()
}
