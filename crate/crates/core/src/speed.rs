//! Per-interval travel speeds for covered roads, composited from instant
//! report speeds and trajectory-averaged speeds, plus the speed table the
//! completion and prediction stages operate on.

use std::collections::HashMap;

use thiserror::Error;

use crate::ingest::{CoverageTable, IntervalIndex};
use crate::mapmatch::MatchedRecord;
use crate::roadnet::{NetPosition, RoadNet};

/// Where a speed value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Measured,
    Completed,
    Initialized,
    Fallback,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Measured => "measured",
            Provenance::Completed => "completed",
            Provenance::Initialized => "initialized",
            Provenance::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEntry {
    pub speed: f64,
    pub provenance: Provenance,
}

/// Travel-speed vectors for every segment, indexed by 1-based interval
/// ordinal; `None` marks a vacancy.
#[derive(Debug, Clone)]
pub struct SpeedTable {
    cells: Vec<Vec<Option<SpeedEntry>>>,
    n_intervals: u32,
}

impl SpeedTable {
    pub fn new(n_segments: usize, n_intervals: u32) -> Self {
        SpeedTable {
            cells: vec![vec![None; n_intervals as usize]; n_segments],
            n_intervals,
        }
    }

    pub fn n_intervals(&self) -> u32 {
        self.n_intervals
    }

    pub fn n_segments(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, seg_idx: usize, j: u32) -> Option<SpeedEntry> {
        self.cells[seg_idx][j as usize - 1]
    }

    pub fn speed(&self, seg_idx: usize, j: u32) -> Option<f64> {
        self.get(seg_idx, j).map(|e| e.speed)
    }

    pub fn set(&mut self, seg_idx: usize, j: u32, speed: f64, provenance: Provenance) {
        self.cells[seg_idx][j as usize - 1] = Some(SpeedEntry { speed, provenance });
    }

    pub fn clear(&mut self, seg_idx: usize, j: u32) {
        self.cells[seg_idx][j as usize - 1] = None;
    }

    /// Inclusive 1-based slice `[from, to]` of one segment's series.
    /// Fails when the range leaves the table or any entry is vacant,
    /// listing the missing ordinals.
    pub fn slice(&self, seg_idx: usize, from: u32, to: u32) -> Result<Vec<f64>, SliceError> {
        if from < 1 || to > self.n_intervals || from > to {
            return Err(SliceError::OutOfRange { from, to });
        }
        let mut vacant = Vec::new();
        let mut out = Vec::with_capacity((to - from + 1) as usize);
        for j in from..=to {
            match self.speed(seg_idx, j) {
                Some(v) => out.push(v),
                None => vacant.push(j),
            }
        }
        if vacant.is_empty() {
            Ok(out)
        } else {
            Err(SliceError::Vacant { ordinals: vacant })
        }
    }

    pub fn vacancies_at(&self, j: u32) -> usize {
        self.cells
            .iter()
            .filter(|row| row[j as usize - 1].is_none())
            .count()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SliceError {
    #[error("interval range {from}..={to} outside the table")]
    OutOfRange { from: u32, to: u32 },
    #[error("vacant entries at ordinals {ordinals:?}")]
    Vacant { ordinals: Vec<u32> },
}

/// One vehicle's time-ordered matched samples.
#[derive(Debug, Clone)]
pub struct MatchedTrace {
    pub vehicle_id: String,
    pub points: Vec<TracePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub timestamp: f64,
    pub seg_idx: usize,
    pub offset_m: f64,
    pub speed: f64,
}

impl TracePoint {
    pub fn position(&self, net: &RoadNet) -> NetPosition {
        NetPosition::new(net.segment(self.seg_idx).id, self.offset_m)
    }
}

/// Group matched records into per-vehicle traces with strictly increasing
/// timestamps (later records at an already-seen timestamp are dropped).
pub fn build_traces(matched: &[MatchedRecord]) -> Vec<MatchedTrace> {
    let mut by_vehicle: HashMap<&str, Vec<TracePoint>> = HashMap::new();
    for rec in matched {
        by_vehicle
            .entry(rec.vehicle_id.as_str())
            .or_default()
            .push(TracePoint {
                timestamp: rec.timestamp,
                seg_idx: rec.seg_idx,
                offset_m: rec.offset_m,
                speed: rec.speed,
            });
    }
    let mut traces: Vec<MatchedTrace> = by_vehicle
        .into_iter()
        .map(|(vehicle, mut points)| {
            points.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            points.dedup_by(|b, a| b.timestamp == a.timestamp);
            MatchedTrace {
                vehicle_id: vehicle.to_string(),
                points,
            }
        })
        .collect();
    traces.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
    traces
}

/// Trajectory-averaged speeds of one trace whose arrival sample falls in
/// interval `j`: `network_distance(a, b) / (t_b - t_a)` per consecutive
/// pair. The departure sample may precede the interval. Pairs with zero
/// time delta or unreachable endpoints are skipped.
pub fn segment_pair_speeds(
    trace: &MatchedTrace,
    j: u32,
    intervals: &IntervalIndex,
    net: &RoadNet,
) -> Vec<f64> {
    let mut out = Vec::new();
    for pair in trace.points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if intervals.ordinal(b.timestamp) != Some(j) {
            continue;
        }
        let dt = b.timestamp - a.timestamp;
        if dt <= 0.0 {
            continue;
        }
        if let Ok(d) = net.network_distance(&a.position(net), &b.position(net)) {
            out.push(d / dt);
        }
    }
    out
}

/// Running sums for one (segment, interval) cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpeedAccumulator {
    pub avg_sum: f64,
    pub avg_count: u32,
    pub instant_sum: f64,
    pub instant_count: u32,
}

impl SpeedAccumulator {
    pub fn composite(&self) -> Option<f64> {
        let n = self.avg_count + self.instant_count;
        if n == 0 {
            None
        } else {
            Some((self.avg_sum + self.instant_sum) / f64::from(n))
        }
    }
}

/// Instant speeds and arrival-attributed trajectory averages for every
/// (segment, interval) cell, in one pass over the traces.
pub fn accumulate_speeds(
    traces: &[MatchedTrace],
    intervals: &IntervalIndex,
    n_segments: usize,
    n_intervals: u32,
    net: &RoadNet,
) -> Vec<Vec<SpeedAccumulator>> {
    let mut acc = vec![vec![SpeedAccumulator::default(); n_segments]; n_intervals as usize];
    let in_range = |j: u32| j >= 1 && j <= n_intervals;
    for trace in traces {
        for point in &trace.points {
            if let Some(j) = intervals.ordinal(point.timestamp) {
                if in_range(j) {
                    let cell = &mut acc[j as usize - 1][point.seg_idx];
                    cell.instant_sum += point.speed;
                    cell.instant_count += 1;
                }
            }
        }
        for pair in trace.points.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let Some(j) = intervals.ordinal(b.timestamp) else {
                continue;
            };
            if !in_range(j) {
                continue;
            }
            let dt = b.timestamp - a.timestamp;
            if dt <= 0.0 {
                continue;
            }
            // Attributed to the arrival segment; unreachable pairs are
            // matching glitches and contribute nothing.
            if let Ok(d) = net.network_distance(&a.position(net), &b.position(net)) {
                let cell = &mut acc[j as usize - 1][b.seg_idx];
                cell.avg_sum += d / dt;
                cell.avg_count += 1;
            }
        }
    }
    acc
}

#[derive(Debug, Error, PartialEq)]
pub enum SpeedError {
    #[error("segment not covered in interval {0}")]
    NotCovered(u32),
}

/// Composite travel speed of a covered segment: the mean over trajectory
/// averages ending on it and instant speeds reported on it.
pub fn travel_speed_covered(
    seg_idx: usize,
    j: u32,
    acc: &[Vec<SpeedAccumulator>],
    coverage: &CoverageTable,
) -> Result<f64, SpeedError> {
    if !coverage.is_covered(seg_idx, j) {
        return Err(SpeedError::NotCovered(j));
    }
    acc[j as usize - 1][seg_idx]
        .composite()
        .ok_or(SpeedError::NotCovered(j))
}

/// Write measured speeds for every covered cell into the table.
pub fn fill_measured(
    table: &mut SpeedTable,
    acc: &[Vec<SpeedAccumulator>],
    coverage: &CoverageTable,
) {
    for j in 1..=table.n_intervals() {
        for seg_idx in 0..table.n_segments() {
            if let Ok(s) = travel_speed_covered(seg_idx, j, acc, coverage) {
                table.set(seg_idx, j, s, Provenance::Measured);
            }
        }
    }
}
