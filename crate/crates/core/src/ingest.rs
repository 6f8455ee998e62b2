//! Probe-record ingestion: CSV parsing, lon/lat projection, interval
//! bucketing, and per-interval coverage statistics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::Point;

/// Mean Earth radius, meters.
const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// One crowdsensed sample as reported by a vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub vehicle_id: String,
    /// Seconds since epoch.
    pub timestamp: f64,
    /// Planar position after projection.
    pub position: Point,
    /// Instant speed, m/s.
    pub speed: f64,
}

/// Local equirectangular projection around a fixed origin. Exactly
/// invertible, which keeps synthetic round trips lossless; the small-area
/// distortion is irrelevant at city scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Projection {
    pub origin_lon: f64,
    pub origin_lat: f64,
}

impl Default for Projection {
    fn default() -> Self {
        // Central Shenzhen-ish origin; override per dataset.
        Projection {
            origin_lon: 114.05,
            origin_lat: 22.55,
        }
    }
}

impl Projection {
    pub fn new(origin_lon: f64, origin_lat: f64) -> Self {
        Projection {
            origin_lon,
            origin_lat,
        }
    }

    pub fn to_plane(&self, lon: f64, lat: f64) -> Point {
        let kx = EARTH_RADIUS_M * self.origin_lat.to_radians().cos();
        Point::new(
            (lon - self.origin_lon).to_radians() * kx,
            (lat - self.origin_lat).to_radians() * EARTH_RADIUS_M,
        )
    }

    pub fn to_lonlat(&self, p: &Point) -> (f64, f64) {
        let kx = EARTH_RADIUS_M * self.origin_lat.to_radians().cos();
        (
            self.origin_lon + (p.x / kx).to_degrees(),
            self.origin_lat + (p.y / EARTH_RADIUS_M).to_degrees(),
        )
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("missing header line `vehicle_id,timestamp,lon,lat,speed`")]
    MissingHeader,
}

/// Parse result: records in input order plus the count of skipped lines.
#[derive(Debug, Default)]
pub struct ParsedRecords {
    pub records: Vec<Record>,
    pub skipped: usize,
}

pub const RECORDS_HEADER: &str = "vehicle_id,timestamp,lon,lat,speed";

/// Parse `vehicle_id,timestamp,lon,lat,speed` lines. Malformed lines and
/// lines violating record invariants (negative speed, non-finite fields)
/// are counted and skipped; duplicate (vehicle, timestamp) pairs keep the
/// first occurrence. `speed_unit_to_mps` rescales the reported speed into
/// m/s (1.0 when the source already reports m/s).
pub fn parse_records(
    text: &str,
    projection: &Projection,
    speed_unit_to_mps: f64,
) -> Result<ParsedRecords, FormatError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(FormatError::MissingHeader)?;
    if header.trim() != RECORDS_HEADER {
        return Err(FormatError::MissingHeader);
    }

    let mut out = ParsedRecords::default();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_line(line, projection, speed_unit_to_mps) {
            Some(rec) => {
                if seen.insert((rec.vehicle_id.clone(), rec.timestamp.to_bits())) {
                    out.records.push(rec);
                } else {
                    out.skipped += 1;
                }
            }
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

fn parse_line(line: &str, projection: &Projection, speed_scale: f64) -> Option<Record> {
    let mut parts = line.split(',');
    let vehicle_id = parts.next()?.trim();
    let timestamp: f64 = parts.next()?.trim().parse().ok()?;
    let lon: f64 = parts.next()?.trim().parse().ok()?;
    let lat: f64 = parts.next()?.trim().parse().ok()?;
    let speed: f64 = parts.next()?.trim().parse().ok()?;
    if parts.next().is_some() || vehicle_id.is_empty() {
        return None;
    }
    let speed = speed * speed_scale;
    if !timestamp.is_finite() || !lon.is_finite() || !lat.is_finite() || !speed.is_finite() {
        return None;
    }
    if speed < 0.0 {
        return None;
    }
    Some(Record {
        vehicle_id: vehicle_id.to_string(),
        timestamp,
        position: projection.to_plane(lon, lat),
        speed,
    })
}

/// Maps timestamps to 1-based calculation-interval ordinals of length `T`.
/// Interval `j` spans `[start + (j-1)T, start + jT)`, so a timestamp on a
/// boundary belongs to the later interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntervalIndex {
    pub start_time: f64,
    pub interval_seconds: f64,
}

impl IntervalIndex {
    pub fn new(start_time: f64, interval_seconds: f64) -> Self {
        assert!(interval_seconds > 0.0, "T must be positive");
        IntervalIndex {
            start_time,
            interval_seconds,
        }
    }

    /// Ordinal of the interval containing `t`, or `None` before the start.
    pub fn ordinal(&self, t: f64) -> Option<u32> {
        if t < self.start_time {
            return None;
        }
        Some(((t - self.start_time) / self.interval_seconds).floor() as u32 + 1)
    }

    /// `[begin, end)` bounds of interval `j`.
    pub fn span(&self, j: u32) -> (f64, f64) {
        let begin = self.start_time + f64::from(j - 1) * self.interval_seconds;
        (begin, begin + self.interval_seconds)
    }

    pub fn midpoint(&self, j: u32) -> f64 {
        let (b, e) = self.span(j);
        (b + e) / 2.0
    }
}

/// Per (segment, interval) counts of usable records, against the coverage
/// threshold `N_thr`.
#[derive(Debug, Clone)]
pub struct CoverageTable {
    /// `counts[interval-1][segment_index]`.
    counts: Vec<Vec<u32>>,
    pub n_thr: u32,
}

impl CoverageTable {
    pub fn new(n_segments: usize, n_intervals: u32, n_thr: u32) -> Self {
        CoverageTable {
            counts: vec![vec![0; n_segments]; n_intervals as usize],
            n_thr,
        }
    }

    pub fn add(&mut self, seg_idx: usize, j: u32) {
        if j >= 1 && (j as usize) <= self.counts.len() {
            self.counts[j as usize - 1][seg_idx] += 1;
        }
    }

    pub fn count(&self, seg_idx: usize, j: u32) -> u32 {
        self.counts[j as usize - 1][seg_idx]
    }

    pub fn n_intervals(&self) -> u32 {
        self.counts.len() as u32
    }

    /// Definition of coverage: at least `N_thr` records in the interval.
    pub fn is_covered(&self, seg_idx: usize, j: u32) -> bool {
        self.count(seg_idx, j) >= self.n_thr
    }

    /// `N_c`: how many segments are covered in interval `j`.
    pub fn coverage_count(&self, j: u32) -> usize {
        self.counts[j as usize - 1]
            .iter()
            .filter(|&&n| n >= self.n_thr)
            .count()
    }

    pub fn total_records(&self) -> u64 {
        self.counts
            .iter()
            .map(|row| row.iter().map(|&n| u64::from(n)).sum::<u64>())
            .sum()
    }
}

/// Convenience used by tests and the coverage report: count matched records
/// into a fresh table.
pub fn build_coverage(
    assignments: impl Iterator<Item = (usize, f64)>,
    intervals: &IntervalIndex,
    n_segments: usize,
    n_intervals: u32,
    n_thr: u32,
) -> CoverageTable {
    let mut table = CoverageTable::new(n_segments, n_intervals, n_thr);
    for (seg_idx, t) in assignments {
        if let Some(j) = intervals.ordinal(t) {
            if j <= n_intervals {
                table.add(seg_idx, j);
            }
        }
    }
    table
}

// Re-exported so callers can use the spec-facing names directly.
pub fn is_covered(seg_idx: usize, j: u32, table: &CoverageTable) -> bool {
    table.is_covered(seg_idx, j)
}

pub fn coverage_count(j: u32, table: &CoverageTable) -> usize {
    table.coverage_count(j)
}
