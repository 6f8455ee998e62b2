//! Geometric map matching: a grid spatial index over segment polylines,
//! outlier rejection by distance, and vehicle-tracking candidate narrowing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ingest::Record;
use crate::roadnet::{Point, RoadNet, SegmentId};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Points farther than this from every candidate segment are outliers.
    pub d_min: f64,
    pub cell_size: f64,
    /// Outward-neighbor expansion depth for tracking-narrowed candidates.
    pub max_depth: u32,
    /// Tracking applies only when the report gap stays below this.
    pub gap_seconds: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        // Sized so a 60 s report gap at urban speeds stays within depth 2.
        MatchConfig {
            d_min: 30.0,
            cell_size: 250.0,
            max_depth: 2,
            gap_seconds: 120.0,
        }
    }
}

/// Uniform grid over the net's bounding box. A segment is indexed into every
/// cell its polyline dilated by `d_min` overlaps, so near-boundary points
/// cannot miss their segment.
#[derive(Debug, Clone)]
pub struct GridIndex {
    /// Top-left corner of the grid (min x, max y).
    origin: Point,
    cell_size: f64,
    rows: usize,
    cols: usize,
    cells: Vec<Vec<usize>>,
}

impl GridIndex {
    pub fn cell_of(&self, p: &Point) -> (usize, usize) {
        let col = ((p.x - self.origin.x) / self.cell_size).floor();
        let row = ((self.origin.y - p.y) / self.cell_size).floor();
        (
            (row.max(0.0) as usize).min(self.rows.saturating_sub(1)),
            (col.max(0.0) as usize).min(self.cols.saturating_sub(1)),
        )
    }

    pub fn segments_in_cell(&self, row: usize, col: usize) -> &[usize] {
        &self.cells[row * self.cols + col]
    }

    /// Candidate segments for a point: its cell plus the 8 neighbors,
    /// deduplicated, ascending index.
    pub fn candidates(&self, p: &Point) -> Vec<usize> {
        let (row, col) = self.cell_of(p);
        let mut out = Vec::new();
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let r = row as i64 + dr;
                let c = col as i64 + dc;
                if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
                    continue;
                }
                out.extend_from_slice(self.segments_in_cell(r as usize, c as usize));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// How many cells a given segment is indexed in.
    pub fn cell_count_of(&self, seg_idx: usize) -> usize {
        self.cells.iter().filter(|c| c.contains(&seg_idx)).count()
    }
}

pub fn build_grid_index(net: &RoadNet, cell_size: f64, d_min: f64) -> GridIndex {
    assert!(cell_size > 0.0);
    let (min, max) = net.bounding_box();
    let pad = d_min + 1.0;
    let origin = Point::new(min.x - pad, max.y + pad);
    let width = (max.x - min.x) + 2.0 * pad;
    let height = (max.y - min.y) + 2.0 * pad;
    let cols = (width / cell_size).ceil().max(1.0) as usize;
    let rows = (height / cell_size).ceil().max(1.0) as usize;
    let mut cells = vec![Vec::new(); rows * cols];

    for (idx, seg) in net.segments().iter().enumerate() {
        for piece in seg.polyline.windows(2) {
            let lo_x = piece[0].x.min(piece[1].x) - d_min;
            let hi_x = piece[0].x.max(piece[1].x) + d_min;
            let lo_y = piece[0].y.min(piece[1].y) - d_min;
            let hi_y = piece[0].y.max(piece[1].y) + d_min;
            let c0 = (((lo_x - origin.x) / cell_size).floor().max(0.0)) as usize;
            let c1 = ((((hi_x - origin.x) / cell_size).floor()) as usize).min(cols - 1);
            let r0 = (((origin.y - hi_y) / cell_size).floor().max(0.0)) as usize;
            let r1 = ((((origin.y - lo_y) / cell_size).floor()) as usize).min(rows - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let rect_min = Point::new(
                        origin.x + col as f64 * cell_size,
                        origin.y - (row + 1) as f64 * cell_size,
                    );
                    let rect_max = Point::new(rect_min.x + cell_size, rect_min.y + cell_size);
                    if segment_rect_distance(&piece[0], &piece[1], &rect_min, &rect_max) <= d_min {
                        let cell = &mut cells[row * cols + col];
                        if cell.last() != Some(&idx) {
                            cell.push(idx);
                        }
                    }
                }
            }
        }
    }
    GridIndex {
        origin,
        cell_size,
        rows,
        cols,
        cells,
    }
}

/// Distance between a line piece and an axis-aligned rectangle (0 when they
/// intersect). Both shapes are convex, so the minimum is attained between a
/// piece endpoint and the rectangle or a rectangle corner and the piece.
fn segment_rect_distance(a: &Point, b: &Point, rect_min: &Point, rect_max: &Point) -> f64 {
    let inside = |p: &Point| {
        p.x >= rect_min.x && p.x <= rect_max.x && p.y >= rect_min.y && p.y <= rect_max.y
    };
    if inside(a) || inside(b) {
        return 0.0;
    }
    let corners = [
        *rect_min,
        Point::new(rect_max.x, rect_min.y),
        *rect_max,
        Point::new(rect_min.x, rect_max.y),
    ];
    for i in 0..4 {
        if segments_intersect(a, b, &corners[i], &corners[(i + 1) % 4]) {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for p in [a, b] {
        let cx = p.x.clamp(rect_min.x, rect_max.x);
        let cy = p.y.clamp(rect_min.y, rect_max.y);
        best = best.min(p.dist(&Point::new(cx, cy)));
    }
    for c in &corners {
        best = best.min(point_segment_distance(c, a, b));
    }
    best
}

fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let len2 = (b.x - a.x).powi(2) + (b.y - a.y).powi(2);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len2).clamp(0.0, 1.0);
    p.dist(&Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)))
}

fn segments_intersect(a: &Point, b: &Point, c: &Point, d: &Point) -> bool {
    let cross = |o: &Point, p: &Point, q: &Point| {
        (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x)
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0))
}

/// Per-vehicle tracking state; confined to one worker per vehicle.
#[derive(Debug, Clone, Copy, Default)]
pub struct VehicleState {
    pub last_segment: Option<usize>,
    pub last_timestamp: f64,
}

/// Outcome of matching one point. `Outlier` is a value, not a failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchResult {
    Matched {
        seg_idx: usize,
        offset_m: f64,
        distance_m: f64,
    },
    Outlier,
}

fn best_candidate(
    net: &RoadNet,
    candidates: &[usize],
    p: &Point,
    d_min: f64,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &idx in candidates {
        let (d, off) = net.segment(idx).project(p);
        // Ascending-index iteration makes ties deterministic: strictly
        // better distance is required to displace an earlier candidate.
        if d <= d_min && best.map_or(true, |(_, bd, _)| d < bd) {
            best = Some((idx, d, off));
        }
    }
    best
}

/// Candidate set for tracking narrowing: the last segment plus outward
/// neighbors expanded `max_depth` levels.
pub fn tracking_candidates(net: &RoadNet, last: usize, max_depth: u32) -> Vec<usize> {
    let mut out = vec![last];
    let mut frontier = vec![last];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for &s in &frontier {
            for &n in net.outward_neighbors(s) {
                if !out.contains(&n) {
                    out.push(n);
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    out.sort_unstable();
    out
}

/// Match one point. Tracking narrowing applies when the vehicle was seen
/// recently; whenever it yields nothing within `d_min`, the full grid lookup
/// decides, so narrowing never changes the accept/reject semantics.
pub fn match_point(
    p: &Point,
    t: f64,
    state: &VehicleState,
    index: &GridIndex,
    net: &RoadNet,
    config: &MatchConfig,
) -> MatchResult {
    if let Some(last) = state.last_segment {
        if t - state.last_timestamp <= config.gap_seconds {
            let narrow = tracking_candidates(net, last, config.max_depth);
            if let Some((idx, d, off)) = best_candidate(net, &narrow, p, config.d_min) {
                return MatchResult::Matched {
                    seg_idx: idx,
                    offset_m: off,
                    distance_m: d,
                };
            }
        }
    }
    match best_candidate(net, &index.candidates(p), p, config.d_min) {
        Some((idx, d, off)) => MatchResult::Matched {
            seg_idx: idx,
            offset_m: off,
            distance_m: d,
        },
        None => MatchResult::Outlier,
    }
}

/// A record snapped to the road net.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedRecord {
    pub vehicle_id: String,
    pub timestamp: f64,
    pub segment: SegmentId,
    pub seg_idx: usize,
    pub offset_m: f64,
    pub speed: f64,
}

#[derive(Debug, Default)]
pub struct MatchStats {
    pub matched: usize,
    pub outliers: usize,
}

/// Match a record batch. Records are processed per vehicle in timestamp
/// order; the output is sorted by (vehicle, timestamp).
pub fn match_records(
    net: &RoadNet,
    index: &GridIndex,
    records: &[Record],
    config: &MatchConfig,
) -> (Vec<MatchedRecord>, MatchStats) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .vehicle_id
            .cmp(&records[b].vehicle_id)
            .then(records[a].timestamp.total_cmp(&records[b].timestamp))
    });

    let mut stats = MatchStats::default();
    let mut out = Vec::with_capacity(records.len());
    let mut states: HashMap<&str, VehicleState> = HashMap::new();
    for i in order {
        let rec = &records[i];
        let state = states.entry(rec.vehicle_id.as_str()).or_default();
        match match_point(&rec.position, rec.timestamp, state, index, net, config) {
            MatchResult::Matched {
                seg_idx, offset_m, ..
            } => {
                state.last_segment = Some(seg_idx);
                state.last_timestamp = rec.timestamp;
                stats.matched += 1;
                out.push(MatchedRecord {
                    vehicle_id: rec.vehicle_id.clone(),
                    timestamp: rec.timestamp,
                    segment: net.segment(seg_idx).id,
                    seg_idx,
                    offset_m,
                    speed: rec.speed,
                });
            }
            MatchResult::Outlier => stats.outliers += 1,
        }
    }
    (out, stats)
}
