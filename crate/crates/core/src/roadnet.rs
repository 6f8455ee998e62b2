//! Directed road-net graph: segment geometry, network distances, and
//! upstream-neighborhood selection.
//!
//! A road segment is one-way by construction; vehicles enter at `entrance`
//! and leave at `exit`. Coordinates are planar meters (ingestion projects
//! lon/lat before anything here runs).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Endpoints of segments incident to one intersection must coincide within
/// this many meters, otherwise the vertex is considered dangling.
const VERTEX_SNAP_TOL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u64);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One directed road segment with polyline geometry from entrance to exit.
#[derive(Debug, Clone)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub polyline: Vec<Point>,
    pub entrance: VertexId,
    pub exit: VertexId,
    pub length: f64,
}

impl RoadSegment {
    /// Point at arc length `offset` walking the polyline entrance -> exit.
    /// Offsets are clamped to `[0, length]`.
    pub fn point_at(&self, offset: f64) -> Point {
        let mut remaining = offset.clamp(0.0, self.length);
        for pair in self.polyline.windows(2) {
            let piece = pair[0].dist(&pair[1]);
            if remaining <= piece {
                if piece == 0.0 {
                    return pair[0];
                }
                let t = remaining / piece;
                return Point::new(
                    pair[0].x + t * (pair[1].x - pair[0].x),
                    pair[0].y + t * (pair[1].y - pair[0].y),
                );
            }
            remaining -= piece;
        }
        *self.polyline.last().expect("polyline has >= 2 points")
    }

    /// Arc-length midpoint of the segment.
    pub fn central_point(&self) -> Point {
        self.point_at(self.length / 2.0)
    }

    /// Closest point on the polyline: returns `(distance, offset along segment)`.
    pub fn project(&self, p: &Point) -> (f64, f64) {
        let mut best_d = f64::INFINITY;
        let mut best_off = 0.0;
        let mut walked = 0.0;
        for pair in self.polyline.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let piece = a.dist(&b);
            let (d, t) = if piece == 0.0 {
                (p.dist(&a), 0.0)
            } else {
                let t = (((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y))
                    / (piece * piece))
                    .clamp(0.0, 1.0);
                let proj = Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
                (p.dist(&proj), t)
            };
            if d < best_d {
                best_d = d;
                best_off = walked + t * piece;
            }
            walked += piece;
        }
        (best_d, best_off)
    }
}

/// Free-function form of [`RoadSegment::central_point`].
pub fn central_point(seg: &RoadSegment) -> Point {
    seg.central_point()
}

/// A position on the road net: a segment plus the arc-length offset from its
/// entrance, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetPosition {
    pub segment: SegmentId,
    pub offset_m: f64,
}

impl NetPosition {
    pub fn new(segment: SegmentId, offset_m: f64) -> Self {
        NetPosition { segment, offset_m }
    }
}

/// An upstream road qualified for the completion neighborhood of some segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpstreamRoad {
    pub id: SegmentId,
    /// Central-point-to-central-point network distance, meters.
    pub distance_m: f64,
    /// Intersections crossed along that path.
    pub intersections: u32,
    /// `distance_m * intersections`; the neighborhood ordering key.
    pub weighted: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("no directed path between the given positions")]
    Unreachable,
    #[error("unknown segment id {0}")]
    UnknownSegment(SegmentId),
}

#[derive(Debug, Error)]
pub enum NetLoadError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate segment id {0}")]
    DuplicateId(SegmentId),
    #[error("segment {0}: polyline needs at least 2 points")]
    ShortPolyline(SegmentId),
    #[error("segment {0}: non-finite coordinate")]
    BadCoordinate(SegmentId),
    #[error("segment {0}: zero-length geometry")]
    ZeroLength(SegmentId),
    #[error("dangling vertex {vertex}: segment endpoints disagree by {spread_m:.1} m")]
    DanglingVertex { vertex: VertexId, spread_m: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentJson {
    id: u64,
    polyline: Vec<[f64; 2]>,
    entrance: u64,
    exit: u64,
}

/// Immutable directed road net. Segments are stored sorted by id, so the
/// dense index order equals ascending-id order everywhere.
#[derive(Debug, Clone)]
pub struct RoadNet {
    segments: Vec<RoadSegment>,
    seg_index: HashMap<SegmentId, usize>,
    vertices: Vec<VertexId>,
    vertex_index: HashMap<VertexId, usize>,
    /// Per vertex: segments whose entrance is that vertex (ascending id).
    out_segs: Vec<Vec<usize>>,
    /// Per vertex: segments whose exit is that vertex (ascending id).
    in_segs: Vec<Vec<usize>>,
}

impl RoadNet {
    pub fn from_segments(mut segments: Vec<RoadSegment>) -> Result<Self, NetLoadError> {
        segments.sort_by_key(|s| s.id);
        for pair in segments.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(NetLoadError::DuplicateId(pair[0].id));
            }
        }
        for seg in &mut segments {
            if seg.polyline.len() < 2 {
                return Err(NetLoadError::ShortPolyline(seg.id));
            }
            if seg.polyline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(NetLoadError::BadCoordinate(seg.id));
            }
            seg.length = seg.polyline.windows(2).map(|w| w[0].dist(&w[1])).sum();
            if seg.length <= 0.0 {
                return Err(NetLoadError::ZeroLength(seg.id));
            }
        }

        let mut vertices: Vec<VertexId> = segments
            .iter()
            .flat_map(|s| [s.entrance, s.exit])
            .collect();
        vertices.sort();
        vertices.dedup();
        let vertex_index: HashMap<VertexId, usize> =
            vertices.iter().enumerate().map(|(i, v)| (*v, i)).collect();

        // Every endpoint attached to one vertex must sit at the same place.
        let mut anchor: Vec<Option<Point>> = vec![None; vertices.len()];
        for seg in &segments {
            let ends = [
                (seg.entrance, seg.polyline[0]),
                (seg.exit, *seg.polyline.last().unwrap()),
            ];
            for (v, p) in ends {
                let vi = vertex_index[&v];
                match anchor[vi] {
                    None => anchor[vi] = Some(p),
                    Some(a) => {
                        let spread = a.dist(&p);
                        if spread > VERTEX_SNAP_TOL {
                            return Err(NetLoadError::DanglingVertex {
                                vertex: v,
                                spread_m: spread,
                            });
                        }
                    }
                }
            }
        }

        let mut out_segs = vec![Vec::new(); vertices.len()];
        let mut in_segs = vec![Vec::new(); vertices.len()];
        for (i, seg) in segments.iter().enumerate() {
            out_segs[vertex_index[&seg.entrance]].push(i);
            in_segs[vertex_index[&seg.exit]].push(i);
        }

        let seg_index = segments.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        Ok(RoadNet {
            segments,
            seg_index,
            vertices,
            vertex_index,
            out_segs,
            in_segs,
        })
    }

    pub fn load_json(text: &str) -> Result<Self, NetLoadError> {
        let raw: Vec<SegmentJson> = serde_json::from_str(text)?;
        let segments = raw
            .into_iter()
            .map(|s| RoadSegment {
                id: SegmentId(s.id),
                polyline: s.polyline.iter().map(|p| Point::new(p[0], p[1])).collect(),
                entrance: VertexId(s.entrance),
                exit: VertexId(s.exit),
                length: 0.0,
            })
            .collect();
        Self::from_segments(segments)
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<SegmentJson> = self
            .segments
            .iter()
            .map(|s| SegmentJson {
                id: s.id.0,
                polyline: s.polyline.iter().map(|p| [p.x, p.y]).collect(),
                entrance: s.entrance.0,
                exit: s.exit.0,
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("net serializes")
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, idx: usize) -> &RoadSegment {
        &self.segments[idx]
    }

    pub fn index_of(&self, id: SegmentId) -> Option<usize> {
        self.seg_index.get(&id).copied()
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    /// Outward neighbors of a segment: segments entered at its exit vertex.
    pub fn outward_neighbors(&self, idx: usize) -> &[usize] {
        &self.out_segs[self.vertex_index[&self.segments[idx].exit]]
    }

    /// Segments whose exit feeds this segment's entrance.
    pub fn inward_neighbors(&self, idx: usize) -> &[usize] {
        &self.in_segs[self.vertex_index[&self.segments[idx].entrance]]
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for seg in &self.segments {
            for p in &seg.polyline {
                min.x = min.x.min(p.x);
                min.y = min.y.min(p.y);
                max.x = max.x.max(p.x);
                max.y = max.y.max(p.y);
            }
        }
        (min, max)
    }

    fn resolve(&self, pos: &NetPosition) -> Result<(usize, f64), NetError> {
        let idx = self
            .index_of(pos.segment)
            .ok_or(NetError::UnknownSegment(pos.segment))?;
        Ok((idx, pos.offset_m.clamp(0.0, self.segments[idx].length)))
    }

    /// Planar coordinates of an on-net position.
    pub fn locate(&self, pos: &NetPosition) -> Result<Point, NetError> {
        let (idx, off) = self.resolve(pos)?;
        Ok(self.segments[idx].point_at(off))
    }

    /// Length of the shortest lawful driving path from `a` to `b`.
    ///
    /// The path leaves `a`'s segment through its exit and enters `b`'s
    /// segment at its entrance, except when both lie on one segment with
    /// `b` downstream of `a`.
    pub fn network_distance(&self, a: &NetPosition, b: &NetPosition) -> Result<f64, NetError> {
        let (sa, oa) = self.resolve(a)?;
        let (sb, ob) = self.resolve(b)?;
        if sa == sb && ob >= oa {
            return Ok(ob - oa);
        }
        let tail = self.segments[sa].length - oa;
        let from = self.vertex_index[&self.segments[sa].exit];
        let to = self.vertex_index[&self.segments[sb].entrance];
        let (d, _) = self.vertex_shortest(from, to).ok_or(NetError::Unreachable)?;
        Ok(tail + d + ob)
    }

    fn cp_position(&self, idx: usize) -> NetPosition {
        let seg = &self.segments[idx];
        NetPosition::new(seg.id, seg.length / 2.0)
    }

    /// Central-point-to-central-point network distance between two segments.
    pub fn cp_distance(&self, u: SegmentId, r: SegmentId) -> Result<f64, NetError> {
        let ui = self.index_of(u).ok_or(NetError::UnknownSegment(u))?;
        let ri = self.index_of(r).ok_or(NetError::UnknownSegment(r))?;
        self.network_distance(&self.cp_position(ui), &self.cp_position(ri))
    }

    /// Number of intersections crossed walking the shortest lawful path from
    /// `u`'s central point to `r`'s central point.
    pub fn intersection_distance(&self, u: SegmentId, r: SegmentId) -> Result<u32, NetError> {
        let ui = self.index_of(u).ok_or(NetError::UnknownSegment(u))?;
        let ri = self.index_of(r).ok_or(NetError::UnknownSegment(r))?;
        if ui == ri {
            return Ok(0);
        }
        let from = self.vertex_index[&self.segments[ui].exit];
        let to = self.vertex_index[&self.segments[ri].entrance];
        let (_, hops) = self.vertex_shortest(from, to).ok_or(NetError::Unreachable)?;
        // Crossing from u into the path's first segment is one intersection,
        // then one more per segment traversed on the vertex-to-vertex path.
        Ok(hops + 1)
    }

    /// Shortest vertex-to-vertex path; returns `(distance, segments traversed)`.
    /// Ties in distance resolve to the fewest segments, then lowest ids, so
    /// repeated queries are deterministic.
    fn vertex_shortest(&self, from: usize, to: usize) -> Option<(f64, u32)> {
        if from == to {
            return Some((0.0, 0));
        }
        let mut best: HashMap<usize, (f64, u32)> = HashMap::new();
        best.insert(from, (0.0, 0));
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            hops: 0,
            vertex: from,
        });
        while let Some(cur) = heap.pop() {
            if let Some(&(bd, bh)) = best.get(&cur.vertex) {
                if (cur.dist, cur.hops) > (bd, bh) {
                    continue;
                }
            }
            if cur.vertex == to {
                return Some((cur.dist, cur.hops));
            }
            for &si in &self.out_segs[cur.vertex] {
                let seg = &self.segments[si];
                let next = self.vertex_index[&seg.exit];
                let cand = (cur.dist + seg.length, cur.hops + 1);
                let better = match best.get(&next) {
                    None => true,
                    Some(&(bd, bh)) => cand.0 < bd || (cand.0 == bd && cand.1 < bh),
                };
                if better {
                    best.insert(next, cand);
                    heap.push(HeapEntry {
                        dist: cand.0,
                        hops: cand.1,
                        vertex: next,
                    });
                }
            }
        }
        None
    }

    /// All segments `u` with a directed path to `r` and
    /// `dist(u,r) * distI(u,r) <= d_a`, ordered from vicinity to remote
    /// (ascending weighted distance, ties by ascending id). `r` is excluded.
    ///
    /// Backtracking is bounded: once the plain network distance from a
    /// vertex exceeds `d_a`, no segment behind it can qualify because the
    /// intersection count only multiplies the distance up.
    pub fn upstream_set(&self, r: SegmentId, d_a: f64) -> Result<Vec<UpstreamRoad>, NetError> {
        let ri = self.index_of(r).ok_or(NetError::UnknownSegment(r))?;
        let target = &self.segments[ri];
        let half_r = target.length / 2.0;
        let entrance = self.vertex_index[&target.entrance];

        // Reverse reach: for each vertex v, shortest v -> entrance distance
        // and the segment count of that path, bounded by d_a.
        let mut best: HashMap<usize, (f64, u32)> = HashMap::new();
        best.insert(entrance, (0.0, 0));
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            hops: 0,
            vertex: entrance,
        });
        while let Some(cur) = heap.pop() {
            if let Some(&(bd, bh)) = best.get(&cur.vertex) {
                if (cur.dist, cur.hops) > (bd, bh) {
                    continue;
                }
            }
            if cur.dist > d_a {
                continue;
            }
            for &si in &self.in_segs[cur.vertex] {
                let seg = &self.segments[si];
                let prev = self.vertex_index[&seg.entrance];
                let cand = (cur.dist + seg.length, cur.hops + 1);
                let better = match best.get(&prev) {
                    None => true,
                    Some(&(bd, bh)) => cand.0 < bd || (cand.0 == bd && cand.1 < bh),
                };
                if better && cand.0 <= d_a {
                    best.insert(prev, cand);
                    heap.push(HeapEntry {
                        dist: cand.0,
                        hops: cand.1,
                        vertex: prev,
                    });
                }
            }
        }

        let mut found = Vec::new();
        for (ui, seg) in self.segments.iter().enumerate() {
            if ui == ri {
                continue;
            }
            let Some(&(dv, hops)) = best.get(&self.vertex_index[&seg.exit]) else {
                continue;
            };
            let distance = (seg.length / 2.0) + dv + half_r;
            let intersections = hops + 1;
            let weighted = distance * f64::from(intersections);
            if weighted <= d_a {
                found.push(UpstreamRoad {
                    id: seg.id,
                    distance_m: distance,
                    intersections,
                    weighted,
                });
            }
        }
        found.sort_by(|a, b| {
            a.weighted
                .total_cmp(&b.weighted)
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(found)
    }

    /// Segment sequence of the shortest lawful path between two vertices,
    /// with the same deterministic tie-breaking as the distance queries.
    /// `None` when unreachable; an empty route when `from == to`.
    pub fn route_segments(&self, from: VertexId, to: VertexId) -> Option<Vec<usize>> {
        let from = *self.vertex_index.get(&from)?;
        let to = *self.vertex_index.get(&to)?;
        if from == to {
            return Some(Vec::new());
        }
        let mut best: HashMap<usize, (f64, u32)> = HashMap::new();
        let mut pred: HashMap<usize, usize> = HashMap::new();
        best.insert(from, (0.0, 0));
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            hops: 0,
            vertex: from,
        });
        while let Some(cur) = heap.pop() {
            if let Some(&(bd, bh)) = best.get(&cur.vertex) {
                if (cur.dist, cur.hops) > (bd, bh) {
                    continue;
                }
            }
            if cur.vertex == to {
                break;
            }
            for &si in &self.out_segs[cur.vertex] {
                let seg = &self.segments[si];
                let next = self.vertex_index[&seg.exit];
                let cand = (cur.dist + seg.length, cur.hops + 1);
                let better = match best.get(&next) {
                    None => true,
                    Some(&(bd, bh)) => cand.0 < bd || (cand.0 == bd && cand.1 < bh),
                };
                if better {
                    best.insert(next, cand);
                    pred.insert(next, si);
                    heap.push(HeapEntry {
                        dist: cand.0,
                        hops: cand.1,
                        vertex: next,
                    });
                }
            }
        }
        if !best.contains_key(&to) {
            return None;
        }
        let mut route = Vec::new();
        let mut at = to;
        while at != from {
            let si = pred[&at];
            route.push(si);
            at = self.vertex_index[&self.segments[si].entrance];
        }
        route.reverse();
        Some(route)
    }

    /// Central-point distances from one segment to every segment, in one
    /// pass. `None` where no directed path exists.
    pub fn cp_distances_from(&self, u_idx: usize) -> Vec<Option<f64>> {
        let source = &self.segments[u_idx];
        let tail = source.length / 2.0;
        let start = self.vertex_index[&source.exit];

        let mut best: HashMap<usize, f64> = HashMap::new();
        best.insert(start, 0.0);
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            hops: 0,
            vertex: start,
        });
        while let Some(cur) = heap.pop() {
            if best.get(&cur.vertex).is_some_and(|&d| cur.dist > d) {
                continue;
            }
            for &si in &self.out_segs[cur.vertex] {
                let seg = &self.segments[si];
                let next = self.vertex_index[&seg.exit];
                let cand = cur.dist + seg.length;
                if best.get(&next).map_or(true, |&d| cand < d) {
                    best.insert(next, cand);
                    heap.push(HeapEntry {
                        dist: cand,
                        hops: 0,
                        vertex: next,
                    });
                }
            }
        }

        self.segments
            .iter()
            .enumerate()
            .map(|(ri, seg)| {
                if ri == u_idx {
                    return Some(0.0);
                }
                best.get(&self.vertex_index[&seg.entrance])
                    .map(|&dv| tail + dv + seg.length / 2.0)
            })
            .collect()
    }

    /// Memoized upstream sets for every segment (index order).
    pub fn upstream_sets(&self, d_a: f64) -> Vec<Vec<UpstreamRoad>> {
        use rayon::prelude::*;
        (0..self.segments.len())
            .into_par_iter()
            .map(|i| {
                self.upstream_set(self.segments[i].id, d_a)
                    .expect("segment id from the net itself")
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    hops: u32,
    vertex: usize,
}

impl Eq for HeapEntry {}

// Min-heap on (dist, hops, vertex); distances are never NaN.
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
