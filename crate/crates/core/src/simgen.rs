//! Synthetic scenarios: Manhattan-grid road nets and vehicle traces drawn
//! from a lag-correlated ground-truth speed field, so the estimation stack
//! can be exercised with known answers at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::IntervalIndex;
use crate::roadnet::{Point, RoadNet, RoadSegment, SegmentId, VertexId};

/// Manhattan grid of `rows x cols` intersections with paired one-way
/// segments on every block edge, so each direction is its own segment:
/// `2 * (rows*(cols-1) + cols*(rows-1))` segments in total.
///
/// The two directions share their endpoint vertices but run on laterally
/// offset carriageways, like real divided roads; otherwise geometric
/// matching could not tell the directions apart.
pub fn generate_grid_net(rows: u32, cols: u32, edge_length: f64) -> RoadNet {
    assert!(rows >= 2 && cols >= 2, "grids start at 2x2");
    let vertex = |r: u32, c: u32| VertexId(u64::from(r * cols + c));
    let coord = |r: u32, c: u32| {
        Point::new(f64::from(c) * edge_length, f64::from(r) * edge_length)
    };
    let lane_offset = 2.0f64.min(edge_length / 20.0);
    let taper = 3.0f64.min(edge_length / 4.0);
    let carriageway = |from: Point, to: Point| {
        let len = from.dist(&to);
        let dir = Point::new((to.x - from.x) / len, (to.y - from.y) / len);
        let normal = Point::new(dir.y, -dir.x);
        vec![
            from,
            Point::new(
                from.x + dir.x * taper + normal.x * lane_offset,
                from.y + dir.y * taper + normal.y * lane_offset,
            ),
            Point::new(
                to.x - dir.x * taper + normal.x * lane_offset,
                to.y - dir.y * taper + normal.y * lane_offset,
            ),
            to,
        ]
    };
    let mut segments = Vec::new();
    let mut next_id = 1u64;
    let mut push_pair = |a: (u32, u32), b: (u32, u32), segments: &mut Vec<RoadSegment>| {
        for (from, to) in [(a, b), (b, a)] {
            segments.push(RoadSegment {
                id: SegmentId(next_id),
                polyline: carriageway(coord(from.0, from.1), coord(to.0, to.1)),
                entrance: vertex(from.0, from.1),
                exit: vertex(to.0, to.1),
                length: 0.0,
            });
            next_id += 1;
        }
    };
    for r in 0..rows {
        for c in 0..cols - 1 {
            push_pair((r, c), (r, c + 1), &mut segments);
        }
    }
    for c in 0..cols {
        for r in 0..rows - 1 {
            push_pair((r, c), (r + 1, c), &mut segments);
        }
    }
    RoadNet::from_segments(segments).expect("generated grid is valid")
}

/// Ground-truth field parameters: a daily sinusoid base, continuously
/// varying congestion carriers that propagate downstream at `wave_speed`,
/// and smooth seeded per-segment jitter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldConfig {
    pub base_speed: f64,
    /// Half-width of the static per-road base-speed spread, m/s. Roads
    /// genuinely differ in typical speed; spatial interpolation has to eat
    /// that spread, correlation methods do not.
    pub base_spread: f64,
    pub daily_amplitude: f64,
    pub daily_period: f64,
    /// Amplitude of each source's congestion carrier, m/s.
    pub wave_amplitude: f64,
    /// Downstream propagation speed of congestion features, m/s.
    pub wave_speed: f64,
    /// Longest carrier period, seconds; the harmonics derive from it.
    pub wave_period: f64,
    pub wave_sources: u32,
    /// Distance scale over which carrier amplitude decays, meters.
    pub wave_decay: f64,
    pub noise_amplitude: f64,
    pub noise_period: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            base_speed: 10.0,
            base_spread: 2.0,
            daily_amplitude: 1.5,
            daily_period: 86_400.0,
            wave_amplitude: 3.0,
            wave_speed: 5.0,
            wave_period: 900.0,
            wave_sources: 4,
            wave_decay: 2_500.0,
            noise_amplitude: 0.5,
            noise_period: 700.0,
            min_speed: 1.0,
            max_speed: 30.0,
            seed: 42,
        }
    }
}

/// Ground-truth travel speed per segment as a function of time.
#[derive(Debug, Clone)]
pub struct SpeedField {
    config: FieldConfig,
    /// Per wave source: propagation delay to each segment, seconds.
    delays: Vec<Vec<Option<f64>>>,
    /// Per source: phases of its three carrier harmonics.
    carrier_phases: Vec<[f64; 3]>,
    /// Per segment noise phase.
    noise_phase: Vec<f64>,
    /// Static per-segment base-speed offset.
    base_offset: Vec<f64>,
}

impl SpeedField {
    pub fn build(net: &RoadNet, config: FieldConfig) -> SpeedField {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut delays = Vec::new();
        let mut carrier_phases = Vec::new();
        for _ in 0..config.wave_sources {
            let source = rng.gen_range(0..net.len());
            let per_seg = net
                .cp_distances_from(source)
                .into_iter()
                .map(|d| d.map(|m| m / config.wave_speed))
                .collect();
            delays.push(per_seg);
            carrier_phases.push([
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ]);
        }
        let noise_phase = (0..net.len())
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let base_offset = (0..net.len())
            .map(|_| rng.gen_range(-config.base_spread..=config.base_spread))
            .collect();
        SpeedField {
            config,
            delays,
            carrier_phases,
            noise_phase,
            base_offset,
        }
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    /// A source's carrier waveform: three incommensurate harmonics, so the
    /// signal keeps varying instead of repeating a clean cycle.
    fn carrier(&self, source: usize, local_t: f64) -> f64 {
        let p = self.config.wave_period;
        let ph = &self.carrier_phases[source];
        let tau = std::f64::consts::TAU;
        0.55 * (tau * local_t / p + ph[0]).sin()
            + 0.30 * (tau * local_t / (p / 2.7) + ph[1]).sin()
            + 0.15 * (tau * local_t / (p / 6.1) + ph[2]).sin()
    }

    pub fn speed_at(&self, seg_idx: usize, t: f64) -> f64 {
        let c = &self.config;
        let mut v = c.base_speed
            + self.base_offset[seg_idx]
            + c.daily_amplitude * (std::f64::consts::TAU * t / c.daily_period).sin();
        for (src, per_seg) in self.delays.iter().enumerate() {
            if let Some(delay) = per_seg[seg_idx] {
                let decay = (-(delay * c.wave_speed) / c.wave_decay).exp();
                v -= c.wave_amplitude * decay * self.carrier(src, t - delay);
            }
        }
        if c.noise_amplitude > 0.0 {
            v += c.noise_amplitude
                * (std::f64::consts::TAU * t / c.noise_period + self.noise_phase[seg_idx]).sin();
        }
        v.clamp(c.min_speed, c.max_speed)
    }
}

/// The lag the generator built into a connected pair: the floored
/// wave-propagation delay between the central points, in interval units.
pub fn true_lag(net: &RoadNet, u_idx: usize, r_idx: usize, wave_speed: f64, t: f64) -> Option<u32> {
    let d = net
        .cp_distance(net.segment(u_idx).id, net.segment(r_idx).id)
        .ok()?;
    Some((d / (wave_speed * t)).floor() as u32)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceConfig {
    pub n_vehicles: u32,
    pub duration: f64,
    pub report_period: f64,
    pub gps_noise_sigma: f64,
    pub start_time: f64,
    /// Mean length of one reporting session. Probe vehicles contribute in
    /// bounded stints (a trip, a shift); each stint gets a fresh vehicle id
    /// and a fresh spawn. Zero keeps a vehicle alive for the whole run.
    pub session_seconds: f64,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            n_vehicles: 300,
            duration: 4.0 * 3600.0,
            report_period: 30.0,
            gps_noise_sigma: 8.0,
            start_time: 0.0,
            session_seconds: 900.0,
            seed: 42,
        }
    }
}

/// One simulated probe report, with the ground-truth segment kept for
/// harness checks (the CSV surface drops it).
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub vehicle_id: String,
    pub timestamp: f64,
    pub position: Point,
    pub speed: f64,
    pub true_segment: SegmentId,
    pub true_offset: f64,
}

/// Vehicles wander the directed graph through randomly drawn waypoints,
/// driving each leg along the shortest lawful path at the field's local
/// speed, and report every `report_period` seconds with Gaussian position
/// noise. Purposeful legs (rather than per-vertex coin flips) mirror how
/// probe vehicles actually move and keep tracked travel times meaningful.
/// Identical configs produce identical byte-for-byte output.
pub fn generate_traces(net: &RoadNet, field: &SpeedField, config: &TraceConfig) -> Vec<SimRecord> {
    assert!(config.report_period > 0.0);
    let mut out = Vec::new();
    for v in 0..config.n_vehicles {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add(u64::from(v).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let end = config.start_time + config.duration;
        let mut session_start = config.start_time;
        let mut session = 0u32;
        while session_start < end {
            let session_end = if config.session_seconds > 0.0 {
                let jitter = 0.7 + 0.6 * rng.gen_range(0.0..1.0);
                (session_start + config.session_seconds * jitter).min(end)
            } else {
                end
            };
            let vehicle_id = format!("v{v}s{session}");
            let left_at = drive_session(
                net,
                field,
                config,
                &vehicle_id,
                session_start,
                session_end,
                &mut rng,
                &mut out,
            );
            // A vehicle that ran off the monitored net ends its session
            // there; the next one starts fresh.
            session_start = left_at.unwrap_or(session_end);
            session += 1;
        }
    }
    out.sort_by(|a, b| {
        a.vehicle_id
            .cmp(&b.vehicle_id)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    out
}

/// Returns `Some(t)` when the vehicle hit a dead end at time `t` and left
/// the net before the session was over.
#[allow(clippy::too_many_arguments)]
fn drive_session(
    net: &RoadNet,
    field: &SpeedField,
    config: &TraceConfig,
    vehicle_id: &str,
    start: f64,
    end: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<SimRecord>,
) -> Option<f64> {
    let mut seg_idx = rng.gen_range(0..net.len());
    let mut offset = rng.gen_range(0.0..net.segment(seg_idx).length);
    let mut route: Vec<usize> = Vec::new();
    let mut t = start;
    let mut next_report = t + rng.gen_range(0.0..config.report_period);

    while t < end {
        let speed = field.speed_at(seg_idx, t);
        let seg_len = net.segment(seg_idx).length;
        let time_to_exit = (seg_len - offset) / speed;
        let dt = time_to_exit.min(1.0).min(end - t).max(1e-6);

        while next_report <= t + dt && next_report < end {
            let off_at = offset + speed * (next_report - t);
            let clean = net.segment(seg_idx).point_at(off_at);
            let position = if config.gps_noise_sigma > 0.0 {
                Point::new(
                    clean.x + gaussian(rng) * config.gps_noise_sigma,
                    clean.y + gaussian(rng) * config.gps_noise_sigma,
                )
            } else {
                clean
            };
            out.push(SimRecord {
                vehicle_id: vehicle_id.to_string(),
                timestamp: next_report,
                position,
                speed,
                true_segment: net.segment(seg_idx).id,
                true_offset: off_at,
            });
            next_report += config.report_period;
        }

        offset += speed * dt;
        t += dt;
        if offset >= seg_len - 1e-9 {
            if route.is_empty() {
                route = plan_leg(net, seg_idx, rng);
            }
            match route.pop() {
                Some(next) => {
                    seg_idx = next;
                    offset = 0.0;
                }
                None => return Some(t),
            }
        }
    }
    None
}

/// Next leg of a vehicle's journey: the shortest-path segment sequence from
/// the current segment's exit to a randomly drawn reachable vertex, stored
/// back-to-front so driving pops from the end.
fn plan_leg(net: &RoadNet, seg_idx: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let from = net.segment(seg_idx).exit;
    for _ in 0..8 {
        let dest = net.vertices()[rng.gen_range(0..net.vertices().len())];
        if dest == from {
            continue;
        }
        if let Some(route) = net.route_segments(from, dest) {
            if !route.is_empty() {
                let mut reversed = route;
                reversed.reverse();
                return reversed;
            }
        }
    }
    // Nothing reachable was drawn; fall back to any outward neighbor.
    net.outward_neighbors(seg_idx).first().map(|&n| vec![n]).unwrap_or_default()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Field truth per (interval, segment), sampled at interval midpoints.
pub fn ground_truth(
    net: &RoadNet,
    field: &SpeedField,
    intervals: &IntervalIndex,
    n_intervals: u32,
) -> Vec<Vec<f64>> {
    (1..=n_intervals)
        .map(|j| {
            let mid = intervals.midpoint(j);
            (0..net.len()).map(|s| field.speed_at(s, mid)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_match_closed_form() {
        let net = generate_grid_net(2, 2, 100.0);
        assert_eq!(net.len(), 8);
        assert_eq!(net.vertices().len(), 4);

        let net5 = generate_grid_net(5, 5, 100.0);
        assert_eq!(net5.len(), 2 * (5 * 4 + 5 * 4));
    }

    #[test]
    fn every_grid_segment_has_outward_neighbors() {
        let net = generate_grid_net(2, 2, 100.0);
        for i in 0..net.len() {
            assert!(!net.outward_neighbors(i).is_empty());
        }
    }

    #[test]
    fn constant_field_reports_exact_speed() {
        let net = generate_grid_net(3, 3, 200.0);
        let config = FieldConfig {
            daily_amplitude: 0.0,
            wave_amplitude: 0.0,
            noise_amplitude: 0.0,
            base_speed: 9.0,
            base_spread: 0.0,
            ..FieldConfig::default()
        };
        let field = SpeedField::build(&net, config);
        let traces = generate_traces(
            &net,
            &field,
            &TraceConfig {
                n_vehicles: 5,
                duration: 600.0,
                gps_noise_sigma: 0.0,
                ..TraceConfig::default()
            },
        );
        assert!(!traces.is_empty());
        for rec in &traces {
            assert_eq!(rec.speed, 9.0);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_traces() {
        let net = generate_grid_net(3, 3, 200.0);
        let field = SpeedField::build(&net, FieldConfig::default());
        let config = TraceConfig {
            n_vehicles: 8,
            duration: 900.0,
            ..TraceConfig::default()
        };
        let a = generate_traces(&net, &field, &config);
        let b = generate_traces(&net, &field, &config);
        assert_eq!(a, b);
    }

    #[test]
    fn truth_matches_field_at_midpoints() {
        let net = generate_grid_net(3, 3, 200.0);
        let field = SpeedField::build(&net, FieldConfig::default());
        let intervals = IntervalIndex::new(0.0, 80.0);
        let truth = ground_truth(&net, &field, &intervals, 5);
        assert_eq!(truth.len(), 5);
        for (j, row) in truth.iter().enumerate() {
            let mid = intervals.midpoint(j as u32 + 1);
            for (s, &v) in row.iter().enumerate() {
                assert_eq!(v, field.speed_at(s, mid));
                assert!(v >= field.config().min_speed && v <= field.config().max_speed);
            }
        }
    }

    #[test]
    fn coverage_grows_with_fleet_size() {
        let net = generate_grid_net(4, 4, 300.0);
        let field = SpeedField::build(&net, FieldConfig::default());
        let count_hits = |n_vehicles: u32| {
            let traces = generate_traces(
                &net,
                &field,
                &TraceConfig {
                    n_vehicles,
                    duration: 1200.0,
                    ..TraceConfig::default()
                },
            );
            let mut cells: Vec<(usize, u32)> = traces
                .iter()
                .map(|r| {
                    (
                        net.index_of(r.true_segment).unwrap(),
                        (r.timestamp / 80.0) as u32,
                    )
                })
                .collect();
            cells.sort_unstable();
            cells.dedup();
            cells.len()
        };
        // Vehicle streams only depend on (seed, vehicle index), so a larger
        // fleet strictly extends a smaller one.
        assert!(count_hits(40) >= count_hits(10));
        assert!(count_hits(10) >= count_hits(3));
    }

    #[test]
    fn true_lag_uses_wave_delay() {
        let net = generate_grid_net(3, 3, 450.0);
        // Directly connected pair: cp-to-cp distance is one edge length.
        let r_idx = net.outward_neighbors(0)[0];
        let lag = true_lag(&net, 0, r_idx, 10.0, 40.0).unwrap();
        assert_eq!(lag, (450.0f64 / (10.0 * 40.0)).floor() as u32);
    }
}
