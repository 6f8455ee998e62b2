//! End-to-end estimation pipeline and the CSV surfaces that connect the
//! command-line stages. Commands compose through files only; any run is
//! reproducible from its inputs and config echo.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineConfig;
use crate::completion::{complete_all, initialize_history, CompletionConfig, CompletionStats};
use crate::correlation::{build_lag_table, LagTable, TraceDb, Window};
use crate::ingest::{CoverageTable, IntervalIndex, Projection};
use crate::mapmatch::{build_grid_index, match_records, MatchConfig, MatchedRecord, MatchStats};
use crate::roadnet::{RoadNet, SegmentId, UpstreamRoad};
use crate::simgen::SimRecord;
use crate::speed::{
    accumulate_speeds, build_traces, fill_measured, MatchedTrace, Provenance, SpeedTable,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no matched records to process")]
    NoRecords,
    #[error("window width w must be at least 2, got {0}")]
    BadWindow(u32),
    #[error("malformed {kind} line {line}: {reason}")]
    BadLine {
        kind: &'static str,
        line: usize,
        reason: String,
    },
    #[error("missing header in {0} file")]
    MissingHeader(&'static str),
    #[error("unknown segment id {0}")]
    UnknownSegment(u64),
}

/// Engine tunables for one run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Calculation interval T, seconds.
    pub interval_seconds: f64,
    /// Sliding window width in intervals.
    pub w: u32,
    /// Coverage threshold N_thr.
    pub n_thr: u32,
    /// Bucketing origin; defaults to the earliest matched timestamp.
    pub start_time: Option<f64>,
    pub completion: CompletionConfig,
    pub baselines: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            interval_seconds: 80.0,
            w: 12,
            n_thr: 2,
            start_time: None,
            completion: CompletionConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

/// Matched probe data bound to a net; independent of interval length, so
/// parameter sweeps rebuild only the cheap parts.
pub struct Dataset {
    pub net: RoadNet,
    pub matched: Vec<MatchedRecord>,
    pub traces: Vec<MatchedTrace>,
    pub match_stats: MatchStats,
}

impl Dataset {
    pub fn from_matched(net: RoadNet, matched: Vec<MatchedRecord>) -> Self {
        let traces = build_traces(&matched);
        Dataset {
            net,
            matched,
            traces,
            match_stats: MatchStats::default(),
        }
    }

    pub fn match_raw(
        net: RoadNet,
        records: &[crate::ingest::Record],
        config: &MatchConfig,
    ) -> Self {
        let index = build_grid_index(&net, config.cell_size, config.d_min);
        let (matched, match_stats) = match_records(&net, &index, records, config);
        let traces = build_traces(&matched);
        Dataset {
            net,
            matched,
            traces,
            match_stats,
        }
    }
}

/// A fully processed run: measured speeds, initialized history, completed
/// vacancies, and the per-window lag tables.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub intervals: IntervalIndex,
    pub n_intervals: u32,
    pub coverage: CoverageTable,
    pub table: SpeedTable,
    pub neighborhoods: Vec<Vec<UpstreamRoad>>,
    /// Lag table per completed interval; index `n - 1`.
    lag_tables: Vec<Option<LagTable>>,
    pub completion_stats: Vec<CompletionStats>,
}

impl Pipeline {
    pub fn build(dataset: &Dataset, config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        if config.w < 2 {
            return Err(PipelineError::BadWindow(config.w));
        }
        if dataset.matched.is_empty() {
            return Err(PipelineError::NoRecords);
        }
        let start = config.start_time.unwrap_or_else(|| {
            dataset
                .matched
                .iter()
                .map(|r| r.timestamp)
                .fold(f64::INFINITY, f64::min)
        });
        let intervals = IntervalIndex::new(start, config.interval_seconds);
        let max_t = dataset
            .matched
            .iter()
            .map(|r| r.timestamp)
            .fold(f64::NEG_INFINITY, f64::max);
        let n_intervals = intervals.ordinal(max_t).ok_or(PipelineError::NoRecords)?;

        let n_segments = dataset.net.len();
        let coverage = crate::ingest::build_coverage(
            dataset.matched.iter().map(|r| (r.seg_idx, r.timestamp)),
            &intervals,
            n_segments,
            n_intervals,
            config.n_thr,
        );
        let acc = accumulate_speeds(
            &dataset.traces,
            &intervals,
            n_segments,
            n_intervals,
            &dataset.net,
        );
        let mut table = SpeedTable::new(n_segments, n_intervals);
        fill_measured(&mut table, &acc, &coverage);
        initialize_history(&mut table, config.w, &config.completion);

        let neighborhoods = dataset.net.upstream_sets(config.completion.d_a);
        let db = TraceDb::build(&dataset.traces, n_segments);
        let mut lag_tables: Vec<Option<LagTable>> = vec![None; n_intervals as usize];
        let mut completion_stats = Vec::new();
        for n in config.w + 1..=n_intervals {
            let previous = lag_tables[n as usize - 2].as_ref();
            let lags = build_lag_table(
                &dataset.net,
                &db,
                &neighborhoods,
                Window::new(n, config.w),
                &intervals,
                previous,
                config.completion.free_flow_mps,
            );
            let stats = complete_all(
                n,
                config.w,
                &mut table,
                &dataset.net,
                &neighborhoods,
                &lags,
                &config.completion,
            );
            completion_stats.push(stats);
            lag_tables[n as usize - 1] = Some(lags);
        }

        Ok(Pipeline {
            config,
            intervals,
            n_intervals,
            coverage,
            table,
            neighborhoods,
            lag_tables,
            completion_stats,
        })
    }

    pub fn lag_table(&self, n: u32) -> Option<&LagTable> {
        self.lag_tables.get(n as usize - 1).and_then(Option::as_ref)
    }

    /// First interval with a full completion window behind it.
    pub fn first_completed_interval(&self) -> u32 {
        self.config.w + 1
    }

    /// One-step predictions for every segment from the state at `n`.
    pub fn predict_all(&self, net: &RoadNet, n: u32) -> Vec<f64> {
        let lags = self.lag_table(n).expect("prediction needs a lagged window");
        (0..net.len())
            .map(|r_idx| {
                crate::prediction::predict_next(
                    r_idx,
                    n,
                    self.config.w,
                    &self.neighborhoods[r_idx],
                    net,
                    &self.table,
                    lags,
                    self.config.completion.v_max,
                )
            })
            .collect()
    }
}

// --- file formats -----------------------------------------------------------

pub const MATCHED_HEADER: &str = "vehicle_id,timestamp,segment_id,offset_m,speed";
pub const SPEEDS_HEADER: &str = "interval,segment_id,speed_mps,provenance";
pub const TRUTH_HEADER: &str = "interval,segment_id,speed_mps";
pub const LAGS_HEADER: &str = "u,r,k,samples";

pub fn write_matched_csv(matched: &[MatchedRecord]) -> String {
    let mut out = String::from(MATCHED_HEADER);
    out.push('\n');
    for r in matched {
        out.push_str(&format!(
            "{},{:.3},{},{:.3},{:.6}\n",
            r.vehicle_id, r.timestamp, r.segment.0, r.offset_m, r.speed
        ));
    }
    out
}

pub fn read_matched_csv(text: &str, net: &RoadNet) -> Result<Vec<MatchedRecord>, PipelineError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(PipelineError::MissingHeader("matched"))?;
    if header.trim() != MATCHED_HEADER {
        return Err(PipelineError::MissingHeader("matched"));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| PipelineError::BadLine {
            kind: "matched",
            line: i + 1,
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let timestamp: f64 = parts[1].parse().map_err(|_| bad("timestamp"))?;
        let seg: u64 = parts[2].parse().map_err(|_| bad("segment_id"))?;
        let offset_m: f64 = parts[3].parse().map_err(|_| bad("offset_m"))?;
        let speed: f64 = parts[4].parse().map_err(|_| bad("speed"))?;
        let seg_idx = net
            .index_of(SegmentId(seg))
            .ok_or(PipelineError::UnknownSegment(seg))?;
        out.push(MatchedRecord {
            vehicle_id: parts[0].to_string(),
            timestamp,
            segment: SegmentId(seg),
            seg_idx,
            offset_m,
            speed,
        });
    }
    Ok(out)
}

pub fn write_speeds_csv(table: &SpeedTable, net: &RoadNet) -> String {
    let mut out = String::from(SPEEDS_HEADER);
    out.push('\n');
    for j in 1..=table.n_intervals() {
        for seg_idx in 0..table.n_segments() {
            if let Some(e) = table.get(seg_idx, j) {
                out.push_str(&format!(
                    "{},{},{:.6},{}\n",
                    j,
                    net.segment(seg_idx).id.0,
                    e.speed,
                    e.provenance.as_str()
                ));
            }
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct SpeedRowJson {
    interval: u32,
    segment_id: u64,
    speed_mps: f64,
    provenance: &'static str,
}

pub fn write_speeds_json(table: &SpeedTable, net: &RoadNet) -> String {
    let mut rows = Vec::new();
    for j in 1..=table.n_intervals() {
        for seg_idx in 0..table.n_segments() {
            if let Some(e) = table.get(seg_idx, j) {
                rows.push(SpeedRowJson {
                    interval: j,
                    segment_id: net.segment(seg_idx).id.0,
                    speed_mps: e.speed,
                    provenance: e.provenance.as_str(),
                });
            }
        }
    }
    serde_json::to_string_pretty(&rows).expect("rows serialize")
}

pub fn write_records_csv(records: &[SimRecord], projection: &Projection) -> String {
    let mut out = String::from(crate::ingest::RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let (lon, lat) = projection.to_lonlat(&r.position);
        out.push_str(&format!(
            "{},{:.3},{:.8},{:.8},{:.6}\n",
            r.vehicle_id, r.timestamp, lon, lat, r.speed
        ));
    }
    out
}

pub fn write_truth_csv(truth: &[Vec<f64>], net: &RoadNet) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for (j, row) in truth.iter().enumerate() {
        for (seg_idx, v) in row.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:.6}\n",
                j + 1,
                net.segment(seg_idx).id.0,
                v
            ));
        }
    }
    out
}

pub fn write_lags_csv(lags: &LagTable, net: &RoadNet) -> String {
    let mut out = String::from(LAGS_HEADER);
    out.push('\n');
    for (u, r, e) in lags.sorted_rows() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            net.segment(u).id.0,
            net.segment(r).id.0,
            e.k,
            e.samples
        ));
    }
    out
}

/// Measured cells of one interval as `(segment index, speed)` observations.
pub fn measured_at(table: &SpeedTable, j: u32) -> Vec<(usize, f64)> {
    (0..table.n_segments())
        .filter_map(|s| {
            table.get(s, j).and_then(|e| {
                (e.provenance == Provenance::Measured).then_some((s, e.speed))
            })
        })
        .collect()
}

/// Per-interval coverage counts, for quick dataset diagnostics.
pub fn coverage_report(coverage: &CoverageTable) -> Vec<(u32, usize)> {
    (1..=coverage.n_intervals())
        .map(|j| (j, coverage.coverage_count(j)))
        .collect()
}

/// Resolve matched records' segment indices after a net reload (ids are
/// stable across serialization, indices are not guaranteed to be).
pub fn reindex_matched(
    matched: &mut [MatchedRecord],
    net: &RoadNet,
) -> Result<(), PipelineError> {
    let lookup: HashMap<SegmentId, usize> = net
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id, i))
        .collect();
    for r in matched.iter_mut() {
        r.seg_idx = *lookup
            .get(&r.segment)
            .ok_or(PipelineError::UnknownSegment(r.segment.0))?;
    }
    Ok(())
}
