//! Vacancy completion: estimate a road's missing current-interval speed by
//! minimizing the discrepancy between its previous-window and current-window
//! correlation vectors against upstream contributors, then fill every
//! vacancy of an interval recursively over the road graph.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{c_pre, CorrError, LagTable};
use crate::roadnet::{RoadNet, UpstreamRoad};
use crate::speed::{Provenance, SpeedTable};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Neighborhood threshold on `dist * distI`, meters x count.
    pub d_a: f64,
    /// Minimum contributors with usable speeds for a road to be calculable.
    pub n_min: u32,
    /// Speed search bound, m/s.
    pub v_max: f64,
    /// Solver tolerance, m/s.
    pub tolerance: f64,
    /// Speed assigned when a segment has no usable history. Roads without
    /// data usually carry little traffic, so the default is a high speed.
    pub default_speed: f64,
    /// Free-flow speed for cold lag fallbacks, m/s.
    pub free_flow_mps: f64,
    /// Spatial regions processed independently within one interval.
    pub region_count: u32,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            d_a: 2000.0,
            n_min: 4,
            v_max: 40.0,
            tolerance: 1e-3,
            default_speed: 16.7,
            free_flow_mps: 16.7,
            region_count: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CompletionError {
    #[error("fewer than N_min contributors with usable speeds")]
    NotCalculable,
    #[error("every contributor was dropped as degenerate")]
    AllDegenerate,
    #[error("candidate makes the target window constant")]
    SingularPoint,
}

/// One upstream road participating in a completion: its lag, its frozen
/// previous-window correlation, and the aligned current-window slice.
#[derive(Debug, Clone)]
pub struct Contributor {
    pub seg_idx: usize,
    pub k: u32,
    pub c_pre: f64,
    /// `X_u(n-k-w+1 ..= n-k)`, length `w`.
    pub z: Vec<f64>,
    szz: f64,
    /// Deviation of the slice's last entry (the one aligned with the
    /// candidate position).
    dz_last: f64,
    /// Head-weighted deviations, fixed across candidates.
    dz: Vec<f64>,
}

/// Everything needed to evaluate the completion objective for one road and
/// interval.
#[derive(Debug, Clone)]
pub struct CompletionContext {
    pub w: u32,
    /// `X_r(n-w+1 ..= n-1)`: the known head of the current window.
    pub y_head: Vec<f64>,
    pub contributors: Vec<Contributor>,
}

impl CompletionContext {
    /// Assemble a context from raw slices; drops contributors whose
    /// previous-window correlation or current slice is degenerate.
    pub fn assemble(
        w: u32,
        y_head: Vec<f64>,
        raw: Vec<(usize, u32, f64, Vec<f64>)>,
    ) -> Result<Self, CompletionError> {
        assert_eq!(y_head.len() as u32, w - 1, "head must be w-1 long");
        let mut contributors = Vec::with_capacity(raw.len());
        for (seg_idx, k, pre, z) in raw {
            assert_eq!(z.len() as u32, w, "contributor slice must be w long");
            let zbar = z.iter().sum::<f64>() / f64::from(w);
            let dz: Vec<f64> = z.iter().map(|v| v - zbar).collect();
            let szz: f64 = dz.iter().map(|d| d * d).sum();
            if szz == 0.0 || !pre.is_finite() {
                continue;
            }
            contributors.push(Contributor {
                seg_idx,
                k,
                c_pre: pre,
                dz_last: dz[w as usize - 1],
                dz,
                z,
                szz,
            });
        }
        if contributors.is_empty() {
            return Err(CompletionError::AllDegenerate);
        }
        Ok(CompletionContext {
            w,
            y_head,
            contributors,
        })
    }

    fn y_stats(&self, candidate: f64) -> Result<(Vec<f64>, f64), CompletionError> {
        let w = f64::from(self.w);
        let ybar = (self.y_head.iter().sum::<f64>() + candidate) / w;
        let mut dy: Vec<f64> = self.y_head.iter().map(|v| v - ybar).collect();
        dy.push(candidate - ybar);
        let syy: f64 = dy.iter().map(|d| d * d).sum();
        if syy == 0.0 {
            return Err(CompletionError::SingularPoint);
        }
        Ok((dy, syy))
    }
}

/// Completion objective: the squared discrepancy between the current-window
/// and previous-window correlation vectors, as a function of the candidate
/// speed for the vacant entry.
pub fn objective(candidate: f64, ctx: &CompletionContext) -> Result<f64, CompletionError> {
    let (dy, syy) = ctx.y_stats(candidate)?;
    let mut f = 0.0;
    for c in &ctx.contributors {
        let sxy: f64 = dy.iter().zip(&c.dz).map(|(a, b)| a * b).sum();
        let c_now = sxy / (syy * c.szz).sqrt();
        f += (c_now - c.c_pre).powi(2);
    }
    Ok(f)
}

/// Analytic derivative of [`objective`] with respect to the candidate.
pub fn objective_derivative(
    candidate: f64,
    ctx: &CompletionContext,
) -> Result<f64, CompletionError> {
    let (dy, syy) = ctx.y_stats(candidate)?;
    let dy_last = dy[dy.len() - 1];
    let mut df = 0.0;
    for c in &ctx.contributors {
        let sxy: f64 = dy.iter().zip(&c.dz).map(|(a, b)| a * b).sum();
        let denom = (syy * c.szz).sqrt();
        let c_now = sxy / denom;
        // d(sxy)/ds = dz_last and d(syy)/ds = 2*dy_last, which collapses the
        // quotient rule to this form.
        let dc = (c.dz_last - (sxy / syy) * dy_last) / denom;
        df += 2.0 * (c_now - c.c_pre) * dc;
    }
    Ok(df)
}

/// Minimize the objective over `[0, v_max]`: a coarse grid scan (step =
/// 64 x tolerance) picks the best basin, then bisection on the derivative
/// refines it. Ties break toward the lower speed.
pub fn solve_single_vacancy(
    ctx: &CompletionContext,
    config: &CompletionConfig,
) -> Result<f64, CompletionError> {
    let step = config.tolerance * 64.0;
    let mut best: Option<(f64, f64)> = None;
    let mut s = 0.0;
    while s <= config.v_max + 1e-12 {
        let at = s.min(config.v_max);
        if let Ok(f) = objective(at, ctx) {
            if best.map_or(true, |(_, bf)| f < bf) {
                best = Some((at, f));
            }
        }
        s += step;
    }
    let (best_s, best_f) = best.ok_or(CompletionError::AllDegenerate)?;

    let lo = (best_s - step).max(0.0);
    let hi = (best_s + step).min(config.v_max);
    if let (Ok(dlo), Ok(dhi)) = (objective_derivative(lo, ctx), objective_derivative(hi, ctx)) {
        if dlo < 0.0 && dhi > 0.0 {
            let (mut lo, mut hi) = (lo, hi);
            while hi - lo > config.tolerance {
                let mid = 0.5 * (lo + hi);
                match objective_derivative(mid, ctx) {
                    Ok(d) if d < 0.0 => lo = mid,
                    Ok(_) => hi = mid,
                    Err(_) => break,
                }
            }
            let refined = 0.5 * (lo + hi);
            if objective(refined, ctx).map_or(false, |f| f <= best_f) {
                return Ok(refined);
            }
        }
    }
    Ok(best_s)
}

/// Interval-`n` speed lookup that layers region-local completions over the
/// immutable snapshot taken at the start of `complete_all`.
struct RegionView<'a> {
    table: &'a SpeedTable,
    n: u32,
    overlay: HashMap<usize, (f64, Provenance)>,
}

impl<'a> RegionView<'a> {
    fn speed(&self, seg_idx: usize, j: u32) -> Option<f64> {
        if j == self.n {
            if let Some(&(v, _)) = self.overlay.get(&seg_idx) {
                return Some(v);
            }
        }
        self.table.speed(seg_idx, j)
    }

    fn slice(&self, seg_idx: usize, from: u32, to: u32) -> Option<Vec<f64>> {
        (from..=to)
            .map(|j| self.speed(seg_idx, j))
            .collect::<Option<Vec<f64>>>()
    }
}

fn contributor_available(view: &RegionView, u_idx: usize, n: u32, w: u32, k: u32) -> bool {
    let lo = i64::from(n) - i64::from(k) - i64::from(w);
    if lo < 1 {
        return false;
    }
    (lo as u32..=n - k).all(|j| view.speed(u_idx, j).is_some())
}

/// A vacant road is calculable when at least `N_min` of its neighborhood
/// contributors have every speed index required by the correlation windows.
pub fn is_calculable(
    r_idx: usize,
    n: u32,
    w: u32,
    upstream: &[UpstreamRoad],
    net: &RoadNet,
    table: &SpeedTable,
    lags: &LagTable,
    config: &CompletionConfig,
) -> bool {
    let view = RegionView {
        table,
        n,
        overlay: HashMap::new(),
    };
    available_count(&view, r_idx, n, w, upstream, net, lags) >= config.n_min
}

fn available_count(
    view: &RegionView,
    r_idx: usize,
    n: u32,
    w: u32,
    upstream: &[UpstreamRoad],
    net: &RoadNet,
    lags: &LagTable,
) -> u32 {
    upstream
        .iter()
        .filter(|up| {
            let u_idx = net.index_of(up.id).expect("neighborhood id");
            lags.get(u_idx, r_idx)
                .map_or(false, |lag| contributor_available(view, u_idx, n, w, lag.k))
        })
        .count() as u32
}

fn build_context(
    view: &RegionView,
    r_idx: usize,
    n: u32,
    w: u32,
    upstream: &[UpstreamRoad],
    net: &RoadNet,
    lags: &LagTable,
    config: &CompletionConfig,
) -> Result<CompletionContext, CompletionError> {
    let mut available = Vec::new();
    for up in upstream {
        let u_idx = net.index_of(up.id).expect("neighborhood id");
        let Some(lag) = lags.get(u_idx, r_idx) else {
            continue;
        };
        if contributor_available(view, u_idx, n, w, lag.k) {
            available.push((u_idx, lag.k));
        }
    }
    if (available.len() as u32) < config.n_min {
        return Err(CompletionError::NotCalculable);
    }

    let y_head = view
        .slice(r_idx, n - w + 1, n - 1)
        .expect("history below n is fully populated");

    let mut raw = Vec::with_capacity(available.len());
    for (u_idx, k) in available {
        // The previous-window correlation reads only history (< n), so the
        // shared table is authoritative for it.
        let pre = match c_pre(u_idx, r_idx, n, w, k, view.table) {
            Ok(v) => v,
            Err(CorrError::DegenerateSeries) => continue,
            Err(_) => continue,
        };
        let lo = n - k - w + 1;
        let Some(z) = view.slice(u_idx, lo, n - k) else {
            continue;
        };
        raw.push((u_idx, k, pre, z));
    }
    let ctx = CompletionContext::assemble(w, y_head, raw)?;
    if (ctx.contributors.len() as u32) < config.n_min {
        return Err(CompletionError::NotCalculable);
    }
    Ok(ctx)
}

/// Fallback when a road cannot be completed: its own measured history mean,
/// or the configured default speed if it was never measured.
fn fallback_speed(table: &SpeedTable, seg_idx: usize, n: u32, config: &CompletionConfig) -> f64 {
    let mut sum = 0.0;
    let mut count = 0u32;
    for j in 1..n {
        if let Some(e) = table.get(seg_idx, j) {
            if e.provenance == Provenance::Measured {
                sum += e.speed;
                count += 1;
            }
        }
    }
    if count == 0 {
        config.default_speed
    } else {
        sum / f64::from(count)
    }
}

/// Fill vacancies in the first `w` intervals from each segment's own
/// measured mean over those intervals, or the default speed.
pub fn initialize_history(table: &mut SpeedTable, w: u32, config: &CompletionConfig) {
    let upto = w.min(table.n_intervals());
    for seg_idx in 0..table.n_segments() {
        let mut sum = 0.0;
        let mut count = 0u32;
        for j in 1..=upto {
            if let Some(e) = table.get(seg_idx, j) {
                if e.provenance == Provenance::Measured {
                    sum += e.speed;
                    count += 1;
                }
            }
        }
        let fill = if count == 0 {
            config.default_speed
        } else {
            sum / f64::from(count)
        };
        for j in 1..=upto {
            if table.get(seg_idx, j).is_none() {
                table.set(seg_idx, j, fill, Provenance::Initialized);
            }
        }
    }
}

/// Disjoint, exhaustive spatial partition of the segments (by central
/// point): the most populated region is split at its coordinate median
/// along the wider axis until `region_count` regions exist. Two rounds of
/// splits quarter the bounding box.
pub fn partition_regions(net: &RoadNet, region_count: u32) -> Vec<Vec<usize>> {
    let cps: Vec<_> = net.segments().iter().map(|s| s.central_point()).collect();
    let mut regions: Vec<Vec<usize>> = vec![(0..net.len()).collect()];
    while (regions.len() as u32) < region_count {
        let Some(target) = (0..regions.len())
            .filter(|&i| regions[i].len() >= 2)
            .max_by_key(|&i| (regions[i].len(), usize::MAX - i))
        else {
            break;
        };
        let mut members = std::mem::take(&mut regions[target]);
        let (min_x, max_x) = members
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(cps[s].x), hi.max(cps[s].x))
            });
        let (min_y, max_y) = members
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(cps[s].y), hi.max(cps[s].y))
            });
        let by_x = (max_x - min_x) >= (max_y - min_y);
        members.sort_by(|&a, &b| {
            let (ka, kb) = if by_x {
                (cps[a].x, cps[b].x)
            } else {
                (cps[a].y, cps[b].y)
            };
            ka.total_cmp(&kb).then(a.cmp(&b))
        });
        let right = members.split_off(members.len() / 2);
        members.sort_unstable();
        let mut right = right;
        right.sort_unstable();
        regions[target] = members;
        regions.push(right);
    }
    while (regions.len() as u32) < region_count {
        regions.push(Vec::new());
    }
    regions
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CompletionStats {
    pub completed: usize,
    pub fallback: usize,
}

enum Phase {
    Enter,
    Resolve,
}

fn region_fill(
    n: u32,
    w: u32,
    table: &SpeedTable,
    net: &RoadNet,
    neighborhoods: &[Vec<UpstreamRoad>],
    lags: &LagTable,
    config: &CompletionConfig,
    region: &[usize],
) -> Vec<(usize, f64, Provenance)> {
    let in_region: Vec<bool> = {
        let mut flags = vec![false; net.len()];
        for &s in region {
            flags[s] = true;
        }
        flags
    };
    let mut view = RegionView {
        table,
        n,
        overlay: HashMap::new(),
    };
    let mut in_progress = vec![false; net.len()];
    let mut order = Vec::new();

    for &start in region {
        if view.speed(start, n).is_some() {
            continue;
        }
        let mut stack = vec![(start, Phase::Enter)];
        while let Some((r_idx, phase)) = stack.pop() {
            match phase {
                Phase::Enter => {
                    if view.speed(r_idx, n).is_some() || in_progress[r_idx] {
                        continue;
                    }
                    in_progress[r_idx] = true;
                    match build_context(
                        &view,
                        r_idx,
                        n,
                        w,
                        &neighborhoods[r_idx],
                        net,
                        lags,
                        config,
                    ) {
                        Ok(ctx) => {
                            let value = solve_single_vacancy(&ctx, config)
                                .map(|v| (v, Provenance::Completed))
                                .unwrap_or_else(|_| {
                                    (fallback_speed(table, r_idx, n, config), Provenance::Fallback)
                                });
                            view.overlay.insert(r_idx, value);
                            order.push(r_idx);
                            in_progress[r_idx] = false;
                        }
                        Err(_) => {
                            // Fill missing contributors first, vicinity to
                            // remote, then come back and decide.
                            stack.push((r_idx, Phase::Resolve));
                            for up in neighborhoods[r_idx].iter().rev() {
                                let u_idx = net.index_of(up.id).expect("neighborhood id");
                                if in_region[u_idx]
                                    && !in_progress[u_idx]
                                    && view.speed(u_idx, n).is_none()
                                {
                                    stack.push((u_idx, Phase::Enter));
                                }
                            }
                        }
                    }
                }
                Phase::Resolve => {
                    let value = match build_context(
                        &view,
                        r_idx,
                        n,
                        w,
                        &neighborhoods[r_idx],
                        net,
                        lags,
                        config,
                    ) {
                        Ok(ctx) => solve_single_vacancy(&ctx, config)
                            .map(|v| (v, Provenance::Completed))
                            .unwrap_or_else(|_| {
                                (fallback_speed(table, r_idx, n, config), Provenance::Fallback)
                            }),
                        Err(_) => (fallback_speed(table, r_idx, n, config), Provenance::Fallback),
                    };
                    view.overlay.insert(r_idx, value);
                    order.push(r_idx);
                    in_progress[r_idx] = false;
                }
            }
        }
    }

    order
        .into_iter()
        .map(|seg| {
            let (v, p) = view.overlay[&seg];
            (seg, v, p)
        })
        .collect()
}

/// Fill every vacancy at interval `n`. Covered roads must already carry
/// their measured speeds; everything else is completed recursively from its
/// upstream neighborhood or falls back to its own history. Regions are
/// processed against the same entry snapshot, in parallel or serially with
/// identical results.
pub fn complete_all(
    n: u32,
    w: u32,
    table: &mut SpeedTable,
    net: &RoadNet,
    neighborhoods: &[Vec<UpstreamRoad>],
    lags: &LagTable,
    config: &CompletionConfig,
) -> CompletionStats {
    use rayon::prelude::*;
    assert!(n > w, "completion needs a full window of history");
    assert!(n <= table.n_intervals());
    let regions = partition_regions(net, config.region_count.max(1));
    let updates: Vec<Vec<(usize, f64, Provenance)>> = regions
        .par_iter()
        .map(|region| region_fill(n, w, table, net, neighborhoods, lags, config, region))
        .collect();

    let mut stats = CompletionStats::default();
    for batch in updates {
        for (seg, v, p) in batch {
            table.set(seg, n, v, p);
            match p {
                Provenance::Completed => stats.completed += 1,
                _ => stats.fallback += 1,
            }
        }
    }
    stats
}
