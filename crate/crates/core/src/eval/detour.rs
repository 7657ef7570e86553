//! Detour augmentation for the similarity-search protocol: replace a random
//! subpath of a route with an alternative between the same endpoint segments,
//! subject to an enclosed-area floor and a total-length cap.

use crate::corpus::{RouteRecord, RouteTrajectory};
use crate::error::{Error, Result};
use crate::geo::shoelace_area_m2;
use crate::network::RoadNetwork;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct DetourConfig {
    /// Fraction of the route taken as the rewritten subpath.
    pub subpath_rate: f64,
    /// Minimum area enclosed between old and new subpaths, m^2.
    pub area_threshold_m2: f64,
    /// New total route length must stay within this multiple of the original.
    pub max_length_ratio: f64,
    pub max_attempts: u32,
}

impl Default for DetourConfig {
    fn default() -> Self {
        DetourConfig {
            subpath_rate: 0.38,
            area_threshold_m2: 10_000.0,
            max_length_ratio: 4.0 / 3.0,
            max_attempts: 50,
        }
    }
}

fn route_length_m(net: &RoadNetwork, ids: &[usize]) -> f64 {
    ids.iter()
        .map(|&id| net.segment(id).map(|s| s.length_m).unwrap_or(0.0))
        .sum()
}

/// Area enclosed between two segment paths, computed by the shoelace formula
/// over the polygon of segment midpoints (old forward, new reversed).
pub fn enclosed_area_m2(net: &RoadNetwork, old: &[usize], new: &[usize]) -> f64 {
    let mut polygon: Vec<(f64, f64)> = Vec::with_capacity(old.len() + new.len());
    for &id in old {
        polygon.push(net.segment(id).unwrap().midpoint());
    }
    for &id in new.iter().rev() {
        polygon.push(net.segment(id).unwrap().midpoint());
    }
    shoelace_area_m2(&polygon)
}

/// Size of the multiset symmetric difference between two id sequences.
fn multiset_difference(a: &[usize], b: &[usize]) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for &x in a {
        *counts.entry(x).or_insert(0i64) += 1;
    }
    for &x in b {
        *counts.entry(x).or_insert(0i64) -= 1;
    }
    counts.values().map(|v| v.unsigned_abs() as usize).sum()
}

/// Randomized depth-first search for a path from `from` to `to` (inclusive on
/// both ends) within a metric length budget and a hop cap. Successors are
/// visited in random order, except that segments listed in `avoid` (the old
/// subpath interior) are explored last so the search prefers genuinely
/// deviating routes.
fn random_path_search(
    net: &RoadNetwork,
    from: usize,
    to: usize,
    avoid: &[usize],
    budget_m: f64,
    max_hops: usize,
    rng: &mut Rng,
) -> Option<Vec<usize>> {
    let mut path = vec![from];
    let mut used = vec![false; net.num_segments()];
    used[from] = true;
    let mut spent = net.segment(from).ok()?.length_m;
    // Iterative DFS with per-level shuffled candidate stacks.
    let mut levels: Vec<Vec<usize>> = vec![shuffled_successors(net, from, avoid, rng)];
    while let Some(level) = levels.last_mut() {
        let Some(next) = level.pop() else {
            let backtracked = path.pop()?;
            used[backtracked] = false;
            spent -= net.segment(backtracked).ok()?.length_m;
            levels.pop();
            if levels.is_empty() {
                return None;
            }
            continue;
        };
        if used[next] {
            continue;
        }
        let len = net.segment(next).ok()?.length_m;
        if spent + len > budget_m || path.len() + 1 > max_hops {
            continue;
        }
        path.push(next);
        used[next] = true;
        spent += len;
        if next == to {
            return Some(path);
        }
        levels.push(shuffled_successors(net, next, avoid, rng));
    }
    None
}

/// Candidates in pop order: avoided segments first (popped last).
fn shuffled_successors(
    net: &RoadNetwork,
    seg: usize,
    avoid: &[usize],
    rng: &mut Rng,
) -> Vec<usize> {
    let mut succ = net.neighbors(seg).map(|s| s.to_vec()).unwrap_or_default();
    rng.shuffle(&mut succ);
    succ.sort_by_key(|s| !avoid.contains(s));
    succ
}

/// Candidate acceptance: endpoints fixed by construction; the enclosed area
/// must clear the threshold, the new total length must stay within the ratio
/// cap, and at least two segments must differ.
fn acceptable(
    net: &RoadNetwork,
    old_sub: &[usize],
    alt: &[usize],
    original_total_m: f64,
    cfg: &DetourConfig,
) -> bool {
    if multiset_difference(old_sub, alt) < 2 {
        return false;
    }
    let new_total = original_total_m - route_length_m(net, old_sub) + route_length_m(net, alt);
    if new_total > cfg.max_length_ratio * original_total_m {
        return false;
    }
    enclosed_area_m2(net, old_sub, alt) > cfg.area_threshold_m2
}

/// Rewrite a random subpath of `route` between fixed endpoint segments.
/// Entry times are re-synthesized: the prefix keeps its recorded times, the
/// alternative subpath is traversed at free-flow speed, and the suffix keeps
/// its original per-segment durations.
pub fn detour_augment(
    net: &RoadNetwork,
    route: &RouteTrajectory,
    cfg: &DetourConfig,
    seed: u64,
) -> Result<RouteTrajectory> {
    let m = route.records.len();
    if m < 10 {
        return Err(Error::InvalidArgument(format!(
            "detours need routes of at least 10 segments, got {m}"
        )));
    }
    if !(cfg.subpath_rate > 0.0 && cfg.subpath_rate < 1.0) || !(cfg.area_threshold_m2 > 0.0) {
        return Err(Error::InvalidArgument("bad detour config".to_string()));
    }
    let ids = route.road_ids();
    let total_m = route_length_m(net, &ids);
    let sub_len = ((cfg.subpath_rate * m as f64).round() as usize).clamp(3, m);
    let mut rng = Rng::seed_stream(seed, 0xde70_0e00);
    for _ in 0..cfg.max_attempts {
        let start = rng.index(m - sub_len + 1);
        let end = start + sub_len - 1;
        let old_sub = &ids[start..=end];
        let interior = &ids[start + 1..end];
        let budget = route_length_m(net, old_sub) + (cfg.max_length_ratio - 1.0) * total_m;
        let max_hops = sub_len * 3 + 4;
        let Some(alt) =
            random_path_search(net, ids[start], ids[end], interior, budget, max_hops, &mut rng)
        else {
            continue;
        };
        if !acceptable(net, old_sub, &alt, total_m, cfg) {
            continue;
        }
        // Assemble ids and re-synthesize entry times.
        let mut new_ids: Vec<usize> = Vec::with_capacity(m - sub_len + alt.len());
        new_ids.extend_from_slice(&ids[..start]);
        new_ids.extend_from_slice(&alt);
        new_ids.extend_from_slice(&ids[end + 1..]);

        let mut records = Vec::with_capacity(new_ids.len());
        for (k, rec) in route.records.iter().take(start).enumerate() {
            records.push(RouteRecord {
                road_id: new_ids[k],
                t: rec.t,
            });
        }
        let mut t = route.records[start].t;
        for &id in &alt {
            records.push(RouteRecord { road_id: id, t });
            let s = net.segment(id)?;
            let speed = s.free_speed_mps
                * crate::corpus::congestion_factor(crate::corpus::minute_of_day(t) as f64);
            t += s.length_m / speed;
        }
        for k in end + 1..m {
            records.push(RouteRecord {
                road_id: ids[k],
                t,
            });
            let duration = if k + 1 < m {
                route.records[k + 1].t - route.records[k].t
            } else {
                0.0
            };
            t += duration;
        }
        return Ok(RouteTrajectory { records });
    }
    Err(Error::DetourFailure(cfg.max_attempts))
}

/// Fraction of original route positions whose segment disappears from the
/// detoured copy; used to calibrate the subpath rate.
pub fn detour_rate(original: &RouteTrajectory, detoured: &RouteTrajectory) -> f64 {
    let mut remaining = std::collections::BTreeMap::new();
    for r in &detoured.records {
        *remaining.entry(r.road_id).or_insert(0usize) += 1;
    }
    let mut replaced = 0usize;
    for r in &original.records {
        match remaining.get_mut(&r.road_id) {
            Some(c) if *c > 0 => *c -= 1,
            _ => replaced += 1,
        }
    }
    replaced as f64 / original.records.len() as f64
}
