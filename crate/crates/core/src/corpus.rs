//! Paired GPS/route trajectories with ground-truth assignment, plus the
//! feature matrices both encoders consume.
//!
//! The generator walks the directed network, traverses each segment at a
//! congestion- and noise-modulated speed, samples GPS fixes along the way and
//! records which contiguous run of fixes belongs to which segment. Because the
//! walk is the ground truth there is no map-matching step: the assignment
//! matrix is exact by construction.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;
use crate::network::RoadNetwork;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Local timezone offset (seconds). The synthetic calendar is fixed to UTC+8.
pub const TZ_OFFSET_S: i64 = 8 * 3600;

/// Unix time of the first synthetic day at local midnight (2018-11-01 00:00 UTC+8).
pub const CORPUS_BASE_UNIX: f64 = 1_541_001_600.0;

/// Number of synthetic days the corpus spans.
pub const CORPUS_DAYS: usize = 15;

/// Guard for zero time deltas when dividing.
pub const TIME_EPS_S: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsPoint {
    pub lat: f64,
    pub lng: f64,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpsTrajectory {
    pub points: Vec<GpsPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteRecord {
    pub road_id: usize,
    /// Entry time of the segment, unix seconds.
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteTrajectory {
    pub records: Vec<RouteRecord>,
}

impl RouteTrajectory {
    pub fn road_ids(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.road_id).collect()
    }
}

/// One row maps GPS point indices [start, end] (inclusive) to a road segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssignmentRow {
    pub start: usize,
    pub end: usize,
    pub road_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub rows: Vec<AssignmentRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPair {
    pub traj_id: u64,
    pub gps: GpsTrajectory,
    pub route: RouteTrajectory,
    pub assignment: AssignmentMatrix,
}

impl TrajectoryPair {
    pub fn start_time(&self) -> f64 {
        self.route.records[0].t
    }

    /// Total duration in seconds, first GPS fix to last.
    pub fn duration_s(&self) -> f64 {
        self.gps.points.last().unwrap().t - self.gps.points[0].t
    }
}

/// n x 7 kinematic features per GPS point.
#[derive(Clone, Debug)]
pub struct GpsFeatureMatrix {
    pub values: Tensor,
}

pub const GPS_COL_LNG: usize = 0;
pub const GPS_COL_LAT: usize = 1;
pub const GPS_COL_SPEED: usize = 2;
pub const GPS_COL_ACCEL: usize = 3;
pub const GPS_COL_ANGLE_DELTA: usize = 4;
pub const GPS_COL_TIME_DELTA: usize = 5;
pub const GPS_COL_DISTANCE: usize = 6;
pub const GPS_FEATURES: usize = 7;

/// m x 4 features per route record: road id, travel-time delta, minute index,
/// weekday index.
#[derive(Clone, Debug)]
pub struct RouteFeatureMatrix {
    pub values: Tensor,
}

pub const ROUTE_COL_ROAD_ID: usize = 0;
pub const ROUTE_COL_TIME_DELTA: usize = 1;
pub const ROUTE_COL_MINUTE: usize = 2;
pub const ROUTE_COL_WEEKDAY: usize = 3;
pub const ROUTE_FEATURES: usize = 4;

/// Minute-of-day in [0, 1440) for a unix timestamp in the fixed local zone.
pub fn minute_of_day(unix: f64) -> usize {
    let local = unix.floor() as i64 + TZ_OFFSET_S;
    (local.div_euclid(60).rem_euclid(1440)) as usize
}

/// Weekday index 0-6, 0 = Monday, in the fixed local zone.
pub fn weekday_index(unix: f64) -> usize {
    let local = unix.floor() as i64 + TZ_OFFSET_S;
    // 1970-01-01 was a Thursday (= 3 with Monday = 0).
    ((local.div_euclid(86_400) + 3).rem_euclid(7)) as usize
}

/// Day index relative to the corpus base date.
pub fn corpus_day(unix: f64) -> i64 {
    let local = unix.floor() as i64 + TZ_OFFSET_S;
    let base = CORPUS_BASE_UNIX as i64 + TZ_OFFSET_S;
    (local - base).div_euclid(86_400)
}

/// Daily speed factor in [0.5, 1.0]. Congestion peaks (slowest traffic) at
/// minutes 510 and 1080.
pub fn congestion_factor(minute: f64) -> f64 {
    let sigma = 120.0;
    let bump = |center: f64| (-((minute - center) * (minute - center)) / (2.0 * sigma * sigma)).exp();
    (1.0 - 0.5 * (bump(510.0) + bump(1080.0))).clamp(0.5, 1.0)
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub min_segments: usize,
    pub max_segments: usize,
    pub sample_period_s: f64,
    pub gps_noise_m: f64,
    /// Sigma of the lognormal speed noise; 0 disables it.
    pub speed_noise_sigma: f64,
    /// Fixed start segment; random when absent.
    pub start_segment: Option<usize>,
    pub traj_id: u64,
    /// Time-of-day window (seconds since local midnight) that corpus start
    /// times are drawn from; the end may exceed 86400 to wrap past midnight.
    pub tod_window_s: (f64, f64),
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            min_segments: 10,
            max_segments: 20,
            sample_period_s: 15.0,
            gps_noise_m: 8.0,
            speed_noise_sigma: 0.15,
            start_segment: None,
            traj_id: 0,
            tod_window_s: (0.0, 86_400.0),
        }
    }
}

/// Random walk over the directed graph with no immediate U-turns unless at a
/// dead end and a 0.6 continuation bias toward minimal heading change.
fn random_walk(net: &RoadNetwork, len: usize, start: usize, rng: &mut Rng) -> Option<Vec<usize>> {
    let mut walk = Vec::with_capacity(len);
    walk.push(start);
    let mut current = start;
    while walk.len() < len {
        let all = net.neighbors(current).ok()?;
        let reverse = net.reverse_of(current);
        let candidates: Vec<usize> = {
            let filtered: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&j| Some(j) != reverse)
                .collect();
            if filtered.is_empty() {
                all.to_vec()
            } else {
                filtered
            }
        };
        if candidates.is_empty() {
            return None;
        }
        let next = if candidates.len() == 1 {
            candidates[0]
        } else {
            let heading = net.segment(current).ok()?.heading_deg();
            let mut best = candidates[0];
            let mut best_turn = f64::INFINITY;
            for &c in &candidates {
                let turn = geo::wrap_deg(net.segment(c).ok()?.heading_deg() - heading).abs();
                if turn < best_turn {
                    best_turn = turn;
                    best = c;
                }
            }
            if rng.uniform() < 0.6 {
                best
            } else {
                let others: Vec<usize> = candidates.iter().copied().filter(|&c| c != best).collect();
                others[rng.index(others.len())]
            }
        };
        walk.push(next);
        current = next;
    }
    Some(walk)
}

/// Generate one paired observation.
pub fn generate_pair(
    net: &RoadNetwork,
    start_time: f64,
    opts: &GenOptions,
    seed: u64,
) -> Result<TrajectoryPair> {
    if opts.min_segments < 10 {
        return Err(Error::InvalidArgument(format!(
            "min_segments must be >= 10, got {}",
            opts.min_segments
        )));
    }
    if opts.max_segments < opts.min_segments {
        return Err(Error::InvalidArgument(
            "max_segments < min_segments".to_string(),
        ));
    }
    if !(opts.sample_period_s > 0.0) {
        return Err(Error::InvalidArgument("sample period must be > 0".to_string()));
    }
    if net.num_segments() == 0 || !net.is_strongly_connected() {
        return Err(Error::InvalidArgument("network must be connected".to_string()));
    }
    let mut rng = Rng::seed_stream(seed, opts.traj_id);
    let max_attempts = 20;
    for _ in 0..max_attempts {
        let target = opts.min_segments + rng.index(opts.max_segments - opts.min_segments + 1);
        let start = opts
            .start_segment
            .unwrap_or_else(|| rng.index(net.num_segments()));
        let walk = match random_walk(net, target, start, &mut rng) {
            Some(w) => w,
            None => continue,
        };
        return Ok(realize_walk(net, &walk, start_time, opts, &mut rng));
    }
    Err(Error::GenerationFailure {
        attempts: max_attempts,
    })
}

/// Turn a segment walk into timed route records, sampled GPS fixes and the
/// ground-truth assignment.
fn realize_walk(
    net: &RoadNetwork,
    walk: &[usize],
    start_time: f64,
    opts: &GenOptions,
    rng: &mut Rng,
) -> TrajectoryPair {
    let m = walk.len();
    let mut entries = Vec::with_capacity(m);
    let mut speeds = Vec::with_capacity(m);
    let mut t = start_time;
    for &seg in walk {
        let s = net.segment(seg).unwrap();
        let noise = if opts.speed_noise_sigma > 0.0 {
            rng.lognormal(opts.speed_noise_sigma)
        } else {
            1.0
        };
        let speed = s.free_speed_mps * congestion_factor(minute_of_day(t) as f64) * noise;
        entries.push(t);
        speeds.push(speed);
        t += s.length_m / speed;
    }
    let end_time = t;

    // Uniform sampling over the whole traversal; each event remembers which
    // walk position it falls on.
    let mut events: Vec<(f64, usize)> = Vec::new();
    let mut pos = 0usize;
    let mut k = 0u64;
    loop {
        let tk = start_time + k as f64 * opts.sample_period_s;
        if tk >= end_time {
            break;
        }
        while pos + 1 < m && tk >= entries[pos + 1] {
            pos += 1;
        }
        events.push((tk, pos));
        k += 1;
    }
    // Every segment must hold at least one fix; drop a mid-traversal fix into
    // the ones the uniform grid skipped.
    let mut covered = vec![false; m];
    for &(_, j) in &events {
        covered[j] = true;
    }
    for j in 0..m {
        if !covered[j] {
            let exit = if j + 1 < m { entries[j + 1] } else { end_time };
            events.push(((entries[j] + exit) / 2.0, j));
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for i in 1..events.len() {
        if events[i].0 <= events[i - 1].0 {
            events[i].0 = events[i - 1].0 + TIME_EPS_S;
        }
    }

    let mut points = Vec::with_capacity(events.len());
    for &(tk, j) in &events {
        let s = net.segment(walk[j]).unwrap();
        let along = ((tk - entries[j]) * speeds[j]).clamp(0.0, s.length_m);
        let (x1, y1) = geo::latlng_to_xy(s.tail().0, s.tail().1);
        let (x2, y2) = geo::latlng_to_xy(s.head().0, s.head().1);
        let f = along / s.length_m;
        let mut x = x1 + f * (x2 - x1);
        let mut y = y1 + f * (y2 - y1);
        if opts.gps_noise_m > 0.0 {
            x += opts.gps_noise_m * rng.normal();
            y += opts.gps_noise_m * rng.normal();
        }
        let (lat, lng) = geo::xy_to_latlng(x, y);
        points.push(GpsPoint { lat, lng, t: tk });
    }

    let mut rows = Vec::with_capacity(m);
    let mut idx = 0usize;
    for (j, &seg) in walk.iter().enumerate() {
        let start = idx;
        while idx < events.len() && events[idx].1 == j {
            idx += 1;
        }
        debug_assert!(idx > start, "segment {j} received no GPS fixes");
        rows.push(AssignmentRow {
            start,
            end: idx - 1,
            road_id: seg,
        });
    }
    debug_assert_eq!(idx, events.len());

    TrajectoryPair {
        traj_id: opts.traj_id,
        gps: GpsTrajectory { points },
        route: RouteTrajectory {
            records: walk
                .iter()
                .zip(entries.iter())
                .map(|(&road_id, &t)| RouteRecord { road_id, t })
                .collect(),
        },
        assignment: AssignmentMatrix { rows },
    }
}

/// Generate `count` pairs. Start segments cycle round-robin over the network
/// so every segment is covered whenever `count >= |V|`; otherwise targeted
/// extra walks are appended until full coverage.
pub fn generate_corpus(
    net: &RoadNetwork,
    count: usize,
    seed: u64,
    opts: &GenOptions,
) -> Result<Vec<TrajectoryPair>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be > 0".to_string()));
    }
    if !(opts.tod_window_s.0 >= 0.0
        && opts.tod_window_s.1 <= 2.0 * 86_400.0
        && opts.tod_window_s.0 < opts.tod_window_s.1
        && opts.tod_window_s.1 - opts.tod_window_s.0 <= 86_400.0)
    {
        return Err(Error::InvalidArgument(format!(
            "bad time-of-day window {:?}",
            opts.tod_window_s
        )));
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng::seed_stream(seed, i as u64);
        let day = rng.index(CORPUS_DAYS) as f64;
        let tod = rng.uniform_in(opts.tod_window_s.0, opts.tod_window_s.1);
        let start_time = CORPUS_BASE_UNIX + day * 86_400.0 + tod;
        let mut o = opts.clone();
        o.traj_id = i as u64;
        o.start_segment = Some(i % net.num_segments());
        pairs.push(generate_pair(net, start_time, &o, seed)?);
    }
    // Coverage backstop for small corpora.
    let mut covered = vec![false; net.num_segments()];
    for p in &pairs {
        for r in &p.route.records {
            covered[r.road_id] = true;
        }
    }
    let mut next_id = count as u64;
    for seg in 0..net.num_segments() {
        if !covered[seg] {
            let mut o = opts.clone();
            o.traj_id = next_id;
            o.start_segment = Some(seg);
            let mut rng = Rng::seed_stream(seed, next_id);
            let day = rng.index(CORPUS_DAYS) as f64;
            let tod = rng.uniform_in(opts.tod_window_s.0, opts.tod_window_s.1);
            let pair = generate_pair(net, CORPUS_BASE_UNIX + day * 86_400.0 + tod, &o, seed)?;
            for r in &pair.route.records {
                covered[r.road_id] = true;
            }
            pairs.push(pair);
            next_id += 1;
        }
    }
    Ok(pairs)
}

/// 13/1/1 train/val/test split by start day.
pub fn split_by_day(
    pairs: &[TrajectoryPair],
) -> (Vec<&TrajectoryPair>, Vec<&TrajectoryPair>, Vec<&TrajectoryPair>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for p in pairs {
        match corpus_day(p.start_time()) {
            d if d <= 12 => train.push(p),
            13 => val.push(p),
            _ => test.push(p),
        }
    }
    (train, val, test)
}

/// Per-point kinematics. The first row zero-pads the five derived columns.
pub fn extract_gps_features(pair: &TrajectoryPair) -> Result<GpsFeatureMatrix> {
    let pts = &pair.gps.points;
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 GPS points, got {}",
            pts.len()
        )));
    }
    let n = pts.len();
    let mut values = Tensor::zeros(n, GPS_FEATURES);
    let mut prev_speed = 0.0;
    let mut prev_bearing: Option<f64> = None;
    for i in 0..n {
        values.set(i, GPS_COL_LNG, pts[i].lng);
        values.set(i, GPS_COL_LAT, pts[i].lat);
        if i == 0 {
            continue;
        }
        let a = (pts[i - 1].lat, pts[i - 1].lng);
        let b = (pts[i].lat, pts[i].lng);
        let distance = geo::haversine_m(a, b);
        let dt = pts[i].t - pts[i - 1].t;
        let speed = distance / dt.max(TIME_EPS_S);
        let accel = (speed - prev_speed) / dt.max(TIME_EPS_S);
        let bearing = geo::bearing_deg(a, b);
        let angle_delta = match prev_bearing {
            Some(pb) => geo::wrap_deg(bearing - pb),
            None => 0.0,
        };
        values.set(i, GPS_COL_SPEED, speed);
        values.set(i, GPS_COL_ACCEL, accel);
        values.set(i, GPS_COL_ANGLE_DELTA, angle_delta);
        values.set(i, GPS_COL_TIME_DELTA, dt);
        values.set(i, GPS_COL_DISTANCE, distance);
        prev_speed = speed;
        prev_bearing = Some(bearing);
    }
    Ok(GpsFeatureMatrix { values })
}

/// Route-view features. The last segment's delta runs to the final GPS fix.
pub fn extract_route_features(pair: &TrajectoryPair) -> Result<RouteFeatureMatrix> {
    let end = pair.gps.points.last().map(|p| p.t).ok_or_else(|| {
        Error::InvalidArgument("route features need at least one GPS point".to_string())
    })?;
    route_features_with_end(&pair.route, end)
}

/// Same as [`extract_route_features`] but with an explicit trajectory end
/// time; used for routes that have no GPS view (e.g. detoured keys).
pub fn route_features_with_end(route: &RouteTrajectory, end_time: f64) -> Result<RouteFeatureMatrix> {
    let recs = &route.records;
    if recs.is_empty() {
        return Err(Error::InvalidArgument("empty route".to_string()));
    }
    let m = recs.len();
    let minute = minute_of_day(recs[0].t) as f64;
    let weekday = weekday_index(recs[0].t) as f64;
    let mut values = Tensor::zeros(m, ROUTE_FEATURES);
    for j in 0..m {
        let exit = if j + 1 < m { recs[j + 1].t } else { end_time };
        values.set(j, ROUTE_COL_ROAD_ID, recs[j].road_id as f64);
        values.set(j, ROUTE_COL_TIME_DELTA, (exit - recs[j].t).max(0.0));
        values.set(j, ROUTE_COL_MINUTE, minute);
        values.set(j, ROUTE_COL_WEEKDAY, weekday);
    }
    Ok(RouteFeatureMatrix { values })
}

/// Rows of the feature matrix grouped by assignment: the j-th output holds the
/// sub-matrix of GPS rows mapped to the j-th route record.
pub fn group_subtrajectories(
    features: &GpsFeatureMatrix,
    assignment: &AssignmentMatrix,
) -> Result<Vec<(usize, Tensor)>> {
    let n = features.values.rows();
    let mut expected = 0usize;
    let mut out = Vec::with_capacity(assignment.rows.len());
    for (j, row) in assignment.rows.iter().enumerate() {
        if row.start != expected || row.end < row.start || row.end >= n {
            return Err(Error::CorruptAssignment(format!(
                "row {j} covers [{}, {}] but expected to start at {expected} within 0..{n}",
                row.start, row.end
            )));
        }
        let len = row.end - row.start + 1;
        out.push((row.road_id, features.values.slice_rows(row.start, len)));
        expected = row.end + 1;
    }
    if expected != n {
        return Err(Error::CorruptAssignment(format!(
            "assignment covers {expected} of {n} points"
        )));
    }
    Ok(out)
}

/// Structural invariants of one pair (without network context).
pub fn validate_pair(pair: &TrajectoryPair) -> Result<()> {
    let n = pair.gps.points.len();
    if n < 2 {
        return Err(Error::InvalidArgument("GPS trajectory shorter than 2".to_string()));
    }
    for w in pair.gps.points.windows(2) {
        if w[1].t <= w[0].t {
            return Err(Error::InvalidArgument(
                "GPS timestamps must strictly increase".to_string(),
            ));
        }
    }
    let m = pair.route.records.len();
    if m < 10 {
        return Err(Error::InvalidArgument(format!(
            "route must visit at least 10 segments, got {m}"
        )));
    }
    for w in pair.route.records.windows(2) {
        if w[1].t < w[0].t {
            return Err(Error::InvalidArgument(
                "route timestamps must be non-decreasing".to_string(),
            ));
        }
    }
    if pair.assignment.rows.len() != m {
        return Err(Error::CorruptAssignment(format!(
            "assignment has {} rows for {m} route records",
            pair.assignment.rows.len()
        )));
    }
    let mut expected = 0usize;
    for (j, row) in pair.assignment.rows.iter().enumerate() {
        if row.road_id != pair.route.records[j].road_id {
            return Err(Error::CorruptAssignment(format!(
                "row {j} road id {} does not match route record {}",
                row.road_id, pair.route.records[j].road_id
            )));
        }
        if row.start != expected || row.end < row.start {
            return Err(Error::CorruptAssignment(format!("row {j} is misaligned")));
        }
        expected = row.end + 1;
    }
    if expected != n {
        return Err(Error::CorruptAssignment(format!(
            "assignment covers {expected} of {n} points"
        )));
    }
    Ok(())
}

/// Network-dependent invariants: ids in range, consecutive records adjacent.
pub fn validate_pair_against(pair: &TrajectoryPair, net: &RoadNetwork) -> Result<()> {
    for r in &pair.route.records {
        if r.road_id >= net.num_segments() {
            return Err(Error::NotFound(r.road_id));
        }
    }
    for w in pair.route.records.windows(2) {
        if !net.adjacency(w[0].road_id, w[1].road_id) {
            return Err(Error::InvalidArgument(format!(
                "route jumps from {} to non-adjacent {}",
                w[0].road_id, w[1].road_id
            )));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PairWire {
    traj_id: u64,
    gps: Vec<(f64, f64, f64)>,
    route: Vec<(usize, f64)>,
    assignment: Vec<(usize, usize, usize)>,
}

impl From<&TrajectoryPair> for PairWire {
    fn from(p: &TrajectoryPair) -> Self {
        PairWire {
            traj_id: p.traj_id,
            gps: p.gps.points.iter().map(|g| (g.lat, g.lng, g.t)).collect(),
            route: p.route.records.iter().map(|r| (r.road_id, r.t)).collect(),
            assignment: p
                .assignment
                .rows
                .iter()
                .map(|a| (a.start, a.end, a.road_id))
                .collect(),
        }
    }
}

impl From<PairWire> for TrajectoryPair {
    fn from(w: PairWire) -> Self {
        TrajectoryPair {
            traj_id: w.traj_id,
            gps: GpsTrajectory {
                points: w
                    .gps
                    .into_iter()
                    .map(|(lat, lng, t)| GpsPoint { lat, lng, t })
                    .collect(),
            },
            route: RouteTrajectory {
                records: w
                    .route
                    .into_iter()
                    .map(|(road_id, t)| RouteRecord { road_id, t })
                    .collect(),
            },
            assignment: AssignmentMatrix {
                rows: w
                    .assignment
                    .into_iter()
                    .map(|(start, end, road_id)| AssignmentRow { start, end, road_id })
                    .collect(),
            },
        }
    }
}

pub fn pair_to_json_line(pair: &TrajectoryPair) -> Result<String> {
    Ok(serde_json::to_string(&PairWire::from(pair))?)
}

/// JSON Lines, one pair per line.
pub fn save_corpus(path: impl AsRef<Path>, pairs: &[TrajectoryPair]) -> Result<()> {
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for p in pairs {
        out.write_all(pair_to_json_line(p)?.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TrajectoryPair>> {
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let reader = BufReader::new(file);
    let display = path.as_ref().display().to_string();
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: PairWire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let pair: TrajectoryPair = wire.into();
        validate_pair(&pair).map_err(|e| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}
