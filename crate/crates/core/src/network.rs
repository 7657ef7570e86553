//! Directed road-segment graph with per-segment attributes plus a synthetic
//! grid generator.
//!
//! Vertices are road segments; an edge (i, j) means segment j can be entered
//! directly after traversing segment i (they share the intersection at i's
//! head). Every undirected street of the grid becomes two directed segments.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Primary,
    Secondary,
    Tertiary,
    Residential,
}

impl RoadClass {
    pub const ALL: [RoadClass; 4] = [
        RoadClass::Primary,
        RoadClass::Secondary,
        RoadClass::Tertiary,
        RoadClass::Residential,
    ];

    pub fn index(self) -> usize {
        match self {
            RoadClass::Primary => 0,
            RoadClass::Secondary => 1,
            RoadClass::Tertiary => 2,
            RoadClass::Residential => 3,
        }
    }

    /// Free-flow speed before per-segment noise, in m/s.
    pub fn base_speed_mps(self) -> f64 {
        match self {
            RoadClass::Primary => 16.0,
            RoadClass::Secondary => 13.0,
            RoadClass::Tertiary => 10.0,
            RoadClass::Residential => 7.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoadSegment {
    pub road_id: usize,
    /// Polyline of (lat, lng) in degrees, tail to head.
    pub geometry: Vec<(f64, f64)>,
    pub length_m: f64,
    pub road_class: RoadClass,
    pub free_speed_mps: f64,
}

impl RoadSegment {
    pub fn tail(&self) -> (f64, f64) {
        self.geometry[0]
    }

    pub fn head(&self) -> (f64, f64) {
        *self.geometry.last().unwrap()
    }

    /// Overall direction of travel in degrees clockwise from north.
    pub fn heading_deg(&self) -> f64 {
        geo::bearing_deg(self.tail(), self.head())
    }

    pub fn midpoint(&self) -> (f64, f64) {
        let (x1, y1) = geo::latlng_to_xy(self.tail().0, self.tail().1);
        let (x2, y2) = geo::latlng_to_xy(self.head().0, self.head().1);
        geo::xy_to_latlng((x1 + x2) / 2.0, (y1 + y2) / 2.0)
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    segments: Vec<RoadSegment>,
    edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    edges: Vec<(usize, usize)>,
    out_neighbors: Vec<Vec<usize>>,
    in_neighbors: Vec<Vec<usize>>,
    /// reverse_of[i] = the segment running head->tail of i, when one exists.
    reverse_of: Vec<Option<usize>>,
}

impl RoadNetwork {
    pub fn from_parts(segments: Vec<RoadSegment>, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = segments.len();
        for (i, s) in segments.iter().enumerate() {
            if s.road_id != i {
                return Err(Error::InvalidArgument(format!(
                    "segment at position {i} has road_id {}",
                    s.road_id
                )));
            }
            if s.geometry.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} needs at least two geometry points"
                )));
            }
            if !(s.length_m > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} has non-positive length"
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut out_neighbors = vec![Vec::new(); n];
        let mut in_neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references unknown segment"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop edge on {a}")));
            }
            out_neighbors[a].push(b);
            in_neighbors[b].push(a);
        }
        for list in out_neighbors.iter_mut().chain(in_neighbors.iter_mut()) {
            list.sort_unstable();
        }
        let reverse_of = (0..n)
            .map(|i| {
                let s = &segments[i];
                out_neighbors[i]
                    .iter()
                    .copied()
                    .find(|&j| close(segments[j].head(), s.tail()) && close(segments[j].tail(), s.head()))
            })
            .collect();
        Ok(RoadNetwork {
            segments,
            edges,
            out_neighbors,
            in_neighbors,
            reverse_of,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, road_id: usize) -> Result<&RoadSegment> {
        self.segments.get(road_id).ok_or(Error::NotFound(road_id))
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self, from: usize, to: usize) -> bool {
        self.out_neighbors
            .get(from)
            .map(|nb| nb.binary_search(&to).is_ok())
            .unwrap_or(false)
    }

    /// Out-neighbors of a segment, ascending.
    pub fn neighbors(&self, road_id: usize) -> Result<&[usize]> {
        self.out_neighbors
            .get(road_id)
            .map(|v| v.as_slice())
            .ok_or(Error::NotFound(road_id))
    }

    /// In-neighbors of a segment, ascending.
    pub fn in_neighbors(&self, road_id: usize) -> Result<&[usize]> {
        self.in_neighbors
            .get(road_id)
            .map(|v| v.as_slice())
            .ok_or(Error::NotFound(road_id))
    }

    pub fn reverse_of(&self, road_id: usize) -> Option<usize> {
        self.reverse_of.get(road_id).copied().flatten()
    }

    /// Attention neighborhoods for graph message passing: in-neighbors plus a
    /// self edge, ascending.
    pub fn attention_neighborhoods(&self) -> Vec<Vec<usize>> {
        (0..self.num_segments())
            .map(|i| {
                let mut nb = self.in_neighbors[i].clone();
                if nb.binary_search(&i).is_err() {
                    let pos = nb.partition_point(|&x| x < i);
                    nb.insert(pos, i);
                }
                nb
            })
            .collect()
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.num_segments();
        if n == 0 {
            return true;
        }
        bfs_count(&self.out_neighbors, 0) == n && bfs_count(&self.in_neighbors, 0) == n
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = NetworkFile {
            segments: self.segments.clone(),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(json)?;
        RoadNetwork::from_parts(file.segments, file.edges)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(&path, self.to_json_string()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }
}

fn close(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9
}

fn bfs_count(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

/// Road class of a grid line: boundary lines are primary arterials, every 4th
/// interior line is secondary, every 2nd remaining one tertiary, the rest
/// residential.
fn line_class(index: usize, count: usize) -> RoadClass {
    if index == 0 || index + 1 == count {
        RoadClass::Primary
    } else if index % 4 == 0 {
        RoadClass::Secondary
    } else if index % 2 == 0 {
        RoadClass::Tertiary
    } else {
        RoadClass::Residential
    }
}

/// Build a rows x cols grid of bidirectional streets with `cell_m` meter
/// spacing, centered on the tangent-plane anchor.
pub fn build_grid_network(rows: usize, cols: usize, cell_m: f64, seed: u64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs rows >= 2 and cols >= 2, got {rows}x{cols}"
        )));
    }
    if !(cell_m > 0.0) || !cell_m.is_finite() {
        return Err(Error::InvalidArgument(format!("bad cell size {cell_m}")));
    }
    let mut rng = Rng::seed(seed);
    let node = |r: usize, c: usize| -> (f64, f64) {
        let x = (c as f64 - (cols as f64 - 1.0) / 2.0) * cell_m;
        let y = (r as f64 - (rows as f64 - 1.0) / 2.0) * cell_m;
        geo::xy_to_latlng(x, y)
    };

    let mut segments = Vec::new();
    let mut node_of: Vec<(usize, usize)> = Vec::new(); // (tail node id, head node id) flattened as r*cols+c
    let push_street = |segments: &mut Vec<RoadSegment>,
                           node_of: &mut Vec<(usize, usize)>,
                           rng: &mut Rng,
                           a: (usize, usize),
                           b: (usize, usize),
                           class: RoadClass| {
        for (from, to) in [(a, b), (b, a)] {
            let geometry = vec![node(from.0, from.1), node(to.0, to.1)];
            let length_m = geo::polyline_length_m(&geometry);
            let free_speed_mps = class.base_speed_mps() + rng.uniform_in(-1.0, 1.0);
            segments.push(RoadSegment {
                road_id: segments.len(),
                geometry,
                length_m,
                road_class: class,
                free_speed_mps,
            });
            node_of.push((from.0 * cols + from.1, to.0 * cols + to.1));
        }
    };

    // Horizontal streets live on row lines, vertical streets on column lines.
    for r in 0..rows {
        let class = line_class(r, rows);
        for c in 0..cols - 1 {
            push_street(&mut segments, &mut node_of, &mut rng, (r, c), (r, c + 1), class);
        }
    }
    for c in 0..cols {
        let class = line_class(c, cols);
        for r in 0..rows - 1 {
            push_street(&mut segments, &mut node_of, &mut rng, (r, c), (r + 1, c), class);
        }
    }

    let mut edges = Vec::new();
    for i in 0..segments.len() {
        for j in 0..segments.len() {
            if i != j && node_of[i].1 == node_of[j].0 {
                edges.push((i, j));
            }
        }
    }
    RoadNetwork::from_parts(segments, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid_counts() {
        let net = build_grid_network(2, 2, 200.0, 0).unwrap();
        // 4 intersections, 4 undirected streets, 8 directed segments.
        assert_eq!(net.num_segments(), 8);
    }

    #[test]
    fn segment_count_formula_matches_enumeration() {
        for rows in 2..=6 {
            for cols in 2..=6 {
                let net = build_grid_network(rows, cols, 150.0, 1).unwrap();
                // Independent enumeration: count adjacent grid-node pairs.
                let mut undirected = 0;
                for r in 0..rows {
                    for c in 0..cols {
                        if c + 1 < cols {
                            undirected += 1;
                        }
                        if r + 1 < rows {
                            undirected += 1;
                        }
                    }
                }
                assert_eq!(net.num_segments(), 2 * undirected);
                assert_eq!(
                    net.num_segments(),
                    2 * (rows * (cols - 1) + cols * (rows - 1))
                );
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = build_grid_network(4, 5, 180.0, 42).unwrap();
        let b = build_grid_network(4, 5, 180.0, 42).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        let c = build_grid_network(4, 5, 180.0, 43).unwrap();
        assert_ne!(a.to_json_string().unwrap(), c.to_json_string().unwrap());
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(
            build_grid_network(1, 5, 100.0, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_grid_network(3, 1, 100.0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn neighbors_match_adjacency_exhaustively() {
        let net = build_grid_network(3, 3, 200.0, 7).unwrap();
        for i in 0..net.num_segments() {
            let nb = net.neighbors(i).unwrap();
            assert!(nb.windows(2).all(|w| w[0] < w[1]), "sorted ascending");
            for j in 0..net.num_segments() {
                assert_eq!(net.adjacency(i, j), nb.contains(&j), "A[{i}][{j}]");
            }
        }
        assert!(matches!(net.neighbors(10_000), Err(Error::NotFound(_))));
    }

    #[test]
    fn grid_is_strongly_connected() {
        for (r, c) in [(2, 2), (3, 4), (6, 6)] {
            let net = build_grid_network(r, c, 200.0, 3).unwrap();
            assert!(net.is_strongly_connected(), "{r}x{c}");
        }
    }

    #[test]
    fn lengths_match_haversine_of_geometry() {
        let net = build_grid_network(4, 4, 250.0, 5).unwrap();
        for s in net.segments() {
            let hv = geo::polyline_length_m(&s.geometry);
            assert!(
                (s.length_m - hv).abs() / hv < 1e-6,
                "segment {} length {} vs {}",
                s.road_id,
                s.length_m,
                hv
            );
            assert!(s.length_m > 0.0);
        }
    }

    #[test]
    fn planted_classes_cover_all_four() {
        let net = build_grid_network(6, 6, 200.0, 0).unwrap();
        let mut counts = [0usize; 4];
        for s in net.segments() {
            counts[s.road_class.index()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn free_speeds_stay_within_noise_band() {
        let net = build_grid_network(5, 5, 200.0, 11).unwrap();
        for s in net.segments() {
            let base = s.road_class.base_speed_mps();
            assert!((s.free_speed_mps - base).abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn reverse_segments_are_detected() {
        let net = build_grid_network(3, 3, 200.0, 0).unwrap();
        for i in 0..net.num_segments() {
            let rev = net.reverse_of(i).expect("grid streets are bidirectional");
            assert_eq!(net.reverse_of(rev), Some(i));
            assert!(net.adjacency(i, rev), "reverse is reachable at the head");
        }
    }

    #[test]
    fn json_round_trip() {
        let net = build_grid_network(3, 4, 120.0, 9).unwrap();
        let json = net.to_json_string().unwrap();
        let back = RoadNetwork::from_json_str(&json).unwrap();
        assert_eq!(json, back.to_json_string().unwrap());
        assert_eq!(net.edges(), back.edges());
    }

    #[test]
    fn attention_neighborhoods_include_self() {
        let net = build_grid_network(3, 3, 200.0, 0).unwrap();
        let hoods = net.attention_neighborhoods();
        for (i, nb) in hoods.iter().enumerate() {
            assert!(nb.contains(&i));
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &j in nb {
                assert!(j == i || net.adjacency(j, i), "{j} must point into {i}");
            }
        }
    }
}
