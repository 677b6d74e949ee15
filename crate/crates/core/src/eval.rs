//! Exploration and goal-reaching metrics, graph shortest paths, and the
//! nearest-frontier baseline explorer.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::TopoMap;
use crate::model::GenerativeModel;
use crate::sim::{self, Drift, Pose, World};

/// One record per agent step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub true_pose: Pose,
    pub reported_pose: Pose,
    pub believed_pose: Pose,
    pub action: Option<usize>,
    /// Area seen so far, square meters.
    pub covered_area: f64,
    /// Cumulative true distance, meters.
    pub traveled: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
}

impl RunTrace {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    /// `(distance, coverage fraction)` pairs.
    pub fn coverage_curve(&self, total_free_area: f64) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.traveled, (r.covered_area / total_free_area).clamp(0.0, 1.0)))
            .collect()
    }
}

/// Covered area divided by distance traveled, at the end of the trace.
pub fn coverage_efficiency(trace: &RunTrace) -> Result<f64> {
    let last = trace.records.last().ok_or(Error::Empty("trace"))?;
    if !(last.traveled > 0.0) {
        return Err(Error::ZeroTravel);
    }
    Ok(last.covered_area / last.traveled)
}

/// Trapezoidal area under a `(x, y)` curve on `[0, 1]`.
pub fn area_under_curve(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// Normalized area under the coverage-fraction vs. normalized-distance curve.
///
/// A trace that never moves scores its final coverage fraction.
pub fn naauc(trace: &RunTrace, total_free_area: f64) -> Result<f64> {
    if !(total_free_area > 0.0) {
        return Err(Error::Config("total free area must be positive".into()));
    }
    let curve = trace.coverage_curve(total_free_area);
    let Some(&(d_end, f_end)) = curve.last() else {
        return Err(Error::Empty("trace"));
    };
    if !(d_end > 0.0) {
        return Ok(f_end);
    }
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|&(d, f)| (d / d_end, f)).collect();
    if pts[0].0 > 0.0 {
        pts.insert(0, (0.0, pts[0].1));
    }
    Ok(area_under_curve(&pts).clamp(0.0, 1.0))
}

/// Root mean squared planar error between time-aligned trajectories.
pub fn rmse_xy(estimated: &[(f64, f64)], ground_truth: &[(f64, f64)]) -> Result<f64> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch {
            expected: ground_truth.len(),
            found: estimated.len(),
        });
    }
    if estimated.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let sum: f64 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| (e.0 - g.0).powi(2) + (e.1 - g.1).powi(2))
        .sum();
    Ok((sum / estimated.len() as f64).sqrt())
}

/// Undirected-or-directed graph with planar node positions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    pub positions: Vec<(f64, f64)>,
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    pub fn new(positions: Vec<(f64, f64)>) -> Self {
        let n = positions.len();
        Self {
            positions,
            adjacency: vec![Vec::new(); n],
        }
    }

    /// Directed edge weighted by Euclidean distance.
    pub fn link(&mut self, from: usize, to: usize) {
        let (a, b) = (self.positions[from], self.positions[to]);
        let w = (a.0 - b.0).hypot(a.1 - b.1);
        if !self.adjacency[from].iter().any(|(t, _)| *t == to) {
            self.adjacency[from].push((to, w));
        }
    }

    /// Graph of the listed map edges.
    pub fn from_map(map: &TopoMap, model: &GenerativeModel) -> Self {
        let mut g = Self::new(map.nodes().iter().map(|n| n.position).collect());
        for e in map.edges(model) {
            g.link(e.from, e.to);
        }
        g
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        (p.0 - q.0).hypot(p.1 - q.1)
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn search(graph: &Graph, start: usize, goals: &[usize], heuristic: impl Fn(usize) -> f64) -> Result<(f64, Vec<usize>)> {
    let n = graph.positions.len();
    if start >= n || goals.iter().any(|g| *g >= n) {
        return Err(Error::IndexOutOfRange {
            what: "node",
            index: start.max(goals.iter().copied().max().unwrap_or(0)),
            len: n,
        });
    }
    if goals.is_empty() {
        return Err(Error::Empty("goal set"));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Entry(heuristic(start), start));
    while let Some(Entry(_, u)) = heap.pop() {
        if closed[u] {
            continue;
        }
        closed[u] = true;
        if goals.contains(&u) {
            let mut path = vec![u];
            let mut c = u;
            while prev[c] != usize::MAX {
                c = prev[c];
                path.push(c);
            }
            path.reverse();
            return Ok((dist[u], path));
        }
        for &(v, w) in &graph.adjacency[u] {
            let nd = dist[u] + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Entry(nd + heuristic(v), v));
            }
        }
    }
    Err(Error::Unreachable)
}

/// Shortest path length to the nearest goal with a straight-line heuristic.
pub fn astar_shortest(graph: &Graph, start: usize, goals: &[usize]) -> Result<f64> {
    astar_path(graph, start, goals).map(|(d, _)| d)
}

/// Shortest path length and node sequence.
pub fn astar_path(graph: &Graph, start: usize, goals: &[usize]) -> Result<(f64, Vec<usize>)> {
    search(graph, start, goals, |v| {
        goals.iter().map(|&g| graph.dist(v, g)).fold(f64::INFINITY, f64::min)
    })
}

pub fn dijkstra_shortest(graph: &Graph, start: usize, goals: &[usize]) -> Result<f64> {
    search(graph, start, goals, |_| 0.0).map(|(d, _)| d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKnowledge {
    Unknown,
    Free,
    Occupied,
}

/// Occupancy grid built from range scans, aligned with a world's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEstimate {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<CellKnowledge>,
    free_count: usize,
}

impl OccupancyEstimate {
    pub fn for_world(world: &World) -> Self {
        Self::new(world.width(), world.height(), world.resolution(), world.origin())
    }

    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Self {
        Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![CellKnowledge::Unknown; width * height],
            free_count: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn index(&self, i: i64, j: i64) -> Option<usize> {
        (i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height)
            .then(|| j as usize * self.width + i as usize)
    }

    pub fn get(&self, i: i64, j: i64) -> CellKnowledge {
        self.index(i, j).map_or(CellKnowledge::Occupied, |k| self.cells[k])
    }

    pub fn set(&mut self, i: i64, j: i64, v: CellKnowledge) {
        if let Some(k) = self.index(i, j) {
            let old = self.cells[k];
            if old == CellKnowledge::Free {
                self.free_count -= 1;
            }
            if v == CellKnowledge::Free {
                self.free_count += 1;
            }
            self.cells[k] = v;
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.resolution).floor() as i64,
            ((y - self.origin.1) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, i: i64, j: i64) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.resolution,
            self.origin.1 + (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Area of cells known to be free, square meters.
    pub fn known_free_area(&self) -> f64 {
        self.free_count as f64 * self.resolution * self.resolution
    }

    /// Marks the cells each beam crossed as free and its end cell as occupied.
    pub fn integrate_scan(&mut self, world: &World, pose: &Pose, ranges: &[f64], max_range: f64) {
        let n = ranges.len();
        for (k, &r) in ranges.iter().enumerate() {
            let a = k as f64 * std::f64::consts::TAU / n as f64;
            let hit = r < max_range;
            world.walk_ray(pose.x, pose.y, a, r.min(max_range), |i, j, _| {
                if world.occupied(i, j) {
                    self.set(i, j, CellKnowledge::Occupied);
                    false
                } else {
                    if self.get(i, j) != CellKnowledge::Free {
                        self.set(i, j, CellKnowledge::Free);
                    }
                    true
                }
            });
            if hit {
                let (ex, ey) = (pose.x + (r + 1e-6) * a.cos(), pose.y + (r + 1e-6) * a.sin());
                let (i, j) = self.cell_of(ex, ey);
                if world.occupied(i, j) {
                    self.set(i, j, CellKnowledge::Occupied);
                }
            }
        }
    }

    /// Known-free cell with an unknown 4-neighbour.
    pub fn is_frontier(&self, i: i64, j: i64) -> bool {
        self.get(i, j) == CellKnowledge::Free
            && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(di, dj)| self.get(i + di, j + dj) == CellKnowledge::Unknown)
    }

    /// Known-free and at least `clearance` from every known-occupied cell.
    pub fn traversable(&self, i: i64, j: i64, clearance: f64) -> bool {
        if self.get(i, j) != CellKnowledge::Free {
            return false;
        }
        let (x, y) = self.cell_center(i, j);
        let span = (clearance / self.resolution).ceil() as i64 + 1;
        for dj in -span..=span {
            for di in -span..=span {
                if self.get(i + di, j + dj) != CellKnowledge::Occupied {
                    continue;
                }
                let x0 = self.origin.0 + (i + di) as f64 * self.resolution;
                let y0 = self.origin.1 + (j + dj) as f64 * self.resolution;
                let dx = (x0 - x).max(0.0).max(x - (x0 + self.resolution));
                let dy = (y0 - y).max(0.0).max(y - (y0 + self.resolution));
                if dx.hypot(dy) < clearance {
                    return false;
                }
            }
        }
        true
    }
}

/// Breadth-first search over known-free cells for the nearest frontier.
///
/// Returns `None` when no frontier is reachable: exploration is complete.
pub fn frontier_baseline_step(est: &OccupancyEstimate, pose: &Pose) -> Option<(i64, i64)> {
    frontier_path(est, pose, 0.0, &[]).map(|p| *p.last().expect("non-empty path"))
}

/// Path of cells from the pose cell to the nearest reachable frontier,
/// moving only through cells with the given clearance.
pub fn frontier_path(
    est: &OccupancyEstimate,
    pose: &Pose,
    clearance: f64,
    blacklist: &[(i64, i64)],
) -> Option<Vec<(i64, i64)>> {
    let start = est.cell_of(pose.x, pose.y);
    let n = est.width * est.height;
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let si = est.index(start.0, start.1)?;
    seen[si] = true;
    let mut queue = VecDeque::from([start]);
    let w = est.width as i64;
    while let Some((i, j)) = queue.pop_front() {
        if (i, j) != start && est.is_frontier(i, j) && !blacklist.contains(&(i, j)) {
            let mut path = vec![(i, j)];
            let mut k = est.index(i, j).expect("in grid");
            while prev[k] != usize::MAX {
                k = prev[k];
                path.push(((k as i64) % w, (k as i64) / w));
            }
            path.reverse();
            return Some(path);
        }
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (ni, nj) = (i + di, j + dj);
            let Some(k) = est.index(ni, nj) else { continue };
            if seen[k] || !est.traversable(ni, nj, clearance) {
                continue;
            }
            seen[k] = true;
            prev[k] = est.index(i, j).expect("in grid");
            queue.push_back((ni, nj));
        }
    }
    None
}

/// Settings for the frontier explorer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierConfig {
    pub step_length: f64,
    pub agent_radius: f64,
    pub lidar_range: f64,
    pub lidar_beams: usize,
    pub step_budget: usize,
    /// Stop once this fraction of the free area is covered.
    pub stop_fraction: f64,
}

/// Runs the nearest-frontier explorer in `world` and records its trace.
///
/// Each step moves at most `step_length` along the path to the nearest
/// reachable frontier. Frontiers that cannot be approached are skipped.
pub fn run_frontier(world: &World, start: Pose, cfg: &FrontierConfig, drift: &mut Drift) -> Result<RunTrace> {
    let total = world.free_area();
    let mut est = OccupancyEstimate::for_world(world);
    let mut pose = start;
    let mut trace = RunTrace::default();
    let mut traveled = 0.0;
    let mut blacklist: Vec<(i64, i64)> = Vec::new();
    let clearance = cfg.agent_radius + 0.05;
    for t in 0..=cfg.step_budget {
        let scan = sim::lidar_scan(world, &pose, cfg.lidar_range, cfg.lidar_beams);
        est.integrate_scan(world, &pose, &scan, cfg.lidar_range);
        trace.push(StepRecord {
            t,
            true_pose: pose,
            reported_pose: pose,
            believed_pose: pose,
            action: None,
            covered_area: est.known_free_area(),
            traveled,
        });
        if t == cfg.step_budget || est.known_free_area() >= cfg.stop_fraction * total {
            break;
        }
        let Some(path) = frontier_path(&est, &pose, clearance, &blacklist) else {
            break;
        };
        let mut target = est.cell_center(path[0].0, path[0].1);
        for &(i, j) in &path {
            let c = est.cell_center(i, j);
            if (c.0 - pose.x).hypot(c.1 - pose.y) > cfg.step_length {
                break;
            }
            target = c;
        }
        let d = (target.0 - pose.x).hypot(target.1 - pose.y);
        if d < 1e-6 {
            blacklist.push(*path.last().expect("non-empty path"));
            continue;
        }
        let heading = (target.1 - pose.y).atan2(target.0 - pose.x);
        let r = sim::step_heading(world, &pose, heading, d, cfg.agent_radius, drift)?;
        if r.traveled < 1e-6 {
            blacklist.push(*path.last().expect("non-empty path"));
        }
        traveled += r.traveled;
        pose = r.true_pose;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::DriftModel;

    fn trace_of(points: &[(f64, f64)]) -> RunTrace {
        RunTrace {
            records: points
                .iter()
                .enumerate()
                .map(|(t, &(d, a))| StepRecord {
                    t,
                    true_pose: Pose::new(0.0, 0.0, 0.0),
                    reported_pose: Pose::new(0.0, 0.0, 0.0),
                    believed_pose: Pose::new(0.0, 0.0, 0.0),
                    action: None,
                    covered_area: a,
                    traveled: d,
                })
                .collect(),
        }
    }

    #[test]
    fn coverage_efficiency_examples() {
        assert_eq!(coverage_efficiency(&trace_of(&[(0.0, 0.0), (70.0, 280.0)])).unwrap(), 4.0);
        assert_eq!(coverage_efficiency(&trace_of(&[(0.0, 0.0), (140.0, 280.0)])).unwrap(), 2.0);
        assert!(matches!(coverage_efficiency(&trace_of(&[(0.0, 5.0)])), Err(Error::ZeroTravel)));
    }

    #[test]
    fn naauc_examples() {
        assert!((naauc(&trace_of(&[(0.0, 0.0), (1.0, 10.0)]), 10.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((naauc(&trace_of(&[(0.0, 10.0), (1.0, 10.0)]), 10.0).unwrap() - 1.0).abs() < 1e-12);
        let t = trace_of(&[(0.0, 0.0), (5.0, 8.0), (10.0, 10.0)]);
        assert!((naauc(&t, 10.0).unwrap() - 0.65).abs() < 1e-12);
        assert!(naauc(&RunTrace::default(), 10.0).is_err());
    }

    #[test]
    fn rmse_examples() {
        let a = [(0.0, 0.0), (1.0, 1.0)];
        assert_eq!(rmse_xy(&a, &a).unwrap(), 0.0);
        let b = [(3.0, 4.0), (4.0, 5.0)];
        assert!((rmse_xy(&b, &a).unwrap() - 5.0).abs() < 1e-12);
        assert!((rmse_xy(&[(1.0, 0.0), (0.0, 1.0)], &[(0.0, 0.0), (0.0, 0.0)]).unwrap() - 1.0).abs() < 1e-12);
        assert!(rmse_xy(&a, &a[..1]).is_err());
    }

    #[test]
    fn chain_and_trivial_paths() {
        let mut g = Graph::new((0..5).map(|i| (i as f64, 0.0)).collect());
        for i in 0..4 {
            g.link(i, i + 1);
            g.link(i + 1, i);
        }
        assert_eq!(astar_shortest(&g, 0, &[4]).unwrap(), 4.0);
        assert_eq!(astar_shortest(&g, 2, &[2]).unwrap(), 0.0);
        let mut h = Graph::new(vec![(0.0, 0.0), (1.0, 0.0)]);
        h.link(1, 0);
        assert!(matches!(astar_shortest(&h, 0, &[1]), Err(Error::Unreachable)));
    }

    #[test]
    fn frontier_rules() {
        let w = World::room(4.0, 4.0, 0.5, (0.0, 0.0)).unwrap();
        let mut est = OccupancyEstimate::for_world(&w);
        for (i, j) in w.free_cells() {
            est.set(i, j, CellKnowledge::Free);
        }
        for j in 0..w.height() as i64 {
            for i in 0..w.width() as i64 {
                if w.occupied(i, j) {
                    est.set(i, j, CellKnowledge::Occupied);
                }
            }
        }
        let pose = Pose::new(0.25, 0.25, 0.0);
        assert_eq!(frontier_baseline_step(&est, &pose), None);
        est.set(8, 1, CellKnowledge::Unknown);
        est.set(8, 8, CellKnowledge::Unknown);
        assert_eq!(frontier_baseline_step(&est, &pose), Some((7, 1)));
    }

    #[test]
    fn frontier_explorer_covers_small_room() {
        let w = World::builtin("mini-warehouse").unwrap();
        let cfg = FrontierConfig {
            step_length: 1.0,
            agent_radius: 0.25,
            lidar_range: 12.0,
            lidar_beams: 180,
            step_budget: 200,
            stop_fraction: 0.95,
        };
        let mut drift = Drift::new(DriftModel::default()).unwrap();
        let trace = run_frontier(&w, w.spawn("start").unwrap(), &cfg, &mut drift).unwrap();
        let last = trace.records.last().unwrap();
        assert!(last.covered_area >= 0.9 * w.free_area(), "{}", last.covered_area);
        for pair in trace.records.windows(2) {
            assert!(pair[1].traveled >= pair[0].traveled);
            assert!(pair[1].covered_area >= pair[0].covered_area);
        }
    }
}
