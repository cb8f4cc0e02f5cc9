//! Grid-graph A* and congestion-weighted A* comparison planners.
//!
//! Both planners search the 8-connected cell graph of a [`GridSpec`]. The
//! congestion variant adds a per-step penalty proportional to the destination
//! cell's crowd probability, standing in for congestion-aware search methods
//! whose exact internals are unavailable. Two published weight presets, CG1
//! (distance-dominant) and CG2 (congestion-dominant), are used by the case
//! harness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::gridmap::{GridSpec, ProbabilityGrid};
use crate::planner::Obstacle;

/// Distance-dominant congestion weight preset.
pub const CG1_LAMBDA: f64 = 50.0;
/// Congestion-dominant weight preset.
pub const CG2_LAMBDA: f64 = 400.0;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("start cell ({0}, {1}) is blocked")]
    StartBlocked(usize, usize),
    #[error("goal cell ({0}, {1}) is blocked")]
    GoalBlocked(usize, usize),
    #[error("no path: start and goal are disconnected")]
    NoPath,
    #[error("congestion grid does not match the graph spec")]
    SpecMismatch,
}

/// 8-connected search graph over grid cells.
#[derive(Debug, Clone)]
pub struct GridGraph {
    pub spec: GridSpec,
    /// Row-major blocked flags.
    pub blocked: Vec<bool>,
    /// Row-major per-cell congestion values, all ≥ 0.
    pub congestion: Vec<f64>,
}

impl GridGraph {
    /// Graph with cells blocked when their center lies within an inflated
    /// obstacle disc, and zero congestion.
    pub fn from_obstacles(spec: GridSpec, obstacles: &[Obstacle], margin: f64) -> Self {
        let n = spec.resolution;
        let mut blocked = vec![false; spec.num_cells()];
        for row in 0..n {
            for col in 0..n {
                let c = spec.cell_center(row, col);
                if obstacles
                    .iter()
                    .any(|o| (c - o.center).norm() < o.inflated(margin))
                {
                    blocked[row * n + col] = true;
                }
            }
        }
        Self { spec, blocked, congestion: vec![0.0; spec.num_cells()] }
    }

    /// Attach a congestion field from a probability grid on the same spec.
    pub fn with_congestion(mut self, grid: &ProbabilityGrid) -> Result<Self, BaselineError> {
        if grid.spec != self.spec {
            return Err(BaselineError::SpecMismatch);
        }
        self.congestion = grid.values.clone();
        Ok(self)
    }

    fn idx(&self, cell: (usize, usize)) -> usize {
        cell.0 * self.spec.resolution + cell.1
    }
}

/// Result of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// Visited cells from start to goal inclusive.
    pub cells: Vec<(usize, usize)>,
    /// Cell-center waypoints of `cells`.
    pub points: Vec<Vector2<f64>>,
    /// Total edge cost (length plus weighted congestion).
    pub cost: f64,
    /// Metric length of the polyline.
    pub length: f64,
    /// Summed congestion of the visited cells, start excluded.
    pub congestion_sum: f64,
}

/// Heap entry ordered so the binary max-heap pops the lowest f-value first,
/// ties broken by lower (row, col) of the cell.
#[derive(Debug, PartialEq)]
struct Node {
    f: f64,
    cell: (usize, usize),
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .partial_cmp(&self.f)
            .expect("finite costs")
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn search(
    graph: &GridGraph,
    start: (usize, usize),
    goal: (usize, usize),
    lambda: f64,
    use_heuristic: bool,
) -> Result<GridPath, BaselineError> {
    let n = graph.spec.resolution;
    assert!(start.0 < n && start.1 < n && goal.0 < n && goal.1 < n, "cell out of range");
    if graph.blocked[graph.idx(start)] {
        return Err(BaselineError::StartBlocked(start.0, start.1));
    }
    if graph.blocked[graph.idx(goal)] {
        return Err(BaselineError::GoalBlocked(goal.0, goal.1));
    }

    let cell_size = graph.spec.cell_size();
    let h = |cell: (usize, usize)| -> f64 {
        if !use_heuristic {
            return 0.0;
        }
        let dr = cell.0 as f64 - goal.0 as f64;
        let dc = cell.1 as f64 - goal.1 as f64;
        cell_size * (dr * dr + dc * dc).sqrt()
    };

    let mut g = vec![f64::INFINITY; graph.spec.num_cells()];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; graph.spec.num_cells()];
    let mut closed = vec![false; graph.spec.num_cells()];
    let mut heap = BinaryHeap::new();
    g[graph.idx(start)] = 0.0;
    heap.push(Node { f: h(start), cell: start });

    while let Some(Node { cell, .. }) = heap.pop() {
        let ci = graph.idx(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == goal {
            break;
        }
        for (dr, dc) in NEIGHBORS {
            let nr = cell.0 as isize + dr;
            let nc = cell.1 as isize + dc;
            if nr < 0 || nc < 0 || nr as usize >= n || nc as usize >= n {
                continue;
            }
            let next = (nr as usize, nc as usize);
            let ni = graph.idx(next);
            if graph.blocked[ni] || closed[ni] {
                continue;
            }
            let step = if dr != 0 && dc != 0 {
                cell_size * std::f64::consts::SQRT_2
            } else {
                cell_size
            };
            let tentative = g[ci] + step + lambda * graph.congestion[ni];
            if tentative < g[ni] {
                g[ni] = tentative;
                parent[ni] = Some(cell);
                heap.push(Node { f: tentative + h(next), cell: next });
            }
        }
    }

    if !g[graph.idx(goal)].is_finite() {
        return Err(BaselineError::NoPath);
    }

    let mut cells = vec![goal];
    while let Some(p) = parent[graph.idx(*cells.last().unwrap())] {
        cells.push(p);
    }
    cells.reverse();
    let points: Vec<Vector2<f64>> = cells
        .iter()
        .map(|&(r, c)| graph.spec.cell_center(r, c))
        .collect();
    let length: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let congestion_sum: f64 = cells
        .iter()
        .skip(1)
        .map(|&cell| graph.congestion[graph.idx(cell)])
        .sum();
    Ok(GridPath { cells, points, cost: g[graph.idx(goal)], length, congestion_sum })
}

/// Optimal 8-connected path by edge length with a Euclidean heuristic.
pub fn astar(
    graph: &GridGraph,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<GridPath, BaselineError> {
    search(graph, start, goal, 0.0, true)
}

/// A* with edge cost = length + λ · destination-cell congestion. The
/// Euclidean heuristic stays admissible because congestion is non-negative.
pub fn congestion_astar(
    graph: &GridGraph,
    start: (usize, usize),
    goal: (usize, usize),
    lambda: f64,
) -> Result<GridPath, BaselineError> {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    search(graph, start, goal, lambda, true)
}

/// Uniform-cost search without a heuristic, kept as an independent oracle.
pub fn dijkstra(
    graph: &GridGraph,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<GridPath, BaselineError> {
    search(graph, start, goal, 0.0, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_graph(n: usize) -> GridGraph {
        let spec = GridSpec::new(n as f64, n, Vector2::zeros());
        GridGraph::from_obstacles(spec, &[], 0.0)
    }

    #[test]
    fn straight_chain_on_empty_map() {
        let g = empty_graph(10);
        let path = astar(&g, (0, 0), (0, 9)).unwrap();
        assert_eq!(path.cells.len(), 10);
        assert_relative_eq!(path.cost, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_chain_cost() {
        let g = empty_graph(10);
        let path = astar(&g, (0, 0), (9, 9)).unwrap();
        assert_relative_eq!(path.cost, 9.0 * std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn octile_mixed_distance() {
        // 3 rows down, 7 cols right: 3 diagonal + 4 straight steps
        let g = empty_graph(10);
        let path = astar(&g, (0, 0), (3, 7)).unwrap();
        assert_relative_eq!(
            path.cost,
            3.0 * std::f64::consts::SQRT_2 + 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn walled_off_goal_fails() {
        let mut g = empty_graph(10);
        // box in the goal cell (9,9)
        for cell in [(8, 8), (8, 9), (9, 8)] {
            let i = g.idx(cell);
            g.blocked[i] = true;
        }
        assert_eq!(astar(&g, (0, 0), (9, 9)), Err(BaselineError::NoPath));
    }

    #[test]
    fn blocked_endpoints_rejected() {
        let mut g = empty_graph(5);
        let i = g.idx((0, 0));
        g.blocked[i] = true;
        assert_eq!(astar(&g, (0, 0), (4, 4)), Err(BaselineError::StartBlocked(0, 0)));
        assert_eq!(astar(&g, (4, 4), (0, 0)), Err(BaselineError::GoalBlocked(0, 0)));
    }

    fn random_graph(seed: u64) -> GridGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(20.0, 20, Vector2::zeros());
        let mut g = GridGraph::from_obstacles(spec, &[], 0.0);
        for b in g.blocked.iter_mut() {
            *b = rng.gen_bool(0.25);
        }
        let i0 = g.idx((0, 0));
        let i1 = g.idx((19, 19));
        g.blocked[i0] = false;
        g.blocked[i1] = false;
        g
    }

    #[test]
    fn astar_matches_dijkstra_on_random_maps() {
        for seed in 0..200 {
            let g = random_graph(seed);
            let a = astar(&g, (0, 0), (19, 19));
            let d = dijkstra(&g, (0, 0), (19, 19));
            match (a, d) {
                (Ok(a), Ok(d)) => assert_eq!(a.cost, d.cost, "seed {seed}"),
                (Err(BaselineError::NoPath), Err(BaselineError::NoPath)) => {}
                (a, d) => panic!("seed {seed}: {a:?} vs {d:?}"),
            }
        }
    }

    #[test]
    fn lambda_zero_identical_to_astar() {
        for seed in 0..20 {
            let mut g = random_graph(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            for c in g.congestion.iter_mut() {
                *c = rng.gen_range(0.0..0.01);
            }
            let plain = astar(&g, (0, 0), (19, 19));
            let weighted = congestion_astar(&g, (0, 0), (19, 19), 0.0);
            assert_eq!(plain, weighted, "seed {seed}");
        }
    }

    #[test]
    fn uniform_congestion_same_path() {
        let mut g = empty_graph(15);
        for c in g.congestion.iter_mut() {
            *c = 0.004;
        }
        let plain = astar(&g, (2, 1), (12, 13)).unwrap();
        let weighted = congestion_astar(&g, (2, 1), (12, 13), 100.0).unwrap();
        assert_eq!(plain.cells, weighted.cells);
        // constant per-step offset over the same step count
        assert_relative_eq!(
            weighted.cost,
            plain.cost + 100.0 * 0.004 * (plain.cells.len() - 1) as f64,
            epsilon = 1e-9
        );
    }

    #[test]
    fn hot_band_circumvented() {
        let spec = GridSpec::new(20.0, 20, Vector2::zeros());
        let mut g = GridGraph::from_obstacles(spec, &[], 0.0);
        // hot vertical band at columns 9..=10, rows 3..=16
        for row in 3..=16 {
            for col in 9..=10 {
                g.congestion[row * 20 + col] = 0.05;
            }
        }
        let plain = astar(&g, (10, 2), (10, 17)).unwrap();
        let weighted = congestion_astar(&g, (10, 2), (10, 17), 200.0).unwrap();
        assert!(
            weighted.congestion_sum < plain.congestion_sum,
            "weighted {} vs plain {}",
            weighted.congestion_sum,
            plain.congestion_sum
        );
        assert_relative_eq!(weighted.congestion_sum, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_monotone_congestion() {
        for seed in 0..5 {
            let mut g = random_graph(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
            for c in g.congestion.iter_mut() {
                *c = rng.gen_range(0.0..0.01);
            }
            if astar(&g, (0, 0), (19, 19)).is_err() {
                continue;
            }
            let mut prev = f64::INFINITY;
            for lambda in [0.0, 10.0, 50.0, 200.0, 1000.0] {
                let p = congestion_astar(&g, (0, 0), (19, 19), lambda).unwrap();
                assert!(
                    p.congestion_sum <= prev + 1e-12,
                    "seed {seed} lambda {lambda}: {} > {prev}",
                    p.congestion_sum
                );
                prev = p.congestion_sum;
            }
        }
    }

    #[test]
    fn obstacle_blocks_cells() {
        let spec = GridSpec::new(10.0, 10, Vector2::zeros());
        let obs = [Obstacle::new(Vector2::new(5.0, 5.0), 1.0)];
        let g = GridGraph::from_obstacles(spec, &obs, 0.3);
        // center cell (5,5) has center (5.5, 5.5), distance ~0.707 < 1.3
        assert!(g.blocked[5 * 10 + 5]);
        // corner cell far away stays free
        assert!(!g.blocked[0]);
        let path = astar(&g, (0, 5), (9, 5)).unwrap();
        for &(r, c) in &path.cells {
            assert!(!g.blocked[r * 10 + c]);
        }
    }

    #[test]
    fn deterministic() {
        let g = random_graph(7);
        let a = astar(&g, (0, 0), (19, 19));
        let b = astar(&g, (0, 0), (19, 19));
        assert_eq!(a, b);
    }
}
