//! Navigable-space rasterization and geodesic distances.
//!
//! Geodesics are computed on an 8-connected grid (octile metric) with
//! diagonal moves allowed only when both adjacent axial cells are navigable.
//! Motion itself stays continuous; the grid is only used for distances,
//! sampling and the privileged oracle.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{Rect, Vec2};
use crate::index::SegmentIndex;
use crate::sim::{self, Action, AgentConfig, AgentState};

pub const DEFAULT_RESOLUTION: f64 = 0.05;
/// Maximum distance a start or goal may be moved to reach a navigable cell center.
pub const SNAP_TOLERANCE: f64 = 0.2;
/// Within this distance of the goal, cells and points with line of sight to
/// it take their exact straight-line distance.
pub const NEAR_GOAL_RADIUS: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("rasterization bounds are empty")]
    EmptyBounds,
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("point ({x:.3}, {y:.3}) is not within {tol} m of a reachable navigable cell")]
    NotNavigable { x: f64, y: f64, tol: f64 },
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("grid has no navigable cells")]
    NoNavigableSpace,
    #[error("goal is unreachable from ({x:.3}, {y:.3})")]
    Unreachable { x: f64, y: f64 },
}

/// The eight neighbor offsets. Axial moves first, then diagonals; diagonal
/// `k` (4..8) is bounded by axial moves `DIAG_SIDES[k - 4]`.
const NEIGHBORS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
const DIAG_SIDES: [(usize, usize); 4] = [(0, 2), (0, 3), (1, 2), (1, 3)];

/// Boolean navigability raster. Cell `(ix, iy)` covers
/// `origin + [ix, ix+1)·res × [iy, iy+1)·res`.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    cells: Vec<bool>,
    /// Per-cell bitmask of neighbor moves whose center-to-center segment
    /// touches a wall (only relevant for tiny agent radii).
    blocked: Vec<u8>,
    navigable: Vec<u32>,
    walls: Option<Arc<SegmentIndex>>,
}

impl OccupancyGrid {
    /// Grid with every cell set to `value` and no wall geometry attached.
    pub fn filled(origin: Vec2, resolution: f64, width: usize, height: usize, value: bool) -> Self {
        let mut g = OccupancyGrid {
            origin,
            resolution,
            width,
            height,
            cells: vec![value; width * height],
            blocked: vec![0; width * height],
            navigable: Vec::new(),
            walls: None,
        };
        g.reindex();
        g
    }

    fn reindex(&mut self) {
        self.navigable = (0..self.cells.len() as u32).filter(|&i| self.cells[i as usize]).collect();
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(
            self.origin,
            self.origin + Vec2::new(self.width as f64 * self.resolution, self.height as f64 * self.resolution),
        )
    }

    pub fn walls(&self) -> Option<&Arc<SegmentIndex>> {
        self.walls.as_ref()
    }

    pub fn is_navigable(&self, cell: usize) -> bool {
        self.cells[cell]
    }

    pub fn set(&mut self, ix: usize, iy: usize, navigable: bool) {
        self.cells[iy * self.width + ix] = navigable;
        self.reindex();
    }

    /// Indices of navigable cells in ascending order.
    pub fn navigable_cells(&self) -> &[u32] {
        &self.navigable
    }

    pub fn navigable_count(&self) -> usize {
        self.navigable.len()
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    pub fn cell_center(&self, cell: usize) -> Vec2 {
        let (ix, iy) = self.coords(cell);
        self.origin + Vec2::new((ix as f64 + 0.5) * self.resolution, (iy as f64 + 0.5) * self.resolution)
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_at(&self, p: Vec2) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some(fy as usize * self.width + fx as usize)
    }

    /// Clears every navigable cell whose center fails `keep`.
    pub fn retain(&mut self, keep: impl Fn(Vec2) -> bool) {
        for i in 0..self.cells.len() {
            if self.cells[i] && !keep(self.cell_center(i)) {
                self.cells[i] = false;
            }
        }
        self.reindex();
    }

    fn neighbor(&self, cell: usize, k: usize) -> Option<usize> {
        let (ix, iy) = self.coords(cell);
        let (dx, dy) = NEIGHBORS[k];
        let nx = ix as isize + dx;
        let ny = iy as isize + dy;
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            return None;
        }
        Some(ny as usize * self.width + nx as usize)
    }

    /// Graph edges out of a navigable cell: `(neighbor, length)`.
    pub fn edges(&self, cell: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let diag = self.resolution * std::f64::consts::SQRT_2;
        (0..8).filter_map(move |k| {
            if self.blocked[cell] & (1 << k) != 0 {
                return None;
            }
            let n = self.neighbor(cell, k)?;
            if !self.cells[n] {
                return None;
            }
            if k < 4 {
                return Some((n, self.resolution));
            }
            let (s1, s2) = DIAG_SIDES[k - 4];
            let ok = |s: usize| self.neighbor(cell, s).is_some_and(|c| self.cells[c]) && self.blocked[cell] & (1 << s) == 0;
            if ok(s1) && ok(s2) {
                Some((n, diag))
            } else {
                None
            }
        })
    }

    /// Connected-component labels (`u32::MAX` for non-navigable cells) and the
    /// component count.
    pub fn components(&self) -> (Vec<u32>, usize) {
        let mut labels = vec![u32::MAX; self.cells.len()];
        let mut count = 0u32;
        let mut queue = VecDeque::new();
        for &start in &self.navigable {
            let start = start as usize;
            if labels[start] != u32::MAX {
                continue;
            }
            labels[start] = count;
            queue.push_back(start);
            while let Some(c) = queue.pop_front() {
                for (n, _) in self.edges(c) {
                    if labels[n] == u32::MAX {
                        labels[n] = count;
                        queue.push_back(n);
                    }
                }
            }
            count += 1;
        }
        (labels, count as usize)
    }

    /// Nearest navigable cell for `p`: the cell containing it when navigable,
    /// otherwise the closest navigable cell center within `tolerance` that can
    /// be reached from `p` without touching a wall.
    pub fn snap(&self, p: Vec2, tolerance: f64) -> Result<usize, NavError> {
        let not_nav = NavError::NotNavigable { x: p.x, y: p.y, tol: tolerance };
        if let Some(c) = self.cell_at(p) {
            if self.cells[c] {
                return Ok(c);
            }
        }
        let r = (tolerance / self.resolution).ceil() as isize + 1;
        let fx = ((p.x - self.origin.x) / self.resolution).floor() as isize;
        let fy = ((p.y - self.origin.y) / self.resolution).floor() as isize;
        let mut best: Option<(f64, usize)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (fx + dx, fy + dy);
                if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
                    continue;
                }
                let c = y as usize * self.width + x as usize;
                if !self.cells[c] {
                    continue;
                }
                let d = self.cell_center(c).distance(p);
                if d > tolerance || best.is_some_and(|(bd, bc)| (d, c) >= (bd, bc)) {
                    continue;
                }
                if let Some(w) = &self.walls {
                    if w.crosses_wall(p, self.cell_center(c)) {
                        continue;
                    }
                }
                best = Some((d, c));
            }
        }
        best.map(|(_, c)| c).ok_or(not_nav)
    }

    /// Binary PGM dump (255 = navigable), top row = largest y.
    pub fn write_pgm(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        for iy in (0..self.height).rev() {
            let row: Vec<u8> = (0..self.width)
                .map(|ix| if self.cells[iy * self.width + ix] { 255 } else { 0 })
                .collect();
            out.write_all(&row)?;
        }
        Ok(())
    }
}

/// Rasterizes navigable space over `bounds`.
///
/// A cell is navigable iff its center is at least `agent_radius` from every
/// segment and it lies inside the enclosure, i.e. it cannot be reached from
/// the border of `bounds` without crossing a wall.
pub fn rasterize_navigable(
    walls: &SegmentIndex,
    bounds: Rect,
    resolution: f64,
    agent_radius: f64,
) -> Result<OccupancyGrid, NavError> {
    if !(resolution > 0.0) {
        return Err(NavError::BadResolution(resolution));
    }
    if bounds.is_empty() {
        return Err(NavError::EmptyBounds);
    }
    let agent_radius = agent_radius.max(0.0);
    let width = (bounds.width() / resolution).ceil() as usize;
    let height = (bounds.height() / resolution).ceil() as usize;
    let mut grid = OccupancyGrid::filled(bounds.min, resolution, width, height, false);
    let n = width * height;

    // Cells farther than one diagonal step from every wall cannot have a wall
    // between them and a neighbor.
    let near_radius = resolution * std::f64::consts::SQRT_2;
    let probe = agent_radius.max(near_radius);
    let mut clear = vec![false; n];
    let mut near = vec![false; n];
    for (i, (c, nr)) in clear.iter_mut().zip(near.iter_mut()).enumerate() {
        let p = grid.cell_center(i);
        match walls.nearest_distance_within(p, probe) {
            Some(d) => {
                *c = d >= agent_radius;
                *nr = d <= near_radius;
            }
            None => *c = true,
        }
    }

    let mut blocked = vec![0u8; n];
    for i in 0..n {
        if !near[i] {
            continue;
        }
        for k in 0..8 {
            if let Some(j) = grid.neighbor(i, k) {
                if walls.crosses_wall(grid.cell_center(i), grid.cell_center(j)) {
                    blocked[i] |= 1 << k;
                }
            }
        }
    }
    // Crossings are symmetric but only computed from cells flagged `near`.
    for i in 0..n {
        for k in 0..8 {
            if blocked[i] & (1 << k) != 0 {
                if let Some(j) = grid.neighbor(i, k) {
                    blocked[j] |= 1 << opposite(k);
                }
            }
        }
    }

    // Flood the exterior from the border through axial moves that do not
    // touch a wall.
    let mut outside = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        let (ix, iy) = grid.coords(i);
        if ix == 0 || iy == 0 || ix == width - 1 || iy == height - 1 {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(c) = queue.pop_front() {
        for k in 0..4 {
            if blocked[c] & (1 << k) != 0 {
                continue;
            }
            if let Some(j) = grid.neighbor(c, k) {
                if !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    for i in 0..n {
        grid.cells[i] = clear[i] && !outside[i];
    }
    grid.blocked = blocked;
    grid.reindex();
    Ok(grid)
}

fn opposite(k: usize) -> usize {
    let (dx, dy) = NEIGHBORS[k];
    NEIGHBORS.iter().position(|&d| d == (-dx, -dy)).unwrap()
}

/// Rasterizes over the wall bounding box padded so the border lies outside.
pub fn rasterize_scene(walls: &Arc<SegmentIndex>, resolution: f64, agent_radius: f64) -> Result<OccupancyGrid, NavError> {
    if walls.is_empty() {
        return Err(NavError::EmptyBounds);
    }
    let pad = 2.0 * resolution + agent_radius.max(0.0);
    let b = walls.bounds();
    // Align the grid origin to a multiple of the resolution so that grids of
    // the same scene at the same resolution coincide.
    let min = Vec2::new(
        ((b.min.x - pad) / resolution).floor() * resolution,
        ((b.min.y - pad) / resolution).floor() * resolution,
    );
    let bounds = Rect::new(min, b.max + Vec2::new(pad, pad));
    let mut grid = rasterize_navigable(walls, bounds, resolution, agent_radius)?;
    grid.walls = Some(Arc::clone(walls));
    Ok(grid)
}

/// Geodesic distance to a goal for every cell (`+∞` where unreachable).
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub grid: Arc<OccupancyGrid>,
    pub goal: Vec2,
    pub goal_cell: usize,
    pub dist: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    cell: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the goal over the 8-connected navigable graph.
///
/// Cells near the goal are seeded with their straight-line distance to the
/// exact goal point: every cell within `NEAR_GOAL_RADIUS` that sees the goal
/// when the grid carries its walls, otherwise the goal cell and its graph
/// neighbors.
pub fn distance_field(grid: &Arc<OccupancyGrid>, goal: Vec2) -> Result<DistanceField, NavError> {
    let goal_cell = grid.snap(goal, SNAP_TOLERANCE)?;
    let mut dist = vec![f64::INFINITY; grid.len()];
    let mut heap = BinaryHeap::new();

    let mut seed = |cell: usize, heap: &mut BinaryHeap<Frontier>| {
        let d = grid.cell_center(cell).distance(goal);
        if d < dist[cell] {
            dist[cell] = d;
            heap.push(Frontier { dist: d, cell });
        }
    };
    seed(goal_cell, &mut heap);
    match &grid.walls {
        Some(walls) => {
            let r = (NEAR_GOAL_RADIUS / grid.resolution).ceil() as isize + 1;
            let (gx, gy) = grid.coords(goal_cell);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (gx as isize + dx, gy as isize + dy);
                    if x < 0 || y < 0 || x >= grid.width as isize || y >= grid.height as isize {
                        continue;
                    }
                    let c = y as usize * grid.width + x as usize;
                    let center = grid.cell_center(c);
                    if grid.cells[c] && center.distance(goal) <= NEAR_GOAL_RADIUS && !walls.crosses_wall(goal, center) {
                        seed(c, &mut heap);
                    }
                }
            }
        }
        None => {
            let neighbors: Vec<usize> = grid.edges(goal_cell).map(|(n, _)| n).collect();
            for n in neighbors {
                seed(n, &mut heap);
            }
        }
    }

    while let Some(Frontier { dist: d, cell }) = heap.pop() {
        if d > dist[cell] {
            continue;
        }
        for (n, w) in grid.edges(cell) {
            let nd = d + w;
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Frontier { dist: nd, cell: n });
            }
        }
    }

    Ok(DistanceField {
        grid: Arc::clone(grid),
        goal,
        goal_cell,
        dist,
    })
}

impl DistanceField {
    pub fn resolution(&self) -> f64 {
        self.grid.resolution
    }

    pub fn cell_distance(&self, cell: usize) -> f64 {
        self.dist[cell]
    }

    /// Geodesic distance at `p`: exact near a visible goal, otherwise
    /// bilinearly interpolated from the four surrounding cell centers.
    ///
    /// Corners that are non-navigable or unreachable take the value of the
    /// finite corner nearest to `p`; the result is `+∞` only when all four
    /// corners are infinite.
    pub fn geodesic_distance(&self, p: Vec2) -> Result<f64, NavError> {
        let g = &*self.grid;
        if !g.bounds().contains(p) {
            return Err(NavError::OutOfBounds { x: p.x, y: p.y });
        }
        if let Some(walls) = &g.walls {
            let d = p.distance(self.goal);
            if d <= NEAR_GOAL_RADIUS && !walls.crosses_wall(p, self.goal) {
                return Ok(d);
            }
        }
        let gx = (p.x - g.origin.x) / g.resolution - 0.5;
        let gy = (p.y - g.origin.y) / g.resolution - 0.5;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let mut corners = [(0.0f64, f64::INFINITY, f64::INFINITY); 4];
        for (k, (dx, dy)) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].into_iter().enumerate() {
            let wx = if dx == 0.0 { 1.0 - fx } else { fx };
            let wy = if dy == 0.0 { 1.0 - fy } else { fy };
            let (cx, cy) = (x0 + dx, y0 + dy);
            let value = if cx >= 0.0 && cy >= 0.0 && (cx as usize) < g.width && (cy as usize) < g.height {
                self.dist[cy as usize * g.width + cx as usize]
            } else {
                f64::INFINITY
            };
            let center_dist = Vec2::new(cx - gx, cy - gy).length();
            corners[k] = (wx * wy, value, center_dist);
        }
        let fallback = corners
            .iter()
            .filter(|c| c.1.is_finite())
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .map(|c| c.1);
        let Some(fallback) = fallback else {
            return Ok(f64::INFINITY);
        };
        Ok(corners
            .iter()
            .map(|&(w, v, _)| w * if v.is_finite() { v } else { fallback })
            .sum())
    }
}

/// Uniform over navigable cells, then uniform within the chosen cell.
pub fn sample_navigable<R: Rng + ?Sized>(grid: &OccupancyGrid, rng: &mut R) -> Result<Vec2, NavError> {
    let cells = grid.navigable_cells();
    if cells.is_empty() {
        return Err(NavError::NoNavigableSpace);
    }
    let cell = cells[rng.gen_range(0..cells.len())] as usize;
    let (ix, iy) = grid.coords(cell);
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    Ok(grid.origin + Vec2::new((ix as f64 + u) * grid.resolution, (iy as f64 + v) * grid.resolution))
}

/// Greedy descent of the distance field.
///
/// Each candidate action is scored by the geodesic distance after one forward
/// step taken with the heading that action leads to (turns change only the
/// heading). The best strictly improving candidate wins with ties broken
/// forward > left > right. When none improves, the agent turns towards the
/// closest heading (in turn count) whose forward step does improve.
pub fn greedy_gradient_action(
    field: &DistanceField,
    walls: &SegmentIndex,
    cfg: &AgentConfig,
    state: &AgentState,
    goal_radius: f64,
) -> Result<Action, NavError> {
    let here = field.geodesic_distance(state.position)?;
    if !here.is_finite() {
        return Err(NavError::Unreachable { x: state.position.x, y: state.position.y });
    }
    if here <= goal_radius {
        return Ok(Action::Stop);
    }

    let turn = cfg.turn_angle.to_radians();
    let probe = |heading: f64| -> f64 {
        let s = AgentState { heading, ..*state };
        let step = sim::apply_forward(&s, walls, cfg);
        field.geodesic_distance(step.new_state.position).unwrap_or(f64::INFINITY)
    };

    let candidates = [
        (Action::MoveForward, probe(state.heading)),
        (Action::TurnLeft, probe(state.heading + turn)),
        (Action::TurnRight, probe(state.heading - turn)),
    ];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.1 < best.1 {
            best = *c;
        }
    }
    if best.1 < here {
        return Ok(best.0);
    }

    // Local minimum among the three: look around the full circle.
    let steps = (std::f64::consts::PI / turn).ceil() as usize;
    let mut best_turn: Option<(f64, usize, Action)> = None;
    for k in 2..=steps {
        for (dir, action) in [(1.0, Action::TurnLeft), (-1.0, Action::TurnRight)] {
            let d = probe(state.heading + dir * k as f64 * turn);
            if d < here && best_turn.map_or(true, |(bd, bk, _)| (k, d) < (bk, bd)) {
                best_turn = Some((d, k, action));
            }
        }
        if best_turn.is_some() {
            break;
        }
    }
    Ok(best_turn.map_or(Action::TurnLeft, |(_, _, a)| a))
}
