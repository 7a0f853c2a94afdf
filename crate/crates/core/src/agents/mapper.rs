//! Classic mapping + planning agent: GPS+Compass localization, a log-odds
//! occupancy map built from the depth image's center row, A* on the inflated
//! map, and goal-follower control towards the next waypoint.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::{near_goal, pose, steer_towards, Agent, EpisodeContext};
use crate::geometry::{Rect, Vec2};
use crate::sensors::{Intrinsics, Observations, SensorKind};
use crate::sim::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperParams {
    /// Map cell size (m).
    pub cell: f64,
    /// Log-odds added to a cell at a depth return.
    pub hit: f32,
    /// Log-odds subtracted from cells a depth ray passes through.
    pub miss: f32,
    pub clamp: f32,
    /// Cost multiplier for cells never observed.
    pub unknown_cost: f64,
    /// Minimum distance ahead of the agent for the steering waypoint (m).
    pub waypoint_distance: f64,
    pub agent_radius: f64,
    /// Extra map extent around the start and goal (m).
    pub margin: f64,
    /// Forward moves shorter than this count as a bump (m).
    pub bump_threshold: f64,
    /// Horizontal field of view of the depth camera (degrees).
    pub hfov: f64,
    /// Weight on the A* distance heuristic; above 1 trades optimality for
    /// fewer expansions.
    pub heuristic_weight: f64,
    /// Steps a still-valid plan is followed before planning again.
    pub replan_interval: u32,
}

impl Default for MapperParams {
    fn default() -> Self {
        MapperParams {
            cell: 0.1,
            hit: 0.7,
            miss: 0.7,
            clamp: 5.0,
            unknown_cost: 2.0,
            waypoint_distance: 0.3,
            agent_radius: 0.1,
            margin: 10.0,
            bump_threshold: 0.05,
            hfov: crate::sensors::DEFAULT_HFOV_DEG,
            heuristic_weight: 2.0,
            replan_interval: 10,
        }
    }
}

/// Log-odds occupancy grid in the episode frame.
#[derive(Debug, Clone)]
pub struct OccupancyMap {
    pub origin: Vec2,
    pub cell: f64,
    pub width: usize,
    pub height: usize,
    logodds: Vec<f32>,
    /// Number of occupied cells in each cell's 3x3 neighborhood.
    near_occupied: Vec<u8>,
    clamp: f32,
}

impl OccupancyMap {
    pub fn new(bounds: Rect, cell: f64, clamp: f32) -> Self {
        let width = (bounds.width() / cell).ceil().max(1.0) as usize;
        let height = (bounds.height() / cell).ceil().max(1.0) as usize;
        OccupancyMap {
            origin: bounds.min,
            cell,
            width,
            height,
            logodds: vec![0.0; width * height],
            near_occupied: vec![0; width * height],
            clamp,
        }
    }

    pub fn cell_of(&self, p: Vec2) -> Option<usize> {
        let x = ((p.x - self.origin.x) / self.cell).floor();
        let y = ((p.y - self.origin.y) / self.cell).floor();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some(y as usize * self.width + x as usize)
    }

    pub fn center(&self, c: usize) -> Vec2 {
        let (x, y) = (c % self.width, c / self.width);
        self.origin + Vec2::new((x as f64 + 0.5) * self.cell, (y as f64 + 0.5) * self.cell)
    }

    pub fn logodds(&self, c: usize) -> f32 {
        self.logodds[c]
    }

    pub fn is_occupied(&self, c: usize) -> bool {
        self.logodds[c] > 0.0
    }

    pub fn is_unknown(&self, c: usize) -> bool {
        self.logodds[c] == 0.0
    }

    /// Occupied or adjacent (8-neighborhood) to an occupied cell.
    pub fn is_inflated(&self, c: usize) -> bool {
        self.near_occupied[c] > 0
    }

    pub fn update(&mut self, c: usize, delta: f32) -> bool {
        let before = self.is_occupied(c);
        let v = (self.logodds[c] + delta).clamp(-self.clamp, self.clamp);
        self.logodds[c] = v;
        let after = self.is_occupied(c);
        if before != after {
            let (x, y) = ((c % self.width) as isize, (c / self.width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                        let n = ny as usize * self.width + nx as usize;
                        if after {
                            self.near_occupied[n] += 1;
                        } else {
                            self.near_occupied[n] -= 1;
                        }
                    }
                }
            }
        }
        before != after
    }

    /// Cells crossed by the segment `a`-`b` in traversal order, including
    /// both end cells.
    pub fn traverse(&self, a: Vec2, b: Vec2, mut visit: impl FnMut(usize)) {
        let to_grid = |p: Vec2| ((p.x - self.origin.x) / self.cell, (p.y - self.origin.y) / self.cell);
        let (ax, ay) = to_grid(a);
        let (bx, by) = to_grid(b);
        let (mut x, mut y) = (ax.floor() as i64, ay.floor() as i64);
        let (ex, ey) = (bx.floor() as i64, by.floor() as i64);
        let (dx, dy) = (bx - ax, by - ay);
        let step_x = if dx > 0.0 { 1 } else { -1 };
        let step_y = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            (x as f64 + 1.0 - ax) * t_delta_x
        } else if dx < 0.0 {
            (ax - x as f64) * t_delta_x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            (y as f64 + 1.0 - ay) * t_delta_y
        } else if dy < 0.0 {
            (ay - y as f64) * t_delta_y
        } else {
            f64::INFINITY
        };
        let limit = (ex - x).abs() + (ey - y).abs() + 1;
        for _ in 0..=limit {
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                visit(y as usize * self.width + x as usize);
            }
            if x == ex && y == ey {
                break;
            }
            if t_max_x < t_max_y {
                x += step_x;
                t_max_x += t_delta_x;
            } else {
                y += step_y;
                t_max_y += t_delta_y;
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Node {
    f: f64,
    cell: usize,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct MapperAgent {
    params: MapperParams,
    goal: Vec2,
    map: OccupancyMap,
    path: Vec<usize>,
    last: Option<(Vec2, Action)>,
    replans: u32,
    route_changes: u32,
    failed_plans: u32,
    since_plan: u32,
    scratch: Scratch,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    g: Vec<f64>,
    parent: Vec<usize>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl MapperAgent {
    pub fn new(params: MapperParams) -> Self {
        MapperAgent {
            params,
            goal: Vec2::ZERO,
            map: OccupancyMap::new(Rect::new(Vec2::ZERO, Vec2::new(1.0, 1.0)), params.cell, params.clamp),
            path: Vec::new(),
            last: None,
            replans: 0,
            route_changes: 0,
            failed_plans: 0,
            since_plan: 0,
            scratch: Scratch::default(),
        }
    }

    pub fn map(&self) -> &OccupancyMap {
        &self.map
    }

    /// Current plan as map cells from the agent to the goal.
    pub fn path(&self) -> &[usize] {
        &self.path
    }

    pub fn replans(&self) -> u32 {
        self.replans
    }

    /// Replans whose route uses a cell the previous route did not.
    pub fn route_changes(&self) -> u32 {
        self.route_changes
    }

    pub fn failed_plans(&self) -> u32 {
        self.failed_plans
    }

    fn integrate_depth(&mut self, obs: &Observations, gps: Vec2, compass: f64) {
        let Some(depth) = obs.depth.as_ref() else {
            return;
        };
        let intr = Intrinsics {
            width: depth.width,
            height: depth.height,
            hfov: self.params.hfov,
            max_range: depth.max_range as f64,
        };
        let row = depth.height / 2;
        let forward = Vec2::from_angle(compass);
        let left = forward.perp();
        let max_range = depth.max_range;
        for j in 0..depth.width {
            let d = depth.get(row, j);
            let u = intr.column_offset(j);
            let hit = d < max_range;
            let end = gps + (forward - left * u) * d as f64;
            let end_cell = self.map.cell_of(end);
            let mut cells = Vec::new();
            self.map.traverse(gps, end, |c| cells.push(c));
            for c in cells {
                if hit && Some(c) == end_cell {
                    continue;
                }
                self.map.update(c, -self.params.miss);
            }
            if hit {
                if let Some(c) = end_cell {
                    self.map.update(c, self.params.hit);
                }
            }
        }
    }

    fn detect_bump(&mut self, gps: Vec2, compass: f64) {
        if let Some((prev, Action::MoveForward)) = self.last {
            if prev.distance(gps) < self.params.bump_threshold {
                let ahead = gps + Vec2::from_angle(compass) * (self.params.agent_radius + self.params.cell * 0.5);
                if let Some(c) = self.map.cell_of(ahead) {
                    let d = self.params.clamp - self.map.logodds(c);
                    self.map.update(c, d);
                }
            }
        }
    }

    fn passable(&self, c: usize, from: Vec2) -> bool {
        let m = &self.map;
        if m.is_occupied(c) {
            return false;
        }
        if !m.is_inflated(c) {
            return true;
        }
        let relax = self.params.waypoint_distance + self.params.cell;
        let p = m.center(c);
        (p - self.goal).length_squared() <= relax * relax || (p - from).length_squared() <= relax * relax
    }

    /// A* from `from` to the goal. Occupied cells are never entered; cells
    /// next to one are avoided except close to the start and the goal.
    fn plan(&mut self, from: Vec2) -> Option<Vec<usize>> {
        let start = self.map.cell_of(from)?;
        let goal = self.map.cell_of(self.goal)?;
        if self.map.is_occupied(goal) {
            return None;
        }
        let width = self.map.width;
        let height = self.map.height;
        let n = width * height;
        if self.scratch.g.len() != n {
            self.scratch = Scratch { g: vec![0.0; n], parent: vec![0; n], stamp: vec![0; n], epoch: 0 };
        }
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.epoch = scratch.epoch.wrapping_add(1);
        if scratch.epoch == 0 {
            scratch.stamp.iter_mut().for_each(|s| *s = 0);
            scratch.epoch = 1;
        }
        let epoch = scratch.epoch;
        let (gx, gy) = ((goal % width) as f64, (goal / width) as f64);
        let weight = self.params.heuristic_weight;
        let h = |c: usize| {
            let dx = ((c % width) as f64 - gx).abs();
            let dy = ((c / width) as f64 - gy).abs();
            weight * (dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy))
        };
        let unknown_cost = self.params.unknown_cost;

        let mut open = BinaryHeap::new();
        scratch.g[start] = 0.0;
        scratch.stamp[start] = epoch;
        open.push(Node { f: h(start), cell: start });
        let w = width as isize;
        let mut found = None;
        while let Some(Node { f, cell }) = open.pop() {
            if cell == goal {
                let mut path = vec![goal];
                let mut c = goal;
                while c != start {
                    c = scratch.parent[c];
                    path.push(c);
                }
                path.reverse();
                found = Some(path);
                break;
            }
            let gc = scratch.g[cell];
            if f > gc + h(cell) + 1e-9 {
                continue;
            }
            let (x, y) = ((cell % width) as isize, (cell / width) as isize);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= height as isize {
                    continue;
                }
                let nc = (ny * w + nx) as usize;
                if !self.passable(nc, from) {
                    continue;
                }
                if dx != 0 && dy != 0 {
                    let side_a = (y * w + nx) as usize;
                    let side_b = (ny * w + x) as usize;
                    if !self.passable(side_a, from) || !self.passable(side_b, from) {
                        continue;
                    }
                }
                let len = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                let cost = if self.map.is_unknown(nc) { unknown_cost } else { 1.0 };
                let ng = gc + len * cost;
                if scratch.stamp[nc] != epoch || ng < scratch.g[nc] {
                    scratch.stamp[nc] = epoch;
                    scratch.g[nc] = ng;
                    scratch.parent[nc] = cell;
                    open.push(Node { f: ng + h(nc), cell: nc });
                }
            }
        }
        self.scratch = scratch;
        found
    }

    /// Drops the part of the current path behind the agent. Returns false
    /// when the path is blocked or the agent has left it.
    fn follow_current(&mut self, gps: Vec2) -> bool {
        if self.path.is_empty() || self.since_plan >= self.params.replan_interval {
            return false;
        }
        if !self.path.iter().all(|&c| self.passable(c, gps)) {
            return false;
        }
        let limit = 1.5 * self.params.cell;
        let nearest = self
            .path
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, (self.map.center(c) - gps).length_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, d2)) if d2 <= limit * limit => {
                self.path.drain(..i);
                true
            }
            _ => false,
        }
    }

    fn waypoint(&self, gps: Vec2) -> Vec2 {
        self.path
            .iter()
            .map(|&c| self.map.center(c))
            .find(|p| p.distance(gps) >= self.params.waypoint_distance)
            .unwrap_or(self.goal)
    }
}

impl Agent for MapperAgent {
    fn name(&self) -> &str {
        "mapper"
    }

    fn sensors(&self) -> Vec<SensorKind> {
        vec![SensorKind::Depth, SensorKind::GpsCompass]
    }

    fn reset(&mut self, ctx: &EpisodeContext) {
        self.goal = ctx.pointgoal;
        let bounds = Rect::bounding([Vec2::ZERO, ctx.pointgoal]).unwrap().padded(self.params.margin);
        self.map = OccupancyMap::new(bounds, self.params.cell, self.params.clamp);
        self.path.clear();
        self.last = None;
        self.replans = 0;
        self.route_changes = 0;
        self.failed_plans = 0;
        self.since_plan = 0;
    }

    fn act(&mut self, obs: &Observations) -> Action {
        let (gps, compass) = pose(obs);
        self.detect_bump(gps, compass);
        self.integrate_depth(obs, gps, compass);

        let action = if near_goal(gps, self.goal) {
            Action::Stop
        } else if self.follow_current(gps) {
            self.since_plan += 1;
            steer_towards(gps, compass, self.waypoint(gps))
        } else {
            match self.plan(gps) {
                Some(path) => {
                    debug_assert!(path[1..].iter().all(|&c| !self.map.is_occupied(c)));
                    self.replans += 1;
                    self.since_plan = 1;
                    if !self.path.is_empty() {
                        let old: HashSet<usize> = self.path.iter().copied().collect();
                        if path.iter().any(|c| !old.contains(c)) {
                            self.route_changes += 1;
                        }
                    }
                    self.path = path;
                    steer_towards(gps, compass, self.waypoint(gps))
                }
                None => {
                    self.failed_plans += 1;
                    self.path.clear();
                    Action::TurnLeft
                }
            }
        };
        self.last = Some((gps, action));
        action
    }
}
