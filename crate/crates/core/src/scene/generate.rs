//! Procedural multi-room scenes.
//!
//! Rooms occupy cells of an irregular grid (one width per column, one height
//! per row) grown as a connected blob. Adjacent rooms are joined by doors
//! along a random spanning tree plus a few extra openings, and rooms may hold
//! free-standing obstacles (partitions, L and U shapes).

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Rgb, Scene, WallSegment, DEFAULT_WALL_HEIGHT, MIN_SENSOR_HEIGHT};
use crate::geometry::{Rect, Vec2};
use crate::index::SegmentIndex;
use crate::nav;
use crate::rng::seeded;

const DOOR_MARGIN: f64 = 0.3;
const OBSTACLE_MARGIN: f64 = 0.8;
const MIN_DOOR: f64 = 0.4;
const EXTRA_DOOR_PROB: f64 = 0.35;
const CHECK_RESOLUTION: f64 = 0.1;
const CHECK_RADIUS: f64 = 0.1;
const MAX_ROOMS: usize = 64;
const MAX_OBSTACLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub rooms: (usize, usize),
    /// Side length range of a room (m).
    pub room_size: (f64, f64),
    /// Width of door openings between rooms (m).
    pub corridor_width: f64,
    pub obstacles_per_room: (usize, usize),
    pub wall_height: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            rooms: (4, 6),
            room_size: (4.0, 8.0),
            corridor_width: 1.0,
            obstacles_per_room: (0, 2),
            wall_height: DEFAULT_WALL_HEIGHT,
        }
    }
}

impl SceneParams {
    pub fn single_room(size: f64) -> Self {
        SceneParams {
            rooms: (1, 1),
            room_size: (size, size),
            obstacles_per_room: (0, 0),
            ..Default::default()
        }
    }

    /// Clamps every field into its valid range, describing each change.
    pub fn clamped(&self) -> (SceneParams, Vec<String>) {
        let mut p = self.clone();
        let mut warnings = Vec::new();
        let mut fix = |what: &str, ok: bool, msg: String| {
            if !ok {
                warnings.push(format!("{what}: {msg}"));
            }
        };

        let (lo, hi) = p.rooms;
        let lo2 = lo.clamp(1, MAX_ROOMS);
        let hi2 = hi.clamp(lo2, MAX_ROOMS);
        fix("rooms", (lo2, hi2) == (lo, hi), format!("({lo}, {hi}) clamped to ({lo2}, {hi2})"));
        p.rooms = (lo2, hi2);

        let min_room = MIN_DOOR + 2.0 * DOOR_MARGIN;
        let (lo, hi) = p.room_size;
        let lo2 = if lo.is_finite() { lo.max(min_room) } else { min_room };
        let hi2 = if hi.is_finite() { hi.max(lo2) } else { lo2 };
        fix("room_size", (lo2, hi2) == (lo, hi), format!("({lo}, {hi}) clamped to ({lo2}, {hi2})"));
        p.room_size = (lo2, hi2);

        let w = p.corridor_width;
        let w2 = if w.is_finite() { w.clamp(MIN_DOOR, lo2 - 2.0 * DOOR_MARGIN) } else { MIN_DOOR };
        fix("corridor_width", w2 == w, format!("{w} clamped to {w2}"));
        p.corridor_width = w2;

        let (lo, hi) = p.obstacles_per_room;
        let lo2 = lo.min(MAX_OBSTACLES);
        let hi2 = hi.clamp(lo2, MAX_OBSTACLES);
        fix("obstacles_per_room", (lo2, hi2) == (lo, hi), format!("({lo}, {hi}) clamped to ({lo2}, {hi2})"));
        p.obstacles_per_room = (lo2, hi2);

        let h = p.wall_height;
        let h2 = if h.is_finite() && h > MIN_SENSOR_HEIGHT { h } else { DEFAULT_WALL_HEIGHT };
        fix("wall_height", h2 == h, format!("{h} replaced by {h2}"));
        p.wall_height = h2;

        (p, warnings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub warnings: Vec<String>,
}

type Cell = (usize, usize);

/// Deterministic procedural scene for `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> GeneratedScene {
    let (p, mut warnings) = params.clamped();
    let mut rng = seeded(seed);

    let n_rooms = rng.gen_range(p.rooms.0..=p.rooms.1);
    let cells = grow_layout(n_rooms, &mut rng);
    let cols = cells.iter().map(|c| c.0).max().unwrap() + 1;
    let rows = cells.iter().map(|c| c.1).max().unwrap() + 1;
    let xs = cumulative(cols, p.room_size, &mut rng);
    let ys = cumulative(rows, p.room_size, &mut rng);
    let room_rect = |c: Cell| Rect::new(Vec2::new(xs[c.0], ys[c.1]), Vec2::new(xs[c.0 + 1], ys[c.1 + 1]));

    let doors = choose_doors(&cells, &mut rng);

    let mut walls = Vec::new();
    let mut next_id = 1u32;
    let albedo = |rng: &mut crate::rng::SimRng| -> Rgb {
        [rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9)]
    };

    for &c in &cells {
        let r = room_rect(c);
        let corners = [r.min, Vec2::new(r.max.x, r.min.y), r.max, Vec2::new(r.min.x, r.max.y)];
        // Sides: south, east, north, west, with the neighbor across each.
        let neighbors = [
            c.1.checked_sub(1).map(|y| (c.0, y)),
            Some((c.0 + 1, c.1)),
            Some((c.0, c.1 + 1)),
            c.0.checked_sub(1).map(|x| (x, c.1)),
        ];
        for side in 0..4 {
            let (a, b) = (corners[side], corners[(side + 1) % 4]);
            let neighbor = neighbors[side].filter(|n| cells.contains(n));
            let id = next_id;
            match neighbor {
                None => walls.push(WallSegment::new(a, b, id).with_albedo(albedo(&mut rng))),
                // Shared walls are emitted once, by the lower cell.
                Some(n) if n < c => continue,
                Some(n) => {
                    let color = albedo(&mut rng);
                    if doors.contains(&(c, n)) {
                        let len = a.distance(b);
                        let start = round_cm(rng.gen_range(DOOR_MARGIN..=len - DOOR_MARGIN - p.corridor_width));
                        let dir = (b - a).normalized();
                        let g0 = a + dir * start;
                        let g1 = a + dir * (start + p.corridor_width);
                        walls.push(WallSegment::new(a, g0, id).with_albedo(color));
                        walls.push(WallSegment::new(g1, b, id).with_albedo(color));
                    } else {
                        walls.push(WallSegment::new(a, b, id).with_albedo(color));
                    }
                }
            }
            next_id += 1;
        }
    }

    for &c in &cells {
        let count = rng.gen_range(p.obstacles_per_room.0..=p.obstacles_per_room.1);
        let area = room_rect(c).padded(-OBSTACLE_MARGIN);
        for _ in 0..count {
            let Some(shape) = place_obstacle(area, &mut rng) else {
                continue;
            };
            let color = albedo(&mut rng);
            let mut candidate = walls.clone();
            candidate.extend(shape.windows(2).map(|w| WallSegment::new(w[0], w[1], next_id).with_albedo(color)));
            if single_component(&candidate) {
                walls = candidate;
                next_id += 1;
            } else {
                warnings.push(format!("dropped an obstacle in room {:?} that split the navigable space", c));
            }
        }
    }

    let mut scene = Scene::new(format!("gen-{seed}"), walls);
    scene.wall_height = p.wall_height;
    scene.floor_color = [rng.gen_range(0.4..0.7), rng.gen_range(0.35..0.55), rng.gen_range(0.25..0.45)];
    scene.ceiling_color = [rng.gen_range(0.8..0.95); 3];
    GeneratedScene { scene, warnings }
}

/// Connected set of `n` grid cells, shifted so the minimum coordinates are 0.
fn grow_layout<R: Rng>(n: usize, rng: &mut R) -> Vec<Cell> {
    let origin = n;
    let mut set: BTreeSet<Cell> = BTreeSet::new();
    set.insert((origin, origin));
    while set.len() < n {
        let frontier: Vec<Cell> = set
            .iter()
            .flat_map(|&(x, y)| [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)])
            .filter(|c| !set.contains(c))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        set.insert(*frontier.choose(rng).unwrap());
    }
    let min_x = set.iter().map(|c| c.0).min().unwrap();
    let min_y = set.iter().map(|c| c.1).min().unwrap();
    set.into_iter().map(|(x, y)| (x - min_x, y - min_y)).collect()
}

fn cumulative<R: Rng>(n: usize, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0];
    for _ in 0..n {
        let size = round_cm(rng.gen_range(range.0..=range.1)).max(range.0);
        out.push(round_cm(out.last().unwrap() + size));
    }
    out
}

fn round_cm(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Adjacent cell pairs `(lo, hi)` that get a door: a random spanning tree
/// plus extra openings.
fn choose_doors<R: Rng>(cells: &[Cell], rng: &mut R) -> BTreeSet<(Cell, Cell)> {
    let mut edges: Vec<(Cell, Cell)> = Vec::new();
    for &c in cells {
        for n in [(c.0 + 1, c.1), (c.0, c.1 + 1)] {
            if cells.contains(&n) {
                edges.push((c, n));
            }
        }
    }
    edges.shuffle(rng);
    let index = |c: &Cell| cells.iter().position(|x| x == c).unwrap();
    let mut parent: Vec<usize> = (0..cells.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut doors = BTreeSet::new();
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, index(&a)), find(&mut parent, index(&b)));
        if ra != rb {
            parent[ra] = rb;
            doors.insert((a, b));
        } else if rng.gen_bool(EXTRA_DOOR_PROB) {
            doors.insert((a, b));
        }
    }
    doors
}

/// Polyline of a partition, L or U shape fully inside `area`.
fn place_obstacle<R: Rng>(area: Rect, rng: &mut R) -> Option<Vec<Vec2>> {
    if area.is_empty() || area.width() < 0.5 || area.height() < 0.5 {
        return None;
    }
    let max_arm = area.width().min(area.height()).min(2.0);
    for _ in 0..10 {
        let arm = round_cm(rng.gen_range(0.5..=max_arm));
        let leg = round_cm(rng.gen_range(0.5..=max_arm));
        let local: Vec<Vec2> = match rng.gen_range(0..3) {
            0 => vec![Vec2::ZERO, Vec2::new(arm, 0.0)],
            1 => vec![Vec2::new(0.0, leg), Vec2::ZERO, Vec2::new(arm, 0.0)],
            _ => vec![Vec2::new(0.0, leg), Vec2::ZERO, Vec2::new(arm, 0.0), Vec2::new(arm, leg)],
        };
        let angle = rng.gen_range(0..4) as f64 * std::f64::consts::FRAC_PI_2;
        let anchor = Vec2::new(
            round_cm(rng.gen_range(area.min.x..=area.max.x)),
            round_cm(rng.gen_range(area.min.y..=area.max.y)),
        );
        let pts: Vec<Vec2> = local
            .iter()
            .map(|&q| {
                let r = q.rotated(angle) + anchor;
                Vec2::new(round_cm(r.x), round_cm(r.y))
            })
            .collect();
        if pts.iter().all(|&q| area.contains(q)) {
            return Some(pts);
        }
    }
    None
}

fn single_component(walls: &[WallSegment]) -> bool {
    let index = Arc::new(SegmentIndex::new(walls.to_vec()));
    match nav::rasterize_scene(&index, CHECK_RESOLUTION, CHECK_RADIUS) {
        Ok(grid) => grid.navigable_count() > 0 && grid.components().1 == 1,
        Err(_) => false,
    }
}
