//! 2.5D scenes: wall segments extruded from the floor (z = 0) to `wall_height`.
//!
//! Coordinates are meters with x east and y north; headings are radians
//! counter-clockwise from +x.

mod generate;
mod graph;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Rect, Vec2};
use crate::index::SegmentIndex;
use crate::nav::{self, OccupancyGrid};

pub use generate::{generate_scene, GeneratedScene, SceneParams};
pub use graph::{build_scene_graph, NodeId, Payload, SceneGraph};

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_WALL_HEIGHT: f64 = 2.5;
/// Sensor mount height every scene must clear.
pub const MIN_SENSOR_HEIGHT: f64 = 1.5;
/// Semantic id reserved for "no hit".
pub const VOID_SEMANTIC_ID: u32 = 0;
/// Largest id a wall may use; the two ids above it label floor and ceiling
/// and everything must fit a 16-bit semantic frame.
pub const MAX_WALL_SEMANTIC_ID: u32 = u16::MAX as u32 - 2;

const MIN_WALL_LENGTH: f64 = 1e-6;
const VALIDATION_RESOLUTION: f64 = 0.05;
const VALIDATION_AGENT_RADIUS: f64 = 0.1;
const VALIDATION_DIRECTIONS: usize = 16;
const VALIDATION_SAMPLES: usize = 64;

pub type Rgb = [f64; 3];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scene format version {0}")]
    UnsupportedVersion(u32),
    #[error("scene has no walls")]
    NoWalls,
    #[error("wall {index} has zero length")]
    ZeroLengthWall { index: usize },
    #[error("wall {index} uses semantic id {id}; ids must lie in 1..={max}", max = MAX_WALL_SEMANTIC_ID)]
    InvalidSemanticId { index: usize, id: u32 },
    #[error("wall height {0} m does not clear the 1.5 m sensor height")]
    WallTooLow(f64),
    #[error("{what} color component out of [0, 1]")]
    ColorOutOfRange { what: String },
    #[error("walls do not enclose a navigable region: {0}")]
    Unenclosed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSegment {
    pub a: Vec2,
    pub b: Vec2,
    pub semantic_id: u32,
    pub albedo: Rgb,
}

impl WallSegment {
    pub fn new(a: Vec2, b: Vec2, semantic_id: u32) -> Self {
        WallSegment {
            a,
            b,
            semantic_id,
            albedo: [0.7, 0.7, 0.7],
        }
    }

    pub fn with_albedo(mut self, albedo: Rgb) -> Self {
        self.albedo = albedo;
        self
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub version: u32,
    pub id: String,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    pub floor_color: Rgb,
    pub ceiling_color: Rgb,
    pub walls: Vec<WallSegment>,
    /// Optional restriction of the navigable region: first polygon is the outer
    /// boundary, the rest are holes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub navigable_hint: Option<Vec<Vec<Vec2>>>,
}

fn default_wall_height() -> f64 {
    DEFAULT_WALL_HEIGHT
}

impl Scene {
    pub fn new(id: impl Into<String>, walls: Vec<WallSegment>) -> Self {
        Scene {
            version: SCENE_FORMAT_VERSION,
            id: id.into(),
            wall_height: DEFAULT_WALL_HEIGHT,
            floor_color: [0.55, 0.45, 0.35],
            ceiling_color: [0.9, 0.9, 0.9],
            walls,
            navigable_hint: None,
        }
    }

    /// Axis-aligned rectangular room with one semantic id per side.
    pub fn rectangle_room(id: impl Into<String>, min: Vec2, max: Vec2) -> Self {
        let c = [min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)];
        let walls = (0..4)
            .map(|i| WallSegment::new(c[i], c[(i + 1) % 4], i as u32 + 1))
            .collect();
        Scene::new(id, walls)
    }

    pub fn bounds(&self) -> Rect {
        Rect::bounding(self.walls.iter().flat_map(|w| [w.a, w.b])).unwrap_or(Rect::new(Vec2::ZERO, Vec2::ZERO))
    }

    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        // Check the version before the strict parse so that files from a newer
        // format report a version error rather than an unknown-field error.
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != SCENE_FORMAT_VERSION as u64 {
                return Err(SceneError::UnsupportedVersion(v as u32));
            }
        }
        let scene: Scene = serde_json::from_value(raw)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Checks every scene invariant, including enclosure of the navigable region.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.version != SCENE_FORMAT_VERSION {
            return Err(SceneError::UnsupportedVersion(self.version));
        }
        if !(self.wall_height > MIN_SENSOR_HEIGHT) {
            return Err(SceneError::WallTooLow(self.wall_height));
        }
        check_color("floor", self.floor_color)?;
        check_color("ceiling", self.ceiling_color)?;
        if self.walls.is_empty() {
            return Err(SceneError::NoWalls);
        }
        for (index, w) in self.walls.iter().enumerate() {
            if !(w.length() > MIN_WALL_LENGTH) {
                return Err(SceneError::ZeroLengthWall { index });
            }
            if w.semantic_id == VOID_SEMANTIC_ID || w.semantic_id > MAX_WALL_SEMANTIC_ID {
                return Err(SceneError::InvalidSemanticId { index, id: w.semantic_id });
            }
            check_color(&format!("wall {index} albedo"), w.albedo)?;
        }
        self.validate_enclosure()
    }

    fn validate_enclosure(&self) -> Result<(), SceneError> {
        let index = Arc::new(SegmentIndex::new(self.walls.clone()));
        let grid = nav::rasterize_scene(&index, VALIDATION_RESOLUTION, VALIDATION_AGENT_RADIUS)
            .map_err(|e| SceneError::Unenclosed(e.to_string()))?;
        let grid = self.apply_hint(grid);
        let cells = grid.navigable_cells();
        if cells.is_empty() {
            return Err(SceneError::Unenclosed(
                "no cell is both inside the walls and clear of them by the agent radius".into(),
            ));
        }
        // Every sampled interior point must see a wall in all directions.
        let reach = index.bounds().diagonal() + 1.0;
        let stride = (cells.len() / VALIDATION_SAMPLES).max(1);
        for &cell in cells.iter().step_by(stride) {
            let p = grid.cell_center(cell as usize);
            for k in 0..VALIDATION_DIRECTIONS {
                let dir = Vec2::from_angle(k as f64 * std::f64::consts::TAU / VALIDATION_DIRECTIONS as f64);
                if index.nearest_hit(p, dir, reach).is_none() {
                    return Err(SceneError::Unenclosed(format!(
                        "ray from ({:.2}, {:.2}) towards {:.1}° escapes",
                        p.x,
                        p.y,
                        k as f64 * 360.0 / VALIDATION_DIRECTIONS as f64
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clears cells outside the navigable hint polygon, when one is present.
    pub fn apply_hint(&self, mut grid: OccupancyGrid) -> OccupancyGrid {
        if let Some(polys) = &self.navigable_hint {
            if let Some((outer, holes)) = polys.split_first() {
                grid.retain(|p| point_in_polygon(p, outer) && !holes.iter().any(|h| point_in_polygon(p, h)));
            }
        }
        grid
    }

    /// Navigable occupancy grid for an agent of `agent_radius`.
    pub fn occupancy(&self, resolution: f64, agent_radius: f64) -> Result<OccupancyGrid, nav::NavError> {
        let index = Arc::new(SegmentIndex::new(self.walls.clone()));
        nav::rasterize_scene(&index, resolution, agent_radius).map(|g| self.apply_hint(g))
    }
}

fn check_color(what: &str, c: Rgb) -> Result<(), SceneError> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(SceneError::ColorOutOfRange { what: what.to_string() })
    }
}

fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + n - 1) % n];
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}

/// Reads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path)?;
    Scene::from_json(&text)
}

/// Loads every `*.json` scene in a directory, sorted by file name.
pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<Vec<Scene>, SceneError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(load_scene).collect()
}

/// Render-ready, immutable view of a scene: world-space walls behind a spatial
/// index plus the surface attributes needed by the sensors.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub scene_id: String,
    pub index: Arc<SegmentIndex>,
    pub wall_height: f64,
    pub floor_color: Rgb,
    pub ceiling_color: Rgb,
    pub floor_id: u16,
    pub ceiling_id: u16,
}

impl SceneGeometry {
    pub fn from_graph(graph: &SceneGraph) -> Self {
        Self::from_segments(
            graph.scene_id().to_string(),
            graph.flatten_for_render(),
            graph.wall_height(),
            graph.floor_color(),
            graph.ceiling_color(),
        )
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self::from_graph(&build_scene_graph(scene))
    }

    pub fn from_segments(
        scene_id: String,
        segments: Vec<WallSegment>,
        wall_height: f64,
        floor_color: Rgb,
        ceiling_color: Rgb,
    ) -> Self {
        // Floor and ceiling take the two ids after the largest wall id so that
        // every visible surface carries a non-void label.
        let max_id = segments.iter().map(|s| s.semantic_id).max().unwrap_or(0).min(MAX_WALL_SEMANTIC_ID);
        SceneGeometry {
            scene_id,
            index: Arc::new(SegmentIndex::new(segments)),
            wall_height,
            floor_color,
            ceiling_color,
            floor_id: (max_id + 1) as u16,
            ceiling_id: (max_id + 2) as u16,
        }
    }

    pub fn segments(&self) -> &[WallSegment] {
        self.index.segments()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Scene {
        Scene::rectangle_room("square", Vec2::new(0.0, 0.0), Vec2::new(10.0, 10.0))
    }

    #[test]
    fn square_room_validates() {
        let s = square();
        assert_eq!(s.walls.len(), 4);
        s.validate().unwrap();
    }

    #[test]
    fn zero_length_wall_rejected() {
        let mut s = square();
        s.walls.push(WallSegment::new(Vec2::new(5.0, 5.0), Vec2::new(5.0, 5.0), 9));
        assert!(matches!(s.validate(), Err(SceneError::ZeroLengthWall { index: 4 })));
    }

    #[test]
    fn void_semantic_id_rejected() {
        let mut s = square();
        s.walls[2].semantic_id = 0;
        assert!(matches!(s.validate(), Err(SceneError::InvalidSemanticId { index: 2, .. })));
    }

    #[test]
    fn low_walls_rejected() {
        let mut s = square();
        s.wall_height = 1.5;
        assert!(matches!(s.validate(), Err(SceneError::WallTooLow(_))));
    }

    #[test]
    fn gap_in_boundary_rejected() {
        let mut s = square();
        // Replace the east wall by two pieces leaving a 1 m opening.
        s.walls[1] = WallSegment::new(Vec2::new(10.0, 0.0), Vec2::new(10.0, 4.5), 2);
        s.walls.push(WallSegment::new(Vec2::new(10.0, 5.5), Vec2::new(10.0, 10.0), 2));
        assert!(matches!(s.validate(), Err(SceneError::Unenclosed(_))));

        // Independent check: from the room center at least one of 16 rays escapes.
        let center = Vec2::new(5.0, 5.0);
        let escapes = (0..16).any(|k| {
            let dir = Vec2::from_angle(k as f64 * std::f64::consts::TAU / 16.0);
            crate::index::nearest_hit_brute_force(&s.walls, center, dir, f64::INFINITY).is_none()
        });
        assert!(escapes);
    }

    #[test]
    fn json_rejects_unknown_fields_and_versions() {
        let mut v: serde_json::Value = serde_json::from_str(&square().to_json()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(matches!(Scene::from_json(&v.to_string()), Err(SceneError::Parse(_))));
        let mut v: serde_json::Value = serde_json::from_str(&square().to_json()).unwrap();
        v["version"] = serde_json::json!(2);
        assert!(matches!(Scene::from_json(&v.to_string()), Err(SceneError::UnsupportedVersion(2))));
        assert!(matches!(Scene::from_json("{ not json"), Err(SceneError::Parse(_))));
    }

    #[test]
    fn hint_restricts_navigable_cells() {
        let mut s = square();
        let full = s.occupancy(0.1, 0.1).unwrap().navigable_count();
        s.navigable_hint = Some(vec![vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(5.0, 0.0),
            Vec2::new(5.0, 10.0),
            Vec2::new(0.0, 10.0),
        ]]);
        let half = s.occupancy(0.1, 0.1).unwrap().navigable_count();
        assert!(half < full && half > full / 3);
        s.validate().unwrap();
    }
}
