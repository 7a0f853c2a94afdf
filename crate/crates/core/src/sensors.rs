//! Sensor suite: RGB, depth and semantic-instance images from one raycast
//! traversal per frame, the idealized GPS+Compass, and the inverse-depth
//! noise model.
//!
//! The camera is a pinhole at `sensor_height` with zero pitch. Because walls
//! are vertical extrusions, every pixel of an image column shares the same
//! horizontal ray; one wall query per column therefore determines depth,
//! color and instance id for all of that column's pixels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, RayHit, Vec2};
use crate::scene::{Rgb, SceneGeometry};
use crate::sim::AgentState;

pub const DEFAULT_RESOLUTION: usize = 256;
pub const DEFAULT_HFOV_DEG: f64 = 90.0;
pub const DEFAULT_MAX_RANGE: f64 = 10.0;
/// Lower clamp applied to noisy depth.
pub const MIN_NOISY_DEPTH: f64 = 0.05;
const AMBIENT: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("sensor resolution must be at least 1x1, got {0}x{1}")]
    BadResolution(usize, usize),
    #[error("horizontal field of view must lie in (0, 180) degrees, got {0}")]
    BadFov(f64),
    #[error("max range must be positive, got {0}")]
    BadRange(f64),
    #[error("visual sensors must share resolution, field of view and range")]
    MismatchedIntrinsics,
    #[error("sensor kind {0:?} configured twice")]
    Duplicate(SensorKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Rgb,
    Depth,
    Semantic,
    GpsCompass,
}

impl SensorKind {
    pub fn is_visual(self) -> bool {
        !matches!(self, SensorKind::GpsCompass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub kind: SensorKind,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub hfov: f64,
    pub max_range: f64,
}

impl SensorConfig {
    pub fn new(kind: SensorKind) -> Self {
        SensorConfig {
            kind,
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            hfov: DEFAULT_HFOV_DEG,
            max_range: DEFAULT_MAX_RANGE,
        }
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn rgb(width: usize, height: usize) -> Self {
        Self::new(SensorKind::Rgb).with_resolution(width, height)
    }

    pub fn depth(width: usize, height: usize) -> Self {
        Self::new(SensorKind::Depth).with_resolution(width, height)
    }

    pub fn semantic(width: usize, height: usize) -> Self {
        Self::new(SensorKind::Semantic).with_resolution(width, height)
    }

    pub fn gps_compass() -> Self {
        Self::new(SensorKind::GpsCompass)
    }

    fn validate(&self) -> Result<(), SensorError> {
        if self.width == 0 || self.height == 0 {
            return Err(SensorError::BadResolution(self.width, self.height));
        }
        if !(self.hfov > 0.0 && self.hfov < 180.0) {
            return Err(SensorError::BadFov(self.hfov));
        }
        if !(self.max_range > 0.0) {
            return Err(SensorError::BadRange(self.max_range));
        }
        Ok(())
    }
}

/// Shared pinhole intrinsics of the visual sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub hfov: f64,
    pub max_range: f64,
}

impl Intrinsics {
    /// Focal length in pixels; equal horizontally and vertically.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov.to_radians() / 2.0).tan()
    }

    /// Normalized horizontal image coordinate of column `j` (right positive).
    pub fn column_offset(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.width as f64 / 2.0) / self.focal()
    }

    /// Normalized vertical image coordinate of row `i` (up positive).
    pub fn row_offset(&self, i: usize) -> f64 {
        (self.height as f64 / 2.0 - i as f64 - 0.5) / self.focal()
    }
}

/// Validated set of sensors attached to one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSuite {
    configs: Vec<SensorConfig>,
    intrinsics: Option<Intrinsics>,
}

impl SensorSuite {
    pub fn new(configs: Vec<SensorConfig>) -> Result<Self, SensorError> {
        let mut intrinsics: Option<Intrinsics> = None;
        for (i, c) in configs.iter().enumerate() {
            c.validate()?;
            if configs[..i].iter().any(|o| o.kind == c.kind) {
                return Err(SensorError::Duplicate(c.kind));
            }
            if c.kind.is_visual() {
                let this = Intrinsics {
                    width: c.width,
                    height: c.height,
                    hfov: c.hfov,
                    max_range: c.max_range,
                };
                match intrinsics {
                    None => intrinsics = Some(this),
                    Some(prev) if prev != this => return Err(SensorError::MismatchedIntrinsics),
                    Some(_) => {}
                }
            }
        }
        Ok(SensorSuite { configs, intrinsics })
    }

    pub fn configs(&self) -> &[SensorConfig] {
        &self.configs
    }

    pub fn intrinsics(&self) -> Option<Intrinsics> {
        self.intrinsics
    }

    pub fn has(&self, kind: SensorKind) -> bool {
        self.configs.iter().any(|c| c.kind == kind)
    }

    pub fn has_gps_compass(&self) -> bool {
        self.has(SensorKind::GpsCompass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub max_range: f32,
    /// Row-major meters, row 0 at the top.
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major linear color in [0, 1].
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        self.data[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticImage {
    pub width: usize,
    pub height: usize,
    /// Row-major instance ids; 0 = void.
    pub data: Vec<u16>,
}

impl SemanticImage {
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorFrames {
    pub rgb: Option<RgbImage>,
    pub depth: Option<DepthImage>,
    pub semantic: Option<SemanticImage>,
}

/// Everything an agent perceives after an action.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub rgb: Option<RgbImage>,
    pub depth: Option<DepthImage>,
    pub semantic: Option<SemanticImage>,
    /// Position in the episode frame (m).
    pub gps: Option<Vec2>,
    /// Heading relative to the episode start heading (rad, (-π, π]).
    pub compass: Option<f64>,
    /// Static goal in the episode frame, present only on the reset observation.
    pub pointgoal: Option<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec2,
    pub heading: f64,
    pub height: f64,
}

/// Origin at the episode start position, x-axis along the start heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeFrame {
    pub origin: Vec2,
    pub heading: f64,
}

impl EpisodeFrame {
    pub fn to_episode(&self, world: Vec2) -> Vec2 {
        (world - self.origin).rotated(-self.heading)
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        local.rotated(self.heading) + self.origin
    }
}

pub fn gps_compass(state: &AgentState, frame: &EpisodeFrame) -> (Vec2, f64) {
    (frame.to_episode(state.position), wrap_angle(state.heading - frame.heading))
}

/// What a single pixel sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub depth: f32,
    pub rgb: [f32; 3],
    pub semantic: u16,
}

/// Horizontal ray of image column `j`, scaled so that its forward component
/// is 1 (ray parameter = z-depth).
pub fn column_direction(pose: &CameraPose, intr: &Intrinsics, j: usize) -> Vec2 {
    let forward = Vec2::from_angle(pose.heading);
    let right = Vec2::new(forward.y, -forward.x);
    forward + right * intr.column_offset(j)
}

/// Resolves one pixel from its column's nearest wall hit.
///
/// Floor and ceiling exist only in front of the column's wall hit; a column
/// that escapes the scene sees void everywhere. Anything at or beyond
/// `max_range` is void.
pub fn shade_pixel(
    geometry: &SceneGeometry,
    pose: &CameraPose,
    intr: &Intrinsics,
    column_dir: Vec2,
    wall: Option<RayHit>,
    row: usize,
) -> PixelSample {
    let void = PixelSample {
        depth: intr.max_range as f32,
        rgb: [0.0; 3],
        semantic: 0,
    };
    let Some(wall) = wall else {
        return void;
    };
    let v = intr.row_offset(row);
    let plane = if v < 0.0 {
        Some((pose.height / -v, geometry.floor_color, geometry.floor_id))
    } else if v > 0.0 {
        Some(((geometry.wall_height - pose.height) / v, geometry.ceiling_color, geometry.ceiling_id))
    } else {
        None
    };
    let ray_len = (column_dir.length_squared() + v * v).sqrt();

    let (depth, albedo, id, cos) = match plane {
        Some((s, color, id)) if s < wall.t => (s, color, id, v.abs() / ray_len),
        _ => {
            let seg = &geometry.segments()[wall.segment];
            let normal = (seg.b - seg.a).perp().normalized();
            (wall.t, seg.albedo, seg.semantic_id as u16, column_dir.dot(normal).abs() / ray_len)
        }
    };
    if !(depth < intr.max_range) {
        return void;
    }
    PixelSample {
        depth: depth as f32,
        rgb: shade(albedo, cos),
        semantic: id,
    }
}

fn shade(albedo: Rgb, cos: f64) -> [f32; 3] {
    let k = AMBIENT + (1.0 - AMBIENT) * cos.max(0.0);
    [(albedo[0] * k) as f32, (albedo[1] * k) as f32, (albedo[2] * k) as f32]
}

/// Renders all configured visual channels in one traversal.
pub fn render(geometry: &SceneGeometry, pose: &CameraPose, suite: &SensorSuite) -> SensorFrames {
    let Some(intr) = suite.intrinsics() else {
        return SensorFrames::default();
    };
    let (w, h) = (intr.width, intr.height);
    let want_rgb = suite.has(SensorKind::Rgb);
    let want_depth = suite.has(SensorKind::Depth);
    let want_sem = suite.has(SensorKind::Semantic);
    let mut rgb = want_rgb.then(|| vec![[0f32; 3]; w * h]);
    let mut depth = want_depth.then(|| vec![0f32; w * h]);
    let mut sem = want_sem.then(|| vec![0u16; w * h]);

    struct Column {
        dir_len2: f64,
        wall: Option<(f64, f64, Rgb, u16)>,
    }
    let origin = pose.position;
    let columns: Vec<Column> = (0..w)
        .map(|j| {
            let dir = column_direction(pose, &intr, j);
            let wall = geometry.index.nearest_hit(origin, dir, f64::INFINITY).map(|hit| {
                let seg = &geometry.segments()[hit.segment];
                let normal = (seg.b - seg.a).perp().normalized();
                (hit.t, dir.dot(normal).abs(), seg.albedo, seg.semantic_id as u16)
            });
            Column { dir_len2: dir.length_squared(), wall }
        })
        .collect();
    let max_range = intr.max_range;
    for i in 0..h {
        let v = intr.row_offset(i);
        let plane = if v < 0.0 {
            Some((pose.height / -v, geometry.floor_color, geometry.floor_id))
        } else if v > 0.0 {
            Some(((geometry.wall_height - pose.height) / v, geometry.ceiling_color, geometry.ceiling_id))
        } else {
            None
        };
        for (j, col) in columns.iter().enumerate() {
            let k = i * w + j;
            let Some((t, wall_dot, wall_albedo, wall_id)) = col.wall else {
                if let Some(d) = depth.as_mut() {
                    d[k] = max_range as f32;
                }
                continue;
            };
            let (z, on_plane) = match plane {
                Some((s, _, _)) if s < t => (s, true),
                _ => (t, false),
            };
            if !(z < max_range) {
                if let Some(d) = depth.as_mut() {
                    d[k] = max_range as f32;
                }
                continue;
            }
            if let Some(d) = depth.as_mut() {
                d[k] = z as f32;
            }
            let (albedo, id) = match (on_plane, plane) {
                (true, Some((_, color, id))) => (color, id),
                _ => (wall_albedo, wall_id),
            };
            if let Some(c) = rgb.as_mut() {
                let ray_len = (col.dir_len2 + v * v).sqrt();
                let cos = if on_plane { v.abs() / ray_len } else { wall_dot / ray_len };
                c[k] = shade(albedo, cos);
            }
            if let Some(s) = sem.as_mut() {
                s[k] = id;
            }
        }
    }

    SensorFrames {
        rgb: rgb.map(|data| RgbImage { width: w, height: h, data }),
        depth: depth.map(|data| DepthImage {
            width: w,
            height: h,
            max_range: intr.max_range as f32,
            data,
        }),
        semantic: sem.map(|data| SemanticImage { width: w, height: h, data }),
    }
}

/// Noisy depth `1 / (1/d + eps)` before clamping. May be negative or
/// infinite when the perturbed inverse depth is non-positive.
pub fn perturb_inverse_depth(depth: f64, eps: f64) -> f64 {
    1.0 / (1.0 / depth + eps)
}

/// Adds iid Gaussian noise (mean 0, std `sigma`) to every pixel's inverse
/// depth. Void pixels (at max range) pass through; results are clamped to
/// `[MIN_NOISY_DEPTH, max_range]`, with non-positive inverse depths mapping
/// to `max_range`.
pub fn apply_inverse_depth_noise<R: Rng + ?Sized>(frame: &mut DepthImage, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let max_range = frame.max_range as f64;
    for d in frame.data.iter_mut() {
        let depth = *d as f64;
        if depth >= max_range || depth <= 0.0 {
            continue;
        }
        let noisy = perturb_inverse_depth(depth, normal.sample(rng));
        *d = if noisy > 0.0 {
            noisy.clamp(MIN_NOISY_DEPTH, max_range) as f32
        } else {
            max_range as f32
        };
    }
}

/// 16-bit grayscale PNG scaling `[0, max_range]` to `[0, 65535]`.
pub fn depth_png(frame: &DepthImage) -> Vec<u8> {
    let scale = 65535.0 / frame.max_range as f64;
    let mut bytes = Vec::with_capacity(frame.data.len() * 2);
    for &d in &frame.data {
        let v = (d as f64 * scale).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    encode_png(frame.width, frame.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// 8-bit RGB PNG.
pub fn rgb_png(frame: &RgbImage) -> Vec<u8> {
    let bytes: Vec<u8> = frame
        .data
        .iter()
        .flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    encode_png(frame.width, frame.height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// 16-bit grayscale PNG of instance ids.
pub fn semantic_png(frame: &SemanticImage) -> Vec<u8> {
    let bytes: Vec<u8> = frame.data.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode_png(frame.width, frame.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}
