//! Wire messages. Every message is one JSON text frame tagged by `type`.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use navsim::geometry::Vec2;
use navsim::sensors::{depth_png, rgb_png, semantic_png, Observations};
use navsim::sim::Action;
use navsim::task::{Episode, EpisodeOutcome, StepInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Reset { episode_id: String },
    Act { action: String },
    ListEpisodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: String,
    pub scene_id: String,
    pub gdsp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub session: u64,
    pub dataset: String,
    pub split: String,
    pub episodes: usize,
    pub scenes: Vec<String>,
    pub actions: Vec<String>,
    pub sensors: Vec<String>,
    pub resolution: usize,
    pub max_steps: u32,
    pub success_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u32,
    pub x: f64,
    pub y: f64,
}

/// Everything needed to draw the top-down view, in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopDown {
    /// `[ax, ay, bx, by]` per wall.
    pub walls: Vec<[f64; 4]>,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub trajectory: Vec<TrajectoryPoint>,
    pub max_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub episode_id: String,
    pub step: u32,
    pub rgb: Option<String>,
    pub depth: Option<String>,
    pub semantic: Option<String>,
    pub gps: [f64; 2],
    pub compass: f64,
    /// Static goal in the episode frame, as given at reset.
    pub goal: [f64; 2],
    /// Goal relative to the agent: distance and signed bearing (left positive).
    pub goal_vector: [f64; 2],
    /// Geodesic distance to the goal.
    pub distance: f64,
    pub collided: bool,
    pub topdown: TopDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoneFrame {
    pub episode_id: String,
    pub success: bool,
    pub spl: f64,
    pub steps: u32,
    pub collisions: u32,
    pub path_taken: f64,
    pub shortest_path: f64,
    pub final_distance: f64,
}

impl From<&EpisodeOutcome> for DoneFrame {
    fn from(o: &EpisodeOutcome) -> Self {
        DoneFrame {
            episode_id: o.episode_id.clone(),
            success: o.success,
            spl: o.spl,
            steps: o.steps,
            collisions: o.collisions,
            path_taken: o.path_taken,
            shortest_path: o.shortest_path,
            final_distance: o.final_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    Episodes { episodes: Vec<EpisodeSummary> },
    Observation(Box<ObservationFrame>),
    Done(DoneFrame),
    Error { code: String, message: String },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.as_str().to_string(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Malformed,
    UnknownEpisode,
    UnknownAction,
    NoEpisode,
    EpisodeDone,
    OutOfOrder,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "malformed",
            ErrorCode::UnknownEpisode => "unknown_episode",
            ErrorCode::UnknownAction => "unknown_action",
            ErrorCode::NoEpisode => "no_episode",
            ErrorCode::EpisodeDone => "episode_done",
            ErrorCode::OutOfOrder => "out_of_order",
            ErrorCode::Internal => "internal",
        }
    }
}

/// Names accepted by `act`, in protocol order.
pub fn action_vocabulary() -> Vec<String> {
    [Action::MoveForward, Action::TurnLeft, Action::TurnRight, Action::Stop]
        .iter()
        .map(|a| a.as_str().to_string())
        .collect()
}

/// State of the top-down view that persists across a session's frames.
#[derive(Debug, Clone)]
pub struct TopDownContext {
    pub walls: Vec<[f64; 4]>,
    pub start: Vec2,
    pub goal: Vec2,
    pub trajectory: Vec<TrajectoryPoint>,
    pub max_steps: u32,
}

impl TopDownContext {
    pub fn new(walls: Vec<[f64; 4]>, episode: &Episode, max_steps: u32) -> Self {
        TopDownContext {
            walls,
            start: episode.start_position,
            goal: episode.goal_position,
            trajectory: Vec::new(),
            max_steps,
        }
    }

    pub fn push(&mut self, step: u32, position: Vec2) {
        self.trajectory.push(TrajectoryPoint { step, x: position.x, y: position.y });
    }

    fn payload(&self) -> TopDown {
        TopDown {
            walls: self.walls.clone(),
            start: [self.start.x, self.start.y],
            goal: [self.goal.x, self.goal.y],
            trajectory: self.trajectory.clone(),
            max_steps: self.max_steps,
        }
    }
}

/// Builds an observation frame. Images become base64 PNGs: 8-bit RGB,
/// 16-bit depth scaled so that max range maps to 65535, 16-bit semantic ids.
pub fn encode_observation(
    episode_id: &str,
    obs: &Observations,
    pointgoal: Vec2,
    info: &StepInfo,
    topdown: &TopDownContext,
) -> ObservationFrame {
    let gps = obs.gps.unwrap_or(Vec2::ZERO);
    let compass = obs.compass.unwrap_or(0.0);
    let to_goal = pointgoal - gps;
    let bearing = navsim::geometry::wrap_angle(to_goal.angle() - compass);
    ObservationFrame {
        episode_id: episode_id.to_string(),
        step: info.steps,
        rgb: obs.rgb.as_ref().map(|f| B64.encode(rgb_png(f))),
        depth: obs.depth.as_ref().map(|f| B64.encode(depth_png(f))),
        semantic: obs.semantic.as_ref().map(|f| B64.encode(semantic_png(f))),
        gps: [gps.x, gps.y],
        compass,
        goal: [pointgoal.x, pointgoal.y],
        goal_vector: [to_goal.length(), bearing],
        distance: info.distance,
        collided: info.collided,
        topdown: topdown.payload(),
    }
}

/// Decodes a base64 PNG from an observation frame into raw samples
/// (16-bit channels widened, 8-bit channels as is).
pub fn decode_png_field(b64: &str) -> Result<(u32, u32, Vec<u16>), String> {
    let bytes = B64.decode(b64).map_err(|e| e.to_string())?;
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let data = &buf[..info.buffer_size()];
    let samples = match info.bit_depth {
        png::BitDepth::Sixteen => data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        _ => data.iter().map(|&b| b as u16).collect(),
    };
    Ok((info.width, info.height, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"reset","episode_id":"a"}"#).unwrap();
        assert_eq!(m, ClientMessage::Reset { episode_id: "a".into() });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"act","action":"turn_left"}"#).unwrap();
        assert_eq!(m, ClientMessage::Act { action: "turn_left".into() });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"list_episodes"}"#).unwrap();
        assert_eq!(m, ClientMessage::ListEpisodes);
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"fly"}"#).is_err());
    }

    #[test]
    fn server_message_tags() {
        let e = ServerMessage::error(ErrorCode::OutOfOrder, "x").to_json();
        assert!(e.contains(r#""type":"error""#) && e.contains(r#""code":"out_of_order""#));
        let d = ServerMessage::Done(DoneFrame {
            episode_id: "e".into(),
            success: true,
            spl: 0.5,
            steps: 3,
            collisions: 0,
            path_taken: 1.0,
            shortest_path: 0.5,
            final_distance: 0.1,
        });
        let back: ServerMessage = serde_json::from_str(&d.to_json()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn vocabulary_round_trips() {
        for a in action_vocabulary() {
            assert_eq!(Action::parse(&a).unwrap().as_str(), a);
        }
    }
}
