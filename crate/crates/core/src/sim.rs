//! Continuous-state agent simulation: kinematics, sliding collisions and the
//! step loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Transform2, Vec2};
use crate::index::SegmentIndex;
use crate::scene::{NodeId, Payload, SceneGeometry, SceneGraph};
use crate::sensors::{self, CameraPose, EpisodeFrame, Observations, SensorConfig, SensorError, SensorSuite};

/// Back-off from the contact point after a disc cast.
pub const CONTACT_EPSILON: f64 = 1e-4;
/// Casts per forward action: the initial one plus one tangential slide.
const MAX_CASTS: usize = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sensor height {sensor} m exceeds the wall height {wall} m")]
    SensorAboveWalls { sensor: f64, wall: f64 },
    #[error("agent configuration values must be non-negative and finite ({0})")]
    BadAgentConfig(&'static str),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("position ({x:.3}, {y:.3}) is within {clearance:.3} m of a wall (agent radius {radius} m)")]
    NotNavigable { x: f64, y: f64, clearance: f64, radius: f64 },
    #[error("simulator must be placed with set_agent_state before stepping")]
    NotReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub radius: f64,
    pub height: f64,
    pub forward_step: f64,
    /// Degrees.
    pub turn_angle: f64,
    pub sensor_height: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            radius: 0.1,
            height: 1.5,
            forward_step: 0.25,
            turn_angle: 10.0,
            sensor_height: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub cumulative_path_length: f64,
    pub collision_count: u32,
}

impl AgentState {
    pub fn at(position: Vec2, heading: f64) -> Self {
        AgentState {
            position,
            heading,
            cumulative_path_length: 0.0,
            collision_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::MoveForward => "move_forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::Stop => "stop",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub new_state: AgentState,
    pub collided: bool,
    /// Length of the path actually travelled (m).
    pub displacement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnDirection {
    Left,
    Right,
}

pub fn apply_turn(state: &AgentState, direction: TurnDirection, turn_angle_deg: f64) -> AgentState {
    let delta = turn_angle_deg.to_radians();
    let heading = match direction {
        TurnDirection::Left => state.heading + delta,
        TurnDirection::Right => state.heading - delta,
    };
    AgentState {
        heading: wrap_angle(heading),
        ..*state
    }
}

/// Moves the agent disc `forward_step` along its heading, sliding along the
/// first wall it touches.
///
/// The disc is cast to first contact and stopped `CONTACT_EPSILON` short of
/// it; the unused part of the motion is projected onto the contacted wall's
/// tangent and cast once more.
pub fn apply_forward(state: &AgentState, walls: &SegmentIndex, cfg: &AgentConfig) -> StepResult {
    apply_forward_by(state, walls, cfg, cfg.forward_step)
}

fn apply_forward_by(state: &AgentState, walls: &SegmentIndex, cfg: &AgentConfig, distance: f64) -> StepResult {
    let mut pos = state.position;
    let mut remaining = Vec2::from_angle(state.heading) * distance;
    let mut moved = 0.0;
    let mut collided = false;

    for cast in 0..MAX_CASTS {
        let len = remaining.length();
        if len == 0.0 {
            break;
        }
        match walls.disc_cast(pos, cfg.radius, remaining) {
            None => {
                pos += remaining;
                moved += len;
                break;
            }
            Some(contact) => {
                if cast == 0 {
                    collided = true;
                }
                let advance = (contact.t * len - CONTACT_EPSILON).max(0.0);
                let dir = remaining * (1.0 / len);
                pos += dir * advance;
                moved += advance;
                let rest = remaining * (1.0 - contact.t);
                let tangent = contact.normal.perp();
                remaining = tangent * rest.dot(tangent);
            }
        }
    }

    StepResult {
        new_state: AgentState {
            position: pos,
            heading: state.heading,
            cumulative_path_length: state.cumulative_path_length + moved,
            collision_count: state.collision_count + collided as u32,
        },
        collided,
        displacement: moved,
    }
}

/// Perturbs actuations. Off by default; the simulator is noise-free unless a
/// model is installed.
pub trait ActuationNoise: Send {
    /// Returns the executed forward distance or turn angle (degrees) for an
    /// intended one.
    fn perturb(&mut self, action: Action, intended: f64) -> f64;
}

/// One agent with its sensors living in a (privately owned) scene graph.
pub struct Simulator {
    graph: SceneGraph,
    geometry: Arc<SceneGeometry>,
    agent: AgentConfig,
    sensors: SensorSuite,
    agent_node: NodeId,
    state: AgentState,
    placed: bool,
    frame: EpisodeFrame,
    noise: Option<Box<dyn ActuationNoise>>,
    warnings: Vec<String>,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("scene", &self.geometry.scene_id)
            .field("agent", &self.agent)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

pub fn create_simulator(graph: SceneGraph, agent: AgentConfig, sensors: Vec<SensorConfig>) -> Result<Simulator, SimError> {
    let geometry = Arc::new(SceneGeometry::from_graph(&graph));
    Simulator::with_geometry(graph, geometry, agent, sensors)
}

impl Simulator {
    /// Builds a simulator over pre-flattened geometry shared with other
    /// simulators of the same scene.
    pub fn with_geometry(
        mut graph: SceneGraph,
        geometry: Arc<SceneGeometry>,
        agent: AgentConfig,
        sensors: Vec<SensorConfig>,
    ) -> Result<Simulator, SimError> {
        let mut warnings = Vec::new();
        for (name, v) in [
            ("radius", agent.radius),
            ("height", agent.height),
            ("forward_step", agent.forward_step),
            ("turn_angle", agent.turn_angle),
            ("sensor_height", agent.sensor_height),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::BadAgentConfig(name));
            }
        }
        if agent.radius == 0.0 {
            warnings.push("agent radius is 0: simulating a point agent".to_string());
        }
        if agent.sensor_height > geometry.wall_height {
            return Err(SimError::SensorAboveWalls {
                sensor: agent.sensor_height,
                wall: geometry.wall_height,
            });
        }
        let suite = SensorSuite::new(sensors)?;

        let root = graph.root();
        let agent_node = graph
            .add_child(root, Transform2::IDENTITY, Payload::Agent)
            .expect("root exists");
        for cfg in suite.configs() {
            graph
                .add_child(agent_node, Transform2::IDENTITY, Payload::Sensor { kind: cfg.kind })
                .expect("agent node exists");
        }

        Ok(Simulator {
            graph,
            geometry,
            agent,
            sensors: suite,
            agent_node,
            state: AgentState::at(Vec2::ZERO, 0.0),
            placed: false,
            frame: EpisodeFrame::default(),
            noise: None,
            warnings,
        })
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn agent_config(&self) -> &AgentConfig {
        &self.agent
    }

    pub fn sensors(&self) -> &SensorSuite {
        &self.sensors
    }

    pub fn geometry(&self) -> &Arc<SceneGeometry> {
        &self.geometry
    }

    pub fn scene_graph(&self) -> &SceneGraph {
        &self.graph
    }

    pub fn agent_node(&self) -> NodeId {
        self.agent_node
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn episode_frame(&self) -> EpisodeFrame {
        self.frame
    }

    pub fn set_episode_frame(&mut self, frame: EpisodeFrame) {
        self.frame = frame;
    }

    pub fn set_actuation_noise(&mut self, noise: Option<Box<dyn ActuationNoise>>) {
        self.noise = noise;
    }

    /// Applies an edit to the scene graph and rebuilds this simulator's
    /// render geometry. Other simulators sharing the old geometry are
    /// unaffected.
    pub fn edit_scene<R>(&mut self, edit: impl FnOnce(&mut SceneGraph) -> R) -> R {
        let r = edit(&mut self.graph);
        self.geometry = Arc::new(SceneGeometry::from_graph(&self.graph));
        r
    }

    /// Places the agent, zeroing its path length and collision count.
    pub fn set_agent_state(&mut self, position: Vec2, heading: f64) -> Result<(), SimError> {
        let r = self.agent.radius;
        if let Some(d) = self.geometry.index.nearest_distance_within(position, r) {
            if d < r {
                return Err(SimError::NotNavigable {
                    x: position.x,
                    y: position.y,
                    clearance: d,
                    radius: r,
                });
            }
        }
        self.state = AgentState::at(position, wrap_angle(heading));
        self.placed = true;
        self.sync_agent_node();
        Ok(())
    }

    fn sync_agent_node(&mut self) {
        let t = Transform2::new(self.state.position, self.state.heading);
        self.graph
            .set_local_transform(self.agent_node, t)
            .expect("agent node exists");
    }

    /// Applies the action's kinematics without rendering.
    pub fn act(&mut self, action: Action) -> Result<StepResult, SimError> {
        if !self.placed {
            return Err(SimError::NotReset);
        }
        let result = match action {
            Action::Stop => StepResult {
                new_state: self.state,
                collided: false,
                displacement: 0.0,
            },
            Action::TurnLeft | Action::TurnRight => {
                let angle = match &mut self.noise {
                    Some(n) => n.perturb(action, self.agent.turn_angle),
                    None => self.agent.turn_angle,
                };
                let dir = if action == Action::TurnLeft {
                    TurnDirection::Left
                } else {
                    TurnDirection::Right
                };
                StepResult {
                    new_state: apply_turn(&self.state, dir, angle),
                    collided: false,
                    displacement: 0.0,
                }
            }
            Action::MoveForward => {
                let distance = match &mut self.noise {
                    Some(n) => n.perturb(action, self.agent.forward_step),
                    None => self.agent.forward_step,
                };
                apply_forward_by(&self.state, &self.geometry.index, &self.agent, distance)
            }
        };
        self.state = result.new_state;
        self.sync_agent_node();
        Ok(result)
    }

    /// Applies the action and renders every configured sensor from the new pose.
    pub fn step(&mut self, action: Action) -> Result<(StepResult, Observations), SimError> {
        let result = self.act(action)?;
        Ok((result, self.observe()))
    }

    /// Renders the sensors from the current pose.
    pub fn observe(&self) -> Observations {
        let world = self
            .graph
            .world_transform(self.agent_node)
            .expect("agent node exists");
        let pose = CameraPose {
            position: world.translation,
            heading: world.rotation,
            height: self.agent.sensor_height,
        };
        let frames = sensors::render(&self.geometry, &pose, &self.sensors);
        let (gps, compass) = if self.sensors.has_gps_compass() {
            let (g, c) = sensors::gps_compass(&self.state, &self.frame);
            (Some(g), Some(c))
        } else {
            (None, None)
        };
        Observations {
            rgb: frames.rgb,
            depth: frames.depth,
            semantic: frames.semantic,
            gps,
            compass,
            pointgoal: None,
        }
    }
}
