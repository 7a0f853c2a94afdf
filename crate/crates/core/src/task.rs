//! PointGoal task: episodes, termination, success, SPL, reward and the
//! environment that binds a simulator to an episode.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::nav::{self, DistanceField, NavError, OccupancyGrid, SNAP_TOLERANCE};
use crate::rng::{substream, SimRng};
use crate::scene::{build_scene_graph, Scene, SceneGeometry, SceneGraph};
use crate::sensors::{self, EpisodeFrame, Observations, SensorConfig};
use crate::sim::{Action, AgentConfig, AgentState, SimError, Simulator};

pub const MAX_EPISODE_STEPS: u32 = 500;
pub const SUCCESS_RADIUS: f64 = 0.2;
pub const DEFAULT_FIELD_CACHE: usize = 64;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
    #[error("episode is finished; call reset")]
    EpisodeDone,
    #[error("no episode has been started; call reset")]
    NotReset,
    #[error("shortest path length must be positive, got {0}")]
    BadPathLength(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub scene_id: String,
    pub start_position: Vec2,
    pub start_heading: f64,
    pub goal_position: Vec2,
    pub gdsp: f64,
    pub euclidean: f64,
    pub ratio: f64,
}

impl Episode {
    pub fn frame(&self) -> EpisodeFrame {
        EpisodeFrame {
            origin: self.start_position,
            heading: self.start_heading,
        }
    }

    /// Goal expressed in the episode frame.
    pub fn pointgoal(&self) -> Vec2 {
        self.frame().to_episode(self.goal_position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub s: f64,
    pub lambda: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { s: 10.0, lambda: -0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stop,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub success: bool,
    pub shortest_path: f64,
    pub path_taken: f64,
    pub spl: f64,
    pub steps: u32,
    pub collisions: u32,
    pub terminated_by: Termination,
    /// Geodesic distance to the goal when the episode ended.
    pub final_distance: f64,
}

/// Success weighted by path length: `S * l / max(p, l)`.
pub fn spl(success: bool, shortest: f64, taken: f64) -> Result<f64, TaskError> {
    if !(shortest > 0.0) {
        return Err(TaskError::BadPathLength(shortest));
    }
    Ok(if success { shortest / taken.max(shortest) } else { 0.0 })
}

/// Closed boundary: a stop exactly at `radius` succeeds.
pub fn success_test(d_stop: f64, radius: f64) -> bool {
    d_stop <= radius
}

pub fn reward(d_prev: f64, d_cur: f64, reached: bool, params: &RewardParams) -> f64 {
    let shaped = d_prev - d_cur + params.lambda;
    if reached {
        params.s + shaped
    } else {
        shaped
    }
}

/// Per-step diagnostics returned with each observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Geodesic distance to the goal after the step.
    pub distance: f64,
    pub collided: bool,
    pub reward: f64,
    pub steps: u32,
}

/// Bounded, thread-safe cache of distance fields.
#[derive(Debug)]
pub struct FieldCache {
    capacity: usize,
    inner: Mutex<(HashMap<FieldKey, Arc<DistanceField>>, VecDeque<FieldKey>)>,
}

type FieldKey = (String, usize, u64, u64);

impl FieldCache {
    pub fn new(capacity: usize) -> Self {
        FieldCache {
            capacity: capacity.max(1),
            inner: Mutex::new((HashMap::new(), VecDeque::new())),
        }
    }

    /// Field for `goal` in `scene_id`, computing it on a miss. The lock is
    /// not held while computing.
    pub fn get_or_compute(
        &self,
        scene_id: &str,
        grid: &Arc<OccupancyGrid>,
        goal: Vec2,
    ) -> Result<Arc<DistanceField>, NavError> {
        let cell = grid.snap(goal, SNAP_TOLERANCE)?;
        let key = (scene_id.to_string(), cell, goal.x.to_bits(), goal.y.to_bits());
        if let Some(f) = self.inner.lock().unwrap().0.get(&key) {
            return Ok(Arc::clone(f));
        }
        let field = Arc::new(nav::distance_field(grid, goal)?);
        let mut guard = self.inner.lock().unwrap();
        let (map, order) = &mut *guard;
        if !map.contains_key(&key) {
            if map.len() >= self.capacity {
                if let Some(old) = order.pop_front() {
                    map.remove(&old);
                }
            }
            map.insert(key.clone(), Arc::clone(&field));
            order.push_back(key);
        }
        Ok(field)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable per-scene data shared by every environment.
#[derive(Debug)]
pub struct SceneEntry {
    pub scene: Scene,
    pub graph: SceneGraph,
    pub geometry: Arc<SceneGeometry>,
    pub grid: Arc<OccupancyGrid>,
}

/// Scenes keyed by id plus the shared distance-field cache.
#[derive(Debug)]
pub struct SceneLibrary {
    scenes: BTreeMap<String, Arc<SceneEntry>>,
    pub fields: FieldCache,
    pub resolution: f64,
    pub agent_radius: f64,
}

impl SceneLibrary {
    pub fn new(scenes: Vec<Scene>, resolution: f64, agent_radius: f64) -> Result<Self, NavError> {
        let mut map = BTreeMap::new();
        for scene in scenes {
            let graph = build_scene_graph(&scene);
            let geometry = Arc::new(SceneGeometry::from_graph(&graph));
            let grid = scene.apply_hint(nav::rasterize_scene(&geometry.index, resolution, agent_radius)?);
            map.insert(
                scene.id.clone(),
                Arc::new(SceneEntry {
                    scene,
                    graph,
                    geometry,
                    grid: Arc::new(grid),
                }),
            );
        }
        Ok(SceneLibrary {
            scenes: map,
            fields: FieldCache::new(DEFAULT_FIELD_CACHE),
            resolution,
            agent_radius,
        })
    }

    pub fn for_agent(scenes: Vec<Scene>, agent: &AgentConfig) -> Result<Self, NavError> {
        Self::new(scenes, nav::DEFAULT_RESOLUTION, agent.radius)
    }

    pub fn get(&self, id: &str) -> Result<&Arc<SceneEntry>, TaskError> {
        self.scenes.get(id).ok_or_else(|| TaskError::UnknownScene(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(|s| s.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = &Arc<SceneEntry>> {
        self.scenes.values()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn distance_field(&self, scene_id: &str, goal: Vec2) -> Result<Arc<DistanceField>, TaskError> {
        let entry = self.get(scene_id)?;
        Ok(self.fields.get_or_compute(scene_id, &entry.grid, goal)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub agent: AgentConfig,
    pub sensors: Vec<SensorConfig>,
    pub reward: RewardParams,
    pub max_steps: u32,
    pub success_radius: f64,
    /// Std of the Gaussian added to inverse depth; 0 disables noise.
    pub depth_noise_sigma: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            agent: AgentConfig::default(),
            sensors: vec![SensorConfig::gps_compass()],
            reward: RewardParams::default(),
            max_steps: MAX_EPISODE_STEPS,
            success_radius: SUCCESS_RADIUS,
            depth_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

struct Running {
    episode: Episode,
    field: Arc<DistanceField>,
    steps: u32,
    distance: f64,
    outcome: Option<EpisodeOutcome>,
}

/// One simulator bound to a sequence of episodes.
pub struct Env {
    library: Arc<SceneLibrary>,
    config: EnvConfig,
    sim: Option<Simulator>,
    running: Option<Running>,
    noise_rng: SimRng,
}

impl std::fmt::Debug for Env {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Env")
            .field("config", &self.config)
            .field("sim", &self.sim)
            .finish_non_exhaustive()
    }
}

impl Env {
    pub fn new(library: Arc<SceneLibrary>, config: EnvConfig) -> Self {
        let noise_rng = substream(config.seed, 0);
        Env {
            library,
            config,
            sim: None,
            running: None,
            noise_rng,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn library(&self) -> &Arc<SceneLibrary> {
        &self.library
    }

    pub fn simulator(&self) -> Option<&Simulator> {
        self.sim.as_ref()
    }

    pub fn state(&self) -> Option<&AgentState> {
        self.sim.as_ref().map(|s| s.state())
    }

    pub fn episode(&self) -> Option<&Episode> {
        self.running.as_ref().map(|r| &r.episode)
    }

    pub fn distance_field(&self) -> Option<&Arc<DistanceField>> {
        self.running.as_ref().map(|r| &r.field)
    }

    pub fn steps(&self) -> u32 {
        self.running.as_ref().map_or(0, |r| r.steps)
    }

    pub fn is_done(&self) -> bool {
        self.running.as_ref().is_some_and(|r| r.outcome.is_some())
    }

    pub fn outcome(&self) -> Option<&EpisodeOutcome> {
        self.running.as_ref().and_then(|r| r.outcome.as_ref())
    }

    /// Places the agent at the episode start and returns the first
    /// observation, which alone carries the static goal.
    pub fn reset(&mut self, episode: &Episode) -> Result<Observations, TaskError> {
        let entry = Arc::clone(self.library.get(&episode.scene_id)?);
        let field = self.library.distance_field(&episode.scene_id, episode.goal_position)?;

        let reuse = self
            .sim
            .as_ref()
            .is_some_and(|s| Arc::ptr_eq(s.geometry(), &entry.geometry));
        if !reuse {
            self.sim = Some(Simulator::with_geometry(
                entry.graph.clone(),
                Arc::clone(&entry.geometry),
                self.config.agent,
                self.config.sensors.clone(),
            )?);
        }
        let sim = self.sim.as_mut().unwrap();

        let start = match sim.set_agent_state(episode.start_position, episode.start_heading) {
            Ok(()) => episode.start_position,
            Err(SimError::NotNavigable { .. }) => {
                let cell = entry.grid.snap(episode.start_position, SNAP_TOLERANCE)?;
                let p = entry.grid.cell_center(cell);
                sim.set_agent_state(p, episode.start_heading)?;
                p
            }
            Err(e) => return Err(e.into()),
        };
        sim.set_episode_frame(episode.frame());
        let distance = field.geodesic_distance(start)?;
        if !distance.is_finite() {
            return Err(NavError::Unreachable { x: start.x, y: start.y }.into());
        }

        self.noise_rng = substream(self.config.seed, stable_hash(&episode.episode_id));
        self.running = Some(Running {
            episode: episode.clone(),
            field,
            steps: 0,
            distance,
            outcome: None,
        });
        let mut obs = self.observe();
        obs.pointgoal = Some(episode.pointgoal());
        Ok(obs)
    }

    fn observe(&mut self) -> Observations {
        let mut obs = self.sim.as_ref().expect("simulator exists after reset").observe();
        if self.config.depth_noise_sigma > 0.0 {
            if let Some(depth) = obs.depth.as_mut() {
                sensors::apply_inverse_depth_noise(depth, self.config.depth_noise_sigma, &mut self.noise_rng);
            }
        }
        obs
    }

    /// Applies `action` and reports whether the episode is over.
    pub fn step(&mut self, action: Action) -> Result<(Observations, bool, StepInfo), TaskError> {
        let running = self.running.as_mut().ok_or(TaskError::NotReset)?;
        if running.outcome.is_some() {
            return Err(TaskError::EpisodeDone);
        }
        let sim = self.sim.as_mut().expect("simulator exists after reset");
        let result = sim.act(action)?;
        running.steps += 1;

        let d_prev = running.distance;
        let d_cur = running.field.geodesic_distance(result.new_state.position)?;
        running.distance = d_cur;

        let termination = if action == Action::Stop {
            Some(Termination::Stop)
        } else if running.steps >= self.config.max_steps {
            Some(Termination::StepLimit)
        } else {
            None
        };
        let success = termination == Some(Termination::Stop) && success_test(d_cur, self.config.success_radius);
        let info = StepInfo {
            distance: d_cur,
            collided: result.collided,
            reward: reward(d_prev, d_cur, success, &self.config.reward),
            steps: running.steps,
        };
        if let Some(terminated_by) = termination {
            let state = result.new_state;
            let l = running.episode.gdsp;
            running.outcome = Some(EpisodeOutcome {
                episode_id: running.episode.episode_id.clone(),
                success,
                shortest_path: l,
                path_taken: state.cumulative_path_length,
                spl: spl(success, l, state.cumulative_path_length)?,
                steps: running.steps,
                collisions: state.collision_count,
                terminated_by,
                final_distance: d_cur,
            });
        }
        let done = termination.is_some();
        let obs = if self.sim.as_ref().unwrap().sensors().configs().is_empty() {
            Observations::default()
        } else {
            self.observe()
        };
        Ok((obs, done, info))
    }

    /// Action the geodesic-gradient oracle would take now.
    pub fn oracle_action(&self) -> Result<Action, TaskError> {
        let running = self.running.as_ref().ok_or(TaskError::NotReset)?;
        let sim = self.sim.as_ref().unwrap();
        Ok(nav::greedy_gradient_action(
            &running.field,
            &sim.geometry().index,
            sim.agent_config(),
            sim.state(),
            self.config.success_radius,
        )?)
    }
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Replays `actions` on `episode` from a fresh reset.
pub fn replay(env: &mut Env, episode: &Episode, actions: &[Action]) -> Result<Option<EpisodeOutcome>, TaskError> {
    env.reset(episode)?;
    for &a in actions {
        if env.step(a)?.1 {
            break;
        }
    }
    Ok(env.outcome().cloned())
}
