use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use navsim::episodes::EpisodeDataset;
use navsim::sensors::{SensorConfig, SensorKind, DEFAULT_RESOLUTION};
use navsim::sim::Action;
use navsim::task::{Env, EnvConfig, Episode, EpisodeOutcome, SceneLibrary, StepInfo};

use crate::protocol::{
    action_vocabulary, encode_observation, ClientMessage, DoneFrame, EpisodeSummary, ErrorCode, Hello, ServerMessage,
    TopDownContext,
};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("cannot open trajectory log {path}: {source}")]
    Log { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] navsim::episodes::DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub session: u64,
    pub episode_id: String,
    pub scene_id: String,
    pub actions: Vec<Action>,
    /// `None` when the session reset or disconnected mid-episode.
    pub outcome: Option<EpisodeOutcome>,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub dataset_name: String,
    pub resolution: usize,
    pub env: EnvConfig,
    pub log_path: Option<PathBuf>,
    /// Extra latency added to every step (test hook for flow control).
    pub step_delay: Option<Duration>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            dataset_name: "dataset".into(),
            resolution: DEFAULT_RESOLUTION,
            env: EnvConfig::default(),
            log_path: None,
            step_delay: None,
        }
    }
}

/// Shared, read-only service state plus the append-only log.
pub struct TeleopState {
    library: Arc<SceneLibrary>,
    dataset: Arc<EpisodeDataset>,
    config: ServerConfig,
    env_config: EnvConfig,
    log: Option<Mutex<File>>,
    next_session: AtomicU64,
}

impl TeleopState {
    pub fn new(library: Arc<SceneLibrary>, dataset: Arc<EpisodeDataset>, config: ServerConfig) -> Result<Self, ServeError> {
        dataset.check_scenes(&library)?;
        let log = match &config.log_path {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ServeError::Log { path: path.clone(), source })?,
            )),
            None => None,
        };
        let r = config.resolution;
        let env_config = EnvConfig {
            sensors: vec![
                SensorConfig::rgb(r, r),
                SensorConfig::depth(r, r),
                SensorConfig::semantic(r, r),
                SensorConfig::gps_compass(),
            ],
            ..config.env.clone()
        };
        Ok(TeleopState {
            library,
            dataset,
            config,
            env_config,
            log,
            next_session: AtomicU64::new(1),
        })
    }

    fn hello(&self, session: u64) -> Hello {
        Hello {
            session,
            dataset: self.config.dataset_name.clone(),
            split: self.dataset.header.split.to_string(),
            episodes: self.dataset.episodes.len(),
            scenes: self.library.ids().map(str::to_string).collect(),
            actions: action_vocabulary(),
            sensors: self
                .env_config
                .sensors
                .iter()
                .map(|s| match s.kind {
                    SensorKind::Rgb => "rgb",
                    SensorKind::Depth => "depth",
                    SensorKind::Semantic => "semantic",
                    SensorKind::GpsCompass => "gps_compass",
                })
                .map(str::to_string)
                .collect(),
            resolution: self.config.resolution,
            max_steps: self.env_config.max_steps,
            success_radius: self.env_config.success_radius,
        }
    }

    fn find_episode(&self, id: &str) -> Option<&Episode> {
        self.dataset.episodes.iter().find(|e| e.episode_id == id)
    }

    fn append_log(&self, record: &TrajectoryRecord) {
        let Some(log) = &self.log else {
            return;
        };
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let mut f = log.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
            log::error!("trajectory log write failed: {e}");
        }
    }
}

struct Active {
    episode: Episode,
    topdown: TopDownContext,
    actions: Vec<Action>,
    done: bool,
}

struct Session {
    id: u64,
    env: Env,
    active: Option<Active>,
}

impl Session {
    /// Logs the current episode if it was started but never finished.
    fn abandon(&mut self, state: &TeleopState) {
        if let Some(a) = self.active.take() {
            if !a.done {
                state.append_log(&TrajectoryRecord {
                    session: self.id,
                    episode_id: a.episode.episode_id,
                    scene_id: a.episode.scene_id,
                    actions: a.actions,
                    outcome: None,
                });
            }
        }
    }

    fn reset(&mut self, state: &TeleopState, episode: Episode) -> Vec<ServerMessage> {
        self.abandon(state);
        let obs = match self.env.reset(&episode) {
            Ok(o) => o,
            Err(e) => return vec![ServerMessage::error(ErrorCode::Internal, e.to_string())],
        };
        let entry = state.library.get(&episode.scene_id).expect("dataset scenes were checked");
        let walls = entry.geometry.segments().iter().map(|s| [s.a.x, s.a.y, s.b.x, s.b.y]).collect();
        let mut topdown = TopDownContext::new(walls, &episode, self.env.config().max_steps);
        let position = self.env.state().expect("reset places the agent").position;
        topdown.push(0, position);
        let pointgoal = obs.pointgoal.expect("reset observation carries the goal");
        let info = StepInfo {
            distance: self.env.distance_field().expect("reset builds a field").geodesic_distance(position).unwrap_or(f64::NAN),
            collided: false,
            reward: 0.0,
            steps: 0,
        };
        let frame = encode_observation(&episode.episode_id, &obs, pointgoal, &info, &topdown);
        self.active = Some(Active {
            episode,
            topdown,
            actions: Vec::new(),
            done: false,
        });
        vec![ServerMessage::Observation(Box::new(frame))]
    }

    fn act(&mut self, state: &TeleopState, action: Action) -> Vec<ServerMessage> {
        let Some(active) = self.active.as_mut() else {
            return vec![ServerMessage::error(ErrorCode::NoEpisode, "reset an episode first")];
        };
        if active.done {
            return vec![ServerMessage::error(ErrorCode::EpisodeDone, "episode is over; reset to continue")];
        }
        let (obs, done, info) = match self.env.step(action) {
            Ok(r) => r,
            Err(e) => return vec![ServerMessage::error(ErrorCode::Internal, e.to_string())],
        };
        active.actions.push(action);
        let position = self.env.state().expect("episode is running").position;
        active.topdown.push(info.steps, position);
        let pointgoal = active.episode.pointgoal();
        let frame = encode_observation(&active.episode.episode_id, &obs, pointgoal, &info, &active.topdown);
        let mut out = vec![ServerMessage::Observation(Box::new(frame))];
        if done {
            active.done = true;
            let outcome = self.env.outcome().expect("finished episode has an outcome").clone();
            state.append_log(&TrajectoryRecord {
                session: self.id,
                episode_id: active.episode.episode_id.clone(),
                scene_id: active.episode.scene_id.clone(),
                actions: active.actions.clone(),
                outcome: Some(outcome.clone()),
            });
            out.push(ServerMessage::Done(DoneFrame::from(&outcome)));
        }
        out
    }
}

pub fn router(state: Arc<TeleopState>) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(state)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<TeleopState>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn run_session(socket: WebSocket, state: Arc<TeleopState>) {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    log::info!("session {id} connected");
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            if sink.send(Message::Text(m.to_json().into())).await.is_err() {
                break;
            }
        }
    });

    let session = Arc::new(Mutex::new(Session {
        id,
        env: Env::new(Arc::clone(&state.library), state.env_config.clone()),
        active: None,
    }));
    let busy = Arc::new(AtomicBool::new(false));
    let _ = tx.send(ServerMessage::Hello(state.hello(id)));

    while let Some(msg) = stream.next().await {
        let text = match msg {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let parsed: ClientMessage = match serde_json::from_str(text.as_str()) {
            Ok(m) => m,
            Err(e) => {
                let _ = tx.send(ServerMessage::error(ErrorCode::Malformed, e.to_string()));
                continue;
            }
        };
        let job: Box<dyn FnOnce(&mut Session) -> Vec<ServerMessage> + Send> = match parsed {
            ClientMessage::ListEpisodes => {
                let episodes = state
                    .dataset
                    .episodes
                    .iter()
                    .map(|e| EpisodeSummary {
                        episode_id: e.episode_id.clone(),
                        scene_id: e.scene_id.clone(),
                        gdsp: e.gdsp,
                    })
                    .collect();
                let _ = tx.send(ServerMessage::Episodes { episodes });
                continue;
            }
            ClientMessage::Reset { episode_id } => {
                let Some(episode) = state.find_episode(&episode_id).cloned() else {
                    let _ = tx.send(ServerMessage::error(ErrorCode::UnknownEpisode, format!("no episode '{episode_id}'")));
                    continue;
                };
                let state = Arc::clone(&state);
                Box::new(move |s| s.reset(&state, episode))
            }
            ClientMessage::Act { action } => {
                let Some(action) = Action::parse(&action) else {
                    let _ = tx.send(ServerMessage::error(ErrorCode::UnknownAction, format!("unknown action '{action}'")));
                    continue;
                };
                let state = Arc::clone(&state);
                let delay = state.config.step_delay;
                Box::new(move |s| {
                    if let Some(d) = delay {
                        std::thread::sleep(d);
                    }
                    s.act(&state, action)
                })
            }
        };
        if busy.swap(true, Ordering::AcqRel) {
            let _ = tx.send(ServerMessage::error(
                ErrorCode::OutOfOrder,
                "previous request is still in flight; wait for its reply",
            ));
            continue;
        }
        let session = Arc::clone(&session);
        let busy = Arc::clone(&busy);
        let tx = tx.clone();
        tokio::task::spawn_blocking(move || {
            let replies = {
                let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
                job(&mut s)
            };
            // Released before replying so the next request is never refused.
            busy.store(false, Ordering::Release);
            for r in replies {
                let _ = tx.send(r);
            }
        });
    }

    let s = Arc::clone(&session);
    let st = Arc::clone(&state);
    let _ = tokio::task::spawn_blocking(move || s.lock().unwrap_or_else(|p| p.into_inner()).abandon(&st)).await;
    drop(tx);
    let _ = writer.await;
    log::info!("session {id} closed");
}

/// Binds `addr` and returns the bound address with the serving future.
pub async fn bind(
    addr: SocketAddr,
    state: Arc<TeleopState>,
) -> Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>), ServeError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
    let local = listener.local_addr()?;
    let app = router(state);
    Ok((local, async move { axum::serve(listener, app).await }))
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<TeleopState>) -> Result<(), ServeError> {
    let (local, fut) = bind(addr, state).await?;
    log::info!("teleop server listening on ws://{local}/ws");
    fut.await?;
    Ok(())
}
