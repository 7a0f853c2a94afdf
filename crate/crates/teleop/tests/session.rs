use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use navsim::agents::{evaluate, EvalConfig, ReplayAgent};
use navsim::episodes::{generate_dataset, EpisodeDataset, GenerationConstraints, Split};
use navsim::geometry::Vec2;
use navsim::scene::Scene;
use navsim::sim::Action;
use navsim::task::{EnvConfig, SceneLibrary};
use navsim_teleop::protocol::ObservationFrame;
use navsim_teleop::{bind, decode_png_field, ServerConfig, ServerMessage, TeleopState, TrajectoryRecord};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Fixture {
    library: Arc<SceneLibrary>,
    dataset: Arc<EpisodeDataset>,
    addr: SocketAddr,
    log: tempfile::NamedTempFile,
}

async fn start(step_delay: Option<Duration>) -> Fixture {
    let scene = Scene::rectangle_room("room", Vec2::ZERO, Vec2::new(8.0, 6.0));
    let library = Arc::new(SceneLibrary::new(vec![scene], 0.05, 0.1).unwrap());
    let constraints = GenerationConstraints {
        count: 3,
        seed: 5,
        easy_accept_prob: 1.0,
        ..Default::default()
    };
    let dataset = Arc::new(generate_dataset(&library, &constraints, Split::Val).unwrap());
    let log = tempfile::NamedTempFile::new().unwrap();
    let config = ServerConfig {
        dataset_name: "room".into(),
        resolution: 32,
        log_path: Some(log.path().to_path_buf()),
        step_delay,
        ..Default::default()
    };
    let state = Arc::new(TeleopState::new(Arc::clone(&library), Arc::clone(&dataset), config).unwrap());
    let (addr, fut) = bind("127.0.0.1:0".parse().unwrap(), state).await.unwrap();
    tokio::spawn(fut);
    Fixture { library, dataset, addr, log }
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws
}

async fn send(ws: &mut Ws, json: &str) {
    ws.send(Message::Text(json.into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("reply within timeout")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn observation(ws: &mut Ws) -> ObservationFrame {
    match recv(ws).await {
        ServerMessage::Observation(f) => *f,
        other => panic!("expected observation, got {other:?}"),
    }
}

fn steer(frame: &ObservationFrame) -> &'static str {
    let [dist, bearing] = frame.goal_vector;
    if dist <= 0.2 {
        "stop"
    } else if bearing > 15f64.to_radians() {
        "turn_left"
    } else if bearing < -15f64.to_radians() {
        "turn_right"
    } else {
        "move_forward"
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_session_matches_offline_replay() {
    let fx = start(None).await;
    let mut ws = connect(fx.addr).await;

    let ServerMessage::Hello(hello) = recv(&mut ws).await else {
        panic!("first frame is hello");
    };
    assert_eq!(hello.episodes, 3);
    assert_eq!(hello.split, "val");
    assert_eq!(hello.actions, ["move_forward", "turn_left", "turn_right", "stop"]);

    send(&mut ws, r#"{"type":"list_episodes"}"#).await;
    let ServerMessage::Episodes { episodes } = recv(&mut ws).await else {
        panic!("expected episode list");
    };
    assert_eq!(episodes.len(), 3);

    let episode = fx.dataset.episodes[0].clone();
    send(&mut ws, &format!(r#"{{"type":"reset","episode_id":"{}"}}"#, episode.episode_id)).await;
    let mut frame = observation(&mut ws).await;
    assert_eq!(frame.step, 0);
    assert_eq!(frame.topdown.trajectory.len(), 1);
    assert_eq!(frame.gps, [0.0, 0.0]);
    assert!(frame.rgb.is_some() && frame.depth.is_some() && frame.semantic.is_some());
    let (w, h, _) = decode_png_field(frame.depth.as_ref().unwrap()).unwrap();
    assert_eq!((w, h), (32, 32));

    let mut actions = Vec::new();
    let done = loop {
        let a = steer(&frame);
        actions.push(Action::parse(a).unwrap());
        send(&mut ws, &format!(r#"{{"type":"act","action":"{a}"}}"#)).await;
        let next = observation(&mut ws).await;
        assert_eq!(next.step as usize, actions.len());
        assert_eq!(next.topdown.trajectory.len(), actions.len() + 1);
        if a == "move_forward" && !next.collided {
            let t = &next.topdown.trajectory;
            let (p, q) = (&t[t.len() - 2], &t[t.len() - 1]);
            assert!(((q.x - p.x).hypot(q.y - p.y) - 0.25).abs() < 1e-9);
        }
        frame = next;
        if a == "stop" {
            match recv(&mut ws).await {
                ServerMessage::Done(d) => break d,
                other => panic!("expected done, got {other:?}"),
            }
        }
        assert!(actions.len() < 500);
    };
    assert!(done.success);
    assert!(done.spl > 0.0 && done.spl <= 1.0);

    send(&mut ws, r#"{"type":"act","action":"move_forward"}"#).await;
    match recv(&mut ws).await {
        ServerMessage::Error { code, .. } => assert_eq!(code, "episode_done"),
        other => panic!("expected error, got {other:?}"),
    }
    ws.close(None).await.unwrap();

    let replayed = actions.clone();
    let single = EpisodeDataset {
        header: fx.dataset.header.clone(),
        episodes: vec![episode.clone()],
    };
    let report = evaluate(
        &move |_| Box::new(ReplayAgent::new(replayed.clone())),
        "replay",
        &single,
        &fx.library,
        &EvalConfig {
            env: EnvConfig::default(),
            seeds: vec![0],
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.spl_mean, done.spl);

    tokio::time::sleep(Duration::from_millis(100)).await;
    let text = std::fs::read_to_string(fx.log.path()).unwrap();
    let records: Vec<TrajectoryRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].actions, actions);
    assert_eq!(records[0].outcome.as_ref().unwrap().spl, done.spl);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_act_in_flight_is_rejected() {
    let fx = start(Some(Duration::from_millis(300))).await;
    let mut ws = connect(fx.addr).await;
    let _ = recv(&mut ws).await;
    let id = &fx.dataset.episodes[1].episode_id;
    send(&mut ws, &format!(r#"{{"type":"reset","episode_id":"{id}"}}"#)).await;
    let _ = observation(&mut ws).await;

    send(&mut ws, r#"{"type":"act","action":"turn_left"}"#).await;
    send(&mut ws, r#"{"type":"act","action":"turn_left"}"#).await;
    match recv(&mut ws).await {
        ServerMessage::Error { code, .. } => assert_eq!(code, "out_of_order"),
        other => panic!("expected ordering error, got {other:?}"),
    }
    let frame = observation(&mut ws).await;
    assert_eq!(frame.step, 1);

    send(&mut ws, r#"{"type":"act","action":"turn_left"}"#).await;
    assert_eq!(observation(&mut ws).await.step, 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn protocol_errors_keep_the_connection() {
    let fx = start(None).await;
    let mut ws = connect(fx.addr).await;
    let _ = recv(&mut ws).await;
    for (msg, code) in [
        ("not json", "malformed"),
        (r#"{"type":"act","action":"move_forward"}"#, "no_episode"),
        (r#"{"type":"reset","episode_id":"nope"}"#, "unknown_episode"),
        (r#"{"type":"act","action":"jump"}"#, "unknown_action"),
    ] {
        send(&mut ws, msg).await;
        match recv(&mut ws).await {
            ServerMessage::Error { code: c, .. } => assert_eq!(c, code, "for {msg}"),
            other => panic!("expected error for {msg}, got {other:?}"),
        }
    }
    let id = &fx.dataset.episodes[2].episode_id;
    send(&mut ws, &format!(r#"{{"type":"reset","episode_id":"{id}"}}"#)).await;
    assert_eq!(observation(&mut ws).await.step, 0);
    send(&mut ws, r#"{"type":"act","action":"turn_right"}"#).await;
    let _ = observation(&mut ws).await;
    ws.close(None).await.unwrap();

    // Abandoned episodes are logged without an outcome.
    let mut records = Vec::new();
    for _ in 0..50 {
        tokio::time::sleep(Duration::from_millis(20)).await;
        let text = std::fs::read_to_string(fx.log.path()).unwrap();
        records = text.lines().map(|l| serde_json::from_str::<TrajectoryRecord>(l).unwrap()).collect();
        if !records.is_empty() {
            break;
        }
    }
    assert_eq!(records.len(), 1);
    assert!(records[0].outcome.is_none());
    assert_eq!(records[0].actions, [Action::TurnRight]);
}
