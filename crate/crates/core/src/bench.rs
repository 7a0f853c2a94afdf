//! Multi-worker throughput benchmark: frames per second by sensor set,
//! resolution and number of concurrent simulators.

use std::fmt::Write as _;
use std::sync::{Arc, Barrier};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scene::{build_scene_graph, Scene, SceneGeometry};
use crate::sensors::SensorConfig;
use crate::sim::{Action, AgentConfig, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("scene has no navigable start position")]
    NoStart,
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Nav(#[from] crate::nav::NavError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorSet {
    Rgb,
    Rgbd,
    Rgbds,
}

impl SensorSet {
    pub const ALL: [SensorSet; 3] = [SensorSet::Rgb, SensorSet::Rgbd, SensorSet::Rgbds];

    pub fn parse(s: &str) -> Option<SensorSet> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rgb" => Some(SensorSet::Rgb),
            "rgbd" | "rgb+depth" => Some(SensorSet::Rgbd),
            "rgbds" | "rgb+depth+semantic" => Some(SensorSet::Rgbds),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SensorSet::Rgb => "RGB",
            SensorSet::Rgbd => "RGB + depth",
            SensorSet::Rgbds => "RGB + depth + semantic",
        }
    }

    pub fn configs(self, resolution: usize) -> Vec<SensorConfig> {
        let mut v = vec![SensorConfig::rgb(resolution, resolution)];
        if self != SensorSet::Rgb {
            v.push(SensorConfig::depth(resolution, resolution));
        }
        if self == SensorSet::Rgbds {
            v.push(SensorConfig::semantic(resolution, resolution));
        }
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scene: Scene,
    pub resolutions: Vec<usize>,
    pub sensor_sets: Vec<SensorSet>,
    pub workers: Vec<usize>,
    /// Measured frames per worker per trial.
    pub frames: usize,
    pub warmup: usize,
    /// Trials per cell; the cell reports its fastest trial.
    pub trials: usize,
    /// Actions cycled by every worker.
    pub policy: Vec<Action>,
    pub agent: AgentConfig,
}

impl BenchConfig {
    pub fn new(scene: Scene) -> Self {
        BenchConfig {
            scene,
            resolutions: vec![128, 256, 512],
            sensor_sets: SensorSet::ALL.to_vec(),
            workers: vec![1, 5],
            frames: 2000,
            warmup: 200,
            trials: 1,
            policy: vec![Action::MoveForward, Action::TurnLeft],
            agent: AgentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.frames <= self.warmup {
            return bad("frames must exceed warmup");
        }
        if self.workers.iter().any(|&w| w == 0) {
            return bad("worker counts must be at least 1");
        }
        if self.resolutions.iter().any(|&r| r == 0) {
            return bad("resolutions must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.policy.is_empty() {
            return bad("action policy is empty");
        }
        if self.resolutions.is_empty() || self.sensor_sets.is_empty() || self.workers.is_empty() {
            return bad("empty benchmark grid");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub host: String,
    pub cpus: usize,
    pub os: String,
    pub arch: String,
}

impl HostInfo {
    pub fn current() -> Self {
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "unknown".to_string());
        HostInfo {
            host,
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }

    pub fn describe(&self) -> String {
        format!("{} ({} cpus, {}/{})", self.host, self.cpus, self.os, self.arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub sensors: SensorSet,
    pub resolution: usize,
    pub workers: usize,
    /// Total measured frames over wall time; `None` when the cell failed.
    pub aggregate_fps: Option<f64>,
    pub per_worker_fps: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub host: HostInfo,
    /// Seconds since the Unix epoch at the start of the run.
    pub timestamp: u64,
    pub scene_id: String,
    pub segments: usize,
    pub frames: usize,
    pub warmup: usize,
    pub trials: usize,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn cell(&self, sensors: SensorSet, resolution: usize, workers: usize) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.sensors == sensors && c.resolution == resolution && c.workers == workers)
    }

    pub fn fps(&self, sensors: SensorSet, resolution: usize, workers: usize) -> Option<f64> {
        self.cell(sensors, resolution, workers).and_then(|c| c.aggregate_fps)
    }

    fn axes(&self) -> (Vec<SensorSet>, Vec<usize>, Vec<usize>) {
        let mut sensors = Vec::new();
        let mut res = Vec::new();
        let mut workers = Vec::new();
        for c in &self.cells {
            if !sensors.contains(&c.sensors) {
                sensors.push(c.sensors);
            }
            if !res.contains(&c.resolution) {
                res.push(c.resolution);
            }
            if !workers.contains(&c.workers) {
                workers.push(c.workers);
            }
        }
        (sensors, res, workers)
    }

    /// Violations of the expected orderings: fps falls with resolution and
    /// with each added channel.
    pub fn monotonicity_violations(&self) -> Vec<String> {
        let (sensors, mut res, workers) = self.axes();
        res.sort_unstable();
        let mut out = Vec::new();
        for &w in &workers {
            for &s in &sensors {
                for pair in res.windows(2) {
                    if let (Some(a), Some(b)) = (self.fps(s, pair[0], w), self.fps(s, pair[1], w)) {
                        if a <= b {
                            out.push(format!("{} w={}: {}² {:.0} fps <= {}² {:.0} fps", s.label(), w, pair[0], a, pair[1], b));
                        }
                    }
                }
            }
            for &r in &res {
                for pair in SensorSet::ALL.windows(2) {
                    if let (Some(a), Some(b)) = (self.fps(pair[0], r, w), self.fps(pair[1], r, w)) {
                        if a < b {
                            out.push(format!(
                                "{}² w={}: {} {:.0} fps < {} {:.0} fps",
                                r,
                                w,
                                pair[0].label(),
                                a,
                                pair[1].label(),
                                b
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(format!("unknown report format '{s}' (text|json|markdown)")),
        }
    }
}

/// Navigable point nearest the middle of the scene.
fn start_position(scene: &Scene, agent: &AgentConfig) -> Result<Vec2, BenchError> {
    let grid = scene.occupancy(0.05, agent.radius)?;
    let center = scene.bounds().center();
    grid.navigable_cells()
        .iter()
        .map(|&c| grid.cell_center(c as usize))
        .min_by(|a, b| a.distance(center).total_cmp(&b.distance(center)))
        .ok_or(BenchError::NoStart)
}

struct Trial {
    aggregate: f64,
    per_worker: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    geometry: &Arc<SceneGeometry>,
    scene: &Scene,
    cfg: &BenchConfig,
    start: Vec2,
    sensors: SensorSet,
    resolution: usize,
    workers: usize,
) -> Result<Trial, String> {
    let barrier = Barrier::new(workers + 1);
    let measured = cfg.frames - cfg.warmup;
    let results: Vec<Result<(Instant, Instant), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let barrier = &barrier;
                s.spawn(move || -> Result<(Instant, Instant), String> {
                    let sim = Simulator::with_geometry(
                        build_scene_graph(scene),
                        geometry.clone(),
                        cfg.agent,
                        sensors.configs(resolution),
                    );
                    let mut sim = match sim.and_then(|mut sim| sim.set_agent_state(start, 0.0).map(|_| sim)) {
                        Ok(sim) => sim,
                        Err(e) => {
                            barrier.wait();
                            return Err(e.to_string());
                        }
                    };
                    let mut k = 0;
                    let mut frame = |sim: &mut Simulator| {
                        let action = cfg.policy[k % cfg.policy.len()];
                        k += 1;
                        let obs = sim.step(action).map_err(|e| e.to_string())?;
                        std::hint::black_box(obs);
                        Ok::<(), String>(())
                    };
                    let mut warm = Ok(());
                    for _ in 0..cfg.warmup {
                        warm = frame(&mut sim);
                        if warm.is_err() {
                            break;
                        }
                    }
                    barrier.wait();
                    warm?;
                    let t = Instant::now();
                    for _ in 0..measured {
                        frame(&mut sim)?;
                    }
                    Ok((t, Instant::now()))
                })
            })
            .collect();
        barrier.wait();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("worker panicked".to_string())))
            .collect()
    });
    // Wall time spans the earliest worker start to the latest worker end.
    let spans = results.into_iter().collect::<Result<Vec<_>, String>>()?;
    let first = spans.iter().map(|s| s.0).min().expect("at least one worker");
    let last = spans.iter().map(|s| s.1).max().expect("at least one worker");
    let wall = last - first;
    let per_worker = spans
        .iter()
        .map(|(a, b)| measured as f64 / (*b - *a).as_secs_f64().max(1e-9))
        .collect();
    Ok(Trial {
        aggregate: (measured * workers) as f64 / wall.as_secs_f64().max(1e-9),
        per_worker,
    })
}

/// Runs every (sensor set, resolution, workers) cell in sequence. Each worker
/// owns its simulator; only the flattened scene geometry is shared.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    cfg.scene.validate()?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let geometry = Arc::new(SceneGeometry::from_scene(&cfg.scene));
    let start = start_position(&cfg.scene, &cfg.agent)?;
    let mut keys = Vec::new();
    for &sensors in &cfg.sensor_sets {
        for &workers in &cfg.workers {
            for &resolution in &cfg.resolutions {
                keys.push((sensors, resolution, workers));
            }
        }
    }
    // Trials run in rounds over all cells so that slow phases of a noisy
    // host spread across cells instead of hitting one.
    let mut best: Vec<Result<Option<Trial>, String>> = keys.iter().map(|_| Ok(None)).collect();
    for _ in 0..cfg.trials {
        for (&(sensors, resolution, workers), slot) in keys.iter().zip(best.iter_mut()) {
            let Ok(current) = slot else {
                continue;
            };
            match run_trial(&geometry, &cfg.scene, cfg, start, sensors, resolution, workers) {
                Ok(t) => {
                    log::debug!("bench {} {}² x{}: {:.0} fps", sensors.label(), resolution, workers, t.aggregate);
                    if current.as_ref().map_or(true, |c| t.aggregate > c.aggregate) {
                        *current = Some(t);
                    }
                }
                Err(e) => {
                    log::warn!("bench cell {} {}² x{} failed: {}", sensors.label(), resolution, workers, e);
                    *slot = Err(e);
                }
            }
        }
    }
    let cells = keys
        .into_iter()
        .zip(best)
        .map(|((sensors, resolution, workers), r)| match r {
            Ok(Some(t)) => BenchCell {
                sensors,
                resolution,
                workers,
                aggregate_fps: Some(t.aggregate),
                per_worker_fps: t.per_worker,
                error: None,
            },
            Ok(None) => unreachable!("at least one trial per cell"),
            Err(e) => BenchCell {
                sensors,
                resolution,
                workers,
                aggregate_fps: None,
                per_worker_fps: Vec::new(),
                error: Some(e),
            },
        })
        .collect();
    Ok(BenchReport {
        host: HostInfo::current(),
        timestamp,
        scene_id: cfg.scene.id.clone(),
        segments: cfg.scene.walls.len(),
        frames: cfg.frames,
        warmup: cfg.warmup,
        trials: cfg.trials,
        cells,
    })
}

fn fps_text(v: Option<f64>) -> String {
    v.map(|f| format!("{f:.0}")).unwrap_or_else(|| "n/a".to_string())
}

fn table_rows(report: &BenchReport) -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
    let (sensors, res, workers) = report.axes();
    let mut group = vec![String::new()];
    let mut header = vec!["Sensors / resolution".to_string()];
    for &w in &workers {
        for (i, &r) in res.iter().enumerate() {
            group.push(if i == 0 {
                format!("{} {}", w, if w == 1 { "worker" } else { "workers" })
            } else {
                String::new()
            });
            header.push(r.to_string());
        }
    }
    let rows = sensors
        .iter()
        .map(|&s| {
            let mut row = vec![s.label().to_string()];
            for &w in &workers {
                for &r in &res {
                    row.push(fps_text(report.fps(s, r, w)));
                }
            }
            row
        })
        .collect();
    (group, header, rows)
}

pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Text => {
            let (group, header, rows) = table_rows(report);
            let ncol = header.len();
            let mut widths = vec![0; ncol];
            for line in std::iter::once(&group).chain(std::iter::once(&header)).chain(rows.iter()) {
                for (i, c) in line.iter().enumerate() {
                    widths[i] = widths[i].max(c.chars().count());
                }
            }
            let fmt_line = |line: &[String]| {
                let cells: Vec<String> = line
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let pad = widths[i] - c.chars().count();
                        if i == 0 {
                            format!("{c}{}", " ".repeat(pad))
                        } else {
                            format!("{}{c}", " ".repeat(pad))
                        }
                    })
                    .collect();
                cells.join("  ").trim_end().to_string()
            };
            let mut out = String::new();
            let _ = writeln!(out, "Frames per second, scene {} ({} segments)", report.scene_id, report.segments);
            let _ = writeln!(out, "host {}, {} frames ({} warmup) per worker", report.host.describe(), report.frames, report.warmup);
            let _ = writeln!(out, "{}", fmt_line(&group));
            let _ = writeln!(out, "{}", fmt_line(&header));
            let total: usize = widths.iter().sum::<usize>() + 2 * (ncol - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
            for r in &rows {
                let _ = writeln!(out, "{}", fmt_line(r));
            }
            out
        }
        ReportFormat::Markdown => {
            let (_, res, workers) = report.axes();
            let (_, _, rows) = table_rows(report);
            let mut header = vec!["Sensors".to_string()];
            for &w in &workers {
                for &r in &res {
                    header.push(format!("{r}² ×{w}"));
                }
            }
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let sep: Vec<&str> = header.iter().enumerate().map(|(i, _)| if i == 0 { "---" } else { "---:" }).collect();
            let _ = writeln!(out, "| {} |", sep.join(" | "));
            for r in rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
            out
        }
    }
}
