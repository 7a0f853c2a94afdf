//! `navsim` command-line entry point.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use navsim::agents::{evaluate, render_table, AgentKind, EvalConfig};
use navsim::bench::{render_report, run_benchmark, BenchConfig, ReportFormat, SensorSet};
use navsim::episodes::{dataset_stats, dataset_stats_with_oracle, generate_dataset, load_dataset, GenerationConstraints, Split};
use navsim::scene::{generate_scene, load_scene, load_scene_dir, SceneParams};
use navsim::sim::AgentConfig;
use navsim::task::{stable_hash, EnvConfig, SceneLibrary};

#[derive(Debug, Parser, Serialize)]
#[command(name = "navsim", version, about = "Desk-scale 2.5D embodied navigation simulator")]
struct Cli {
    /// Root seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,
    /// Output file or directory (meaning depends on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate procedural multi-room scenes (one JSON file each).
    GenScenes(GenScenesArgs),
    /// Sample a PointGoal episode dataset over a directory of scenes.
    GenEpisodes(GenEpisodesArgs),
    /// Summarize an episode dataset.
    Stats(StatsArgs),
    /// Evaluate a baseline agent on a dataset.
    Eval(EvalArgs),
    /// Measure rendering throughput.
    Bench(BenchArgs),
    /// Run the teleoperation WebSocket server.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenScenesArgs {
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    min_rooms: usize,
    #[arg(long, default_value_t = 6)]
    max_rooms: usize,
    #[arg(long, default_value_t = 4.0)]
    min_room_size: f64,
    #[arg(long, default_value_t = 8.0)]
    max_room_size: f64,
    #[arg(long, default_value_t = 1.0)]
    corridor_width: f64,
    #[arg(long, default_value_t = 0)]
    min_obstacles: usize,
    #[arg(long, default_value_t = 2)]
    max_obstacles: usize,
    #[arg(long, default_value_t = 2.5)]
    wall_height: f64,
}

#[derive(Debug, Args, Serialize)]
struct GenEpisodesArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = 1.0)]
    min_gdsp: f64,
    #[arg(long, default_value_t = 30.0)]
    max_gdsp: f64,
    #[arg(long, default_value_t = 1.1)]
    ratio_threshold: f64,
    #[arg(long, default_value_t = 0.2)]
    easy_accept_prob: f64,
    /// Navigability grid cell size (m).
    #[arg(long, default_value_t = 0.05)]
    grid_resolution: f64,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    episodes: PathBuf,
    /// Also run the geodesic oracle to report path lengths in actions.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long, value_parser = parse_agent)]
    agent: AgentName,
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    /// Number of seeds, starting at the root seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0.0)]
    depth_noise_sigma: f64,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// Keep per-episode records (with action lists) in the report.
    #[arg(long)]
    records: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(into = "String")]
struct AgentName(AgentKind);

impl From<AgentName> for String {
    fn from(a: AgentName) -> String {
        match a.0 {
            AgentKind::Random => "random",
            AgentKind::Forward => "forward",
            AgentKind::GoalFollower => "goal-follower",
            AgentKind::Oracle => "oracle",
            AgentKind::Mapper => "mapper",
        }
        .to_string()
    }
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Scene JSON; a generated scene from the root seed when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
    resolutions: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "rgb,rgbd,rgbds", value_parser = parse_sensor_set)]
    sensors: Vec<SensorSet>,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    frames: usize,
    #[arg(long, default_value_t = 200)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: ReportFormatArg,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(into = "String")]
struct ReportFormatArg(ReportFormat);

impl From<ReportFormatArg> for String {
    fn from(f: ReportFormatArg) -> String {
        match f.0 {
            ReportFormat::Text => "text",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "markdown",
        }
        .to_string()
    }
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8089)]
    port: u16,
    #[arg(long, default_value = "trajectories.jsonl")]
    log: PathBuf,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

fn parse_agent(s: &str) -> Result<AgentName, String> {
    AgentKind::parse(s)
        .map(AgentName)
        .ok_or_else(|| format!("unknown agent '{s}' (random|forward|goal-follower|oracle|mapper)"))
}

fn parse_sensor_set(s: &str) -> Result<SensorSet, String> {
    SensorSet::parse(s).ok_or_else(|| format!("unknown sensor set '{s}' (rgb|rgbd|rgbds)"))
}

fn parse_format(s: &str) -> Result<ReportFormatArg, String> {
    s.parse().map(ReportFormatArg)
}

/// Renders the fully-defaulted invocation as a command line.
fn banner(cli: &Cli) -> String {
    fn flags(value: &serde_json::Value, out: &mut Vec<String>) {
        let serde_json::Value::Object(map) = value else {
            return;
        };
        for (k, v) in map {
            let flag = format!("--{}", k.replace('_', "-"));
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::Bool(true) => out.push(flag),
                serde_json::Value::Bool(false) => {}
                serde_json::Value::Array(items) => {
                    let joined: Vec<String> = items.iter().map(plain).collect();
                    out.push(format!("{flag} {}", joined.join(",")));
                }
                other => out.push(format!("{flag} {}", plain(other))),
            }
        }
    }
    fn plain(v: &serde_json::Value) -> String {
        match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
    let mut parts = vec!["navsim".to_string()];
    parts.push(format!("--seed {}", cli.seed));
    parts.push(format!("--log-level {}", plain(&serde_json::to_value(cli.log_level).unwrap())));
    if let Some(out) = &cli.out {
        parts.push(format!("--out {}", out.display()));
    }
    let cmd = serde_json::to_value(&cli.command).expect("arguments serialize");
    if let serde_json::Value::Object(map) = &cmd {
        for (name, args) in map {
            parts.push(name.clone());
            flags(args, &mut parts);
        }
    }
    parts.join(" ")
}

fn init_logging(level: LogLevel) {
    env_logger::Builder::new()
        .filter_level(level.filter())
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn scene_library(dir: &Path, resolution: f64) -> Result<Arc<SceneLibrary>> {
    let scenes = load_scene_dir(dir).with_context(|| format!("loading scenes from {}", dir.display()))?;
    if scenes.is_empty() {
        bail!("no scene files in {}", dir.display());
    }
    let agent = AgentConfig::default();
    Ok(Arc::new(SceneLibrary::new(scenes, resolution, agent.radius)?))
}

fn gen_scenes(cli: &Cli, a: &GenScenesArgs) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("scenes"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let params = SceneParams {
        rooms: (a.min_rooms, a.max_rooms),
        room_size: (a.min_room_size, a.max_room_size),
        corridor_width: a.corridor_width,
        obstacles_per_room: (a.min_obstacles, a.max_obstacles),
        wall_height: a.wall_height,
    };
    for i in 0..a.count {
        let seed = stable_hash(&format!("{}:scene:{i}", cli.seed));
        let generated = generate_scene(seed, &params);
        for w in &generated.warnings {
            log::warn!("{w}");
        }
        let path = dir.join(format!("{}.json", generated.scene.id));
        generated.scene.save(&path)?;
        log::info!("wrote {} ({} walls)", path.display(), generated.scene.walls.len());
    }
    println!("{} scenes written to {}", a.count, dir.display());
    Ok(())
}

fn gen_episodes(cli: &Cli, a: &GenEpisodesArgs) -> Result<()> {
    let library = scene_library(&a.scenes, a.grid_resolution)?;
    let constraints = GenerationConstraints {
        min_gdsp: a.min_gdsp,
        max_gdsp: a.max_gdsp,
        easy_ratio_threshold: a.ratio_threshold,
        easy_accept_prob: a.easy_accept_prob,
        count: a.count,
        seed: cli.seed,
    };
    let ds = generate_dataset(&library, &constraints, a.split)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("episodes.jsonl"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ds.save(&out)?;
    println!(
        "{} episodes written to {} (easy fraction {:.3})",
        ds.episodes.len(),
        out.display(),
        ds.easy_fraction(a.ratio_threshold)
    );
    Ok(())
}

fn stats(cli: &Cli, a: &StatsArgs) -> Result<()> {
    let ds = load_dataset(&a.episodes).with_context(|| format!("loading {}", a.episodes.display()))?;
    let stats = match &a.scenes {
        Some(dir) => dataset_stats_with_oracle(&ds, &scene_library(dir, ds.header.grid_resolution)?)?,
        None => dataset_stats(&ds),
    };
    let Some(stats) = stats else {
        bail!("dataset {} has no episodes", a.episodes.display());
    };
    let text = match a.format {
        OutputFormat::Json => serde_json::to_string_pretty(&stats)? + "\n",
        OutputFormat::Text => {
            let mut t = String::new();
            t += &format!("split {}  episodes {}\n", stats.split, stats.count);
            t += "                 min   median     mean      max\n";
            let mut row = |name: &str, s: &navsim::episodes::Summary| {
                t += &format!("{name:<12} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n", s.min, s.median, s.mean, s.max);
            };
            row("gdsp (m)", &stats.gdsp);
            row("euclid (m)", &stats.euclidean);
            row("ratio", &stats.ratio);
            if let Some(o) = &stats.oracle_actions {
                row("oracle acts", o);
            }
            t += &format!("easy fraction {:.3}\n", stats.easy_fraction);
            t
        }
    };
    write_output(cli.out.as_deref(), &text)
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    if !(a.depth_noise_sigma >= 0.0) {
        bail!("--depth-noise-sigma must be non-negative");
    }
    let ds = load_dataset(&a.episodes).with_context(|| format!("loading {}", a.episodes.display()))?;
    let library = scene_library(&a.scenes, ds.header.grid_resolution)?;
    let cfg = EvalConfig {
        env: EnvConfig {
            depth_noise_sigma: a.depth_noise_sigma,
            ..Default::default()
        },
        seeds: (0..a.seeds).map(|i| cli.seed + i).collect(),
        resolution: a.resolution,
        keep_records: a.records,
    };
    let kind = a.agent.0;
    let name = a
        .episodes
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let report = evaluate(&|seed| kind.build(seed), &name, &ds, &library, &cfg)?;
    for e in &report.errors {
        log::warn!("{e}");
    }
    print!("{}", render_table(std::slice::from_ref(&report)));
    if let Some(out) = &cli.out {
        write_output(Some(out), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => load_scene(p)?,
        None => generate_scene(cli.seed, &SceneParams::default()).scene,
    };
    let cfg = BenchConfig {
        resolutions: a.resolutions.clone(),
        sensor_sets: a.sensors.clone(),
        workers: a.workers.clone(),
        frames: a.frames,
        warmup: a.warmup,
        trials: a.trials,
        ..BenchConfig::new(scene)
    };
    let report = run_benchmark(&cfg)?;
    write_output(cli.out.as_deref(), &render_report(&report, a.format.0))
}

fn serve(a: &ServeArgs) -> Result<()> {
    let ds = Arc::new(load_dataset(&a.episodes).with_context(|| format!("loading {}", a.episodes.display()))?);
    let library = scene_library(&a.scenes, ds.header.grid_resolution)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", a.host, a.port))?;
    let config = navsim_teleop::ServerConfig {
        dataset_name: a
            .episodes
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        resolution: a.resolution,
        log_path: Some(a.log.clone()),
        ..Default::default()
    };
    let state = Arc::new(navsim_teleop::TeleopState::new(library, ds, config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let (local, fut) = navsim_teleop::bind(addr, state).await?;
        println!("listening on ws://{local}/ws");
        fut.await?;
        Ok(())
    })
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenScenes(a) => gen_scenes(cli, a),
        Command::GenEpisodes(a) => gen_episodes(cli, a),
        Command::Stats(a) => stats(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Serve(a) => serve(a),
    }
}

/// Joins an error's causes, skipping causes already spelled out by their
/// parent's message.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.log_level);
    eprintln!("effective config: {}", banner(&cli));
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(2)
        }
    }
}
