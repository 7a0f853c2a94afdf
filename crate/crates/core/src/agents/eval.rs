//! Evaluation runner: every episode under every seed, aggregated into a
//! report with standard errors across seeds.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Agent, EpisodeContext, Privileged};
use crate::episodes::{DatasetError, EpisodeDataset};
use crate::sensors::{SensorConfig, SensorKind};
use crate::sim::Action;
use crate::task::{stable_hash, Env, EnvConfig, Episode, EpisodeOutcome, SceneLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Template for each episode's environment; its sensors and seed are
    /// replaced per run.
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    /// Side of the square visual sensors.
    pub resolution: usize,
    /// Keep per-episode records (with action lists) in the report.
    pub keep_records: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            env: EnvConfig::default(),
            seeds: (0..5).collect(),
            resolution: crate::sensors::DEFAULT_RESOLUTION,
            keep_records: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<EpisodeOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub actions: Vec<Action>,
}

impl EpisodeRecord {
    pub fn spl(&self) -> f64 {
        self.outcome.as_ref().map_or(0.0, |o| o.spl)
    }

    pub fn success(&self) -> bool {
        self.outcome.as_ref().is_some_and(|o| o.success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub success_rate: f64,
    pub spl_mean: f64,
    pub collisions_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub dataset: String,
    pub success_rate: f64,
    pub spl_mean: f64,
    pub spl_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub train_tag: String,
    pub cells: Vec<MatrixCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub agent: String,
    pub rows: Vec<MatrixRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub success_rate: f64,
    pub success_stderr: f64,
    pub spl_mean: f64,
    pub spl_stderr: f64,
    /// Mean collisions over successful episodes (0 when none succeeded).
    pub collisions_mean: f64,
    /// Mean collisions over all episodes.
    pub collisions_all_mean: f64,
    /// Episodes per seed.
    pub episodes: usize,
    pub privileged: bool,
    pub per_seed: Vec<SeedSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<CrossMatrix>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<EpisodeRecord>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Standard error of the mean (sample standard deviation / sqrt(n)).
pub fn standard_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn sensor_configs(kinds: &[SensorKind], resolution: usize) -> Vec<SensorConfig> {
    kinds
        .iter()
        .map(|&k| match k {
            SensorKind::GpsCompass => SensorConfig::gps_compass(),
            _ => SensorConfig::new(k).with_resolution(resolution, resolution),
        })
        .collect()
}

fn episode_seed(seed: u64, episode_id: &str) -> u64 {
    stable_hash(&format!("{seed}:{episode_id}"))
}

fn run_episode(
    agent: &mut dyn Agent,
    env: &mut Env,
    episode: &Episode,
    seed: u64,
    keep_actions: bool,
) -> Result<(EpisodeOutcome, Vec<Action>), String> {
    let obs = env.reset(episode).map_err(|e| e.to_string())?;
    let privileged = agent.privileged().then(|| {
        let sim = env.simulator().expect("reset creates a simulator");
        Privileged {
            field: Arc::clone(env.distance_field().expect("reset builds a field")),
            walls: Arc::clone(&sim.geometry().index),
            agent: *sim.agent_config(),
            frame: episode.frame(),
            success_radius: env.config().success_radius,
        }
    });
    agent.reset(&EpisodeContext {
        pointgoal: obs.pointgoal.expect("reset observation carries the goal"),
        seed: episode_seed(seed, &episode.episode_id),
        privileged,
    });
    let mut obs = obs;
    let mut actions = Vec::new();
    loop {
        let a = agent.act(&obs);
        if keep_actions {
            actions.push(a);
        }
        let (next, done, _) = env.step(a).map_err(|e| e.to_string())?;
        if done {
            break;
        }
        obs = next;
    }
    Ok((env.outcome().cloned().expect("finished episode has an outcome"), actions))
}

/// Runs the agent built by `factory(seed)` on every episode for every seed.
pub fn evaluate(
    factory: &(dyn Fn(u64) -> Box<dyn Agent> + Sync),
    dataset_name: &str,
    dataset: &EpisodeDataset,
    library: &Arc<SceneLibrary>,
    config: &EvalConfig,
) -> Result<EvalReport, DatasetError> {
    dataset.check_scenes(library)?;
    let probe = factory(0);
    let name = probe.name().to_string();
    let privileged = probe.privileged();
    let sensors = sensor_configs(&probe.sensors(), config.resolution);
    drop(probe);

    // Episode-major order so all seeds of one episode share a cached field.
    let jobs: Vec<(usize, usize)> = (0..dataset.episodes.len())
        .flat_map(|e| (0..config.seeds.len()).map(move |s| (e, s)))
        .collect();
    let mut records: Vec<EpisodeRecord> = jobs
        .par_iter()
        .map(|&(e, s)| {
            let seed = config.seeds[s];
            let episode = &dataset.episodes[e];
            let env_cfg = EnvConfig {
                sensors: sensors.clone(),
                seed,
                ..config.env.clone()
            };
            let mut env = Env::new(Arc::clone(library), env_cfg);
            let mut agent = factory(seed);
            let result = catch_unwind(AssertUnwindSafe(|| {
                run_episode(agent.as_mut(), &mut env, episode, seed, config.keep_records)
            }))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "agent panicked".into());
                Err(format!("agent panicked: {msg}"))
            });
            match result {
                Ok((outcome, actions)) => EpisodeRecord {
                    seed,
                    episode_id: episode.episode_id.clone(),
                    outcome: Some(outcome),
                    error: None,
                    actions,
                },
                Err(err) => {
                    log::warn!("episode {} seed {seed}: {err}", episode.episode_id);
                    EpisodeRecord {
                        seed,
                        episode_id: episode.episode_id.clone(),
                        outcome: None,
                        error: Some(err),
                        actions: Vec::new(),
                    }
                }
            }
        })
        .collect();
    records.sort_by(|a, b| (a.seed, &a.episode_id).cmp(&(b.seed, &b.episode_id)));

    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let rs: Vec<&EpisodeRecord> = records.iter().filter(|r| r.seed == seed).collect();
        let succ: Vec<f64> = rs.iter().map(|r| r.success() as u8 as f64).collect();
        let spl: Vec<f64> = rs.iter().map(|r| r.spl()).collect();
        let coll: Vec<f64> = rs
            .iter()
            .filter(|r| r.success())
            .map(|r| r.outcome.as_ref().unwrap().collisions as f64)
            .collect();
        per_seed.push(SeedSummary {
            seed,
            success_rate: mean(&succ),
            spl_mean: mean(&spl),
            collisions_mean: mean(&coll),
        });
    }
    let success: Vec<f64> = per_seed.iter().map(|s| s.success_rate).collect();
    let spl: Vec<f64> = per_seed.iter().map(|s| s.spl_mean).collect();
    let coll_success: Vec<f64> = records
        .iter()
        .filter(|r| r.success())
        .map(|r| r.outcome.as_ref().unwrap().collisions as f64)
        .collect();
    let coll_all: Vec<f64> = records
        .iter()
        .filter_map(|r| r.outcome.as_ref().map(|o| o.collisions as f64))
        .collect();
    let errors = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} (seed {}): {e}", r.episode_id, r.seed)))
        .collect();
    if !config.keep_records {
        records.clear();
    }

    Ok(EvalReport {
        agent: name,
        dataset: dataset_name.to_string(),
        seeds: config.seeds.clone(),
        success_rate: mean(&success),
        success_stderr: standard_error(&success),
        spl_mean: mean(&spl),
        spl_stderr: standard_error(&spl),
        collisions_mean: mean(&coll_success),
        collisions_all_mean: mean(&coll_all),
        episodes: dataset.episodes.len(),
        privileged,
        per_seed,
        errors,
        matrix: None,
        records,
    })
}

/// Evaluates one agent on several datasets, producing one report per dataset
/// and a single-row generalization matrix tagged `train_tag`.
pub fn evaluate_matrix(
    factory: &(dyn Fn(u64) -> Box<dyn Agent> + Sync),
    train_tag: &str,
    datasets: &[(String, EpisodeDataset)],
    library: &Arc<SceneLibrary>,
    config: &EvalConfig,
) -> Result<(Vec<EvalReport>, CrossMatrix), DatasetError> {
    let mut reports = Vec::new();
    for (name, ds) in datasets {
        reports.push(evaluate(factory, name, ds, library, config)?);
    }
    let matrix = CrossMatrix {
        agent: reports.first().map(|r| r.agent.clone()).unwrap_or_default(),
        rows: vec![MatrixRow {
            train_tag: train_tag.to_string(),
            cells: reports
                .iter()
                .map(|r| MatrixCell {
                    dataset: r.dataset.clone(),
                    success_rate: r.success_rate,
                    spl_mean: r.spl_mean,
                    spl_stderr: r.spl_stderr,
                })
                .collect(),
        }],
    };
    Ok((reports, matrix))
}

/// Aligned text table: one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = ["Agent", "Dataset", "Success", "SPL", "Collisions"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                if r.privileged { format!("{} *", r.agent) } else { r.agent.clone() },
                r.dataset.clone(),
                format!("{:.2}", r.success_rate),
                format!("{:.2} ± {:.2}", r.spl_mean, r.spl_stderr),
                format!("{:.1}", r.collisions_mean),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, &row.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    }
    if reports.iter().any(|r| r.privileged) {
        out.push_str("* privileged: reads the true distance field; not comparable\n");
    }
    out
}
