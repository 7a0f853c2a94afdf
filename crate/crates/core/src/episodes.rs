//! Episode datasets: constrained generation by rejection sampling, JSON-lines
//! storage, statistics and the block-shuffled training stream.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nav::{self, NavError};
use crate::rng::{substream, SimRng};
use crate::task::{Env, EnvConfig, Episode, SceneLibrary, TaskError};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 100_000;
pub const DEFAULT_BLOCK_SIZE: usize = 500;
/// Start candidates drawn against one goal's distance field before a new
/// goal is sampled.
const STARTS_PER_GOAL: usize = 16;
const RATIO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("empty dataset file (missing header)")]
    MissingHeader,
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),
    #[error("duplicate episode id '{0}'")]
    DuplicateId(String),
    #[error("episode '{id}' references unknown scene '{scene}'")]
    UnknownScene { id: String, scene: String },
    #[error("episode '{id}' violates an invariant: {what}")]
    Invariant { id: String, what: String },
    #[error("invalid constraints: {0}")]
    BadConstraints(String),
    #[error("scene '{scene}' exhausted after {rejections} consecutive rejections")]
    SceneExhausted { scene: String, rejections: u64 },
    #[error("scene '{scene}': {source}")]
    Nav { scene: String, source: NavError },
    #[error("{workers} workers requested but only {scenes} scenes available")]
    TooManyWorkers { workers: usize, scenes: usize },
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}' (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConstraints {
    pub min_gdsp: f64,
    pub max_gdsp: f64,
    pub easy_ratio_threshold: f64,
    pub easy_accept_prob: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for GenerationConstraints {
    fn default() -> Self {
        GenerationConstraints {
            min_gdsp: 1.0,
            max_gdsp: 30.0,
            easy_ratio_threshold: 1.1,
            easy_accept_prob: 0.2,
            count: 1000,
            seed: 0,
        }
    }
}

impl GenerationConstraints {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::BadConstraints(m));
        if !(self.min_gdsp > 0.0 && self.min_gdsp < self.max_gdsp && self.max_gdsp.is_finite()) {
            return bad(format!("need 0 < min_gdsp < max_gdsp, got {} and {}", self.min_gdsp, self.max_gdsp));
        }
        if !(self.easy_ratio_threshold >= 1.0) {
            return bad(format!("easy_ratio_threshold must be >= 1, got {}", self.easy_ratio_threshold));
        }
        if !(0.0..=1.0).contains(&self.easy_accept_prob) {
            return bad(format!("easy_accept_prob must lie in [0, 1], got {}", self.easy_accept_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub split: Split,
    pub seed: u64,
    pub constraints: GenerationConstraints,
    pub scenes: Vec<String>,
    pub grid_resolution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Episode>,
}

/// Fields an episode line must carry, and nothing else.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeLine {
    episode_id: String,
    scene_id: String,
    start_position: crate::geometry::Vec2,
    start_heading: f64,
    goal_position: crate::geometry::Vec2,
    gdsp: f64,
    euclidean: f64,
    ratio: f64,
}

impl From<EpisodeLine> for Episode {
    fn from(l: EpisodeLine) -> Episode {
        Episode {
            episode_id: l.episode_id,
            scene_id: l.scene_id,
            start_position: l.start_position,
            start_heading: l.start_heading,
            goal_position: l.goal_position,
            gdsp: l.gdsp,
            euclidean: l.euclidean,
            ratio: l.ratio,
        }
    }
}

impl EpisodeDataset {
    /// Checks id uniqueness, scene references and per-episode invariants.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let scenes: HashSet<&str> = self.header.scenes.iter().map(|s| s.as_str()).collect();
        let mut ids = HashSet::new();
        let c = &self.header.constraints;
        let res = self.header.grid_resolution;
        for e in &self.episodes {
            if !ids.insert(e.episode_id.as_str()) {
                return Err(DatasetError::DuplicateId(e.episode_id.clone()));
            }
            if !scenes.contains(e.scene_id.as_str()) {
                return Err(DatasetError::UnknownScene { id: e.episode_id.clone(), scene: e.scene_id.clone() });
            }
            let fail = |what: String| Err(DatasetError::Invariant { id: e.episode_id.clone(), what });
            if !(e.gdsp >= c.min_gdsp && e.gdsp <= c.max_gdsp) {
                return fail(format!("gdsp {} outside [{}, {}]", e.gdsp, c.min_gdsp, c.max_gdsp));
            }
            let euclid = e.start_position.distance(e.goal_position);
            if (euclid - e.euclidean).abs() > 1e-9 * euclid.max(1.0) {
                return fail(format!("euclidean {} does not match positions ({euclid})", e.euclidean));
            }
            if e.gdsp < e.euclidean - 2.0 * res {
                return fail(format!("gdsp {} shorter than euclidean {}", e.gdsp, e.euclidean));
            }
            if (e.ratio - e.gdsp / e.euclidean).abs() > RATIO_TOLERANCE {
                return fail(format!("ratio {} != gdsp / euclidean", e.ratio));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.episodes {
            out.push_str(&serde_json::to_string(e).expect("episode serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, DatasetError> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(DatasetError::MissingHeader)?;
        let first = first?;
        let raw: serde_json::Value = serde_json::from_str(&first).map_err(|source| DatasetError::Parse { line: 1, source })?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != DATASET_FORMAT_VERSION as u64 {
                return Err(DatasetError::UnsupportedVersion(v as u32));
            }
        }
        let header: DatasetHeader = serde_json::from_value(raw).map_err(|source| DatasetError::Parse { line: 1, source })?;
        let mut episodes = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let e: EpisodeLine = serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?;
            episodes.push(e.into());
        }
        let ds = EpisodeDataset { header, episodes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_jsonl(BufReader::new(std::fs::File::open(path)?))
    }

    /// Confirms every referenced scene is present in `library`.
    pub fn check_scenes(&self, library: &SceneLibrary) -> Result<(), DatasetError> {
        for e in &self.episodes {
            if library.get(&e.scene_id).is_err() {
                return Err(DatasetError::UnknownScene { id: e.episode_id.clone(), scene: e.scene_id.clone() });
            }
        }
        Ok(())
    }

    /// Fraction of episodes whose ratio is below `threshold`.
    pub fn easy_fraction(&self, threshold: f64) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.ratio < threshold).count() as f64 / self.episodes.len() as f64
    }
}

pub fn save_dataset(ds: &EpisodeDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    ds.save(path)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EpisodeDataset, DatasetError> {
    EpisodeDataset::load(path)
}

/// Generates `constraints.count` episodes spread round-robin over the scenes
/// of `library` (in id order). Each scene samples from its own random stream,
/// so scenes are generated in parallel without affecting the result.
pub fn generate_dataset(
    library: &SceneLibrary,
    constraints: &GenerationConstraints,
    split: Split,
) -> Result<EpisodeDataset, DatasetError> {
    constraints.validate()?;
    let entries: Vec<_> = library.entries().cloned().collect();
    let n = entries.len().max(1);
    let quotas: Vec<usize> = (0..entries.len())
        .map(|i| constraints.count / n + usize::from(i < constraints.count % n))
        .collect();

    let per_scene: Vec<Vec<Episode>> = entries
        .par_iter()
        .zip(quotas.par_iter())
        .enumerate()
        .map(|(i, (entry, &quota))| {
            let mut rng = substream(constraints.seed, i as u64 + 1);
            sample_scene(&entry.scene.id, &entry.grid, quota, constraints, &mut rng)
        })
        .collect::<Result<_, _>>()?;

    let mut episodes = Vec::with_capacity(constraints.count);
    let mut cursors = vec![0usize; per_scene.len()];
    while episodes.len() < constraints.count {
        let s = episodes.len() % n;
        let mut e = per_scene[s][cursors[s]].clone();
        cursors[s] += 1;
        e.episode_id = format!("{}-{:06}", split.as_str(), episodes.len());
        episodes.push(e);
    }

    Ok(EpisodeDataset {
        header: DatasetHeader {
            version: DATASET_FORMAT_VERSION,
            split,
            seed: constraints.seed,
            constraints: constraints.clone(),
            scenes: entries.iter().map(|e| e.scene.id.clone()).collect(),
            grid_resolution: library.resolution,
        },
        episodes,
    })
}

fn sample_scene(
    scene_id: &str,
    grid: &Arc<nav::OccupancyGrid>,
    quota: usize,
    c: &GenerationConstraints,
    rng: &mut SimRng,
) -> Result<Vec<Episode>, DatasetError> {
    let nav_err = |source| DatasetError::Nav { scene: scene_id.to_string(), source };
    let mut out = Vec::with_capacity(quota);
    let mut rejections = 0u64;
    'goals: while out.len() < quota {
        let goal = nav::sample_navigable(grid, rng).map_err(nav_err)?;
        let field = nav::distance_field(grid, goal).map_err(nav_err)?;
        for _ in 0..STARTS_PER_GOAL {
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(DatasetError::SceneExhausted { scene: scene_id.to_string(), rejections });
            }
            let start = nav::sample_navigable(grid, rng).map_err(nav_err)?;
            let gdsp = field.geodesic_distance(start).map_err(nav_err)?;
            let euclidean = start.distance(goal);
            // Draw the acceptance coin and heading unconditionally so the
            // stream advances identically for every candidate.
            let coin: f64 = rng.gen();
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            if !(gdsp >= c.min_gdsp && gdsp <= c.max_gdsp) || euclidean <= 0.0 {
                rejections += 1;
                continue;
            }
            let ratio = gdsp / euclidean;
            if ratio < c.easy_ratio_threshold && coin >= c.easy_accept_prob {
                rejections += 1;
                continue;
            }
            rejections = 0;
            out.push(Episode {
                episode_id: String::new(),
                scene_id: scene_id.to_string(),
                start_position: start,
                start_heading: heading,
                goal_position: goal,
                gdsp,
                euclidean,
                ratio,
            });
            continue 'goals;
        }
    }
    Ok(out)
}

/// Infinite per-worker episode stream: blocks of one scene's episodes, with
/// block order reshuffled on every pass.
#[derive(Debug, Clone)]
pub struct BlockStream {
    blocks: Vec<Vec<Episode>>,
    order: Vec<usize>,
    rng: SimRng,
    block: usize,
    item: usize,
    pass: u64,
}

impl BlockStream {
    pub fn blocks(&self) -> &[Vec<Episode>] {
        &self.blocks
    }

    pub fn pass(&self) -> u64 {
        self.pass
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.blocks.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.block = 0;
        self.item = 0;
    }
}

impl Iterator for BlockStream {
    type Item = Episode;

    fn next(&mut self) -> Option<Episode> {
        if self.blocks.is_empty() {
            return None;
        }
        if self.block == self.order.len() {
            self.pass += 1;
            self.reshuffle();
        }
        let b = &self.blocks[self.order[self.block]];
        let e = b[self.item].clone();
        self.item += 1;
        if self.item == b.len() {
            self.item = 0;
            self.block += 1;
        }
        Some(e)
    }
}

/// Splits the dataset's scenes across `num_workers` (remainder to the
/// earliest workers) and returns one block-shuffled stream per worker.
pub fn block_shuffle_iterator(
    ds: &EpisodeDataset,
    num_workers: usize,
    block_size: usize,
    seed: u64,
) -> Result<Vec<BlockStream>, DatasetError> {
    let mut scenes: Vec<&str> = Vec::new();
    for e in &ds.episodes {
        if !scenes.contains(&e.scene_id.as_str()) {
            scenes.push(&e.scene_id);
        }
    }
    if num_workers == 0 || num_workers > scenes.len() {
        return Err(DatasetError::TooManyWorkers { workers: num_workers, scenes: scenes.len() });
    }
    let block_size = block_size.max(1);
    let base = scenes.len() / num_workers;
    let extra = scenes.len() % num_workers;
    let mut next = 0;
    let mut streams = Vec::with_capacity(num_workers);
    for w in 0..num_workers {
        let take = base + usize::from(w < extra);
        let owned: BTreeSet<&str> = scenes[next..next + take].iter().copied().collect();
        let mut blocks = Vec::new();
        for &scene in &scenes[next..next + take] {
            let eps: Vec<Episode> = ds.episodes.iter().filter(|e| e.scene_id == scene).cloned().collect();
            blocks.extend(eps.chunks(block_size).map(|c| c.to_vec()));
        }
        debug_assert!(blocks.iter().flatten().all(|e| owned.contains(e.scene_id.as_str())));
        next += take;
        let mut s = BlockStream {
            blocks,
            order: Vec::new(),
            rng: substream(seed, w as u64),
            block: 0,
            item: 0,
            pass: 0,
        };
        s.reshuffle();
        streams.push(s);
    }
    Ok(streams)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Summary {
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        })
    }
}

/// Counts over fixed-width bins; values past either end land in the
/// outermost bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub step: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(start: f64, end: f64, step: f64, values: impl IntoIterator<Item = f64>) -> Self {
        let bins = ((end - start) / step).round() as usize;
        let mut counts = vec![0u64; bins];
        for v in values {
            let k = ((v - start) / step).floor();
            let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
            counts[k] += 1;
        }
        Histogram { start, step, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub split: Split,
    pub count: usize,
    pub gdsp: Summary,
    pub euclidean: Summary,
    pub ratio: Summary,
    pub gdsp_histogram: Histogram,
    pub euclidean_histogram: Histogram,
    pub ratio_histogram: Histogram,
    pub easy_fraction: f64,
    /// Oracle path length in actions, when computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_actions: Option<Summary>,
}

pub fn dataset_stats(ds: &EpisodeDataset) -> Option<DatasetStats> {
    let gdsp: Vec<f64> = ds.episodes.iter().map(|e| e.gdsp).collect();
    let euclid: Vec<f64> = ds.episodes.iter().map(|e| e.euclidean).collect();
    let ratio: Vec<f64> = ds.episodes.iter().map(|e| e.ratio).collect();
    Some(DatasetStats {
        split: ds.header.split,
        count: ds.episodes.len(),
        gdsp: Summary::of(&gdsp)?,
        euclidean: Summary::of(&euclid)?,
        ratio: Summary::of(&ratio)?,
        gdsp_histogram: Histogram::new(0.0, 30.0, 1.0, gdsp.iter().copied()),
        euclidean_histogram: Histogram::new(0.0, 30.0, 1.0, euclid.iter().copied()),
        ratio_histogram: Histogram::new(1.0, 3.0, 0.1, ratio.iter().copied()),
        easy_fraction: ds.easy_fraction(ds.header.constraints.easy_ratio_threshold),
        oracle_actions: None,
    })
}

/// Runs the geodesic-gradient oracle on every episode and returns the
/// number of actions it took (including the final stop) per episode, along
/// with each outcome's success flag.
pub fn oracle_path_lengths(ds: &EpisodeDataset, library: &Arc<SceneLibrary>) -> Result<Vec<(u32, bool)>, DatasetError> {
    let mut env = Env::new(Arc::clone(library), EnvConfig { sensors: Vec::new(), ..Default::default() });
    let mut out = Vec::with_capacity(ds.episodes.len());
    for e in &ds.episodes {
        env.reset(e)?;
        loop {
            let a = env.oracle_action()?;
            if env.step(a)?.1 {
                break;
            }
        }
        let o = env.outcome().expect("episode finished");
        out.push((o.steps, o.success));
    }
    Ok(out)
}

/// Statistics including oracle action-length summary.
pub fn dataset_stats_with_oracle(ds: &EpisodeDataset, library: &Arc<SceneLibrary>) -> Result<Option<DatasetStats>, DatasetError> {
    let Some(mut stats) = dataset_stats(ds) else {
        return Ok(None);
    };
    let lengths: Vec<f64> = oracle_path_lengths(ds, library)?.iter().map(|&(s, _)| s as f64).collect();
    stats.oracle_actions = Summary::of(&lengths);
    Ok(Some(stats))
}
