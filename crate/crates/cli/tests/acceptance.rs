//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! runtime budget. Run with `cargo test -p navsim-cli --test acceptance`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use navsim::agents::{evaluate, AgentKind, EvalConfig, EvalReport, ReplayAgent};
use navsim::bench::{run_benchmark, BenchConfig, SensorSet};
use navsim::episodes::{generate_dataset, EpisodeDataset, GenerationConstraints, Split};
use navsim::geometry::{wrap_angle, Vec2};
use navsim::index::nearest_hit_brute_force;
use navsim::rng::substream;
use navsim::scene::{build_scene_graph, generate_scene, Scene, SceneGeometry, SceneParams, WallSegment};
use navsim::sensors::{column_direction, perturb_inverse_depth, render, CameraPose, SensorConfig, SensorSuite};
use navsim::sim::{create_simulator, Action, AgentConfig};
use navsim::task::{reward, spl, Env, EnvConfig, RewardParams, SceneLibrary};

type Outcome = Result<String, String>;

struct Ctx {
    scenes: Vec<Scene>,
    library: Arc<SceneLibrary>,
    dataset: Option<EpisodeDataset>,
}

fn obstacle_params() -> SceneParams {
    SceneParams {
        obstacles_per_room: (1, 3),
        ..SceneParams::default()
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (a + ab * t - p).length()
}

fn min_wall_distance(p: Vec2, walls: &[WallSegment]) -> f64 {
    walls
        .iter()
        .map(|w| point_segment_distance(p, w.a, w.b))
        .fold(f64::INFINITY, f64::min)
}

// 1 ---------------------------------------------------------------------

fn spl_suite() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    check(close(spl(true, 10.0, 10.0).unwrap(), 1.0), || "spl(true,10,10) != 1".into())?;
    check(close(spl(true, 5.0, 10.0).unwrap(), 0.5), || "spl(true,5,10) != 0.5".into())?;
    check(spl(false, 5.0, 10.0).unwrap() == 0.0, || "spl(false,..) != 0".into())?;
    let mut rng = substream(1, 1);
    for _ in 0..1000 {
        let s = rng.gen_bool(0.5);
        let l = rng.gen_range(0.01..50.0);
        let p = rng.gen_range(0.0..100.0);
        let p2 = p + rng.gen_range(0.0..10.0);
        let v = spl(s, l, p).unwrap();
        let v2 = spl(s, l, p2).unwrap();
        check((0.0..=1.0).contains(&v), || format!("spl {v} out of [0,1]"))?;
        check(v <= s as u8 as f64 + 1e-12, || format!("spl {v} > S"))?;
        check(v2 <= v + 1e-12, || format!("spl not monotone: p {p} -> {v}, p {p2} -> {v2}"))?;
    }
    Ok("3 point checks + 1000 randomized".into())
}

// 2 ---------------------------------------------------------------------

fn reward_suite(ctx: &Ctx) -> Outcome {
    let params = RewardParams::default();
    let r = reward(0.5, 0.1, true, &params);
    check((r - 10.39).abs() < 1e-12, || format!("reward point check {r} != 10.39"))?;

    let ds = generate_dataset(
        &ctx.library,
        &GenerationConstraints {
            count: 100,
            seed: 21,
            ..Default::default()
        },
        Split::Val,
    )
    .map_err(|e| e.to_string())?;
    let mut env = Env::new(
        Arc::clone(&ctx.library),
        EnvConfig {
            sensors: Vec::new(),
            ..Default::default()
        },
    );
    let mut rng = substream(2, 1);
    let mut max_err: f64 = 0.0;
    let mut successes = 0;
    for e in &ds.episodes {
        env.reset(e).map_err(|e| e.to_string())?;
        let start = env.state().unwrap().position;
        let d0 = env.distance_field().unwrap().geodesic_distance(start).map_err(|e| e.to_string())?;
        let len = rng.gen_range(0..300);
        let mut total = 0.0;
        let mut last;
        let mut t = 0;
        loop {
            let a = if t >= len {
                Action::Stop
            } else if env.oracle_action().is_ok() && rng.gen_bool(0.7) {
                env.oracle_action().unwrap()
            } else {
                [Action::MoveForward, Action::TurnLeft, Action::TurnRight][rng.gen_range(0..3)]
            };
            let (_, done, info) = env.step(a).map_err(|e| e.to_string())?;
            total += info.reward;
            last = info.distance;
            t += 1;
            if done {
                break;
            }
        }
        let o = env.outcome().unwrap();
        successes += o.success as u32;
        let expected = d0 - last + o.steps as f64 * params.lambda + if o.success { params.s } else { 0.0 };
        max_err = max_err.max((total - expected).abs());
    }
    check(max_err < 1e-9, || format!("telescoping mismatch {max_err:e}"))?;
    Ok(format!(
        "10.39 point check; 100 rollouts ({successes} successful), max |Σr - identity| = {max_err:.1e}"
    ))
}

// 3 ---------------------------------------------------------------------

fn fuzz_once(scenes: &[Scene]) -> Result<Vec<(u64, u64, u64)>, String> {
    let agent = AgentConfig::default();
    let mut finals = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let mut sim = create_simulator(build_scene_graph(scene), agent, Vec::new()).map_err(|e| e.to_string())?;
        let grid = scene.occupancy(0.05, agent.radius).map_err(|e| e.to_string())?;
        let mut rng = substream(3, i as u64);
        let cells = grid.navigable_cells();
        let start = grid.cell_center(cells[rng.gen_range(0..cells.len())] as usize);
        sim.set_agent_state(start, rng.gen_range(-3.14..3.14)).map_err(|e| e.to_string())?;
        for _ in 0..5000 {
            let before = *sim.state();
            let a = [Action::MoveForward, Action::MoveForward, Action::TurnLeft, Action::TurnRight][rng.gen_range(0..4)];
            let r = sim.act(a).map_err(|e| e.to_string())?;
            let after = *sim.state();
            let clearance = min_wall_distance(after.position, &scene.walls);
            check(clearance >= agent.radius - 1e-6, || {
                format!("scene {i}: penetration, clearance {clearance} at {:?}", after.position)
            })?;
            let moved = before.position.distance(after.position);
            check((0.0..=agent.forward_step + 1e-9).contains(&moved), || {
                format!("displacement {moved}")
            })?;
            match a {
                Action::MoveForward => {
                    check(after.heading == before.heading, || "forward changed heading".into())?;
                    check(
                        r.displacement >= moved - 1e-9 && r.displacement <= agent.forward_step + 1e-9,
                        || format!("path length {} vs net displacement {moved}", r.displacement),
                    )?;
                }
                _ => {
                    check(after.position == before.position, || "turn moved the agent".into())?;
                    let turned = wrap_angle(after.heading - before.heading).abs();
                    check((turned - agent.turn_angle.to_radians()).abs() < 1e-9, || {
                        format!("turn by {turned}")
                    })?;
                }
            }
        }
        let s = sim.state();
        finals.push((s.position.x.to_bits(), s.position.y.to_bits(), s.heading.to_bits()));
    }
    Ok(finals)
}

fn kinematics_fuzz() -> Outcome {
    let scenes: Vec<Scene> = (0..20).map(|i| generate_scene(200 + i, &obstacle_params()).scene).collect();
    let a = fuzz_once(&scenes)?;
    let b = fuzz_once(&scenes)?;
    check(a == b, || "two runs diverged".into())?;
    Ok("100000 actions over 20 scenes, deterministic".into())
}

// 4 ---------------------------------------------------------------------

struct FineGrid {
    origin: Vec2,
    res: f64,
    w: usize,
    h: usize,
    free: Vec<bool>,
}

impl FineGrid {
    fn new(scene: &Scene, res: f64, radius: f64) -> Self {
        let b = scene.bounds();
        let w = (b.width() / res).ceil() as usize;
        let h = (b.height() / res).ceil() as usize;
        // Bucket segments by coarse tile to keep the brute-force clearance test cheap.
        let tile = 1.0;
        let tw = (b.width() / tile).ceil() as usize + 1;
        let th = (b.height() / tile).ceil() as usize + 1;
        let mut tiles: Vec<Vec<usize>> = vec![Vec::new(); tw * th];
        for (k, s) in scene.walls.iter().enumerate() {
            let lo = Vec2::new(s.a.x.min(s.b.x) - radius, s.a.y.min(s.b.y) - radius);
            let hi = Vec2::new(s.a.x.max(s.b.x) + radius, s.a.y.max(s.b.y) + radius);
            let x0 = ((lo.x - b.min.x) / tile).floor().max(0.0) as usize;
            let y0 = ((lo.y - b.min.y) / tile).floor().max(0.0) as usize;
            let x1 = (((hi.x - b.min.x) / tile).floor() as usize).min(tw - 1);
            let y1 = (((hi.y - b.min.y) / tile).floor() as usize).min(th - 1);
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    tiles[ty * tw + tx].push(k);
                }
            }
        }
        let mut free = vec![false; w * h];
        for iy in 0..h {
            for ix in 0..w {
                let p = b.min + Vec2::new((ix as f64 + 0.5) * res, (iy as f64 + 0.5) * res);
                let tx = (((p.x - b.min.x) / tile) as usize).min(tw - 1);
                let ty = (((p.y - b.min.y) / tile) as usize).min(th - 1);
                free[iy * w + ix] = tiles[ty * tw + tx]
                    .iter()
                    .all(|&k| point_segment_distance(p, scene.walls[k].a, scene.walls[k].b) >= radius);
            }
        }
        FineGrid {
            origin: b.min,
            res,
            w,
            h,
            free,
        }
    }

    fn cell(&self, p: Vec2) -> Option<usize> {
        let x = ((p.x - self.origin.x) / self.res).floor();
        let y = ((p.y - self.origin.y) / self.res).floor();
        if x < 0.0 || y < 0.0 || x >= self.w as f64 || y >= self.h as f64 {
            return None;
        }
        let c = y as usize * self.w + x as usize;
        self.free[c].then_some(c)
    }

    /// Grid Dijkstra from `src` over the given moves, stopping once every
    /// target is settled. A move is allowed only when every cell in its
    /// bounding box is free (no corner cutting).
    fn distances(&self, src: usize, targets: &[usize], moves: &[(isize, isize)]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.w * self.h];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Reverse((0u64, src)));
        let mut remaining: Vec<usize> = targets.to_vec();
        let (w, h) = (self.w as isize, self.h as isize);
        let free = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && self.free[(y * w + x) as usize];
        while let Some(Reverse((bits, c))) = heap.pop() {
            let d = f64::from_bits(bits);
            if d > dist[c] {
                continue;
            }
            remaining.retain(|&t| t != c);
            if remaining.is_empty() {
                break;
            }
            let (x, y) = ((c % self.w) as isize, (c / self.w) as isize);
            for &(dx, dy) in moves {
                let clear = (x.min(x + dx)..=x.max(x + dx)).all(|cx| (y.min(y + dy)..=y.max(y + dy)).all(|cy| free(cx, cy)));
                if !clear {
                    continue;
                }
                let n = ((y + dy) * w + x + dx) as usize;
                let nd = d + self.res * ((dx * dx + dy * dy) as f64).sqrt();
                if nd < dist[n] {
                    dist[n] = nd;
                    heap.push(Reverse((nd.to_bits(), n)));
                }
            }
        }
        targets.iter().map(|&t| dist[t]).collect()
    }
}

const MOVES_8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

fn geodesic_correctness(ctx: &Ctx) -> Outcome {
    let radius = AgentConfig::default().radius;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let mut over = Vec::new();
    for (si, scene) in ctx.scenes.iter().enumerate() {
        let entry = ctx.library.get(&scene.id).map_err(|e| e.to_string())?;
        let fine = FineGrid::new(scene, 0.01, radius);
        let mut rng = substream(4, si as u64);
        let cells = entry.grid.navigable_cells();
        let pick = |rng: &mut navsim::rng::SimRng| loop {
            let p = entry.grid.cell_center(cells[rng.gen_range(0..cells.len())] as usize);
            if let Some(c) = fine.cell(p) {
                return (p, c);
            }
        };
        let mut scene_pairs = 0;
        while scene_pairs < 50 {
            let (goal, goal_cell) = pick(&mut rng);
            let starts: Vec<(Vec2, usize)> = (0..20)
                .map(|_| pick(&mut rng))
                .filter(|(p, _)| p.distance(goal) >= 1.0)
                .take(5)
                .collect();
            let targets: Vec<usize> = starts.iter().map(|s| s.1).collect();
            let oracle = fine.distances(goal_cell, &targets, &MOVES_8);
            let field = ctx.library.distance_field(&scene.id, goal).map_err(|e| e.to_string())?;
            for ((p, _), o) in starts.iter().zip(oracle) {
                let ours = field.geodesic_distance(*p).map_err(|e| e.to_string())?;
                check(ours.is_finite() == o.is_finite(), || {
                    format!("reachability differs at {p:?}: {ours} vs {o}")
                })?;
                if !o.is_finite() {
                    continue;
                }
                let rel = (ours - o).abs() / o;
                worst = worst.max(rel);
                if rel > 0.03 {
                    over.push(format!("{}: {ours:.3} vs {o:.3} (euclidean {:.3})", scene.id, p.distance(goal)));
                }
                scene_pairs += 1;
                pairs += 1;
                if scene_pairs == 50 {
                    break;
                }
            }
        }
    }

    check(over.is_empty(), || {
        format!(
            "{} of {pairs} pairs above 3% (worst {:.1}%): {}",
            over.len(),
            worst * 100.0,
            over.join(", ")
        )
    })?;

    let res = ctx.library.resolution;
    let mut lower = 0;
    let mut rng = substream(4, 99);
    for k in 0..50 {
        let scene = &ctx.scenes[k % ctx.scenes.len()];
        let entry = ctx.library.get(&scene.id).map_err(|e| e.to_string())?;
        let cells = entry.grid.navigable_cells();
        let goal = entry.grid.cell_center(cells[rng.gen_range(0..cells.len())] as usize);
        let field = ctx.library.distance_field(&scene.id, goal).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let p = entry.grid.cell_center(cells[rng.gen_range(0..cells.len())] as usize);
            let g = field.geodesic_distance(p).map_err(|e| e.to_string())?;
            if g.is_finite() {
                check(g >= p.distance(goal) - 2.0 * res, || {
                    format!("geodesic {g} below euclidean {}", p.distance(goal))
                })?;
            }
            lower += 1;
        }
    }
    Ok(format!(
        "{pairs} pairs vs 0.01 m oracle, worst {:.2}%; {lower} lower-bound pairs",
        worst * 100.0
    ))
}

// 5 ---------------------------------------------------------------------

fn episode_generation(ctx: &mut Ctx) -> Outcome {
    let constraints = GenerationConstraints {
        count: 1000,
        seed: 5,
        ..Default::default()
    };
    let ds = generate_dataset(&ctx.library, &constraints, Split::Test).map_err(|e| e.to_string())?;
    let base = generate_dataset(
        &ctx.library,
        &GenerationConstraints {
            easy_accept_prob: 1.0,
            ..constraints.clone()
        },
        Split::Test,
    )
    .map_err(|e| e.to_string())?;
    check(ds.episodes.len() == 1000, || "wrong episode count".into())?;
    for e in &ds.episodes {
        check((1.0..=30.0).contains(&e.gdsp), || format!("{} gdsp {}", e.episode_id, e.gdsp))?;
        let field = ctx
            .library
            .distance_field(&e.scene_id, e.goal_position)
            .map_err(|e| e.to_string())?;
        let g = field.geodesic_distance(e.start_position).map_err(|e| e.to_string())?;
        check((g - e.gdsp).abs() <= 1e-6, || {
            format!("{} stored {} recomputed {g}", e.episode_id, e.gdsp)
        })?;
    }
    let easy = ds.easy_fraction(1.1);
    let easy_base = base.easy_fraction(1.1);
    check(easy <= 0.15, || format!("easy fraction {easy:.3} > 0.15"))?;
    check(easy < easy_base, || {
        format!("easy fraction {easy:.3} not below baseline {easy_base:.3}")
    })?;
    ctx.dataset = Some(ds);
    Ok(format!(
        "1000 episodes, gdsp in [1,30], easy {:.1}% (baseline {:.1}%)",
        easy * 100.0,
        easy_base * 100.0
    ))
}

fn dataset(ctx: &mut Ctx) -> Result<EpisodeDataset, String> {
    if ctx.dataset.is_none() {
        let constraints = GenerationConstraints {
            count: 1000,
            seed: 5,
            ..Default::default()
        };
        ctx.dataset = Some(generate_dataset(&ctx.library, &constraints, Split::Test).map_err(|e| e.to_string())?);
    }
    Ok(ctx.dataset.clone().unwrap())
}

// 6 ---------------------------------------------------------------------

fn oracle_completeness(ctx: &mut Ctx) -> Outcome {
    let ds = dataset(ctx)?;
    let cfg = EvalConfig {
        seeds: vec![0],
        keep_records: true,
        ..Default::default()
    };
    let r = evaluate(&|s| AgentKind::Oracle.build(s), "test", &ds, &ctx.library, &cfg).map_err(|e| e.to_string())?;
    check(r.errors.is_empty(), || format!("errors: {:?}", &r.errors[..r.errors.len().min(3)]))?;
    let max_steps = r
        .records
        .iter()
        .filter_map(|x| x.outcome.as_ref())
        .map(|o| o.steps)
        .max()
        .unwrap_or(0);
    check(r.success_rate == 1.0, || format!("oracle success {}", r.success_rate))?;
    check(max_steps < 500, || format!("oracle needed {max_steps} steps"))?;
    check(r.spl_mean >= 0.9, || format!("oracle SPL {:.3}", r.spl_mean))?;
    Ok(format!("success 1.000, SPL {:.3}, max {} steps", r.spl_mean, max_steps))
}

// 7 + 8 -------------------------------------------------------------------

/// Mean SPL and its standard error over every (episode, seed) record.
fn spl_interval(r: &EvalReport) -> (f64, f64) {
    let v: Vec<f64> = r.records.iter().map(|x| x.spl()).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn baselines(ctx: &mut Ctx) -> Result<(Outcome, Outcome), String> {
    let ds = dataset(ctx)?;
    let small = EpisodeDataset {
        header: ds.header.clone(),
        episodes: ds.episodes[..100].to_vec(),
    };
    let cfg = EvalConfig {
        seeds: vec![0, 1, 2],
        keep_records: true,
        ..Default::default()
    };
    let kinds = [
        AgentKind::Oracle,
        AgentKind::Mapper,
        AgentKind::GoalFollower,
        AgentKind::Random,
        AgentKind::Forward,
    ];
    let mut reports = Vec::new();
    for k in kinds {
        let r = evaluate(&|s| k.build(s), "test", &small, &ctx.library, &cfg).map_err(|e| e.to_string())?;
        check(r.errors.is_empty(), || {
            format!("{}: {:?}", r.agent, &r.errors[..r.errors.len().min(3)])
        })?;
        reports.push(r);
    }
    print!("{}", navsim::agents::render_table(&reports));
    let iv: Vec<(f64, f64)> = reports.iter().map(spl_interval).collect();
    let [oracle, mapper, follower, random, forward] = [iv[0], iv[1], iv[2], iv[3], iv[4]];
    let summary = format!(
        "SPL oracle {:.3}±{:.3} > mapper {:.3}±{:.3} >= follower {:.3}±{:.3} > random {:.3}±{:.3} >= forward {:.3}",
        oracle.0, oracle.1, mapper.0, mapper.1, follower.0, follower.1, random.0, random.1, forward.0
    );
    let ordering: Outcome = (|| {
        check(oracle.0 - oracle.1 > mapper.0 + mapper.1, || {
            "oracle/mapper intervals overlap".into()
        })?;
        check(mapper.0 >= follower.0, || "mapper below goal follower".into())?;
        check(follower.0 - follower.1 > random.0 + random.1, || {
            "follower/random intervals overlap".into()
        })?;
        check(random.0 >= forward.0, || "random below forward".into())?;
        check(random.0 <= 0.1, || "random SPL above 0.1".into())?;
        check(forward.0 <= 0.05, || "forward-only SPL not near 0".into())?;
        Ok(summary.clone())
    })();
    let (cm, cf) = (reports[1].collisions_mean, reports[2].collisions_mean);
    let collisions: Outcome = if cf >= cm {
        Ok(format!(
            "collisions on success: follower {cf:.1} >= mapper {cm:.1} (all episodes: {:.1} vs {:.1})",
            reports[2].collisions_all_mean, reports[1].collisions_all_mean
        ))
    } else {
        Err(format!("collisions: follower {cf:.1} < mapper {cm:.1}"))
    };
    Ok((ordering.map_err(|e| format!("{e}; {summary}")), collisions))
}

// 9 ---------------------------------------------------------------------

fn render_consistency() -> Outcome {
    let suite = SensorSuite::new(vec![
        SensorConfig::rgb(256, 256),
        SensorConfig::depth(256, 256),
        SensorConfig::semantic(256, 256),
    ])
    .map_err(|e| e.to_string())?;
    let intr = suite.intrinsics().unwrap();
    let pose = |x: f64, y: f64, heading: f64| CameraPose {
        position: Vec2::new(x, y),
        heading,
        height: 1.5,
    };

    // Channel consistency on full frames, including far walls beyond range.
    let scene = generate_scene(9, &obstacle_params()).scene;
    let geo = SceneGeometry::from_scene(&scene);
    let grid = scene.occupancy(0.1, 0.1).map_err(|e| e.to_string())?;
    let mut rng = substream(9, 1);
    let (mut hits, mut voids) = (0usize, 0usize);
    for _ in 0..8 {
        let c = grid.navigable_cells()[rng.gen_range(0..grid.navigable_count())] as usize;
        let p = grid.cell_center(c);
        let f = render(&geo, &pose(p.x, p.y, rng.gen_range(-3.14..3.14)), &suite);
        let (rgb, depth, sem) = (f.rgb.unwrap(), f.depth.unwrap(), f.semantic.unwrap());
        for k in 0..depth.data.len() {
            let hit = depth.data[k] < depth.max_range;
            check(hit == (sem.data[k] != 0), || "depth/semantic hit mismatch".into())?;
            check(hit == (rgb.data[k] != [0.0; 3]), || "depth/rgb hit mismatch".into())?;
            if hit {
                hits += 1;
            } else {
                voids += 1;
            }
        }
    }

    // Frontal wall 3 m ahead.
    let room = Scene::rectangle_room("front", Vec2::new(-10.0, -10.0), Vec2::new(3.0, 10.0));
    let geo_room = SceneGeometry::from_scene(&room);
    let front_id = room
        .walls
        .iter()
        .find(|w| w.a.x == 3.0 && w.b.x == 3.0)
        .map(|w| w.semantic_id as u16)
        .ok_or("no frontal wall")?;
    let f = render(&geo_room, &pose(0.0, 0.0, 0.0), &suite);
    let (depth, sem) = (f.depth.unwrap(), f.semantic.unwrap());
    let mut worst: f64 = 0.0;
    let mut front_px = 0;
    for k in 0..depth.data.len() {
        if sem.data[k] == front_id {
            worst = worst.max((depth.data[k] as f64 - 3.0).abs());
            front_px += 1;
        }
    }
    check(front_px >= 256, || "frontal wall not visible".into())?;
    check(worst <= 1e-5, || format!("frontal depth error {worst:e}"))?;

    // Accelerated index vs brute force on 100 random columns.
    for _ in 0..100 {
        let c = grid.navigable_cells()[rng.gen_range(0..grid.navigable_count())] as usize;
        let p = grid.cell_center(c);
        let cam = pose(p.x, p.y, rng.gen_range(-3.14..3.14));
        let dir = column_direction(&cam, &intr, rng.gen_range(0..256));
        let fast = geo.index.nearest_hit(cam.position, dir, f64::INFINITY);
        let slow = nearest_hit_brute_force(geo.segments(), cam.position, dir, f64::INFINITY);
        check(fast == slow, || format!("index {fast:?} vs brute force {slow:?}"))?;
    }

    // Mirror symmetry in a room symmetric about the view axis.
    let sym = Scene::rectangle_room("sym", Vec2::new(-3.0, -4.0), Vec2::new(5.0, 4.0));
    let f = render(&SceneGeometry::from_scene(&sym), &pose(0.0, 0.0, 0.0), &suite);
    let depth = f.depth.unwrap();
    let mut asym: f64 = 0.0;
    for i in 0..256 {
        for j in 0..128 {
            asym = asym.max((depth.get(i, j) - depth.get(i, 255 - j)).abs() as f64);
        }
    }
    check(asym <= 1e-5, || format!("left-right asymmetry {asym:e}"))?;
    Ok(format!(
        "{hits} hit / {voids} void px consistent; frontal error {worst:.1e}; 100 index checks; asymmetry {asym:.1e}"
    ))
}

// 10 --------------------------------------------------------------------

fn noise_moments() -> Outcome {
    let sigma = 0.4;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = substream(10, 1);
    let n = 100_000;
    let inv: Vec<f64> = (0..n).map(|_| 1.0 / perturb_inverse_depth(2.0, normal.sample(&mut rng))).collect();
    let mean = inv.iter().sum::<f64>() / n as f64;
    let std = (inv.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    check((std - 0.4).abs() <= 0.01, || format!("std(1/d') = {std:.4}"))?;

    // Same statistic through the image path, for reference (clamped).
    let mut frame = navsim::sensors::DepthImage {
        width: n,
        height: 1,
        max_range: 10.0,
        data: vec![2.0; n],
    };
    navsim::sensors::apply_inverse_depth_noise(&mut frame, sigma, &mut substream(10, 2));
    let inv_img: Vec<f64> = frame.data.iter().map(|&d| 1.0 / d as f64).collect();
    let m2 = inv_img.iter().sum::<f64>() / n as f64;
    let s2 = (inv_img.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    Ok(format!("std(1/d') = {std:.4}, mean {mean:.4} (after range clamp: {s2:.4})"))
}

// 11 --------------------------------------------------------------------

fn benchmark() -> Outcome {
    let scene = generate_scene(7, &SceneParams::default()).scene;
    check(scene.walls.len() <= 200, || "bench scene too large".into())?;
    let grid = run_benchmark(&BenchConfig {
        frames: 600,
        warmup: 100,
        trials: 3,
        ..BenchConfig::new(scene.clone())
    })
    .map_err(|e| e.to_string())?;
    print!("{}", navsim::bench::render_report(&grid, navsim::bench::ReportFormat::Text));
    check(
        grid.cells.len() == 18 && grid.cells.iter().all(|c| c.aggregate_fps.is_some()),
        || "incomplete grid".into(),
    )?;
    for s in SensorSet::ALL {
        for w in [1, 5] {
            let f: Vec<f64> = [128, 256, 512].iter().map(|&r| grid.fps(s, r, w).unwrap()).collect();
            check(f[0] > f[1] && f[1] > f[2], || {
                format!("{} x{w}: fps not decreasing in resolution {f:?}", s.label())
            })?;
        }
    }
    let floor = grid.fps(SensorSet::Rgbd, 128, 1).unwrap();
    check(floor >= 500.0, || format!("RGB+depth 128² single worker {floor:.0} fps < 500"))?;

    let single = run_benchmark(&BenchConfig {
        frames: 600,
        warmup: 100,
        trials: 9,
        workers: vec![1],
        ..BenchConfig::new(scene)
    })
    .map_err(|e| e.to_string())?;
    for r in [128, 256, 512] {
        let f: Vec<f64> = SensorSet::ALL.iter().map(|&s| single.fps(s, r, 1).unwrap()).collect();
        check(f[0] >= f[1] * 0.97 && f[1] >= f[2] * 0.97, || {
            format!("{r}²: fps not decreasing with channels {f:?}")
        })?;
    }
    let cpus = grid.host.cpus;
    let scaling = if cpus >= 4 {
        let (one, five) = (grid.fps(SensorSet::Rgb, 128, 1).unwrap(), grid.fps(SensorSet::Rgb, 128, 5).unwrap());
        check(five > one, || format!("5 workers {five:.0} fps not above 1 worker {one:.0}"))?;
        format!("5-worker scaling {:.2}x", five / one)
    } else {
        format!("worker scaling not applicable on {cpus} cpu(s)")
    };
    Ok(format!("18-cell report, monotone; RGB+depth 128² = {floor:.0} fps; {scaling}"))
}

// 12 --------------------------------------------------------------------

fn teleop(ctx: &mut Ctx) -> Outcome {
    use futures::{SinkExt, StreamExt};
    use navsim_teleop::ServerMessage;
    use tokio_tungstenite::tungstenite::Message;

    let ds = dataset(ctx)?;
    let episode = ds.episodes[0].clone();
    let one = Arc::new(EpisodeDataset {
        header: ds.header.clone(),
        episodes: vec![episode.clone()],
    });
    let log = tempfile::NamedTempFile::new().map_err(|e| e.to_string())?;
    let library = Arc::clone(&ctx.library);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let (spl_session, actions, rejected) = rt.block_on(async {
        let config = navsim_teleop::ServerConfig {
            resolution: 64,
            log_path: Some(log.path().to_path_buf()),
            step_delay: Some(Duration::from_millis(50)),
            ..Default::default()
        };
        let state = Arc::new(navsim_teleop::TeleopState::new(Arc::clone(&library), Arc::clone(&one), config).map_err(|e| e.to_string())?);
        let (addr, fut) = navsim_teleop::bind("127.0.0.1:0".parse().unwrap(), state)
            .await
            .map_err(|e| e.to_string())?;
        tokio::spawn(fut);
        let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws"))
            .await
            .map_err(|e| e.to_string())?;
        let mut recv = async || -> Result<ServerMessage, String> {
            loop {
                let m = tokio::time::timeout(Duration::from_secs(10), ws.next())
                    .await
                    .map_err(|_| "timeout".to_string())?
                    .ok_or("closed")?
                    .map_err(|e| e.to_string())?;
                if let Message::Text(t) = m {
                    return serde_json::from_str(t.as_str()).map_err(|e| e.to_string());
                }
            }
        };
        let _ = recv().await?;
        drop(recv);
        ws.send(Message::Text(
            format!(r#"{{"type":"reset","episode_id":"{}"}}"#, episode.episode_id).into(),
        ))
        .await
        .map_err(|e| e.to_string())?;

        // Drive with the privileged oracle running on a shadow environment.
        let mut shadow = Env::new(
            Arc::clone(&library),
            EnvConfig {
                sensors: Vec::new(),
                ..Default::default()
            },
        );
        shadow.reset(&episode).map_err(|e| e.to_string())?;
        let mut actions = Vec::new();
        let mut rejected = false;
        let spl_session;
        loop {
            let m = {
                let next = tokio::time::timeout(Duration::from_secs(10), ws.next())
                    .await
                    .map_err(|_| "timeout")?;
                match next.ok_or("closed")?.map_err(|e| e.to_string())? {
                    Message::Text(t) => serde_json::from_str::<ServerMessage>(t.as_str()).map_err(|e| e.to_string())?,
                    _ => continue,
                }
            };
            match m {
                ServerMessage::Observation(_) => {
                    if shadow.is_done() {
                        continue;
                    }
                    let a = shadow.oracle_action().map_err(|e| e.to_string())?;
                    shadow.step(a).map_err(|e| e.to_string())?;
                    actions.push(a);
                    let msg = format!(r#"{{"type":"act","action":"{}"}}"#, a.as_str());
                    ws.send(Message::Text(msg.clone().into())).await.map_err(|e| e.to_string())?;
                    if actions.len() == 3 {
                        // Second act while the first is in flight.
                        ws.send(Message::Text(msg.into())).await.map_err(|e| e.to_string())?;
                    }
                }
                ServerMessage::Error { code, .. } if code == "out_of_order" => rejected = true,
                ServerMessage::Done(d) => {
                    spl_session = d.spl;
                    break;
                }
                other => return Err(format!("unexpected frame {other:?}")),
            }
        }
        let _ = ws.close(None).await;
        Ok::<_, String>((spl_session, actions, rejected))
    })?;
    check(rejected, || "out-of-order act was not rejected".into())?;

    let text = std::fs::read_to_string(log.path()).map_err(|e| e.to_string())?;
    let record: navsim_teleop::TrajectoryRecord =
        serde_json::from_str(text.lines().next().ok_or("empty trajectory log")?).map_err(|e| e.to_string())?;
    check(record.actions == actions, || "logged actions differ from sent actions".into())?;
    let logged = record.actions.clone();
    let report = evaluate(
        &move |_| Box::new(ReplayAgent::new(logged.clone())),
        "teleop",
        &one,
        &ctx.library,
        &EvalConfig {
            seeds: vec![0],
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    check(report.spl_mean == spl_session, || {
        format!("replayed SPL {} != session SPL {spl_session}", report.spl_mean)
    })?;
    Ok(format!(
        "{} actions, session SPL {spl_session:.4} reproduced exactly, out-of-order act rejected",
        actions.len()
    ))
}

// -----------------------------------------------------------------------

struct Runner {
    failures: usize,
    only: Option<Vec<usize>>,
}

impl Runner {
    /// `ACCEPTANCE_ONLY=3,4` restricts the run to the listed criteria.
    fn selected(&self, n: usize) -> bool {
        self.only.as_ref().is_none_or(|v| v.contains(&n))
    }

    fn run(&mut self, n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        if !self.selected(n) {
            return;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t.elapsed();
        self.report(n, name, budget, elapsed, result);
    }

    fn report(&mut self, n: usize, name: &str, budget: Duration, elapsed: Duration, result: Outcome) {
        let result = match result {
            Ok(s) if elapsed > budget => Err(format!("over budget ({:.0?} > {:.0?}): {s}", elapsed, budget)),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {n:>2} {name} [{:.1}s] {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {n:>2} {name} [{:.1}s] {detail}", elapsed.as_secs_f64())
            }
        }
    }
}

fn main() {
    let setup = Instant::now();
    let scenes: Vec<Scene> = (100..105).map(|s| generate_scene(s, &obstacle_params()).scene).collect();
    let library = Arc::new(SceneLibrary::for_agent(scenes.clone(), &AgentConfig::default()).expect("scene library"));
    let mut ctx = Ctx {
        scenes,
        library,
        dataset: None,
    };
    println!("setup: 5 procedural scenes in {:.1}s", setup.elapsed().as_secs_f64());

    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut r = Runner { failures: 0, only };
    let s = Duration::from_secs;
    r.run(1, "SPL formula", s(1), spl_suite);
    r.run(2, "reward", s(5), || reward_suite(&ctx));
    r.run(3, "kinematics/collision fuzz", s(60), kinematics_fuzz);
    r.run(4, "geodesic correctness", s(120), || geodesic_correctness(&ctx));
    r.run(5, "episode generation", s(180), || episode_generation(&mut ctx));
    r.run(6, "oracle completeness", s(180), || oracle_completeness(&mut ctx));

    if r.selected(7) || r.selected(8) {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| baselines(&mut ctx)));
        let elapsed = t.elapsed();
        let (ordering, collisions) = match outcome {
            Ok(Ok(pair)) => pair,
            Ok(Err(e)) => (Err(e.clone()), Err(e)),
            Err(_) => (Err("panicked".to_string()), Err("panicked".to_string())),
        };
        r.report(7, "baseline ordering", s(600), elapsed, ordering);
        r.report(8, "collision analysis", s(600), elapsed, collisions);
    }

    r.run(9, "render consistency", s(30), render_consistency);
    r.run(10, "inverse-depth noise", s(10), noise_moments);
    r.run(11, "benchmark harness", s(600), benchmark);
    r.run(12, "teleop protocol", s(30), || teleop(&mut ctx));

    let ran = (1..=12).filter(|&n| r.selected(n)).count();
    println!("{} of {ran} criteria passed", ran - r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
