//! Baseline agents behind a common observation-to-action interface.

mod eval;
mod mapper;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Vec2};
use crate::index::SegmentIndex;
use crate::nav::{self, DistanceField};
use crate::rng::{substream, SimRng};
use crate::sensors::{EpisodeFrame, Observations, SensorKind};
use crate::sim::{Action, AgentConfig, AgentState};
use crate::task::SUCCESS_RADIUS;

pub use eval::{
    evaluate, evaluate_matrix, render_table, CrossMatrix, EpisodeRecord, EvalConfig, EvalReport, MatrixCell, MatrixRow,
    SeedSummary,
};
pub use mapper::{MapperAgent, MapperParams, OccupancyMap};

/// Heading error beyond which the goal follower turns instead of moving.
pub const ALIGN_THRESHOLD_DEG: f64 = 15.0;

/// Simulator internals handed only to agents that declare themselves
/// privileged.
#[derive(Debug, Clone)]
pub struct Privileged {
    pub field: Arc<DistanceField>,
    pub walls: Arc<SegmentIndex>,
    pub agent: AgentConfig,
    pub frame: EpisodeFrame,
    pub success_radius: f64,
}

/// Per-episode information given to an agent on reset.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    /// Goal in the episode frame.
    pub pointgoal: Vec2,
    /// Seed for any randomness the agent uses during this episode.
    pub seed: u64,
    pub privileged: Option<Privileged>,
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    /// Visual and pose sensors the agent needs.
    fn sensors(&self) -> Vec<SensorKind> {
        vec![SensorKind::GpsCompass]
    }

    /// Whether the agent reads simulator internals; such results are not
    /// comparable with sensor-only agents.
    fn privileged(&self) -> bool {
        false
    }

    fn reset(&mut self, ctx: &EpisodeContext);

    fn act(&mut self, obs: &Observations) -> Action;
}

fn pose(obs: &Observations) -> (Vec2, f64) {
    (
        obs.gps.expect("agent requires the GPS+Compass sensor"),
        obs.compass.expect("agent requires the GPS+Compass sensor"),
    )
}

/// Euclidean stop test from the static goal and current GPS reading.
fn near_goal(gps: Vec2, goal: Vec2) -> bool {
    gps.distance(goal) <= SUCCESS_RADIUS
}

/// Turn towards `target` when more than the alignment threshold off-axis,
/// otherwise move forward. Exact opposite bearings turn left.
pub fn steer_towards(gps: Vec2, compass: f64, target: Vec2) -> Action {
    let error = bearing_error(gps, compass, target);
    if error.abs() > ALIGN_THRESHOLD_DEG.to_radians() {
        if error > 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        }
    } else {
        Action::MoveForward
    }
}

/// Signed angle from the agent heading to the direction of `target`, in
/// (-π, π]; positive means the target is to the left.
pub fn bearing_error(gps: Vec2, compass: f64, target: Vec2) -> f64 {
    wrap_angle((target - gps).angle() - compass)
}

#[derive(Debug, Clone)]
pub struct RandomAgent {
    seed: u64,
    rng: SimRng,
    goal: Vec2,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            seed,
            rng: substream(seed, 0),
            goal: Vec2::ZERO,
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self, ctx: &EpisodeContext) {
        self.goal = ctx.pointgoal;
        self.rng = substream(ctx.seed, self.seed);
    }

    fn act(&mut self, obs: &Observations) -> Action {
        let (gps, _) = pose(obs);
        if near_goal(gps, self.goal) {
            return Action::Stop;
        }
        [Action::MoveForward, Action::TurnLeft, Action::TurnRight][self.rng.gen_range(0..3)]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOnlyAgent {
    goal: Vec2,
}

impl ForwardOnlyAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Agent for ForwardOnlyAgent {
    fn name(&self) -> &str {
        "forward_only"
    }

    fn reset(&mut self, ctx: &EpisodeContext) {
        self.goal = ctx.pointgoal;
    }

    fn act(&mut self, obs: &Observations) -> Action {
        let (gps, _) = pose(obs);
        if near_goal(gps, self.goal) {
            Action::Stop
        } else {
            Action::MoveForward
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GoalFollowerAgent {
    goal: Vec2,
}

impl GoalFollowerAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Agent for GoalFollowerAgent {
    fn name(&self) -> &str {
        "goal_follower"
    }

    fn reset(&mut self, ctx: &EpisodeContext) {
        self.goal = ctx.pointgoal;
    }

    fn act(&mut self, obs: &Observations) -> Action {
        let (gps, compass) = pose(obs);
        if near_goal(gps, self.goal) {
            return Action::Stop;
        }
        steer_towards(gps, compass, self.goal)
    }
}

/// Follows the negative gradient of the true geodesic distance field.
#[derive(Debug, Clone, Default)]
pub struct OracleAgent {
    privileged: Option<Privileged>,
}

impl OracleAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn privileged(&self) -> bool {
        true
    }

    fn reset(&mut self, ctx: &EpisodeContext) {
        self.privileged = ctx.privileged.clone();
    }

    fn act(&mut self, obs: &Observations) -> Action {
        let p = self.privileged.as_ref().expect("oracle needs privileged access");
        let (gps, compass) = pose(obs);
        let state = AgentState::at(p.frame.to_world(gps), wrap_angle(compass + p.frame.heading));
        nav::greedy_gradient_action(&p.field, &p.walls, &p.agent, &state, p.success_radius).unwrap_or(Action::Stop)
    }
}

/// Plays back a fixed action list, then stops.
#[derive(Debug, Clone)]
pub struct ReplayAgent {
    actions: Vec<Action>,
    next: usize,
}

impl ReplayAgent {
    pub fn new(actions: Vec<Action>) -> Self {
        ReplayAgent { actions, next: 0 }
    }
}

impl Agent for ReplayAgent {
    fn name(&self) -> &str {
        "replay"
    }

    fn sensors(&self) -> Vec<SensorKind> {
        Vec::new()
    }

    fn reset(&mut self, _ctx: &EpisodeContext) {
        self.next = 0;
    }

    fn act(&mut self, _obs: &Observations) -> Action {
        let a = self.actions.get(self.next).copied().unwrap_or(Action::Stop);
        self.next += 1;
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Random,
    Forward,
    GoalFollower,
    Oracle,
    Mapper,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::Oracle,
        AgentKind::Mapper,
        AgentKind::GoalFollower,
        AgentKind::Random,
        AgentKind::Forward,
    ];

    pub fn parse(s: &str) -> Option<AgentKind> {
        match s {
            "random" => Some(AgentKind::Random),
            "forward" | "forward_only" | "forward-only" => Some(AgentKind::Forward),
            "goal-follower" | "goal_follower" => Some(AgentKind::GoalFollower),
            "oracle" => Some(AgentKind::Oracle),
            "mapper" | "mapping_planner" => Some(AgentKind::Mapper),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Random => "Random",
            AgentKind::Forward => "Forward only",
            AgentKind::GoalFollower => "Goal follower",
            AgentKind::Oracle => "Oracle (privileged)",
            AgentKind::Mapper => "Mapping + planning",
        }
    }

    pub fn build(self, seed: u64) -> Box<dyn Agent> {
        match self {
            AgentKind::Random => Box::new(RandomAgent::new(seed)),
            AgentKind::Forward => Box::new(ForwardOnlyAgent::new()),
            AgentKind::GoalFollower => Box::new(GoalFollowerAgent::new()),
            AgentKind::Oracle => Box::new(OracleAgent::new()),
            AgentKind::Mapper => Box::new(MapperAgent::new(MapperParams::default())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_at(gps: Vec2, compass: f64) -> Observations {
        Observations {
            gps: Some(gps),
            compass: Some(compass),
            ..Default::default()
        }
    }

    fn ctx(goal: Vec2) -> EpisodeContext {
        EpisodeContext {
            pointgoal: goal,
            seed: 1,
            privileged: None,
        }
    }

    #[test]
    fn random_actions_are_uniform() {
        let mut a = RandomAgent::new(11);
        a.reset(&ctx(Vec2::new(100.0, 0.0)));
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            match a.act(&obs_at(Vec2::ZERO, 0.0)) {
                Action::MoveForward => counts[0] += 1,
                Action::TurnLeft => counts[1] += 1,
                Action::TurnRight => counts[2] += 1,
                Action::Stop => panic!("stopped far from goal"),
            }
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
        assert_eq!(a.act(&obs_at(Vec2::new(99.9, 0.0), 0.0)), Action::Stop);
    }

    #[test]
    fn random_agent_is_deterministic_per_episode_seed() {
        let run = |seed| {
            let mut a = RandomAgent::new(5);
            a.reset(&EpisodeContext { seed, ..ctx(Vec2::new(50.0, 0.0)) });
            (0..50).map(|_| a.act(&obs_at(Vec2::ZERO, 0.0))).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn forward_only_behaviour() {
        let mut a = ForwardOnlyAgent::new();
        a.reset(&ctx(Vec2::new(0.5, 0.0)));
        assert_eq!(a.act(&obs_at(Vec2::ZERO, 0.0)), Action::MoveForward);
        assert_eq!(a.act(&obs_at(Vec2::new(0.5, 0.0), 0.0)), Action::Stop);
    }

    #[test]
    fn goal_follower_turn_rules() {
        let mut a = GoalFollowerAgent::new();
        let goal = Vec2::new(5.0, 0.0);
        a.reset(&ctx(goal));
        // Goal 20° to the left of the heading.
        assert_eq!(a.act(&obs_at(Vec2::ZERO, (-20f64).to_radians())), Action::TurnLeft);
        assert_eq!(a.act(&obs_at(Vec2::ZERO, 20f64.to_radians())), Action::TurnRight);
        assert_eq!(a.act(&obs_at(Vec2::ZERO, 10f64.to_radians())), Action::MoveForward);
        assert_eq!(a.act(&obs_at(Vec2::ZERO, std::f64::consts::PI)), Action::TurnLeft);
        assert_eq!(a.act(&obs_at(Vec2::new(4.85, 0.0), 1.0)), Action::Stop);
    }

    #[test]
    fn replay_then_stop() {
        let mut a = ReplayAgent::new(vec![Action::TurnLeft, Action::MoveForward]);
        a.reset(&ctx(Vec2::ZERO));
        let o = Observations::default();
        assert_eq!(a.act(&o), Action::TurnLeft);
        assert_eq!(a.act(&o), Action::MoveForward);
        assert_eq!(a.act(&o), Action::Stop);
    }

    #[test]
    fn kinds_parse() {
        assert_eq!(AgentKind::parse("goal-follower"), Some(AgentKind::GoalFollower));
        assert_eq!(AgentKind::parse("forward"), Some(AgentKind::Forward));
        assert!(AgentKind::parse("ppo").is_none());
        assert!(AgentKind::Oracle.build(0).privileged());
        assert!(AgentKind::Mapper.build(0).sensors().contains(&SensorKind::Depth));
    }
}
