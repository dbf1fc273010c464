//! Turns plan calls into motion: grid A*, a pure-pursuit follower, the
//! five primitive behaviors and multi-agent plan execution.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Segment, Vec2};
use crate::grid::{Cell, GridLayout};
use crate::kinematics::{wrap_angle, Pose, Twist};
use crate::lang::{Plan, PrimitiveCall};
use crate::sensors::{visible_balls, LidarConfig};
use crate::world::{AgentCommand, AgentId, Color, Grip, WorldError, WorldEvent, WorldState};

pub const DEFAULT_STEP_BUDGET: u32 = 5000;
/// Ticks without path progress before the watchdog replans.
pub const WATCHDOG_WINDOW: u64 = 50;
pub const MAX_REPLANS: u32 = 3;
/// Heading error below which a post-collision turn in place ends.
const ALIGN_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("position ({}, {}) is outside the grid", .0.x, .0.y)]
    OutOfBounds(Vec2),
    #[error("no path from cell {from:?} to cell {to:?}")]
    NoPath { from: Cell, to: Cell },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub cells: Vec<Cell>,
    /// Cell centers along the path; the last one is the exact goal.
    pub waypoints: Vec<Vec2>,
    pub total_length: f64,
}

impl PathPlan {
    fn new(cells: Vec<Cell>, waypoints: Vec<Vec2>) -> Self {
        let total_length = waypoints.windows(2).map(|w| w[0].distance(w[1])).sum();
        Self {
            cells,
            waypoints,
            total_length,
        }
    }

    /// Path length counted in cell moves.
    pub fn cell_length(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn end(&self) -> Vec2 {
        *self.waypoints.last().expect("non-empty path")
    }

    /// Arc length of the point on the path closest to `p`.
    pub fn progress(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut s = 0.0;
        for w in self.waypoints.windows(2) {
            let seg = Segment::new(w[0], w[1]);
            let q = seg.closest_point(p);
            let d = q.distance(p);
            if d < best.0 {
                best = (d, s + w[0].distance(q));
            }
            s += seg.length();
        }
        if self.waypoints.len() == 1 {
            return 0.0;
        }
        best.1
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let mut left = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let len = w[0].distance(w[1]);
            if left <= len && len > 0.0 {
                return w[0] + (w[1] - w[0]) * (left / len);
            }
            left -= len;
        }
        self.end()
    }
}

/// A* over 4-connected cells with unit cost and a Manhattan heuristic.
/// The start cell may be blocked, the goal must be free.
pub fn astar_cells(layout: &GridLayout, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    layout.area_of(start)?;
    if start == goal {
        return Some(vec![start]);
    }
    if !layout.is_free(goal) {
        return None;
    }
    let h = |c: Cell| (c.0 - goal.0).unsigned_abs() + (c.1 - goal.1).unsigned_abs();
    let mut g: BTreeMap<Cell, u32> = BTreeMap::from([(start, 0)]);
    let mut parent: BTreeMap<Cell, Cell> = BTreeMap::new();
    let mut open = BinaryHeap::from([Reverse((h(start), 0u32, start))]);
    while let Some(Reverse((_, cost, cell))) = open.pop() {
        if cell == goal {
            let mut path = vec![goal];
            while let Some(&p) = parent.get(path.last().unwrap()) {
                path.push(p);
            }
            path.reverse();
            return Some(path);
        }
        if cost > g[&cell] {
            continue;
        }
        for n in layout.neighbors(cell, None) {
            let next = cost + 1;
            if g.get(&n).is_none_or(|&old| next < old) {
                g.insert(n, next);
                parent.insert(n, cell);
                open.push(Reverse((next + h(n), next, n)));
            }
        }
    }
    None
}

pub fn plan_path(layout: &GridLayout, from: Vec2, to: Vec2) -> Result<PathPlan, PathError> {
    let start = layout.cell_of(from).ok_or(PathError::OutOfBounds(from))?;
    let goal = layout.cell_of(to).ok_or(PathError::OutOfBounds(to))?;
    let cells = astar_cells(layout, start, goal).ok_or(PathError::NoPath { from: start, to: goal })?;
    let mut waypoints: Vec<Vec2> = cells.iter().map(|&c| layout.cell_center(c)).collect();
    *waypoints.last_mut().unwrap() = to;
    Ok(PathPlan::new(cells, waypoints))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowGains {
    pub lookahead: f64,
    pub k_theta: f64,
    pub arrival_radius: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for FollowGains {
    fn default() -> Self {
        Self {
            lookahead: 0.6,
            k_theta: 2.0,
            arrival_radius: 0.15,
            v_max: 1.0,
            omega_max: std::f64::consts::PI,
        }
    }
}

/// Heading error toward the pursuit point, or `None` once arrived.
pub fn pursuit_error(pose: Pose, plan: &PathPlan, gains: &FollowGains) -> Option<f64> {
    let pos = pose.position();
    if pos.distance(plan.end()) < gains.arrival_radius {
        return None;
    }
    let mut target = plan.point_at(plan.progress(pos) + gains.lookahead);
    if target.distance(pos) < 1e-9 {
        target = plan.end();
    }
    let to = target - pos;
    Some(wrap_angle(to.y.atan2(to.x) - pose.theta))
}

/// Pure pursuit toward the point `lookahead` meters further along the path.
pub fn follow_path(pose: Pose, plan: &PathPlan, gains: &FollowGains) -> Twist {
    match pursuit_error(pose, plan, gains) {
        None => Twist::ZERO,
        Some(err) => Twist::new(
            gains.v_max * err.cos().max(0.0),
            (gains.k_theta * err).clamp(-gains.omega_max, gains.omega_max),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Exploring,
    Navigating,
    Acting,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FailReason {
    NotCarrying,
    NotLocalized { color: Color },
    GripperFull,
    UnknownTarget { color: Color },
    NotFound { color: Color },
    NoPath { detail: String },
    Stuck,
    BudgetExhausted,
    GripRejected { detail: String },
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotCarrying => write!(f, "not carrying a ball"),
            Self::NotLocalized { color } => write!(f, "no {color} ball localized"),
            Self::GripperFull => write!(f, "gripper already holds another ball"),
            Self::UnknownTarget { color } => write!(f, "no {color} zone in the world"),
            Self::NotFound { color } => write!(f, "coverage finished without seeing a {color} ball"),
            Self::NoPath { detail } => write!(f, "no path: {detail}"),
            Self::Stuck => write!(f, "no progress after {MAX_REPLANS} replans"),
            Self::BudgetExhausted => write!(f, "step budget exhausted"),
            Self::GripRejected { detail } => write!(f, "grip rejected: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorState {
    pub active_call: PrimitiveCall,
    pub phase: Phase,
    pub target: Option<Vec2>,
    pub step_budget: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub tick: u64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub agent: AgentId,
    pub index: usize,
    pub call: PrimitiveCall,
    pub start_tick: u64,
    pub end_tick: Option<u64>,
    pub phase: Phase,
    pub reason: Option<FailReason>,
    pub transitions: Vec<PhaseChange>,
    pub replans: u32,
    pub target: Option<Vec2>,
    pub dropped_outside_zone: bool,
}

impl CallRecord {
    pub fn ticks(&self) -> u64 {
        self.end_tick.unwrap_or(self.start_tick) - self.start_tick
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub pose: Pose,
    pub carrying: Option<usize>,
    pub call: Option<usize>,
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub agents: Vec<AgentSnapshot>,
    pub events: Vec<WorldEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Calls per agent in the plan, for telling "stopped early" from "done".
    pub planned: BTreeMap<AgentId, usize>,
    pub calls: Vec<CallRecord>,
    pub ticks: Vec<TickRecord>,
}

impl ExecutionTrace {
    pub fn succeeded(&self) -> bool {
        self.planned.iter().all(|(&agent, &n)| {
            let done = self
                .calls
                .iter()
                .filter(|c| c.agent == agent && c.phase == Phase::Done)
                .count();
            done == n
        })
    }

    pub fn first_failure(&self) -> Option<&CallRecord> {
        self.calls.iter().find(|c| c.phase == Phase::Failed)
    }

    pub fn total_ticks(&self) -> u64 {
        self.ticks.len() as u64
    }

    /// One JSON object per tick.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.ticks {
            out.push_str(&serde_json::to_string(t).expect("tick record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub step_budget: u32,
    pub lidar: LidarConfig,
    pub gains: FollowGains,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            step_budget: DEFAULT_STEP_BUDGET,
            lidar: LidarConfig::default(),
            gains: FollowGains::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Memory {
    /// Ball index to the position where it was seen.
    known_balls: BTreeMap<usize, Vec2>,
    visited: BTreeSet<Cell>,
}

#[derive(Debug, Clone)]
struct Nav {
    goal: Vec2,
    plan: PathPlan,
    best_remaining: f64,
    window_start: u64,
    replans: u32,
    /// Set after a collision: turn in place before driving again.
    align: bool,
}

enum Step {
    Command(AgentCommand),
    Done,
    Failed(FailReason),
}

/// Per-agent plan interpreter.
#[derive(Debug, Clone)]
pub struct Executor {
    agent: AgentId,
    calls: Vec<PrimitiveCall>,
    next: usize,
    state: Option<BehaviorState>,
    record: Option<CallRecord>,
    nav: Option<Nav>,
    coverage: Option<Vec<Cell>>,
    memory: Memory,
    drop_issued: bool,
    stopped: bool,
    cfg: ExecConfig,
}

impl Executor {
    pub fn new(agent: AgentId, plan: &Plan, cfg: ExecConfig) -> Self {
        Self {
            agent,
            calls: plan.calls.clone(),
            next: 0,
            state: None,
            record: None,
            nav: None,
            coverage: None,
            memory: Memory::default(),
            drop_issued: false,
            stopped: false,
            cfg,
        }
    }

    pub fn agent(&self) -> AgentId {
        self.agent
    }

    pub fn is_finished(&self) -> bool {
        self.stopped || self.next >= self.calls.len()
    }

    pub fn state(&self) -> Option<&BehaviorState> {
        self.state.as_ref()
    }

    pub fn active_index(&self) -> Option<usize> {
        self.state.as_ref().map(|_| self.next)
    }

    fn set_phase(&mut self, phase: Phase, tick: u64) {
        let (Some(state), Some(rec)) = (self.state.as_mut(), self.record.as_mut()) else {
            return;
        };
        if state.phase != phase {
            state.phase = phase;
            rec.phase = phase;
            rec.transitions.push(PhaseChange { tick, phase });
        }
    }

    fn finish(&mut self, outcome: Result<(), FailReason>, tick: u64, out: &mut Vec<CallRecord>) {
        let phase = if outcome.is_ok() { Phase::Done } else { Phase::Failed };
        self.set_phase(phase, tick);
        let mut rec = self.record.take().expect("active record");
        rec.end_tick = Some(tick);
        rec.reason = outcome.err();
        rec.replans = self.nav.as_ref().map_or(rec.replans, |n| n.replans.max(rec.replans));
        rec.target = self.state.as_ref().and_then(|s| s.target);
        if rec.phase == Phase::Failed {
            self.stopped = true;
        }
        out.push(rec);
        self.state = None;
        self.nav = None;
        self.coverage = None;
        self.drop_issued = false;
        self.next += 1;
    }

    /// Marks the active call failed from outside, e.g. when the world
    /// rejected its grip.
    pub fn abort(&mut self, reason: FailReason, tick: u64, out: &mut Vec<CallRecord>) {
        if self.state.is_some() {
            self.finish(Err(reason), tick, out);
        }
    }

    fn observe(&mut self, world: &WorldState) {
        let Some(agent) = world.agent(self.agent) else {
            return;
        };
        if let Some(c) = world.layout.cell_of(agent.pose.position()) {
            self.memory.visited.insert(c);
        }
        if let Ok(seen) = visible_balls(world, self.agent, &self.cfg.lidar) {
            for i in seen {
                self.memory.known_balls.insert(i, world.balls[i].position);
            }
        }
        // Forget balls someone else has taken.
        self.memory
            .known_balls
            .retain(|&i, _| world.balls[i].carried_by.is_none_or(|a| a == self.agent));
    }

    /// Command for this tick, or `None` once the plan is over. Completed
    /// and failed calls are appended to `out`.
    pub fn decide(
        &mut self,
        world: &WorldState,
        last_events: &[WorldEvent],
        out: &mut Vec<CallRecord>,
    ) -> Option<AgentCommand> {
        let tick = world.clock.tick;
        self.observe(world);
        if let Some(nav) = self.nav.as_mut() {
            let hit = last_events
                .iter()
                .any(|e| matches!(e, WorldEvent::Collision { agent, .. } if *agent == self.agent));
            if hit {
                nav.align = true;
            }
        }
        while !self.is_finished() {
            if self.state.is_none() {
                let call = self.calls[self.next];
                self.state = Some(BehaviorState {
                    active_call: call,
                    phase: Phase::Acting,
                    target: None,
                    step_budget: self.cfg.step_budget,
                });
                self.record = Some(CallRecord {
                    agent: self.agent,
                    index: self.next,
                    call,
                    start_tick: tick,
                    end_tick: None,
                    phase: Phase::Acting,
                    reason: None,
                    transitions: vec![PhaseChange {
                        tick,
                        phase: Phase::Acting,
                    }],
                    replans: 0,
                    target: None,
                    dropped_outside_zone: false,
                });
            }
            match self.step_call(world, tick) {
                Step::Done => self.finish(Ok(()), tick, out),
                Step::Failed(r) => self.finish(Err(r), tick, out),
                Step::Command(cmd) => {
                    let state = self.state.as_mut().unwrap();
                    if state.step_budget == 0 {
                        self.finish(Err(FailReason::BudgetExhausted), tick, out);
                        continue;
                    }
                    state.step_budget -= 1;
                    return Some(cmd);
                }
            }
        }
        None
    }

    fn step_call(&mut self, world: &WorldState, tick: u64) -> Step {
        let Some(me) = world.agent(self.agent) else {
            return Step::Failed(FailReason::NoPath {
                detail: format!("agent {} missing", self.agent),
            });
        };
        let pos = me.pose.position();
        let call = self.state.as_ref().unwrap().active_call;
        match call {
            PrimitiveCall::SearchBall(color) => {
                if let Some(p) = self.known_ball(world, color).map(|i| world.balls[i].position) {
                    self.state.as_mut().unwrap().target = Some(p);
                    return Step::Done;
                }
                self.set_phase(Phase::Exploring, tick);
                self.explore(world, color, tick)
            }
            PrimitiveCall::SearchZone(color) => match nearest_zone(world, color, pos) {
                Some(z) => {
                    self.state.as_mut().unwrap().target = Some(world.zones[z].center);
                    Step::Done
                }
                None => Step::Failed(FailReason::UnknownTarget { color }),
            },
            PrimitiveCall::CatchTheBall(color) => {
                if let Some(b) = me.carrying {
                    return if world.balls[b].color == color {
                        Step::Done
                    } else {
                        Step::Failed(FailReason::GripperFull)
                    };
                }
                let Some(ball) = self.known_ball(world, color) else {
                    return Step::Failed(FailReason::NotLocalized { color });
                };
                let target = world.balls[ball].position;
                self.state.as_mut().unwrap().target = Some(target);
                if pos.distance(target) <= world.robot.catch_radius {
                    self.set_phase(Phase::Acting, tick);
                    return Step::Command(AgentCommand {
                        twist: Twist::ZERO,
                        grip: Some(Grip::Pick { ball }),
                    });
                }
                self.set_phase(Phase::Navigating, tick);
                self.navigate(world, target, tick)
            }
            PrimitiveCall::GoToZone(color) => {
                let Some(z) = nearest_zone(world, color, pos) else {
                    return Step::Failed(FailReason::UnknownTarget { color });
                };
                let zone = &world.zones[z];
                self.state.as_mut().unwrap().target = Some(zone.center);
                if zone.contains(pos) {
                    return Step::Done;
                }
                self.set_phase(Phase::Navigating, tick);
                self.navigate(world, zone.center, tick)
            }
            PrimitiveCall::LeaveBall => match me.carrying {
                None if self.drop_issued => Step::Done,
                None => Step::Failed(FailReason::NotCarrying),
                Some(_) => {
                    self.drop_issued = true;
                    self.state.as_mut().unwrap().target = Some(pos);
                    if let Some(rec) = self.record.as_mut() {
                        rec.dropped_outside_zone = world.zone_containing(pos).is_none();
                    }
                    Step::Command(AgentCommand {
                        twist: Twist::ZERO,
                        grip: Some(Grip::Drop),
                    })
                }
            },
        }
    }

    fn known_ball(&self, world: &WorldState, color: Color) -> Option<usize> {
        self.memory
            .known_balls
            .keys()
            .copied()
            .find(|&i| world.balls[i].color == color && world.balls[i].carried_by.is_none())
    }

    fn explore(&mut self, world: &WorldState, color: Color, tick: u64) -> Step {
        let pos = world.agent(self.agent).unwrap().pose.position();
        if self.coverage.is_none() {
            let Some(start) = world.layout.cell_of(pos) else {
                return Step::Failed(FailReason::NotFound { color });
            };
            self.coverage = Some(coverage_order(&world.layout, start));
        }
        loop {
            let visited = &self.memory.visited;
            let goal_cell = self
                .coverage
                .as_ref()
                .unwrap()
                .iter()
                .copied()
                .find(|c| !visited.contains(c));
            let Some(cell) = goal_cell else {
                return Step::Failed(FailReason::NotFound { color });
            };
            let goal = world.layout.cell_center(cell);
            match self.navigate(world, goal, tick) {
                // Arrived without entering the cell; count it as covered.
                Step::Done => {
                    self.memory.visited.insert(cell);
                }
                Step::Failed(FailReason::NoPath { .. }) => {
                    self.memory.visited.insert(cell);
                }
                other => return other,
            }
        }
    }

    /// Follows a path to `goal`, replanning on a goal change or when the
    /// watchdog sees no progress. After a collision the robot first turns
    /// in place toward the pursuit point.
    /// `Step::Done` means the follower has arrived.
    fn navigate(&mut self, world: &WorldState, goal: Vec2, tick: u64) -> Step {
        let pose = world.agent(self.agent).unwrap().pose;
        let pos = pose.position();
        let fresh = self.nav.as_ref().is_none_or(|n| n.goal.distance(goal) > 1e-9);
        if fresh {
            let replans = self.nav.as_ref().map_or(0, |n| n.replans);
            match plan_path(&world.layout, pos, goal) {
                Ok(plan) => {
                    self.nav = Some(Nav {
                        goal,
                        plan,
                        best_remaining: f64::INFINITY,
                        window_start: tick,
                        replans,
                        align: false,
                    })
                }
                Err(e) => {
                    return Step::Failed(FailReason::NoPath { detail: e.to_string() });
                }
            }
        }
        let nav = self.nav.as_mut().unwrap();
        let mut replan = false;
        let along = nav.plan.progress(pos);
        let remaining = nav.plan.total_length - along + pos.distance(nav.plan.point_at(along));
        if remaining < nav.best_remaining - 1e-3 {
            nav.best_remaining = remaining;
            nav.window_start = tick;
        } else if tick.saturating_sub(nav.window_start) >= WATCHDOG_WINDOW {
            replan = true;
        }
        if replan {
            nav.replans += 1;
            if nav.replans > MAX_REPLANS {
                return Step::Failed(FailReason::Stuck);
            }
            match plan_path(&world.layout, pos, goal) {
                Ok(plan) => {
                    nav.plan = plan;
                    nav.best_remaining = f64::INFINITY;
                    nav.window_start = tick;
                }
                Err(e) => return Step::Failed(FailReason::NoPath { detail: e.to_string() }),
            }
        }
        let gains = &self.cfg.gains;
        if nav.align {
            match pursuit_error(pose, &nav.plan, gains) {
                Some(err) if err.abs() > ALIGN_TOLERANCE => {
                    let w = (gains.k_theta * err).clamp(-gains.omega_max, gains.omega_max);
                    return Step::Command(Twist::new(0.0, w).into());
                }
                _ => nav.align = false,
            }
        }
        let twist = follow_path(pose, &nav.plan, gains);
        if twist == Twist::ZERO && pos.distance(nav.plan.end()) < self.cfg.gains.arrival_radius {
            self.nav = None;
            return Step::Done;
        }
        Step::Command(twist.into())
    }
}

fn nearest_zone(world: &WorldState, color: Color, from: Vec2) -> Option<usize> {
    (0..world.zones.len())
        .filter(|&i| world.zones[i].color == color)
        .min_by(|&a, &b| {
            let da = world.zones[a].center.distance(from);
            let db = world.zones[b].center.distance(from);
            da.total_cmp(&db)
        })
}

/// Reachable cells in serpentine row order: even rows west to east, odd
/// rows east to west.
fn coverage_order(layout: &GridLayout, start: Cell) -> Vec<Cell> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in layout.neighbors(c, None) {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    let mut cells: Vec<Cell> = seen.into_iter().collect();
    cells.sort_by_key(|&(col, row)| (row, if row % 2 == 0 { col } else { -col }));
    cells
}

fn snapshot(world: &WorldState, runners: &[Executor]) -> Vec<AgentSnapshot> {
    world
        .agents
        .iter()
        .map(|a| {
            let r = runners.iter().find(|r| r.agent == a.id);
            AgentSnapshot {
                id: a.id,
                pose: a.pose,
                carrying: a.carrying,
                call: r.and_then(|r| r.active_index()),
                phase: r.and_then(|r| r.state().map(|s| s.phase)),
            }
        })
        .collect()
}

/// Steps the world. When the world rejects an agent's grip, that agent's
/// command is withdrawn, `on_reject` is told, and the step is retried.
pub fn step_dropping_rejected(
    world: &mut WorldState,
    mut commands: BTreeMap<AgentId, AgentCommand>,
    mut on_reject: impl FnMut(AgentId, String, u64),
) -> Result<Vec<WorldEvent>, WorldError> {
    loop {
        match world.step(&commands) {
            Err(WorldError::InvalidGrip { agent, reason }) if commands.remove(&agent).is_some() => {
                on_reject(agent, reason, world.clock.tick);
            }
            other => return other,
        }
    }
}

/// Runs one plan per agent. All agents advance together through
/// [`WorldState::step`]; each agent stops at its first failed call.
pub fn run_plans(world: &mut WorldState, plans: &[(AgentId, Plan)], cfg: &ExecConfig) -> ExecutionTrace {
    let mut runners: Vec<Executor> = plans.iter().map(|(a, p)| Executor::new(*a, p, *cfg)).collect();
    let mut trace = ExecutionTrace {
        planned: plans.iter().map(|(a, p)| (*a, p.calls.len())).collect(),
        ..ExecutionTrace::default()
    };
    for r in runners.iter_mut() {
        if world.agent(r.agent).is_none() {
            r.stopped = true;
        }
    }
    let mut last_events: Vec<WorldEvent> = Vec::new();
    loop {
        let mut commands = BTreeMap::new();
        for r in runners.iter_mut() {
            if let Some(cmd) = r.decide(world, &last_events, &mut trace.calls) {
                commands.insert(r.agent, cmd);
            }
        }
        if runners.iter().all(Executor::is_finished) {
            break;
        }
        let events = step_dropping_rejected(world, commands, |agent, reason, tick| {
            if let Some(r) = runners.iter_mut().find(|r| r.agent == agent) {
                r.abort(FailReason::GripRejected { detail: reason }, tick, &mut trace.calls);
            }
        })
        .unwrap_or_else(|e| unreachable!("executor produced an invalid command: {e}"));
        trace.ticks.push(TickRecord {
            tick: world.clock.tick,
            t: world.clock.time(),
            agents: snapshot(world, &runners),
            events: events.clone(),
        });
        last_events = events;
    }
    trace.calls.sort_by_key(|c| (c.agent, c.index));
    trace
}

/// Single-agent form of [`run_plans`] for agent 0.
pub fn run_plan(world: &mut WorldState, plan: &Plan, cfg: &ExecConfig) -> ExecutionTrace {
    run_plans(world, &[(0, plan.clone())], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellKind;
    use crate::lang::parse_plan;
    use crate::procgen::{generate_environment, AreaSpec, EnvironmentSpec, WorldBuilder};
    use crate::rng::SimRng;
    use std::f64::consts::PI;

    const FIVE: &str =
        "search_ball('Orange'); catch_the_ball('Orange'); search_zone('Green'); go_to_zone('Green'); leave_ball();";

    fn open_layout(w: usize, h: usize) -> GridLayout {
        WorldBuilder::new(vec![AreaSpec::new(w, h)]).build().unwrap().layout
    }

    fn bfs_len(layout: &GridLayout, a: Cell, b: Cell) -> Option<usize> {
        let parents = layout.bfs(a, None);
        crate::grid::reconstruct(&parents, b).map(|p| p.len() - 1)
    }

    #[test]
    fn straight_path_on_empty_grid() {
        let layout = open_layout(5, 5);
        let cells = astar_cells(&layout, (0, 0), (0, 4)).unwrap();
        assert_eq!(cells.len(), 5);
        let plan = plan_path(&layout, Vec2::new(0.5, 0.5), Vec2::new(0.5, 4.5)).unwrap();
        assert_eq!(plan.cell_length(), 4);
        assert!((plan.total_length - 4.0).abs() < 1e-12);
    }

    #[test]
    fn enclosed_target_has_no_path() {
        let mut layout = open_layout(5, 5);
        for c in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            layout.set_kind(c, CellKind::Obstacle);
        }
        assert_eq!(
            plan_path(&layout, Vec2::new(0.5, 0.5), Vec2::new(2.5, 2.5)),
            Err(PathError::NoPath { from: (0, 0), to: (2, 2) })
        );
        assert!(matches!(
            plan_path(&layout, Vec2::new(-3.0, 0.5), Vec2::new(2.5, 2.5)),
            Err(PathError::OutOfBounds(_))
        ));
    }

    #[test]
    fn astar_matches_bfs_on_random_grids() {
        let mut rng = SimRng::seed_from(11);
        let mut checked = 0;
        while checked < 50 {
            let mut layout = open_layout(8, 8);
            for _ in 0..18 {
                layout.set_kind((rng.below(8) as i32, rng.below(8) as i32), CellKind::Obstacle);
            }
            let a = (rng.below(8) as i32, rng.below(8) as i32);
            let b = (rng.below(8) as i32, rng.below(8) as i32);
            if !layout.is_free(a) || !layout.is_free(b) {
                continue;
            }
            let expected = bfs_len(&layout, a, b);
            let got = astar_cells(&layout, a, b).map(|p| p.len() - 1);
            assert_eq!(got, expected);
            if let Some(p) = astar_cells(&layout, a, b) {
                for w in p.windows(2) {
                    assert_eq!((w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs(), 1);
                    assert!(layout.is_free(w[1]));
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn follower_cases() {
        let plan = PathPlan::new(vec![(0, 0), (1, 0)], vec![Vec2::new(0.5, 0.5), Vec2::new(3.5, 0.5)]);
        let g = FollowGains::default();
        assert_eq!(follow_path(Pose::new(3.45, 0.5, 1.0), &plan, &g), Twist::ZERO);
        let ahead = follow_path(Pose::new(0.5, 0.5, 0.0), &plan, &g);
        assert_eq!(ahead, Twist::new(1.0, 0.0));
        let behind = follow_path(Pose::new(0.5, 0.5, PI - 1e-12), &plan, &g);
        assert!(behind.linear.abs() < 1e-9);
        assert!((behind.angular.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn progress_and_point_at() {
        let plan = PathPlan::new(
            vec![],
            vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(2.0, 2.0)],
        );
        assert_eq!(plan.total_length, 4.0);
        assert!((plan.progress(Vec2::new(1.0, 0.3)) - 1.0).abs() < 1e-12);
        assert!((plan.progress(Vec2::new(2.2, 1.5)) - 3.5).abs() < 1e-12);
        assert_eq!(plan.point_at(3.0), Vec2::new(2.0, 1.0));
        assert_eq!(plan.point_at(9.0), Vec2::new(2.0, 2.0));
    }

    #[test]
    fn leave_without_ball_fails() {
        let mut world = WorldBuilder::new(vec![AreaSpec::new(5, 5)])
            .agent(Pose::new(2.5, 2.5, 0.0))
            .build()
            .unwrap();
        let trace = run_plan(&mut world, &parse_plan("leave_ball()").unwrap(), &ExecConfig::default());
        assert_eq!(trace.calls.len(), 1);
        assert_eq!(trace.calls[0].phase, Phase::Failed);
        assert_eq!(trace.calls[0].reason, Some(FailReason::NotCarrying));
        assert!(!trace.succeeded());
    }

    #[test]
    fn catch_before_localization_fails() {
        let mut world = WorldBuilder::new(vec![AreaSpec::new(6, 6)])
            .agent(Pose::new(1.5, 1.5, 0.0))
            .ball(Color::Blue, Vec2::new(1.5, 4.5))
            .build()
            .unwrap();
        // Facing away with a narrow field of view: the ball is not seen.
        let cfg = ExecConfig {
            lidar: LidarConfig {
                fov: 0.5,
                ..LidarConfig::default()
            },
            ..ExecConfig::default()
        };
        world.agents[0].pose.theta = -PI / 2.0;
        let trace = run_plan(&mut world, &parse_plan("catch_the_ball('Blue')").unwrap(), &cfg);
        assert_eq!(
            trace.calls[0].reason,
            Some(FailReason::NotLocalized { color: Color::Blue })
        );
    }

    #[test]
    fn fetch_and_deliver_end_to_end() {
        for seed in [7, 8, 9] {
            let mut world = generate_environment(&EnvironmentSpec::fetch_and_deliver(seed)).unwrap();
            let trace = run_plan(&mut world, &parse_plan(FIVE).unwrap(), &ExecConfig::default());
            assert!(trace.succeeded(), "seed {seed}: {:?}", trace.first_failure());
            assert_eq!(trace.calls.len(), 5);
            let green = world.zones.iter().find(|z| z.color == Color::Green).unwrap();
            let ball = world.balls.iter().find(|b| b.color == Color::Orange).unwrap();
            assert!(green.contains(ball.position));
            assert!(trace.total_ticks() <= 5000);
            assert!(!trace.calls[4].dropped_outside_zone);
        }
    }

    #[test]
    fn search_explores_when_ball_hidden() {
        // A wall of boxes hides the ball from the start pose.
        let mut b = WorldBuilder::new(vec![AreaSpec::new(8, 8)])
            .agent(Pose::new(1.5, 1.5, 0.0))
            .ball(Color::Red, Vec2::new(6.5, 6.5));
        for x in 0..6 {
            b = b.obstacle(crate::geometry::Shape::rect(Vec2::new(x as f64 + 0.5, 4.0), Vec2::new(0.5, 0.1), 0.0));
        }
        let mut world = b.build().unwrap();
        assert!(visible_balls(&world, 0, &LidarConfig::default()).unwrap().is_empty());
        let trace = run_plan(
            &mut world,
            &parse_plan("search_ball('Red'); catch_the_ball('Red')").unwrap(),
            &ExecConfig::default(),
        );
        assert!(trace.succeeded(), "{:?}", trace.first_failure());
        assert!(trace.calls[0].transitions.iter().any(|t| t.phase == Phase::Exploring));
        assert_eq!(world.balls[0].carried_by, Some(0));
    }

    #[test]
    fn walled_off_zone_fails_on_fourth_call() {
        let mut b = WorldBuilder::new(vec![AreaSpec::new(8, 8)])
            .agent(Pose::new(1.5, 1.5, 0.0))
            .ball(Color::Orange, Vec2::new(3.5, 1.5))
            .zone(Color::Green, Vec2::new(5.5, 5.5));
        for (x, y) in [(4.5, 5.5), (6.5, 5.5), (5.5, 4.5), (5.5, 6.5)] {
            b = b.obstacle(crate::geometry::Shape::rect(Vec2::new(x, y), Vec2::new(0.2, 0.2), 0.0));
        }
        let mut world = b.build().unwrap();
        let trace = run_plan(&mut world, &parse_plan(FIVE).unwrap(), &ExecConfig::default());
        let phases: Vec<Phase> = trace.calls.iter().map(|c| c.phase).collect();
        assert_eq!(phases, vec![Phase::Done, Phase::Done, Phase::Done, Phase::Failed]);
        assert!(matches!(trace.calls[3].reason, Some(FailReason::NoPath { .. })));
    }

    #[test]
    fn drop_outside_zone_is_flagged() {
        let mut world = WorldBuilder::new(vec![AreaSpec::new(6, 6)])
            .agent(Pose::new(1.5, 1.5, 0.0))
            .ball(Color::Orange, Vec2::new(3.5, 1.5))
            .build()
            .unwrap();
        let plan = parse_plan("search_ball('Orange'); catch_the_ball('Orange'); leave_ball()").unwrap();
        let trace = run_plan(&mut world, &plan, &ExecConfig::default());
        assert!(trace.succeeded());
        assert!(trace.calls[2].dropped_outside_zone);
        assert_eq!(world.balls[0].carried_by, None);
    }

    #[test]
    fn trace_is_deterministic_and_jsonl() {
        let run = || {
            let mut world = generate_environment(&EnvironmentSpec::fetch_and_deliver(3)).unwrap();
            run_plan(&mut world, &parse_plan(FIVE).unwrap(), &ExecConfig::default()).to_jsonl()
        };
        let a = run();
        assert_eq!(a, run());
        let first: serde_json::Value = serde_json::from_str(a.lines().next().unwrap()).unwrap();
        assert_eq!(first["tick"], 1);
        assert!(first["agents"][0]["pose"]["x"].is_number());
    }

    #[test]
    fn tiny_budget_exhausts() {
        let mut world = generate_environment(&EnvironmentSpec::fetch_and_deliver(5)).unwrap();
        let cfg = ExecConfig {
            step_budget: 3,
            ..ExecConfig::default()
        };
        let trace = run_plan(&mut world, &parse_plan(FIVE).unwrap(), &cfg);
        assert_eq!(trace.first_failure().unwrap().reason, Some(FailReason::BudgetExhausted));
        // Ball conservation.
        assert_eq!(world.balls.len(), 1);
    }
}
