//! Instantiated world state and the fixed-step world update.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Segment, Shape, Vec2};
use crate::grid::GridLayout;
use crate::kinematics::{integrate_step, Pose, SimClock, Twist, VelocityLimits};

pub type AgentId = usize;

pub const BALL_RADIUS: f64 = 0.1;
pub const ZONE_RADIUS: f64 = 0.5;

/// Fixed color palette shared by balls, zones, descriptions and plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Orange,
    Yellow,
    Purple,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Orange,
        Color::Yellow,
        Color::Purple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "Red",
            Color::Green => "Green",
            Color::Blue => "Blue",
            Color::Orange => "Orange",
            Color::Yellow => "Yellow",
            Color::Purple => "Purple",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown color {0:?}")]
pub struct UnknownColor(pub String);

impl FromStr for Color {
    type Err = UnknownColor;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Color::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownColor(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemKind {
    Ball,
    Zone,
}

impl ItemKind {
    pub fn name(self) -> &'static str {
        match self {
            ItemKind::Ball => "Ball",
            ItemKind::Zone => "Zone",
        }
    }
}

/// One line of an area's inventory, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub count: u32,
    pub color: Color,
    pub kind: ItemKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub index: usize,
    /// World position of the area's lower-left corner.
    pub origin: Vec2,
    pub width_cells: usize,
    pub height_cells: usize,
    pub cell_size: f64,
    pub inventory: Vec<InventoryItem>,
    pub obstacle_count: u32,
}

impl Area {
    pub fn bounds(&self) -> Aabb {
        Aabb::new(
            self.origin,
            self.origin
                + Vec2::new(
                    self.width_cells as f64 * self.cell_size,
                    self.height_cells as f64 * self.cell_size,
                ),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub area: usize,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub color: Color,
    pub area: usize,
    pub position: Vec2,
    pub carried_by: Option<AgentId>,
}

impl Ball {
    pub fn footprint(&self) -> Shape {
        Shape::circle(self.position, BALL_RADIUS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub color: Color,
    pub area: usize,
    pub center: Vec2,
    pub radius: f64,
}

impl Zone {
    /// Strict containment of a point.
    pub fn contains(&self, p: Vec2) -> bool {
        p.distance(self.center) < self.radius
    }

    pub fn footprint(&self) -> Shape {
        Shape::circle(self.center, self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub area: usize,
    pub pose: Pose,
    /// Index into `WorldState::balls`.
    pub carrying: Option<usize>,
    /// Velocity applied on the last tick; zero after a collision.
    #[serde(default)]
    pub twist: Twist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Collision disc radius.
    pub radius: f64,
    pub limits: VelocityLimits,
    /// Maximum center distance at which a ball can be picked up.
    pub catch_radius: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            radius: 0.3,
            limits: VelocityLimits::default(),
            catch_radius: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub seed: u64,
    pub areas: Vec<Area>,
    pub obstacles: Vec<Obstacle>,
    pub balls: Vec<Ball>,
    pub zones: Vec<Zone>,
    pub agents: Vec<Agent>,
    pub walls: Vec<Segment>,
    pub layout: GridLayout,
    pub robot: RobotParams,
    pub clock: SimClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Grip {
    Pick { ball: usize },
    Drop,
}

/// Per-agent input for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentCommand {
    pub twist: Twist,
    pub grip: Option<Grip>,
}

impl From<Twist> for AgentCommand {
    fn from(twist: Twist) -> Self {
        Self { twist, grip: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Contact {
    Obstacle(usize),
    Wall(usize),
    Agent(AgentId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    Collision {
        agent: AgentId,
        contact: Contact,
    },
    Clamped {
        agent: AgentId,
        requested: Twist,
        applied: Twist,
    },
    ZoneEntered {
        agent: AgentId,
        zone: usize,
        color: Color,
    },
    ZoneExited {
        agent: AgentId,
        zone: usize,
        color: Color,
    },
    BallPickedUp {
        agent: AgentId,
        ball: usize,
        color: Color,
    },
    BallDropped {
        agent: AgentId,
        ball: usize,
        color: Color,
        /// Zone containing the drop point, if any.
        zone: Option<usize>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("non-finite command for agent {0}")]
    NonFiniteCommand(AgentId),
    #[error("invalid grip for agent {agent}: {reason}")]
    InvalidGrip { agent: AgentId, reason: String },
}

impl WorldState {
    pub fn agent(&self, id: AgentId) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    fn agent_index(&self, id: AgentId) -> Result<usize, WorldError> {
        self.agents
            .iter()
            .position(|a| a.id == id)
            .ok_or(WorldError::UnknownAgent(id))
    }

    /// Index of the first zone whose disc strictly contains `p`.
    pub fn zone_containing(&self, p: Vec2) -> Option<usize> {
        self.zones.iter().position(|z| z.contains(p))
    }

    pub fn zones_containing(&self, p: Vec2) -> Vec<usize> {
        (0..self.zones.len())
            .filter(|&i| self.zones[i].contains(p))
            .collect()
    }

    /// Clearance check for moving an agent disc from `from` to `to`. A move
    /// is blocked when it brings the disc closer than the robot radius to
    /// something, unless it was already that close and the move does not
    /// make it worse.
    fn sweep_contact(&self, agent_idx: usize, from: Vec2, to: Vec2) -> Option<Contact> {
        if from == to {
            return None;
        }
        let r = self.robot.radius;
        let sweep = Segment::new(from, to);
        let blocks = |swept: f64, start: f64, limit: f64| swept < limit && swept < start;
        if let Some(i) = self.obstacles.iter().position(|o| {
            blocks(o.shape.distance_to_segment(&sweep), o.shape.distance_to_point(from), r)
        }) {
            return Some(Contact::Obstacle(i));
        }
        if let Some(i) = self
            .walls
            .iter()
            .position(|w| blocks(w.distance_to_segment(&sweep), w.distance_to_point(from), r))
        {
            return Some(Contact::Wall(i));
        }
        self.agents
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent_idx)
            .find(|(_, other)| {
                let c = other.pose.position();
                blocks(sweep.distance_to_point(c), from.distance(c), 2.0 * r)
            })
            .map(|(_, other)| Contact::Agent(other.id))
    }

    fn apply_grip(&mut self, idx: usize, grip: Grip, events: &mut Vec<WorldEvent>) -> Result<(), WorldError> {
        let id = self.agents[idx].id;
        let invalid = |reason: &str| WorldError::InvalidGrip {
            agent: id,
            reason: reason.to_string(),
        };
        match grip {
            Grip::Pick { ball } => {
                let b = self.balls.get(ball).ok_or_else(|| invalid("no such ball"))?;
                if b.carried_by.is_some() {
                    return Err(invalid("ball already carried"));
                }
                if self.agents[idx].carrying.is_some() {
                    return Err(invalid("gripper already holds a ball"));
                }
                let pos = self.agents[idx].pose.position();
                if pos.distance(b.position) > self.robot.catch_radius + 1e-9 {
                    return Err(invalid("ball out of reach"));
                }
                let color = b.color;
                self.balls[ball].carried_by = Some(id);
                self.balls[ball].position = pos;
                self.agents[idx].carrying = Some(ball);
                events.push(WorldEvent::BallPickedUp {
                    agent: id,
                    ball,
                    color,
                });
            }
            Grip::Drop => {
                let ball = self.agents[idx]
                    .carrying
                    .take()
                    .ok_or_else(|| invalid("gripper is empty"))?;
                let pos = self.agents[idx].pose.position();
                self.balls[ball].carried_by = None;
                self.balls[ball].position = pos;
                events.push(WorldEvent::BallDropped {
                    agent: id,
                    ball,
                    color: self.balls[ball].color,
                    zone: self.zone_containing(pos),
                });
            }
        }
        Ok(())
    }

    /// Advances every agent by one tick in id order. Agents without a
    /// command hold still. On error the world is left untouched.
    pub fn step(&mut self, commands: &BTreeMap<AgentId, AgentCommand>) -> Result<Vec<WorldEvent>, WorldError> {
        for (&id, cmd) in commands {
            self.agent_index(id)?;
            if !cmd.twist.is_finite() {
                return Err(WorldError::NonFiniteCommand(id));
            }
        }
        let mut next = self.clone();
        let events = next.step_validated(commands)?;
        *self = next;
        Ok(events)
    }

    fn step_validated(&mut self, commands: &BTreeMap<AgentId, AgentCommand>) -> Result<Vec<WorldEvent>, WorldError> {
        let mut events = Vec::new();
        let dt = self.clock.dt;
        let mut order: Vec<usize> = (0..self.agents.len()).collect();
        order.sort_by_key(|&i| self.agents[i].id);
        for idx in order {
            let id = self.agents[idx].id;
            let cmd = commands.get(&id).copied().unwrap_or_default();
            if let Some(grip) = cmd.grip {
                self.apply_grip(idx, grip, &mut events)?;
            }
            let (twist, clamped) = self.robot.limits.clamp(cmd.twist);
            if clamped {
                events.push(WorldEvent::Clamped {
                    agent: id,
                    requested: cmd.twist,
                    applied: twist,
                });
            }
            let before = self.agents[idx].pose;
            let candidate = integrate_step(before, twist, dt);
            match self.sweep_contact(idx, before.position(), candidate.position()) {
                Some(contact) => {
                    self.agents[idx].twist = Twist::ZERO;
                    events.push(WorldEvent::Collision { agent: id, contact });
                }
                None => {
                    self.agents[idx].twist = twist;
                    let zones_before = self.zones_containing(before.position());
                    self.agents[idx].pose = candidate;
                    let zones_after = self.zones_containing(candidate.position());
                    for &z in zones_after.iter().filter(|z| !zones_before.contains(z)) {
                        events.push(WorldEvent::ZoneEntered {
                            agent: id,
                            zone: z,
                            color: self.zones[z].color,
                        });
                    }
                    for &z in zones_before.iter().filter(|z| !zones_after.contains(z)) {
                        events.push(WorldEvent::ZoneExited {
                            agent: id,
                            zone: z,
                            color: self.zones[z].color,
                        });
                    }
                }
            }
            if let Some(ball) = self.agents[idx].carrying {
                self.balls[ball].position = self.agents[idx].pose.position();
            }
        }
        self.clock.advance();
        Ok(events)
    }
}

/// Pure form of [`WorldState::step`]: returns the successor state.
pub fn step_world(
    world: &WorldState,
    commands: &BTreeMap<AgentId, AgentCommand>,
) -> Result<(WorldState, Vec<WorldEvent>), WorldError> {
    let mut next = world.clone();
    let events = next.step(commands)?;
    Ok((next, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::{AreaSpec, WorldBuilder};

    fn room(agents: &[Pose]) -> WorldBuilder {
        let mut b = WorldBuilder::new(vec![AreaSpec::new(10, 10)]);
        for &p in agents {
            b = b.agent(p);
        }
        b
    }

    fn drive(v: f64, w: f64) -> BTreeMap<AgentId, AgentCommand> {
        BTreeMap::from([(0, Twist::new(v, w).into())])
    }

    #[test]
    fn straight_line_motion() {
        let mut world = room(&[Pose::new(2.0, 5.5, 0.0)]).build().unwrap();
        for _ in 0..20 {
            assert!(world.step(&drive(1.0, 0.0)).unwrap().is_empty());
        }
        let p = world.agents[0].pose;
        assert!((p.x - 3.0).abs() < 1e-9);
        assert_eq!(p.y, 5.5);
        assert_eq!(world.clock.tick, 20);
    }

    #[test]
    fn wall_contact_keeps_pose() {
        let start = Pose::new(10.0 - 0.3 - 0.04, 5.5, 0.0);
        let mut world = room(&[start]).build().unwrap();
        let events = world.step(&drive(1.0, 0.0)).unwrap();
        assert!(matches!(
            events[..],
            [WorldEvent::Collision {
                agent: 0,
                contact: Contact::Wall(_)
            }]
        ));
        assert_eq!(world.agents[0].pose, start);
        assert_eq!(world.agents[0].twist, Twist::ZERO);
        // Backing away is allowed.
        world.step(&drive(-1.0, 0.0)).unwrap();
        assert!(world.agents[0].pose.x < start.x);
    }

    #[test]
    fn robots_block_each_other() {
        let mut world = room(&[Pose::new(4.0, 5.5, 0.0), Pose::new(4.62, 5.5, 0.0)]).build().unwrap();
        let events = world.step(&drive(1.0, 0.0)).unwrap();
        assert!(matches!(
            events[..],
            [WorldEvent::Collision {
                contact: Contact::Agent(1),
                ..
            }]
        ));
    }

    #[test]
    fn commands_are_clamped() {
        let mut world = room(&[Pose::new(2.0, 5.5, 0.0)]).build().unwrap();
        let events = world.step(&drive(3.0, -10.0)).unwrap();
        let WorldEvent::Clamped { applied, .. } = events[0] else {
            panic!("expected clamp, got {events:?}");
        };
        assert_eq!(applied, Twist::new(1.0, -std::f64::consts::PI));
    }

    #[test]
    fn carried_ball_follows_and_drops_into_zone() {
        let mut world = room(&[Pose::new(3.5, 5.5, 0.0)])
            .ball(Color::Orange, Vec2::new(3.7, 5.5))
            .zone(Color::Red, Vec2::new(5.5, 5.5))
            .build()
            .unwrap();
        let pick = BTreeMap::from([(
            0,
            AgentCommand {
                twist: Twist::new(1.0, 0.0),
                grip: Some(Grip::Pick { ball: 0 }),
            },
        )]);
        let events = world.step(&pick).unwrap();
        assert!(matches!(events[0], WorldEvent::BallPickedUp { ball: 0, .. }));
        assert_eq!(world.balls[0].position, world.agents[0].pose.position());
        let mut entered = false;
        for _ in 0..30 {
            let ev = world.step(&drive(1.0, 0.0)).unwrap();
            entered |= ev.iter().any(|e| matches!(e, WorldEvent::ZoneEntered { zone: 0, .. }));
            assert_eq!(world.balls[0].position, world.agents[0].pose.position());
        }
        assert!(entered);
        let drop = BTreeMap::from([(
            0,
            AgentCommand {
                twist: Twist::ZERO,
                grip: Some(Grip::Drop),
            },
        )]);
        let events = world.step(&drop).unwrap();
        assert!(matches!(events[0], WorldEvent::BallDropped { zone: Some(0), .. }));
        assert_eq!(world.balls[0].carried_by, None);
    }

    #[test]
    fn out_of_reach_pick_fails_atomically() {
        let world = room(&[Pose::new(2.0, 5.5, 0.0)])
            .ball(Color::Blue, Vec2::new(6.5, 5.5))
            .build()
            .unwrap();
        let cmd = BTreeMap::from([(
            0,
            AgentCommand {
                twist: Twist::new(1.0, 0.0),
                grip: Some(Grip::Pick { ball: 0 }),
            },
        )]);
        let mut w = world.clone();
        assert!(matches!(w.step(&cmd), Err(WorldError::InvalidGrip { .. })));
        assert_eq!(w, world);
        assert_eq!(w.step(&drive(f64::NAN, 0.0)), Err(WorldError::NonFiniteCommand(0)));
        let bad = BTreeMap::from([(7, AgentCommand::default())]);
        assert_eq!(w.step(&bad), Err(WorldError::UnknownAgent(7)));
        assert_eq!(w, world);
    }

    #[test]
    fn step_is_deterministic() {
        let world = room(&[Pose::new(2.0, 2.0, 0.3), Pose::new(7.0, 7.0, -2.0)]).build().unwrap();
        let cmds = BTreeMap::from([(0, Twist::new(0.8, 0.4).into()), (1, Twist::new(0.5, -0.9).into())]);
        let run = || {
            let mut w = world.clone();
            let mut log = Vec::new();
            for _ in 0..200 {
                log.extend(w.step(&cmds).unwrap());
            }
            (w, log)
        };
        assert_eq!(run(), run());
        let (next, _) = step_world(&world, &cmds).unwrap();
        assert_eq!(next.clock.tick, 1);
        assert_eq!(world.clock.tick, 0);
    }

    #[test]
    fn color_parsing() {
        assert_eq!("orange".parse::<Color>(), Ok(Color::Orange));
        assert_eq!("RED".parse::<Color>(), Ok(Color::Red));
        assert!("teal".parse::<Color>().is_err());
        assert_eq!(Color::Purple.to_string(), "Purple");
    }
}
