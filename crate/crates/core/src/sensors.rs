//! Simulated 2D LiDAR and odometry.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Shape, Vec2};
use crate::kinematics::{wrap_angle, Pose, Twist};
use crate::rng::SimRng;
use crate::world::{AgentId, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("invalid lidar config: {0}")]
    InvalidConfig(&'static str),
    #[error("noise sigma must be finite and non-negative")]
    NegativeSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub beam_count: usize,
    /// Field of view, radians, centered on the mount direction.
    pub fov: f64,
    pub max_range: f64,
    /// Mount direction relative to the robot heading.
    pub mount_offset: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beam_count: 360,
            fov: 1.5 * PI,
            max_range: 10.0,
            mount_offset: 0.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.beam_count == 0 {
            return Err(SensorError::InvalidConfig("beam_count must be >= 1"));
        }
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return Err(SensorError::InvalidConfig("fov must be in (0, 2pi]"));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(SensorError::InvalidConfig("max_range must be positive"));
        }
        if !self.mount_offset.is_finite() {
            return Err(SensorError::InvalidConfig("mount_offset must be finite"));
        }
        Ok(())
    }

    /// Beam spacing. Beams sit at the centers of `beam_count` equal
    /// slices of the field of view, so the fan is symmetric about the mount
    /// direction.
    pub fn angle_increment(&self) -> f64 {
        self.fov / self.beam_count as f64
    }

    /// First beam angle relative to the robot heading.
    pub fn angle_min(&self) -> f64 {
        self.mount_offset - 0.5 * self.fov + 0.5 * self.angle_increment()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFrame {
    pub stamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    /// Counterclockwise from `angle_min`.
    pub ranges: Vec<f64>,
}

/// What a ray stopped on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayTarget {
    Wall(usize),
    Obstacle(usize),
    Ball(usize),
    Agent(AgentId),
}

/// Nearest hit along a unit ray from `origin`, ignoring the disc of
/// `skip_agent` and any carried ball.
pub fn cast_ray(
    world: &WorldState,
    skip_agent: Option<AgentId>,
    origin: Vec2,
    dir: Vec2,
) -> Option<(f64, RayTarget)> {
    let mut best: Option<(f64, RayTarget)> = None;
    let mut consider = |t: Option<f64>, target: RayTarget| {
        if let Some(t) = t {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, target));
            }
        }
    };
    for (i, w) in world.walls.iter().enumerate() {
        consider(w.ray_hit(origin, dir), RayTarget::Wall(i));
    }
    for (i, o) in world.obstacles.iter().enumerate() {
        consider(o.shape.ray_hit(origin, dir), RayTarget::Obstacle(i));
    }
    for (i, b) in world.balls.iter().enumerate() {
        if b.carried_by.is_none() {
            consider(b.footprint().ray_hit(origin, dir), RayTarget::Ball(i));
        }
    }
    for a in &world.agents {
        if Some(a.id) != skip_agent {
            let disc = Shape::circle(a.pose.position(), world.robot.radius);
            consider(disc.ray_hit(origin, dir), RayTarget::Agent(a.id));
        }
    }
    best
}

pub fn lidar_scan(world: &WorldState, agent: AgentId, config: &LidarConfig) -> Result<ScanFrame, SensorError> {
    config.validate()?;
    let pose = world.agent(agent).ok_or(SensorError::UnknownAgent(agent))?.pose;
    let angle_min = config.angle_min();
    let inc = config.angle_increment();
    let origin = pose.position();
    let ranges = (0..config.beam_count)
        .map(|i| {
            let dir = Vec2::from_angle(pose.theta + angle_min + i as f64 * inc);
            match cast_ray(world, Some(agent), origin, dir) {
                Some((t, _)) if t < config.max_range => t.max(f64::MIN_POSITIVE),
                _ => config.max_range,
            }
        })
        .collect();
    Ok(ScanFrame {
        stamp: world.clock.time(),
        angle_min,
        angle_increment: inc,
        range_max: config.max_range,
        ranges,
    })
}

/// Indices of free balls the agent's LiDAR can see: inside range and field
/// of view with a clear line of sight to the ball.
pub fn visible_balls(world: &WorldState, agent: AgentId, config: &LidarConfig) -> Result<Vec<usize>, SensorError> {
    config.validate()?;
    let pose = world.agent(agent).ok_or(SensorError::UnknownAgent(agent))?.pose;
    let origin = pose.position();
    let mut seen = Vec::new();
    for (i, b) in world.balls.iter().enumerate() {
        if b.carried_by.is_some() {
            continue;
        }
        let to = b.position - origin;
        let d = to.norm();
        if d == 0.0 {
            seen.push(i);
            continue;
        }
        if d >= config.max_range {
            continue;
        }
        let bearing = wrap_angle(to.y.atan2(to.x) - pose.theta - config.mount_offset);
        if config.fov < TAU && bearing.abs() > 0.5 * config.fov {
            continue;
        }
        if let Some((_, RayTarget::Ball(j))) = cast_ray(world, Some(agent), origin, to * (1.0 / d)) {
            if j == i {
                seen.push(i);
            }
        }
    }
    Ok(seen)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdometryNoise {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    pub stamp: f64,
    pub pose: Pose,
    pub twist: Twist,
    pub noise_sigma_xy: f64,
    pub noise_sigma_theta: f64,
}

/// Ground-truth pose plus independent zero-mean Gaussian noise, applied in
/// the world frame.
pub fn sample_odometry(
    world: &WorldState,
    agent: AgentId,
    noise: OdometryNoise,
    rng: &mut SimRng,
) -> Result<OdometrySample, SensorError> {
    let ok = |s: f64| s.is_finite() && s >= 0.0;
    if !ok(noise.sigma_xy) || !ok(noise.sigma_theta) {
        return Err(SensorError::NegativeSigma);
    }
    let a = world.agent(agent).ok_or(SensorError::UnknownAgent(agent))?;
    let truth = a.pose;
    let pose = Pose {
        x: truth.x + noise.sigma_xy * rng.gaussian(),
        y: truth.y + noise.sigma_xy * rng.gaussian(),
        theta: wrap_angle(truth.theta + noise.sigma_theta * rng.gaussian()),
    };
    Ok(OdometrySample {
        stamp: world.clock.time(),
        pose,
        twist: a.twist,
        noise_sigma_xy: noise.sigma_xy,
        noise_sigma_theta: noise.sigma_theta,
    })
}
