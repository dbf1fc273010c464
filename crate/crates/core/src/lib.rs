//! Deterministic 2D navigation simulator: kinematics, procedural worlds,
//! sensors, the plan language, primitive execution, planners and metrics.

pub mod executor;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod kinematics;
pub mod lang;
pub mod planner;
pub mod procgen;
pub mod rng;
pub mod sensors;
pub mod session;
pub mod world;

pub use geometry::{Segment, Shape, Vec2};
pub use kinematics::{Pose, SimClock, Twist};
pub use world::{AgentCommand, AgentId, Color, WorldEvent, WorldState};
