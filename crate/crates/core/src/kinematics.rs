//! Unicycle kinematics, the damped-sinusoid steering profile and the
//! fixed-step simulation clock.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid oscillator parameters: {0}")]
    InvalidOscillator(&'static str),
    #[error("time step must be positive and finite, got {0}")]
    InvalidDt(f64),
}

/// Planar robot pose. `theta` is kept in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }
}

/// Commanded body velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    /// Forward speed, m/s.
    pub linear: f64,
    /// Yaw rate, rad/s.
    pub angular: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist {
        linear: 0.0,
        angular: 0.0,
    };

    pub const fn new(linear: f64, angular: f64) -> Self {
        Self { linear, angular }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.is_finite() && self.angular.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: PI,
        }
    }
}

impl VelocityLimits {
    /// Clamps both components into the limits. The flag reports whether
    /// anything changed.
    pub fn clamp(&self, twist: Twist) -> (Twist, bool) {
        let linear = twist.linear.clamp(-self.v_max, self.v_max);
        let angular = twist.angular.clamp(-self.omega_max, self.omega_max);
        let clamped = Twist::new(linear, angular);
        (clamped, clamped != twist)
    }
}

/// Parameters of the damped sinusoidal yaw-rate profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    /// Peak yaw rate, rad/s.
    pub amplitude: f64,
    /// Exponential damping rate, 1/s.
    pub damping: f64,
    /// Phase onset, s.
    pub onset: f64,
    /// Oscillation period, s.
    pub period: f64,
    /// Constant yaw-rate offset, rad/s.
    pub bias: f64,
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let all = [self.amplitude, self.damping, self.onset, self.period, self.bias];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite("oscillator parameters"));
        }
        if self.period <= 0.0 {
            return Err(KinematicsError::InvalidOscillator("period must be > 0"));
        }
        if self.damping < 0.0 {
            return Err(KinematicsError::InvalidOscillator("damping must be >= 0"));
        }
        if self.amplitude < 0.0 {
            return Err(KinematicsError::InvalidOscillator("amplitude must be >= 0"));
        }
        Ok(())
    }
}

/// `A * exp(-lambda t) * sin(2 pi (t - t0) / T) + bias`.
pub fn oscillatory_omega(params: &OscillatorParams, t: f64) -> f64 {
    params.amplitude
        * (-params.damping * t).exp()
        * (TAU * (t - params.onset) / params.period).sin()
        + params.bias
}

/// Wraps an angle into `[-pi, pi)` as `((theta + pi) mod 2pi) - pi` with a
/// non-negative remainder, so `pi` maps to `-pi`.
pub fn normalize_angle(theta: f64) -> Result<f64, KinematicsError> {
    if !theta.is_finite() {
        return Err(KinematicsError::NonFiniteAngle(theta));
    }
    Ok(wrap_angle(theta))
}

/// Infallible form of [`normalize_angle`] for callers holding finite values.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        // Already canonical; the closed form is the identity here, and
        // skipping the add/subtract keeps the value bit-exact.
        return theta;
    }
    let wrapped = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly 2pi.
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// One unicycle step. Orientation is updated first and the new heading
/// drives the position update.
pub fn integrate_step(pose: Pose, cmd: Twist, dt: f64) -> Pose {
    let theta = wrap_angle(pose.theta + cmd.angular * dt);
    Pose {
        x: pose.x + cmd.linear * theta.cos() * dt,
        y: pose.y + cmd.linear * theta.sin() * dt,
        theta,
    }
}

/// Fixed-step clock. Time is derived from the integer tick count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub tick: u64,
    pub dt: f64,
}

impl SimClock {
    pub const DEFAULT_DT: f64 = 0.05;

    pub fn new(dt: f64) -> Result<Self, KinematicsError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(KinematicsError::InvalidDt(dt));
        }
        Ok(Self { tick: 0, dt })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn advance(&mut self) {
        self.tick += 1;
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self {
            tick: 0,
            dt: Self::DEFAULT_DT,
        }
    }
}
