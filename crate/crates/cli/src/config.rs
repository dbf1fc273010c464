//! Scenario files. TOML, merged over the defaults below, then patched by
//! `--dotted.key=value` overrides before deserializing.

use std::path::{Path, PathBuf};

use navsim_core::executor::{ExecConfig, FollowGains};
use navsim_core::kinematics::OscillatorParams;
use navsim_core::planner::LlmEndpointConfig;
use navsim_core::procgen::EnvironmentSpec;
use navsim_core::sensors::{LidarConfig, OdometryNoise};
use navsim_core::session::SessionConfig;
use navsim_core::SimClock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("bad override '{0}': expected --dotted.key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dt: f64,
    /// Seconds of simulated time. At most one of `duration` and `ticks`.
    pub duration: Option<f64>,
    pub ticks: Option<u64>,
    pub environment: EnvironmentSpec,
    /// Controller per world agent, by index. Agents without an entry are
    /// externally driven.
    pub agents: Vec<AgentConfig>,
    pub sensors: SensorConfig,
    pub exec: ExecSettings,
    pub output: OutputConfig,
    pub bridge: BridgeConfig,
    pub planner: PlannerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentConfig {
    /// Velocity commands arrive over the bus.
    External,
    /// Exactly one of `plan` (call text) or `command` (natural language,
    /// sent to the planner).
    Plan { plan: Option<String>, command: Option<String> },
    Oscillator { oscillator: OscillatorParams, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub lidar: LidarConfig,
    pub odometry: OdometryNoise,
    /// Bus scan rate, in ticks per scan.
    pub scan_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecSettings {
    pub step_budget: u32,
    pub gains: FollowGains,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub trace: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    pub enabled: bool,
    pub bind: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    None,
    Stub,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub mode: PlannerKind,
    pub llm: LlmEndpointConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let exec = ExecConfig::default();
        Self {
            dt: SimClock::DEFAULT_DT,
            duration: None,
            ticks: None,
            environment: EnvironmentSpec::fetch_and_deliver(0),
            agents: Vec::new(),
            sensors: SensorConfig {
                lidar: exec.lidar,
                odometry: OdometryNoise::default(),
                scan_every: 1,
            },
            exec: ExecSettings {
                step_budget: exec.step_budget,
                gains: exec.gains,
            },
            output: OutputConfig::default(),
            bridge: BridgeConfig {
                enabled: false,
                bind: "127.0.0.1".into(),
                port: navsim_bridge::server::DEFAULT_PORT,
                static_dir: None,
                speed: 1.0,
            },
            planner: PlannerConfig::default(),
        }
    }
}

/// Recursive merge; tables merge key by key, anything else is replaced.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a bare string.
fn override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `--a.b.c=value` (or `--a.b.c value`) arguments.
pub fn apply_overrides(table: &mut Table, args: &[String]) -> Result<(), ConfigError> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            return Err(ConfigError::Override(arg.clone()));
        };
        let (key, raw) = match body.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => (body, it.next().ok_or_else(|| ConfigError::Override(arg.clone()))?.clone()),
        };
        let path: Vec<&str> = key.split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::Override(arg.clone()));
        }
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut node = &mut *table;
        for p in parents {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            node = match entry {
                Value::Table(t) => t,
                _ => return Err(ConfigError::Override(arg.clone())),
            };
        }
        node.insert(last.to_string(), override_value(&raw));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut table = Table::try_from(Self::default()).expect("defaults serialize");
        merge(&mut table, user);
        apply_overrides(&mut table, overrides)?;
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if SimClock::new(self.dt).is_err() {
            return invalid(format!("dt must be positive and finite, got {}", self.dt));
        }
        if self.duration.is_some() && self.ticks.is_some() {
            return invalid("set at most one of duration and ticks".into());
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d > 0.0) {
                return invalid(format!("duration must be positive, got {d}"));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            match a {
                AgentConfig::Plan { plan, command } if plan.is_some() == command.is_some() => {
                    return invalid(format!("agents[{i}]: set exactly one of plan and command"));
                }
                AgentConfig::Plan { command: Some(_), .. } if self.planner.mode == PlannerKind::None => {
                    return invalid(format!("agents[{i}]: a command needs planner.mode = \"stub\" or \"llm\""));
                }
                AgentConfig::Oscillator { oscillator, v } => {
                    if let Err(e) = oscillator.validate() {
                        return invalid(format!("agents[{i}]: {e}"));
                    }
                    if !v.is_finite() {
                        return invalid(format!("agents[{i}]: v must be finite"));
                    }
                }
                _ => {}
            }
        }
        let bounded = self.duration.is_some() || self.ticks.is_some();
        let open_ended = self.agents.iter().any(|a| !matches!(a, AgentConfig::Plan { .. }));
        let plans = self.agents.iter().any(|a| matches!(a, AgentConfig::Plan { .. }));
        if !bounded && !self.bridge.enabled && (open_ended || !plans) {
            return invalid("set duration or ticks; only plan-driven runs stop on their own".into());
        }
        if !(self.bridge.speed.is_finite() && self.bridge.speed > 0.0) {
            return invalid("bridge.speed must be positive".into());
        }
        if let Err(e) = self.sensors.lidar.validate() {
            return invalid(format!("sensors.lidar: {e}"));
        }
        let noise = self.sensors.odometry;
        if !(noise.sigma_xy >= 0.0 && noise.sigma_theta >= 0.0 && noise.sigma_xy.is_finite() && noise.sigma_theta.is_finite()) {
            return invalid("sensors.odometry sigmas must be non-negative".into());
        }
        Ok(())
    }

    /// Tick limit implied by `duration` or `ticks`.
    pub fn tick_limit(&self) -> Option<u64> {
        self.ticks
            .or_else(|| self.duration.map(|d| (d / self.dt - 1e-9).ceil() as u64))
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            exec: ExecConfig {
                step_budget: self.exec.step_budget,
                lidar: self.sensors.lidar,
                gains: self.exec.gains,
            },
            odometry: self.sensors.odometry,
        }
    }
}
