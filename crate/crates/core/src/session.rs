//! Live simulation loop: one controller per agent, stepped tick by tick.
//!
//! Agents without a plan or oscillator hold the last twist they were given
//! (zero-order hold). The trace records produced here are shared by the
//! scenario runner and the bus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{step_dropping_rejected, AgentSnapshot, CallRecord, ExecConfig, Executor, FailReason, Phase, TickRecord};
use crate::kinematics::{oscillatory_omega, KinematicsError, OscillatorParams, Twist};
use crate::lang::{Plan, PrimitiveCall};
use crate::rng::SimRng;
use crate::sensors::{lidar_scan, sample_odometry, OdometryNoise, OdometrySample, ScanFrame, SensorError};
use crate::world::{AgentCommand, AgentId, WorldError, WorldEvent, WorldState};

/// RNG stream for odometry noise, derived from the world seed.
const ODOMETRY_STREAM: u64 = 0x0d0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} is executing a plan")]
    PlanActive(AgentId),
    #[error("non-finite twist")]
    NonFinite,
    #[error(transparent)]
    Oscillator(#[from] KinematicsError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone)]
enum Controller {
    Hold(Twist),
    Plan(Box<Executor>),
    Oscillator { params: OscillatorParams, v: f64, start: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub exec: ExecConfig,
    pub odometry: OdometryNoise,
}

/// Phase of an agent's active call after a tick, reported when it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseUpdate {
    pub agent: AgentId,
    pub index: usize,
    pub call: PrimitiveCall,
    pub tick: u64,
    pub phase: Phase,
}

/// One line of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Tick(TickRecord),
    Plan {
        agent: AgentId,
        calls: Vec<PrimitiveCall>,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reasoning: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
    Phase(PhaseUpdate),
    Call(CallRecord),
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<AgentId>,
        stage: String,
        detail: String,
    },
    Regenerated {
        seed: u64,
    },
    End {
        status: String,
        exit_code: i32,
        ticks: u64,
    },
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("trace record serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTick {
    pub record: TickRecord,
    pub phases: Vec<PhaseUpdate>,
    /// Calls that completed or failed during this tick.
    pub finished: Vec<CallRecord>,
}

impl SessionTick {
    /// Phase changes, finished calls, then the tick itself.
    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.phases
            .iter()
            .cloned()
            .map(TraceRecord::Phase)
            .chain(self.finished.iter().cloned().map(TraceRecord::Call))
            .chain(std::iter::once(TraceRecord::Tick(self.record.clone())))
            .collect()
    }
}

pub struct Session {
    pub world: WorldState,
    controllers: BTreeMap<AgentId, Controller>,
    last_phase: BTreeMap<AgentId, (usize, Phase)>,
    last_events: Vec<WorldEvent>,
    rng: SimRng,
    cfg: SessionConfig,
}

impl Session {
    pub fn new(world: WorldState, cfg: SessionConfig) -> Self {
        let controllers = world.agents.iter().map(|a| (a.id, Controller::Hold(Twist::ZERO))).collect();
        let rng = SimRng::derive(world.seed, ODOMETRY_STREAM);
        Self {
            world,
            controllers,
            last_phase: BTreeMap::new(),
            last_events: Vec::new(),
            rng,
            cfg,
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    fn controller(&mut self, agent: AgentId) -> Result<&mut Controller, SessionError> {
        self.controllers.get_mut(&agent).ok_or(SessionError::UnknownAgent(agent))
    }

    /// Zero-order hold: `twist` is applied every tick until replaced.
    /// Refused while the agent runs a plan.
    pub fn set_twist(&mut self, agent: AgentId, twist: Twist) -> Result<(), SessionError> {
        if !twist.is_finite() {
            return Err(SessionError::NonFinite);
        }
        let c = self.controller(agent)?;
        if matches!(c, Controller::Plan(_)) {
            return Err(SessionError::PlanActive(agent));
        }
        *c = Controller::Hold(twist);
        Ok(())
    }

    /// Replaces whatever the agent was doing.
    /// Refused while the agent is still running another plan.
    pub fn start_plan(&mut self, agent: AgentId, plan: &Plan) -> Result<(), SessionError> {
        if self.plan_active(agent) {
            return Err(SessionError::PlanActive(agent));
        }
        let exec = Executor::new(agent, plan, self.cfg.exec);
        *self.controller(agent)? = Controller::Plan(Box::new(exec));
        self.last_phase.remove(&agent);
        Ok(())
    }

    /// Constant `v` with the damped-sinusoid yaw rate, timed from now.
    pub fn start_oscillator(&mut self, agent: AgentId, params: OscillatorParams, v: f64) -> Result<(), SessionError> {
        params.validate()?;
        if !v.is_finite() {
            return Err(SessionError::NonFinite);
        }
        let start = self.world.clock.time();
        *self.controller(agent)? = Controller::Oscillator { params, v, start };
        Ok(())
    }

    pub fn plan_active(&self, agent: AgentId) -> bool {
        matches!(self.controllers.get(&agent), Some(Controller::Plan(_)))
    }

    pub fn any_plan_active(&self) -> bool {
        self.controllers.values().any(|c| matches!(c, Controller::Plan(_)))
    }

    /// Record of the current state without stepping.
    pub fn snapshot(&self) -> TickRecord {
        TickRecord {
            tick: self.world.clock.tick,
            t: self.world.clock.time(),
            agents: self
                .world
                .agents
                .iter()
                .map(|a| {
                    let exec = match self.controllers.get(&a.id) {
                        Some(Controller::Plan(e)) => Some(e),
                        _ => None,
                    };
                    AgentSnapshot {
                        id: a.id,
                        pose: a.pose,
                        carrying: a.carrying,
                        call: exec.and_then(|e| e.active_index()),
                        phase: exec.and_then(|e| e.state().map(|s| s.phase)),
                    }
                })
                .collect(),
            events: Vec::new(),
        }
    }

    pub fn tick(&mut self) -> Result<SessionTick, SessionError> {
        let t = self.world.clock.time();
        let mut finished = Vec::new();
        let mut commands = BTreeMap::new();
        for (&id, c) in self.controllers.iter_mut() {
            let cmd = match c {
                Controller::Hold(twist) => Some(AgentCommand::from(*twist)),
                Controller::Oscillator { params, v, start } => {
                    Some(Twist::new(*v, oscillatory_omega(params, t - *start)).into())
                }
                Controller::Plan(exec) => exec.decide(&self.world, &self.last_events, &mut finished),
            };
            if let Some(cmd) = cmd {
                commands.insert(id, cmd);
            }
        }
        let controllers = &mut self.controllers;
        let events = step_dropping_rejected(&mut self.world, commands, |agent, reason, tick| {
            if let Some(Controller::Plan(exec)) = controllers.get_mut(&agent) {
                exec.abort(FailReason::GripRejected { detail: reason }, tick, &mut finished);
            }
        })?;
        self.last_events = events.clone();

        let tick = self.world.clock.tick;
        finished.sort_by_key(|r| (r.agent, r.index));
        // Terminal phases are only visible on the finished records.
        let mut phases: Vec<PhaseUpdate> = finished
            .iter()
            .map(|r| PhaseUpdate {
                agent: r.agent,
                index: r.index,
                call: r.call.clone(),
                tick: r.end_tick.unwrap_or(tick),
                phase: r.phase,
            })
            .collect();
        for (&id, c) in self.controllers.iter() {
            if let Controller::Plan(exec) = c {
                if let (Some(index), Some(state)) = (exec.active_index(), exec.state()) {
                    if self.last_phase.get(&id) != Some(&(index, state.phase)) {
                        self.last_phase.insert(id, (index, state.phase));
                        phases.push(PhaseUpdate {
                            agent: id,
                            index,
                            call: state.active_call.clone(),
                            tick,
                            phase: state.phase,
                        });
                    }
                }
            }
        }
        for c in self.controllers.values_mut() {
            if matches!(c, Controller::Plan(e) if e.is_finished()) {
                *c = Controller::Hold(Twist::ZERO);
            }
        }
        let mut record = self.snapshot();
        record.events = events;
        Ok(SessionTick {
            record,
            phases,
            finished,
        })
    }

    pub fn scan(&self, agent: AgentId) -> Result<ScanFrame, SensorError> {
        lidar_scan(&self.world, agent, &self.cfg.exec.lidar)
    }

    pub fn odometry(&mut self, agent: AgentId) -> Result<OdometrySample, SensorError> {
        sample_odometry(&self.world, agent, self.cfg.odometry, &mut self.rng)
    }
}
