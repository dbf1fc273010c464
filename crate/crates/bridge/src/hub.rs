//! The hub thread: owns the topic table, the client queues and the
//! simulator. Every client request, planner result and tick goes through
//! one ordered command queue.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use navsim_core::lang::{parse_plan, render_world_description, validate_plan, Plan};
use navsim_core::planner::{
    llm_plan, stub_plan_for_command, HttpBackend, LlmEndpointConfig, PlannerError, PlannerResponse, PromptContext,
};
use navsim_core::procgen::{generate_environment, EnvironmentSpec};
use navsim_core::session::{Session, SessionError, TraceRecord};
use navsim_core::world::AgentId;
use navsim_core::Twist;
use serde_json::{json, Value};

use crate::protocol::{encode, BusMessage, DecodeError, Level};
use crate::queue::{ClientQueue, Frame};
use crate::table::{ClientId, Outgoing, TopicTable, SERVER};
use crate::topics::{self, agent_topic};

#[derive(Debug, Clone, PartialEq, Default)]
pub enum PlannerMode {
    #[default]
    None,
    Stub,
    Llm(LlmEndpointConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TickMode {
    /// Ticks every `dt / speed` seconds of wall time.
    RealTime { speed: f64 },
    /// Ticks only on [`HubCommand::Step`].
    Manual,
}

pub enum HubCommand {
    Connect {
        client: ClientId,
        queue: Arc<ClientQueue>,
    },
    Frame {
        client: ClientId,
        msg: BusMessage,
    },
    Invalid {
        client: ClientId,
        error: DecodeError,
        topic: Option<String>,
        id: Option<String>,
    },
    Disconnect {
        client: ClientId,
    },
    PlannerDone {
        client: ClientId,
        agent: AgentId,
        id: Option<String>,
        result: Result<PlannerResponse, PlannerError>,
    },
    Step {
        ticks: u64,
        done: Sender<u64>,
    },
    Shutdown,
}

/// Work the simulator asks of the hub.
#[derive(Default)]
struct SimOutput {
    publish: Vec<BusMessage>,
    replies: Vec<(ClientId, BusMessage)>,
    jobs: Vec<PlannerJob>,
    /// The agent set changed; declare topics for new agents.
    redeclare: bool,
}

struct PlannerJob {
    client: ClientId,
    agent: AgentId,
    id: Option<String>,
    ctx: PromptContext,
    world: navsim_core::WorldState,
    endpoint: LlmEndpointConfig,
}

/// The simulator as seen from the bus.
pub struct SimBridge {
    pub session: Session,
    pub spec: EnvironmentSpec,
    pub planner: PlannerMode,
    /// Publish a scan every this many ticks.
    pub scan_every: u64,
    /// Stop the hub after this many ticks.
    pub max_ticks: Option<u64>,
    /// Stop the hub once no agent has a plan left.
    pub stop_when_idle: bool,
    declared: BTreeSet<AgentId>,
    recorded: Option<Vec<TraceRecord>>,
}

fn data_of(msg: &BusMessage) -> (String, AgentId) {
    let m = msg.msg.as_ref();
    let text = m.and_then(|m| m.get("data")).and_then(Value::as_str).unwrap_or_default();
    let agent = m.and_then(|m| m.get("agent")).and_then(Value::as_u64).unwrap_or(0);
    (text.to_string(), agent as AgentId)
}

fn status(code: &str, level: Level, detail: impl Into<String>, topic: &str, id: Option<String>) -> BusMessage {
    BusMessage::status(Some(topic), level, code, detail).with_id(id)
}

impl SimBridge {
    pub fn new(session: Session, spec: EnvironmentSpec, planner: PlannerMode) -> Self {
        Self {
            session,
            spec,
            planner,
            scan_every: 1,
            max_ticks: None,
            stop_when_idle: false,
            declared: BTreeSet::new(),
            recorded: None,
        }
    }

    /// Keep every trace record (ticks included) for [`Self::take_trace`].
    pub fn record_trace(mut self) -> Self {
        self.recorded = Some(Vec::new());
        self
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.recorded.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn declare(&mut self, table: &mut TopicTable) {
        table.declare(topics::AREAS_DESCRIPTION, topics::STRING, true, false);
        table.declare(topics::ENV_SPEC, topics::ENVIRONMENT_SPEC, true, false);
        table.declare(topics::ENV_WORLD, topics::WORLD_STATE, true, false);
        table.declare(topics::TRACE_TOPIC, topics::TRACE, false, false);
        table.declare(topics::PLAN, topics::STRING, false, true);
        table.declare(topics::COMMAND, topics::STRING, false, true);
        table.declare(topics::ENV_REGENERATE, topics::ENVIRONMENT_SPEC, false, true);
        for a in &self.session.world.agents {
            if self.declared.insert(a.id) {
                table.declare(&topics::cmd_vel(a.id), topics::TWIST, false, true);
                table.declare(&topics::odom(a.id), topics::ODOMETRY, false, false);
                table.declare(&topics::scan(a.id), topics::LASER_SCAN, false, false);
            }
        }
    }

    fn statics(&self) -> Vec<BusMessage> {
        let world = &self.session.world;
        vec![
            BusMessage::publish(
                topics::ENV_SPEC,
                topics::ENVIRONMENT_SPEC,
                serde_json::to_value(&self.spec).expect("spec serializes"),
            ),
            BusMessage::publish(
                topics::ENV_WORLD,
                topics::WORLD_STATE,
                serde_json::to_value(world).expect("world serializes"),
            ),
            BusMessage::publish(
                topics::AREAS_DESCRIPTION,
                topics::STRING,
                json!({"data": render_world_description(world)}),
            ),
        ]
    }

    fn trace(&mut self, out: &mut SimOutput, record: TraceRecord) {
        out.publish.push(BusMessage::publish(
            topics::TRACE_TOPIC,
            topics::TRACE,
            serde_json::to_value(&record).expect("trace record serializes"),
        ));
        if let Some(r) = self.recorded.as_mut() {
            r.push(record);
        }
    }

    fn record_only(&mut self, record: TraceRecord) {
        if let Some(r) = self.recorded.as_mut() {
            r.push(record);
        }
    }

    fn tick(&mut self) -> SimOutput {
        let mut out = SimOutput::default();
        let st = match self.session.tick() {
            Ok(st) => st,
            Err(e) => {
                self.trace(
                    &mut out,
                    TraceRecord::Error {
                        agent: None,
                        stage: "step".into(),
                        detail: e.to_string(),
                    },
                );
                return out;
            }
        };
        for p in &st.phases {
            self.trace(&mut out, TraceRecord::Phase(p.clone()));
        }
        for c in &st.finished {
            self.trace(&mut out, TraceRecord::Call(c.clone()));
        }
        // Ticks reach the bus only when something happened; odometry
        // carries the poses.
        if st.record.events.is_empty() {
            self.record_only(TraceRecord::Tick(st.record.clone()));
        } else {
            self.trace(&mut out, TraceRecord::Tick(st.record.clone()));
        }
        let tick = st.record.tick;
        let ids: Vec<AgentId> = self.session.world.agents.iter().map(|a| a.id).collect();
        for id in ids {
            if let Ok(o) = self.session.odometry(id) {
                out.publish.push(BusMessage::publish(
                    topics::odom(id),
                    topics::ODOMETRY,
                    serde_json::to_value(o).expect("odometry serializes"),
                ));
            }
            if self.scan_every > 0 && tick % self.scan_every == 0 {
                if let Ok(s) = self.session.scan(id) {
                    out.publish.push(BusMessage::publish(
                        topics::scan(id),
                        topics::LASER_SCAN,
                        serde_json::to_value(s).expect("scan serializes"),
                    ));
                }
            }
        }
        out
    }

    fn start_plan(
        &mut self,
        out: &mut SimOutput,
        agent: AgentId,
        plan: &Plan,
        reasoning: Option<String>,
        answer: Option<String>,
    ) -> Result<(), String> {
        if let Err(e) = self.session.start_plan(agent, plan) {
            self.fail(out, Some(agent), "plan", e.to_string());
            return Err(e.to_string());
        }
        self.trace(
            out,
            TraceRecord::Plan {
                agent,
                calls: plan.calls.clone(),
                text: plan.render(),
                reasoning,
                answer,
            },
        );
        Ok(())
    }

    fn fail(&mut self, out: &mut SimOutput, agent: Option<AgentId>, stage: &str, detail: String) {
        self.trace(
            out,
            TraceRecord::Error {
                agent,
                stage: stage.into(),
                detail,
            },
        );
    }

    fn handle(&mut self, from: ClientId, msg: &BusMessage) -> SimOutput {
        let mut out = SimOutput::default();
        let id = msg.id.clone();
        let topic = msg.topic.as_str();
        match topic {
            topics::PLAN => {
                let (text, agent) = data_of(msg);
                let verdict = parse_plan(&text).map_err(|e| ("PlanRejected", e.to_string())).and_then(|plan| {
                    let report = validate_plan(&plan, &self.session.world);
                    if report.is_valid() {
                        Ok(plan)
                    } else {
                        Err(("ValidationFailed", report.to_string()))
                    }
                });
                let verdict = verdict.and_then(|plan| match self.session.world.agent(agent) {
                    Some(_) => Ok(plan),
                    None => Err(("PlanRejected", SessionError::UnknownAgent(agent).to_string())),
                });
                match verdict {
                    Ok(plan) => match self.start_plan(&mut out, agent, &plan, None, None) {
                        Ok(()) => out.replies.push((from, status("PlanAccepted", Level::Info, plan.render(), topic, id))),
                        Err(detail) => out.replies.push((from, status("PlanRejected", Level::Error, detail, topic, id))),
                    },
                    Err((code, detail)) => {
                        out.replies.push((from, status(code, Level::Error, detail.clone(), topic, id)));
                        self.fail(&mut out, Some(agent), "plan", detail);
                    }
                }
            }
            topics::COMMAND => {
                let (text, agent) = data_of(msg);
                match self.planner.clone() {
                    PlannerMode::None => {
                        let detail = "no planner configured".to_string();
                        out.replies.push((from, status("PlannerFailed", Level::Error, detail.clone(), topic, id)));
                        self.fail(&mut out, Some(agent), "planner", detail);
                    }
                    PlannerMode::Stub => {
                        let result = stub_plan_for_command(&self.session.world, &text);
                        self.planner_done(&mut out, from, agent, id, result);
                    }
                    PlannerMode::Llm(endpoint) => out.jobs.push(PlannerJob {
                        client: from,
                        agent,
                        id,
                        ctx: PromptContext::new(render_world_description(&self.session.world), text),
                        world: self.session.world.clone(),
                        endpoint,
                    }),
                }
            }
            topics::ENV_REGENERATE => {
                let spec: Result<EnvironmentSpec, String> =
                    serde_json::from_value(msg.msg.clone().unwrap_or_default()).map_err(|e| e.to_string());
                match spec.and_then(|s| generate_environment(&s).map(|w| (s, w)).map_err(|e| e.to_string())) {
                    Ok((spec, world)) => {
                        let seed = spec.seed;
                        self.session = Session::new(world, *self.session.config());
                        self.spec = spec;
                        out.redeclare = true;
                        out.publish.extend(self.statics());
                        out.replies.push((from, status("Regenerated", Level::Info, format!("seed {seed}"), topic, id)));
                        self.trace(&mut out, TraceRecord::Regenerated { seed });
                    }
                    Err(detail) => {
                        out.replies.push((from, status("GenerationFailed", Level::Error, detail.clone(), topic, id)));
                        self.fail(&mut out, None, "generate", detail);
                    }
                }
            }
            _ => {
                if let Some((agent, "cmd_vel")) = agent_topic(topic) {
                    let twist = serde_json::from_value::<Twist>(msg.msg.clone().unwrap_or_default());
                    let result = twist
                        .map_err(|e| e.to_string())
                        .and_then(|t| self.session.set_twist(agent, t).map_err(|e| e.to_string()));
                    if let Err(detail) = result {
                        out.replies.push((from, status("CommandIgnored", Level::Warning, detail, topic, id)));
                    }
                }
            }
        }
        out
    }

    fn planner_done(
        &mut self,
        out: &mut SimOutput,
        client: ClientId,
        agent: AgentId,
        id: Option<String>,
        result: Result<PlannerResponse, PlannerError>,
    ) {
        let result = result.and_then(|r| match self.session.world.agent(agent) {
            Some(_) => Ok(r),
            None => Err(PlannerError::Http {
                status: None,
                detail: format!("unknown agent {agent}"),
            }),
        });
        match result {
            Ok(r) => {
                let text = r.plan.render();
                let reply = match self.start_plan(out, agent, &r.plan, Some(r.reasoning), Some(r.answer)) {
                    Ok(()) => status("PlanAccepted", Level::Info, text, topics::COMMAND, id),
                    Err(detail) => status("PlannerFailed", Level::Error, detail, topics::COMMAND, id),
                };
                out.replies.push((client, reply));
            }
            Err(e) => {
                out.replies.push((client, status("PlannerFailed", Level::Error, e.to_string(), topics::COMMAND, id)));
                self.fail(out, Some(agent), "planner", e.to_string());
            }
        }
    }

    fn finished(&self) -> bool {
        self.max_ticks.is_some_and(|m| self.session.world.clock.tick >= m)
            || (self.stop_when_idle && !self.session.any_plan_active())
    }
}

pub struct Hub {
    table: TopicTable,
    clients: BTreeMap<ClientId, Arc<ClientQueue>>,
    sim: SimBridge,
    tx: Sender<HubCommand>,
    mode: TickMode,
}

impl Hub {
    /// `tx` feeds back into the hub's own queue (planner results).
    pub fn new(mut sim: SimBridge, mode: TickMode, tx: Sender<HubCommand>) -> Self {
        let mut table = TopicTable::new();
        sim.declare(&mut table);
        let mut hub = Self {
            table,
            clients: BTreeMap::new(),
            sim,
            tx,
            mode,
        };
        let statics = hub.sim.statics();
        hub.publish(statics);
        hub
    }

    pub fn table(&self) -> &TopicTable {
        &self.table
    }

    /// Runs until shutdown, the tick limit, or every sender is gone, and
    /// hands the simulator back.
    pub fn run(mut self, rx: Receiver<HubCommand>) -> SimBridge {
        match self.mode {
            TickMode::Manual => {
                while let Ok(cmd) = rx.recv() {
                    if !self.handle(cmd) {
                        break;
                    }
                }
            }
            TickMode::RealTime { speed } => {
                let period = Duration::from_secs_f64(self.sim.session.world.clock.dt / speed.max(1e-6));
                let mut next = Instant::now() + period;
                while !self.sim.finished() {
                    let now = Instant::now();
                    if now >= next {
                        self.tick();
                        next = (next + period).max(now);
                        continue;
                    }
                    match rx.recv_timeout(next - now) {
                        Ok(cmd) => {
                            if !self.handle(cmd) {
                                break;
                            }
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            }
        }
        for q in self.clients.values() {
            q.close();
        }
        self.sim
    }

    fn handle(&mut self, cmd: HubCommand) -> bool {
        match cmd {
            HubCommand::Connect { client, queue } => {
                self.clients.insert(client, queue);
            }
            HubCommand::Frame { client, msg } => {
                let out = self.table.dispatch(client, msg);
                self.route(out);
            }
            HubCommand::Invalid { client, error, topic, id } => {
                let frame = error.to_status(topic.as_deref(), id);
                self.deliver(&[client], &frame);
            }
            HubCommand::Disconnect { client } => {
                self.table.remove_client(client);
                if let Some(q) = self.clients.remove(&client) {
                    q.close();
                }
            }
            HubCommand::PlannerDone { client, agent, id, result } => {
                let mut out = SimOutput::default();
                self.sim.planner_done(&mut out, client, agent, id, result);
                self.apply(out);
            }
            HubCommand::Step { ticks, done } => {
                for _ in 0..ticks {
                    self.tick();
                }
                let _ = done.send(self.sim.session.world.clock.tick);
            }
            HubCommand::Shutdown => return false,
        }
        true
    }

    fn tick(&mut self) {
        let out = self.sim.tick();
        self.apply(out);
    }

    fn publish(&mut self, msgs: Vec<BusMessage>) {
        for m in msgs {
            let out = self.table.dispatch(SERVER, m);
            self.route(out);
        }
    }

    fn apply(&mut self, out: SimOutput) {
        if out.redeclare {
            self.sim.declare(&mut self.table);
        }
        for (client, msg) in out.replies {
            self.deliver(&[client], &msg);
        }
        self.publish(out.publish);
        for job in out.jobs {
            let tx = self.tx.clone();
            std::thread::spawn(move || {
                let mut backend = HttpBackend::new(job.endpoint);
                let result = llm_plan(&job.ctx, &job.world, &mut backend);
                let _ = tx.send(HubCommand::PlannerDone {
                    client: job.client,
                    agent: job.agent,
                    id: job.id,
                    result,
                });
            });
        }
    }

    fn route(&mut self, out: Vec<Outgoing>) {
        for o in out {
            if o.to.contains(&SERVER) {
                let effects = self.sim.handle(o.from, &o.msg);
                // Request acks follow in `out`, after these effects.
                self.apply(effects);
            }
            let clients: Vec<ClientId> = o.to.iter().copied().filter(|&c| c != SERVER).collect();
            self.deliver(&clients, &o.msg);
        }
    }

    fn deliver(&mut self, to: &[ClientId], msg: &BusMessage) {
        let mut frame: Option<Frame> = None;
        for c in to {
            if let Some(q) = self.clients.get(c) {
                let f = frame.get_or_insert_with(|| encode(msg).into());
                q.push(f.clone());
            }
        }
    }
}
