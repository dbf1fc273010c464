//! Scenario runner: builds the world, drives the configured controllers
//! headless or behind the bridge, and writes the trace and metrics.

use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

use navsim_bridge::hub::{PlannerMode, SimBridge, TickMode};
use navsim_bridge::server::{self, ServerConfig};
use navsim_core::executor::Phase;
use navsim_core::harness::{compute_polyline_error, oscillator_reference, PathMetrics};
use navsim_core::lang::{parse_plan, render_world_description, validate_plan, Plan};
use navsim_core::planner::{llm_plan, stub_plan_for_command, HttpBackend, PlannerResponse, PromptContext};
use navsim_core::procgen::generate_environment;
use navsim_core::session::{Session, TraceRecord};
use navsim_core::{AgentId, Pose, SimClock, Vec2, WorldEvent, WorldState};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::config::{AgentConfig, PlannerKind, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GENERATION: i32 = 3;
pub const EXIT_PLAN: i32 = 4;
pub const EXIT_TIMEOUT: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConfigError,
    GenerationFailed,
    PlanFailed,
    Timeout,
    Internal,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => EXIT_OK,
            Status::Internal => EXIT_INTERNAL,
            Status::ConfigError => EXIT_CONFIG,
            Status::GenerationFailed => EXIT_GENERATION,
            Status::PlanFailed => EXIT_PLAN,
            Status::Timeout => EXIT_TIMEOUT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::ConfigError => "config_error",
            Status::GenerationFailed => "generation_failed",
            Status::PlanFailed => "plan_failed",
            Status::Timeout => "timeout",
            Status::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub status: Status,
    pub ticks: u64,
    /// Human-readable lines, most important first.
    pub messages: Vec<String>,
    /// Flat key/value pairs, in output order.
    pub metrics: Vec<(String, String)>,
}

impl ExitReport {
    fn early(status: Status, message: String) -> Self {
        Self {
            status,
            ticks: 0,
            messages: vec![message],
            metrics: Vec::new(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    pub fn metrics_text(&self) -> String {
        self.metrics.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }
}

/// Output file written to a temporary sibling and renamed into place on
/// success. Dropping it unpersisted leaves nothing behind.
pub struct AtomicFile {
    tmp: BufWriter<NamedTempFile>,
    path: std::path::PathBuf,
}

impl AtomicFile {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = tempfile::Builder::new().prefix(".navsim-").suffix(".tmp").tempfile_in(dir)?;
        Ok(Self {
            tmp: BufWriter::new(tmp),
            path: path.to_path_buf(),
        })
    }

    pub fn write_str(&mut self, s: &str) -> std::io::Result<()> {
        self.tmp.write_all(s.as_bytes())
    }

    pub fn commit(self) -> std::io::Result<()> {
        let tmp = self.tmp.into_inner().map_err(|e| e.into_error())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut f = AtomicFile::create(path)?;
    f.write_str(contents)?;
    f.commit()
}

struct Outputs {
    trace: Option<AtomicFile>,
    metrics: Option<AtomicFile>,
}

impl Outputs {
    fn open(cfg: &ScenarioConfig) -> Result<Self, String> {
        let open = |p: &Option<std::path::PathBuf>| -> Result<Option<AtomicFile>, String> {
            p.as_deref()
                .map(|p| AtomicFile::create(p).map_err(|e| format!("cannot write {}: {e}", p.display())))
                .transpose()
        };
        Ok(Self {
            trace: open(&cfg.output.trace)?,
            metrics: open(&cfg.output.metrics)?,
        })
    }

    fn record(&mut self, r: &TraceRecord) -> std::io::Result<()> {
        match self.trace.as_mut() {
            Some(f) => f.write_str(&r.to_json_line()),
            None => Ok(()),
        }
    }
}

fn planner_mode(cfg: &ScenarioConfig) -> PlannerMode {
    match cfg.planner.mode {
        PlannerKind::None => PlannerMode::None,
        PlannerKind::Stub => PlannerMode::Stub,
        PlannerKind::Llm => PlannerMode::Llm(cfg.planner.llm.clone()),
    }
}

/// A plan for one agent, from call text or through the planner.
fn resolve_plan(cfg: &ScenarioConfig, world: &WorldState, plan: Option<&str>, command: Option<&str>) -> Result<(Plan, Option<PlannerResponse>), String> {
    if let Some(text) = plan {
        let plan = parse_plan(text).map_err(|e| e.to_string())?;
        let report = validate_plan(&plan, world);
        if !report.is_valid() {
            return Err(report.to_string());
        }
        return Ok((plan, None));
    }
    let command = command.unwrap_or_default();
    let response = match cfg.planner.mode {
        PlannerKind::Stub => stub_plan_for_command(world, command),
        PlannerKind::Llm => {
            let ctx = PromptContext::new(render_world_description(world), command.to_string());
            llm_plan(&ctx, world, &mut HttpBackend::new(cfg.planner.llm.clone()))
        }
        PlannerKind::None => return Err("no planner configured".into()),
    }
    .map_err(|e| e.to_string())?;
    Ok((response.plan.clone(), Some(response)))
}

/// Starts each agent's controller. Returns the trace records produced, or
/// the failure and the records up to it.
fn start_controllers(cfg: &ScenarioConfig, session: &mut Session) -> (Vec<TraceRecord>, Option<String>) {
    let mut records = Vec::new();
    for (agent, a) in cfg.agents.iter().enumerate() {
        match a {
            AgentConfig::External => {}
            AgentConfig::Oscillator { oscillator, v } => {
                if let Err(e) = session.start_oscillator(agent, *oscillator, *v) {
                    return (records, Some(format!("agent {agent}: {e}")));
                }
            }
            AgentConfig::Plan { plan, command } => {
                let stage = if plan.is_some() { "plan" } else { "planner" };
                let resolved = resolve_plan(cfg, &session.world, plan.as_deref(), command.as_deref())
                    .and_then(|(p, r)| session.start_plan(agent, &p).map(|()| (p, r)).map_err(|e| e.to_string()));
                match resolved {
                    Ok((plan, response)) => records.push(TraceRecord::Plan {
                        agent,
                        calls: plan.calls.clone(),
                        text: plan.render(),
                        reasoning: response.as_ref().map(|r| r.reasoning.clone()),
                        answer: response.map(|r| r.answer),
                    }),
                    Err(detail) => {
                        records.push(TraceRecord::Error {
                            agent: Some(agent),
                            stage: stage.into(),
                            detail: detail.clone(),
                        });
                        return (records, Some(format!("agent {agent}: {detail}")));
                    }
                }
            }
        }
    }
    (records, None)
}

/// Maps a path traced from the origin onto an agent's start pose.
fn place(points: &[Vec2], start: Pose) -> Vec<Vec2> {
    let (s, c) = start.theta.sin_cos();
    points
        .iter()
        .map(|p| Vec2::new(start.x + c * p.x - s * p.y, start.y + s * p.x + c * p.y))
        .collect()
}

fn push_metrics(out: &mut Vec<(String, String)>, prefix: &str, m: &PathMetrics) {
    for (k, v) in [
        ("rmse", m.rmse),
        ("max_dev", m.max_dev),
        ("endpoint", m.endpoint),
        ("symmetric_rmse", m.symmetric_rmse),
        ("symmetric_max_dev", m.symmetric_max_dev),
    ] {
        out.push((format!("{prefix}{k}"), v.to_string()));
    }
}

/// Everything needed to summarize a finished run.
struct RunSummary<'a> {
    cfg: &'a ScenarioConfig,
    records: &'a [TraceRecord],
    start_poses: &'a [Pose],
    ticks: u64,
}

impl RunSummary<'_> {
    fn metrics(&self, status: Status) -> Vec<(String, String)> {
        let mut m = vec![
            ("status".to_string(), status.as_str().to_string()),
            ("exit_code".into(), status.exit_code().to_string()),
            ("ticks".into(), self.ticks.to_string()),
            ("sim_time".into(), (self.ticks as f64 * self.cfg.dt).to_string()),
        ];
        let calls = self.records.iter().filter_map(|r| match r {
            TraceRecord::Call(c) => Some(c),
            _ => None,
        });
        let (done, failed) = calls.fold((0, 0), |(d, f), c| match c.phase {
            Phase::Done => (d + 1, f),
            _ => (d, f + 1),
        });
        let events = || {
            self.records.iter().flat_map(|r| match r {
                TraceRecord::Tick(t) => t.events.as_slice(),
                _ => &[],
            })
        };
        let collisions = events().filter(|e| matches!(e, WorldEvent::Collision { .. })).count();
        let delivered = events()
            .filter(|e| matches!(e, WorldEvent::BallDropped { zone: Some(_), .. }))
            .count();
        m.extend([
            ("calls_done".into(), done.to_string()),
            ("calls_failed".into(), failed.to_string()),
            ("collisions".into(), collisions.to_string()),
            ("balls_in_zones".into(), delivered.to_string()),
        ]);
        for (agent, a) in self.cfg.agents.iter().enumerate() {
            let AgentConfig::Oscillator { oscillator, v } = a else { continue };
            let path = self.path_of(agent);
            let duration = self.ticks as f64 * self.cfg.dt;
            let reference = (duration > 0.0)
                .then(|| oscillator_reference(oscillator, *v, duration, self.cfg.dt).ok())
                .flatten()
                .map(|r| place(&r.positions(), self.start_poses[agent]));
            if let Some(Ok(pm)) = reference.map(|r| compute_polyline_error(&path, &r)) {
                push_metrics(&mut m, &format!("agent{agent}."), &pm);
            }
        }
        m
    }

    fn path_of(&self, agent: AgentId) -> Vec<Vec2> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Tick(t) => t.agents.iter().find(|a| a.id == agent).map(|a| a.pose.position()),
                _ => None,
            })
            .collect()
    }
}

fn outcome(records: &[TraceRecord], session: &Session) -> (Status, Option<String>) {
    let failed = records.iter().find_map(|r| match r {
        TraceRecord::Call(c) if c.phase != Phase::Done => Some(c),
        _ => None,
    });
    if let Some(c) = failed {
        let why = c.reason.as_ref().map(|r| format!(" ({r:?})")).unwrap_or_default();
        return (
            Status::PlanFailed,
            Some(format!("agent {} call {} {} ended {:?}{why}", c.agent, c.index, c.call, c.phase)),
        );
    }
    if session.any_plan_active() {
        return (Status::Timeout, Some("tick limit reached with a plan still running".into()));
    }
    (Status::Ok, None)
}

/// Runs a scenario to completion and writes its outputs.
pub fn run_scenario(cfg: &ScenarioConfig) -> ExitReport {
    if let Err(e) = cfg.validate() {
        return ExitReport::early(Status::ConfigError, e.to_string());
    }
    let mut outputs = match Outputs::open(cfg) {
        Ok(o) => o,
        Err(e) => return ExitReport::early(Status::ConfigError, e),
    };
    let mut world = match generate_environment(&cfg.environment) {
        Ok(w) => w,
        Err(e) => return ExitReport::early(Status::GenerationFailed, format!("generation failed: {e}")),
    };
    if cfg.agents.len() > world.agents.len() {
        return ExitReport::early(
            Status::ConfigError,
            format!("{} agent entries for a world with {} agents", cfg.agents.len(), world.agents.len()),
        );
    }
    world.clock = SimClock::new(cfg.dt).expect("dt validated");
    let start_poses: Vec<Pose> = world.agents.iter().map(|a| a.pose).collect();
    let mut session = Session::new(world, cfg.session_config());

    let mut records = vec![TraceRecord::Tick(session.snapshot())];
    let (started, failure) = start_controllers(cfg, &mut session);
    records.extend(started);
    let limit = cfg.tick_limit();

    let (status, message) = match failure {
        Some(f) => (Status::PlanFailed, Some(f)),
        None if cfg.bridge.enabled => match serve_session(cfg, session, limit) {
            Ok((s, recorded)) => {
                session = s;
                records.extend(recorded);
                outcome(&records, &session)
            }
            Err(e) => return ExitReport::early(Status::Internal, e),
        },
        None => {
            let mut err = None;
            while limit.map_or(session.any_plan_active(), |l| session.world.clock.tick < l) {
                match session.tick() {
                    Ok(st) => records.extend(st.trace_records()),
                    Err(e) => {
                        records.push(TraceRecord::Error {
                            agent: None,
                            stage: "step".into(),
                            detail: e.to_string(),
                        });
                        err = Some(e.to_string());
                        break;
                    }
                }
            }
            match err {
                Some(e) => (Status::Internal, Some(e)),
                None => outcome(&records, &session),
            }
        }
    };

    let ticks = session.world.clock.tick;
    records.push(TraceRecord::End {
        status: status.as_str().into(),
        exit_code: status.exit_code(),
        ticks,
    });
    let summary = RunSummary {
        cfg,
        records: &records,
        start_poses: &start_poses,
        ticks,
    };
    let metrics = summary.metrics(status);
    let mut report = ExitReport {
        status,
        ticks,
        messages: message.into_iter().collect(),
        metrics,
    };
    let written = (|| -> std::io::Result<()> {
        for r in &records {
            outputs.record(r)?;
        }
        if let Some(mut f) = outputs.metrics.take() {
            f.write_str(&report.metrics_text())?;
            f.commit()?;
        }
        if let Some(f) = outputs.trace.take() {
            f.commit()?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        report.status = Status::Internal;
        report.messages.insert(0, format!("writing outputs failed: {e}"));
    }
    report
}

/// Hosts the session behind the bridge until the tick limit, or until
/// every plan finishes when there is no limit and nothing else to drive.
fn serve_session(cfg: &ScenarioConfig, session: Session, limit: Option<u64>) -> Result<(Session, Vec<TraceRecord>), String> {
    let mut sim = SimBridge::new(session, cfg.environment.clone(), planner_mode(cfg));
    if cfg.output.trace.is_some() {
        sim = sim.record_trace();
    }
    sim.scan_every = cfg.sensors.scan_every;
    sim.max_ticks = limit;
    sim.stop_when_idle =
        limit.is_none() && !cfg.agents.is_empty() && cfg.agents.iter().all(|a| matches!(a, AgentConfig::Plan { .. }));
    let handle = server::start(
        sim,
        ServerConfig {
            bind: cfg.bridge.bind.clone(),
            port: cfg.bridge.port,
            static_dir: cfg.bridge.static_dir.clone(),
            tick: TickMode::RealTime { speed: cfg.bridge.speed },
        },
    )
    .map_err(|e| format!("cannot listen on {}:{}: {e}", cfg.bridge.bind, cfg.bridge.port))?;
    log::info!("bridge listening on {}", handle.local_addr());
    let mut sim = handle.wait().ok_or("bridge hub panicked")?;
    let recorded = sim.take_trace();
    Ok((sim.session, recorded))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE: &str = "search_ball('Orange'); catch_the_ball('Orange'); search_zone('Green'); go_to_zone('Green'); leave_ball();";

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioConfig::from_toml(text, &[]).unwrap()
    }

    #[test]
    fn plan_run_delivers_the_ball() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(&format!("[environment]\nseed = 7\n[[agents]]\nmode = \"plan\"\nplan = \"{FIVE}\""));
        c.output.trace = Some(dir.path().join("t.jsonl"));
        c.output.metrics = Some(dir.path().join("m.txt"));
        let r = run_scenario(&c);
        assert_eq!(r.status, Status::Ok, "{:?}", r.messages);
        let trace = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
        assert!(trace.contains(r#""event":"ball_dropped""#));
        assert!(trace.lines().last().unwrap().starts_with(r#"{"kind":"end","status":"ok","exit_code":0"#));
        let metrics = std::fs::read_to_string(dir.path().join("m.txt")).unwrap();
        assert!(metrics.contains("calls_done=5\n") && metrics.contains("balls_in_zones=1\n"), "{metrics}");
    }

    #[test]
    fn short_limit_is_a_timeout() {
        let c = cfg(&format!("ticks = 3\n[[agents]]\nmode = \"plan\"\nplan = \"{FIVE}\""));
        let r = run_scenario(&c);
        assert_eq!((r.status, r.ticks), (Status::Timeout, 3));
        assert_eq!(r.exit_code(), EXIT_TIMEOUT);
    }

    #[test]
    fn bad_plan_text_fails_before_running() {
        let c = cfg("[[agents]]\nmode = \"plan\"\nplan = \"search_ball('Blue');\"");
        let r = run_scenario(&c);
        assert_eq!((r.status, r.ticks), (Status::PlanFailed, 0));
    }

    #[test]
    fn stub_command_runs_through_the_planner() {
        let c = cfg("[planner]\nmode = \"stub\"\n[[agents]]\nmode = \"plan\"\ncommand = \"bring the Orange ball to the Red zone\"");
        assert_eq!(run_scenario(&c).status, Status::Ok);
    }

    #[test]
    fn too_many_agents_is_a_config_error() {
        let c = cfg("ticks = 1\n[[agents]]\nmode = \"external\"\n[[agents]]\nmode = \"external\"");
        assert_eq!(run_scenario(&c).status, Status::ConfigError);
    }

    #[test]
    fn placement_rotates_then_translates() {
        let p = place(&[Vec2::new(1.0, 0.0)], Pose::new(2.0, 3.0, std::f64::consts::FRAC_PI_2));
        assert!((p[0].x - 2.0).abs() < 1e-12 && (p[0].y - 4.0).abs() < 1e-12);
    }

    #[test]
    fn atomic_file_leaves_nothing_when_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let f = AtomicFile::create(&dir.path().join("x")).unwrap();
        drop(f);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        write_atomic(&dir.path().join("y"), "hi").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("y")).unwrap(), "hi");
        assert!(AtomicFile::create(&dir.path().join("missing/z")).is_err());
    }
}
