use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use navsim_cli::config::ScenarioConfig;
use navsim_cli::scenario::{run_scenario, write_atomic, EXIT_CONFIG, EXIT_GENERATION, EXIT_INTERNAL, EXIT_PLAN};
use navsim_core::harness::{compute_path_error, generate_pentagon_reference, pentagon_vertices, simulate_pentagon};
use navsim_core::lang::render_world_description;
use navsim_core::planner::{llm_plan, stub_plan_for_command, HttpBackend, LlmEndpointConfig, PromptContext};
use navsim_core::procgen::{generate_environment, EnvironmentSpec};
use navsim_core::WorldState;

#[derive(Parser)]
#[command(name = "navsim", version, about = "Deterministic 2D navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Config overrides, e.g. --environment.seed=7 --dt 0.02
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and metrics.
    Run(ScenarioArgs),
    /// Generate a world from an environment spec.
    Gen {
        /// Spec file (TOML, or JSON by extension), or `fetch_and_deliver`.
        spec: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file for the world JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a simulated pentagon drive against the ideal path.
    Pentagon {
        #[arg(long, default_value_t = 2.0)]
        side: f64,
        #[arg(long, default_value_t = 0.5)]
        v: f64,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        /// Yaw rate used for the in-place turns, rad/s.
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
        turn_rate: f64,
        /// Simulated path as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference path as JSON lines.
        #[arg(long)]
        reference_out: Option<PathBuf>,
    },
    /// Print the environment description of a world file.
    Describe { world: PathBuf },
    /// Turn a command into a plan for a world file.
    Plan {
        #[arg(long, conflicts_with = "llm", required_unless_present = "llm")]
        stub: bool,
        #[arg(long)]
        llm: bool,
        #[arg(long)]
        llm_url: Option<String>,
        #[arg(long)]
        llm_model: Option<String>,
        #[arg(long)]
        llm_timeout: Option<f64>,
        command: String,
        world: PathBuf,
    },
    /// Run a scenario behind the bridge.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        /// Directory served over HTTP on the bridge port.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

/// A failure with its exit code.
struct Failure(i32, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_INTERNAL, e.into())
    }
}

fn code(c: i32) -> impl FnOnce(anyhow::Error) -> Failure {
    move |e| Failure(c, e)
}

fn load_config(args: &ScenarioArgs, extra: &[String]) -> Result<ScenarioConfig, Failure> {
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    ScenarioConfig::load(&args.config, &overrides).map_err(|e| Failure(EXIT_CONFIG, e.into()))
}

fn run(cfg: &ScenarioConfig) -> Result<i32, Failure> {
    let report = run_scenario(cfg);
    for m in &report.messages {
        eprintln!("navsim: {m}");
    }
    print!("{}", report.metrics_text());
    Ok(report.exit_code())
}

fn read_spec(spec: &str) -> anyhow::Result<EnvironmentSpec> {
    if spec == "fetch_and_deliver" {
        return Ok(EnvironmentSpec::fetch_and_deliver(0));
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("cannot read {spec}"))?;
    if Path::new(spec).extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

fn read_world(path: &Path) -> Result<WorldState, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{} is not a world file", path.display()))
        .map_err(code(EXIT_CONFIG))
}

fn dispatch(cmd: Command) -> Result<i32, Failure> {
    match cmd {
        Command::Run(args) => run(&load_config(&args, &[])?),
        Command::Serve {
            port,
            bind,
            static_dir,
            scenario,
        } => {
            let mut extra = vec!["--bridge.enabled=true".to_string()];
            if let Some(p) = port {
                extra.push(format!("--bridge.port={p}"));
            }
            let mut cfg = load_config(&scenario, &extra)?;
            if let Some(b) = bind {
                cfg.bridge.bind = b;
            }
            if static_dir.is_some() {
                cfg.bridge.static_dir = static_dir;
            }
            run(&cfg)
        }
        Command::Gen { spec, seed, out } => {
            let mut spec = read_spec(&spec).map_err(code(EXIT_CONFIG))?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let world = generate_environment(&spec).map_err(|e| Failure(EXIT_GENERATION, e.into()))?;
            let mut json = serde_json::to_string_pretty(&world)?;
            json.push('\n');
            match out {
                Some(p) => write_atomic(&p, &json).with_context(|| format!("cannot write {}", p.display()))?,
                None => print!("{json}"),
            }
            Ok(0)
        }
        Command::Pentagon {
            side,
            v,
            dt,
            turn_rate,
            out,
            reference_out,
        } => {
            let reference = generate_pentagon_reference(side, v, dt).map_err(|e| Failure(EXIT_CONFIG, e.into()))?;
            let sim = simulate_pentagon(side, v, turn_rate, dt).map_err(|e| Failure(EXIT_CONFIG, e.into()))?;
            let m = compute_path_error(&sim, &reference)?;
            let closure = reference.last().map_or(0.0, |s| s.pose.position().distance(pentagon_vertices(side)[0]));
            println!("reference_length={}", reference.path_length());
            println!("reference_closure={closure}");
            print!("{}", m.to_key_values());
            if let Some(p) = out {
                write_atomic(&p, &sim.to_jsonl())?;
            }
            if let Some(p) = reference_out {
                write_atomic(&p, &reference.to_jsonl())?;
            }
            Ok(0)
        }
        Command::Describe { world } => {
            println!("{}", render_world_description(&read_world(&world)?));
            Ok(0)
        }
        Command::Plan {
            stub,
            llm: _,
            llm_url,
            llm_model,
            llm_timeout,
            command,
            world,
        } => {
            let world = read_world(&world)?;
            let result = if stub {
                stub_plan_for_command(&world, &command)
            } else {
                let mut endpoint = LlmEndpointConfig::default();
                endpoint.url = llm_url.unwrap_or(endpoint.url);
                endpoint.model = llm_model.unwrap_or(endpoint.model);
                endpoint.timeout_secs = llm_timeout.unwrap_or(endpoint.timeout_secs);
                let ctx = PromptContext::new(render_world_description(&world), command);
                llm_plan(&ctx, &world, &mut HttpBackend::new(endpoint))
            };
            let r = result.map_err(|e| Failure(EXIT_PLAN, e.into()))?;
            println!("Reasoning:\n{}\n\nResponse: {}\n\nTasks to be executed: {}", r.reasoning, r.answer, r.plan.render());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(c) => c,
        Err(Failure(c, e)) => {
            eprintln!("navsim: {e:#}");
            c
        }
    };
    ExitCode::from(code as u8)
}
