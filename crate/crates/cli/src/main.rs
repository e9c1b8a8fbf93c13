use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use sitewalk::env::{FixtureFile, GeneratorParams, SiteFixture, SiteRegistry};
use sitewalk::env::{CategoryParams, ForumParams};
use sitewalk::env::oracle::EvalTarget;
use sitewalk::executor::ExecLimits;
use sitewalk::gateway::{BackendKind, HttpBackend, LlmConfig, ScriptedFixture};
use sitewalk::harness::{aggregate, load_metrics, run_batch, BackendSource, RouteMode, RunConfig};
use sitewalk::model::TaskSpec;
use sitewalk::navigator::NavLimits;
use sitewalk::sandbox::ProcessSandbox;
use sitewalk::scripting::{make_task, sample_tasks, script_batch, ScriptOptions};

const STUB: &str = include_str!("../../core/tests/support/sandbox_stub.py");

#[derive(Parser)]
#[command(name = "sitewalk", version, about = "Run decomposed web tasks against simulated sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task and write per-task artifacts under --out.
    Run(RunArgs),
    /// Print the aggregate table for a previous run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write a self-contained scripted example (tasks, fixture, llm config).
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        tasks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Auto,
    NavOnly,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    fixture: PathBuf,
    #[arg(long)]
    llm: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    max_steps: u32,
    #[arg(long, value_enum, default_value = "on")]
    replan: Switch,
    #[arg(long, value_enum, default_value = "auto")]
    route: RouteArg,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Command that starts the analysis sandbox; split on whitespace.
    #[arg(long, env = "SITEWALK_SANDBOX", default_value = "python3 -m analysis_sandbox")]
    sandbox: String,
    #[arg(long, default_value_t = 30)]
    exec_timeout: u64,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Report { input } => report(&input),
        Command::Demo { out, tasks, seed } => demo(&out, tasks, seed),
    }
}

fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).with_context(|| format!("parsing {}", path.display()));
    }
    // One task object per line.
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn run(args: RunArgs) -> Result<()> {
    let tasks = load_tasks(&args.tasks)?;
    let registry: SiteRegistry = SiteFixture::load_all(&args.fixture)?.into_iter().collect();
    for task in &tasks {
        if !registry.contains(&task.site_id) {
            bail!("task {} names unknown site {}", task.task_id, task.site_id);
        }
    }
    let llm = LlmConfig::load(&args.llm)?;
    let backend = match llm.backend {
        BackendKind::Scripted => {
            let path = llm.fixture.as_deref().context("scripted backend needs a `fixture` path")?;
            BackendSource::Scripted {
                fixture: ScriptedFixture::load(Path::new(path))?,
                strict: llm.strict,
            }
        }
        BackendKind::Http => BackendSource::Shared(Arc::new(HttpBackend::from_config(&llm)?)),
    };
    let command: Vec<String> = args.sandbox.split_whitespace().map(str::to_string).collect();
    let config = RunConfig {
        backend,
        params: llm.params(),
        sandbox: Arc::new(ProcessSandbox::new(&command)?),
        nav: NavLimits {
            max_steps: args.max_steps,
            replan_enabled: matches!(args.replan, Switch::On),
            ..NavLimits::default()
        },
        exec: ExecLimits {
            per_attempt_timeout_s: args.exec_timeout,
            ..ExecLimits::default()
        },
        route_mode: match args.route {
            RouteArg::Auto => RouteMode::Auto,
            RouteArg::NavOnly => RouteMode::NavOnly,
        },
        out_dir: Some(args.out.clone()),
    };
    config.nav.validate()?;
    config.exec.validate()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let reports = run_batch(&tasks, &registry, &config, args.jobs.max(1));
    for r in &reports {
        let m = &r.metrics;
        println!(
            "{:<24} {:<4} steps={:<3} replans={:<2} calls={:<3} answer={}{}",
            m.task_id,
            if m.success { "ok" } else { "FAIL" },
            m.nav_steps,
            m.replan_events,
            m.llm_calls,
            serde_json::to_string(&r.answer)?,
            m.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default()
        );
    }
    let metrics: Vec<_> = reports.into_iter().map(|r| r.metrics).collect();
    println!("\n{}", aggregate(&metrics));
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let metrics = load_metrics(dir).with_context(|| format!("reading {}", dir.display()))?;
    if metrics.is_empty() {
        bail!("no metrics.json files under {}", dir.display());
    }
    println!("{}", aggregate(&metrics));
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn demo(out: &Path, n: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    let files = vec![
        FixtureFile {
            site_id: "shop".into(),
            seed,
            generator: Some(GeneratorParams {
                title: Some("One Stop Market".into()),
                categories: ["Home Audio", "Cameras", "Headphones"]
                    .iter()
                    .map(|c| CategoryParams { name: c.to_string(), parent: Some("Electronics".into()), items: 60 })
                    .collect(),
                ..Default::default()
            }),
            site: None,
        },
        FixtureFile {
            site_id: "forum".into(),
            seed,
            generator: Some(GeneratorParams {
                title: Some("Postmill".into()),
                forums: vec![
                    ForumParams { name: "OldSchoolCool".into(), posts: 50 },
                    ForumParams { name: "books".into(), posts: 40 },
                ],
                ..Default::default()
            }),
            site: None,
        },
    ];
    write_json(&out.join("fixture.json"), &files)?;
    let sites = files.into_iter().map(FixtureFile::build).collect::<Result<Vec<_>, _>>()?;

    let mut tasks = sample_tasks(&sites[0], seed, n.div_ceil(2));
    tasks.extend(sample_tasks(&sites[1], seed + 1, n / 2));
    tasks.push(make_task(
        "forum-post",
        &sites[1],
        &EvalTarget::PostCreated { forum: "books".into(), title: "Hello, world!".into() },
    ));
    let registry: SiteRegistry = sites.into_iter().collect();
    let script = script_batch(&tasks, &registry, ScriptOptions::default())?;
    write_json(&out.join("tasks.json"), &tasks)?;
    write_json(&out.join("script.json"), &script)?;
    write_json(&out.join("llm.json"), &LlmConfig::scripted(Some("script.json".into()), true))?;
    fs::write(out.join("sandbox_stub.py"), STUB)?;
    println!("wrote {} tasks to {}", tasks.len(), out.display());
    println!(
        "run: sitewalk run --tasks {0}/tasks.json --fixture {0}/fixture.json --llm {0}/llm.json --out {0}/out --sandbox \"python3 {0}/sandbox_stub.py\"",
        out.display()
    );
    Ok(())
}
