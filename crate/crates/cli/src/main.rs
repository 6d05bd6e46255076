use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fbmarl::config::RunConfig;
use fbmarl::env::Event;
use fbmarl::orchestrate::{compare_runs, load_reports, replay_path, run_config, seed_dir, RunError};
use fbmarl::rollout::{load_replay, Replay};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_EXTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fbmarl", version, about = "Multi-agent kitchen training shaped by multi-phase feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write its artifacts.
    Run {
        config: PathBuf,
        /// Shrink training iterations for a laptop-sized run.
        #[arg(long)]
        desk: bool,
        /// Override the seeds, e.g. `--seeds 1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare two run directories generation by generation (b against a).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the rollouts shown at a feedback phase.
    ReplayDump {
        /// A run output directory or a single seed directory.
        run: PathBuf,
        generation: u32,
        /// Seed to pick when `run` holds several.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = DumpFormat::Text)]
        format: DumpFormat,
    },
    /// Serve interactive feedback sessions over HTTP.
    Serve {
        config: PathBuf,
        #[arg(long)]
        desk: bool,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Text,
    Jsonl,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Failure {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn runtime(e: impl std::fmt::Display) -> Failure {
        Failure { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

fn load_config(path: &Path, desk: bool) -> Result<(RunConfig, String), Failure> {
    let cfg = RunConfig::load(path, desk).map_err(Failure::config)?;
    let source = std::fs::read_to_string(path).map_err(Failure::config)?;
    Ok((cfg, source))
}

fn cmd_run(config: &Path, desk: bool, seeds: Option<Vec<u64>>, output: Option<PathBuf>) -> Result<(), Failure> {
    let (mut cfg, source) = load_config(config, desk)?;
    if let Some(s) = seeds {
        if s.is_empty() {
            return Err(Failure::config("--seeds must not be empty"));
        }
        cfg.seeds = s;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let reports = run_config(&cfg, Some(&source)).map_err(|e| match e {
        RunError::Config(c) => Failure::config(c),
        other => Failure::runtime(other),
    })?;
    for r in &reports {
        println!(
            "seed {:>6}  final mean return {:>9.3}  phases {}  dir {}",
            r.seed,
            r.final_mean_return,
            r.phases.len(),
            seed_dir(&cfg.output_dir, r.seed).display()
        );
    }
    if let Some(r) = reports.iter().find(|r| r.external_failure) {
        return Err(Failure {
            code: EXIT_EXTERNAL,
            message: format!("external service failure in seed {} (see run-report.json)", r.seed),
        });
    }
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path, json: bool) -> Result<(), Failure> {
    let ra = load_reports(a).map_err(Failure::runtime)?;
    let rb = load_reports(b).map_err(Failure::runtime)?;
    let c = compare_runs(&ra, &rb).map_err(Failure::config)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&c).map_err(Failure::runtime)?);
    } else {
        print!("{}", c.render());
    }
    Ok(())
}

fn find_replay(run: &Path, generation: u32, seed: Option<u64>) -> Result<PathBuf, Failure> {
    let direct = replay_path(run, generation);
    if seed.is_none() && direct.is_file() {
        return Ok(direct);
    }
    let dir = match seed {
        Some(s) => seed_dir(run, s),
        None => {
            let mut seeds: Vec<PathBuf> = std::fs::read_dir(run)
                .map_err(|e| Failure::runtime(format!("{}: {e}", run.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-")))
                .collect();
            seeds.sort();
            match seeds.len() {
                0 => return Err(Failure::runtime(format!("no replays under {}", run.display()))),
                1 => seeds.remove(0),
                _ => return Err(Failure::runtime("several seeds in this run; pick one with --seed")),
            }
        }
    };
    let p = replay_path(&dir, generation);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Failure::runtime(format!("{} does not exist", p.display())))
    }
}

fn render_replay(r: &Replay) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "generation {}  layout {}  recipe {}", r.meta.generation, r.meta.layout, r.meta.recipe);
    for row in &r.meta.grid {
        let _ = writeln!(s, "  {row}");
    }
    for t in &r.trajectories {
        let _ = writeln!(
            s,
            "\nrollout {}  seed {}  length {}  return {:.1}",
            t.index,
            t.seed,
            t.len(),
            t.total_reward()
        );
        for st in &t.steps {
            let pos: Vec<String> = st.frame.agents.iter().map(|p| format!("({},{})", p.row, p.col)).collect();
            let acts: Vec<String> = st.actions.iter().map(ToString::to_string).collect();
            let events: Vec<String> = st
                .events
                .iter()
                .filter(|e| !matches!(e, Event::Moved { .. } | Event::MacroEnded { .. }))
                .map(|e| serde_json::to_string(e).unwrap_or_default())
                .collect();
            let _ = writeln!(
                s,
                "{:>4}  {}  {:<60} {:>6.1}  {}",
                st.t,
                pos.join(" "),
                acts.join(" | "),
                st.reward,
                events.join(" ")
            );
        }
    }
    s
}

fn cmd_replay_dump(run: &Path, generation: u32, seed: Option<u64>, format: DumpFormat) -> Result<(), Failure> {
    let path = find_replay(run, generation, seed)?;
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    let replay = load_replay(&text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    match format {
        DumpFormat::Jsonl => print!("{text}"),
        DumpFormat::Text => print!("{}", render_replay(&replay)),
    }
    Ok(())
}

fn cmd_serve(config: &Path, desk: bool, addr: SocketAddr) -> Result<(), Failure> {
    let (cfg, source) = load_config(config, desk)?;
    let state = fbmarl_service::AppState::new(cfg, Some(source));
    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    rt.block_on(fbmarl_service::serve(state, addr)).map_err(Failure::runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, desk, seeds, output } => cmd_run(&config, desk, seeds, output),
        Command::Compare { a, b, json } => cmd_compare(&a, &b, json),
        Command::ReplayDump { run, generation, seed, format } => cmd_replay_dump(&run, generation, seed, format),
        Command::Serve { config, desk, addr } => cmd_serve(&config, desk, addr),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
