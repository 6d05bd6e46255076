//! Executes configured runs and lays their artifacts out on disk.
//!
//! Each seed owns `<output_dir>/seed-<seed>/`:
//!
//! | file | contents |
//! |---|---|
//! | `metrics.csv` | one row per training iteration |
//! | `metrics.jsonl` | the same rows as JSON, written while training |
//! | `run-report.json` | [`RunReport`] including the config it ran |
//! | `pools.json`, `pools/agent-<i>.txt` | final reward pools |
//! | `replays/gen-<k>.jsonl` | rollouts shown at feedback phase `k` |

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigFileError, FeedbackMode, RunConfig, ENV_ENDPOINT, ENV_MODEL, ENV_TOKEN};
use crate::env::{LayoutId, Recipe};
use crate::feedback::{
    DslParser, ExternalClient, ExternalParser, FeedbackParser, FeedbackProvider, GeneratorMode, HttpTransport,
    RewardGenerator, ScriptedProvider,
};
use crate::pool::RewardPool;
use crate::rollout::{serialize_replay, EnvSpec, ReplayMeta, Trajectory};
use crate::run::{run_feedback_loop, FeedbackStack, PhaseRecord, RunObserver, RunOutput, RunReport};
use crate::train::IterationMetrics;

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed-{seed}"))
}

pub fn replay_path(seed_dir: &Path, generation: u32) -> PathBuf {
    seed_dir.join("replays").join(format!("gen-{generation}.jsonl"))
}

/// Parser and reward generator for the configured feedback mode.
pub fn feedback_components(cfg: &RunConfig) -> Result<(Box<dyn FeedbackParser>, RewardGenerator), ConfigFileError> {
    if cfg.feedback.mode != FeedbackMode::External {
        return Ok((Box::new(DslParser), RewardGenerator::dsl(cfg.r_max)));
    }
    let endpoint = std::env::var(ENV_ENDPOINT)
        .map_err(|_| ConfigFileError::Invalid(format!("external mode needs {ENV_ENDPOINT}")))?;
    let transport = HttpTransport {
        endpoint,
        model: std::env::var(ENV_MODEL).unwrap_or_default(),
        token: std::env::var(ENV_TOKEN).ok(),
        timeout: cfg.external_timeout(),
    };
    let client = Arc::new(ExternalClient::new(transport));
    let parser = ExternalParser { client: Arc::clone(&client), fallback: cfg.feedback.fallback };
    let mut generator = RewardGenerator::dsl(cfg.r_max);
    generator.mode = GeneratorMode::External { client, fallback: cfg.feedback.fallback };
    Ok((Box::new(parser), generator))
}

/// The document embedded in every report.
pub fn config_document(cfg: &RunConfig, source: Option<&str>) -> serde_json::Value {
    serde_json::json!({
        "source": source,
        "resolved": cfg,
    })
}

/// Writes a seed's artifacts as the run produces them.
pub struct DirObserver {
    dir: PathBuf,
    meta_layout: Arc<crate::env::Layout>,
    recipe: Recipe,
    metrics: Option<BufWriter<File>>,
    error: Option<io::Error>,
}

impl DirObserver {
    pub fn create(dir: &Path, env: &EnvSpec) -> io::Result<DirObserver> {
        fs::create_dir_all(dir.join("replays"))?;
        let metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        Ok(DirObserver {
            dir: dir.to_owned(),
            meta_layout: Arc::clone(&env.layout),
            recipe: env.recipe,
            metrics: Some(metrics),
            error: None,
        })
    }

    fn keep(&mut self, r: io::Result<()>) {
        if let Err(e) = r {
            log::error!("writing to {}: {e}", self.dir.display());
            self.error.get_or_insert(e);
        }
    }

    /// Write the closing artifacts and surface the first error seen.
    pub fn finish(mut self, report: &RunReport) -> io::Result<()> {
        if let Some(mut m) = self.metrics.take() {
            let r = m.flush();
            self.keep(r);
        }
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        write_report_files(&self.dir, report)
    }
}

impl RunObserver for DirObserver {
    fn iteration(&mut self, m: &IterationMetrics) {
        let r = match self.metrics.as_mut() {
            Some(w) => serde_json::to_writer(&mut *w, m).map_err(io::Error::from).and_then(|()| w.write_all(b"\n")),
            None => Ok(()),
        };
        self.keep(r);
    }

    fn rollouts(&mut self, generation: u32, trajs: &[Trajectory]) {
        let meta = ReplayMeta::new(generation, &self.meta_layout, self.recipe);
        let r = fs::write(replay_path(&self.dir, generation), serialize_replay(&meta, trajs));
        self.keep(r);
    }

    fn phase(&mut self, record: &PhaseRecord, _pools: &[RewardPool]) {
        log::info!(
            "{}: phase {} r_ori={:.3} insertions={}",
            self.dir.display(),
            record.generation,
            record.r_ori,
            record.insertions.len()
        );
    }
}

fn write_report_files(dir: &Path, report: &RunReport) -> io::Result<()> {
    fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
    fs::write(dir.join("run-report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("pools.json"), serde_json::to_string_pretty(&report.pools)?)?;
    let pools = dir.join("pools");
    fs::create_dir_all(&pools)?;
    for (i, p) in report.pools.iter().enumerate() {
        fs::write(pools.join(format!("agent-{}.txt", i + 1)), p.dump())?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Run one seed with the given provider, writing into `seed_dir`.
pub fn run_seed(
    cfg: &RunConfig,
    seed: u64,
    provider: &mut dyn FeedbackProvider,
    source: Option<&str>,
) -> Result<RunOutput<crate::learner::LinearPolicy>, RunError> {
    let env = cfg.env_spec();
    let (parser, generator) = feedback_components(cfg)?;
    let dir = seed_dir(&cfg.output_dir, seed);
    let io_err = |source| RunError::Io { path: dir.clone(), source };
    let mut obs = DirObserver::create(&dir, &env).map_err(io_err)?;
    let mut out = run_feedback_loop(
        &cfg.learner,
        &env,
        &cfg.settings,
        FeedbackStack { provider, parser: parser.as_ref(), generator: &generator },
        seed,
        &mut obs,
    );
    out.report.config = config_document(cfg, source);
    obs.finish(&out.report).map_err(io_err)?;
    Ok(out)
}

/// Run every seed of a scripted (or feedback-free) config in parallel.
pub fn run_config(cfg: &RunConfig, source: Option<&str>) -> Result<Vec<RunReport>, RunError> {
    if cfg.feedback.mode == FeedbackMode::Session {
        return Err(ConfigFileError::Invalid("session mode configs are served, not run".into()).into());
    }
    let schedule = cfg.schedule();
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let mut provider = ScriptedProvider::new(schedule.clone());
            run_seed(cfg, seed, &mut provider, source).map(|o| o.report)
        })
        .collect()
}

/// Reports of a run: a `run-report.json` file, a seed directory, or an
/// output directory holding `seed-*` subdirectories. Sorted by seed.
pub fn load_reports(path: &Path) -> io::Result<Vec<RunReport>> {
    let read = |p: &Path| -> io::Result<RunReport> {
        let text = fs::read_to_string(p)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
    };
    if path.is_file() {
        return Ok(vec![read(path)?]);
    }
    let single = path.join("run-report.json");
    if single.is_file() {
        return Ok(vec![read(&single)?]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path().join("run-report.json");
        if p.is_file() {
            out.push(read(&p)?);
        }
    }
    if out.is_empty() {
        return Err(io::Error::new(io::ErrorKind::NotFound, format!("no run reports under {}", path.display())));
    }
    out.sort_by_key(|r| r.seed);
    Ok(out)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("no reports on the {0} side")]
    Empty(&'static str),
    #[error("layouts differ: {0} vs {1}")]
    Layout(LayoutId, LayoutId),
    #[error("recipes differ: {0} vs {1}")]
    Recipe(Recipe, Recipe),
    #[error("generation counts differ: {0} vs {1}")]
    Generations(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Win,
    Loss,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub generation: u32,
    pub a_mean: f64,
    pub a_std: f64,
    pub b_mean: f64,
    pub b_std: f64,
    /// `b_mean - a_mean`.
    pub diff: f64,
    /// Direction of `b` against `a`.
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub layout: LayoutId,
    pub recipe: Recipe,
    pub a_seeds: Vec<u64>,
    pub b_seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn final_diff(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.diff)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "layout {} recipe {}  a seeds {:?}  b seeds {:?}\n",
            self.layout, self.recipe, self.a_seeds, self.b_seeds
        );
        s.push_str(&format!("{:>4} {:>20} {:>20} {:>10} {:>5}\n", "gen", "a mean ± std", "b mean ± std", "b - a", ""));
        for r in &self.rows {
            let d = match r.direction {
                Direction::Win => "win",
                Direction::Loss => "loss",
                Direction::Tie => "tie",
            };
            s.push_str(&format!(
                "{:>4} {:>11.3} ± {:<6.3} {:>11.3} ± {:<6.3} {:>10.3} {:>5}\n",
                r.generation, r.a_mean, r.a_std, r.b_mean, r.b_std, r.diff, d
            ));
        }
        s
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-generation mean ± sample std of the training original return across
/// seeds, for `b` against `a`.
pub fn compare_runs(a: &[RunReport], b: &[RunReport]) -> Result<Comparison, CompareError> {
    let Some(fa) = a.first() else { return Err(CompareError::Empty("a")) };
    if b.is_empty() {
        return Err(CompareError::Empty("b"));
    }
    for r in a.iter().chain(b) {
        if r.layout != fa.layout {
            return Err(CompareError::Layout(fa.layout, r.layout));
        }
        if r.recipe != fa.recipe {
            return Err(CompareError::Recipe(fa.recipe, r.recipe));
        }
    }
    let gens = fa.generations.len();
    for r in a.iter().chain(b) {
        if r.generations.len() != gens {
            return Err(CompareError::Generations(gens, r.generations.len()));
        }
    }
    let rows = (0..gens)
        .map(|k| {
            let col = |rs: &[RunReport]| rs.iter().map(|r| r.generations[k].train_mean_return).collect::<Vec<_>>();
            let (a_mean, a_std) = mean_std(&col(a));
            let (b_mean, b_std) = mean_std(&col(b));
            let diff = b_mean - a_mean;
            let direction = if diff > 0.0 {
                Direction::Win
            } else if diff < 0.0 {
                Direction::Loss
            } else {
                Direction::Tie
            };
            CompareRow { generation: fa.generations[k].generation, a_mean, a_std, b_mean, b_std, diff, direction }
        })
        .collect();
    Ok(Comparison {
        layout: fa.layout,
        recipe: fa.recipe,
        a_seeds: a.iter().map(|r| r.seed).collect(),
        b_seeds: b.iter().map(|r| r.seed).collect(),
        rows,
    })
}
