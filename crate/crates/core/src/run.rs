//! The full loop: train a generation, roll out, take feedback, update pools.

use serde::{Deserialize, Serialize};

use crate::env::{AgentId, LayoutId, Recipe, NUM_AGENTS};
use crate::feedback::{FeedbackParser, FeedbackProvider, ParsedFeedback, RewardGenerator, Utterance};
use crate::learner::Learner;
use crate::pool::{PerformanceDelta, RewardPool, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::rollout::{collect_rollouts, estimate_return, EnvSpec, ReturnEstimate, RolloutOptions, Trajectory};
use crate::templates::TemplateKind;
use crate::train::{derive_seed, train_generation, GenerationConfig, IterationMetrics, PolicySnapshot};

pub const MAX_FEEDBACK_PHASES: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Generations to train; a feedback phase follows each of them.
    pub generations: u32,
    /// Upper bound on feedback phases that may change a pool.
    pub max_feedback_phases: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Rollouts per feedback phase.
    pub rollouts: usize,
    pub horizon: u32,
    /// Discount of the return estimator.
    pub eval_gamma: f64,
    /// `None` evaluates greedily.
    pub eval_epsilon: Option<f64>,
    pub training: GenerationConfig,
}

impl Default for RunSettings {
    fn default() -> RunSettings {
        RunSettings {
            generations: 5,
            max_feedback_phases: MAX_FEEDBACK_PHASES,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            rollouts: crate::rollout::DEFAULT_ROLLOUTS,
            horizon: 200,
            eval_gamma: 0.99,
            eval_epsilon: None,
            training: GenerationConfig::default(),
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.generations == 0 {
            return Err("generations must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(format!("beta {} must be non-negative", self.beta));
        }
        if self.rollouts == 0 || self.horizon == 0 {
            return Err("rollouts and horizon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.eval_gamma) {
            return Err(format!("gamma {} outside [0, 1)", self.eval_gamma));
        }
        if let Some(e) = self.eval_epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(format!("eval_epsilon {e} outside [0, 1]"));
            }
        }
        self.training.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub agent: AgentId,
    pub delta: PerformanceDelta,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub agent: AgentId,
    pub kind: Option<TemplateKind>,
    pub expr: String,
    pub description: String,
    pub weight: f64,
}

/// Everything that happened at one feedback phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub generation: u32,
    pub r_ori: f64,
    pub adjustments: Vec<Adjustment>,
    pub utterance: Option<Utterance>,
    pub parsed: Option<ParsedFeedback>,
    pub insertions: Vec<Insertion>,
    /// Pool weights after the phase, agents 1..=3.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: u32,
    /// Mean original return over the generation's training episodes.
    pub train_mean_return: f64,
    /// Mean original return over the last iteration's training episodes.
    pub last_iteration_return: f64,
    pub evaluation: ReturnEstimate,
    /// Undiscounted original return of each evaluation rollout.
    pub rollout_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub code_version: String,
    pub seed: u64,
    pub layout: LayoutId,
    pub recipe: Recipe,
    pub settings: RunSettings,
    /// The configuration document the run was started from, if any.
    #[serde(default)]
    pub config: serde_json::Value,
    pub generations: Vec<GenerationReport>,
    pub phases: Vec<PhaseRecord>,
    pub pools: Vec<RewardPool>,
    pub metrics: Vec<IterationMetrics>,
    pub final_mean_return: f64,
    /// An external-service failure occurred with no fallback configured.
    pub external_failure: bool,
}

impl RunReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(IterationMetrics::CSV_HEADER);
        out.push('\n');
        for m in &self.metrics {
            out.push_str(&m.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Receives intermediate products of a run.
pub trait RunObserver {
    fn iteration(&mut self, _m: &IterationMetrics) {}
    fn rollouts(&mut self, _generation: u32, _trajs: &[Trajectory]) {}
    fn phase(&mut self, _record: &PhaseRecord, _pools: &[RewardPool]) {}
}

impl RunObserver for () {}

pub struct RunOutput<P> {
    pub report: RunReport,
    pub snapshot: PolicySnapshot<P>,
}

/// The components a feedback phase uses.
pub struct FeedbackStack<'a> {
    pub provider: &'a mut dyn FeedbackProvider,
    pub parser: &'a dyn FeedbackParser,
    pub generator: &'a RewardGenerator,
}

pub fn run_feedback_loop<L: Learner>(
    learner: &L,
    env: &EnvSpec,
    settings: &RunSettings,
    fb: FeedbackStack<'_>,
    seed: u64,
    observer: &mut dyn RunObserver,
) -> RunOutput<L::Policy> {
    let FeedbackStack { provider, parser, generator } = fb;
    let mut pools: Vec<RewardPool> = (0..NUM_AGENTS).map(|_| RewardPool::new(settings.alpha, settings.beta)).collect();
    let mut snapshot = PolicySnapshot::initial(learner, env);
    let mut report = RunReport {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        layout: env.layout.id,
        recipe: env.recipe,
        settings: settings.clone(),
        config: serde_json::Value::Null,
        generations: Vec::new(),
        phases: Vec::new(),
        pools: Vec::new(),
        metrics: Vec::new(),
        final_mean_return: 0.0,
        external_failure: false,
    };
    let mut prev_r: Option<f64> = None;
    let mut inserted_last: [bool; NUM_AGENTS] = [false; NUM_AGENTS];
    let mut phases_used = 0;

    for k in 0..settings.generations {
        let (next, metrics) = {
            let mut cb = |m: &IterationMetrics| observer.iteration(m);
            train_generation(learner, &snapshot, &pools, &settings.training, env, seed, &mut cb)
        };
        snapshot = next;
        provider.generation_trained(k, &metrics);

        let seeds: Vec<u64> =
            (0..settings.rollouts).map(|x| derive_seed(&[seed, u64::from(k), 0xE7A1, x as u64])).collect();
        let trajs = collect_rollouts(
            learner,
            &snapshot.policies,
            env,
            &seeds,
            RolloutOptions { explore: settings.eval_epsilon, horizon: settings.horizon, generation: k },
        );
        observer.rollouts(k, &trajs);
        let evaluation = estimate_return(&trajs, settings.eval_gamma).expect("at least one rollout, valid gamma");
        let r = evaluation.value;
        let n = metrics.len() as f64;
        report.generations.push(GenerationReport {
            generation: k,
            train_mean_return: metrics.iter().map(|m| m.mean_original_return).sum::<f64>() / n,
            last_iteration_return: metrics.last().map_or(0.0, |m| m.mean_original_return),
            evaluation,
            rollout_returns: trajs.iter().map(Trajectory::total_reward).collect(),
        });
        report.metrics.extend(metrics);

        let mut record = PhaseRecord {
            generation: k,
            r_ori: r,
            adjustments: Vec::new(),
            utterance: None,
            parsed: None,
            insertions: Vec::new(),
            weights: Vec::new(),
            warnings: Vec::new(),
            errors: Vec::new(),
        };
        if let Some(r_prev) = prev_r {
            let delta = PerformanceDelta { r_prev, r_next: r };
            for (i, pool) in pools.iter_mut().enumerate() {
                if !inserted_last[i] {
                    continue;
                }
                let before = pool.weights().last().copied().unwrap_or(0.0);
                if pool.performance_adjust(delta) {
                    let after = pool.weights().last().copied().unwrap_or(0.0);
                    record.adjustments.push(Adjustment { agent: AgentId::from_index(i), delta, before, after });
                }
            }
        }
        prev_r = Some(r);
        inserted_last = [false; NUM_AGENTS];

        let utterance = provider.provide(&trajs, k);
        match utterance {
            Some(u) if phases_used >= settings.max_feedback_phases => {
                record.warnings.push(format!(
                    "feedback phase limit of {} reached; utterance ignored",
                    settings.max_feedback_phases
                ));
                record.utterance = Some(u);
            }
            Some(u) if u.text.trim().is_empty() => record.utterance = Some(u),
            Some(u) => {
                phases_used += 1;
                match parser.parse(&u, NUM_AGENTS) {
                    Err(e) => {
                        report.external_failure = true;
                        record.errors.push(format!("parse: {e}"));
                    }
                    Ok(parsed) => {
                        record.warnings.extend(parsed.warnings.iter().cloned());
                        for (i, pool) in pools.iter_mut().enumerate() {
                            let agent = AgentId::from_index(i);
                            match generator.generate(&parsed, agent, k) {
                                Ok(None) => {}
                                Ok(Some(g)) => {
                                    record.warnings.extend(g.warnings.iter().map(|w| format!("agent {agent}: {w}")));
                                    let ins = Insertion {
                                        agent,
                                        kind: g.expr.kind,
                                        expr: g.expr.root.to_prefix(),
                                        description: g.expr.description.clone(),
                                        weight: 0.0,
                                    };
                                    let w = pool.insert(g.expr, Some(k));
                                    if let Err(e) = pool.decay_and_normalize() {
                                        record.errors.push(format!("agent {agent}: {e}"));
                                    }
                                    inserted_last[i] = true;
                                    record.insertions.push(Insertion { weight: w, ..ins });
                                }
                                Err(e) => {
                                    report.external_failure = true;
                                    record.errors.push(format!("agent {agent}: reward generation: {e}"));
                                }
                            }
                        }
                        record.parsed = Some(parsed);
                    }
                }
                record.utterance = Some(u);
            }
            None => {}
        }
        record.weights = pools.iter().map(RewardPool::weights).collect();
        provider.phase_complete(&record, &pools);
        observer.phase(&record, &pools);
        report.phases.push(record);
    }
    report.final_mean_return = report.generations.last().map_or(0.0, |g| g.train_mean_return);
    report.pools = pools;
    RunOutput { report, snapshot }
}
