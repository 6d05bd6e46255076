//! Evaluation rollouts, the discounted-return estimator and the replay format.
//!
//! # Replay document
//!
//! Line-delimited JSON, one record per line, each tagged by `"type"`:
//!
//! | type      | fields |
//! |-----------|--------|
//! | `header`  | `schema_version` (= 1), `generation`, `layout` (`"A"`..), `recipe`, `grid` (7 strings, layout legend), `rollouts` (count) |
//! | `rollout` | `index`, `seed`, `horizon` |
//! | `step`    | `rollout`, `t`, `frame` (state before the tick), `actions` (3 macro names), `reward` (original reward of the tick), `events` |
//! | `end`     | `rollout`, `frame` (state after the last tick), `length`, `return` (undiscounted original return) |
//!
//! A `frame` holds `timestep`, `agents` (3 `{row, col}`), `items` (tomato,
//! lettuce, onion, plate1, plate2, each a tagged place: `cell`, `held`,
//! `on_plate` or `delivered`), `chop` (progress 0..=3 per vegetable) and
//! `held` (per agent, item name or null).

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    AgentId, EnvState, Event, Item, Kitchen, Layout, LayoutId, MacroAction, Place, Pos, Recipe, RewardSpec,
    DEFAULT_MAX_STEPS, NUM_AGENTS,
};
use crate::episode::{run_episode, EpisodeOptions};
use crate::learner::Learner;

pub const REPLAY_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ROLLOUTS: usize = 4;

/// Everything needed to build fresh kitchens.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub layout: Arc<Layout>,
    pub recipe: Recipe,
    pub rewards: RewardSpec,
    pub max_steps: u32,
}

impl EnvSpec {
    pub fn builtin(layout: LayoutId, recipe: Recipe) -> EnvSpec {
        EnvSpec {
            layout: Arc::new(Layout::builtin(layout)),
            recipe,
            rewards: RewardSpec::default(),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn kitchen(&self, seed: u64) -> Kitchen {
        Kitchen::new(Arc::clone(&self.layout), self.recipe, seed)
            .with_rewards(self.rewards)
            .with_max_steps(self.max_steps)
    }
}

/// Ground-truth kitchen contents at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestep: u32,
    pub agents: [Pos; NUM_AGENTS],
    pub items: [Place; Item::COUNT],
    pub chop: [u8; 3],
    pub held: [Option<Item>; NUM_AGENTS],
}

impl Frame {
    pub fn of(s: &EnvState) -> Frame {
        Frame {
            timestep: s.timestep,
            agents: s.agents,
            items: s.items,
            chop: s.chop,
            held: [0, 1, 2].map(|i| s.held(AgentId::from_index(i))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    pub frame: Frame,
    pub actions: [MacroAction; NUM_AGENTS],
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

/// One rollout under frozen policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub generation: u32,
    pub index: usize,
    pub seed: u64,
    pub horizon: u32,
    pub layout: LayoutId,
    pub recipe: Recipe,
    pub steps: Vec<StepRecord>,
    pub final_frame: Frame,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("no trajectories to estimate from")]
    Empty,
    #[error("discount {0} outside [0, 1)")]
    Discount(f64),
    #[error("non-finite return in rollout {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub value: f64,
    pub x: usize,
    pub h: u32,
    pub gamma: f64,
    pub returns: Vec<f64>,
}

/// `(1 − γ) Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut d = 1.0;
    for r in rewards {
        g += d * r;
        d *= gamma;
    }
    (1.0 - gamma) * g
}

pub fn estimate_return(trajs: &[Trajectory], gamma: f64) -> Result<ReturnEstimate, EstimateError> {
    let rewards: Vec<Vec<f64>> = trajs.iter().map(Trajectory::rewards).collect();
    let h = trajs.iter().map(|t| t.horizon).max().unwrap_or(0);
    estimate_from_rewards(&rewards, h, gamma)
}

/// Estimator over raw per-rollout reward sequences.
pub fn estimate_from_rewards<R: AsRef<[f64]>>(
    rollouts: &[R],
    h: u32,
    gamma: f64,
) -> Result<ReturnEstimate, EstimateError> {
    if rollouts.is_empty() {
        return Err(EstimateError::Empty);
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(EstimateError::Discount(gamma));
    }
    let mut returns = Vec::with_capacity(rollouts.len());
    for (i, r) in rollouts.iter().enumerate() {
        let g = discounted_return(r.as_ref(), gamma);
        if !g.is_finite() {
            return Err(EstimateError::NonFinite(i));
        }
        returns.push(g);
    }
    let value = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(ReturnEstimate { value, x: rollouts.len(), h, gamma, returns })
}

/// How evaluation rollouts pick actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    /// `None` is greedy.
    pub explore: Option<f64>,
    pub horizon: u32,
    pub generation: u32,
}

/// One trajectory per seed, collected in parallel. No learning happens.
pub fn collect_rollouts<L: Learner>(
    learner: &L,
    policies: &[L::Policy],
    env: &EnvSpec,
    seeds: &[u64],
    opts: RolloutOptions,
) -> Vec<Trajectory> {
    seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut kitchen = env.kitchen(seed).with_max_steps(opts.horizon.min(env.max_steps));
            let out = run_episode(
                learner,
                policies,
                &mut kitchen,
                None,
                &mut rng,
                EpisodeOptions { explore: opts.explore, gamma: 0.0, record: true, learn: false },
            );
            Trajectory {
                generation: opts.generation,
                index,
                seed,
                horizon: opts.horizon,
                layout: env.layout.id,
                recipe: env.recipe,
                steps: out.steps,
                final_frame: Frame::of(kitchen.state()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMeta {
    pub generation: u32,
    pub layout: LayoutId,
    pub recipe: Recipe,
    pub grid: Vec<String>,
}

impl ReplayMeta {
    pub fn new(generation: u32, layout: &Layout, recipe: Recipe) -> ReplayMeta {
        ReplayMeta { generation, layout: layout.id, recipe, grid: layout.rows() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub meta: ReplayMeta,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("unsupported replay schema version {found} (expected {REPLAY_SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header {
        schema_version: u32,
        generation: u32,
        layout: LayoutId,
        recipe: Recipe,
        grid: Vec<String>,
        rollouts: usize,
    },
    Rollout {
        index: usize,
        seed: u64,
        horizon: u32,
    },
    Step {
        rollout: usize,
        #[serde(flatten)]
        step: StepRecord,
    },
    End {
        rollout: usize,
        frame: Frame,
        length: usize,
        #[serde(rename = "return")]
        total: f64,
    },
}

pub fn serialize_replay(meta: &ReplayMeta, trajs: &[Trajectory]) -> String {
    let mut lines = Vec::new();
    let mut push = |r: &Record| lines.push(serde_json::to_string(r).expect("replay records serialize"));
    push(&Record::Header {
        schema_version: REPLAY_SCHEMA_VERSION,
        generation: meta.generation,
        layout: meta.layout,
        recipe: meta.recipe,
        grid: meta.grid.clone(),
        rollouts: trajs.len(),
    });
    for tr in trajs {
        push(&Record::Rollout { index: tr.index, seed: tr.seed, horizon: tr.horizon });
        for s in &tr.steps {
            push(&Record::Step { rollout: tr.index, step: s.clone() });
        }
        push(&Record::End {
            rollout: tr.index,
            frame: tr.final_frame.clone(),
            length: tr.steps.len(),
            total: tr.total_reward(),
        });
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

pub fn load_replay(doc: &str) -> Result<Replay, ReplayError> {
    let bad = |line: usize, message: String| ReplayError::Malformed { line, message };
    let mut lines = doc.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, first)) = lines.next() else {
        return Err(bad(1, "empty document".into()));
    };
    let head: serde_json::Value = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))?;
    if head.get("type").and_then(|t| t.as_str()) != Some("header") {
        return Err(bad(1, "first record must be the header".into()));
    }
    let version = head.get("schema_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == u64::from(REPLAY_SCHEMA_VERSION) => {}
        Some(v) => return Err(ReplayError::Version { found: v as u32 }),
        None => return Err(bad(1, "missing schema_version".into())),
    }
    let Record::Header { generation, layout, recipe, grid, rollouts, .. } =
        serde_json::from_value(head).map_err(|e| bad(1, e.to_string()))?
    else {
        unreachable!("checked tag above")
    };
    let meta = ReplayMeta { generation, layout, recipe, grid };
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut open = false;
    for (i, line) in lines {
        let n = i + 1;
        let rec: Record = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
        match rec {
            Record::Header { .. } => return Err(bad(n, "duplicate header".into())),
            Record::Rollout { index, seed, horizon } => {
                if open {
                    return Err(bad(n, "rollout started before the previous one ended".into()));
                }
                open = true;
                trajectories.push(Trajectory {
                    generation,
                    index,
                    seed,
                    horizon,
                    layout,
                    recipe,
                    steps: Vec::new(),
                    final_frame: Frame {
                        timestep: 0,
                        agents: [Pos::new(0, 0); NUM_AGENTS],
                        items: [Place::Cell { pos: Pos::new(0, 0) }; Item::COUNT],
                        chop: [0; 3],
                        held: [None; NUM_AGENTS],
                    },
                });
            }
            Record::Step { rollout, step } => {
                let tr = trajectories.last_mut().filter(|t| open && t.index == rollout);
                let Some(tr) = tr else { return Err(bad(n, format!("step for rollout {rollout} outside its block"))) };
                if step.t as usize != tr.steps.len() {
                    return Err(bad(n, format!("expected t = {}, found {}", tr.steps.len(), step.t)));
                }
                tr.steps.push(step);
            }
            Record::End { rollout, frame, length, .. } => {
                let tr = trajectories.last_mut().filter(|t| open && t.index == rollout);
                let Some(tr) = tr else { return Err(bad(n, format!("end for rollout {rollout} outside its block"))) };
                if length != tr.steps.len() {
                    return Err(bad(n, format!("length {length} but {} steps", tr.steps.len())));
                }
                tr.final_frame = frame;
                open = false;
            }
        }
    }
    if open {
        return Err(bad(doc.lines().count(), "last rollout has no end record".into()));
    }
    if trajectories.len() != rollouts {
        return Err(bad(1, format!("header announces {rollouts} rollouts, found {}", trajectories.len())));
    }
    Ok(Replay { meta, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 0.0, 0.0], 0.5), 0.5);
        assert_eq!(discounted_return(&[0.0; 10], 0.9), 0.0);
        assert!((discounted_return(&[1.0, 1.0], 0.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn estimator_errors() {
        let empty: [Vec<f64>; 0] = [];
        assert_eq!(estimate_from_rewards(&empty, 1, 0.5), Err(EstimateError::Empty));
        assert_eq!(estimate_from_rewards(&[vec![1.0]], 1, 1.0), Err(EstimateError::Discount(1.0)));
        assert!(estimate_from_rewards(&[vec![f64::INFINITY]], 1, 0.5).is_err());
    }

    #[test]
    fn estimate_is_mean_and_scales() {
        let r = [vec![1.0, 2.0], vec![0.0, 4.0]];
        let e = estimate_from_rewards(&r, 2, 0.5).unwrap();
        assert_eq!(e.returns, vec![1.0, 1.0]);
        assert_eq!(e.value, 1.0);
        let scaled: Vec<Vec<f64>> = r.iter().map(|v| v.iter().map(|x| x * 3.0).collect()).collect();
        assert_eq!(estimate_from_rewards(&scaled, 2, 0.5).unwrap().value, 3.0);
    }

    #[test]
    fn empty_replay_round_trip() {
        let meta = ReplayMeta::new(2, &Layout::builtin(LayoutId::A), Recipe::LettuceTomato);
        let doc = serialize_replay(&meta, &[]);
        let r = load_replay(&doc).unwrap();
        assert_eq!(r.meta, meta);
        assert!(r.trajectories.is_empty());
    }

    #[test]
    fn replay_version_and_shape_errors() {
        let meta = ReplayMeta::new(0, &Layout::builtin(LayoutId::A), Recipe::LettuceTomato);
        let doc = serialize_replay(&meta, &[]).replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(matches!(load_replay(&doc), Err(ReplayError::Version { found: 9 })));
        assert!(matches!(load_replay(""), Err(ReplayError::Malformed { .. })));
        assert!(matches!(load_replay("{\"type\":\"step\"}"), Err(ReplayError::Malformed { .. })));
    }
}
