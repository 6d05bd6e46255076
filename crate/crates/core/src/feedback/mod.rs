//! Feedback acquisition and parsing.
//!
//! An [`Utterance`] comes from a [`FeedbackProvider`] once per generation,
//! a [`FeedbackParser`] splits it into per-agent and all-agent text, and a
//! [`RewardGenerator`] turns each agent's text into a reward expression.

mod dsl;
mod external;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::AgentId;
use crate::expr::{Node, RewardExpr};
use crate::pool::RewardPool;
use crate::rollout::Trajectory;
use crate::run::PhaseRecord;
use crate::templates::{generate_dsl, EntityTable, Generated, DEFAULT_R_MAX};
use crate::train::IterationMetrics;

pub use dsl::{parse_dsl, parse_dsl_text, render_dsl};
pub use external::{
    parsing_prompt, reward_prompt, validate_parse_reply, ExternalClient, HttpTransport, PromptTransport,
    FEEDBACK_PARSING_PROMPT, PROMPT_VERSION, REWARD_BUILD_PROMPT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    HumanUi,
    Scripted,
    ExternalModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub source: Source,
    pub generation: u32,
    /// Seconds since the Unix epoch; absent for scripted feedback so that
    /// reports stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Utterance {
    pub fn scripted(text: impl Into<String>, generation: u32) -> Utterance {
        Utterance { text: text.into(), source: Source::Scripted, generation, timestamp: None }
    }

    pub fn human(text: impl Into<String>, generation: u32) -> Utterance {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .ok();
        Utterance { text: text.into(), source: Source::HumanUi, generation, timestamp: now }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub parser: String,
    pub raw: String,
}

/// Feedback split between individual agents and the whole team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedFeedback {
    pub per_agent: BTreeMap<AgentId, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all: Option<String>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ParsedFeedback {
    pub fn is_empty(&self) -> bool {
        self.per_agent.is_empty() && self.all.is_none()
    }

    /// Equality of the agent assignment, ignoring provenance and warnings.
    pub fn same_assignment(&self, other: &ParsedFeedback) -> bool {
        self.per_agent == other.per_agent && self.all == other.all
    }

    /// Everything addressed to `agent`: its own text and the team text,
    /// joined with ` and `.
    pub fn text_for(&self, agent: AgentId) -> Option<String> {
        match (self.per_agent.get(&agent), &self.all) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (Some(a), Some(b)) => Some(format!("{a} and {b}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("external service transport failure: {0}")]
    Transport(String),
    #[error("external service timed out")]
    Timeout,
    #[error("malformed external reply: {0}")]
    Malformed(String),
    #[error("reply rejected by the expression grammar: {0}")]
    Grammar(#[from] crate::expr::ExprError),
}

/// Produces at most one utterance per generation.
pub trait FeedbackProvider: Send {
    fn provide(&mut self, rollouts: &[Trajectory], generation: u32) -> Option<Utterance>;

    /// Called after a generation finished training.
    fn generation_trained(&mut self, _generation: u32, _metrics: &[IterationMetrics]) {}

    /// Called once the utterance of a phase has been parsed and the pools updated.
    fn phase_complete(&mut self, _record: &PhaseRecord, _pools: &[RewardPool]) {}
}

/// Replays a fixed generation → text schedule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedProvider {
    schedule: BTreeMap<u32, String>,
}

impl ScriptedProvider {
    pub fn new(schedule: BTreeMap<u32, String>) -> ScriptedProvider {
        ScriptedProvider { schedule }
    }

    pub fn empty() -> ScriptedProvider {
        ScriptedProvider::default()
    }

    pub fn schedule(&self) -> &BTreeMap<u32, String> {
        &self.schedule
    }
}

impl FeedbackProvider for ScriptedProvider {
    fn provide(&mut self, _rollouts: &[Trajectory], generation: u32) -> Option<Utterance> {
        self.schedule.get(&generation).map(|t| Utterance::scripted(t.clone(), generation))
    }
}

pub trait FeedbackParser: Send + Sync {
    fn id(&self) -> &'static str;
    fn parse(&self, u: &Utterance, num_agents: usize) -> Result<ParsedFeedback, FeedbackError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DslParser;

impl FeedbackParser for DslParser {
    fn id(&self) -> &'static str {
        "dsl"
    }

    fn parse(&self, u: &Utterance, num_agents: usize) -> Result<ParsedFeedback, FeedbackError> {
        Ok(parse_dsl(u, num_agents))
    }
}

/// Parses through the external service; optionally falls back to the DSL.
pub struct ExternalParser {
    pub client: Arc<ExternalClient>,
    pub fallback: bool,
}

impl FeedbackParser for ExternalParser {
    fn id(&self) -> &'static str {
        "external"
    }

    fn parse(&self, u: &Utterance, num_agents: usize) -> Result<ParsedFeedback, FeedbackError> {
        match self.client.parse_feedback(&u.text, num_agents) {
            Ok(p) => Ok(p),
            Err(e) if self.fallback => {
                log::warn!("external parse failed ({e}); falling back to the DSL");
                let mut p = parse_dsl(u, num_agents);
                p.warnings.insert(0, format!("external parser failed: {e}; used DSL"));
                Ok(p)
            }
            Err(e) => {
                log::error!("external parse failed: {e}");
                Err(e)
            }
        }
    }
}

/// How agent feedback becomes a reward expression.
#[derive(Clone)]
pub enum GeneratorMode {
    Dsl,
    External { client: Arc<ExternalClient>, fallback: bool },
}

#[derive(Clone)]
pub struct RewardGenerator {
    pub mode: GeneratorMode,
    pub table: EntityTable,
    pub r_max: f64,
}

impl Default for RewardGenerator {
    fn default() -> RewardGenerator {
        RewardGenerator::dsl(DEFAULT_R_MAX)
    }
}

impl RewardGenerator {
    pub fn dsl(r_max: f64) -> RewardGenerator {
        RewardGenerator { mode: GeneratorMode::Dsl, table: EntityTable::standard(), r_max }
    }

    /// `Ok(None)` when nothing in the feedback is addressed to `agent`.
    pub fn generate(
        &self,
        fb: &ParsedFeedback,
        agent: AgentId,
        generation: u32,
    ) -> Result<Option<Generated>, FeedbackError> {
        let Some(text) = fb.text_for(agent) else { return Ok(None) };
        let mut g = match &self.mode {
            GeneratorMode::Dsl => generate_dsl(&text, agent, &self.table, self.r_max),
            GeneratorMode::External { client, fallback } => match client.build_reward(&text) {
                Ok((node, reply)) => Generated {
                    expr: RewardExpr::new(
                        Node::clamp(-self.r_max, self.r_max, node),
                        None,
                        format!("external: {}", reply.trim()),
                    ),
                    warnings: Vec::new(),
                },
                Err(e) if *fallback => {
                    log::warn!("external reward build failed for agent {agent} ({e}); using the DSL");
                    let mut g = generate_dsl(&text, agent, &self.table, self.r_max);
                    g.warnings.insert(0, format!("external reward build failed: {e}; used DSL"));
                    g
                }
                Err(e) => {
                    log::error!("external reward build failed for agent {agent}: {e}");
                    return Err(e);
                }
            },
        };
        g.expr.generation = Some(generation);
        Ok(Some(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_schedule() {
        let mut p = ScriptedProvider::new(BTreeMap::from([(1, "all: nothing to improve".to_string())]));
        assert!(p.provide(&[], 0).is_none());
        let u = p.provide(&[], 1).unwrap();
        assert_eq!(u.text, "all: nothing to improve");
        assert_eq!(u.source, Source::Scripted);
        assert!(p.provide(&[], 2).is_none());
        assert!(ScriptedProvider::empty().provide(&[], 0).is_none());
    }

    #[test]
    fn text_for_combines_agent_and_team() {
        let fb = parse_dsl_text("agent 1: get closer to onion\nall: avoid wasting time", 3);
        let a1 = AgentId::new(1).unwrap();
        let a2 = AgentId::new(2).unwrap();
        assert_eq!(fb.text_for(a1).unwrap(), "get closer to onion and avoid wasting time");
        assert_eq!(fb.text_for(a2).unwrap(), "avoid wasting time");
    }

    #[test]
    fn generator_skips_unaddressed_agents() {
        let fb = parse_dsl_text("agent 2: get closer to lettuce", 3);
        let g = RewardGenerator::default();
        assert!(g.generate(&fb, AgentId::new(1).unwrap(), 0).unwrap().is_none());
        let e = g.generate(&fb, AgentId::new(2).unwrap(), 4).unwrap().unwrap();
        assert_eq!(e.expr.generation, Some(4));
    }
}
