//! Structured feedback language.
//!
//! ```text
//! utterance := statement ((";" | newline) statement)*
//! statement := "agent" (ID | COLOR) ":" directive
//!            | "all" ":" directive
//! COLOR     := green | rose | blue        (agents 1, 2, 3)
//! ```
//!
//! Anything else, including statements naming an agent above `N`, is kept
//! verbatim as all-agent text and flagged with a warning. Repeated statements
//! for the same target are joined with ` and `.

use std::collections::BTreeMap;

use crate::env::{AgentId, NUM_AGENTS};

use super::{ParsedFeedback, Provenance, Utterance};

pub fn parse_dsl(u: &Utterance, num_agents: usize) -> ParsedFeedback {
    parse_dsl_text(&u.text, num_agents)
}

enum Target {
    Agent(AgentId),
    All,
}

fn agent_ref(s: &str, num_agents: usize) -> Result<AgentId, String> {
    let id = match s {
        "green" => 1,
        "rose" => 2,
        "blue" => 3,
        _ => s.parse::<usize>().map_err(|_| format!("{s:?} is not an agent id or colour"))?,
    };
    if id == 0 || id > num_agents.min(NUM_AGENTS) {
        return Err(format!("agent {id} does not exist (N = {num_agents})"));
    }
    AgentId::new(id).map_err(|e| e.to_string())
}

fn statement(s: &str, num_agents: usize) -> Result<(Target, &str), String> {
    let Some((head, body)) = s.split_once(':') else {
        return Err("not a DSL statement".into());
    };
    let head = head.trim().to_lowercase();
    let body = body.trim();
    let target = if head == "all" {
        Target::All
    } else if let Some(rest) = head.strip_prefix("agent") {
        let rest = rest.trim();
        if rest.is_empty() {
            return Err("missing agent id".into());
        }
        Target::Agent(agent_ref(rest, num_agents)?)
    } else {
        return Err("not a DSL statement".into());
    };
    if body.is_empty() {
        return Err("empty directive".into());
    }
    Ok((target, body))
}

fn push(slot: &mut Option<String>, text: &str) {
    match slot {
        Some(s) => {
            s.push_str(" and ");
            s.push_str(text);
        }
        None => *slot = Some(text.to_string()),
    }
}

pub fn parse_dsl_text(text: &str, num_agents: usize) -> ParsedFeedback {
    let mut per_agent: BTreeMap<AgentId, Option<String>> = BTreeMap::new();
    let mut all = None;
    let mut warnings = Vec::new();
    for s in text.split(['\n', ';']).map(str::trim).filter(|s| !s.is_empty()) {
        match statement(s, num_agents) {
            Ok((Target::Agent(a), body)) => push(per_agent.entry(a).or_default(), body),
            Ok((Target::All, body)) => push(&mut all, body),
            Err(why) => {
                warnings.push(format!("{why}; kept for all agents: {s:?}"));
                push(&mut all, s);
            }
        }
    }
    if text.trim().is_empty() {
        warnings.push("empty feedback".into());
    }
    let per_agent: BTreeMap<AgentId, String> =
        per_agent.into_iter().filter_map(|(a, t)| t.map(|t| (a, t))).collect();
    let mut parsed = ParsedFeedback {
        per_agent,
        all,
        provenance: Provenance { parser: "dsl".into(), raw: String::new() },
        warnings,
    };
    parsed.provenance.raw = render_dsl(&parsed);
    parsed
}

/// Canonical DSL text: one `agent N:` line per agent in id order, then `all:`.
pub fn render_dsl(p: &ParsedFeedback) -> String {
    let mut lines: Vec<String> = p.per_agent.iter().map(|(a, t)| format!("agent {a}: {t}")).collect();
    if let Some(all) = &p.all {
        lines.push(format!("all: {all}"));
    }
    lines.join("\n")
}
