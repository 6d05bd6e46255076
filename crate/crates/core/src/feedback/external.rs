//! Client for an external language-model service.
//!
//! Wire format: `POST <endpoint>` with body `{"model": "...", "prompt": "..."}`
//! and an optional `Authorization: Bearer <token>` header. The response body
//! must be `{"reply": "<model text>"}`.
//!
//! The parsing prompt asks for keys `agent_0 .. agent_{N-1}`; `agent_j` is
//! mapped to agent `j + 1`. Any other key makes the reply invalid.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::AgentId;
use crate::expr::{parse_external, Node};

use super::{FeedbackError, ParsedFeedback, Provenance};

pub const PROMPT_VERSION: &str = "1";

pub const FEEDBACK_PARSING_PROMPT: &str = r#"Given the following feedback for a multi-agent system in an Overcooked environment,
assign the feedback to appropriate agents or to all agents. The system has {num_agents} agents.

Feedback: {feedback}

The agent_1 is the chef in Green, agent_2 is the chef in Rose, agent_3 is the chef in Blue.

Return your response in the following JSON format:

{
    "agent_0": "feedback for agent 0",
    "agent_1": "feedback for agent 1",
    ...
    "all": "feedback for all agents"
}

Only include keys for agents that receive specific feedback and 'all' if there's general feedback.
"#;

pub const REWARD_BUILD_PROMPT: &str = r#"Given the parsed feedback for an agent in an Overcooked environment, select and parameterize
a reward function template.

The observation space is a 32-length vector as described in the task description.

Parsed Feedback: {feedback}

Observation Space (32-length vector for each agent):
- Tomato: position (2), status (1) (obs[0:2])
- Lettuce: position (2), status (1) (obs[3:5])
- Onion: position (2), status (1) (obs[6:8])
- Plate 1: position (2) (obs[9:10])
- Plate 2: position (2) (obs[11:12])
- Knife 1: position (2) (obs[13:14])
- Knife 2: position (2) (obs[15:16])
- Delivery: position (2) (obs[17:18])
- Agent 1: position (2) (obs[19:20])
- Agent 2: position (2) (obs[21:22])
- Agent 3: position (2) (obs[23:24])
- Order: one-hot encoded (7) (obs[25:32])

Available function templates:
1. Distance-based: -sqrt((agent_x - target_x)**2 + (agent_y - target_y)**2)
2. Action-based: reward for specific actions (e.g., chopping, picking up)
3. State-based: reward for achieving specific states (e.g., holding an item)
4. Time-based: penalty for time taken
5. Combination of the above

Select a template and parameterize it based on the feedback. Return your response as a Python lambda function
that takes the observation vector (obs) and action (act) as input.

For example, Distance between agent 1 and tomato :

lambda obs, act: -sqrt((obs[19] - obs[0])**2 + (obs[20] - obs[1])**2)  # Distance between agent 1 and tomato

Ensure that your function uses the correct indices from the observation vector as described in the task description.
"#;

const MAX_VALUE_LEN: usize = 1000;

pub fn parsing_prompt(num_agents: usize, feedback: &str) -> String {
    FEEDBACK_PARSING_PROMPT
        .replacen("{num_agents}", &num_agents.to_string(), 1)
        .replacen("{feedback}", feedback, 1)
}

pub fn reward_prompt(feedback: &str) -> String {
    REWARD_BUILD_PROMPT.replacen("{feedback}", feedback, 1)
}

/// Sends one prompt and returns the model's text.
pub trait PromptTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, FeedbackError>;
}

impl<F> PromptTransport for F
where
    F: Fn(&str) -> Result<String, FeedbackError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, FeedbackError> {
        self(prompt)
    }
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub endpoint: String,
    pub model: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct Response {
    reply: String,
}

impl PromptTransport for HttpTransport {
    fn complete(&self, prompt: &str) -> Result<String, FeedbackError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let resp = req
            .send_json(Request { model: &self.model, prompt })
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => FeedbackError::Timeout,
                other => FeedbackError::Transport(other.to_string()),
            })?;
        let body: Response = resp
            .into_body()
            .read_json()
            .map_err(|e| FeedbackError::Malformed(format!("response body: {e}")))?;
        Ok(body.reply)
    }
}

pub struct ExternalClient {
    transport: Box<dyn PromptTransport>,
}

impl ExternalClient {
    pub fn new(transport: impl PromptTransport + 'static) -> ExternalClient {
        ExternalClient { transport: Box::new(transport) }
    }

    pub fn parse_feedback(&self, feedback: &str, num_agents: usize) -> Result<ParsedFeedback, FeedbackError> {
        let reply = self.transport.complete(&parsing_prompt(num_agents, feedback))?;
        let (per_agent, all) = validate_parse_reply(&reply, num_agents)?;
        Ok(ParsedFeedback {
            per_agent,
            all,
            provenance: Provenance { parser: format!("external/v{PROMPT_VERSION}"), raw: reply },
            warnings: Vec::new(),
        })
    }

    /// Returns the parsed expression and the raw reply.
    pub fn build_reward(&self, feedback: &str) -> Result<(Node, String), FeedbackError> {
        let reply = self.transport.complete(&reward_prompt(feedback))?;
        let node = parse_external(&reply)?;
        Ok((node, reply))
    }
}

fn strip_fences(reply: &str) -> String {
    reply
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Check a parsing reply and map its keys to 1-based agents.
pub fn validate_parse_reply(
    reply: &str,
    num_agents: usize,
) -> Result<(BTreeMap<AgentId, String>, Option<String>), FeedbackError> {
    let bad = |m: String| Err(FeedbackError::Malformed(m));
    let body = strip_fences(reply);
    let value: serde_json::Value = match serde_json::from_str(body.trim()) {
        Ok(v) => v,
        Err(e) => return bad(format!("not JSON: {e}")),
    };
    let Some(obj) = value.as_object() else {
        return bad("reply is not a JSON object".into());
    };
    let mut per_agent = BTreeMap::new();
    let mut all = None;
    for (k, v) in obj {
        let Some(text) = v.as_str() else {
            return bad(format!("value of {k:?} is not a string"));
        };
        let text = text.trim();
        if text.is_empty() {
            return bad(format!("value of {k:?} is empty"));
        }
        if text.len() > MAX_VALUE_LEN || text.chars().any(|c| c.is_control()) {
            return bad(format!("value of {k:?} is too long or contains control characters"));
        }
        if k == "all" {
            all = Some(text.to_string());
            continue;
        }
        let j = k
            .strip_prefix("agent_")
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && (d.len() == 1 || !d.starts_with('0')))
            .and_then(|d| d.parse::<usize>().ok());
        match j {
            Some(j) if j < num_agents => {
                let id = AgentId::new(j + 1).map_err(|e| FeedbackError::Malformed(e.to_string()))?;
                per_agent.insert(id, text.to_string());
            }
            _ => return bad(format!("unexpected key {k:?}")),
        }
    }
    if per_agent.is_empty() && all.is_none() {
        return bad("reply assigns no feedback".into());
    }
    Ok((per_agent, all))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_substitute_placeholders() {
        let p = parsing_prompt(3, "chop faster");
        assert!(p.contains("The system has 3 agents."));
        assert!(p.contains("Feedback: chop faster\n"));
        assert!(p.contains("    \"agent_0\": \"feedback for agent 0\","));
        let r = reward_prompt("get the onion");
        assert!(r.contains("Parsed Feedback: get the onion\n"));
        assert!(r.contains("lambda obs, act: -sqrt((obs[19] - obs[0])**2 + (obs[20] - obs[1])**2)"));
    }

    #[test]
    fn reply_mapping_shifts_indices() {
        let (per, all) = validate_parse_reply(r#"{"agent_1": "chop faster", "all": "coordinate"}"#, 3).unwrap();
        assert_eq!(per, BTreeMap::from([(AgentId::new(2).unwrap(), "chop faster".to_string())]));
        assert_eq!(all.as_deref(), Some("coordinate"));
    }

    #[test]
    fn reply_rejections() {
        for bad in [
            "{}",
            "[]",
            "not json",
            r#"{"agent_3": "x"}"#,
            r#"{"agent_01": "x"}"#,
            r#"{"agent_1": 5}"#,
            r#"{"agent_1": ""}"#,
            r#"{"team": "x"}"#,
        ] {
            assert!(validate_parse_reply(bad, 3).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn client_uses_transport() {
        let c = ExternalClient::new(|p: &str| -> Result<String, FeedbackError> {
            assert!(p.contains("Parsed Feedback:"));
            Ok("lambda obs, act: -sqrt((obs[19] - obs[6])**2 + (obs[20] - obs[7])**2)".into())
        });
        let (n, _) = c.build_reward("agent 1 needs to get the onion").unwrap();
        assert_eq!(n, Node::neg(Node::Dist([19, 20], [6, 7])));
    }

    #[test]
    fn transport_errors_propagate() {
        let c = ExternalClient::new(|_: &str| -> Result<String, FeedbackError> { Err(FeedbackError::Timeout) });
        assert_eq!(c.parse_feedback("x", 3), Err(FeedbackError::Timeout));
    }
}
