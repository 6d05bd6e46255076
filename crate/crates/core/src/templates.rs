//! Reward-function templates and their instantiation from feedback.
//!
//! | kind           | formula                                   |
//! |----------------|-------------------------------------------|
//! | DistanceBased  | `-‖pos(e1) - pos(e2)‖₂`                   |
//! | ActionBased    | `1[a = a_desired]`                        |
//! | StatusBased    | `1[status(e) = desired]`                  |
//! | Composite      | `Σ λ_i f_i`                               |
//! | ProximityBased | `r_prox · 1[‖pos(e1) - pos(e2)‖₂ ≤ d]`    |
//! | TimePenalty    | `-β_t · t`                                |
//! | SuccessBased   | `r_success · 1[goal]`                     |
//! | EnergyPenalty  | `-γ_e · energy(a)`                        |
//!
//! Every instantiated template is wrapped in `Clamp(-R_max, R_max)`.
//!
//! # Directive vocabulary
//!
//! Directives are matched case-insensitively after trimming a trailing
//! period. `E` is an entity name (see [`EntityTable::standard`]), `A` a
//! macro-action name and `D` a distance in grid cells.
//!
//! | directive                          | template                               |
//! |------------------------------------|----------------------------------------|
//! | `get closer to E`, `move closer to E` | DistanceBased(self, E)              |
//! | `bring E1 to E2`, `keep E1 close to E2` | DistanceBased(E1, E2)             |
//! | `do A`                             | ActionBased(A)                         |
//! | `achieve E chopped` / `unchopped`  | StatusBased(E, 1.0 / 0.0)              |
//! | `avoid wasting time`               | TimePenalty(β_t = 0.01)                |
//! | `reach E within D`                 | ProximityBased(self, E, D/6, r = 1)    |
//! | `deliver the salad`                | SuccessBased(salad delivered, r = 1)   |
//! | `save energy`                      | EnergyPenalty(γ_e = 0.01)              |
//! | `nothing to improve`               | constant zero                          |
//!
//! Several directives joined by ` and ` form an equally weighted composite.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AgentId, MacroAction, GRID_SIZE};
use crate::expr::{CmpOp, Node, Pred, RewardExpr};

pub const DEFAULT_R_MAX: f64 = 200.0;
pub const DEFAULT_TIME_BETA: f64 = 0.01;
pub const DEFAULT_ENERGY_GAMMA: f64 = 0.01;
pub const DEFAULT_PROXIMITY_REWARD: f64 = 1.0;
pub const DEFAULT_SUCCESS_REWARD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    DistanceBased,
    ActionBased,
    StatusBased,
    Composite,
    ProximityBased,
    TimePenalty,
    SuccessBased,
    EnergyPenalty,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 8] = [
        TemplateKind::DistanceBased,
        TemplateKind::ActionBased,
        TemplateKind::StatusBased,
        TemplateKind::Composite,
        TemplateKind::ProximityBased,
        TemplateKind::TimePenalty,
        TemplateKind::SuccessBased,
        TemplateKind::EnergyPenalty,
    ];
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("entity {0:?} has no status")]
    NoStatus(String),
    #[error("{kind} parameters: {detail}")]
    Arity { kind: TemplateKind, detail: String },
}

/// Observation slots describing one entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entity {
    pub name: &'static str,
    pub pos: [usize; 2],
    pub status: Option<usize>,
}

/// Maps entity names and aliases to observation indices.
#[derive(Debug, Clone)]
pub struct EntityTable {
    aliases: Vec<(String, Entity)>,
}

const fn ent(name: &'static str, row: usize, status: Option<usize>) -> Entity {
    Entity { name, pos: [row, row + 1], status }
}

const TOMATO: Entity = ent("tomato", 0, Some(2));
const LETTUCE: Entity = ent("lettuce", 3, Some(5));
const ONION: Entity = ent("onion", 6, Some(8));
const PLATE1: Entity = ent("plate 1", 9, None);
const PLATE2: Entity = ent("plate 2", 11, None);
const KNIFE1: Entity = ent("knife 1", 13, None);
const KNIFE2: Entity = ent("knife 2", 15, None);
const DELIVERY: Entity = ent("delivery", 17, None);
const AGENTS: [Entity; 3] = [ent("agent 1", 19, None), ent("agent 2", 21, None), ent("agent 3", 23, None)];

impl EntityTable {
    /// Every entity of the 32-entry observation with its aliases.
    pub fn standard() -> EntityTable {
        let mut aliases = Vec::new();
        let mut add = |names: &[&str], e: Entity| {
            for n in names {
                aliases.push((n.to_string(), e));
            }
        };
        add(&["tomato", "tomatoes"], TOMATO);
        add(&["lettuce"], LETTUCE);
        add(&["onion", "onions"], ONION);
        add(&["plate 1", "plate1", "plate", "first plate"], PLATE1);
        add(&["plate 2", "plate2", "second plate"], PLATE2);
        add(
            &["knife 1", "knife1", "knife", "cutting board 1", "cutting board", "cut board 1", "board 1", "board"],
            KNIFE1,
        );
        add(&["knife 2", "knife2", "cutting board 2", "cut board 2", "board 2"], KNIFE2);
        add(&["delivery", "delivery counter", "delivery cell", "serving counter"], DELIVERY);
        for (i, e) in AGENTS.into_iter().enumerate() {
            let id = AgentId::from_index(i);
            let color = id.color();
            add(
                &[
                    &format!("agent {}", i + 1),
                    &format!("agent{}", i + 1),
                    &format!("agent_{}", i + 1),
                    &format!("chef {}", i + 1),
                    color,
                    &format!("{color} chef"),
                    &format!("the {color} chef"),
                ],
                e,
            );
        }
        EntityTable { aliases }
    }

    pub fn resolve(&self, name: &str) -> Result<Entity, TemplateError> {
        let key = normalize(name);
        let key = key.strip_prefix("the ").unwrap_or(&key);
        self.aliases
            .iter()
            .find(|(a, _)| a == key)
            .map(|(_, e)| *e)
            .ok_or_else(|| TemplateError::UnknownEntity(name.trim().to_string()))
    }

    pub fn agent(&self, id: AgentId) -> Entity {
        AGENTS[id.index()]
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Loose parameter record for [`instantiate`]; which fields are required
/// depends on the template kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<MacroAction>,
    /// Desired status in observation units (1.0 = fully chopped).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<f64>,
    /// Distance threshold in observation units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    /// β_t or γ_e.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f64>,
    /// r_prox or r_success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub lambda: f64,
    pub kind: TemplateKind,
    pub params: TemplateParams,
}

impl TemplateParams {
    pub fn entities(names: &[&str]) -> TemplateParams {
        TemplateParams { entities: names.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }
}

struct Shape {
    entities: &'static [usize],
    action: bool,
    status: bool,
    distance: bool,
    coefficient: bool,
    magnitude: bool,
    components: bool,
}

const fn shape(kind: TemplateKind) -> Shape {
    let none = Shape {
        entities: &[0],
        action: false,
        status: false,
        distance: false,
        coefficient: false,
        magnitude: false,
        components: false,
    };
    match kind {
        TemplateKind::DistanceBased => Shape { entities: &[2], ..none },
        TemplateKind::ActionBased => Shape { action: true, ..none },
        TemplateKind::StatusBased => Shape { entities: &[1], status: true, ..none },
        TemplateKind::Composite => Shape { components: true, ..none },
        TemplateKind::ProximityBased => Shape { entities: &[2], distance: true, magnitude: true, ..none },
        TemplateKind::TimePenalty => Shape { coefficient: true, ..none },
        TemplateKind::SuccessBased => Shape { entities: &[0, 1], magnitude: true, ..none },
        TemplateKind::EnergyPenalty => Shape { coefficient: true, ..none },
    }
}

fn check_arity(kind: TemplateKind, p: &TemplateParams) -> Result<(), TemplateError> {
    let s = shape(kind);
    let err = |detail: String| Err(TemplateError::Arity { kind, detail });
    if !s.entities.contains(&p.entities.len()) {
        return err(format!("expected {:?} entities, got {}", s.entities, p.entities.len()));
    }
    let fields = [
        ("action", s.action, p.action.is_some()),
        ("status", s.status, p.status.is_some()),
        ("distance", s.distance, p.distance.is_some()),
        ("coefficient", s.coefficient, p.coefficient.is_some()),
        ("magnitude", s.magnitude, p.magnitude.is_some()),
        ("components", s.components, !p.components.is_empty()),
    ];
    for (name, wanted, given) in fields {
        if wanted && !given {
            return err(format!("missing {name}"));
        }
        if !wanted && given {
            return err(format!("unexpected {name}"));
        }
    }
    for v in [p.status, p.distance, p.coefficient, p.magnitude].into_iter().flatten() {
        if !v.is_finite() {
            return err("non-finite parameter".into());
        }
    }
    Ok(())
}

fn pos_dist(a: Entity, b: Entity) -> Node {
    Node::Dist(a.pos, b.pos)
}

fn build(
    kind: TemplateKind,
    p: &TemplateParams,
    table: &EntityTable,
) -> Result<(Node, String), TemplateError> {
    check_arity(kind, p)?;
    let ents = p
        .entities
        .iter()
        .map(|n| table.resolve(n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match kind {
        TemplateKind::DistanceBased => (
            Node::neg(pos_dist(ents[0], ents[1])),
            format!("distance {} to {}", ents[0].name, ents[1].name),
        ),
        TemplateKind::ActionBased => {
            let a = p.action.expect("checked");
            (Node::indicator(Pred::ActionIs(a)), format!("action {}", a.name()))
        }
        TemplateKind::StatusBased => {
            let e = ents[0];
            let idx = e.status.ok_or_else(|| TemplateError::NoStatus(e.name.into()))?;
            let want = p.status.expect("checked");
            (
                Node::indicator(Pred::Cmp(CmpOp::Eq, Node::Obs(idx), Node::Const(want))),
                format!("status {} = {want}", e.name),
            )
        }
        TemplateKind::Composite => {
            let mut sum: Option<Node> = None;
            let mut parts = Vec::new();
            for c in &p.components {
                if !c.lambda.is_finite() {
                    return Err(TemplateError::Arity { kind, detail: "non-finite lambda".into() });
                }
                let (n, d) = build(c.kind, &c.params, table)?;
                let term = Node::mul(Node::Const(c.lambda), n);
                parts.push(format!("{}·[{d}]", c.lambda));
                sum = Some(match sum {
                    None => term,
                    Some(s) => Node::add(s, term),
                });
            }
            (sum.expect("checked non-empty"), parts.join(" + "))
        }
        TemplateKind::ProximityBased => {
            let d = p.distance.expect("checked");
            let r = p.magnitude.expect("checked");
            (
                Node::mul(
                    Node::Const(r),
                    Node::indicator(Pred::Cmp(CmpOp::Le, pos_dist(ents[0], ents[1]), Node::Const(d))),
                ),
                format!("{r} when {} within {d} of {}", ents[0].name, ents[1].name),
            )
        }
        TemplateKind::TimePenalty => {
            let b = p.coefficient.expect("checked");
            (Node::neg(Node::mul(Node::Const(b), Node::Time)), format!("time penalty {b}"))
        }
        TemplateKind::SuccessBased => {
            let r = p.magnitude.expect("checked");
            let (goal, text) = match ents.first() {
                None => (Pred::SaladDelivered, "salad delivered".to_string()),
                Some(e) => {
                    let idx = e.status.ok_or_else(|| TemplateError::NoStatus(e.name.into()))?;
                    (Pred::Cmp(CmpOp::Eq, Node::Obs(idx), Node::Const(1.0)), format!("{} chopped", e.name))
                }
            };
            (Node::mul(Node::Const(r), Node::indicator(goal)), format!("{r} when {text}"))
        }
        TemplateKind::EnergyPenalty => {
            let g = p.coefficient.expect("checked");
            (Node::neg(Node::mul(Node::Const(g), Node::Energy)), format!("energy penalty {g}"))
        }
    })
}

/// Build the reward expression for a template, clamped to `[-r_max, r_max]`.
pub fn instantiate(
    kind: TemplateKind,
    params: &TemplateParams,
    table: &EntityTable,
    r_max: f64,
) -> Result<RewardExpr, TemplateError> {
    let (node, description) = build(kind, params, table)?;
    Ok(RewardExpr::new(Node::clamp(-r_max, r_max, node), Some(kind), description))
}

/// A directive the DSL understood.
#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Template(TemplateKind, TemplateParams),
    Nothing,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectiveError {
    #[error("unrecognised directive {0:?}")]
    Unrecognised(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Map one directive, spoken to `agent`, onto a template.
pub fn directive_template(
    text: &str,
    agent: AgentId,
    table: &EntityTable,
) -> Result<Directive, DirectiveError> {
    let t = normalize(text);
    let t = t.trim_end_matches(['.', '!']).trim();
    let me = table.agent(agent).name.to_string();
    let unrecognised = || DirectiveError::Unrecognised(text.trim().to_string());
    let check = |names: &[&str]| -> Result<Vec<String>, DirectiveError> {
        names
            .iter()
            .map(|n| table.resolve(n).map(|e| e.name.to_string()).map_err(DirectiveError::from))
            .collect()
    };
    let tpl = |kind, params| Ok(Directive::Template(kind, params));

    if t.is_empty() || matches!(t, "nothing to improve" | "nothing" | "none" | "no feedback") {
        return Ok(Directive::Nothing);
    }
    if let Some(e) = t.strip_prefix("get closer to ").or_else(|| t.strip_prefix("move closer to ")) {
        let ents = check(&[&me, e])?;
        return tpl(TemplateKind::DistanceBased, TemplateParams { entities: ents, ..Default::default() });
    }
    if let Some(rest) = t.strip_prefix("bring ") {
        let (a, b) = rest.split_once(" to ").ok_or_else(unrecognised)?;
        let ents = check(&[a, b])?;
        return tpl(TemplateKind::DistanceBased, TemplateParams { entities: ents, ..Default::default() });
    }
    if let Some(rest) = t.strip_prefix("keep ") {
        let (a, b) = rest
            .split_once(" close to ")
            .or_else(|| rest.split_once(" near "))
            .ok_or_else(unrecognised)?;
        let ents = check(&[a, b])?;
        return tpl(TemplateKind::DistanceBased, TemplateParams { entities: ents, ..Default::default() });
    }
    if let Some(a) = t.strip_prefix("do ") {
        let action = a.parse::<MacroAction>().map_err(|_| unrecognised())?;
        return tpl(TemplateKind::ActionBased, TemplateParams { action: Some(action), ..Default::default() });
    }
    if let Some(rest) = t.strip_prefix("achieve ") {
        let (e, status) = if let Some(e) = rest.strip_suffix(" unchopped") {
            (e, 0.0)
        } else if let Some(e) = rest.strip_suffix(" chopped") {
            (e, 1.0)
        } else {
            return Err(unrecognised());
        };
        let ent = table.resolve(e)?;
        if ent.status.is_none() {
            return Err(TemplateError::NoStatus(ent.name.into()).into());
        }
        return tpl(
            TemplateKind::StatusBased,
            TemplateParams { entities: vec![ent.name.into()], status: Some(status), ..Default::default() },
        );
    }
    if t == "avoid wasting time" {
        return tpl(
            TemplateKind::TimePenalty,
            TemplateParams { coefficient: Some(DEFAULT_TIME_BETA), ..Default::default() },
        );
    }
    if let Some(rest) = t.strip_prefix("reach ") {
        let (e, d) = rest.rsplit_once(" within ").ok_or_else(unrecognised)?;
        let d = d.trim_end_matches(" cells").trim_end_matches(" cell");
        let cells: f64 = d.parse().map_err(|_| unrecognised())?;
        if !cells.is_finite() || cells < 0.0 {
            return Err(unrecognised());
        }
        let ents = check(&[&me, e])?;
        return tpl(
            TemplateKind::ProximityBased,
            TemplateParams {
                entities: ents,
                distance: Some(cells / (GRID_SIZE - 1) as f64),
                magnitude: Some(DEFAULT_PROXIMITY_REWARD),
                ..Default::default()
            },
        );
    }
    if matches!(t, "deliver the salad" | "deliver salad" | "deliver the order") {
        return tpl(
            TemplateKind::SuccessBased,
            TemplateParams { magnitude: Some(DEFAULT_SUCCESS_REWARD), ..Default::default() },
        );
    }
    if t == "save energy" {
        return tpl(
            TemplateKind::EnergyPenalty,
            TemplateParams { coefficient: Some(DEFAULT_ENERGY_GAMMA), ..Default::default() },
        );
    }
    Err(unrecognised())
}

/// Result of turning one agent's feedback into a reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub expr: RewardExpr,
    pub warnings: Vec<String>,
}

/// Deterministic mapping from feedback text for one agent to a reward.
///
/// Directives joined by ` and ` are combined into an equally weighted
/// composite. Unrecognised directives are dropped with a warning; when
/// nothing usable remains the result is the constant-zero reward.
pub fn generate_dsl(text: &str, agent: AgentId, table: &EntityTable, r_max: f64) -> Generated {
    let mut warnings = Vec::new();
    let mut parts = Vec::new();
    for piece in split_directives(text) {
        match directive_template(piece, agent, table) {
            Ok(Directive::Template(kind, params)) => parts.push((kind, params)),
            Ok(Directive::Nothing) => {}
            Err(e) => warnings.push(e.to_string()),
        }
    }
    let expr = match parts.len() {
        0 => RewardExpr::zero(),
        1 => {
            let (kind, params) = parts.pop().expect("one part");
            instantiate(kind, &params, table, r_max).expect("directive parameters are well-formed")
        }
        n => {
            let lambda = 1.0 / n as f64;
            let components =
                parts.into_iter().map(|(kind, params)| Component { lambda, kind, params }).collect();
            let params = TemplateParams { components, ..Default::default() };
            instantiate(TemplateKind::Composite, &params, table, r_max)
                .expect("directive parameters are well-formed")
        }
    };
    Generated { expr, warnings }
}

fn split_directives(text: &str) -> Vec<&str> {
    text.split(" and ")
        .flat_map(|s| s.split(" AND "))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(i: usize) -> AgentId {
        AgentId::new(i).unwrap()
    }

    #[test]
    fn distance_template_tree() {
        let t = EntityTable::standard();
        let e = instantiate(TemplateKind::DistanceBased, &TemplateParams::entities(&["agent 1", "onion"]), &t, 200.0)
            .unwrap();
        assert_eq!(e.root, Node::clamp(-200.0, 200.0, Node::neg(Node::Dist([19, 20], [6, 7]))));
    }

    #[test]
    fn arity_is_checked() {
        let t = EntityTable::standard();
        let p = TemplateParams::entities(&["onion"]);
        assert!(matches!(
            instantiate(TemplateKind::DistanceBased, &p, &t, 200.0),
            Err(TemplateError::Arity { .. })
        ));
        let p = TemplateParams { coefficient: Some(0.1), ..TemplateParams::entities(&["onion"]) };
        assert!(matches!(
            instantiate(TemplateKind::TimePenalty, &p, &t, 200.0),
            Err(TemplateError::Arity { .. })
        ));
        assert!(matches!(
            instantiate(TemplateKind::Composite, &TemplateParams::default(), &t, 200.0),
            Err(TemplateError::Arity { .. })
        ));
    }

    #[test]
    fn unknown_entity() {
        let t = EntityTable::standard();
        assert_eq!(
            instantiate(TemplateKind::DistanceBased, &TemplateParams::entities(&["agent 1", "carrot"]), &t, 200.0),
            Err(TemplateError::UnknownEntity("carrot".into()))
        );
    }

    #[test]
    fn status_needs_a_vegetable() {
        let t = EntityTable::standard();
        let p = TemplateParams { status: Some(1.0), ..TemplateParams::entities(&["plate 1"]) };
        assert_eq!(
            instantiate(TemplateKind::StatusBased, &p, &t, 200.0),
            Err(TemplateError::NoStatus("plate 1".into()))
        );
    }

    #[test]
    fn aliases_resolve() {
        let t = EntityTable::standard();
        assert_eq!(t.resolve("Green Chef").unwrap().pos, [19, 20]);
        assert_eq!(t.resolve("the  onion").unwrap().pos, [6, 7]);
        assert_eq!(t.resolve("cutting board 2").unwrap().pos, [15, 16]);
        assert!(t.resolve("red chef").is_err());
    }

    #[test]
    fn directive_mapping() {
        let t = EntityTable::standard();
        let d = directive_template("get closer to onion", a(1), &t).unwrap();
        assert_eq!(
            d,
            Directive::Template(TemplateKind::DistanceBased, TemplateParams::entities(&["agent 1", "onion"]))
        );
        assert_eq!(directive_template("Nothing to improve.", a(2), &t).unwrap(), Directive::Nothing);
        assert!(matches!(
            directive_template("do chop", a(2), &t).unwrap(),
            Directive::Template(TemplateKind::ActionBased, _)
        ));
        assert!(matches!(
            directive_template("get closer to carrot", a(2), &t),
            Err(DirectiveError::Template(TemplateError::UnknownEntity(_)))
        ));
        assert!(matches!(directive_template("dance", a(2), &t), Err(DirectiveError::Unrecognised(_))));
    }

    #[test]
    fn generate_merges_directives() {
        let t = EntityTable::standard();
        let g = generate_dsl("get closer to tomato and achieve tomato chopped", a(1), &t, 200.0);
        assert_eq!(g.expr.kind, Some(TemplateKind::Composite));
        assert!(g.warnings.is_empty());
        let g = generate_dsl("dance and nothing to improve", a(1), &t, 200.0);
        assert!(g.expr.is_zero());
        assert_eq!(g.warnings.len(), 1);
    }
}
