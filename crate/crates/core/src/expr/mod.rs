//! Reward expressions: small trees over observation entries and the executed
//! macro-action, evaluated once per tick for every agent.
//!
//! Evaluation is total. Division by zero, negative square roots and
//! overflow all collapse to `0.0` at the node where they happen, so a tree
//! always yields a finite number.

mod infix;
mod sexpr;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::env::{MacroAction, Observation, OBS_LEN};
use crate::templates::TemplateKind;

pub use infix::parse_external;

/// Tolerance used by every comparison predicate.
pub const CMP_EPS: f64 = 1e-9;
/// Deepest tree accepted from any parser.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("observation index {0} out of range 0..32")]
    ObsIndex(i64),
    #[error("non-finite constant")]
    NonFinite,
    #[error("expression nested deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("input longer than {0} bytes")]
    TooLong(usize),
    #[error("{0}")]
    Invalid(String),
}

impl ExprError {
    pub(crate) fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { offset, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<CmpOp> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => (a - b).abs() <= CMP_EPS,
            CmpOp::Ne => (a - b).abs() > CMP_EPS,
            CmpOp::Lt => a < b - CMP_EPS,
            CmpOp::Le => a <= b + CMP_EPS,
            CmpOp::Gt => a > b + CMP_EPS,
            CmpOp::Ge => a >= b - CMP_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pred {
    ActionIs(MacroAction),
    Cmp(CmpOp, Node, Node),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
    Not(Box<Pred>),
    /// A correct salad was delivered on this tick.
    SaladDelivered,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Obs(usize),
    /// Timestep of the tick being rewarded.
    Time,
    /// The environment's own reward for the tick.
    EnvReward,
    /// Index of the agent's executing macro-action.
    Action,
    /// 0 for `Stay`, 1 for every other macro-action.
    Energy,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, u8),
    Sqrt(Box<Node>),
    Abs(Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    /// Euclidean distance between the position pairs `(obs[a0], obs[a1])`
    /// and `(obs[b0], obs[b1])`.
    Dist([usize; 2], [usize; 2]),
    Indicator(Box<Pred>),
    If(Box<Pred>, Box<Node>, Box<Node>),
    Clamp(f64, f64, Box<Node>),
}

/// Everything an expression may look at.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub obs: &'a Observation,
    pub action: MacroAction,
    pub t: u32,
    pub env_reward: f64,
    pub delivered: bool,
}

impl<'a> EvalContext<'a> {
    pub fn new(obs: &'a Observation, action: MacroAction, t: u32) -> EvalContext<'a> {
        EvalContext { obs, action, t, env_reward: 0.0, delivered: false }
    }
}

fn finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

impl Node {
    pub fn constant(c: f64) -> Node {
        Node::Const(c)
    }

    pub fn neg(n: Node) -> Node {
        Node::Neg(Box::new(n))
    }

    pub fn add(a: Node, b: Node) -> Node {
        Node::Add(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Node, b: Node) -> Node {
        Node::Mul(Box::new(a), Box::new(b))
    }

    pub fn indicator(p: Pred) -> Node {
        Node::Indicator(Box::new(p))
    }

    pub fn clamp(lo: f64, hi: f64, n: Node) -> Node {
        Node::Clamp(lo, hi, Box::new(n))
    }

    pub fn eval(&self, ctx: &EvalContext) -> f64 {
        let v = match self {
            Node::Const(c) => *c,
            Node::Obs(i) => ctx.obs[*i],
            Node::Time => ctx.t as f64,
            Node::EnvReward => ctx.env_reward,
            Node::Action => ctx.action.index() as f64,
            Node::Energy => energy(ctx.action),
            Node::Neg(a) => -a.eval(ctx),
            Node::Add(a, b) => a.eval(ctx) + b.eval(ctx),
            Node::Sub(a, b) => a.eval(ctx) - b.eval(ctx),
            Node::Mul(a, b) => a.eval(ctx) * b.eval(ctx),
            Node::Div(a, b) => {
                let d = b.eval(ctx);
                if d == 0.0 {
                    0.0
                } else {
                    a.eval(ctx) / d
                }
            }
            Node::Pow(a, e) => a.eval(ctx).powi(*e as i32),
            Node::Sqrt(a) => a.eval(ctx).sqrt(),
            Node::Abs(a) => a.eval(ctx).abs(),
            Node::Min(a, b) => a.eval(ctx).min(b.eval(ctx)),
            Node::Max(a, b) => a.eval(ctx).max(b.eval(ctx)),
            Node::Dist(a, b) => {
                let dr = ctx.obs[a[0]] - ctx.obs[b[0]];
                let dc = ctx.obs[a[1]] - ctx.obs[b[1]];
                (dr * dr + dc * dc).sqrt()
            }
            Node::Indicator(p) => f64::from(u8::from(p.holds(ctx))),
            Node::If(p, a, b) => {
                if p.holds(ctx) {
                    a.eval(ctx)
                } else {
                    b.eval(ctx)
                }
            }
            Node::Clamp(lo, hi, a) => a.eval(ctx).clamp(*lo, *hi),
        };
        finite(v)
    }

    /// Check indices, constants and depth.
    pub fn validate(&self) -> Result<(), ExprError> {
        self.validate_at(0)
    }

    fn validate_at(&self, depth: usize) -> Result<(), ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let d = depth + 1;
        match self {
            Node::Const(c) => check_const(*c),
            Node::Obs(i) => check_index(*i),
            Node::Time | Node::EnvReward | Node::Action | Node::Energy => Ok(()),
            Node::Neg(a) | Node::Sqrt(a) | Node::Abs(a) | Node::Pow(a, _) => a.validate_at(d),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Min(a, b)
            | Node::Max(a, b) => {
                a.validate_at(d)?;
                b.validate_at(d)
            }
            Node::Dist(a, b) => a.iter().chain(b).try_for_each(|i| check_index(*i)),
            Node::Indicator(p) => p.validate_at(d),
            Node::If(p, a, b) => {
                p.validate_at(d)?;
                a.validate_at(d)?;
                b.validate_at(d)
            }
            Node::Clamp(lo, hi, a) => {
                check_const(*lo)?;
                check_const(*hi)?;
                if lo > hi {
                    return Err(ExprError::Invalid(format!("clamp bounds {lo} > {hi}")));
                }
                a.validate_at(d)
            }
        }
    }

    /// Canonical prefix form, e.g. `(neg (dist 19 20 6 7))`.
    pub fn to_prefix(&self) -> String {
        let mut s = String::new();
        sexpr::write_node(&mut s, self);
        s
    }

    pub fn from_prefix(text: &str) -> Result<Node, ExprError> {
        sexpr::parse_node(text)
    }
}

impl Pred {
    pub fn holds(&self, ctx: &EvalContext) -> bool {
        match self {
            Pred::ActionIs(a) => ctx.action == *a,
            Pred::Cmp(op, a, b) => op.holds(a.eval(ctx), b.eval(ctx)),
            Pred::And(p, q) => p.holds(ctx) && q.holds(ctx),
            Pred::Or(p, q) => p.holds(ctx) || q.holds(ctx),
            Pred::Not(p) => !p.holds(ctx),
            Pred::SaladDelivered => ctx.delivered,
        }
    }

    fn validate_at(&self, depth: usize) -> Result<(), ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let d = depth + 1;
        match self {
            Pred::ActionIs(_) | Pred::SaladDelivered => Ok(()),
            Pred::Cmp(_, a, b) => {
                a.validate_at(d)?;
                b.validate_at(d)
            }
            Pred::And(p, q) | Pred::Or(p, q) => {
                p.validate_at(d)?;
                q.validate_at(d)
            }
            Pred::Not(p) => p.validate_at(d),
        }
    }
}

fn check_const(c: f64) -> Result<(), ExprError> {
    if c.is_finite() {
        Ok(())
    } else {
        Err(ExprError::NonFinite)
    }
}

fn check_index(i: usize) -> Result<(), ExprError> {
    if i < OBS_LEN {
        Ok(())
    } else {
        Err(ExprError::ObsIndex(i as i64))
    }
}

/// Energy cost of a macro-action: idling is free, anything else costs 1.
pub fn energy(a: MacroAction) -> f64 {
    if a == MacroAction::Stay {
        0.0
    } else {
        1.0
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prefix())
    }
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_prefix())
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Node, D::Error> {
        let text = String::deserialize(d)?;
        Node::from_prefix(&text).map_err(serde::de::Error::custom)
    }
}

/// A reward function `R(obs, act)` together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardExpr {
    pub root: Node,
    /// Template the expression was built from; `None` for the original
    /// reward, constant-zero feedback and external replies.
    pub kind: Option<TemplateKind>,
    pub description: String,
    pub generation: Option<u32>,
}

impl RewardExpr {
    pub fn new(root: Node, kind: Option<TemplateKind>, description: impl Into<String>) -> RewardExpr {
        RewardExpr { root, kind, description: description.into(), generation: None }
    }

    /// The environment reward passed through unchanged.
    pub fn original() -> RewardExpr {
        RewardExpr::new(Node::EnvReward, None, "original reward")
    }

    pub fn zero() -> RewardExpr {
        RewardExpr::new(Node::Const(0.0), None, "constant zero")
    }

    pub fn with_generation(mut self, k: u32) -> RewardExpr {
        self.generation = Some(k);
        self
    }

    pub fn is_zero(&self) -> bool {
        match &self.root {
            Node::Const(c) => *c == 0.0,
            Node::Clamp(_, _, n) => matches!(**n, Node::Const(c) if c == 0.0),
            _ => false,
        }
    }

    pub fn eval(&self, ctx: &EvalContext) -> f64 {
        self.root.eval(ctx)
    }
}

/// Evaluate without an environment-reward term or delivery flag.
pub fn evaluate(expr: &RewardExpr, obs: &Observation, action: MacroAction, t: u32) -> f64 {
    expr.eval(&EvalContext::new(obs, action, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_with(pairs: &[(usize, f64)]) -> Observation {
        let mut o = Observation::zeros();
        for (i, v) in pairs {
            o.0[*i] = *v;
        }
        o
    }

    #[test]
    fn division_by_zero_is_zero() {
        let n = Node::Div(Box::new(Node::Const(1.0)), Box::new(Node::Obs(0)));
        let o = Observation::zeros();
        assert_eq!(n.eval(&EvalContext::new(&o, MacroAction::Stay, 0)), 0.0);
    }

    #[test]
    fn negative_sqrt_is_zero() {
        let n = Node::Sqrt(Box::new(Node::Const(-4.0)));
        let o = Observation::zeros();
        assert_eq!(n.eval(&EvalContext::new(&o, MacroAction::Stay, 0)), 0.0);
    }

    #[test]
    fn overflow_is_zero() {
        let big = Node::Pow(Box::new(Node::Const(1e200)), 4);
        let o = Observation::zeros();
        assert_eq!(big.eval(&EvalContext::new(&o, MacroAction::Stay, 0)), 0.0);
    }

    #[test]
    fn comparison_tolerance() {
        let o = obs_with(&[(0, 1.0 / 3.0 + 1e-12)]);
        let p = Pred::Cmp(CmpOp::Eq, Node::Obs(0), Node::Const(1.0 / 3.0));
        assert!(p.holds(&EvalContext::new(&o, MacroAction::Stay, 0)));
    }

    #[test]
    fn validate_rejects_bad_index() {
        assert_eq!(Node::Obs(32).validate(), Err(ExprError::ObsIndex(32)));
        assert!(Node::Dist([0, 1], [2, 40]).validate().is_err());
        assert!(Node::clamp(1.0, -1.0, Node::Time).validate().is_err());
    }

    #[test]
    fn energy_of_actions() {
        assert_eq!(energy(MacroAction::Stay), 0.0);
        assert_eq!(energy(MacroAction::Up), 1.0);
        assert_eq!(energy(MacroAction::Chop), 1.0);
    }

    #[test]
    fn reward_expr_json_uses_prefix_form() {
        let e = RewardExpr::new(Node::neg(Node::Dist([19, 20], [6, 7])), None, "d");
        let j = serde_json::to_value(&e).unwrap();
        assert_eq!(j["root"], "(neg (dist 19 20 6 7))");
        let back: RewardExpr = serde_json::from_value(j).unwrap();
        assert_eq!(back, e);
    }
}
