//! Canonical prefix notation.
//!
//! ```text
//! node  := number | t | r_env | act | energy
//!        | (obs I) | (neg N) | (sqrt N) | (abs N) | (pow N K)
//!        | (+ N N) | (- N N) | (* N N) | (/ N N) | (min N N) | (max N N)
//!        | (dist I I I I) | (ind P) | (if P N N) | (clamp C C N)
//! pred  := delivered | (act= NAME) | (OP N N) | (and P P) | (or P P) | (not P)
//! OP    := == | != | < | <= | > | >=
//! ```
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! `parse(write(n)) == n` for every valid tree.

use std::fmt::Write;

use crate::env::MacroAction;

use super::{CmpOp, ExprError, Node, Pred, MAX_DEPTH};

const MAX_LEN: usize = 64 * 1024;

pub(super) fn write_node(out: &mut String, n: &Node) {
    match n {
        Node::Const(c) => write!(out, "{c:?}").unwrap(),
        Node::Obs(i) => write!(out, "(obs {i})").unwrap(),
        Node::Time => out.push('t'),
        Node::EnvReward => out.push_str("r_env"),
        Node::Action => out.push_str("act"),
        Node::Energy => out.push_str("energy"),
        Node::Neg(a) => unary(out, "neg", a),
        Node::Sqrt(a) => unary(out, "sqrt", a),
        Node::Abs(a) => unary(out, "abs", a),
        Node::Pow(a, e) => {
            out.push_str("(pow ");
            write_node(out, a);
            write!(out, " {e})").unwrap();
        }
        Node::Add(a, b) => binary(out, "+", a, b),
        Node::Sub(a, b) => binary(out, "-", a, b),
        Node::Mul(a, b) => binary(out, "*", a, b),
        Node::Div(a, b) => binary(out, "/", a, b),
        Node::Min(a, b) => binary(out, "min", a, b),
        Node::Max(a, b) => binary(out, "max", a, b),
        Node::Dist(a, b) => write!(out, "(dist {} {} {} {})", a[0], a[1], b[0], b[1]).unwrap(),
        Node::Indicator(p) => {
            out.push_str("(ind ");
            write_pred(out, p);
            out.push(')');
        }
        Node::If(p, a, b) => {
            out.push_str("(if ");
            write_pred(out, p);
            out.push(' ');
            write_node(out, a);
            out.push(' ');
            write_node(out, b);
            out.push(')');
        }
        Node::Clamp(lo, hi, a) => {
            write!(out, "(clamp {lo:?} {hi:?} ").unwrap();
            write_node(out, a);
            out.push(')');
        }
    }
}

fn unary(out: &mut String, head: &str, a: &Node) {
    write!(out, "({head} ").unwrap();
    write_node(out, a);
    out.push(')');
}

fn binary(out: &mut String, head: &str, a: &Node, b: &Node) {
    write!(out, "({head} ").unwrap();
    write_node(out, a);
    out.push(' ');
    write_node(out, b);
    out.push(')');
}

fn write_pred(out: &mut String, p: &Pred) {
    match p {
        Pred::SaladDelivered => out.push_str("delivered"),
        Pred::ActionIs(a) => write!(out, "(act= {})", a.name()).unwrap(),
        Pred::Cmp(op, a, b) => binary(out, op.symbol(), a, b),
        Pred::And(p, q) => pred_pair(out, "and", p, q),
        Pred::Or(p, q) => pred_pair(out, "or", p, q),
        Pred::Not(q) => {
            out.push_str("(not ");
            write_pred(out, q);
            out.push(')');
        }
    }
}

fn pred_pair(out: &mut String, head: &str, p: &Pred, q: &Pred) {
    write!(out, "({head} ").unwrap();
    write_pred(out, p);
    out.push(' ');
    write_pred(out, q);
    out.push(')');
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let delim = ch == '(' || ch == ')' || ch.is_whitespace();
        if delim {
            if let Some(s) = start.take() {
                toks.push((s, Tok::Atom(&text[s..i])));
            }
            match ch {
                '(' => toks.push((i, Tok::Open)),
                ')' => toks.push((i, Tok::Close)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push((s, Tok::Atom(&text[s..])));
    }
    toks
}

pub(super) fn parse_node(text: &str) -> Result<Node, ExprError> {
    if text.len() > MAX_LEN {
        return Err(ExprError::TooLong(MAX_LEN));
    }
    let mut p = Parser { toks: tokenize(text), pos: 0, end: text.len() };
    let n = p.node(0)?;
    if p.pos != p.toks.len() {
        return Err(ExprError::syntax(p.offset(), "trailing input"));
    }
    n.validate()?;
    Ok(n)
}

impl<'a> Parser<'a> {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn next(&mut self) -> Result<Tok<'a>, ExprError> {
        let t = self
            .toks
            .get(self.pos)
            .map(|t| t.1)
            .ok_or_else(|| ExprError::syntax(self.end, "unexpected end of input"))?;
        self.pos += 1;
        Ok(t)
    }

    fn close(&mut self) -> Result<(), ExprError> {
        let off = self.offset();
        match self.next()? {
            Tok::Close => Ok(()),
            _ => Err(ExprError::syntax(off, "expected ')'")),
        }
    }

    fn atom(&mut self) -> Result<&'a str, ExprError> {
        let off = self.offset();
        match self.next()? {
            Tok::Atom(a) => Ok(a),
            _ => Err(ExprError::syntax(off, "expected an atom")),
        }
    }

    fn index(&mut self) -> Result<usize, ExprError> {
        let off = self.offset();
        let a = self.atom()?;
        a.parse::<usize>()
            .map_err(|_| ExprError::syntax(off, format!("expected an index, found {a:?}")))
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let off = self.offset();
        let a = self.atom()?;
        parse_number(a).ok_or_else(|| ExprError::syntax(off, format!("expected a number, found {a:?}")))
    }

    fn node(&mut self, depth: usize) -> Result<Node, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let off = self.offset();
        let head = match self.next()? {
            Tok::Close => return Err(ExprError::syntax(off, "unexpected ')'")),
            Tok::Atom(a) => {
                return match a {
                    "t" => Ok(Node::Time),
                    "r_env" => Ok(Node::EnvReward),
                    "act" => Ok(Node::Action),
                    "energy" => Ok(Node::Energy),
                    _ => parse_number(a)
                        .map(Node::Const)
                        .ok_or_else(|| ExprError::syntax(off, format!("unknown atom {a:?}"))),
                };
            }
            Tok::Open => self.atom()?,
        };
        let d = depth + 1;
        let b = Box::new;
        let n = match head {
            "obs" => Node::Obs(self.index()?),
            "neg" => Node::Neg(b(self.node(d)?)),
            "sqrt" => Node::Sqrt(b(self.node(d)?)),
            "abs" => Node::Abs(b(self.node(d)?)),
            "pow" => {
                let a = self.node(d)?;
                let e_off = self.offset();
                let e = self.atom()?;
                let e = e
                    .parse::<u8>()
                    .map_err(|_| ExprError::syntax(e_off, format!("bad exponent {e:?}")))?;
                Node::Pow(b(a), e)
            }
            "+" => Node::Add(b(self.node(d)?), b(self.node(d)?)),
            "-" => Node::Sub(b(self.node(d)?), b(self.node(d)?)),
            "*" => Node::Mul(b(self.node(d)?), b(self.node(d)?)),
            "/" => Node::Div(b(self.node(d)?), b(self.node(d)?)),
            "min" => Node::Min(b(self.node(d)?), b(self.node(d)?)),
            "max" => Node::Max(b(self.node(d)?), b(self.node(d)?)),
            "dist" => {
                let a0 = self.index()?;
                let a1 = self.index()?;
                let b0 = self.index()?;
                let b1 = self.index()?;
                Node::Dist([a0, a1], [b0, b1])
            }
            "ind" => Node::Indicator(Box::new(self.pred(d)?)),
            "if" => Node::If(Box::new(self.pred(d)?), b(self.node(d)?), b(self.node(d)?)),
            "clamp" => {
                let lo = self.number()?;
                let hi = self.number()?;
                Node::Clamp(lo, hi, b(self.node(d)?))
            }
            other => return Err(ExprError::syntax(off, format!("unknown form {other:?}"))),
        };
        self.close()?;
        Ok(n)
    }

    fn pred(&mut self, depth: usize) -> Result<Pred, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let off = self.offset();
        let head = match self.next()? {
            Tok::Atom("delivered") => return Ok(Pred::SaladDelivered),
            Tok::Open => self.atom()?,
            _ => return Err(ExprError::syntax(off, "expected a predicate")),
        };
        let d = depth + 1;
        let p = match head {
            "act=" => {
                let a_off = self.offset();
                let name = self.atom()?;
                Pred::ActionIs(
                    name.parse::<MacroAction>()
                        .map_err(|_| ExprError::syntax(a_off, format!("unknown action {name:?}")))?,
                )
            }
            "and" => Pred::And(Box::new(self.pred(d)?), Box::new(self.pred(d)?)),
            "or" => Pred::Or(Box::new(self.pred(d)?), Box::new(self.pred(d)?)),
            "not" => Pred::Not(Box::new(self.pred(d)?)),
            sym => match CmpOp::from_symbol(sym) {
                Some(op) => Pred::Cmp(op, self.node(d)?, self.node(d)?),
                None => return Err(ExprError::syntax(off, format!("unknown predicate {sym:?}"))),
            },
        };
        self.close()?;
        Ok(p)
    }
}

fn parse_number(a: &str) -> Option<f64> {
    let first = a.chars().next()?;
    if !(first.is_ascii_digit() || first == '-' || first == '.') {
        return None;
    }
    a.parse::<f64>().ok().filter(|v| v.is_finite())
}
