//! Whitelisted infix grammar for reward functions returned by an external
//! language model. Replies are parsed, never executed.
//!
//! ```text
//! reply   := ["lambda" "obs" "," "act" ":"] expr
//! expr    := or ["if" or "else" expr]
//! or      := and ("or" and)*
//! and     := not ("and" not)*
//! not     := "not" not | cmp
//! cmp     := arith [CMP arith]
//! arith   := term (("+" | "-") term)*
//! term    := factor (("*" | "/") factor)*
//! factor  := ("-" | "+") factor | power
//! power   := atom ["**" factor]
//! atom    := NUMBER | "obs" "[" INT "]" | "act" | "(" expr ")"
//!          | FUNC "(" expr ["," expr] ")"
//! FUNC    := sqrt | abs | min | max | np.sqrt | math.sqrt | np.abs | math.fabs
//! ```
//!
//! Code fences and `#` comments are dropped first. Exponents must be integer
//! constants in `0..=8` or `0.5`. `sqrt((a - b)**2 + (c - d)**2)` over
//! observation entries becomes a [`Node::Dist`], and `act == k` becomes
//! [`Pred::ActionIs`].

use crate::env::MacroAction;

use super::{CmpOp, ExprError, Node, Pred, MAX_DEPTH};

pub const MAX_REPLY_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Num(f64),
    Ident(&'a str),
    Op(&'static str),
}

const OPS: [&str; 18] = [
    "**", "==", "!=", "<=", ">=", "*", "/", "+", "-", "(", ")", "[", "]", ",", ":", "<", ">", ".",
];

fn strip(reply: &str) -> String {
    let mut out = String::new();
    for line in reply.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        let code = line.split('#').next().unwrap_or("");
        out.push_str(code);
        out.push(' ');
    }
    out
}

fn lex(src: &str) -> Result<Vec<(usize, Tok<'_>)>, ExprError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| ExprError::syntax(start, format!("bad number {text:?}")))?;
            if !v.is_finite() {
                return Err(ExprError::NonFinite);
            }
            toks.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push((start, Tok::Ident(&src[start..i])));
            continue;
        }
        match OPS.iter().find(|op| src[i..].starts_with(**op)) {
            Some(op) => {
                toks.push((i, Tok::Op(op)));
                i += op.len();
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ExprError::syntax(i, format!("character {ch:?} is not allowed")));
            }
        }
    }
    Ok(toks)
}

const KEYWORDS: [&str; 14] = [
    "lambda", "obs", "act", "and", "or", "not", "if", "else", "sqrt", "abs", "min", "max", "np", "math",
];

enum Val {
    Num(Node),
    Bool(Pred),
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
    depth: usize,
}

/// Parse an untrusted reply such as
/// `lambda obs, act: -sqrt((obs[19] - obs[0])**2 + (obs[20] - obs[1])**2)`.
pub fn parse_external(reply: &str) -> Result<Node, ExprError> {
    if reply.len() > MAX_REPLY_LEN {
        return Err(ExprError::TooLong(MAX_REPLY_LEN));
    }
    let src = strip(reply);
    let toks = lex(&src)?;
    if let Some((off, Tok::Ident(id))) = toks.iter().find(|(_, t)| matches!(t, Tok::Ident(id) if !KEYWORDS.contains(id))) {
        return Err(ExprError::syntax(*off, format!("identifier {id:?} is not allowed")));
    }
    let mut p = Parser { toks, pos: 0, end: src.len(), depth: 0 };
    if p.peek_ident("lambda") {
        p.pos += 1;
        p.expect_ident("obs")?;
        p.expect_op(",")?;
        p.expect_ident("act")?;
        p.expect_op(":")?;
    }
    if p.pos == p.toks.len() {
        return Err(ExprError::syntax(p.end, "empty expression"));
    }
    let v = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ExprError::syntax(p.offset(), "unexpected trailing input"));
    }
    let n = p.num(v)?;
    n.validate()?;
    Ok(n)
}

impl<'a> Parser<'a> {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn peek_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if *o == op)
    }

    fn peek_ident(&self, id: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(i)) if *i == id)
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ExprError> {
        if self.peek_op(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::syntax(self.offset(), format!("expected {op:?}")))
        }
    }

    fn expect_ident(&mut self, id: &str) -> Result<(), ExprError> {
        if self.peek_ident(id) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::syntax(self.offset(), format!("expected {id:?}")))
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(ExprError::TooDeep)
        } else {
            Ok(())
        }
    }

    fn num(&self, v: Val) -> Result<Node, ExprError> {
        Ok(match v {
            Val::Num(n) => n,
            Val::Bool(p) => Node::Indicator(Box::new(p)),
        })
    }

    fn cond(&self, v: Val, off: usize) -> Result<Pred, ExprError> {
        match v {
            Val::Bool(p) => Ok(p),
            Val::Num(_) => Err(ExprError::syntax(off, "a number is used where a condition is required")),
        }
    }

    fn expr(&mut self) -> Result<Val, ExprError> {
        self.enter()?;
        let body = self.or()?;
        let out = if self.peek_ident("if") {
            self.pos += 1;
            let c_off = self.offset();
            let c = self.or()?;
            let c = self.cond(c, c_off)?;
            self.expect_ident("else")?;
            let other = self.expr()?;
            let a = self.num(body)?;
            let b = self.num(other)?;
            Val::Num(Node::If(Box::new(c), Box::new(a), Box::new(b)))
        } else {
            body
        };
        self.depth -= 1;
        Ok(out)
    }

    fn or(&mut self) -> Result<Val, ExprError> {
        let off = self.offset();
        let mut v = self.and()?;
        while self.peek_ident("or") {
            self.pos += 1;
            let r_off = self.offset();
            let r = self.and()?;
            let l = self.cond(v, off)?;
            let r = self.cond(r, r_off)?;
            v = Val::Bool(Pred::Or(Box::new(l), Box::new(r)));
        }
        Ok(v)
    }

    fn and(&mut self) -> Result<Val, ExprError> {
        let off = self.offset();
        let mut v = self.not()?;
        while self.peek_ident("and") {
            self.pos += 1;
            let r_off = self.offset();
            let r = self.not()?;
            let l = self.cond(v, off)?;
            let r = self.cond(r, r_off)?;
            v = Val::Bool(Pred::And(Box::new(l), Box::new(r)));
        }
        Ok(v)
    }

    fn not(&mut self) -> Result<Val, ExprError> {
        if self.peek_ident("not") {
            self.enter()?;
            self.pos += 1;
            let off = self.offset();
            let v = self.not()?;
            let p = self.cond(v, off)?;
            self.depth -= 1;
            return Ok(Val::Bool(Pred::Not(Box::new(p))));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Val, ExprError> {
        let lhs = self.arith()?;
        let op = match self.peek() {
            Some(Tok::Op(o)) => CmpOp::from_symbol(o),
            _ => None,
        };
        let Some(op) = op else { return Ok(lhs) };
        self.pos += 1;
        let rhs = self.arith()?;
        if matches!(self.peek(), Some(Tok::Op(o)) if CmpOp::from_symbol(o).is_some()) {
            return Err(ExprError::syntax(self.offset(), "chained comparisons are not allowed"));
        }
        let a = self.num(lhs)?;
        let b = self.num(rhs)?;
        Ok(Val::Bool(action_pred(op, a, b)))
    }

    fn arith(&mut self) -> Result<Val, ExprError> {
        let mut v = self.term()?;
        loop {
            let op = if self.peek_op("+") {
                "+"
            } else if self.peek_op("-") {
                "-"
            } else {
                return Ok(v);
            };
            self.pos += 1;
            let r = self.term()?;
            let (a, b) = (Box::new(self.num(v)?), Box::new(self.num(r)?));
            v = Val::Num(if op == "+" { Node::Add(a, b) } else { Node::Sub(a, b) });
        }
    }

    fn term(&mut self) -> Result<Val, ExprError> {
        let mut v = self.factor()?;
        loop {
            let op = if self.peek_op("*") {
                "*"
            } else if self.peek_op("/") {
                "/"
            } else {
                return Ok(v);
            };
            self.pos += 1;
            let r = self.factor()?;
            let (a, b) = (Box::new(self.num(v)?), Box::new(self.num(r)?));
            v = Val::Num(if op == "*" { Node::Mul(a, b) } else { Node::Div(a, b) });
        }
    }

    fn factor(&mut self) -> Result<Val, ExprError> {
        if self.peek_op("-") || self.peek_op("+") {
            self.enter()?;
            let neg = self.peek_op("-");
            self.pos += 1;
            let v = self.factor()?;
            let n = self.num(v)?;
            self.depth -= 1;
            return Ok(Val::Num(match (neg, n) {
                (false, n) => n,
                (true, Node::Const(c)) => Node::Const(-c),
                (true, n) => Node::Neg(Box::new(n)),
            }));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Val, ExprError> {
        let base = self.atom()?;
        if !self.peek_op("**") {
            return Ok(base);
        }
        self.pos += 1;
        let off = self.offset();
        let e = self.factor()?;
        let base = self.num(base)?;
        match self.num(e)? {
            Node::Const(c) if c == 0.5 => Ok(Val::Num(sqrt(base))),
            Node::Const(c) if c.fract() == 0.0 && (0.0..=8.0).contains(&c) => {
                Ok(Val::Num(Node::Pow(Box::new(base), c as u8)))
            }
            _ => Err(ExprError::syntax(off, "exponent must be an integer constant in 0..=8 or 0.5")),
        }
    }

    fn atom(&mut self) -> Result<Val, ExprError> {
        let off = self.offset();
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| ExprError::syntax(self.end, "unexpected end of input"))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Val::Num(Node::Const(v))),
            Tok::Op("(") => {
                let v = self.expr()?;
                self.expect_op(")")?;
                Ok(v)
            }
            Tok::Ident("obs") => {
                self.expect_op("[")?;
                let i_off = self.offset();
                let idx = match self.peek() {
                    Some(Tok::Num(v)) if v.fract() == 0.0 && *v >= 0.0 => *v,
                    _ => return Err(ExprError::syntax(i_off, "expected a non-negative integer index")),
                };
                self.pos += 1;
                self.expect_op("]")?;
                if idx >= super::OBS_LEN as f64 {
                    return Err(ExprError::ObsIndex(idx as i64));
                }
                Ok(Val::Num(Node::Obs(idx as usize)))
            }
            Tok::Ident("act") => Ok(Val::Num(Node::Action)),
            Tok::Ident(m @ ("np" | "math")) => {
                self.expect_op(".")?;
                let f_off = self.offset();
                let f = match self.peek() {
                    Some(Tok::Ident(f)) => *f,
                    _ => return Err(ExprError::syntax(f_off, "expected a function name")),
                };
                let name = match (m, f) {
                    (_, "sqrt") => "sqrt",
                    ("np", "abs") | ("math", "fabs") => "abs",
                    _ => return Err(ExprError::syntax(f_off, format!("{m}.{f} is not allowed"))),
                };
                self.pos += 1;
                self.call(name)
            }
            Tok::Ident(f @ ("sqrt" | "abs" | "min" | "max")) => self.call(f),
            _ => Err(ExprError::syntax(off, "unexpected token")),
        }
    }

    fn call(&mut self, f: &str) -> Result<Val, ExprError> {
        self.enter()?;
        self.expect_op("(")?;
        let a = self.expr()?;
        let a = self.num(a)?;
        let out = match f {
            "sqrt" => sqrt(a),
            "abs" => Node::Abs(Box::new(a)),
            _ => {
                self.expect_op(",")?;
                let b = self.expr()?;
                let b = Box::new(self.num(b)?);
                if f == "min" {
                    Node::Min(Box::new(a), b)
                } else {
                    Node::Max(Box::new(a), b)
                }
            }
        };
        self.expect_op(")")?;
        self.depth -= 1;
        Ok(Val::Num(out))
    }
}

fn squared_obs_diff(n: &Node) -> Option<(usize, usize)> {
    let Node::Pow(inner, 2) = n else { return None };
    match inner.as_ref() {
        Node::Sub(a, b) => match (a.as_ref(), b.as_ref()) {
            (Node::Obs(i), Node::Obs(j)) => Some((*i, *j)),
            _ => None,
        },
        _ => None,
    }
}

fn sqrt(arg: Node) -> Node {
    if let Node::Add(x, y) = &arg {
        if let (Some((a0, b0)), Some((a1, b1))) = (squared_obs_diff(x), squared_obs_diff(y)) {
            return Node::Dist([a0, a1], [b0, b1]);
        }
    }
    Node::Sqrt(Box::new(arg))
}

fn action_pred(op: CmpOp, a: Node, b: Node) -> Pred {
    let as_action = |n: &Node| match n {
        Node::Const(c) if c.fract() == 0.0 && *c >= 0.0 => MacroAction::from_index(*c as usize),
        _ => None,
    };
    if op == CmpOp::Eq {
        match (&a, &b) {
            (Node::Action, c) | (c, Node::Action) => {
                if let Some(act) = as_action(c) {
                    return Pred::ActionIs(act);
                }
            }
            _ => {}
        }
    }
    Pred::Cmp(op, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_example_is_a_distance() {
        let n = parse_external(
            "lambda obs, act: -sqrt((obs[19] - obs[0])**2 + (obs[20] - obs[1])**2)  # Distance between agent 1 and tomato",
        )
        .unwrap();
        assert_eq!(n, Node::neg(Node::Dist([19, 20], [0, 1])));
    }

    #[test]
    fn fenced_reply() {
        let n = parse_external("```python\nlambda obs, act: 1.0 if act == 5 else 0.0\n```").unwrap();
        assert_eq!(
            n,
            Node::If(
                Box::new(Pred::ActionIs(MacroAction::Chop)),
                Box::new(Node::Const(1.0)),
                Box::new(Node::Const(0.0))
            )
        );
    }

    #[test]
    fn precedence_follows_python() {
        // -x**2 is -(x**2)
        assert_eq!(
            parse_external("-obs[0]**2").unwrap(),
            Node::neg(Node::Pow(Box::new(Node::Obs(0)), 2))
        );
        assert_eq!(
            parse_external("1 + 2 * 3").unwrap(),
            Node::add(Node::Const(1.0), Node::mul(Node::Const(2.0), Node::Const(3.0)))
        );
    }

    #[test]
    fn booleans_become_indicators() {
        let n = parse_external("(obs[2] == 1) * 2").unwrap();
        assert_eq!(
            n,
            Node::mul(
                Node::indicator(Pred::Cmp(CmpOp::Eq, Node::Obs(2), Node::Const(1.0))),
                Node::Const(2.0)
            )
        );
    }

    #[test]
    fn rejects_unsafe_or_malformed() {
        for bad in [
            "__import__('os').system('rm -rf /')",
            "lambda obs, act: obs[32]",
            "lambda obs, act: obs[-1]",
            "lambda obs, act: obs[0:2]",
            "lambda obs: obs[0]",
            "lambda obs, act: open('x')",
            "lambda obs, act: obs.sum()",
            "lambda obs, act: obs[0] ** obs[1]",
            "lambda obs, act: 1 < 2 < 3",
            "lambda obs, act: 1 if obs[0] else 0",
            "lambda obs, act: 'chop'",
            "obs[0]; obs[1]",
            "lambda obs, act: exec('1')",
            "lambda obs, act: np.exp(obs[0])",
            "lambda obs, act: 1e999",
            "",
            "lambda obs, act:",
            "x = 1",
        ] {
            assert!(parse_external(bad).is_err(), "{bad:?} accepted");
        }
    }
}
