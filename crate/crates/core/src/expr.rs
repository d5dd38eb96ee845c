//! Closed-form scalar expressions in `x1, x2, x3, t` with exact symbolic
//! differentiation.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | func '(' expr ')' | '(' expr ')'
//! ident   := x1 | x2 | x3 | t | pi
//! func    := sin | cos | tan | exp | log | sqrt | abs | sign
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x1^2`
//! is `-(x1^2)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X1,
    X2,
    X3,
    T,
}

impl Var {
    pub const SPATIAL: [Var; 3] = [Var::X1, Var::X2, Var::X3];

    fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::X3 => "x3",
            Var::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    /// Derivative of `abs`; not differentiable at 0, derivative taken as 0.
    Sign,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Expr),
    Call(Func, Expr),
}

/// Immutable expression tree; cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<Node>);

/// Point at which an expression is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Env {
    pub x: [f64; 3],
    pub t: f64,
}

impl Env {
    pub fn new(x: [f64; 3]) -> Self {
        Env { x, t: 0.0 }
    }

    pub fn with_t(x: [f64; 3], t: f64) -> Self {
        Env { x, t }
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X1 => self.x[0],
            Var::X2 => self.x[1],
            Var::X3 => self.x[2],
            Var::T => self.t,
        }
    }
}

impl Expr {
    fn new(n: Node) -> Self {
        Expr(Arc::new(n))
    }

    pub fn constant(c: f64) -> Self {
        Expr::new(Node::Const(c))
    }

    pub fn var(v: Var) -> Self {
        Expr::new(Node::Var(v))
    }

    pub fn parse(text: &str) -> Result<Expr> {
        Parser::new(text).parse_all()
    }

    pub fn as_constant(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Whether the expression mentions `v`.
    pub fn depends_on(&self, v: Var) -> bool {
        match &*self.0 {
            Node::Const(_) => false,
            Node::Var(w) => *w == v,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on(v),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    pub fn eval(&self, env: &Env) -> Result<f64> {
        let v = match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(v) => env.get(*v),
            Node::Neg(a) => -a.eval(env)?,
            Node::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Node::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Node::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Node::Div(a, b) => {
                let d = b.eval(env)?;
                if d == 0.0 {
                    return Err(Error::Eval(format!("division by zero in `{self}`")));
                }
                a.eval(env)? / d
            }
            Node::Pow(a, b) => {
                let base = a.eval(env)?;
                let ex = b.eval(env)?;
                if base < 0.0 && ex.fract() != 0.0 {
                    return Err(Error::Eval(format!(
                        "negative base {base} raised to non-integer power in `{self}`"
                    )));
                }
                if base == 0.0 && ex < 0.0 {
                    return Err(Error::Eval(format!("zero raised to negative power in `{self}`")));
                }
                base.powf(ex)
            }
            Node::Call(f, a) => {
                let u = a.eval(env)?;
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Tan => {
                        if u.cos().abs() < 1e-15 {
                            return Err(Error::Eval(format!("tan pole in `{self}`")));
                        }
                        u.tan()
                    }
                    Func::Exp => u.exp(),
                    Func::Log => {
                        if u <= 0.0 {
                            return Err(Error::Eval(format!("log of non-positive {u} in `{self}`")));
                        }
                        u.ln()
                    }
                    Func::Sqrt => {
                        if u < 0.0 {
                            return Err(Error::Eval(format!("sqrt of negative {u} in `{self}`")));
                        }
                        u.sqrt()
                    }
                    Func::Abs => u.abs(),
                    Func::Sign => {
                        if u > 0.0 {
                            1.0
                        } else if u < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::Eval(format!("non-finite value in `{self}`")));
        }
        Ok(v)
    }

    /// Symbolic partial derivative with light constant folding.
    pub fn derivative(&self, v: Var) -> Expr {
        if !self.depends_on(v) {
            return Expr::constant(0.0);
        }
        match &*self.0 {
            Node::Const(_) => Expr::constant(0.0),
            Node::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => neg(a.derivative(v)),
            Node::Add(a, b) => add(a.derivative(v), b.derivative(v)),
            Node::Sub(a, b) => sub(a.derivative(v), b.derivative(v)),
            Node::Mul(a, b) => add(mul(a.derivative(v), b.clone()), mul(a.clone(), b.derivative(v))),
            Node::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(mul(a.derivative(v), b.clone()), mul(a.clone(), b.derivative(v)));
                div(num, pow(b.clone(), Expr::constant(2.0)))
            }
            Node::Pow(a, b) => {
                if let Some(n) = b.as_constant() {
                    // n a^(n-1) a'
                    mul(
                        mul(Expr::constant(n), pow(a.clone(), Expr::constant(n - 1.0))),
                        a.derivative(v),
                    )
                } else {
                    // a^b (b' log a + b a'/a)
                    let t1 = mul(b.derivative(v), call(Func::Log, a.clone()));
                    let t2 = div(mul(b.clone(), a.derivative(v)), a.clone());
                    mul(self.clone(), add(t1, t2))
                }
            }
            Node::Call(f, a) => {
                let da = a.derivative(v);
                let outer = match f {
                    Func::Sin => call(Func::Cos, a.clone()),
                    Func::Cos => neg(call(Func::Sin, a.clone())),
                    Func::Tan => div(
                        Expr::constant(1.0),
                        pow(call(Func::Cos, a.clone()), Expr::constant(2.0)),
                    ),
                    Func::Exp => self.clone(),
                    Func::Log => div(Expr::constant(1.0), a.clone()),
                    Func::Sqrt => div(Expr::constant(0.5), self.clone()),
                    Func::Abs => call(Func::Sign, a.clone()),
                    Func::Sign => Expr::constant(0.0),
                };
                mul(outer, da)
            }
        }
    }

    /// Constant value of a chain of negations around a constant, which is
    /// how the parser would read it back.
    fn folded_constant(&self) -> Option<f64> {
        match &*self.0 {
            Node::Const(c) => Some(*c),
            Node::Neg(a) => a.folded_constant().map(|c| -c),
            _ => None,
        }
    }

    fn precedence(&self) -> u8 {
        if self.folded_constant().is_some() {
            return 5;
        }
        match &*self.0 {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(..) => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn neg(a: Expr) -> Expr {
    match &*a.0 {
        Node::Const(c) => Expr::constant(-c),
        Node::Neg(inner) => inner.clone(),
        _ => Expr::new(Node::Neg(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::new(Node::Add(a, b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::new(Node::Sub(a, b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::constant(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::new(Node::Mul(a, b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), _) if x == 0.0 => Expr::constant(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::new(Node::Div(a, b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match b.as_constant() {
        Some(y) if y == 1.0 => a,
        Some(y) if y == 0.0 => Expr::constant(1.0),
        _ => Expr::new(Node::Pow(a, b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::new(Node::Call(f, a))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match &*self.0 {
            Node::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(v) => write!(f, "{}", v.name()),
            Node::Neg(a) => {
                if let Some(c) = self.folded_constant() {
                    return write!(f, "{}", Expr::constant(c));
                }
                write!(f, "-")?;
                wrap(f, a, 3)
            }
            Node::Add(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " + ")?;
                wrap(f, b, 2)
            }
            Node::Sub(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " - ")?;
                wrap(f, b, 2)
            }
            Node::Mul(a, b) => {
                wrap(f, a, 2)?;
                write!(f, "*")?;
                wrap(f, b, 3)
            }
            Node::Div(a, b) => {
                wrap(f, a, 2)?;
                write!(f, "/")?;
                wrap(f, b, 3)
            }
            Node::Pow(a, b) => {
                wrap(f, a, 5)?;
                write!(f, "^")?;
                wrap(f, b, 3)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            tok: Tok::End,
            tok_pos: 0,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            pos: self.tok_pos,
            msg: msg.into(),
        })
    }

    fn advance(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_pos = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let save = self.pos;
                self.pos += 1;
                if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                    self.pos += 1;
                }
                if self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                } else {
                    self.pos = save;
                }
            }
            let text = &self.src[start..self.pos];
            return match text.parse::<f64>() {
                Ok(v) => {
                    self.tok = Tok::Num(v);
                    Ok(())
                }
                Err(_) => self.err(format!("malformed number `{text}`")),
            };
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
            return Ok(());
        }
        self.pos += 1;
        self.tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            _ => {
                let ch = self.src[self.tok_pos..].chars().next().unwrap_or('?');
                return self.err(format!("unexpected character `{ch}`"));
            }
        };
        Ok(())
    }

    fn parse_all(mut self) -> Result<Expr> {
        self.advance()?;
        if self.tok == Tok::End {
            return self.err("empty expression");
        }
        let e = self.expr()?;
        if self.tok != Tok::End {
            return self.err("unexpected trailing input");
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.advance()?;
                    lhs = Expr::new(Node::Add(lhs, self.term()?));
                }
                Tok::Op('-') => {
                    self.advance()?;
                    lhs = Expr::new(Node::Sub(lhs, self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.advance()?;
                    lhs = Expr::new(Node::Mul(lhs, self.unary()?));
                }
                Tok::Op('/') => {
                    self.advance()?;
                    lhs = Expr::new(Node::Div(lhs, self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.tok {
            Tok::Op('-') => {
                self.advance()?;
                let inner = self.unary()?;
                Ok(match inner.as_constant() {
                    Some(c) => Expr::constant(-c),
                    None => Expr::new(Node::Neg(inner)),
                })
            }
            Tok::Op('+') => {
                self.advance()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.tok == Tok::Op('^') {
            self.advance()?;
            let ex = self.unary()?;
            return Ok(Expr::new(Node::Pow(base, ex)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::constant(v))
            }
            Tok::LParen => {
                self.advance()?;
                let e = self.expr()?;
                if self.tok != Tok::RParen {
                    return self.err("expected `)`");
                }
                self.advance()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.tok_pos;
                self.advance()?;
                match name.as_str() {
                    "x1" => return Ok(Expr::var(Var::X1)),
                    "x2" => return Ok(Expr::var(Var::X2)),
                    "x3" => return Ok(Expr::var(Var::X3)),
                    "t" => return Ok(Expr::var(Var::T)),
                    "pi" => return Ok(Expr::constant(std::f64::consts::PI)),
                    _ => {}
                }
                match Func::from_name(&name) {
                    Some(func) => {
                        if self.tok != Tok::LParen {
                            return self.err(format!("expected `(` after `{name}`"));
                        }
                        self.advance()?;
                        let arg = self.expr()?;
                        if self.tok != Tok::RParen {
                            return self.err("expected `)`");
                        }
                        self.advance()?;
                        Ok(call(func, arg))
                    }
                    None => Err(Error::UnknownIdentifier { pos: at, name }),
                }
            }
            Tok::End => self.err("unexpected end of input"),
            Tok::RParen => self.err("unexpected `)`"),
            Tok::Op(c) => self.err(format!("unexpected operator `{c}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    fn ev(s: &str, x: [f64; 3]) -> f64 {
        Expr::parse(s).unwrap().eval(&Env::new(x)).unwrap()
    }

    #[test]
    fn example_component_and_derivative() {
        let e = Expr::parse("-cos(x2) + sqrt(2)*sin(x3)").unwrap();
        let d = e.derivative(Var::X2);
        for x2 in [-1.0, 0.0, 0.3, 2.0] {
            let env = Env::new([0.7, x2, 0.1]);
            assert!((d.eval(&env).unwrap() - f64::sin(x2)).abs() < 1e-15);
        }
        let d3 = e.derivative(Var::X3);
        assert!((d3.eval(&Env::new([0.0, 0.0, 0.0])).unwrap() - SQRT_2).abs() < 1e-15);
        assert!(e.derivative(Var::X1).is_zero());
    }

    #[test]
    fn zero_constant() {
        let e = Expr::parse("0").unwrap();
        assert!(e.is_zero());
        assert!(e.derivative(Var::X1).is_zero());
    }

    #[test]
    fn hand_evaluation() {
        assert!((ev("x1^2*sin(x2)", [2.0, FRAC_PI_2, 0.0]) - 4.0).abs() < 1e-15);
        assert_eq!(ev("-x1^2", [3.0, 0.0, 0.0]), -9.0);
        assert_eq!(ev("2^3^2", [0.0; 3]), 512.0);
        assert_eq!(ev("1 - 2 - 3", [0.0; 3]), -4.0);
        assert_eq!(ev("8/4/2", [0.0; 3]), 1.0);
        assert_eq!(ev("2*-x1", [1.5, 0.0, 0.0]), -3.0);
        assert_eq!(ev("1.5e2 + 2E-1", [0.0; 3]), 150.2);
        let t = Expr::parse("t*x3").unwrap();
        assert_eq!(t.eval(&Env::with_t([0.0, 0.0, 2.0], 3.0)).unwrap(), 6.0);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match Expr::parse("x1 + * x2") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("unexpected {other:?}"),
        }
        match Expr::parse("sin(x1") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Expr::parse(""), Err(Error::Syntax { .. })));
        assert!(matches!(Expr::parse("x1 $ 2"), Err(Error::Syntax { pos: 3, .. })));
        match Expr::parse("2*y + 1") {
            Err(Error::UnknownIdentifier { pos, name }) => {
                assert_eq!(pos, 2);
                assert_eq!(name, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn domain_guards() {
        for (s, x) in [
            ("log(x1)", [0.0, 0.0, 0.0]),
            ("sqrt(x1)", [-1.0, 0.0, 0.0]),
            ("1/x2", [1.0, 0.0, 0.0]),
            ("x1^0.5", [-2.0, 0.0, 0.0]),
        ] {
            let e = Expr::parse(s).unwrap();
            assert!(matches!(e.eval(&Env::new(x)), Err(Error::Eval(_))), "{s}");
        }
    }

    #[test]
    fn derivative_rules_against_hand_values() {
        let cases: &[(&str, Var, [f64; 3], f64)] = &[
            ("x1^3", Var::X1, [2.0, 0.0, 0.0], 12.0),
            ("exp(2*x1)", Var::X1, [0.0, 0.0, 0.0], 2.0),
            ("log(x1*x2)", Var::X2, [1.0, 4.0, 0.0], 0.25),
            ("x1/x2", Var::X2, [3.0, 2.0, 0.0], -0.75),
            ("tan(x3)", Var::X3, [0.0, 0.0, 0.0], 1.0),
            ("x1^x2", Var::X2, [2.0, 3.0, 0.0], 8.0 * std::f64::consts::LN_2),
            ("abs(x1)", Var::X1, [-2.0, 0.0, 0.0], -1.0),
            ("sqrt(x1^2 + x2^2)", Var::X1, [3.0, 4.0, 0.0], 0.6),
        ];
        for (s, v, x, want) in cases {
            let d = Expr::parse(s).unwrap().derivative(*v);
            let got = d.eval(&Env::new(*x)).unwrap();
            assert!((got - want).abs() < 1e-14, "{s}: {got} vs {want}");
        }
    }

    #[test]
    fn printing_examples() {
        let e = Expr::parse("-cos(x2) + sqrt(2)*sin(x3)").unwrap();
        assert_eq!(e.to_string(), "-cos(x2) + sqrt(2.0)*sin(x3)");
        assert_eq!(Expr::parse("(x1 - x2) - (x3 - 1)").unwrap().to_string(), "x1 - x2 - (x3 - 1.0)");
        assert_eq!(Expr::parse("(-2)^2").unwrap().to_string(), "(-2.0)^2.0");
        assert_eq!(ev("(-2)^2", [0.0; 3]), 4.0);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::constant),
            prop_oneof![Just(Var::X1), Just(Var::X2), Just(Var::X3), Just(Var::T)].prop_map(Expr::var),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::new(Node::Neg(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Add(a, b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Sub(a, b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Mul(a, b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Div(a, b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Pow(a, b))),
                inner.clone().prop_map(|a| call(Func::Sin, a)),
                inner.prop_map(|a| call(Func::Exp, a)),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_is_stable(e in arb_expr()) {
            let s1 = e.to_string();
            let p = Expr::parse(&s1).unwrap();
            prop_assert_eq!(p.to_string(), s1.clone());
            let env = Env::with_t([0.3, -0.7, 1.1], 0.4);
            match (e.eval(&env), p.eval(&env)) {
                (Ok(a), Ok(b)) => prop_assert!(a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?} for {}", a, b, s1),
            }
        }

        #[test]
        fn symbolic_derivative_matches_finite_differences(e in arb_expr()) {
            let x = [0.31, 0.62, 0.47];
            let h = 1e-5;
            for (k, v) in Var::SPATIAL.iter().enumerate() {
                let mut xp = x; xp[k] += h;
                let mut xm = x; xm[k] -= h;
                let (Ok(fp), Ok(fm), Ok(d)) = (
                    e.eval(&Env::with_t(xp, 0.2)),
                    e.eval(&Env::with_t(xm, 0.2)),
                    e.derivative(*v).eval(&Env::with_t(x, 0.2)),
                ) else { continue };
                let mut xpp = x; xpp[k] += 2.0 * h;
                let mut xmm = x; xmm[k] -= 2.0 * h;
                let (Ok(fpp), Ok(fmm)) = (e.eval(&Env::with_t(xpp, 0.2)), e.eval(&Env::with_t(xmm, 0.2))) else { continue };
                let fd = (8.0 * (fp - fm) - (fpp - fmm)) / (12.0 * h);
                prop_assume!(fp.abs() < 1e6 && fm.abs() < 1e6 && d.abs() < 1e4);
                prop_assert!((fd - d).abs() <= 1e-5 * (1.0 + d.abs()), "{}: fd {} sym {}", e, fd, d);
            }
        }
    }
}
