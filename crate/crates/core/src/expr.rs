//! Component expressions for Lipschitz vector fields.
//!
//! The language is deliberately small: rationals, variables `x1..xn`, the four
//! arithmetic operators, integer powers and the four functions `abs`, `exp`,
//! `sign` and `sqrt`. Every expression has an almost-everywhere derivative
//! obtained by formal differentiation with `abs' = sign` and `sign' = 0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{EvalError, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index; printed as `x{index + 1}`.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Abs(Box<Expr>),
    Exp(Box<Expr>),
    Sign(Box<Expr>),
    Sqrt(Box<Expr>),
}

/// Tracks whether an evaluation touched a point where the a.e. formulas are
/// not valid: a zero argument of `abs`, `sign` or `sqrt`, or a zero divisor.
#[derive(Debug, Default, Clone, Copy)]
struct Probe {
    on_locus: bool,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        Parser::new(text).parse()
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    /// Variable `x{index}` with a one-based index, as written in the DSL.
    pub fn var(index: usize) -> Expr {
        assert!(index >= 1, "variables are one-based");
        Expr::Var(index - 1)
    }

    /// Largest one-based variable index used, 0 for closed expressions.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Abs(a) | Expr::Exp(a) | Expr::Sign(a) | Expr::Sqrt(a) => {
                a.max_variable()
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_variable().max(b.max_variable())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut probe = Probe::default();
        self.eval_root(x, &mut probe)
    }

    /// True if evaluating at `x` hits a kink or a zero divisor.
    pub fn on_kink_locus(&self, x: &[f64]) -> bool {
        let mut probe = Probe::default();
        match self.eval_root(x, &mut probe) {
            Ok(_) => probe.on_locus,
            Err(_) => true,
        }
    }

    fn eval_root(&self, x: &[f64], probe: &mut Probe) -> Result<f64, EvalError> {
        let v = self.eval_node(x, probe)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::DivisionByZero)
        }
    }

    // Intermediate infinities are produced only by division (or negative
    // powers) by zero, and only `exp` may absorb them: exp(-inf) = 0. This is
    // what makes e^{-1/|x|^2} evaluable at the origin.
    fn eval_node(&self, x: &[f64], probe: &mut Probe) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::MissingVariable {
                index: i + 1,
                dim: x.len(),
            })?,
            Expr::Neg(a) => return Ok(-a.eval_node(x, probe)?),
            Expr::Add(a, b) => finite(a.eval_node(x, probe)?)? + finite(b.eval_node(x, probe)?)?,
            Expr::Sub(a, b) => finite(a.eval_node(x, probe)?)? - finite(b.eval_node(x, probe)?)?,
            Expr::Mul(a, b) => finite(a.eval_node(x, probe)?)? * finite(b.eval_node(x, probe)?)?,
            Expr::Div(a, b) => {
                let num = finite(a.eval_node(x, probe)?)?;
                let den = finite(b.eval_node(x, probe)?)?;
                if den == 0.0 {
                    probe.on_locus = true;
                    if num == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                }
                return Ok(num / den);
            }
            Expr::Pow(a, k) => {
                let base = finite(a.eval_node(x, probe)?)?;
                if *k < 0 && base == 0.0 {
                    probe.on_locus = true;
                }
                return Ok(base.powi(*k));
            }
            Expr::Abs(a) => {
                let v = finite(a.eval_node(x, probe)?)?;
                if v == 0.0 {
                    probe.on_locus = true;
                }
                v.abs()
            }
            Expr::Sign(a) => {
                let v = finite(a.eval_node(x, probe)?)?;
                if v == 0.0 {
                    probe.on_locus = true;
                    0.0
                } else {
                    v.signum()
                }
            }
            Expr::Sqrt(a) => {
                let v = finite(a.eval_node(x, probe)?)?;
                if v < 0.0 {
                    return Err(EvalError::NegativeSqrt);
                }
                if v == 0.0 {
                    probe.on_locus = true;
                }
                v.sqrt()
            }
            Expr::Exp(a) => {
                let v = a.eval_node(x, probe)?;
                if v == f64::NEG_INFINITY {
                    0.0
                } else {
                    finite(v)?.exp()
                }
            }
        };
        if v.is_nan() || v.is_infinite() {
            Err(EvalError::NonFinite)
        } else {
            Ok(v)
        }
    }

    /// Almost-everywhere partial derivative with respect to the zero-based
    /// variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.is_zero() {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), 2),
                    )
                }
            }
            Expr::Pow(a, k) => match *k {
                0 => Expr::Const(0.0),
                _ => mul(
                    mul(Expr::Const(*k as f64), pow((**a).clone(), k - 1)),
                    a.derivative(var),
                ),
            },
            Expr::Abs(a) => mul(Expr::Sign(a.clone()), a.derivative(var)),
            Expr::Sign(_) => Expr::Const(0.0),
            Expr::Sqrt(a) => div(a.derivative(var), mul(Expr::Const(2.0), self.clone())),
            Expr::Exp(a) => mul(self.clone(), a.derivative(var)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

// Smart constructors: fold the zeros and ones produced by formal
// differentiation so derivative trees stay small.

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match &b {
        Expr::Const(y) if *y == 1.0 => a,
        _ if a.is_zero() => Expr::Const(0.0),
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    match k {
        0 => Expr::Const(1.0),
        1 => a,
        _ => Expr::Pow(Box::new(a), k),
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                // factor := "-" atom ("^" int)?
                if a.precedence() >= 4 {
                    write!(f, "-{a}")
                } else {
                    write!(f, "-({a})")
                }
            }
            Expr::Add(a, b) => write!(f, "{a} + {}", Wrap(b, 2)),
            Expr::Sub(a, b) => write!(f, "{a} - {}", Wrap(b, 2)),
            Expr::Mul(a, b) => write!(f, "{} * {}", Wrap(a, 2), Wrap(b, 3)),
            Expr::Div(a, b) => write!(f, "{} / {}", Wrap(a, 2), Wrap(b, 3)),
            Expr::Pow(a, k) => {
                let base = Wrap(a, 5);
                if *k < 0 {
                    write!(f, "{base}^-{}", -(*k as i64))
                } else {
                    write!(f, "{base}^{k}")
                }
            }
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Sign(a) => write!(f, "sign({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

/// Parenthesizes `expr` unless its precedence is at least `min`.
struct Wrap<'a>(&'a Expr, u8);

impl fmt::Display for Wrap<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.precedence() >= self.1 {
            write!(f, "{}", self.0)
        } else {
            write!(f, "({})", self.0)
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser { text, pos: 0 }
    }

    fn parse(mut self) -> Result<Expr, ParseError> {
        let expr = self.expr()?;
        self.skip_ws();
        if self.pos < self.text.len() {
            return Err(self.syntax("unexpected trailing input"));
        }
        Ok(expr)
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek_char(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    /// Next significant character, with the Unicode minus folded to '-'.
    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.peek_char().map(|c| if c == '\u{2212}' { '-' } else { c })
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek_char() {
            self.pos += c.len_utf8();
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        if self.peek() == Some(want) {
            self.bump();
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{want}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let negate = if self.peek() == Some('-') {
            self.bump();
            true
        } else {
            false
        };
        let mut base = self.atom()?;
        if self.peek() == Some('^') {
            self.bump();
            let k = self.integer()?;
            base = Expr::Pow(Box::new(base), k);
        }
        Ok(if negate { Expr::Neg(Box::new(base)) } else { base })
    }

    fn integer(&mut self) -> Result<i32, ParseError> {
        let negative = if self.peek() == Some('-') {
            self.bump();
            true
        } else {
            false
        };
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek_char(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        if start == self.pos {
            return Err(self.syntax("expected integer exponent"));
        }
        let value: i32 = self.text[start..self.pos]
            .parse()
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: "exponent out of range".into(),
            })?;
        Ok(if negative { -value } else { value })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some('(') => {
                self.bump();
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let bytes = self.text.as_bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut look = end + 1;
            if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                look += 1;
            }
            if look < bytes.len() && bytes[look].is_ascii_digit() {
                end = look;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
        }
        let value: f64 = self.text[start..end].parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{}`", &self.text[start..end]),
        })?;
        self.pos = end;
        Ok(Expr::Const(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek_char(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        let name = &self.text[start..self.pos];
        let unknown = || ParseError::UnknownIdentifier {
            offset: start,
            name: name.to_string(),
        };
        let wrap: fn(Box<Expr>) -> Expr = match name {
            "abs" => Expr::Abs,
            "exp" => Expr::Exp,
            "sign" => Expr::Sign,
            "sqrt" => Expr::Sqrt,
            _ => {
                let digits = name.strip_prefix('x').ok_or_else(unknown)?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(unknown());
                }
                let index: usize = digits.parse().map_err(|_| unknown())?;
                if index == 0 {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: "variables are numbered from x1".into(),
                    });
                }
                return Ok(Expr::Var(index - 1));
            }
        };
        self.expect('(')?;
        let arg = self.expr()?;
        self.expect(')')?;
        Ok(wrap(Box::new(arg)))
    }
}
