//! Model files in, trajectories and reports out.
//!
//! The model language:
//!
//! ```text
//! // comments start with `//` or `#`
//! var x, y;
//! param k = 2;             // constant expression, may use earlier params
//! interval 0 .. 5;
//! 2*y*x'' - x*y'' + 2*x*x'^2 - x' + sin(t) = 0;
//! y = k * x^2;             // read as y - k*x^2 = 0
//! ```
//!
//! Derivatives are written with primes or `diff(x, t, k)`. `t` is the
//! independent variable. Exponents are nonnegative integer literals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Func, JetVar, Point};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unknown identifier `{name}`")]
    UnknownIdentifier { line: usize, col: usize, name: String },
    #[error("{line}:{col}: exponent must be a nonnegative integer literal")]
    NonIntegerExponent { line: usize, col: usize },
    #[error("system is not square: {equations} equations, {variables} variables")]
    NonSquare { equations: usize, variables: usize },
    #[error("empty system")]
    EmptySystem,
    #[error("invalid JSON model: {0}")]
    Json(String),
}

/// A DAE `F(t, x, x', …) = 0` with named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeSystem {
    pub names: Vec<String>,
    pub equations: Vec<Expr>,
    /// Parameter values in declaration order. Equations already have them
    /// folded in as constants.
    pub parameters: Vec<(String, f64)>,
    pub t0: f64,
    pub t_end: f64,
}

impl DaeSystem {
    pub fn new(names: Vec<String>, equations: Vec<Expr>) -> Self {
        Self { names, equations, parameters: Vec::new(), t0: 0.0, t_end: 1.0 }
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Model text that [`parse_model`] reads back to identical equations.
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        if !self.names.is_empty() {
            let _ = writeln!(out, "var {};", self.names.join(", "));
        }
        for (name, value) in &self.parameters {
            let _ = writeln!(out, "param {name} = {value:?};");
        }
        let _ = writeln!(out, "interval {:?} .. {:?};", self.t0, self.t_end);
        for eq in &self.equations {
            let _ = writeln!(out, "{} = 0;", eq.to_dsl(&self.names));
        }
        out
    }
}

/// Ok iff the system is nonempty with as many equations as variables.
pub fn validate_square(sys: &DaeSystem) -> Result<(), ModelError> {
    if sys.equations.is_empty() && sys.names.is_empty() {
        return Err(ModelError::EmptySystem);
    }
    if sys.equations.len() != sys.names.len() {
        return Err(ModelError::NonSquare { equations: sys.equations.len(), variables: sys.names.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number { value: f64, integer: bool },
    Prime,
    Semi,
    Comma,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    DotDot,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ModelError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, msg: String| ModelError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let mut advance = |n: usize, i: &mut usize| {
            *i += n;
            col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i);
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let simple = match c {
            '\'' => Some(Tok::Prime),
            ';' => Some(Tok::Semi),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            advance(1, &mut i);
            out.push(Token { tok, line: l0, col: c0 });
            continue;
        }
        if c == '.' && chars.get(i + 1) == Some(&'.') {
            advance(2, &mut i);
            out.push(Token { tok: Tok::DotDot, line: l0, col: c0 });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut integer = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' && chars.get(i + 1) != Some(&'.') {
                integer = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integer = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let value: f64 = s.parse().map_err(|_| err(l0, c0, format!("bad number `{s}`")))?;
            out.push(Token { tok: Tok::Number { value, integer }, line: l0, col: c0 });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line: l0, col: c0 });
            continue;
        }
        return Err(err(l0, c0, format!("unexpected character `{c}`")));
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

const RESERVED: &[&str] = &["t", "sin", "cos", "tanh", "exp", "diff", "var", "param", "interval"];

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    vars: Vec<String>,
    params: Vec<(String, f64)>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, tok: &Token, msg: impl Into<String>) -> ModelError {
        ModelError::Syntax { line: tok.line, col: tok.col, msg: msg.into() }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, ModelError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.syntax(&t, format!("expected {what}, found {}", describe(&t.tok))))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), ModelError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(self.syntax(&t, format!("expected {what}, found {}", describe(other)))),
        }
    }

    fn declare(&self, name: &str, tok: &Token) -> Result<(), ModelError> {
        if RESERVED.contains(&name) {
            return Err(self.syntax(tok, format!("`{name}` is reserved")));
        }
        if self.vars.iter().any(|v| v == name) || self.params.iter().any(|(p, _)| p == name) {
            return Err(self.syntax(tok, format!("`{name}` declared twice")));
        }
        Ok(())
    }

    fn constant(&mut self) -> Result<f64, ModelError> {
        let start = self.peek().clone();
        let e = self.expr()?;
        if e.has_jets() || e.at_time(0.0) != e {
            return Err(self.syntax(&start, "expected a constant expression"));
        }
        e.as_const().ok_or_else(|| self.syntax(&start, "expected a constant expression"))
    }

    fn expr(&mut self) -> Result<Expr, ModelError> {
        let mut acc = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    acc = Expr::sum([acc, self.term()?]);
                }
                Tok::Minus => {
                    self.next();
                    acc = Expr::difference(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ModelError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.next();
                    acc = Expr::product([acc, self.unary()?]);
                }
                Tok::Slash => {
                    let op = self.next();
                    let den = self.unary()?;
                    acc = Expr::quotient(acc, den).map_err(|_| self.syntax(&op, "division by literal zero"))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ModelError> {
        match self.peek().tok {
            Tok::Minus => {
                self.next();
                Ok(Expr::negate(self.unary()?))
            }
            Tok::Plus => {
                self.next();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ModelError> {
        let base = self.primary()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.next();
        let t = self.next();
        match t.tok {
            Tok::Number { value, integer: true } if value <= u32::MAX as f64 => Ok(Expr::pow(base, value as u32)),
            _ => Err(ModelError::NonIntegerExponent { line: t.line, col: t.col }),
        }
    }

    fn primes(&mut self) -> u32 {
        let mut k = 0;
        while self.peek().tok == Tok::Prime {
            self.next();
            k += 1;
        }
        k
    }

    fn primary(&mut self) -> Result<Expr, ModelError> {
        let t = self.next();
        match &t.tok {
            Tok::Number { value, .. } => Ok(Expr::constant(*value)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "t" {
                    if self.peek().tok == Tok::Prime {
                        return Err(self.syntax(self.peek(), "`t` cannot be differentiated"));
                    }
                    return Ok(Expr::time());
                }
                if name == "diff" {
                    return self.diff_call();
                }
                if let Some(f) = Func::from_name(name) {
                    self.expect(Tok::LParen, "`(`")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::apply(f, arg));
                }
                if let Some(j) = self.vars.iter().position(|v| v == name) {
                    let k = self.primes();
                    return Ok(Expr::jet(j, k));
                }
                if let Some((_, value)) = self.params.iter().find(|(p, _)| p == name) {
                    return Ok(Expr::constant(*value));
                }
                Err(ModelError::UnknownIdentifier { line: t.line, col: t.col, name: name.clone() })
            }
            other => Err(self.syntax(&t, format!("expected an expression, found {}", describe(other)))),
        }
    }

    fn diff_call(&mut self) -> Result<Expr, ModelError> {
        self.expect(Tok::LParen, "`(`")?;
        let (name, tok) = self.ident("a variable")?;
        let j = self
            .vars
            .iter()
            .position(|v| *v == name)
            .ok_or(ModelError::UnknownIdentifier { line: tok.line, col: tok.col, name: name.clone() })?;
        let extra = self.primes();
        self.expect(Tok::Comma, "`,`")?;
        let (tname, ttok) = self.ident("`t`")?;
        if tname != "t" {
            return Err(self.syntax(&ttok, "derivatives are taken with respect to `t`"));
        }
        self.expect(Tok::Comma, "`,`")?;
        let kt = self.next();
        let k = match kt.tok {
            Tok::Number { value, integer: true } if value <= u32::MAX as f64 => value as u32,
            _ => return Err(self.syntax(&kt, "derivative order must be a nonnegative integer")),
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr::jet(j, k + extra))
    }

    fn equation(&mut self) -> Result<Expr, ModelError> {
        let lhs = self.expr()?;
        self.expect(Tok::Eq, "`=`")?;
        let rhs = self.expr()?;
        self.expect(Tok::Semi, "`;`")?;
        Ok(Expr::difference(lhs, rhs))
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number { value, .. } => format!("`{value}`"),
        Tok::Prime => "`'`".into(),
        Tok::Semi => "`;`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Eq => "`=`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::DotDot => "`..`".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses the model language into a [`DaeSystem`].
pub fn parse_model(text: &str) -> Result<DaeSystem, ModelError> {
    let toks = lex(text)?;
    let mut p = Parser { toks: &toks, pos: 0, vars: Vec::new(), params: Vec::new() };
    let mut equations = Vec::new();
    let (mut t0, mut t_end) = (0.0, 1.0);
    loop {
        let head = p.peek().clone();
        match &head.tok {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "var" => {
                p.next();
                loop {
                    let (name, tok) = p.ident("a variable name")?;
                    p.declare(&name, &tok)?;
                    p.vars.push(name);
                    if p.peek().tok == Tok::Comma {
                        p.next();
                    } else {
                        break;
                    }
                }
                p.expect(Tok::Semi, "`;`")?;
            }
            Tok::Ident(kw) if kw == "param" => {
                p.next();
                let (name, tok) = p.ident("a parameter name")?;
                p.declare(&name, &tok)?;
                p.expect(Tok::Eq, "`=`")?;
                let value = p.constant()?;
                p.expect(Tok::Semi, "`;`")?;
                p.params.push((name, value));
            }
            Tok::Ident(kw) if kw == "interval" => {
                p.next();
                t0 = p.constant()?;
                p.expect(Tok::DotDot, "`..`")?;
                t_end = p.constant()?;
                p.expect(Tok::Semi, "`;`")?;
            }
            _ => equations.push(p.equation()?),
        }
    }
    Ok(DaeSystem { names: p.vars, equations, parameters: p.params, t0, t_end })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonModel {
    variables: Vec<String>,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    #[serde(default)]
    interval: Option<[f64; 2]>,
    equations: Vec<String>,
}

/// Parses the JSON form `{"variables", "parameters", "interval", "equations"}`.
/// Each equation string is either `lhs = rhs` or a bare expression meant `= 0`.
pub fn parse_json_model(text: &str) -> Result<DaeSystem, ModelError> {
    let m: JsonModel = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
    let mut src = String::new();
    if !m.variables.is_empty() {
        let _ = writeln!(src, "var {};", m.variables.join(", "));
    }
    for (name, value) in &m.parameters {
        let _ = writeln!(src, "param {name} = {value:?};");
    }
    if let Some([a, b]) = m.interval {
        let _ = writeln!(src, "interval {a:?} .. {b:?};");
    }
    for eq in &m.equations {
        let eq = eq.trim().trim_end_matches(';');
        if eq.contains('=') {
            let _ = writeln!(src, "{eq};");
        } else {
            let _ = writeln!(src, "{eq} = 0;");
        }
    }
    parse_model(&src)
}

/// Picks the JSON reader when the text starts with `{`.
pub fn parse_any(text: &str) -> Result<DaeSystem, ModelError> {
    if text.trim_start().starts_with('{') {
        parse_json_model(text)
    } else {
        parse_model(text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    #[serde(default)]
    t: Option<f64>,
    values: BTreeMap<String, Vec<f64>>,
}

/// Reads an initial guess `{"t": 0, "values": {"x": [x, x', ...]}}`. Jets
/// that are not listed stay unassigned; `t` defaults to the model's `t0`.
pub fn parse_initial_point(text: &str, sys: &DaeSystem) -> Result<Point, ModelError> {
    let f: InitialFile = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
    let mut p = Point::new(f.t.unwrap_or(sys.t0));
    for (name, jets) in &f.values {
        let j = sys
            .var_index(name)
            .ok_or_else(|| ModelError::Json(format!("unknown variable `{name}` in initial point")))?;
        for (k, &v) in jets.iter().enumerate() {
            p.set(JetVar::new(j, k as u32), v);
        }
    }
    Ok(p)
}

/// Sampled solution of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// One row per time, ordered like `names`.
    pub states: Vec<Vec<f64>>,
    pub component: usize,
}

impl Trajectory {
    pub fn new(names: Vec<String>, component: usize) -> Self {
        Self { names, times: Vec::new(), states: Vec::new(), component }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.names.len());
        self.times.push(t);
        self.states.push(row);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, var: usize) -> Vec<f64> {
        self.states.iter().map(|r| r[var]).collect()
    }
}

/// `printf("%.15g")`-style formatting.
pub fn format_g15(x: f64) -> String {
    const P: i32 = 15;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..P).contains(&exp) {
        let decimals = (P - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn csv_header(names: &[String]) -> String {
    let mut h = String::from("t");
    for n in names {
        h.push(',');
        h.push_str(n);
    }
    h.push_str(",component\n");
    h
}

fn csv_rows(out: &mut String, traj: &Trajectory) {
    for (t, row) in traj.times.iter().zip(&traj.states) {
        out.push_str(&format_g15(*t));
        for v in row {
            out.push(',');
            out.push_str(&format_g15(*v));
        }
        let _ = writeln!(out, ",{}", traj.component);
    }
}

pub fn emit_trajectory_csv(traj: &Trajectory) -> String {
    let mut out = csv_header(&traj.names);
    csv_rows(&mut out, traj);
    out
}

/// All components in one table, rows grouped by component.
pub fn emit_trajectories_csv(names: &[String], trajs: &[Trajectory]) -> String {
    let mut out = csv_header(names);
    for traj in trajs {
        csv_rows(&mut out, traj);
    }
    out
}

/// One IRE pass as it appears in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub r: usize,
    pub delta_before: i64,
    pub delta_after: i64,
    pub used_shortcut_duals: bool,
    pub redundancy_suspected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub t: f64,
    pub point: BTreeMap<String, f64>,
    /// `‖constraints(p)‖∞`.
    pub residual: f64,
    /// Smallest singular value of the constraint Jacobian.
    pub min_singular: f64,
    /// Rank of the top-block Jacobian at the point, out of `size`.
    pub rank: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub component: usize,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub iterations: Vec<IterationRecord>,
    pub xi: Vec<f64>,
    pub final_delta: Option<i64>,
    /// Final system in model syntax, one equation per entry.
    pub regularized_system: Vec<String>,
    pub samples: usize,
}

/// Everything a run produced, serialized as the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub variables: Vec<String>,
    /// `null` entries stand for −∞.
    pub signature_matrix: Vec<Vec<Option<u32>>>,
    pub c: Vec<u32>,
    pub d: Vec<u32>,
    pub delta: i64,
    pub seed: u64,
    pub witness: Vec<WitnessRecord>,
    pub components: Vec<ComponentRecord>,
    pub status: String,
}

impl Report {
    pub fn new(variables: Vec<String>) -> Self {
        Self {
            schema: 1,
            variables,
            signature_matrix: Vec::new(),
            c: Vec::new(),
            d: Vec::new(),
            delta: 0,
            seed: 0,
            witness: Vec::new(),
            components: Vec::new(),
            status: "ok".into(),
        }
    }
}

pub fn emit_report_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}
