//! Text front end for operator expressions.
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = unary { ("*" | "/") unary | unary } ;      (* adjacency is a product *)
//! unary    = ("-" | "+") unary | power ;
//! power    = postfix [ "^" unary ] ;                    (* numbers only *)
//! postfix  = primary { "(" index { "," index } ")" } ;  (* indexing a generic operator *)
//! primary  = number | imaginary | "(" expr ")" | name | call ;
//! call     = ("sum" | "prod") "(" ident "=" expr ".." expr "," expr ")"
//!          | ("dag" | "exp" | "controlled" | "Dissipator" | "Gate" | "sqrt") "(" expr ")"
//!          | "tensor" "(" expr { "," expr } ")"
//!          | "div" "(" expr "," expr ")"
//!          | definition "(" expr { "," expr } ")" ;
//! imaginary = number "i" | "im" ;
//! ```
//!
//! A number immediately followed by `i` is imaginary (`2i`), so affine site
//! indices must spell out the product: `X(2*i-1)`. Sums and products over a
//! range are expanded while parsing.

use std::collections::HashMap;

use num_complex::Complex64 as C64;

use super::expr::{ExprKind, OpExpr};
use super::site::Registry;
use crate::error::{Error, Result};

/// A named expression, optionally taking numeric parameters: `Rxx(t) = ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Definition {
    pub params: Vec<String>,
    pub body: String,
}

impl Definition {
    pub fn new(body: impl Into<String>) -> Self {
        Self {
            params: Vec::new(),
            body: body.into(),
        }
    }
}

/// Names visible to the parser.
#[derive(Clone, Debug, Default)]
pub struct ParseContext {
    pub registry: Registry,
    pub params: HashMap<String, C64>,
    pub definitions: HashMap<String, Definition>,
    /// Number of sites, when known, for range checks on indices.
    pub n_sites: Option<usize>,
}

impl ParseContext {
    pub fn new(registry: Registry) -> Self {
        Self {
            registry,
            ..Self::default()
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), C64::new(value, 0.0));
        self
    }

    pub fn with_sites(mut self, n: usize) -> Self {
        self.n_sites = Some(n);
        self
    }

    /// Register a definition. `head` is either a bare name or `name(p1, p2)`.
    pub fn define(&mut self, head: &str, body: &str) -> Result<()> {
        let head = head.trim();
        let (name, params) = match head.find('(') {
            Some(p) => {
                let inner = head[p + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::invalid(format!("malformed definition head `{head}`")))?;
                let params: Vec<String> = inner
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                (head[..p].trim().to_string(), params)
            }
            None => (head.to_string(), Vec::new()),
        };
        if !is_identifier(&name) || params.iter().any(|p| !is_identifier(p)) {
            return Err(Error::invalid(format!("malformed definition head `{head}`")));
        }
        if RESERVED.contains(&name.as_str()) || self.registry.arity(&name).is_some() {
            return Err(Error::invalid(format!("`{name}` is a reserved or operator name")));
        }
        self.definitions.insert(
            name,
            Definition {
                params,
                body: body.to_string(),
            },
        );
        Ok(())
    }
}

const RESERVED: [&str; 12] = [
    "sum",
    "prod",
    "dag",
    "exp",
    "controlled",
    "Dissipator",
    "Gate",
    "tensor",
    "sqrt",
    "div",
    "im",
    "i_",
];

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse an expression.
pub fn parse(text: &str, ctx: &ParseContext) -> Result<OpExpr> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        ctx,
        scopes: Vec::new(),
        depth: 0,
    };
    let e = parser.expr()?;
    parser.expect(&Tok::Eof)?;
    Ok(e)
}

/// Parse and evaluate an expression that must be a plain number.
pub fn parse_scalar(text: &str, ctx: &ParseContext) -> Result<C64> {
    match parse(text, ctx)? {
        OpExpr::Scalar(c) => Ok(c),
        _ => Err(Error::invalid(format!("`{text}` is not a number"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Imag(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Equals,
    DotDot,
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        let (tl, tc) = (line, col);
        let advance = |n: usize, col: &mut usize| *col += n;
        if c == '\n' {
            line += 1;
            col = 1;
            k += 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut col);
            k += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                line: tl,
                column: tc,
            });
            advance(1, &mut col);
            k += 1;
            continue;
        }
        if c == '.' && chars.get(k + 1) == Some(&'.') {
            out.push(Token {
                tok: Tok::DotDot,
                line: tl,
                column: tc,
            });
            advance(2, &mut col);
            k += 2;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(k + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = k;
            while k < chars.len() && chars[k].is_ascii_digit() {
                k += 1;
            }
            if k < chars.len() && chars[k] == '.' && chars.get(k + 1) != Some(&'.') {
                k += 1;
                while k < chars.len() && chars[k].is_ascii_digit() {
                    k += 1;
                }
            }
            if k < chars.len() && (chars[k] == 'e' || chars[k] == 'E') {
                let mut j = k + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    k = j;
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                }
            }
            let literal: String = chars[start..k].iter().collect();
            let value: f64 = literal.parse().map_err(|_| Error::Syntax {
                line: tl,
                column: tc,
                message: format!("invalid number `{literal}`"),
            })?;
            let imaginary = k < chars.len()
                && chars[k] == 'i'
                && !chars.get(k + 1).is_some_and(|n| n.is_ascii_alphanumeric() || *n == '_');
            if imaginary {
                k += 1;
            }
            advance(k - start, &mut col);
            out.push(Token {
                tok: if imaginary { Tok::Imag(value) } else { Tok::Num(value) },
                line: tl,
                column: tc,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_alphanumeric() || chars[k] == '_') {
                k += 1;
            }
            advance(k - start, &mut col);
            out.push(Token {
                tok: Tok::Ident(chars[start..k].iter().collect()),
                line: tl,
                column: tc,
            });
            continue;
        }
        return Err(Error::Syntax {
            line: tl,
            column: tc,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    ctx: &'a ParseContext,
    scopes: Vec<HashMap<String, C64>>,
    depth: usize,
}

const MAX_DEFINITION_DEPTH: usize = 64;

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn next(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, pos: usize, message: impl Into<String>) -> Error {
        let t = &self.tokens[pos.min(self.tokens.len() - 1)];
        Error::Syntax {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        self.error_at(self.pos, message)
    }

    /// Attach the current position to semantic errors.
    fn located<T>(&self, pos: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::InvalidArgument(m) | Error::DimensionMismatch(m) => self.error_at(pos, m),
            other => other,
        })
    }

    fn expect(&mut self, tok: &Tok) -> Result<()> {
        if self.peek() == tok {
            self.next();
            Ok(())
        } else {
            let msg = match tok {
                Tok::Eof => format!("unexpected {}", describe(self.peek())),
                _ => format!("expected {}, found {}", describe(tok), describe(self.peek())),
            };
            Err(self.error(msg))
        }
    }

    fn expr(&mut self) -> Result<OpExpr> {
        let mut acc = self.term()?;
        loop {
            let pos = self.pos;
            match self.peek() {
                Tok::Plus => {
                    self.next();
                    let rhs = self.term()?;
                    acc = self.located(pos, OpExpr::add(acc, rhs))?;
                }
                Tok::Minus => {
                    self.next();
                    let rhs = self.term()?;
                    let neg = OpExpr::scale(C64::new(-1.0, 0.0), rhs);
                    acc = self.located(pos, OpExpr::add(acc, neg))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn starts_primary(&self) -> bool {
        matches!(self.peek(), Tok::Num(_) | Tok::Imag(_) | Tok::Ident(_) | Tok::LParen)
    }

    fn term(&mut self) -> Result<OpExpr> {
        let mut acc = self.unary()?;
        loop {
            let pos = self.pos;
            match self.peek() {
                Tok::Star => {
                    self.next();
                    let rhs = self.unary()?;
                    acc = self.located(pos, OpExpr::mul(acc, rhs))?;
                }
                Tok::Slash => {
                    self.next();
                    let rhs = self.unary()?;
                    let d = match rhs {
                        OpExpr::Scalar(d) => d,
                        _ => return Err(self.error_at(pos, "can only divide by a number")),
                    };
                    if d == C64::new(0.0, 0.0) {
                        return Err(self.error_at(pos, "division by zero"));
                    }
                    acc = OpExpr::scale(d.inv(), acc);
                }
                _ if self.starts_primary() => {
                    let rhs = self.unary()?;
                    acc = self.located(pos, OpExpr::mul(acc, rhs))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<OpExpr> {
        match self.peek() {
            Tok::Minus => {
                self.next();
                Ok(OpExpr::scale(C64::new(-1.0, 0.0), self.unary()?))
            }
            Tok::Plus => {
                self.next();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<OpExpr> {
        let base = self.postfix()?;
        if self.peek() != &Tok::Caret {
            return Ok(base);
        }
        let pos = self.pos;
        self.next();
        let exponent = self.unary()?;
        match (base, exponent) {
            (OpExpr::Scalar(b), OpExpr::Scalar(e)) => Ok(OpExpr::Scalar(if e.im == 0.0 && e.re.fract() == 0.0 {
                b.powi(e.re as i32)
            } else {
                b.powc(e)
            })),
            _ => Err(self.error_at(pos, "`^` is only defined for numbers")),
        }
    }

    fn postfix(&mut self) -> Result<OpExpr> {
        let mut e = self.primary()?;
        while self.peek() == &Tok::LParen {
            let pos = self.pos;
            match self.located(pos, e.kind())? {
                ExprKind::Generic(k) => {
                    self.next();
                    let sites = self.index_list()?;
                    if sites.len() != k {
                        return Err(self.error_at(
                            pos,
                            format!("operator acts on {k} site(s) but {} index(es) given", sites.len()),
                        ));
                    }
                    let mut sorted = sites.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != sites.len() {
                        return Err(self.error_at(pos, format!("repeated site in index list {sites:?}")));
                    }
                    e = OpExpr::Indexed(Box::new(e), sites);
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn index_list(&mut self) -> Result<Vec<usize>> {
        let mut sites = Vec::new();
        loop {
            let pos = self.pos;
            let v = self.scalar_expr()?;
            sites.push(self.site_index(pos, v)?);
            match self.next() {
                Tok::Comma => continue,
                Tok::RParen => return Ok(sites),
                t => return Err(self.error_at(self.pos - 1, format!("expected `,` or `)`, found {}", describe(&t)))),
            }
        }
    }

    fn site_index(&self, pos: usize, v: C64) -> Result<usize> {
        let integral = v.im == 0.0 && v.re.fract() == 0.0 && v.re >= 1.0;
        if !integral {
            return Err(self.error_at(pos, format!("site index must be a positive integer, got {v}")));
        }
        let s = v.re as usize;
        if let Some(n) = self.ctx.n_sites {
            if s > n {
                return Err(self.error_at(pos, format!("site index {s} out of range 1..{n}")));
            }
        }
        Ok(s)
    }

    fn scalar_expr(&mut self) -> Result<C64> {
        let pos = self.pos;
        match self.expr()? {
            OpExpr::Scalar(c) => Ok(c),
            _ => Err(self.error_at(pos, "expected a number")),
        }
    }

    fn integer_expr(&mut self) -> Result<i64> {
        let pos = self.pos;
        let v = self.scalar_expr()?;
        if v.im != 0.0 || v.re.fract() != 0.0 {
            return Err(self.error_at(pos, format!("expected an integer, got {v}")));
        }
        Ok(v.re as i64)
    }

    fn lookup_variable(&self, name: &str) -> Option<C64> {
        for scope in self.scopes.iter().rev() {
            if let Some(v) = scope.get(name) {
                return Some(*v);
            }
        }
        self.ctx.params.get(name).copied()
    }

    fn primary(&mut self) -> Result<OpExpr> {
        let pos = self.pos;
        match self.next() {
            Tok::Num(v) => Ok(OpExpr::Scalar(C64::new(v, 0.0))),
            Tok::Imag(v) => Ok(OpExpr::Scalar(C64::new(0.0, v))),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(pos, name),
            t => Err(self.error_at(pos, format!("unexpected {}", describe(&t)))),
        }
    }

    fn identifier(&mut self, pos: usize, name: String) -> Result<OpExpr> {
        match name.as_str() {
            "sum" | "prod" => return self.range_op(pos, name == "sum"),
            "dag" | "exp" | "controlled" | "Dissipator" | "Gate" | "sqrt" => {
                self.expect(&Tok::LParen)?;
                let arg = self.expr()?;
                self.expect(&Tok::RParen)?;
                return self.apply_function(pos, &name, arg);
            }
            "tensor" => {
                self.expect(&Tok::LParen)?;
                let mut args = vec![self.expr()?];
                while self.peek() == &Tok::Comma {
                    self.next();
                    args.push(self.expr()?);
                }
                self.expect(&Tok::RParen)?;
                let e = OpExpr::TensorProd(args);
                self.located(pos, e.kind())?;
                return Ok(e);
            }
            "div" => {
                self.expect(&Tok::LParen)?;
                let a = self.integer_expr()?;
                self.expect(&Tok::Comma)?;
                let b = self.integer_expr()?;
                self.expect(&Tok::RParen)?;
                if b == 0 {
                    return Err(self.error_at(pos, "division by zero in div()"));
                }
                return Ok(OpExpr::Scalar(C64::new(a.div_euclid(b) as f64, 0.0)));
            }
            "im" => return Ok(OpExpr::Scalar(C64::new(0.0, 1.0))),
            _ => {}
        }
        if let Some(v) = self.lookup_variable(&name) {
            return Ok(OpExpr::Scalar(v));
        }
        if let Some(def) = self.ctx.definitions.get(&name) {
            return self.expand_definition(pos, &name, def.clone());
        }
        if let Some(k) = self.ctx.registry.arity(&name) {
            return Ok(OpExpr::named(&name, k));
        }
        let t = &self.tokens[pos];
        Err(Error::UnknownOperator(format!(
            "`{name}` at line {}, column {}",
            t.line, t.column
        )))
    }

    fn apply_function(&self, pos: usize, name: &str, arg: OpExpr) -> Result<OpExpr> {
        if let OpExpr::Scalar(c) = arg {
            return match name {
                "sqrt" => Ok(OpExpr::Scalar(c.sqrt())),
                "exp" => Ok(OpExpr::Scalar(c.exp())),
                "dag" => Ok(OpExpr::Scalar(c.conj())),
                _ => Err(self.error_at(pos, format!("{name}() needs an operator argument"))),
            };
        }
        let e = match name {
            "dag" => self.located(pos, arg.dag())?,
            "exp" => OpExpr::Exp(Box::new(arg)),
            "controlled" => OpExpr::Controlled(Box::new(arg)),
            "Dissipator" => OpExpr::Dissipator(Box::new(arg)),
            "Gate" => OpExpr::Gate(Box::new(arg)),
            _ => return Err(self.error_at(pos, format!("{name}() needs a numeric argument"))),
        };
        self.located(pos, e.kind())?;
        Ok(e)
    }

    fn range_op(&mut self, pos: usize, is_sum: bool) -> Result<OpExpr> {
        self.expect(&Tok::LParen)?;
        let var = match self.next() {
            Tok::Ident(v) => v,
            t => {
                return Err(self.error_at(
                    self.pos - 1,
                    format!("expected a loop variable, found {}", describe(&t)),
                ))
            }
        };
        self.expect(&Tok::Equals)?;
        let lo = self.integer_expr()?;
        self.expect(&Tok::DotDot)?;
        let hi = self.integer_expr()?;
        self.expect(&Tok::Comma)?;
        let body_start = self.pos;
        let mut acc: Option<OpExpr> = None;
        if lo > hi {
            self.skip_to_close()?;
        }
        for v in lo..=hi {
            self.pos = body_start;
            let mut scope = HashMap::new();
            scope.insert(var.clone(), C64::new(v as f64, 0.0));
            self.scopes.push(scope);
            let item = self.expr();
            self.scopes.pop();
            let item = item?;
            acc = Some(match acc {
                None => item,
                Some(a) if is_sum => self.located(pos, OpExpr::add(a, item))?,
                Some(a) => self.located(pos, OpExpr::mul(a, item))?,
            });
        }
        self.expect(&Tok::RParen)?;
        Ok(acc.unwrap_or(OpExpr::Scalar(C64::new(if is_sum { 0.0 } else { 1.0 }, 0.0))))
    }

    /// Skip tokens up to (not including) the `)` closing the current call.
    fn skip_to_close(&mut self) -> Result<()> {
        let mut depth = 0usize;
        loop {
            match self.peek() {
                Tok::LParen => depth += 1,
                Tok::RParen if depth == 0 => return Ok(()),
                Tok::RParen => depth -= 1,
                Tok::Eof => return Err(self.error("unterminated range expression")),
                _ => {}
            }
            self.next();
        }
    }

    fn expand_definition(&mut self, pos: usize, name: &str, def: Definition) -> Result<OpExpr> {
        let mut scope = HashMap::new();
        if !def.params.is_empty() {
            self.expect(&Tok::LParen)?;
            let mut args = vec![self.scalar_expr()?];
            while self.peek() == &Tok::Comma {
                self.next();
                args.push(self.scalar_expr()?);
            }
            self.expect(&Tok::RParen)?;
            if args.len() != def.params.len() {
                return Err(self.error_at(
                    pos,
                    format!("`{name}` takes {} argument(s), {} given", def.params.len(), args.len()),
                ));
            }
            scope.extend(def.params.iter().cloned().zip(args));
        }
        if self.depth >= MAX_DEFINITION_DEPTH {
            return Err(self.error_at(pos, format!("definition `{name}` is recursive")));
        }
        let tokens = lex(&def.body).map_err(|e| prefix_error(name, e))?;
        let mut sub = Parser {
            tokens,
            pos: 0,
            ctx: self.ctx,
            scopes: vec![scope],
            depth: self.depth + 1,
        };
        let r = sub.expr().and_then(|e| sub.expect(&Tok::Eof).map(|_| e));
        r.map_err(|e| prefix_error(name, e))
    }
}

fn prefix_error(name: &str, e: Error) -> Error {
    match e {
        Error::Syntax { line, column, message } => Error::Syntax {
            line,
            column,
            message: format!("in definition `{name}`: {message}"),
        },
        other => other,
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Imag(v) => format!("imaginary number {v}i"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::Equals => "`=`".into(),
        Tok::DotDot => "`..`".into(),
        Tok::Eof => "end of input".into(),
    }
}
