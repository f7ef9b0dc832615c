//! Expression language for user-supplied Lagrangians and weights.
//!
//! Grammar (infix, usual precedence, `^` right-associative and binding
//! tighter than unary minus):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | variable | function '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x0..x9` (base) and `v0..v9` (fiber); which indices are
//! meaningful is checked against the model dimension at evaluation time.
//! Functions: exp, log, sqrt, sin, cos, cosh, sinh, atan2. Exponents that
//! are literal integers evaluate through integer powers (valid for any
//! base); anything else requires a positive base.
//!
//! Expressions are assumed C^3-smooth in x and C^4-smooth in v on the
//! region where the model evaluates them (the chart times the causal cone);
//! domain failures surface as errors rather than NaN.


use thiserror::Error;

use crate::jet::{DiffScalar, DomainError};

/// Parse failure with the byte offset of the offending token.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

/// Evaluation failure of a parsed expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable {name} out of range for dimension {dim}")]
    VariableOutOfRange { name: String, dim: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Cosh,
    Sinh,
    Atan2,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
            Func::Atan2 => "atan2",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "cosh" => Func::Cosh,
            "sinh" => Func::Sinh,
            "atan2" => Func::Atan2,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// x{index}
    Base(usize),
    /// v{index}
    Fiber(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// A parsed scalar field on the tangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelExpression {
    source: String,
    ast: Expr,
    max_base_index: Option<usize>,
    max_fiber_index: Option<usize>,
}

impl ModelExpression {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    /// Largest base-coordinate index referenced, if any.
    pub fn max_base_index(&self) -> Option<usize> {
        self.max_base_index
    }

    pub fn max_fiber_index(&self) -> Option<usize> {
        self.max_fiber_index
    }

    /// Canonical text form; parsing it reproduces the same tree.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        print_expr(&self.ast, 0, &mut out);
        out
    }

    pub fn eval<S: DiffScalar>(&self, x: &[S], v: &[S]) -> Result<S, EvalError> {
        assert!(!x.is_empty(), "evaluation needs at least one coordinate");
        eval_expr(&self.ast, x, v)
    }
}

fn max_indices(e: &Expr, base: &mut Option<usize>, fiber: &mut Option<usize>) {
    match e {
        Expr::Num(_) => {}
        Expr::Base(i) => *base = Some(base.map_or(*i, |b| b.max(*i))),
        Expr::Fiber(i) => *fiber = Some(fiber.map_or(*i, |b| b.max(*i))),
        Expr::Neg(a) => max_indices(a, base, fiber),
        Expr::Add(a, b)
        | Expr::Sub(a, b)
        | Expr::Mul(a, b)
        | Expr::Div(a, b)
        | Expr::Pow(a, b) => {
            max_indices(a, base, fiber);
            max_indices(b, base, fiber);
        }
        Expr::Call(_, args) => {
            for a in args {
                max_indices(a, base, fiber);
            }
        }
    }
}

fn eval_expr<S: DiffScalar>(e: &Expr, x: &[S], v: &[S]) -> Result<S, EvalError> {
    let proto = &x[0];
    Ok(match e {
        Expr::Num(c) => proto.lift_constant(*c),
        Expr::Base(i) => x
            .get(*i)
            .cloned()
            .ok_or(EvalError::VariableOutOfRange {
                name: format!("x{i}"),
                dim: x.len(),
            })?,
        Expr::Fiber(i) => v
            .get(*i)
            .cloned()
            .ok_or(EvalError::VariableOutOfRange {
                name: format!("v{i}"),
                dim: v.len(),
            })?,
        Expr::Neg(a) => -eval_expr(a, x, v)?,
        Expr::Add(a, b) => eval_expr(a, x, v)? + eval_expr(b, x, v)?,
        Expr::Sub(a, b) => eval_expr(a, x, v)? - eval_expr(b, x, v)?,
        Expr::Mul(a, b) => eval_expr(a, x, v)? * eval_expr(b, x, v)?,
        Expr::Div(a, b) => {
            let num = eval_expr(a, x, v)?;
            let den = eval_expr(b, x, v)?;
            num * den.recip().map_err(EvalError::Domain)?
        }
        Expr::Pow(a, b) => {
            let base = eval_expr(a, x, v)?;
            match b.as_ref() {
                Expr::Num(p) if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 => {
                    base.powi(*p as i32).map_err(EvalError::Domain)?
                }
                Expr::Num(p) => base.powf(*p).map_err(EvalError::Domain)?,
                Expr::Neg(inner) => {
                    if let Expr::Num(p) = inner.as_ref() {
                        return Ok(match () {
                            _ if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 => {
                                base.powi(-(*p as i32)).map_err(EvalError::Domain)?
                            }
                            _ => base.powf(-p).map_err(EvalError::Domain)?,
                        });
                    }
                    let expo = eval_expr(b, x, v)?;
                    (base.ln().map_err(EvalError::Domain)? * expo).exp()
                }
                _ => {
                    let expo = eval_expr(b, x, v)?;
                    (base.ln().map_err(EvalError::Domain)? * expo).exp()
                }
            }
        }
        Expr::Call(f, args) => match f {
            Func::Exp => eval_expr(&args[0], x, v)?.exp(),
            Func::Log => eval_expr(&args[0], x, v)?.ln().map_err(EvalError::Domain)?,
            Func::Sqrt => eval_expr(&args[0], x, v)?
                .sqrt()
                .map_err(EvalError::Domain)?,
            Func::Sin => eval_expr(&args[0], x, v)?.sin(),
            Func::Cos => eval_expr(&args[0], x, v)?.cos(),
            Func::Cosh => eval_expr(&args[0], x, v)?.cosh(),
            Func::Sinh => eval_expr(&args[0], x, v)?.sinh(),
            Func::Atan2 => {
                let y = eval_expr(&args[0], x, v)?;
                let xx = eval_expr(&args[1], x, v)?;
                y.atan2(&xx).map_err(EvalError::Domain)?
            }
        },
    })
}

// Precedence levels for printing: 0 add/sub, 1 mul/div, 2 unary minus, 3 pow, 4 atoms.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 0,
        Expr::Mul(..) | Expr::Div(..) => 1,
        Expr::Neg(..) => 2,
        Expr::Pow(..) => 3,
        Expr::Num(_) | Expr::Base(_) | Expr::Fiber(_) | Expr::Call(..) => 4,
    }
}

fn print_expr(e: &Expr, parent_prec: u8, out: &mut String) {
    let prec = precedence(e);
    let needs_parens = prec < parent_prec;
    if needs_parens {
        out.push('(');
    }
    match e {
        Expr::Num(c) => {
            // Shortest round-tripping float form; non-negative by parser
            // construction, programmatic negatives print through Neg rules.
            if *c < 0.0 || c.is_sign_negative() {
                out.push_str(&format!("(-{})", -c));
            } else {
                out.push_str(&format!("{c}"));
            }
        }
        Expr::Base(i) => out.push_str(&format!("x{i}")),
        Expr::Fiber(i) => out.push_str(&format!("v{i}")),
        Expr::Neg(a) => {
            out.push('-');
            print_expr(a, 3, out);
        }
        Expr::Add(a, b) => {
            print_expr(a, 0, out);
            out.push_str(" + ");
            print_expr(b, 1, out);
        }
        Expr::Sub(a, b) => {
            print_expr(a, 0, out);
            out.push_str(" - ");
            print_expr(b, 1, out);
        }
        Expr::Mul(a, b) => {
            print_expr(a, 1, out);
            out.push_str(" * ");
            print_expr(b, 2, out);
        }
        Expr::Div(a, b) => {
            print_expr(a, 1, out);
            out.push_str(" / ");
            print_expr(b, 2, out);
        }
        Expr::Pow(a, b) => {
            print_expr(a, 4, out);
            out.push_str(" ^ ");
            print_expr(b, 3, out);
        }
        Expr::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                print_expr(a, 0, out);
            }
            out.push(')');
        }
    }
    if needs_parens {
        out.push(')');
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next_token(&mut self) -> Result<Option<(Token, usize)>, ParseError> {
        self.skip_ws();
        if self.pos >= self.bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let b = self.bytes[self.pos];
        let tok = match b {
            b'+' => {
                self.pos += 1;
                Token::Plus
            }
            b'-' => {
                self.pos += 1;
                Token::Minus
            }
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b'/' => {
                self.pos += 1;
                Token::Slash
            }
            b'^' => {
                self.pos += 1;
                Token::Caret
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.bytes.len()
                    && (self.bytes[end].is_ascii_digit() || self.bytes[end] == b'.')
                {
                    end += 1;
                }
                if end < self.bytes.len() && (self.bytes[end] == b'e' || self.bytes[end] == b'E') {
                    let mut exp_end = end + 1;
                    if exp_end < self.bytes.len()
                        && (self.bytes[exp_end] == b'+' || self.bytes[exp_end] == b'-')
                    {
                        exp_end += 1;
                    }
                    if exp_end < self.bytes.len() && self.bytes[exp_end].is_ascii_digit() {
                        while exp_end < self.bytes.len() && self.bytes[exp_end].is_ascii_digit() {
                            exp_end += 1;
                        }
                        end = exp_end;
                    }
                }
                let text = &self.src[self.pos..end];
                let value: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                self.pos = end;
                Token::Num(value)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = self.pos;
                while end < self.bytes.len()
                    && (self.bytes[end].is_ascii_alphanumeric() || self.bytes[end] == b'_')
                {
                    end += 1;
                }
                let text = self.src[self.pos..end].to_string();
                self.pos = end;
                Token::Ident(text)
            }
            other => {
                return Err(ParseError {
                    offset: start,
                    message: format!("unexpected character `{}`", other as char),
                });
            }
        };
        Ok(Some((tok, start)))
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    cursor: usize,
    end_offset: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.cursor)
    }

    fn advance(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.cursor).cloned();
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn offset(&self) -> usize {
        self.peek().map(|(_, o)| *o).unwrap_or(self.end_offset)
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<(), ParseError> {
        match self.advance() {
            Some((tok, _)) if &tok == want => Ok(()),
            Some((tok, offset)) => Err(ParseError {
                offset,
                message: format!("expected {what}, found {tok:?}"),
            }),
            None => Err(ParseError {
                offset: self.end_offset,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_term()?;
        while let Some((tok, _)) = self.peek() {
            match tok {
                Token::Plus => {
                    self.advance();
                    let rhs = self.parse_term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Token::Minus => {
                    self.advance();
                    let rhs = self.parse_term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        while let Some((tok, _)) = self.peek() {
            match tok {
                Token::Star => {
                    self.advance();
                    let rhs = self.parse_unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Token::Slash => {
                    self.advance();
                    let rhs = self.parse_unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        if let Some((Token::Minus, _)) = self.peek() {
            self.advance();
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr, ParseError> {
        let base = self.parse_atom()?;
        if let Some((Token::Caret, _)) = self.peek() {
            self.advance();
            // Right-associative; exponent may carry its own unary minus.
            let expo = self.parse_unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(expo)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, ParseError> {
        match self.advance() {
            Some((Token::Num(c), _)) => Ok(Expr::Num(c)),
            Some((Token::LParen, _)) => {
                let inner = self.parse_expr()?;
                self.expect(&Token::RParen, "closing `)`")?;
                Ok(inner)
            }
            Some((Token::Ident(name), offset)) => self.finish_ident(name, offset),
            Some((tok, offset)) => Err(ParseError {
                offset,
                message: format!("expected a value, found {tok:?}"),
            }),
            None => Err(ParseError {
                offset: self.end_offset,
                message: "expected a value, found end of input".into(),
            }),
        }
    }

    fn finish_ident(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        if let Some(var) = parse_variable(&name) {
            return Ok(var);
        }
        if let Some(func) = Func::from_name(&name) {
            self.expect(&Token::LParen, "`(` after function name")?;
            let mut args = vec![self.parse_expr()?];
            while let Some((Token::Comma, _)) = self.peek() {
                self.advance();
                args.push(self.parse_expr()?);
            }
            self.expect(&Token::RParen, "closing `)`")?;
            if args.len() != func.arity() {
                return Err(ParseError {
                    offset,
                    message: format!(
                        "{} takes {} argument(s), found {}",
                        func.name(),
                        func.arity(),
                        args.len()
                    ),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        Err(ParseError {
            offset,
            message: format!("unknown symbol `{name}`"),
        })
    }
}

fn parse_variable(name: &str) -> Option<Expr> {
    let mut chars = name.chars();
    let head = chars.next()?;
    let rest: String = chars.collect();
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.len() > 2 {
        return None;
    }
    let index: usize = rest.parse().ok()?;
    match head {
        'x' => Some(Expr::Base(index)),
        'v' => Some(Expr::Fiber(index)),
        _ => None,
    }
}

/// Parse an expression source string into a [`ModelExpression`].
pub fn parse_expression(source: &str) -> Result<ModelExpression, ParseError> {
    let mut lexer = Lexer::new(source);
    let mut tokens = Vec::new();
    while let Some(t) = lexer.next_token()? {
        tokens.push(t);
    }
    let mut parser = Parser {
        tokens,
        cursor: 0,
        end_offset: source.len(),
    };
    let ast = parser.parse_expr()?;
    if parser.cursor != parser.tokens.len() {
        return Err(ParseError {
            offset: parser.offset(),
            message: "trailing input after expression".into(),
        });
    }
    let mut max_base = None;
    let mut max_fiber = None;
    max_indices(&ast, &mut max_base, &mut max_fiber);
    Ok(ModelExpression {
        source: source.to_string(),
        ast,
        max_base_index: max_base,
        max_fiber_index: max_fiber,
    })
}
