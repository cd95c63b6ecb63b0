//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! sum     := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-u^2`
//! is `-(u^2)`. Exponents must fold to an integer constant. There is no
//! implicit multiplication.

use num_bigint::BigInt;
use thiserror::Error;

use super::{rational_is_integer, Expr, Node, Rational};

const FUNCTIONS: [&str; 4] = ["exp", "ln", "sin", "cos"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at position {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset into the input.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character '{0}'")]
    UnexpectedChar(char),
    #[error("unexpected token {0}")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("malformed number '{0}'")]
    BadNumber(String),
    #[error("exponent must be an integer constant")]
    NonIntegerExponent,
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("function '{0}' must be called with parentheses")]
    MissingCall(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Rational, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(_, s) => format!("number '{s}'"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
        }
    }
}

fn err(kind: ParseErrorKind, position: usize) -> ParseError {
    ParseError { kind, position }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                let (tok, end) = lex_number(text, start)?;
                out.push((tok, start));
                i = end;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or(c);
                return Err(err(ParseErrorKind::UnexpectedChar(ch), i));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

/// Lexes `digits [. digits] [(e|E) [+|-] digits]` into an exact rational.
fn lex_number(text: &str, start: usize) -> Result<(Tok, usize), ParseError> {
    let bytes = text.as_bytes();
    let mut i = start;
    let mut mantissa = String::new();
    let mut frac_digits: i64 = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        mantissa.push(bytes[i] as char);
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            mantissa.push(bytes[i] as char);
            frac_digits += 1;
            i += 1;
        }
    }
    if mantissa.is_empty() {
        return Err(err(ParseErrorKind::BadNumber(text[start..i].to_string()), start));
    }
    let mut exponent: i64 = 0;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        let mut negative = false;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            negative = bytes[j] == b'-';
            j += 1;
        }
        let digits_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > digits_start {
            exponent = text[digits_start..j]
                .parse::<i64>()
                .map_err(|_| err(ParseErrorKind::BadNumber(text[start..j].to_string()), start))?;
            if negative {
                exponent = -exponent;
            }
            i = j;
        }
    }
    let m: BigInt = mantissa.parse().expect("digits");
    let shift = exponent - frac_digits;
    let ten = BigInt::from(10);
    let q = if shift >= 0 {
        Rational::from_integer(m * num_traits::pow(ten, shift as usize))
    } else {
        Rational::new(m, num_traits::pow(ten, (-shift) as usize))
    };
    Ok((Tok::Num(q, text[start..i].to_string()), i))
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.len)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let at = self.offset();
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(err(ParseErrorKind::UnexpectedToken(t.describe()), at)),
            None => Err(err(ParseErrorKind::UnexpectedEnd, at)),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    terms.push(self.term()?);
                }
                Some(Tok::Minus) => {
                    self.next();
                    terms.push(Expr::new(Node::Neg(self.term()?)));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::new(Node::Sum(terms)) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    factors.push(self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.next();
                    let den = self.unary()?;
                    let num = collapse_product(std::mem::take(&mut factors));
                    factors.push(Expr::quotient(num, den));
                }
                _ => break,
            }
        }
        Ok(collapse_product(factors))
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Minus) = self.peek() {
            self.next();
            return Ok(Expr::new(Node::Neg(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Caret) = self.peek() {
            self.next();
            let at = self.offset();
            let exponent = self.unary()?;
            let folded = exponent.simplify();
            let n = folded
                .as_const()
                .and_then(rational_is_integer)
                .ok_or_else(|| err(ParseErrorKind::NonIntegerExponent, at))?;
            return Ok(base.pow(n));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Num(q, _)) => Ok(Expr::constant(q)),
            Some(Tok::Ident(name)) => {
                let is_call = matches!(self.peek(), Some(Tok::LParen));
                if FUNCTIONS.contains(&name.as_str()) {
                    if !is_call {
                        return Err(err(ParseErrorKind::MissingCall(name), at));
                    }
                    self.next();
                    let arg = self.sum()?;
                    self.expect(Tok::RParen)?;
                    Ok(match name.as_str() {
                        "exp" => arg.exp(),
                        "ln" => arg.ln(),
                        "sin" => arg.sin(),
                        _ => arg.cos(),
                    })
                } else if is_call {
                    Err(err(ParseErrorKind::UnknownFunction(name), at))
                } else {
                    Ok(Expr::symbol(&name))
                }
            }
            Some(Tok::LParen) => {
                let inner = self.sum()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(t) => Err(err(ParseErrorKind::UnexpectedToken(t.describe()), at)),
            None => Err(err(ParseErrorKind::UnexpectedEnd, at)),
        }
    }
}

fn collapse_product(mut factors: Vec<Expr>) -> Expr {
    if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        Expr::new(Node::Product(factors))
    }
}

/// Parses expression text into its syntax tree.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, len: text.len() };
    let e = p.sum()?;
    if let Some((t, at)) = p.toks.get(p.pos) {
        return Err(err(ParseErrorKind::UnexpectedToken(t.describe()), *at));
    }
    Ok(e)
}
