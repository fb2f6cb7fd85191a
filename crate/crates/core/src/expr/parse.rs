use std::fmt;

use super::{Expr, FunctionKind, NamedConstant, Variable};

/// Where and why parsing stopped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the input.
    pub offset: usize,
    pub message: String,
    /// The offending token text (empty at end of input).
    pub token: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.token.is_empty() {
            write!(f, "{} at offset {}", self.message, self.offset)
        } else {
            write!(f, "{} at offset {} (`{}`)", self.message, self.offset, self.token)
        }
    }
}

impl std::error::Error for ParseError {}

pub type ParseOutcome = Result<Expr, ParseError>;

const MAX_NESTING: usize = 200;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    StarStar,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    offset: usize,
    text: String,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'/' => Some(Tok::Slash),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            b'*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    i += 1;
                    Some(Tok::StarStar)
                } else {
                    Some(Tok::Star)
                }
            }
            _ => None,
        };
        if let Some(tok) = simple {
            i += 1;
            out.push(Token { tok, offset: start, text: src[start..i].to_string() });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError {
                offset: start,
                message: "malformed number".into(),
                token: text.into(),
            })?;
            if !value.is_finite() {
                return Err(ParseError {
                    offset: start,
                    message: "number out of range".into(),
                    token: text.into(),
                });
            }
            out.push(Token { tok: Tok::Num(value), offset: start, text: text.into() });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = &src[start..i];
            out.push(Token { tok: Tok::Ident(text.into()), offset: start, text: text.into() });
            continue;
        }
        let ch = src[start..].chars().next().unwrap();
        return Err(ParseError {
            offset: start,
            message: "unexpected character".into(),
            token: ch.to_string(),
        });
    }
    out.push(Token { tok: Tok::End, offset: src.len(), text: String::new() });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: &str) -> ParseError {
        let t = self.peek();
        ParseError { offset: t.offset, message: message.into(), token: t.text.clone() }
    }

    fn expect(&mut self, tok: Tok, message: &str) -> Result<(), ParseError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error_here(message))
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.error_here("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> ParseOutcome {
        self.enter()?;
        let mut terms = vec![self.term()?];
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    let t = self.term()?;
                    terms.push(Expr::neg(t));
                }
                _ => break,
            }
        }
        self.depth -= 1;
        Ok(Expr::add(terms))
    }

    fn term(&mut self) -> ParseOutcome {
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    let d = self.unary()?;
                    factors.push(Expr::pow(d, Expr::num(-1.0)));
                }
                _ => break,
            }
        }
        Ok(Expr::mul(factors))
    }

    fn unary(&mut self) -> ParseOutcome {
        match self.peek().tok {
            Tok::Minus => {
                self.bump();
                self.enter()?;
                let inner = self.unary()?;
                self.depth -= 1;
                Ok(Expr::neg(inner))
            }
            Tok::Plus => {
                self.bump();
                self.enter()?;
                let inner = self.unary()?;
                self.depth -= 1;
                Ok(inner)
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> ParseOutcome {
        let base = self.atom()?;
        if self.peek().tok == Tok::StarStar {
            self.bump();
            self.enter()?;
            let exponent = self.unary()?;
            self.depth -= 1;
            Ok(Expr::pow(base, exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> ParseOutcome {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::num(*v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "expected `)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "x" => return Ok(Expr::Var(Variable::X)),
                    "y" => return Ok(Expr::Var(Variable::Y)),
                    "pi" => return Ok(Expr::Const(NamedConstant::Pi)),
                    "E" => return Ok(Expr::Const(NamedConstant::E)),
                    _ => {}
                }
                let Some(f) = FunctionKind::from_name(name) else {
                    return Err(ParseError {
                        offset: t.offset,
                        message: "unknown identifier".into(),
                        token: name.clone(),
                    });
                };
                self.expect(Tok::LParen, "expected `(` after function name")?;
                let mut args = vec![self.expr()?];
                while self.peek().tok == Tok::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "expected `)` to close argument list")?;
                if args.len() != f.arity() {
                    return Err(ParseError {
                        offset: t.offset,
                        message: format!("{} takes {} argument(s), got {}", f, f.arity(), args.len()),
                        token: name.clone(),
                    });
                }
                if f.has_order_argument() {
                    match args[0] {
                        Expr::Number(n) if n >= 0.0 && n.fract() == 0.0 => {}
                        _ => {
                            return Err(ParseError {
                                offset: t.offset,
                                message: format!("{f} order must be a non-negative integer literal"),
                                token: name.clone(),
                            })
                        }
                    }
                }
                Ok(Expr::call(f, args))
            }
            Tok::End => Err(self.error_here("unexpected end of input")),
            _ => Err(self.error_here("unexpected token")),
        }
    }
}

/// Parses an expression string.
///
/// Grammar (whitespace insignificant, implicit multiplication rejected):
///
/// ```text
/// expr  := term (('+'|'-') term)*
/// term  := unary (('*'|'/') unary)*
/// unary := ('+'|'-') unary | power
/// power := atom ('**' unary)?
/// atom  := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
/// ```
pub fn parse(text: &str) -> ParseOutcome {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0, depth: 0 };
    let e = p.expr()?;
    if p.peek().tok != Tok::End {
        return Err(p.error_here("unexpected token"));
    }
    Ok(e)
}
