//! Recursive-descent parser.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := ('-')? atom ('^' integer)?
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! A `-` directly in front of a numeric literal (with no exponent following)
//! folds into a negative constant.

use super::{BinaryOp, Expr, UnaryOp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("exponent at byte {offset} must be a nonnegative integer")]
    BadExponent { offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Token)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(tok) = lx.next_token()? {
            out.push(tok);
        }
        Ok(out)
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Option<(usize, Token)>, ParseError> {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let tok = match c {
            b'+' => Token::Plus,
            b'-' => Token::Minus,
            b'*' => Token::Star,
            b'/' => Token::Slash,
            b'^' => Token::Caret,
            b'(' => Token::LParen,
            b')' => Token::RParen,
            b'0'..=b'9' | b'.' => return self.number(start).map(Some),
            c if c.is_ascii_alphabetic() => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                return Ok(Some((start, Token::Ident(self.src[start..self.pos].to_string()))));
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        self.pos += 1;
        Ok(Some((start, tok)))
    }

    fn number(&mut self, start: usize) -> Result<(usize, Token), ParseError> {
        let bytes = self.src.as_bytes();
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(bytes.get(self.pos), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        Ok((start, Token::Number(value, text.to_string())))
    }
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    idx: usize,
    end: usize,
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = Lexer::tokens(text)?;
    let mut p = Parser {
        tokens,
        idx: 0,
        end: text.len(),
    };
    let e = p.expr()?;
    if let Some((offset, tok)) = p.tokens.get(p.idx) {
        return Err(ParseError::Syntax {
            offset: *offset,
            message: format!("unexpected trailing token {tok:?}"),
        });
    }
    Ok(e)
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.idx).map_or(self.end, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.idx).cloned();
        self.idx += 1;
        t
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        let offset = self.offset();
        match self.bump() {
            Some((_, t)) if t == want => Ok(()),
            other => Err(ParseError::Syntax {
                offset,
                message: format!("expected {want:?}, found {:?}", other.map(|(_, t)| t)),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinaryOp::Add,
                Some(Token::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.idx += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinaryOp::Mul,
                Some(Token::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.idx += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let negated = if self.peek() == Some(&Token::Minus) {
            self.idx += 1;
            true
        } else {
            false
        };
        let literal = matches!(self.peek(), Some(Token::Number(..)));
        let mut e = self.atom()?;
        let mut powered = false;
        if self.peek() == Some(&Token::Caret) {
            self.idx += 1;
            let offset = self.offset();
            match self.bump() {
                Some((_, Token::Number(v, text)))
                    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64
                        && !text.contains(['.', 'e', 'E']) =>
                {
                    e = Expr::Pow(Box::new(e), v as u32);
                    powered = true;
                }
                _ => return Err(ParseError::BadExponent { offset }),
            }
        }
        Ok(match (negated, literal && !powered, &e) {
            (true, true, Expr::Const(c)) => Expr::Const(-c),
            (true, _, _) => Expr::Unary(UnaryOp::Neg, Box::new(e)),
            _ => e,
        })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.bump() {
            Some((_, Token::Number(v, _))) => Ok(Expr::Const(v)),
            Some((_, Token::LParen)) => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some((_, Token::Ident(name))) => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    self.expect(Token::LParen)?;
                    let e = self.expr()?;
                    self.expect(Token::RParen)?;
                    return Ok(Expr::Unary(op, Box::new(e)));
                }
                match name.strip_prefix('x').map(str::parse::<usize>) {
                    Some(Ok(k)) if k >= 1 => Ok(Expr::Var(k - 1)),
                    _ => Err(ParseError::UnknownIdentifier { name, offset }),
                }
            }
            other => Err(ParseError::Syntax {
                offset,
                message: match other {
                    Some((_, t)) => format!("unexpected token {t:?}"),
                    None => "unexpected end of input".to_string(),
                },
            }),
        }
    }
}
