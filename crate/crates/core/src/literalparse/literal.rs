//! Recursive-descent parser for a conjunction of ground literals.
//!
//! ```text
//! fact     = literal { conj literal } ;
//! conj     = "∧" | "^" | "AND" ;
//! literal  = [ neg ] ident "(" arg { "," arg } ")" ;
//! neg      = "¬" | "~" | "not" ws ;
//! ident    = letter { letter | digit | "_" } ;
//! arg      = text balanced in "(" ")" without "," or ")" at depth 0 ;
//! ```

use super::{GroundLiteral, LiteralError};

pub struct LiteralParser<'a> {
    chars: Vec<char>,
    pos: usize,
    source: &'a str,
}

impl<'a> LiteralParser<'a> {
    pub fn new(source: &'a str) -> Self {
        Self {
            chars: source.chars().collect(),
            pos: 0,
            source,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn starts_with_ci(&self, word: &str) -> bool {
        let n = word.chars().count();
        self.pos + n <= self.chars.len()
            && self.chars[self.pos..self.pos + n]
                .iter()
                .zip(word.chars())
                .all(|(a, b)| a.eq_ignore_ascii_case(&b))
    }

    fn malformed(&self, detail: impl Into<String>) -> LiteralError {
        LiteralError::Malformed {
            position: self.pos,
            detail: detail.into(),
        }
    }

    pub fn fact(mut self) -> Result<Vec<GroundLiteral>, LiteralError> {
        let mut literals = vec![self.literal()?];
        loop {
            self.skip_ws();
            if self.peek().is_none() {
                return Ok(literals);
            }
            if !self.conjunction() {
                return Err(self.malformed(format!("expected conjunction in {:?}", self.source)));
            }
            literals.push(self.literal()?);
        }
    }

    fn conjunction(&mut self) -> bool {
        match self.peek() {
            Some('∧') | Some('^') => {
                self.pos += 1;
                true
            }
            Some('A')
                if self.chars[self.pos..].starts_with(&['A', 'N', 'D'])
                    && !self.chars.get(self.pos + 3).copied().is_some_and(is_ident_char) =>
            {
                self.pos += 3;
                true
            }
            _ => false,
        }
    }

    fn literal(&mut self) -> Result<GroundLiteral, LiteralError> {
        self.skip_ws();
        let negated = self.negation();
        self.skip_ws();
        let predicate = self.ident()?;
        self.skip_ws();
        if self.peek() != Some('(') {
            return Err(self.malformed(format!("expected '(' after {predicate}")));
        }
        self.pos += 1;
        let args = self.args()?;
        if !(1..=2).contains(&args.len()) {
            return Err(LiteralError::Arity {
                predicate,
                arity: args.len(),
            });
        }
        Ok(GroundLiteral {
            negated,
            predicate,
            args,
        })
    }

    fn negation(&mut self) -> bool {
        match self.peek() {
            Some('¬') | Some('~') => {
                self.pos += 1;
                true
            }
            Some('n') | Some('N')
                if self.starts_with_ci("not")
                    && self.chars.get(self.pos + 3).is_some_and(|c| c.is_whitespace()) =>
            {
                self.pos += 3;
                true
            }
            _ => false,
        }
    }

    fn ident(&mut self) -> Result<String, LiteralError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' => {}
            _ => return Err(self.malformed("expected predicate name")),
        }
        while self.peek().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    /// Arguments after the opening parenthesis, consuming the closing one.
    fn args(&mut self) -> Result<Vec<String>, LiteralError> {
        self.skip_ws();
        if self.peek() == Some(')') {
            self.pos += 1;
            return Ok(Vec::new());
        }
        let mut args = Vec::new();
        let mut current = String::new();
        let mut depth = 0usize;
        loop {
            let Some(c) = self.peek() else {
                return Err(self.malformed("unterminated argument list"));
            };
            self.pos += 1;
            match c {
                '(' => {
                    depth += 1;
                    current.push(c);
                }
                ')' if depth > 0 => {
                    depth -= 1;
                    current.push(c);
                }
                ')' | ',' if depth == 0 => {
                    let arg = current.trim().to_string();
                    if arg.is_empty() {
                        return Err(self.malformed("empty argument"));
                    }
                    args.push(arg);
                    current.clear();
                    if c == ')' {
                        return Ok(args);
                    }
                }
                _ => current.push(c),
            }
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}
