use thiserror::Error;

use super::{SkillCall, SkillProgram, Span, Unit, Value};
use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64, Unit),
    Str(String),
    LParen,
    RParen,
    Comma,
    Semi,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(..) => "number".into(),
            Tok::Str(_) => "string".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.char_indices().peekable(), src, line: 1, column: 1 }
    }

    fn err(&self, span: Span, message: impl Into<String>) -> ParseError {
        ParseError { line: span.line, column: span.column, message: message.into() }
    }

    fn bump(&mut self) -> Option<(usize, char)> {
        let next = self.chars.next();
        if let Some((_, c)) = next {
            if c == '\n' {
                self.line += 1;
                self.column = 1;
            } else {
                self.column += 1;
            }
        }
        next
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next().map(|(_, c)| c)
    }

    fn tokens(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            let span = Span { line: self.line, column: self.column };
            match c {
                c if c.is_whitespace() => {
                    self.bump();
                }
                '#' => {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '(' | ')' | ',' | ';' => {
                    self.bump();
                    let tok = match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        ',' => Tok::Comma,
                        _ => Tok::Semi,
                    };
                    out.push(Token { tok, span });
                }
                '"' => {
                    self.bump();
                    let s = self.string(span)?;
                    out.push(Token { tok: Tok::Str(s), span });
                }
                c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                    let tok = self.number(span)?;
                    out.push(Token { tok, span });
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.chars.peek().map(|&(i, _)| i).unwrap_or(self.src.len());
                    let mut end = start;
                    while let Some(&(i, c)) = self.chars.peek() {
                        if c.is_alphanumeric() || c == '_' {
                            end = i + c.len_utf8();
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push(Token { tok: Tok::Ident(self.src[start..end].to_string()), span });
                }
                other => return Err(self.err(span, format!("unexpected character `{other}`"))),
            }
        }
        Ok(out)
    }

    fn string(&mut self, span: Span) -> Result<String, ParseError> {
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err(span, "unterminated string")),
                Some((_, '"')) => return Ok(s),
                Some((_, '\\')) => match self.bump() {
                    Some((_, 'n')) => s.push('\n'),
                    Some((_, 't')) => s.push('\t'),
                    Some((_, '"')) => s.push('"'),
                    Some((_, '\\')) => s.push('\\'),
                    Some((_, c)) => return Err(self.err(span, format!("unknown escape `\\{c}`"))),
                    None => return Err(self.err(span, "unterminated string")),
                },
                Some((_, c)) => s.push(c),
            }
        }
    }

    fn number(&mut self, span: Span) -> Result<Tok, ParseError> {
        let mut text = String::new();
        if let Some(c @ ('-' | '+')) = self.peek() {
            text.push(c);
            self.bump();
        }
        let mut digits = 0;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                text.push(c);
                digits += 1;
                self.bump();
            } else {
                break;
            }
        }
        if self.peek() == Some('.') {
            text.push('.');
            self.bump();
            while let Some(c) = self.peek() {
                if c.is_ascii_digit() {
                    text.push(c);
                    digits += 1;
                    self.bump();
                } else {
                    break;
                }
            }
        }
        if digits == 0 {
            return Err(self.err(span, "malformed number"));
        }
        if let Some('e' | 'E') = self.peek() {
            let next = self.peek2();
            let exponent = matches!(next, Some(c) if c.is_ascii_digit() || c == '-' || c == '+');
            if exponent {
                text.push('e');
                self.bump();
                if let Some(c @ ('-' | '+')) = self.peek() {
                    text.push(c);
                    self.bump();
                }
                let mut exp_digits = 0;
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() {
                        text.push(c);
                        exp_digits += 1;
                        self.bump();
                    } else {
                        break;
                    }
                }
                if exp_digits == 0 {
                    return Err(self.err(span, "malformed exponent"));
                }
            }
        }
        let value: f64 = text.parse().map_err(|_| self.err(span, format!("malformed number `{text}`")))?;
        if !value.is_finite() {
            return Err(self.err(span, "number out of range"));
        }
        let mut suffix = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                suffix.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let unit = match suffix.as_str() {
            "" => Unit::None,
            "m" => Unit::Meters,
            "rad" => Unit::Radians,
            other => return Err(self.err(span, format!("unknown unit `{other}`"))),
        };
        Ok(Tok::Number(value, unit))
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: Span,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> Span {
        self.peek().map(|t| t.span).unwrap_or(self.end)
    }

    fn err(&self, span: Span, message: impl Into<String>) -> ParseError {
        ParseError { line: span.line, column: span.column, message: message.into() }
    }

    fn expect(&mut self, want: Tok) -> Result<Span, ParseError> {
        match self.next() {
            Some(t) if t.tok == want => Ok(t.span),
            Some(t) => Err(self.err(t.span, format!("expected {}, found {}", want.describe(), t.tok.describe()))),
            None => Err(self.err(self.end, format!("expected {}, found end of input", want.describe()))),
        }
    }

    fn program(&mut self) -> Result<SkillProgram, ParseError> {
        let mut calls = Vec::new();
        let mut spans = Vec::new();
        let mut last_line = 0;
        let mut separated = true;
        while let Some(t) = self.peek() {
            if t.tok == Tok::Semi {
                self.next();
                separated = true;
                continue;
            }
            let start = t.span;
            if !separated && start.line == last_line {
                return Err(self.err(start, "expected `;` or newline between calls"));
            }
            let (call, arg_spans) = self.call()?;
            calls.push(call);
            spans.push(arg_spans);
            last_line = self.toks[self.pos - 1].span.line;
            separated = false;
        }
        if calls.is_empty() {
            return Err(self.err(self.end, "empty program"));
        }
        Ok(SkillProgram { calls, spans })
    }

    fn call(&mut self) -> Result<(SkillCall, Vec<Span>), ParseError> {
        let name = match self.next() {
            Some(Token { tok: Tok::Ident(name), .. }) => name,
            Some(t) => return Err(self.err(t.span, format!("expected skill name, found {}", t.tok.describe()))),
            None => return Err(self.err(self.end, "expected skill name")),
        };
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        let mut spans = Vec::new();
        if matches!(self.peek(), Some(Token { tok: Tok::RParen, .. })) {
            self.next();
            return Ok((SkillCall { skill: name, args }, spans));
        }
        loop {
            spans.push(self.here());
            args.push(self.value()?);
            match self.next() {
                Some(Token { tok: Tok::Comma, .. }) => continue,
                Some(Token { tok: Tok::RParen, .. }) => break,
                Some(t) => return Err(self.err(t.span, format!("expected `,` or `)`, found {}", t.tok.describe()))),
                None => return Err(self.err(self.end, "unclosed argument list")),
            }
        }
        Ok((SkillCall { skill: name, args }, spans))
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        let t = self.next().ok_or_else(|| self.err(self.end, "expected argument"))?;
        match t.tok {
            Tok::Number(value, unit) => Ok(Value::Number { value, unit }),
            Tok::Str(text) => Ok(Value::Text { text }),
            Tok::Ident(ref id) if id == "true" => Ok(Value::Bool { value: true }),
            Tok::Ident(ref id) if id == "false" => Ok(Value::Bool { value: false }),
            Tok::Ident(ref id) if id == "pose" => {
                self.expect(Tok::LParen)?;
                let mut c = [0.0; 6];
                for (i, slot) in c.iter_mut().enumerate() {
                    if i > 0 {
                        self.expect(Tok::Comma)?;
                    }
                    match self.next() {
                        Some(Token { tok: Tok::Number(v, Unit::None), .. }) => *slot = v,
                        Some(t) => {
                            return Err(self.err(t.span, format!("pose component {} must be a plain number", i + 1)))
                        }
                        None => return Err(self.err(self.end, "unterminated pose")),
                    }
                }
                self.expect(Tok::RParen)?;
                Ok(Value::Pose { pose: Pose::from(c) })
            }
            Tok::Ident(ref id) if id == "obj" => {
                self.expect(Tok::LParen)?;
                let label = match self.next() {
                    Some(Token { tok: Tok::Str(s), .. }) => s,
                    Some(t) => return Err(self.err(t.span, "obj() takes a quoted label")),
                    None => return Err(self.err(self.end, "unterminated obj()")),
                };
                self.expect(Tok::RParen)?;
                Ok(Value::Object { label })
            }
            other => Err(self.err(t.span, format!("expected literal, found {}", other.describe()))),
        }
    }
}

/// Parses DSL source into a program. Unknown skill names are accepted here
/// and reported by [`super::validate`].
pub fn parse(text: &str) -> Result<SkillProgram, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    let (line, column) = text.lines().enumerate().last().map(|(i, l)| (i + 1, l.chars().count() + 1)).unwrap_or((1, 1));
    let mut parser = Parser { toks, pos: 0, end: Span { line, column } };
    parser.program()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_a_syntax_error() {
        let e = parse("").unwrap_err();
        assert_eq!((e.line, e.column), (1, 1));
        assert!(parse("  \n # only a comment\n").is_err());
    }

    #[test]
    fn missing_separator_reports_position() {
        let e = parse("release() release()").unwrap_err();
        assert_eq!((e.line, e.column), (1, 11));
    }

    #[test]
    fn newline_separates_calls() {
        let p = parse("open_gripper()\nclose_gripper()\n").unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn bad_token_position() {
        let e = parse("move_to(pose(1,2,3,0,0,0));\ngrasp(@)").unwrap_err();
        assert_eq!((e.line, e.column), (2, 7));
    }

    #[test]
    fn units_and_exponents() {
        let p = parse("f(1.5rad, -2m, 3e-2, 4E+1m)").unwrap();
        assert_eq!(
            p.calls[0].args,
            vec![Value::radians(1.5), Value::meters(-2.0), Value::number(0.03), Value::meters(40.0)]
        );
        assert!(parse("f(1kg)").is_err());
        assert!(parse("f(1e)").is_err());
    }

    #[test]
    fn spans_recorded_for_literals() {
        let p = parse("grasp(obj(\"cube\"))\nmove_delta(0, 0, 0.1)").unwrap();
        assert_eq!(p.spans[1][2], Span { line: 2, column: 18 });
    }

    #[test]
    fn pose_needs_six_plain_numbers() {
        assert!(parse("move_to(pose(1,2,3))").is_err());
        assert!(parse("move_to(pose(1,2,3,0,0,1rad))").is_err());
    }
}
