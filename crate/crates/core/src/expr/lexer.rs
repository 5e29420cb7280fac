use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(super) enum TokenKind {
    Number { value: f64, integral: bool },
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

#[derive(Debug, Clone, PartialEq)]
pub(super) struct Token {
    pub kind: TokenKind,
    /// Byte offset into the source text.
    pub pos: usize,
}

pub(super) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' | b'.' => {
                let (kind, end) = number(text, start)?;
                i = end;
                tokens.push(Token { kind, pos: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    pos: start,
                });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Lex {
                    pos: start,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        };
        tokens.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(tokens)
}

fn number(text: &str, start: usize) -> Result<(TokenKind, usize), ParseError> {
    let bytes = text.as_bytes();
    let digits = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        i
    };
    let mut i = digits(start);
    let int_end = i;
    let mut has_fraction = false;
    if i < bytes.len() && bytes[i] == b'.' {
        let frac_end = digits(i + 1);
        has_fraction = text[i + 1..frac_end].bytes().any(|b| b != b'0');
        if frac_end == i + 1 && int_end == start {
            return Err(ParseError::Lex {
                pos: start,
                msg: "malformed number `.`".into(),
            });
        }
        i = frac_end;
    }
    let mut has_exponent = false;
    // An exponent is only consumed when digits follow, so `2*e` and `2e`
    // stay distinguishable from `2e3`.
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            i = digits(j);
            has_exponent = true;
        }
    }
    let literal = &text[start..i];
    let value: f64 = literal.parse().map_err(|_| ParseError::Lex {
        pos: start,
        msg: format!("malformed number `{literal}`"),
    })?;
    if !value.is_finite() {
        return Err(ParseError::Lex {
            pos: start,
            msg: format!("number `{literal}` is out of range"),
        });
    }
    let integral = if has_exponent { value.fract() == 0.0 } else { !has_fraction };
    Ok((TokenKind::Number { value, integral }, i))
}
