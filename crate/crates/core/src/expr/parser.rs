//! Recursive-descent parser.
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' INTEGER)*
//! primary := NUMBER | IDENT | IDENT '(' args ')' | '(' sum ')'
//! ```

use thiserror::Error;

use super::lexer::{tokenize, Token, TokenKind};
use super::{BinaryOp, Expr, Scope, UnaryOp};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("lex error at byte {pos}: {msg}")]
    Lex { pos: usize, msg: String },
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{name}` takes 1 argument, got {got} (byte {pos})")]
    Arity { name: String, got: usize, pos: usize },
    #[error("exponent at byte {pos} must be a non-negative integer literal")]
    NonIntegerExponent { pos: usize },
    #[error("empty expression")]
    Empty,
}

/// Parses `text` against the identifiers allowed by `scope`.
pub fn parse(text: &str, scope: Scope) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        tokens,
        cursor: 0,
        scope,
        end: text.len(),
    };
    let e = p.sum()?;
    if let Some(tok) = p.peek() {
        return Err(ParseError::Syntax {
            pos: tok.pos,
            msg: format!("unexpected {}", describe(&tok.kind)),
        });
    }
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    cursor: usize,
    scope: Scope,
    end: usize,
}

fn describe(kind: &TokenKind) -> String {
    match kind {
        TokenKind::Number { value, .. } => format!("number {value}"),
        TokenKind::Ident(name) => format!("identifier `{name}`"),
        TokenKind::Plus => "`+`".into(),
        TokenKind::Minus => "`-`".into(),
        TokenKind::Star => "`*`".into(),
        TokenKind::Slash => "`/`".into(),
        TokenKind::Caret => "`^`".into(),
        TokenKind::LParen => "`(`".into(),
        TokenKind::RParen => "`)`".into(),
        TokenKind::Comma => "`,`".into(),
    }
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.cursor).cloned();
        self.cursor += 1;
        tok
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.cursor += 1;
            true
        } else {
            false
        }
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Plus) => BinaryOp::Add,
                Some(TokenKind::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.cursor += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Star) => BinaryOp::Mul,
                Some(TokenKind::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.cursor += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&TokenKind::Minus) {
            let operand = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(operand)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.eat(&TokenKind::Caret) {
            let pos = self.pos();
            match self.next().map(|t| t.kind) {
                Some(TokenKind::Number { value, integral: true }) if value <= u32::MAX as f64 => {
                    base = Expr::Pow(Box::new(base), value as u32);
                }
                Some(TokenKind::Number { .. }) | Some(TokenKind::Minus) => {
                    return Err(ParseError::NonIntegerExponent { pos })
                }
                _ => {
                    return Err(ParseError::Syntax {
                        pos,
                        msg: "expected integer exponent after `^`".into(),
                    })
                }
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let Some(tok) = self.next() else {
            return Err(ParseError::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            });
        };
        match tok.kind {
            TokenKind::Number { value, .. } => Ok(Expr::Const(value)),
            TokenKind::LParen => {
                let inner = self.sum()?;
                if !self.eat(&TokenKind::RParen) {
                    return Err(ParseError::Syntax {
                        pos: self.pos(),
                        msg: "expected `)`".into(),
                    });
                }
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if self.peek().is_some_and(|t| t.kind == TokenKind::LParen) {
                    return self.call(name, tok.pos);
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    _ => match self.scope.resolve(&name) {
                        Some(sym) => Ok(Expr::Var(sym)),
                        None if UnaryOp::from_function_name(&name).is_some() => Err(ParseError::Arity {
                            name,
                            got: 0,
                            pos: tok.pos,
                        }),
                        None => Err(ParseError::UnknownIdentifier { name, pos: tok.pos }),
                    },
                }
            }
            other => Err(ParseError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {}", describe(&other)),
            }),
        }
    }

    fn call(&mut self, name: String, pos: usize) -> Result<Expr, ParseError> {
        let Some(op) = UnaryOp::from_function_name(&name) else {
            return Err(ParseError::UnknownIdentifier { name, pos });
        };
        self.cursor += 1; // `(`
        let mut args = Vec::new();
        if !self.eat(&TokenKind::RParen) {
            loop {
                args.push(self.sum()?);
                if self.eat(&TokenKind::Comma) {
                    continue;
                }
                if self.eat(&TokenKind::RParen) {
                    break;
                }
                return Err(ParseError::Syntax {
                    pos: self.pos(),
                    msg: "expected `,` or `)`".into(),
                });
            }
        }
        if args.len() != 1 {
            return Err(ParseError::Arity {
                name,
                got: args.len(),
                pos,
            });
        }
        Ok(Expr::Unary(op, Box::new(args.remove(0))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Symbol;

    fn x(i: usize) -> Box<Expr> {
        Box::new(Expr::Var(Symbol::State(i)))
    }
    fn c(v: f64) -> Box<Expr> {
        Box::new(Expr::Const(v))
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse("x1", Scope::new(1)).unwrap(), Expr::Var(Symbol::State(0)));
    }

    #[test]
    fn quadratic_output_map() {
        let e = parse("0.3*x1^2 + x2", Scope::new(2)).unwrap();
        let expected = Expr::Binary(
            BinaryOp::Add,
            Box::new(Expr::Binary(BinaryOp::Mul, c(0.3), Box::new(Expr::Pow(x(0), 2)))),
            x(1),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn disturbance_expression() {
        let e = parse("1.5*sin(2*t+pi/3)+3*cos(3*t+3*pi/7)", Scope::time()).unwrap();
        // + at the root, two products below it, one trig call in each product
        let Expr::Binary(BinaryOp::Add, l, r) = &e else {
            panic!("root is not +: {e:?}")
        };
        let Expr::Binary(BinaryOp::Mul, lc, ls) = l.as_ref() else { panic!() };
        let Expr::Binary(BinaryOp::Mul, rc, rs) = r.as_ref() else { panic!() };
        assert_eq!(lc.as_const(), Some(1.5));
        assert_eq!(rc.as_const(), Some(3.0));
        assert!(matches!(ls.as_ref(), Expr::Unary(UnaryOp::Sin, _)));
        assert!(matches!(rs.as_ref(), Expr::Unary(UnaryOp::Cos, _)));
        assert_eq!(e.symbols(), vec![Symbol::Time]);
        let v = e.eval(&crate::expr::Env::time(0.0)).unwrap();
        let expected = 1.5 * (std::f64::consts::PI / 3.0).sin() + 3.0 * (3.0 * std::f64::consts::PI / 7.0).cos();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn precedence() {
        let s = Scope::new(3);
        // power binds tighter than unary minus
        assert_eq!(
            parse("-x1^2", s).unwrap(),
            Expr::Unary(UnaryOp::Neg, Box::new(Expr::Pow(x(0), 2)))
        );
        // unary minus binds tighter than *
        assert_eq!(
            parse("-x1*x2", s).unwrap(),
            Expr::Binary(BinaryOp::Mul, Box::new(Expr::Unary(UnaryOp::Neg, x(0))), x(1))
        );
        // left associativity
        assert_eq!(
            parse("x1-x2-x3", s).unwrap(),
            Expr::Binary(BinaryOp::Sub, Box::new(Expr::Binary(BinaryOp::Sub, x(0), x(1))), x(2))
        );
        assert_eq!(
            parse("x1/x2*x3", s).unwrap(),
            Expr::Binary(BinaryOp::Mul, Box::new(Expr::Binary(BinaryOp::Div, x(0), x(1))), x(2))
        );
        assert_eq!(parse("2*-x1", s).unwrap().to_string(), "2*-x1");
    }

    #[test]
    fn constants() {
        assert_eq!(parse("pi", Scope::constant()).unwrap().as_const(), Some(std::f64::consts::PI));
        assert_eq!(parse("e", Scope::constant()).unwrap().as_const(), Some(std::f64::consts::E));
        let e = parse("2e", Scope::constant());
        assert!(matches!(e, Err(ParseError::Syntax { pos: 1, .. })), "{e:?}");
    }

    #[test]
    fn rejects_unknown_identifiers() {
        assert_eq!(
            parse("x1 + y", Scope::new(1)),
            Err(ParseError::UnknownIdentifier { name: "y".into(), pos: 5 })
        );
        assert_eq!(
            parse("x3", Scope::new(2)),
            Err(ParseError::UnknownIdentifier { name: "x3".into(), pos: 0 })
        );
        assert_eq!(
            parse("t", Scope::state(2)),
            Err(ParseError::UnknownIdentifier { name: "t".into(), pos: 0 })
        );
        assert!(matches!(parse("abs(x1)", Scope::new(1)), Err(ParseError::UnknownIdentifier { .. })));
    }

    #[test]
    fn rejects_bad_arity() {
        assert_eq!(
            parse("sin(x1, x2)", Scope::new(2)),
            Err(ParseError::Arity { name: "sin".into(), got: 2, pos: 0 })
        );
        assert!(matches!(parse("cos()", Scope::new(2)), Err(ParseError::Arity { got: 0, .. })));
        assert!(matches!(parse("1 + exp", Scope::new(2)), Err(ParseError::Arity { got: 0, .. })));
    }

    #[test]
    fn rejects_non_integer_exponents() {
        assert_eq!(parse("x1^0.5", Scope::new(1)), Err(ParseError::NonIntegerExponent { pos: 3 }));
        assert_eq!(parse("x1^-1", Scope::new(1)), Err(ParseError::NonIntegerExponent { pos: 3 }));
        assert!(matches!(parse("x1^x1", Scope::new(1)), Err(ParseError::Syntax { .. })));
        assert_eq!(parse("x1^2.0", Scope::new(1)).unwrap(), Expr::Pow(x(0), 2));
        assert_eq!(parse("x1^0", Scope::new(1)).unwrap(), Expr::Pow(x(0), 0));
    }

    #[test]
    fn syntax_errors() {
        assert_eq!(parse("", Scope::new(1)), Err(ParseError::Empty));
        assert_eq!(parse("   ", Scope::new(1)), Err(ParseError::Empty));
        assert!(matches!(parse("(x1", Scope::new(1)), Err(ParseError::Syntax { pos: 3, .. })));
        assert!(matches!(parse("x1 +", Scope::new(1)), Err(ParseError::Syntax { pos: 4, .. })));
        assert!(matches!(parse("x1 x1", Scope::new(1)), Err(ParseError::Syntax { pos: 3, .. })));
        assert!(matches!(parse("x1 @ 2", Scope::new(1)), Err(ParseError::Lex { pos: 3, .. })));
    }
}
