//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := atom ['^' int]
//! atom   := number | 'x[' int ']' | 'y[' int ']' | ident
//!         | 'exp(' expr ')' | 'ln(' expr ')' | 'abs(' expr ')'
//!         | 'max(' expr (',' expr)+ ')' | 'sumsq(' expr (',' expr)+ ')'
//!         | '(' expr ')' | '-' atom
//! ```

use super::{Expr, ExprError};

/// Declared dimensions and parameter names checked while parsing.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Number of decision variables; `x[i]` with `i >= n` is rejected.
    pub n: Option<usize>,
    /// Number of sample components; `y[j]` with `j >= d` is rejected.
    pub d: Option<usize>,
    /// Allowed parameter names; any identifier is accepted when `None`.
    pub params: Option<Vec<String>>,
}

/// Parses with no dimension checks.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    parse_with(text, &ParseOptions::default())
}

/// Parses and validates against `opts`, then constant-folds.
pub fn parse_with(text: &str, opts: &ParseOptions) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        opts,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    e.fold()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    opts: &'a ParseOptions,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let start = self.pos;
            if matches!(self.src.get(self.pos), Some(b'-') | Some(b'+')) {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = start;
                return Err(self.err("expected integer exponent"));
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let k: i32 = text.parse().map_err(|_| self.err("exponent out of range"))?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn index(&mut self) -> Result<usize, ExprError> {
        self.expect(b'[')?;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected index"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let i = text.parse().map_err(|_| self.err("index out of range"))?;
        self.expect(b']')?;
        Ok(i)
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'-' || s[self.pos] == b'+') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(&mut self.pos);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        text.parse::<f64>().map(Expr::Const).map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })
    }

    fn args(&mut self, min: usize) -> Result<Vec<Expr>, ExprError> {
        let mut out = vec![self.expr()?];
        while self.eat(b',') {
            out.push(self.expr()?);
        }
        self.expect(b')')?;
        if out.len() < min {
            return Err(self.err(&format!("expected at least {min} arguments")));
        }
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let c = self.peek().ok_or_else(|| self.err("unexpected end of input"))?;
        if c == b'-' {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.atom()?)));
        }
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if !(c.is_ascii_alphabetic() || c == b'_') {
            return Err(self.err(&format!("unexpected character `{}`", c as char)));
        }
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        match name.as_str() {
            "x" | "y" if self.peek() == Some(b'[') => {
                let i = self.index()?;
                let (limit, kind) = if name == "x" {
                    (self.opts.n, 'x')
                } else {
                    (self.opts.d, 'y')
                };
                if let Some(limit) = limit {
                    if i >= limit {
                        return Err(ExprError::IndexOutOfBounds {
                            kind,
                            index: i,
                            limit,
                        });
                    }
                }
                Ok(if kind == 'x' {
                    Expr::Var(i)
                } else {
                    Expr::Sample(i)
                })
            }
            _ if self.peek() == Some(b'(') => {
                self.pos += 1;
                match name.as_str() {
                    "exp" => Ok(Expr::Exp(Box::new(self.single_arg()?))),
                    "ln" => Ok(Expr::Ln(Box::new(self.single_arg()?))),
                    "abs" => Ok(Expr::Abs(Box::new(self.single_arg()?))),
                    "max" => Ok(Expr::Max(self.args(2)?)),
                    "sumsq" => Ok(Expr::SumSq(self.args(2)?)),
                    _ => Err(ExprError::UnknownIdent { name, pos: start }),
                }
            }
            _ => {
                if let Some(allowed) = &self.opts.params {
                    if !allowed.iter().any(|a| a == &name) {
                        return Err(ExprError::UnknownIdent { name, pos: start });
                    }
                }
                Ok(Expr::Param(name))
            }
        }
    }

    fn single_arg(&mut self) -> Result<Expr, ExprError> {
        let e = self.expr()?;
        self.expect(b')')?;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_constraint_shape() {
        let e = parse("50*y[0]*exp(x[0]) - 5").unwrap();
        let expected = Expr::Sub(
            Box::new(Expr::Mul(
                Box::new(Expr::Mul(
                    Box::new(Expr::Const(50.0)),
                    Box::new(Expr::Sample(0)),
                )),
                Box::new(Expr::Exp(Box::new(Expr::Var(0)))),
            )),
            Box::new(Expr::Const(5.0)),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn simple_shapes() {
        assert_eq!(parse("x[0]").unwrap(), Expr::Var(0));
        assert_eq!(
            parse("x[0]^3 + 20").unwrap(),
            Expr::Add(
                Box::new(Expr::Pow(Box::new(Expr::Var(0)), 3)),
                Box::new(Expr::Const(20.0))
            )
        );
        assert_eq!(parse("-2.5").unwrap(), Expr::Const(-2.5));
        assert_eq!(parse("2*3 + x[1]").unwrap(), parse("6 + x[1]").unwrap());
        assert_eq!(parse("1e-3").unwrap(), Expr::Const(1e-3));
        assert_eq!(
            parse("x[0]^-1").unwrap(),
            Expr::Pow(Box::new(Expr::Var(0)), -1)
        );
    }

    #[test]
    fn unary_minus_binds_to_atom() {
        // `-x^2` is `(-x)^2` under the grammar.
        let e = parse("-x[0]^2").unwrap();
        assert_eq!(e.eval_xy(&[3.0], &[]).unwrap(), 9.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse("x[0] +"), Err(ExprError::Syntax { pos: 6, .. })));
        assert!(matches!(parse("(x[0]"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("foo(x[0])"), Err(ExprError::UnknownIdent { .. })));
        assert!(matches!(parse("max(x[0])"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x[0]^1.5"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x[0]/(2-2)"), Err(ExprError::Domain { .. })));
        assert!(matches!(parse("ln(0)"), Err(ExprError::Domain { .. })));
        let opts = ParseOptions {
            n: Some(2),
            d: Some(1),
            params: Some(vec!["theta".into()]),
        };
        assert!(parse_with("x[1] + y[0] + theta", &opts).is_ok());
        assert!(matches!(
            parse_with("x[2]", &opts),
            Err(ExprError::IndexOutOfBounds { kind: 'x', index: 2, limit: 2 })
        ));
        assert!(matches!(
            parse_with("y[1]", &opts),
            Err(ExprError::IndexOutOfBounds { kind: 'y', .. })
        ));
        assert!(matches!(
            parse_with("gamma", &opts),
            Err(ExprError::UnknownIdent { .. })
        ));
    }

    #[test]
    fn printing_round_trips_tricky_cases() {
        for s in [
            "x[0] - (x[1] - x[2])",
            "x[0]/(x[1]*x[2])",
            "(x[0]^2)^3",
            "-(x[0]^2)",
            "(-x[0])^2",
            "x[0] - -3",
            "x[0]*-x[1]",
            "--x[0]",
            "max(x[0], -1, sumsq(x[1], y[0]))",
            "a*x[0] + 1e-7 - 1e300",
        ] {
            let e = parse(s).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{s} -> {printed}");
        }
    }
}
