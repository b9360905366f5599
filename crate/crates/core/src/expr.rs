//! Arithmetic expressions over x and y.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?
//! primary := number | name | name "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Names are the variables `x`, `y`, the constants `pi`, `e` and any caller-supplied
//! constants. Functions: `min`, `max` (two or more arguments), `abs`, `exp`, `ln`, `sqrt`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Min,
    Max,
    Abs,
    Exp,
    Ln,
    Sqrt,
}

/// Parsed expression; evaluate with [`Expr::eval`].
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    consts: &'a [(&'a str, f64)],
}

fn err(pos: usize, msg: impl Into<String>) -> Error {
    Error::Parse { pos, msg: msg.into() }
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].1.is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| c.1)
    }

    /// 1-based column of the current token.
    fn col(&self) -> usize {
        self.chars.get(self.pos).map_or(self.chars.last().map_or(1, |c| c.0 + 2), |c| c.0 + 1)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(err(self.col(), format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        let start = self.col();
        match self.peek() {
            None => Err(err(start, "unexpected end of expression")),
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => {
                let begin = self.pos;
                while self.pos < self.chars.len() && (self.chars[self.pos].1.is_alphanumeric() || self.chars[self.pos].1 == '_') {
                    self.pos += 1;
                }
                let name: String = self.chars[begin..self.pos].iter().map(|c| c.1).collect();
                if self.peek() == Some('(') {
                    let f = match name.as_str() {
                        "min" => Func::Min,
                        "max" => Func::Max,
                        "abs" => Func::Abs,
                        "exp" => Func::Exp,
                        "ln" => Func::Ln,
                        "sqrt" => Func::Sqrt,
                        _ => return Err(err(start, format!("unknown function '{name}'"))),
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    let ok = match f {
                        Func::Min | Func::Max => args.len() >= 2,
                        _ => args.len() == 1,
                    };
                    if !ok {
                        return Err(err(start, format!("wrong number of arguments to '{name}'")));
                    }
                    return Ok(Node::Call(f, args));
                }
                match name.as_str() {
                    "x" => Ok(Node::X),
                    "y" => Ok(Node::Y),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => self
                        .consts
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|&(_, v)| Node::Num(v))
                        .ok_or_else(|| err(start, format!("unknown identifier '{name}'"))),
                }
            }
            Some(c) => Err(err(start, format!("unexpected character '{c}'"))),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.col();
        let begin = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.chars.len() && p.chars[p.pos].1.is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.chars.len() && self.chars[self.pos].1 == '.' {
            self.pos += 1;
            digits(self);
        }
        if self.pos < self.chars.len() && matches!(self.chars[self.pos].1, 'e' | 'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.chars.len() && matches!(self.chars[self.pos].1, '+' | '-') {
                self.pos += 1;
            }
            if self.pos < self.chars.len() && self.chars[self.pos].1.is_ascii_digit() {
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[begin..self.pos].iter().map(|c| c.1).collect();
        text.parse::<f64>().map(Node::Num).map_err(|_| err(start, format!("malformed number '{text}'")))
    }
}

fn eval(n: &Node, x: f64, y: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X => x,
        Node::Y => y,
        Node::Neg(a) => -eval(a, x, y),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, y), eval(b, x, y));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let mut it = args.iter().map(|a| eval(a, x, y));
            match f {
                Func::Min => it.fold(f64::INFINITY, f64::min),
                Func::Max => it.fold(f64::NEG_INFINITY, f64::max),
                Func::Abs => it.next().unwrap_or(f64::NAN).abs(),
                Func::Exp => it.next().unwrap_or(f64::NAN).exp(),
                Func::Ln => it.next().unwrap_or(f64::NAN).ln(),
                Func::Sqrt => it.next().unwrap_or(f64::NAN).sqrt(),
            }
        }
    }
}

fn mentions_xy(n: &Node) -> bool {
    match n {
        Node::Num(_) => false,
        Node::X | Node::Y => true,
        Node::Neg(a) => mentions_xy(a),
        Node::Bin(_, a, b) => mentions_xy(a) || mentions_xy(b),
        Node::Call(_, args) => args.iter().any(mentions_xy),
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        Self::parse_with(src, &[])
    }

    /// Parses with additional named constants.
    pub fn parse_with(src: &str, consts: &[(&str, f64)]) -> Result<Self> {
        let mut p = Parser { chars: src.char_indices().collect(), pos: 0, consts };
        let root = p.expr()?;
        if p.peek().is_some() {
            return Err(err(p.col(), "unexpected trailing input"));
        }
        Ok(Self { source: src.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        eval(&self.root, p[0], p[1])
    }

    /// True when the expression does not depend on x or y.
    pub fn is_constant(&self) -> bool {
        !mentions_xy(&self.root)
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval([x, y])
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1+2*3", 0.0, 0.0), 7.0);
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2^2", 0.0, 0.0), -4.0);
        assert_eq!(ev("8/4/2", 0.0, 0.0), 1.0);
        assert_eq!(ev("2^-1", 0.0, 0.0), 0.5);
        assert_eq!(ev("(1+x)*y", 2.0, 3.0), 9.0);
        assert_eq!(ev("1.5e2 + 2E-1", 0.0, 0.0), 150.2);
    }

    #[test]
    fn functions_and_constants() {
        assert_eq!(ev("min(x, y, 0.5)", 1.0, 2.0), 0.5);
        assert_eq!(ev("max(x, y)", 1.0, 2.0), 2.0);
        assert_eq!(ev("abs(x-3)", 1.0, 0.0), 2.0);
        assert!((ev("exp(ln(2))", 0.0, 0.0) - 2.0).abs() < 1e-15);
        assert_eq!(ev("sqrt(16)", 0.0, 0.0), 4.0);
        assert_eq!(ev("pi", 0.0, 0.0), std::f64::consts::PI);
        assert_eq!(ev("e", 0.0, 0.0), std::f64::consts::E);
        let h = Expr::parse_with("1 + H*abs(x)", &[("H", 4.0)]).unwrap();
        assert_eq!(h.eval([-0.5, 0.0]), 3.0);
    }

    #[test]
    fn constant_detection() {
        assert!(Expr::parse("1 + pi").unwrap().is_constant());
        assert!(!Expr::parse("1 + 0*x").unwrap().is_constant());
    }

    #[test]
    fn errors_carry_positions() {
        let e = Expr::parse("1 + z").unwrap_err();
        assert!(matches!(e, Error::Parse { pos: 5, .. }), "{e}");
        let e = Expr::parse("foo(x)").unwrap_err();
        assert!(matches!(e, Error::Parse { pos: 1, .. }));
        assert!(matches!(Expr::parse("(1 + 2"), Err(Error::Parse { pos: 7, .. })));
        assert!(matches!(Expr::parse("1 2"), Err(Error::Parse { pos: 3, .. })));
        assert!(matches!(Expr::parse("min(1)"), Err(Error::Parse { .. })));
        assert!(matches!(Expr::parse(""), Err(Error::Parse { .. })));
        assert!(matches!(Expr::parse("1 + $"), Err(Error::Parse { pos: 5, .. })));
    }

    proptest! {
        #[test]
        fn linear_forms_match_direct_evaluation(a in -10.0f64..10.0, b in -10.0f64..10.0, x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let e = Expr::parse(&format!("({a:e})*x - ({b:e})*y + 1")).unwrap();
            prop_assert!((e.eval([x, y]) - (a * x - b * y + 1.0)).abs() <= 1e-12 * (1.0 + (a * x).abs() + (b * y).abs()));
        }
    }
}
