//! Scalar expressions over the state variables `x1 … xn`.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" exponent ] ;
//! exponent = "-" exponent | power ;        (* must fold to an integer constant *)
//! primary = number | variable | call | "(" expr ")" ;
//! call    = builtin "(" expr { "," expr } ")" ;
//! builtin = "sin" | "cos" | "tan" | "exp" | "log" | "sqrt" | "abs" ;
//! variable = "x" digit { digit } ;          (* x1 … xn *)
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! `^` binds tighter than unary minus and is right-associative, so `-2^2 = -4`
//! and `2^3^2 = 512`. Exponents are restricted to integer-valued constants.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("`{name}` takes {expected} argument(s), got {found} (position {position})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        position: usize,
    },
    #[error("dimension mismatch: expected state dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Builtin {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Builtin::Sin,
            "cos" => Builtin::Cos,
            "tan" => Builtin::Tan,
            "exp" => Builtin::Exp,
            "log" => Builtin::Log,
            "sqrt" => Builtin::Sqrt,
            "abs" => Builtin::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Sin => "sin",
            Builtin::Cos => "cos",
            Builtin::Tan => "tan",
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Sqrt => "sqrt",
            Builtin::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Builtin::Sin => v.sin(),
            Builtin::Cos => v.cos(),
            Builtin::Tan => v.tan(),
            Builtin::Exp => v.exp(),
            Builtin::Log => v.ln(),
            Builtin::Sqrt => v.sqrt(),
            Builtin::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Expression tree. Variables are stored 0-based (`Var(0)` is `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Builtin, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(k) => x[*k],
            Node::Neg(a) => -a.eval(x),
            Node::Binary(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Node::Pow(a, n) => a.eval(x).powi(*n),
            Node::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(k) => Some(*k),
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.max_var(),
            Node::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            },
        }
    }

    // 1: sums, 2: products, 3: unary minus, 4: powers, 5: atoms
    fn level(&self) -> u8 {
        match self {
            Node::Binary(op, _, _) => op.precedence(),
            Node::Neg(_) => 3,
            // a negative literal prints with a leading minus
            Node::Const(c) if c.is_sign_negative() => 3,
            Node::Pow(..) => 4,
            Node::Const(_) | Node::Var(_) | Node::Call(..) => 5,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(k) => write!(f, "x{}", k + 1),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_wrapped(f, a, a.level() < 3)
            }
            Node::Binary(op, a, b) => {
                let p = op.precedence();
                write_wrapped(f, a, a.level() < p)?;
                write!(f, " {} ", op.symbol())?;
                // left-associative: a right operand at equal precedence needs parentheses
                write_wrapped(f, b, b.level() <= p)
            }
            Node::Pow(a, n) => {
                write_wrapped(f, a, a.level() < 5)?;
                write!(f, "^{n}")
            }
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f)?;
                f.write_str(")")
            }
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, node: &Node, wrap: bool) -> fmt::Result {
    if wrap {
        f.write_str("(")?;
        node.write(f)?;
        f.write_str(")")
    } else {
        node.write(f)
    }
}

/// A parsed expression bound to a state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    state_dim: usize,
}

impl Expr {
    pub fn parse(source: &str, state_dim: usize) -> Result<Self, ExprError> {
        let root = Parser::new(source, state_dim).parse()?;
        Ok(Expr { root, state_dim })
    }

    /// Builds an expression from a tree, checking variable bounds.
    pub fn from_node(root: Node, state_dim: usize) -> Result<Self, ExprError> {
        if let Some(k) = root.max_var() {
            if k >= state_dim {
                return Err(ExprError::UnknownIdentifier {
                    name: format!("x{}", k + 1),
                    position: 0,
                });
            }
        }
        Ok(Expr { root, state_dim })
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Evaluates at `point`. Non-finite results are returned unchanged.
    pub fn eval(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.state_dim, "point has wrong dimension");
        self.root.eval(point)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(f)
    }
}

/// The map `T` of a discrete-time system `x⁺ = T(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsMap {
    components: Vec<Expr>,
}

impl DynamicsMap {
    pub fn new(components: Vec<Expr>) -> Result<Self, ExprError> {
        let n = components.len();
        if n == 0 {
            return Err(ExprError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(bad) = components.iter().find(|c| c.state_dim != n) {
            return Err(ExprError::DimensionMismatch {
                expected: n,
                found: bad.state_dim,
            });
        }
        Ok(DynamicsMap { components })
    }

    pub fn parse<S: AsRef<str>>(sources: &[S]) -> Result<Self, ExprError> {
        let n = sources.len();
        let components = sources
            .iter()
            .map(|s| Expr::parse(s.as_ref(), n))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(components)
    }

    pub fn state_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Anything that can be evaluated pointwise on the state space.
pub trait Observable: Send + Sync {
    fn state_dim(&self) -> usize;
    fn eval(&self, point: &[f64]) -> f64;
}

impl Observable for Expr {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn eval(&self, point: &[f64]) -> f64 {
        Expr::eval(self, point)
    }
}

/// `e ∘ T`, the Koopman image of an observable.
#[derive(Debug, Clone, Copy)]
pub struct Composed<'a, O: ?Sized> {
    inner: &'a O,
    map: &'a DynamicsMap,
}

impl<O: Observable + ?Sized> Observable for Composed<'_, O> {
    fn state_dim(&self) -> usize {
        self.map.state_dim()
    }

    fn eval(&self, point: &[f64]) -> f64 {
        let image = self.map.apply(point);
        self.inner.eval(&image)
    }
}

pub fn compose_with_map<'a, O: Observable + ?Sized>(
    e: &'a O,
    map: &'a DynamicsMap,
) -> Result<Composed<'a, O>, ExprError> {
    if e.state_dim() != map.state_dim() {
        return Err(ExprError::DimensionMismatch {
            expected: map.state_dim(),
            found: e.state_dim(),
        });
    }
    Ok(Composed { inner: e, map })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
    state_dim: usize,
    peeked: Option<(Token, usize)>,
}

impl<'s> Parser<'s> {
    fn new(src: &'s str, state_dim: usize) -> Self {
        Parser {
            src,
            pos: 0,
            state_dim,
            peeked: None,
        }
    }

    fn error<T>(&self, position: usize, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse {
            position,
            message: message.into(),
        })
    }

    fn lex(&mut self) -> Result<(Token, usize), ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(start) else {
            return Ok((Token::End, start));
        };
        let tok = match c {
            b'0'..=b'9' | b'.' => {
                let mut end = start;
                while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                    end += 1;
                }
                if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                    let mut exp = end + 1;
                    if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
                        exp += 1;
                    }
                    if exp < bytes.len() && bytes[exp].is_ascii_digit() {
                        while exp < bytes.len() && bytes[exp].is_ascii_digit() {
                            exp += 1;
                        }
                        end = exp;
                    }
                }
                let text = &self.src[start..end];
                self.pos = end;
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Token::Num(v),
                    Ok(_) => return self.error(start, format!("number `{text}` is out of range")),
                    Err(_) => return self.error(start, format!("malformed number `{text}`")),
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = start;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                self.pos = end;
                Token::Ident(self.src[start..end].to_string())
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Token::Op(c as char)
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
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return self.error(start, format!("unexpected character `{ch}`"));
            }
        };
        Ok((tok, start))
    }

    fn peek(&mut self) -> Result<&(Token, usize), ExprError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lex()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn next(&mut self) -> Result<(Token, usize), ExprError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn eat_op(&mut self, ops: &[char]) -> Result<Option<char>, ExprError> {
        if let (Token::Op(c), _) = self.peek()? {
            if ops.contains(c) {
                let c = *c;
                self.next()?;
                return Ok(Some(c));
            }
        }
        Ok(None)
    }

    fn parse(mut self) -> Result<Node, ExprError> {
        let node = self.expr()?;
        match self.next()? {
            (Token::End, _) => Ok(node),
            (tok, pos) => self.error(pos, format!("unexpected {}", describe(&tok))),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-'])? {
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/'])? {
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op(&['-'])?.is_some() {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.eat_op(&['^'])?.is_none() {
            return Ok(base);
        }
        let pos = self.peek()?.1;
        let exponent = self.exponent()?;
        if exponent.max_var().is_some() {
            return self.error(pos, "exponent must be a constant");
        }
        let value = exponent.eval(&[]);
        if !value.is_finite() || value.fract() != 0.0 || value.abs() > i32::MAX as f64 {
            return self.error(pos, format!("exponent must be an integer, got {value}"));
        }
        Ok(Node::Pow(Box::new(base), value as i32))
    }

    fn exponent(&mut self) -> Result<Node, ExprError> {
        if self.eat_op(&['-'])?.is_some() {
            return Ok(Node::Neg(Box::new(self.exponent()?)));
        }
        self.power()
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let (tok, pos) = self.next()?;
        match tok {
            Token::Num(v) => Ok(Node::Const(v)),
            Token::LParen => {
                let inner = self.expr()?;
                match self.next()? {
                    (Token::RParen, _) => Ok(inner),
                    (tok, p) => self.error(p, format!("expected `)`, found {}", describe(&tok))),
                }
            }
            Token::Ident(name) => self.identifier(name, pos),
            tok => self.error(pos, format!("expected operand, found {}", describe(&tok))),
        }
    }

    fn identifier(&mut self, name: String, pos: usize) -> Result<Node, ExprError> {
        if let Some(func) = Builtin::from_name(&name) {
            match self.next()? {
                (Token::LParen, _) => {}
                (tok, p) => {
                    return self.error(
                        p,
                        format!("expected `(` after `{name}`, found {}", describe(&tok)),
                    )
                }
            }
            let mut args = Vec::new();
            if !matches!(self.peek()?.0, Token::RParen) {
                loop {
                    args.push(self.expr()?);
                    match self.next()? {
                        (Token::Comma, _) => continue,
                        (Token::RParen, _) => break,
                        (tok, p) => {
                            return self
                                .error(p, format!("expected `,` or `)`, found {}", describe(&tok)))
                        }
                    }
                }
            } else {
                self.next()?;
            }
            if args.len() != 1 {
                return Err(ExprError::Arity {
                    name,
                    expected: 1,
                    found: args.len(),
                    position: pos,
                });
            }
            return Ok(Node::Call(func, Box::new(args.pop().unwrap())));
        }
        if let Some(k) = name
            .strip_prefix('x')
            .filter(|d| {
                !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0')
            })
            .and_then(|d| d.parse::<usize>().ok())
        {
            if k <= self.state_dim {
                return Ok(Node::Var(k - 1));
            }
        }
        Err(ExprError::UnknownIdentifier {
            name,
            position: pos,
        })
    }
}

fn describe(tok: &Token) -> String {
    match tok {
        Token::Num(v) => format!("number `{v}`"),
        Token::Ident(s) => format!("`{s}`"),
        Token::Op(c) => format!("`{c}`"),
        Token::LParen => "`(`".into(),
        Token::RParen => "`)`".into(),
        Token::Comma => "`,`".into(),
        Token::End => "end of input".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s, x.len()).unwrap().eval(x)
    }

    #[test]
    fn evaluates_examples() {
        assert_eq!(ev("0.9*x1", &[1.0, 0.5]), 0.9);
        assert_eq!(ev("0.4*(sin(x2)+x1^2)+0.01*x2^2", &[1.0, 0.0]), 0.4);
        assert_eq!(ev("x1^2", &[-1.0, 7.0]), 1.0);
        assert_eq!(ev("sin(x2)", &[0.0, 0.0]), 0.0);
        assert_eq!(ev("1/x1", &[0.0, 0.0]), f64::INFINITY);
        assert!(ev("log(x1)", &[-1.0, 0.0]).is_nan());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2+3*4", &[0.0]), 14.0);
        assert_eq!(ev("2^3^2", &[0.0]), 512.0);
        assert_eq!(ev("-2^2", &[0.0]), -4.0);
        assert_eq!(ev("8/4/2", &[0.0]), 1.0);
        assert_eq!(ev("8-4-2", &[0.0]), 2.0);
        assert_eq!(ev("2^-1", &[0.0]), 0.5);
        assert_eq!(ev("(2+3)*4", &[0.0]), 20.0);
        assert_eq!(ev("1e-3*1000", &[0.0]), 1.0);
    }

    #[test]
    fn out_of_range_variable_is_unknown() {
        assert!(matches!(
            Expr::parse("x3", 2),
            Err(ExprError::UnknownIdentifier { ref name, .. }) if name == "x3"
        ));
        assert!(matches!(
            Expr::parse("x0", 2),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("y", 2),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("pi", 2),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn builtin_arity_is_checked() {
        assert!(matches!(
            Expr::parse("sin(x1, x2)", 2),
            Err(ExprError::Arity {
                expected: 1,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            Expr::parse("cos()", 2),
            Err(ExprError::Arity { found: 0, .. })
        ));
    }

    #[test]
    fn malformed_input_reports_position() {
        assert_eq!(
            Expr::parse("x1 + * x2", 2).unwrap_err(),
            ExprError::Parse {
                position: 5,
                message: "expected operand, found `*`".into()
            }
        );
        assert!(matches!(
            Expr::parse("(x1", 2),
            Err(ExprError::Parse { position: 3, .. })
        ));
        assert!(matches!(
            Expr::parse("x1 x2", 2),
            Err(ExprError::Parse { position: 3, .. })
        ));
        assert!(matches!(
            Expr::parse("x1 # 2", 2),
            Err(ExprError::Parse { position: 3, .. })
        ));
        assert!(matches!(
            Expr::parse("", 2),
            Err(ExprError::Parse { position: 0, .. })
        ));
    }

    #[test]
    fn non_integer_exponent_rejected() {
        assert!(matches!(
            Expr::parse("x1^0.5", 1),
            Err(ExprError::Parse { position: 3, .. })
        ));
        assert!(matches!(
            Expr::parse("x1^x1", 1),
            Err(ExprError::Parse { .. })
        ));
        assert!(Expr::parse("x1^(4/2)", 1).is_ok());
    }

    #[test]
    fn display_reparses() {
        for s in [
            "0.4*(sin(x2)+x1^2)+0.01*x2^2",
            "-(x1 - x2) - -x1",
            "x1/(x2*x1)",
            "(-x1)^2 + (x1^2)^3",
            "exp(-x1^2)/(1 + abs(x2))",
            "1e-300 + 2.5e10",
        ] {
            let e = Expr::parse(s, 2).unwrap();
            let again = Expr::parse(&e.to_string(), 2).unwrap();
            assert_eq!(e, again, "{s} -> {e}");
        }
    }

    #[test]
    fn composition_with_sec7_map() {
        let t = DynamicsMap::parse(&["0.9*x1", "0.4*(sin(x2)+x1^2)+0.01*x2^2"]).unwrap();
        let x1 = Expr::parse("x1", 2).unwrap();
        let x2 = Expr::parse("x2", 2).unwrap();
        let one = Expr::parse("1", 2).unwrap();
        assert_eq!(compose_with_map(&x1, &t).unwrap().eval(&[1.0, 0.0]), 0.9);
        assert_eq!(compose_with_map(&x2, &t).unwrap().eval(&[1.0, 0.0]), 0.4);
        assert_eq!(compose_with_map(&one, &t).unwrap().eval(&[0.3, -0.7]), 1.0);
    }

    #[test]
    fn composition_rejects_dimension_mismatch() {
        let t = DynamicsMap::parse(&["0.9*x1", "x2"]).unwrap();
        let e = Expr::parse("x1", 3).unwrap();
        assert!(matches!(
            compose_with_map(&e, &t),
            Err(ExprError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn dynamics_components_bound_to_dim() {
        assert!(matches!(
            DynamicsMap::parse(&["x1", "x3"]),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }
}
