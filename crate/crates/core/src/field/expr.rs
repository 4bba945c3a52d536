//! Coordinate scalar expressions: parsing, printing, symbolic differentiation
//! and jet evaluation.

use std::fmt;
use std::sync::Arc;

use super::jet::Jet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Tanh,
    Sqrt,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed scalar expression over a fixed list of chart coordinates.
#[derive(Debug, Clone)]
pub struct Expression {
    root: Node,
    coords: Arc<Vec<String>>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.coords == other.coords
    }
}

/// Parses `source` against the declared coordinate names.
pub fn parse(source: &str, coordinates: &[String]) -> Result<Expression> {
    Expression::parse(source, coordinates)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
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
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                position: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^()".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(Error::Syntax {
                position: i,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    coords: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            position: self.here(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.eat('^') {
            // right-associative; the exponent may carry its own sign
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        let at = self.here();
        match self.toks.get(self.pos).map(|(_, t)| t.clone()) {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    let f = match Func::from_name(&name) {
                        Some(f) => f,
                        None => {
                            return Err(Error::Syntax {
                                position: at,
                                message: format!("unknown function '{name}'"),
                            })
                        }
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return self.syntax("expected ')'");
                    }
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                match self.coords.iter().position(|c| *c == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(Error::UndeclaredSymbol(name)),
                }
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.syntax("expected ')'");
                }
                Ok(e)
            }
            Some(Tok::Op(c)) => self.syntax(format!("unexpected '{c}'")),
            None => self.syntax("unexpected end of input"),
        }
    }
}

impl Expression {
    pub fn parse(source: &str, coordinates: &[String]) -> Result<Expression> {
        if source.trim().is_empty() {
            return Err(Error::Syntax {
                position: 0,
                message: "empty expression".into(),
            });
        }
        let toks = tokenize(source)?;
        let mut p = Parser {
            toks,
            pos: 0,
            end: source.len(),
            coords: coordinates,
        };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return p.syntax("trailing input");
        }
        Ok(Expression {
            root,
            coords: Arc::new(coordinates.to_vec()),
        })
    }

    pub fn from_node(root: Node, coords: Arc<Vec<String>>) -> Expression {
        Expression { root, coords }
    }

    pub fn constant(value: f64, coords: Arc<Vec<String>>) -> Expression {
        Expression::from_node(Node::Num(value), coords)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn coordinates(&self) -> &Arc<Vec<String>> {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Symbolic `∂/∂x^var`, with only trivial zero/one folding.
    pub fn derivative(&self, var: usize) -> Expression {
        Expression {
            root: diff(&self.root, var),
            coords: Arc::clone(&self.coords),
        }
    }

    /// Whether `x^var` occurs anywhere in the tree.
    pub fn depends_on(&self, var: usize) -> bool {
        fn walk(n: &Node, v: usize) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(i) => *i == v,
                Node::Neg(a) | Node::Call(_, a) => walk(a, v),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a, v) || walk(b, v)
                }
            }
        }
        walk(&self.root, var)
    }

    /// True for the literal constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Num(v) if v == 0.0)
    }

    /// Value at a point (order-0 jet evaluation).
    pub fn eval(&self, at: &[f64]) -> Result<f64> {
        Ok(self.evaluate_jet(at, 0)?.value())
    }

    /// Value and all mixed partials to `order` at `at`.
    pub fn evaluate_jet(&self, at: &[f64], order: usize) -> Result<Jet> {
        if at.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: at.len(),
            });
        }
        self.eval_node(&self.root, at, order)
    }

    fn eval_node(&self, node: &Node, at: &[f64], order: usize) -> Result<Jet> {
        let n = at.len();
        let domain = |node: &Node, why: &str| Error::Domain {
            subexpression: self.print_node(node),
            message: why.to_string(),
        };
        Ok(match node {
            Node::Num(v) => Jet::constant(n, order, *v),
            Node::Var(i) => Jet::variable(n, order, *i, at[*i]),
            Node::Neg(a) => -self.eval_node(a, at, order)?,
            Node::Add(a, b) => self.eval_node(a, at, order)? + self.eval_node(b, at, order)?,
            Node::Sub(a, b) => self.eval_node(a, at, order)? - self.eval_node(b, at, order)?,
            Node::Mul(a, b) => self.eval_node(a, at, order)? * self.eval_node(b, at, order)?,
            Node::Div(a, b) => {
                let den = self.eval_node(b, at, order)?;
                if den.value() == 0.0 {
                    return Err(domain(node, "division by zero"));
                }
                self.eval_node(a, at, order)? / den
            }
            Node::Pow(a, b) => {
                let base = self.eval_node(a, at, order)?;
                match constant_value(b) {
                    Some(k) if k.fract() == 0.0 && k.abs() < 1e6 => {
                        if k < 0.0 && base.value() == 0.0 {
                            return Err(domain(node, "negative power of zero"));
                        }
                        base.powi(k as i32)
                    }
                    Some(k) => {
                        if base.value() < 0.0 || (base.value() == 0.0 && order > 0) {
                            return Err(domain(node, "non-integer power of non-positive base"));
                        }
                        base.powf(k)
                    }
                    None => {
                        if base.value() <= 0.0 {
                            return Err(domain(node, "variable power of non-positive base"));
                        }
                        let e = self.eval_node(b, at, order)?;
                        (e * base.ln()).exp()
                    }
                }
            }
            Node::Call(f, a) => {
                let x = self.eval_node(a, at, order)?;
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x.value() <= 0.0 {
                            return Err(domain(node, "log of non-positive value"));
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Tanh => x.tanh(),
                    Func::Sqrt => {
                        if x.value() < 0.0 || (x.value() == 0.0 && order > 0) {
                            return Err(domain(node, "sqrt of negative value"));
                        }
                        x.sqrt()
                    }
                }
            }
        })
    }

    fn print_node(&self, node: &Node) -> String {
        let mut s = String::new();
        write_node(&mut s, node, &self.coords, 0).expect("string write");
        s
    }
}

/// Value of a variable-free subtree.
fn constant_value(node: &Node) -> Option<f64> {
    let v = match node {
        Node::Num(v) => *v,
        Node::Var(_) => return None,
        Node::Neg(a) => -constant_value(a)?,
        Node::Add(a, b) => constant_value(a)? + constant_value(b)?,
        Node::Sub(a, b) => constant_value(a)? - constant_value(b)?,
        Node::Mul(a, b) => constant_value(a)? * constant_value(b)?,
        Node::Div(a, b) => constant_value(a)? / constant_value(b)?,
        Node::Pow(a, b) => {
            let (x, k) = (constant_value(a)?, constant_value(b)?);
            if k.fract() == 0.0 && k.abs() < 1e6 {
                x.powi(k as i32)
            } else {
                x.powf(k)
            }
        }
        Node::Call(..) => return None,
    };
    v.is_finite().then_some(v)
}

fn is_zero(n: &Node) -> bool {
    matches!(n, Node::Num(v) if *v == 0.0)
}

fn is_one(n: &Node) -> bool {
    matches!(n, Node::Num(v) if *v == 1.0)
}

fn add(a: Node, b: Node) -> Node {
    if is_zero(&a) {
        b
    } else if is_zero(&b) {
        a
    } else {
        Node::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Node, b: Node) -> Node {
    if is_zero(&b) {
        a
    } else if is_zero(&a) {
        Node::Neg(Box::new(b))
    } else {
        Node::Sub(Box::new(a), Box::new(b))
    }
}

fn mul(a: Node, b: Node) -> Node {
    if is_zero(&a) || is_zero(&b) {
        Node::Num(0.0)
    } else if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Node::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Node, b: Node) -> Node {
    if is_zero(&a) {
        Node::Num(0.0)
    } else if is_one(&b) {
        a
    } else {
        Node::Div(Box::new(a), Box::new(b))
    }
}

fn call(f: Func, a: &Node) -> Node {
    Node::Call(f, Box::new(a.clone()))
}

fn diff(node: &Node, v: usize) -> Node {
    match node {
        Node::Num(_) => Node::Num(0.0),
        Node::Var(i) => Node::Num(if *i == v { 1.0 } else { 0.0 }),
        Node::Neg(a) => {
            let d = diff(a, v);
            if is_zero(&d) {
                d
            } else {
                Node::Neg(Box::new(d))
            }
        }
        Node::Add(a, b) => add(diff(a, v), diff(b, v)),
        Node::Sub(a, b) => sub(diff(a, v), diff(b, v)),
        Node::Mul(a, b) => add(
            mul(diff(a, v), (**b).clone()),
            mul((**a).clone(), diff(b, v)),
        ),
        Node::Div(a, b) => {
            // (a'b - ab') / b^2
            let num = sub(
                mul(diff(a, v), (**b).clone()),
                mul((**a).clone(), diff(b, v)),
            );
            div(
                num,
                Node::Pow(Box::new((**b).clone()), Box::new(Node::Num(2.0))),
            )
        }
        Node::Pow(a, b) => match constant_value(b) {
            Some(k) => {
                let da = diff(a, v);
                if is_zero(&da) {
                    return Node::Num(0.0);
                }
                let lowered = if k - 1.0 == 1.0 {
                    (**a).clone()
                } else {
                    Node::Pow(Box::new((**a).clone()), Box::new(num_node(k - 1.0)))
                };
                mul(mul(num_node(k), lowered), da)
            }
            None => {
                // d(a^b) = a^b (b' log a + b a'/a)
                let term = add(
                    mul(diff(b, v), call(Func::Log, a)),
                    div(mul((**b).clone(), diff(a, v)), (**a).clone()),
                );
                mul(node.clone(), term)
            }
        },
        Node::Call(f, a) => {
            let da = diff(a, v);
            if is_zero(&da) {
                return Node::Num(0.0);
            }
            let outer = match f {
                Func::Exp => node.clone(),
                Func::Log => div(Node::Num(1.0), (**a).clone()),
                Func::Sin => call(Func::Cos, a),
                Func::Cos => Node::Neg(Box::new(call(Func::Sin, a))),
                Func::Sinh => call(Func::Cosh, a),
                Func::Cosh => call(Func::Sinh, a),
                Func::Tanh => sub(
                    Node::Num(1.0),
                    Node::Pow(Box::new(node.clone()), Box::new(Node::Num(2.0))),
                ),
                Func::Sqrt => div(Node::Num(0.5), node.clone()),
            };
            mul(outer, da)
        }
    }
}

fn num_node(v: f64) -> Node {
    if v < 0.0 {
        Node::Neg(Box::new(Node::Num(-v)))
    } else {
        Node::Num(v)
    }
}

// precedence levels: 1 = sum, 2 = product, 3 = unary minus, 4 = power, 5 = atom
fn prec(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(..) => 3,
        Node::Pow(..) => 4,
        Node::Num(v) if *v < 0.0 => 3,
        _ => 5,
    }
}

fn write_node(out: &mut impl fmt::Write, node: &Node, coords: &[String], min: u8) -> fmt::Result {
    let p = prec(node);
    let paren = p < min;
    if paren {
        out.write_char('(')?;
    }
    match node {
        Node::Num(v) => {
            if *v < 0.0 {
                write!(out, "-{}", -v)?;
            } else {
                write!(out, "{v}")?;
            }
        }
        Node::Var(i) => out.write_str(&coords[*i])?,
        Node::Neg(a) => {
            out.write_char('-')?;
            write_node(out, a, coords, 3)?;
        }
        Node::Add(a, b) => {
            write_node(out, a, coords, 1)?;
            out.write_str(" + ")?;
            write_node(out, b, coords, 2)?;
        }
        Node::Sub(a, b) => {
            write_node(out, a, coords, 1)?;
            out.write_str(" - ")?;
            write_node(out, b, coords, 2)?;
        }
        Node::Mul(a, b) => {
            write_node(out, a, coords, 2)?;
            out.write_char('*')?;
            write_node(out, b, coords, 3)?;
        }
        Node::Div(a, b) => {
            write_node(out, a, coords, 2)?;
            out.write_char('/')?;
            write_node(out, b, coords, 3)?;
        }
        Node::Pow(a, b) => {
            // the base must be an atom; the exponent parses at unary level
            write_node(out, a, coords, 5)?;
            out.write_char('^')?;
            write_node(out, b, coords, 3)?;
        }
        Node::Call(f, a) => {
            write!(out, "{}(", f.name())?;
            write_node(out, a, coords, 0)?;
            out.write_char(')')?;
        }
    }
    if paren {
        out.write_char(')')?;
    }
    Ok(())
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, &self.coords, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn b(n: Node) -> Box<Node> {
        Box::new(n)
    }

    #[test]
    fn precedence_of_power_and_sum() {
        let e = parse("x^2 + y", &names(&["x", "y"])).unwrap();
        assert_eq!(
            e.root(),
            &Node::Add(b(Node::Pow(b(Node::Var(0)), b(Node::Num(2.0)))), b(Node::Var(1)))
        );
    }

    #[test]
    fn function_call() {
        let e = parse("exp(2*t)", &names(&["t", "x"])).unwrap();
        assert_eq!(
            e.root(),
            &Node::Call(Func::Exp, b(Node::Mul(b(Node::Num(2.0)), b(Node::Var(0)))))
        );
    }

    #[test]
    fn undeclared_symbol_is_named() {
        let err = parse("x + z", &names(&["x", "y"])).unwrap_err();
        assert!(matches!(err, Error::UndeclaredSymbol(ref s) if s == "z"), "{err}");
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let c = names(&["x"]);
        let e = parse("-x^2", &c).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        let e = parse("2^-x", &c).unwrap();
        assert!((e.eval(&[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let e = parse("2^3^2", &c).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 512.0);
    }

    #[test]
    fn scientific_literals_and_whitespace() {
        let c = names(&["x"]);
        let e = parse("  1.5e-3*x +2E2 ", &c).unwrap();
        assert!((e.eval(&[2.0]).unwrap() - 200.003).abs() < 1e-12);
    }

    #[test]
    fn syntax_errors_report_position() {
        let c = names(&["x"]);
        match parse("x + * 2", &c).unwrap_err() {
            Error::Syntax { position, .. } => assert_eq!(position, 4),
            e => panic!("{e}"),
        }
        assert!(parse("sin(x", &c).is_err());
        assert!(parse("foo(x)", &c).is_err());
        assert!(parse("", &c).is_err());
        assert!(parse("x $ 2", &c).is_err());
    }

    #[test]
    fn domain_errors_name_subexpression() {
        let c = names(&["x"]);
        let e = parse("1 + log(x - 2)", &c).unwrap();
        match e.evaluate_jet(&[1.0], 1).unwrap_err() {
            Error::Domain { subexpression, .. } => assert_eq!(subexpression, "log(x - 2)"),
            other => panic!("{other}"),
        }
        assert!(parse("sqrt(x)", &c).unwrap().eval(&[-1.0]).is_err());
        assert!(parse("1/x", &c).unwrap().eval(&[0.0]).is_err());
    }

    #[test]
    fn print_parse_round_trip() {
        let c = names(&["t", "x", "y"]);
        for src in [
            "x^2 + y",
            "-x^2",
            "(-x)^2",
            "a",
            "exp(2*t)*sin(x)/(1 + y^2)",
            "t - (x - y)",
            "t/(x*y)",
            "2^-x",
            "(2^3)^2",
            "-(t + x)*y",
            "sqrt(1 + x^2)^-3",
        ] {
            let Ok(e1) = parse(src, &c) else { continue };
            let printed = e1.to_string();
            let e2 = parse(&printed, &c).unwrap();
            assert_eq!(e1, e2, "{src} -> {printed}");
        }
    }

    #[test]
    fn symbolic_derivative_matches_jet() {
        let c = names(&["x", "y"]);
        let e = parse("sin(x)*cosh(y) + x^3/y + exp(x*y) + sqrt(1+x^2) + y^x", &c).unwrap();
        let at = [0.3, 0.7];
        let j = e.evaluate_jet(&at, 2).unwrap();
        for v in 0..2 {
            let d = e.derivative(v).eval(&at).unwrap();
            assert!((d - j.partial(&[v]).unwrap()).abs() < 1e-12);
        }
        let dxy = e.derivative(0).derivative(1).eval(&at).unwrap();
        assert!((dxy - j.partial(&[0, 1]).unwrap()).abs() < 1e-11);
    }
}
