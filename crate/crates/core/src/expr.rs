//! Closed expression language for branch formulas: rational constants, `x`, `y`,
//! `+ - * /`, `abs`, `sign` and rational powers. Trees support symbolic differentiation and
//! compile to a flat stack program evaluated either rigorously or in plain doubles.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::interval::{Interval, Rational};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    X,
    Y,
    Const(Rational),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Abs(Box<Expr>),
    Sign(Box<Expr>),
    Pow(Box<Expr>, Rational),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

impl Expr {
    pub fn constant(r: Rational) -> Expr {
        Expr::Const(r)
    }

    pub fn int(n: i64) -> Expr {
        Expr::Const(Rational::from_integer(n))
    }

    pub fn rat(n: i64, d: i64) -> Expr {
        Expr::Const(Rational::new(n, d))
    }

    fn as_const(&self) -> Option<&Rational> {
        match self {
            Expr::Const(r) => Some(r),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const().is_some_and(|r| r.is_zero())
    }

    fn is_one(&self) -> bool {
        self.as_const().is_some_and(|r| r.is_one())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p + q),
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p - q),
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p * q),
            _ if a.is_zero() || b.is_zero() => Expr::int(0),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(p), Expr::Const(q)) if !q.is_zero() => Expr::Const(p.checked_div(q).unwrap()),
            _ if a.is_zero() => Expr::int(0),
            _ if b.is_one() => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(p) => Expr::Const(-p),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn abs(a: Expr) -> Expr {
        match a {
            Expr::Const(p) => Expr::Const(p.abs()),
            other => Expr::Abs(Box::new(other)),
        }
    }

    pub fn pow(a: Expr, p: Rational) -> Expr {
        if p.is_zero() {
            return Expr::int(1);
        }
        if p.is_one() {
            return a;
        }
        if let (Expr::Const(c), Some(n)) = (&a, p.to_i32()) {
            if n > 0 {
                let mut acc = Rational::one();
                for _ in 0..n {
                    acc = &acc * c;
                }
                return Expr::Const(acc);
            }
        }
        Expr::Pow(Box::new(a), p)
    }

    /// Symbolic partial derivative. `abs` differentiates to `sign`, whose derivative is
    /// taken as zero (valid away from the kink).
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Expr::X => Expr::int(if v == Var::X { 1 } else { 0 }),
            Expr::Y => Expr::int(if v == Var::Y { 1 } else { 0 }),
            Expr::Const(_) | Expr::Sign(_) => Expr::int(0),
            Expr::Add(a, b) => Expr::add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => Expr::sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(v), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(v)),
            ),
            Expr::Div(a, b) => {
                let num = Expr::sub(
                    Expr::mul(a.diff(v), (**b).clone()),
                    Expr::mul((**a).clone(), b.diff(v)),
                );
                Expr::div(num, Expr::pow((**b).clone(), Rational::from_integer(2)))
            }
            Expr::Neg(a) => Expr::neg(a.diff(v)),
            Expr::Abs(a) => Expr::mul(Expr::Sign(a.clone()), a.diff(v)),
            Expr::Pow(a, p) => {
                let lower = Expr::pow((**a).clone(), p - &Rational::one());
                Expr::mul(Expr::mul(Expr::Const(p.clone()), lower), a.diff(v))
            }
        }
    }

    /// Replace `x` and `y` by the given expressions.
    pub fn subst(&self, x: &Expr, y: &Expr) -> Expr {
        match self {
            Expr::X => x.clone(),
            Expr::Y => y.clone(),
            Expr::Const(_) => self.clone(),
            Expr::Add(a, b) => Expr::add(a.subst(x, y), b.subst(x, y)),
            Expr::Sub(a, b) => Expr::sub(a.subst(x, y), b.subst(x, y)),
            Expr::Mul(a, b) => Expr::mul(a.subst(x, y), b.subst(x, y)),
            Expr::Div(a, b) => Expr::div(a.subst(x, y), b.subst(x, y)),
            Expr::Neg(a) => Expr::neg(a.subst(x, y)),
            Expr::Abs(a) => Expr::abs(a.subst(x, y)),
            Expr::Sign(a) => Expr::Sign(Box::new(a.subst(x, y))),
            Expr::Pow(a, p) => Expr::pow(a.subst(x, y), p.clone()),
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::X => v == Var::X,
            Expr::Y => v == Var::Y,
            Expr::Const(_) => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
            Expr::Neg(a) | Expr::Abs(a) | Expr::Sign(a) | Expr::Pow(a, _) => a.depends_on(v),
        }
    }

    pub fn compile(&self) -> Result<Compiled> {
        let mut ops = Vec::new();
        self.emit(&mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::X | Op::Y | Op::Const(..) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        if max_depth > STACK {
            return Err(Error::Parse(format!("expression too deep ({max_depth} > {STACK})")));
        }
        Ok(Compiled { ops, source: self.clone() })
    }

    fn emit(&self, ops: &mut Vec<Op>) {
        match self {
            Expr::X => ops.push(Op::X),
            Expr::Y => ops.push(Op::Y),
            Expr::Const(r) => ops.push(Op::Const(r.enclosure(), r.to_f64())),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.emit(ops);
                b.emit(ops);
                ops.push(match self {
                    Expr::Add(..) => Op::Add,
                    Expr::Sub(..) => Op::Sub,
                    Expr::Mul(..) => Op::Mul,
                    _ => Op::Div,
                });
            }
            Expr::Neg(a) => {
                a.emit(ops);
                ops.push(Op::Neg);
            }
            Expr::Abs(a) => {
                a.emit(ops);
                ops.push(Op::Abs);
            }
            Expr::Sign(a) => {
                a.emit(ops);
                ops.push(Op::Sign);
            }
            Expr::Pow(a, p) => {
                a.emit(ops);
                match p.to_i32() {
                    Some(n) => ops.push(Op::PowInt(n)),
                    None => ops.push(Op::Pow {
                        p: p.enclosure(),
                        pf: p.to_f64(),
                        positive: p.is_positive(),
                    }),
                }
            }
        }
    }
}

const STACK: usize = 24;

#[derive(Clone, Debug)]
enum Op {
    X,
    Y,
    Const(Interval, f64),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Sign,
    PowInt(i32),
    Pow { p: Interval, pf: f64, positive: bool },
}

/// Stack program for an [`Expr`].
#[derive(Clone, Debug)]
pub struct Compiled {
    ops: Vec<Op>,
    source: Expr,
}

impl Compiled {
    pub fn source(&self) -> &Expr {
        &self.source
    }

    /// Rigorous enclosure of the expression over the box `x × y`. Non-integer powers are
    /// taken on the nonnegative part of their base.
    pub fn eval(&self, x: Interval, y: Interval) -> Result<Interval> {
        let mut st = [Interval::point(0.0); STACK];
        let mut n = 0usize;
        for op in &self.ops {
            match op {
                Op::X => {
                    st[n] = x;
                    n += 1;
                }
                Op::Y => {
                    st[n] = y;
                    n += 1;
                }
                Op::Const(c, _) => {
                    st[n] = *c;
                    n += 1;
                }
                Op::Add => {
                    n -= 1;
                    st[n - 1] = st[n - 1] + st[n];
                }
                Op::Sub => {
                    n -= 1;
                    st[n - 1] = st[n - 1] - st[n];
                }
                Op::Mul => {
                    n -= 1;
                    st[n - 1] = st[n - 1] * st[n];
                }
                Op::Div => {
                    n -= 1;
                    st[n - 1] = st[n - 1].checked_div(&st[n])?;
                }
                Op::Neg => st[n - 1] = -st[n - 1],
                Op::Abs => st[n - 1] = st[n - 1].abs(),
                Op::Sign => st[n - 1] = st[n - 1].sign(),
                Op::PowInt(k) => st[n - 1] = st[n - 1].powi(*k)?,
                Op::Pow { p, positive, .. } => {
                    if st[n - 1].hi() < 0.0 {
                        return Err(Error::Domain { op: "pow", arg: st[n - 1].to_string() });
                    }
                    st[n - 1] = st[n - 1].pow_nonneg(p, *positive);
                }
            }
        }
        Ok(st[0])
    }

    pub fn eval_x(&self, x: Interval) -> Result<Interval> {
        self.eval(x, Interval::point(0.0))
    }

    /// Plain double evaluation, for guesses and simulation only.
    pub fn eval_f64(&self, x: f64, y: f64) -> f64 {
        let mut st = [0.0f64; STACK];
        let mut n = 0usize;
        for op in &self.ops {
            match op {
                Op::X => {
                    st[n] = x;
                    n += 1;
                }
                Op::Y => {
                    st[n] = y;
                    n += 1;
                }
                Op::Const(_, c) => {
                    st[n] = *c;
                    n += 1;
                }
                Op::Add => {
                    n -= 1;
                    st[n - 1] += st[n];
                }
                Op::Sub => {
                    n -= 1;
                    st[n - 1] -= st[n];
                }
                Op::Mul => {
                    n -= 1;
                    st[n - 1] *= st[n];
                }
                Op::Div => {
                    n -= 1;
                    st[n - 1] /= st[n];
                }
                Op::Neg => st[n - 1] = -st[n - 1],
                Op::Abs => st[n - 1] = st[n - 1].abs(),
                Op::Sign => st[n - 1] = if st[n - 1] == 0.0 { 0.0 } else { st[n - 1].signum() },
                Op::PowInt(k) => st[n - 1] = st[n - 1].powi(*k),
                Op::Pow { pf, .. } => st[n - 1] = st[n - 1].max(0.0).powf(*pf),
            }
        }
        st[0]
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::X => write!(f, "x"),
            Expr::Y => write!(f, "y"),
            Expr::Const(r) if r.is_integer() && !r.is_negative() => write!(f, "{r}"),
            Expr::Const(r) => write!(f, "({r})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "{a}/{b}"),
            Expr::Neg(a) => write!(f, "-{a}"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Sign(a) => write!(f, "sign({a})"),
            Expr::Pow(a, p) => write!(f, "{a}^({p})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(Rational),
    Ident(String),
    Sym(char),
}

fn lex(s: &str) -> Result<Vec<Tok>> {
    let cs: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let st = i;
            while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                i += 1;
            }
            let lit: String = cs[st..i].iter().collect();
            out.push(Tok::Num(lit.parse()?));
        } else if c.is_ascii_alphabetic() {
            let st = i;
            while i < cs.len() && cs[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Ident(cs[st..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character {c:?} in {s:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Parse(format!("expected {c:?} at token {}", self.pos)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            if self.eat('+') {
                e = Expr::add(e, self.term()?);
            } else if self.eat('-') {
                e = Expr::sub(e, self.term()?);
            } else {
                return Ok(e);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            if self.eat('*') {
                e = Expr::mul(e, self.unary()?);
            } else if self.eat('/') {
                let d = self.unary()?;
                if d.is_zero() {
                    return Err(Error::Parse("division by constant zero".into()));
                }
                e = Expr::div(e, d);
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::neg(self.unary()?));
        }
        if self.eat('+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat('^') {
            let ex = self.unary()?;
            let p = ex
                .as_const()
                .cloned()
                .ok_or_else(|| Error::Parse("exponent must be a constant".into()))?;
            return Ok(Expr::pow(base, p));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(r)) => {
                self.pos += 1;
                Ok(Expr::Const(r))
            }
            Some(Tok::Ident(id)) => {
                self.pos += 1;
                match id.as_str() {
                    "x" => Ok(Expr::X),
                    "y" => Ok(Expr::Y),
                    "abs" | "sign" => {
                        self.expect('(')?;
                        let e = self.expr()?;
                        self.expect(')')?;
                        Ok(if id == "abs" { Expr::abs(e) } else { Expr::Sign(Box::new(e)) })
                    }
                    _ => Err(Error::Parse(format!("unknown identifier {id:?}"))),
                }
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        let mut p = Parser { toks: lex(s)?, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Parse(format!("trailing input in {s:?}")));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_evaluate() {
        let e: Expr = "109/64*(1/2 - x)^(51/64)".parse().unwrap();
        let c = e.compile().unwrap();
        let v = c.eval_x(Interval::point(0.0)).unwrap();
        let expect = 109.0 / 64.0 * 0.5f64.powf(51.0 / 64.0);
        assert!(v.contains(expect) || (v.mid() - expect).abs() < 1e-15);
        assert!((c.eval_f64(0.0, 0.0) - expect).abs() < 1e-15);
        let g: Expr = "(y - 0.5)*abs(x - 1/2)^2 + 1/4".parse().unwrap();
        assert_eq!(g.compile().unwrap().eval_f64(0.0, 1.0), 0.375);
        assert!("x^y".parse::<Expr>().is_err());
        assert!("x +".parse::<Expr>().is_err());
        assert!("q".parse::<Expr>().is_err());
    }

    #[test]
    fn derivative_of_power_branch() {
        let e: Expr = "2*(1/2 - x)^(3/2)".parse().unwrap();
        let d = e.diff(Var::X).compile().unwrap();
        // d/dx = -3 (1/2 - x)^(1/2)
        let v = d.eval_x(Interval::point(0.25)).unwrap();
        assert!(v.contains(-3.0 * 0.5) || (v.mid() + 1.5).abs() < 1e-15);
        let dy = e.diff(Var::Y);
        assert_eq!(dy, Expr::int(0));
    }

    #[test]
    fn folding_and_substitution() {
        assert_eq!(Expr::add(Expr::int(2), Expr::rat(1, 2)), Expr::rat(5, 2));
        assert_eq!(Expr::mul(Expr::int(1), Expr::X), Expr::X);
        let t: Expr = "2*x".parse().unwrap();
        let tt = t.subst(&t, &Expr::Y);
        assert_eq!(tt.compile().unwrap().eval_f64(0.25, 0.0), 1.0);
    }
}
