//! Scalar expressions over the state variables `x1..xn`.
//!
//! Expressions are small immutable trees. They are evaluated pointwise,
//! differentiated symbolically, and evaluated over boxes with interval
//! arithmetic to bound Hessian entries on a simplex.

mod interval;
mod parse;
mod system;

use std::fmt;

pub use interval::{Interval, IntervalError};
pub use parse::{parse, ParseError};
pub use system::{hessian_pairs, inf_norm, Linearization, SystemError, SystemFile, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "tanh" => UnaryOp::Tanh,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }
}

/// Expression tree. Variables are zero-based internally and print as `x1`, `x2`, ...
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("variable x{index} is out of range for a point of dimension {dim}")]
    MissingVariable { index: usize, dim: usize },
    #[error("square root of negative value {0}")]
    NegativeSqrt(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    /// Variable `x{index+1}`.
    pub fn var(index: usize) -> Self {
        Expr::Var(index)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Largest zero-based variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::MissingVariable {
                index: i + 1,
                dim: x.len(),
            })?,
            Expr::Unary(op, a) => {
                let a = a.eval(x)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Tanh => a.tanh(),
                    UnaryOp::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::NegativeSqrt(a));
                        }
                        a.sqrt()
                    }
                    UnaryOp::Abs => a.abs(),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval(x)?;
                let b = b.eval(x)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(a, k) => a.eval(x)?.powi(*k as i32),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Exact symbolic partial derivative with respect to the zero-based variable `index`.
    pub fn differentiate(&self, index: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(j) => Expr::Const(if *j == index { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.differentiate(index);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return neg(da),
                    UnaryOp::Sin => unary(UnaryOp::Cos, a),
                    UnaryOp::Cos => neg(unary(UnaryOp::Sin, a)),
                    UnaryOp::Exp => unary(UnaryOp::Exp, a),
                    UnaryOp::Tanh => sub(Expr::Const(1.0), pow(unary(UnaryOp::Tanh, a), 2)),
                    UnaryOp::Sqrt => div(
                        Expr::Const(1.0),
                        mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, a)),
                    ),
                    // d|a| = a/|a| da, undefined at a = 0
                    UnaryOp::Abs => div(a.clone(), unary(UnaryOp::Abs, a)),
                };
                mul(outer, da)
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(index);
                let db = b.differentiate(index);
                match op {
                    BinaryOp::Add => add(da, db),
                    BinaryOp::Sub => sub(da, db),
                    BinaryOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinaryOp::Div => div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), 2),
                    ),
                }
            }
            Expr::Pow(a, k) => match k {
                0 => Expr::Const(0.0),
                _ => {
                    let da = a.differentiate(index);
                    mul(
                        mul(Expr::Const(*k as f64), pow((**a).clone(), k - 1)),
                        da,
                    )
                }
            },
        }
    }

    /// Natural interval extension over the box `x`.
    pub fn interval_eval(&self, x: &[Interval]) -> Result<Interval, IntervalError> {
        match self {
            Expr::Const(c) => Ok(Interval::point(*c)),
            Expr::Var(i) => x.get(*i).copied().ok_or(IntervalError::MissingVariable(i + 1)),
            Expr::Unary(op, a) => {
                let a = a.interval_eval(x)?;
                match op {
                    UnaryOp::Neg => Ok(-a),
                    UnaryOp::Sin => Ok(a.sin()),
                    UnaryOp::Cos => Ok(a.cos()),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Tanh => Ok(a.tanh()),
                    UnaryOp::Sqrt => a.sqrt(),
                    UnaryOp::Abs => Ok(a.abs()),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.interval_eval(x)?;
                let b = b.interval_eval(x)?;
                match op {
                    BinaryOp::Add => Ok(a + b),
                    BinaryOp::Sub => Ok(a - b),
                    BinaryOp::Mul => Ok(a * b),
                    BinaryOp::Div => a.checked_div(b),
                }
            }
            Expr::Pow(a, k) => Ok(a.interval_eval(x)?.powi(*k)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

// Smart constructors: fold constants and drop neutral elements, nothing more.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        a => Expr::Unary(UnaryOp::Neg, Box::new(a)),
    }
}

pub fn unary(op: UnaryOp, a: Expr) -> Expr {
    if op == UnaryOp::Neg {
        return neg(a);
    }
    Expr::Unary(op, Box::new(a))
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        return Expr::Const(0.0);
    }
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    if a.is_zero() {
        return Expr::Const(0.0);
    }
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
        _ if b.is_one() => a,
        _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, k: u32) -> Expr {
    match (k, a.as_const()) {
        (0, _) => Expr::Const(1.0),
        (1, _) => a,
        (_, Some(c)) => Expr::Const(c.powi(k as i32)),
        _ => Expr::Pow(Box::new(a), k),
    }
}

impl Expr {
    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Unary(UnaryOp::Neg, a) => {
                // a bare literal after '-' would fold back into a constant
                if matches!(**a, Expr::Const(_)) {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-")?;
                    a.fmt_child(f, 4)
                }
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                a.fmt_child(f, p)?;
                write!(f, " {} ", op.symbol())?;
                b.fmt_child(f, p + 1)
            }
            Expr::Pow(a, k) => {
                a.fmt_child(f, 5)?;
                write!(f, "^{k}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(e: &Expr, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h)
    }

    #[test]
    fn eval_examples() {
        let e = parse("-sin(x1)-x2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(parse("x2").unwrap().eval(&[0.3, 0.7]).unwrap(), 0.7);
        // -sin(0.5) - 0.2 from a scalar calculator
        let v = e.eval(&[0.5, 0.2]).unwrap();
        assert!((v - (-0.679_425_538_604_203)).abs() < 1e-12);
    }

    #[test]
    fn eval_domain_errors() {
        assert_eq!(
            parse("sqrt(x1)").unwrap().eval(&[-1.0]),
            Err(EvalError::NegativeSqrt(-1.0))
        );
        assert_eq!(
            parse("1/x1").unwrap().eval(&[0.0]),
            Err(EvalError::DivisionByZero)
        );
        assert!(matches!(
            parse("x3").unwrap().eval(&[0.0]),
            Err(EvalError::MissingVariable { index: 3, .. })
        ));
    }

    #[test]
    fn derivative_examples() {
        let e = parse("-sin(x1) - x2").unwrap();
        let d1 = e.differentiate(0);
        assert_eq!(d1, parse("-cos(x1)").unwrap());
        assert_eq!(d1.differentiate(0), parse("sin(x1)").unwrap());
        assert_eq!(
            parse("x2^2").unwrap().differentiate(1),
            parse("2*x2").unwrap()
        );
        assert!(parse("3").unwrap().differentiate(0).is_zero());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let exprs = [
            "-sin(x1) - x2 + x2*x1^3",
            "exp(-x1^2) * cos(x2) / (2 + x1^2)",
            "tanh(x1 - 2*x2) + sqrt(1 + x2^2)",
            "abs(x1 + 3) * x2^4 - x1*x2",
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for text in exprs {
            let e = parse(text).unwrap();
            for i in 0..2 {
                let d = e.differentiate(i);
                for _ in 0..1000 {
                    let x = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
                    let exact = d.eval(&x).unwrap();
                    let approx = central_difference(&e, &x, i);
                    assert!(
                        (exact - approx).abs() <= 1e-6 * (1.0 + exact.abs()),
                        "{text} d/dx{} at {x:?}: {exact} vs {approx}",
                        i + 1
                    );
                }
            }
        }
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "-sin(x1) - x2",
            "x2^2",
            "-x2^2",
            "(-3)^2",
            "2*-3",
            "x1 - (x2 - x1)",
            "x1 / (x2 * x1)",
            "-(3)",
            "(x1 + x2)^3 * exp(-x1)",
            "1e-7 * x1",
        ] {
            let e = parse(text).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{text} printed as {printed}");
        }
    }
}
