//! Double-precision evaluation of expressions.

mod program;
pub mod special;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::{print, Expr, FunctionKind, Variable};

pub use program::Program;
pub use special::{airy_ai, airy_ai_prime, bessel_j, bessel_y};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub x: f64,
    pub y: f64,
}

impl EvalPoint {
    pub fn new(x: f64, y: f64) -> EvalPoint {
        EvalPoint { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalErrorKind {
    /// A kernel argument lies outside its domain.
    DomainError,
    /// NaN appeared.
    NonFinite,
    /// A value overflowed to infinity.
    Overflow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub point: EvalPoint,
    /// Printed form of the failing node.
    pub node: String,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} evaluating `{}` at ({}, {})", self.kind, self.node, self.point.x, self.point.y)
    }
}

impl std::error::Error for EvalError {}

fn check(v: f64) -> Result<f64, EvalErrorKind> {
    if v.is_nan() {
        Err(EvalErrorKind::NonFinite)
    } else if v.is_infinite() {
        Err(EvalErrorKind::Overflow)
    } else {
        Ok(v)
    }
}

fn bessel_order(n: f64) -> Result<u32, EvalErrorKind> {
    if n >= 0.0 && n.fract() == 0.0 && n <= 10_000.0 {
        Ok(n as u32)
    } else {
        Err(EvalErrorKind::DomainError)
    }
}

/// Applies a library kernel to already-evaluated arguments.
pub fn eval_function(f: FunctionKind, args: &[f64]) -> Result<f64, EvalErrorKind> {
    use EvalErrorKind::DomainError;
    use FunctionKind as F;
    let z = *args.last().expect("at least one argument");
    let v = match f {
        F::Sin => z.sin(),
        F::Cos => z.cos(),
        F::Tan => z.tan(),
        F::Asin | F::Acos if z.abs() > 1.0 => return Err(DomainError),
        F::Asin => z.asin(),
        F::Acos => z.acos(),
        F::Atan => z.atan(),
        F::Atan2 => {
            let a = args[0].atan2(args[1]);
            if a == -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                a
            }
        }
        F::Exp => z.exp(),
        F::Log if z <= 0.0 => return Err(DomainError),
        F::Log => z.ln(),
        F::Sqrt if z < 0.0 => return Err(DomainError),
        F::Sqrt => z.sqrt(),
        F::Sinh => z.sinh(),
        F::Cosh => z.cosh(),
        F::Tanh => z.tanh(),
        F::Abs => z.abs(),
        F::BesselJ => bessel_j(bessel_order(args[0])?, z),
        F::BesselY if z <= 0.0 => return Err(DomainError),
        F::BesselY => bessel_y(bessel_order(args[0])?, z),
        F::AiryAi => airy_ai(z),
        F::AiryAiPrime => airy_ai_prime(z),
    };
    check(v)
}

/// `b**k` with real-valued semantics.
pub fn eval_pow(b: f64, k: f64) -> Result<f64, EvalErrorKind> {
    if b == 0.0 && k == 0.0 {
        return Ok(1.0);
    }
    if b < 0.0 && k.fract() != 0.0 {
        return Err(EvalErrorKind::DomainError);
    }
    if b == 0.0 && k < 0.0 {
        return Err(EvalErrorKind::DomainError);
    }
    let v = if k.fract() == 0.0 && k.abs() <= i32::MAX as f64 { b.powi(k as i32) } else { b.powf(k) };
    check(v)
}

fn eval_inner(e: &Expr, p: EvalPoint) -> Result<f64, (EvalErrorKind, &Expr)> {
    let wrap = |r: Result<f64, EvalErrorKind>| r.map_err(|k| (k, e));
    match e {
        Expr::Number(v) => Ok(*v),
        Expr::Var(Variable::X) => Ok(p.x),
        Expr::Var(Variable::Y) => Ok(p.y),
        Expr::Const(c) => Ok(c.value()),
        Expr::Placeholder => Err((EvalErrorKind::DomainError, e)),
        Expr::Neg(a) => Ok(-eval_inner(a, p)?),
        Expr::Add(cs) => {
            let mut s = 0.0;
            for c in cs {
                s += eval_inner(c, p)?;
            }
            wrap(check(s))
        }
        Expr::Mul(cs) => {
            let mut s = 1.0;
            for c in cs {
                s *= eval_inner(c, p)?;
            }
            wrap(check(s))
        }
        Expr::Pow(b, k) => {
            let bv = eval_inner(b, p)?;
            let kv = eval_inner(k, p)?;
            wrap(eval_pow(bv, kv))
        }
        Expr::Call(f, args) => {
            let mut vals = [0.0; 2];
            for (i, a) in args.iter().enumerate() {
                vals[i] = eval_inner(a, p)?;
            }
            wrap(eval_function(*f, &vals[..args.len()]))
        }
    }
}

/// Evaluates `e` at `p`; any NaN, infinity, or kernel-domain violation is an
/// error naming the innermost failing node.
pub fn eval(e: &Expr, p: EvalPoint) -> Result<f64, EvalError> {
    eval_inner(e, p).map_err(|(kind, node)| EvalError { kind, point: p, node: print(node) })
}

/// Pointwise evaluation; failures are recorded per point.
pub fn eval_grid(e: &Expr, grid: &[EvalPoint]) -> Vec<Result<f64, EvalError>> {
    let program = Program::compile(e);
    let mut stack = Vec::new();
    grid.iter()
        .map(|&p| match program.run(&[], p.x, p.y, &mut stack) {
            Ok(v) => Ok(v),
            // rerun through the tree walker for a precise diagnostic
            Err(_) => Err(eval(e, p).expect_err("compiled and tree evaluation disagree")),
        })
        .collect()
}
