//! Expression trees over the two field coordinates.
//!
//! Trees are built through the smart constructors on [`Expr`] (`add`, `mul`,
//! `neg`, `pow`, `div`, `sub`), which keep every tree in the parser's normal
//! form:
//!
//! * `Add`/`Mul` are flattened and always carry at least two children;
//! * `Neg` never wraps a `Number` (the sign moves into the literal), never
//!   wraps a `Mul` whose first factor is a `Number` (the sign moves into the
//!   coefficient), and never wraps another `Neg`;
//! * a `Mul` never starts with a `Neg` (the sign is lifted above the product).
//!
//! Printing a normal-form tree and parsing it back yields the same tree.

mod canon;
mod diff;
mod parse;
mod print;
mod simplify;

use std::cmp::Ordering;
use std::fmt;

pub use canon::canonicalize;
pub use diff::differentiate;
pub use parse::{parse, ParseError, ParseOutcome};
pub use print::{format_number, print};
pub use simplify::simplify;

/// A field coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    X,
    Y,
}

impl Variable {
    pub fn name(self) -> &'static str {
        match self {
            Variable::X => "x",
            Variable::Y => "y",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NamedConstant {
    Pi,
    E,
}

impl NamedConstant {
    pub fn name(self) -> &'static str {
        match self {
            NamedConstant::Pi => "pi",
            NamedConstant::E => "E",
        }
    }

    pub fn value(self) -> f64 {
        match self {
            NamedConstant::Pi => std::f64::consts::PI,
            NamedConstant::E => std::f64::consts::E,
        }
    }
}

/// The closed function library.
///
/// `AiryAiPrime` is the derivative kernel paired with `airyai`; it only
/// appears in derivative expressions, but the parser accepts it so that
/// printed derivatives can be read back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionKind {
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Atan2,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Abs,
    BesselJ,
    BesselY,
    AiryAi,
    AiryAiPrime,
}

impl FunctionKind {
    /// The user-facing library, in declaration order.
    pub const LIBRARY: [FunctionKind; 17] = [
        FunctionKind::Sin,
        FunctionKind::Cos,
        FunctionKind::Tan,
        FunctionKind::Asin,
        FunctionKind::Acos,
        FunctionKind::Atan,
        FunctionKind::Atan2,
        FunctionKind::Exp,
        FunctionKind::Log,
        FunctionKind::Sqrt,
        FunctionKind::Sinh,
        FunctionKind::Cosh,
        FunctionKind::Tanh,
        FunctionKind::Abs,
        FunctionKind::BesselJ,
        FunctionKind::BesselY,
        FunctionKind::AiryAi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Sin => "sin",
            FunctionKind::Cos => "cos",
            FunctionKind::Tan => "tan",
            FunctionKind::Asin => "asin",
            FunctionKind::Acos => "acos",
            FunctionKind::Atan => "atan",
            FunctionKind::Atan2 => "atan2",
            FunctionKind::Exp => "exp",
            FunctionKind::Log => "log",
            FunctionKind::Sqrt => "sqrt",
            FunctionKind::Sinh => "sinh",
            FunctionKind::Cosh => "cosh",
            FunctionKind::Tanh => "tanh",
            FunctionKind::Abs => "Abs",
            FunctionKind::BesselJ => "besselj",
            FunctionKind::BesselY => "bessely",
            FunctionKind::AiryAi => "airyai",
            FunctionKind::AiryAiPrime => "airyaiprime",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            FunctionKind::Atan2 | FunctionKind::BesselJ | FunctionKind::BesselY => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<FunctionKind> {
        FunctionKind::LIBRARY
            .iter()
            .copied()
            .chain(std::iter::once(FunctionKind::AiryAiPrime))
            .find(|f| f.name() == name)
    }

    /// Functions whose first argument is an integer order rather than a value.
    pub fn has_order_argument(self) -> bool {
        matches!(self, FunctionKind::BesselJ | FunctionKind::BesselY)
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An immutable expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Number(f64),
    Var(Variable),
    Const(NamedConstant),
    /// The shared constant placeholder `C` produced by [`canonicalize`].
    Placeholder,
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Call(FunctionKind, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        // normalise negative zero so structural equality ignores its sign
        Expr::Number(if v == 0.0 { 0.0 } else { v })
    }

    pub fn x() -> Expr {
        Expr::Var(Variable::X)
    }

    pub fn y() -> Expr {
        Expr::Var(Variable::Y)
    }

    pub fn var(v: Variable) -> Expr {
        Expr::Var(v)
    }

    pub fn add(children: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Expr::Add(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Expr::num(0.0),
            1 => flat.pop().unwrap(),
            _ => Expr::Add(flat),
        }
    }

    pub fn mul(children: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Expr::Mul(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Expr::num(1.0),
            1 => flat.pop().unwrap(),
            _ => {
                if let Expr::Neg(_) = flat[0] {
                    let Expr::Neg(inner) = flat.remove(0) else { unreachable!() };
                    let mut rest = vec![*inner];
                    rest.extend(flat);
                    Expr::neg(Expr::mul(rest))
                } else {
                    Expr::Mul(flat)
                }
            }
        }
    }

    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Number(v) => Expr::num(-v),
            Expr::Neg(inner) => *inner,
            Expr::Mul(mut factors) if matches!(factors[0], Expr::Number(_)) => {
                if let Expr::Number(c) = factors[0] {
                    factors[0] = Expr::num(-c);
                }
                Expr::Mul(factors)
            }
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn pow(base: Expr, exponent: Expr) -> Expr {
        Expr::Pow(Box::new(base), Box::new(exponent))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, Expr::neg(b)])
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::mul(vec![a, Expr::pow(b, Expr::num(-1.0))])
    }

    pub fn call(f: FunctionKind, args: Vec<Expr>) -> Expr {
        debug_assert_eq!(args.len(), f.arity(), "arity mismatch for {f}");
        Expr::Call(f, args)
    }

    pub fn call1(f: FunctionKind, arg: Expr) -> Expr {
        Expr::call(f, vec![arg])
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Expr::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_integer_number(&self) -> bool {
        matches!(self, Expr::Number(v) if v.fract() == 0.0 && v.is_finite())
    }

    /// True when the tree mentions `x` or `y`.
    pub fn has_variables(&self) -> bool {
        match self {
            Expr::Var(_) => true,
            Expr::Number(_) | Expr::Const(_) | Expr::Placeholder => false,
            Expr::Add(cs) | Expr::Mul(cs) | Expr::Call(_, cs) => cs.iter().any(Expr::has_variables),
            Expr::Pow(b, e) => b.has_variables() || e.has_variables(),
            Expr::Neg(a) => a.has_variables(),
        }
    }

    pub fn contains_placeholder(&self) -> bool {
        match self {
            Expr::Placeholder => true,
            Expr::Number(_) | Expr::Const(_) | Expr::Var(_) => false,
            Expr::Add(cs) | Expr::Mul(cs) | Expr::Call(_, cs) => {
                cs.iter().any(Expr::contains_placeholder)
            }
            Expr::Pow(b, e) => b.contains_placeholder() || e.contains_placeholder(),
            Expr::Neg(a) => a.contains_placeholder(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + match self {
            Expr::Add(cs) | Expr::Mul(cs) | Expr::Call(_, cs) => cs.iter().map(Expr::node_count).sum(),
            Expr::Pow(b, e) => b.node_count() + e.node_count(),
            Expr::Neg(a) => a.node_count(),
            _ => 0,
        }
    }

    pub fn depth(&self) -> usize {
        1 + match self {
            Expr::Add(cs) | Expr::Mul(cs) | Expr::Call(_, cs) => {
                cs.iter().map(Expr::depth).max().unwrap_or(0)
            }
            Expr::Pow(b, e) => b.depth().max(e.depth()),
            Expr::Neg(a) => a.depth(),
            _ => 0,
        }
    }

    /// Every function head in depth-first, left-to-right order.
    pub fn function_heads(&self) -> Vec<FunctionKind> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Call(f, _) = e {
                out.push(*f);
            }
        });
        out
    }

    /// Pre-order traversal.
    pub fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self {
            Expr::Add(cs) | Expr::Mul(cs) | Expr::Call(_, cs) => cs.iter().for_each(|c| c.visit(f)),
            Expr::Pow(b, e) => {
                b.visit(f);
                e.visit(f);
            }
            Expr::Neg(a) => a.visit(f),
            _ => {}
        }
    }

    fn kind_rank(&self) -> u8 {
        match self {
            Expr::Number(_) => 0,
            Expr::Placeholder => 1,
            Expr::Const(_) => 2,
            Expr::Var(_) => 3,
            Expr::Add(_) => 4,
            Expr::Mul(_) => 5,
            Expr::Pow(..) => 6,
            Expr::Neg(_) => 7,
            Expr::Call(..) => 8,
        }
    }

    /// Total structural order: node-kind rank, then function name, then
    /// children compared recursively (shorter child lists first on ties).
    pub fn structural_cmp(&self, other: &Expr) -> Ordering {
        let rank = self.kind_rank().cmp(&other.kind_rank());
        if rank != Ordering::Equal {
            return rank;
        }
        match (self, other) {
            (Expr::Number(a), Expr::Number(b)) => a.total_cmp(b),
            (Expr::Var(a), Expr::Var(b)) => a.cmp(b),
            (Expr::Const(a), Expr::Const(b)) => a.cmp(b),
            (Expr::Placeholder, Expr::Placeholder) => Ordering::Equal,
            (Expr::Add(a), Expr::Add(b)) | (Expr::Mul(a), Expr::Mul(b)) => cmp_lists(a, b),
            (Expr::Pow(b1, e1), Expr::Pow(b2, e2)) => {
                b1.structural_cmp(b2).then_with(|| e1.structural_cmp(e2))
            }
            (Expr::Neg(a), Expr::Neg(b)) => a.structural_cmp(b),
            (Expr::Call(f, a), Expr::Call(g, b)) => {
                f.name().cmp(g.name()).then_with(|| cmp_lists(a, b))
            }
            _ => unreachable!("kind ranks already differ"),
        }
    }
}

fn cmp_lists(a: &[Expr], b: &[Expr]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.structural_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

/// A reference to one refinable numeric literal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantSlot {
    /// Position among the free constants (depth-first, left to right).
    pub index: usize,
    pub value: f64,
}

/// Is the child at `child_index` of `parent` a structural constant slot?
fn is_structural_position(parent: &Expr, child_index: usize, child: &Expr) -> bool {
    match parent {
        Expr::Pow(..) => child_index == 1 && child.is_integer_number(),
        Expr::Call(f, _) => f.has_order_argument() && child_index == 0,
        _ => false,
    }
}

/// Every numeric literal except integer exponents and Bessel orders, in
/// depth-first, left-to-right order.
pub fn free_constants(e: &Expr) -> Vec<ConstantSlot> {
    fn walk(e: &Expr, structural: bool, out: &mut Vec<ConstantSlot>) {
        match e {
            Expr::Number(v) => {
                if !structural {
                    out.push(ConstantSlot { index: out.len(), value: *v });
                }
            }
            Expr::Add(cs) | Expr::Mul(cs) | Expr::Call(_, cs) => {
                for (i, c) in cs.iter().enumerate() {
                    walk(c, is_structural_position(e, i, c), out);
                }
            }
            Expr::Pow(b, x) => {
                walk(b, false, out);
                walk(x, is_structural_position(e, 1, x), out);
            }
            Expr::Neg(a) => walk(a, false, out),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(e, false, &mut out);
    out
}

/// Replaces the free constants of `e` with `values`, keeping the tree shape.
///
/// Panics if `values` does not have one entry per free constant.
pub fn with_constants(e: &Expr, values: &[f64]) -> Expr {
    fn walk(e: &Expr, structural: bool, values: &[f64], next: &mut usize) -> Expr {
        match e {
            Expr::Number(v) => {
                if structural {
                    Expr::Number(*v)
                } else {
                    let out = Expr::num(values[*next]);
                    *next += 1;
                    out
                }
            }
            Expr::Add(cs) => Expr::Add(
                cs.iter().enumerate().map(|(i, c)| walk(c, is_structural_position(e, i, c), values, next)).collect(),
            ),
            Expr::Mul(cs) => Expr::Mul(
                cs.iter().enumerate().map(|(i, c)| walk(c, is_structural_position(e, i, c), values, next)).collect(),
            ),
            Expr::Call(f, cs) => Expr::Call(
                *f,
                cs.iter().enumerate().map(|(i, c)| walk(c, is_structural_position(e, i, c), values, next)).collect(),
            ),
            Expr::Pow(b, x) => {
                let nb = walk(b, false, values, next);
                let nx = walk(x, is_structural_position(e, 1, x), values, next);
                Expr::pow(nb, nx)
            }
            Expr::Neg(a) => Expr::Neg(Box::new(walk(a, false, values, next))),
            other => other.clone(),
        }
    }
    let mut next = 0;
    let out = walk(e, false, values, &mut next);
    assert_eq!(next, values.len(), "constant count mismatch");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smart_constructors_keep_normal_form() {
        assert_eq!(Expr::neg(Expr::num(2.0)), Expr::num(-2.0));
        assert_eq!(Expr::neg(Expr::neg(Expr::x())), Expr::x());
        let m = Expr::mul(vec![Expr::num(2.0), Expr::y()]);
        assert_eq!(Expr::neg(m), Expr::Mul(vec![Expr::num(-2.0), Expr::y()]));
        let lifted = Expr::mul(vec![Expr::neg(Expr::x()), Expr::y()]);
        assert_eq!(lifted, Expr::Neg(Box::new(Expr::Mul(vec![Expr::x(), Expr::y()]))));
        let flat = Expr::add(vec![Expr::x(), Expr::add(vec![Expr::y(), Expr::num(1.0)])]);
        assert_eq!(flat, Expr::Add(vec![Expr::x(), Expr::y(), Expr::num(1.0)]));
    }

    #[test]
    fn free_constant_slots() {
        let e = parse("2.5*exp(-0.54*sqrt(x**2+y**2))").unwrap();
        let vals: Vec<f64> = free_constants(&e).iter().map(|s| s.value).collect();
        assert_eq!(vals, vec![2.5, -0.54]);
        let e = parse("besselj(1, 3.2*x)").unwrap();
        let vals: Vec<f64> = free_constants(&e).iter().map(|s| s.value).collect();
        assert_eq!(vals, vec![3.2]);
        assert!(free_constants(&parse("x + y").unwrap()).is_empty());
    }

    #[test]
    fn with_constants_substitutes_in_order() {
        let e = parse("2*sin(3*x) + y**2").unwrap();
        let out = with_constants(&e, &[5.0, 7.0]);
        assert_eq!(print(&out), "5*sin(7*x) + y**2");
    }

    #[test]
    fn structural_order_is_total_on_kinds() {
        let a = parse("sin(x)").unwrap();
        let b = parse("cos(x)").unwrap();
        assert_eq!(a.structural_cmp(&b), Ordering::Greater);
        assert_eq!(a.structural_cmp(&a), Ordering::Equal);
        assert_eq!(Expr::num(1.0).structural_cmp(&Expr::x()), Ordering::Less);
    }
}
