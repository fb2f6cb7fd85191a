use super::{Expr, FunctionKind};
use crate::numeric::eval_function;

const MAX_PASSES: usize = 32;

/// Applies the fixed rewrite set until nothing changes.
///
/// Rules: constant folding of all-numeric subtrees (named constants only
/// fold when combined with a number), identity elimination (`x + 0`, `x*1`,
/// `x*0`, `x**1`, `x**0`, with `0**0 = 1`), flattening, and collection of
/// identical addends into `coefficient*term` and identical factors into
/// `term**k`. Products are never expanded and no trigonometric identities are
/// applied. Terms that contain the placeholder `C` are never collected.
pub fn simplify(e: &Expr) -> Expr {
    let mut current = pass(e);
    for _ in 0..MAX_PASSES {
        let next = pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn pass(e: &Expr) -> Expr {
    match e {
        Expr::Number(_) | Expr::Var(_) | Expr::Const(_) | Expr::Placeholder => e.clone(),
        Expr::Neg(a) => Expr::neg(pass(a)),
        Expr::Add(terms) => simplify_add(terms.iter().map(pass).collect()),
        Expr::Mul(factors) => simplify_mul(factors.iter().map(pass).collect()),
        Expr::Pow(b, x) => simplify_pow(pass(b), pass(x)),
        Expr::Call(f, args) => simplify_call(*f, args.iter().map(pass).collect()),
    }
}

fn numeric_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Number(v) => Some(*v),
        Expr::Const(c) => Some(c.value()),
        _ => None,
    }
}

fn finite(v: f64) -> Option<Expr> {
    v.is_finite().then(|| Expr::num(v))
}

/// Splits `coefficient*rest` apart; `rest` is `None` for pure numbers.
fn split_coefficient(term: Expr) -> (f64, Option<Expr>) {
    match term {
        Expr::Number(v) => (v, None),
        Expr::Neg(inner) => {
            let (c, rest) = split_coefficient(*inner);
            (-c, rest)
        }
        Expr::Mul(mut fs) if matches!(fs[0], Expr::Number(_)) => {
            let Expr::Number(c) = fs.remove(0) else { unreachable!() };
            (c, Some(Expr::mul(fs)))
        }
        other => (1.0, Some(other)),
    }
}

fn simplify_add(children: Vec<Expr>) -> Expr {
    let mut terms = Vec::new();
    for c in children {
        match c {
            Expr::Add(inner) => terms.extend(inner),
            other => terms.push(other),
        }
    }
    let has_number = terms.iter().any(|t| matches!(t, Expr::Number(_)));

    // (coefficient, term) groups in order of first appearance; `None` marks
    // the numeric constant group.
    let mut groups: Vec<(f64, Option<Expr>)> = Vec::new();
    for t in terms {
        if has_number {
            if let Some(v) = numeric_value(&t) {
                match groups.iter_mut().find(|(_, k)| k.is_none()) {
                    Some(g) => g.0 += v,
                    None => groups.push((v, None)),
                }
                continue;
            }
        }
        let (c, rest) = split_coefficient(t);
        let Some(rest) = rest else {
            match groups.iter_mut().find(|(_, k)| k.is_none()) {
                Some(g) => g.0 += c,
                None => groups.push((c, None)),
            }
            continue;
        };
        let mergeable = !rest.contains_placeholder();
        match groups.iter_mut().find(|(_, k)| mergeable && k.as_ref() == Some(&rest)) {
            Some(g) => g.0 += c,
            None => groups.push((c, Some(rest))),
        }
    }

    let mut out = Vec::new();
    for (c, term) in groups {
        match term {
            None => {
                if c != 0.0 {
                    out.push(Expr::num(c));
                }
            }
            Some(t) => {
                if c == 0.0 {
                    continue;
                }
                out.push(scale(c, t));
            }
        }
    }
    Expr::add(out)
}

fn scale(c: f64, t: Expr) -> Expr {
    if c == 1.0 {
        t
    } else if c == -1.0 {
        Expr::neg(t)
    } else {
        simplify_mul(vec![Expr::num(c), t])
    }
}

fn simplify_mul(children: Vec<Expr>) -> Expr {
    let mut sign = 1.0;
    let mut factors = Vec::new();
    let mut stack: Vec<Expr> = children.into_iter().rev().collect();
    while let Some(c) = stack.pop() {
        match c {
            Expr::Mul(inner) => stack.extend(inner.into_iter().rev()),
            Expr::Neg(inner) => {
                sign = -sign;
                stack.push(*inner);
            }
            other => factors.push(other),
        }
    }
    let has_number = factors.iter().any(|f| matches!(f, Expr::Number(_)));

    let mut coefficient = sign;
    // (base, summed numeric exponent) groups, or opaque factors
    let mut groups: Vec<(Expr, Option<f64>)> = Vec::new();
    for f in factors {
        if has_number {
            if let Some(v) = numeric_value(&f) {
                coefficient *= v;
                continue;
            }
        }
        let (base, exponent) = match f {
            Expr::Pow(b, x) => match *x {
                Expr::Number(k) => (*b, Some(k)),
                other => (Expr::Pow(b, Box::new(other)), None),
            },
            other => (other, Some(1.0)),
        };
        if let Some(k) = exponent {
            if !base.contains_placeholder() {
                if let Some(g) = groups.iter_mut().find(|(b, e)| e.is_some() && *b == base) {
                    g.1 = Some(g.1.unwrap() + k);
                    continue;
                }
            }
        }
        groups.push((base, exponent));
    }

    if coefficient == 0.0 {
        return Expr::num(0.0);
    }
    let mut out = Vec::new();
    for (base, exponent) in groups {
        match exponent {
            Some(k) => {
                let p = simplify_pow(base, Expr::num(k));
                match p {
                    Expr::Number(v) => coefficient *= v,
                    other => out.push(other),
                }
            }
            None => out.push(base),
        }
    }
    if !coefficient.is_finite() {
        // keep the unfolded form rather than produce a non-finite literal
        return Expr::Mul(out.into_iter().chain(std::iter::once(Expr::num(sign))).collect());
    }
    if out.is_empty() {
        return Expr::num(coefficient);
    }
    let product = Expr::mul(out);
    if coefficient == 1.0 {
        product
    } else if coefficient == -1.0 {
        Expr::neg(product)
    } else {
        Expr::mul(vec![Expr::num(coefficient), product])
    }
}

fn simplify_pow(base: Expr, exponent: Expr) -> Expr {
    match exponent.as_number() {
        Some(k) if k == 0.0 => return Expr::num(1.0),
        Some(k) if k == 1.0 => return base,
        _ => {}
    }
    if let (Some(b), Some(k)) = (numeric_value(&base), numeric_value(&exponent)) {
        let fold = !(matches!(base, Expr::Const(_)) && matches!(exponent, Expr::Const(_)));
        if fold {
            if b == 0.0 && k == 0.0 {
                return Expr::num(1.0);
            }
            let allowed = (b > 0.0 || k.fract() == 0.0) && !(b == 0.0 && k < 0.0);
            if allowed {
                if let Some(v) = finite(b.powf(k)) {
                    return v;
                }
            }
        }
    }
    if base.as_number() == Some(1.0) {
        return Expr::num(1.0);
    }
    if let (Expr::Pow(inner_base, inner_exp), Some(k)) = (&base, exponent.as_number()) {
        if let Some(a) = inner_exp.as_number() {
            if k.fract() == 0.0 {
                return simplify_pow((**inner_base).clone(), Expr::num(a * k));
            }
        }
    }
    Expr::pow(base, exponent)
}

fn simplify_call(f: FunctionKind, args: Vec<Expr>) -> Expr {
    let numeric: Option<Vec<f64>> = args.iter().map(Expr::as_number).collect();
    if let Some(vals) = numeric {
        if let Ok(v) = eval_function(f, &vals) {
            return Expr::num(v);
        }
    }
    Expr::call(f, args)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, print};

    fn s(text: &str) -> String {
        print(&simplify(&parse(text).unwrap()))
    }

    #[test]
    fn identities() {
        assert_eq!(s("1*x + 0"), "x");
        assert_eq!(s("x**1"), "x");
        assert_eq!(s("x**0"), "1");
        assert_eq!(s("0**0"), "1");
        assert_eq!(s("x*0 + y"), "y");
    }

    #[test]
    fn folding_and_collection() {
        assert_eq!(s("2*3*x"), "6*x");
        assert_eq!(s("x + x"), "2*x");
        assert_eq!(s("x*x*y"), "x**2*y");
        assert_eq!(s("x - x"), "0");
        assert_eq!(s("2*x - 3*x"), "-x");
        assert_eq!(s("x*x**-1"), "1");
        assert_eq!(s("(x**2)**3"), "x**6");
        assert_eq!(s("sin(0)"), "0");
        assert_eq!(s("x - 0.3 + 0.3"), "x");
    }

    #[test]
    fn named_constants_fold_only_with_numbers() {
        assert_eq!(s("pi*x"), "pi*x");
        assert_eq!(s("2*pi*x"), "6.283185307179586*x");
        assert_eq!(s("sin(pi)"), "sin(pi)");
        assert_eq!(s("E + 1"), "3.718281828459045");
    }

    #[test]
    fn invalid_numeric_subtrees_stay_symbolic() {
        assert_eq!(s("log(-1)"), "log(-1)");
        assert_eq!(s("sqrt(-4)"), "sqrt(-4)");
        assert_eq!(s("(-8)**0.5"), "(-8)**0.5");
        assert_eq!(s("0**-1"), "0**-1");
    }

    #[test]
    fn signs_are_lifted() {
        assert_eq!(s("x*(-y)"), "-x*y");
        assert_eq!(s("-(2*x)"), "-2*x");
        assert_eq!(s("(-x)*(-y)"), "x*y");
    }

    #[test]
    fn no_expansion() {
        assert_eq!(s("2*(x + y)"), "2*(x + y)");
        assert_eq!(s("(x + 1)**2"), "(x + 1)**2");
    }
}
