use super::{simplify, Expr};

const MAX_ROUNDS: usize = 16;

/// The structure-normalization operator.
///
/// Simplifies, replaces every non-structural number and named constant by
/// the placeholder `C`, collapses variable-free subtrees to `C`, keeps at
/// most one `C` per sum or product (absorbing signs into it), and sorts
/// commutative children by [`Expr::structural_cmp`]. Integer exponents and
/// Bessel orders survive as numbers. The steps repeat until the tree stops
/// changing, so the result is a fixed point and the operator is idempotent.
pub fn canonicalize(e: &Expr) -> Expr {
    let mut current = round(e);
    for _ in 0..MAX_ROUNDS {
        let next = round(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn round(e: &Expr) -> Expr {
    sort(&collapse(&replace(&simplify(e), false)))
}

fn replace(e: &Expr, structural: bool) -> Expr {
    match e {
        Expr::Number(v) if structural => Expr::Number(*v),
        Expr::Number(_) | Expr::Const(_) | Expr::Placeholder => Expr::Placeholder,
        Expr::Var(_) => e.clone(),
        Expr::Neg(a) => Expr::Neg(Box::new(replace(a, false))),
        Expr::Add(cs) => Expr::Add(cs.iter().map(|c| replace(c, false)).collect()),
        Expr::Mul(cs) => Expr::Mul(cs.iter().map(|c| replace(c, false)).collect()),
        Expr::Pow(b, x) => Expr::Pow(Box::new(replace(b, false)), Box::new(replace(x, x.is_integer_number()))),
        Expr::Call(f, args) => Expr::Call(
            *f,
            args.iter()
                .enumerate()
                .map(|(i, a)| replace(a, i == 0 && f.has_order_argument()))
                .collect(),
        ),
    }
}

fn collapse(e: &Expr) -> Expr {
    if !e.has_variables() {
        return Expr::Placeholder;
    }
    match e {
        Expr::Neg(a) => {
            let inner = collapse(a);
            match inner {
                Expr::Mul(ref fs) if fs.contains(&Expr::Placeholder) => inner,
                _ => Expr::neg(inner),
            }
        }
        Expr::Add(cs) => {
            let mut out = Vec::new();
            let mut has_c = false;
            for c in cs.iter().map(collapse) {
                if c == Expr::Placeholder {
                    has_c = true;
                } else {
                    out.push(c);
                }
            }
            if has_c {
                out.insert(0, Expr::Placeholder);
            }
            Expr::add(out)
        }
        Expr::Mul(cs) => {
            let mut negative = false;
            let mut has_c = false;
            let mut out = Vec::new();
            for c in cs.iter().map(collapse) {
                let c = match c {
                    Expr::Neg(inner) => {
                        negative = !negative;
                        *inner
                    }
                    other => other,
                };
                match c {
                    Expr::Placeholder => has_c = true,
                    Expr::Mul(inner) => {
                        for f in inner {
                            if f == Expr::Placeholder {
                                has_c = true;
                            } else {
                                out.push(f);
                            }
                        }
                    }
                    other => out.push(other),
                }
            }
            if has_c {
                out.insert(0, Expr::Placeholder);
                return Expr::mul(out);
            }
            let product = Expr::mul(out);
            if negative {
                Expr::neg(product)
            } else {
                product
            }
        }
        Expr::Pow(b, x) => Expr::pow(collapse(b), collapse_structural(x)),
        Expr::Call(f, args) => Expr::Call(
            *f,
            args.iter()
                .enumerate()
                .map(|(i, a)| if i == 0 && f.has_order_argument() { a.clone() } else { collapse(a) })
                .collect(),
        ),
        Expr::Var(_) => e.clone(),
        Expr::Number(_) | Expr::Const(_) | Expr::Placeholder => unreachable!("variable-free"),
    }
}

fn collapse_structural(e: &Expr) -> Expr {
    if e.is_integer_number() {
        e.clone()
    } else {
        collapse(e)
    }
}

fn sort(e: &Expr) -> Expr {
    match e {
        Expr::Add(cs) => {
            let mut v: Vec<Expr> = cs.iter().map(sort).collect();
            v.sort_by(Expr::structural_cmp);
            Expr::Add(v)
        }
        Expr::Mul(cs) => {
            let mut v: Vec<Expr> = cs.iter().map(sort).collect();
            v.sort_by(Expr::structural_cmp);
            Expr::Mul(v)
        }
        Expr::Neg(a) => Expr::Neg(Box::new(sort(a))),
        Expr::Pow(b, x) => Expr::pow(sort(b), sort(x)),
        Expr::Call(f, args) => Expr::Call(*f, args.iter().map(sort).collect()),
        _ => e.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, print};

    fn c(text: &str) -> Expr {
        canonicalize(&parse(text).unwrap())
    }

    #[test]
    fn constants_become_one_placeholder() {
        assert_eq!(print(&c("2*sin(3*x)")), "C*sin(C*x)");
        assert_eq!(c("2*sin(3*x)"), c("5*sin(7*x)"));
        assert_eq!(c("-2*sin(3*x)"), c("5*sin(-7*x)"));
        assert_ne!(c("sin(x)"), c("cos(x)"));
    }

    #[test]
    fn structural_numbers_survive() {
        assert_eq!(print(&c("x**2 + y**2")), "x**2 + y**2");
        assert_ne!(c("x**2"), c("x**3"));
        assert_eq!(print(&c("3*besselj(1, 2*x)")), "C*besselj(1, C*x)");
        assert_ne!(c("besselj(0, x)"), c("besselj(1, x)"));
        assert_eq!(print(&c("x**2.5")), "x**C");
    }

    #[test]
    fn constant_subtrees_collapse() {
        assert_eq!(print(&c("x + 2 + pi")), "C + x");
        assert_eq!(print(&c("sin(pi)*x + log(3)")), "C + C*x");
        assert_eq!(print(&c("exp(2)**x")), "C**x");
        assert_eq!(print(&c("-(2*x*y)")), "C*x*y");
    }

    #[test]
    fn commutative_children_sorted() {
        assert_eq!(c("y + x"), c("x + y"));
        assert_eq!(c("sin(x)*cos(y)*3"), c("2*cos(y)*sin(x)"));
    }

    #[test]
    fn idempotent_on_examples() {
        for src in [
            "2.5*exp(-0.54*sqrt(x**2 + y**2))",
            "x - 2*y + 3",
            "0.3*besselj(2, 1.7*sqrt(x**2 + y**2))",
            "-x*y + sin(x)*cos(y)",
            "1.2*log(0.8*sqrt((x - 0.3)**2 + (y + 1.1)**2))",
            "x/(y + 2)",
        ] {
            let once = c(src);
            assert_eq!(canonicalize(&once), once, "{src}");
        }
    }
}
