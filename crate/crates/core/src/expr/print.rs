use super::Expr;

// binding strength of the printed form of each node
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

/// Shortest decimal that reads back to the same `f64`.
///
/// Integral values print without a fractional part; very large or very small
/// magnitudes switch to exponent notation.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v.fract() == 0.0 && a < 1e15 {
        format!("{}", v as i64)
    } else if (1e-5..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(_) => PREC_ADD,
        Expr::Mul(_) => PREC_MUL,
        // `-a*b` reads as `(-a)*b`, so a negated product binds like a product
        Expr::Neg(inner) if matches!(**inner, Expr::Mul(_)) => PREC_MUL,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Number(v) if *v < 0.0 => PREC_UNARY,
        Expr::Pow(..) => PREC_POW,
        _ => PREC_ATOM,
    }
}

/// Deterministic rendering with minimal parentheses.
pub fn print(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, &mut out);
    out
}

fn write_wrapped(e: &Expr, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        write_expr(e, out);
        out.push(')');
    } else {
        write_expr(e, out);
    }
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Number(v) => out.push_str(&format_number(*v)),
        Expr::Var(v) => out.push_str(v.name()),
        Expr::Const(c) => out.push_str(c.name()),
        Expr::Placeholder => out.push('C'),
        Expr::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(a, out);
            }
            out.push(')');
        }
        Expr::Neg(inner) => {
            out.push('-');
            let wrap = match inner.as_ref() {
                Expr::Add(_) | Expr::Neg(_) => true,
                Expr::Number(v) => *v < 0.0,
                Expr::Mul(fs) => matches!(fs[0], Expr::Number(_) | Expr::Neg(_)),
                _ => false,
            };
            write_wrapped(inner, wrap, out);
        }
        Expr::Pow(base, exponent) => {
            write_wrapped(base, precedence(base) <= PREC_POW, out);
            out.push_str("**");
            write_wrapped(exponent, precedence(exponent) < PREC_UNARY, out);
        }
        Expr::Add(terms) => {
            for (i, t) in terms.iter().enumerate() {
                if i == 0 {
                    write_wrapped(t, precedence(t) <= PREC_ADD, out);
                    continue;
                }
                match t {
                    Expr::Neg(inner) => {
                        out.push_str(" - ");
                        write_wrapped(inner, precedence(inner) <= PREC_ADD || matches!(**inner, Expr::Neg(_)), out);
                    }
                    Expr::Number(v) if *v < 0.0 => {
                        out.push_str(" - ");
                        out.push_str(&format_number(-v));
                    }
                    Expr::Mul(fs) if matches!(fs[0], Expr::Number(c) if c < 0.0) => {
                        out.push_str(" - ");
                        let mut flipped = fs.clone();
                        if let Expr::Number(c) = flipped[0] {
                            flipped[0] = Expr::Number(-c);
                        }
                        write_expr(&Expr::Mul(flipped), out);
                    }
                    _ => {
                        out.push_str(" + ");
                        write_wrapped(t, precedence(t) <= PREC_ADD, out);
                    }
                }
            }
        }
        Expr::Mul(factors) => {
            for (i, f) in factors.iter().enumerate() {
                if i == 0 {
                    let wrap = precedence(f) < PREC_MUL || matches!(f, Expr::Neg(_));
                    write_wrapped(f, wrap, out);
                    continue;
                }
                if let Expr::Pow(base, exponent) = f {
                    if matches!(**exponent, Expr::Number(v) if v == -1.0) {
                        out.push('/');
                        write_wrapped(base, precedence(base) < PREC_POW, out);
                        continue;
                    }
                }
                out.push('*');
                write_wrapped(f, precedence(f) <= PREC_UNARY, out);
            }
        }
    }
}
