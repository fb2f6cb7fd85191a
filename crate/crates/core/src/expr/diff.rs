use super::{simplify, Expr, FunctionKind, Variable};

/// Symbolic partial derivative, simplified.
pub fn differentiate(e: &Expr, v: Variable) -> Expr {
    simplify(&d(e, v))
}

fn mentions(e: &Expr, v: Variable) -> bool {
    let mut found = false;
    e.visit(&mut |n| {
        if *n == Expr::Var(v) {
            found = true;
        }
    });
    found
}

fn is_zero(e: &Expr) -> bool {
    e.as_number() == Some(0.0)
}

fn d(e: &Expr, v: Variable) -> Expr {
    if !mentions(e, v) {
        return Expr::num(0.0);
    }
    match e {
        Expr::Var(w) => Expr::num(if *w == v { 1.0 } else { 0.0 }),
        Expr::Number(_) | Expr::Const(_) | Expr::Placeholder => Expr::num(0.0),
        Expr::Neg(a) => Expr::neg(d(a, v)),
        Expr::Add(terms) => Expr::add(terms.iter().map(|t| d(t, v)).filter(|t| !is_zero(t)).collect()),
        Expr::Mul(factors) => {
            let mut terms = Vec::new();
            for i in 0..factors.len() {
                let di = d(&factors[i], v);
                if is_zero(&di) {
                    continue;
                }
                let mut product = factors.clone();
                product[i] = di;
                terms.push(Expr::mul(product));
            }
            Expr::add(terms)
        }
        Expr::Pow(base, exponent) => {
            let b = (**base).clone();
            let k = (**exponent).clone();
            if !mentions(&k, v) {
                // k * b**(k - 1) * b'
                let reduced = Expr::pow(b.clone(), Expr::add(vec![k.clone(), Expr::num(-1.0)]));
                return Expr::mul(vec![k, reduced, d(&b, v)]);
            }
            let log_b = Expr::call1(FunctionKind::Log, b.clone());
            if !mentions(&b, v) {
                return Expr::mul(vec![e.clone(), log_b, d(&k, v)]);
            }
            // b**k * (k' log b + k b'/b)
            let inner = Expr::add(vec![
                Expr::mul(vec![d(&k, v), log_b]),
                Expr::mul(vec![k, d(&b, v), Expr::pow(b, Expr::num(-1.0))]),
            ]);
            Expr::mul(vec![e.clone(), inner])
        }
        Expr::Call(f, args) => call_derivative(*f, args, v),
    }
}

fn chain(outer: Expr, inner: &Expr, v: Variable) -> Expr {
    let di = d(inner, v);
    if is_zero(&di) {
        return Expr::num(0.0);
    }
    Expr::mul(vec![outer, di])
}

fn call_derivative(f: FunctionKind, args: &[Expr], v: Variable) -> Expr {
    use FunctionKind as F;
    let z = args.last().unwrap().clone();
    let sq = |e: Expr| Expr::pow(e, Expr::num(2.0));
    let recip = |e: Expr| Expr::pow(e, Expr::num(-1.0));
    let outer = match f {
        F::Sin => Expr::call1(F::Cos, z.clone()),
        F::Cos => Expr::neg(Expr::call1(F::Sin, z.clone())),
        F::Tan => Expr::pow(Expr::call1(F::Cos, z.clone()), Expr::num(-2.0)),
        F::Asin => Expr::pow(Expr::sub(Expr::num(1.0), sq(z.clone())), Expr::num(-0.5)),
        F::Acos => Expr::neg(Expr::pow(Expr::sub(Expr::num(1.0), sq(z.clone())), Expr::num(-0.5))),
        F::Atan => recip(Expr::add(vec![Expr::num(1.0), sq(z.clone())])),
        F::Exp => Expr::call1(F::Exp, z.clone()),
        F::Log => recip(z.clone()),
        F::Sqrt => Expr::mul(vec![Expr::num(0.5), recip(Expr::call1(F::Sqrt, z.clone()))]),
        F::Sinh => Expr::call1(F::Cosh, z.clone()),
        F::Cosh => Expr::call1(F::Sinh, z.clone()),
        F::Tanh => Expr::sub(Expr::num(1.0), sq(Expr::call1(F::Tanh, z.clone()))),
        F::Abs => Expr::mul(vec![z.clone(), recip(Expr::call1(F::Abs, z.clone()))]),
        F::AiryAi => Expr::call1(F::AiryAiPrime, z.clone()),
        F::AiryAiPrime => Expr::mul(vec![z.clone(), Expr::call1(F::AiryAi, z.clone())]),
        F::BesselJ | F::BesselY => {
            let n = args[0].as_number().expect("validated Bessel order");
            let order = |k: f64| Expr::call(f, vec![Expr::num(k), z.clone()]);
            if n == 0.0 {
                Expr::neg(order(1.0))
            } else {
                Expr::mul(vec![Expr::num(0.5), Expr::sub(order(n - 1.0), order(n + 1.0))])
            }
        }
        F::Atan2 => {
            // atan2(a, b): (b a' - a b') / (a**2 + b**2)
            let (a, b) = (args[0].clone(), args[1].clone());
            let numerator = Expr::sub(
                Expr::mul(vec![b.clone(), d(&a, v)]),
                Expr::mul(vec![a.clone(), d(&b, v)]),
            );
            return Expr::mul(vec![numerator, recip(Expr::add(vec![sq(a), sq(b)]))]);
        }
    };
    chain(outer, &z, v)
}
