use crate::expr::{Expr, FunctionKind, Variable};

use super::{check, eval_function, eval_pow, EvalErrorKind};

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Num(f64),
    Slot(usize),
    X,
    Y,
    Add(usize),
    Mul(usize),
    Pow,
    Neg,
    Call(FunctionKind, usize),
    Fail,
}

/// A postfix tape for repeated evaluation of one expression.
///
/// When compiled with [`Program::compile_with_slots`], the free constants of
/// the expression (see [`crate::expr::free_constants`]) are read from the
/// slice passed to [`Program::run`] instead of being baked in.
#[derive(Clone, Debug)]
pub struct Program {
    ops: Vec<Op>,
    slots: usize,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut ops = Vec::new();
        emit(e, false, None, &mut ops);
        Program { ops, slots: 0 }
    }

    pub fn compile_with_slots(e: &Expr) -> Program {
        let mut ops = Vec::new();
        let mut next = 0;
        emit(e, false, Some(&mut next), &mut ops);
        Program { ops, slots: next }
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    pub fn run(&self, consts: &[f64], x: f64, y: f64, stack: &mut Vec<f64>) -> Result<f64, EvalErrorKind> {
        stack.clear();
        for op in &self.ops {
            match op {
                Op::Num(v) => stack.push(*v),
                Op::Slot(i) => stack.push(consts[*i]),
                Op::X => stack.push(x),
                Op::Y => stack.push(y),
                Op::Neg => {
                    let v = stack.last_mut().unwrap();
                    *v = -*v;
                }
                Op::Add(n) => {
                    let start = stack.len() - n;
                    let s: f64 = stack.drain(start..).fold(0.0, |a, b| a + b);
                    stack.push(check(s)?);
                }
                Op::Mul(n) => {
                    let start = stack.len() - n;
                    let s: f64 = stack.drain(start..).fold(1.0, |a, b| a * b);
                    stack.push(check(s)?);
                }
                Op::Pow => {
                    let k = stack.pop().unwrap();
                    let b = stack.pop().unwrap();
                    stack.push(eval_pow(b, k)?);
                }
                Op::Call(f, n) => {
                    let start = stack.len() - n;
                    let v = eval_function(*f, &stack[start..])?;
                    stack.truncate(start);
                    stack.push(v);
                }
                Op::Fail => return Err(EvalErrorKind::DomainError),
            }
        }
        Ok(stack[0])
    }
}

fn emit(e: &Expr, structural: bool, slots: Option<&mut usize>, ops: &mut Vec<Op>) {
    // reborrow helper so the counter can be threaded through recursion
    let mut slots = slots;
    match e {
        Expr::Number(v) => match slots.as_deref_mut() {
            Some(next) if !structural => {
                ops.push(Op::Slot(*next));
                *next += 1;
            }
            _ => ops.push(Op::Num(*v)),
        },
        Expr::Var(Variable::X) => ops.push(Op::X),
        Expr::Var(Variable::Y) => ops.push(Op::Y),
        Expr::Const(c) => ops.push(Op::Num(c.value())),
        Expr::Placeholder => ops.push(Op::Fail),
        Expr::Neg(a) => {
            emit(a, false, slots, ops);
            ops.push(Op::Neg);
        }
        Expr::Add(cs) | Expr::Mul(cs) => {
            for c in cs {
                emit(c, false, slots.as_deref_mut(), ops);
            }
            ops.push(if matches!(e, Expr::Add(_)) { Op::Add(cs.len()) } else { Op::Mul(cs.len()) });
        }
        Expr::Pow(b, k) => {
            emit(b, false, slots.as_deref_mut(), ops);
            emit(k, k.is_integer_number(), slots, ops);
            ops.push(Op::Pow);
        }
        Expr::Call(f, args) => {
            for (i, a) in args.iter().enumerate() {
                emit(a, i == 0 && f.has_order_argument(), slots.as_deref_mut(), ops);
            }
            ops.push(Op::Call(*f, args.len()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{free_constants, parse, with_constants};
    use crate::numeric::{eval, EvalPoint};

    #[test]
    fn agrees_with_tree_walker() {
        let srcs = [
            "2.5*exp(-0.54*sqrt(x**2 + y**2))",
            "besselj(2, 1.3*sqrt(x**2 + y**2)) - bessely(1, x + 10)",
            "log((x - 0.2)**2 + y**2)",
            "atan2(y, x)*x**-2",
            "airyai(0.7*(x - 1))",
        ];
        let mut stack = Vec::new();
        for src in srcs {
            let e = parse(src).unwrap();
            let prog = Program::compile(&e);
            for i in 0..50 {
                let x = -3.0 + 0.13 * i as f64;
                let y = 2.0 - 0.07 * i as f64;
                let a = eval(&e, EvalPoint::new(x, y)).map_err(|err| err.kind);
                let b = prog.run(&[], x, y, &mut stack);
                assert_eq!(a, b, "{src} at ({x}, {y})");
            }
        }
    }

    #[test]
    fn slots_follow_free_constants() {
        let e = parse("2*sin(3*x)**2 + besselj(1, 0.5*y)").unwrap();
        let prog = Program::compile_with_slots(&e);
        assert_eq!(prog.slot_count(), free_constants(&e).len());
        let values = [1.5, -0.4, 2.2];
        let moved = with_constants(&e, &values);
        let mut stack = Vec::new();
        let a = prog.run(&values, 0.3, 0.9, &mut stack).unwrap();
        let b = eval(&moved, EvalPoint::new(0.3, 0.9)).unwrap();
        assert_eq!(a, b);
    }
}
