//! Declarative expression trees over the tape op set.
//!
//! An [`Expr`] is a reusable description; each call to [`evaluate`] or
//! [`value_and_gradient`] records it onto a fresh tape.

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Constant(Vec<f64>),
    /// `inputs[start..start + len]`.
    Input { start: usize, len: usize },
    /// `params[start..start + len]`.
    Param { start: usize, len: usize },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Tanh(Box<Expr>),
    Square(Box<Expr>),
    Sum(Box<Expr>),
    Dot(Box<Expr>, Box<Expr>),
    AffineApply {
        x: Box<Expr>,
        weight: usize,
        bias: usize,
        rows: usize,
        cols: usize,
    },
}

impl Expr {
    pub fn scalar(v: f64) -> Expr {
        Expr::Constant(vec![v])
    }

    pub fn input(i: usize) -> Expr {
        Expr::Input { start: i, len: 1 }
    }

    pub fn inputs(start: usize, len: usize) -> Expr {
        Expr::Input { start, len }
    }

    pub fn param(i: usize) -> Expr {
        Expr::Param { start: i, len: 1 }
    }

    pub fn params(start: usize, len: usize) -> Expr {
        Expr::Param { start, len }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        use Expr::*;
        match self {
            Constant(_) | Input { .. } | Param { .. } => 1,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Dot(a, b) => 1 + a.size() + b.size(),
            Neg(a) | Exp(a) | Log(a) | Tanh(a) | Square(a) | Sum(a) => 1 + a.size(),
            AffineApply { x, .. } => 1 + x.size(),
        }
    }

    fn record(&self, tape: &mut Tape<'_, f64>, inputs: &[f64]) -> Result<Var> {
        use Expr::*;
        Ok(match self {
            Constant(v) => tape.constant(v),
            Input { start, len } => {
                if start + len > inputs.len() {
                    return Err(Error::UnboundSlot(format!(
                        "input range {start}..{} but only {} inputs bound",
                        start + len,
                        inputs.len()
                    )));
                }
                tape.input(*start, &inputs[*start..start + len])
            }
            Param { start, len } => tape.param(*start, *len)?,
            Add(a, b) => {
                let (a, b) = (a.record(tape, inputs)?, b.record(tape, inputs)?);
                tape.add(a, b)?
            }
            Sub(a, b) => {
                let (a, b) = (a.record(tape, inputs)?, b.record(tape, inputs)?);
                tape.sub(a, b)?
            }
            Mul(a, b) => {
                let (a, b) = (a.record(tape, inputs)?, b.record(tape, inputs)?);
                tape.mul(a, b)?
            }
            Div(a, b) => {
                let (a, b) = (a.record(tape, inputs)?, b.record(tape, inputs)?);
                tape.div(a, b)?
            }
            Dot(a, b) => {
                let (a, b) = (a.record(tape, inputs)?, b.record(tape, inputs)?);
                tape.dot(a, b)?
            }
            Neg(a) => {
                let a = a.record(tape, inputs)?;
                tape.neg(a)
            }
            Exp(a) => {
                let a = a.record(tape, inputs)?;
                tape.exp(a)
            }
            Log(a) => {
                let a = a.record(tape, inputs)?;
                tape.log(a)?
            }
            Tanh(a) => {
                let a = a.record(tape, inputs)?;
                tape.tanh(a)
            }
            Square(a) => {
                let a = a.record(tape, inputs)?;
                tape.square(a)
            }
            Sum(a) => {
                let a = a.record(tape, inputs)?;
                tape.sum(a)
            }
            AffineApply {
                x,
                weight,
                bias,
                rows,
                cols,
            } => {
                let x = x.record(tape, inputs)?;
                tape.affine(x, *weight, *bias, *rows, *cols)?
            }
        })
    }
}

fn record_scalar<'p>(
    expr: &Expr,
    inputs: &[f64],
    params: &'p ParameterStore,
) -> Result<(Tape<'p, f64>, Var)> {
    let mut tape = Tape::new(params.values());
    let out = expr.record(&mut tape, inputs)?;
    let len = tape.value(out).len();
    if len != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: len,
        });
    }
    Ok((tape, out))
}

/// Scalar value of `expr` under the given bindings.
pub fn evaluate(expr: &Expr, inputs: &[f64], params: &ParameterStore) -> Result<f64> {
    let (tape, out) = record_scalar(expr, inputs, params)?;
    Ok(tape.scalar(out))
}

/// Value plus exact reverse-mode gradients with respect to the inputs and
/// the parameters.
pub fn value_and_gradient(
    expr: &Expr,
    inputs: &[f64],
    params: &ParameterStore,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (tape, out) = record_scalar(expr, inputs, params)?;
    let mut pgrad = vec![0.0; params.len()];
    let adj = tape.backward(out, &mut pgrad);
    Ok((tape.scalar(out), adj.input_gradient(inputs.len()), pgrad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(e: Expr) -> Box<Expr> {
        Box::new(e)
    }

    #[test]
    fn square_at_three() {
        let e = Expr::Square(b(Expr::input(0)));
        let p = ParameterStore::new();
        let (v, gx, _) = value_and_gradient(&e, &[3.0], &p).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(gx, vec![6.0]);
    }

    #[test]
    fn log_exp_roundtrip() {
        let e = Expr::Log(b(Expr::Exp(b(Expr::input(0)))));
        let v = evaluate(&e, &[1.7], &ParameterStore::new()).unwrap();
        assert!((v - 1.7).abs() < 1e-15);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let e = Expr::Tanh(b(Expr::input(0)));
        let (v, gx, _) = value_and_gradient(&e, &[0.0], &ParameterStore::new()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(gx, vec![1.0]);
    }

    #[test]
    fn dot_of_inputs_and_params() {
        let mut p = ParameterStore::new();
        p.allocate("w", &[3.0, 4.0]);
        let e = Expr::Dot(b(Expr::inputs(0, 2)), b(Expr::params(0, 2)));
        let (v, gx, gp) = value_and_gradient(&e, &[1.0, 2.0], &p).unwrap();
        assert_eq!(v, 11.0);
        assert_eq!(gx, vec![3.0, 4.0]);
        assert_eq!(gp, vec![1.0, 2.0]);
    }

    #[test]
    fn affine_gradients() {
        // sum(W x + b), W = [[1,2],[3,4]], b = [5,6]
        let mut p = ParameterStore::new();
        p.allocate("w", &[1.0, 2.0, 3.0, 4.0]);
        p.allocate("b", &[5.0, 6.0]);
        let e = Expr::Sum(b(Expr::AffineApply {
            x: b(Expr::inputs(0, 2)),
            weight: 0,
            bias: 4,
            rows: 2,
            cols: 2,
        }));
        let (v, gx, gp) = value_and_gradient(&e, &[1.0, -1.0], &p).unwrap();
        assert_eq!(v, (1.0 - 2.0 + 5.0) + (3.0 - 4.0 + 6.0));
        assert_eq!(gx, vec![4.0, 6.0]);
        assert_eq!(gp, vec![1.0, -1.0, 1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn domain_errors() {
        let p = ParameterStore::new();
        let log0 = Expr::Log(b(Expr::input(0)));
        assert!(matches!(evaluate(&log0, &[0.0], &p), Err(Error::Domain(_))));
        assert!(matches!(evaluate(&log0, &[-1.0], &p), Err(Error::Domain(_))));
        let div0 = Expr::Div(b(Expr::scalar(1.0)), b(Expr::input(0)));
        assert!(matches!(evaluate(&div0, &[0.0], &p), Err(Error::Domain(_))));
    }

    #[test]
    fn unbound_slots() {
        let p = ParameterStore::new();
        assert!(matches!(
            evaluate(&Expr::input(2), &[1.0], &p),
            Err(Error::UnboundSlot(_))
        ));
        assert!(matches!(
            evaluate(&Expr::param(0), &[], &p),
            Err(Error::UnboundSlot(_))
        ));
    }

    #[test]
    fn vector_result_is_rejected() {
        let p = ParameterStore::new();
        let e = Expr::inputs(0, 2);
        assert!(matches!(
            evaluate(&e, &[1.0, 2.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constant_expression_has_zero_gradient() {
        let p = ParameterStore::new();
        let e = Expr::Tanh(b(Expr::Mul(b(Expr::scalar(2.0)), b(Expr::scalar(0.3)))));
        let (_, gx, _) = value_and_gradient(&e, &[1.0, 2.0, 3.0], &p).unwrap();
        assert_eq!(gx, vec![0.0; 3]);
    }
}
