//! Automatic differentiation.
//!
//! Input derivatives are propagated forward with [`HyperDual`] numbers;
//! parameter gradients come from a single reverse sweep over a [`Tape`].
//! Nesting the two (`HyperDual<Var>`) gives the gradient of any function of
//! first and pure second input derivatives with respect to the parameters.

mod hyperdual;
mod scalar;
mod tape;

pub use hyperdual::HyperDual;
pub use scalar::Scalar;
pub use tape::{reverse_gradient, GradientResult, Tape, Var};

use crate::error::{HfmError, Result};

/// A differentiable vector-valued program over [`Scalar`] numbers.
pub trait Program {
    fn input_arity(&self) -> usize;
    fn eval<S: Scalar>(&self, inputs: &[S]) -> Vec<S>;
}

/// Evaluates `program` at `inputs` in hyper-dual arithmetic with seed `a`
/// on input `seed_a` and seed `b` on input `seed_b`.
///
/// The evaluation is recorded on a scratch tape so that a non-finite
/// intermediate can be reported by node index.
pub fn evaluate_hyperdual<P: Program>(
    program: &P,
    inputs: &[f64],
    seed_a: usize,
    seed_b: usize,
) -> Result<Vec<HyperDual<f64>>> {
    let n = program.input_arity();
    if inputs.len() != n {
        return Err(HfmError::ContractViolation(format!(
            "program takes {n} inputs, got {}",
            inputs.len()
        )));
    }
    if seed_a >= n || seed_b >= n {
        return Err(HfmError::ContractViolation(format!(
            "seed indices ({seed_a}, {seed_b}) out of range for {n} inputs"
        )));
    }
    let tape = Tape::new();
    let args: Vec<HyperDual<Var<'_>>> = inputs
        .iter()
        .enumerate()
        .map(|(k, &x)| HyperDual::seeded(tape.input(x), k == seed_a, k == seed_b))
        .collect();
    let out = program.eval(&args);
    if let Some(node) = tape.first_non_finite() {
        return Err(HfmError::NonFinite { node: Some(node) });
    }
    let read = |v: Var<'_>| tape.value(v);
    let out: Vec<HyperDual<f64>> = out
        .into_iter()
        .map(|h| HyperDual::new(read(h.value), read(h.d_a), read(h.d_b), read(h.d_ab)))
        .collect();
    if out
        .iter()
        .any(|h| ![h.value, h.d_a, h.d_b, h.d_ab].iter().all(|v| v.is_finite()))
    {
        return Err(HfmError::NonFinite { node: None });
    }
    Ok(out)
}

/// Derivative order checked by [`finite_difference_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdOrder {
    /// First derivatives against `(f(x+h) - f(x-h)) / 2h`.
    First,
    /// Pure second derivatives against `(f(x+h) - 2f(x) + f(x-h)) / h²`.
    Second,
}

/// Largest relative discrepancy `|AD - FD| / max(|AD|, 1e-12)` between
/// hyper-dual derivatives and central differences, over every input and
/// output of `program`.
pub fn finite_difference_check<P: Program>(
    program: &P,
    inputs: &[f64],
    order: FdOrder,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(HfmError::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |x: &[f64]| -> Result<Vec<f64>> {
        let y = program.eval::<f64>(x);
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(HfmError::NonFinite { node: None })
        }
    };
    let center = eval(inputs)?;
    let mut worst = 0.0_f64;
    let mut x = inputs.to_vec();
    for k in 0..inputs.len() {
        let ad = evaluate_hyperdual(program, inputs, k, k)?;
        x[k] = inputs[k] + step;
        let plus = eval(&x)?;
        x[k] = inputs[k] - step;
        let minus = eval(&x)?;
        x[k] = inputs[k];
        for j in 0..center.len() {
            let (exact, approx) = match order {
                FdOrder::First => (ad[j].d_a, (plus[j] - minus[j]) / (2.0 * step)),
                FdOrder::Second => (
                    ad[j].d_ab,
                    (plus[j] - 2.0 * center[j] + minus[j]) / (step * step),
                ),
            };
            worst = worst.max((exact - approx).abs() / exact.abs().max(1e-12));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sin;
    impl Program for Sin {
        fn input_arity(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            vec![x[0].sin()]
        }
    }

    struct Cube;
    impl Program for Cube {
        fn input_arity(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            vec![x[0] * x[0] * x[0]]
        }
    }

    struct Product;
    impl Program for Product {
        fn input_arity(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            vec![x[0] * x[1]]
        }
    }

    struct Constant;
    impl Program for Constant {
        fn input_arity(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, _x: &[S]) -> Vec<S> {
            vec![S::from_f64(3.5)]
        }
    }

    struct Reciprocal;
    impl Program for Reciprocal {
        fn input_arity(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            vec![S::from_f64(1.0) / x[0]]
        }
    }

    #[test]
    fn hyperdual_examples() {
        let s = evaluate_hyperdual(&Sin, &[0.0], 0, 0).unwrap()[0];
        assert_eq!((s.value, s.d_a, s.d_b, s.d_ab), (0.0, 1.0, 1.0, 0.0));
        let c = evaluate_hyperdual(&Product, &[2.0, 3.0], 0, 1).unwrap()[0];
        assert_eq!((c.value, c.d_a, c.d_b, c.d_ab), (6.0, 3.0, 2.0, 1.0));
    }

    #[test]
    fn bad_seed_is_rejected() {
        assert!(matches!(
            evaluate_hyperdual(&Sin, &[0.0], 0, 1),
            Err(HfmError::ContractViolation(_))
        ));
    }

    #[test]
    fn division_by_zero_names_a_node() {
        let err = evaluate_hyperdual(&Reciprocal, &[0.0], 0, 0).unwrap_err();
        assert!(matches!(err, HfmError::NonFinite { node: Some(_) }));
    }

    #[test]
    fn fd_check_examples() {
        let e = finite_difference_check(&Sin, &[0.7], FdOrder::First, 1e-5).unwrap();
        assert!(e < 1e-8, "sin first-order error {e}");
        let e = finite_difference_check(&Cube, &[2.0], FdOrder::Second, 1e-4).unwrap();
        assert!(e < 1e-6, "cube second-order error {e}");
        for order in [FdOrder::First, FdOrder::Second] {
            let e = finite_difference_check(&Constant, &[0.1, -2.0], order, 1e-3).unwrap();
            assert!(e < 1e-12, "constant program error {e}");
        }
    }

    #[test]
    fn fd_check_rejects_bad_step_and_non_finite() {
        assert!(finite_difference_check(&Sin, &[0.7], FdOrder::First, 0.0).is_err());
        assert!(matches!(
            finite_difference_check(&Reciprocal, &[0.0], FdOrder::First, 1e-3),
            Err(HfmError::NonFinite { .. })
        ));
    }
}
