use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;
use crate::error::{HfmError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst(f64),
    MulConst(f64),
    DivConst(f64),
    ConstSub(f64),
    ConstDiv(f64),
    Sin,
    Cos,
    Tanh,
    Exp,
    Powi(i32),
    Powf(f64),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    args: [usize; 2],
    value: f64,
    partials: [f64; 2],
}

impl Node {
    fn arity(&self) -> usize {
        match self.op {
            Op::Input => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            _ => 1,
        }
    }
}

/// Evaluates an operation and its local partials from argument values.
#[inline]
fn apply(op: Op, a: f64, b: f64) -> (f64, [f64; 2]) {
    match op {
        Op::Input => (a, [0.0, 0.0]),
        Op::Add => (a + b, [1.0, 1.0]),
        Op::Sub => (a - b, [1.0, -1.0]),
        Op::Mul => (a * b, [b, a]),
        Op::Div => {
            let v = a / b;
            (v, [1.0 / b, -v / b])
        }
        Op::Neg => (-a, [-1.0, 0.0]),
        Op::AddConst(c) => (a + c, [1.0, 0.0]),
        Op::MulConst(c) => (a * c, [c, 0.0]),
        Op::DivConst(c) => (a / c, [1.0 / c, 0.0]),
        Op::ConstSub(c) => (c - a, [-1.0, 0.0]),
        Op::ConstDiv(c) => {
            let v = c / a;
            (v, [-v / a, 0.0])
        }
        Op::Sin => {
            let (s, co) = a.sin_cos();
            (s, [co, 0.0])
        }
        Op::Cos => {
            let (s, co) = a.sin_cos();
            (co, [-s, 0.0])
        }
        Op::Tanh => {
            let t = a.tanh();
            (t, [1.0 - t * t, 0.0])
        }
        Op::Exp => {
            let e = a.exp();
            (e, [e, 0.0])
        }
        Op::Powi(n) => {
            let d = if n == 0 { 0.0 } else { n as f64 * a.powi(n - 1) };
            (a.powi(n), [d, 0.0])
        }
        Op::Powf(p) => (a.powf(p), [p * a.powf(p - 1.0), 0.0]),
    }
}

/// Reverse-mode tape of elementary operations.
///
/// Nodes are appended in evaluation order, so every node's arguments precede
/// it. A recorded tape can be replayed with new input values: the topology
/// is fixed at recording time and only values and local partials change.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    inputs: RefCell<Vec<usize>>,
}

/// Handle to a value recorded on a [`Tape`], or a free constant.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: usize,
    value: f64,
}

/// Loss value and its gradient with respect to a list of tracked variables.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of registered input variables.
    pub fn input_count(&self) -> usize {
        self.inputs.borrow().len()
    }

    /// Registers a new input variable.
    pub fn input(&self, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op: Op::Input,
            args: [index, index],
            value,
            partials: [0.0, 0.0],
        });
        self.inputs.borrow_mut().push(index);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn inputs<'t>(&'t self, values: &[f64]) -> Vec<Var<'t>> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    fn push(&self, op: Op, args: [usize; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let a = nodes[args[0]].value;
        let b = nodes[args[1]].value;
        let (value, partials) = apply(op, a, b);
        let index = nodes.len();
        nodes.push(Node {
            op,
            args,
            value,
            partials,
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// Handle to an already recorded node.
    pub(crate) fn var_at(&self, index: usize) -> Var<'_> {
        let value = self.nodes.borrow()[index].value;
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub(crate) fn node_value(&self, index: usize) -> f64 {
        self.nodes.borrow()[index].value
    }

    /// Current value of a variable (reflects the latest replay).
    pub fn value(&self, var: Var<'_>) -> f64 {
        match var.tape {
            Some(_) => self.nodes.borrow()[var.index].value,
            None => var.value,
        }
    }

    /// Index of the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.nodes.borrow().iter().position(|n| !n.value.is_finite())
    }

    /// Re-evaluates the recorded program with new input values, given in
    /// registration order.
    pub fn replay(&self, input_values: &[f64]) -> Result<()> {
        let inputs = self.inputs.borrow();
        if input_values.len() != inputs.len() {
            return Err(HfmError::ContractViolation(format!(
                "replay expects {} inputs, got {}",
                inputs.len(),
                input_values.len()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        for (&idx, &v) in inputs.iter().zip(input_values) {
            nodes[idx].value = v;
        }
        for i in 0..nodes.len() {
            let node = nodes[i];
            if node.op == Op::Input {
                continue;
            }
            let a = nodes[node.args[0]].value;
            let b = nodes[node.args[1]].value;
            let (value, partials) = apply(node.op, a, b);
            if !value.is_finite() {
                return Err(HfmError::NonFinite { node: Some(i) });
            }
            nodes[i].value = value;
            nodes[i].partials = partials;
        }
        Ok(())
    }

    /// Reverse sweep from `output`, writing the adjoint of every node into
    /// `adjoints` (resized to the tape length).
    pub fn adjoints_into(&self, output: Var<'_>, adjoints: &mut Vec<f64>) -> Result<()> {
        self.check_owned(output)?;
        let nodes = self.nodes.borrow();
        adjoints.clear();
        adjoints.resize(nodes.len(), 0.0);
        if output.tape.is_none() {
            return Ok(());
        }
        adjoints[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..node.arity() {
                adjoints[node.args[k]] += adj * node.partials[k];
            }
        }
        Ok(())
    }

    /// Adjoint of each input variable (registration order) for `output`.
    pub fn input_adjoints(&self, output: Var<'_>, scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        self.adjoints_into(output, scratch)?;
        let inputs = self.inputs.borrow();
        for (o, &idx) in out.iter_mut().zip(inputs.iter()) {
            *o = scratch[idx];
        }
        Ok(())
    }

    fn check_owned(&self, var: Var<'_>) -> Result<()> {
        match var.tape {
            Some(t) if !std::ptr::eq(t, self) => Err(HfmError::ContractViolation(
                "variable belongs to a different tape".into(),
            )),
            Some(_) if var.index >= self.len() => Err(HfmError::ContractViolation(format!(
                "variable index {} beyond tape length",
                var.index
            ))),
            _ => Ok(()),
        }
    }
}

/// Gradient of `output` with respect to `parameters` by one reverse sweep.
///
/// Parameters that do not influence the output receive exactly zero.
/// Free constants in `parameters` also receive zero.
pub fn reverse_gradient(tape: &Tape, output: Var<'_>, parameters: &[Var<'_>]) -> Result<GradientResult> {
    for p in parameters {
        tape.check_owned(*p)?;
    }
    let mut adjoints = Vec::new();
    tape.adjoints_into(output, &mut adjoints)?;
    let value = tape.value(output);
    if !value.is_finite() {
        return Err(HfmError::NonFinite {
            node: output.tape.map(|_| output.index),
        });
    }
    let gradient = parameters
        .iter()
        .map(|p| if p.tape.is_some() { adjoints[p.index] } else { 0.0 })
        .collect();
    Ok(GradientResult { value, gradient })
}

impl<'t> Var<'t> {
    /// Tape node index, `None` for a free constant.
    pub(crate) fn node(&self) -> Option<usize> {
        self.tape.map(|_| self.index)
    }

    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            index: usize::MAX,
            value,
        }
    }

    /// Value at recording time. Use [`Tape::value`] after a replay.
    pub fn recorded_value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, op: Op) -> Self {
        match self.tape {
            Some(t) => t.push(op, [self.index, self.index]),
            None => Var::constant(apply(op, self.value, 0.0).0),
        }
    }

    fn binary(self, rhs: Self, op: Op, const_lhs: fn(f64) -> Op, const_rhs: fn(f64) -> Op) -> Self {
        match (self.tape, rhs.tape) {
            (Some(a), Some(b)) => {
                assert!(std::ptr::eq(a, b), "operands recorded on different tapes");
                a.push(op, [self.index, rhs.index])
            }
            (Some(_), None) => self.unary(const_rhs(rhs.value)),
            (None, Some(_)) => rhs.unary(const_lhs(self.value)),
            (None, None) => Var::constant(apply(op, self.value, rhs.value).0),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Add, Op::AddConst, Op::AddConst)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Sub, Op::ConstSub, |c| Op::AddConst(-c))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul, Op::MulConst, Op::MulConst)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Div, Op::ConstDiv, Op::DivConst)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg)
    }
}

impl<'t> Scalar for Var<'t> {
    fn from_f64(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin)
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos)
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }
    fn powi(self, n: i32) -> Self {
        self.unary(Op::Powi(n))
    }
    fn powf(self, p: f64) -> Self {
        self.unary(Op::Powf(p))
    }
    fn scale(self, k: f64) -> Self {
        self.unary(Op::MulConst(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradient() {
        let tape = Tape::new();
        let a = tape.input(2.0);
        let b = tape.input(3.0);
        let out = a * b;
        let g = reverse_gradient(&tape, out, &[a, b]).unwrap();
        assert_eq!(g.value, 6.0);
        assert_eq!(g.gradient, vec![3.0, 2.0]);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let tape = Tape::new();
        let a = tape.input(2.0);
        let b = tape.input(-1.0);
        let out = Var::constant(4.0) * Var::constant(0.5);
        let g = reverse_gradient(&tape, out, &[a, b]).unwrap();
        assert_eq!(g.value, 2.0);
        assert_eq!(g.gradient, vec![0.0, 0.0]);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let tape = Tape::new();
        let a = tape.input(0.3);
        let b = tape.input(5.0);
        let out = a.sin() * Var::constant(2.0);
        let g = reverse_gradient(&tape, out, &[a, b]).unwrap();
        assert_eq!(g.gradient[1], 0.0);
        assert!((g.gradient[0] - 2.0 * 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn foreign_variable_is_a_contract_violation() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.input(1.0);
        let b = t2.input(1.0);
        let out = a * a;
        assert!(matches!(
            reverse_gradient(&t1, out, &[b]),
            Err(HfmError::ContractViolation(_))
        ));
        assert!(matches!(
            reverse_gradient(&t2, out, &[b]),
            Err(HfmError::ContractViolation(_))
        ));
    }

    #[test]
    fn replay_matches_fresh_recording() {
        fn program(t: &Tape, x: f64, y: f64) -> (Var<'_>, Var<'_>, Var<'_>) {
            let vx = t.input(x);
            let vy = t.input(y);
            let out = (vx * vy).sin() / (vy.exp() + Var::constant(1.0)) - vx.powi(3) + Var::constant(2.0) - vy;
            (vx, vy, out)
        }
        let tape = Tape::new();
        let (vx, vy, out) = program(&tape, 0.4, 1.2);
        tape.replay(&[-0.7, 0.25]).unwrap();
        let replayed = reverse_gradient(&tape, out, &[vx, vy]).unwrap();

        let fresh_tape = Tape::new();
        let (fx, fy, fout) = program(&fresh_tape, -0.7, 0.25);
        let fresh = reverse_gradient(&fresh_tape, fout, &[fx, fy]).unwrap();
        assert_eq!(replayed, fresh);
    }

    #[test]
    fn replay_reports_non_finite_node() {
        let tape = Tape::new();
        let x = tape.input(2.0);
        let _ = Var::constant(1.0) / x;
        let err = tape.replay(&[0.0]).unwrap_err();
        assert!(matches!(err, HfmError::NonFinite { node: Some(1) }));
    }

    #[test]
    fn reverse_sweep_accumulates_shared_subexpressions() {
        // f = x*x + x  ->  f' = 2x + 1
        let tape = Tape::new();
        let x = tape.input(1.5);
        let f = x * x + x;
        let g = reverse_gradient(&tape, f, &[x]).unwrap();
        assert_eq!(g.gradient[0], 4.0);
    }
}
