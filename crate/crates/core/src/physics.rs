//! Transport, momentum and continuity residuals.
//!
//! For a field jet at one point the residuals are
//!
//! ```text
//! e1 = c_t + u·∇c − Pec⁻¹ Δc
//! e2 = d_t + u·∇d − Pec⁻¹ Δd
//! e3..e5 = u_i,t + u·∇u_i + ∂_i p − Re⁻¹ Δu_i     (i = x, y[, z])
//! e6 = ∇·u
//! ```
//!
//! In 2-D the z terms and `w` are dropped and `e5` does not exist.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{HfmError, Result};
use crate::network::{Field, FieldJet, SpatialDim};

/// A positive flow number, either fixed or learned through its logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FlowParam {
    /// Known value. `f64::INFINITY` switches the corresponding term off.
    Fixed { value: f64 },
    /// Learned as `exp(log_value)`.
    Trainable { log_value: f64 },
}

impl FlowParam {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(HfmError::Domain(format!("flow parameter must be positive, got {value}")));
        }
        Ok(FlowParam::Fixed { value })
    }

    /// Trainable parameter starting from `guess`.
    pub fn trainable(guess: f64) -> Result<Self> {
        if !(guess > 0.0 && guess.is_finite()) {
            return Err(HfmError::Domain(format!(
                "initial guess must be positive and finite, got {guess}"
            )));
        }
        Ok(FlowParam::Trainable { log_value: guess.ln() })
    }

    pub fn value(&self) -> f64 {
        match *self {
            FlowParam::Fixed { value } => value,
            FlowParam::Trainable { log_value } => log_value.exp(),
        }
    }

    pub fn inverse(&self) -> f64 {
        match *self {
            FlowParam::Fixed { value } => 1.0 / value,
            FlowParam::Trainable { log_value } => (-log_value).exp(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, FlowParam::Trainable { .. })
    }
}

/// Reynolds and Péclet numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub re: FlowParam,
    pub pec: FlowParam,
}

impl FlowParams {
    pub fn fixed(re: f64, pec: f64) -> Result<Self> {
        Ok(Self {
            re: FlowParam::fixed(re)?,
            pec: FlowParam::fixed(pec)?,
        })
    }

    pub fn trainable(re_guess: f64, pec_guess: f64) -> Result<Self> {
        Ok(Self {
            re: FlowParam::trainable(re_guess)?,
            pec: FlowParam::trainable(pec_guess)?,
        })
    }

    /// Trainable parameters in the order they are appended to the
    /// optimiser state: Re first, then Pec.
    pub fn trainable_count(&self) -> usize {
        self.re.is_trainable() as usize + self.pec.is_trainable() as usize
    }
}

/// Residuals at one point. `e[0]` is `e1`, …, `e[5]` is `e6`; in 2-D `e[4]`
/// is structurally absent and held at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualSet<S> {
    pub dim: SpatialDim,
    pub e: [S; 6],
}

impl<S: Scalar> ResidualSet<S> {
    /// Residual `e_i`, `i` in `1..=6`; `None` for `e5` in 2-D.
    pub fn get(&self, i: usize) -> Option<S> {
        match (i, self.dim) {
            (5, SpatialDim::Two) => None,
            (1..=6, _) => Some(self.e[i - 1]),
            _ => None,
        }
    }

    /// Indices of the residuals that exist in this dimension.
    pub fn active(dim: SpatialDim) -> &'static [usize] {
        match dim {
            SpatialDim::Two => &[1, 2, 3, 4, 6],
            SpatialDim::Three => &[1, 2, 3, 4, 5, 6],
        }
    }
}

fn transport<S: Scalar>(jet: &FieldJet<S>, f: Field, inv_pec: S) -> S {
    let n = jet.dim.n();
    let mut acc = jet.dt(f);
    for k in 0..n {
        acc = acc + jet.value(Field::velocity(k)) * jet.grad(f, k);
    }
    acc - inv_pec * jet.laplacian(f)
}

fn momentum<S: Scalar>(jet: &FieldJet<S>, i: usize, inv_re: S) -> S {
    let n = jet.dim.n();
    let ui = Field::velocity(i);
    let mut acc = jet.dt(ui);
    for k in 0..n {
        acc = acc + jet.value(Field::velocity(k)) * jet.grad(ui, k);
    }
    acc = acc + jet.grad(Field::P, i);
    acc - inv_re * jet.laplacian(ui)
}

/// Residuals in the jet's own dimension, in any scalar type.
pub fn residuals<S: Scalar>(jet: &FieldJet<S>, inv_re: S, inv_pec: S) -> ResidualSet<S> {
    let n = jet.dim.n();
    let zero = S::from_f64(0.0);
    let mut e = [zero; 6];
    e[0] = transport(jet, Field::C, inv_pec);
    e[1] = transport(jet, Field::D, inv_pec);
    for i in 0..n {
        e[2 + i] = momentum(jet, i, inv_re);
    }
    let mut div = jet.grad(Field::U, 0);
    for k in 1..n {
        div = div + jet.grad(Field::velocity(k), k);
    }
    e[5] = div;
    ResidualSet { dim: jet.dim, e }
}

fn checked(jet: &FieldJet<f64>, fp: &FlowParams) -> Result<ResidualSet<f64>> {
    let r = residuals(jet, fp.re.inverse(), fp.pec.inverse());
    if r.e.iter().all(|v| v.is_finite()) {
        Ok(r)
    } else {
        Err(HfmError::NonFinite { node: None })
    }
}

pub fn residuals_2d(jet: &FieldJet<f64>, fp: &FlowParams) -> Result<ResidualSet<f64>> {
    if jet.dim != SpatialDim::Two {
        return Err(HfmError::Dimension {
            expected: 2,
            actual: jet.dim.n(),
        });
    }
    checked(jet, fp)
}

pub fn residuals_3d(jet: &FieldJet<f64>, fp: &FlowParams) -> Result<ResidualSet<f64>> {
    if jet.dim != SpatialDim::Three {
        return Err(HfmError::Dimension {
            expected: 3,
            actual: jet.dim.n(),
        });
    }
    checked(jet, fp)
}

/// `d = 1 − c` elementwise.
pub fn auxiliary_complement(c: &[f64]) -> Vec<f64> {
    c.iter().map(|&c| 1.0 - c).collect()
}

/// `Pec = Re · Pr`.
pub fn peclet_from_prandtl(re: f64, pr: f64) -> Result<f64> {
    if !(re > 0.0) || !(pr > 0.0) {
        return Err(HfmError::Domain(format!(
            "Reynolds and Prandtl numbers must be positive, got Re = {re}, Pr = {pr}"
        )));
    }
    Ok(re * pr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jet2() -> FieldJet<f64> {
        FieldJet::zeros(SpatialDim::Two)
    }

    const U: usize = Field::U as usize;
    const V: usize = Field::V as usize;
    const P: usize = Field::P as usize;
    const C: usize = Field::C as usize;

    #[test]
    fn zero_jet_has_zero_residuals() {
        let fp = FlowParams::fixed(10.0, 10.0).unwrap();
        assert!(residuals_2d(&jet2(), &fp).unwrap().e.iter().all(|&e| e == 0.0));
        let z3 = FieldJet::zeros(SpatialDim::Three);
        assert!(residuals_3d(&z3, &fp).unwrap().e.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fp = FlowParams::fixed(1.0, 1.0).unwrap();
        assert!(matches!(
            residuals_3d(&jet2(), &fp),
            Err(HfmError::Dimension { expected: 3, actual: 2 })
        ));
        assert!(matches!(
            residuals_2d(&FieldJet::zeros(SpatialDim::Three), &fp),
            Err(HfmError::Dimension { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn stagnation_flow_3d() {
        // u = x, v = -y, w = 0, p = -(x² + y²)/2 at (x, y) = (0.7, -1.3)
        let (x, y) = (0.7, -1.3);
        let mut j = FieldJet::zeros(SpatialDim::Three);
        j.value[U] = x;
        j.value[V] = -y;
        j.value[P] = -(x * x + y * y) / 2.0;
        j.value[C] = 0.4;
        j.value[Field::D as usize] = 0.6;
        j.d_x[0][U] = 1.0;
        j.d_x[1][V] = -1.0;
        j.d_x[0][P] = -x;
        j.d_x[1][P] = -y;
        let r = residuals_3d(&j, &FlowParams::fixed(3.0, 5.0).unwrap()).unwrap();
        assert_eq!(r.get(6), Some(0.0));
        assert_eq!(r.get(3), Some(0.0));
        assert_eq!(r.get(4), Some(0.0));
        assert_eq!(r.get(5), Some(0.0));
    }

    #[test]
    fn rigid_rotation_2d() {
        // u = -y, v = x, p = (x² + y²)/2
        let (x, y) = (-0.4, 2.1);
        let mut j = jet2();
        j.value[U] = -y;
        j.value[V] = x;
        j.value[P] = (x * x + y * y) / 2.0;
        j.value[C] = 0.3;
        j.value[Field::D as usize] = 0.7;
        j.d_x[1][U] = -1.0;
        j.d_x[0][V] = 1.0;
        j.d_x[0][P] = x;
        j.d_x[1][P] = y;
        let r = residuals_2d(&j, &FlowParams::fixed(7.0, 2.0).unwrap()).unwrap();
        assert!(r.e.iter().all(|&e| e == 0.0), "{:?}", r.e);
        assert_eq!(r.get(5), None);
    }

    #[test]
    fn traveling_wave_without_diffusion() {
        // c = sin(x - t), u = 1, v = 0, Pec = ∞
        let (t, x) = (0.3, 1.9);
        let mut j = jet2();
        j.value[U] = 1.0;
        j.value[C] = (x - t).sin();
        j.d_t[C] = -(x - t).cos();
        j.d_x[0][C] = (x - t).cos();
        j.d_xx[0][C] = -(x - t).sin();
        let fp = FlowParams {
            re: FlowParam::fixed(1.0).unwrap(),
            pec: FlowParam::fixed(f64::INFINITY).unwrap(),
        };
        let r = residuals_2d(&j, &fp).unwrap();
        assert_eq!(r.get(1), Some(0.0));
    }

    #[test]
    fn complement_and_prandtl() {
        assert_eq!(auxiliary_complement(&[1.0, 0.0, 0.25]), vec![0.0, 1.0, 0.75]);
        assert_eq!(peclet_from_prandtl(100.0, 1.0).unwrap(), 100.0);
        assert_eq!(peclet_from_prandtl(60.0, 3.0).unwrap(), 180.0);
        assert_eq!(peclet_from_prandtl(1.0, 1.0).unwrap(), 1.0);
        assert!(matches!(peclet_from_prandtl(0.0, 1.0), Err(HfmError::Domain(_))));
        assert!(matches!(peclet_from_prandtl(1.0, -2.0), Err(HfmError::Domain(_))));
    }

    #[test]
    fn flow_param_positivity() {
        assert!(FlowParam::fixed(0.0).is_err());
        assert!(FlowParam::trainable(f64::INFINITY).is_err());
        let p = FlowParam::trainable(10.0).unwrap();
        assert!((p.value() - 10.0).abs() < 1e-12);
        assert!((p.inverse() - 0.1).abs() < 1e-15);
        assert_eq!(FlowParam::fixed(f64::INFINITY).unwrap().inverse(), 0.0);
    }

    fn arb_jet(dim: SpatialDim) -> impl Strategy<Value = FieldJet<f64>> {
        proptest::collection::vec(-3.0..3.0f64, 6 * 8).prop_map(move |v| {
            let mut j = FieldJet::zeros(dim);
            let n = dim.n();
            for f in dim.fields() {
                let fi = *f as usize;
                j.value[fi] = v[fi * 8];
                j.d_t[fi] = v[fi * 8 + 1];
                for k in 0..n {
                    j.d_x[k][fi] = v[fi * 8 + 2 + k];
                    j.d_xx[k][fi] = v[fi * 8 + 5 + k];
                }
            }
            j
        })
    }

    proptest! {
        #[test]
        fn pressure_offset_leaves_residuals_unchanged(j in arb_jet(SpatialDim::Three), shift in -50.0..50.0f64) {
            let fp = FlowParams::fixed(13.0, 4.0).unwrap();
            let mut shifted = j;
            shifted.value[P] += shift;
            prop_assert_eq!(residuals_3d(&j, &fp).unwrap(), residuals_3d(&shifted, &fp).unwrap());
        }

        #[test]
        fn affine_in_inverse_parameters(j in arb_jet(SpatialDim::Three), a in 0.1..5.0f64, b in 0.1..5.0f64) {
            let r = |inv: f64| residuals(&j, inv, inv);
            let (ra, rb, rm) = (r(a), r(b), r(0.5 * (a + b)));
            for i in [0usize, 1, 2, 3, 4] {
                let mid = 0.5 * (ra.e[i] + rb.e[i]);
                prop_assert!((rm.e[i] - mid).abs() <= 1e-12 * (1.0 + mid.abs()));
            }
        }

        #[test]
        fn two_d_equals_lifted_three_d(j in arb_jet(SpatialDim::Two)) {
            let fp = FlowParams::fixed(2.5, 8.0).unwrap();
            let r2 = residuals_2d(&j, &fp).unwrap();
            let r3 = residuals_3d(&j.lift_to_3d(), &fp).unwrap();
            for i in [1usize, 2, 3, 4, 6] {
                prop_assert_eq!(r2.get(i), r3.get(i));
            }
            prop_assert_eq!(r3.get(5), Some(0.0));
        }
    }
}
