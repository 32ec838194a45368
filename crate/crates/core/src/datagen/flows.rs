use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{HyperDual, Scalar};
use crate::error::{HfmError, Result};
use crate::network::{Field, FieldJet, SpatialDim};

/// Closed-form incompressible flows.
///
/// `Quiescent2D` and `UniformStream2D` exist mainly to exercise the scalar
/// transport solver; the remaining variants are non-trivial Navier-Stokes
/// solutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant")]
pub enum FlowKind {
    TaylorGreen2d,
    Beltrami3d,
    Stagnation2d,
    RigidRotation2d,
    Quiescent2d,
    UniformStream2d { u: f64, v: f64 },
}

impl FlowKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "taylor-green-2d" => FlowKind::TaylorGreen2d,
            "beltrami-3d" => FlowKind::Beltrami3d,
            "stagnation-2d" => FlowKind::Stagnation2d,
            "rigid-rotation-2d" => FlowKind::RigidRotation2d,
            "quiescent-2d" => FlowKind::Quiescent2d,
            _ => return Err(HfmError::Domain(format!("unknown flow variant '{name}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::TaylorGreen2d => "taylor-green-2d",
            FlowKind::Beltrami3d => "beltrami-3d",
            FlowKind::Stagnation2d => "stagnation-2d",
            FlowKind::RigidRotation2d => "rigid-rotation-2d",
            FlowKind::Quiescent2d => "quiescent-2d",
            FlowKind::UniformStream2d { .. } => "uniform-stream-2d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticFlow {
    pub kind: FlowKind,
    pub re: f64,
}

impl AnalyticFlow {
    pub fn new(kind: FlowKind, re: f64) -> Result<Self> {
        if !(re > 0.0 && re.is_finite()) {
            return Err(HfmError::Domain(format!("Reynolds number must be positive and finite, got {re}")));
        }
        if let FlowKind::UniformStream2d { u, v } = kind {
            if !(u.is_finite() && v.is_finite()) {
                return Err(HfmError::Domain("uniform stream velocity must be finite".into()));
            }
        }
        Ok(Self { kind, re })
    }

    pub fn taylor_green(re: f64) -> Result<Self> {
        Self::new(FlowKind::TaylorGreen2d, re)
    }

    pub fn dim(&self) -> SpatialDim {
        match self.kind {
            FlowKind::Beltrami3d => SpatialDim::Three,
            _ => SpatialDim::Two,
        }
    }

    /// Whether the velocity is `2π`-periodic in every direction, i.e. usable
    /// by the spectral transport solver.
    pub fn is_periodic(&self) -> bool {
        matches!(
            self.kind,
            FlowKind::TaylorGreen2d | FlowKind::Quiescent2d | FlowKind::UniformStream2d { .. }
        )
    }

    /// Upper bound on `|u|` over all space and `t ≥ 0`, for periodic flows.
    pub fn max_speed(&self) -> Option<f64> {
        match self.kind {
            FlowKind::TaylorGreen2d => Some(1.0),
            FlowKind::Quiescent2d => Some(0.0),
            FlowKind::UniformStream2d { u, v } => Some(u.hypot(v)),
            _ => None,
        }
    }

    /// `(u, v, w, p)` in any scalar type; `w` is zero for 2-D flows and
    /// `x[2]` is only read by 3-D flows.
    pub fn fields<S: Scalar>(&self, t: S, x: &[S]) -> [S; 4] {
        let zero = S::from_f64(0.0);
        let c = S::from_f64;
        let nu = 1.0 / self.re;
        match self.kind {
            FlowKind::TaylorGreen2d => {
                let (px, py) = (x[0], x[1]);
                let f = (t * c(-2.0 * nu)).exp();
                let f2 = (t * c(-4.0 * nu)).exp();
                let u = -(px.cos() * py.sin()) * f;
                let v = px.sin() * py.cos() * f;
                let p = c(-0.25) * ((px * c(2.0)).cos() + (py * c(2.0)).cos()) * f2;
                [u, v, zero, p]
            }
            FlowKind::Beltrami3d => {
                let a = PI / 4.0;
                let d = PI / 2.0;
                let (px, py, pz) = (x[0], x[1], x[2]);
                let ex = (px * c(a)).exp();
                let ey = (py * c(a)).exp();
                let ez = (pz * c(a)).exp();
                let s_yz = (py * c(a) + pz * c(d)).sin();
                let s_zx = (pz * c(a) + px * c(d)).sin();
                let s_xy = (px * c(a) + py * c(d)).sin();
                let c_xy = (px * c(a) + py * c(d)).cos();
                let c_yz = (py * c(a) + pz * c(d)).cos();
                let c_zx = (pz * c(a) + px * c(d)).cos();
                let f = (t * c(-nu * d * d)).exp();
                let u = c(-a) * (ex * s_yz + ez * c_xy) * f;
                let v = c(-a) * (ey * s_zx + ex * c_yz) * f;
                let w = c(-a) * (ez * s_xy + ey * c_zx) * f;
                let bracket = ex * ex
                    + ey * ey
                    + ez * ez
                    + c(2.0) * s_xy * c_zx * ey * ez
                    + c(2.0) * s_yz * c_xy * ez * ex
                    + c(2.0) * s_zx * c_yz * ex * ey;
                let p = c(-a * a / 2.0) * bracket * f * f;
                [u, v, w, p]
            }
            FlowKind::Stagnation2d => {
                let (px, py) = (x[0], x[1]);
                [px, -py, zero, c(-0.5) * (px * px + py * py)]
            }
            FlowKind::RigidRotation2d => {
                let (px, py) = (x[0], x[1]);
                [-py, px, zero, c(0.5) * (px * px + py * py)]
            }
            FlowKind::Quiescent2d => [zero; 4],
            FlowKind::UniformStream2d { u, v } => [c(u), c(v), zero, zero],
        }
    }

    fn field_values(&self, t: f64, x: &[f64]) -> [f64; 4] {
        self.fields(t, x)
    }

    /// Velocity at one point, `[u, v]` (2-D flows only).
    pub fn velocity_2d(&self, t: f64, x: f64, y: f64) -> [f64; 2] {
        let f = self.field_values(t, &[x, y]);
        [f[0], f[1]]
    }
}

fn check_point(flow: &AnalyticFlow, t: f64, x: &[f64]) -> Result<()> {
    let n = flow.dim().n();
    if x.len() != n {
        return Err(HfmError::Dimension {
            expected: n,
            actual: x.len(),
        });
    }
    if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(HfmError::Domain("coordinates must be finite".into()));
    }
    Ok(())
}

/// Velocity, pressure and their time, first and pure second spatial
/// derivatives. The scalar channels `c`, `d` are left at zero.
pub fn analytic_eval(flow: &AnalyticFlow, t: f64, x: &[f64]) -> Result<FieldJet<f64>> {
    check_point(flow, t, x)?;
    let dim = flow.dim();
    let n = dim.n();
    let slots = [Field::U, Field::V, Field::W, Field::P];
    let mut jet = FieldJet::zeros(dim);

    let xs: Vec<HyperDual<f64>> = x.iter().map(|&v| HyperDual::constant(v)).collect();
    let ft = flow.fields(HyperDual::seeded(t, true, false), &xs);
    for (s, f) in slots.iter().zip(ft) {
        jet.value[*s as usize] = f.value;
        jet.d_t[*s as usize] = f.d_a;
    }
    for k in 0..n {
        let mut xs = xs.clone();
        xs[k] = HyperDual::seeded(x[k], true, true);
        let fk = flow.fields(HyperDual::constant(t), &xs);
        for (s, f) in slots.iter().zip(fk) {
            jet.d_x[k][*s as usize] = f.d_a;
            jet.d_xx[k][*s as usize] = f.d_ab;
        }
    }
    Ok(jet)
}
