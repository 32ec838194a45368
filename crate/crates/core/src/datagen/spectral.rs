use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::flows::AnalyticFlow;
use crate::error::{HfmError, Result};

/// Nodal values on the periodic square `[0, 2π)²`, node `(i, j)` at
/// `(2πi/N, 2πj/N)`, stored with `j` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField2D {
    n: usize,
    pub time: f64,
    values: Vec<f64>,
}

impl GridField2D {
    pub fn new(n: usize, time: f64, values: Vec<f64>) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(HfmError::InvalidInput(format!("grid size must be a power of two ≥ 2, got {n}")));
        }
        if values.len() != n * n {
            return Err(HfmError::Dimension {
                expected: n * n,
                actual: values.len(),
            });
        }
        Ok(Self { n, time, values })
    }

    pub fn from_fn(n: usize, time: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let h = 2.0 * PI / n as f64;
        let values = (0..n * n).map(|k| f((k / n) as f64 * h, (k % n) as f64 * h)).collect();
        Self::new(n, time, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (i as f64 * h, j as f64 * h)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Root-mean-square of `c − mean(c)`.
    pub fn fluctuation_norm(&self) -> f64 {
        let m = self.mean();
        (self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// One additive term of an initial condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Term {
    /// `amplitude · sin(kx·x + phase_x) · sin(ky·y + phase_y)`.
    Sine {
        amplitude: f64,
        kx: i32,
        #[serde(default)]
        phase_x: f64,
        ky: i32,
        #[serde(default)]
        phase_y: f64,
    },
    /// Smooth periodic bump `amplitude · exp(sharpness · (cos(x−x0) + cos(y−y0) − 2))`.
    Bump {
        amplitude: f64,
        x0: f64,
        y0: f64,
        sharpness: f64,
    },
}

impl Term {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Term::Sine {
                amplitude,
                kx,
                phase_x,
                ky,
                phase_y,
            } => amplitude * (kx as f64 * x + phase_x).sin() * (ky as f64 * y + phase_y).sin(),
            Term::Bump {
                amplitude,
                x0,
                y0,
                sharpness,
            } => amplitude * (sharpness * ((x - x0).cos() + (y - y0).cos() - 2.0)).exp(),
        }
    }
}

/// Initial scalar field `mean + Σ terms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub mean: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

impl InitialCondition {
    /// `½ + ¼ sin(x + 1) + ¼ cos 2y`, ranging over `[0, 1]`.
    pub fn standard() -> Self {
        Self {
            mean: 0.5,
            terms: vec![
                Term::Sine {
                    amplitude: 0.25,
                    kx: 1,
                    phase_x: 1.0,
                    ky: 0,
                    phase_y: PI / 2.0,
                },
                Term::Sine {
                    amplitude: 0.25,
                    kx: 0,
                    phase_x: PI / 2.0,
                    ky: 2,
                    phase_y: PI / 2.0,
                },
            ],
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().fold(self.mean, |acc, t| acc + t.eval(x, y))
    }
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Grid size, a power of two.
    pub n: usize,
    pub dt: f64,
    /// Diffusivity `1/Pec`.
    pub kappa: f64,
    pub t_final: f64,
    pub snapshot_interval: f64,
    #[serde(default = "yes")]
    pub dealias: bool,
    #[serde(default)]
    pub initial: InitialCondition,
    /// Reject initial conditions leaving `[0, 1]`. Signed test fields (pure
    /// eigenmodes) switch this off.
    #[serde(default = "yes")]
    pub unit_interval: bool,
}

fn yes() -> bool {
    true
}

/// Tolerance on "integer" ratios such as `t_final / dt`.
const STEP_TOL: f64 = 1e-9;

fn whole_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    let r = span / dt;
    let k = r.round();
    if (r - k).abs() > STEP_TOL * r.max(1.0) {
        return Err(HfmError::InvalidInput(format!("{what} ({span}) is not a whole number of time steps ({dt})")));
    }
    Ok(k as usize)
}

impl SolverConfig {
    /// Checks the configuration against a flow: grid size, step counts,
    /// both stability bounds and the initial range.
    pub fn validate(&self, flow: &AnalyticFlow) -> Result<()> {
        let n = self.n;
        if n < 4 || !n.is_power_of_two() {
            return Err(HfmError::InvalidInput(format!("grid size must be a power of two ≥ 4, got {n}")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(HfmError::InvalidInput(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(HfmError::InvalidInput(format!("diffusivity must be ≥ 0, got {}", self.kappa)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(HfmError::InvalidInput(format!("final time must be ≥ 0, got {}", self.t_final)));
        }
        if !(self.snapshot_interval > 0.0) {
            return Err(HfmError::InvalidInput("snapshot interval must be positive".into()));
        }
        let max_speed = match (flow.is_periodic(), flow.max_speed()) {
            (true, Some(s)) => s,
            _ => {
                return Err(HfmError::Domain(format!(
                    "flow '{}' is not periodic on [0, 2π)² and cannot drive the spectral solver",
                    flow.kind.name()
                )))
            }
        };
        let h = 2.0 * PI / n as f64;
        if max_speed > 0.0 {
            let bound = 0.5 * h / max_speed;
            if self.dt > bound {
                return Err(HfmError::Cfl(format!(
                    "advective bound violated: dt = {} > 0.5·h/max|u| = {bound:.6e}",
                    self.dt
                )));
            }
        }
        if self.kappa > 0.0 {
            let bound = 0.25 * h * h / self.kappa;
            if self.dt > bound {
                return Err(HfmError::Cfl(format!(
                    "diffusive bound violated: dt = {} > 0.25·h²/κ = {bound:.6e}",
                    self.dt
                )));
            }
        }
        whole_steps(self.t_final, self.dt, "final time")?;
        whole_steps(self.snapshot_interval, self.dt, "snapshot interval")?;
        if self.unit_interval {
            let c0 = GridField2D::from_fn(n, 0.0, |x, y| self.initial.eval(x, y))?;
            let tol = 1e-12;
            if c0.min() < -tol || c0.max() > 1.0 + tol {
                return Err(HfmError::InvalidInput(format!(
                    "initial condition spans [{}, {}], outside [0, 1]",
                    c0.min(),
                    c0.max()
                )));
            }
        }
        Ok(())
    }
}

struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed wavenumber per index, Nyquist included.
    k: Vec<f64>,
    /// Wavenumber for first derivatives (Nyquist zeroed).
    k_d: Vec<f64>,
    keep: Vec<bool>,
    column: Vec<Complex64>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let k: Vec<f64> = (0..n)
            .map(|m| if m < n / 2 { m as f64 } else { m as f64 - n as f64 })
            .collect();
        let k_d = k.iter().map(|&v| if v == -(n as f64) / 2.0 { 0.0 } else { v }).collect();
        let cutoff = (n / 3) as f64;
        let keep = k.iter().map(|v| v.abs() <= cutoff).collect();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k,
            k_d,
            keep,
            column: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let fft = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_mut(n) {
            fft.process(row);
        }
        for j in 0..n {
            for i in 0..n {
                self.column[i] = data[i * n + j];
            }
            fft.process(&mut self.column);
            for i in 0..n {
                data[i * n + j] = self.column[i];
            }
        }
        if inverse {
            let s = 1.0 / (n * n) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn forward(&mut self, real: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = real.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut d, false);
        d
    }

    fn inverse_real(&mut self, spec: &[Complex64], out: &mut [f64]) {
        let mut d = spec.to_vec();
        self.transform(&mut d, true);
        for (o, v) in out.iter_mut().zip(&d) {
            *o = v.re;
        }
    }

    fn dealias(&self, spec: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if !(self.keep[i] && self.keep[j]) {
                    spec[i * n + j] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

struct Rhs<'a> {
    flow: &'a AnalyticFlow,
    cfg: &'a SolverConfig,
    sp: Spectral,
    nodes: Vec<(f64, f64)>,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl Rhs<'_> {
    fn eval(&mut self, c_hat: &[Complex64], t: f64, out: &mut [Complex64]) {
        let n = self.cfg.n;
        let kappa = self.cfg.kappa;
        let mut adv_hat = vec![Complex64::new(0.0, 0.0); n * n];
        if self.flow.max_speed() != Some(0.0) {
            let mut src = c_hat.to_vec();
            if self.cfg.dealias {
                self.sp.dealias(&mut src);
            }
            let i_unit = Complex64::new(0.0, 1.0);
            let gx: Vec<Complex64> = (0..n * n).map(|m| src[m] * i_unit * self.sp.k_d[m / n]).collect();
            let gy: Vec<Complex64> = (0..n * n).map(|m| src[m] * i_unit * self.sp.k_d[m % n]).collect();
            self.sp.inverse_real(&gx, &mut self.cx);
            self.sp.inverse_real(&gy, &mut self.cy);
            let adv: Vec<f64> = self
                .nodes
                .iter()
                .enumerate()
                .map(|(m, &(x, y))| {
                    let [u, v] = self.flow.velocity_2d(t, x, y);
                    u * self.cx[m] + v * self.cy[m]
                })
                .collect();
            adv_hat = self.sp.forward(&adv);
            if self.cfg.dealias {
                self.sp.dealias(&mut adv_hat);
            }
        }
        for m in 0..n * n {
            let k2 = self.sp.k[m / n].powi(2) + self.sp.k[m % n].powi(2);
            out[m] = -adv_hat[m] - c_hat[m] * (kappa * k2);
        }
    }
}

/// Integrates `c_t + u·∇c = κ Δc` on the periodic square with the flow's
/// velocity, returning snapshots at `0, interval, 2·interval, … ≤ t_final`.
pub fn solve_transport(flow: &AnalyticFlow, cfg: &SolverConfig) -> Result<Vec<GridField2D>> {
    cfg.validate(flow)?;
    let n = cfg.n;
    let steps = whole_steps(cfg.t_final, cfg.dt, "final time")?;
    let every = whole_steps(cfg.snapshot_interval, cfg.dt, "snapshot interval")?.max(1);

    let c0 = GridField2D::from_fn(n, 0.0, |x, y| cfg.initial.eval(x, y))?;
    let nodes = (0..n * n).map(|m| c0.node(m / n, m % n)).collect();
    let mut rhs = Rhs {
        flow,
        cfg,
        sp: Spectral::new(n),
        nodes,
        cx: vec![0.0; n * n],
        cy: vec![0.0; n * n],
    };
    let mut c_hat = rhs.sp.forward(c0.values());
    let mut snapshots = vec![c0];

    let zero = Complex64::new(0.0, 0.0);
    let mut k1 = vec![zero; n * n];
    let mut k2 = vec![zero; n * n];
    let mut k3 = vec![zero; n * n];
    let mut k4 = vec![zero; n * n];
    let mut stage = vec![zero; n * n];
    let dt = cfg.dt;
    let mut grid = vec![0.0; n * n];

    for step in 0..steps {
        let t = step as f64 * dt;
        rhs.eval(&c_hat, t, &mut k1);
        for m in 0..n * n {
            stage[m] = c_hat[m] + k1[m] * (0.5 * dt);
        }
        rhs.eval(&stage, t + 0.5 * dt, &mut k2);
        for m in 0..n * n {
            stage[m] = c_hat[m] + k2[m] * (0.5 * dt);
        }
        rhs.eval(&stage, t + 0.5 * dt, &mut k3);
        for m in 0..n * n {
            stage[m] = c_hat[m] + k3[m] * dt;
        }
        rhs.eval(&stage, t + dt, &mut k4);
        for m in 0..n * n {
            c_hat[m] += (k1[m] + (k2[m] + k3[m]) * 2.0 + k4[m]) * (dt / 6.0);
        }
        let done = step + 1;
        let t_now = done as f64 * dt;
        if c_hat.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(HfmError::SolverBlowup { time: t_now });
        }
        if done % every == 0 {
            rhs.sp.inverse_real(&c_hat, &mut grid);
            let time = (done / every) as f64 * cfg.snapshot_interval;
            snapshots.push(GridField2D::new(n, time, grid.clone())?);
        }
    }
    Ok(snapshots)
}
