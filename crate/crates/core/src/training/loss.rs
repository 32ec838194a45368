//! Composite loss over a mini-batch and its gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{reverse_gradient, Scalar, Tape, Var};
use crate::error::{HfmError, Result};
use crate::network::{batch::CHUNK, forward_generic, forward_jet_generic, FieldJet, JetBatch, JetLevel, Mlp};
use crate::physics::{residuals, FlowParam, FlowParams, ResidualSet};

/// Per-term loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub data_c: f64,
    pub data_d: f64,
    /// Weights of `e1 … e6`.
    pub residual: [f64; 6],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            data_c: 1.0,
            data_d: 1.0,
            residual: [1.0; 6],
        }
    }
}

impl LossWeights {
    /// Drops the auxiliary variable: no `d` data term and no `e2`.
    pub fn without_complement() -> Self {
        let mut w = Self::default();
        w.data_d = 0.0;
        w.residual[1] = 0.0;
        w
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let all = [self.data_c, self.data_d].into_iter().chain(self.residual);
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(HfmError::InvalidInput(format!("loss weights must be finite and ≥ 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Mean squared terms of one batch (or epoch averages of them).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_c: f64,
    pub data_d: f64,
    /// Mean of `e_i²`, `i = 1 … 6` (e5 stays 0 in 2-D).
    pub e: [f64; 6],
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn weighted_total(&mut self, w: &LossWeights) {
        let mut total = w.data_c * self.data_c + w.data_d * self.data_d;
        for i in 0..6 {
            total += w.residual[i] * self.e[i];
        }
        self.total = total;
    }

    pub(crate) fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.data_c += s * other.data_c;
        self.data_d += s * other.data_d;
        for i in 0..6 {
            self.e[i] += s * other.e[i];
        }
        self.total += s * other.total;
    }
}

/// Points of one optimisation step. `ids` identify records in error
/// messages; residual points default to the data points.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub points: &'a [f64],
    pub c: &'a [f64],
    pub ids: &'a [usize],
    pub residual_points: Option<&'a [f64]>,
    pub residual_ids: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn same_as_data(points: &'a [f64], c: &'a [f64], ids: &'a [usize]) -> Self {
        Self {
            points,
            c,
            ids,
            residual_points: None,
            residual_ids: None,
        }
    }
}

/// Non-finite value met while evaluating a batch.
#[derive(Debug)]
pub(crate) struct PointFailure {
    pub point: usize,
    pub what: String,
}

impl PointFailure {
    pub(crate) fn into_error(self, epoch: usize, step: u64) -> HfmError {
        HfmError::Diverged {
            epoch,
            step,
            point: self.point,
            what: self.what,
        }
    }
}

/// Squared residuals of one point, recorded once on a tape and replayed
/// with each point's jet to obtain values and adjoints.
struct ResidualHead {
    tape: Tape,
    inputs: usize,
    /// Node of each residual `e_i`, if recorded.
    e_nodes: [Option<usize>; 6],
    loss_node: Option<usize>,
    values: Vec<f64>,
    scratch: Vec<f64>,
    point_adj: Vec<f64>,
}

impl ResidualHead {
    fn new(mlp: &Mlp, weights: &LossWeights) -> Self {
        let dim = mlp.arch.dim;
        let ncomp = 2 + 2 * dim.n();
        let fields = dim.fields();
        let n_out = fields.len();
        let inputs = ncomp * n_out + 2;
        let tape = Tape::new();
        let (e_nodes, loss_node) = {
            let vars = tape.inputs(&vec![0.5; inputs]);
            let mut jet: FieldJet<Var<'_>> = FieldJet::zeros(dim);
            for (j, f) in fields.iter().enumerate() {
                let fi = *f as usize;
                let at = |comp: usize| vars[comp * n_out + j];
                jet.value[fi] = at(0);
                jet.d_t[fi] = at(JetBatch::T);
                for k in 0..dim.n() {
                    jet.d_x[k][fi] = at(JetBatch::first(k));
                    jet.d_xx[k][fi] = at(JetBatch::second(k));
                }
            }
            let r: ResidualSet<Var<'_>> = residuals(&jet, vars[inputs - 2], vars[inputs - 1]);
            let mut e_nodes = [None; 6];
            let mut loss = Var::constant(0.0);
            for &i in ResidualSet::<f64>::active(dim) {
                let e = r.e[i - 1];
                e_nodes[i - 1] = e.node();
                let w = weights.residual[i - 1];
                if w != 0.0 {
                    loss = loss + (e * e).scale(w);
                }
            }
            (e_nodes, loss.node())
        };
        Self {
            tape,
            inputs,
            e_nodes,
            loss_node,
            values: vec![0.0; inputs],
            scratch: Vec::new(),
            point_adj: vec![0.0; inputs],
        }
    }
}

/// Per-chunk sums.
#[derive(Clone, Copy, Debug, Default)]
struct Partial {
    data_c: f64,
    data_d: f64,
    e: [f64; 6],
    d_inv_re: f64,
    d_inv_pec: f64,
}

struct Workspace {
    jets: JetBatch,
    values: JetBatch,
    head: ResidualHead,
    /// Output adjoints staged before handing them to the jet batch.
    out_adj: Vec<f64>,
    grad: Vec<f64>,
    partial: Partial,
}

#[derive(Clone, Copy, Debug)]
enum Task {
    /// Data and residual terms on the same points.
    Both(usize, usize),
    Data(usize, usize),
    Residual(usize, usize),
}

/// Scales applied to per-point sums: `1/B` for data, `1/R` for residuals.
#[derive(Clone, Copy)]
struct Scales {
    data: f64,
    residual: f64,
}

/// Batched loss and gradient evaluator with reusable per-chunk workspaces.
pub struct LossEvaluator {
    weights: LossWeights,
    workspaces: Vec<Workspace>,
    tasks: Vec<Task>,
}

/// Result of [`LossEvaluator::evaluate`]: the loss and the gradient with
/// respect to the network parameters and trainable flow exponents (Re
/// first, then Pec).
#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: LossBreakdown,
    pub gradient: Vec<f64>,
}

impl LossEvaluator {
    pub fn new(weights: LossWeights) -> Self {
        Self {
            weights,
            workspaces: Vec::new(),
            tasks: Vec::new(),
        }
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    /// Loss of `batch`; with `with_gradient`, also the full gradient.
    pub fn evaluate(&mut self, mlp: &Mlp, flow: &FlowParams, batch: &Batch<'_>, with_gradient: bool) -> Result<LossGradient> {
        self.run(mlp, flow, batch, with_gradient).map_err(|f| f.into_error(0, 0))
    }

    pub(crate) fn run(
        &mut self,
        mlp: &Mlp,
        flow: &FlowParams,
        batch: &Batch<'_>,
        with_gradient: bool,
    ) -> std::result::Result<LossGradient, PointFailure> {
        let n_in = mlp.arch.input_arity();
        let b = batch.c.len();
        let r = batch.residual_points.map_or(b, |p| p.len() / n_in);
        if b == 0 {
            return Err(PointFailure {
                point: 0,
                what: "empty batch".into(),
            });
        }
        self.tasks.clear();
        match batch.residual_points {
            None => self.tasks.extend(chunks(b).map(|(s, e)| Task::Both(s, e))),
            Some(_) => {
                self.tasks.extend(chunks(b).map(|(s, e)| Task::Data(s, e)));
                self.tasks.extend(chunks(r).map(|(s, e)| Task::Residual(s, e)));
            }
        }
        let needs_head = self
            .workspaces
            .first()
            .is_none_or(|w| w.head.inputs != (2 + 2 * mlp.arch.dim.n()) * mlp.arch.output_arity() + 2);
        if needs_head {
            self.workspaces.clear();
        }
        while self.workspaces.len() < self.tasks.len() {
            self.workspaces.push(Workspace {
                jets: JetBatch::new(JetLevel::Full),
                values: JetBatch::new(JetLevel::Value),
                head: ResidualHead::new(mlp, &self.weights),
                out_adj: Vec::new(),
                grad: Vec::new(),
                partial: Partial::default(),
            });
        }
        let scales = Scales {
            data: 1.0 / b as f64,
            residual: 1.0 / r as f64,
        };
        let weights = self.weights;
        let inv = [flow.re.inverse(), flow.pec.inverse()];
        let n_params = mlp.params.len();
        self.tasks
            .par_iter()
            .zip(self.workspaces.par_iter_mut())
            .try_for_each(|(task, ws)| {
                ws.partial = Partial::default();
                if with_gradient {
                    ws.grad.clear();
                    ws.grad.resize(n_params, 0.0);
                }
                run_task(*task, ws, mlp, batch, &weights, inv, scales, with_gradient)
            })?;

        let mut partial = Partial::default();
        let mut gradient = vec![0.0; if with_gradient { n_params + flow.trainable_count() } else { 0 }];
        for ws in &self.workspaces[..self.tasks.len()] {
            let p = &ws.partial;
            partial.data_c += p.data_c;
            partial.data_d += p.data_d;
            for i in 0..6 {
                partial.e[i] += p.e[i];
            }
            partial.d_inv_re += p.d_inv_re;
            partial.d_inv_pec += p.d_inv_pec;
            if with_gradient {
                for (g, w) in gradient.iter_mut().zip(&ws.grad) {
                    *g += w;
                }
            }
        }
        let mut loss = LossBreakdown {
            data_c: partial.data_c * scales.data,
            data_d: partial.data_d * scales.data,
            e: partial.e.map(|v| v * scales.residual),
            total: 0.0,
        };
        loss.weighted_total(&self.weights);
        if !loss.total.is_finite() {
            return Err(PointFailure {
                point: batch.ids.first().copied().unwrap_or(0),
                what: "loss overflow".into(),
            });
        }
        if with_gradient {
            let mut k = n_params;
            for (param, d_inv) in [(&flow.re, partial.d_inv_re), (&flow.pec, partial.d_inv_pec)] {
                if param.is_trainable() {
                    // inverse = exp(−s)
                    gradient[k] = -d_inv * param.inverse();
                    k += 1;
                }
            }
        }
        Ok(LossGradient { loss, gradient })
    }
}

fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(move |k| (k * CHUNK, ((k + 1) * CHUNK).min(n)))
}

#[allow(clippy::too_many_arguments)]
fn run_task(
    task: Task,
    ws: &mut Workspace,
    mlp: &Mlp,
    batch: &Batch<'_>,
    weights: &LossWeights,
    inv: [f64; 2],
    scales: Scales,
    with_gradient: bool,
) -> std::result::Result<(), PointFailure> {
    let n_in = mlp.arch.input_arity();
    let n_out = mlp.arch.output_arity();
    // Output columns of c and d (see `SpatialDim::fields`).
    let (col_c, col_d) = (0, 1);

    let (start, end, data, resid) = match task {
        Task::Both(s, e) => (s, e, true, true),
        Task::Data(s, e) => (s, e, true, false),
        Task::Residual(s, e) => (s, e, false, true),
    };
    let m = end - start;
    let (src, ids) = if data {
        (batch.points, batch.ids)
    } else {
        (
            batch.residual_points.expect("residual task without points"),
            batch.residual_ids.unwrap_or(batch.ids),
        )
    };
    let id = |i: usize| ids.get(start + i).copied().unwrap_or(start + i);
    let jb = if resid { &mut ws.jets } else { &mut ws.values };
    jb.forward(mlp, &src[start * n_in..end * n_in], m);
    let ncomp = if resid { ws.head.inputs / n_out } else { 1 };
    let at = |comp: usize, i: usize, j: usize| (comp * m + i) * n_out + j;
    let out = |jb: &JetBatch, comp: usize, i: usize, j: usize| jb.output(comp, i, j);

    let head = &mut ws.head;
    let staged = &mut ws.out_adj;
    staged.clear();
    staged.resize(ncomp * m * n_out, 0.0);
    let p = &mut ws.partial;

    for i in 0..m {
        if data {
            let c_obs = batch.c[start + i];
            let rc = out(jb, 0, i, col_c) - c_obs;
            let rd = out(jb, 0, i, col_d) - (1.0 - c_obs);
            if !(rc.is_finite() && rd.is_finite()) {
                return Err(PointFailure {
                    point: id(i),
                    what: "non-finite network output".into(),
                });
            }
            p.data_c += rc * rc;
            p.data_d += rd * rd;
            if with_gradient {
                staged[at(0, i, col_c)] += 2.0 * weights.data_c * scales.data * rc;
                staged[at(0, i, col_d)] += 2.0 * weights.data_d * scales.data * rd;
            }
        }
        if resid {
            for comp in 0..ncomp {
                for j in 0..n_out {
                    head.values[comp * n_out + j] = out(jb, comp, i, j);
                }
            }
            head.values[head.inputs - 2] = inv[0];
            head.values[head.inputs - 1] = inv[1];
            head.tape.replay(&head.values).map_err(|_| PointFailure {
                point: id(i),
                what: "non-finite residual".into(),
            })?;
            for (k, node) in head.e_nodes.iter().enumerate() {
                if let Some(node) = node {
                    let e = head.tape.node_value(*node);
                    p.e[k] += e * e;
                }
            }
            if with_gradient {
                if let Some(loss) = head.loss_node {
                    let var = head.tape.var_at(loss);
                    head.tape
                        .input_adjoints(var, &mut head.scratch, &mut head.point_adj)
                        .expect("head tape owns its nodes");
                    let s = scales.residual;
                    for comp in 0..ncomp {
                        for j in 0..n_out {
                            staged[at(comp, i, j)] += s * head.point_adj[comp * n_out + j];
                        }
                    }
                    p.d_inv_re += s * head.point_adj[head.inputs - 2];
                    p.d_inv_pec += s * head.point_adj[head.inputs - 1];
                }
            }
        }
    }
    if with_gradient {
        jb.reset_output_adjoint().copy_from_slice(staged);
        jb.backward(mlp, &mut ws.grad);
    }
    Ok(())
}

/// Reference loss and gradient recorded entirely on one tape: parameters
/// and trainable exponents are tape inputs, the network jet comes from the
/// generic hyper-dual forward pass, and [`reverse_gradient`] gives the
/// gradient. Slow; meant for verification.
pub fn reference_loss(mlp: &Mlp, flow: &FlowParams, weights: &LossWeights, batch: &Batch<'_>) -> Result<LossGradient> {
    let arch = &mlp.arch;
    let n_in = arch.input_arity();
    let tape = Tape::new();
    let params = tape.inputs(mlp.params.as_slice());
    let mut tracked = params.clone();
    let mut inverse = |p: &FlowParam| match *p {
        FlowParam::Fixed { .. } => Var::constant(p.inverse()),
        FlowParam::Trainable { log_value } => {
            let s = tape.input(log_value);
            tracked.push(s);
            (-s).exp()
        }
    };
    let inv_re = inverse(&flow.re);
    let inv_pec = inverse(&flow.pec);
    let b = batch.c.len();
    let res_pts = batch.residual_points.unwrap_or(batch.points);
    let r = res_pts.len() / n_in;
    let zero = Var::constant(0.0);
    let (mut dc, mut dd) = (zero, zero);
    for (i, p) in batch.points.chunks(n_in).enumerate() {
        let pv: Vec<Var<'_>> = p.iter().map(|&x| Var::constant(x)).collect();
        let out = forward_generic(arch, &params, &mlp.normalization, &pv);
        let rc = out[0] - Var::constant(batch.c[i]);
        let rd = out[1] - Var::constant(1.0 - batch.c[i]);
        dc = dc + rc * rc;
        dd = dd + rd * rd;
    }
    let mut e = [zero; 6];
    for p in res_pts.chunks(n_in) {
        let jet = forward_jet_generic(arch, &params, &mlp.normalization, p);
        let rs = residuals(&jet, inv_re, inv_pec);
        for &k in ResidualSet::<f64>::active(arch.dim) {
            e[k - 1] = e[k - 1] + rs.e[k - 1] * rs.e[k - 1];
        }
    }
    let dc = dc.scale(1.0 / b as f64);
    let dd = dd.scale(1.0 / b as f64);
    let e = e.map(|v| v.scale(1.0 / r as f64));
    let mut total = dc.scale(weights.data_c) + dd.scale(weights.data_d);
    for k in 0..6 {
        total = total + e[k].scale(weights.residual[k]);
    }
    let g = reverse_gradient(&tape, total, &tracked)?;
    let mut loss = LossBreakdown {
        data_c: tape.value(dc),
        data_d: tape.value(dd),
        e: e.map(|v| tape.value(v)),
        total: 0.0,
    };
    loss.weighted_total(weights);
    Ok(LossGradient {
        loss,
        gradient: g.gradient,
    })
}
