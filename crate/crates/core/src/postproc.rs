//! Forces, wall shear stress, error reports and dense grid exports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::{fmt17, read_numeric_csv};
use crate::datagen::{analytic_eval, AnalyticFlow};
use crate::error::{HfmError, Result};
use crate::network::{Field, FieldJet, Mlp, SpatialDim};

/// Anything that yields field values and derivatives at `(t, x)`.
pub trait FieldProvider {
    fn dim(&self) -> SpatialDim;

    fn jet(&self, t: f64, x: &[f64]) -> Result<FieldJet<f64>>;

    /// Values of all six field slots (unused slots zero).
    fn values(&self, t: f64, x: &[f64]) -> Result<[f64; 6]> {
        Ok(self.jet(t, x)?.value)
    }

    /// Values at many points, given row-major as `(t, x, y[, z])`.
    fn values_many(&self, points: &[f64]) -> Result<Vec<[f64; 6]>> {
        let s = self.dim().n() + 1;
        points.chunks(s).map(|p| self.values(p[0], &p[1..])).collect()
    }

    /// Region the provider is trusted on, as `(lo, hi)` per spatial axis.
    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
}

impl FieldProvider for Mlp {
    fn dim(&self) -> SpatialDim {
        self.arch.dim
    }

    fn jet(&self, t: f64, x: &[f64]) -> Result<FieldJet<f64>> {
        let mut p = vec![t];
        p.extend_from_slice(x);
        self.forward_jet(&p)
    }

    fn values_many(&self, points: &[f64]) -> Result<Vec<[f64; 6]>> {
        let fields = self.arch.dim.fields();
        let out = self.forward_many(points)?;
        Ok(out
            .into_iter()
            .map(|row| {
                let mut v = [0.0; 6];
                for (f, x) in fields.iter().zip(row) {
                    v[*f as usize] = x;
                }
                v
            })
            .collect())
    }

    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.normalization.bounds()[1..].to_vec())
    }
}

impl FieldProvider for AnalyticFlow {
    fn dim(&self) -> SpatialDim {
        AnalyticFlow::dim(self)
    }

    fn jet(&self, t: f64, x: &[f64]) -> Result<FieldJet<f64>> {
        analytic_eval(self, t, x)
    }
}

/// Field given by a closure, handy for fixtures.
pub struct FnField<F> {
    pub dim: SpatialDim,
    pub f: F,
}

impl<F: Fn(f64, &[f64]) -> FieldJet<f64>> FieldProvider for FnField<F> {
    fn dim(&self) -> SpatialDim {
        self.dim
    }

    fn jet(&self, t: f64, x: &[f64]) -> Result<FieldJet<f64>> {
        Ok((self.f)(t, x))
    }
}

/// Boundary points with outward unit normals and arc-length weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDiscretization {
    points: Vec<[f64; 2]>,
    normals: Vec<[f64; 2]>,
    ds: Vec<f64>,
    closed: bool,
}

impl SurfaceDiscretization {
    pub fn new(points: Vec<[f64; 2]>, normals: Vec<[f64; 2]>, ds: Vec<f64>, closed: bool) -> Result<Self> {
        if points.is_empty() || points.len() != normals.len() || points.len() != ds.len() {
            return Err(HfmError::InvalidInput(
                "surface needs equally many points, normals and weights (at least one)".into(),
            ));
        }
        for (k, n) in normals.iter().enumerate() {
            if ((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() > 1e-12 {
                return Err(HfmError::InvalidInput(format!("normal {k} is not unit length")));
            }
        }
        if points.iter().flatten().any(|v| !v.is_finite()) || ds.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(HfmError::InvalidInput("surface coordinates and weights must be finite, weights ≥ 0".into()));
        }
        let s = Self {
            points,
            normals,
            ds,
            closed,
        };
        if closed {
            let [sx, sy] = s.normal_sum();
            if sx.abs() > 1e-10 || sy.abs() > 1e-10 {
                return Err(HfmError::InvalidInput(format!(
                    "surface marked closed but Σ n ds = ({sx:.3e}, {sy:.3e})"
                )));
            }
        }
        Ok(s)
    }

    /// `n` equispaced points on a circle, normals pointing away from the
    /// centre.
    pub fn circle(center: [f64; 2], radius: f64, n: usize) -> Result<Self> {
        if !(radius > 0.0) || n < 3 {
            return Err(HfmError::InvalidInput("circle needs radius > 0 and at least 3 points".into()));
        }
        let dtheta = 2.0 * std::f64::consts::PI / n as f64;
        let (mut pts, mut nrm) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for k in 0..n {
            let (s, c) = (k as f64 * dtheta).sin_cos();
            pts.push([center[0] + radius * c, center[1] + radius * s]);
            nrm.push([c, s]);
        }
        Self::new(pts, nrm, vec![radius * dtheta; n], true)
    }

    /// Open straight segment from `a` to `b` with trapezoidal weights and
    /// the given unit normal.
    pub fn segment(a: [f64; 2], b: [f64; 2], n: usize, normal: [f64; 2]) -> Result<Self> {
        if n < 2 {
            return Err(HfmError::InvalidInput("segment needs at least 2 points".into()));
        }
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let h = len / (n - 1) as f64;
        let pts = (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
            })
            .collect();
        let mut ds = vec![h; n];
        ds[0] = h / 2.0;
        ds[n - 1] = h / 2.0;
        Self::new(pts, vec![normal; n], ds, false)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn normals(&self) -> &[[f64; 2]] {
        &self.normals
    }

    pub fn weights(&self) -> &[f64] {
        &self.ds
    }

    fn normal_sum(&self) -> [f64; 2] {
        let mut s = [0.0; 2];
        for (n, w) in self.normals.iter().zip(&self.ds) {
            s[0] += n[0] * w;
            s[1] += n[1] * w;
        }
        s
    }

    /// Reads a `x,y,nx,ny,ds` file.
    pub fn read_csv(path: &Path, closed: bool) -> Result<Self> {
        let (head, values) = read_numeric_csv(path)?;
        if head != ["x", "y", "nx", "ny", "ds"] {
            return Err(HfmError::Parse {
                path: path.into(),
                line: 1,
                message: format!("unexpected header '{}', want 'x,y,nx,ny,ds'", head.join(",")),
            });
        }
        let rows = values.chunks(5);
        let points = rows.clone().map(|r| [r[0], r[1]]).collect();
        let normals = rows.clone().map(|r| [r[2], r[3]]).collect();
        let ds = rows.map(|r| r[4]).collect();
        Self::new(points, normals, ds, closed)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.len()).map(|k| {
            let (p, n) = (self.points[k], self.normals[k]);
            vec![p[0], p[1], n[0], n[1], self.ds[k]]
        });
        write_table(path, "x,y,nx,ny,ds", rows)
    }
}

fn write_table(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let io = |e| HfmError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        let cols: Vec<String> = r.into_iter().map(fmt17).collect();
        writeln!(w, "{}", cols.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn require_2d(field: &dyn FieldProvider) -> Result<()> {
    if field.dim() != SpatialDim::Two {
        return Err(HfmError::Dimension {
            expected: 2,
            actual: field.dim().n(),
        });
    }
    Ok(())
}

fn inverse_re(re: f64) -> Result<f64> {
    if !(re > 0.0) {
        return Err(HfmError::Domain(format!("Reynolds number must be positive, got {re}")));
    }
    Ok(1.0 / re)
}

/// `(F_L, F_D)` on a closed surface at time `t`, trapezoidal rule.
pub fn lift_drag(field: &dyn FieldProvider, surface: &SurfaceDiscretization, re: f64, t: f64) -> Result<(f64, f64)> {
    require_2d(field)?;
    if !surface.closed {
        return Err(HfmError::InvalidInput("forces need a closed surface".into()));
    }
    let inv = inverse_re(re)?;
    let (mut lift, mut drag) = (0.0, 0.0);
    for ((p, n), ds) in surface.points.iter().zip(&surface.normals).zip(&surface.ds) {
        let j = field.jet(t, p)?;
        let pr = j.value(Field::P);
        let (ux, uy) = (j.grad(Field::U, 0), j.grad(Field::U, 1));
        let (vx, vy) = (j.grad(Field::V, 0), j.grad(Field::V, 1));
        let shear = inv * (uy + vx);
        lift += (-pr * n[1] + 2.0 * inv * vy * n[1] + shear * n[0]) * ds;
        drag += (-pr * n[0] + 2.0 * inv * ux * n[0] + shear * n[1]) * ds;
    }
    if !(lift.is_finite() && drag.is_finite()) {
        return Err(HfmError::NonFinite { node: None });
    }
    Ok((lift, drag))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceSeries {
    pub times: Vec<f64>,
    pub lift: Vec<f64>,
    pub drag: Vec<f64>,
}

pub fn force_series(
    field: &dyn FieldProvider,
    surface: &SurfaceDiscretization,
    re: f64,
    times: &[f64],
) -> Result<ForceSeries> {
    let mut s = ForceSeries {
        times: times.to_vec(),
        lift: Vec::with_capacity(times.len()),
        drag: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let (l, d) = lift_drag(field, surface, re, t)?;
        s.lift.push(l);
        s.drag.push(d);
    }
    Ok(s)
}

impl ForceSeries {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.times.len()).map(|k| vec![self.times[k], self.lift[k], self.drag[k]]);
        write_table(path, "t,FL,FD", rows)
    }
}

/// Wall shear stress at the points of one wall at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct WssSlice {
    pub time: f64,
    pub tau_x: Vec<f64>,
    pub tau_y: Vec<f64>,
    pub wss: Vec<f64>,
}

pub fn wall_shear_stress(field: &dyn FieldProvider, wall: &SurfaceDiscretization, re: f64, t: f64) -> Result<WssSlice> {
    require_2d(field)?;
    let inv = inverse_re(re)?;
    let mut s = WssSlice {
        time: t,
        tau_x: Vec::with_capacity(wall.len()),
        tau_y: Vec::with_capacity(wall.len()),
        wss: Vec::with_capacity(wall.len()),
    };
    for (p, n) in wall.points.iter().zip(&wall.normals) {
        let j = field.jet(t, p)?;
        let (ux, uy) = (j.grad(Field::U, 0), j.grad(Field::U, 1));
        let (vx, vy) = (j.grad(Field::V, 0), j.grad(Field::V, 1));
        let tx = 2.0 * inv * (ux * n[0] + 0.5 * (vx + uy) * n[1]);
        let ty = 2.0 * inv * (0.5 * (uy + vx) * n[0] + vy * n[1]);
        if !(tx.is_finite() && ty.is_finite()) {
            return Err(HfmError::NonFinite { node: None });
        }
        s.tau_x.push(tx);
        s.tau_y.push(ty);
        s.wss.push(tx.hypot(ty));
    }
    Ok(s)
}

/// Wall shear stress over several times.
#[derive(Clone, Debug, PartialEq)]
pub struct WssField {
    pub points: Vec<[f64; 2]>,
    pub slices: Vec<WssSlice>,
}

pub fn wss_field(field: &dyn FieldProvider, wall: &SurfaceDiscretization, re: f64, times: &[f64]) -> Result<WssField> {
    let slices = times
        .iter()
        .map(|&t| wall_shear_stress(field, wall, re, t))
        .collect::<Result<_>>()?;
    Ok(WssField {
        points: wall.points.clone(),
        slices,
    })
}

impl WssField {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = self.slices.iter().flat_map(|s| {
            self.points
                .iter()
                .enumerate()
                .map(move |(k, p)| vec![s.time, p[0], p[1], s.tau_x[k], s.tau_y[k], s.wss[k]])
        });
        write_table(path, "t,x,y,taux,tauy,wss", rows)
    }
}

/// Field values on a fixed point set at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    pub time: f64,
    pub dim: SpatialDim,
    /// Spatial coordinates, row-major.
    pub points: Vec<f64>,
    pub values: BTreeMap<Field, Vec<f64>>,
}

impl FieldSnapshot {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim.n()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Regular grid: `counts[k]` equispaced points on `[lo[k], hi[k]]` per
/// spatial axis, endpoints included (a single point sits at `lo`).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn validate(&self, dim: SpatialDim) -> Result<()> {
        let n = dim.n();
        if self.lo.len() != n || self.hi.len() != n || self.counts.len() != n {
            return Err(HfmError::InvalidInput(format!("grid spec needs {n} entries for lo, hi and counts")));
        }
        for k in 0..n {
            if !(self.lo[k].is_finite() && self.hi[k].is_finite() && self.lo[k] <= self.hi[k]) || self.counts[k] == 0 {
                return Err(HfmError::InvalidInput(format!("malformed grid axis {k}")));
            }
        }
        Ok(())
    }

    /// Spatial points, last axis fastest.
    pub fn points(&self) -> Vec<f64> {
        let n = self.counts.len();
        let axis = |k: usize, i: usize| {
            if self.counts[k] == 1 {
                self.lo[k]
            } else {
                self.lo[k] + (self.hi[k] - self.lo[k]) * i as f64 / (self.counts[k] - 1) as f64
            }
        };
        let total: usize = self.counts.iter().product();
        let mut out = Vec::with_capacity(total * n);
        for mut flat in 0..total {
            let mut idx = vec![0; n];
            for k in (0..n).rev() {
                idx[k] = flat % self.counts[k];
                flat /= self.counts[k];
            }
            out.extend((0..n).map(|k| axis(k, idx[k])));
        }
        out
    }
}

/// Dense snapshots of every field, plus whether any grid point lies
/// outside the provider's trusted region.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEvaluation {
    pub snapshots: Vec<FieldSnapshot>,
    pub extrapolated: bool,
}

pub fn evaluate_on_grid(field: &dyn FieldProvider, grid: &GridSpec, times: &[f64]) -> Result<GridEvaluation> {
    let dim = field.dim();
    grid.validate(dim)?;
    let n = dim.n();
    let spatial = grid.points();
    let extrapolated = field.domain().is_some_and(|dom| {
        spatial
            .chunks(n)
            .any(|p| p.iter().zip(&dom).any(|(v, (lo, hi))| *v < *lo || *v > *hi))
    });
    let mut snapshots = Vec::with_capacity(times.len());
    for &t in times {
        let mut pts = Vec::with_capacity(spatial.len() / n * (n + 1));
        for p in spatial.chunks(n) {
            pts.push(t);
            pts.extend_from_slice(p);
        }
        let vals = field.values_many(&pts)?;
        let values = dim
            .fields()
            .iter()
            .map(|f| (*f, vals.iter().map(|v| v[*f as usize]).collect()))
            .collect();
        snapshots.push(FieldSnapshot {
            time: t,
            dim,
            points: spatial.clone(),
            values,
        });
    }
    Ok(GridEvaluation {
        snapshots,
        extrapolated,
    })
}

/// Writes `t,x,y[,z],c,d,u,v[,w],p`.
pub fn write_fields_csv(path: &Path, snapshots: &[FieldSnapshot]) -> Result<()> {
    let dim = snapshots.first().map_or(SpatialDim::Two, |s| s.dim);
    let mut header = vec!["t", "x", "y"];
    if dim == SpatialDim::Three {
        header.push("z");
    }
    header.extend(dim.fields().iter().map(|f| f.name()));
    let rows = snapshots.iter().flat_map(|s| {
        (0..s.len()).map(move |k| {
            let mut r = vec![s.time];
            r.extend_from_slice(&s.points[k * dim.n()..(k + 1) * dim.n()]);
            r.extend(dim.fields().iter().map(|f| s.values.get(f).map_or(f64::NAN, |v| v[k])));
            r
        })
    });
    write_table(path, &header.join(","), rows)
}

/// Reads a file written by [`write_fields_csv`]. Consecutive rows with the
/// same time form one snapshot; a subset of field columns is accepted.
pub fn read_fields_csv(path: &Path) -> Result<Vec<FieldSnapshot>> {
    let (head, values) = read_numeric_csv(path)?;
    let parse_err = |message: String| HfmError::Parse {
        path: path.into(),
        line: 1,
        message,
    };
    let n = match head.get(3).map(String::as_str) {
        Some("z") => 3,
        _ => 2,
    };
    let coords = ["t", "x", "y", "z"];
    if head.len() <= n + 1 || head[..=n] != coords[..=n] {
        return Err(parse_err(format!("header '{}' must start with t,x,y[,z]", head.join(","))));
    }
    let fields = head[n + 1..]
        .iter()
        .map(|h| Field::parse(h).ok_or_else(|| parse_err(format!("unknown field column '{h}'"))))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(parse_err("no records".into()));
    }
    let dim = SpatialDim::from_n(n).expect("2 or 3");
    let mut out: Vec<FieldSnapshot> = Vec::new();
    for row in values.chunks(head.len()) {
        if out.last().is_none_or(|s| s.time != row[0]) {
            out.push(FieldSnapshot {
                time: row[0],
                dim,
                points: Vec::new(),
                values: fields.iter().map(|f| (*f, Vec::new())).collect(),
            });
        }
        let s = out.last_mut().expect("pushed above");
        s.points.extend_from_slice(&row[1..=n]);
        for (f, v) in fields.iter().zip(&row[n + 1..]) {
            s.values.get_mut(f).expect("column registered").push(*v);
        }
    }
    Ok(out)
}

/// Evaluates `field` at the times and points of `like`.
pub fn evaluate_like(field: &dyn FieldProvider, like: &[FieldSnapshot]) -> Result<Vec<FieldSnapshot>> {
    let dim = field.dim();
    like.iter()
        .map(|s| {
            if s.dim != dim {
                return Err(HfmError::Dimension {
                    expected: dim.n(),
                    actual: s.dim.n(),
                });
            }
            let mut pts = Vec::with_capacity(s.len() * (dim.n() + 1));
            for p in s.points.chunks(dim.n()) {
                pts.push(s.time);
                pts.extend_from_slice(p);
            }
            let vals = field.values_many(&pts)?;
            Ok(FieldSnapshot {
                time: s.time,
                dim,
                points: s.points.clone(),
                values: dim
                    .fields()
                    .iter()
                    .map(|f| (*f, vals.iter().map(|v| v[*f as usize]).collect()))
                    .collect(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorEntry {
    pub time: f64,
    pub field: Field,
    /// `None` when the exact field has zero norm.
    pub rel_l2: Option<f64>,
    pub aligned: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub entries: Vec<ErrorEntry>,
}

impl ErrorReport {
    pub fn get(&self, time: f64, field: Field) -> Option<&ErrorEntry> {
        self.entries.iter().find(|e| e.time == time && e.field == field)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| HfmError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "t,field,rel_l2,aligned").map_err(io)?;
        for e in &self.entries {
            let err = e.rel_l2.map_or_else(|| "undefined".to_string(), fmt17);
            writeln!(w, "{},{},{},{}", fmt17(e.time), e.field.name(), err, e.aligned).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Per-snapshot relative L2 errors of every field present in both inputs.
/// With `align_pressure`, the mean of `pred_p − exact_p` is removed first.
pub fn relative_l2(pred: &[FieldSnapshot], exact: &[FieldSnapshot], align_pressure: bool) -> Result<ErrorReport> {
    if pred.len() != exact.len() {
        return Err(HfmError::InvalidInput(format!(
            "{} predicted snapshots against {} exact ones",
            pred.len(),
            exact.len()
        )));
    }
    let mut report = ErrorReport::default();
    for (p, e) in pred.iter().zip(exact) {
        if (p.time - e.time).abs() > 1e-12 * e.time.abs().max(1.0) || p.points.len() != e.points.len() {
            return Err(HfmError::InvalidInput(format!(
                "snapshot at t = {} does not match t = {} point for point",
                p.time, e.time
            )));
        }
        for (field, ev) in &e.values {
            let Some(pv) = p.values.get(field) else { continue };
            if pv.len() != ev.len() {
                return Err(HfmError::Dimension {
                    expected: ev.len(),
                    actual: pv.len(),
                });
            }
            let aligned = align_pressure && *field == Field::P;
            let shift = if aligned {
                pv.iter().zip(ev).map(|(a, b)| a - b).sum::<f64>() / ev.len() as f64
            } else {
                0.0
            };
            let num = pv.iter().zip(ev).map(|(a, b)| (a - shift - b).powi(2)).sum::<f64>().sqrt();
            let den = ev.iter().map(|b| b * b).sum::<f64>().sqrt();
            report.entries.push(ErrorEntry {
                time: e.time,
                field: *field,
                rel_l2: (den > 0.0).then(|| num / den),
                aligned,
            });
        }
    }
    Ok(report)
}
