//! Densely connected approximator `(t, x, y[, z]) -> (c, d, u, v[, w], p)`.
//!
//! One shared trunk of sinusoidal hidden layers feeds a linear multi-output
//! head. Inputs are mapped affinely to `[-1, 1]` before the first layer and
//! every derivative is reported in the original coordinates.

pub(crate) mod batch;
pub mod checkpoint;
mod jet;

pub use batch::{JetBatch, JetLevel};
pub use jet::{Field, FieldJet, SpatialDim};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{HyperDual, Scalar};
use crate::error::{HfmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sin,
    Tanh,
}

impl Activation {
    /// `(σ, σ', σ'', σ''')` at `z`.
    #[inline]
    pub(crate) fn derivatives(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Sin => {
                let (s, c) = z.sin_cos();
                (s, c, -s, -c)
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1, d1 * (6.0 * t * t - 2.0))
            }
        }
    }

    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Sin => z.sin(),
            Activation::Tanh => z.tanh(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub dim: SpatialDim,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(dim: SpatialDim, hidden_layers: usize, hidden_width: usize) -> Result<Self> {
        let arch = Self {
            dim,
            hidden_layers,
            hidden_width,
            activation: Activation::Sin,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Ten hidden layers of `50 × outputs` units.
    pub fn paper_scale(dim: SpatialDim) -> Self {
        Self {
            dim,
            hidden_layers: 10,
            hidden_width: 50 * (dim.n() + 3),
            activation: Activation::Sin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(HfmError::InvalidArchitecture("at least one hidden layer is required".into()));
        }
        if self.hidden_width == 0 {
            return Err(HfmError::InvalidArchitecture("hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn input_arity(&self) -> usize {
        self.dim.n() + 1
    }

    pub fn output_arity(&self) -> usize {
        self.dim.n() + 3
    }

    /// `(fan_in, fan_out)` of each dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_arity();
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        shapes.push((fan_in, self.output_arity()));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Network weights stored as one flat vector.
///
/// Each layer contributes its weight matrix (row-major, `fan_out × fan_in`)
/// followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    flat: Vec<f64>,
}

/// One dense layer as owned matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: ndarray::Array2<f64>,
    pub bias: ndarray::Array1<f64>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Result<Self> {
        Self::from_flat(arch, vec![0.0; arch.param_count()])
    }

    pub fn from_flat(arch: &MlpArchitecture, flat: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (i, o) in &shapes {
            offsets.push(off);
            off += i * o + o;
        }
        if flat.len() != off {
            return Err(HfmError::ContractViolation(format!(
                "parameter vector has {} entries, architecture needs {off}",
                flat.len()
            )));
        }
        Ok(Self { shapes, offsets, flat })
    }

    pub fn from_layers(arch: &MlpArchitecture, layers: &[DenseLayer]) -> Result<Self> {
        let shapes = arch.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(HfmError::ContractViolation("layer count mismatch".into()));
        }
        let mut flat = Vec::with_capacity(arch.param_count());
        for (layer, &(fan_in, fan_out)) in layers.iter().zip(&shapes) {
            if layer.weights.dim() != (fan_out, fan_in) || layer.bias.len() != fan_out {
                return Err(HfmError::ContractViolation("layer shape mismatch".into()));
            }
            flat.extend(layer.weights.iter());
            flat.extend(layer.bias.iter());
        }
        Self::from_flat(arch, flat)
    }

    pub fn to_layers(&self) -> Vec<DenseLayer> {
        (0..self.shapes.len())
            .map(|l| {
                let (fan_in, fan_out) = self.shapes[l];
                let (w, b) = self.layer(l);
                DenseLayer {
                    weights: ndarray::Array2::from_shape_vec((fan_out, fan_in), w.to_vec())
                        .expect("shape checked at construction"),
                    bias: ndarray::Array1::from(b.to_vec()),
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        self.shapes[l]
    }

    /// Offset of layer `l` in the flat vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// `(weights, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = self.shapes[l];
        let off = self.offsets[l];
        let w_end = off + fan_in * fan_out;
        (&self.flat[off..w_end], &self.flat[w_end..w_end + fan_out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (fan_in, fan_out) = self.shapes[l];
        let off = self.offsets[l];
        let (w, b) = self.flat[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        (w, b)
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn initialize(arch: &MlpArchitecture, seed: u64) -> Result<MlpParams> {
    arch.validate()?;
    let mut params = MlpParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..params.layer_count() {
        let (fan_in, fan_out) = params.layer_shape(l);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive bound");
        let (w, _) = params.layer_mut(l);
        for x in w.iter_mut() {
            *x = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Per-coordinate affine map `x̂ = scale·x + shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl InputNormalization {
    pub fn identity(n: usize) -> Self {
        Self {
            scale: vec![1.0; n],
            shift: vec![0.0; n],
        }
    }

    /// Maps the box `[lo, hi]` onto `[-1, 1]` per coordinate. A degenerate
    /// extent is only centred.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(HfmError::ContractViolation("bound lengths differ".into()));
        }
        let mut scale = Vec::with_capacity(lo.len());
        let mut shift = Vec::with_capacity(lo.len());
        for (&a, &b) in lo.iter().zip(hi) {
            if !(a.is_finite() && b.is_finite()) || b < a {
                return Err(HfmError::InvalidInput(format!("invalid bounds [{a}, {b}]")));
            }
            if b > a {
                let s = 2.0 / (b - a);
                scale.push(s);
                shift.push(-1.0 - a * s);
            } else {
                scale.push(1.0);
                shift.push(-a);
            }
        }
        Ok(Self { scale, shift })
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// The box that maps onto `[-1, 1]`, as `(lo, hi)` per coordinate.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.scale
            .iter()
            .zip(&self.shift)
            .map(|(&s, &b)| ((-1.0 - b) / s, (1.0 - b) / s))
            .collect()
    }
}

/// A network ready for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub arch: MlpArchitecture,
    pub params: MlpParams,
    pub normalization: InputNormalization,
}

impl Mlp {
    pub fn new(arch: MlpArchitecture, params: MlpParams, normalization: InputNormalization) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(HfmError::ContractViolation("parameters do not match architecture".into()));
        }
        if normalization.len() != arch.input_arity() {
            return Err(HfmError::ContractViolation(format!(
                "normalization has {} coordinates, network takes {}",
                normalization.len(),
                arch.input_arity()
            )));
        }
        Ok(Self {
            arch,
            params,
            normalization,
        })
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.arch.input_arity() {
            return Err(HfmError::Dimension {
                expected: self.arch.dim.n(),
                actual: point.len().saturating_sub(1),
            });
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(HfmError::InvalidInput(format!("non-finite input point {point:?}")));
        }
        Ok(())
    }

    /// Output values at one point `(t, x, y[, z])`, in output order.
    pub fn forward(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        let mut batch = JetBatch::new(JetLevel::Value);
        batch.forward(self, point, 1);
        Ok((0..self.arch.output_arity()).map(|j| batch.output(0, 0, j)).collect())
    }

    /// Values and derivatives at one point.
    pub fn forward_jet(&self, point: &[f64]) -> Result<FieldJet<f64>> {
        self.check_point(point)?;
        let mut batch = JetBatch::new(JetLevel::Full);
        batch.forward(self, point, 1);
        let jet = batch.field_jet(0);
        if !jet.is_finite() {
            return Err(HfmError::NonFinite { node: None });
        }
        Ok(jet)
    }

    /// Jets at many points; `points` is row-major with `input_arity` columns.
    pub fn forward_jets(&self, points: &[f64]) -> Result<Vec<FieldJet<f64>>> {
        let n_in = self.arch.input_arity();
        if !points.len().is_multiple_of(n_in) {
            return Err(HfmError::ContractViolation("ragged point array".into()));
        }
        for p in points.chunks(n_in) {
            self.check_point(p)?;
        }
        let n = points.len() / n_in;
        let mut out = Vec::with_capacity(n);
        let mut batch = JetBatch::new(JetLevel::Full);
        for chunk in points.chunks(batch::CHUNK * n_in) {
            let m = chunk.len() / n_in;
            batch.forward(self, chunk, m);
            out.extend((0..m).map(|i| batch.field_jet(i)));
        }
        Ok(out)
    }

    /// Output values at many points.
    pub fn forward_many(&self, points: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n_in = self.arch.input_arity();
        if !points.len().is_multiple_of(n_in) {
            return Err(HfmError::ContractViolation("ragged point array".into()));
        }
        for p in points.chunks(n_in) {
            self.check_point(p)?;
        }
        let n_out = self.arch.output_arity();
        let mut out = Vec::with_capacity(points.len() / n_in);
        let mut batch = JetBatch::new(JetLevel::Value);
        for chunk in points.chunks(batch::CHUNK * n_in) {
            let m = chunk.len() / n_in;
            batch.forward(self, chunk, m);
            out.extend((0..m).map(|i| (0..n_out).map(|j| batch.output(0, i, j)).collect()));
        }
        Ok(out)
    }
}

/// Evaluates the network in any [`Scalar`] type, with parameters in the same
/// flat layout as [`MlpParams`]. Inputs are in original coordinates.
pub fn forward_generic<S: Scalar>(
    arch: &MlpArchitecture,
    params: &[S],
    normalization: &InputNormalization,
    point: &[S],
) -> Vec<S> {
    let mut h: Vec<S> = point
        .iter()
        .zip(normalization.scale.iter().zip(&normalization.shift))
        .map(|(&x, (&s, &b))| x.scale(s) + S::from_f64(b))
        .collect();
    let shapes = arch.layer_shapes();
    let mut off = 0;
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let hidden = l + 1 < shapes.len();
        h = (0..fan_out)
            .map(|j| {
                let mut z = b[j];
                for i in 0..fan_in {
                    z = z + w[j * fan_in + i] * h[i];
                }
                if hidden {
                    arch.activation.apply(z)
                } else {
                    z
                }
            })
            .collect();
    }
    h
}

/// Field jet computed through [`forward_generic`] in hyper-dual arithmetic:
/// one pass seeded on `t` and one pass per spatial axis seeded on both
/// directions. Works for any component scalar, including tape variables.
pub fn forward_jet_generic<S: Scalar>(
    arch: &MlpArchitecture,
    params: &[S],
    normalization: &InputNormalization,
    point: &[f64],
) -> FieldJet<S> {
    let n_in = arch.input_arity();
    let hd_params: Vec<HyperDual<S>> = params.iter().map(|&p| HyperDual::constant(p)).collect();
    let fields = arch.dim.fields();
    let mut jet = FieldJet::zeros(arch.dim);
    for seed in 0..n_in {
        let inputs: Vec<HyperDual<S>> = point
            .iter()
            .enumerate()
            .map(|(k, &x)| HyperDual::seeded(S::from_f64(x), k == seed, k == seed))
            .collect();
        let out = forward_generic(arch, &hd_params, normalization, &inputs);
        for (o, f) in out.iter().zip(fields) {
            let fi = *f as usize;
            jet.value[fi] = o.value;
            if seed == 0 {
                jet.d_t[fi] = o.d_a;
            } else {
                jet.d_x[seed - 1][fi] = o.d_a;
                jet.d_xx[seed - 1][fi] = o.d_ab;
            }
        }
    }
    jet
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(dim: SpatialDim, layers: usize, width: usize) -> MlpArchitecture {
        MlpArchitecture::new(dim, layers, width).unwrap()
    }

    #[test]
    fn parameter_count_by_shape() {
        assert_eq!(arch(SpatialDim::Two, 2, 4).param_count(), 61);
        let p = initialize(&arch(SpatialDim::Two, 2, 4), 1).unwrap();
        assert_eq!(p.len(), 61);
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(matches!(
            MlpArchitecture::new(SpatialDim::Two, 2, 0),
            Err(HfmError::InvalidArchitecture(_))
        ));
        let bad = MlpArchitecture {
            dim: SpatialDim::Three,
            hidden_layers: 0,
            hidden_width: 4,
            activation: Activation::Sin,
        };
        assert!(initialize(&bad, 0).is_err());
    }

    #[test]
    fn initialization_is_deterministic_and_bounded() {
        let a = arch(SpatialDim::Three, 3, 7);
        let p1 = initialize(&a, 42).unwrap();
        let p2 = initialize(&a, 42).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, initialize(&a, 43).unwrap());
        for l in 0..p1.layer_count() {
            let (fan_in, fan_out) = p1.layer_shape(l);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, b) = p1.layer(l);
            assert!(w.iter().all(|x| x.abs() <= limit));
            assert!(b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn flat_layers_round_trip() {
        let a = arch(SpatialDim::Two, 3, 5);
        let p = initialize(&a, 9).unwrap();
        let back = MlpParams::from_layers(&a, &p.to_layers()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn normalization_bounds_round_trip() {
        let n = InputNormalization::from_bounds(&[0.0, -2.0, 1.0], &[2.0, 6.0, 1.0]).unwrap();
        let b = n.bounds();
        assert!((b[0].0 - 0.0).abs() < 1e-15 && (b[0].1 - 2.0).abs() < 1e-15);
        assert!((b[1].0 + 2.0).abs() < 1e-15 && (b[1].1 - 6.0).abs() < 1e-15);
        assert_eq!(n.scale[2], 1.0);
    }
}
