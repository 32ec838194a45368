//! Batched jet propagation through the network and its adjoint.
//!
//! A batch of `n` points is carried as `ncomp` stacked blocks of `n` rows:
//! block 0 holds values, block 1 time derivatives, and blocks `2 + 2k`,
//! `3 + 2k` the first and pure second derivatives along spatial axis `k`.
//! Each dense layer is then a single matrix product over all blocks, the
//! bias touching only the value block. The activation acts on the blocks
//! with the hyper-dual chain rule (seed pairs `a = b` per spatial axis, a
//! single seed on time), and [`JetBatch::backward`] is the hand-derived
//! adjoint of that forward sweep.

use super::{Field, FieldJet, Mlp, SpatialDim};

/// Points per block-stacked chunk. Keeps each layer's working set in cache.
pub(crate) const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetLevel {
    /// Values only.
    Value,
    /// Values, time derivatives, first and pure second spatial derivatives.
    Full,
}

/// Reusable workspace holding the forward sweep needed by the adjoint.
#[derive(Debug)]
pub struct JetBatch {
    level: JetLevel,
    dim: SpatialDim,
    n: usize,
    ncomp: usize,
    n_out: usize,
    /// Input of each layer, `ncomp·n × fan_in`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer, `ncomp·n × fan_out`.
    pre: Vec<Vec<f64>>,
    /// σ', σ'', σ''' at each hidden pre-activation value, `n × width`.
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    d3: Vec<Vec<f64>>,
    out_adj: Vec<f64>,
    zbar: Vec<f64>,
    abar: Vec<f64>,
}

/// `c = alpha·a·b + beta·c` on strided row-major buffers.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa);
    debug_assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserted extents cover every element addressed by the
    // strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl JetBatch {
    pub fn new(level: JetLevel) -> Self {
        Self {
            level,
            dim: SpatialDim::Two,
            n: 0,
            ncomp: 1,
            n_out: 0,
            inputs: Vec::new(),
            pre: Vec::new(),
            d1: Vec::new(),
            d2: Vec::new(),
            d3: Vec::new(),
            out_adj: Vec::new(),
            zbar: Vec::new(),
            abar: Vec::new(),
        }
    }

    pub fn level(&self) -> JetLevel {
        self.level
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn ncomp_for(level: JetLevel, dim: SpatialDim) -> usize {
        match level {
            JetLevel::Value => 1,
            JetLevel::Full => 2 + 2 * dim.n(),
        }
    }

    /// Block index of the time derivative.
    pub const T: usize = 1;

    /// Block index of the first derivative along spatial axis `k`.
    pub fn first(k: usize) -> usize {
        2 + 2 * k
    }

    /// Block index of the pure second derivative along spatial axis `k`.
    pub fn second(k: usize) -> usize {
        3 + 2 * k
    }

    /// Runs the forward sweep on `n` points given row-major in `points`.
    pub fn forward(&mut self, mlp: &Mlp, points: &[f64], n: usize) {
        let arch = &mlp.arch;
        let n_in = arch.input_arity();
        debug_assert_eq!(points.len(), n * n_in);
        let layers = mlp.params.layer_count();
        self.dim = arch.dim;
        self.n = n;
        self.ncomp = Self::ncomp_for(self.level, arch.dim);
        self.n_out = arch.output_arity();
        let ncomp = self.ncomp;
        let rows = ncomp * n;
        self.inputs.resize_with(layers, Vec::new);
        self.pre.resize_with(layers, Vec::new);
        self.d1.resize_with(layers - 1, Vec::new);
        self.d2.resize_with(layers - 1, Vec::new);
        self.d3.resize_with(layers - 1, Vec::new);

        let norm = &mlp.normalization;
        let x0 = &mut self.inputs[0];
        x0.clear();
        x0.resize(rows * n_in, 0.0);
        for i in 0..n {
            for c in 0..n_in {
                x0[i * n_in + c] = points[i * n_in + c] * norm.scale[c] + norm.shift[c];
            }
        }
        if self.level == JetLevel::Full {
            // d x̂_c / d x_c = scale_c, so derivatives come out in original coordinates.
            for i in 0..n {
                x0[(Self::T * n + i) * n_in] = norm.scale[0];
                for k in 0..arch.dim.n() {
                    x0[(Self::first(k) * n + i) * n_in + 1 + k] = norm.scale[1 + k];
                }
            }
        }

        for l in 0..layers {
            let (fan_in, fan_out) = mlp.params.layer_shape(l);
            let (w, b) = mlp.params.layer(l);
            let z = &mut self.pre[l];
            z.clear();
            z.resize(rows * fan_out, 0.0);
            gemm(rows, fan_in, fan_out, &self.inputs[l], fan_in, 1, w, 1, fan_in, 0.0, z, fan_out);
            for i in 0..n {
                for (zj, bj) in z[i * fan_out..(i + 1) * fan_out].iter_mut().zip(b) {
                    *zj += bj;
                }
            }
            if l + 1 == layers {
                break;
            }
            let act = arch.activation;
            let block = n * fan_out;
            let (d1, d2, d3) = (&mut self.d1[l], &mut self.d2[l], &mut self.d3[l]);
            d1.resize(block, 0.0);
            d2.resize(block, 0.0);
            d3.resize(block, 0.0);
            let a = &mut self.inputs[l + 1];
            a.clear();
            a.resize(rows * fan_out, 0.0);
            let z = &self.pre[l];
            for idx in 0..block {
                let (s, s1, s2, s3) = act.derivatives(z[idx]);
                a[idx] = s;
                d1[idx] = s1;
                d2[idx] = s2;
                d3[idx] = s3;
            }
            if self.level == JetLevel::Full {
                let t = Self::T * block;
                for idx in 0..block {
                    a[t + idx] = d1[idx] * z[t + idx];
                }
                for k in 0..arch.dim.n() {
                    let f = Self::first(k) * block;
                    let s = Self::second(k) * block;
                    for idx in 0..block {
                        let zk = z[f + idx];
                        a[f + idx] = d1[idx] * zk;
                        a[s + idx] = d1[idx] * z[s + idx] + d2[idx] * zk * zk;
                    }
                }
            }
        }
    }

    /// Output `j` of point `i` in block `comp`.
    #[inline]
    pub fn output(&self, comp: usize, i: usize, j: usize) -> f64 {
        self.pre[self.pre.len() - 1][(comp * self.n + i) * self.n_out + j]
    }

    /// Field jet of point `i` (requires [`JetLevel::Full`] for derivatives).
    pub fn field_jet(&self, i: usize) -> FieldJet<f64> {
        let mut jet = FieldJet::zeros(self.dim);
        for (j, f) in self.dim.fields().iter().enumerate() {
            let fi = *f as usize;
            jet.value[fi] = self.output(0, i, j);
            if self.level == JetLevel::Full {
                jet.d_t[fi] = self.output(Self::T, i, j);
                for k in 0..self.dim.n() {
                    jet.d_x[k][fi] = self.output(Self::first(k), i, j);
                    jet.d_xx[k][fi] = self.output(Self::second(k), i, j);
                }
            }
        }
        jet
    }

    /// Zeroes and returns the output adjoint buffer; index it with
    /// [`JetBatch::output_index`].
    pub fn reset_output_adjoint(&mut self) -> &mut [f64] {
        self.out_adj.clear();
        self.out_adj.resize(self.ncomp * self.n * self.n_out, 0.0);
        &mut self.out_adj
    }

    #[inline]
    pub fn output_index(&self, comp: usize, i: usize, field: Field) -> Option<usize> {
        let j = self.dim.fields().iter().position(|f| *f == field)?;
        Some((comp * self.n + i) * self.n_out + j)
    }

    #[inline]
    pub fn output_index_by_column(&self, comp: usize, i: usize, j: usize) -> usize {
        (comp * self.n + i) * self.n_out + j
    }

    /// Accumulates the parameter gradient of `Σ adjoint · output` into
    /// `grad` (flat layout of [`super::MlpParams`]).
    pub fn backward(&mut self, mlp: &Mlp, grad: &mut [f64]) {
        let layers = mlp.params.layer_count();
        let n = self.n;
        let rows = self.ncomp * n;
        std::mem::swap(&mut self.zbar, &mut self.out_adj);
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = mlp.params.layer_shape(l);
            let off = mlp.params.layer_offset(l);
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            gemm(fan_out, rows, fan_in, &self.zbar, 1, fan_out, &self.inputs[l], fan_in, 1, 1.0, gw, fan_in);
            for i in 0..n {
                for (g, zb) in gb.iter_mut().zip(&self.zbar[i * fan_out..(i + 1) * fan_out]) {
                    *g += zb;
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = mlp.params.layer(l);
            self.abar.clear();
            self.abar.resize(rows * fan_in, 0.0);
            gemm(rows, fan_out, fan_in, &self.zbar, fan_out, 1, w, fan_in, 1, 0.0, &mut self.abar, fan_in);

            // Adjoint of the activation of hidden layer l - 1 (width fan_in).
            let h = l - 1;
            let block = n * fan_in;
            let (d1, d2, d3) = (&self.d1[h], &self.d2[h], &self.d3[h]);
            let z = &self.pre[h];
            let abar = &self.abar;
            let zbar = &mut self.zbar;
            zbar.clear();
            zbar.resize(rows * fan_in, 0.0);
            for idx in 0..block {
                zbar[idx] = abar[idx] * d1[idx];
            }
            if self.level == JetLevel::Full {
                let t = Self::T * block;
                for idx in 0..block {
                    let at = abar[t + idx];
                    zbar[idx] += at * d2[idx] * z[t + idx];
                    zbar[t + idx] = at * d1[idx];
                }
                for k in 0..self.dim.n() {
                    let f = Self::first(k) * block;
                    let s = Self::second(k) * block;
                    for idx in 0..block {
                        let (ak, akk) = (abar[f + idx], abar[s + idx]);
                        let (zk, zkk) = (z[f + idx], z[s + idx]);
                        zbar[idx] += ak * d2[idx] * zk + akk * (d2[idx] * zkk + d3[idx] * zk * zk);
                        zbar[f + idx] = ak * d1[idx] + 2.0 * akk * d2[idx] * zk;
                        zbar[s + idx] = akk * d1[idx];
                    }
                }
            }
        }
        std::mem::swap(&mut self.zbar, &mut self.out_adj);
    }
}
