use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Hyper-dual number: a value with two first-order perturbations `d_a`,
/// `d_b` and the mixed second-order term `d_ab`.
///
/// Seeding `d_a = d_b = 1` on input `k` (and zero elsewhere) propagates
/// `(f, ∂f/∂k, ∂f/∂k, ∂²f/∂k²)` exactly through any program. The component
/// type is itself a [`Scalar`], so a hyper-dual over tape variables records
/// the input derivatives on a tape for a later reverse sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual<S> {
    pub value: S,
    pub d_a: S,
    pub d_b: S,
    pub d_ab: S,
}

impl<S: Scalar> HyperDual<S> {
    pub fn new(value: S, d_a: S, d_b: S, d_ab: S) -> Self {
        Self {
            value,
            d_a,
            d_b,
            d_ab,
        }
    }

    pub fn constant(value: S) -> Self {
        let zero = S::from_f64(0.0);
        Self::new(value, zero, zero, zero)
    }

    /// Input variable perturbed along seed `a` (if `along_a`) and seed `b`
    /// (if `along_b`).
    pub fn seeded(value: S, along_a: bool, along_b: bool) -> Self {
        let one = S::from_f64(1.0);
        let zero = S::from_f64(0.0);
        Self::new(
            value,
            if along_a { one } else { zero },
            if along_b { one } else { zero },
            zero,
        )
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.value`.
    #[inline]
    pub fn chain(self, f: S, df: S, d2f: S) -> Self {
        Self {
            value: f,
            d_a: df * self.d_a,
            d_b: df * self.d_b,
            d_ab: df * self.d_ab + d2f * self.d_a * self.d_b,
        }
    }

    fn recip(self) -> Self {
        let one = S::from_f64(1.0);
        let inv = one / self.value;
        let inv2 = inv * inv;
        self.chain(inv, -inv2, S::from_f64(2.0) * inv2 * inv)
    }
}

impl<S: Scalar> Add for HyperDual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(
            self.value + o.value,
            self.d_a + o.d_a,
            self.d_b + o.d_b,
            self.d_ab + o.d_ab,
        )
    }
}

impl<S: Scalar> Sub for HyperDual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.value - o.value,
            self.d_a - o.d_a,
            self.d_b - o.d_b,
            self.d_ab - o.d_ab,
        )
    }
}

impl<S: Scalar> Mul for HyperDual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.value * o.value,
            self.d_a * o.value + self.value * o.d_a,
            self.d_b * o.value + self.value * o.d_b,
            self.d_ab * o.value + self.d_a * o.d_b + self.d_b * o.d_a + self.value * o.d_ab,
        )
    }
}

impl<S: Scalar> Div for HyperDual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<S: Scalar> Neg for HyperDual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.value, -self.d_a, -self.d_b, -self.d_ab)
    }
}

impl<S: Scalar> Scalar for HyperDual<S> {
    fn from_f64(v: f64) -> Self {
        Self::constant(S::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn sin(self) -> Self {
        let (s, c) = (self.value.sin(), self.value.cos());
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = (self.value.sin(), self.value.cos());
        self.chain(c, -s, -c)
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        let dt = S::from_f64(1.0) - t * t;
        self.chain(t, dt, S::from_f64(-2.0) * t * dt)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    fn powi(self, n: i32) -> Self {
        let nf = n as f64;
        let f = self.value.powi(n);
        let df = self.value.powi(n - 1).scale(nf);
        let d2f = if n == 1 {
            S::from_f64(0.0)
        } else {
            self.value.powi(n - 2).scale(nf * (nf - 1.0))
        };
        self.chain(f, df, d2f)
    }

    fn powf(self, p: f64) -> Self {
        let f = self.value.powf(p);
        let df = self.value.powf(p - 1.0).scale(p);
        let d2f = self.value.powf(p - 2.0).scale(p * (p - 1.0));
        self.chain(f, df, d2f)
    }
}
