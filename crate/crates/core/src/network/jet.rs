use crate::autodiff::Scalar;

/// Spatial dimension of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SpatialDim {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
}

impl SpatialDim {
    pub fn n(self) -> usize {
        match self {
            SpatialDim::Two => 2,
            SpatialDim::Three => 3,
        }
    }

    pub fn from_n(n: usize) -> Option<Self> {
        match n {
            2 => Some(SpatialDim::Two),
            3 => Some(SpatialDim::Three),
            _ => None,
        }
    }

    /// Fields produced by the network, in output order.
    pub fn fields(self) -> &'static [Field] {
        match self {
            SpatialDim::Two => &[Field::C, Field::D, Field::U, Field::V, Field::P],
            SpatialDim::Three => &[Field::C, Field::D, Field::U, Field::V, Field::W, Field::P],
        }
    }
}

/// Network output variables. `D` is the complement `1 - c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    C = 0,
    D = 1,
    U = 2,
    V = 3,
    W = 4,
    P = 5,
}

impl Field {
    pub const ALL: [Field; 6] = [Field::C, Field::D, Field::U, Field::V, Field::W, Field::P];

    pub fn name(self) -> &'static str {
        match self {
            Field::C => "c",
            Field::D => "d",
            Field::U => "u",
            Field::V => "v",
            Field::W => "w",
            Field::P => "p",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Field::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Velocity component along spatial axis `k`.
    pub fn velocity(k: usize) -> Field {
        [Field::U, Field::V, Field::W][k]
    }
}

/// Field values with first time/space derivatives and pure second spatial
/// derivatives at one point, all in original (unnormalised) coordinates.
///
/// Arrays are indexed by [`Field`]; spatial arrays by axis (x, y, z). In 2-D
/// the `w` slot and every z entry are zero and never read by the residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldJet<S> {
    pub dim: SpatialDim,
    pub value: [S; 6],
    pub d_t: [S; 6],
    pub d_x: [[S; 6]; 3],
    pub d_xx: [[S; 6]; 3],
}

impl<S: Scalar> FieldJet<S> {
    pub fn zeros(dim: SpatialDim) -> Self {
        let z = S::from_f64(0.0);
        Self {
            dim,
            value: [z; 6],
            d_t: [z; 6],
            d_x: [[z; 6]; 3],
            d_xx: [[z; 6]; 3],
        }
    }

    pub fn value(&self, f: Field) -> S {
        self.value[f as usize]
    }

    pub fn dt(&self, f: Field) -> S {
        self.d_t[f as usize]
    }

    /// First derivative along spatial axis `k`.
    pub fn grad(&self, f: Field, k: usize) -> S {
        self.d_x[k][f as usize]
    }

    /// Pure second derivative along spatial axis `k`.
    pub fn second(&self, f: Field, k: usize) -> S {
        self.d_xx[k][f as usize]
    }

    /// Sum of pure second derivatives over the active spatial axes.
    pub fn laplacian(&self, f: Field) -> S {
        let mut acc = self.second(f, 0);
        for k in 1..self.dim.n() {
            acc = acc + self.second(f, k);
        }
        acc
    }
}

impl FieldJet<f64> {
    /// Re-labels a 2-D jet as 3-D with `w ≡ 0` and no z-dependence.
    pub fn lift_to_3d(&self) -> Self {
        let mut out = *self;
        out.dim = SpatialDim::Three;
        out.value[Field::W as usize] = 0.0;
        out.d_t[Field::W as usize] = 0.0;
        for k in 0..3 {
            out.d_x[k][Field::W as usize] = 0.0;
            out.d_xx[k][Field::W as usize] = 0.0;
        }
        out.d_x[2] = [0.0; 6];
        out.d_xx[2] = [0.0; 6];
        out
    }

    pub fn is_finite(&self) -> bool {
        self.value
            .iter()
            .chain(self.d_t.iter())
            .chain(self.d_x.iter().flatten())
            .chain(self.d_xx.iter().flatten())
            .all(|v| v.is_finite())
    }
}
