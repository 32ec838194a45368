use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spectral::GridField2D;
use crate::dataset::SampledDataset;
use crate::error::{HfmError, Result};
use crate::network::SpatialDim;

/// Draws `count` observations uniformly over (snapshot, node), with
/// replacement. With `sigma > 0` each value gets Gaussian noise and is
/// clamped to `[0, 1]`.
pub fn sample_points(snapshots: &[GridField2D], count: usize, seed: u64, sigma: f64) -> Result<SampledDataset> {
    if snapshots.is_empty() {
        return Err(HfmError::InvalidInput("no snapshots to sample from".into()));
    }
    if count == 0 {
        return Err(HfmError::InvalidInput("sample count must be at least 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(HfmError::InvalidInput(format!("noise level must be ≥ 0, got {sigma}")));
    }
    let n = snapshots[0].n();
    if snapshots.iter().any(|s| s.n() != n) {
        return Err(HfmError::InvalidInput("snapshots have different grid sizes".into()));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| HfmError::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(3 * count);
    let mut c = Vec::with_capacity(count);
    for _ in 0..count {
        let s = &snapshots[rng.random_range(0..snapshots.len())];
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let (x, y) = s.node(i, j);
        points.extend([s.time, x, y]);
        let mut v = s.at(i, j);
        if sigma > 0.0 {
            v = (v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        c.push(v);
    }
    SampledDataset::new(SpatialDim::Two, points, c)
}

/// `count` points drawn uniformly from the box `[lo, hi]` (one entry per
/// coordinate, time first).
pub fn uniform_collocation(lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(HfmError::InvalidInput("collocation bounds must have matching lengths".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
        return Err(HfmError::InvalidInput("collocation bounds must be finite with lo ≤ hi".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * lo.len());
    for _ in 0..count {
        for (a, b) in lo.iter().zip(hi) {
            out.push(if a == b { *a } else { rng.random_range(*a..*b) });
        }
    }
    Ok(out)
}
