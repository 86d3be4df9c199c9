//! Father and mother wavelets sampled on dyadic grids by the cascade algorithm.

use crate::error::{Error, Result};
use crate::linalg::solve_dense;

use super::filters::FilterPair;

pub const MIN_RESOLUTION: u32 = 4;
pub const MAX_RESOLUTION: u32 = 20;
const MAX_ITERATIONS: usize = 60;
const CONVERGENCE_TOL: f64 = 1e-10;

/// A function sampled at `k / 2^J` over a closed support `[lo, hi]`.
///
/// Evaluation interpolates linearly between samples and is zero outside the support.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicFunction {
    pub samples: Vec<f64>,
    pub resolution: u32,
    pub support: (f64, f64),
}

impl DyadicFunction {
    pub fn step(&self) -> f64 {
        (-(self.resolution as f64)).exp2()
    }

    pub fn x(&self, index: usize) -> f64 {
        self.support.0 + index as f64 * self.step()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.support;
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        let t = (x - lo) * (self.resolution as f64).exp2();
        let i = t.floor() as usize;
        if i + 1 >= self.samples.len() {
            return *self.samples.last().unwrap_or(&0.0);
        }
        let w = t - i as f64;
        if w == 0.0 {
            self.samples[i]
        } else {
            self.samples[i] * (1.0 - w) + self.samples[i + 1] * w
        }
    }

    /// Sample at an exact dyadic point `m / 2^J` (absolute index), zero off-grid support.
    pub fn at_index(&self, m: i64) -> f64 {
        let offset = (self.support.0 * (self.resolution as f64).exp2()).round() as i64;
        let idx = m - offset;
        if idx < 0 || idx as usize >= self.samples.len() {
            0.0
        } else {
            self.samples[idx as usize]
        }
    }

    /// Trapezoid-rule integral of `w(x) * f(x)`.
    pub fn integrate_with(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, &v) in self.samples.iter().enumerate() {
            let c = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            acc += c * v * weight(self.x(k));
        }
        acc * self.step()
    }

    pub fn l2_norm(&self) -> f64 {
        let sq = DyadicFunction {
            samples: self.samples.iter().map(|v| v * v).collect(),
            resolution: self.resolution,
            support: self.support,
        };
        sq.integrate_with(|_| 1.0).sqrt()
    }

    /// The same function on a coarser dyadic grid (exact subsampling).
    pub fn subsample(&self, resolution: u32) -> Result<DyadicFunction> {
        if resolution > self.resolution {
            return Err(Error::InvalidParameter(format!(
                "cannot subsample resolution {} to finer {}",
                self.resolution, resolution
            )));
        }
        let stride = 1usize << (self.resolution - resolution);
        Ok(DyadicFunction {
            samples: self.samples.iter().step_by(stride).copied().collect(),
            resolution,
            support: self.support,
        })
    }

    /// `(x, value)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().enumerate().map(|(k, &v)| (self.x(k), v))
    }
}

/// Values of the father wavelet at the integers `0..=2p-1`.
///
/// They form the eigenvector of the two-scale matrix `M_{ij} = sqrt(2) h_{2i-j}` for
/// eigenvalue 1, normalized to unit sum.
pub fn integer_samples(filter: &FilterPair) -> Result<Vec<f64>> {
    let len = filter.support_len();
    if filter.order == 1 {
        return Ok(vec![1.0, 0.0]);
    }
    // phi(0) = phi(2p-1) = 0; unknowns are phi(1..=2p-2).
    let n = len - 1;
    let mut a = vec![vec![0.0; n]; n];
    for (r, row) in a.iter_mut().enumerate() {
        let i = r as i64 + 1;
        for (c, cell) in row.iter_mut().enumerate() {
            let j = c as i64 + 1;
            let t = 2 * i - j;
            if t >= 0 && (t as usize) < filter.h.len() {
                *cell = std::f64::consts::SQRT_2 * filter.h[t as usize];
            }
            if r == c {
                *cell -= 1.0;
            }
        }
    }
    let mut b = vec![0.0; n];
    a[n - 1] = vec![1.0; n];
    b[n - 1] = 1.0;
    let interior = solve_dense(a, b).ok_or_else(|| Error::CascadeDiverged {
        order: filter.order,
        reason: "two-scale matrix has no unit eigenvector".into(),
    })?;
    let mut out = Vec::with_capacity(len + 1);
    out.push(0.0);
    out.extend(interior);
    out.push(0.0);
    Ok(out)
}

/// Runs the cascade algorithm at resolution `J` and returns `(father, mother)`
/// sampled at `k / 2^J` on `[0, 2p - 1]`.
pub fn cascade_evaluate(filter: &FilterPair, resolution: u32) -> Result<(DyadicFunction, DyadicFunction)> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(Error::InvalidParameter(format!(
            "cascade resolution must be in {MIN_RESOLUTION}..={MAX_RESOLUTION}, got {resolution}"
        )));
    }
    let per_unit = 1usize << resolution;
    let len = filter.support_len();
    let n = len * per_unit + 1;

    let ints = integer_samples(filter)?;
    let mut phi = vec![0.0; n];
    for (m, v) in phi.iter_mut().enumerate() {
        let q = m / per_unit;
        let w = (m % per_unit) as f64 / per_unit as f64;
        let right = if q + 1 < ints.len() { ints[q + 1] } else { 0.0 };
        *v = ints[q.min(ints.len() - 1)] * (1.0 - w) + right * w;
    }

    let mut next = vec![0.0; n];
    let mut last_diff = f64::INFINITY;
    let mut converged = false;
    for iteration in 0..MAX_ITERATIONS {
        refine(&filter.h, &phi, &mut next, per_unit);
        let diff = phi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut phi, &mut next);
        if !diff.is_finite() || (iteration > resolution as usize + 1 && diff > last_diff) {
            return Err(Error::CascadeDiverged {
                order: filter.order,
                reason: format!("max sample change grew to {diff:e} at iteration {iteration}"),
            });
        }
        last_diff = diff;
        if diff < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::CascadeDiverged {
            order: filter.order,
            reason: format!("max sample change {last_diff:e} after {MAX_ITERATIONS} iterations"),
        });
    }

    let mut psi = vec![0.0; n];
    refine(&filter.g, &phi, &mut psi, per_unit);

    let support = (0.0, len as f64);
    Ok((
        DyadicFunction { samples: phi, resolution, support },
        DyadicFunction { samples: psi, resolution, support },
    ))
}

/// `out[m] = sqrt(2) sum_n taps_n src[2m - n 2^J]`, zero outside `[0, n)`.
fn refine(taps: &[f64], src: &[f64], out: &mut [f64], per_unit: usize) {
    let n = src.len() as i64;
    for (m, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &t) in taps.iter().enumerate() {
            let idx = 2 * m as i64 - (k * per_unit) as i64;
            if idx >= 0 && idx < n {
                acc += t * src[idx as usize];
            }
        }
        *o = std::f64::consts::SQRT_2 * acc;
    }
}

/// Max-norm defect of `phi(x) = sqrt(2) sum h_n phi(2x - n)` at the grid points.
pub fn two_scale_residual(filter: &FilterPair, father: &DyadicFunction) -> f64 {
    let per_unit = 1usize << father.resolution;
    let mut rhs = vec![0.0; father.samples.len()];
    refine(&filter.h, &father.samples, &mut rhs, per_unit);
    father
        .samples
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
