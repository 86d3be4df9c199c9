//! Monte-Carlo estimates of `E[f(X_tau) | X_0 = x0]` by Euler–Maruyama.
//!
//! Path `p` draws its normals from ChaCha8 seeded with `seed` on stream `p`, so an
//! estimate does not depend on how paths are split across threads.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pde::CoefFn;

/// `dX = drift(t, X) dt + diffusion(t, X) dW`.
#[derive(Clone)]
pub struct SdeSpec {
    pub drift: CoefFn,
    pub diffusion: CoefFn,
    /// Paths are absorbed at 0 and coefficients see `max(x, 0)`.
    pub absorbing_zero: bool,
    pub label: String,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("label", &self.label)
            .field("absorbing_zero", &self.absorbing_zero)
            .finish()
    }
}

impl SdeSpec {
    pub fn new(drift: CoefFn, diffusion: CoefFn, absorbing_zero: bool, label: impl Into<String>) -> Self {
        Self {
            drift,
            diffusion,
            absorbing_zero,
            label: label.into(),
        }
    }

    /// `dX = r X dt + sigma X^lambda dW`; absorbed at 0 when `lambda > 0`.
    pub fn cev(r: f64, sigma: f64, lambda: f64) -> Self {
        let diffusion: CoefFn = if lambda == 0.0 {
            Arc::new(move |_, _| sigma)
        } else {
            Arc::new(move |_, x: f64| sigma * x.max(0.0).powf(lambda))
        };
        Self::new(
            Arc::new(move |_, x| r * x),
            diffusion,
            lambda > 0.0,
            format!("cev(r={r}, sigma={sigma}, lambda={lambda})"),
        )
    }
}

/// Mean-zero square-root process `dX = -b X dt + sigma sqrt(X) dW`.
pub fn cir_preset(b: f64, sigma: f64) -> Result<SdeSpec> {
    if !(b > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cir needs b > 0 and sigma >= 0, got b={b}, sigma={sigma}"
        )));
    }
    Ok(SdeSpec::new(
        Arc::new(move |_, x| -b * x),
        Arc::new(move |_, x: f64| sigma * x.max(0.0).sqrt()),
        true,
        format!("cir(b={b}, sigma={sigma})"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Number of standard errors separating the estimate from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - value).abs() / self.std_error
        }
    }

    pub(crate) fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            n_paths: n,
            seed,
        }
    }
}

/// Terminal state of path `path` after `n_steps` Euler–Maruyama steps over `[0, tau]`.
pub fn simulate_path(spec: &SdeSpec, x0: f64, tau: f64, n_steps: usize, seed: u64, path: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    let dt = tau / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut x = x0;
    for n in 0..n_steps {
        let t = n as f64 * dt;
        let z: f64 = rng.sample(StandardNormal);
        let arg = if spec.absorbing_zero { x.max(0.0) } else { x };
        x += (spec.drift)(t, arg) * dt + (spec.diffusion)(t, arg) * sqrt_dt * z;
        if spec.absorbing_zero && x <= 0.0 {
            return 0.0;
        }
    }
    x
}

/// Estimates `E[payoff(X_tau) | X_0 = x0]`.
pub fn mc_expectation(
    spec: &SdeSpec,
    payoff: impl Fn(f64) -> f64 + Sync,
    x0: f64,
    tau: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::InvalidParameter("need at least one path and one step".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        let v = payoff(x0);
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "payoff", index: 0, value: v });
        }
        return Ok(McEstimate {
            mean: v,
            std_error: 0.0,
            n_paths,
            seed,
        });
    }
    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| payoff(simulate_path(spec, x0, tau, n_steps, seed, p)))
        .collect();
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { what: "payoff", index, value });
    }
    Ok(McEstimate::from_samples(&values, seed))
}
