//! Regions where diffusionlets exceed a threshold, and the truncated reconstruction
//! that only sums translates whose argument falls inside them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pde::{bracket, GridSolution};
use crate::wavelets::{Scale, WaveletExpansion};

use super::{time_scale, DiffusionletCache};

/// Levels examined before giving up on the amplitude falling below the threshold.
const MAX_LEVELS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSupport {
    pub level: u32,
    /// `2^{(2-2 lambda) i} tau`, the base-surface time read at this level.
    pub scaled_tau: f64,
    /// `max_y 2^{i/2} |Psi(scaled_tau, y)|`.
    pub amplitude: f64,
    /// Unit-scale arguments `y = 2^i x - k` where `2^{i/2} |Psi| > epsilon`.
    pub interval: Option<(f64, f64)>,
    /// Number of integer translates whose argument can land in `interval` at a fixed `x`.
    pub translates: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssentialSupport {
    pub epsilon: f64,
    pub tau: f64,
    /// Hull of the father and level-0 mother intervals.
    pub interval: Option<(f64, f64)>,
    /// Set when epsilon exceeds both surfaces everywhere.
    pub empty: bool,
    pub father_interval: Option<(f64, f64)>,
    pub levels: Vec<LevelSupport>,
    /// Smallest level whose amplitude is at most epsilon, if reached within the horizon.
    pub max_level: Option<u32>,
}

impl EssentialSupport {
    pub fn translates_per_level(&self) -> Vec<i64> {
        self.levels.iter().map(|l| l.translates).collect()
    }

    fn keeps_level(&self, scale: Scale) -> bool {
        match (scale, self.max_level) {
            (Scale::Father, _) | (_, None) => true,
            (Scale::Mother(i), Some(cut)) => i < cut,
        }
    }

    fn keeps(&self, scale: Scale, y: f64) -> bool {
        let inside = |iv: Option<(f64, f64)>| iv.is_some_and(|(a, b)| y >= a && y <= b);
        match scale {
            Scale::Father => inside(self.father_interval),
            Scale::Mother(i) => match self.levels.get(i as usize) {
                Some(level) => inside(level.interval),
                None => true,
            },
        }
    }
}

fn row_at(surface: &GridSolution, tau: f64) -> Option<Vec<f64>> {
    let (r, w) = bracket(&surface.tau_grid, tau)?;
    let a = &surface.values[r];
    if w == 0.0 {
        return Some(a.clone());
    }
    let b = &surface.values[r + 1];
    Some(a.iter().zip(b).map(|(u, v)| u * (1.0 - w) + v * w).collect())
}

/// Nodes bracketing every value above `threshold`; values outside it, including linear
/// interpolation between nodes, are at most `threshold`.
fn interval_above(xs: &[f64], row: &[f64], threshold: f64) -> Option<(f64, f64)> {
    let first = row.iter().position(|v| v.abs() > threshold)?;
    let last = row.iter().rposition(|v| v.abs() > threshold)?;
    Some((xs[first.saturating_sub(1)], xs[(last + 1).min(xs.len() - 1)]))
}

fn max_abs(row: &[f64]) -> f64 {
    row.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn essential_support(cache: &DiffusionletCache, epsilon: f64, tau: f64) -> Result<EssentialSupport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let horizon = |needed: f64| Error::HorizonExceeded {
        needed,
        horizon: cache.tau_max,
    };
    let xs = &cache.father_surface.x_grid;
    let father_row = row_at(&cache.father_surface, tau).ok_or(horizon(tau))?;
    let father_interval = interval_above(xs, &father_row, epsilon);

    let mut levels = Vec::new();
    let mut max_level = None;
    for i in 0..MAX_LEVELS {
        let scaled_tau = time_scale(cache.lambda, i) * tau;
        let Some(row) = row_at(&cache.mother_surface, scaled_tau) else {
            break;
        };
        let norm = (i as f64 / 2.0).exp2();
        let amplitude = norm * max_abs(&row);
        let interval = interval_above(xs, &row, epsilon / norm);
        levels.push(LevelSupport {
            level: i,
            scaled_tau,
            amplitude,
            interval,
            translates: interval.map_or(0, |(a, b)| (b - a).ceil() as i64 + 1),
        });
        if amplitude <= epsilon {
            max_level = Some(i);
            break;
        }
    }
    let mother_interval = levels.first().and_then(|l| l.interval);
    let interval = match (father_interval, mother_interval) {
        (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
        (one, other) => one.or(other),
    };
    Ok(EssentialSupport {
        epsilon,
        tau,
        interval,
        empty: interval.is_none(),
        father_interval,
        levels,
        max_level,
    })
}

/// Reconstruction restricted to the essential support; returns `(value, terms_used)`.
pub fn truncated_reconstruct(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    epsilon: f64,
    tau: f64,
    x: f64,
) -> Result<(f64, usize)> {
    let support = essential_support(cache, epsilon, tau)?;
    cache.accumulate(
        expansion,
        tau,
        x,
        |scale| support.keeps_level(scale),
        |scale, y| support.keeps(scale, y),
    )
}
