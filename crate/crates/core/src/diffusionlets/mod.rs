//! Diffusionlets: solutions of the discounted equation with a wavelet as terminal
//! condition, and reconstruction of a general solution from them.
//!
//! Under `x -> 2^i x` the equation is invariant once time is rescaled by `2^{(2-2 lambda) i}`,
//! so the father and mother surfaces at unit scale determine every dilate:
//! `Psi_{i,k}(tau, x) = 2^{i/2} Psi(2^{(2-2 lambda) i} tau, 2^i x - k)`. The translation step is
//! exact only for `lambda = 0`; [`CacheMode::Exact`] solves each translate directly so the
//! two can be compared.

mod persist;
mod support;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{self, GridSolution, PdeSpec};
use crate::wavelets::{Scale, Term, WaveletBasis, WaveletExpansion};

pub use persist::{load_cache, read_cache, save_cache, write_cache};
pub use support::{essential_support, truncated_reconstruct, EssentialSupport, LevelSupport};

/// Upper bound on the number of per-translate solves in exact mode.
pub const MAX_EXACT_SOLVES: usize = 4096;

/// Spatial and temporal layout of the base surfaces.
///
/// Nodes sit on the dyadic grid `x_lo + m 2^-resolution`. Positive snapshot times are
/// `2^{j / per_octave}` from `2^min_octave` up to the first one reaching `tau_max`, with
/// `steps_per_snapshot` Crank–Nicolson steps between neighbours and `initial_steps` steps
/// on `[0, 2^min_octave]`, the first `implicit_startup` of them fully implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub resolution: u32,
    pub min_octave: i32,
    pub per_octave: u32,
    pub steps_per_snapshot: usize,
    pub initial_steps: usize,
    pub implicit_startup: usize,
}

impl CacheGrid {
    /// Smallest interval holding the unit-scale wavelets and six diffusion standard
    /// deviations of spreading at `tau_max`.
    pub fn required_extent(lambda: f64, sigma: f64, order: usize, tau_max: f64) -> (f64, f64) {
        let width = (2 * order - 1) as f64;
        let margin = 6.0 * sigma * tau_max.sqrt();
        if lambda == 0.0 {
            (-margin, width + margin)
        } else {
            (0.0, width + margin * width.powf(lambda))
        }
    }

    /// A grid with default time stepping whose extent is the required one rounded out to
    /// integers.
    pub fn covering(lambda: f64, sigma: f64, order: usize, tau_max: f64, resolution: u32) -> Self {
        let (lo, hi) = Self::required_extent(lambda, sigma, order, tau_max);
        Self {
            x_lo: lo.floor(),
            x_hi: hi.ceil(),
            resolution,
            min_octave: -12,
            per_octave: 8,
            steps_per_snapshot: 2,
            initial_steps: 16,
            implicit_startup: 2,
        }
    }

    pub fn step(&self) -> f64 {
        (-(self.resolution as f64)).exp2()
    }

    pub fn nodes(&self) -> usize {
        ((self.x_hi - self.x_lo) / self.step()).round() as usize + 1
    }

    fn validate(&self) -> Result<()> {
        let scale = (self.resolution as f64).exp2();
        let aligned = |v: f64| v.is_finite() && (v * scale).fract() == 0.0;
        if !(aligned(self.x_lo) && aligned(self.x_hi) && self.x_hi > self.x_lo) {
            return Err(Error::InvalidGrid(format!(
                "cache extent [{}, {}] must be increasing multiples of 2^-{}",
                self.x_lo, self.x_hi, self.resolution
            )));
        }
        if self.per_octave == 0 || self.steps_per_snapshot == 0 || self.initial_steps == 0 {
            return Err(Error::InvalidGrid("snapshot and step counts must be positive".into()));
        }
        Ok(())
    }

    /// Positive snapshot times covering `tau_max`.
    pub fn snapshots(&self, tau_max: f64) -> Vec<f64> {
        let m = self.per_octave as i64;
        let first = self.min_octave as i64 * m;
        let last = ((tau_max.log2() * m as f64) - 1e-9).ceil() as i64;
        (first..=last.max(first)).map(|j| (j as f64 / m as f64).exp2()).collect()
    }

    fn substeps(&self, count: usize) -> Vec<usize> {
        (0..count)
            .map(|j| if j == 0 { self.initial_steps } else { self.steps_per_snapshot })
            .collect()
    }
}

/// Index ranges (inclusive) solved individually in exact mode and the query times kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRanges {
    pub father: (i64, i64),
    /// `levels[i]` is the translate range at detail level `i`.
    pub levels: Vec<(i64, i64)>,
    pub taus: Vec<f64>,
}

impl ExactRanges {
    /// Every index of `expansion`.
    pub fn covering(expansion: &WaveletExpansion, taus: Vec<f64>) -> Self {
        let range = |scale: Scale| {
            let first = expansion.first_index(scale);
            (first, first + (expansion.length as f64 * scale.dilation()) as i64 - 1)
        };
        Self {
            father: range(Scale::Father),
            levels: (0..expansion.levels as u32).map(|i| range(Scale::Mother(i))).collect(),
            taus,
        }
    }

    pub fn keys(&self) -> Vec<(Scale, i64)> {
        let mut keys: Vec<(Scale, i64)> = (self.father.0..=self.father.1).map(|k| (Scale::Father, k)).collect();
        for (i, &(lo, hi)) in self.levels.iter().enumerate() {
            keys.extend((lo..=hi).map(|k| (Scale::Mother(i as u32), k)));
        }
        keys
    }

    fn count(&self) -> usize {
        let span = |(lo, hi): (i64, i64)| if hi >= lo { (hi - lo + 1) as usize } else { 0 };
        span(self.father) + self.levels.iter().map(|&r| span(r)).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CacheMode {
    /// Two base surfaces; translates and dilates by change of variables.
    Fast,
    /// Base surfaces plus one direct solve per index in the ranges.
    Exact(ExactRanges),
}

/// Father and mother diffusionlet surfaces on a shared grid. Immutable after build.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionletCache {
    pub lambda: f64,
    pub sigma: f64,
    /// Last snapshot time; scaled lookups beyond it are errors.
    pub tau_max: f64,
    pub grid: CacheGrid,
    /// Basis sampled at the grid resolution.
    pub basis: WaveletBasis,
    pub father_surface: GridSolution,
    pub mother_surface: GridSolution,
    pub mode: CacheMode,
    pub exact_surfaces: BTreeMap<(Scale, i64), GridSolution>,
}

/// Time dilation `2^{(2 - 2 lambda) i}` of level `i`.
pub fn time_scale(lambda: f64, level: u32) -> f64 {
    ((2.0 - 2.0 * lambda) * level as f64).exp2()
}

fn level_of(scale: Scale) -> u32 {
    match scale {
        Scale::Father => 0,
        Scale::Mother(i) => i,
    }
}

pub fn build_cache(
    lambda: f64,
    sigma: f64,
    basis: &WaveletBasis,
    tau_max: f64,
    grid: &CacheGrid,
    mode: CacheMode,
) -> Result<DiffusionletCache> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda must be in [0, 1], got {lambda}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if !(tau_max.is_finite() && tau_max > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_max must be > 0, got {tau_max}")));
    }
    grid.validate()?;
    let basis = basis.at_resolution(grid.resolution)?;
    let (need_lo, need_hi) = CacheGrid::required_extent(lambda, sigma, basis.order(), tau_max);
    if grid.x_lo > need_lo || grid.x_hi < need_hi || (lambda > 0.0 && grid.x_lo < 0.0) {
        return Err(Error::GridTooSmall {
            lo: grid.x_lo,
            hi: grid.x_hi,
            need_lo,
            need_hi,
        });
    }

    let snaps = grid.snapshots(tau_max);
    let substeps = grid.substeps(snaps.len());
    let horizon = *snaps.last().expect("at least one snapshot");
    let spec = PdeSpec::discounted(lambda, sigma, (grid.x_lo, grid.x_hi), horizon);
    let nx = grid.nodes();
    let xs = pde::uniform_grid(spec.domain, nx);
    let solve = |f: &dyn Fn(f64) -> f64| {
        let terminal: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        pde::solve_with_substeps(&spec, &terminal, nx, &snaps, &substeps, 0.5, grid.implicit_startup)
    };
    let father_surface = solve(&|x| basis.father.eval(x))?;
    let mother_surface = solve(&|x| basis.mother.eval(x))?;

    let mut cache = DiffusionletCache {
        lambda,
        sigma,
        tau_max: horizon,
        grid: grid.clone(),
        basis,
        father_surface,
        mother_surface,
        mode: mode.clone(),
        exact_surfaces: BTreeMap::new(),
    };
    if let CacheMode::Exact(ranges) = &mode {
        let count = ranges.count();
        if count > MAX_EXACT_SOLVES {
            return Err(Error::InvalidParameter(format!(
                "exact mode asks for {count} solves; the limit is {MAX_EXACT_SOLVES}"
            )));
        }
        if ranges.taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParameter("exact-mode query times must be finite and >= 0".into()));
        }
        let solved: Vec<((Scale, i64), GridSolution)> = ranges
            .keys()
            .into_par_iter()
            .map(|key| cache.solve_translate(key.0, key.1, &ranges.taus).map(|s| (key, s)))
            .collect::<Result<_>>()?;
        cache.exact_surfaces = solved.into_iter().collect();
    }
    Ok(cache)
}

impl DiffusionletCache {
    pub fn order(&self) -> usize {
        self.basis.order()
    }

    /// Positive snapshot times shared by both base surfaces.
    pub fn tau_snapshots(&self) -> &[f64] {
        &self.father_surface.tau_grid
    }

    /// Direct solve with terminal `phi_{0,k}` or `psi_{i,k}`, on the base grid mapped by
    /// `y = 2^i x - k`, keeping rows at `taus` only.
    fn solve_translate(&self, scale: Scale, k: i64, taus: &[f64]) -> Result<GridSolution> {
        let level = level_of(scale);
        let s = scale.dilation();
        let f = time_scale(self.lambda, level);
        let g = &self.grid;
        let step = g.step() / s;
        let tau_lim = taus.iter().copied().fold(0.0, f64::max);
        let (lo, hi) = if self.lambda == 0.0 {
            ((g.x_lo + k as f64) / s, (g.x_hi + k as f64) / s)
        } else {
            if k < 0 {
                return Err(Error::InvalidParameter(format!(
                    "exact mode with lambda > 0 needs translates inside x >= 0, got k = {k}"
                )));
            }
            let right = (k as f64 + self.basis.support_len() as f64) / s;
            let need = right + 6.0 * self.sigma * tau_lim.sqrt() * right.powf(self.lambda);
            let hi = ((g.x_hi + k as f64) / s).max((need / step).ceil() * step);
            (0.0, hi)
        };
        let nx = ((hi - lo) / step).round() as usize + 1;

        let base = self.tau_snapshots();
        let needed = base.iter().position(|&t| t / f >= tau_lim * (1.0 - 1e-12)).ok_or(Error::HorizonExceeded {
            needed: tau_lim * f,
            horizon: self.tau_max,
        })?;
        let snaps: Vec<f64> = base[1..=needed.max(1)].iter().map(|t| t / f).collect();
        let substeps = g.substeps(snaps.len());
        let spec = PdeSpec::discounted(self.lambda, self.sigma, (lo, hi), snaps[snaps.len() - 1]);
        let xs = pde::uniform_grid((lo, hi), nx);
        let terminal: Vec<f64> = xs.iter().map(|&x| self.basis.basis_value(scale, k, x)).collect();
        let full = pde::solve_with_substeps(&spec, &terminal, nx, &snaps, &substeps, 0.5, g.implicit_startup)?;

        let mut kept_taus = vec![0.0];
        let mut values = vec![full.values[0].clone()];
        let mut sorted: Vec<f64> = taus.iter().copied().filter(|&t| t > 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        for tau in sorted {
            let row: Vec<f64> = (0..nx)
                .map(|j| {
                    let (r, w) = pde::bracket(&full.tau_grid, tau).expect("solved past every query time");
                    if w == 0.0 {
                        full.values[r][j]
                    } else {
                        full.values[r][j] * (1.0 - w) + full.values[r + 1][j] * w
                    }
                })
                .collect();
            kept_taus.push(tau);
            values.push(row);
        }
        Ok(GridSolution {
            tau_grid: kept_taus,
            x_grid: full.x_grid,
            values,
        })
    }

    fn check_horizon(&self, level: u32, tau: f64) -> Result<f64> {
        if !(tau >= 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
        }
        let scaled = time_scale(self.lambda, level) * tau;
        if scaled > self.tau_max * (1.0 + 1e-12) {
            return Err(Error::HorizonExceeded {
                needed: scaled,
                horizon: self.tau_max,
            });
        }
        Ok(scaled.min(self.tau_max))
    }

    /// Base surface value at unit scale: `Phi(tau, y)` or `Psi(tau, y)`; zero off the grid.
    pub fn base_value(&self, mother: bool, tau: f64, y: f64) -> Result<f64> {
        let surface = if mother { &self.mother_surface } else { &self.father_surface };
        surface.interpolate(tau, y).ok_or(Error::HorizonExceeded {
            needed: tau,
            horizon: self.tau_max,
        })
    }

    fn exact_value(&self, scale: Scale, k: i64, tau: f64, x: f64) -> Result<f64> {
        let surface = self.exact_surfaces.get(&(scale, k)).ok_or_else(|| {
            Error::InvalidParameter(format!("no exact surface for {scale:?} k = {k}; widen the exact ranges"))
        })?;
        let row = surface.tau_index(tau).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "exact surfaces hold tau in {:?}, not {tau}",
                surface.tau_grid
            ))
        })?;
        Ok(surface.interpolate_row(row, x))
    }

    /// Scaled diffusionlet `Phi_{0,k}` or `Psi_{i,k}` at `(tau, x)`.
    pub fn eval(&self, scale: Scale, k: i64, tau: f64, x: f64) -> Result<f64> {
        let level = level_of(scale);
        let scaled = self.check_horizon(level, tau)?;
        match (&self.mode, scale) {
            (CacheMode::Exact(_), _) => self.exact_value(scale, k, tau, x),
            (CacheMode::Fast, Scale::Father) => self.base_value(false, scaled, x - k as f64),
            (CacheMode::Fast, Scale::Mother(i)) => {
                let s = (i as f64).exp2();
                Ok(s.sqrt() * self.base_value(true, scaled, s * x - k as f64)?)
            }
        }
    }

    /// Calls `visit(term, value)` for every nonzero coefficient of `expansion`, with the
    /// diffusionlet value summed over the periodic images accepted by `keep(scale, y)`
    /// (`y` is the unit-scale argument). Levels rejected by `keep_level` are skipped
    /// before the horizon check. Returns the number of images evaluated.
    pub(crate) fn visit_terms(
        &self,
        expansion: &WaveletExpansion,
        tau: f64,
        x: f64,
        keep_level: impl Fn(Scale) -> bool,
        keep: impl Fn(Scale, f64) -> bool,
        mut visit: impl FnMut(Term, f64),
    ) -> Result<usize> {
        if expansion.order != self.order() {
            return Err(Error::InconsistentExpansion(format!(
                "expansion uses db{} but the cache holds db{}",
                expansion.order,
                self.order()
            )));
        }
        let period = expansion.period();
        let (y_lo, y_hi) = (self.grid.x_lo, self.grid.x_hi);
        let fast = matches!(self.mode, CacheMode::Fast);
        let mut used = 0;
        for scale in std::iter::once(Scale::Father).chain((0..expansion.levels as u32).map(Scale::Mother)) {
            if !keep_level(scale) {
                continue;
            }
            self.check_horizon(level_of(scale), tau)?;
            let s = scale.dilation();
            let first = expansion.first_index(scale);
            let count = (expansion.length as f64 * s) as i64;
            for k in first..first + count {
                let coef = expansion.coefficient(scale, k).unwrap_or(0.0);
                if coef == 0.0 {
                    continue;
                }
                let mut value = 0.0;
                let mut hit = false;
                for l in expansion.image_range(scale, k) {
                    let xl = x - l as f64 * period;
                    let y = s * xl - k as f64;
                    if (fast && !(y >= y_lo && y <= y_hi)) || !keep(scale, y) {
                        continue;
                    }
                    value += self.eval(scale, k, tau, xl)?;
                    hit = true;
                    used += 1;
                }
                if hit {
                    visit(Term { scale, k, coef }, value);
                }
            }
        }
        Ok(used)
    }

    pub(crate) fn accumulate(
        &self,
        expansion: &WaveletExpansion,
        tau: f64,
        x: f64,
        keep_level: impl Fn(Scale) -> bool,
        keep: impl Fn(Scale, f64) -> bool,
    ) -> Result<(f64, usize)> {
        let mut acc = 0.0;
        let used = self.visit_terms(expansion, tau, x, keep_level, keep, |t, v| acc += t.coef * v)?;
        Ok((acc, used))
    }
}

/// Nonzero coefficients of `expansion` paired with their diffusionlet value at `(tau, x)`,
/// periodic images included.
pub fn diffusionlet_terms(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    tau: f64,
    x: f64,
) -> Result<Vec<(Term, f64)>> {
    let mut out = Vec::new();
    cache.visit_terms(expansion, tau, x, |_| true, |_, _| true, |t, v| out.push((t, v)))?;
    Ok(out)
}

/// [`reconstruct`] together with the number of translates evaluated.
pub fn reconstruct_counted(cache: &DiffusionletCache, expansion: &WaveletExpansion, tau: f64, x: f64) -> Result<(f64, usize)> {
    cache.accumulate(expansion, tau, x, |_| true, |_, _| true)
}

pub fn eval_father(cache: &DiffusionletCache, k: i64, tau: f64, x: f64) -> Result<f64> {
    cache.eval(Scale::Father, k, tau, x)
}

pub fn eval_mother(cache: &DiffusionletCache, level: u32, k: i64, tau: f64, x: f64) -> Result<f64> {
    cache.eval(Scale::Mother(level), k, tau, x)
}

/// `sum_k alpha_k Phi_{0,k}(tau, x) + sum_{i,k} beta_{i,k} Psi_{i,k}(tau, x)`.
pub fn reconstruct(cache: &DiffusionletCache, expansion: &WaveletExpansion, tau: f64, x: f64) -> Result<f64> {
    Ok(reconstruct_counted(cache, expansion, tau, x)?.0)
}

/// Discrete L2 norms over the base grid of
/// `Phi(tau, y) - sqrt2 sum h_n Phi(2^{2-2 lambda} tau, 2y - n)` and of the same
/// expression for `Psi` with the high-pass filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementResidual {
    pub father: f64,
    pub mother: f64,
}

pub fn refinement_residual(cache: &DiffusionletCache, tau: f64) -> Result<RefinementResidual> {
    let coarse = cache.check_horizon(1, tau)?;
    let xs = &cache.father_surface.x_grid;
    let dx = cache.father_surface.dx();
    let filter = &cache.basis.filter;
    let root2 = std::f64::consts::SQRT_2;
    let mut father = 0.0;
    let mut mother = 0.0;
    for &y in xs {
        let mut fine_f = 0.0;
        let mut fine_m = 0.0;
        for (n, (&h, &g)) in filter.h.iter().zip(&filter.g).enumerate() {
            let phi = cache.base_value(false, coarse, 2.0 * y - n as f64)?;
            fine_f += h * phi;
            fine_m += g * phi;
        }
        let df = cache.base_value(false, tau, y)? - root2 * fine_f;
        let dm = cache.base_value(true, tau, y)? - root2 * fine_m;
        father += df * df;
        mother += dm * dm;
    }
    Ok(RefinementResidual {
        father: (father * dx).sqrt(),
        mother: (mother * dx).sqrt(),
    })
}

/// Relative L2 distance at `tau` between the base father solution translated by `k` and a
/// direct solve whose terminal is the translated father wavelet, on a grid covering both.
pub fn translation_discrepancy(
    lambda: f64,
    sigma: f64,
    basis: &WaveletBasis,
    k: i64,
    tau: f64,
    grid: &CacheGrid,
) -> Result<f64> {
    if k == 0 {
        return Ok(0.0);
    }
    if lambda > 0.0 && k < 0 {
        return Err(Error::InvalidParameter(format!(
            "lambda > 0 needs the translate inside x >= 0, got k = {k}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    grid.validate()?;
    let basis = basis.at_resolution(grid.resolution)?;
    let shift = k as f64;
    let lo = if lambda == 0.0 { grid.x_lo + shift.min(0.0) } else { grid.x_lo };
    let hi = grid.x_hi + shift.max(0.0);
    let step = grid.step();
    let nx = ((hi - lo) / step).round() as usize + 1;
    let xs = pde::uniform_grid((lo, hi), nx);
    let spec = PdeSpec::discounted(lambda, sigma, (lo, hi), tau);
    let mut snaps: Vec<f64> = grid.snapshots(tau).into_iter().filter(|&t| t < tau).collect();
    snaps.push(tau);
    let substeps = grid.substeps(snaps.len());
    let run = |offset: f64| {
        let terminal: Vec<f64> = xs.iter().map(|&x| basis.father.eval(x - offset)).collect();
        pde::solve_with_substeps(&spec, &terminal, nx, &snaps, &substeps, 0.5, grid.implicit_startup)
    };
    let base = run(0.0)?;
    let direct = run(shift)?;
    let offset = (shift / step).round() as i64;
    let base_row = base.last_row();
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &d) in direct.last_row().iter().enumerate() {
        let src = j as i64 - offset;
        let translated = if src >= 0 && (src as usize) < nx { base_row[src as usize] } else { 0.0 };
        num += (translated - d).powi(2);
        den += d * d;
    }
    Ok((num / den).sqrt())
}
