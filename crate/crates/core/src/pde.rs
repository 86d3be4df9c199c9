//! Backward linear parabolic equations on a uniform grid.
//!
//! With `tau = T - t` the equation `dQ/dt + sigma(t,x)^2/2 Q_xx + mu(t,x) Q_x = 0`,
//! `Q(T, x) = f(x)` becomes the forward problem
//! `dQ/dtau = sigma^2/2 Q_xx + mu Q_x`, `Q(0, x) = f(x)`, solved by the theta-method with
//! central differences. At both ends the diffusion term is dropped (zero second
//! derivative) and the drift is differenced one-sidedly; where diffusion and drift both
//! vanish, e.g. `x = 0` for `sigma x^lambda` with `lambda > 0`, this is the exact
//! degenerate condition `dQ/dtau = 0`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::quadrature;

/// Coefficient function of calendar time and space, `(t, x) -> value`.
pub type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct PdeSpec {
    pub lambda: f64,
    pub sigma: f64,
    pub r: f64,
    /// Overrides the drift `r x`.
    pub mu: Option<CoefFn>,
    /// Overrides the diffusion `sigma x^lambda`.
    pub sigma_fn: Option<CoefFn>,
    pub domain: (f64, f64),
    pub horizon: f64,
}

impl fmt::Debug for PdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeSpec")
            .field("lambda", &self.lambda)
            .field("sigma", &self.sigma)
            .field("r", &self.r)
            .field("mu", &self.mu.as_ref().map(|_| "fn"))
            .field("sigma_fn", &self.sigma_fn.as_ref().map(|_| "fn"))
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl PdeSpec {
    /// `dQ/dt + sigma^2 x^{2 lambda}/2 Q_xx + r x Q_x = 0`.
    pub fn cev(lambda: f64, sigma: f64, r: f64, domain: (f64, f64), horizon: f64) -> Self {
        Self {
            lambda,
            sigma,
            r,
            mu: None,
            sigma_fn: None,
            domain,
            horizon,
        }
    }

    /// The driftless form `dQ/dt + sigma^2 x^{2 lambda}/2 Q_xx = 0`.
    pub fn discounted(lambda: f64, sigma: f64, domain: (f64, f64), horizon: f64) -> Self {
        Self::cev(lambda, sigma, 0.0, domain, horizon)
    }

    /// Mean-zero square-root diffusion `dX = -b X dt + sigma sqrt(X) dW`.
    pub fn cir(b: f64, sigma: f64, domain: (f64, f64), horizon: f64) -> Self {
        Self {
            lambda: 0.5,
            sigma,
            r: -b,
            mu: Some(Arc::new(move |_, x| -b * x)),
            sigma_fn: Some(Arc::new(move |_, x: f64| sigma * x.max(0.0).sqrt())),
            domain,
            horizon,
        }
    }

    pub fn drift(&self, t: f64, x: f64) -> f64 {
        match &self.mu {
            Some(mu) => mu(t, x),
            None => self.r * x,
        }
    }

    pub fn diffusion(&self, t: f64, x: f64) -> f64 {
        match &self.sigma_fn {
            Some(s) => s(t, x),
            None if self.lambda == 0.0 => self.sigma,
            None => self.sigma * x.powf(self.lambda),
        }
    }

    fn is_time_dependent(&self) -> bool {
        self.mu.is_some() || self.sigma_fn.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("zero-width or invalid domain [{lo}, {hi}]")));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.lambda > 0.0 && self.sigma_fn.is_none() && lo < 0.0 {
            return Err(Error::InvalidGrid(format!(
                "lambda = {} > 0 needs a nonnegative domain, got x_lo = {lo}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Domain, horizon and discretization of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridParams {
    pub domain: (f64, f64),
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
    pub theta: f64,
}

impl GridParams {
    pub fn new(domain: (f64, f64), horizon: f64, nx: usize, nt: usize) -> Self {
        Self {
            domain,
            horizon,
            nx,
            nt,
            theta: 0.5,
        }
    }

    pub fn x_grid(&self) -> Vec<f64> {
        uniform_grid(self.domain, self.nx)
    }
}

pub fn uniform_grid(domain: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = domain;
    if n == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|j| if j + 1 == n { hi } else { lo + j as f64 * h })
        .collect()
}

/// A solution surface `values[tau_index][x_index]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub tau_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl GridSolution {
    pub fn last_row(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn dx(&self) -> f64 {
        (self.x_grid[self.x_grid.len() - 1] - self.x_grid[0]) / (self.x_grid.len() - 1) as f64
    }

    /// Index of the snapshot at `tau` if it is a grid time (within 1e-12 relative).
    pub fn tau_index(&self, tau: f64) -> Option<usize> {
        self.tau_grid
            .iter()
            .position(|&t| (t - tau).abs() <= 1e-12 * tau.abs().max(1.0))
    }

    /// Linear interpolation in `x` of row `row`; zero outside the x-grid.
    pub fn interpolate_row(&self, row: usize, x: f64) -> f64 {
        interp_uniform(&self.x_grid, &self.values[row], x)
    }

    /// Bilinear interpolation in `(tau, x)`; `None` when `tau` is outside the time grid.
    /// Points outside the spatial grid evaluate to zero.
    pub fn interpolate(&self, tau: f64, x: f64) -> Option<f64> {
        let (i, w) = bracket(&self.tau_grid, tau)?;
        let a = self.interpolate_row(i, x);
        if w == 0.0 {
            return Some(a);
        }
        let b = self.interpolate_row(i + 1, x);
        Some(a * (1.0 - w) + b * w)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// `(tau, x, value)` rows, time-major.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.tau_grid.iter().zip(&self.values).flat_map(move |(&tau, row)| {
            self.x_grid.iter().zip(row).map(move |(&x, &v)| (tau, x, v))
        })
    }
}

/// Position of `tau` in an increasing grid: `(i, w)` with `tau = (1-w) g[i] + w g[i+1]`.
pub(crate) fn bracket(grid: &[f64], tau: f64) -> Option<(usize, f64)> {
    let n = grid.len();
    if n == 0 || !(tau >= grid[0]) || tau > grid[n - 1] * (1.0 + 1e-12) + 1e-300 {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let i = match grid.binary_search_by(|g| g.total_cmp(&tau)) {
        Ok(i) => return Some((i, 0.0)),
        Err(i) => i.saturating_sub(1).min(n - 2),
    };
    let w = ((tau - grid[i]) / (grid[i + 1] - grid[i])).clamp(0.0, 1.0);
    Some((i, w))
}

pub(crate) fn interp_uniform(xs: &[f64], values: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let lo = xs[0];
    let hi = xs[n - 1];
    if !(x >= lo && x <= hi) {
        return 0.0;
    }
    let h = (hi - lo) / (n - 1) as f64;
    let t = (x - lo) / h;
    let i = (t.floor() as usize).min(n - 2);
    let w = t - i as f64;
    if w == 0.0 {
        values[i]
    } else {
        values[i] * (1.0 - w) + values[i + 1] * w
    }
}

/// Assembles `L` at calendar time `t`: `out` holds the sub/main/super coefficients.
fn assemble(spec: &PdeSpec, t: f64, xs: &[f64], out: &mut Tridiagonal) {
    let n = xs.len();
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let h2 = h * h;
    for (j, &x) in xs.iter().enumerate() {
        let s = spec.diffusion(t, x);
        let a = 0.5 * s * s;
        let b = spec.drift(t, x);
        if j == 0 {
            out.lower[j] = 0.0;
            out.diag[j] = -b / h;
            out.upper[j] = b / h;
        } else if j == n - 1 {
            out.lower[j] = -b / h;
            out.diag[j] = b / h;
            out.upper[j] = 0.0;
        } else {
            out.lower[j] = a / h2 - b / (2.0 * h);
            out.diag[j] = -2.0 * a / h2;
            out.upper[j] = a / h2 + b / (2.0 * h);
        }
    }
}

fn check_terminal(terminal: &[f64], nx: usize) -> Result<()> {
    if terminal.len() != nx {
        return Err(Error::InvalidGrid(format!(
            "terminal has {} samples but the grid has {nx} nodes",
            terminal.len()
        )));
    }
    if let Some((index, &value)) = terminal.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { what: "terminal", index, value });
    }
    Ok(())
}

/// Marches the theta-scheme from `tau = 0` and records the solution at `outputs`
/// (increasing, > 0). Each interval between outputs is split into equal steps no
/// longer than `max_dt`. The first `implicit_startup` steps use `theta = 1`.
pub fn solve_at_times(
    spec: &PdeSpec,
    terminal: &[f64],
    nx: usize,
    outputs: &[f64],
    max_dt: f64,
    theta: f64,
    implicit_startup: usize,
) -> Result<GridSolution> {
    if !(max_dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be > 0, got {max_dt}")));
    }
    let mut prev = 0.0;
    let substeps: Vec<usize> = outputs
        .iter()
        .map(|&t| {
            let n = ((t - prev) / max_dt).ceil().max(1.0) as usize;
            prev = t;
            n
        })
        .collect();
    solve_with_substeps(spec, terminal, nx, outputs, &substeps, theta, implicit_startup)
}

/// As [`solve_at_times`], with `substeps[j]` equal steps between `outputs[j-1]` and `outputs[j]`.
pub fn solve_with_substeps(
    spec: &PdeSpec,
    terminal: &[f64],
    nx: usize,
    outputs: &[f64],
    substeps: &[usize],
    theta: f64,
    implicit_startup: usize,
) -> Result<GridSolution> {
    spec.validate()?;
    if nx < 3 {
        return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {nx}")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta must be in [0, 1], got {theta}")));
    }
    if substeps.len() != outputs.len() || substeps.contains(&0) {
        return Err(Error::InvalidGrid("need a positive step count per output time".into()));
    }
    check_terminal(terminal, nx)?;
    let mut prev = 0.0;
    for &t in outputs {
        if !(t > prev) {
            return Err(Error::InvalidGrid(format!("output times must increase from 0, got {t} after {prev}")));
        }
        prev = t;
    }

    let xs = uniform_grid(spec.domain, nx);
    let mut tau_grid = Vec::with_capacity(outputs.len() + 1);
    let mut values = Vec::with_capacity(outputs.len() + 1);
    tau_grid.push(0.0);
    values.push(terminal.to_vec());

    let time_dependent = spec.is_time_dependent();
    let mut op_old = Tridiagonal::new(nx);
    let mut op_new = Tridiagonal::new(nx);
    let mut lhs = Tridiagonal::new(nx);
    let mut cached: Option<(f64, f64)> = None;
    let mut q = terminal.to_vec();
    let mut rhs = vec![0.0; nx];
    let mut scratch = vec![0.0; nx];
    let mut tau = 0.0;
    let mut steps_taken = 0usize;
    let horizon = spec.horizon;

    if !time_dependent {
        assemble(spec, horizon, &xs, &mut op_old);
        op_new = op_old.clone();
    }

    for (&target, &n_sub) in outputs.iter().zip(substeps) {
        let span = target - tau;
        let dt = span / n_sub as f64;
        for s in 0..n_sub {
            let tau_new = if s + 1 == n_sub { target } else { tau + dt };
            let th = if steps_taken < implicit_startup { 1.0 } else { theta };
            if time_dependent {
                assemble(spec, horizon - tau, &xs, &mut op_old);
                assemble(spec, horizon - tau_new, &xs, &mut op_new);
                cached = None;
            }
            if cached != Some((dt, th)) {
                for j in 0..nx {
                    lhs.lower[j] = -th * dt * op_new.lower[j];
                    lhs.diag[j] = 1.0 - th * dt * op_new.diag[j];
                    lhs.upper[j] = -th * dt * op_new.upper[j];
                }
                if !time_dependent {
                    cached = Some((dt, th));
                }
            }
            if th < 1.0 {
                op_old.apply(&q, &mut rhs);
                for j in 0..nx {
                    rhs[j] = q[j] + (1.0 - th) * dt * rhs[j];
                }
            } else {
                rhs.copy_from_slice(&q);
            }
            lhs.solve_in_place(&mut rhs, &mut scratch);
            std::mem::swap(&mut q, &mut rhs);
            tau = tau_new;
            steps_taken += 1;
        }
        if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { what: "solution", index, value });
        }
        tau_grid.push(target);
        values.push(q.clone());
    }

    Ok(GridSolution {
        tau_grid,
        x_grid: xs,
        values,
    })
}

/// Theta-scheme solution on `nx` uniform nodes and `nt` uniform time steps.
pub fn solve_backward(spec: &PdeSpec, terminal: &[f64], nx: usize, nt: usize, theta: f64) -> Result<GridSolution> {
    if nt < 1 {
        return Err(Error::InvalidGrid("need at least one time step".into()));
    }
    spec.validate()?;
    let dt = spec.horizon / nt as f64;
    let outputs: Vec<f64> = (1..=nt)
        .map(|n| if n == nt { spec.horizon } else { n as f64 * dt })
        .collect();
    solve_at_times(spec, terminal, nx, &outputs, dt, theta, 0)
}

/// Solves `dQ~/dtau = sigma^2 x^{2 lambda}/2 Q~_xx`.
pub fn solve_discounted(lambda: f64, sigma: f64, terminal: &[f64], grid: &GridParams) -> Result<GridSolution> {
    let spec = PdeSpec::discounted(lambda, sigma, grid.domain, grid.horizon);
    solve_backward(&spec, terminal, grid.nx, grid.nt, grid.theta)
}

/// Multiplies each row by `exp(-r tau)`.
pub fn undiscount(solution: &GridSolution, r: f64) -> GridSolution {
    let mut out = solution.clone();
    for (row, &tau) in out.values.iter_mut().zip(&solution.tau_grid) {
        let factor = (-r * tau).exp();
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
    out
}

/// Relative max-norm distance over the whole surface between the full drift form
/// (`r x Q_x` kept) and the discounted driftless solve multiplied by `exp(-r tau)`.
pub fn consistency_gap(spec: &PdeSpec, terminal: &[f64], nx: usize, nt: usize, theta: f64) -> Result<f64> {
    let full_spec = PdeSpec::cev(spec.lambda, spec.sigma, spec.r, spec.domain, spec.horizon);
    let full = solve_backward(&full_spec, terminal, nx, nt, theta)?;
    let grid = GridParams {
        domain: spec.domain,
        horizon: spec.horizon,
        nx,
        nt,
        theta,
    };
    let discounted = undiscount(&solve_discounted(spec.lambda, spec.sigma, terminal, &grid)?, spec.r);
    Ok(relative_linf_surface(&full, &discounted))
}

pub(crate) fn relative_linf_surface(reference: &GridSolution, other: &GridSolution) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, b) in reference.values.iter().flatten().zip(other.values.iter().flatten()) {
        num = num.max((a - b).abs());
        den = den.max(a.abs());
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `E[f(x + sigma W_tau)] = int f(y) N(y; x, sigma^2 tau) dy`, integrated adaptively over
/// `support` intersected with twelve standard deviations around `x`.
pub fn closed_form_heat(sigma: f64, terminal: impl Fn(f64) -> f64, support: (f64, f64), tau: f64, x: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    let sd = sigma * tau.sqrt();
    if sd == 0.0 {
        return Ok(if x >= support.0 && x <= support.1 { terminal(x) } else { 0.0 });
    }
    let lo = support.0.max(x - 12.0 * sd);
    let hi = support.1.min(x + 12.0 * sd);
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let kernel = |y: f64| {
        let z = (y - x) / sd;
        terminal(y) * norm * (-0.5 * z * z).exp()
    };
    Ok(quadrature::integrate(kernel, lo, hi, 1e-13))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        xs.iter().map(|&x| f(x)).collect()
    }

    #[test]
    fn constants_are_preserved() {
        for spec in [
            PdeSpec::cev(0.0, 1.0, 0.3, (-3.0, 3.0), 1.0),
            PdeSpec::cev(0.5, 0.8, 0.05, (0.0, 4.0), 1.0),
            PdeSpec::cir(0.5, 0.3, (0.0, 5.0), 2.0),
        ] {
            let s = solve_backward(&spec, &vec![2.5; 65], 65, 40, 0.5).unwrap();
            for v in s.values.iter().flatten() {
                assert!((v - 2.5).abs() < 1e-12, "{spec:?}: {v}");
            }
        }
    }

    #[test]
    fn linear_terminal_is_stationary_without_drift() {
        let grid = GridParams::new((0.0, 4.0), 1.0, 101, 50);
        let xs = grid.x_grid();
        for lambda in [0.0, 0.5, 1.0] {
            let s = solve_discounted(lambda, 0.7, &xs, &grid).unwrap();
            for row in &s.values {
                for (v, x) in row.iter().zip(&xs) {
                    assert!((v - x).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn heat_of_x_squared() {
        let grid = GridParams::new((-10.0, 10.0), 1.0, 1025, 512);
        let xs = grid.x_grid();
        let s = solve_discounted(0.0, 1.0, &sample(&xs, |x| x * x), &grid).unwrap();
        let mut worst = 0.0f64;
        for (row, &tau) in s.values.iter().zip(&s.tau_grid) {
            for (v, &x) in row.iter().zip(&xs) {
                if x.abs() <= 3.0 {
                    worst = worst.max((v - (x * x + tau)).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst:e}");
    }

    #[test]
    fn terminal_row_is_bit_exact() {
        let grid = GridParams::new((0.0, 3.0), 0.5, 33, 8);
        let xs = grid.x_grid();
        let f = sample(&xs, |x| (x * 1.7).sin() + 0.1);
        let s = solve_discounted(0.5, 1.0, &f, &grid).unwrap();
        assert_eq!(s.values[0], f);
        assert_eq!(s.tau_grid[0], 0.0);
        assert_eq!(s.tau_grid.len(), 9);
    }

    #[test]
    fn degenerate_boundary_is_frozen() {
        let grid = GridParams::new((0.0, 2.0), 1.0, 41, 20);
        let xs = grid.x_grid();
        let f = sample(&xs, |x| (1.0 - x).max(0.0) + 0.3);
        let s = solve_discounted(0.5, 1.0, &f, &grid).unwrap();
        for row in &s.values {
            assert_eq!(row[0], f[0]);
        }
    }

    #[test]
    fn undiscount_formula() {
        let s = GridSolution {
            tau_grid: vec![0.0, 1.0],
            x_grid: vec![0.0, 1.0],
            values: vec![vec![100.0, 1.0], vec![100.0, 1.0]],
        };
        assert_eq!(undiscount(&s, 0.0), s);
        let u = undiscount(&s, 0.05);
        assert!((u.values[1][0] - 100.0 * (-0.05f64).exp()).abs() < 1e-12);
        assert_eq!(u.values[0][0], 100.0);
    }

    #[test]
    fn gap_vanishes_without_rate() {
        let spec = PdeSpec::cev(1.0, 0.2, 0.0, (0.0, 4.0), 1.0);
        let xs = uniform_grid(spec.domain, 201);
        let f = sample(&xs, |x| (x - 1.0).max(0.0));
        assert!(consistency_gap(&spec, &f, 201, 100, 0.5).unwrap() < 1e-12);
    }

    #[test]
    fn closed_form_heat_basics() {
        let f = |x: f64| x.sin();
        assert_eq!(closed_form_heat(1.0, f, (-10.0, 10.0), 0.0, 0.7).unwrap(), 0.7f64.sin());
        for tau in [0.1, 1.0, 5.0] {
            let one = closed_form_heat(1.3, |_| 1.0, (f64::NEG_INFINITY, f64::INFINITY), tau, 0.4).unwrap();
            assert!((one - 1.0).abs() < 1e-12);
        }
        let sq = closed_form_heat(1.0, |x| x * x, (f64::NEG_INFINITY, f64::INFINITY), 2.0, 0.0).unwrap();
        assert!((sq - 2.0).abs() < 1e-12);
        assert!(closed_form_heat(1.0, f, (0.0, 1.0), -1.0, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = PdeSpec::discounted(0.5, 1.0, (-1.0, 1.0), 1.0);
        assert!(solve_backward(&spec, &[0.0; 5], 5, 4, 0.5).is_err());
        let spec = PdeSpec::discounted(0.0, 1.0, (1.0, 1.0), 1.0);
        assert!(solve_backward(&spec, &[0.0; 5], 5, 4, 0.5).is_err());
        let spec = PdeSpec::discounted(0.0, 1.0, (0.0, 1.0), 1.0);
        assert!(solve_backward(&spec, &[0.0, f64::NAN, 0.0], 3, 4, 0.5).is_err());
        assert!(solve_backward(&spec, &[0.0; 3], 3, 0, 0.5).is_err());
        assert!(solve_backward(&spec, &[0.0; 3], 3, 1, 1.5).is_err());
        assert!(solve_backward(&spec, &[0.0; 4], 3, 1, 0.5).is_err());
    }

    #[test]
    fn bracket_positions() {
        let g = [0.0, 0.5, 1.0, 2.0];
        assert_eq!(bracket(&g, 0.0), Some((0, 0.0)));
        assert_eq!(bracket(&g, 2.0), Some((3, 0.0)));
        assert_eq!(bracket(&g, 1.5), Some((2, 0.5)));
        assert_eq!(bracket(&g, 2.5), None);
        assert_eq!(bracket(&g, -0.1), None);
    }
}
