//! Self-contained numerical checks, grouped into named suites for `dlet validate`.
//!
//! Each suite returns measured values with their tolerances. Checks whose outcome is
//! an experiment rather than a claim carry [`Status::Informational`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diffusionlets::{
    build_cache, essential_support, reconstruct, reconstruct_counted, refinement_residual, translation_discrepancy,
    truncated_reconstruct, CacheGrid, CacheMode, DiffusionletCache, ExactRanges,
};
use crate::error::{Error, Result};
use crate::error_structure::{
    covariance_solution, gamma_solution, gamma_terminal, ou_chain_rule, perturb_and_solve_mc_points,
    sharp_second_moment, ErrorStructureSpec, PerturbPde,
};
use crate::feynman_kac::{cir_preset, mc_expectation, SdeSpec};
use crate::pde::{self, closed_form_heat, GridParams, PdeSpec};
use crate::wavelets::{daubechies_filter, fwt_decompose, fwt_reconstruct, sample_dyadic, WaveletBasis, WaveletExpansion};

pub const SUITES: &[&str] = &[
    "filters",
    "reconstruction",
    "heat_oracle",
    "diffusionlets",
    "self_similarity",
    "refinement",
    "translation",
    "variance_mc",
    "sharp",
    "covariance",
    "truncation",
    "cir",
    "cev",
    "ou",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// Upper bound on `measured`; absent for informational checks.
    pub tolerance: Option<f64>,
    pub status: Status,
}

impl Check {
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
        Self {
            name: name.into(),
            measured,
            tolerance: Some(tolerance),
            status,
        }
    }

    pub fn info(name: impl Into<String>, measured: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: None,
            status: Status::Informational,
        }
    }

    /// Passes when `holds`; `measured` is recorded as given.
    pub fn holds(name: impl Into<String>, measured: f64, holds: bool) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: None,
            status: if holds { Status::Pass } else { Status::Fail },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub runtime_seconds: f64,
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "filters" => filters()?,
        "reconstruction" => reconstruction(seed)?,
        "heat_oracle" => heat_oracle()?,
        "diffusionlets" => diffusionlets()?,
        "self_similarity" => self_similarity()?,
        "refinement" => refinement()?,
        "translation" => translation()?,
        "variance_mc" => variance_mc(seed)?,
        "sharp" => sharp(seed)?,
        "covariance" => covariance(seed)?,
        "truncation" => truncation()?,
        "cir" => cir(seed)?,
        "cev" => cev(seed)?,
        "ou" => ou(),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown suite {other:?}; available: {}",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        seed,
        passed: checks.iter().all(|c| c.status != Status::Fail),
        checks,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

fn filters() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for p in [1, 2, 3, 4, 6, 8, 10] {
        let r = daubechies_filter(p)?.residuals();
        checks.push(Check::below(format!("db{p} sum"), r.sum, 1e-10));
        checks.push(Check::below(format!("db{p} orthonormality"), r.orthonormality, 1e-10));
        checks.push(Check::below(format!("db{p} vanishing moments"), r.vanishing_moments, 1e-10));
    }
    Ok(checks)
}

fn reconstruction(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for p in [2, 4, 8] {
        let filter = daubechies_filter(p)?;
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let signal: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = fwt_decompose(&signal, 0, &filter, 5)?;
            let back = fwt_reconstruct(&e, &filter, signal.len())?;
            let num: f64 = signal.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = signal.iter().map(|a| a * a).sum();
            worst = worst.max((num / den).sqrt());
        }
        checks.push(Check::below(format!("db{p} round trip, 100 signals of 1024"), worst, 1e-10));
    }
    Ok(checks)
}

fn gaussian(center: f64, width: f64) -> impl Fn(f64) -> f64 + Copy {
    move |x: f64| (-(x - center) * (x - center) / (2.0 * width * width)).exp()
}

fn heat_oracle() -> Result<Vec<Check>> {
    let bump = gaussian(0.0, 1.0);
    let grid = GridParams::new((-16.0, 16.0), 1.0, 1025, 512);
    let xs = grid.x_grid();
    let terminal: Vec<f64> = xs.iter().map(|&x| bump(x)).collect();
    let s = pde::solve_discounted(0.0, 1.0, &terminal, &grid)?;
    let mut checks = Vec::new();
    for tau in [0.1, 0.5, 1.0] {
        let exact: Vec<f64> = xs
            .iter()
            .map(|&x| closed_form_heat(1.0, bump, (-16.0, 16.0), tau, x))
            .collect::<Result<_>>()?;
        let peak = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = xs
            .iter()
            .zip(&exact)
            .filter(|(_, e)| e.abs() > 1e-6 * peak)
            .map(|(&x, e)| (s.interpolate(tau, x).unwrap_or(f64::NAN) - e).abs())
            .fold(0.0f64, f64::max);
        checks.push(Check::below(format!("tau={tau} relative max error"), worst / peak, 1e-3));
    }
    Ok(checks)
}

/// Gaussian bump of unit width at 16 on `[0, 32)`, db4, three detail levels, heat
/// equation with unit volatility.
struct BumpCase {
    bump: Box<dyn Fn(f64) -> f64 + Sync>,
    expansion: WaveletExpansion,
    basis: WaveletBasis,
    grid: CacheGrid,
    cache: DiffusionletCache,
}

fn bump_case() -> Result<BumpCase> {
    let bump = gaussian(16.0, 1.0);
    let basis = WaveletBasis::new(4, 10)?;
    let expansion = fwt_decompose(&sample_dyadic(bump, 0, 32, 3), 0, &basis.filter, 3)?;
    let grid = CacheGrid::covering(0.0, 1.0, 4, 16.0, 7);
    let cache = build_cache(0.0, 1.0, &basis, 16.0, &grid, CacheMode::Fast)?;
    Ok(BumpCase {
        bump: Box::new(bump),
        expansion,
        basis,
        grid,
        cache,
    })
}

fn probe_xs() -> Vec<f64> {
    (0..=160).map(|j| 8.0 + j as f64 * 0.1).collect()
}

fn diffusionlets() -> Result<Vec<Check>> {
    let case = bump_case()?;
    let taus = [0.1, 0.25, 0.5];
    let dgrid = GridParams::new((-16.0, 48.0), 0.5, 4097, 1024);
    let terminal: Vec<f64> = dgrid.x_grid().iter().map(|&x| (case.bump)(x)).collect();
    let direct = pde::solve_discounted(0.0, 1.0, &terminal, &dgrid)?;
    let exact = build_cache(
        0.0,
        1.0,
        &case.basis,
        16.0,
        &case.grid,
        CacheMode::Exact(ExactRanges::covering(&case.expansion, taus.to_vec())),
    )?;
    let mut checks = Vec::new();
    for tau in taus {
        let (mut vs_heat, mut vs_direct, mut vs_exact, mut peak) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for x in probe_xs() {
            let fast = reconstruct(&case.cache, &case.expansion, tau, x)?;
            let oracle = closed_form_heat(1.0, &case.bump, (0.0, 32.0), tau, x)?;
            vs_heat = vs_heat.max((fast - oracle).abs());
            vs_direct = vs_direct.max((fast - direct.interpolate(tau, x).unwrap_or(f64::NAN)).abs());
            vs_exact = vs_exact.max((fast - reconstruct(&exact, &case.expansion, tau, x)?).abs());
            peak = peak.max(oracle.abs());
        }
        checks.push(Check::below(format!("tau={tau} fast vs Gaussian oracle (relative)"), vs_heat / peak, 5e-3));
        checks.push(Check::below(format!("tau={tau} fast vs direct solve (relative)"), vs_direct / peak, 5e-3));
        checks.push(Check::below(format!("tau={tau} fast vs exact mode"), vs_exact, 1e-5));
    }
    Ok(checks)
}

/// Relative max distance between `Q_g(alpha^{2-2 lambda} tau, alpha x)` read from a solve with
/// terminal `g` and a direct solve with terminal `g(alpha x)` at `tau`.
pub fn self_similarity_error(lambda: f64, sigma: f64, alpha: f64, g: impl Fn(f64) -> f64, extent: f64, tau: f64) -> Result<f64> {
    let scaled_tau = alpha.powf(2.0 - 2.0 * lambda) * tau;
    let lo = if lambda == 0.0 { -extent } else { 0.0 };
    let base_spec = PdeSpec::discounted(lambda, sigma, (lo, extent), scaled_tau);
    let nx = 4097;
    let base_xs = pde::uniform_grid(base_spec.domain, nx);
    let base_terminal: Vec<f64> = base_xs.iter().map(|&x| g(x)).collect();
    let base = pde::solve_at_times(&base_spec, &base_terminal, nx, &[scaled_tau], scaled_tau / 1024.0, 0.5, 2)?;

    let domain = (lo / alpha, extent / alpha);
    let direct_spec = PdeSpec::discounted(lambda, sigma, domain, tau);
    let nx_direct = 3001;
    let xs = pde::uniform_grid(domain, nx_direct);
    let terminal: Vec<f64> = xs.iter().map(|&x| g(alpha * x)).collect();
    let direct = pde::solve_at_times(&direct_spec, &terminal, nx_direct, &[tau], tau / 1024.0, 0.5, 2)?;

    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&x, &d) in xs.iter().zip(direct.last_row()) {
        let b = base.interpolate_row(1, alpha * x);
        num = num.max((b - d).abs());
        den = den.max(d.abs());
    }
    Ok(num / den)
}

fn self_similarity() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (lambda, sigma) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.25)] {
        for alpha in [2.0, 4.0] {
            let e = self_similarity_error(lambda, sigma, alpha, gaussian(8.0, 1.0), 24.0, 0.25)?;
            checks.push(Check::below(format!("lambda={lambda} alpha={alpha}"), e, 2e-3));
        }
    }
    Ok(checks)
}

fn refinement() -> Result<Vec<Check>> {
    let basis = WaveletBasis::new(4, 10)?;
    let mut checks = Vec::new();
    for (lambda, sigma) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.25)] {
        let grid = CacheGrid::covering(lambda, sigma, 4, 2.0, 7);
        let cache = build_cache(lambda, sigma, &basis, 2.0, &grid, CacheMode::Fast)?;
        for tau in [0.0, 0.25] {
            let r = refinement_residual(&cache, tau)?;
            let worst = r.father.max(r.mother);
            let name = format!("lambda={lambda} tau={tau}");
            checks.push(if lambda == 0.0 || tau == 0.0 {
                Check::below(name, worst, 2e-3)
            } else {
                Check::info(name, worst)
            });
        }
    }
    Ok(checks)
}

fn translation() -> Result<Vec<Check>> {
    let basis = WaveletBasis::new(4, 10)?;
    let mut checks = Vec::new();
    for (lambda, sigma) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.25)] {
        let grid = CacheGrid::covering(lambda, sigma, 4, 1.0, 7);
        for k in [1, 2] {
            let d = translation_discrepancy(lambda, sigma, &basis, k, 0.5, &grid)?;
            let name = format!("lambda={lambda} k={k}");
            checks.push(if lambda == 0.0 { Check::below(name, d, 2e-3) } else { Check::info(name, d) });
        }
    }
    Ok(checks)
}

const VARIANCE_PROBES: [f64; 5] = [13.0, 15.0, 16.0, 17.5, 19.0];

fn variance_mc(seed: u64) -> Result<Vec<Check>> {
    let case = bump_case()?;
    let spec = ErrorStructureSpec::default();
    let pde_params = PerturbPde {
        lambda: 0.0,
        sigma: 1.0,
        domain: (-16.0, 48.0),
        nx: 2049,
        steps_per_unit: 512,
    };
    let mut checks = Vec::new();
    for tau in [0.0, 0.25] {
        let mc = perturb_and_solve_mc_points(&case.expansion, &spec, &case.cache.basis, &pde_params, 1e-4, 10_000, seed, tau, &VARIANCE_PROBES)?;
        for (&x, est) in VARIANCE_PROBES.iter().zip(&mc) {
            let (label, gamma) = if tau == 0.0 {
                ("terminal", gamma_terminal(&case.expansion, &spec, &case.cache.basis, x)?)
            } else {
                ("solution", gamma_solution(&case.cache, &case.expansion, &spec, tau, x)?)
            };
            checks.push(Check::below(
                format!("{label} variance tau={tau} x={x} relative error"),
                (est.mean - gamma).abs() / gamma,
                0.05,
            ));
        }
    }
    Ok(checks)
}

fn sharp(seed: u64) -> Result<Vec<Check>> {
    let case = bump_case()?;
    let spec = ErrorStructureSpec::default();
    VARIANCE_PROBES
        .iter()
        .map(|&x| {
            let gamma = gamma_solution(&case.cache, &case.expansion, &spec, 0.25, x)?;
            let est = sharp_second_moment(&case.cache, &case.expansion, &spec, 0.25, x, 100_000, seed)?;
            Ok(Check::below(format!("x={x} standard errors from Gamma"), est.z_score(gamma), 3.0))
        })
        .collect()
}

fn covariance(seed: u64) -> Result<Vec<Check>> {
    let case = bump_case()?;
    let spec = ErrorStructureSpec::proportional(1.0, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diagonal = 0.0f64;
    let mut asymmetry = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    let e = &case.expansion;
    for _ in 0..50 {
        let p = (rng.random_range(0.0..0.5), rng.random_range(10.0..22.0));
        let q = (rng.random_range(0.0..0.5), rng.random_range(10.0..22.0));
        let pq = covariance_solution(&case.cache, e, &spec, p, q)?;
        let qp = covariance_solution(&case.cache, e, &spec, q, p)?;
        let vp = gamma_solution(&case.cache, e, &spec, p.0, p.1)?;
        let vq = gamma_solution(&case.cache, e, &spec, q.0, q.1)?;
        diagonal = diagonal.max((covariance_solution(&case.cache, e, &spec, p, p)? - vp).abs());
        asymmetry = asymmetry.max((pq - qp).abs());
        excess = excess.max(pq * pq - vp * vq);
    }
    Ok(vec![
        Check::below("diagonal equals variance", diagonal, 0.0),
        Check::below("symmetry", asymmetry, 0.0),
        Check::below("Cauchy-Schwarz excess", excess, 1e-12),
    ])
}

fn truncation() -> Result<Vec<Check>> {
    let case = bump_case()?;
    let eps = 1e-3;
    let mut checks = Vec::new();
    let full = case.expansion.term_count() as f64;
    for tau in [0.1, 0.25, 0.5] {
        let (mut worst, mut most) = (0.0f64, 0usize);
        for x in probe_xs() {
            let (full_value, _) = reconstruct_counted(&case.cache, &case.expansion, tau, x)?;
            let (cut, used) = truncated_reconstruct(&case.cache, &case.expansion, eps, tau, x)?;
            worst = worst.max((full_value - cut).abs());
            most = most.max(used);
        }
        checks.push(Check::holds(format!("tau={tau} term reduction factor >= 4"), full / most as f64, full >= 4.0 * most as f64));
        checks.push(Check::below(format!("tau={tau} truncation error"), worst, 1e-2));
    }
    let mut previous = u32::MAX;
    let mut monotone = true;
    for tau in [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
        let level = essential_support(&case.cache, eps, tau)?.max_level.unwrap_or(u32::MAX);
        monotone &= level <= previous;
        previous = level;
    }
    checks.push(Check::holds("I(eps) non-increasing in tau", previous as f64, monotone));
    Ok(checks)
}

fn cir(seed: u64) -> Result<Vec<Check>> {
    let (b, sigma, x0, tau) = (0.5, 0.3, 1.0, 1.0);
    let sde = cir_preset(b, sigma)?;
    let spec = PdeSpec::cir(b, sigma, (0.0, 8.0), tau);
    let nx = 1601;
    let xs = pde::uniform_grid(spec.domain, nx);
    let mut checks = Vec::new();
    let linear = pde::solve_backward(&spec, &xs, nx, 512, 0.5)?;
    let pde_linear = linear.interpolate_row(linear.values.len() - 1, x0);
    let mc = mc_expectation(&sde, |x| x, x0, tau, 100_000, 512, seed)?;
    checks.push(Check::below("linear payoff: PDE vs MC (standard errors)", mc.z_score(pde_linear), 3.0));
    checks.push(Check::below("linear payoff: PDE vs x exp(-b tau)", (pde_linear - x0 * (-b * tau).exp()).abs(), 1e-6));
    let bump = gaussian(0.8, 0.2);
    let terminal: Vec<f64> = xs.iter().map(|&x| bump(x)).collect();
    let s = pde::solve_backward(&spec, &terminal, nx, 512, 0.5)?;
    let mc = mc_expectation(&sde, bump, x0, tau, 100_000, 512, seed)?;
    checks.push(Check::below("bump payoff: PDE vs MC (standard errors)", mc.z_score(s.interpolate_row(s.values.len() - 1, x0)), 3.0));
    Ok(checks)
}

/// Expected call payoff `E[(X_tau - K)^+]` for `dX = r X dt + sigma X dW`.
pub fn lognormal_call(x: f64, strike: f64, r: f64, sigma: f64, tau: f64) -> f64 {
    let n = Normal::standard();
    let sd = sigma * tau.sqrt();
    let d1 = ((x / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / sd;
    x * (r * tau).exp() * n.cdf(d1) - strike * n.cdf(d1 - sd)
}

fn cev(seed: u64) -> Result<Vec<Check>> {
    let (strike, sigma, x0, tau) = (1.0, 0.2, 1.0, 1.0);
    let grid = GridParams::new((0.0, 4.0), tau, 2049, 512);
    let xs = grid.x_grid();
    let terminal: Vec<f64> = xs.iter().map(|&x| (x - strike).max(0.0)).collect();
    let s = pde::solve_discounted(1.0, sigma, &terminal, &grid)?;
    let pde_value = s.interpolate_row(s.values.len() - 1, x0);
    let mc = mc_expectation(&SdeSpec::cev(0.0, sigma, 1.0), |x| (x - strike).max(0.0), x0, tau, 100_000, 512, seed)?;
    let mut checks = vec![
        Check::below("call: PDE vs MC (standard errors)", mc.z_score(pde_value), 3.0),
        Check::below("call: PDE vs lognormal closed form", (pde_value - lognormal_call(x0, strike, 0.0, sigma, tau)).abs(), 1e-4),
    ];
    let r = 0.05;
    let spec = PdeSpec::cev(1.0, sigma, r, grid.domain, tau);
    let gap = pde::consistency_gap(&spec, &terminal, grid.nx, grid.nt, 0.5)?;
    checks.push(Check::info("r=0.05: drift form vs exp(-r tau) times discounted form", gap));
    Ok(checks)
}

fn ou() -> Vec<Check> {
    let u = |x: f64| x.sin() + 0.3 * x * x;
    let mut checks = Vec::new();
    for x in [-1.5, -0.3, 0.4, 1.2] {
        let sq = ou_chain_rule(u, |y| y * y, |y| 2.0 * y, |_| 2.0, x, 1e-3);
        let sn = ou_chain_rule(u, f64::sin, f64::cos, |y| -y.sin(), x, 1e-3);
        checks.push(Check::below(format!("F=y^2 x={x}"), sq.generator.abs().max(sq.gamma.abs()), 1e-6));
        checks.push(Check::below(format!("F=sin x={x}"), sn.generator.abs().max(sn.gamma.abs()), 1e-6));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        for suite in ["filters", "reconstruction", "ou", "translation"] {
            let report = run_suite(suite, 1).unwrap();
            assert!(report.passed, "{report:#?}");
        }
    }

    #[test]
    fn translation_reports_non_heat_cases_as_informational() {
        let report = run_suite("translation", 1).unwrap();
        assert!(report
            .checks
            .iter()
            .filter(|c| !c.name.starts_with("lambda=0 "))
            .all(|c| c.status == Status::Informational && c.measured > 0.0));
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("nope", 0).is_err());
    }

    #[test]
    fn lognormal_call_at_the_money() {
        // sigma sqrt(tau) small: price ~ x sigma sqrt(tau / 2 pi)
        let v = lognormal_call(1.0, 1.0, 0.0, 0.01, 1.0);
        assert!((v - 0.01 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-6);
    }
}
