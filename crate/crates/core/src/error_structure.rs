//! Error calculus on wavelet coefficients under independence and proportionality:
//! `Gamma[a_n, a_m] = 0` for `n != m` and `Gamma[a_n] = gamma(n) a_n^2`.
//!
//! The solution is linear in the coefficients, so its `Gamma` is the quadratic form of
//! the diffusionlet values with weights `gamma(n) a_n^2`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::diffusionlets::{diffusionlet_terms, DiffusionletCache};
use crate::error::{Error, Result};
use crate::feynman_kac::McEstimate;
use crate::pde::{self, GridParams};
use crate::wavelets::{evaluate_expansion, Scale, Term, WaveletBasis, WaveletExpansion};

pub type FatherWeight = Arc<dyn Fn(i64) -> f64 + Send + Sync>;
pub type MotherWeight = Arc<dyn Fn(u32, i64) -> f64 + Send + Sync>;

/// Proportionality weights `gamma(k)` for father and `gamma(i, k)` for mother coefficients.
#[derive(Clone)]
pub struct ErrorStructureSpec {
    pub gamma_father: FatherWeight,
    pub gamma_mother: MotherWeight,
    pub label: String,
}

impl fmt::Debug for ErrorStructureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ErrorStructureSpec").field("label", &self.label).finish()
    }
}

impl Default for ErrorStructureSpec {
    fn default() -> Self {
        Self::proportional(1.0, 0.0).expect("default weights are valid")
    }
}

impl ErrorStructureSpec {
    /// `gamma(k) = c`, `gamma(i, k) = c 2^{-eta i}`.
    pub fn proportional(c: f64, eta: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weights need finite c >= 0 and finite eta, got c={c}, eta={eta}"
            )));
        }
        Ok(Self {
            gamma_father: Arc::new(move |_| c),
            gamma_mother: Arc::new(move |i, _| c * (-eta * i as f64).exp2()),
            label: format!("proportional(c={c}, eta={eta})"),
        })
    }

    pub fn custom(gamma_father: FatherWeight, gamma_mother: MotherWeight, label: impl Into<String>) -> Self {
        Self {
            gamma_father,
            gamma_mother,
            label: label.into(),
        }
    }

    /// The weight of a coefficient; negative or non-finite weights are errors.
    pub fn weight(&self, scale: Scale, k: i64) -> Result<f64> {
        let w = match scale {
            Scale::Father => (self.gamma_father)(k),
            Scale::Mother(i) => (self.gamma_mother)(i, k),
        };
        if w.is_finite() && w >= 0.0 {
            Ok(w)
        } else {
            Err(Error::InvalidParameter(format!("weight for {scale:?} k={k} is {w}")))
        }
    }
}

/// Unit-scale basis values at `x`, images summed, one entry per nonzero coefficient.
fn wavelet_terms(expansion: &WaveletExpansion, basis: &WaveletBasis, x: f64) -> Vec<(Term, f64)> {
    let width = basis.support_len() as f64;
    let mut grouped: BTreeMap<(Scale, i64), (Term, f64)> = BTreeMap::new();
    expansion.for_each_active(x, width, |term, y| {
        if term.coef == 0.0 {
            return;
        }
        let value = match term.scale {
            Scale::Father => basis.father.eval(y),
            Scale::Mother(_) => term.scale.dilation().sqrt() * basis.mother.eval(y),
        };
        grouped.entry((term.scale, term.k)).or_insert((term, 0.0)).1 += value;
    });
    grouped.into_values().collect()
}

fn quadratic_form(spec: &ErrorStructureSpec, left: &[(Term, f64)], right: &[(Term, f64)]) -> Result<f64> {
    // Canonical index order and a symmetric product keep the form exactly symmetric.
    let left: BTreeMap<(Scale, i64), (f64, f64)> = left.iter().map(|(t, v)| ((t.scale, t.k), (t.coef, *v))).collect();
    let right: BTreeMap<(Scale, i64), f64> = right.iter().map(|(t, v)| ((t.scale, t.k), *v)).collect();
    let mut acc = 0.0;
    for (&(scale, k), &(coef, a)) in &left {
        if let Some(&b) = right.get(&(scale, k)) {
            acc += spec.weight(scale, k)? * coef * coef * (a * b);
        }
    }
    Ok(acc)
}

/// `sum_k gamma(k) alpha_k^2 phi_{0,k}(x)^2 + sum_{i,k} gamma(i,k) beta_{i,k}^2 psi_{i,k}(x)^2`.
pub fn gamma_terminal(expansion: &WaveletExpansion, spec: &ErrorStructureSpec, basis: &WaveletBasis, x: f64) -> Result<f64> {
    let terms = wavelet_terms(expansion, basis, x);
    quadratic_form(spec, &terms, &terms)
}

/// The same quadratic form on diffusionlet values at `(tau, x)`.
pub fn gamma_solution(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    tau: f64,
    x: f64,
) -> Result<f64> {
    let terms = diffusionlet_terms(cache, expansion, tau, x)?;
    quadratic_form(spec, &terms, &terms)
}

/// `Gamma[Q(tau1, x1), Q(tau2, x2)]`.
pub fn covariance_solution(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    first: (f64, f64),
    second: (f64, f64),
) -> Result<f64> {
    let a = diffusionlet_terms(cache, expansion, first.0, first.1)?;
    if first == second {
        return quadratic_form(spec, &a, &a);
    }
    let b = diffusionlet_terms(cache, expansion, second.0, second.1)?;
    quadratic_form(spec, &a, &b)
}

/// Variance of the solution on a `(tau, x)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceField {
    pub tau_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    /// `values[tau_index][x_index]`.
    pub values: Vec<Vec<f64>>,
}

impl VarianceField {
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.tau_grid.iter().zip(&self.values).flat_map(move |(&tau, row)| {
            self.x_grid.iter().zip(row).map(move |(&x, &v)| (tau, x, v))
        })
    }
}

pub fn variance_field(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    tau_grid: &[f64],
    x_grid: &[f64],
) -> Result<VarianceField> {
    let values = tau_grid
        .iter()
        .map(|&tau| {
            x_grid
                .par_iter()
                .map(|&x| gamma_solution(cache, expansion, spec, tau, x))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(VarianceField {
        tau_grid: tau_grid.to_vec(),
        x_grid: x_grid.to_vec(),
        values,
    })
}

/// Independent standard-normal draws, one per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpSample {
    pub seed: u64,
    pub hat_alpha: BTreeMap<i64, f64>,
    pub hat_beta: BTreeMap<(u32, i64), f64>,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl SharpSample {
    /// Draw number `index` for the given seed: ChaCha8 stream `index`, consumed in the
    /// coefficient order of [`WaveletExpansion::terms`].
    pub fn draw(expansion: &WaveletExpansion, seed: u64, index: u64) -> Self {
        let mut rng = sample_rng(seed, index);
        let mut hat_alpha = BTreeMap::new();
        let mut hat_beta = BTreeMap::new();
        for t in expansion.terms() {
            let z: f64 = rng.sample(StandardNormal);
            match t.scale {
                Scale::Father => hat_alpha.insert(t.k, z),
                Scale::Mother(i) => hat_beta.insert((i, t.k), z),
            };
        }
        Self {
            seed,
            hat_alpha,
            hat_beta,
        }
    }

    pub fn get(&self, scale: Scale, k: i64) -> Option<f64> {
        match scale {
            Scale::Father => self.hat_alpha.get(&k).copied(),
            Scale::Mother(i) => self.hat_beta.get(&(i, k)).copied(),
        }
    }
}

/// `sum_k sqrt(gamma(k)) alpha_k hat_alpha_k Phi_{0,k} + sum_{i,k} sqrt(gamma(i,k)) beta_{i,k} hat_beta_{i,k} Psi_{i,k}`.
pub fn sharp_field(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    sample: &SharpSample,
    tau: f64,
    x: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for (t, v) in diffusionlet_terms(cache, expansion, tau, x)? {
        let z = sample
            .get(t.scale, t.k)
            .ok_or_else(|| Error::MissingDraw(format!("{:?} k={}", t.scale, t.k)))?;
        acc += spec.weight(t.scale, t.k)?.sqrt() * t.coef * z * v;
    }
    Ok(acc)
}

/// Monte-Carlo mean of `sharp_field^2` over draws `0..n_samples`.
pub fn sharp_second_moment(
    cache: &DiffusionletCache,
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    tau: f64,
    x: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    // Loadings in `terms()` order so draws line up with `SharpSample::draw`.
    let values: BTreeMap<(Scale, i64), f64> = diffusionlet_terms(cache, expansion, tau, x)?
        .into_iter()
        .map(|(t, v)| Ok(((t.scale, t.k), spec.weight(t.scale, t.k)?.sqrt() * t.coef * v)))
        .collect::<Result<_>>()?;
    let loadings: Vec<f64> = expansion
        .terms()
        .map(|t| values.get(&(t.scale, t.k)).copied().unwrap_or(0.0))
        .collect();
    let squares: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let u: f64 = loadings
                .iter()
                .map(|w| {
                    let z: f64 = rng.sample(StandardNormal);
                    w * z
                })
                .sum();
            u * u
        })
        .collect();
    Ok(McEstimate::from_samples(&squares, seed))
}

/// Discretization of the direct solves in [`perturb_and_solve_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbPde {
    pub lambda: f64,
    pub sigma: f64,
    pub domain: (f64, f64),
    pub nx: usize,
    /// Time steps per unit of `tau`.
    pub steps_per_unit: usize,
}

/// Estimates `Gamma[Q(tau, x)]` by perturbing every coefficient `a -> a (1 + sqrt(eps gamma) Z)`,
/// solving the PDE for each draw, and dividing the sample variance of `Q(tau, x)` by `eps`.
#[allow(clippy::too_many_arguments)]
pub fn perturb_and_solve_mc(
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    basis: &WaveletBasis,
    pde_params: &PerturbPde,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    tau: f64,
    x: f64,
) -> Result<McEstimate> {
    let mut out = perturb_and_solve_mc_points(expansion, spec, basis, pde_params, epsilon, n_samples, seed, tau, &[x])?;
    Ok(out.remove(0))
}

/// [`perturb_and_solve_mc`] at several points `xs` sharing the draws and the solves.
#[allow(clippy::too_many_arguments)]
pub fn perturb_and_solve_mc_points(
    expansion: &WaveletExpansion,
    spec: &ErrorStructureSpec,
    basis: &WaveletBasis,
    pde_params: &PerturbPde,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    tau: f64,
    probes: &[f64],
) -> Result<Vec<McEstimate>> {
    if !(epsilon > 0.0) || n_samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "need epsilon > 0 and at least two samples, got {epsilon} and {n_samples}"
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    let scales: Vec<f64> = expansion
        .terms()
        .map(|t| Ok((epsilon * spec.weight(t.scale, t.k)?).sqrt()))
        .collect::<Result<_>>()?;
    let xs = pde::uniform_grid(pde_params.domain, pde_params.nx);
    let nt = ((tau * pde_params.steps_per_unit as f64).ceil() as usize).max(1);
    let grid = GridParams::new(pde_params.domain, tau, pde_params.nx, nt);
    let values_at = |e: &WaveletExpansion| -> Result<Vec<f64>> {
        if tau == 0.0 {
            return Ok(probes.iter().map(|&x| evaluate_expansion(e, basis, x)).collect());
        }
        let terminal: Vec<f64> = xs.iter().map(|&y| evaluate_expansion(e, basis, y)).collect();
        let s = pde::solve_discounted(pde_params.lambda, pde_params.sigma, &terminal, &grid)?;
        let last = s.values.len() - 1;
        Ok(probes.iter().map(|&x| s.interpolate_row(last, x)).collect())
    };
    let base = values_at(expansion)?;
    let deviations: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let mut perturbed = expansion.clone();
            let coefs = perturbed
                .alpha
                .iter_mut()
                .chain(perturbed.beta.iter_mut().flatten());
            for (c, &w) in coefs.zip(&scales) {
                let z: f64 = rng.sample(StandardNormal);
                *c *= 1.0 + w * z;
            }
            Ok(values_at(&perturbed)?.iter().zip(&base).map(|(v, b)| v - b).collect())
        })
        .collect::<Result<_>>()?;
    let n = n_samples as f64;
    Ok((0..probes.len())
        .map(|p| {
            let mean = deviations.iter().map(|d| d[p]).sum::<f64>() / n;
            let centered: Vec<f64> = deviations.iter().map(|d| (d[p] - mean).powi(2) * n / (n - 1.0)).collect();
            let mut est = McEstimate::from_samples(&centered, seed);
            est.mean /= epsilon;
            est.std_error /= epsilon;
            est
        })
        .collect())
}

/// `(u'(x))^2`, the carré du champ of the Ornstein–Uhlenbeck structure on the real line,
/// with five-point differences of step `h`.
pub fn ou_gamma(u: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = first_derivative(&u, x, h);
    d * d
}

/// `u''(x)/2 - x u'(x)/2`, the Ornstein–Uhlenbeck generator.
pub fn ou_generator(u: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    0.5 * second_derivative(&u, x, h) - 0.5 * x * first_derivative(&u, x, h)
}

fn first_derivative(u: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (u(x - 2.0 * h) - 8.0 * u(x - h) + 8.0 * u(x + h) - u(x + 2.0 * h)) / (12.0 * h)
}

fn second_derivative(u: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-u(x - 2.0 * h) + 16.0 * u(x - h) - 30.0 * u(x) + 16.0 * u(x + h) - u(x + 2.0 * h)) / (12.0 * h * h)
}

/// Residuals of the functional calculus for `F(u)` at `x`:
/// `A[F(u)] - F'(u) A[u] - F''(u) Gamma[u] / 2` and `Gamma[F(u)] - F'(u)^2 Gamma[u]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainRuleResidual {
    pub generator: f64,
    pub gamma: f64,
}

pub fn ou_chain_rule(
    u: impl Fn(f64) -> f64,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    d2f: impl Fn(f64) -> f64,
    x: f64,
    h: f64,
) -> ChainRuleResidual {
    let composed = |y: f64| f(u(y));
    let ux = u(x);
    let g = ou_gamma(&u, x, h);
    ChainRuleResidual {
        generator: ou_generator(composed, x, h) - df(ux) * ou_generator(&u, x, h) - 0.5 * d2f(ux) * g,
        gamma: ou_gamma(composed, x, h) - df(ux).powi(2) * g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusionlets::{build_cache, CacheGrid, CacheMode};
    use crate::wavelets::{daubechies_filter, fwt_decompose, sample_dyadic};

    fn setup() -> (DiffusionletCache, WaveletExpansion) {
        let basis = WaveletBasis::new(3, 9).unwrap();
        let grid = CacheGrid::covering(0.0, 1.0, 3, 1.0, 7);
        let cache = build_cache(0.0, 1.0, &basis, 1.0, &grid, CacheMode::Fast).unwrap();
        let samples = sample_dyadic(|x| (-(x - 4.0) * (x - 4.0)).exp(), 0, 8, 2);
        let e = fwt_decompose(&samples, 0, &daubechies_filter(3).unwrap(), 2).unwrap();
        (cache, e)
    }

    #[test]
    fn zero_weights_give_zero() {
        let (cache, e) = setup();
        let spec = ErrorStructureSpec::proportional(0.0, 0.0).unwrap();
        assert_eq!(gamma_terminal(&e, &spec, &cache.basis, 3.3).unwrap(), 0.0);
        assert_eq!(gamma_solution(&cache, &e, &spec, 0.2, 3.3).unwrap(), 0.0);
    }

    #[test]
    fn single_coefficient() {
        let (cache, _) = setup();
        let mut e = WaveletExpansion::zeros(3, 1, 0, 8);
        *e.coefficient_mut(Scale::Father, 0).unwrap() = 1.5;
        let spec = ErrorStructureSpec::proportional(0.3, 0.0).unwrap();
        let x = 1.7;
        let phi = cache.basis.father.eval(x);
        let got = gamma_terminal(&e, &spec, &cache.basis, x).unwrap();
        assert!((got - 0.3 * 2.25 * phi * phi).abs() < 1e-14);
        let sample = SharpSample::draw(&e, 1, 0);
        let mut unit = sample.clone();
        unit.hat_alpha.insert(0, 1.0);
        let phi_d = crate::diffusionlets::eval_father(&cache, 0, 0.3, x).unwrap();
        let s = sharp_field(&cache, &e, &spec, &unit, 0.3, x).unwrap();
        assert!((s - 0.3f64.sqrt() * 1.5 * phi_d).abs() < 1e-14);
    }

    #[test]
    fn solution_variance_starts_at_terminal_variance() {
        let (cache, e) = setup();
        let spec = ErrorStructureSpec::proportional(1.0, 0.5).unwrap();
        for x in [0.5, 2.0, 3.9, 6.25] {
            let a = gamma_terminal(&e, &spec, &cache.basis, x).unwrap();
            let b = gamma_solution(&cache, &e, &spec, 0.0, x).unwrap();
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn covariance_diagonal_and_symmetry() {
        let (cache, e) = setup();
        let spec = ErrorStructureSpec::default();
        let p = (0.2, 3.0);
        let q = (0.25, 4.5);
        assert_eq!(
            covariance_solution(&cache, &e, &spec, p, p).unwrap(),
            gamma_solution(&cache, &e, &spec, p.0, p.1).unwrap()
        );
        assert_eq!(
            covariance_solution(&cache, &e, &spec, p, q).unwrap(),
            covariance_solution(&cache, &e, &spec, q, p).unwrap()
        );
    }

    #[test]
    fn zero_draws_give_zero_field() {
        let (cache, e) = setup();
        let mut sample = SharpSample::draw(&e, 3, 0);
        sample.hat_alpha.values_mut().for_each(|v| *v = 0.0);
        sample.hat_beta.values_mut().for_each(|v| *v = 0.0);
        assert_eq!(sharp_field(&cache, &e, &ErrorStructureSpec::default(), &sample, 0.1, 4.0).unwrap(), 0.0);
        sample.hat_alpha.clear();
        assert!(matches!(
            sharp_field(&cache, &e, &ErrorStructureSpec::default(), &sample, 0.1, 4.0),
            Err(Error::MissingDraw(_))
        ));
    }

    #[test]
    fn second_moment_draws_match_explicit_samples() {
        let (cache, e) = setup();
        let spec = ErrorStructureSpec::default();
        let est = sharp_second_moment(&cache, &e, &spec, 0.2, 4.0, 5, 11).unwrap();
        let direct: f64 = (0..5)
            .map(|s| sharp_field(&cache, &e, &spec, &SharpSample::draw(&e, 11, s), 0.2, 4.0).unwrap().powi(2))
            .sum::<f64>()
            / 5.0;
        assert!((est.mean - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn negative_weights_are_rejected() {
        let (cache, e) = setup();
        let spec = ErrorStructureSpec::custom(Arc::new(|_| -1.0), Arc::new(|_, _| 1.0), "bad");
        assert!(gamma_solution(&cache, &e, &spec, 0.1, 4.0).is_err());
        assert!(ErrorStructureSpec::proportional(-1.0, 0.0).is_err());
    }

    #[test]
    fn ou_closed_forms() {
        assert_eq!(ou_gamma(|_| 3.0, 0.4, 1e-3), 0.0);
        assert_eq!(ou_generator(|_| 3.0, 0.4, 1e-3), 0.0);
        assert!((ou_gamma(|x| x, 0.7, 1e-3) - 1.0).abs() < 1e-10);
        assert!((ou_generator(|x| x, 0.7, 1e-3) + 0.35).abs() < 1e-10);
    }

    #[test]
    fn ou_chain_rule_square() {
        let u = |x: f64| x.sin() + 0.3 * x * x;
        for x in [-1.0, 0.2, 1.3] {
            let r = ou_chain_rule(u, |y| y * y, |y| 2.0 * y, |_| 2.0, x, 1e-3);
            assert!(r.generator.abs() < 1e-6 && r.gamma.abs() < 1e-6, "{r:?}");
        }
    }
}
