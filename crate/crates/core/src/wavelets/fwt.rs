//! Periodic fast wavelet transform between point samples and wavelet coefficients.
//!
//! Samples are point values on `x0 + n 2^-I`. They are mapped to the finest scaling
//! coefficients by inverting the sampling convolution with the integer samples of the
//! father wavelet, so that the expansion interpolates the samples exactly. The pyramid
//! then runs `I` periodic analysis steps.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::cascade::integer_samples;
use super::expansion::WaveletExpansion;
use super::filters::FilterPair;

/// Samples `f` at `x0 + n 2^-levels` for `n` in `0..length * 2^levels`.
pub fn sample_dyadic(f: impl Fn(f64) -> f64, origin: i64, length: usize, levels: usize) -> Vec<f64> {
    let per_unit = 1usize << levels;
    let step = 1.0 / per_unit as f64;
    (0..length * per_unit)
        .map(|n| f(origin as f64 + n as f64 * step))
        .collect()
}

/// Decomposes samples on `x0 + n 2^-I` (with `x0 = origin`) into an `I`-level expansion.
pub fn fwt_decompose(
    samples: &[f64],
    origin: i64,
    filter: &FilterPair,
    levels: usize,
) -> Result<WaveletExpansion> {
    let required = 1usize << levels;
    if samples.is_empty() || !samples.len().is_multiple_of(required) {
        return Err(Error::IncompatibleLength {
            len: samples.len(),
            levels,
            required,
        });
    }
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { what: "samples", index, value });
    }
    let mut approx = samples_to_coefficients(samples, filter, levels)?;
    let mut beta = vec![Vec::new(); levels];
    for level in (0..levels).rev() {
        let (a, d) = analysis_step(&approx, filter);
        beta[level] = d;
        approx = a;
    }
    Ok(WaveletExpansion {
        order: filter.order,
        levels,
        origin,
        length: samples.len() / required,
        alpha: approx,
        beta,
    })
}

/// Inverse of [`fwt_decompose`]: point samples on `x0 + n 2^-I`.
pub fn fwt_reconstruct(
    expansion: &WaveletExpansion,
    filter: &FilterPair,
    sample_count: usize,
) -> Result<Vec<f64>> {
    expansion.validate()?;
    if filter.order != expansion.order {
        return Err(Error::InconsistentExpansion(format!(
            "expansion has order {} but filter has order {}",
            expansion.order, filter.order
        )));
    }
    let expected = expansion.length << expansion.levels;
    if sample_count != expected {
        return Err(Error::InconsistentExpansion(format!(
            "{} units at {} levels give {} samples, not {}",
            expansion.length, expansion.levels, expected, sample_count
        )));
    }
    let mut approx = expansion.alpha.clone();
    for detail in &expansion.beta {
        approx = synthesis_step(&approx, detail, filter);
    }
    coefficients_to_samples(&approx, filter, expansion.levels)
}

fn analysis_step(c: &[f64], filter: &FilterPair) -> (Vec<f64>, Vec<f64>) {
    let n = c.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        let mut sa = 0.0;
        let mut sd = 0.0;
        for (t, (&h, &g)) in filter.h.iter().zip(&filter.g).enumerate() {
            let v = c[(2 * k + t) % n];
            sa += h * v;
            sd += g * v;
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], filter: &FilterPair) -> Vec<f64> {
    let n = 2 * a.len();
    let mut c = vec![0.0; n];
    for k in 0..a.len() {
        for (t, (&h, &g)) in filter.h.iter().zip(&filter.g).enumerate() {
            c[(2 * k + t) % n] += h * a[k] + g * d[k];
        }
    }
    c
}

/// Symbol of the circular sampling convolution `s_n = 2^{I/2} sum_j phi(j) c_{n-j}`.
fn sampling_symbol(filter: &FilterPair, n: usize, levels: usize) -> Result<Option<Vec<Complex<f64>>>> {
    let ints = integer_samples(filter)?;
    let scale = ((levels as f64) / 2.0).exp2();
    let mut kernel = vec![Complex::new(0.0, 0.0); n];
    for (j, &v) in ints.iter().enumerate() {
        kernel[j % n] += Complex::new(scale * v, 0.0);
    }
    if kernel.iter().skip(1).all(|c| c.re == 0.0) {
        // Pure scaling (Haar): no FFT needed.
        return Ok(None);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut kernel);
    let min = kernel.iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
    if min < 1e-10 * scale {
        return Err(Error::InvalidParameter(format!(
            "sampling operator of db{} is singular for {n} samples",
            filter.order
        )));
    }
    Ok(Some(kernel))
}

fn samples_to_coefficients(samples: &[f64], filter: &FilterPair, levels: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    match sampling_symbol(filter, n, levels)? {
        None => {
            let scale = ((levels as f64) / 2.0).exp2() * integer_samples(filter)?[0];
            Ok(samples.iter().map(|s| s / scale).collect())
        }
        Some(symbol) => {
            let mut planner = FftPlanner::new();
            let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
            planner.plan_fft_forward(n).process(&mut buf);
            for (b, s) in buf.iter_mut().zip(&symbol) {
                *b /= *s;
            }
            planner.plan_fft_inverse(n).process(&mut buf);
            Ok(buf.iter().map(|c| c.re / n as f64).collect())
        }
    }
}

fn coefficients_to_samples(c: &[f64], filter: &FilterPair, levels: usize) -> Result<Vec<f64>> {
    let ints = integer_samples(filter)?;
    let scale = ((levels as f64) / 2.0).exp2();
    let n = c.len();
    Ok((0..n)
        .map(|i| {
            let s: f64 = ints
                .iter()
                .enumerate()
                .map(|(j, &v)| v * c[(i as i64 - j as i64).rem_euclid(n as i64) as usize])
                .sum();
            scale * s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelets::{daubechies_filter, evaluate_expansion, WaveletBasis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn constant_signal_has_no_details() {
        for p in [1, 2, 4] {
            let f = daubechies_filter(p).unwrap();
            let e = fwt_decompose(&vec![3.5; 64], 0, &f, 2).unwrap();
            for level in &e.beta {
                assert!(level.iter().all(|b| b.abs() < 1e-12), "db{p}: {level:?}");
            }
        }
    }

    #[test]
    fn sampled_haar_father_gives_unit_alpha() {
        let f = daubechies_filter(1).unwrap();
        let samples = sample_dyadic(|x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 }, -2, 8, 3);
        let e = fwt_decompose(&samples, -2, &f, 3).unwrap();
        for (j, &a) in e.alpha.iter().enumerate() {
            let k = -2 + j as i64;
            let expected = if k == 0 { 1.0 } else { 0.0 };
            assert!((a - expected).abs() < 1e-14, "alpha_{k} = {a}");
        }
        assert!(e.beta.iter().flatten().all(|b| b.abs() < 1e-14));
    }

    #[test]
    fn round_trip_random_signals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [1, 2, 3, 4, 5, 8, 10] {
            let f = daubechies_filter(p).unwrap();
            let s: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = fwt_decompose(&s, 0, &f, 4).unwrap();
            let back = fwt_reconstruct(&e, &f, s.len()).unwrap();
            assert!(rel_l2(&back, &s) < 1e-10, "db{p}: {}", rel_l2(&back, &s));
        }
    }

    #[test]
    fn zero_expansion_reconstructs_zero() {
        let f = daubechies_filter(3).unwrap();
        let e = WaveletExpansion::zeros(3, 2, 0, 16);
        let s = fwt_reconstruct(&e, &f, 64).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_detail_reconstructs_the_mother_wavelet() {
        let basis = WaveletBasis::new(4, 10).unwrap();
        let levels = 5;
        let mut e = WaveletExpansion::zeros(4, levels, -4, 16);
        // beta_{0,0}: index 0 at level 0 sits at offset 4 from the origin.
        e.beta[0][4] = 1.0;
        let s = fwt_reconstruct(&e, &basis.filter, 16 << levels).unwrap();
        for (n, &v) in s.iter().enumerate() {
            let x = -4.0 + n as f64 / 32.0;
            assert!((v - basis.mother.eval(x)).abs() < 1e-9, "x={x}: {v} vs {}", basis.mother.eval(x));
        }
    }

    #[test]
    fn length_must_divide() {
        let f = daubechies_filter(2).unwrap();
        let err = fwt_decompose(&[0.0; 100], 0, &f, 3).unwrap_err();
        assert!(err.to_string().contains("2^3 = 8"), "{err}");
    }

    #[test]
    fn reconstruct_rejects_wrong_sample_count() {
        let f = daubechies_filter(2).unwrap();
        let e = WaveletExpansion::zeros(2, 2, 0, 4);
        assert!(fwt_reconstruct(&e, &f, 15).is_err());
        assert!(fwt_reconstruct(&e, &daubechies_filter(3).unwrap(), 16).is_err());
    }

    #[test]
    fn expansion_interpolates_its_samples() {
        let basis = WaveletBasis::new(4, 12).unwrap();
        let samples = sample_dyadic(f64::sin, 0, 8, 5);
        let e = fwt_decompose(&samples, 0, &basis.filter, 5).unwrap();
        for (n, &s) in samples.iter().enumerate().step_by(7) {
            let x = n as f64 / 32.0;
            assert!((evaluate_expansion(&e, &basis, x) - s).abs() < 1e-9);
        }
    }
}
