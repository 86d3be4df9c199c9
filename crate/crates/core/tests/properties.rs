use std::sync::OnceLock;

use proptest::prelude::*;

use diffusionlet::diffusionlets::{build_cache, reconstruct, CacheGrid, CacheMode, DiffusionletCache};
use diffusionlet::error_structure::{covariance_solution, gamma_solution, gamma_terminal, ErrorStructureSpec};
use diffusionlet::pde::{self, GridParams};
use diffusionlet::wavelets::{
    daubechies_filter, evaluate_expansion, fwt_decompose, fwt_reconstruct, WaveletBasis, WaveletExpansion,
};

const LENGTH: usize = 16;
const LEVELS: usize = 2;

fn heat_cache() -> &'static DiffusionletCache {
    static CACHE: OnceLock<DiffusionletCache> = OnceLock::new();
    CACHE.get_or_init(|| {
        let basis = WaveletBasis::new(4, 10).unwrap();
        let grid = CacheGrid::covering(0.0, 1.0, 4, 4.0, 7);
        build_cache(0.0, 1.0, &basis, 4.0, &grid, CacheMode::Fast).unwrap()
    })
}

fn basis() -> &'static WaveletBasis {
    &heat_cache().basis
}

fn fine_basis() -> &'static WaveletBasis {
    static BASIS: OnceLock<WaveletBasis> = OnceLock::new();
    BASIS.get_or_init(|| WaveletBasis::new(4, 10).unwrap())
}

/// Random db4 coefficients on `[0, 16)` with two detail levels.
fn expansion() -> impl Strategy<Value = WaveletExpansion> {
    let beta_len: usize = (0..LEVELS).map(|i| LENGTH << i).sum();
    (
        prop::collection::vec(-1.0f64..1.0, LENGTH),
        prop::collection::vec(-1.0f64..1.0, beta_len),
    )
        .prop_map(|(alpha, flat)| {
            let mut e = WaveletExpansion::zeros(4, LEVELS, 0, LENGTH);
            e.alpha = alpha;
            let mut rest = flat.as_slice();
            for (i, level) in e.beta.iter_mut().enumerate() {
                let (head, tail) = rest.split_at(LENGTH << i);
                level.copy_from_slice(head);
                rest = tail;
            }
            e
        })
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn combine(a: &WaveletExpansion, b: &WaveletExpansion, s: f64, t: f64) -> WaveletExpansion {
    let mut out = a.clone();
    for (o, (x, y)) in out.alpha.iter_mut().zip(a.alpha.iter().zip(&b.alpha)) {
        *o = s * x + t * y;
    }
    for (lo, (la, lb)) in out.beta.iter_mut().zip(a.beta.iter().zip(&b.beta)) {
        for (o, (x, y)) in lo.iter_mut().zip(la.iter().zip(lb)) {
            *o = s * x + t * y;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quadrature_mirror_relation_is_exact(p in 1usize..=10) {
        let f = daubechies_filter(p).unwrap();
        let n = f.h.len();
        for (i, g) in f.g.iter().enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert_eq!(*g, sign * f.h[n - 1 - i]);
        }
    }

    #[test]
    fn fwt_round_trip(p in 1usize..=10, levels in 1usize..=5, x in signal(512)) {
        let filter = daubechies_filter(p).unwrap();
        let e = fwt_decompose(&x, 0, &filter, levels).unwrap();
        let back = fwt_reconstruct(&e, &filter, x.len()).unwrap();
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn fwt_is_linear(x in signal(256), y in signal(256), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let filter = daubechies_filter(3).unwrap();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(a, b)| s * a + t * b).collect();
        let ex = fwt_decompose(&x, 0, &filter, 3).unwrap();
        let ey = fwt_decompose(&y, 0, &filter, 3).unwrap();
        let em = fwt_decompose(&mixed, 0, &filter, 3).unwrap();
        let expected = combine(&ex, &ey, s, t);
        for (a, b) in em.terms().zip(expected.terms()) {
            prop_assert!((a.coef - b.coef).abs() <= 1e-9, "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn expansion_json_round_trip(e in expansion()) {
        let back = WaveletExpansion::from_json(&e.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn terminal_variance_is_nonnegative(e in expansion(), x in 0.0f64..16.0, c in 0.0f64..4.0, eta in 0.0f64..2.0) {
        let spec = ErrorStructureSpec::proportional(c, eta).unwrap();
        prop_assert!(gamma_terminal(&e, &spec, basis(), x).unwrap() >= 0.0);
    }

    #[test]
    fn variance_is_quadratic_in_coefficients(e in expansion(), a in -3.0f64..3.0, tau in 0.0f64..1.0, x in 0.0f64..16.0) {
        let spec = ErrorStructureSpec::proportional(1.0, 0.5).unwrap();
        let scaled = combine(&e, &e, a, 0.0);
        let v = gamma_solution(heat_cache(), &e, &spec, tau, x).unwrap();
        let w = gamma_solution(heat_cache(), &scaled, &spec, tau, x).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((w - a * a * v).abs() <= 1e-10 * v.max(1e-300) + 1e-300);
    }

    #[test]
    fn covariance_is_symmetric_and_bounded(
        e in expansion(),
        p in (0.0f64..1.0, 0.0f64..16.0),
        q in (0.0f64..1.0, 0.0f64..16.0),
    ) {
        let spec = ErrorStructureSpec::default();
        let cache = heat_cache();
        let pq = covariance_solution(cache, &e, &spec, p, q).unwrap();
        let qp = covariance_solution(cache, &e, &spec, q, p).unwrap();
        let vp = gamma_solution(cache, &e, &spec, p.0, p.1).unwrap();
        let vq = gamma_solution(cache, &e, &spec, q.0, q.1).unwrap();
        prop_assert_eq!(pq, qp);
        prop_assert_eq!(covariance_solution(cache, &e, &spec, p, p).unwrap(), vp);
        prop_assert!(pq * pq <= vp * vq + 1e-12);
    }

    #[test]
    fn reconstruction_is_linear(a in expansion(), b in expansion(), s in -2.0f64..2.0, tau in 0.0f64..1.0, x in 0.0f64..16.0) {
        let cache = heat_cache();
        let mixed = combine(&a, &b, s, 1.0);
        let lhs = reconstruct(cache, &mixed, tau, x).unwrap();
        let rhs = s * reconstruct(cache, &a, tau, x).unwrap() + reconstruct(cache, &b, tau, x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn solve_keeps_the_terminal_row(terminal in signal(65), theta in 0.5f64..=1.0) {
        let mut grid = GridParams::new((-4.0, 4.0), 0.5, 65, 16);
        grid.theta = theta;
        let s = pde::solve_discounted(0.0, 1.0, &terminal, &grid).unwrap();
        prop_assert_eq!(&s.values[0], &terminal);
        prop_assert!(s.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn parseval(e in expansion()) {
        // One period, trapezoid on the grid where every level lands on wavelet sample nodes.
        // Sampled at 2^-10 the basis is orthonormal to a few 1e-6, so the gap is bounded by
        // that times (sum |c|)^2.
        let basis = fine_basis();
        let n = LENGTH << (basis.resolution() as usize + LEVELS - 1);
        let h = LENGTH as f64 / n as f64;
        let norm: f64 = (0..n).map(|j| evaluate_expansion(&e, basis, j as f64 * h).powi(2)).sum::<f64>() * h;
        let l1: f64 = e.terms().map(|t| t.coef.abs()).sum();
        prop_assert!((norm - e.energy()).abs() <= 1e-5 * l1 * l1, "{} vs {}", norm, e.energy());
    }
}

#[test]
fn heat_flow_does_not_increase_mother_energy() {
    let basis = WaveletBasis::new(4, 8).unwrap();
    let grid = GridParams::new((-16.0, 24.0), 2.0, 2049, 512);
    let terminal: Vec<f64> = grid.x_grid().iter().map(|&x| basis.mother.eval(x)).collect();
    let s = pde::solve_discounted(0.0, 1.0, &terminal, &grid).unwrap();
    let energies: Vec<f64> = s.values.iter().map(|row| row.iter().map(|v| v * v).sum::<f64>() * s.dx()).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{energies:?}");
}
