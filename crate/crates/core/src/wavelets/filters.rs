//! Daubechies extremal-phase refinement filters.
//!
//! Coefficients use the orthonormal convention `phi(x) = sqrt(2) sum h_n phi(2x - n)`,
//! so `sum h_n = sqrt(2)`. A filter written as `phi(x) = 2 sum c_n phi(2x - n)` has
//! `c_n = h_n / sqrt(2)`.
//!
//! The tables were produced offline by spectral factorization of the Daubechies
//! polynomial at 60 digits (roots inside the unit circle) and are guarded by the
//! constraint-residual tests below.

use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_ORDER: usize = 1;
pub const MAX_ORDER: usize = 10;

/// Low-pass / high-pass refinement filters of a Daubechies basis of order `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub order: usize,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
}

/// Constraint residuals of a filter pair. All are zero for an exact filter.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FilterResiduals {
    /// `|sum h_n - sqrt(2)|`
    pub sum: f64,
    /// `max_m |sum h_n h_{n+2m} - delta_{m,0}|`
    pub orthonormality: f64,
    /// `max_{m<p} |sum (-1)^n n^m h_n| / sum |n^m h_n|`
    pub vanishing_moments: f64,
    /// `max_n |g_n - (-1)^n h_{2p-1-n}|`
    pub quadrature_mirror: f64,
}

impl FilterResiduals {
    pub fn max(&self) -> f64 {
        self.sum
            .max(self.orthonormality)
            .max(self.vanishing_moments)
            .max(self.quadrature_mirror)
    }
}

impl FilterPair {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Length of the support `[0, 2p - 1]` of the father and mother wavelets.
    pub fn support_len(&self) -> usize {
        2 * self.order - 1
    }

    /// Builds a pair from a low-pass filter; the high-pass filter follows from the
    /// quadrature-mirror relation `g_n = (-1)^n h_{L-1-n}`.
    pub fn from_lowpass(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() || !h.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "low-pass filter must have even positive length, got {}",
                h.len()
            )));
        }
        let order = h.len() / 2;
        let g = quadrature_mirror(&h);
        Ok(Self { order, h, g })
    }

    pub fn residuals(&self) -> FilterResiduals {
        let h = &self.h;
        let n = h.len();
        let sum = (h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs();

        let mut orthonormality = 0.0f64;
        for m in 0..n.div_ceil(2) {
            let dot: f64 = (0..n - 2 * m).map(|k| h[k] * h[k + 2 * m]).sum();
            let target = if m == 0 { 1.0 } else { 0.0 };
            orthonormality = orthonormality.max((dot - target).abs());
        }

        let mut vanishing_moments = 0.0f64;
        for m in 0..self.order {
            let terms: Vec<f64> = h
                .iter()
                .enumerate()
                .map(|(k, &hk)| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (k as f64).powi(m as i32) * hk
                })
                .collect();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            let moment = neumaier_sum(&terms);
            vanishing_moments = vanishing_moments.max(moment.abs() / scale);
        }

        let expected_g = quadrature_mirror(h);
        let quadrature_mirror = self
            .g
            .iter()
            .zip(&expected_g)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        FilterResiduals {
            sum,
            orthonormality,
            vanishing_moments,
            quadrature_mirror,
        }
    }
}

fn quadrature_mirror(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    (0..n)
        .map(|k| {
            let v = h[n - 1 - k];
            if k % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Daubechies extremal-phase filter pair of order `p` (`2p` taps, `p` vanishing moments).
pub fn daubechies_filter(p: usize) -> Result<FilterPair> {
    let h: &[f64] = match p {
        1 => &DB1,
        2 => &DB2,
        3 => &DB3,
        4 => &DB4,
        5 => &DB5,
        6 => &DB6,
        7 => &DB7,
        8 => &DB8,
        9 => &DB9,
        10 => &DB10,
        _ => {
            return Err(Error::UnsupportedOrder {
                order: p,
                min: MIN_ORDER,
                max: MAX_ORDER,
            })
        }
    };
    FilterPair::from_lowpass(h.to_vec())
}

const DB1: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

#[allow(clippy::excessive_precision)]
const DB2: [f64; 4] = [
    0.48296291314453414337,
    0.83651630373780790558,
    0.22414386804201338103,
    -0.12940952255126038117,
];

#[allow(clippy::excessive_precision)]
const DB3: [f64; 6] = [
    0.33267055295008261600,
    0.80689150931109257649,
    0.45987750211849157010,
    -0.13501102001025458870,
    -0.085441273882026661693,
    0.035226291885709536603,
];

#[allow(clippy::excessive_precision)]
const DB4: [f64; 8] = [
    0.23037781330889650086,
    0.71484657055291564709,
    0.63088076792985890788,
    -0.027983769416859854211,
    -0.18703481171909308408,
    0.030841381835560763627,
    0.032883011666885199735,
    -0.010597401785069032105,
];

#[allow(clippy::excessive_precision)]
const DB5: [f64; 10] = [
    0.16010239797419291448,
    0.60382926979718967054,
    0.72430852843777292773,
    0.13842814590132073151,
    -0.24229488706638203186,
    -0.032244869584638374648,
    0.077571493840045713523,
    -0.0062414902127982742742,
    -0.012580751999081999469,
    0.0033357252854737712780,
];

#[allow(clippy::excessive_precision)]
const DB6: [f64; 12] = [
    0.11154074335010946362,
    0.49462389039845308568,
    0.75113390802109535068,
    0.31525035170919762909,
    -0.22626469396543982008,
    -0.12976686756726193556,
    0.097501605587323049102,
    0.027522865530305728626,
    -0.031582039317486029565,
    0.00055384220116149613925,
    0.0047772575109455106396,
    -0.0010773010853084795649,
];

#[allow(clippy::excessive_precision)]
const DB7: [f64; 14] = [
    0.077852054085009179020,
    0.39653931948191730654,
    0.72913209084623511992,
    0.46978228740519312247,
    -0.14390600392856497541,
    -0.22403618499387498264,
    0.071309219266830264751,
    0.080612609151083071913,
    -0.038029936935014413580,
    -0.016574541630666880654,
    0.012550998556099840613,
    0.00042957797292136652113,
    -0.0018016407040474909153,
    0.00035371379997452024845,
];

#[allow(clippy::excessive_precision)]
const DB8: [f64; 16] = [
    0.054415842243104009955,
    0.31287159091429997066,
    0.67563073629728980681,
    0.58535468365420671277,
    -0.015829105256349305667,
    -0.28401554296154692652,
    0.00047248457391328277036,
    0.12874742662047845886,
    -0.017369301001807546170,
    -0.044088253930794751507,
    0.013981027917398281649,
    0.0087460940474057767164,
    -0.0048703529934515743104,
    -0.00039174037337694704630,
    0.00067544940645056936637,
    -0.00011747678412476953373,
];

#[allow(clippy::excessive_precision)]
const DB9: [f64; 18] = [
    0.038077947363878346589,
    0.24383467461259035373,
    0.60482312369011111190,
    0.65728807805130053808,
    0.13319738582500757619,
    -0.29327378327917490881,
    -0.096840783222976460514,
    0.14854074933810638014,
    0.030725681479333379212,
    -0.067632829061329973676,
    0.00025094711483145195759,
    0.022361662123679097205,
    -0.0047232047577513972779,
    -0.0042815036824634298345,
    0.0018476468830562264766,
    0.00023038576352319596721,
    -0.00025196318894271013697,
    0.000039347320316271599481,
];

#[allow(clippy::excessive_precision)]
const DB10: [f64; 20] = [
    0.026670057900555553587,
    0.18817680007769148902,
    0.52720118893172558648,
    0.68845903945360356574,
    0.28117234366057746075,
    -0.24984642432731537942,
    -0.19594627437737704350,
    0.12736934033579326008,
    0.093057364603572351160,
    -0.071394147166397087145,
    -0.029457536821875812858,
    0.033212674059341001740,
    0.0036065535669561696554,
    -0.010733175483330575044,
    0.0013953517470529011658,
    0.0019924052951850561172,
    -0.00068585669495971162656,
    -0.00011646685512928545095,
    0.000093588670320069591334,
    -0.000013264202894521244812,
];
