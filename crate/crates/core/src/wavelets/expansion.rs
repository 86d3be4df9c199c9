use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::WaveletBasis;

pub const EXPANSION_SCHEMA: &str = "dlet-1";

/// Which family a coefficient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scale {
    Father,
    Mother(u32),
}

impl Scale {
    /// Dilation factor `2^i` (1 for the father level).
    pub fn dilation(self) -> f64 {
        match self {
            Scale::Father => 1.0,
            Scale::Mother(i) => (i as f64).exp2(),
        }
    }
}

/// Coefficients of `f(x) = sum_k alpha_k phi(x-k) + sum_{i,k} beta_{i,k} 2^{i/2} psi(2^i x - k)`
/// on the periodic domain `[origin, origin + length)`.
///
/// `alpha[j]` is the coefficient with `k = origin + j`; `beta[i][j]` has
/// `k = origin * 2^i + j`. Each coefficient stands for the sum of the periodic images of its
/// basis function whose support meets the domain (see [`WaveletExpansion::image_range`]).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletExpansion {
    pub order: usize,
    pub levels: usize,
    pub origin: i64,
    pub length: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
}

/// One coefficient with its basis-function index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub scale: Scale,
    pub k: i64,
    pub coef: f64,
}

#[derive(Serialize, Deserialize)]
struct ExpansionDoc {
    schema: String,
    order: usize,
    levels: usize,
    origin: i64,
    length: usize,
    alpha: Vec<(i64, f64)>,
    beta: Vec<(u32, i64, f64)>,
}

impl WaveletExpansion {
    pub fn zeros(order: usize, levels: usize, origin: i64, length: usize) -> Self {
        Self {
            order,
            levels,
            origin,
            length,
            alpha: vec![0.0; length],
            beta: (0..levels).map(|i| vec![0.0; length << i]).collect(),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.origin as f64, (self.origin + self.length as i64) as f64)
    }

    pub fn period(&self) -> f64 {
        self.length as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InconsistentExpansion("empty domain".into()));
        }
        if self.alpha.len() != self.length {
            return Err(Error::InconsistentExpansion(format!(
                "{} alpha coefficients for a domain of {} units",
                self.alpha.len(),
                self.length
            )));
        }
        if self.beta.len() != self.levels {
            return Err(Error::InconsistentExpansion(format!(
                "{} detail levels stored but levels = {}",
                self.beta.len(),
                self.levels
            )));
        }
        for (i, level) in self.beta.iter().enumerate() {
            if level.len() != self.length << i {
                return Err(Error::InconsistentExpansion(format!(
                    "level {i} holds {} coefficients, expected {}",
                    level.len(),
                    self.length << i
                )));
            }
        }
        Ok(())
    }

    /// First translate index stored at `scale`.
    pub fn first_index(&self, scale: Scale) -> i64 {
        match scale {
            Scale::Father => self.origin,
            Scale::Mother(i) => self.origin << i,
        }
    }

    pub fn coefficient(&self, scale: Scale, k: i64) -> Option<f64> {
        let j = k - self.first_index(scale);
        if j < 0 {
            return None;
        }
        match scale {
            Scale::Father => self.alpha.get(j as usize).copied(),
            Scale::Mother(i) => self.beta.get(i as usize)?.get(j as usize).copied(),
        }
    }

    pub fn coefficient_mut(&mut self, scale: Scale, k: i64) -> Option<&mut f64> {
        let j = k - self.first_index(scale);
        if j < 0 {
            return None;
        }
        match scale {
            Scale::Father => self.alpha.get_mut(j as usize),
            Scale::Mother(i) => self.beta.get_mut(i as usize)?.get_mut(j as usize),
        }
    }

    /// All coefficients, father level first, then details from coarse to fine.
    pub fn terms(&self) -> impl Iterator<Item = Term> + '_ {
        let father = self.alpha.iter().enumerate().map(move |(j, &coef)| Term {
            scale: Scale::Father,
            k: self.origin + j as i64,
            coef,
        });
        let mothers = self.beta.iter().enumerate().flat_map(move |(i, level)| {
            let first = self.origin << i;
            level.iter().enumerate().map(move |(j, &coef)| Term {
                scale: Scale::Mother(i as u32),
                k: first + j as i64,
                coef,
            })
        });
        father.chain(mothers)
    }

    pub fn term_count(&self) -> usize {
        self.alpha.len() + self.beta.iter().map(Vec::len).sum::<usize>()
    }

    /// Periodic images `l` (shifts `l * length`) of the basis function at `(scale, k)` whose
    /// support `[k, k + 2p - 1] / 2^i` overlaps the domain with positive length.
    pub fn image_range(&self, scale: Scale, k: i64) -> std::ops::RangeInclusive<i64> {
        let s = scale.dilation();
        let width = (2 * self.order - 1) as f64;
        let lo = k as f64 / s;
        let hi = (k as f64 + width) / s;
        let (x0, x1) = self.domain();
        let period = self.period();
        let l_min = ((x0 - hi) / period).floor() as i64 + 1;
        let l_max = ((x1 - lo) / period).ceil() as i64 - 1;
        l_min..=l_max
    }

    /// Sum of squared coefficients.
    pub fn energy(&self) -> f64 {
        self.terms().map(|t| t.coef * t.coef).sum()
    }

    /// Calls `visit(term, arg)` for every coefficient whose basis function is nonzero at
    /// `x`, once per contributing periodic image; `arg` is the argument of the unit-scale
    /// wavelet, i.e. `2^i (x - l L) - k`.
    pub fn for_each_active(&self, x: f64, width: f64, mut visit: impl FnMut(Term, f64)) {
        let (x0, _) = self.domain();
        let period = self.period();
        let l_lo = ((x - x0 - period - width) / period).ceil() as i64;
        let l_hi = ((x - x0) / period).floor() as i64;
        for l in l_lo..=l_hi {
            let xs = x - l as f64 * period;
            for scale in std::iter::once(Scale::Father).chain((0..self.levels as u32).map(Scale::Mother)) {
                let s = scale.dilation();
                let y = s * xs;
                let first = self.first_index(scale);
                let count = (self.length as f64 * s) as i64;
                let k_lo = ((y - width).floor() as i64).max(first);
                let k_hi = (y.floor() as i64).min(first + count - 1);
                for k in k_lo..=k_hi {
                    if !self.image_range(scale, k).contains(&l) {
                        continue;
                    }
                    let coef = self.coefficient(scale, k).unwrap_or(0.0);
                    visit(Term { scale, k, coef }, y - k as f64);
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ExpansionDoc {
            schema: EXPANSION_SCHEMA.to_string(),
            order: self.order,
            levels: self.levels,
            origin: self.origin,
            length: self.length,
            alpha: self
                .terms()
                .filter(|t| t.scale == Scale::Father)
                .map(|t| (t.k, t.coef))
                .collect(),
            beta: self
                .terms()
                .filter_map(|t| match t.scale {
                    Scale::Mother(i) => Some((i, t.k, t.coef)),
                    Scale::Father => None,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ExpansionDoc = serde_json::from_str(text)?;
        let mut e = Self::zeros(doc.order, doc.levels, doc.origin, doc.length);
        for (k, v) in doc.alpha {
            *e.coefficient_mut(Scale::Father, k).ok_or_else(|| {
                Error::InconsistentExpansion(format!("alpha index {k} outside the domain"))
            })? = v;
        }
        for (i, k, v) in doc.beta {
            if i as usize >= e.levels {
                return Err(Error::InconsistentExpansion(format!(
                    "beta level {i} exceeds levels {}",
                    e.levels
                )));
            }
            *e.coefficient_mut(Scale::Mother(i), k).ok_or_else(|| {
                Error::InconsistentExpansion(format!("beta index ({i}, {k}) outside the domain"))
            })? = v;
        }
        Ok(e)
    }
}

/// `sum_k alpha_k phi(x-k) + sum_{i,k} beta_{i,k} 2^{i/2} psi(2^i x - k)`, with wavelet
/// values linearly interpolated from their dyadic samples.
pub fn evaluate_expansion(expansion: &WaveletExpansion, basis: &WaveletBasis, x: f64) -> f64 {
    let width = basis.support_len() as f64;
    let mut acc = 0.0;
    expansion.for_each_active(x, width, |term, arg| {
        acc += term.coef
            * match term.scale {
                Scale::Father => basis.father.eval(arg),
                Scale::Mother(_) => term.scale.dilation().sqrt() * basis.mother.eval(arg),
            };
    });
    acc
}
