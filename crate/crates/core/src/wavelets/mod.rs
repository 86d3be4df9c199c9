//! Daubechies bases, the periodic fast wavelet transform and wavelet expansions.
//!
//! Scale convention: `psi_{i,k}(x) = 2^{i/2} psi(2^i x - k)` with `i >= 0` finer, and
//! father translates `phi_{0,k}(x) = phi(x - k)` at unit spacing.

mod cascade;
mod expansion;
mod filters;
mod fwt;

pub use cascade::{
    cascade_evaluate, integer_samples, two_scale_residual, DyadicFunction, MAX_RESOLUTION,
    MIN_RESOLUTION,
};
pub use expansion::{evaluate_expansion, Scale, Term, WaveletExpansion, EXPANSION_SCHEMA};
pub use filters::{daubechies_filter, FilterPair, FilterResiduals, MAX_ORDER, MIN_ORDER};
pub use fwt::{fwt_decompose, fwt_reconstruct, sample_dyadic};

use crate::error::Result;

/// A Daubechies basis: filters plus cascade-evaluated father and mother wavelets.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    pub filter: FilterPair,
    pub father: DyadicFunction,
    pub mother: DyadicFunction,
}

impl WaveletBasis {
    pub fn new(order: usize, resolution: u32) -> Result<Self> {
        let filter = daubechies_filter(order)?;
        let (father, mother) = cascade_evaluate(&filter, resolution)?;
        Ok(Self { filter, father, mother })
    }

    pub fn order(&self) -> usize {
        self.filter.order
    }

    pub fn resolution(&self) -> u32 {
        self.father.resolution
    }

    pub fn support_len(&self) -> usize {
        self.filter.support_len()
    }

    /// The same basis with wavelet samples on a coarser dyadic grid.
    pub fn at_resolution(&self, resolution: u32) -> Result<Self> {
        Ok(Self {
            filter: self.filter.clone(),
            father: self.father.subsample(resolution)?,
            mother: self.mother.subsample(resolution)?,
        })
    }

    /// Value of the (unperiodized) basis function at `scale` and translate `k`.
    pub fn basis_value(&self, scale: Scale, k: i64, x: f64) -> f64 {
        match scale {
            Scale::Father => self.father.eval(x - k as f64),
            Scale::Mother(i) => {
                let s = (i as f64).exp2();
                s.sqrt() * self.mother.eval(s * x - k as f64)
            }
        }
    }
}
