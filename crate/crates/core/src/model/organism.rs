use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::model::MutationSet;

/// An organism on the mutation grid: `base + alpha * sum_i counts[i] * b_i`.
///
/// Counts are signed, so the polarity of every past mutation is folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Organism {
    base: DVector<f64>,
    counts: Vec<i64>,
    alpha: f64,
    coords: DVector<f64>,
}

impl Organism {
    pub fn new(base: DVector<f64>, df: usize, alpha: f64) -> Result<Self> {
        ensure_finite("organism base", base.as_slice())?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mutation magnitude must be positive, got {alpha}"
            )));
        }
        Ok(Self {
            coords: base.clone(),
            base,
            counts: vec![0; df],
            alpha,
        })
    }

    pub fn base(&self) -> &DVector<f64> {
        &self.base
    }

    pub fn counts(&self) -> &[i64] {
        &self.counts
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Gene-basis coordinates, maintained incrementally.
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn dg(&self) -> usize {
        self.base.len()
    }

    /// Applies one `polarity * alpha * b_i` step.
    pub fn step(&mut self, mutations: &MutationSet, index: usize, polarity: i8) {
        debug_assert!(polarity == 1 || polarity == -1);
        self.counts[index] += polarity as i64;
        self.coords
            .axpy(polarity as f64 * self.alpha, mutations.get(index), 1.0);
    }

    /// Coordinates recomputed from `base` and `counts`.
    pub fn recompute_coords(&self, mutations: &MutationSet) -> Result<DVector<f64>> {
        ensure_len("mutation count", self.counts.len(), mutations.df())?;
        let mut c = self.base.clone();
        for (k, b) in self.counts.iter().zip(mutations.columns()) {
            if *k != 0 {
                c.axpy(self.alpha * *k as f64, b, 1.0);
            }
        }
        Ok(c)
    }

    /// Folds the current position into the base and resets the counts,
    /// used when the mutation set is replaced mid-run.
    pub fn rebase(&mut self, df: usize) {
        self.base = self.coords.clone();
        self.counts = vec![0; df];
    }

    /// Moves the organism to explicit coordinates (used by scenario setup).
    pub fn with_coords(mut self, coords: DVector<f64>) -> Self {
        self.coords = coords;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn grid_invariance(steps in prop::collection::vec((0usize..3, any::<bool>()), 0..400),
                           alpha in 1e-4f64..1.0) {
            let b = MutationSet::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, 0.7]]).unwrap();
            let mut f = Organism::new(DVector::from_vec(vec![0.2, -1.0]), 3, alpha).unwrap();
            for (i, plus) in steps {
                f.step(&b, i, if plus { 1 } else { -1 });
            }
            let exact = f.recompute_coords(&b).unwrap();
            let scale = exact.norm().max(1.0);
            prop_assert!((exact - f.coords()).norm() <= 1e-9 * scale * 400.0);
        }
    }

    #[test]
    fn starts_at_base_with_zero_counts() {
        let f = Organism::new(DVector::from_vec(vec![1.0, 2.0]), 4, 0.1).unwrap();
        assert_eq!(f.counts(), &[0, 0, 0, 0]);
        assert_eq!(f.coords(), f.base());
        assert!(Organism::new(DVector::zeros(2), 1, 0.0).is_err());
    }
}
