//! RBF anchor feature map.
//!
//! Anchors are columns drawn from the first round's training data; a point
//! `x` is lifted to `φ(x)_i = exp(−‖x − a_i‖² / (2σ²))`.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// Columns sampled when estimating the kernel width.
const SIGMA_SAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMap {
    anchors: DMatrix<f64>,
    sigma: f64,
    /// Zero-based modality index this map was fitted on and applies to.
    pub source_modality: usize,
    pub seed: u64,
}

/// Scalar fields of a [`KernelMap`]; anchors are stored separately as FMAT.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelMapMeta {
    pub sigma: f64,
    pub source_modality: usize,
    pub seed: u64,
}

impl KernelMap {
    pub fn from_parts(anchors: DMatrix<f64>, meta: &KernelMapMeta) -> Result<Self> {
        if !(meta.sigma > 0.0 && meta.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel width {} must be positive", meta.sigma)));
        }
        if anchors.ncols() == 0 {
            return Err(Error::InvalidArgument("kernel map needs at least one anchor".into()));
        }
        Ok(Self {
            anchors,
            sigma: meta.sigma,
            source_modality: meta.source_modality,
            seed: meta.seed,
        })
    }

    pub fn meta(&self) -> KernelMapMeta {
        KernelMapMeta {
            sigma: self.sigma,
            source_modality: self.source_modality,
            seed: self.seed,
        }
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.ncols()
    }

    /// Samples `anchor_count` distinct columns of `features` and, unless
    /// given, sets σ to the mean anchor-to-sample Euclidean distance.
    pub fn fit(
        features: &FeatureMatrix,
        anchor_count: usize,
        sigma: Option<f64>,
        seed: u64,
        source_modality: usize,
    ) -> Result<Self> {
        let x = features.values();
        let n = x.ncols();
        if anchor_count == 0 {
            return Err(Error::InvalidArgument("anchor count must be at least 1".into()));
        }
        if anchor_count > n {
            return Err(Error::InvalidArgument(format!(
                "anchor count {anchor_count} exceeds the {n} available training columns"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = index::sample(&mut rng, n, anchor_count).into_vec();
        let anchors = x.select_columns(picked.iter());

        let sigma = match sigma {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => {
                return Err(Error::InvalidArgument(format!("kernel width {s} must be positive")))
            }
            None => {
                if n < 2 {
                    return Err(Error::InvalidArgument(
                        "estimating the kernel width needs at least two columns".into(),
                    ));
                }
                let mut srng = ChaCha8Rng::seed_from_u64(seed ^ 0x5167_6d61_5f73_616d);
                let sample = index::sample(&mut srng, n, n.min(SIGMA_SAMPLE)).into_vec();
                let mut total = 0.0;
                for a in 0..anchors.ncols() {
                    for &j in &sample {
                        total += squared_distance(&anchors, a, x, j).sqrt();
                    }
                }
                let s = total / (anchors.ncols() * sample.len()) as f64;
                if s <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "kernel width estimate is zero: all sampled points coincide".into(),
                    ));
                }
                s
            }
        };
        Ok(Self {
            anchors,
            sigma,
            source_modality,
            seed,
        })
    }

    /// Lifts every column of `features` to its anchor similarities.
    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        let x = features.values();
        if x.nrows() != self.anchors.nrows() {
            return Err(Error::Dimension(format!(
                "kernel map expects {}-dimensional input, got {}",
                self.anchors.nrows(),
                x.nrows()
            )));
        }
        let denom = 2.0 * self.sigma * self.sigma;
        let m = self.anchors.ncols();
        let out = DMatrix::from_fn(m, x.ncols(), |i, j| {
            // exp underflows to 0 far from every anchor; keep the map strictly positive.
            (-squared_distance(&self.anchors, i, x, j) / denom)
                .exp()
                .max(f64::MIN_POSITIVE)
        });
        FeatureMatrix::new(out)
    }
}

fn squared_distance(a: &DMatrix<f64>, i: usize, x: &DMatrix<f64>, j: usize) -> f64 {
    a.column(i)
        .iter()
        .zip(x.column(j).iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> FeatureMatrix {
        FeatureMatrix::new(DMatrix::from_fn(2, n, |r, c| (c * (r + 1)) as f64 * 0.3)).unwrap()
    }

    #[test]
    fn exhaustive_sampling_is_a_permutation() {
        let x = grid(10);
        let map = KernelMap::fit(&x, 10, None, 3, 0).unwrap();
        let mut cols: Vec<usize> = (0..10)
            .map(|a| {
                (0..10)
                    .find(|&j| map.anchors().column(a) == x.values().column(j))
                    .unwrap()
            })
            .collect();
        cols.sort();
        assert_eq!(cols, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn fitting_is_deterministic() {
        let x = grid(20);
        let a = KernelMap::fit(&x, 3, None, 42, 0).unwrap();
        let b = KernelMap::fit(&x, 3, None, 42, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs_error() {
        let same = FeatureMatrix::new(DMatrix::from_element(3, 2, 1.5)).unwrap();
        assert!(KernelMap::fit(&same, 1, None, 0, 0).is_err());
        assert!(KernelMap::fit(&grid(4), 5, None, 0, 0).is_err());
        assert!(KernelMap::fit(&grid(1), 1, None, 0, 0).is_err());
        assert!(KernelMap::fit(&grid(1), 1, Some(1.0), 0, 0).is_ok());
    }

    #[test]
    fn kernel_values() {
        let anchors = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let map = KernelMap::from_parts(
            anchors,
            &KernelMapMeta { sigma: 1.0, source_modality: 0, seed: 0 },
        )
        .unwrap();
        // ‖x − a‖² = 2 = 2σ² gives e^{-1}.
        let x = FeatureMatrix::from_row_major(2, 3, &[0.0, 1.0, 1e3, 0.0, 1.0, 0.0]).unwrap();
        let phi = map.apply(&x).unwrap();
        assert_eq!(phi.values()[(0, 0)], 1.0);
        assert!((phi.values()[(0, 1)] - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!(phi.values()[(0, 2)] > 0.0 && phi.values()[(0, 2)] < 1e-300);
        assert!(map.apply(&grid(2).select_columns(&[0])).is_ok());
        let wrong = FeatureMatrix::new(DMatrix::zeros(3, 1)).unwrap();
        assert!(map.apply(&wrong).is_err());
    }

    proptest! {
        #[test]
        fn outputs_in_unit_interval_and_equivariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 24),
            shift in 0usize..6,
        ) {
            let x = FeatureMatrix::new(DMatrix::from_column_slice(4, 6, &vals)).unwrap();
            let map = KernelMap::fit(&x, 3, Some(1.3), 9, 0).unwrap();
            let phi = map.apply(&x).unwrap();
            prop_assert!(phi.values().iter().all(|&v| v > 0.0 && v <= 1.0));
            let perm: Vec<usize> = (0..6).map(|j| (j + shift) % 6).collect();
            let phi_perm = map.apply(&x.select_columns(&perm)).unwrap();
            prop_assert_eq!(phi_perm.values(), &phi.values().select_columns(perm.iter()));
        }

        #[test]
        fn monotone_in_distance(d1 in 0.0f64..10.0, extra in 1e-3f64..10.0) {
            let map = KernelMap::from_parts(
                DMatrix::zeros(1, 1),
                &KernelMapMeta { sigma: 2.0, source_modality: 0, seed: 0 },
            ).unwrap();
            let x = FeatureMatrix::from_row_major(1, 2, &[d1, d1 + extra]).unwrap();
            let phi = map.apply(&x).unwrap();
            prop_assert!(phi.values()[(0, 0)] > phi.values()[(0, 1)]);
        }
    }
}
