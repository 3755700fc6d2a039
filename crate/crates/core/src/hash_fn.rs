//! Per-modality linear hash functions fitted by ridge regression onto the
//! instance codes, kept exact across rounds by accumulating
//! `D₁ = Σ B Xᵀ`, `D₂ = Σ X Xᵀ` and `D₃ = Σ X Bᵀ`.

use nalgebra::DMatrix;

use crate::data::CodeMatrix;
use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, spd_solve, symmetrize};

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityStatistics {
    /// `r × d`
    pub d1: DMatrix<f64>,
    /// `d × d`, symmetric PSD
    pub d2: DMatrix<f64>,
    /// `d × r`, always `d1ᵀ`
    pub d3: DMatrix<f64>,
    pub rounds_absorbed: u32,
}

impl ModalityStatistics {
    pub fn new(bits: usize, dim: usize) -> Self {
        Self {
            d1: DMatrix::zeros(bits, dim),
            d2: DMatrix::zeros(dim, dim),
            d3: DMatrix::zeros(dim, bits),
            rounds_absorbed: 0,
        }
    }

    pub fn bits(&self) -> usize {
        self.d1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.d2.nrows()
    }

    /// Folds one chunk (`x`: `d × n`, `b`: `r × n`) into the accumulators.
    pub fn update(&mut self, x: &DMatrix<f64>, b: &CodeMatrix) -> Result<()> {
        if x.ncols() != b.len() || x.nrows() != self.dim() || b.bits() != self.bits() {
            return Err(Error::Dimension(format!(
                "features {}x{} and codes {}x{} against statistics for d={}, r={}",
                x.nrows(),
                x.ncols(),
                b.bits(),
                b.len(),
                self.dim(),
                self.bits()
            )));
        }
        self.rounds_absorbed += 1;
        if x.ncols() == 0 {
            return Ok(());
        }
        let bf = b.to_f64();
        let xt = x.transpose();
        self.d1.gemm(1.0, &bf, &xt, 1.0);
        self.d2.gemm(1.0, x, &xt, 1.0);
        symmetrize(&mut self.d2);
        self.d3 = self.d1.transpose();
        Ok(())
    }
}

/// `W = D₁ (D₂ + θI)⁻¹`, the `r × d` ridge solution.
pub fn solve_projection(stats: &ModalityStatistics, theta: f64) -> Result<DMatrix<f64>> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta {theta} must be non-negative")));
    }
    let a = add_diagonal(&stats.d2, theta);
    // (D₂ + θI) is symmetric, so Wᵀ = (D₂ + θI)⁻¹ D₃.
    Ok(spd_solve(&a, &stats.d3)?.transpose())
}

/// Projections `W_m`, auxiliaries `U_m` and statistics for every modality.
#[derive(Debug, Clone, PartialEq)]
pub struct HashFunctionState {
    pub projections: Vec<DMatrix<f64>>,
    pub auxiliaries: Vec<DMatrix<f64>>,
    pub stats: Vec<ModalityStatistics>,
    pub theta: f64,
    pub delta: f64,
}

impl HashFunctionState {
    pub fn new(bits: usize, dims: &[usize], theta: f64, delta: f64) -> Self {
        Self {
            projections: dims.iter().map(|&d| DMatrix::zeros(bits, d)).collect(),
            auxiliaries: dims.iter().map(|&d| DMatrix::zeros(d, bits)).collect(),
            stats: dims.iter().map(|&d| ModalityStatistics::new(bits, d)).collect(),
            theta,
            delta,
        }
    }

    pub fn modalities(&self) -> usize {
        self.stats.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.stats.iter().map(|s| s.dim()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sign_quantize;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn code(v: i8) -> CodeMatrix {
        CodeMatrix::new(DMatrix::from_element(1, 1, v)).unwrap()
    }

    #[test]
    fn hand_accumulation() {
        let mut s = ModalityStatistics::new(1, 1);
        s.update(&one(1.0), &code(1)).unwrap();
        assert_eq!((s.d1[(0, 0)], s.d2[(0, 0)], s.d3[(0, 0)]), (1.0, 1.0, 1.0));
        s.update(&one(2.0), &code(-1)).unwrap();
        assert_eq!((s.d1[(0, 0)], s.d2[(0, 0)], s.d3[(0, 0)]), (-1.0, 5.0, -1.0));
        assert_eq!(s.rounds_absorbed, 2);
    }

    #[test]
    fn empty_chunk_leaves_statistics() {
        let mut s = ModalityStatistics::new(2, 3);
        s.update(&DMatrix::zeros(3, 0), &CodeMatrix::empty(2)).unwrap();
        assert_eq!(s.d2, DMatrix::zeros(3, 3));
        assert!(s.update(&DMatrix::zeros(2, 1), &code(1)).is_err());
    }

    #[test]
    fn projection_hand_value_and_limit() {
        let mut s = ModalityStatistics::new(1, 1);
        s.update(&one(2.0), &code(1)).unwrap();
        let w = solve_projection(&s, 1.0).unwrap();
        assert!((w[(0, 0)] - 0.4).abs() < 1e-15);
        assert!(solve_projection(&s, 1e12).unwrap().amax() < 1e-9);
    }

    /// Direct ridge regression over raw data, solved as a stacked
    /// least-squares problem through SVD.
    fn ridge_oracle(x: &DMatrix<f64>, b: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
        let (d, n) = x.shape();
        let mut a = DMatrix::zeros(n + d, d);
        a.rows_mut(0, n).copy_from(&x.transpose());
        for i in 0..d {
            a[(n + i, i)] = theta.sqrt();
        }
        let mut rhs = DMatrix::zeros(n + d, b.nrows());
        rhs.rows_mut(0, n).copy_from(&b.transpose());
        a.svd(true, true).solve(&rhs, 1e-300).unwrap().transpose()
    }

    proptest! {
        #[test]
        fn streaming_matches_batch(seed in any::<u64>(), sizes in proptest::collection::vec(0usize..12, 1..5)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, r) = (4, 3);
            let n: usize = sizes.iter().sum();
            let x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
            let proj = DMatrix::from_fn(r, d, |_, _| StandardNormal.sample(&mut rng));
            let b = sign_quantize(&(&proj * &x)).unwrap();

            let mut streamed = ModalityStatistics::new(r, d);
            let mut start = 0;
            for &s in &sizes {
                let cols: Vec<usize> = (start..start + s).collect();
                streamed.update(&x.select_columns(cols.iter()), &b.select_columns(&cols)).unwrap();
                start += s;
            }
            let mut batch = ModalityStatistics::new(r, d);
            batch.update(&x, &b).unwrap();
            prop_assert!((&streamed.d1 - &batch.d1).amax() <= 1e-12 * (1.0 + batch.d1.amax()));
            prop_assert!((&streamed.d2 - &batch.d2).amax() <= 1e-12 * (1.0 + batch.d2.amax()));
            prop_assert_eq!(&streamed.d3, &streamed.d1.transpose());
            prop_assert!((&streamed.d2 - streamed.d2.transpose()).amax() <= 1e-9);

            let theta = 0.7;
            let w = solve_projection(&streamed, theta).unwrap();
            let oracle = ridge_oracle(&x, &b.to_f64(), theta);
            prop_assert!((&w - &oracle).norm() <= 1e-8 * oracle.norm().max(1e-12) + 1e-12);

            let grad = &w * add_diagonal(&streamed.d2, theta) - &streamed.d1;
            prop_assert!(grad.norm() <= 1e-8 * (1.0 + streamed.d1.norm()));

            let min_eig = streamed.d2.clone().symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-9 * (1.0 + streamed.d2.amax()));
        }
    }
}
