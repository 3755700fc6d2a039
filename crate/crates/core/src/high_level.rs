//! Category-level ("high-level") binary codes.
//!
//! New categories get codes `B_new` minimizing
//! `‖K − W_cᵀ B‖²_F + ridge·‖W_c‖²_F` over all categories, with the codes of
//! previously seen categories held fixed forever. The problem is solved by
//! alternating a closed-form `W_c` step with a row-by-row discrete update of
//! `B_new`. Instance codes are the sign of the sum of their categories' codes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{sign, CategoryRegistry, CodeMatrix, LabelMatrix};
use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, spd_solve};
use crate::semantic::SemanticMatrix;

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_ITERATIONS: usize = 5;

/// `(B Bᵀ + ridge·I)⁻¹ B Kᵀ`, the `r × k` minimizer of
/// `‖K − W_cᵀB‖² + ridge‖W_c‖²`.
pub fn solve_wc(codes: &CodeMatrix, semantics: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if codes.len() != semantics.ncols() {
        return Err(Error::Dimension(format!(
            "{} category codes vs {} semantic columns",
            codes.len(),
            semantics.ncols()
        )));
    }
    if codes.bits() == 0 || semantics.nrows() == 0 {
        return Err(Error::Dimension("code length and embedding dimension must be positive".into()));
    }
    let b = codes.to_f64();
    let gram = add_diagonal(&(&b * b.transpose()), ridge);
    let rhs = &b * semantics.transpose();
    spd_solve(&gram, &rhs)
}

/// Discrete minimizer of row `j` of `codes_new` with every other row fixed:
/// `sign(Q_j − B'ᵀ W' W_cj)` with `Q = W_c K_new`.
pub fn update_bc_row(
    j: usize,
    w_c: &DMatrix<f64>,
    codes_new: &CodeMatrix,
    semantics_new: &DMatrix<f64>,
) -> Result<Vec<i8>> {
    let r = w_c.nrows();
    if j >= r || codes_new.bits() != r || w_c.ncols() != semantics_new.nrows() || codes_new.len() != semantics_new.ncols() {
        return Err(Error::Dimension(format!(
            "row {j} of W_c {}x{}, codes {}x{}, semantics {}x{}",
            w_c.nrows(),
            w_c.ncols(),
            codes_new.bits(),
            codes_new.len(),
            semantics_new.nrows(),
            semantics_new.ncols()
        )));
    }
    let gram = w_c * w_c.transpose();
    let q = w_c * semantics_new;
    Ok(row_update(j, &gram, &q, codes_new.values()))
}

fn row_update(j: usize, gram: &DMatrix<f64>, q: &DMatrix<f64>, b: &DMatrix<i8>) -> Vec<i8> {
    (0..b.ncols())
        .map(|l| {
            let correction: f64 = (0..b.nrows())
                .filter(|&i| i != j)
                .map(|i| f64::from(b[(i, l)]) * gram[(i, j)])
                .sum();
            sign(q[(j, l)] - correction)
        })
        .collect()
}

/// `‖K − W_cᵀB‖²_F + ridge·‖W_c‖²_F` over the given categories.
pub fn objective_value(codes: &CodeMatrix, semantics: &DMatrix<f64>, w_c: &DMatrix<f64>, ridge: f64) -> f64 {
    let residual = semantics - w_c.transpose() * codes.to_f64();
    residual.norm_squared() + ridge * w_c.norm_squared()
}

/// Sign of the sum of the codes of each instance's categories.
pub fn generate_instance_codes(category_codes: &CodeMatrix, labels: &LabelMatrix) -> Result<CodeMatrix> {
    if labels.categories() != category_codes.len() {
        return Err(Error::Dimension(format!(
            "{} label rows for {} category codes",
            labels.categories(),
            category_codes.len()
        )));
    }
    let bc = category_codes.values();
    let l = labels.values();
    let r = bc.nrows();
    let mut out = DMatrix::zeros(r, labels.len());
    for j in 0..labels.len() {
        let mut sum = vec![0i32; r];
        let mut any = false;
        for c in 0..l.nrows() {
            if l[(c, j)] == 1 {
                any = true;
                for (s, &b) in sum.iter_mut().zip(bc.column(c).iter()) {
                    *s += i32::from(b);
                }
            }
        }
        if !any {
            return Err(Error::UnlabeledInstance(j));
        }
        for (i, s) in sum.into_iter().enumerate() {
            out[(i, j)] = if s < 0 { -1 } else { 1 };
        }
    }
    CodeMatrix::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Stop early once the relative objective change drops below this.
    pub tolerance: Option<f64>,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            tolerance: None,
        }
    }
}

/// Frozen category codes with their semantics and the last `W_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct HighLevelState {
    pub codes: CodeMatrix,
    pub semantics: DMatrix<f64>,
    pub w_c: DMatrix<f64>,
    pub registry: CategoryRegistry,
    pub ridge: f64,
}

impl HighLevelState {
    pub fn new(bits: usize, dim: usize, ridge: f64) -> Self {
        Self {
            codes: CodeMatrix::empty(bits),
            semantics: DMatrix::zeros(dim, 0),
            w_c: DMatrix::zeros(bits, dim),
            registry: CategoryRegistry::new(),
            ridge,
        }
    }

    pub fn bits(&self) -> usize {
        self.codes.bits()
    }

    pub fn dim(&self) -> usize {
        self.semantics.nrows()
    }

    pub fn objective(&self) -> f64 {
        objective_value(&self.codes, &self.semantics, &self.w_c, self.ridge)
    }

    pub fn instance_codes(&self, labels: &LabelMatrix) -> Result<CodeMatrix> {
        generate_instance_codes(&self.codes, labels)
    }

    /// Registers `names` at `round` and learns their codes; existing codes are
    /// untouched. Returns the objective after each completed iteration.
    pub fn learn_new_categories(
        &mut self,
        names: &[String],
        semantics: &SemanticMatrix,
        round: u32,
        opts: &LearnOptions,
    ) -> Result<Vec<f64>> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("no new categories".into()));
        }
        if opts.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if semantics.len() != names.len() || semantics.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "semantics {}x{} for {} names with embedding dimension {}",
                semantics.dim(),
                semantics.len(),
                names.len(),
                self.dim()
            )));
        }
        let mut registry = self.registry.clone();
        for name in names {
            registry.register(name, round)?;
        }

        let r = self.bits();
        let old = self.codes.len();
        let c_new = names.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut new_codes = CodeMatrix::new(DMatrix::from_fn(r, c_new, |_, _| {
            if rng.random::<bool>() { 1 } else { -1 }
        }))?;
        let k_new = &semantics.values;
        let mut k_all = DMatrix::zeros(self.dim(), old + c_new);
        k_all.columns_mut(0, old).copy_from(&self.semantics);
        k_all.columns_mut(old, c_new).copy_from(k_new);

        let mut objectives = Vec::with_capacity(opts.iterations);
        let mut w_c;
        for _ in 0..opts.iterations {
            let all = self.codes.hconcat(&new_codes)?;
            w_c = solve_wc(&all, &k_all, self.ridge)?;
            let gram = &w_c * w_c.transpose();
            let q = &w_c * k_new;
            for j in 0..r {
                let row = row_update(j, &gram, &q, new_codes.values());
                new_codes.set_row(j, &row);
            }
            let all = self.codes.hconcat(&new_codes)?;
            let f = objective_value(&all, &k_all, &w_c, self.ridge);
            let prev = objectives.last().copied();
            objectives.push(f);
            if let (Some(tol), Some(p)) = (opts.tolerance, prev) {
                if (p - f).abs() <= tol * p.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        let all = self.codes.hconcat(&new_codes)?;
        // Keep W_c consistent with the final codes.
        w_c = solve_wc(&all, &k_all, self.ridge)?;

        self.codes = all;
        self.semantics = k_all;
        self.w_c = w_c;
        self.registry = registry;
        Ok(objectives)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::semantic::{embed_categories, PseudoProvider};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn codes(rows: usize, cols: usize, v: &[i8]) -> CodeMatrix {
        CodeMatrix::new(DMatrix::from_row_slice(rows, cols, v)).unwrap()
    }

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn random_codes(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CodeMatrix {
        CodeMatrix::new(DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1 } else { -1 })).unwrap()
    }

    /// Dense least-squares oracle: stacks `[Bᵀ; √ridge·I] W = [Kᵀ; 0]` and
    /// solves it through an SVD.
    fn lstsq_wc(b: &CodeMatrix, k: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
        let r = b.bits();
        let c = b.len();
        let mut a = DMatrix::zeros(c + r, r);
        a.rows_mut(0, c).copy_from(&b.to_f64().transpose());
        for i in 0..r {
            a[(c + i, i)] = ridge.sqrt();
        }
        let mut rhs = DMatrix::zeros(c + r, k.nrows());
        rhs.rows_mut(0, c).copy_from(&k.transpose());
        a.svd(true, true).solve(&rhs, 1e-300).unwrap()
    }

    #[test]
    fn wc_hand_examples() {
        let b = codes(2, 2, &[1, 1, 1, -1]);
        let k = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        let w = solve_wc(&b, &k, 1e-14).unwrap();
        assert!((w[(0, 0)] - 1.0).abs() < 1e-12 && (w[(1, 0)] - 1.0).abs() < 1e-12);
        let recon = w.transpose() * b.to_f64();
        assert!((recon - &k).norm() < 1e-12);

        let w = solve_wc(&codes(1, 1, &[1]), &DMatrix::from_element(1, 1, 3.0), 0.0).unwrap();
        assert_eq!(w[(0, 0)], 3.0);
    }

    #[test]
    fn wc_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (r, c, k) in [(4, 6, 3), (8, 3, 5), (2, 9, 7)] {
            let b = random_codes(r, c, &mut rng);
            let sem = gaussian(k, c, &mut rng);
            for ridge in [1e-3, 0.5] {
                let w = solve_wc(&b, &sem, ridge).unwrap();
                let oracle = lstsq_wc(&b, &sem, ridge);
                assert!((&w - &oracle).norm() <= 1e-8 * oracle.norm().max(1.0));
            }
        }
    }

    #[test]
    fn singular_wc_errors_without_ridge() {
        let b = codes(2, 1, &[1, 1]);
        assert!(matches!(
            solve_wc(&b, &DMatrix::from_element(1, 1, 1.0), 0.0),
            Err(Error::Solve { .. })
        ));
    }

    #[test]
    fn row_update_single_row() {
        let w = DMatrix::from_element(1, 1, 2.0);
        let b = codes(1, 1, &[-1]);
        assert_eq!(update_bc_row(0, &w, &b, &DMatrix::from_element(1, 1, 3.0)).unwrap(), vec![1]);
        assert_eq!(update_bc_row(0, &w, &b, &DMatrix::from_element(1, 1, -3.0)).unwrap(), vec![-1]);
        assert!(update_bc_row(1, &w, &b, &DMatrix::from_element(1, 1, 3.0)).is_err());
    }

    #[test]
    fn row_update_beats_every_single_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // r = 4, k = 8, c_n = 3
        let w = gaussian(4, 8, &mut rng);
        let k = gaussian(8, 3, &mut rng);
        let mut b = random_codes(4, 3, &mut rng);
        for j in 0..4 {
            let row = update_bc_row(j, &w, &b, &k).unwrap();
            b.set_row(j, &row);
            let best = objective_value(&b, &k, &w, 0.0);
            for l in 0..3 {
                let mut flipped = b.clone();
                let mut r2 = row.clone();
                r2[l] = -r2[l];
                flipped.set_row(j, &r2);
                assert!(best <= objective_value(&flipped, &k, &w, 0.0) + 1e-12);
            }
        }
    }

    #[test]
    fn objective_examples() {
        let b = codes(1, 1, &[1]);
        let w = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(objective_value(&b, &DMatrix::from_element(1, 1, 3.0), &w, 0.0), 4.0);
        assert_eq!(objective_value(&b, &DMatrix::from_element(1, 1, 1.0), &w, 0.0), 0.0);
        // Residual 2 → 4, residual 4 → 16.
        assert_eq!(objective_value(&b, &DMatrix::from_element(1, 1, 5.0), &w, 0.0), 16.0);
    }

    #[test]
    fn instance_code_examples() {
        let bc = codes(2, 3, &[1, -1, 1, -1, 1, -1]);
        let labels = LabelMatrix::from_label_lists(3, &[vec![1], vec![0, 1], vec![0, 2]]).unwrap();
        let b = generate_instance_codes(&bc, &labels).unwrap();
        assert_eq!(b.column(0), vec![-1, 1]);
        assert_eq!(b.column(1), vec![1, 1]);
        assert_eq!(b.column(2), vec![1, -1]);
        let unlabeled = LabelMatrix::from_label_lists(3, &[vec![0], vec![]]).unwrap();
        assert!(matches!(
            generate_instance_codes(&bc, &unlabeled),
            Err(Error::UnlabeledInstance(1))
        ));
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn learning_freezes_old_codes_and_descends() {
        let provider = PseudoProvider { dim: 12, seed: 1 };
        let mut state = HighLevelState::new(16, 12, DEFAULT_RIDGE);
        let first = names("a", 5);
        let sem = embed_categories(&provider, &first, 0).unwrap();
        let opts = LearnOptions { iterations: 5, seed: 3, tolerance: None };
        let objs = state.learn_new_categories(&first, &sem, 1, &opts).unwrap();
        assert_eq!(objs.len(), 5);
        for w in objs.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        let frozen = state.codes.clone();

        let second = names("b", 1);
        let sem2 = embed_categories(&provider, &second, 5).unwrap();
        state.learn_new_categories(&second, &sem2, 2, &opts).unwrap();
        assert_eq!(state.codes.select_columns(&[0, 1, 2, 3, 4]), frozen);
        assert_eq!(state.registry.new_count(2), 1);

        let dup = vec!["a0".to_string()];
        let sem3 = embed_categories(&provider, &dup, 6).unwrap();
        let before = state.clone();
        assert!(matches!(
            state.learn_new_categories(&dup, &sem3, 3, &opts),
            Err(Error::DuplicateCategory(_))
        ));
        assert_eq!(state, before);
    }

    #[test]
    fn early_stop_cuts_iterations() {
        let provider = PseudoProvider { dim: 6, seed: 2 };
        let mut state = HighLevelState::new(8, 6, DEFAULT_RIDGE);
        let n = names("c", 3);
        let sem = embed_categories(&provider, &n, 0).unwrap();
        let objs = state
            .learn_new_categories(&n, &sem, 1, &LearnOptions { iterations: 50, seed: 0, tolerance: Some(1e-6) })
            .unwrap();
        assert!(objs.len() < 50);
    }

    proptest! {
        #[test]
        fn descent_holds_for_random_problems(seed in any::<u64>(), old in 0usize..4, new in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, k) = (6, 5);
            let mut state = HighLevelState::new(r, k, 1e-3);
            if old > 0 {
                let sem = SemanticMatrix { values: gaussian(k, old, &mut rng), provider_id: "t".into() };
                state.learn_new_categories(&names("o", old), &sem, 1, &LearnOptions::default()).unwrap();
            }
            let sem = SemanticMatrix { values: gaussian(k, new, &mut rng), provider_id: "t".into() };
            let before = state.codes.clone();
            let objs = state
                .learn_new_categories(&names("n", new), &sem, 2, &LearnOptions { iterations: 5, seed, tolerance: None })
                .unwrap();
            for w in objs.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-10);
            }
            prop_assert_eq!(state.codes.select_columns(&(0..old).collect::<Vec<_>>()), before);
        }
    }
}
