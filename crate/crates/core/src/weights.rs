//! Auxiliary residual projections and per-instance modality fusion weights.
//!
//! `U_m` regresses the part of the codes that `W_m` fails to explain. At query
//! time `h_m[j] = Σ_i |U_mᵀ x_qm,j|_i` estimates how poorly modality `m`
//! serves query `j`; the weight is `z_m[j] = h_max − h_m[j]` with `h_max`
//! taken over every modality and every query in the batch. Fused codes are
//! `sign(Σ_m z_m[j] · W_m x_qm,j)`.
//!
//! Because `h_max` is a batch maximum, a query's code can depend on which
//! other queries are encoded alongside it.

use nalgebra::DMatrix;

use crate::data::{sign_quantize, CodeMatrix, FeatureMatrix};
use crate::error::{Error, Result};
use crate::hash_fn::ModalityStatistics;
use crate::linalg::{add_diagonal, spd_solve};

/// `U = (D₂ + δI)⁻¹ (D₃ − D₂ Wᵀ)`, `d × r`.
pub fn solve_auxiliary(stats: &ModalityStatistics, w: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if w.shape() != (stats.bits(), stats.dim()) {
        return Err(Error::Dimension(format!(
            "projection {}x{} against statistics for r={}, d={}",
            w.nrows(),
            w.ncols(),
            stats.bits(),
            stats.dim()
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta {delta} must be non-negative")));
    }
    let rhs = &stats.d3 - &stats.d2 * w.transpose();
    spd_solve(&add_diagonal(&stats.d2, delta), &rhs)
}

/// Query features, one matrix per modality, all with `n_q ≥ 1` columns.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    modalities: Vec<DMatrix<f64>>,
}

impl QueryBatch {
    pub fn new(modalities: Vec<FeatureMatrix>) -> Result<Self> {
        let n = modalities.first().map(|m| m.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidArgument("query batch must contain at least one query".into()));
        }
        if modalities.iter().any(|m| m.len() != n) {
            return Err(Error::Dimension("query modalities have different column counts".into()));
        }
        Ok(Self {
            modalities: modalities.into_iter().map(FeatureMatrix::into_inner).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.modalities[0].ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn modalities(&self) -> &[DMatrix<f64>] {
        &self.modalities
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVectors {
    /// One length-`n_q` vector per modality.
    pub z: Vec<Vec<f64>>,
    pub h_max: f64,
}

impl WeightVectors {
    /// Unit weights for every modality and query (fusion by plain sum).
    pub fn uniform(modalities: usize, n_q: usize) -> Self {
        Self {
            z: vec![vec![1.0; n_q]; modalities],
            h_max: 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            z: self.z.iter().map(|v| v.iter().map(|x| x * factor).collect()).collect(),
            h_max: self.h_max * factor,
        }
    }

    /// Adds `floor` to every weight.
    pub fn with_floor(mut self, floor: f64) -> Self {
        for v in &mut self.z {
            v.iter_mut().for_each(|x| *x += floor);
        }
        self
    }
}

/// Per-modality quantization-error scores `h_m` (column sums of `|U_mᵀ X_qm|`).
pub fn error_scores(auxiliaries: &[DMatrix<f64>], queries: &QueryBatch) -> Result<Vec<Vec<f64>>> {
    if auxiliaries.len() != queries.modalities.len() {
        return Err(Error::Dimension(format!(
            "{} auxiliary projections for {} query modalities",
            auxiliaries.len(),
            queries.modalities.len()
        )));
    }
    auxiliaries
        .iter()
        .zip(&queries.modalities)
        .map(|(u, x)| {
            if u.nrows() != x.nrows() {
                return Err(Error::Dimension(format!(
                    "auxiliary projection expects {} features, query has {}",
                    u.nrows(),
                    x.nrows()
                )));
            }
            let proj = u.transpose() * x;
            Ok((0..proj.ncols()).map(|j| proj.column(j).iter().map(|v| v.abs()).sum()).collect())
        })
        .collect()
}

pub fn compute_weights(auxiliaries: &[DMatrix<f64>], queries: &QueryBatch) -> Result<WeightVectors> {
    if auxiliaries.len() < 2 {
        return Err(Error::InvalidArgument("fine-grained weights need at least two modalities".into()));
    }
    let h = error_scores(auxiliaries, queries)?;
    Ok(weights_from_scores(&h))
}

/// `z_m = h_max·1ᵀ − h_m`.
pub fn weights_from_scores(h: &[Vec<f64>]) -> WeightVectors {
    let h_max = h.iter().flatten().copied().fold(0.0f64, f64::max);
    WeightVectors {
        z: h.iter().map(|hm| hm.iter().map(|&v| h_max - v).collect()).collect(),
        h_max,
    }
}

/// `sign(Σ_m z_m[j] · W_m x_qm,j)` per query column `j`.
pub fn encode_queries(projections: &[DMatrix<f64>], weights: &WeightVectors, queries: &QueryBatch) -> Result<CodeMatrix> {
    let m = projections.len();
    if m == 0 || weights.z.len() != m || queries.modalities.len() != m {
        return Err(Error::Dimension(format!(
            "{m} projections, {} weight vectors, {} query modalities",
            weights.z.len(),
            queries.modalities.len()
        )));
    }
    let n = queries.len();
    let r = projections[0].nrows();
    let mut fused = DMatrix::zeros(r, n);
    for ((w, z), x) in projections.iter().zip(&weights.z).zip(&queries.modalities) {
        if w.ncols() != x.nrows() || w.nrows() != r || z.len() != n {
            return Err(Error::Dimension(format!(
                "projection {}x{} for {}-dimensional queries",
                w.nrows(),
                w.ncols(),
                x.nrows()
            )));
        }
        let mut proj = w * x;
        for (j, &zj) in z.iter().enumerate() {
            proj.column_mut(j).scale_mut(zj);
        }
        fused += proj;
    }
    sign_quantize(&fused)
}
