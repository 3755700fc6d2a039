//! Hamming ranking and retrieval metrics.
//!
//! Database items are ranked by ascending Hamming distance to each query,
//! ties broken by ascending database index. An item is relevant to a query
//! when they share at least one label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CodeMatrix, LabelMatrix};
use crate::error::{Error, Result};

/// Codes packed 64 bits per word, one `Vec<u64>` per column.
fn pack(codes: &CodeMatrix) -> Vec<Vec<u64>> {
    let v = codes.values();
    let words = v.nrows().div_ceil(64);
    (0..v.ncols())
        .map(|j| {
            let mut out = vec![0u64; words];
            for (i, &b) in v.column(j).iter().enumerate() {
                if b > 0 {
                    out[i / 64] |= 1 << (i % 64);
                }
            }
            out
        })
        .collect()
}

/// `n_q × N` matrix (row per query) of differing bit counts.
pub fn hamming_distances(queries: &CodeMatrix, database: &CodeMatrix) -> Result<Vec<Vec<u32>>> {
    if queries.bits() != database.bits() {
        return Err(Error::Dimension(format!(
            "query codes have {} bits, database codes {}",
            queries.bits(),
            database.bits()
        )));
    }
    let q = pack(queries);
    let db = pack(database);
    Ok(q.iter()
        .map(|qw| {
            db.iter()
                .map(|dw| qw.iter().zip(dw).map(|(a, b)| (a ^ b).count_ones()).sum())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    /// Per query, database indices in rank order.
    pub order: Vec<Vec<usize>>,
    /// Per query, distances along `order`.
    pub distances: Vec<Vec<u32>>,
}

impl RankingResult {
    pub fn queries(&self) -> usize {
        self.order.len()
    }

    pub fn database_len(&self) -> usize {
        self.order.first().map_or(0, Vec::len)
    }
}

pub fn rank(queries: &CodeMatrix, database: &CodeMatrix) -> Result<RankingResult> {
    let dist = hamming_distances(queries, database)?;
    let bits = queries.bits();
    let mut order = Vec::with_capacity(dist.len());
    let mut distances = Vec::with_capacity(dist.len());
    for row in dist {
        // Counting sort by distance keeps index order inside each bucket.
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bits + 1];
        for (i, &d) in row.iter().enumerate() {
            buckets[d as usize].push(i);
        }
        let o: Vec<usize> = buckets.into_iter().flatten().collect();
        distances.push(o.iter().map(|&i| row[i]).collect());
        order.push(o);
    }
    Ok(RankingResult { order, distances })
}

fn check_labels(ranking: &RankingResult, query_labels: &LabelMatrix, db_labels: &LabelMatrix) -> Result<()> {
    if ranking.queries() != query_labels.len() {
        return Err(Error::Dimension(format!(
            "{} ranked queries, {} query label columns",
            ranking.queries(),
            query_labels.len()
        )));
    }
    if ranking.database_len() != db_labels.len() {
        return Err(Error::Dimension(format!(
            "ranking covers {} database items, {} database label columns",
            ranking.database_len(),
            db_labels.len()
        )));
    }
    Ok(())
}

/// Mean average precision over queries with at least one relevant item in
/// the evaluated prefix (`cutoff` items, or the whole ranking).
pub fn mean_average_precision(
    ranking: &RankingResult,
    query_labels: &LabelMatrix,
    db_labels: &LabelMatrix,
    cutoff: Option<usize>,
) -> Result<f64> {
    if ranking.database_len() == 0 {
        return Err(Error::InvalidArgument("empty database".into()));
    }
    check_labels(ranking, query_labels, db_labels)?;
    let mut total = 0.0;
    let mut evaluated = 0usize;
    for (q, order) in ranking.order.iter().enumerate() {
        let depth = cutoff.unwrap_or(order.len()).min(order.len());
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (k, &i) in order[..depth].iter().enumerate() {
            if query_labels.shares_label(q, db_labels, i) {
                hits += 1;
                sum += hits as f64 / (k + 1) as f64;
            }
        }
        if hits > 0 {
            total += sum / hits as f64;
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableQuery);
    }
    Ok(total / evaluated as f64)
}

/// Mean over queries of the relevant fraction of the top `k`.
pub fn precision_at_k(
    ranking: &RankingResult,
    query_labels: &LabelMatrix,
    db_labels: &LabelMatrix,
    k: usize,
) -> Result<f64> {
    check_labels(ranking, query_labels, db_labels)?;
    if k == 0 || k > ranking.database_len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            ranking.database_len()
        )));
    }
    if ranking.queries() == 0 {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let total: f64 = ranking
        .order
        .iter()
        .enumerate()
        .map(|(q, order)| {
            let rel = order[..k]
                .iter()
                .filter(|&&i| query_labels.shares_label(q, db_labels, i))
                .count();
            rel as f64 / k as f64
        })
        .sum();
    Ok(total / ranking.queries() as f64)
}

/// One evaluation record, serialized as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub round: u32,
    pub r: usize,
    pub map: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub n_database: usize,
    pub wall_ms: f64,
}

/// Ranks `queries` against `database` and computes MAP plus precision at
/// each `k` in `ks` (values larger than the database are skipped).
pub fn evaluate(
    queries: &CodeMatrix,
    query_labels: &LabelMatrix,
    database: &CodeMatrix,
    db_labels: &LabelMatrix,
    ks: &[usize],
    round: u32,
) -> Result<Metrics> {
    let start = std::time::Instant::now();
    let ranking = rank(queries, database)?;
    let map = mean_average_precision(&ranking, query_labels, db_labels, None)?;
    let mut p_at_k = BTreeMap::new();
    for &k in ks {
        if k >= 1 && k <= database.len() {
            p_at_k.insert(k, precision_at_k(&ranking, query_labels, db_labels, k)?);
        }
    }
    Ok(Metrics {
        round,
        r: queries.bits(),
        map,
        p_at_k,
        n_queries: queries.len(),
        n_database: database.len(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn codes(cols: &[&[i8]]) -> CodeMatrix {
        let r = cols[0].len();
        CodeMatrix::new(DMatrix::from_fn(r, cols.len(), |i, j| cols[j][i])).unwrap()
    }

    /// Ranking with a single query whose database relevance is `rel`, in order.
    fn fixture(rel: &[bool]) -> (RankingResult, LabelMatrix, LabelMatrix) {
        let ranking = RankingResult {
            order: vec![(0..rel.len()).collect()],
            distances: vec![vec![0; rel.len()]],
        };
        let q = LabelMatrix::from_label_lists(2, &[vec![0]]).unwrap();
        let db = LabelMatrix::from_label_lists(
            2,
            &rel.iter().map(|&r| if r { vec![0] } else { vec![1] }).collect::<Vec<_>>(),
        )
        .unwrap();
        (ranking, q, db)
    }

    #[test]
    fn hamming_examples() {
        let a = codes(&[&[1, 1, -1, 1]]);
        let b = codes(&[&[1, -1, -1, -1], &[1, 1, -1, 1], &[-1, -1, 1, -1]]);
        assert_eq!(hamming_distances(&a, &b).unwrap(), vec![vec![2, 0, 4]]);
        let ones = CodeMatrix::new(DMatrix::from_element(32, 1, 1)).unwrap();
        let neg = CodeMatrix::new(DMatrix::from_element(32, 1, -1)).unwrap();
        assert_eq!(hamming_distances(&ones, &neg).unwrap(), vec![vec![32]]);
        assert!(hamming_distances(&ones, &a).is_err());
    }

    #[test]
    fn hamming_crosses_word_boundary() {
        let mut a = DMatrix::from_element(130, 1, 1i8);
        let b = a.clone();
        a[(64, 0)] = -1;
        a[(129, 0)] = -1;
        let d = hamming_distances(&CodeMatrix::new(a).unwrap(), &CodeMatrix::new(b).unwrap()).unwrap();
        assert_eq!(d, vec![vec![2]]);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let q = codes(&[&[1, 1]]);
        let db = codes(&[&[-1, -1], &[1, -1], &[1, 1], &[-1, 1]]);
        let r = rank(&q, &db).unwrap();
        assert_eq!(r.order, vec![vec![2, 1, 3, 0]]);
        assert_eq!(r.distances, vec![vec![0, 1, 1, 2]]);
    }

    #[test]
    fn ap_examples() {
        let (r, q, db) = fixture(&[true, false, true]);
        let map = mean_average_precision(&r, &q, &db, None).unwrap();
        assert!((map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let (r, q, db) = fixture(&[true, true, true]);
        assert_eq!(mean_average_precision(&r, &q, &db, None).unwrap(), 1.0);
        let (r, q, db) = fixture(&[false, false]);
        assert!(matches!(
            mean_average_precision(&r, &q, &db, None),
            Err(Error::NoEvaluableQuery)
        ));
    }

    #[test]
    fn cutoff_limits_depth() {
        let (r, q, db) = fixture(&[false, true, true]);
        let full = mean_average_precision(&r, &q, &db, None).unwrap();
        assert!((full - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(mean_average_precision(&r, &q, &db, Some(2)).unwrap(), 0.5);
    }

    #[test]
    fn precision_examples() {
        let (r, q, db) = fixture(&[true, false, true, false]);
        assert_eq!(precision_at_k(&r, &q, &db, 2).unwrap(), 0.5);
        assert_eq!(precision_at_k(&r, &q, &db, 1).unwrap(), 1.0);
        let (r, q, db) = fixture(&[false, false, true]);
        assert_eq!(precision_at_k(&r, &q, &db, 2).unwrap(), 0.0);
        assert!(precision_at_k(&r, &q, &db, 0).is_err());
        assert!(precision_at_k(&r, &q, &db, 4).is_err());
    }

    #[test]
    fn relevant_first_gives_unit_map() {
        let (r, q, db) = fixture(&[true, true, false, false, false]);
        assert_eq!(mean_average_precision(&r, &q, &db, None).unwrap(), 1.0);
    }

    #[test]
    fn empty_database_errors() {
        let r = RankingResult { order: vec![vec![]], distances: vec![vec![]] };
        let q = LabelMatrix::from_label_lists(1, &[vec![0]]).unwrap();
        let db = LabelMatrix::zeros(1, 0);
        assert!(mean_average_precision(&r, &q, &db, None).is_err());
    }

    #[test]
    fn label_rows_are_padded() {
        let q = LabelMatrix::from_label_lists(3, &[vec![2]]).unwrap();
        let db = LabelMatrix::from_label_lists(2, &[vec![0]]).unwrap();
        assert!(!q.shares_label(0, &db, 0));
    }

    #[test]
    fn metrics_json_shape() {
        let q = codes(&[&[1, 1]]);
        let db = codes(&[&[1, 1], &[-1, 1]]);
        let ql = LabelMatrix::from_label_lists(1, &[vec![0]]).unwrap();
        let dl = LabelMatrix::from_label_lists(1, &[vec![0], vec![0]]).unwrap();
        let m = evaluate(&q, &ql, &db, &dl, &[1, 5], 3).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["round", "r", "map", "p_at_k", "n_queries", "n_database", "wall_ms"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["p_at_k"]["1"], 1.0);
        assert!(v["p_at_k"].get("5").is_none());
    }
}
