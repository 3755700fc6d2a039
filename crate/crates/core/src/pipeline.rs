//! Drives an engine through a scenario plan, evaluating after every round.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{CategoryRegistry, FeatureChunk, FeatureMatrix, LabelMatrix};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::io::Dataset;
use crate::scenarios::{restrict_labels, ScenarioPlan};
use crate::trainer::{Engine, RoundSummary};

pub const DEFAULT_KS: [usize; 3] = [10, 50, 100];

/// Metrics and timing for one completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub r: usize,
    pub map: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub n_database: usize,
    /// Training time of the round.
    pub wall_ms: f64,
    /// Query encoding plus ranking time.
    pub eval_ms: f64,
    pub n_new_categories: usize,
    pub objectives: Vec<f64>,
}

/// Re-indexes dataset labels (rows named by `names`) onto the registry rows.
/// Categories the registry has never seen are dropped.
pub fn align_labels(labels: &LabelMatrix, names: &[String], registry: &CategoryRegistry) -> Result<LabelMatrix> {
    if names.len() != labels.categories() {
        return Err(Error::Dimension(format!(
            "{} category names for {} label rows",
            names.len(),
            labels.categories()
        )));
    }
    let rows: Vec<Option<usize>> = names.iter().map(|n| registry.index_of(n)).collect();
    let lists: Vec<Vec<usize>> = (0..labels.len())
        .map(|j| labels.labels_of(j).into_iter().filter_map(|c| rows[c]).collect())
        .collect();
    LabelMatrix::from_label_lists(registry.len(), &lists)
}

pub fn select_modalities(ds: &Dataset, cols: &[usize]) -> Vec<FeatureMatrix> {
    ds.modalities.iter().map(|m| m.select_columns(cols)).collect()
}

/// Training chunk for plan round `t` (zero-based), with labels outside the
/// round's category set cleared. Instances left without labels are skipped.
pub fn round_chunk(ds: &Dataset, plan: &ScenarioPlan, t: usize, engine: &Engine) -> Result<FeatureChunk> {
    let round = &plan.rounds[t];
    let labels = restrict_labels(&ds.labels, &round.train, &round.categories);
    let keep: Vec<usize> = (0..labels.len()).filter(|&j| !labels.labels_of(j).is_empty()).collect();
    let cols: Vec<usize> = keep.iter().map(|&j| round.train[j]).collect();
    FeatureChunk::from_named_labels(
        select_modalities(ds, &cols),
        &labels.select_columns(&keep),
        &ds.categories,
        engine.state().registry(),
        engine.round() + 1,
    )
}

/// Encodes the test instances of rounds `0..=t` and ranks them against the
/// engine's database.
pub fn evaluate_round(engine: &Engine, ds: &Dataset, plan: &ScenarioPlan, t: usize, ks: &[usize]) -> Result<crate::eval::Metrics> {
    let test: Vec<usize> = plan.rounds[..=t].iter().flat_map(|r| r.test.iter().copied()).collect();
    if test.is_empty() {
        return Err(Error::NoEvaluableQuery);
    }
    let queries = engine.encode(&select_modalities(ds, &test))?;
    let registry = engine.state().registry();
    let query_labels = align_labels(&ds.labels.select_columns(&test), &ds.categories, registry)?;
    let st = engine.state();
    let db_labels = st.database_labels.pad_rows(registry.len());
    evaluate(&queries, &query_labels, &st.database_codes, &db_labels, ks, engine.round())
}

/// Trains round `t` and evaluates it.
pub fn run_round(engine: &mut Engine, ds: &Dataset, plan: &ScenarioPlan, t: usize, ks: &[usize]) -> Result<RoundRecord> {
    let chunk = round_chunk(ds, plan, t, engine)?;
    let start = Instant::now();
    let RoundSummary { round, n_new_categories, objectives, .. } = engine.train_round(&chunk)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let m = evaluate_round(engine, ds, plan, t, ks)?;
    Ok(RoundRecord {
        round,
        r: m.r,
        map: m.map,
        p_at_k: m.p_at_k,
        n_queries: m.n_queries,
        n_database: m.n_database,
        wall_ms,
        eval_ms: start.elapsed().as_secs_f64() * 1e3,
        n_new_categories,
        objectives,
    })
}

/// Runs every remaining round of `plan`, calling `after` once per round.
pub fn run_plan(
    engine: &mut Engine,
    ds: &Dataset,
    plan: &ScenarioPlan,
    ks: &[usize],
    mut after: impl FnMut(&Engine, &RoundRecord) -> Result<()>,
) -> Result<Vec<RoundRecord>> {
    plan.check_partition(ds.len())?;
    let mut out = Vec::new();
    for t in engine.round() as usize..plan.rounds.len() {
        let rec = run_round(engine, ds, plan, t, ks)?;
        after(engine, &rec)?;
        out.push(rec);
    }
    Ok(out)
}
