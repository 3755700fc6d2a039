//! Round-by-round training and the persisted engine state.
//!
//! A round runs, in order: kernel-map fit (first round only), kernel
//! application, new-category code learning (only when the chunk introduces
//! categories), instance code generation, statistics update, projection and
//! auxiliary solves, and the database append. Raw features of earlier rounds
//! are never needed again.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{validate_chunk, CategoryRegistry, CodeMatrix, FeatureChunk, FeatureMatrix, LabelMatrix};
use crate::error::{Error, Result};
use crate::hash_fn::{solve_projection, HashFunctionState, ModalityStatistics};
use crate::high_level::{HighLevelState, LearnOptions, DEFAULT_ITERATIONS, DEFAULT_RIDGE};
use crate::io;
use crate::kernel::{KernelMap, KernelMapMeta};
use crate::semantic::{embed_categories, SemanticProvider, SupervisionSpec};
use crate::weights::{compute_weights, encode_queries, solve_auxiliary, QueryBatch, WeightVectors};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ANCHORS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub bits: usize,
    pub theta: f64,
    pub delta: f64,
    pub ridge: f64,
    pub iterations: usize,
    /// Relative objective change below which code learning stops early.
    pub tolerance: Option<f64>,
    pub anchor_count: usize,
    /// Kernel width; estimated from the first round when unset.
    pub sigma: Option<f64>,
    /// One-based modality ids to lift through the RBF anchor map.
    pub kernelized_modalities: Vec<usize>,
    pub supervision: SupervisionSpec,
    pub seed: u64,
    /// `false` fuses modalities with unit weights.
    pub fine_grained: bool,
    /// Added to every fusion weight.
    pub weight_floor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            bits: 32,
            theta: 1.0,
            delta: 1.0,
            ridge: DEFAULT_RIDGE,
            iterations: DEFAULT_ITERATIONS,
            tolerance: None,
            anchor_count: DEFAULT_ANCHORS,
            sigma: None,
            kernelized_modalities: vec![1],
            supervision: SupervisionSpec::default(),
            seed: 0,
            fine_grained: true,
            weight_floor: 0.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(8..=1024).contains(&self.bits) {
            return bad(format!("code length {} outside 8..=1024", self.bits));
        }
        for (name, v) in [("theta", self.theta), ("delta", self.delta), ("ridge", self.ridge), ("weight_floor", self.weight_floor)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a non-negative finite number"));
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.anchor_count == 0 {
            return bad("anchor count must be at least 1".into());
        }
        if self.kernelized_modalities.contains(&0) {
            return bad("modality ids are one-based".into());
        }
        Ok(())
    }
}

/// Everything needed to continue training or encode queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub config: EngineConfig,
    pub kernel_maps: Vec<KernelMap>,
    pub high_level: HighLevelState,
    /// Empty until the first round fixes the modality dimensions.
    pub hash_fn: Option<HashFunctionState>,
    pub database_codes: CodeMatrix,
    pub database_labels: LabelMatrix,
    pub round: u32,
    pub format_version: u32,
}

impl EngineState {
    pub fn registry(&self) -> &CategoryRegistry {
        &self.high_level.registry
    }

    pub fn modalities(&self) -> usize {
        self.hash_fn.as_ref().map_or(0, |h| h.modalities())
    }

    fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::State(m));
        let hl = &self.high_level;
        if hl.codes.bits() != self.config.bits || hl.w_c.nrows() != self.config.bits {
            return fail("high-level codes do not match the configured code length".into());
        }
        if hl.codes.len() != hl.semantics.ncols() || hl.codes.len() != hl.registry.len() {
            return fail("high-level codes, semantics and registry sizes differ".into());
        }
        if hl.w_c.ncols() != hl.semantics.nrows() {
            return fail("W_c does not match the embedding dimension".into());
        }
        if self.database_codes.len() != self.database_labels.len() {
            return fail("database codes and labels have different lengths".into());
        }
        if self.database_codes.bits() != self.config.bits {
            return fail("database codes do not match the configured code length".into());
        }
        if self.database_labels.categories() > hl.registry.len() {
            return fail("database labels have more rows than the registry".into());
        }
        if let Some(h) = &self.hash_fn {
            let m = h.stats.len();
            if h.projections.len() != m || h.auxiliaries.len() != m {
                return fail("per-modality state lists have different lengths".into());
            }
            for ((w, u), s) in h.projections.iter().zip(&h.auxiliaries).zip(&h.stats) {
                let (r, d) = (self.config.bits, s.dim());
                if w.shape() != (r, d) || u.shape() != (d, r) || s.d1.shape() != (r, d) || s.d3.shape() != (d, r) {
                    return fail("per-modality matrix shapes are inconsistent".into());
                }
            }
        }
        if self.round > 0 && self.hash_fn.is_none() {
            return fail("trained state is missing hash functions".into());
        }
        Ok(())
    }
}

/// What a completed round did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub n_instances: usize,
    pub n_new_categories: usize,
    /// Code-learning objective after each iteration (empty when skipped).
    pub objectives: Vec<f64>,
}

/// A trainable engine: state plus the (unserialized) supervision provider.
pub struct Engine {
    state: EngineState,
    provider: Box<dyn SemanticProvider>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("state", &self.state).finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let provider = config.supervision.build(config.bits)?;
        let high_level = HighLevelState::new(config.bits, provider.dim(), config.ridge);
        let bits = config.bits;
        Ok(Self {
            state: EngineState {
                config,
                kernel_maps: Vec::new(),
                high_level,
                hash_fn: None,
                database_codes: CodeMatrix::empty(bits),
                database_labels: LabelMatrix::zeros(0, 0),
                round: 0,
                format_version: FORMAT_VERSION,
            },
            provider,
        })
    }

    pub fn from_state(state: EngineState) -> Result<Self> {
        state.config.validate()?;
        state.check_invariants()?;
        let provider = state.config.supervision.build(state.config.bits)?;
        if provider.dim() != state.high_level.dim() {
            return Err(Error::State(format!(
                "supervision provider has dimension {}, state expects {}",
                provider.dim(),
                state.high_level.dim()
            )));
        }
        Ok(Self { state, provider })
    }

    /// Uses a caller-supplied supervision provider instead of the one named
    /// in the config. Such an engine cannot be rebuilt from a saved state
    /// unless the config names an equivalent provider.
    pub fn with_provider(config: EngineConfig, provider: Box<dyn SemanticProvider>) -> Result<Self> {
        config.validate()?;
        let mut engine = Self::new(EngineConfig { supervision: SupervisionSpec::Hadamard { dim: None }, ..config.clone() })?;
        engine.state.config = config;
        engine.state.high_level = HighLevelState::new(engine.state.config.bits, provider.dim(), engine.state.config.ridge);
        engine.provider = provider;
        Ok(engine)
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn into_state(self) -> EngineState {
        self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.state.config
    }

    pub fn round(&self) -> u32 {
        self.state.round
    }

    /// Applies the fitted kernel maps to raw per-modality features.
    pub fn transform(&self, raw: &[FeatureMatrix]) -> Result<Vec<FeatureMatrix>> {
        transform_with(&self.state.kernel_maps, raw)
    }

    /// Trains one round. On error the state is left exactly as it was.
    pub fn train_round(&mut self, chunk: &FeatureChunk) -> Result<RoundSummary> {
        let st = &self.state;
        let cfg = &st.config;
        let round = st.round + 1;
        if chunk.round != round {
            return Err(Error::InvalidArgument(format!(
                "chunk is for round {}, engine expects round {round}",
                chunk.round
            )));
        }
        let mut report = validate_chunk(chunk, st.registry());
        if chunk.is_empty() {
            report.push("chunk has no instances".into());
        }
        if let Some(h) = &st.hash_fn {
            if chunk.modalities.len() != h.modalities() {
                report.push(format!(
                    "chunk has {} modalities, engine was trained with {}",
                    chunk.modalities.len(),
                    h.modalities()
                ));
            }
        }
        for &m in &cfg.kernelized_modalities {
            if m > chunk.modalities.len() {
                report.push(format!("kernelized modality {m} does not exist"));
            }
        }
        if !report.is_empty() {
            return Err(Error::InvalidChunk(report));
        }

        // (1) kernel maps are fitted once, on the first round.
        let kernel_maps = if round == 1 {
            let mut ids = cfg.kernelized_modalities.clone();
            ids.sort_unstable();
            ids.dedup();
            ids.iter()
                .map(|&m| {
                    KernelMap::fit(
                        &chunk.modalities[m - 1],
                        cfg.anchor_count,
                        cfg.sigma,
                        cfg.seed.wrapping_add(m as u64),
                        m - 1,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            st.kernel_maps.clone()
        };
        // (2)
        let features = transform_with(&kernel_maps, &chunk.modalities)?;

        // (3) new categories only.
        let mut high_level = st.high_level.clone();
        let mut objectives = Vec::new();
        if !chunk.new_categories.is_empty() {
            let semantics = embed_categories(self.provider.as_ref(), &chunk.new_categories, high_level.registry.len())?;
            let opts = LearnOptions {
                iterations: cfg.iterations,
                seed: cfg.seed ^ u64::from(round).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                tolerance: cfg.tolerance,
            };
            objectives = high_level.learn_new_categories(&chunk.new_categories, &semantics, round, &opts)?;
        }

        // (4)
        let codes = high_level.instance_codes(&chunk.labels)?;

        // (5)-(7)
        let mut hash_fn = match &st.hash_fn {
            Some(h) => h.clone(),
            None => HashFunctionState::new(
                cfg.bits,
                &features.iter().map(FeatureMatrix::dim).collect::<Vec<_>>(),
                cfg.theta,
                cfg.delta,
            ),
        };
        for (m, x) in features.iter().enumerate() {
            if x.dim() != hash_fn.stats[m].dim() {
                return Err(Error::Dimension(format!(
                    "modality {} has {} features, engine expects {}",
                    m + 1,
                    x.dim(),
                    hash_fn.stats[m].dim()
                )));
            }
            hash_fn.stats[m].update(x.values(), &codes)?;
            let w = solve_projection(&hash_fn.stats[m], hash_fn.theta)?;
            let u = solve_auxiliary(&hash_fn.stats[m], &w, hash_fn.delta)?;
            hash_fn.projections[m] = w;
            hash_fn.auxiliaries[m] = u;
        }

        // (8)-(9): nothing below can fail.
        let database_codes = st.database_codes.hconcat(&codes)?;
        let database_labels = st.database_labels.hconcat(&chunk.labels);
        let st = &mut self.state;
        st.kernel_maps = kernel_maps;
        st.high_level = high_level;
        st.hash_fn = Some(hash_fn);
        st.database_codes = database_codes;
        st.database_labels = database_labels;
        st.round = round;
        Ok(RoundSummary {
            round,
            n_instances: chunk.len(),
            n_new_categories: chunk.new_categories.len(),
            objectives,
        })
    }

    /// Fusion weights for a batch of raw queries (`None` when fine-grained
    /// weighting is disabled).
    pub fn query_weights(&self, raw: &[FeatureMatrix]) -> Result<(QueryBatch, WeightVectors)> {
        let h = self
            .state
            .hash_fn
            .as_ref()
            .ok_or_else(|| Error::State("engine has not been trained".into()))?;
        if raw.len() != h.modalities() {
            return Err(Error::Dimension(format!(
                "{} query modalities, engine was trained with {}",
                raw.len(),
                h.modalities()
            )));
        }
        let batch = QueryBatch::new(self.transform(raw)?)?;
        let weights = if self.state.config.fine_grained {
            compute_weights(&h.auxiliaries, &batch)?
        } else {
            WeightVectors::uniform(h.modalities(), batch.len())
        };
        Ok((batch, weights.with_floor(self.state.config.weight_floor)))
    }

    /// Encodes a batch of raw multi-modal queries.
    pub fn encode(&self, raw: &[FeatureMatrix]) -> Result<CodeMatrix> {
        let (batch, weights) = self.query_weights(raw)?;
        let h = self.state.hash_fn.as_ref().expect("checked by query_weights");
        encode_queries(&h.projections, &weights, &batch)
    }
}

fn transform_with(maps: &[KernelMap], raw: &[FeatureMatrix]) -> Result<Vec<FeatureMatrix>> {
    raw.iter()
        .enumerate()
        .map(|(m, x)| match maps.iter().find(|k| k.source_modality == m) {
            Some(k) => k.apply(x),
            None => Ok(x.clone()),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobEntry {
    file: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    round: u32,
    config: EngineConfig,
    registry: CategoryRegistry,
    kernel_maps: Vec<KernelMapMeta>,
    hash_fn: Option<HashFnRecord>,
    blobs: BTreeMap<String, BlobEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HashFnRecord {
    theta: f64,
    delta: f64,
    rounds_absorbed: Vec<u32>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct BlobWriter<'a> {
    dir: &'a Path,
    blobs: BTreeMap<String, BlobEntry>,
}

impl BlobWriter<'_> {
    fn put(&mut self, name: &str, ext: &str, bytes: Vec<u8>) -> Result<()> {
        let file = format!("{name}.{ext}");
        fs::write(self.dir.join(&file), &bytes)?;
        self.blobs.insert(
            name.to_string(),
            BlobEntry {
                file,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    fn fmat(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.put(name, "fmat", io::encode_fmat(m)?)
    }
}

/// Writes the state into `dir` (replacing any previous contents) as
/// `manifest.json` plus checksummed `.fmat` / `.imat` / `.lmat` blobs.
pub fn save_state(state: &EngineState, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad state path {}", dir.display())))?;
    let staging = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;

    let mut w = BlobWriter { dir: &staging, blobs: BTreeMap::new() };
    for k in &state.kernel_maps {
        w.fmat(&format!("kernel_anchors_{}", k.source_modality + 1), k.anchors())?;
    }
    let hl = &state.high_level;
    w.put("high_level_codes", "imat", io::encode_imat(&hl.codes)?)?;
    w.fmat("high_level_semantics", &hl.semantics)?;
    w.fmat("high_level_wc", &hl.w_c)?;
    let mut hash_record = None;
    if let Some(h) = &state.hash_fn {
        for m in 0..h.modalities() {
            let id = m + 1;
            w.fmat(&format!("projection_{id}"), &h.projections[m])?;
            w.fmat(&format!("auxiliary_{id}"), &h.auxiliaries[m])?;
            w.fmat(&format!("d1_{id}"), &h.stats[m].d1)?;
            w.fmat(&format!("d2_{id}"), &h.stats[m].d2)?;
            w.fmat(&format!("d3_{id}"), &h.stats[m].d3)?;
        }
        hash_record = Some(HashFnRecord {
            theta: h.theta,
            delta: h.delta,
            rounds_absorbed: h.stats.iter().map(|s| s.rounds_absorbed).collect(),
        });
    }
    w.put("database_codes", "imat", io::encode_imat(&state.database_codes)?)?;
    w.put("database_labels", "lmat", io::encode_lmat(&state.database_labels)?)?;

    let manifest = Manifest {
        format_version: state.format_version,
        round: state.round,
        config: state.config.clone(),
        registry: hl.registry.clone(),
        kernel_maps: state.kernel_maps.iter().map(KernelMap::meta).collect(),
        hash_fn: hash_record,
        blobs: w.blobs,
    };
    fs::write(staging.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

struct BlobReader<'a> {
    dir: PathBuf,
    manifest: &'a Manifest,
}

impl BlobReader<'_> {
    fn bytes(&self, name: &str) -> Result<(Vec<u8>, PathBuf)> {
        let entry = self
            .manifest
            .blobs
            .get(name)
            .ok_or_else(|| Error::State(format!("manifest has no blob {name}")))?;
        let path = self.dir.join(&entry.file);
        let bytes = io::read(&path)?;
        if bytes.len() as u64 != entry.bytes {
            return Err(Error::Checksum(format!(
                "{name}: {} bytes on disk, manifest records {}",
                bytes.len(),
                entry.bytes
            )));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Checksum(name.to_string()));
        }
        Ok((bytes, path))
    }

    fn fmat(&self, name: &str) -> Result<DMatrix<f64>> {
        let (b, p) = self.bytes(name)?;
        io::decode_fmat(&b, &p)
    }
}

pub fn load_state(dir: impl AsRef<Path>) -> Result<EngineState> {
    let dir = dir.as_ref();
    let manifest: Manifest = {
        let raw: serde_json::Value = serde_json::from_slice(&io::read(dir.join("manifest.json"))?)?;
        let version = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::State("manifest lacks format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion(version as u32));
        }
        serde_json::from_value(raw)?
    };
    let r = BlobReader { dir: dir.to_path_buf(), manifest: &manifest };

    let kernel_maps = manifest
        .kernel_maps
        .iter()
        .map(|meta| KernelMap::from_parts(r.fmat(&format!("kernel_anchors_{}", meta.source_modality + 1))?, meta))
        .collect::<Result<Vec<_>>>()?;

    let (b, p) = r.bytes("high_level_codes")?;
    let codes = io::decode_imat(&b, &p)?;
    let high_level = HighLevelState {
        codes,
        semantics: r.fmat("high_level_semantics")?,
        w_c: r.fmat("high_level_wc")?,
        registry: manifest.registry.clone(),
        ridge: manifest.config.ridge,
    };

    let hash_fn = match &manifest.hash_fn {
        None => None,
        Some(rec) => {
            let mut h = HashFunctionState {
                projections: Vec::new(),
                auxiliaries: Vec::new(),
                stats: Vec::new(),
                theta: rec.theta,
                delta: rec.delta,
            };
            for (m, &rounds) in rec.rounds_absorbed.iter().enumerate() {
                let id = m + 1;
                h.projections.push(r.fmat(&format!("projection_{id}"))?);
                h.auxiliaries.push(r.fmat(&format!("auxiliary_{id}"))?);
                let stats = ModalityStatistics {
                    d1: r.fmat(&format!("d1_{id}"))?,
                    d2: r.fmat(&format!("d2_{id}"))?,
                    d3: r.fmat(&format!("d3_{id}"))?,
                    rounds_absorbed: rounds,
                };
                if stats.d2.nrows() != stats.d2.ncols() || stats.d3 != stats.d1.transpose() {
                    return Err(Error::State(format!("statistics of modality {id} are inconsistent")));
                }
                h.stats.push(stats);
            }
            Some(h)
        }
    };

    let (b, p) = r.bytes("database_codes")?;
    let database_codes = io::decode_imat(&b, &p)?;
    let (b, p) = r.bytes("database_labels")?;
    let database_labels = io::decode_lmat(&b, &p)?;

    let state = EngineState {
        config: manifest.config.clone(),
        kernel_maps,
        high_level,
        hash_fn,
        database_codes,
        database_labels,
        round: manifest.round,
        format_version: manifest.format_version,
    };
    state.config.validate()?;
    state.check_invariants()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{generate_synthetic, LabelCardinality, SyntheticConfig};
    use crate::io::Dataset;

    fn small_config() -> EngineConfig {
        EngineConfig {
            bits: 16,
            anchor_count: 20,
            supervision: SupervisionSpec::Pseudo { seed: 1, dim: 24 },
            ..Default::default()
        }
    }

    fn dataset() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n_instances: 200,
            n_categories: 6,
            dims: vec![10, 8],
            cardinality: LabelCardinality::Uniform { min: 1, max: 2 },
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn chunk(ds: &Dataset, engine: &Engine, cols: &[usize]) -> FeatureChunk {
        FeatureChunk::from_named_labels(
            ds.modalities.iter().map(|m| m.select_columns(cols)).collect(),
            &ds.labels.select_columns(cols),
            &ds.categories,
            engine.state().registry(),
            engine.round() + 1,
        )
        .unwrap()
    }

    #[test]
    fn rounds_accumulate_database() {
        let ds = dataset();
        let mut engine = Engine::new(small_config()).unwrap();
        let c1 = chunk(&ds, &engine, &(0..50).collect::<Vec<_>>());
        let s1 = engine.train_round(&c1).unwrap();
        assert_eq!(s1.objectives.len(), 5);
        let codes_after_1 = engine.state().high_level.codes.clone();
        let c2 = chunk(&ds, &engine, &(50..100).collect::<Vec<_>>());
        let s2 = engine.train_round(&c2).unwrap();
        assert_eq!(s2.n_new_categories, 0);
        assert!(s2.objectives.is_empty());
        assert_eq!(engine.state().high_level.codes, codes_after_1);
        assert_eq!(engine.state().database_codes.len(), 100);
        assert_eq!(engine.state().hash_fn.as_ref().unwrap().stats[0].dim(), 20);
        let q = engine.encode(&ds.modalities.iter().map(|m| m.select_columns(&[150, 151])).collect::<Vec<_>>()).unwrap();
        assert_eq!((q.bits(), q.len()), (16, 2));
    }

    #[test]
    fn failing_round_is_atomic() {
        let ds = dataset();
        let mut engine = Engine::new(small_config()).unwrap();
        let c1 = chunk(&ds, &engine, &(0..50).collect::<Vec<_>>());
        engine.train_round(&c1).unwrap();
        let before = engine.state().clone();

        let mut bad = chunk(&ds, &engine, &(50..60).collect::<Vec<_>>());
        bad.modalities[1] = bad.modalities[1].select_columns(&[0, 1, 2]);
        assert!(matches!(engine.train_round(&bad), Err(Error::InvalidChunk(_))));
        assert_eq!(engine.state(), &before);

        let mut dup = chunk(&ds, &engine, &(50..60).collect::<Vec<_>>());
        dup.new_categories.push(ds.categories[0].clone());
        dup.labels = dup.labels.pad_rows(dup.labels.categories() + 1);
        assert!(engine.train_round(&dup).is_err());
        assert_eq!(engine.state(), &before);

        let mut wrong_round = chunk(&ds, &engine, &(50..60).collect::<Vec<_>>());
        wrong_round.round = 5;
        assert!(engine.train_round(&wrong_round).is_err());
        assert_eq!(engine.state(), &before);
    }

    #[test]
    fn save_load_round_trip_and_tamper_detection() {
        let ds = dataset();
        let mut engine = Engine::new(small_config()).unwrap();
        let c1 = chunk(&ds, &engine, &(0..60).collect::<Vec<_>>());
        engine.train_round(&c1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state");
        save_state(engine.state(), &path).unwrap();
        let loaded = load_state(&path).unwrap();
        assert_eq!(&loaded, engine.state());

        // Saving the loaded state reproduces every blob byte for byte.
        let again = dir.path().join("again");
        save_state(&loaded, &again).unwrap();
        for entry in fs::read_dir(&path).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(fs::read(path.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap());
        }

        let blob = path.join("d2_1.fmat");
        let mut bytes = fs::read(&blob).unwrap();
        bytes.push(0);
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_state(&path), Err(Error::Checksum(_))));
        bytes.pop();
        bytes[20] ^= 1;
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_state(&path), Err(Error::Checksum(_))));

        let manifest = again.join("manifest.json");
        let text = fs::read_to_string(&manifest).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&manifest, text).unwrap();
        assert!(matches!(load_state(&again), Err(Error::UnsupportedVersion(99))));
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig { bits: 4, ..Default::default() }.validate().is_err());
        assert!(EngineConfig { theta: -1.0, ..Default::default() }.validate().is_err());
        assert!(EngineConfig { kernelized_modalities: vec![0], ..Default::default() }.validate().is_err());
        assert!(EngineConfig::default().validate().is_ok());
        let json = serde_json::to_string(&EngineConfig::default()).unwrap();
        let back: EngineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, EngineConfig::default());
    }
}
