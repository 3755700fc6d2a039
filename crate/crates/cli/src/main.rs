use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hcfw::eval::{evaluate, Metrics};
use hcfw::io::{self, Dataset};
use hcfw::pipeline::{align_labels, run_plan, select_modalities, RoundRecord, DEFAULT_KS};
use hcfw::scenarios::{
    generate_synthetic, split_category_incremental, split_iid, LabelCardinality, ScenarioKind, ScenarioPlan,
    SyntheticConfig,
};
use hcfw::semantic::SupervisionSpec;
use hcfw::trainer::{load_state, save_state};
use hcfw::{CodeMatrix, Engine, EngineConfig, Error, LabelMatrix};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "hcfw", version, about = "Online multi-modal hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-modal dataset directory.
    Generate(GenerateArgs),
    /// Write a scenario plan for a dataset.
    Split(SplitArgs),
    /// Train round by round over a plan, saving state and metrics per round.
    Train(TrainArgs),
    /// Encode dataset instances with a saved state.
    Encode(EncodeArgs),
    /// Compute MAP and precision@k for query codes against a database.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    categories: usize,
    /// Per-modality feature dimensions.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 1)]
    min_labels: usize,
    #[arg(long, default_value_t = 3)]
    max_labels: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Noise multiplier applied to one random modality per instance.
    #[arg(long, default_value_t = 1.0)]
    noise_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// iid, overlap or non_overlap.
    #[arg(long, default_value = "iid")]
    kind: ScenarioKind,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    /// IID chunk sizes; defaults to equal chunks covering the non-test data.
    #[arg(long, value_delimiter = ',')]
    chunk_sizes: Option<Vec<usize>>,
    /// IID test set size; defaults to 10% of the dataset.
    #[arg(long)]
    test_size: Option<usize>,
    /// Held-out fraction per round for category-incremental plans.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EngineArgs {
    /// JSON engine config; individual flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// One-based modality ids to kernelize; pass an empty string for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    kernel_modalities: Option<Vec<String>>,
    /// file:<path>, pseudo:<seed>[:<dim>] or hadamard[:<dim>].
    #[arg(long)]
    supervision: Option<SupervisionSpec>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_fine_grained: bool,
    #[arg(long)]
    weight_floor: Option<f64>,
}

impl EngineArgs {
    fn resolve(&self) -> hcfw::Result<EngineConfig> {
        let mut c: EngineConfig = match &self.config {
            Some(p) => serde_json::from_slice(&io::read(p)?)?,
            None => EngineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(bits => bits, theta => theta, delta => delta, iters => iterations, anchors => anchor_count,
             supervision => supervision, seed => seed, weight_floor => weight_floor);
        if let Some(s) = self.sigma {
            c.sigma = Some(s);
        }
        if let Some(list) = &self.kernel_modalities {
            c.kernelized_modalities = list
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad modality id {s:?}")))
                })
                .collect::<hcfw::Result<_>>()?;
        }
        if self.no_fine_grained {
            c.fine_grained = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// State directory, rewritten after every round.
    #[arg(long)]
    state: PathBuf,
    /// JSON-lines report; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Continue from the state in --state instead of starting over.
    #[arg(long)]
    resume: bool,
    /// Precision cutoffs reported per round.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Output code file (.imat).
    #[arg(long)]
    out: PathBuf,
    /// Encode the test instances of this plan instead of the whole dataset.
    #[arg(long, conflicts_with = "indices")]
    plan: Option<PathBuf>,
    /// Encode only these instance indices.
    #[arg(long, value_delimiter = ',')]
    indices: Option<Vec<usize>>,
    /// Also write the encoded instances' labels, aligned to the state's
    /// category registry (.lmat).
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    /// Take database codes and labels from a saved state.
    #[arg(long, conflicts_with_all = ["database", "database_labels"])]
    state: Option<PathBuf>,
    #[arg(long, requires = "database_labels")]
    database: Option<PathBuf>,
    #[arg(long, requires = "database")]
    database_labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    /// Metrics JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.render().to_string());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message.trim_end() }));
}

fn generate(a: GenerateArgs) -> hcfw::Result<()> {
    let cardinality = if a.min_labels == a.max_labels {
        LabelCardinality::Fixed { count: a.min_labels }
    } else {
        LabelCardinality::Uniform { min: a.min_labels, max: a.max_labels }
    };
    let cfg = SyntheticConfig {
        n_instances: a.n,
        n_categories: a.categories,
        dims: a.dims,
        latent_dim: a.latent_dim,
        cardinality,
        noise: a.noise,
        noise_ratio: a.noise_ratio,
        seed: a.seed,
    };
    generate_synthetic(&cfg)?.save(&a.out)?;
    fs::write(a.out.join("synthetic.json"), serde_json::to_vec_pretty(&cfg)?)?;
    Ok(())
}

fn split(a: SplitArgs) -> hcfw::Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let plan = match a.kind {
        ScenarioKind::Iid => {
            if a.rounds == 0 && a.chunk_sizes.is_none() {
                return Err(Error::InvalidArgument("at least one round is required".into()));
            }
            let test_size = a.test_size.unwrap_or(ds.len() / 10);
            let sizes = match a.chunk_sizes {
                Some(s) => s,
                None => vec![ds.len().saturating_sub(test_size) / a.rounds; a.rounds],
            };
            split_iid(ds.len(), ds.categories.len(), &sizes, test_size, a.seed)?
        }
        kind => split_category_incremental(&ds.labels, a.rounds, kind == ScenarioKind::Overlap, a.test_fraction, a.seed)?,
    };
    plan.save(&a.out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of every file in the dataset directory, by name then contents.
fn dataset_fingerprint(dir: &Path) -> hcfw::Result<String> {
    let file_err = |source| Error::File { path: dir.to_path_buf(), source };
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(file_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(file_err)?;
    names.retain(|p| p.is_file());
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let bytes = io::read(&p)?;
        h.update(p.file_name().unwrap_or_default().to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Serialize)]
struct RoundLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    record: &'a RoundRecord,
    state: &'a Path,
}

fn train(a: TrainArgs) -> hcfw::Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let plan_bytes = io::read(&a.plan)?;
    let plan: ScenarioPlan = serde_json::from_slice(&plan_bytes)?;
    plan.check_partition(ds.len())?;
    let mut engine = if a.resume {
        let state = load_state(&a.state)?;
        if a.engine.config.is_some() || a.engine.bits.is_some() {
            return Err(Error::InvalidArgument("--resume takes its config from the saved state".into()));
        }
        Engine::from_state(state)?
    } else {
        Engine::new(a.engine.resolve()?)?
    };
    let config = engine.config().clone();
    let header = json!({
        "type": "header",
        "config": &config,
        "start_round": engine.round() + 1,
        "fingerprints": {
            "dataset": dataset_fingerprint(&a.dataset)?,
            "plan": sha256_hex(&plan_bytes),
            "config": sha256_hex(&serde_json::to_vec(&config)?),
            "seed": sha256_hex(config.seed.to_string().as_bytes()),
        },
        "artifacts": { "dataset": &a.dataset, "plan": &a.plan, "state": &a.state, "report": &a.report },
    });

    let mut out: Box<dyn Write> = match &a.report {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "{header}")?;
    out.flush()?;
    run_plan(&mut engine, &ds, &plan, &a.k, |engine, record| {
        save_state(engine.state(), &a.state)?;
        let line = RoundLine { kind: "round", record, state: &a.state };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
        out.flush()?;
        Ok(())
    })?;
    Ok(())
}

fn encode(a: EncodeArgs) -> hcfw::Result<()> {
    let engine = Engine::from_state(load_state(&a.state)?)?;
    let ds = Dataset::load(&a.dataset)?;
    let cols: Vec<usize> = match (&a.plan, &a.indices) {
        (Some(p), _) => ScenarioPlan::load(p)?.rounds.iter().flat_map(|r| r.test.iter().copied()).collect(),
        (None, Some(i)) => i.clone(),
        (None, None) => (0..ds.len()).collect(),
    };
    if let Some(&bad) = cols.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::InvalidArgument(format!("index {bad} outside dataset of {}", ds.len())));
    }
    if cols.is_empty() {
        return Err(Error::InvalidArgument("nothing to encode".into()));
    }
    let codes = engine.encode(&select_modalities(&ds, &cols))?;
    io::save_code_matrix(&a.out, &codes)?;
    if let Some(p) = &a.labels_out {
        let labels = align_labels(&ds.labels.select_columns(&cols), &ds.categories, engine.state().registry())?;
        io::save_label_matrix(p, &labels)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> hcfw::Result<()> {
    let queries = io::load_code_matrix(&a.queries)?;
    let query_labels = io::load_label_matrix(&a.query_labels)?;
    let (database, db_labels, round): (CodeMatrix, LabelMatrix, u32) = match (&a.state, &a.database, &a.database_labels) {
        (Some(s), _, _) => {
            let st = load_state(s)?;
            (st.database_codes, st.database_labels, st.round)
        }
        (None, Some(d), Some(l)) => (io::load_code_matrix(d)?, io::load_label_matrix(l)?, 0),
        _ => return Err(Error::InvalidArgument("give --state or both --database and --database-labels".into())),
    };
    let rows = query_labels.categories().max(db_labels.categories());
    let metrics: Metrics = evaluate(&queries, &query_labels.pad_rows(rows), &database, &db_labels.pad_rows(rows), &a.k, round)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    match &a.out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
