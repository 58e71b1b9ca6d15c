//! Pipeline CLI: dataset preparation, recommender training, SAE
//! training, analysis, fidelity measurement, β-sweeps, and neuron-level
//! interventions. Every stage writes versioned JSON/CSV artifacts plus a
//! run manifest, and refuses inputs whose fingerprints do not chain.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use recsae_core::analysis::{
    label_activation_profile, neuron_label_profile, neuron_reports, temporal_profile,
};
use recsae_core::artifact::{
    self, fingerprint_file, load_neuron_labels, neuron_export, save_json, DatasetArtifact,
    GroundTruthArtifact, InterventionDoc, InterventionRequest, ModelArtifact, RunManifest,
    SaeArtifact,
};
use recsae_core::data::{
    build_dataset, load_lastfm, load_metadata, load_movielens, DatasetConfig, LastFmColumns,
    LoadReport, Split,
};
use recsae_core::fidelity::{beta_sweep, fidelity};
use recsae_core::intervene::{
    apply_intervention, audience_users, promotion_sweep, rank_of_item, suppress_for_cohort,
};
use recsae_core::rec::{train_recommender, RecommenderKind, TrainConfig};
use recsae_core::sae::{train_sae, ActivationStat, SaeTrainConfig};
use recsae_core::{Error, Real};

#[derive(Parser)]
#[command(
    name = "recsae",
    version,
    about = "Two-tower recommenders, sparse autoencoders over their embeddings, and neuron-level analysis"
)]
struct Cli {
    /// JSON file supplying defaults; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed recorded in every output artifact.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Optional defaults loadable via `--config`; any explicit flag wins.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    sae: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: Option<DataFormat>,
    metadata: Option<PathBuf>,
    kind: Option<KindArg>,
    train: Option<TrainConfig<Real>>,
    sae_train: Option<SaeTrainConfig<Real>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DataFormat {
    Movielens,
    Lastfm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Mf,
    Ncf,
}

impl From<KindArg> for RecommenderKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mf => RecommenderKind::Mf,
            KindArg::Ncf => RecommenderKind::Ncf,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw interactions into a dataset artifact with splits.
    Prepare(PrepareArgs),
    /// Generate a planted-concept synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Train a recommender on a dataset artifact.
    TrainRec(TrainRecArgs),
    /// Fit a sparse autoencoder over a frozen recommender.
    TrainSae(TrainSaeArgs),
    /// Export top-activating items and neuron metrics.
    Analyze(AnalyzeArgs),
    /// Compare original and reconstructed recommendation lists.
    Fidelity(FidelityArgs),
    /// Train SAEs over a grid of β values and tabulate the trade-off.
    Sweep(SweepArgs),
    /// Run a neuron-level intervention described by a JSON spec.
    Intervene(InterveneArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw interaction file.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    /// Metadata sidecar TSV: `item_id  title  label1|label2  year`.
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    min_user_positives: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// 0-based column indices for Last.FM events.
    #[arg(long)]
    lastfm_user_col: Option<usize>,
    #[arg(long)]
    lastfm_artist_col: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 120)]
    items: usize,
    #[arg(long, default_value_t = 4)]
    concepts: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 15)]
    positives_min: usize,
    #[arg(long, default_value_t = 25)]
    positives_max: usize,
    #[arg(long)]
    min_user_positives: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainRecArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<Real>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Hidden widths for the NCF scorer.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

#[derive(Args)]
struct TrainSaeArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Bottleneck size.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<Real>,
    #[arg(long)]
    beta: Option<Real>,
    #[arg(long)]
    lambda1: Option<Real>,
    #[arg(long)]
    lambda2: Option<Real>,
    #[arg(long)]
    rho: Option<Real>,
    /// |S|: prediction pairs per step.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<Real>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Four-level nested dictionary.
    #[arg(long)]
    matryoshka: bool,
    /// Train one SAE per tower instead of a shared one.
    #[arg(long)]
    per_tower: bool,
    /// Use the hard 1[z>0] activation statistic for the KL rate.
    #[arg(long)]
    indicator_stat: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    sae: Option<PathBuf>,
    /// Neuron label TSV (`neuron_index<TAB>label`); purity is skipped
    /// without it.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 50])]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    top_t: usize,
    #[arg(long, default_value_t = 50)]
    k_max: usize,
    /// Emit a per-neuron activation profile for these labels.
    #[arg(long)]
    profile_label: Vec<String>,
    /// Emit a per-label activation profile for these neurons.
    #[arg(long)]
    profile_neuron: Vec<usize>,
    /// Emit decade histograms for these neurons.
    #[arg(long)]
    temporal_neuron: Vec<usize>,
}

#[derive(Args)]
struct FidelityArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    sae: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    depth: usize,
    #[arg(long, default_value_t = 0.9)]
    persistence: f64,
    /// Evaluate a random user subsample of this size instead of everyone.
    #[arg(long)]
    sample: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 30)]
    depth: usize,
    #[arg(long, default_value_t = 0.9)]
    persistence: f64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr: Option<Real>,
    #[arg(long)]
    matryoshka: bool,
}

#[derive(Args)]
struct InterveneArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    sae: Option<PathBuf>,
    /// Intervention request document (schema `intervention/1`).
    #[arg(long)]
    spec: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Data(_) | Error::Dimension { .. } => 3,
        Error::Numeric(_) => 4,
    }
}

/// Tracks files created by the running command so a failure can clean
/// up partial output.
struct Run {
    command: String,
    started: Instant,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    created: Vec<PathBuf>,
}

impl Run {
    fn new(command: &str) -> Self {
        Run {
            command: command.to_owned(),
            started: Instant::now(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            created: Vec::new(),
        }
    }

    fn record_input(&mut self, path: &Path, fingerprint: &str) {
        self.inputs
            .insert(path.display().to_string(), fingerprint.to_owned());
    }

    fn save<A: Serialize>(&mut self, path: &Path, doc: &A) -> Result<String, Error> {
        let fp = save_json(path, doc)?;
        self.outputs.insert(path.display().to_string(), fp.clone());
        self.created.push(path.to_owned());
        Ok(fp)
    }

    fn save_csv(&mut self, path: &Path, header: &str, rows: &[String]) -> Result<(), Error> {
        artifact::write_csv(path, header, rows)?;
        let fp = fingerprint_file(path)?;
        self.outputs.insert(path.display().to_string(), fp);
        self.created.push(path.to_owned());
        Ok(())
    }

    fn finish(mut self, out_dir: &Path) -> Result<(), Error> {
        let manifest = RunManifest {
            schema: artifact::MANIFEST_SCHEMA.into(),
            command: self.command.clone(),
            seed: self.seed,
            config: std::mem::take(&mut self.config),
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            wall_time_ms: self.started.elapsed().as_millis() as u64,
        };
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        save_json(&path, &manifest)?;
        Ok(())
    }

    fn cleanup(&self) {
        for path in &self.created {
            let _ = std::fs::remove_file(path);
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let defaults: RunConfig = match &cli.config {
        Some(path) => {
            let (cfg, _) = artifact::load_json(path)?;
            cfg
        }
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(defaults.seed).unwrap_or(0);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| defaults.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let command_name = match &cli.command {
        Command::Prepare(_) => "prepare",
        Command::Synth(_) => "synth",
        Command::TrainRec(_) => "train-rec",
        Command::TrainSae(_) => "train-sae",
        Command::Analyze(_) => "analyze",
        Command::Fidelity(_) => "fidelity",
        Command::Sweep(_) => "sweep",
        Command::Intervene(_) => "intervene",
    };
    let mut run = Run::new(command_name);
    run.seed = Some(seed);

    let result = match cli.command {
        Command::Prepare(args) => cmd_prepare(&mut run, &out_dir, seed, &defaults, args),
        Command::Synth(args) => cmd_synth(&mut run, &out_dir, seed, args),
        Command::TrainRec(args) => cmd_train_rec(&mut run, &out_dir, seed, &defaults, args),
        Command::TrainSae(args) => cmd_train_sae(&mut run, &out_dir, seed, &defaults, args),
        Command::Analyze(args) => cmd_analyze(&mut run, &out_dir, &defaults, args),
        Command::Fidelity(args) => cmd_fidelity(&mut run, &out_dir, seed, &defaults, args),
        Command::Sweep(args) => cmd_sweep(&mut run, &out_dir, seed, &defaults, args),
        Command::Intervene(args) => cmd_intervene(&mut run, &out_dir, &defaults, args),
    };
    match result {
        Ok(()) => run.finish(&out_dir),
        Err(e) => {
            run.cleanup();
            Err(e)
        }
    }
}

fn require<V>(value: Option<V>, flag: &str) -> Result<V, Error> {
    value.ok_or_else(|| Error::Config(format!("missing required --{flag}")))
}

fn report_warnings(path: &Path, report: &LoadReport) {
    if report.lines == 0 {
        eprintln!("warning: {} is empty", path.display());
    }
    if report.malformed > 0 {
        let (line, reason) = report
            .first_malformed
            .clone()
            .unwrap_or((0, String::new()));
        eprintln!(
            "warning: {} malformed line(s) in {} (first at line {line}: {reason})",
            report.malformed,
            path.display()
        );
    }
}

fn dataset_summary(ds: &recsae_core::data::InteractionDataset) -> serde_json::Value {
    serde_json::json!({
        "users": ds.n_users,
        "items": ds.n_items,
        "positives": ds.positives.len(),
        "train": ds.split_len(Split::Train),
        "val": ds.split_len(Split::Val),
        "test": ds.split_len(Split::Test),
    })
}

fn cmd_prepare(
    run: &mut Run,
    out_dir: &Path,
    seed: u64,
    defaults: &RunConfig,
    args: PrepareArgs,
) -> Result<(), Error> {
    let input = require(args.input.or_else(|| defaults.dataset.clone()), "input")?;
    let format = require(args.format.or(defaults.format), "format")?;
    let (raw, report) = match format {
        DataFormat::Movielens => load_movielens(&input)?,
        DataFormat::Lastfm => {
            let columns = LastFmColumns {
                user: args.lastfm_user_col.unwrap_or(0),
                artist: args.lastfm_artist_col.unwrap_or(2),
            };
            load_lastfm(&input, &columns)?
        }
    };
    report_warnings(&input, &report);
    run.record_input(&input, &fingerprint_file(&input)?);

    let mut ds_config = DatasetConfig::default();
    if let Some(v) = args.min_user_positives {
        ds_config.min_user_positives = v;
    }
    if let Some(v) = args.val_fraction {
        ds_config.val_fraction = v;
    }
    let mut dataset = build_dataset(&raw, &ds_config, seed)?;

    let metadata_path = args.metadata.or_else(|| defaults.metadata.clone());
    if let Some(meta_path) = metadata_path {
        let (meta, meta_report) = load_metadata(&meta_path)?;
        report_warnings(&meta_path, &meta_report);
        run.record_input(&meta_path, &fingerprint_file(&meta_path)?);
        let matched = dataset.attach_metadata(&meta);
        eprintln!("metadata matched {matched}/{} items", dataset.n_items);
    }

    let summary = dataset_summary(&dataset);
    run.config = serde_json::json!({
        "format": format, "dataset_config": ds_config, "summary": summary,
    });
    run.save(&out_dir.join("dataset.json"), &DatasetArtifact::new(dataset))?;
    println!("{summary}");
    Ok(())
}

fn cmd_synth(run: &mut Run, out_dir: &Path, seed: u64, args: SynthArgs) -> Result<(), Error> {
    let synth_config = recsae_core::synth::SynthConfig {
        n_users: args.users,
        n_items: args.items,
        n_concepts: args.concepts,
        noise: args.noise,
        positives_per_user_min: args.positives_min,
        positives_per_user_max: args.positives_max,
        seed,
    };
    let mut ds_config = DatasetConfig::default();
    if let Some(v) = args.min_user_positives {
        ds_config.min_user_positives = v;
    }
    if let Some(v) = args.val_fraction {
        ds_config.val_fraction = v;
    }
    let (dataset, ground_truth) = recsae_core::synth::planted_dataset(&synth_config, &ds_config)?;
    let summary = dataset_summary(&dataset);
    run.config = serde_json::json!({
        "synth": synth_config, "dataset_config": ds_config, "summary": summary,
    });
    run.save(&out_dir.join("dataset.json"), &DatasetArtifact::new(dataset))?;
    run.save(
        &out_dir.join("ground_truth.json"),
        &GroundTruthArtifact::new(ground_truth),
    )?;
    println!("{summary}");
    Ok(())
}

fn cmd_train_rec(
    run: &mut Run,
    out_dir: &Path,
    seed: u64,
    defaults: &RunConfig,
    args: TrainRecArgs,
) -> Result<(), Error> {
    let dataset_path = require(args.dataset.or_else(|| defaults.dataset.clone()), "dataset")?;
    let (ds_doc, ds_fp) = DatasetArtifact::load(&dataset_path)?;
    run.record_input(&dataset_path, &ds_fp);
    let kind: RecommenderKind = require(args.kind.or(defaults.kind), "kind")?.into();

    let mut config = defaults
        .train
        .clone()
        .unwrap_or_else(|| TrainConfig::new(20, 0.05, seed));
    config.seed = seed;
    if let Some(v) = args.dim {
        config.embedding_dim = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.negatives {
        config.negatives_per_positive = v;
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    if let Some(v) = args.hidden {
        config.ncf_hidden = v;
    }

    let outcome = train_recommender(&ds_doc.dataset, &config, kind)?;
    run.config = serde_json::to_value(&config).unwrap_or_default();
    for entry in &outcome.log {
        match entry.val_mpr {
            Some(v) => println!(
                "epoch {}: bce {:.6} val_mpr {:.4}",
                entry.epoch, entry.train_bce, v
            ),
            None => println!("epoch {}: bce {:.6}", entry.epoch, entry.train_bce),
        }
    }
    run.save(
        &out_dir.join("train_log.json"),
        &serde_json::json!({
            "schema": "trainlog/1",
            "best_epoch": outcome.best_epoch,
            "epochs": outcome.log,
        }),
    )?;
    run.save(
        &out_dir.join("model.json"),
        &ModelArtifact::new(outcome.model, config, ds_fp),
    )?;
    Ok(())
}

fn cmd_train_sae(
    run: &mut Run,
    out_dir: &Path,
    seed: u64,
    defaults: &RunConfig,
    args: TrainSaeArgs,
) -> Result<(), Error> {
    let dataset_path = require(args.dataset.or_else(|| defaults.dataset.clone()), "dataset")?;
    let model_path = require(args.model.or_else(|| defaults.model.clone()), "model")?;
    let (ds_doc, ds_fp) = DatasetArtifact::load(&dataset_path)?;
    let (model_doc, model_fp) = ModelArtifact::<Real>::load(&model_path)?;
    run.record_input(&dataset_path, &ds_fp);
    run.record_input(&model_path, &model_fp);
    if model_doc.dataset_fingerprint != ds_fp {
        return Err(Error::Data(format!(
            "fingerprint mismatch: model was trained on dataset {} but {} has fingerprint {}",
            model_doc.dataset_fingerprint,
            dataset_path.display(),
            ds_fp
        )));
    }

    let mut config = defaults
        .sae_train
        .clone()
        .unwrap_or_else(|| SaeTrainConfig::new(22, seed));
    config.seed = seed;
    if let Some(v) = args.m {
        config.m = v;
    }
    if let Some(v) = args.alpha {
        config.loss.alpha = v;
    }
    if let Some(v) = args.beta {
        config.loss.beta = v;
    }
    if let Some(v) = args.lambda1 {
        config.loss.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        config.loss.lambda2 = v;
    }
    if let Some(v) = args.rho {
        config.loss.rho = v;
    }
    if let Some(v) = args.pairs {
        config.loss.pred_pairs_per_batch = v;
    }
    if let Some(v) = args.batch_size {
        config.loss.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.steps_per_epoch {
        config.steps_per_epoch = v;
    }
    if args.matryoshka {
        config.matryoshka = true;
    }
    if args.per_tower {
        config.shared = false;
    }
    if args.indicator_stat {
        config.loss.activation_stat = ActivationStat::Indicator;
    }

    let (saes, report) = train_sae(&model_doc.model, &ds_doc.dataset, &config)?;
    run.config = serde_json::to_value(&config).unwrap_or_default();
    if let Some(last) = report.epochs.last() {
        println!(
            "final epoch: emb {:.6} pred {:.6} l1 {:.4} kl {:.4} dead {:.3}",
            last.mean_emb,
            last.mean_pred,
            last.mean_l1,
            last.mean_kl,
            last.neuron_stats
                .iter()
                .map(|s| s.dead_fraction)
                .sum::<f64>()
                / last.neuron_stats.len() as f64
        );
    }
    run.save(
        &out_dir.join("sae_report.json"),
        &serde_json::json!({ "schema": "saereport/1", "report": report }),
    )?;
    run.save(
        &out_dir.join("sae.json"),
        &SaeArtifact::new(saes, config, model_fp),
    )?;
    Ok(())
}

/// Load dataset, model, and SAE, validating the fingerprint chain.
fn load_chain(
    run: &mut Run,
    dataset: &Path,
    model: &Path,
    sae: &Path,
) -> Result<(DatasetArtifact, ModelArtifact<Real>, SaeArtifact<Real>), Error> {
    let (ds_doc, ds_fp) = DatasetArtifact::load(dataset)?;
    let (model_doc, model_fp) = ModelArtifact::<Real>::load(model)?;
    let (sae_doc, sae_fp) = SaeArtifact::<Real>::load(sae)?;
    run.record_input(dataset, &ds_fp);
    run.record_input(model, &model_fp);
    run.record_input(sae, &sae_fp);
    if model_doc.dataset_fingerprint != ds_fp {
        return Err(Error::Data(
            "fingerprint mismatch: model was not trained on this dataset".into(),
        ));
    }
    if sae_doc.recommender_fingerprint != model_fp {
        return Err(Error::Data(
            "fingerprint mismatch: SAE was not trained on this recommender".into(),
        ));
    }
    Ok((ds_doc, model_doc, sae_doc))
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

fn cmd_analyze(
    run: &mut Run,
    out_dir: &Path,
    defaults: &RunConfig,
    args: AnalyzeArgs,
) -> Result<(), Error> {
    let dataset = require(args.dataset.or_else(|| defaults.dataset.clone()), "dataset")?;
    let model = require(args.model.or_else(|| defaults.model.clone()), "model")?;
    let sae = require(args.sae.or_else(|| defaults.sae.clone()), "sae")?;
    let (ds_doc, model_doc, sae_doc) = load_chain(run, &dataset, &model, &sae)?;
    let ds = &ds_doc.dataset;
    let item_sae = sae_doc.saes.item();

    let labels = match &args.labels {
        Some(path) => {
            run.record_input(path, &fingerprint_file(path)?);
            load_neuron_labels(path)?
        }
        None => {
            eprintln!("no label file: purity columns omitted");
            BTreeMap::new()
        }
    };

    let reports = neuron_reports(
        item_sae,
        &model_doc.model,
        ds,
        &labels,
        &args.ks,
        args.k_max,
        args.top_t,
    )?;
    run.config = serde_json::json!({
        "ks": args.ks, "top_t": args.top_t, "k_max": args.k_max,
        "labeled_neurons": labels.len(),
    });

    run.save(
        &out_dir.join("neurons.json"),
        &neuron_export(&reports, ds, args.k_max),
    )?;

    // per-neuron metric table
    let mut header = String::from("neuron,label,monosemanticity");
    for k in &args.ks {
        header.push_str(&format!(",purity_at_{k}"));
    }
    for k in &args.ks {
        header.push_str(&format!(",popularity_at_{k}"));
    }
    let rows: Vec<String> = reports
        .iter()
        .map(|r| {
            let mut row = format!(
                "{},{},{}",
                r.neuron_index,
                r.assigned_label.clone().unwrap_or_default(),
                r.monosemanticity.map(fmt_f64).unwrap_or_default(),
            );
            for k in &args.ks {
                row.push(',');
                if let Some(p) = r.purity_at.get(k) {
                    row.push_str(&fmt_f64(*p));
                }
            }
            for k in &args.ks {
                row.push(',');
                if let Some(p) = r.popularity_percentile_at.get(k) {
                    row.push_str(&fmt_f64(*p));
                }
            }
            row
        })
        .collect();
    run.save_csv(&out_dir.join("neuron_metrics.csv"), &header, &rows)?;

    for label in &args.profile_label {
        let profile =
            label_activation_profile(item_sae, &model_doc.model, &ds.item_metadata, label)?;
        let rows: Vec<String> = (0..profile.mean_activation.len())
            .map(|j| {
                format!(
                    "{j},{},{}",
                    fmt_f64(profile.mean_activation[j]),
                    fmt_f64(profile.baseline[j])
                )
            })
            .collect();
        let safe = sanitize(label);
        run.save_csv(
            &out_dir.join(format!("profile_label_{safe}.csv")),
            "neuron,mean_activation,baseline",
            &rows,
        )?;
    }
    for &neuron in &args.profile_neuron {
        let profile =
            neuron_label_profile(item_sae, &model_doc.model, &ds.item_metadata, neuron)?;
        let rows: Vec<String> = profile
            .iter()
            .map(|(label, act)| format!("{label},{}", fmt_f64(*act)))
            .collect();
        run.save_csv(
            &out_dir.join(format!("profile_neuron_{neuron}.csv")),
            "label,mean_activation",
            &rows,
        )?;
    }
    for &neuron in &args.temporal_neuron {
        let hist = temporal_profile(item_sae, &model_doc.model, &ds.item_metadata, neuron, 50)?;
        let rows: Vec<String> = hist
            .decades
            .iter()
            .map(|(decade, count)| format!("{decade},{count}"))
            .collect();
        run.save_csv(
            &out_dir.join(format!("temporal_neuron_{neuron}.csv")),
            "decade,count",
            &rows,
        )?;
    }
    println!("analyzed {} neurons", reports.len());
    Ok(())
}

fn cmd_fidelity(
    run: &mut Run,
    out_dir: &Path,
    seed: u64,
    defaults: &RunConfig,
    args: FidelityArgs,
) -> Result<(), Error> {
    let dataset = require(args.dataset.or_else(|| defaults.dataset.clone()), "dataset")?;
    let model = require(args.model.or_else(|| defaults.model.clone()), "model")?;
    let sae = require(args.sae.or_else(|| defaults.sae.clone()), "sae")?;
    let (_ds_doc, model_doc, sae_doc) = load_chain(run, &dataset, &model, &sae)?;

    let users: Option<Vec<usize>> = args.sample.map(|n| {
        let mut rng = recsae_core::Rng::seed_from_u64(seed);
        let mut all: Vec<usize> = (0..model_doc.model.n_users()).collect();
        rng.shuffle(&mut all);
        all.truncate(n);
        all.sort_unstable();
        all
    });
    let result = fidelity(
        &model_doc.model,
        &sae_doc.saes,
        users.as_deref(),
        args.depth,
        args.persistence,
    )?;
    run.config = serde_json::json!({
        "depth": args.depth, "persistence": args.persistence, "sample": args.sample,
    });
    let rows: Vec<String> = result
        .per_user
        .iter()
        .map(|u| {
            format!(
                "{},{},{},{}",
                u.user,
                fmt_f64(u.rbo),
                u.kendall_tau.map(fmt_f64).unwrap_or_default(),
                u.shared
            )
        })
        .collect();
    run.save_csv(
        &out_dir.join("fidelity.csv"),
        "user,rbo,kendall_tau,shared",
        &rows,
    )?;
    run.save(
        &out_dir.join("fidelity_summary.json"),
        &serde_json::json!({
            "schema": "fidelity/1",
            "rbo_mean": result.rbo_mean,
            "rbo_std": result.rbo_std,
            "tau_mean": result.tau_mean,
            "tau_std": result.tau_std,
            "list_depth": result.list_depth,
            "persistence": result.persistence,
            "users": result.per_user.len(),
        }),
    )?;
    println!(
        "rbo {:.4} ± {:.4}, tau {:.4} ± {:.4} over {} users",
        result.rbo_mean,
        result.rbo_std,
        result.tau_mean,
        result.tau_std,
        result.per_user.len()
    );
    Ok(())
}

fn cmd_sweep(
    run: &mut Run,
    out_dir: &Path,
    seed: u64,
    defaults: &RunConfig,
    args: SweepArgs,
) -> Result<(), Error> {
    let dataset = require(args.dataset.or_else(|| defaults.dataset.clone()), "dataset")?;
    let model = require(args.model.or_else(|| defaults.model.clone()), "model")?;
    let (ds_doc, ds_fp) = DatasetArtifact::load(&dataset)?;
    let (model_doc, model_fp) = ModelArtifact::<Real>::load(&model)?;
    run.record_input(&dataset, &ds_fp);
    run.record_input(&model, &model_fp);
    if model_doc.dataset_fingerprint != ds_fp {
        return Err(Error::Data(
            "fingerprint mismatch: model was not trained on this dataset".into(),
        ));
    }
    if args.betas.is_empty() {
        return Err(Error::Config("missing --betas".into()));
    }
    let seeds = if args.seeds.is_empty() {
        vec![seed]
    } else {
        args.seeds.clone()
    };

    let mut base = defaults
        .sae_train
        .clone()
        .unwrap_or_else(|| SaeTrainConfig::new(22, seed));
    if let Some(v) = args.m {
        base.m = v;
    }
    if let Some(v) = args.epochs {
        base.epochs = v;
    }
    if let Some(v) = args.steps_per_epoch {
        base.steps_per_epoch = v;
    }
    if let Some(v) = args.lr {
        base.learning_rate = v;
    }
    if args.matryoshka {
        base.matryoshka = true;
    }

    let table = beta_sweep(
        &ds_doc.dataset,
        &model_doc.model,
        &args.betas,
        &base,
        &seeds,
        args.depth,
        args.persistence,
        None,
    )?;
    run.config = serde_json::json!({
        "betas": args.betas, "seeds": seeds, "depth": args.depth,
        "persistence": args.persistence, "base": base,
    });
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                fmt_f64(r.beta),
                r.seed.map(|s| s.to_string()).unwrap_or_else(|| "all".into()),
                fmt_f64(r.rbo_mean),
                fmt_f64(r.rbo_std),
                fmt_f64(r.tau_mean),
                fmt_f64(r.tau_std),
                fmt_f64(r.monosemanticity),
                fmt_f64(r.active_neuron_fraction)
            )
        })
        .collect();
    run.save_csv(
        &out_dir.join("sweep.csv"),
        "beta,seed,rbo_mean,rbo_std,tau_mean,tau_std,monosemanticity,active_neuron_fraction",
        &rows,
    )?;
    println!("swept {} configurations", table.rows.len());
    Ok(())
}

fn cmd_intervene(
    run: &mut Run,
    out_dir: &Path,
    defaults: &RunConfig,
    args: InterveneArgs,
) -> Result<(), Error> {
    let dataset = require(args.dataset.or_else(|| defaults.dataset.clone()), "dataset")?;
    let model = require(args.model.or_else(|| defaults.model.clone()), "model")?;
    let sae = require(args.sae.or_else(|| defaults.sae.clone()), "sae")?;
    let (ds_doc, model_doc, sae_doc) = load_chain(run, &dataset, &model, &sae)?;
    run.record_input(&args.spec, &fingerprint_file(&args.spec)?);
    let doc = InterventionDoc::load(&args.spec)?;
    run.config = serde_json::to_value(&doc.request).unwrap_or_default();

    match doc.request {
        InterventionRequest::Promote {
            item,
            neuron,
            values,
            edit_mode,
            segments,
            top_n,
        } => {
            let segs: Vec<(String, recsae_core::intervene::Audience)> = segments
                .into_iter()
                .map(|s| (s.name, s.audience))
                .collect();
            let trajectory = promotion_sweep(
                &sae_doc.saes,
                &model_doc.model,
                &ds_doc.dataset,
                item,
                neuron,
                &values,
                edit_mode,
                &segs,
                top_n,
            )?;
            let mut rows = Vec::new();
            for seg in &trajectory.segments {
                for (vi, &v) in trajectory.sweep_values.iter().enumerate() {
                    rows.push(format!(
                        "{},{},{},{}",
                        fmt_f64(v),
                        seg.segment,
                        seg.mean_ranks[vi].map(fmt_f64).unwrap_or_default(),
                        fmt_f64(seg.fraction_in_top_n[vi])
                    ));
                }
            }
            run.save_csv(
                &out_dir.join("trajectory.csv"),
                "sweep_value,segment,mean_rank,fraction_in_topN",
                &rows,
            )?;
            run.save(
                &out_dir.join("trajectory.json"),
                &serde_json::json!({ "schema": "trajectory/1", "trajectory": trajectory }),
            )?;
            println!(
                "promotion sweep over {} values",
                trajectory.sweep_values.len()
            );
        }
        InterventionRequest::Suppress {
            cohort,
            neuron,
            suppress,
            label,
            top_n,
        } => {
            let report = suppress_for_cohort(
                &sae_doc.saes,
                &model_doc.model,
                &ds_doc.dataset,
                &cohort,
                neuron,
                suppress,
                &label,
                top_n,
            )?;
            let rows: Vec<String> = report
                .per_user
                .iter()
                .map(|u| format!("{},{},{}", u.user, u.before, u.after))
                .collect();
            run.save_csv(&out_dir.join("suppression.csv"), "user,before,after", &rows)?;
            run.save(
                &out_dir.join("suppression.json"),
                &serde_json::json!({ "schema": "suppression/1", "report": report }),
            )?;
            println!(
                "exposure {:.3} -> {:.3} over {} users",
                report.mean_before,
                report.mean_after,
                report.per_user.len()
            );
        }
        InterventionRequest::Apply { spec, top_n } => {
            let outcome = apply_intervention(&sae_doc.saes, &model_doc.model, &spec)?;
            if outcome.clamped > 0 {
                eprintln!(
                    "warning: {} edit(s) clamped to zero (non-negative bottleneck)",
                    outcome.clamped
                );
            }
            let users = audience_users(&ds_doc.dataset, &spec.audience)?;
            let ranks: Vec<serde_json::Value> = match spec.side {
                recsae_core::analysis::Side::Item => {
                    let mut out = Vec::with_capacity(users.len());
                    for &u in &users {
                        let before = rank_of_item(
                            &model_doc.model,
                            model_doc.model.user_embedding(u),
                            spec.entity,
                            None,
                        )?;
                        let after = rank_of_item(
                            &model_doc.model,
                            model_doc.model.user_embedding(u),
                            spec.entity,
                            Some(&outcome.embedding),
                        )?;
                        out.push(serde_json::json!({
                            "user": u, "before": before, "after": after,
                            "in_top_n_after": after <= top_n,
                        }));
                    }
                    out
                }
                recsae_core::analysis::Side::User => Vec::new(),
            };
            run.save(
                &out_dir.join("intervention_result.json"),
                &serde_json::json!({
                    "schema": "intervention_result/1",
                    "latent": outcome.latent,
                    "embedding": outcome.embedding,
                    "clamped": outcome.clamped,
                    "ranks": ranks,
                }),
            )?;
            println!("applied {} edit(s)", spec.edits.len());
        }
    }
    Ok(())
}
