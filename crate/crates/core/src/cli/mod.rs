//! Command-line front end: every command resolves a [`RunConfig`], writes a
//! snapshot of it under `--out-dir`, and puts its artifacts beside it.
//!
//! Exit status is 0 on success, 1 on a runtime failure (one `error:` line
//! on standard error) and 2 on a usage error.

mod config;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::corpus::{
    encode_instance, normalize_tokens, preprocess, read_jsonl, read_posts, read_vocabulary, read_word_list,
    instances_from_posts, ConversationInstance, CorpusError, Example, PreprocessOptions, Preprocessed, RawPost,
    Vocabulary, TRAIN_FILE, VOCAB_FILE, TEST_FILE,
};
use crate::downstream::{
    bow_features, build_hashtag_labels, extract_features_batch, holdout_split, token_ids, train_classifier,
    train_text_cnn, CnnConfig, CnnMode, CnnTask, DownstreamError, HashtagOptions, LabeledMessage, LinearConfig,
    Metrics, TopicModel,
};
use crate::eval::{
    alignment_matrix, cluster_scores, npmi_coherence, top_n_words, word_attribution, Coherence, EvalError,
    TopicSummary,
};
use crate::model::{infer_batch, ModelConfig, ModelError};
use crate::nn::argmax;
use crate::objectives::Batch;
use crate::trainer::{grid_search, train, Dataset, TrainConfig, TrainError, TrainHistory, GRID_KEYS};

pub use config::{ClassifyMode, ConfigError, Overrides, RunConfig};

pub const THREADS_ENV: &str = "CONVO_TD_THREADS";
pub const SNAPSHOT_FILE: &str = "resolved-config.txt";

#[derive(Debug, Parser)]
#[command(name = "convo-td", version, about = "Joint topic and discourse modeling of conversations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommandArgs {
    /// Flat `key = value` file applied under the flags.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Posts → reply trees → instances, vocabulary and split.
    Preprocess(CommandArgs),
    /// Train one model and write a checkpoint with its history.
    Train(CommandArgs),
    /// Train every cell of a hyperparameter grid and keep the best.
    Grid(CommandArgs),
    /// Top words and NPMI coherence of a checkpoint.
    EvalTopics(CommandArgs),
    /// Discourse roles against labeled dialogue acts.
    EvalDisc(CommandArgs),
    /// Hashtag-proxy classification.
    Classify(CommandArgs),
    /// Top words of every topic and role as TSV.
    ExportTopWords(CommandArgs),
    /// Per-word topic / discourse tags for messages.
    Attribute(CommandArgs),
}

impl Command {
    fn args(&self) -> &CommandArgs {
        match self {
            Self::Preprocess(a)
            | Self::Train(a)
            | Self::Grid(a)
            | Self::EvalTopics(a)
            | Self::EvalDisc(a)
            | Self::Classify(a)
            | Self::ExportTopWords(a)
            | Self::Attribute(a) => a,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Config(#[from] ConfigError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("downstream: {0}")]
    Downstream(#[from] DownstreamError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {line}");
            e.exit_code()
        }
    }
}

/// Resolve the configuration of a parsed command and run it.
pub fn execute(command: &Command) -> Result<(), CliError> {
    let args = command.args();
    let config = RunConfig::resolve(args.config.as_deref(), &args.overrides)?;
    configure_threads()?;
    create_dir(&config.out_dir)?;
    write_file(&config.out_dir.join(SNAPSHOT_FILE), config.to_lines().as_bytes())?;
    match command {
        Command::Preprocess(_) => cmd_preprocess(&config),
        Command::Train(_) => cmd_train(&config),
        Command::Grid(_) => cmd_grid(&config),
        Command::EvalTopics(_) => cmd_eval_topics(&config),
        Command::EvalDisc(_) => cmd_eval_disc(&config),
        Command::Classify(_) => cmd_classify(&config),
        Command::ExportTopWords(_) => cmd_export_top_words(&config),
        Command::Attribute(_) => cmd_attribute(&config),
    }
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| ConfigError::Value {
        key: THREADS_ENV.into(),
        value: value.clone(),
        message: "expected a positive integer".into(),
    })?;
    // A pool configured earlier in this process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn model_config(config: &RunConfig, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        topic_hidden: config.topic_hidden,
        disc_hidden: config.disc_hidden,
        tau: config.tau,
        lambda: config.lambda,
        stop_penalty: config.stop_penalty,
        mi_marginal: config.mi_marginal,
        ..ModelConfig::new(config.topics, config.discourse, vocab_size)
    }
}

fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        max_epochs: config.epochs,
        patience: config.patience,
        seed: config.seed,
        clip_norm: (config.clip_norm > 0.0).then_some(config.clip_norm),
        ..Default::default()
    }
}

/// `key=v1,v2;key=v3` → grid; keys use the training names, with
/// `discourse` accepted for `roles`.
pub fn parse_grid(spec: &str) -> Result<BTreeMap<String, Vec<f64>>, ConfigError> {
    let bad = |message: String| ConfigError::Value {
        key: "grid".into(),
        value: spec.into(),
        message,
    };
    let mut grid = BTreeMap::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part.split_once('=').ok_or_else(|| bad(format!("{part:?} lacks `=`")))?;
        let mut key = key.trim().replace('-', "_");
        if key == "discourse" {
            key = "roles".into();
        }
        if !GRID_KEYS.contains(&key.as_str()) {
            return Err(bad(format!("unknown grid key {key:?}")));
        }
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        grid.insert(key, values);
    }
    if grid.is_empty() {
        return Err(bad("empty grid".into()));
    }
    Ok(grid)
}

fn load_corpus(config: &RunConfig) -> Result<(Preprocessed, Dataset), CliError> {
    let dir = config.require(&config.data_dir, "data-dir")?;
    let pre = Preprocessed::read_from(dir)?;
    let data = Dataset::from_preprocessed(&pre, config.context_excludes_target);
    if data.train.is_empty() || pre.vocab.is_empty() {
        return Err(CliError::EmptyCorpus(format!("no training messages in {}", dir.display())));
    }
    Ok((pre, data))
}

fn checkpoint_path(config: &RunConfig) -> PathBuf {
    RunConfig::optional(&config.out)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join("model.ckpt"))
}

fn write_history(ckpt: &Path, history: &TrainHistory) -> Result<(), CliError> {
    let path = ckpt.with_extension("history.csv");
    let mut buf = Vec::new();
    history.write_csv(&mut buf).map_err(io_err(&path))?;
    write_file(&path, &buf)
}

/// Checkpoint plus the vocabulary it was trained on, checked against each other.
fn load_model(config: &RunConfig) -> Result<(Checkpoint, Vocabulary), CliError> {
    let ckpt = load_checkpoint(config.require(&config.ckpt, "ckpt")?)?;
    let dir = config.require(&config.data_dir, "data-dir")?;
    let vocab = read_vocabulary(&dir.join(VOCAB_FILE))?;
    let expected = ModelConfig {
        vocab_size: vocab.len(),
        ..ckpt.config.clone()
    };
    ckpt.verify(&expected, Some(&vocab.fingerprint()))?;
    Ok((ckpt, vocab))
}

/// Each distinct message once, in first-seen order, with its example and
/// the index of the instance it came from.
struct Messages {
    ids: Vec<String>,
    tokens: Vec<Vec<String>>,
    examples: Vec<Example>,
    instance: Vec<usize>,
}

fn distinct_messages(instances: &[ConversationInstance], vocab: &Vocabulary, exclude_target: bool) -> Messages {
    let mut seen = HashSet::new();
    let mut out = Messages {
        ids: Vec::new(),
        tokens: Vec::new(),
        examples: Vec::new(),
        instance: Vec::new(),
    };
    for (i, inst) in instances.iter().enumerate() {
        let examples = encode_instance(inst, vocab, exclude_target);
        for ((id, tokens), example) in inst.ids.iter().zip(&inst.messages).zip(examples) {
            if seen.insert(id.clone()) {
                out.ids.push(id.clone());
                out.tokens.push(tokens.clone());
                out.examples.push(example);
                out.instance.push(i);
            }
        }
    }
    out
}

fn labeled_posts(config: &RunConfig) -> Result<Vec<RawPost>, CliError> {
    Ok(read_posts(config.require(&config.labeled, "labeled")?)?)
}

#[derive(Serialize)]
struct PreprocessReport {
    posts: usize,
    vocab_size: usize,
    train_instances: usize,
    dev_instances: usize,
    test_instances: usize,
}

fn cmd_preprocess(config: &RunConfig) -> Result<(), CliError> {
    let posts = read_posts(config.require(&config.input, "input")?)?;
    let stop_list = match RunConfig::optional(&config.stop_list) {
        Some(path) => read_word_list(path)?,
        None => HashSet::new(),
    };
    let options = PreprocessOptions {
        min_count: config.min_count,
        stop_list,
        seed: config.seed,
        ascii_only: config.ascii_only,
        ..Default::default()
    };
    let pre = preprocess(&posts, &options)?;
    pre.write_to(&config.out_dir)?;
    write_json(
        &config.out_dir.join("preprocess.json"),
        &PreprocessReport {
            posts: posts.len(),
            vocab_size: pre.vocab.len(),
            train_instances: pre.split.train.len(),
            dev_instances: pre.split.dev.len(),
            test_instances: pre.split.test.len(),
        },
    )
}

#[derive(Serialize)]
struct TrainReport<'a> {
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    best_dev: Option<&'a crate::objectives::LossBreakdown>,
    checkpoint: String,
}

fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let (pre, data) = load_corpus(config)?;
    let model = model_config(config, pre.vocab.len());
    let ckpt = checkpoint_path(config);
    let fingerprint = pre.vocab.fingerprint();
    match train(&data, &model, &train_config(config)) {
        Ok((params, history)) => {
            save_checkpoint(&ckpt, &params, &model, Some(&fingerprint))?;
            write_history(&ckpt, &history)?;
            write_json(
                &config.out_dir.join("train.json"),
                &TrainReport {
                    epochs_run: history.epochs.len(),
                    best_epoch: history.best_epoch,
                    stopped_early: history.stopped_early,
                    best_dev: history.best().map(|e| &e.dev),
                    checkpoint: ckpt.display().to_string(),
                },
            )
        }
        Err(TrainError::Diverged {
            epoch,
            cause,
            last_finite,
            history,
        }) => {
            save_checkpoint(&ckpt, &last_finite, &model, Some(&fingerprint))?;
            write_history(&ckpt, &history)?;
            Err(TrainError::Diverged {
                epoch,
                cause,
                last_finite,
                history,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_grid(config: &RunConfig) -> Result<(), CliError> {
    let grid = parse_grid(&config.grid)?;
    let (pre, data) = load_corpus(config)?;
    let model = model_config(config, pre.vocab.len());
    let result = grid_search(&data, &model, &train_config(config), &grid)?;
    let table = config.out_dir.join("grid.csv");
    let mut buf = Vec::new();
    result.write_table(&mut buf).map_err(io_err(&table))?;
    write_file(&table, &buf)?;
    let ckpt = checkpoint_path(config);
    save_checkpoint(&ckpt, &result.params, &result.model, Some(&pre.vocab.fingerprint()))?;
    write_history(&ckpt, &result.history)?;
    write_json(&config.out_dir.join("grid.json"), &result.cells[result.best])
}

#[derive(Serialize)]
struct TopicsReport {
    window: usize,
    top_n: usize,
    coherence_top5: Coherence,
    coherence_top10: Coherence,
    /// Mean of the top-5 and top-10 means.
    coherence_mean: Option<f64>,
    topics: TopicSummary,
}

fn reference_documents(config: &RunConfig, vocab: &Vocabulary) -> Result<Vec<Vec<String>>, CliError> {
    let path = match RunConfig::optional(&config.reference) {
        Some(p) => p.to_path_buf(),
        None => config.require(&config.data_dir, "data-dir")?.join(TRAIN_FILE),
    };
    let instances: Vec<ConversationInstance> = read_jsonl(&path)?;
    Ok(distinct_messages(&instances, vocab, false).tokens)
}

fn cmd_eval_topics(config: &RunConfig) -> Result<(), CliError> {
    let (ckpt, vocab) = load_model(config)?;
    let docs = reference_documents(config, &vocab)?;
    let phi_t = ckpt.params.topic_word_matrix();
    let coherence_at = |n: usize| -> Result<Coherence, CliError> {
        let summary = top_n_words(&phi_t, &vocab, n, config.exclude_stop)?;
        Ok(npmi_coherence(&summary.word_lists(), &docs, config.window)?)
    };
    let (c5, c10) = (coherence_at(5)?, coherence_at(10)?);
    let topics = top_n_words(&phi_t, &vocab, config.top_n, config.exclude_stop)?;
    let roles = top_n_words(&ckpt.params.discourse_word_matrix(), &vocab, config.top_n, false)?;
    write_file(&config.out_dir.join("topics.tsv"), topics.to_tsv().as_bytes())?;
    write_file(&config.out_dir.join("discourse.tsv"), roles.to_tsv().as_bytes())?;
    let coherence_mean = match (c5.mean, c10.mean) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    write_json(
        &config.out_dir.join("eval_topics.json"),
        &TopicsReport {
            window: config.window,
            top_n: config.top_n,
            coherence_top5: c5,
            coherence_top10: c10,
            coherence_mean,
            topics,
        },
    )
}

fn infer_roles(ckpt: &Checkpoint, examples: &[Example]) -> Vec<usize> {
    examples
        .chunks(256)
        .flat_map(|chunk| {
            let batch = Batch::from_examples(chunk, ckpt.params.vocab_size());
            let (_, pi) = infer_batch(&ckpt.params, &batch.messages, &batch.contexts);
            pi.rows().into_iter().map(|r| argmax(&r)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Serialize)]
struct DiscReport {
    messages: usize,
    roles: usize,
    purity: f64,
    homogeneity: f64,
    vi: f64,
    labels: Vec<String>,
}

fn cmd_eval_disc(config: &RunConfig) -> Result<(), CliError> {
    let (ckpt, vocab) = load_model(config)?;
    let posts = labeled_posts(config)?;
    let label_of: HashMap<&str, &str> = posts
        .iter()
        .filter_map(|p| p.label.as_deref().map(|l| (p.id.as_str(), l)))
        .collect();
    let instances = instances_from_posts(&posts, normalize_tokens)?;
    let all = distinct_messages(&instances, &vocab, config.context_excludes_target);
    let (mut examples, mut labels) = (Vec::new(), Vec::new());
    for (id, example) in all.ids.iter().zip(all.examples) {
        if let Some(label) = label_of.get(id.as_str()) {
            examples.push(example);
            labels.push(label.to_string());
        }
    }
    if examples.is_empty() {
        return Err(CliError::EmptyCorpus("no labeled messages".into()));
    }
    let roles = infer_roles(&ckpt, &examples);
    let scores = cluster_scores(&roles, &labels)?;
    let heatmap = alignment_matrix(&roles, &labels, ckpt.config.roles, &[])?;
    write_file(&config.out_dir.join("heatmap.csv"), heatmap.to_csv().as_bytes())?;
    write_json(
        &config.out_dir.join("eval_disc.json"),
        &DiscReport {
            messages: labels.len(),
            roles: ckpt.config.roles,
            purity: scores.purity,
            homogeneity: scores.homogeneity,
            vi: scores.vi,
            labels: heatmap.labels,
        },
    )
}

fn read_merge_map(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(from), Some(to), None) => {
                map.insert(from.to_string(), to.to_string());
            }
            _ => {
                return Err(CorpusError::Format(format!("{}:{}: expected `from to`", path.display(), i + 1)).into())
            }
        }
    }
    Ok(map)
}

#[derive(Serialize)]
struct ClassifyReport {
    mode: String,
    classes: Vec<String>,
    train_messages: usize,
    test_messages: usize,
    metrics: Metrics,
    /// Same linear classifier on raw word counts, in `features` mode.
    bow_baseline: Option<Metrics>,
    warnings: Vec<String>,
}

fn cmd_classify(config: &RunConfig) -> Result<(), CliError> {
    let (ckpt, vocab) = load_model(config)?;
    let posts = labeled_posts(config)?;
    let mut options = HashtagOptions::new(config.top_k);
    if let Some(path) = RunConfig::optional(&config.merge_map) {
        options.merge_map = read_merge_map(path)?;
    }
    if let Some(path) = RunConfig::optional(&config.block_list) {
        options.block_list = read_word_list(path)?;
    }
    let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
    let labeled = build_hashtag_labels(&texts, &options);
    for w in &labeled.warnings {
        eprintln!("warning: {w}");
    }
    let class_of: HashMap<&str, usize> = labeled.items.iter().map(|&(i, c)| (posts[i].id.as_str(), c)).collect();

    let instances = instances_from_posts(&posts, normalize_tokens)?;
    let all = distinct_messages(&instances, &vocab, config.context_excludes_target);
    let mut messages = Vec::new();
    let mut groups = Vec::new();
    for (((id, tokens), example), inst) in all.ids.iter().zip(&all.tokens).zip(all.examples).zip(all.instance) {
        if let Some(&label) = class_of.get(id.as_str()) {
            messages.push(LabeledMessage {
                tokens: token_ids(tokens, &vocab),
                example,
                label,
            });
            groups.push(inst);
        }
    }
    if messages.is_empty() {
        return Err(CliError::EmptyCorpus("no message carries a retained hashtag".into()));
    }
    let split = holdout_split(messages.len(), config.test_fraction, config.seed, Some(&groups))?;
    let classes = labeled.labels.len();
    let labels: Vec<usize> = messages.iter().map(|m| m.label).collect();
    let examples: Vec<Example> = messages.iter().map(|m| m.example.clone()).collect();

    let (metrics, bow_baseline) = match config.mode {
        ClassifyMode::Features => {
            let linear = LinearConfig::default();
            let features = extract_features_batch(&examples, &ckpt.params)?;
            let (_, metrics) = train_classifier(&features, &labels, classes, &split, &linear, config.seed)?;
            let bow = bow_features(&examples, vocab.len());
            let (_, baseline) = train_classifier(&bow, &labels, classes, &split, &linear, config.seed)?;
            (metrics, Some(baseline))
        }
        ClassifyMode::Separate | ClassifyMode::Joint => {
            let mode = if config.mode == ClassifyMode::Joint {
                CnnMode::Joint
            } else {
                CnnMode::Separate
            };
            let cnn = CnnConfig {
                embedding_dim: config.embedding_dim,
                feature_maps: config.feature_maps,
                dropout: config.dropout,
                learning_rate: config.learning_rate,
                epochs: config.cnn_epochs,
                batch_size: config.batch_size,
                topic_loss_weight: config.topic_loss_weight,
                clip_norm: (config.clip_norm > 0.0).then_some(config.clip_norm),
                ..Default::default()
            };
            let task = CnnTask {
                messages: &messages,
                classes,
                vocab_size: vocab.len(),
                split: &split,
            };
            let topic = TopicModel {
                params: &ckpt.params,
                config: &ckpt.config,
                stop_flags: vocab.stop_flags(),
            };
            let run = train_text_cnn(&task, mode, Some(topic), &cnn, config.seed)?;
            if let (CnnMode::Joint, Some(params)) = (mode, &run.params) {
                save_checkpoint(
                    &config.out_dir.join("joint.ckpt"),
                    params,
                    &ckpt.config,
                    Some(&vocab.fingerprint()),
                )?;
            }
            (run.metrics, None)
        }
    };

    let mut csv = String::from("class,label,f1,support\n");
    for (c, label) in labeled.labels.iter().enumerate() {
        csv.push_str(&format!("{c},{label},{},{}\n", metrics.per_class_f1[c], metrics.support[c]));
    }
    write_file(&config.out_dir.join("per_class_f1.csv"), csv.as_bytes())?;
    write_json(
        &config.out_dir.join("metrics.json"),
        &ClassifyReport {
            mode: config.mode.to_string(),
            classes: labeled.labels.clone(),
            train_messages: split.train.len(),
            test_messages: split.test.len(),
            metrics,
            bow_baseline,
            warnings: labeled.warnings,
        },
    )
}

fn cmd_export_top_words(config: &RunConfig) -> Result<(), CliError> {
    let (ckpt, vocab) = load_model(config)?;
    let topics = top_n_words(&ckpt.params.topic_word_matrix(), &vocab, config.top_n, config.exclude_stop)?;
    let roles = top_n_words(&ckpt.params.discourse_word_matrix(), &vocab, config.top_n, false)?;
    let mut out = String::new();
    for (kind, summary) in [("topic", &topics), ("discourse", &roles)] {
        for (i, row) in summary.rows.iter().enumerate() {
            out.push_str(&format!("{kind}\t{i}\t{}\n", row.words.join(" ")));
        }
    }
    write_file(&config.out_dir.join("top_words.tsv"), out.as_bytes())
}

#[derive(Serialize)]
struct AttributedMessage<'a> {
    id: &'a str,
    role: usize,
    words: Vec<crate::eval::WordAttribution>,
}

fn cmd_attribute(config: &RunConfig) -> Result<(), CliError> {
    let (ckpt, vocab) = load_model(config)?;
    let instances: Vec<ConversationInstance> = match RunConfig::optional(&config.input) {
        Some(path) => instances_from_posts(&read_posts(path)?, normalize_tokens)?,
        None => read_jsonl(&config.require(&config.data_dir, "data-dir")?.join(TEST_FILE))?,
    };
    let all = distinct_messages(&instances, &vocab, config.context_excludes_target);
    let path = config.out_dir.join("attribution.jsonl");
    let mut out = Vec::new();
    for ((id, tokens), example) in all.ids.iter().zip(&all.tokens).zip(&all.examples) {
        let inf = ckpt.params.infer(&example.message, &example.context)?;
        let record = AttributedMessage {
            id,
            role: inf.role,
            words: word_attribution(tokens, &vocab, &inf.theta.view(), &inf.d_hard.view(), &ckpt.params, ckpt.config.stop_penalty),
        };
        serde_json::to_writer(&mut out, &record).expect("record serializes");
        out.write_all(b"\n").map_err(io_err(&path))?;
    }
    write_file(&path, &out)
}
