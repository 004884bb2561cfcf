//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Every subcommand that writes files also writes a JSON manifest next to
//! them (`<out>.manifest.json`, or `manifest.json` inside an output
//! directory).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, DatasetPaths, ExperimentConfig, TableKind, Task};
use crate::corpus::{self, CorpusError, LabeledCorpus, OovKind, OovPolicy, Sentence, Token};
use crate::flavors::{self, CaseRestorer, Flavor, FlavorError};
use crate::metrics::{self, ComparisonTable, EvalReport, MetricKind};
use crate::tagger::{self, EmbeddingSource, Head, MatrixRecipe, TaggerConfig, TaggerError, TaggerModel};
use crate::truecaser::{self, TruecaserConfig, TruecaserError, TruecaserModel};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<FlavorError> for CliError {
    fn from(e: FlavorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::MissingPath { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TaggerError> for CliError {
    fn from(e: TaggerError) -> Self {
        match e {
            TaggerError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TaggerError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TaggerError::Flavor(f) => f.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TruecaserError> for CliError {
    fn from(e: TruecaserError) -> Self {
        match e {
            TruecaserError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TruecaserError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "casefold", version, about = "Casing-robust sequence tagging")]
struct Cli {
    /// Log level on standard error: 0 warnings, 1 info, 2 debug.
    #[arg(long, global = true, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
    verbose: u8,
    /// Print results as JSON on standard output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OovArg {
    Stochastic,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextFormat {
    /// One sentence per line, tokens separated by whitespace.
    Text,
    /// Column corpus; the first column is the token.
    Column,
}

#[derive(Debug, Clone, clap::Args)]
struct Columns {
    /// 0-based token column.
    #[arg(long, default_value_t = 0)]
    token_col: usize,
    /// 0-based label column.
    #[arg(long, default_value_t = 1)]
    label_col: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the train and test sides of one casing flavor.
    Flavor {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// c, u, cu, cu50, tt or ta.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truecaser: Option<PathBuf>,
        #[command(flatten)]
        columns: Columns,
    },
    /// Train the character-level truecaser.
    TrainTruecaser {
        #[arg(long)]
        train: PathBuf,
        /// Held-out text for model selection; without it the last 10% of
        /// train is held out.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OovArg::Frequency)]
        oov: OovArg,
        #[arg(long, default_value_t = 0.005)]
        oov_rate: f64,
        #[arg(long)]
        hidden_size: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, value_enum, default_value_t = TextFormat::Text)]
        format: TextFormat,
    },
    /// Restore casing of a plain-text file, one sentence per line.
    ApplyTruecaser {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Character F1 of the uppercase class on cased reference text.
    EvalTruecaser {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = TextFormat::Text)]
        format: TextFormat,
    },
    /// Train a tagger on one flavor of a column corpus.
    TrainTagger {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// c, u, cu, cu50, tt or ta.
        #[arg(long)]
        flavor: String,
        #[arg(long)]
        truecaser: Option<PathBuf>,
        #[arg(long)]
        head: Option<String>,
        /// trainable:D, static:PATH or char:WD,CD,CH.
        #[arg(long)]
        embeddings: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        columns: Columns,
    },
    /// Score a tagger on a column corpus.
    EvalTagger {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// acc or span-f1.
        #[arg(long, default_value = "acc")]
        metric: String,
        #[command(flatten)]
        columns: Columns,
    },
    /// Train and test every configured flavor; writes the report TSV.
    FlavorMatrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every table listed under `tables` in the config into a directory.
    ReproduceTables {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
    log::set_max_level(level);
}

fn execute(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    match &cli.command {
        Command::Flavor {
            train,
            test,
            kind,
            seed,
            out,
            truecaser,
            columns,
        } => {
            let flavor: Flavor = kind.parse()?;
            let tc = truecaser.as_deref().map(load_truecaser).transpose()?;
            let train_s = read_columns(train, columns)?;
            let test_s = read_columns(test, columns)?;
            let data = flavors::make_flavor(&train_s, &test_s, flavor, *seed, tc.as_ref().map(|t| t as &dyn CaseRestorer))?;
            create_dir(out)?;
            let mut written = vec![out.join(format!("train.{}", flavor.code()))];
            write_file(&written[0], corpus::write_column_corpus(&data.train).as_bytes())?;
            if flavor.needs_truecaser() {
                let p = out.join(format!("test.{}", flavor.code()));
                write_file(&p, corpus::write_column_corpus(&data.test_cased).as_bytes())?;
                written.push(p);
            } else {
                let (pc, pu) = (out.join("test.c"), out.join("test.u"));
                write_file(&pc, corpus::write_column_corpus(&data.test_cased).as_bytes())?;
                write_file(&pu, corpus::write_column_corpus(&data.test_uncased).as_bytes())?;
                written.extend([pc, pu]);
            }
            let config = json!({
                "train": train.display().to_string(),
                "test": test.display().to_string(),
                "kind": flavor.code(),
                "truecaser": data.provenance.truecaser,
                "token_col": columns.token_col,
                "label_col": columns.label_col,
            });
            write_manifest(&out.join("manifest.json"), "flavor", config, Some(*seed), start)?;
            if cli.json {
                let files: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
                print_json(&json!({ "flavor": flavor.code(), "files": files }));
            }
            Ok(())
        }
        Command::TrainTruecaser {
            train,
            dev,
            out,
            seed,
            oov,
            oov_rate,
            hidden_size,
            layers,
            epochs,
            batch_size,
            learning_rate,
            format,
        } => {
            let mut cfg = TruecaserConfig::default();
            let kind = match oov {
                OovArg::Stochastic => OovKind::StochasticAtRead,
                OovArg::Frequency => OovKind::FrequencyCutoff,
            };
            cfg.oov = OovPolicy::new(kind, *oov_rate).map_err(|e| CliError::Usage(e.to_string()))?;
            set(&mut cfg.hidden_size, *hidden_size);
            set(&mut cfg.layers, *layers);
            set(&mut cfg.epochs, *epochs);
            set(&mut cfg.batch_size, *batch_size);
            set(&mut cfg.learning_rate, *learning_rate);
            let train_s = read_text_sentences(train, *format)?;
            let dev_s = dev.as_deref().map(|d| read_text_sentences(d, *format)).transpose()?.unwrap_or_default();
            let (model, log) = truecaser::train_truecaser(&LabeledCorpus::new(train_s, dev_s, Vec::new()), cfg, *seed)?;
            model.save(out)?;
            let best = log.best();
            let config = json!({
                "train": train.display().to_string(),
                "dev": dev.as_ref().map(|d| d.display().to_string()),
                "hidden_size": cfg.hidden_size,
                "layers": cfg.layers,
                "epochs": cfg.epochs,
                "batch_size": cfg.batch_size,
                "learning_rate": cfg.learning_rate,
                "oov": cfg.oov.kind.to_string(),
                "oov_rate": cfg.oov.rate,
                "best_epoch": log.best_epoch,
                "best_dev_loss": best.dev_loss,
            });
            write_manifest(&manifest_path(out), "train-truecaser", config, Some(*seed), start)?;
            if cli.json {
                print_json(&json!({ "model": out.display().to_string(), "best_epoch": log.best_epoch, "dev_loss": best.dev_loss }));
            }
            Ok(())
        }
        Command::ApplyTruecaser { model, input, out } => {
            let tc = load_truecaser(model)?;
            let text = read_text(input)?;
            let lowered: Vec<String> = text.lines().map(truecaser::lowercase_text).collect();
            let refs: Vec<&str> = lowered.iter().map(String::as_str).collect();
            let restored = tc.apply_batch(&refs)?;
            let mut body = restored.join("\n");
            body.push('\n');
            write_file(out, body.as_bytes())?;
            let config = json!({
                "model": model.display().to_string(),
                "in": input.display().to_string(),
                "truecaser": tc.id(),
            });
            write_manifest(&manifest_path(out), "apply-truecaser", config, None, start)?;
            if cli.json {
                print_json(&json!({ "lines": restored.len(), "out": out.display().to_string() }));
            }
            Ok(())
        }
        Command::EvalTruecaser { model, gold, format } => {
            let tc = load_truecaser(model)?;
            let gold_s = read_text_sentences(gold, *format)?;
            let c = truecaser::truecaser_counts(&tc, &gold_s)?;
            if cli.json {
                print_json(&json!({
                    "f1": rounded(c.f1()),
                    "precision": rounded(c.precision()),
                    "recall": rounded(c.recall()),
                    "tp": c.tp,
                    "fp": c.fp,
                    "fn": c.fn_,
                }));
            } else {
                println!("{}", metrics::round2(c.f1()));
            }
            Ok(())
        }
        Command::TrainTagger {
            train,
            dev,
            flavor,
            truecaser,
            head,
            embeddings,
            hidden,
            batch_size,
            max_epochs,
            learning_rate,
            patience,
            seed,
            out,
            columns,
        } => {
            let flavor: Flavor = flavor.parse()?;
            let mut cfg = TaggerConfig::default();
            if let Some(h) = head {
                cfg.head = h.parse::<Head>().map_err(CliError::Usage)?;
            }
            if let Some(e) = embeddings {
                cfg.embeddings = e.parse::<EmbeddingSource>().map_err(CliError::Usage)?;
            }
            set(&mut cfg.hidden_units, *hidden);
            set(&mut cfg.batch_size, *batch_size);
            set(&mut cfg.max_epochs, *max_epochs);
            set(&mut cfg.learning_rate, *learning_rate);
            set(&mut cfg.patience, *patience);
            cfg.validate()?;
            let tc = truecaser.as_deref().map(load_truecaser).transpose()?;
            let tc_ref = tc.as_ref().map(|t| t as &dyn CaseRestorer);
            let train_s = read_columns(train, columns)?;
            let dev_s = read_columns(dev, columns)?;
            let train_f = flavors::transform_train(&train_s, flavor, *seed, tc_ref)?;
            let dev_f = flavors::transform_train(&dev_s, flavor, *seed, tc_ref)?;
            let (model, log) = tagger::train_on(&train_f, &dev_f, &cfg, *seed)?;
            model.save(out)?;
            let config = json!({
                "train": train.display().to_string(),
                "dev": dev.display().to_string(),
                "flavor": flavor.code(),
                "truecaser": tc.as_ref().map(|t| t.id()),
                "tagger": tagger_json(&cfg),
                "token_col": columns.token_col,
                "label_col": columns.label_col,
                "best_epoch": log.best_epoch,
                "epochs_run": log.epochs.len(),
                "stopped_early": log.stopped_early,
            });
            write_manifest(&manifest_path(out), "train-tagger", config, Some(*seed), start)?;
            if cli.json {
                let best = &log.epochs[log.best_epoch - 1];
                print_json(&json!({
                    "model": out.display().to_string(),
                    "best_epoch": log.best_epoch,
                    "dev_accuracy": rounded(best.dev_accuracy),
                }));
            }
            Ok(())
        }
        Command::EvalTagger {
            model,
            test,
            metric,
            columns,
        } => {
            let metric: MetricKind = metric.parse().map_err(CliError::Usage)?;
            let m = TaggerModel::load(model)?;
            let test_s = read_columns(test, columns)?;
            let score = tagger::evaluate(&m, &test_s, metric)?;
            if cli.json {
                print_json(&json!({ "metric": metric.code(), "score": rounded(score) }));
            } else {
                println!("{}", metrics::round2(score));
            }
            Ok(())
        }
        Command::FlavorMatrix { config, out } => {
            let cfg = load_config(config)?;
            let mut runner = Runner::new(&cfg);
            let report = runner.report(&cfg.dataset, &cfg.tagger.embeddings, cfg.tagger.head)?;
            write_file(out, report.to_tsv().as_bytes())?;
            write_manifest(&manifest_path(out), "flavor-matrix", config_echo(&cfg, config), Some(cfg.seed), start)?;
            if cli.json {
                print!("{}", report.to_json());
            }
            Ok(())
        }
        Command::ReproduceTables { config, out } => {
            let cfg = load_config(config)?;
            create_dir(out)?;
            let mut runner = Runner::new(&cfg);
            let mut tables = serde_json::Map::new();
            for &kind in &cfg.tables {
                let (tsv, js) = runner.table(kind)?;
                let stem = kind.file_stem();
                write_file(&out.join(format!("{stem}.tsv")), tsv.as_bytes())?;
                write_file(&out.join(format!("{stem}.json")), js.as_bytes())?;
                tables.insert(stem.into(), serde_json::from_str(&js).expect("tables serialize to JSON"));
            }
            write_manifest(&out.join("manifest.json"), "reproduce-tables", config_echo(&cfg, config), Some(cfg.seed), start)?;
            if cli.json {
                print_json(&Value::Object(tables));
            }
            Ok(())
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn rounded(x: f64) -> f64 {
    metrics::round2(x).parse().unwrap_or(x)
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(path: &Path, command: &str, config: Value, seed: Option<u64>, start: Instant) -> Result<()> {
    let m = json!({
        "command": command,
        "config": config,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_secs": start.elapsed().as_secs_f64(),
    });
    let mut s = serde_json::to_string_pretty(&m).expect("serializable");
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn config_echo(cfg: &ExperimentConfig, path: &Path) -> Value {
    json!({
        "file": path.display().to_string(),
        "values": cfg.raw,
    })
}

fn tagger_json(cfg: &TaggerConfig) -> Value {
    json!({
        "hidden_units": cfg.hidden_units,
        "lstm_dropout": cfg.lstm_dropout,
        "recurrent_dropout": cfg.recurrent_dropout,
        "learning_rate": cfg.learning_rate,
        "head": cfg.head.code(),
        "embeddings": cfg.embeddings.to_string(),
        "max_epochs": cfg.max_epochs,
        "min_delta": cfg.min_delta,
        "patience": cfg.patience,
        "batch_size": cfg.batch_size,
        "oov": cfg.oov.kind.to_string(),
        "oov_rate": cfg.oov.rate,
    })
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn corpus_err(path: &Path, e: CorpusError) -> CliError {
    match e {
        CorpusError::Io { .. } => CliError::Data(e.to_string()),
        _ => CliError::Data(format!("{}: {e}", path.display())),
    }
}

fn read_columns(path: &Path, columns: &Columns) -> Result<Vec<Sentence>> {
    corpus::read_column_file(path, columns.token_col, columns.label_col).map_err(|e| corpus_err(path, e))
}

/// Sentences with placeholder `O` labels, for truecaser input.
fn read_text_sentences(path: &Path, format: TextFormat) -> Result<Vec<Sentence>> {
    match format {
        TextFormat::Column => corpus::read_column_file(path, 0, 0).map_err(|e| corpus_err(path, e)),
        TextFormat::Text => {
            let text = read_text(path)?;
            let sentences: Vec<Sentence> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| Sentence::new(l.split_whitespace().map(|w| Token::new(w, "O")).collect()))
                .collect();
            if sentences.is_empty() {
                return Err(CliError::Data(format!("{}: no sentences", path.display())));
            }
            Ok(sentences)
        }
    }
}

fn load_truecaser(path: &Path) -> Result<TruecaserModel> {
    Ok(TruecaserModel::load(path)?)
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    ExperimentConfig::parse(&text, base).map_err(|e| match e {
        ConfigError::MissingPath { .. } => CliError::Data(format!("{}: {e}", path.display())),
        _ => CliError::Usage(format!("{}: {e}", path.display())),
    })
}

struct Splits {
    train: Vec<Sentence>,
    dev: Vec<Sentence>,
    test: Vec<Sentence>,
}

/// Runs training jobs for the table builders; each (dataset, embeddings,
/// head) combination is trained once.
struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    splits: BTreeMap<String, Splits>,
    truecasers: BTreeMap<String, TruecaserModel>,
    reports: BTreeMap<(String, String, &'static str), EvalReport>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Runner {
            cfg,
            splits: BTreeMap::new(),
            truecasers: BTreeMap::new(),
            reports: BTreeMap::new(),
        }
    }

    fn load_splits(&mut self, ds: &DatasetPaths) -> Result<()> {
        if self.splits.contains_key(&ds.name) {
            return Ok(());
        }
        let cols = Columns {
            token_col: self.cfg.token_col,
            label_col: self.cfg.label_col,
        };
        let splits = Splits {
            train: read_columns(&ds.train, &cols)?,
            dev: read_columns(&ds.dev, &cols)?,
            test: read_columns(&ds.test, &cols)?,
        };
        self.splits.insert(ds.name.clone(), splits);
        Ok(())
    }

    fn ensure_truecaser(&mut self, ds: &DatasetPaths) -> Result<()> {
        if self.truecasers.contains_key(&ds.name) || !self.cfg.flavors.iter().any(|f| f.needs_truecaser()) {
            return Ok(());
        }
        let model = match &self.cfg.truecaser_model {
            Some(p) => load_truecaser(p)?,
            None => {
                log::info!("training a truecaser on the {} train split", ds.name);
                let s = &self.splits[&ds.name];
                let corpus = LabeledCorpus::new(s.train.clone(), s.dev.clone(), Vec::new());
                truecaser::train_truecaser(&corpus, self.cfg.truecaser, self.cfg.seed)?.0
            }
        };
        self.truecasers.insert(ds.name.clone(), model);
        Ok(())
    }

    fn report(&mut self, ds: &DatasetPaths, embeddings: &EmbeddingSource, head: Head) -> Result<EvalReport> {
        if self.cfg.task == Task::Truecase {
            return Err(CliError::Usage("flavor matrices need task pos or ner".into()));
        }
        let key = (ds.name.clone(), embeddings.to_string(), head.code());
        if let Some(r) = self.reports.get(&key) {
            return Ok(r.clone());
        }
        self.load_splits(ds)?;
        self.ensure_truecaser(ds)?;
        let mut config = self.cfg.tagger.clone();
        config.embeddings = embeddings.clone();
        config.head = head;
        let s = &self.splits[&ds.name];
        let recipe = MatrixRecipe {
            train: &s.train,
            dev: &s.dev,
            test: &s.test,
            flavors: &self.cfg.flavors,
            config: &config,
            seed: self.cfg.seed,
            truecaser: self.truecasers.get(&ds.name).map(|t| t as &dyn CaseRestorer),
            metric: self.cfg.metric,
        };
        let report = tagger::evaluate_flavor_matrix(&recipe)?;
        self.reports.insert(key, report.clone());
        Ok(report)
    }

    /// Averages of several reports side by side, one column each.
    fn comparison(&mut self, columns: Vec<(String, DatasetPaths, EmbeddingSource, Head)>) -> Result<ComparisonTable> {
        let mut names = Vec::new();
        let mut reports = Vec::new();
        for (name, ds, emb, head) in columns {
            reports.push(self.report(&ds, &emb, head)?);
            names.push(name);
        }
        let rows = self
            .cfg
            .flavors
            .iter()
            .map(|&f| {
                let vals = reports.iter().map(|r| r.row(f).map_or(f64::NAN, |row| row.avg())).collect();
                (f, vals)
            })
            .collect();
        Ok(ComparisonTable { columns: names, rows })
    }

    fn table(&mut self, kind: TableKind) -> Result<(String, String)> {
        let cfg = self.cfg;
        let main = cfg.dataset.clone();
        let emb = cfg.tagger.embeddings.clone();
        let head = cfg.tagger.head;
        let table = match kind {
            TableKind::Matrix => {
                let r = self.report(&main, &emb, head)?;
                return Ok((r.to_tsv(), r.to_json()));
            }
            TableKind::CrfAblation => self.comparison(vec![
                ("No CRF".into(), main.clone(), emb.clone(), Head::Softmax),
                ("CRF".into(), main, emb, Head::Crf),
            ])?,
            TableKind::Encodings => self.comparison(
                cfg.encodings
                    .iter()
                    .map(|e| (encoding_name(e), main.clone(), e.clone(), head))
                    .collect(),
            )?,
            TableKind::Datasets => self.comparison(
                std::iter::once(&main)
                    .chain(&cfg.extra_datasets)
                    .map(|d| (d.name.clone(), d.clone(), emb.clone(), head))
                    .collect(),
            )?,
        };
        Ok((table.to_tsv(), table.to_json()))
    }
}

/// Column name for an encoding: the file stem for static vectors.
fn encoding_name(e: &EmbeddingSource) -> String {
    match e {
        EmbeddingSource::StaticFile { path } => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.to_string()),
        other => other.to_string(),
    }
}
