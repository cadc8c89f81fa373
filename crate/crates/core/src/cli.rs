//! Command-line entry points.
//!
//! A data directory holds `train.csv`, `val.csv`, `test.csv`,
//! `captions.jsonl` and `lexicon.tsv`, as written by `gendata`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    build_incidence, build_vocabulary, load_captions, AttributeIncidence, AttributeVocabulary,
    CaptionFormat, CaptionSet, PosLexicon,
};
use crate::data::FeatureStore;
use crate::error::{Error, Result};
use crate::groups::{MetricKind, SpuriousnessTable};
use crate::model::{Checkpoint, Classifier};
use crate::plot::{line_svg, scatter_svg};
use crate::report::{comparison_csv, evaluate, ComparisonRow, MetricsReport};
use crate::synthbench::{generate_dataset, synthesize_captions, BenchSpec};
use crate::train::{self, checkpoint_name, score_split, Split, TrainConfig, ValidationGroups};

pub const TRAIN_FILE: &str = "train.csv";
pub const VAL_FILE: &str = "val.csv";
pub const TEST_FILE: &str = "test.csv";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const BEST_MARKER: &str = "best_checkpoint";
pub const HISTORY_FILE: &str = "history.csv";
pub const INITIAL_TABLE: &str = "spuriousness_initial.csv";
pub const FINAL_TABLE: &str = "spuriousness_final.csv";

#[derive(Debug, Parser)]
#[command(name = "spume", version, about = "Spuriousness-aware episodic training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark: splits, captions and lexicon.
    Gendata(GendataArgs),
    /// Train an extractor and write history, checkpoints and spuriousness tables.
    Train(TrainArgs),
    /// Score every class-attribute pair under a checkpoint.
    Audit(AuditArgs),
    /// Report average, worst-group and per-group accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Collect several evaluation reports into one comparison CSV.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding the split, caption and lexicon files.
    #[arg(long)]
    pub data: PathBuf,
    /// Caption file, if not in the data directory.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Lexicon file, if not in the data directory.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    pub caption_format: CaptionFormat,
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    /// Benchmark spec; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Also write an SVG of initial against final scores.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Checkpoint file, or a training output directory (uses its best checkpoint).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "tanh-abs-log")]
    pub metric: MetricKind,
    #[arg(long, default_value_t = 10)]
    pub min_frequency: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for symmetry with other commands; auditing draws no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 10)]
    pub min_frequency: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `label=path/to/report.json` entries, in output order. Labels may not
    /// contain `=`.
    #[arg(required = true)]
    pub reports: Vec<String>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG next to the CSV, plotting against numeric labels.
    #[arg(long)]
    pub plot: bool,
}

struct Corpus {
    captions: CaptionSet,
    lexicon: PosLexicon,
}

impl DataArgs {
    fn split(&self, name: &str) -> Result<FeatureStore> {
        let file = match name {
            "train" => TRAIN_FILE,
            "val" => VAL_FILE,
            "test" => TEST_FILE,
            other => return Err(Error::Config(format!("unknown split `{other}`"))),
        };
        FeatureStore::load(&self.data.join(file))
    }

    fn corpus(&self) -> Result<Corpus> {
        let captions = self.captions.clone().unwrap_or_else(|| self.data.join(CAPTIONS_FILE));
        let lexicon = self.lexicon.clone().unwrap_or_else(|| self.data.join(LEXICON_FILE));
        Ok(Corpus {
            captions: load_captions(&captions, self.caption_format)?,
            lexicon: PosLexicon::load(&lexicon)?,
        })
    }
}

impl Corpus {
    /// Attribute vocabulary of the training split's captions.
    fn vocabulary(&self, train: &FeatureStore, min_frequency: usize) -> Result<AttributeVocabulary> {
        let train_captions = self.captions.subset(train.ids())?;
        build_vocabulary(&train_captions, &self.lexicon, min_frequency)
    }

    fn incidence(&self, vocab: &AttributeVocabulary, store: &FeatureStore) -> Result<AttributeIncidence> {
        build_incidence(&self.captions, vocab, &self.lexicon, store.ids())
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|k| k.to_string()).collect()
}

/// A checkpoint file, or the best checkpoint of a training output directory.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        let marker = path.join(BEST_MARKER);
        let name = fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?;
        Ok(path.join(name.trim()))
    } else {
        Ok(path.to_path_buf())
    }
}

pub fn cmd_gendata(args: &GendataArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => BenchSpec::load(path)?,
        None => BenchSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dataset = generate_dataset(&spec)?;
    let (captions, lexicon) = synthesize_captions(&dataset, &spec)?;
    create_dir(&args.out)?;
    dataset.train.save(&args.out.join(TRAIN_FILE))?;
    dataset.val.save(&args.out.join(VAL_FILE))?;
    dataset.test.save(&args.out.join(TEST_FILE))?;
    captions.save(&args.out.join(CAPTIONS_FILE))?;
    lexicon.save(&args.out.join(LEXICON_FILE))?;
    write(&args.out.join("spec.txt"), &spec.to_spec_string())
}

fn write_table(path: &Path, table: &SpuriousnessTable, vocab: &AttributeVocabulary) -> Result<()> {
    table.write_csv(path, &class_names(table.n_classes()), vocab.attributes(), true)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let train_store = args.data.split("train")?;
    let val_store = args.data.split("val")?;
    let corpus = args.data.corpus()?;
    let vocab = corpus.vocabulary(&train_store, cfg.min_frequency)?;
    let train_inc = corpus.incidence(&vocab, &train_store)?;
    let val_inc = corpus.incidence(&vocab, &val_store)?;
    let train_split = Split::new(&train_store, &train_inc)?;
    let val_split = Split::new(&val_store, &val_inc)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let outcome = pool.install(|| train::run(&cfg, train_split, val_split))?;

    create_dir(&args.out)?;
    write(&args.out.join("config.txt"), &cfg.to_config_string())?;
    write(&args.out.join("vocabulary.txt"), &(vocab.attributes().join("\n") + "\n"))?;
    outcome.history.save(&args.out.join(HISTORY_FILE))?;
    for ckpt in &outcome.snapshots {
        ckpt.save(&args.out.join(checkpoint_name(ckpt.epoch)))?;
    }
    write(&args.out.join(BEST_MARKER), &format!("{}\n", checkpoint_name(outcome.best().epoch)))?;
    write_table(&args.out.join(INITIAL_TABLE), &outcome.initial_table, &vocab)?;
    write_table(&args.out.join(FINAL_TABLE), &outcome.final_table, &vocab)?;
    if args.plot {
        let points: Vec<(f64, f64)> = outcome
            .initial_table
            .scores()
            .iter()
            .zip(outcome.final_table.scores())
            .map(|(&a, &b)| (a, b))
            .collect();
        let svg = scatter_svg("Spuriousness before and after training", "initial", "final", &points);
        write(&args.out.join("spuriousness.svg"), &svg)?;
    }
    Ok(())
}

fn classifier_for(ckpt: &Checkpoint, train: &FeatureStore) -> Result<Classifier> {
    if ckpt.params.input_dim() != train.dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features, data has {}",
            ckpt.params.input_dim(),
            train.dim()
        )));
    }
    Classifier::from_checkpoint(ckpt, train)
}

pub fn cmd_audit(args: &AuditArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&resolve_checkpoint(&args.checkpoint)?)?;
    let train_store = args.data.split("train")?;
    let corpus = args.data.corpus()?;
    let vocab = corpus.vocabulary(&train_store, args.min_frequency)?;
    let inc = corpus.incidence(&vocab, &train_store)?;
    let index = Split::new(&train_store, &inc)?.group_index()?;
    let classifier = classifier_for(&ckpt, &train_store)?;
    let table = score_split(&classifier, &ckpt.params, &train_store, &index, args.metric, ckpt.epoch)?;
    create_dir(&args.out)?;
    write_table(&args.out.join("spuriousness.csv"), &table, &vocab)?;
    if args.plot {
        let points: Vec<(f64, f64)> = table
            .sorted_descending()
            .iter()
            .enumerate()
            .map(|(rank, &(_, _, s))| (rank as f64, s))
            .collect();
        let svg = scatter_svg("Spuriousness scores", "rank", "score", &points);
        write(&args.out.join("spuriousness.svg"), &svg)?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(&resolve_checkpoint(&args.checkpoint)?)?;
    let train_store = args.data.split("train")?;
    let target = args.data.split(&args.split)?;
    let classifier = classifier_for(&ckpt, &train_store)?;
    let has_corpus = {
        let c = args.data.captions.clone().unwrap_or_else(|| args.data.data.join(CAPTIONS_FILE));
        c.exists()
    };
    let groups = if has_corpus {
        let corpus = args.data.corpus()?;
        let vocab = corpus.vocabulary(&train_store, args.min_frequency)?;
        let inc = corpus.incidence(&vocab, &target)?;
        Some(ValidationGroups::build(Split::new(&target, &inc)?)?)
    } else {
        None
    };
    let report = evaluate(&classifier, &ckpt.params, &target, groups.as_ref())?;
    create_dir(&args.out)?;
    report.save(&args.out.join("report.csv"), &args.out.join("report.json"))?;
    Ok(report)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for entry in &args.reports {
        let (label, path) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected label=path, got `{entry}`")))?;
        let path = Path::new(path);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report = MetricsReport::from_json(&text)?;
        rows.push(ComparisonRow {
            label: label.to_string(),
            average: report.average,
            worst_group: report.worst_group,
            gap: report.gap,
        });
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(&args.out, &comparison_csv(&rows))?;
    if args.plot {
        let numeric: Option<Vec<f64>> = rows
            .iter()
            .map(|r| r.label.parse().ok())
            .collect();
        let xs = numeric.unwrap_or_else(|| (0..rows.len()).map(|i| i as f64).collect());
        let series = |name: &str, f: fn(&ComparisonRow) -> f64| {
            (name.to_string(), xs.iter().zip(&rows).map(|(&x, r)| (x, f(r))).collect())
        };
        let svg = line_svg(
            "Accuracy by run",
            "run",
            "accuracy",
            &[series("average", |r| r.average), series("worst-group", |r| r.worst_group)],
        );
        write(&args.out.with_extension("svg"), &svg)?;
    }
    Ok(rows)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gendata(a) => cmd_gendata(a),
        Command::Train(a) => cmd_train(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Eval(a) => {
            let r = cmd_eval(a)?;
            println!(
                "average {:.4}  worst-group {:.4}  gap {:.4}",
                r.average, r.worst_group, r.gap
            );
            Ok(())
        }
        Command::Compare(a) => cmd_compare(a).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
