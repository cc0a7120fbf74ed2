//! The `segtool` command line.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when input data is
//! missing, malformed or inconsistent. Diagnostics go to stderr.

mod config;
mod experiment;

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{self, agreement, corpus_stats, AnnotatedDocument, AGREEMENT_CLASSES};
use crate::embeddings::{load_streams, save_streams, ContextualStreamSet, LookupTable};
use crate::evalmetrics::{evaluate_documents, Averaging};
use crate::retrieval::{
    self, estimate_boosts, segment_question, whole_question, BoostProfile, FieldedIndex,
    RetrievalQuery, DEFAULT_K,
};
use crate::synth;
use crate::trainer::{self, gradcheck, gradcheck_all, Component, SegModel};

pub use config::CliConfig;
pub use experiment::{grid, run_experiment, Cell, Recipe};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    corpus::CorpusError,
    crate::embeddings::EmbeddingError,
    crate::evalmetrics::EvalError,
    trainer::TrainError,
    retrieval::RetrievalError,
    crate::baselines::BaselineError,
    std::io::Error,
    serde_json::Error
);

type CliResult = Result<(), CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "segtool",
    version,
    about = "Segment technical questions into commands, outputs, errors, file contents, structured data and paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Random seed; overrides the seed in --config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for document-level work. 1 is bit-reproducible.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Question, word and span statistics of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token-level Cohen's kappa between two annotations of one corpus.
    Agree {
        #[arg(long)]
        corpus: PathBuf,
        /// The second annotation.
        #[arg(long)]
        other: PathBuf,
    },
    /// Train a segmentation model.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Validation corpus; when absent, --corpus is split 80:10:10.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        streams: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the trained model.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Label a corpus with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        streams: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Soft precision, recall and F1 of predicted spans against gold spans.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Average per document instead of pooling spans.
        #[arg(long)]
        r#macro: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ComponentArg::All)]
        component: ComponentArg,
        #[arg(long, default_value_t = 30)]
        probes: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a BM25 index over answers (JSON lines of {"id","text"}).
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip answers with fewer terms.
        #[arg(long, default_value_t = 0)]
        min_len: usize,
        /// File of answer ids to leave out, one per line.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Search an index with a question.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        /// Segmentation model used to split the query into fields.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        boosts: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Estimate per-label boosts from annotated questions and their answers.
    Boosts {
        /// Annotated questions.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean reciprocal rank of the correct answers.
    Mrr {
        #[arg(long)]
        index: PathBuf,
        /// Questions to evaluate.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Fielded queries with these boosts; without it the whole question
        /// is one field.
        #[arg(long)]
        boosts: Option<PathBuf>,
        /// Segment questions with this model instead of their annotation.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        streams: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run an ablation grid and write one report per cell plus a summary.
    Experiment {
        #[arg(value_enum)]
        recipe: Recipe,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        streams: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic data set.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ComponentArg {
    All,
    Crf,
    Gru,
    Char,
    AttentionWeighted,
    AttentionUnweighted,
    Dme,
    Cdme,
    Logistic,
    Model,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SynthKind {
    /// Labelled questions with label-specific vocabularies.
    Segments,
    /// Questions whose labels are visible only through three streams.
    Streams,
    /// Answers, annotated questions and relevance pairs.
    Retrieval,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("segtool: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Stats { corpus, out } => stats(&corpus, out.as_deref()),
        Command::Agree { corpus, other } => agree(&corpus, &other),
        Command::Train {
            corpus,
            val,
            test,
            streams,
            config,
            model,
            common,
        } => train(
            &corpus,
            val.as_deref(),
            test.as_deref(),
            streams.as_deref(),
            config.as_deref(),
            &model,
            &common,
        ),
        Command::Predict {
            model,
            corpus,
            streams,
            out,
            common,
        } => predict(&model, &corpus, streams.as_deref(), &out, common.jobs),
        Command::Eval {
            gold,
            pred,
            r#macro,
            out,
        } => eval(&gold, &pred, r#macro, out.as_deref()),
        Command::Gradcheck {
            component,
            probes,
            tolerance,
            seed,
        } => gradcheck_cmd(component, probes, tolerance, seed),
        Command::Index {
            corpus,
            out,
            min_len,
            exclude,
        } => index(&corpus, &out, min_len, exclude.as_deref()),
        Command::Search {
            index,
            query,
            model,
            boosts,
            k,
        } => search(&index, &query, model.as_deref(), boosts.as_deref(), k),
        Command::Boosts {
            corpus,
            answers,
            qrels,
            out,
        } => boosts(&corpus, &answers, &qrels, &out),
        Command::Mrr {
            index,
            corpus,
            qrels,
            boosts,
            model,
            streams,
            k,
            common,
        } => mrr(
            &index,
            &corpus,
            &qrels,
            boosts.as_deref(),
            model.as_deref(),
            streams.as_deref(),
            k,
            common.jobs,
        ),
        Command::Experiment {
            recipe,
            corpus,
            val,
            test,
            streams,
            config,
            out,
            common,
        } => {
            let cfg = load_config(config.as_deref(), common.seed)?;
            let data = load_data(&corpus, val.as_deref(), test.as_deref(), &cfg)?;
            let set = stream_set(streams.as_deref(), &cfg, &data)?;
            let cells = run_experiment(
                recipe,
                &cfg,
                &data,
                set.as_ref(),
                &out,
                common.jobs,
                |line| eprintln!("{line}"),
            )?;
            print!("{}", experiment::summary_table(&cells));
            Ok(())
        }
        Command::Synth {
            kind,
            out,
            docs,
            seed,
        } => synth_cmd(kind, &out, docs, seed),
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_docs(path: &Path) -> Result<Vec<AnnotatedDocument>, CliError> {
    corpus::load_corpus(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<CliConfig, CliError> {
    let mut cfg = match path {
        Some(p) => CliConfig::from_text(&read_to_string(p)?)?,
        None => CliConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// Train, validation and test documents.
pub struct Data {
    pub train: Vec<AnnotatedDocument>,
    pub val: Vec<AnnotatedDocument>,
    pub test: Vec<AnnotatedDocument>,
}

fn load_data(
    corpus: &Path,
    val: Option<&Path>,
    test: Option<&Path>,
    cfg: &CliConfig,
) -> Result<Data, CliError> {
    let docs = load_docs(corpus)?;
    match val {
        Some(v) => Ok(Data {
            train: docs,
            val: load_docs(v)?,
            test: test.map(load_docs).transpose()?.unwrap_or_default(),
        }),
        None => {
            let s = corpus::split_corpus(&docs, (0.8, 0.1, 0.1), cfg.train.seed)?;
            let test = match test {
                Some(t) => load_docs(t)?,
                None => s.test,
            };
            Ok(Data {
                train: s.train,
                val: s.val,
                test,
            })
        }
    }
}

fn all_docs(data: &Data) -> Vec<AnnotatedDocument> {
    data.train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .cloned()
        .collect()
}

/// Streams from `--streams`, else from the config file.
fn stream_set(
    flag: Option<&Path>,
    cfg: &CliConfig,
    data: &Data,
) -> Result<Option<ContextualStreamSet>, CliError> {
    match flag.or(cfg.stream_file.as_deref()) {
        Some(p) => Ok(Some(load_streams(p, &all_docs(data))?)),
        None => Ok(None),
    }
}

fn stats(path: &Path, out: Option<&Path>) -> CliResult {
    let docs = load_docs(path)?;
    let s = corpus_stats(&docs)?;
    println!("{}", crate::corpus::CorpusStats::table_header());
    println!("{}", s.table_row("corpus"));
    println!("{}", serde_json::to_string_pretty(&s.to_json())?);
    if let Some(o) = out {
        write_json(o, &s.to_json())?;
    }
    Ok(())
}

fn agree(a: &Path, b: &Path) -> CliResult {
    let report = agreement(&load_docs(a)?, &load_docs(b)?)?;
    println!("kappa {:.6}", report.kappa);
    print!("{:>6}", "");
    for name in AGREEMENT_CLASSES {
        print!(" {name:>8}");
    }
    println!();
    for (name, row) in AGREEMENT_CLASSES.iter().zip(&report.confusion) {
        print!("{name:>6}");
        for c in row {
            print!(" {c:>8}");
        }
        println!();
    }
    Ok(())
}

fn train(
    corpus: &Path,
    val: Option<&Path>,
    test: Option<&Path>,
    streams: Option<&Path>,
    config: Option<&Path>,
    model_path: &Path,
    common: &Common,
) -> CliResult {
    let cfg = load_config(config, common.seed)?;
    let data = load_data(corpus, val, test, &cfg)?;
    let set = stream_set(streams, &cfg, &data)?;
    let pretrained = cfg
        .pretrained_words
        .as_deref()
        .map(LookupTable::load_text)
        .transpose()?;
    let outcome = trainer::train_with_lookup(
        &data.train,
        &data.val,
        set.as_ref(),
        &cfg.train,
        pretrained,
        |log| eprintln!("{log}"),
    )?;
    trainer::save_model(&outcome.model, model_path)?;
    let mut summary = serde_json::json!({
        "train_docs": data.train.len(),
        "val_docs": data.val.len(),
        "epochs": outcome.log.len(),
        "best_epoch": outcome.best_epoch,
    });
    if !data.test.is_empty() {
        let test = trainer::score(&outcome.model, &data.test, set.as_ref(), common.jobs)?;
        summary["test"] = serde_json::to_value(test)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_model_and_streams(
    model: &Path,
    streams: Option<&Path>,
    docs: &[AnnotatedDocument],
) -> Result<(SegModel, Option<ContextualStreamSet>), CliError> {
    let m = trainer::load_model(model)
        .map_err(|e| CliError::Data(format!("{}: {e}", model.display())))?;
    let set = streams.map(|p| load_streams(p, docs)).transpose()?;
    Ok((m, set))
}

fn predict(
    model: &Path,
    corpus: &Path,
    streams: Option<&Path>,
    out: &Path,
    jobs: usize,
) -> CliResult {
    let docs = load_docs(corpus)?;
    let (m, set) = load_model_and_streams(model, streams, &docs)?;
    let spans = m.predict_all(&docs, set.as_ref(), jobs)?;
    let labelled = docs
        .iter()
        .zip(spans)
        .map(|(d, s)| d.relabelled(s))
        .collect::<Result<Vec<_>, _>>()?;
    corpus::save_corpus(&labelled, out)?;
    eprintln!("labelled {} documents", labelled.len());
    Ok(())
}

fn eval(gold: &Path, pred: &Path, macro_avg: bool, out: Option<&Path>) -> CliResult {
    let g = load_docs(gold)?;
    let p = load_docs(pred)?;
    if g.len() != p.len() {
        return Err(CliError::Data(format!(
            "{} gold documents but {} predicted",
            g.len(),
            p.len()
        )));
    }
    let by_id: HashMap<&str, &AnnotatedDocument> = p.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut gold_spans = Vec::with_capacity(g.len());
    let mut pred_spans = Vec::with_capacity(g.len());
    for d in &g {
        let q = by_id
            .get(d.id.as_str())
            .ok_or_else(|| CliError::Data(format!("no prediction for document {:?}", d.id)))?;
        if q.len() != d.len() {
            return Err(CliError::Data(format!(
                "document {:?} has {} gold tokens but {} predicted",
                d.id,
                d.len(),
                q.len()
            )));
        }
        gold_spans.push(d.spans.clone());
        pred_spans.push(q.spans.clone());
    }
    let averaging = if macro_avg {
        Averaging::Macro
    } else {
        Averaging::Micro
    };
    let report = evaluate_documents(&gold_spans, &pred_spans, averaging)?;
    print!("{}", report.table());
    println!("micro F1 {:.4}", report.micro.f1);
    if let Some(o) = out {
        write_json(o, &report.to_json())?;
    }
    Ok(())
}

fn gradcheck_cmd(component: ComponentArg, probes: usize, tolerance: f64, seed: u64) -> CliResult {
    if probes == 0 || !(tolerance > 0.0) {
        return Err(CliError::Usage(
            "probes and tolerance must be positive".into(),
        ));
    }
    let reports = match component {
        ComponentArg::All => gradcheck_all(probes, tolerance, seed),
        other => {
            let name = other
                .to_possible_value()
                .expect("no skipped variants")
                .get_name()
                .to_string();
            let c: Component = name.parse().map_err(CliError::Usage)?;
            vec![gradcheck(c, probes, tolerance, seed)]
        }
    };
    let mut failed = 0;
    for r in &reports {
        println!("{}", r.line());
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::Data(format!(
            "{failed} component(s) failed the gradient check"
        )));
    }
    Ok(())
}

fn index(corpus: &Path, out: &Path, min_len: usize, exclude: Option<&Path>) -> CliResult {
    let answers = retrieval::load_answers(corpus)?;
    let exclusions: HashSet<String> = match exclude {
        Some(p) => read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => HashSet::new(),
    };
    let idx = FieldedIndex::build(&answers, min_len, &exclusions)?;
    retrieval::save_index(&idx, out)?;
    eprintln!(
        "indexed {} of {} answers, {} terms",
        idx.len(),
        answers.len(),
        idx.postings.len()
    );
    Ok(())
}

fn load_boosts(path: &Path) -> Result<BoostProfile, CliError> {
    let value: serde_json::Value = serde_json::from_str(&read_to_string(path)?)?;
    Ok(BoostProfile::from_json(&value)?)
}

fn search(
    index: &Path,
    query: &str,
    model: Option<&Path>,
    boosts: Option<&Path>,
    k: usize,
) -> CliResult {
    let idx = retrieval::load_index(index)?;
    let doc = AnnotatedDocument::new("query", query);
    let fields = match model {
        Some(p) => {
            let (m, _) = load_model_and_streams(p, None, &[])?;
            segment_question(&doc, &m.predict(&doc, None)?)
        }
        None => whole_question(&doc),
    };
    let profile = boosts
        .map(load_boosts)
        .transpose()?
        .unwrap_or_else(BoostProfile::uniform);
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for (rank, hit) in idx.search(&fields, &profile, k)?.iter().enumerate() {
        writeln!(w, "{}\t{}\t{:.6}", rank + 1, hit.id, hit.score)?;
    }
    Ok(())
}

fn qrel_map(path: &Path) -> Result<HashMap<String, String>, CliError> {
    Ok(retrieval::load_qrels(path)?.into_iter().collect())
}

fn boosts(corpus: &Path, answers: &Path, qrels: &Path, out: &Path) -> CliResult {
    let questions = load_docs(corpus)?;
    let answers = retrieval::load_answers(answers)?;
    let by_id: HashMap<&str, &retrieval::AnswerDoc> =
        answers.iter().map(|a| (a.id.as_str(), a)).collect();
    let rel = qrel_map(qrels)?;
    let pairs: Vec<_> = questions
        .iter()
        .filter_map(|q| {
            let a = rel.get(&q.id)?;
            Some((q, *by_id.get(a.as_str())?))
        })
        .collect();
    let profile = estimate_boosts(&pairs)?;
    write_json(out, &profile.to_json())?;
    println!("{}", serde_json::to_string(&profile.to_json())?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn mrr(
    index: &Path,
    corpus: &Path,
    qrels: &Path,
    boosts: Option<&Path>,
    model: Option<&Path>,
    streams: Option<&Path>,
    k: usize,
    jobs: usize,
) -> CliResult {
    let idx = retrieval::load_index(index)?;
    let questions = load_docs(corpus)?;
    let rel = qrel_map(qrels)?;
    let profile = boosts.map(load_boosts).transpose()?;
    let predicted = match (&profile, model) {
        (Some(_), Some(p)) => {
            let (m, set) = load_model_and_streams(p, streams, &questions)?;
            Some(m.predict_all(&questions, set.as_ref(), jobs)?)
        }
        _ => None,
    };
    let mut queries = Vec::new();
    for (i, q) in questions.iter().enumerate() {
        let Some(gold) = rel.get(&q.id) else {
            continue;
        };
        let fields = match (&profile, &predicted) {
            (None, _) => whole_question(q),
            (Some(_), Some(p)) => segment_question(q, &p[i]),
            (Some(_), None) => segment_question(q, &q.spans),
        };
        queries.push(RetrievalQuery {
            fields,
            gold: gold.clone(),
        });
    }
    let value = retrieval::mrr(&idx, &queries, profile.as_ref(), k, jobs)?;
    println!("questions {}", queries.len());
    println!("MRR {value:.6}");
    Ok(())
}

fn synth_cmd(kind: SynthKind, out: &Path, docs: usize, seed: u64) -> CliResult {
    if docs == 0 {
        return Err(CliError::Usage("--docs must be positive".into()));
    }
    fs::create_dir_all(out)?;
    match kind {
        SynthKind::Segments => {
            let corpus = synth::segmentation_corpus(docs, 60, 200, seed);
            corpus::save_corpus(&corpus, out.join("corpus.jsonl"))?;
        }
        SynthKind::Streams => {
            let (corpus, set) = synth::stream_task(docs, 30, 0.3, seed);
            corpus::save_corpus(&corpus, out.join("corpus.jsonl"))?;
            save_streams(&set, out.join("streams.bin"))?;
        }
        SynthKind::Retrieval => {
            let r = synth::retrieval_set(docs, docs * 3 / 5, seed);
            retrieval::write_answers(&r.answers, fs::File::create(out.join("answers.jsonl"))?)?;
            corpus::save_corpus(&r.questions, out.join("questions.jsonl"))?;
            let mut f = std::io::BufWriter::new(fs::File::create(out.join("qrels.tsv"))?);
            for (q, a) in &r.qrels {
                writeln!(f, "{q}\t{a}")?;
            }
            f.flush()?;
        }
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}
