//! Command-line front end.
//!
//! Every flag may also be given as a key of the same name in a flat TOML
//! file passed with `--config`; flags on the command line win. Exit status is
//! 0 on success, 1 when some samples could not be scored, 2 on fatal errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::artifact_io::{
    file_digest, load_assignment, load_embedding_matrix, load_vocab, read_labels, read_scores,
    read_stopwords, save_assignment, sha256_hex, stream_traces, write_scores, StopwordSet,
};
use crate::cluster::{
    cluster_tokens, Algorithm, ClusterConfig, EmbeddingMode, Linkage, Metric, DEFAULT_K,
    DEFAULT_MEMORY_BUDGET,
};
use crate::evaluator::evaluate;
use crate::scorer::{score_corpus, Method, ScoreConfig, Scorer, SkipRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_FATAL: i32 = 2;

pub const MEMORY_BUDGET_ENV: &str = "STC_MEMORY_BUDGET";
pub const DEFAULT_METHODS: &str = "stc,probability,perplexity";

#[derive(Debug, Parser)]
#[command(name = "stc", version, about = "Semantic token clustering uncertainty scores", args_override_self = true)]
struct Cli {
    /// Flat TOML file with defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition the vocabulary into semantic clusters.
    Cluster(ClusterArgs),
    /// Score generation traces.
    Score(ScoreArgs),
    /// Compute AUROC and PRR of scores against labels.
    Eval(EvalArgs),
    /// Cluster, score and (with --labels) evaluate in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Default)]
struct ClusterOpts {
    #[arg(long, value_name = "FILE")]
    input_emb: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    output_emb: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    stopwords: Option<PathBuf>,
    /// Number of clusters [default: 16000].
    #[arg(long)]
    k: Option<usize>,
    /// [default: complete]
    #[arg(long, value_enum)]
    linkage: Option<Linkage>,
    /// [default: cosine]
    #[arg(long, value_enum)]
    metric: Option<Metric>,
    /// Embeddings to cluster [default: concat].
    #[arg(long, value_enum)]
    mode: Option<EmbeddingMode>,
    /// [default: agglomerative]
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    /// k-means seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Distance-matrix limit, e.g. 4G or 512M [default: $STC_MEMORY_BUDGET or 4G].
    #[arg(long, value_name = "BYTES")]
    memory_budget: Option<String>,
}

#[derive(Debug, Args, Default)]
struct ScoreOpts {
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Comma-separated: stc, stc-no-clusters, stc-no-prefix, probability, perplexity.
    #[arg(long)]
    methods: Option<String>,
    /// Drop the embedding-cluster set from every STC method.
    #[arg(long)]
    no_embedding_clusters: bool,
    /// Drop the prefix-matched set from every STC method.
    #[arg(long)]
    no_prefix: bool,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    opts: ClusterOpts,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    clusters: Option<PathBuf>,
    #[command(flatten)]
    opts: ScoreOpts,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    cluster: ClusterOpts,
    #[command(flatten)]
    score: ScoreOpts,
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum BudgetValue {
    Bytes(u64),
    Text(String),
}

/// Contents of a `--config` file. Keys are the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    threads: Option<usize>,
    input_emb: Option<PathBuf>,
    output_emb: Option<PathBuf>,
    vocab: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    k: Option<usize>,
    linkage: Option<Linkage>,
    metric: Option<Metric>,
    mode: Option<EmbeddingMode>,
    algorithm: Option<Algorithm>,
    seed: Option<u64>,
    memory_budget: Option<BudgetValue>,
    trace: Option<PathBuf>,
    clusters: Option<PathBuf>,
    methods: Option<String>,
    no_embedding_clusters: Option<bool>,
    no_prefix: Option<bool>,
    scores: Option<PathBuf>,
    labels: Option<PathBuf>,
    out: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn required(flag: &str, cli: Option<PathBuf>, file: &Option<PathBuf>) -> Result<PathBuf> {
    cli.or_else(|| file.clone())
        .ok_or_else(|| anyhow!("missing required --{flag}"))
}

/// Parses `4294967296`, `4G`, `512M`, `64K` (binary multiples).
pub fn parse_memory_budget(s: &str) -> Result<u64> {
    let s = s.trim();
    let (digits, shift) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let shift = match c.to_ascii_uppercase() {
                'K' => 10,
                'M' => 20,
                'G' => 30,
                'T' => 40,
                _ => bail!("invalid memory budget {s:?}: unknown suffix {c:?}"),
            };
            (&s[..i], shift)
        }
        _ => (s, 0),
    };
    let n: u64 = digits
        .trim()
        .parse()
        .map_err(|_| anyhow!("invalid memory budget {s:?}"))?;
    n.checked_mul(1u64 << shift)
        .ok_or_else(|| anyhow!("memory budget {s:?} overflows"))
}

fn resolve_budget(cli: Option<&str>, file: &Option<BudgetValue>) -> Result<u64> {
    if let Some(s) = cli {
        return parse_memory_budget(s);
    }
    match file {
        Some(BudgetValue::Bytes(b)) => return Ok(*b),
        Some(BudgetValue::Text(s)) => return parse_memory_budget(s),
        None => {}
    }
    match std::env::var(MEMORY_BUDGET_ENV) {
        Ok(s) => parse_memory_budget(&s).with_context(|| format!("in ${MEMORY_BUDGET_ENV}")),
        Err(_) => Ok(DEFAULT_MEMORY_BUDGET),
    }
}

/// Parses a `--methods` list and applies the ablation switches to every STC
/// entry. Duplicates are dropped.
pub fn parse_methods(list: &str, no_clusters: bool, no_prefix: bool) -> Result<Vec<ScoreConfig>> {
    let mut out: Vec<ScoreConfig> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mut cfg = match name {
            "stc-no-clusters" => ScoreConfig { use_embedding_clusters: false, ..ScoreConfig::default() },
            "stc-no-prefix" => ScoreConfig { use_prefix: false, ..ScoreConfig::default() },
            "stc-no-clusters-no-prefix" => ScoreConfig {
                use_embedding_clusters: false,
                use_prefix: false,
                ..ScoreConfig::default()
            },
            other => ScoreConfig::new(other.parse::<Method>()?),
        };
        if cfg.method == Method::Stc {
            cfg.use_embedding_clusters &= !no_clusters;
            cfg.use_prefix &= !no_prefix;
        }
        if !out.iter().any(|c| c.label() == cfg.label()) {
            out.push(cfg);
        }
    }
    if out.is_empty() {
        bail!("--methods names no method");
    }
    Ok(out)
}

struct ClusterJob {
    input_emb: PathBuf,
    output_emb: Option<PathBuf>,
    vocab: PathBuf,
    stopwords: Option<PathBuf>,
    cfg: ClusterConfig,
}

impl ClusterJob {
    fn resolve(vocab: Option<PathBuf>, o: ClusterOpts, f: &FileConfig) -> Result<Self> {
        let defaults = ClusterConfig::default();
        let cfg = ClusterConfig {
            k: o.k.or(f.k).unwrap_or(DEFAULT_K),
            metric: o.metric.or(f.metric).unwrap_or(defaults.metric),
            linkage: o.linkage.or(f.linkage).unwrap_or(defaults.linkage),
            embedding_mode: o.mode.or(f.mode).unwrap_or(defaults.embedding_mode),
            algorithm: o.algorithm.or(f.algorithm).unwrap_or(defaults.algorithm),
            seed: o.seed.or(f.seed).unwrap_or(defaults.seed),
            memory_budget: resolve_budget(o.memory_budget.as_deref(), &f.memory_budget)?,
        };
        Ok(ClusterJob {
            input_emb: required("input-emb", o.input_emb, &f.input_emb)?,
            output_emb: o.output_emb.or_else(|| f.output_emb.clone()),
            vocab: required("vocab", vocab, &f.vocab)?,
            stopwords: o.stopwords.or_else(|| f.stopwords.clone()),
            cfg,
        })
    }

    fn run(&self, out: &Path) -> Result<String> {
        let mut inputs = BTreeMap::new();
        inputs.insert("input_emb".to_string(), file_digest(&self.input_emb)?);
        inputs.insert("vocab".to_string(), file_digest(&self.vocab)?);
        let input_emb = load_embedding_matrix(&self.input_emb)?;
        let output_emb = match &self.output_emb {
            Some(p) => {
                inputs.insert("output_emb".to_string(), file_digest(p)?);
                Some(load_embedding_matrix(p)?)
            }
            None => None,
        };
        let stopwords = match &self.stopwords {
            Some(p) => {
                inputs.insert("stopwords".to_string(), file_digest(p)?);
                read_stopwords(p)?
            }
            None => StopwordSet::default(),
        };
        let vocab = load_vocab(&self.vocab)?;
        let outcome = cluster_tokens(&input_emb, output_emb.as_ref(), &vocab, &stopwords, &self.cfg, inputs)?;
        save_assignment(&outcome.assignment, out)?;
        Ok(outcome.report_line())
    }
}

struct ScoreJob {
    trace: PathBuf,
    vocab: PathBuf,
    clusters: PathBuf,
    methods: Vec<ScoreConfig>,
}

/// Sidecar written next to `scores.csv`, whose header is fixed.
#[derive(Debug, Serialize)]
struct ScoresMeta<'a> {
    config_fingerprint: String,
    methods: Vec<String>,
    inputs: BTreeMap<&'static str, String>,
    clusters_fingerprint: &'a str,
    samples: usize,
    rows: usize,
    skipped: &'a [SkipRecord],
}

pub fn scores_meta_path(scores: &Path) -> PathBuf {
    let mut s = scores.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

impl ScoreJob {
    fn resolve(
        vocab: Option<PathBuf>,
        clusters: Option<PathBuf>,
        o: ScoreOpts,
        f: &FileConfig,
    ) -> Result<Self> {
        let list = o.methods.or_else(|| f.methods.clone());
        let no_clusters = o.no_embedding_clusters || f.no_embedding_clusters.unwrap_or(false);
        let no_prefix = o.no_prefix || f.no_prefix.unwrap_or(false);
        Ok(ScoreJob {
            trace: required("trace", o.trace, &f.trace)?,
            vocab: required("vocab", vocab, &f.vocab)?,
            clusters: required("clusters", clusters, &f.clusters)?,
            methods: parse_methods(list.as_deref().unwrap_or(DEFAULT_METHODS), no_clusters, no_prefix)?,
        })
    }

    /// Returns the summary line and whether any sample was skipped.
    fn run(&self, out: &Path) -> Result<(String, bool)> {
        let start = Instant::now();
        let vocab = load_vocab(&self.vocab)?;
        let assignment = load_assignment(&self.clusters, Some(&vocab))?;
        let scorer = Scorer::new(&vocab, &assignment)?;
        let scores = score_corpus(stream_traces(&self.trace)?, &scorer, &self.methods)?;
        write_scores(&scores.table, out)?;

        let mut inputs = BTreeMap::new();
        inputs.insert("trace", file_digest(&self.trace)?);
        inputs.insert("vocab", file_digest(&self.vocab)?);
        inputs.insert("clusters", file_digest(&self.clusters)?);
        let methods: Vec<String> = self.methods.iter().map(ScoreConfig::label).collect();
        let fingerprint = sha256_hex(
            serde_json::json!({ "methods": methods, "inputs": inputs }).to_string().as_bytes(),
        );
        let meta = ScoresMeta {
            config_fingerprint: fingerprint,
            methods,
            inputs,
            clusters_fingerprint: &assignment.meta().config_fingerprint,
            samples: scores.samples,
            rows: scores.table.len(),
            skipped: &scores.skipped,
        };
        let meta_path = scores_meta_path(out);
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&meta_path, text).with_context(|| format!("writing {}", meta_path.display()))?;

        for s in &scores.skipped {
            eprintln!(
                "skipped {} ({}): {}",
                s.sample_id.as_deref().unwrap_or("<unparsed line>"),
                s.method.as_deref().unwrap_or("all methods"),
                s.reason
            );
        }
        let line = format!(
            "scored {} samples with {} methods ({} rows, {} skipped) in {:.3}s",
            scores.samples,
            self.methods.len(),
            scores.table.len(),
            scores.skipped.len(),
            start.elapsed().as_secs_f64()
        );
        Ok((line, !scores.skipped.is_empty()))
    }
}

#[derive(Debug, Deserialize)]
struct ScoresMetaIn {
    config_fingerprint: String,
}

fn run_eval(scores: &Path, labels: &Path, out: &Path) -> Result<String> {
    let table = read_scores(scores)?;
    let label_set = read_labels(labels)?;
    let mut report = evaluate(&table, &label_set)?;
    // Fall back to the score file's own digest when no sidecar exists.
    let scores_id = match fs::read_to_string(scores_meta_path(scores)) {
        Ok(text) => serde_json::from_str::<ScoresMetaIn>(&text)
            .with_context(|| format!("parsing {}", scores_meta_path(scores).display()))?
            .config_fingerprint,
        Err(_) => file_digest(scores)?,
    };
    let labels_digest = file_digest(labels)?;
    report.config_fingerprint = Some(sha256_hex(
        serde_json::json!({ "scores": scores_id, "labels": labels_digest }).to_string().as_bytes(),
    ));
    fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    let summary: Vec<String> = report
        .methods
        .iter()
        .map(|m| match (m.auroc, m.prr) {
            (Some(a), Some(p)) => format!("{} auroc={a:.4} prr={p:.4}", m.method),
            _ => format!("{} undefined", m.method),
        })
        .collect();
    Ok(format!(
        "evaluated {} methods ({} unlabeled samples): {}",
        report.methods.len(),
        report.missing_labels,
        summary.join(", ")
    ))
}

fn execute(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker threads")?;
    let out_or = |cli: Option<PathBuf>| required("out", cli, &file.out);

    pool.install(|| match cli.command {
        Command::Cluster(a) => {
            let out = out_or(a.out)?;
            let job = ClusterJob::resolve(a.vocab, a.opts, &file)?;
            println!("{}", job.run(&out)?);
            Ok(EXIT_OK)
        }
        Command::Score(a) => {
            let out = out_or(a.out)?;
            let job = ScoreJob::resolve(a.vocab, a.clusters, a.opts, &file)?;
            let (line, partial) = job.run(&out)?;
            println!("{line}");
            Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Eval(a) => {
            let out = out_or(a.out)?;
            let scores = required("scores", a.scores, &file.scores)?;
            let labels = required("labels", a.labels, &file.labels)?;
            println!("{}", run_eval(&scores, &labels, &out)?);
            Ok(EXIT_OK)
        }
        Command::Pipeline(a) => {
            let dir = required("out-dir", a.out_dir, &file.out_dir)?;
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let clusters = dir.join("clusters.stc");
            let cluster = ClusterJob::resolve(a.vocab.clone(), a.cluster, &file)?;
            let score = ScoreJob::resolve(a.vocab, Some(clusters.clone()), a.score, &file)?;
            println!("{}", cluster.run(&clusters)?);
            let scores = dir.join("scores.csv");
            let (line, partial) = score.run(&scores)?;
            println!("{line}");
            if let Some(labels) = a.labels.or_else(|| file.labels.clone()) {
                println!("{}", run_eval(&scores, &labels, &dir.join("report.json"))?);
            }
            Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
        }
    })
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}
