use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teachertrace::classify::Mode;
use teachertrace::corpus::{load_jsonl_with, Corpus, UnknownKeys};
use teachertrace::experiment::{
    run_attribution, run_perplexity, run_similarity, run_support_sweep, summarize, write_synthetic, ExperimentConfig,
    RunManifest, SynthParams,
};
use teachertrace::features::FeatureKind;
use teachertrace::perplexity::mock::{MockConfig, MockServer};
use teachertrace::similarity::MeasureKind;
use teachertrace::tagger::{load_conllu, train_tagger, TaggerModel};
use teachertrace::templates::{mine_templates, DEFAULT_CAPACITY, DEFAULT_WINDOW};
use teachertrace::{Error, Result};

/// Teacher-model attribution for distilled language models.
#[derive(Parser)]
#[command(name = "teachertrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus utilities.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Write a synthetic teacher/student family with a ready-to-run config.
    Synth(SynthArgs),
    /// Part-of-speech tagger.
    #[command(subcommand)]
    Tagger(TaggerCmd),
    /// PoS template vocabularies.
    #[command(subcommand)]
    Templates(TemplatesCmd),
    /// Train on teacher outputs and evaluate on student outputs.
    Attribute(RunArgs),
    /// Similarity of student outputs to each teacher, as a sole-feature probe.
    Similarity {
        #[command(flatten)]
        run: RunArgs,
        /// cosine_bow or bertscore.
        #[arg(long)]
        measure: Option<MeasureKind>,
        /// Token embeddings JSON for bertscore.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Perplexity of student outputs under each teacher endpoint.
    Perplexity {
        #[command(flatten)]
        run: RunArgs,
        /// TOML file with one [[endpoint]] table per teacher.
        #[arg(long)]
        endpoints: Option<PathBuf>,
        #[arg(long)]
        sample_n: Option<usize>,
    },
    /// Accuracy across support levels for several feature kinds.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated feature kinds.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<FeatureKind>>,
    },
    /// Summarize the reports in an output directory as Markdown.
    Report {
        dir: PathBuf,
        /// Also write the summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve mock completion models for offline tests.
    MockServer {
        /// JSON mock config: {"models": {"name": {...}}}.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Check a JSONL corpus and print per-label counts.
    Validate {
        path: PathBuf,
        /// Warn about unknown keys instead of failing.
        #[arg(long)]
        allow_unknown_keys: bool,
    },
}

#[derive(Subcommand)]
enum TaggerCmd {
    /// Train an averaged-perceptron tagger on CoNLL-U.
    Train {
        conllu: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report accuracy on this CoNLL-U file after training.
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Tag text (argument or stdin); prints one sentence per line as token/TAG.
    Tag {
        #[arg(long)]
        model: PathBuf,
        text: Option<String>,
    },
}

#[derive(Subcommand)]
enum TemplatesCmd {
    /// Mine the top-K length-L templates over the given corpora.
    Mine {
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
        #[arg(long)]
        tagger: PathBuf,
        #[arg(short = 'L', long = "window", default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(short = 'K', long = "capacity", default_value_t = DEFAULT_CAPACITY)]
        capacity: usize,
        /// Only mine documents with split = train.
        #[arg(long)]
        train_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    teachers: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 200)]
    teacher_docs: usize,
    #[arg(long, default_value_t = 2000)]
    student_docs: usize,
    #[arg(long, default_value_t = 5)]
    sentences_per_doc: usize,
    #[arg(long, default_value_t = 1.0)]
    retention: f64,
    #[arg(long, default_value_t = 2000)]
    tagger_sentences: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A config file plus overrides of its fields.
#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    student_corpus: Option<PathBuf>,
    /// NAME=PATH, repeatable.
    #[arg(long = "teacher", value_parser = parse_pair)]
    teachers: Vec<(String, PathBuf)>,
    #[arg(long)]
    tagger_model: Option<PathBuf>,
    #[arg(long)]
    feature_kind: Option<FeatureKind>,
    #[arg(short = 'L', long = "window")]
    window: Option<usize>,
    #[arg(short = 'K', long = "capacity")]
    capacity: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    /// Comma-separated test-set sizes.
    #[arg(long, value_delimiter = ',')]
    support_levels: Option<Vec<usize>>,
    /// multinomial or ovr.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

fn parse_pair(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    Ok((k.to_string(), PathBuf::from(v)))
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
            c.train_config.seed = v;
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = &self.student_corpus {
            c.student_corpus = v.clone();
        }
        for (name, path) in &self.teachers {
            c.teacher_corpora.insert(name.clone(), path.clone());
        }
        if let Some(v) = &self.tagger_model {
            c.tagger_model = Some(v.clone());
        }
        if let Some(v) = self.feature_kind {
            c.feature_kind = v;
        }
        if let Some(v) = self.window {
            c.window = v;
        }
        if let Some(v) = self.capacity {
            c.capacity = v;
        }
        if let Some(v) = self.n_max {
            c.n_max = v;
        }
        if let Some(v) = self.min_count {
            c.min_count = v;
        }
        if let Some(v) = &self.support_levels {
            c.support_levels = v.clone();
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.lambda {
            c.train_config.lambda = v;
        }
        if let Some(v) = self.max_iters {
            c.train_config.max_iters = v;
        }
        Ok(c)
    }
}

fn print_manifest(m: &RunManifest, dir: &Path) {
    println!("{} run complete: {} artifacts in {}", m.command, m.artifacts.len(), dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(CorpusCmd::Validate {
            path,
            allow_unknown_keys,
        }) => {
            let mode = if allow_unknown_keys {
                UnknownKeys::Warn
            } else {
                UnknownKeys::Error
            };
            let c = load_jsonl_with(&path, mode)?;
            println!("{}", serde_json::to_string_pretty(&corpus_summary(&c))?);
        }
        Command::Synth(a) => {
            let params = SynthParams {
                teachers: a.teachers,
                separation: a.separation,
                teacher_docs: a.teacher_docs,
                student_docs: a.student_docs,
                sentences_per_doc: a.sentences_per_doc,
                retention: a.retention,
                tagger_sentences: a.tagger_sentences,
                seed: a.seed,
                ..SynthParams::default()
            };
            let path = write_synthetic(&params, &a.out)?;
            println!("{}", path.display());
        }
        Command::Tagger(TaggerCmd::Train {
            conllu,
            out,
            epochs,
            seed,
            dev,
        }) => {
            let data = load_conllu(&conllu)?;
            let model = train_tagger(&data, epochs, seed)?;
            model.save(&out)?;
            println!("trained on {} sentences; model hash {}", data.len(), model.hash());
            if let Some(dev) = dev {
                println!("dev accuracy {:.4}", model.accuracy(&load_conllu(&dev)?));
            }
        }
        Command::Tagger(TaggerCmd::Tag { model, text }) => {
            let model = TaggerModel::load(&model)?;
            let text = match text {
                Some(t) => t,
                None => {
                    let mut s = String::new();
                    std::io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|e| Error::InvalidInput(format!("cannot read stdin: {e}")))?;
                    s
                }
            };
            for s in model.tag_text(&text) {
                let line: Vec<String> = s.tokens.iter().zip(&s.tags).map(|(w, t)| format!("{w}/{t}")).collect();
                println!("{}", line.join(" "));
            }
        }
        Command::Templates(TemplatesCmd::Mine {
            corpora,
            tagger,
            window,
            capacity,
            train_only,
            out,
        }) => {
            let tagger = TaggerModel::load(&tagger)?;
            let mut loaded = Vec::new();
            for p in &corpora {
                let c = teachertrace::corpus::load_jsonl(p)?;
                loaded.push(if train_only {
                    c.filter(|d| d.split == teachertrace::corpus::Split::Train)
                } else {
                    c
                });
            }
            let refs: Vec<&Corpus> = loaded.iter().collect();
            let vocab = mine_templates(&refs, &tagger, window, capacity)?;
            vocab.save(&out)?;
            for t in vocab.templates.iter().take(10) {
                println!("{}\t{}", t.count, t.tags);
            }
        }
        Command::Attribute(r) => {
            let c = r.config()?;
            print_manifest(&run_attribution(&c)?, &c.output_dir);
        }
        Command::Similarity {
            run,
            measure,
            embeddings,
        } => {
            let mut c = run.config()?;
            if let Some(m) = measure {
                c.similarity.measure = m;
            }
            if embeddings.is_some() {
                c.similarity.embeddings = embeddings;
            }
            print_manifest(&run_similarity(&c)?, &c.output_dir);
        }
        Command::Perplexity {
            run,
            endpoints,
            sample_n,
        } => {
            let mut c = run.config()?;
            if endpoints.is_some() {
                c.perplexity.endpoints = endpoints;
            }
            if let Some(n) = sample_n {
                c.perplexity.sample_n = n;
            }
            print_manifest(&run_perplexity(&c)?, &c.output_dir);
        }
        Command::Sweep { run, features } => {
            let mut c = run.config()?;
            if let Some(f) = features {
                c.sweep_features = f;
            }
            print_manifest(&run_support_sweep(&c)?, &c.output_dir);
        }
        Command::Report { dir, out } => {
            let s = summarize(&dir)?;
            if let Some(out) = out {
                fs::write(&out, &s).map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", out.display())))?;
            }
            print!("{s}");
        }
        Command::MockServer { config, addr } => {
            let cfg = match config {
                Some(p) => MockConfig::load(p)?,
                None => MockConfig {
                    models: BTreeMap::from([("mock".to_string(), Default::default())]),
                },
            };
            let server = MockServer::bind(&addr, cfg)?;
            println!("mock server listening on {}", server.url());
            server.wait();
        }
    }
    Ok(())
}

fn corpus_summary(c: &Corpus) -> serde_json::Value {
    let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
    let mut roles: BTreeMap<String, usize> = BTreeMap::new();
    let mut splits: BTreeMap<String, usize> = BTreeMap::new();
    for d in c {
        *labels.entry(&d.source_label).or_default() += 1;
        *roles.entry(d.role.to_string()).or_default() += 1;
        *splits.entry(format!("{:?}", d.split).to_lowercase()).or_default() += 1;
    }
    serde_json::json!({
        "documents": c.len(),
        "labels": labels,
        "roles": roles,
        "splits": splits,
        "content_hash": c.content_hash(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
