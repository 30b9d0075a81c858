//! Config-driven runs: attribution, support sweep, similarity and
//! perplexity probes, with their report files and a run manifest.
//!
//! The attributor is always trained on teacher outputs (split = train) and
//! evaluated on student outputs. A support level is the number of student
//! documents in the test sample; the training set never changes with it.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classify::{train, AttributorModel, Mode, TrainConfig};
use crate::corpus::synthetic::{as_student, derive_student, generate_corpus, generate_tagged, make_signature_family};
use crate::corpus::{load_jsonl, save_jsonl, Corpus, Split};
use crate::error::{Error, Result};
use crate::features::{assemble_matrix, build_space, FeatureKind, FeatureMatrix, FeatureSpace, LabelField, SpaceParams};
use crate::hashing;
use crate::metrics::{evaluate_full, EvalReport};
use crate::perplexity::{perplexity_probe, EndpointConfig, PerplexityTable};
use crate::plot;
use crate::similarity::{load_embeddings, similarity_probe, Measure, MeasureKind, ProbeConfig, SimilarityReport};
use crate::tagger::{train_tagger, write_conllu, TaggerModel};
use crate::templates::{mine_templates, TemplateVocabulary, DEFAULT_CAPACITY, DEFAULT_WINDOW};

pub const MANIFEST_VERSION: &str = "teachertrace-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySettings {
    pub measure: MeasureKind,
    /// JSON token embeddings keyed by document id (bertscore only).
    pub embeddings: Option<PathBuf>,
    pub train_fraction: f64,
    pub max_references: usize,
}

impl Default for SimilaritySettings {
    fn default() -> Self {
        let p = ProbeConfig::default();
        SimilaritySettings {
            measure: MeasureKind::CosineBow,
            embeddings: None,
            train_fraction: p.train_fraction,
            max_references: p.max_references,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerplexitySettings {
    pub endpoints: Option<PathBuf>,
    /// Documents scored per student corpus.
    pub sample_n: usize,
}

impl Default for PerplexitySettings {
    fn default() -> Self {
        PerplexitySettings {
            endpoints: None,
            sample_n: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub student_corpus: PathBuf,
    pub tagger_model: Option<PathBuf>,
    pub feature_kind: FeatureKind,
    #[serde(rename = "L", alias = "window")]
    pub window: usize,
    #[serde(rename = "K", alias = "capacity")]
    pub capacity: usize,
    pub n_max: usize,
    pub min_count: u64,
    /// Template counts instead of presence indicators.
    pub template_counts: bool,
    pub support_levels: Vec<usize>,
    pub mode: Mode,
    /// Feature kinds compared by the support sweep.
    pub sweep_features: Vec<FeatureKind>,
    /// Teacher name → corpus path. Every document in a file is labelled
    /// with its teacher name.
    pub teacher_corpora: BTreeMap<String, PathBuf>,
    /// Student `source_label` → teacher name; labels not listed must
    /// already be teacher names.
    pub student_teacher: BTreeMap<String, String>,
    pub train_config: TrainConfig,
    pub similarity: SimilaritySettings,
    pub perplexity: PerplexitySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            student_corpus: PathBuf::new(),
            tagger_model: None,
            feature_kind: FeatureKind::Template,
            window: DEFAULT_WINDOW,
            capacity: DEFAULT_CAPACITY,
            n_max: 4,
            min_count: 2,
            template_counts: false,
            support_levels: vec![50, 200, 1000, 2000],
            mode: Mode::Multinomial,
            sweep_features: vec![FeatureKind::Bow, FeatureKind::Ngram, FeatureKind::Template],
            teacher_corpora: BTreeMap::new(),
            student_teacher: BTreeMap::new(),
            train_config: TrainConfig::default(),
            similarity: SimilaritySettings::default(),
            perplexity: PerplexitySettings::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad experiment config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Loads a config; relative paths are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        resolve(base, &mut self.student_corpus);
        for p in self.teacher_corpora.values_mut() {
            resolve(base, p);
        }
        if let Some(p) = &mut self.tagger_model {
            resolve(base, p);
        }
        if let Some(p) = &mut self.similarity.embeddings {
            resolve(base, p);
        }
        if let Some(p) = &mut self.perplexity.endpoints {
            resolve(base, p);
        }
    }

    /// Hash of the canonical JSON form of the config. The output directory
    /// is left out: where results go does not change them.
    pub fn hash(&self) -> String {
        let inputs = ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        hashing::digest(serde_json::to_string(&inputs).expect("serializable").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.support_levels.is_empty() {
            return Err(Error::Config("support_levels is empty".into()));
        }
        if self.support_levels.contains(&0) {
            return Err(Error::Config("support levels must be positive".into()));
        }
        if self.window == 0 || self.capacity == 0 {
            return Err(Error::Config("L and K must be at least 1".into()));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if self.sweep_features.is_empty() {
            return Err(Error::Config("sweep_features is empty".into()));
        }
        if !(self.similarity.train_fraction > 0.0 && self.similarity.train_fraction < 1.0) {
            return Err(Error::Config("similarity.train_fraction must lie in (0, 1)".into()));
        }
        self.train_config.validate()
    }

    fn space_params(&self) -> SpaceParams {
        SpaceParams {
            n_max: self.n_max,
            min_count: self.min_count,
            template_counts: self.template_counts,
        }
    }

    /// Support levels sorted ascending without duplicates.
    fn levels(&self) -> Vec<usize> {
        let mut v = self.support_levels.clone();
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config(format!("{what} path is not set")));
    }
    if !path.is_file() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Provenance of one run. Every listed artifact exists in the output
/// directory once the run returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tagger_hash: Option<String>,
    pub template_vocab_hash: Option<String>,
    /// Feature kind → feature space hash.
    pub feature_space_hashes: BTreeMap<String, String>,
    /// Input name → content hash.
    pub input_hashes: BTreeMap<String, String>,
    /// Every training-pool document comes from these teacher corpora.
    pub training_pool: Vec<String>,
    pub artifacts: Vec<String>,
    /// Wall-clock milliseconds per stage. The only non-deterministic field.
    pub timings_ms: BTreeMap<String, u64>,
}

impl RunManifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        RunManifest {
            version: MANIFEST_VERSION.to_string(),
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            tagger_hash: None,
            template_vocab_hash: None,
            feature_space_hashes: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            training_pool: Vec::new(),
            artifacts: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct Output {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Output {
    fn create(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Output {
            dir: cfg.output_dir.clone(),
            manifest: RunManifest::new(command, cfg),
            clock: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(())
    }

    fn lap(&mut self, stage: &str) {
        let ms = self.clock.elapsed().as_millis() as u64;
        *self.manifest.timings_ms.entry(stage.to_string()).or_insert(0) += ms;
        self.clock = Instant::now();
    }

    fn finish(mut self) -> Result<RunManifest> {
        self.manifest.artifacts.push("manifest.json".to_string());
        self.manifest.artifacts.sort();
        self.manifest.artifacts.dedup();
        let path = self.dir.join("manifest.json");
        fs::write(&path, self.manifest.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// Loaded and validated inputs of an attribution or similarity run.
struct Inputs {
    /// Teacher name → its corpus, relabelled with the teacher name.
    teachers: BTreeMap<String, Corpus>,
    /// Teacher documents with split = train: the only training and mining data.
    pool: Corpus,
    /// Students with gold labels mapped to teacher names.
    students: Corpus,
    tagger: Option<TaggerModel>,
}

/// Config and path checks, run before anything is written.
fn preflight(cfg: &ExperimentConfig, kinds: &[FeatureKind]) -> Result<()> {
    cfg.validate()?;
    if cfg.teacher_corpora.len() < 2 {
        return Err(Error::Config("at least two teacher corpora are required".into()));
    }
    require_file("student corpus", &cfg.student_corpus)?;
    for (name, p) in &cfg.teacher_corpora {
        require_file(&format!("corpus of teacher {name}"), p)?;
    }
    let need_tagger = kinds.contains(&FeatureKind::Template);
    if need_tagger {
        let p = cfg
            .tagger_model
            .as_ref()
            .ok_or_else(|| Error::Config("template features need tagger_model".into()))?;
        require_file("tagger model", p)?;
    }
    Ok(())
}

fn load_inputs(cfg: &ExperimentConfig, kinds: &[FeatureKind], out: &mut Output) -> Result<Inputs> {
    let need_tagger = kinds.contains(&FeatureKind::Template);
    let mut teachers = BTreeMap::new();
    for (name, p) in &cfg.teacher_corpora {
        let c = load_jsonl(p)?.map_documents(|mut d| {
            d.source_label = name.clone();
            d
        })?;
        out.manifest.input_hashes.insert(format!("teacher/{name}"), c.content_hash());
        teachers.insert(name.clone(), c);
    }
    let trains: Vec<Corpus> = teachers
        .iter()
        .map(|(name, c)| {
            let t = c.filter(|d| d.split == Split::Train);
            if t.is_empty() {
                Err(Error::invalid(format!("teacher {name} has no documents with split = train")))
            } else {
                Ok(t)
            }
        })
        .collect::<Result<_>>()?;
    let pool = Corpus::concat(&trains)?;

    let raw_students = load_jsonl(&cfg.student_corpus)?;
    if raw_students.is_empty() {
        return Err(Error::invalid("student corpus is empty"));
    }
    out.manifest.input_hashes.insert("students".into(), raw_students.content_hash());
    let students = raw_students.relabel(&cfg.student_teacher);
    if let Some(l) = students.label_set().iter().find(|l| !teachers.contains_key(*l)) {
        return Err(Error::Config(format!(
            "student label {l:?} names no teacher; map it in student_teacher"
        )));
    }
    check_no_leakage(&pool, &students)?;
    out.manifest.training_pool = teachers.keys().cloned().collect();

    let tagger = match (&cfg.tagger_model, need_tagger) {
        (Some(p), true) => {
            let t = TaggerModel::load(p)?;
            out.manifest.tagger_hash = Some(t.hash().to_string());
            Some(t)
        }
        _ => None,
    };
    out.lap("load");
    Ok(Inputs {
        teachers,
        pool,
        students,
        tagger,
    })
}

/// Fails if any student document id is in the training pool.
fn check_no_leakage(pool: &Corpus, students: &Corpus) -> Result<()> {
    let ids: HashSet<&str> = students.iter().map(|d| d.id.as_str()).collect();
    if let Some(d) = pool.iter().find(|d| ids.contains(d.id.as_str())) {
        return Err(Error::invalid(format!(
            "student document {:?} appears in the teacher training pool",
            d.id
        )));
    }
    Ok(())
}

struct Fitted {
    space: FeatureSpace,
    model: AttributorModel<f64>,
    /// Every student document vectorized, in corpus order.
    students: FeatureMatrix<f64>,
}

fn fit(cfg: &ExperimentConfig, inputs: &Inputs, kind: FeatureKind, vocab: Option<&TemplateVocabulary>) -> Result<Fitted> {
    let space = build_space(&inputs.pool, kind, cfg.space_params(), vocab)?;
    let tagger = inputs.tagger.as_ref();
    let train_m = assemble_matrix::<f64>(&space, &inputs.pool, tagger, LabelField::SourceLabel)?;
    let model = train(&train_m, &cfg.train_config, cfg.mode)?;
    let students = assemble_matrix::<f64>(&space, &inputs.students, tagger, LabelField::SourceLabel)?;
    Ok(Fitted { space, model, students })
}

fn mine(cfg: &ExperimentConfig, inputs: &Inputs, out: &mut Output) -> Result<TemplateVocabulary> {
    let tagger = inputs.tagger.as_ref().expect("tagger loaded for template runs");
    let vocab = mine_templates(&[&inputs.pool], tagger, cfg.window, cfg.capacity)?;
    out.manifest.template_vocab_hash = Some(vocab.hash());
    out.write("templates.json", &vocab.to_json())?;
    out.lap("mine");
    Ok(vocab)
}

/// Sample of student row indices for one support level. The seed depends
/// on the level alone, so every feature kind sees the same documents.
fn support_sample(n_docs: usize, level: usize, seed: u64) -> Vec<usize> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hashing::substream(seed, &format!("support/{level}")));
    let mut idx = rand::seq::index::sample(&mut rng, n_docs, level).into_vec();
    idx.sort_unstable();
    idx
}

fn evaluate_levels(
    cfg: &ExperimentConfig,
    kind: FeatureKind,
    fitted: &Fitted,
    out: &mut Output,
    write_reports: bool,
) -> Result<Vec<EvalReport>> {
    let n = fitted.students.n_rows();
    let mut reports = Vec::new();
    for level in cfg.levels() {
        if level > n {
            log::warn!("support level {level} exceeds the {n} student documents; skipped");
            continue;
        }
        let m = fitted.students.select(&support_sample(n, level, cfg.seed));
        let mut eval = evaluate_full(&fitted.model, &m)?;
        eval.report.seed = Some(cfg.seed);
        if write_reports {
            let stem = format!("{kind}_{level}");
            out.write(&format!("eval_{stem}.json"), &eval.report.to_json())?;
            out.write(&format!("eval_{stem}.csv"), &eval.report.to_csv())?;
            let curves: Vec<(String, _, f64)> = eval
                .curves
                .iter()
                .map(|(c, curve)| (c.clone(), curve, eval.report.per_class_auc[c]))
                .collect();
            let title = format!("{kind} features, support {level}");
            out.write(&format!("roc_{stem}.svg"), &plot::roc_svg(&title, &curves))?;
        }
        reports.push(eval.report);
    }
    Ok(reports)
}

fn support_csv(rows: &[(FeatureKind, EvalReport)]) -> String {
    let mut s = String::from("feature_kind,support,accuracy,macro_auc,chance_level\n");
    for (kind, r) in rows {
        let auc = r.macro_auc.map(|a| a.to_string()).unwrap_or_default();
        s.push_str(&format!("{kind},{},{},{auc},{}\n", r.support, r.accuracy, r.chance_level));
    }
    s
}

/// Trains on teacher outputs and evaluates on the student corpus at each
/// support level.
pub fn run_attribution(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let kind = cfg.feature_kind;
    preflight(cfg, &[kind])?;
    let mut out = Output::create("attribute", cfg)?;
    let inputs = load_inputs(cfg, &[kind], &mut out)?;
    let vocab = match kind {
        FeatureKind::Template => Some(mine(cfg, &inputs, &mut out)?),
        _ => None,
    };
    let fitted = fit(cfg, &inputs, kind, vocab.as_ref())?;
    out.manifest.feature_space_hashes.insert(kind.to_string(), fitted.space.hash().to_string());
    out.write(&format!("space_{kind}.json"), &fitted.space.to_json())?;
    out.write(&format!("model_{kind}.json"), &fitted.model.to_json())?;
    out.lap("train");
    let reports = evaluate_levels(cfg, kind, &fitted, &mut out, true)?;
    if reports.is_empty() {
        return Err(Error::invalid(format!(
            "every support level exceeds the {} student documents",
            fitted.students.n_rows()
        )));
    }
    let rows: Vec<_> = reports.into_iter().map(|r| (kind, r)).collect();
    out.write("accuracy_vs_support.csv", &support_csv(&rows))?;
    out.lap("evaluate");
    out.finish()
}

/// Repeats attribution for every feature kind in `sweep_features` and
/// every support level; writes `sweep.csv`.
pub fn run_support_sweep(cfg: &ExperimentConfig) -> Result<RunManifest> {
    preflight(cfg, &cfg.sweep_features)?;
    let mut out = Output::create("sweep", cfg)?;
    let inputs = load_inputs(cfg, &cfg.sweep_features, &mut out)?;
    let vocab = if cfg.sweep_features.contains(&FeatureKind::Template) {
        Some(mine(cfg, &inputs, &mut out)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &kind in &cfg.sweep_features {
        let fitted = fit(cfg, &inputs, kind, vocab.as_ref())?;
        out.manifest.feature_space_hashes.insert(kind.to_string(), fitted.space.hash().to_string());
        out.lap(&format!("train/{kind}"));
        for r in evaluate_levels(cfg, kind, &fitted, &mut out, false)? {
            rows.push((kind, r));
        }
        out.lap(&format!("evaluate/{kind}"));
    }
    out.write("sweep.csv", &support_csv(&rows))?;
    out.finish()
}

/// Similarity of each student document to each teacher, and how well that
/// single number identifies the gold teacher.
pub fn run_similarity(cfg: &ExperimentConfig) -> Result<RunManifest> {
    preflight(cfg, &[])?;
    if cfg.similarity.measure == MeasureKind::Bertscore {
        let p = cfg
            .similarity
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::Config("bertscore needs similarity.embeddings".into()))?;
        require_file("embeddings file", p)?;
    }
    let mut out = Output::create("similarity", cfg)?;
    let inputs = load_inputs(cfg, &[], &mut out)?;
    let probe = ProbeConfig {
        train_fraction: cfg.similarity.train_fraction,
        seed: hashing::substream(cfg.seed, "similarity"),
        max_references: cfg.similarity.max_references,
        train: cfg.train_config,
    };
    let report = match cfg.similarity.measure {
        MeasureKind::CosineBow => {
            let space = build_space(&inputs.pool, FeatureKind::Bow, cfg.space_params(), None)?;
            out.manifest.feature_space_hashes.insert("bow".into(), space.hash().to_string());
            similarity_probe(&inputs.students, &inputs.teachers, &Measure::CosineBow(&space), &probe)?
        }
        MeasureKind::Bertscore => {
            let path = cfg.similarity.embeddings.as_ref().expect("checked above");
            let table = load_embeddings(path)?;
            similarity_probe(&inputs.students, &inputs.teachers, &Measure::BertScore(&table), &probe)?
        }
    };
    out.lap("score");
    write_similarity(&report, &mut out)?;
    out.finish()
}

fn write_similarity(report: &SimilarityReport, out: &mut Output) -> Result<()> {
    out.write("similarity.json", &report.to_json())?;
    out.write("similarity.csv", &report.to_csv())?;
    out.write("similarity_instances.csv", &report.instances_csv())?;
    for (t, curve) in &report.probe_curves {
        let auc = report.probe_auc[t].expect("curve implies an AUC");
        let title = format!("{} similarity to {t}", report.measure);
        out.write(&format!("roc_similarity_{t}.svg"), &plot::roc_svg(&title, &[(t.clone(), curve, auc)]))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointsFile {
    endpoint: Vec<NamedEndpoint>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedEndpoint {
    teacher: String,
    base_url: String,
    model_name: String,
    auth_env_var: Option<String>,
    timeout: Option<f64>,
    max_retries: Option<u32>,
    max_concurrent_requests: Option<usize>,
    backoff_ms: Option<u64>,
}

/// Reads a TOML endpoints file: one `[[endpoint]]` table per teacher with
/// `teacher`, `base_url`, `model_name` and optional client settings.
///
/// Auth variables are checked here, so a missing token is a config error
/// raised before any request.
pub fn load_endpoints(path: impl AsRef<Path>) -> Result<BTreeMap<String, EndpointConfig>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read endpoints file {}: {e}", path.display())))?;
    parse_endpoints(&text)
}

pub fn parse_endpoints(text: &str) -> Result<BTreeMap<String, EndpointConfig>> {
    let file: EndpointsFile = toml::from_str(text).map_err(|e| Error::Config(format!("bad endpoints file: {e}")))?;
    let mut map = BTreeMap::new();
    for e in file.endpoint {
        let d = EndpointConfig::default();
        let cfg = EndpointConfig {
            base_url: e.base_url,
            model_name: e.model_name,
            auth_env_var: e.auth_env_var,
            timeout: e.timeout.unwrap_or(d.timeout),
            max_retries: e.max_retries.unwrap_or(d.max_retries),
            max_concurrent_requests: e.max_concurrent_requests.unwrap_or(d.max_concurrent_requests),
            backoff_ms: e.backoff_ms.unwrap_or(d.backoff_ms),
        };
        cfg.validate()?;
        if let Some(var) = &cfg.auth_env_var {
            if std::env::var_os(var).is_none() {
                return Err(Error::Config(format!(
                    "environment variable {var} (auth for teacher {}) is not set",
                    e.teacher
                )));
            }
        }
        if map.insert(e.teacher.clone(), cfg).is_some() {
            return Err(Error::Config(format!("teacher {} listed twice in endpoints file", e.teacher)));
        }
    }
    Ok(map)
}

/// Scores a sample of each student corpus (grouped by its own
/// `source_label`) under every teacher endpoint.
pub fn run_perplexity(cfg: &ExperimentConfig) -> Result<RunManifest> {
    require_file("student corpus", &cfg.student_corpus)?;
    let ep_path = cfg
        .perplexity
        .endpoints
        .as_ref()
        .ok_or_else(|| Error::Config("perplexity.endpoints is not set".into()))?;
    require_file("endpoints file", ep_path)?;
    let endpoints = load_endpoints(ep_path)?;
    if cfg.perplexity.sample_n == 0 {
        return Err(Error::Config("perplexity.sample_n must be at least 1".into()));
    }
    let mut out = Output::create("perplexity", cfg)?;
    let students = load_jsonl(&cfg.student_corpus)?;
    if students.is_empty() {
        return Err(Error::invalid("student corpus is empty"));
    }
    out.manifest.input_hashes.insert("students".into(), students.content_hash());
    let groups: BTreeMap<String, Corpus> = students
        .label_set()
        .iter()
        .map(|l| (l.clone(), students.filter(|d| &d.source_label == l)))
        .collect();
    out.lap("load");
    let table = perplexity_probe(&groups, &endpoints, cfg.perplexity.sample_n, cfg.seed)?;
    out.lap("score");
    write_perplexity(&table, &mut out)?;
    out.finish()
}

fn write_perplexity(table: &PerplexityTable, out: &mut Output) -> Result<()> {
    out.write("ppl_table.csv", &table.to_csv())?;
    out.write("ppl_table.json", &table.to_json())?;
    out.write("ppl_box.svg", &plot::perplexity_box_svg(table))?;
    Ok(())
}

/// Markdown digest of whatever reports an output directory holds.
pub fn summarize(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<Option<String>> {
        let p = dir.join(name);
        match fs::read_to_string(&p) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(p, e)),
        }
    };
    let manifest: RunManifest = match read("manifest.json")? {
        Some(s) => serde_json::from_str(&s)?,
        None => return Err(Error::invalid(format!("{} holds no manifest.json", dir.display()))),
    };
    let mut s = format!("# Run `{}` (seed {})\n\n", manifest.command, manifest.seed);
    let evals: Vec<&String> = manifest
        .artifacts
        .iter()
        .filter(|a| a.starts_with("eval_") && a.ends_with(".json"))
        .collect();
    if !evals.is_empty() {
        s.push_str("| report | support | accuracy | macro AUC | chance |\n|---|---|---|---|---|\n");
        let mut rows: Vec<(String, EvalReport)> = Vec::new();
        for name in evals {
            let r: EvalReport = serde_json::from_str(&read(name)?.unwrap_or_default())?;
            rows.push((name.trim_end_matches(".json").to_string(), r));
        }
        rows.sort_by(|a, b| a.1.support.cmp(&b.1.support).then_with(|| a.0.cmp(&b.0)));
        for (name, r) in rows {
            let auc = r.macro_auc.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "| {name} | {} | {:.3} | {auc} | {:.3} |\n",
                r.support, r.accuracy, r.chance_level
            ));
        }
        s.push('\n');
    }
    if let Some(text) = read("sweep.csv")? {
        s.push_str("## Support sweep\n\n| feature | support | accuracy |\n|---|---|---|\n");
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() >= 3 {
                let acc: f64 = f[2].parse().unwrap_or(f64::NAN);
                s.push_str(&format!("| {} | {} | {acc:.3} |\n", f[0], f[1]));
            }
        }
        s.push('\n');
    }
    if let Some(text) = read("similarity.json")? {
        let r: SimilarityReport = serde_json::from_str(&text)?;
        s.push_str(&format!("## Similarity ({})\n\n| teacher | mean | probe AUC |\n|---|---|---|\n", r.measure));
        for t in &r.teachers {
            let auc = r.probe_auc[t].map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
            s.push_str(&format!("| {t} | {:.4} | {auc} |\n", r.per_teacher_mean[t]));
        }
        s.push('\n');
    }
    if let Some(text) = read("ppl_table.json")? {
        let t: PerplexityTable = serde_json::from_str(&text)?;
        s.push_str("## Perplexity (median)\n\n| student | lowest-median teacher |\n|---|---|\n");
        for (st, te) in &t.argmin_teacher {
            s.push_str(&format!("| {st} | {te} |\n"));
        }
        if !t.failures.is_empty() {
            s.push_str(&format!("\n{} document(s) failed to score.\n", t.failures.len()));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Shape of a generated synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub teachers: usize,
    pub separation: f64,
    pub teacher_docs: usize,
    /// Student documents in total, split evenly over the students.
    pub student_docs: usize,
    pub sentences_per_doc: usize,
    /// Share of the teacher's plan preferences a student keeps.
    pub retention: f64,
    /// Gold-tagged sentences for training the tagger.
    pub tagger_sentences: usize,
    pub tagger_epochs: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            teachers: 5,
            separation: 1.0,
            teacher_docs: 200,
            student_docs: 2000,
            sentences_per_doc: 5,
            retention: 1.0,
            tagger_sentences: 2000,
            tagger_epochs: 5,
            seed: 0,
        }
    }
}

/// Writes a self-contained synthetic experiment into `dir`: one corpus per
/// teacher, a student corpus, a tagger trained on gold-tagged sentences of
/// the same vocabulary, and `experiment.toml`. Returns the config path.
///
/// Student `student-i` is distilled from `teacher-i`.
pub fn write_synthetic(params: &SynthParams, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if params.teachers < 2 {
        return Err(Error::Config("a synthetic family needs at least two teachers".into()));
    }
    if params.student_docs < params.teachers {
        return Err(Error::Config("student_docs must be at least the number of teachers".into()));
    }
    if !(0.0..=1.0).contains(&params.retention) {
        return Err(Error::Config("retention must lie in [0, 1]".into()));
    }
    fs::create_dir_all(dir.join("teachers")).map_err(|e| Error::io(dir, e))?;
    let seed = params.seed;
    let family = make_signature_family(params.teachers, params.separation, hashing::substream(seed, "synth/family"))?;

    let mut cfg = ExperimentConfig {
        seed,
        output_dir: PathBuf::from("out"),
        student_corpus: PathBuf::from("students.jsonl"),
        tagger_model: Some(PathBuf::from("tagger.json")),
        ..ExperimentConfig::default()
    };
    let mut tagged = Vec::new();
    let per_tagger = params.tagger_sentences.div_ceil(params.teachers);
    let mut student_parts = Vec::new();
    for (i, sig) in family.iter().enumerate() {
        let label = &sig.label;
        let teacher = generate_corpus(
            sig,
            params.teacher_docs,
            params.sentences_per_doc,
            hashing::substream(seed, &format!("synth/teacher/{label}")),
        )?;
        let rel = PathBuf::from("teachers").join(format!("{label}.jsonl"));
        save_jsonl(&teacher, dir.join(&rel))?;
        cfg.teacher_corpora.insert(label.clone(), rel);

        let student_label = format!("student-{i}");
        let n = params.student_docs / params.teachers + usize::from(i < params.student_docs % params.teachers);
        let sig_s = derive_student(sig, params.retention, student_label.clone());
        let docs = generate_corpus(
            &sig_s,
            n,
            params.sentences_per_doc,
            hashing::substream(seed, &format!("synth/student/{student_label}")),
        )?;
        student_parts.push(as_student(docs)?);
        cfg.student_teacher.insert(student_label, label.clone());

        tagged.extend(generate_tagged(sig, per_tagger, hashing::substream(seed, &format!("synth/tagged/{label}")))?);
    }
    save_jsonl(&Corpus::concat(&student_parts)?, dir.join("students.jsonl"))?;
    let conllu = dir.join("tagger_train.conllu");
    fs::write(&conllu, write_conllu(&tagged)).map_err(|e| Error::io(&conllu, e))?;
    train_tagger(&tagged, params.tagger_epochs, hashing::substream(seed, "synth/tagger"))?.save(dir.join("tagger.json"))?;

    let path = dir.join("experiment.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
