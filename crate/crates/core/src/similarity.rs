//! Similarity baselines: bag-of-words cosine, BERTScore-style greedy
//! matching over supplied token embeddings, and a probe that uses one
//! similarity score as the only feature of a per-teacher classifier.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{train, Mode, TrainConfig};
use crate::corpus::{split, Corpus, Document};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix, FeatureSpace, SparseVector};
use crate::hashing;
use crate::metrics::{auc, roc_curve, RocCurve};
use crate::scalar::Scalar;

/// Cosine of two count vectors; 0 when either is empty.
pub fn cosine<F: Scalar>(a: &SparseVector<F>, b: &SparseVector<F>) -> F {
    let denom = a.norm() * b.norm();
    if denom == F::zero() {
        return F::zero();
    }
    // Rounding can push identical vectors a hair past 1.
    (a.dot_sparse(b) / denom).min(F::one())
}

fn cosine_dense<F: Scalar>(a: &SparseVector<F>, b: &[F], b_norm: F) -> F {
    let denom = a.norm() * b_norm;
    if denom == F::zero() {
        return F::zero();
    }
    (a.dot(b) / denom).min(F::one())
}

/// Bag-of-words cosine between two documents in a bow space.
pub fn cosine_bow(a: &Document, b: &Document, space: &FeatureSpace) -> Result<f64> {
    if space.kind() != FeatureKind::Bow {
        return Err(Error::invalid(format!("cosine_bow needs a bow space, got {}", space.kind())));
    }
    let va: SparseVector<f64> = space.vectorize(a, None)?;
    let vb: SparseVector<f64> = space.vectorize(b, None)?;
    Ok(cosine(&va, &vb))
}

/// Tokens with one embedding vector each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddingSequence<F> {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<F>>,
}

impl<F: Scalar> TokenEmbeddingSequence<F> {
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<F>>) -> Result<Self> {
        let s = TokenEmbeddingSequence { tokens, vectors };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tokens.len(),
                actual: self.vectors.len(),
            });
        }
        let dim = self.vectors.first().map_or(0, Vec::len);
        for v in &self.vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().all(|x| *x == F::zero()) {
                return Err(Error::invalid("token embeddings must be nonzero"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("token embeddings must be finite"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    fn normalized(&self) -> Vec<Vec<F>> {
        self.vectors
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| *x * *x).sum::<F>().sqrt();
                v.iter().map(|x| *x / n).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertScore<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
}

/// Greedy max-cosine matching without idf weighting or rescaling.
pub fn bertscore<F: Scalar>(
    candidate: &TokenEmbeddingSequence<F>,
    reference: &TokenEmbeddingSequence<F>,
) -> Result<BertScore<F>> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid("BERTScore needs nonempty token sequences"));
    }
    if candidate.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: candidate.dim(),
        });
    }
    let c = candidate.normalized();
    let r = reference.normalized();
    let sims: Vec<Vec<F>> = c
        .iter()
        .map(|ci| r.iter().map(|rj| ci.iter().zip(rj).map(|(a, b)| *a * *b).sum()).collect())
        .collect();
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(F::neg_infinity(), F::max))
        .sum::<F>()
        / F::of_usize(c.len());
    let recall = (0..r.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(F::neg_infinity(), F::max))
        .sum::<F>()
        / F::of_usize(r.len());
    let f1 = if precision + recall == F::zero() {
        F::zero()
    } else {
        F::of(2.0) * precision * recall / (precision + recall)
    };
    Ok(BertScore { precision, recall, f1 })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingLine {
    doc_id: String,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

pub type EmbeddingTable = HashMap<String, TokenEmbeddingSequence<f64>>;

/// Reads `{doc_id, tokens, vectors}` JSONL.
pub fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingTable> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let e: EmbeddingLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let seq = TokenEmbeddingSequence::new(e.tokens, e.vectors).map_err(|e| parse_err(e.to_string()))?;
        if out.insert(e.doc_id.clone(), seq).is_some() {
            return Err(parse_err(format!("duplicate doc_id {:?}", e.doc_id)));
        }
    }
    Ok(out)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    parse_embeddings(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
}

/// Asks an embedding service for token embeddings: POST `{"texts": [...]}`,
/// expecting a JSON array of `{tokens, vectors}` in input order.
pub fn fetch_embeddings(url: &str, texts: &[&str], timeout: Duration) -> Result<Vec<TokenEmbeddingSequence<f64>>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut resp = agent
        .post(url)
        .send_json(serde_json::json!({ "texts": texts }))
        .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    if status == 401 || status == 403 {
        return Err(Error::Protocol(format!("{url}: embedding service refused the request ({status})")));
    }
    if status != 200 {
        return Err(Error::Transport(format!("{url}: HTTP {status}")));
    }
    let body: Vec<TokenEmbeddingSequence<f64>> = resp
        .body_mut()
        .read_json()
        .map_err(|e| Error::Protocol(format!("{url}: {e}")))?;
    if body.len() != texts.len() {
        return Err(Error::Protocol(format!(
            "{url}: asked for {} embeddings, got {}",
            texts.len(),
            body.len()
        )));
    }
    for s in &body {
        s.validate()?;
    }
    Ok(body)
}

/// How each student document is compared against a teacher.
pub enum Measure<'a> {
    /// Requires a bow space.
    CosineBow(&'a FeatureSpace),
    /// Embeddings keyed by document id, covering students and teachers.
    BertScore(&'a EmbeddingTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    CosineBow,
    Bertscore,
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasureKind::CosineBow => "cosine_bow",
            MeasureKind::Bertscore => "bertscore",
        })
    }
}

impl FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine_bow" | "bow" => Ok(MeasureKind::CosineBow),
            "bertscore" => Ok(MeasureKind::Bertscore),
            other => Err(Error::Config(format!("unknown similarity measure {other:?}"))),
        }
    }
}

impl Measure<'_> {
    pub fn kind(&self) -> MeasureKind {
        match self {
            Measure::CosineBow(_) => MeasureKind::CosineBow,
            Measure::BertScore(_) => MeasureKind::Bertscore,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Share of student documents used to fit each single-feature model.
    pub train_fraction: f64,
    pub seed: u64,
    /// Unaligned bertscore compares against at most this many teacher
    /// documents, sampled per teacher.
    pub max_references: usize,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.5,
            seed: 0,
            max_references: 32,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSimilarity {
    pub doc_id: String,
    pub gold: String,
    /// Similarity to each teacher, in teacher-name order.
    pub similarity: BTreeMap<String, f64>,
    /// Whether the comparison used a prompt-matched teacher output.
    pub aligned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub measure: MeasureKind,
    pub teachers: Vec<String>,
    pub per_teacher_mean: BTreeMap<String, f64>,
    /// Mean similarity by gold teacher (rows) and compared teacher (columns).
    pub per_gold_mean: BTreeMap<String, BTreeMap<String, f64>>,
    pub per_instance: Vec<InstanceSimilarity>,
    /// One-vs-rest AUC of a logistic model on the similarity alone; `None`
    /// when the held-out part lacks positives or negatives.
    pub probe_auc: BTreeMap<String, Option<f64>>,
    /// Held-out ROC curve behind each defined probe AUC.
    #[serde(skip)]
    pub probe_curves: BTreeMap<String, RocCurve>,
    pub support: usize,
    pub chance_level: f64,
    pub seed: u64,
}

impl SimilarityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Long format: `metric,gold,teacher,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,gold,teacher,value\n");
        for (t, m) in &self.per_teacher_mean {
            out.push_str(&format!("mean_similarity,,{t},{m}\n"));
        }
        for (g, row) in &self.per_gold_mean {
            for (t, m) in row {
                out.push_str(&format!("mean_similarity,{g},{t},{m}\n"));
            }
        }
        for (t, a) in &self.probe_auc {
            match a {
                Some(a) => out.push_str(&format!("probe_auc,,{t},{a}\n")),
                None => out.push_str(&format!("probe_auc,,{t},\n")),
            }
        }
        out
    }

    pub fn instances_csv(&self) -> String {
        let mut out = format!("doc_id,gold,aligned,{}\n", self.teachers.join(","));
        for row in &self.per_instance {
            let sims: Vec<String> = self.teachers.iter().map(|t| row.similarity[t].to_string()).collect();
            out.push_str(&format!("{},{},{},{}\n", row.doc_id, row.gold, row.aligned, sims.join(",")));
        }
        out
    }
}

struct TeacherSide<'a> {
    by_prompt: HashMap<&'a str, &'a Document>,
    centroid: Vec<f64>,
    centroid_norm: f64,
    references: Vec<&'a Document>,
}

fn teacher_side<'a>(name: &str, corpus: &'a Corpus, measure: &Measure<'_>, cfg: &ProbeConfig) -> Result<TeacherSide<'a>> {
    let mut by_prompt = HashMap::new();
    for d in corpus.iter() {
        if let Some(p) = &d.prompt_id {
            by_prompt.entry(p.as_str()).or_insert(d);
        }
    }
    let (centroid, references) = match measure {
        Measure::CosineBow(space) => {
            let mut c = vec![0.0; space.dim()];
            for d in corpus.iter() {
                let v: SparseVector<f64> = space.vectorize(d, None)?;
                for (i, x) in v.entries() {
                    c[*i] += x;
                }
            }
            let n = corpus.len().max(1) as f64;
            c.iter_mut().for_each(|x| *x /= n);
            (c, Vec::new())
        }
        Measure::BertScore(_) => {
            let k = cfg.max_references.min(corpus.len());
            let mut rng = ChaCha8Rng::seed_from_u64(hashing::substream(cfg.seed, &format!("references/{name}")));
            let mut idx = sample(&mut rng, corpus.len(), k).into_vec();
            idx.sort_unstable();
            (Vec::new(), idx.into_iter().map(|i| &corpus.documents()[i]).collect())
        }
    };
    let centroid_norm = centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(TeacherSide {
        by_prompt,
        centroid,
        centroid_norm,
        references,
    })
}

fn embedding<'a>(table: &'a EmbeddingTable, id: &str) -> Result<&'a TokenEmbeddingSequence<f64>> {
    table
        .get(id)
        .ok_or_else(|| Error::invalid(format!("no token embeddings supplied for document {id:?}")))
}

fn similarity_to(doc: &Document, side: &TeacherSide<'_>, measure: &Measure<'_>) -> Result<(f64, bool)> {
    let matched = doc.prompt_id.as_deref().and_then(|p| side.by_prompt.get(p));
    match measure {
        Measure::CosineBow(space) => {
            let v: SparseVector<f64> = space.vectorize(doc, None)?;
            match matched {
                Some(t) => Ok((cosine(&v, &space.vectorize(t, None)?), true)),
                None => Ok((cosine_dense(&v, &side.centroid, side.centroid_norm), false)),
            }
        }
        Measure::BertScore(table) => {
            let cand = embedding(table, &doc.id)?;
            match matched {
                Some(t) => Ok((bertscore(cand, embedding(table, &t.id)?)?.f1, true)),
                None => {
                    let mut total = 0.0;
                    for r in &side.references {
                        total += bertscore(cand, embedding(table, &r.id)?)?.f1;
                    }
                    Ok((total / side.references.len().max(1) as f64, false))
                }
            }
        }
    }
}

/// Single-feature logistic model per teacher; returns held-out AUC.
fn probe_auc(
    teacher: &str,
    rows: &[InstanceSimilarity],
    in_train: &[bool],
    cfg: &TrainConfig,
) -> Result<Option<RocCurve>> {
    // The bias is unregularized, so shifting the feature by +1 leaves the
    // fitted scores unchanged while keeping sparse values positive.
    let feature = |r: &InstanceSimilarity| -> Result<SparseVector<f64>> {
        let x = r.similarity[teacher] + 1.0;
        SparseVector::new(if x > 0.0 { vec![(0, x)] } else { vec![] }, 1)
    };
    let label = |r: &InstanceSimilarity| if r.gold == teacher { "pos" } else { "rest" }.to_string();
    let classes = vec!["pos".to_string(), "rest".to_string()];
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_scores = Vec::new();
    let mut test_pos = Vec::new();
    let mut test_rows = Vec::new();
    for (r, &t) in rows.iter().zip(in_train) {
        if t {
            train_rows.push(feature(r)?);
            train_labels.push(label(r));
        } else {
            test_rows.push(feature(r)?);
            test_pos.push(r.gold == teacher);
        }
    }
    let has_both = |v: &[String]| v.iter().any(|l| l == "pos") && v.iter().any(|l| l == "rest");
    if !has_both(&train_labels) || !test_pos.iter().any(|p| *p) || test_pos.iter().all(|p| *p) {
        return Ok(None);
    }
    let m = FeatureMatrix::with_classes(train_rows, train_labels, classes, 1)?;
    let model = train(&m, cfg, Mode::Multinomial)?;
    for x in &test_rows {
        test_scores.push(model.predict_proba(x)?[0]);
    }
    Ok(Some(roc_curve(&test_scores, &test_pos)?))
}

/// Scores every student document against every teacher, then measures how
/// well each teacher's similarity alone separates its students from the
/// rest. Student `source_label`s name their gold teacher.
pub fn similarity_probe(
    student: &Corpus,
    teachers: &BTreeMap<String, Corpus>,
    measure: &Measure<'_>,
    cfg: &ProbeConfig,
) -> Result<SimilarityReport> {
    if student.is_empty() {
        return Err(Error::invalid("similarity probe needs student documents"));
    }
    if teachers.len() < 2 {
        return Err(Error::invalid("similarity probe needs at least two teachers"));
    }
    if let Measure::CosineBow(space) = measure {
        if space.kind() != FeatureKind::Bow {
            return Err(Error::invalid("cosine similarity needs a bow space"));
        }
    }
    let sides = teachers
        .iter()
        .map(|(name, c)| teacher_side(name, c, measure, cfg).map(|s| (name.as_str(), s)))
        .collect::<Result<Vec<_>>>()?;
    let per_instance = student
        .documents()
        .par_iter()
        .map(|d| {
            let mut similarity = BTreeMap::new();
            let mut aligned = false;
            for (name, side) in &sides {
                let (s, a) = similarity_to(d, side, measure)?;
                aligned |= a;
                similarity.insert(name.to_string(), s);
            }
            Ok(InstanceSimilarity {
                doc_id: d.id.clone(),
                gold: d.source_label.clone(),
                similarity,
                aligned,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let names: Vec<String> = teachers.keys().cloned().collect();
    let n = per_instance.len() as f64;
    let per_teacher_mean = names
        .iter()
        .map(|t| (t.clone(), per_instance.iter().map(|r| r.similarity[t]).sum::<f64>() / n))
        .collect();
    let mut per_gold_mean: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for g in student.label_set() {
        let group: Vec<&InstanceSimilarity> = per_instance.iter().filter(|r| &r.gold == g).collect();
        let row = names
            .iter()
            .map(|t| (t.clone(), group.iter().map(|r| r.similarity[t]).sum::<f64>() / group.len() as f64))
            .collect();
        per_gold_mean.insert(g.clone(), row);
    }

    let in_train: Vec<bool> = if student.len() >= 2 {
        let (train_part, _) = split(student, cfg.train_fraction, cfg.seed)?;
        let ids: HashSet<&str> = train_part.iter().map(|d| d.id.as_str()).collect();
        student.iter().map(|d| ids.contains(d.id.as_str())).collect()
    } else {
        vec![true]
    };
    let mut probe = BTreeMap::new();
    let mut probe_curves = BTreeMap::new();
    for t in &names {
        let curve = probe_auc(t, &per_instance, &in_train, &cfg.train)?;
        probe.insert(t.clone(), curve.as_ref().map(auc));
        if let Some(c) = curve {
            probe_curves.insert(t.clone(), c);
        }
    }

    Ok(SimilarityReport {
        measure: measure.kind(),
        teachers: names.clone(),
        per_teacher_mean,
        per_gold_mean,
        per_instance,
        probe_auc: probe,
        probe_curves,
        support: student.len(),
        chance_level: 1.0 / names.len() as f64,
        seed: cfg.seed,
    })
}
