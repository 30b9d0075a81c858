//! Vocabulary-indexed feature spaces (bag of words, word n-grams, template
//! indicators) and sparse document vectors.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::hashing;
use crate::scalar::Scalar;
use crate::tagger::{tokenize, TaggedSentence, TaggerModel, TokenSequence};
use crate::templates::{count_templates, match_templates, TemplateVocabulary};

pub const SPACE_VERSION: &str = "teachertrace-space/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Bow,
    Ngram,
    Template,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Bow => "bow",
            FeatureKind::Ngram => "ngram",
            FeatureKind::Template => "template",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(FeatureKind::Bow),
            "ngram" => Ok(FeatureKind::Ngram),
            "template" => Ok(FeatureKind::Template),
            other => Err(Error::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceParams {
    /// Longest word n-gram (ngram kind only).
    pub n_max: usize,
    /// Minimum corpus count for a bow/ngram term to enter the vocabulary.
    pub min_count: u64,
    /// Template kind: occurrence counts instead of presence indicators.
    pub template_counts: bool,
}

impl Default for SpaceParams {
    fn default() -> Self {
        SpaceParams {
            n_max: 4,
            min_count: 2,
            template_counts: false,
        }
    }
}

/// Which document field supplies the class label of a matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelField {
    #[default]
    SourceLabel,
    Dataset,
    Role,
}

impl LabelField {
    pub fn get(self, doc: &Document) -> String {
        match self {
            LabelField::SourceLabel => doc.source_label.clone(),
            LabelField::Dataset => doc.dataset.clone(),
            LabelField::Role => doc.role.to_string(),
        }
    }
}

/// Sparse vector with strictly increasing indices and positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector<F> {
    entries: Vec<(usize, F)>,
    dim: usize,
}

impl<F: Scalar> SparseVector<F> {
    pub fn new(entries: Vec<(usize, F)>, dim: usize) -> Result<Self> {
        for (k, (i, v)) in entries.iter().enumerate() {
            if *i >= dim {
                return Err(Error::invalid(format!("index {i} out of range for dimension {dim}")));
            }
            if k > 0 && entries[k - 1].0 >= *i {
                return Err(Error::invalid("sparse indices must be strictly increasing"));
            }
            if !(*v > F::zero()) || !v.is_finite() {
                return Err(Error::invalid(format!("sparse value at index {i} must be positive and finite")));
            }
        }
        Ok(SparseVector { entries, dim })
    }

    pub fn empty(dim: usize) -> Self {
        SparseVector { entries: Vec::new(), dim }
    }

    /// Builds from unordered (index, count) pairs, dropping zeros.
    fn from_counts(counts: impl IntoIterator<Item = (usize, u64)>, dim: usize) -> Self {
        let mut entries: Vec<(usize, F)> = counts
            .into_iter()
            .filter(|(_, c)| *c > 0)
            .map(|(i, c)| (i, F::of(c as f64)))
            .collect();
        entries.sort_unstable_by_key(|(i, _)| *i);
        SparseVector { entries, dim }
    }

    pub fn entries(&self) -> &[(usize, F)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn sum(&self) -> F {
        self.entries.iter().map(|(_, v)| *v).sum()
    }

    pub fn norm(&self) -> F {
        self.entries.iter().map(|(_, v)| *v * *v).sum::<F>().sqrt()
    }

    /// Dot product with a dense row of length at least `dim`.
    pub fn dot(&self, dense: &[F]) -> F {
        self.entries.iter().map(|(i, v)| dense[*i] * *v).sum()
    }

    pub fn dot_sparse(&self, other: &SparseVector<F>) -> F {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut acc = F::zero();
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    acc += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        for (i, v) in &self.entries {
            out[*i] = *v;
        }
        out
    }
}

/// Rows of document vectors with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<F> {
    rows: Vec<SparseVector<F>>,
    labels: Vec<String>,
    class_order: Vec<String>,
    dim: usize,
    space_hash: String,
}

impl<F: Scalar> FeatureMatrix<F> {
    /// `class_order` is the sorted set of distinct labels.
    pub fn new(rows: Vec<SparseVector<F>>, labels: Vec<String>, dim: usize) -> Result<Self> {
        let mut class_order = labels.clone();
        class_order.sort();
        class_order.dedup();
        Self::with_classes(rows, labels, class_order, dim)
    }

    /// Uses an explicit class order, which may include classes absent from
    /// `labels`.
    pub fn with_classes(
        rows: Vec<SparseVector<F>>,
        labels: Vec<String>,
        class_order: Vec<String>,
        dim: usize,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.dim != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: r.dim,
            });
        }
        let mut sorted = class_order.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != class_order.len() {
            return Err(Error::invalid("class order contains duplicates"));
        }
        if let Some(l) = labels.iter().find(|l| !class_order.contains(l)) {
            return Err(Error::invalid(format!("label {l:?} missing from class order")));
        }
        Ok(FeatureMatrix {
            rows,
            labels,
            class_order,
            dim,
            space_hash: String::new(),
        })
    }

    /// Records the hash of the feature space the rows came from.
    pub fn with_space_hash(mut self, hash: impl Into<String>) -> Self {
        self.space_hash = hash.into();
        self
    }

    /// Empty when the matrix was not built from a [`FeatureSpace`].
    pub fn space_hash(&self) -> &str {
        &self.space_hash
    }

    /// Keeps the rows at `idx`, in that order; the class order is unchanged.
    pub fn select(&self, idx: &[usize]) -> Self {
        FeatureMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            class_order: self.class_order.clone(),
            dim: self.dim,
            space_hash: self.space_hash.clone(),
        }
    }

    pub fn rows(&self) -> &[SparseVector<F>] {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_order(&self) -> &[String] {
        &self.class_order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Label of each row as an index into `class_order`.
    pub fn label_indices(&self) -> Vec<usize> {
        let pos: HashMap<&str, usize> = self
            .class_order
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        self.labels.iter().map(|l| pos[l.as_str()]).collect()
    }

    /// Header `V n_rows`, then one `label idx:val ...` line per row.
    pub fn to_sparse_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dim, self.rows.len());
        for (row, label) in self.rows.iter().zip(&self.labels) {
            out.push_str(label);
            for (i, v) in &row.entries {
                out.push_str(&format!(" {i}:{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    version: String,
    kind: FeatureKind,
    params: SpaceParams,
    vocabulary: Vec<String>,
    template_vocab: Option<TemplateVocabulary>,
}

/// A built feature space: term → dense index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    kind: FeatureKind,
    params: SpaceParams,
    terms: Vec<String>,
    index: HashMap<String, usize>,
    template_vocab: Option<TemplateVocabulary>,
    hash: String,
}

fn lexical_counts(kind: FeatureKind, n_max: usize, sentences: &mut dyn Iterator<Item = &[String]>) -> HashMap<String, u64> {
    let n_max = if kind == FeatureKind::Bow { 1 } else { n_max };
    let mut counts = HashMap::new();
    for sent in sentences {
        let lower: Vec<String> = sent.iter().map(|t| t.to_lowercase()).collect();
        for n in 1..=n_max {
            for w in lower.windows(n) {
                *counts.entry(w.join(" ")).or_insert(0) += 1;
            }
        }
    }
    counts
}

impl FeatureSpace {
    fn from_parts(
        kind: FeatureKind,
        params: SpaceParams,
        terms: Vec<String>,
        template_vocab: Option<TemplateVocabulary>,
    ) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut space = FeatureSpace {
            kind,
            params,
            terms,
            index,
            template_vocab,
            hash: String::new(),
        };
        space.hash = hashing::digest(space.to_json().as_bytes());
        space
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn params(&self) -> SpaceParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    /// Terms in index order. Template terms are space-joined tag names.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn template_vocab(&self) -> Option<&TemplateVocabulary> {
        self.template_vocab.as_ref()
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpaceFile {
            version: SPACE_VERSION.to_string(),
            kind: self.kind,
            params: self.params,
            vocabulary: self.terms.clone(),
            template_vocab: self.template_vocab.clone(),
        })
        .expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SpaceFile = serde_json::from_str(s)?;
        if file.version != SPACE_VERSION {
            return Err(Error::invalid(format!("unsupported feature space version {:?}", file.version)));
        }
        let template_vocab = match file.template_vocab {
            Some(v) => Some(TemplateVocabulary::from_json(&serde_json::to_string(&v)?)?),
            None => None,
        };
        if file.kind == FeatureKind::Template && template_vocab.is_none() {
            return Err(Error::invalid("template feature space without template vocabulary"));
        }
        let space = Self::from_parts(file.kind, file.params, file.vocabulary, template_vocab);
        if space.index.len() != space.terms.len() || space.terms.is_empty() {
            return Err(Error::invalid("feature space vocabulary must be nonempty and unique"));
        }
        Ok(space)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn needs_tagger(&self) -> bool {
        self.kind == FeatureKind::Template
    }

    /// Vectorizes already-tokenized text. Not valid for template spaces.
    pub fn vectorize_tokens<F: Scalar>(&self, tokens: &TokenSequence) -> Result<SparseVector<F>> {
        if self.needs_tagger() {
            return Err(Error::invalid("template features need tagged sentences"));
        }
        Ok(self.lexical_vector(&mut tokens.sentences()))
    }

    /// Vectorizes tagged sentences; works for every kind.
    pub fn vectorize_tagged<F: Scalar>(&self, sentences: &[TaggedSentence]) -> SparseVector<F> {
        match (&self.template_vocab, self.kind) {
            (Some(vocab), FeatureKind::Template) => {
                let counts: Vec<(usize, u64)> = if self.params.template_counts {
                    count_templates(vocab, sentences)
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| (i, c as u64))
                        .collect()
                } else {
                    match_templates(vocab, sentences)
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| (i, c as u64))
                        .collect()
                };
                SparseVector::from_counts(counts, self.dim())
            }
            _ => self.lexical_vector(&mut sentences.iter().map(|s| s.tokens.as_slice())),
        }
    }

    fn lexical_vector<F: Scalar>(&self, sentences: &mut dyn Iterator<Item = &[String]>) -> SparseVector<F> {
        let counts = lexical_counts(self.kind, self.params.n_max, sentences);
        SparseVector::from_counts(
            counts
                .into_iter()
                .filter_map(|(t, c)| self.index.get(&t).map(|i| (*i, c))),
            self.dim(),
        )
    }

    /// Vectorizes raw text. Template spaces require a tagger.
    pub fn vectorize_text<F: Scalar>(&self, text: &str, tagger: Option<&TaggerModel>) -> Result<SparseVector<F>> {
        match (self.needs_tagger(), tagger) {
            (true, Some(t)) => Ok(self.vectorize_tagged(&t.tag_text(text))),
            (true, None) => Err(Error::invalid("template features need a tagger")),
            (false, _) => self.vectorize_tokens(&tokenize(text)),
        }
    }

    pub fn vectorize<F: Scalar>(&self, doc: &Document, tagger: Option<&TaggerModel>) -> Result<SparseVector<F>> {
        self.vectorize_text(&doc.text, tagger)
    }
}

/// Builds a lexical (bow/ngram) space, or a template space when `kind` is
/// template and `template_vocab` is supplied.
pub fn build_space(
    corpus: &Corpus,
    kind: FeatureKind,
    params: SpaceParams,
    template_vocab: Option<&TemplateVocabulary>,
) -> Result<FeatureSpace> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a feature space from an empty corpus"));
    }
    if kind == FeatureKind::Ngram && params.n_max < 1 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    if kind == FeatureKind::Template {
        let vocab = template_vocab.ok_or_else(|| Error::invalid("template features need a mined template vocabulary"))?;
        if vocab.is_empty() {
            return Err(Error::invalid("template vocabulary is empty"));
        }
        let terms = vocab.templates.iter().map(|t| t.tags.to_string()).collect();
        return Ok(FeatureSpace::from_parts(kind, params, terms, Some(vocab.clone())));
    }
    let counts = corpus
        .documents()
        .par_iter()
        .map(|d| lexical_counts(kind, params.n_max, &mut tokenize(&d.text).sentences()))
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    let mut ranked: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= params.min_count).collect();
    if ranked.is_empty() {
        return Err(Error::invalid(format!(
            "no {kind} term reaches min_count {}",
            params.min_count
        )));
    }
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let terms = ranked.into_iter().map(|(t, _)| t).collect();
    Ok(FeatureSpace::from_parts(kind, params, terms, None))
}

/// Vectorizes every document in corpus order.
pub fn assemble_matrix<F: Scalar>(
    space: &FeatureSpace,
    corpus: &Corpus,
    tagger: Option<&TaggerModel>,
    label_field: LabelField,
) -> Result<FeatureMatrix<F>> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot assemble a feature matrix from an empty corpus"));
    }
    let rows = corpus
        .documents()
        .par_iter()
        .map(|d| space.vectorize(d, tagger))
        .collect::<Result<Vec<_>>>()?;
    let labels = corpus.iter().map(|d| label_field.get(d)).collect();
    Ok(FeatureMatrix::new(rows, labels, space.dim())?.with_space_hash(space.hash()))
}
