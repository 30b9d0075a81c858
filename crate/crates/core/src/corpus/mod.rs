//! Labeled text corpora: ingestion, validation, splitting and sampling.
//!
//! A [`Corpus`] is an ordered, immutable list of [`Document`]s with unique
//! ids. Every downstream module reads documents from here.

mod jsonl;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing;

pub use jsonl::{load_jsonl, load_jsonl_with, parse_jsonl, save_jsonl, UnknownKeys};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            _ => Err(Error::invalid(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source_label: String,
    pub role: Role,
    pub dataset: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

/// An ordered collection of documents with unique ids.
///
/// `label_set` is always the sorted set of distinct `source_label`s.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    label_set: Vec<String>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if d.text.is_empty() {
                return Err(Error::invalid(format!("document {:?} has empty text", d.id)));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(Error::invalid(format!("duplicate document id {:?}", d.id)));
            }
        }
        Ok(Self::from_validated(documents))
    }

    fn from_validated(documents: Vec<Document>) -> Self {
        let label_set = documents
            .iter()
            .map(|d| d.source_label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Corpus {
            documents,
            label_set,
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    /// Keeps the documents matching `pred`, preserving order.
    pub fn filter(&self, mut pred: impl FnMut(&Document) -> bool) -> Corpus {
        Self::from_validated(self.documents.iter().filter(|d| pred(d)).cloned().collect())
    }

    /// Applies `f` to every document. Ids must stay unique.
    pub fn map_documents(self, f: impl FnMut(Document) -> Document) -> Result<Corpus> {
        Corpus::new(self.documents.into_iter().map(f).collect())
    }

    /// Concatenates corpora in order; ids must be unique across all of them.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Corpus>) -> Result<Corpus> {
        Corpus::new(
            parts
                .into_iter()
                .flat_map(|c| c.documents.iter().cloned())
                .collect(),
        )
    }

    /// Replaces `source_label` through `mapping`; labels absent from the map
    /// are kept.
    pub fn relabel(self, mapping: &BTreeMap<String, String>) -> Corpus {
        let docs = self
            .documents
            .into_iter()
            .map(|mut d| {
                if let Some(to) = mapping.get(&d.source_label) {
                    d.source_label = to.clone();
                }
                d
            })
            .collect();
        Self::from_validated(docs)
    }

    /// Content hash over ids, labels and texts, in document order.
    pub fn content_hash(&self) -> String {
        hashing::digest_chunks(self.documents.iter().flat_map(|d| {
            [
                d.id.as_bytes(),
                d.source_label.as_bytes(),
                d.text.as_bytes(),
            ]
        }))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

/// Stratified random split into (train, test).
///
/// Each label contributes `round(fraction * count)` documents to train.
/// Output documents keep their input order and have `split` rewritten.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; corpus.len()];
    for label in corpus.label_set() {
        let mut idx: Vec<usize> = corpus
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| &d.source_label == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (d, t) in corpus.documents.iter().zip(in_train) {
        let mut d = d.clone();
        if t {
            d.split = Split::Train;
            train.push(d);
        } else {
            d.split = Split::Test;
            test.push(d);
        }
    }
    Ok((Corpus::from_validated(train), Corpus::from_validated(test)))
}

/// Uniform sample of `n` documents without replacement, in original order.
pub fn subsample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n > corpus.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} documents from a corpus of {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
    idx.sort_unstable();
    Ok(Corpus::from_validated(
        idx.into_iter().map(|i| corpus.documents[i].clone()).collect(),
    ))
}

#[cfg(test)]
pub(crate) fn doc(id: &str, label: &str, text: &str) -> Document {
    Document {
        id: id.to_string(),
        text: text.to_string(),
        source_label: label.to_string(),
        role: Role::Teacher,
        dataset: "test".to_string(),
        split: Split::Train,
        prompt_id: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labelled(per_label: usize, labels: usize) -> Corpus {
        let docs = (0..labels)
            .flat_map(|l| {
                (0..per_label).map(move |i| doc(&format!("l{l}-{i}"), &format!("L{l}"), "x y"))
            })
            .collect();
        Corpus::new(docs).unwrap()
    }

    fn ids(c: &Corpus) -> BTreeSet<String> {
        c.iter().map(|d| d.id.clone()).collect()
    }

    #[test]
    fn label_set_is_sorted_and_unique() {
        let c = Corpus::new(vec![doc("1", "b", "t"), doc("2", "a", "t"), doc("3", "b", "t")])
            .unwrap();
        assert_eq!(c.label_set(), ["a", "b"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Corpus::new(vec![doc("1", "a", "t"), doc("1", "b", "t")]).is_err());
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let c = labelled(10, 5);
        let (train, test) = split(&c, 0.8, 7).unwrap();
        for l in c.label_set() {
            assert_eq!(train.iter().filter(|d| &d.source_label == l).count(), 8);
            assert_eq!(test.iter().filter(|d| &d.source_label == l).count(), 2);
        }
        let (train2, test2) = split(&c, 0.8, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = labelled(4, 2);
        assert!(split(&c, 1.0, 0).is_err());
        assert!(split(&c, 0.0, 0).is_err());
        assert!(split(&Corpus::default(), 0.5, 0).is_err());
    }

    #[test]
    fn different_seeds_change_membership() {
        let c = labelled(10, 5);
        let (a, _) = split(&c, 0.8, 1).unwrap();
        let (b, _) = split(&c, 0.8, 2).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(ids(&a), ids(&b));
    }

    #[test]
    fn subsample_edges() {
        let c = labelled(1000, 2);
        assert_eq!(subsample(&c, c.len(), 3).unwrap(), c);
        assert!(subsample(&c, 0, 3).unwrap().is_empty());
        assert!(subsample(&c, c.len() + 1, 3).is_err());
        let a = subsample(&c, 50, 11).unwrap();
        let b = subsample(&c, 50, 11).unwrap();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn subsample_preserves_order() {
        let c = labelled(100, 1);
        let s = subsample(&c, 30, 5).unwrap();
        let pos: Vec<usize> = s
            .iter()
            .map(|d| c.iter().position(|e| e.id == d.id).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn split_partitions_input(per_label in 1usize..20, labels in 1usize..6,
                                  frac in 0.05f64..0.95, seed in any::<u64>()) {
            let c = labelled(per_label, labels);
            let (train, test) = split(&c, frac, seed).unwrap();
            let (tr, te) = (ids(&train), ids(&test));
            prop_assert!(tr.is_disjoint(&te));
            prop_assert_eq!(tr.union(&te).cloned().collect::<BTreeSet<_>>(), ids(&c));
            for l in c.label_set() {
                let n = train.iter().filter(|d| &d.source_label == l).count() as f64;
                prop_assert!((n - frac * per_label as f64).abs() <= 1.0);
            }
        }
    }
}
