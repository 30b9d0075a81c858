//! Syntactic templates: the most frequent part-of-speech n-grams across a
//! pool of documents, and per-document template indicators.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hashing;
use crate::tagger::{TaggedSentence, TaggerModel, Upos};

pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_CAPACITY: usize = 50;

/// A contiguous run of UPOS tags. Ordered lexicographically by tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PosTemplate(pub Vec<Upos>);

impl PosTemplate {
    pub fn tags(&self) -> &[Upos] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for PosTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedTemplate {
    pub tags: PosTemplate,
    pub count: u64,
}

/// Top-K templates of length L, ranked by count then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateVocabulary {
    #[serde(rename = "L")]
    pub window: usize,
    #[serde(rename = "K")]
    pub capacity: usize,
    pub source_hash: String,
    pub templates: Vec<RankedTemplate>,
    #[serde(skip)]
    index: HashMap<PosTemplate, usize>,
}

impl TemplateVocabulary {
    fn new(window: usize, capacity: usize, source_hash: String, templates: Vec<RankedTemplate>) -> Self {
        let index = templates
            .iter()
            .enumerate()
            .map(|(i, t)| (t.tags.clone(), i))
            .collect();
        TemplateVocabulary {
            window,
            capacity,
            source_hash,
            templates,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn rank_of(&self, t: &PosTemplate) -> Option<usize> {
        self.index.get(t).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: TemplateVocabulary = serde_json::from_str(s)?;
        if raw.templates.iter().any(|t| t.tags.len() != raw.window || t.count == 0) {
            return Err(Error::invalid("template vocabulary entries disagree with L or have zero counts"));
        }
        if raw.templates.len() > raw.capacity {
            return Err(Error::invalid("template vocabulary exceeds its capacity K"));
        }
        Ok(Self::new(raw.window, raw.capacity, raw.source_hash, raw.templates))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn hash(&self) -> String {
        hashing::digest(self.to_json().as_bytes())
    }
}

/// All stride-1 windows of length `window` inside one sentence.
pub fn extract_windows(sentence: &TaggedSentence, window: usize) -> Result<Vec<PosTemplate>> {
    if window < 1 {
        return Err(Error::invalid("template length must be at least 1"));
    }
    Ok(sentence
        .tags
        .windows(window)
        .map(|w| PosTemplate(w.to_vec()))
        .collect())
}

/// Window counts over a document's sentences; windows never span sentences.
pub fn count_windows<'a>(
    sentences: impl IntoIterator<Item = &'a TaggedSentence>,
    window: usize,
) -> HashMap<PosTemplate, u64> {
    let mut counts = HashMap::new();
    for s in sentences {
        for w in s.tags.windows(window) {
            *counts.entry(PosTemplate(w.to_vec())).or_insert(0) += 1;
        }
    }
    counts
}

fn merge_counts(mut a: HashMap<PosTemplate, u64>, b: HashMap<PosTemplate, u64>) -> HashMap<PosTemplate, u64> {
    if a.len() < b.len() {
        return merge_counts(b, a);
    }
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

fn top_k(counts: HashMap<PosTemplate, u64>, capacity: usize) -> Vec<RankedTemplate> {
    let mut ranked: Vec<RankedTemplate> = counts
        .into_iter()
        .map(|(tags, count)| RankedTemplate { tags, count })
        .collect();
    ranked.sort_unstable_by(|a, b| b.count.cmp(&a.count).then_with(|| a.tags.cmp(&b.tags)));
    ranked.truncate(capacity);
    ranked
}

/// Mines templates from documents that are already tagged (one entry per
/// document). Counting runs in parallel; the result does not depend on
/// document order.
pub fn mine_from_tagged(
    documents: &[Vec<TaggedSentence>],
    window: usize,
    capacity: usize,
    source_hash: String,
) -> Result<TemplateVocabulary> {
    if window < 1 {
        return Err(Error::invalid("template length must be at least 1"));
    }
    if capacity < 1 {
        return Err(Error::invalid("template capacity must be at least 1"));
    }
    let counts = documents
        .par_iter()
        .map(|doc| count_windows(doc, window))
        .reduce(HashMap::new, merge_counts);
    Ok(TemplateVocabulary::new(window, capacity, source_hash, top_k(counts, capacity)))
}

/// Hash identifying a mining pool: the tagger plus every corpus's content.
pub fn pool_hash(corpora: &[&Corpus], tagger: &TaggerModel) -> String {
    let corpus_hashes: Vec<String> = corpora.iter().map(|c| c.content_hash()).collect();
    hashing::digest_chunks(
        std::iter::once(tagger.hash().as_bytes()).chain(corpus_hashes.iter().map(|h| h.as_bytes())),
    )
}

/// Tags every document of the given corpora and mines the top `capacity`
/// templates of length `window` over their union.
pub fn mine_templates(
    corpora: &[&Corpus],
    tagger: &TaggerModel,
    window: usize,
    capacity: usize,
) -> Result<TemplateVocabulary> {
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::invalid("no documents to mine templates from"));
    }
    let tagged: Vec<Vec<TaggedSentence>> = corpora
        .iter()
        .flat_map(|c| c.documents())
        .collect::<Vec<_>>()
        .par_iter()
        .map(|d| tagger.tag_text(&d.text))
        .collect();
    mine_from_tagged(&tagged, window, capacity, pool_hash(corpora, tagger))
}

/// Binary presence of each vocabulary template in a document.
pub fn match_templates(vocab: &TemplateVocabulary, sentences: &[TaggedSentence]) -> Vec<u8> {
    let mut out = vec![0u8; vocab.len()];
    for s in sentences {
        for w in s.tags.windows(vocab.window) {
            if let Some(i) = vocab.index.get(w) {
                out[*i] = 1;
            }
        }
    }
    out
}

/// Occurrence counts of each vocabulary template in a document.
pub fn count_templates(vocab: &TemplateVocabulary, sentences: &[TaggedSentence]) -> Vec<u32> {
    let mut out = vec![0u32; vocab.len()];
    for s in sentences {
        for w in s.tags.windows(vocab.window) {
            if let Some(i) = vocab.index.get(w) {
                out[*i] += 1;
            }
        }
    }
    out
}

// Lookups by slice avoid allocating a PosTemplate per window.
impl std::borrow::Borrow<[Upos]> for PosTemplate {
    fn borrow(&self) -> &[Upos] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Upos::*;

    fn sent(tags: &[Upos]) -> TaggedSentence {
        TaggedSentence {
            tokens: tags.iter().map(|t| t.to_string().to_lowercase()).collect(),
            tags: tags.to_vec(),
        }
    }

    fn t(tags: &[Upos]) -> PosTemplate {
        PosTemplate(tags.to_vec())
    }

    #[test]
    fn windows_of_length_two() {
        let w = extract_windows(&sent(&[DET, NOUN, VERB, DET, NOUN]), 2).unwrap();
        assert_eq!(
            w,
            [t(&[DET, NOUN]), t(&[NOUN, VERB]), t(&[VERB, DET]), t(&[DET, NOUN])]
        );
    }

    #[test]
    fn window_edge_cases() {
        assert!(extract_windows(&sent(&[DET, NOUN, VERB]), 4).unwrap().is_empty());
        let s = sent(&[DET, NOUN, VERB, ADV]);
        assert_eq!(extract_windows(&s, 4).unwrap(), [t(&[DET, NOUN, VERB, ADV])]);
        assert!(extract_windows(&s, 0).is_err());
    }

    #[test]
    fn top_template_by_count() {
        let docs = vec![vec![sent(&[DET, NOUN, VERB])], vec![sent(&[DET, NOUN, PUNCT])]];
        let v = mine_from_tagged(&docs, 2, 1, String::new()).unwrap();
        assert_eq!(v.templates.len(), 1);
        assert_eq!(v.templates[0].tags, t(&[DET, NOUN]));
        assert_eq!(v.templates[0].count, 2);
    }

    #[test]
    fn capacity_not_binding_and_ties_lexicographic() {
        let docs = vec![vec![sent(&[VERB, NOUN]), sent(&[ADJ, NOUN])]];
        let v = mine_from_tagged(&docs, 2, 10, String::new()).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.templates[0].tags, t(&[ADJ, NOUN]));
        assert_eq!(v.templates[1].tags, t(&[VERB, NOUN]));
    }

    #[test]
    fn bad_parameters() {
        assert!(mine_from_tagged(&[], 0, 5, String::new()).is_err());
        assert!(mine_from_tagged(&[], 2, 0, String::new()).is_err());
    }

    #[test]
    fn indicators_are_binary() {
        let docs = vec![vec![sent(&[DET, NOUN, VERB, DET])]];
        let v = mine_from_tagged(&docs, 4, 5, String::new()).unwrap();
        assert_eq!(v.templates[0].tags, t(&[DET, NOUN, VERB, DET]));
        let repeated = vec![sent(&[DET, NOUN, VERB, DET]); 3];
        assert_eq!(match_templates(&v, &repeated), [1]);
        assert_eq!(count_templates(&v, &repeated), [3]);
        assert_eq!(match_templates(&v, &[]), [0]);
    }

    #[test]
    fn no_windows_across_sentences() {
        let a = sent(&[DET, NOUN]);
        let b = sent(&[VERB, ADV]);
        let counts = count_windows([&a, &b], 2);
        assert_eq!(counts.len(), 2);
        assert!(!counts.contains_key(&t(&[NOUN, VERB])));
    }

    #[test]
    fn json_shape_and_round_trip() {
        let docs = vec![vec![sent(&[DET, NOUN, VERB, DET, NOUN])]];
        let v = mine_from_tagged(&docs, 2, 50, "abc".into()).unwrap();
        let json = v.to_json();
        let val: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(val["L"], 2);
        assert_eq!(val["K"], 50);
        assert_eq!(val["source_hash"], "abc");
        assert_eq!(val["templates"][0]["tags"], serde_json::json!(["DET", "NOUN"]));
        assert_eq!(val["templates"][0]["count"], 2);
        let back = TemplateVocabulary::from_json(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.rank_of(&t(&[DET, NOUN])), Some(0));
    }

    fn tagged_docs() -> impl Strategy<Value = Vec<Vec<TaggedSentence>>> {
        let tag = (0..Upos::COUNT).prop_map(|i| Upos::from_index(i).unwrap());
        let sentence = prop::collection::vec(tag, 0..12).prop_map(|tags| sent(&tags));
        prop::collection::vec(prop::collection::vec(sentence, 0..4), 1..30)
    }

    fn brute_force(docs: &[Vec<TaggedSentence>], window: usize, capacity: usize) -> Vec<(Vec<Upos>, u64)> {
        let mut counts: HashMap<Vec<Upos>, u64> = HashMap::new();
        for s in docs.iter().flatten() {
            for start in 0..s.tags.len().saturating_sub(window - 1) {
                *counts.entry(s.tags[start..start + window].to_vec()).or_insert(0) += 1;
            }
        }
        let mut v: Vec<_> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(capacity);
        v
    }

    proptest! {
        #[test]
        fn matches_brute_force(docs in tagged_docs(), window in 1usize..5, capacity in 1usize..40) {
            let v = mine_from_tagged(&docs, window, capacity, String::new()).unwrap();
            let got: Vec<_> = v.templates.iter().map(|t| (t.tags.0.clone(), t.count)).collect();
            prop_assert_eq!(got, brute_force(&docs, window, capacity));
        }

        #[test]
        fn document_order_is_irrelevant(docs in tagged_docs(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = docs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                mine_from_tagged(&docs, 3, 20, String::new()).unwrap(),
                mine_from_tagged(&shuffled, 3, 20, String::new()).unwrap()
            );
        }

        #[test]
        fn smaller_capacity_is_a_prefix(docs in tagged_docs()) {
            let small = mine_from_tagged(&docs, 2, 10, String::new()).unwrap();
            let large = mine_from_tagged(&docs, 2, 20, String::new()).unwrap();
            prop_assert!(large.templates.starts_with(&small.templates));
        }

        #[test]
        fn sentences_never_share_windows(a in prop::collection::vec(0usize..Upos::COUNT, 0..8),
                                         b in prop::collection::vec(0usize..Upos::COUNT, 0..8)) {
            let to = |v: &[usize]| sent(&v.iter().map(|i| Upos::from_index(*i).unwrap()).collect::<Vec<_>>());
            let (sa, sb) = (to(&a), to(&b));
            let joined = count_windows([&sa, &sb], 3);
            let mut separate = count_windows([&sa], 3);
            for (k, v) in count_windows([&sb], 3) {
                *separate.entry(k).or_insert(0) += v;
            }
            prop_assert_eq!(joined, separate);
        }
    }
}
