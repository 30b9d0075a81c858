//! Synthetic teacher families with controlled syntactic signatures.
//!
//! Every teacher in a family writes sentences whose tag sequence is a
//! permutation of the same tag multiset, filled from the same per-tag word
//! pools. Teachers differ only in which orderings ("plans") they prefer, so
//! word counts carry no teacher signal while tag n-grams do.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Document, Role, Split};
use crate::error::{Error, Result};
use crate::tagger::{TaggedSentence, Upos};

pub type Lexicon = BTreeMap<Upos, Vec<String>>;

/// Plans owned by each teacher in a family.
pub const PLANS_PER_TEACHER: usize = 4;

/// Window length over which teacher blocks are kept disjoint.
pub const SIGNATURE_WINDOW: usize = 4;

const SENTENCE_TAGS: [Upos; 8] = [
    Upos::DET,
    Upos::DET,
    Upos::ADJ,
    Upos::NOUN,
    Upos::NOUN,
    Upos::VERB,
    Upos::ADP,
    Upos::ADV,
];

pub fn default_lexicon() -> Lexicon {
    let pools: [(Upos, &[&str]); 7] = [
        (Upos::DET, &["the", "a", "this", "every", "each"]),
        (
            Upos::ADJ,
            &["red", "big", "small", "old", "happy", "green", "quiet", "bright", "heavy", "cold"],
        ),
        (
            Upos::NOUN,
            &[
                "cat", "dog", "house", "river", "teacher", "garden", "window", "city", "book",
                "tree", "car", "bird",
            ],
        ),
        (
            Upos::VERB,
            &["sees", "finds", "likes", "takes", "builds", "paints", "visits", "holds", "moves"],
        ),
        (Upos::ADP, &["in", "on", "under", "near", "with", "behind", "from"]),
        (Upos::ADV, &["quickly", "slowly", "often", "quietly", "rarely", "happily"]),
        (Upos::PUNCT, &["."]),
    ];
    pools
        .into_iter()
        .map(|(t, ws)| (t, ws.iter().map(|w| w.to_string()).collect()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TeacherSignature {
    pub label: String,
    pub tag_plan_pool: Arc<Vec<Vec<Upos>>>,
    pub plan_weights: Vec<f64>,
    pub shared_lexicon: Arc<Lexicon>,
    pub separation: f64,
}

fn windows(plan: &[Upos]) -> impl Iterator<Item = &[Upos]> {
    plan.windows(SIGNATURE_WINDOW)
}

/// Builds `num_teachers` signatures sharing the default lexicon.
pub fn make_signature_family(
    num_teachers: usize,
    separation: f64,
    seed: u64,
) -> Result<Vec<TeacherSignature>> {
    make_signature_family_with(num_teachers, separation, seed, Arc::new(default_lexicon()), "teacher")
}

/// Builds a family over an explicit lexicon; labels are `{prefix}-{i}`.
///
/// The plan pool holds `PLANS_PER_TEACHER` plans per teacher. Plans of
/// different teachers share no length-4 tag window. Teacher `t` weights
/// plan `i` as `(1 - s) / P + s * [i in block t] / PLANS_PER_TEACHER`.
pub fn make_signature_family_with(
    num_teachers: usize,
    separation: f64,
    seed: u64,
    lexicon: Arc<Lexicon>,
    prefix: &str,
) -> Result<Vec<TeacherSignature>> {
    if num_teachers < 2 {
        return Err(Error::invalid("a signature family needs at least two teachers"));
    }
    if !(0.0..=1.0).contains(&separation) {
        return Err(Error::invalid(format!("separation {separation} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = Arc::new(plan_pool(num_teachers, &mut rng)?);
    let p = pool.len() as f64;
    let m = PLANS_PER_TEACHER as f64;
    let family = (0..num_teachers)
        .map(|t| {
            let plan_weights = (0..pool.len())
                .map(|i| {
                    let own = if i / PLANS_PER_TEACHER == t { 1.0 } else { 0.0 };
                    (1.0 - separation) / p + separation * own / m
                })
                .collect();
            TeacherSignature {
                label: format!("{prefix}-{t}"),
                tag_plan_pool: Arc::clone(&pool),
                plan_weights,
                shared_lexicon: Arc::clone(&lexicon),
                separation,
            }
        })
        .collect();
    Ok(family)
}

fn plan_pool(num_teachers: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Upos>>> {
    const MAX_ATTEMPTS: usize = 200_000;
    let mut pool: Vec<Vec<Upos>> = Vec::with_capacity(num_teachers * PLANS_PER_TEACHER);
    let mut block_windows: Vec<HashSet<Vec<Upos>>> = vec![HashSet::new(); num_teachers];
    let mut attempts = 0;
    for t in 0..num_teachers {
        while pool.len() < (t + 1) * PLANS_PER_TEACHER {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::invalid(format!(
                    "could not build disjoint plans for {num_teachers} teachers"
                )));
            }
            let mut plan = SENTENCE_TAGS.to_vec();
            plan.shuffle(rng);
            plan.push(Upos::PUNCT);
            if pool.contains(&plan) {
                continue;
            }
            let clash = windows(&plan).any(|w| {
                block_windows
                    .iter()
                    .enumerate()
                    .any(|(o, ws)| o != t && ws.contains(w))
            });
            if clash {
                continue;
            }
            block_windows[t].extend(windows(&plan).map(<[Upos]>::to_vec));
            pool.push(plan);
        }
    }
    Ok(pool)
}

/// A student that keeps `retention` of its teacher's plan preferences and
/// spreads the rest uniformly over the pool.
pub fn derive_student(
    teacher: &TeacherSignature,
    retention: f64,
    label: impl Into<String>,
) -> TeacherSignature {
    let p = teacher.plan_weights.len() as f64;
    TeacherSignature {
        label: label.into(),
        plan_weights: teacher
            .plan_weights
            .iter()
            .map(|w| retention * w + (1.0 - retention) / p)
            .collect(),
        ..teacher.clone()
    }
}

struct SentenceSampler<'a> {
    sig: &'a TeacherSignature,
    plans: WeightedIndex<f64>,
}

impl<'a> SentenceSampler<'a> {
    fn new(sig: &'a TeacherSignature) -> Result<Self> {
        for plan in sig.tag_plan_pool.iter() {
            for t in plan {
                if sig.shared_lexicon.get(t).is_none_or(Vec::is_empty) {
                    return Err(Error::invalid(format!("empty word pool for tag {t}")));
                }
            }
        }
        let plans = WeightedIndex::new(&sig.plan_weights)
            .map_err(|e| Error::invalid(format!("bad plan weights: {e}")))?;
        Ok(SentenceSampler { sig, plans })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TaggedSentence {
        let plan = &self.sig.tag_plan_pool[self.plans.sample(rng)];
        let tokens = plan
            .iter()
            .map(|t| {
                self.sig.shared_lexicon[t]
                    .choose(rng)
                    .expect("pool checked non-empty")
                    .clone()
            })
            .collect();
        TaggedSentence {
            tokens,
            tags: plan.clone(),
        }
    }
}

fn render(sentence: &TaggedSentence) -> String {
    let mut s = String::new();
    for (i, (tok, tag)) in sentence.tokens.iter().zip(&sentence.tags).enumerate() {
        if i > 0 && *tag != Upos::PUNCT {
            s.push(' ');
        }
        s.push_str(tok);
    }
    s
}

/// Generates `n_docs` teacher documents of `sentences_per_doc` sentences.
pub fn generate_corpus(
    signature: &TeacherSignature,
    n_docs: usize,
    sentences_per_doc: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_docs == 0 {
        return Err(Error::invalid("n_docs must be at least 1"));
    }
    if sentences_per_doc == 0 {
        return Err(Error::invalid("sentences_per_doc must be at least 1"));
    }
    let sampler = SentenceSampler::new(signature)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|i| {
            let text = (0..sentences_per_doc)
                .map(|_| render(&sampler.sample(&mut rng)))
                .collect::<Vec<_>>()
                .join(" ");
            Document {
                id: format!("{}-{i:05}", signature.label),
                text,
                source_label: signature.label.clone(),
                role: Role::Teacher,
                dataset: "synthetic".to_string(),
                split: Split::Train,
                prompt_id: None,
            }
        })
        .collect();
    Corpus::new(docs)
}

/// Gold-tagged sentences drawn from a signature, for training a tagger on
/// the synthetic vocabulary.
pub fn generate_tagged(
    signature: &TeacherSignature,
    n_sentences: usize,
    seed: u64,
) -> Result<Vec<TaggedSentence>> {
    let sampler = SentenceSampler::new(signature)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_sentences).map(|_| sampler.sample(&mut rng)).collect())
}

/// Marks every document of `corpus` as student output for the test split.
pub fn as_student(corpus: Corpus) -> Result<Corpus> {
    corpus.map_documents(|mut d| {
        d.role = Role::Student;
        d.split = Split::Test;
        d
    })
}
