//! Greedy left-to-right averaged perceptron tagger.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TaggedSentence, TokenSequence, Upos};
use crate::error::{Error, Result};
use crate::hashing;

pub const MODEL_VERSION: &str = "teachertrace-tagger/1";

const START: &str = "-START-";
const END: &str = "-END-";

/// Feature strings for position `i`, written into `out`.
fn extract_features(tokens: &[String], i: usize, prev_tag: Option<Upos>, out: &mut Vec<String>) {
    out.clear();
    let word = tokens[i].as_str();
    let lower = word.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();

    out.push("bias".to_string());
    out.push(format!("w={word}"));
    out.push(format!("lw={lower}"));
    for n in 1..=3 {
        if chars.len() > n {
            let suffix: String = chars[chars.len() - n..].iter().collect();
            let prefix: String = chars[..n].iter().collect();
            out.push(format!("s{n}={suffix}"));
            out.push(format!("p{n}={prefix}"));
        }
    }
    out.push(format!("pt={}", prev_tag.map_or(START, Upos::as_str)));
    out.push(format!(
        "pw={}",
        if i == 0 { START } else { tokens[i - 1].as_str() }
    ));
    out.push(format!(
        "nw={}",
        tokens.get(i + 1).map_or(END, String::as_str)
    ));
}

fn argmax(scores: &[f64; Upos::COUNT]) -> Upos {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Upos::ALL[best]
}

#[derive(Debug, Clone, Copy, Default)]
struct Param {
    weight: f64,
    total: f64,
    stamp: u64,
}

/// Mutable training state: current weights plus the running sums needed for
/// lazy averaging.
#[derive(Default)]
struct Trainer {
    ids: HashMap<String, usize>,
    params: Vec<Vec<(Upos, Param)>>,
    instances: u64,
}

impl Trainer {
    fn scores(&self, feats: &[String]) -> [f64; Upos::COUNT] {
        let mut s = [0.0; Upos::COUNT];
        for f in feats {
            if let Some(&id) = self.ids.get(f) {
                for (tag, p) in &self.params[id] {
                    s[tag.index()] += p.weight;
                }
            }
        }
        s
    }

    fn bump(&mut self, feat: &str, tag: Upos, delta: f64) {
        let id = match self.ids.get(feat) {
            Some(&id) => id,
            None => {
                self.ids.insert(feat.to_string(), self.params.len());
                self.params.push(Vec::new());
                self.params.len() - 1
            }
        };
        let now = self.instances;
        let entries = &mut self.params[id];
        let p = match entries.iter().position(|(t, _)| *t == tag) {
            Some(k) => &mut entries[k].1,
            None => {
                entries.push((tag, Param { stamp: now, ..Param::default() }));
                &mut entries.last_mut().unwrap().1
            }
        };
        p.total += (now - p.stamp) as f64 * p.weight;
        p.stamp = now;
        p.weight += delta;
    }

    fn average(self) -> HashMap<String, Vec<(Upos, f64)>> {
        let now = self.instances.max(1) as f64;
        let mut out = HashMap::with_capacity(self.ids.len());
        for (feat, id) in self.ids {
            let avg: Vec<(Upos, f64)> = self.params[id]
                .iter()
                .map(|(t, p)| {
                    let total = p.total + (self.instances - p.stamp) as f64 * p.weight;
                    (*t, total / now)
                })
                .filter(|(_, w)| *w != 0.0)
                .collect();
            if !avg.is_empty() {
                out.insert(feat, avg);
            }
        }
        out
    }
}

/// Trained, immutable tagger weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    weights: HashMap<String, Vec<(Upos, f64)>>,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    tagset: Vec<Upos>,
    weights: Vec<(String, Upos, f64)>,
}

impl TaggerModel {
    fn from_weights(mut weights: HashMap<String, Vec<(Upos, f64)>>) -> Self {
        for ws in weights.values_mut() {
            ws.sort_by_key(|(t, _)| *t);
        }
        let mut m = TaggerModel {
            weights,
            hash: String::new(),
        };
        m.hash = hashing::digest(&m.to_json_bytes());
        m
    }

    /// SHA-256 of the canonical serialized form.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn num_weights(&self) -> usize {
        self.weights.values().map(Vec::len).sum()
    }

    fn to_json_bytes(&self) -> Vec<u8> {
        let mut flat: Vec<(String, Upos, f64)> = self
            .weights
            .iter()
            .flat_map(|(f, ws)| ws.iter().map(move |&(t, w)| (f.clone(), t, w)))
            .collect();
        flat.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let file = ModelFile {
            version: MODEL_VERSION.to_string(),
            tagset: Upos::ALL.to_vec(),
            weights: flat,
        };
        serde_json::to_vec(&file).expect("weights are finite")
    }

    pub fn to_json(&self) -> String {
        String::from_utf8(self.to_json_bytes()).expect("utf-8")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported tagger model version {:?}",
                file.version
            )));
        }
        if file.tagset != Upos::ALL {
            return Err(Error::invalid("tagger model tagset is not the UPOS set"));
        }
        let mut weights: HashMap<String, Vec<(Upos, f64)>> = HashMap::new();
        for (f, t, w) in file.weights {
            if !w.is_finite() {
                return Err(Error::invalid(format!("non-finite weight for {f:?}")));
            }
            weights.entry(f).or_default().push((t, w));
        }
        Ok(Self::from_weights(weights))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    fn scores(&self, feats: &[String]) -> [f64; Upos::COUNT] {
        let mut s = [0.0; Upos::COUNT];
        for f in feats {
            if let Some(ws) = self.weights.get(f) {
                for &(t, w) in ws {
                    s[t.index()] += w;
                }
            }
        }
        s
    }

    /// Tags one sentence of tokens.
    pub fn tag_tokens(&self, tokens: &[String]) -> Vec<Upos> {
        let mut feats = Vec::with_capacity(16);
        let mut prev = None;
        let mut out = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            extract_features(tokens, i, prev, &mut feats);
            let t = argmax(&self.scores(&feats));
            out.push(t);
            prev = Some(t);
        }
        out
    }

    /// Tags every sentence of a token sequence.
    pub fn tag(&self, tokens: &TokenSequence) -> Vec<TaggedSentence> {
        tokens
            .sentences()
            .map(|s| TaggedSentence {
                tokens: s.to_vec(),
                tags: self.tag_tokens(s),
            })
            .collect()
    }

    /// Tokenizes and tags raw text.
    pub fn tag_text(&self, text: &str) -> Vec<TaggedSentence> {
        self.tag(&super::tokenize(text))
    }

    /// Fraction of gold tags reproduced on pre-tokenized sentences.
    pub fn accuracy(&self, gold: &[TaggedSentence]) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for s in gold {
            let pred = self.tag_tokens(&s.tokens);
            hit += pred.iter().zip(&s.tags).filter(|(a, b)| a == b).count();
            total += s.tags.len();
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Trains an averaged perceptron for `epochs` passes over `data`, shuffling
/// sentence order each epoch with a seeded RNG.
pub fn train_tagger(data: &[TaggedSentence], epochs: usize, seed: u64) -> Result<TaggerModel> {
    if data.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::invalid("tagger training data is empty"));
    }
    for (i, s) in data.iter().enumerate() {
        if s.tokens.len() != s.tags.len() {
            return Err(Error::invalid(format!(
                "training sentence {i} has {} tokens but {} tags",
                s.tokens.len(),
                s.tags.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trainer = Trainer::default();
    let mut feats = Vec::with_capacity(16);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        let mut seen = 0usize;
        for &si in &order {
            let sent = &data[si];
            let mut prev = None;
            for (i, &gold) in sent.tags.iter().enumerate() {
                extract_features(&sent.tokens, i, prev, &mut feats);
                let guess = argmax(&trainer.scores(&feats));
                trainer.instances += 1;
                if guess != gold {
                    for f in &feats {
                        trainer.bump(f, gold, 1.0);
                        trainer.bump(f, guess, -1.0);
                    }
                } else {
                    correct += 1;
                }
                seen += 1;
                prev = Some(guess);
            }
        }
        log::debug!(
            "tagger epoch {}: training accuracy {:.4}",
            epoch + 1,
            correct as f64 / seen.max(1) as f64
        );
    }
    Ok(TaggerModel::from_weights(trainer.average()))
}

/// Parses a sentence of `word/TAG` pairs, for compact test fixtures.
pub fn parse_slashed(s: &str) -> Result<TaggedSentence> {
    let mut out = TaggedSentence::default();
    for pair in s.split_whitespace() {
        let (w, t) = pair
            .rsplit_once('/')
            .ok_or_else(|| Error::invalid(format!("expected word/TAG, got {pair:?}")))?;
        out.tokens.push(w.to_string());
        out.tags.push(t.parse()?);
    }
    Ok(out)
}
