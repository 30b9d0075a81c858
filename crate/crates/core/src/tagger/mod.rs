//! Tokenization and Universal-POS tagging.

mod conllu;
mod perceptron;
mod tokenize;
mod upos;

use serde::{Deserialize, Serialize};

pub use conllu::{load_conllu, parse_conllu, write_conllu};
pub use perceptron::{parse_slashed, train_tagger, TaggerModel, MODEL_VERSION};
pub use tokenize::{tokenize, TokenSequence};
pub use upos::Upos;

/// A sentence with one UPOS tag per token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Upos>,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
