//! Universal Dependencies treebank ingestion.
//!
//! CoNLL-U files are parsed into [`SentenceRecord`]s of syntactic words.
//! Multiword-token range lines (`3-4`) and empty nodes (`5.1`) are not
//! tokens; the range lines are remembered so that sentences can be written
//! back out unchanged.

mod conllu;
mod corpus;
mod feats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conllu::{parse_conllu, read_treebank_dir, write_conllu, Treebank};
pub use corpus::{corpus_stats, merge_treebanks, Corpus, CorpusStats, DEFAULT_TARGET_FEATURES};
pub use feats::{format_feats, parse_feats};

/// The 17 universal part-of-speech tags.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

pub fn is_valid_upos(tag: &str) -> bool {
    tag == "_" || UPOS_TAGS.contains(&tag)
}

#[derive(Debug, Error)]
pub enum UdError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: input is not valid UTF-8")]
    Encoding { line: usize },
    #[error("malformed feature entry {entry:?}")]
    Feature { entry: String },
    #[error("cannot merge treebanks of different languages: {0} and {1}")]
    MixedLanguages(String, String),
    #[error("no treebanks to merge")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<UdError>,
    },
}

/// UD split a sentence was published in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// Detect the split from a UD file name such as `en_ewt-ud-dev.conllu`.
    pub fn from_file_name(name: &str) -> Option<Split> {
        let stem = name.strip_suffix(".conllu").unwrap_or(name);
        let last = stem.rsplit(['-', '_', '.']).next()?;
        last.parse().ok()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "development" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One syntactic word of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    /// 1-based CoNLL-U ID.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: BTreeMap<String, String>,
    /// HEAD column; `None` when written as `_`.
    pub head: Option<usize>,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
    /// Token is covered by a multiword-token range line.
    pub is_multiword_part: bool,
}

/// A multiword-token range line (`first-last form ...`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiwordRange {
    pub first: usize,
    pub last: usize,
    pub form: String,
    pub misc: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<TokenRecord>,
    pub language: String,
    pub treebank_id: String,
    pub split: Split,
    pub sent_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multiword_ranges: Vec<MultiwordRange>,
}

impl SentenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }

    /// Identifier unique across merged treebanks.
    pub fn uid(&self) -> String {
        format!("{}/{}", self.treebank_id, self.sent_id)
    }
}
