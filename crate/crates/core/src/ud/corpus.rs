use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{SentenceRecord, Split, Treebank, UdError};

/// Features the probing tasks target by default.
pub const DEFAULT_TARGET_FEATURES: [&str; 4] = ["Case", "Gender", "Number", "Tense"];

/// All sentences of one language, treebanks concatenated, UD splits kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub language: String,
    pub sentences: Vec<SentenceRecord>,
}

impl Corpus {
    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
        for s in &self.sentences {
            *counts.entry(s.split).or_default() += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SentenceRecord> {
        self.sentences.iter().filter(move |s| s.split == split)
    }
}

/// Concatenate the treebanks of one language.
pub fn merge_treebanks(treebanks: Vec<Treebank>) -> Result<Corpus, UdError> {
    let language = treebanks.first().ok_or(UdError::Empty)?.language.clone();
    let mut sentences = Vec::new();
    for tb in treebanks {
        if tb.language != language {
            return Err(UdError::MixedLanguages(language, tb.language));
        }
        if let Some(s) = tb.sentences.iter().find(|s| s.language != language) {
            return Err(UdError::MixedLanguages(language, s.language.clone()));
        }
        sentences.extend(tb.sentences);
    }
    Ok(Corpus { language, sentences })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub language: String,
    pub sentences_per_split: BTreeMap<Split, usize>,
    pub n_tokens: usize,
    pub mean_sentence_length: f64,
    /// feature name -> value -> occurrence count
    pub feature_inventory: BTreeMap<String, BTreeMap<String, usize>>,
    /// (form, UPOS) pairs carrying at least one target feature.
    pub n_form_pos_pairs: usize,
    /// Of those, pairs attested with two or more values of some target feature.
    pub n_ambiguous_pairs: usize,
    pub ambiguity_rate: f64,
}

/// Summary statistics; ambiguity is measured over `target_features`.
pub fn corpus_stats(corpus: &Corpus, target_features: &[&str]) -> CorpusStats {
    let mut feature_inventory: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut analyses: BTreeMap<(&str, &str), BTreeMap<&str, BTreeSet<&str>>> = BTreeMap::new();
    let mut n_tokens = 0;
    for s in &corpus.sentences {
        n_tokens += s.tokens.len();
        for t in &s.tokens {
            for (name, value) in &t.feats {
                *feature_inventory.entry(name.clone()).or_default().entry(value.clone()).or_default() += 1;
                if target_features.contains(&name.as_str()) {
                    analyses
                        .entry((t.form.as_str(), t.upos.as_str()))
                        .or_default()
                        .entry(name.as_str())
                        .or_default()
                        .insert(value.as_str());
                }
            }
        }
    }
    let n_form_pos_pairs = analyses.len();
    let n_ambiguous_pairs = analyses.values().filter(|f| f.values().any(|vals| vals.len() >= 2)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CorpusStats {
        language: corpus.language.clone(),
        sentences_per_split: corpus.split_counts(),
        n_tokens,
        mean_sentence_length: ratio(n_tokens, corpus.sentences.len()),
        feature_inventory,
        n_form_pos_pairs,
        n_ambiguous_pairs,
        ambiguity_rate: ratio(n_ambiguous_pairs, n_form_pos_pairs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ud::parse_conllu;

    fn sentence_text(words: &[(&str, &str, &str)]) -> String {
        let mut s = String::new();
        for (i, (form, upos, feats)) in words.iter().enumerate() {
            s.push_str(&format!("{}\t{form}\t_\t{upos}\t_\t{feats}\t0\troot\t_\t_\n", i + 1));
        }
        s + "\n"
    }

    fn treebank(lang: &str, id: &str, n: usize) -> Treebank {
        let text: String = (0..n).map(|_| sentence_text(&[("a", "X", "_"), ("b", "X", "_")])).collect();
        Treebank {
            language: lang.into(),
            treebank_id: id.into(),
            sentences: parse_conllu(text.as_bytes(), lang, id, Split::Train).unwrap(),
        }
    }

    #[test]
    fn merge_concatenates() {
        let c = merge_treebanks(vec![treebank("xx", "a", 5), treebank("xx", "b", 7)]).unwrap();
        assert_eq!(c.len(), 12);
        assert_eq!(c.split_counts()[&Split::Train], 12);
    }

    #[test]
    fn merge_rejects_empty_and_mixed() {
        assert!(matches!(merge_treebanks(vec![]), Err(UdError::Empty)));
        assert!(matches!(
            merge_treebanks(vec![treebank("xx", "a", 1), treebank("yy", "b", 1)]),
            Err(UdError::MixedLanguages(..))
        ));
    }

    #[test]
    fn overlapping_sent_ids_kept_and_disambiguated() {
        let c = merge_treebanks(vec![treebank("xx", "a", 2), treebank("xx", "b", 2)]).unwrap();
        assert_eq!(c.sentences[0].sent_id, c.sentences[2].sent_id.replace("b-", "a-"));
        let uids: BTreeSet<_> = c.sentences.iter().map(|s| s.uid()).collect();
        assert_eq!(uids.len(), 4);
    }

    #[test]
    fn mean_length_of_single_sentence() {
        let text = sentence_text(&[("a", "X", "_"); 5]);
        let c = Corpus { language: "xx".into(), sentences: parse_conllu(text.as_bytes(), "xx", "t", Split::Dev).unwrap() };
        let st = corpus_stats(&c, &DEFAULT_TARGET_FEATURES);
        assert_eq!(st.mean_sentence_length, 5.0);
        assert_eq!(st.sentences_per_split[&Split::Dev], 1);
    }

    #[test]
    fn ambiguity_counts_forms_with_two_values() {
        let text = sentence_text(&[("I", "PRON", "Case=Nom"), ("read", "VERB", "Tense=Past"), ("books", "NOUN", "Number=Plur")])
            + &sentence_text(&[("We", "PRON", "Case=Nom"), ("read", "VERB", "Tense=Pres")])
            + &sentence_text(&[("read", "NOUN", "Number=Sing")]);
        let c = Corpus { language: "en".into(), sentences: parse_conllu(text.as_bytes(), "en", "t", Split::Train).unwrap() };
        let st = corpus_stats(&c, &DEFAULT_TARGET_FEATURES);
        // Brute force over the fixture: pairs (I,PRON) (read,VERB) (books,NOUN) (We,PRON) (read,NOUN);
        // only (read,VERB) has two Tense values.
        assert_eq!(st.n_form_pos_pairs, 5);
        assert_eq!(st.n_ambiguous_pairs, 1);
        assert!((st.ambiguity_rate - 0.2).abs() < 1e-12);
        assert_eq!(st.feature_inventory["Tense"]["Past"], 1);
    }
}
