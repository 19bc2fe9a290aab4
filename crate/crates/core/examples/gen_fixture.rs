//! Regenerate the toy treebank under `fixtures/ud/fx_toy/`.
//!
//! ```text
//! cargo run -p morphoprobe-core --example gen_fixture -- fixtures/ud/fx_toy
//! ```
//!
//! The language is agglutinative: nouns inflect for number and case, verbs
//! for tense and number, adjectives agree in gender and number. One verb
//! (`reda`) has the same form in both tenses.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use morphoprobe_core::rng::{self, Rng};
use morphoprobe_core::ud::{write_conllu, MultiwordRange, SentenceRecord, Split, TokenRecord};
use rand::seq::IndexedRandom;
use rand::Rng as _;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

struct Lexicon {
    nouns: Vec<(String, &'static str)>,
    adjectives: Vec<String>,
    verbs: Vec<String>,
}

fn syllables(rng: &mut Rng, n: usize) -> String {
    (0..n)
        .flat_map(|_| [*CONSONANTS.choose(rng).unwrap() as char, *VOWELS.choose(rng).unwrap() as char])
        .collect()
}

fn lexicon(rng: &mut Rng) -> Lexicon {
    let mut seen = BTreeSet::new();
    let mut fresh = |rng: &mut Rng, n: usize| loop {
        let w = syllables(rng, n);
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let nouns = (0..160).map(|i| (fresh(rng, 2), if i % 2 == 0 { "Masc" } else { "Fem" })).collect();
    let adjectives = (0..30).map(|_| fresh(rng, 2)).collect();
    let verbs = (0..40).map(|_| fresh(rng, 3)).collect();
    Lexicon { nouns, adjectives, verbs }
}

struct Word {
    form: String,
    lemma: String,
    upos: &'static str,
    feats: Vec<(&'static str, &'static str)>,
    head: usize,
    deprel: &'static str,
}

fn noun_form(stem: &str, number: &str, case: &str) -> String {
    let num = if number == "Plur" { "i" } else { "" };
    let case = match case {
        "Acc" => "n",
        "Dat" => "ke",
        _ => "",
    };
    format!("{stem}{num}{case}")
}

fn adj_form(stem: &str, gender: &str, number: &str) -> String {
    let g = if gender == "Masc" { "o" } else { "a" };
    let n = if number == "Plur" { "s" } else { "" };
    format!("{stem}{g}{n}")
}

/// Append a noun phrase whose noun depends on `head`; returns the noun's index.
fn noun_phrase(words: &mut Vec<Word>, rng: &mut Rng, lex: &Lexicon, case: &'static str, head: usize, deprel: &'static str) -> &'static str {
    let (stem, gender) = lex.nouns.choose(rng).unwrap();
    let number = if rng.random_bool(0.35) { "Plur" } else { "Sing" };
    let with_det = rng.random_bool(0.4);
    let with_adj = rng.random_bool(0.5);
    let noun_index = words.len() + 1 + usize::from(with_det) + usize::from(with_adj);
    if with_det {
        words.push(Word { form: "le".into(), lemma: "le".into(), upos: "DET", feats: vec![], head: noun_index, deprel: "det" });
    }
    if with_adj {
        let stem = lex.adjectives.choose(rng).unwrap();
        words.push(Word {
            form: adj_form(stem, gender, number),
            lemma: format!("{stem}o"),
            upos: "ADJ",
            feats: vec![("Gender", gender), ("Number", number)],
            head: noun_index,
            deprel: "amod",
        });
    }
    words.push(Word {
        form: noun_form(stem, number, case),
        lemma: stem.clone(),
        upos: "NOUN",
        feats: vec![("Case", case), ("Gender", gender), ("Number", number)],
        head,
        deprel,
    });
    number
}

fn sentence(rng: &mut Rng, lex: &Lexicon, split: Split, n: usize) -> SentenceRecord {
    let mut words = Vec::new();
    let mut contraction = None;
    // The verb index is fixed after the subject; patch heads afterwards.
    const VERB: usize = usize::MAX;
    let number = noun_phrase(&mut words, rng, lex, "Nom", VERB, "nsubj");
    let tense = if rng.random_bool(0.6) { "Pres" } else { "Past" };
    let (form, lemma) = if rng.random_bool(0.08) {
        ("reda".to_string(), "reda".to_string())
    } else {
        let stem = lex.verbs.choose(rng).unwrap();
        let t = if tense == "Pres" { "et" } else { "ut" };
        let n = if number == "Plur" { "o" } else { "" };
        (format!("{stem}{t}{n}"), stem.clone())
    };
    let mut feats = vec![("Tense", tense)];
    if lemma != "reda" {
        feats.push(("Number", number));
    }
    words.push(Word { form, lemma, upos: "VERB", feats, head: 0, deprel: "root" });
    let verb = words.len();
    if rng.random_bool(0.7) {
        noun_phrase(&mut words, rng, lex, "Acc", verb, "obj");
    }
    if rng.random_bool(0.45) {
        let adp = words.len() + 1;
        words.push(Word { form: "mi".into(), lemma: "mi".into(), upos: "ADP", feats: vec![], head: 0, deprel: "case" });
        let before = words.len();
        noun_phrase(&mut words, rng, lex, "Dat", verb, "obl");
        let noun = words.len();
        words[adp - 1].head = noun;
        // "mi le" contracts to "mile".
        if words.get(before).is_some_and(|w| w.form == "le") {
            contraction = Some(MultiwordRange { first: adp, last: adp + 1, form: "mile".into(), misc: "_".into() });
        }
    }
    words.push(Word { form: ".".into(), lemma: ".".into(), upos: "PUNCT", feats: vec![], head: verb, deprel: "punct" });
    for w in &mut words {
        if w.head == VERB {
            w.head = verb;
        }
    }
    let tokens = words
        .into_iter()
        .enumerate()
        .map(|(i, w)| TokenRecord {
            index: i + 1,
            form: w.form,
            lemma: w.lemma,
            upos: w.upos.into(),
            xpos: "_".into(),
            feats: w.feats.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<BTreeMap<_, _>>(),
            head: Some(w.head),
            deprel: w.deprel.into(),
            deps: "_".into(),
            misc: "_".into(),
            is_multiword_part: contraction.as_ref().is_some_and(|r| (r.first..=r.last).contains(&(i + 1))),
        })
        .collect();
    SentenceRecord {
        tokens,
        language: "fx".into(),
        treebank_id: "fx_toy".into(),
        split,
        sent_id: format!("fx-{split}-{n:04}"),
        multiword_ranges: contraction.into_iter().collect(),
    }
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/ud/fx_toy".into()));
    std::fs::create_dir_all(&dir).expect("create output directory");
    let mut rng = rng::seeded(20);
    let lex = lexicon(&mut rng);
    for (split, n) in [(Split::Train, 320), (Split::Dev, 70), (Split::Test, 70)] {
        let sentences: Vec<SentenceRecord> = (1..=n).map(|i| sentence(&mut rng, &lex, split, i)).collect();
        let path = dir.join(format!("fx_toy-ud-{split}.conllu"));
        std::fs::write(&path, write_conllu(&sentences)).expect("write treebank");
        println!("{}: {} sentences", path.display(), sentences.len());
    }
}
