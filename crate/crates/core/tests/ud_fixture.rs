use std::path::PathBuf;

use morphoprobe_core::sampler::{enumerate_candidates, read_task, sample_task, validate_dataset, write_task, SamplerConfig, TaskSpec, DEFAULT_POS};
use morphoprobe_core::ud::{corpus_stats, merge_treebanks, parse_conllu, read_treebank_dir, write_conllu, Corpus, Split, DEFAULT_TARGET_FEATURES};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/ud")
}

fn mini() -> Corpus {
    let dirs = [fixtures().join("en_mini/a"), fixtures().join("en_mini/b")];
    merge_treebanks(dirs.iter().map(|d| read_treebank_dir(d, "en").unwrap()).collect()).unwrap()
}

fn toy() -> Corpus {
    merge_treebanks(vec![read_treebank_dir(&fixtures().join("fx_toy"), "fx").unwrap()]).unwrap()
}

#[test]
fn two_treebanks_merge_to_twelve_sentences() {
    let c = mini();
    assert_eq!(c.len(), 12);
    assert_eq!(c.split(Split::Train).count(), 5);
    assert_eq!(c.split(Split::Dev).count(), 7);
    // sent_ids collide across treebanks; uids do not.
    let mut uids: Vec<String> = c.sentences.iter().map(|s| s.uid()).collect();
    uids.sort();
    uids.dedup();
    assert_eq!(uids.len(), 12);
}

#[test]
fn empty_nodes_dropped_and_multiword_parts_kept() {
    let c = mini();
    let s4 = c.sentences.iter().find(|s| s.treebank_id == "a" && s.sent_id == "s4").unwrap();
    assert_eq!(s4.forms(), ["The", "cat", "slept", "."]);
    let s3 = c.sentences.iter().find(|s| s.treebank_id == "b" && s.sent_id == "s3").unwrap();
    assert_eq!(s3.forms(), ["I", "do", "n't", "know"]);
    assert_eq!(s3.multiword_ranges.len(), 1);
    assert!(s3.tokens[1].is_multiword_part && s3.tokens[2].is_multiword_part && !s3.tokens[0].is_multiword_part);
}

#[test]
fn ambiguous_read_counted_once() {
    let stats = corpus_stats(&mini(), &DEFAULT_TARGET_FEATURES);
    // "read"/VERB is attested with Tense=Pres and Tense=Past.
    assert!(stats.n_ambiguous_pairs >= 1);
    assert_eq!(stats.feature_inventory["Tense"]["Past"], 5);
    assert_eq!(stats.n_tokens, 40);
}

#[test]
fn writer_round_trips_fixture() {
    let c = toy();
    let train: Vec<_> = c.split(Split::Train).cloned().collect();
    let text = write_conllu(&train);
    let back = parse_conllu(text.as_bytes(), "fx", "fx_toy", Split::Train).unwrap();
    assert_eq!(back, train);
    // The bundled file is exactly what the writer produces.
    let on_disk = std::fs::read_to_string(fixtures().join("fx_toy/fx_toy-ud-train.conllu")).unwrap();
    assert_eq!(on_disk, text);
}

#[test]
fn malformed_file_error_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let tb = dir.path().join("xx_bad");
    std::fs::create_dir(&tb).unwrap();
    std::fs::write(tb.join("xx_bad-ud-train.conllu"), "1\tword\tword\tNOTATAG\t_\t_\t0\troot\t_\t_\n").unwrap();
    let err = read_treebank_dir(&tb, "xx").unwrap_err().to_string();
    assert!(err.contains("xx_bad-ud-train.conllu") && err.contains("NOTATAG"), "{err}");
}

#[test]
fn toy_tasks_satisfy_the_dataset_contract() {
    let corpus = toy();
    let config = SamplerConfig::desk();
    let candidates = enumerate_candidates(&corpus, &DEFAULT_POS, &DEFAULT_TARGET_FEATURES);
    let mut accepted = 0;
    for cand in &candidates {
        if let Ok(d) = sample_task(&corpus, &cand.spec, &config) {
            assert_eq!(validate_dataset(&d, &config), vec![], "{}", cand.spec.name());
            accepted += 1;
        }
    }
    assert!(accepted >= 4, "only {accepted} of {} candidates sampled", candidates.len());
}

#[test]
fn sampled_task_survives_disk_round_trip() {
    let corpus = toy();
    let config = SamplerConfig::desk();
    let d = sample_task(&corpus, &TaskSpec::new("fx", "NOUN", "Number"), &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), &d, &config).unwrap();
    let (back, manifest) = read_task(dir.path()).unwrap();
    assert_eq!(back, d);
    assert_eq!(manifest.config, config);
    assert_eq!(sample_task(&corpus, &d.spec, &config).unwrap(), d);
}
