use std::fs;
use std::path::Path;

use super::{is_valid_upos, parse_feats, MultiwordRange, SentenceRecord, Split, TokenRecord, UdError};

/// Sentences of one treebank (possibly spread over several split files).
#[derive(Debug, Clone, PartialEq)]
pub struct Treebank {
    pub language: String,
    pub treebank_id: String,
    pub sentences: Vec<SentenceRecord>,
}

enum LineId {
    Word(usize),
    Range(usize, usize),
    Empty,
}

fn parse_id(id: &str, line: usize) -> Result<LineId, UdError> {
    let bad = || UdError::Malformed { line, reason: format!("invalid ID {id:?}") };
    if id.contains('.') {
        return Ok(LineId::Empty);
    }
    if let Some((a, b)) = id.split_once('-') {
        let a: usize = a.parse().map_err(|_| bad())?;
        let b: usize = b.parse().map_err(|_| bad())?;
        if a == 0 || b < a {
            return Err(bad());
        }
        return Ok(LineId::Range(a, b));
    }
    match id.parse::<usize>() {
        Ok(i) if i >= 1 => Ok(LineId::Word(i)),
        _ => Err(bad()),
    }
}

#[derive(Default)]
struct Block {
    tokens: Vec<TokenRecord>,
    ranges: Vec<MultiwordRange>,
    sent_id: Option<String>,
    first_line: usize,
}

/// Parse CoNLL-U text into sentences.
///
/// Multiword range lines and empty nodes are not returned as tokens; of the
/// comments only `# sent_id = ...` is kept. Sentences without a `sent_id`
/// get `<treebank_id>-<ordinal>`.
pub fn parse_conllu(
    bytes: &[u8],
    language: &str,
    treebank_id: &str,
    split: Split,
) -> Result<Vec<SentenceRecord>, UdError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        UdError::Encoding { line }
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut sentences = Vec::new();
    let mut block = Block::default();

    let finish = |block: Block, sentences: &mut Vec<SentenceRecord>| -> Result<(), UdError> {
        if block.tokens.is_empty() {
            if block.ranges.is_empty() {
                return Ok(());
            }
            return Err(UdError::Malformed { line: block.first_line, reason: "sentence has no words".into() });
        }
        for (expected, tok) in (1..).zip(&block.tokens) {
            if tok.index != expected {
                return Err(UdError::Malformed {
                    line: block.first_line,
                    reason: format!("word IDs not contiguous: expected {expected}, found {}", tok.index),
                });
            }
        }
        let ordinal = sentences.len() + 1;
        sentences.push(SentenceRecord {
            tokens: block.tokens,
            language: language.to_string(),
            treebank_id: treebank_id.to_string(),
            split,
            sent_id: block.sent_id.unwrap_or_else(|| format!("{treebank_id}-{ordinal}")),
            multiword_ranges: block.ranges,
        });
        Ok(())
    };

    for (lineno, raw) in (1..).zip(text.lines()) {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            finish(std::mem::take(&mut block), &mut sentences)?;
            continue;
        }
        if block.first_line == 0 {
            block.first_line = lineno;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    block.sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(UdError::Malformed {
                line: lineno,
                reason: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        match parse_id(cols[0], lineno)? {
            LineId::Empty => {}
            LineId::Range(first, last) => block.ranges.push(MultiwordRange {
                first,
                last,
                form: cols[1].to_string(),
                misc: cols[9].to_string(),
            }),
            LineId::Word(index) => {
                if !is_valid_upos(cols[3]) {
                    return Err(UdError::Malformed { line: lineno, reason: format!("unknown UPOS {:?}", cols[3]) });
                }
                let feats = parse_feats(cols[5]).map_err(|e| UdError::Malformed { line: lineno, reason: e.to_string() })?;
                let head = match cols[6] {
                    "_" => None,
                    h => Some(h.parse().map_err(|_| UdError::Malformed {
                        line: lineno,
                        reason: format!("invalid HEAD {h:?}"),
                    })?),
                };
                let is_multiword_part = block.ranges.iter().any(|r| (r.first..=r.last).contains(&index));
                block.tokens.push(TokenRecord {
                    index,
                    form: cols[1].to_string(),
                    lemma: cols[2].to_string(),
                    upos: cols[3].to_string(),
                    xpos: cols[4].to_string(),
                    feats,
                    head,
                    deprel: cols[7].to_string(),
                    deps: cols[8].to_string(),
                    misc: cols[9].to_string(),
                    is_multiword_part,
                });
            }
        }
    }
    finish(block, &mut sentences)?;
    Ok(sentences)
}

/// Serialize sentences back to CoNLL-U (`sent_id` comment, range lines and
/// word lines; empty nodes and other comments were dropped at parse time).
pub fn write_conllu(sentences: &[SentenceRecord]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&format!("# sent_id = {}\n", s.sent_id));
        for tok in &s.tokens {
            for r in s.multiword_ranges.iter().filter(|r| r.first == tok.index) {
                out.push_str(&format!("{}-{}\t{}\t_\t_\t_\t_\t_\t_\t_\t{}\n", r.first, r.last, r.form, r.misc));
            }
            let head = tok.head.map_or_else(|| "_".to_string(), |h| h.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                tok.index,
                tok.form,
                tok.lemma,
                tok.upos,
                tok.xpos,
                super::format_feats(&tok.feats),
                head,
                tok.deprel,
                tok.deps,
                tok.misc
            ));
        }
        out.push('\n');
    }
    out
}

/// Read every `*.conllu` file of a treebank directory. The split is taken
/// from the file name (`xx_name-ud-train.conllu`); files whose name carries
/// no split are skipped with a warning. The treebank id defaults to the
/// directory name.
pub fn read_treebank_dir(dir: &Path, language: &str) -> Result<Treebank, UdError> {
    let io = |source| UdError::Io { path: dir.display().to_string(), source };
    let treebank_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "treebank".to_string());
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "conllu"))
        .collect();
    files.sort();
    let mut sentences = Vec::new();
    for path in files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(split) = Split::from_file_name(&name) else {
            log::warn!("skipping {name}: no split in file name");
            continue;
        };
        let bytes = fs::read(&path).map_err(|source| UdError::Io { path: path.display().to_string(), source })?;
        let parsed = parse_conllu(&bytes, language, &treebank_id, split)
            .map_err(|e| UdError::InFile { path: path.display().to_string(), source: Box::new(e) })?;
        sentences.extend(parsed);
    }
    Ok(Treebank { language: language.to_string(), treebank_id, sentences })
}
