//! `ingest`, `sample` and `plan`.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use morphoprobe_core::embedding::{plan_manifest, ExtractionManifest};
use morphoprobe_core::perturb::{Coalition, Masking};
use morphoprobe_core::sampler::{enumerate_candidates, sample_task, validate_dataset, write_task, Rejection, TaskSpec, DEFAULT_POS};
use morphoprobe_core::ud::{corpus_stats, merge_treebanks, read_treebank_dir, Corpus, SentenceRecord, Split, DEFAULT_TARGET_FEATURES};
use serde::Serialize;

use crate::layout::{self, write_json};
use crate::{CmdResult, Context, Failure, SuiteKind};

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Language code, e.g. `de`.
    #[arg(long)]
    lang: String,
    /// Treebank directories holding `*-ud-{train,dev,test}.conllu`.
    #[arg(long = "treebank", required = true, num_args = 1..)]
    treebanks: Vec<PathBuf>,
}

pub fn ingest(ctx: &Context, args: &IngestArgs) -> CmdResult {
    let mut treebanks = Vec::new();
    for dir in &args.treebanks {
        if !dir.is_dir() {
            return Err(Failure::Data(format!("{}: treebank directory not found", dir.display())));
        }
        treebanks.push(read_treebank_dir(dir, &args.lang).map_err(Failure::data)?);
    }
    let corpus = merge_treebanks(treebanks).map_err(Failure::data)?;
    let path = layout::corpus_path(ctx, &args.lang);
    let mut text = String::new();
    for s in &corpus.sentences {
        text.push_str(&serde_json::to_string(s).expect("sentence serializes"));
        text.push('\n');
    }
    layout::write_text(&path, &text)?;
    let stats = corpus_stats(&corpus, &DEFAULT_TARGET_FEATURES);
    write_json(&path.with_file_name(layout::STATS_FILE), &stats)?;
    let per_split: Vec<String> = stats.sentences_per_split.iter().map(|(s, n)| format!("{s} {n}")).collect();
    println!(
        "{}: {} sentences ({}), {} tokens, ambiguity {:.4}",
        args.lang,
        corpus.len(),
        per_split.join(", "),
        stats.n_tokens,
        stats.ambiguity_rate
    );
    Ok(())
}

pub fn read_corpus(ctx: &Context, lang: &str) -> Result<Corpus, Failure> {
    let path = layout::corpus_path(ctx, lang);
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Data(format!("{}: {e} (run `ingest --lang {lang}` first)", path.display())))?;
    let sentences = text
        .lines()
        .enumerate()
        .map(|(i, line)| serde_json::from_str::<SentenceRecord>(line).map_err(|e| Failure::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus { language: lang.to_string(), sentences })
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    lang: String,
    /// With --feature, sample one task; without both, every attested one.
    #[arg(long, requires = "feature")]
    pos: Option<String>,
    #[arg(long, requires = "pos")]
    feature: Option<String>,
    /// Multiply every count threshold (desk-scale fixtures).
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Serialize)]
struct RejectedTask<'a> {
    task: String,
    rejection: &'a Rejection,
}

pub fn sample(ctx: &Context, args: &SampleArgs) -> CmdResult {
    let mut config = ctx.config.sampler.clone();
    if let Some(scale) = args.scale {
        if !(scale > 0.0) {
            return Err(Failure::usage("--scale must be positive"));
        }
        config = config.scaled(scale);
    }
    config.validate().map_err(Failure::usage)?;
    let corpus = read_corpus(ctx, &args.lang)?;
    let single = args.pos.is_some();
    let specs: Vec<TaskSpec> = match (&args.pos, &args.feature) {
        (Some(pos), Some(feature)) => vec![TaskSpec::new(&args.lang, pos, feature)],
        _ => enumerate_candidates(&corpus, &DEFAULT_POS, &DEFAULT_TARGET_FEATURES).into_iter().map(|c| c.spec).collect(),
    };
    let mut rejected = Vec::new();
    let mut stdout = std::io::stdout().lock();
    for spec in &specs {
        match sample_task(&corpus, spec, &config) {
            Ok(dataset) => {
                let violations = validate_dataset(&dataset, &config);
                if let Some(v) = violations.first() {
                    return Err(Failure::Data(format!("{}: sampled dataset is invalid: {v}", spec.name())));
                }
                let dir = ctx.task_dir.join(spec.name());
                write_task(&dir, &dataset, &config).map_err(Failure::data)?;
                let _ = writeln!(stdout, "{}: {} labels, {}/{}/{}", spec.name(), dataset.labels.len(), dataset.train.len(), dataset.dev.len(), dataset.test.len());
            }
            Err(rejection) => {
                log::warn!("{}: {rejection}", spec.name());
                rejected.push((spec.name(), rejection));
            }
        }
    }
    if single {
        if let Some((name, r)) = rejected.first() {
            return Err(Failure::Data(format!("{name}: {r}")));
        }
    }
    let report: Vec<RejectedTask> = rejected.iter().map(|(task, rejection)| RejectedTask { task: task.clone(), rejection }).collect();
    if !single {
        write_json(&ctx.task_dir.join(format!("{}.rejections.json", args.lang)), &report)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Task directories; default: every task under the task directory.
    #[arg(long = "task")]
    tasks: Vec<PathBuf>,
    #[arg(long, value_enum)]
    suite: SuiteKind,
    #[arg(long)]
    model: String,
    #[arg(long)]
    out: PathBuf,
}

pub fn plan(ctx: &Context, args: &PlanArgs) -> CmdResult {
    let datasets = layout::load_tasks(&layout::task_dirs(ctx, &args.tasks)?)?;
    let maskings: Vec<Masking> = match args.suite {
        SuiteKind::Perturb => ctx.config.suite.perturbations.iter().map(|&p| p.into()).collect(),
        SuiteKind::Shapley => Coalition::all().map(Masking::from).collect(),
    };
    let mut manifest = ExtractionManifest::new(&args.model);
    for d in &datasets {
        let plan = plan_manifest(d, &Split::ALL, &maskings, ctx.config.seed, &args.model);
        manifest.extend(plan.requests.into_iter().map(|e| e.request));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
    }
    manifest.save(&args.out).map_err(Failure::data)?;
    println!("{}: {} requests for {}", args.out.display(), manifest.len(), args.model);
    Ok(())
}
