//! `train`, `perturb`, `shapley` and `ablate`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{ArgGroup, Args, ValueEnum};
use morphoprobe_core::config::build_encoder;
use morphoprobe_core::embedding::{ModelInfo, RandomControl, RandomMode, StaticEmbeddings};
use morphoprobe_core::nn::LayerMode;
use morphoprobe_core::perturb::{Masking, Perturbation};
use morphoprobe_core::runner::{random_model_id, run_suite, shapley_table, worker_count, Encoder, ExperimentSpec, Job, Journal, ShapleyMode, SuiteRow};
use morphoprobe_core::sampler::TaskDataset;
use morphoprobe_core::shapley::shapley_from_table;
use serde::Serialize;

use crate::layout::{self, write_json};
use crate::{CmdResult, Context, Failure, RunArgs};

fn model_ids(ctx: &Context, args: &RunArgs) -> Result<Vec<String>, Failure> {
    let ids = if !args.models.is_empty() {
        args.models.clone()
    } else if !ctx.config.suite.models.is_empty() {
        ctx.config.suite.models.clone()
    } else {
        ctx.config.models.iter().map(|m| m.id.clone()).collect()
    };
    for id in &ids {
        ctx.config.model(id)?;
    }
    Ok(ids)
}

fn encoders(ctx: &Context, ids: &[String]) -> Result<BTreeMap<String, Encoder>, Failure> {
    ids.iter().map(|id| Ok((id.clone(), build_encoder(ctx.config.model(id)?)?))).collect()
}

fn workers(args: &RunArgs) -> usize {
    args.workers.filter(|&n| n > 0).unwrap_or_else(worker_count)
}

fn journal(ctx: &Context) -> Result<Journal, Failure> {
    Journal::open(&layout::journal_path(ctx)).map_err(Failure::data)
}

fn base_spec(ctx: &Context, args: &RunArgs, task: &str, model: &str) -> ExperimentSpec {
    let s = &ctx.config.suite;
    ExperimentSpec {
        variant: args.variant.unwrap_or(s.variant),
        layer_mode: args.layer_mode.unwrap_or(s.layer_mode),
        pooling: args.pooling.unwrap_or(s.pooling),
        n_seeds: args.seeds.unwrap_or(s.n_seeds),
        base_seed: ctx.config.seed,
        train: ctx.config.train.clone(),
        ..ExperimentSpec::new(task, model)
    }
}

struct Planned {
    job: Job,
    /// Run directory name under `<suite>/<model>/<task>/`.
    run: String,
}

/// Run the jobs, store each result next to its checkpoints, merge the rows
/// into the suite files and print one line per experiment.
fn execute(ctx: &Context, suite: &str, mut planned: Vec<Planned>, encoders: &BTreeMap<String, Encoder>, args: &RunArgs, label: fn(&SuiteRow) -> String) -> CmdResult {
    for p in &mut planned {
        p.job.checkpoints = Some(layout::run_dir(ctx, suite, &p.job.spec.model_id, &p.job.spec.task, &p.run));
    }
    let jobs: Vec<Job> = planned.iter().map(|p| p.job.clone()).collect();
    let journal = journal(ctx)?;
    let rows = run_suite(&jobs, encoders, Some(&journal), workers(args));
    let mut failed = 0;
    for (p, row) in planned.iter().zip(&rows) {
        let dir = p.job.checkpoints.as_ref().expect("set above");
        match &row.result {
            Some(r) => {
                write_json(&dir.join("result.json"), r)?;
                println!("{} {} {}: test {:.4} ± {:.4}", row.task, row.model_id, p.run, r.mean_test_accuracy, r.std_test_accuracy);
            }
            None => {
                failed += 1;
                println!("{} {} {}: FAILED {}", row.task, row.model_id, p.run, row.error.as_deref().unwrap_or(""));
            }
        }
    }
    layout::save_rows(ctx, suite, &rows, label)?;
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} of {} experiments failed; rerun to retry them", rows.len())));
    }
    Ok(())
}

fn masking_label(row: &SuiteRow) -> String {
    row.masking.clone()
}

fn grid(ctx: &Context, args: &RunArgs) -> Result<(Vec<Arc<TaskDataset>>, Vec<String>, BTreeMap<String, Encoder>), Failure> {
    let datasets = layout::load_tasks(&layout::task_dirs(ctx, &args.tasks)?)?;
    let ids = model_ids(ctx, args)?;
    let encoders = encoders(ctx, &ids)?;
    Ok((datasets, ids, encoders))
}

fn masked_jobs(ctx: &Context, args: &RunArgs, maskings: &[Masking]) -> Result<(Vec<Planned>, BTreeMap<String, Encoder>), Failure> {
    let (datasets, ids, encoders) = grid(ctx, args)?;
    let mut planned = Vec::new();
    for d in &datasets {
        for id in &ids {
            let base = base_spec(ctx, args, &d.spec.name(), id);
            for &m in maskings {
                planned.push(Planned { job: Job::new(base.with_masking(m), d.clone()), run: m.label() });
            }
        }
    }
    Ok((planned, encoders))
}

pub fn train(ctx: &Context, args: &RunArgs) -> CmdResult {
    let (planned, encoders) = masked_jobs(ctx, args, &[Masking::NONE])?;
    execute(ctx, "train", planned, &encoders, args, masking_label)
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated, e.g. ORIGINAL,TARG,L2; default: the suite's list.
    #[arg(long, value_delimiter = ',')]
    perturbations: Vec<Perturbation>,
}

pub fn perturb(ctx: &Context, args: &PerturbArgs) -> CmdResult {
    let mut list = if args.perturbations.is_empty() { ctx.config.suite.perturbations.clone() } else { args.perturbations.clone() };
    // Effects need the unperturbed baseline.
    if !list.contains(&Perturbation::Original) {
        list.insert(0, Perturbation::Original);
    }
    let maskings: Vec<Masking> = list.into_iter().map(Masking::from).collect();
    let (planned, encoders) = masked_jobs(ctx, &args.run, &maskings)?;
    execute(ctx, "perturb", planned, &encoders, &args.run, masking_label)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapleyModeArg {
    Retrain,
    FixedProbe,
}

#[derive(Debug, Args)]
pub struct ShapleyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    mode: Option<ShapleyModeArg>,
}

#[derive(Serialize)]
struct GroupsFile<'a> {
    mode: ShapleyMode,
    groups: &'a [morphoprobe_core::runner::CoalitionGroup],
    accuracies: &'a [f64],
}

pub fn shapley(ctx: &Context, args: &ShapleyArgs) -> CmdResult {
    let mode = match args.mode {
        Some(ShapleyModeArg::Retrain) => ShapleyMode::Retrain,
        Some(ShapleyModeArg::FixedProbe) => ShapleyMode::FixedProbe,
        None => ctx.config.suite.shapley_mode,
    };
    let (datasets, ids, encoders) = grid(ctx, &args.run)?;
    let journal = journal(ctx)?;
    let mut degenerate = Vec::new();
    for d in &datasets {
        for id in &ids {
            let task = d.spec.name();
            let base = ExperimentSpec { n_seeds: args.run.seeds.unwrap_or(ctx.config.suite.shapley_seeds), ..base_spec(ctx, &args.run, &task, id) };
            let run = shapley_table(d, &encoders[id], &base, mode, Some(&journal), workers(&args.run)).map_err(|e| Failure::Data(format!("{task} {id}: {e}")))?;
            let dir = layout::suite_dir(ctx, "shapley").join(layout::component(id)).join(layout::component(&task));
            write_json(&dir.join("table.json"), &run.table)?;
            write_json(&dir.join("groups.json"), &GroupsFile { mode, groups: &run.groups, accuracies: &run.group_accuracies })?;
            match shapley_from_table(&run.table) {
                Ok(profile) => {
                    write_json(&dir.join("profile.json"), &profile)?;
                    println!(
                        "{task} {id}: target {:.2}, left {:.2}, right {:.2} ({} distinct maskings)",
                        profile.target,
                        profile.left,
                        profile.right,
                        run.groups.len()
                    );
                }
                Err(e) => {
                    let _ = std::fs::remove_file(dir.join("profile.json"));
                    println!("{task} {id}: no profile ({e})");
                    degenerate.push(format!("{task} {id}"));
                }
            }
        }
    }
    if !degenerate.is_empty() {
        return Err(Failure::Data(format!("no Shapley profile for {}", degenerate.join(", "))));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RandomModeArg {
    FullyRandom,
    RandomLayers,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("ablation").required(true).args(["layers", "size", "random"])))]
pub struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Every single layer, the concatenation and the weighted sum.
    #[arg(long)]
    layers: bool,
    /// Training fractions, comma-separated.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_missing_value = "0.05,0.1,0.25,0.5,1")]
    size: Option<Vec<f64>>,
    /// Probe a randomly initialized stand-in of each model.
    #[arg(long, value_enum)]
    random: Option<RandomModeArg>,
    /// Static word vectors (.vec) used as layer 0 by `--random random-layers`.
    #[arg(long = "static")]
    static_vectors: Option<PathBuf>,
}

fn embedding_info(id: &str, encoder: &Encoder) -> Result<ModelInfo, Failure> {
    match encoder {
        Encoder::Embeddings(p) => Ok(p.info().clone()),
        Encoder::CharLstm => Err(Failure::Usage(format!("model {id} has no embedding layers to ablate"))),
    }
}

pub fn ablate(ctx: &Context, args: &AblateArgs) -> CmdResult {
    let (datasets, ids, mut encoders) = grid(ctx, &args.run)?;
    let mut planned = Vec::new();
    let suite;
    let label: fn(&SuiteRow) -> String;
    if args.layers {
        suite = "ablate-layers";
        label = |r| r.result.as_ref().map_or_else(|| r.spec_hash.clone(), |r| format!("layers-{}", r.spec.layer_mode));
        for id in &ids {
            let n_layers = embedding_info(id, &encoders[id])?.n_layers;
            let modes: Vec<LayerMode> = (0..n_layers).map(LayerMode::Single).chain([LayerMode::Concat, LayerMode::WeightedSum]).collect();
            for d in &datasets {
                for &layer_mode in &modes {
                    let spec = ExperimentSpec { layer_mode, ..base_spec(ctx, &args.run, &d.spec.name(), id) };
                    planned.push(Planned { job: Job::new(spec, d.clone()), run: format!("layers-{layer_mode}") });
                }
            }
        }
    } else if let Some(fractions) = &args.size {
        suite = "ablate-size";
        label = |r| r.result.as_ref().map_or_else(|| r.spec_hash.clone(), |r| format!("fraction-{}", r.spec.train_fraction));
        for &f in fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Failure::Usage(format!("training fraction {f} is outside (0, 1]")));
            }
        }
        for d in &datasets {
            for id in &ids {
                for &train_fraction in fractions {
                    let spec = ExperimentSpec { train_fraction, ..base_spec(ctx, &args.run, &d.spec.name(), id) };
                    planned.push(Planned { job: Job::new(spec, d.clone()), run: format!("fraction-{train_fraction}") });
                }
            }
        }
    } else {
        suite = "ablate-random";
        label = masking_label;
        let mode = match args.random.expect("clap group requires one ablation") {
            RandomModeArg::FullyRandom => RandomMode::FullyRandom,
            RandomModeArg::RandomLayers => RandomMode::RandomLayers,
        };
        for id in &ids {
            let mut info = embedding_info(id, &encoders[id])?;
            let random_id = random_model_id(id, mode);
            info.model_id = random_id.clone();
            let mut control = RandomControl::new(info, mode, ctx.config.seed);
            if mode == RandomMode::RandomLayers {
                let path = args.static_vectors.as_ref().ok_or_else(|| Failure::usage("--random random-layers needs --static <vectors>"))?;
                let vectors = StaticEmbeddings::load_vec(path, &random_id).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
                control = control.with_static_layer(vectors).map_err(Failure::data)?;
            }
            encoders.insert(random_id.clone(), Encoder::Embeddings(Arc::new(control)));
            for d in &datasets {
                let spec = base_spec(ctx, &args.run, &d.spec.name(), &random_id);
                planned.push(Planned { job: Job::new(spec, d.clone()), run: Masking::NONE.label() });
            }
        }
    }
    execute(ctx, suite, planned, &encoders, &args.run, label)
}
