//! `analyze`, `shapley-report` and `report`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use morphoprobe_core::report::{effects, effects_csv, emit_report, fmt17, matrix_csv, ReportInput};
use morphoprobe_core::runner::SuiteRow;
use morphoprobe_core::sampler::read_task;
use morphoprobe_core::shapley::{generalization_variance, mean_profile, Axis, AxisVariance, ProfileCell, ShapleyProfile};
use morphoprobe_core::stats::{
    bonferroni, consensus_cluster, layer_weight_diagnostics, majority_baseline, paired_t_test, pearson_matrix, score_external, sign_test, ClusterConfig,
    CooccurrenceMatrix, EffectRecord, LayerWeightDiagnostics,
};
use morphoprobe_core::ud::{parse_conllu, Split};
use serde::Serialize;

use crate::layout::{self, read_json, write_json, write_text};
use crate::{CmdResult, Context, Failure};

/// `(language, POS, feature)` of a task name such as `de_NOUN_Case`.
fn split_task(name: &str) -> (String, String, String) {
    let mut parts = name.splitn(3, '_');
    let mut next = || parts.next().unwrap_or_default().to_string();
    (next(), next(), next())
}

fn analysis_dir(ctx: &Context) -> PathBuf {
    ctx.out.join("analysis")
}

/// Rows of the train and perturb suites, one per experiment.
fn finished_rows(ctx: &Context) -> Result<Vec<SuiteRow>, Failure> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for suite in ["train", "perturb"] {
        for row in layout::load_rows(&layout::suite_dir(ctx, suite).join(layout::ROWS_FILE))? {
            if seen.insert(row.spec_hash.clone()) {
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| (&a.model_id, &a.task, &a.masking).cmp(&(&b.model_id, &b.task, &b.masking)));
    Ok(rows)
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("analysis").required(true).args(["effects", "cluster", "layerweights", "score_external"])))]
pub struct AnalyzeArgs {
    /// Effects, paired t-tests, sign tests and effect correlations.
    #[arg(long)]
    effects: bool,
    /// Consensus clustering of languages by their perturbation effects.
    #[arg(long)]
    cluster: bool,
    /// Entropy and max/min ratio of learned layer weights.
    #[arg(long)]
    layerweights: bool,
    /// Score an external analyzer's CoNLL-U predictions against --task.
    #[arg(long, value_name = "CONLLU", requires = "task")]
    score_external: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
    /// Restrict clustering to one model's effects (default: average over models).
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    /// Standardize feature columns before clustering.
    #[arg(long)]
    standardize: bool,
}

pub fn analyze(ctx: &Context, args: &AnalyzeArgs) -> CmdResult {
    if args.effects {
        analyze_effects(ctx)
    } else if args.cluster {
        analyze_cluster(ctx, args)
    } else if args.layerweights {
        analyze_layer_weights(ctx)
    } else {
        let predictions = args.score_external.as_ref().expect("clap group requires one analysis");
        score(ctx, predictions, args.task.as_ref().expect("required by clap"))
    }
}

fn effect_records(ctx: &Context) -> Result<Vec<EffectRecord>, Failure> {
    let records = effects(&finished_rows(ctx)?);
    if records.is_empty() {
        return Err(Failure::Data(format!("{}: no perturbation results (run `perturb` first)", layout::suite_dir(ctx, "perturb").display())));
    }
    Ok(records)
}

#[derive(Serialize)]
struct Significance {
    model_id: String,
    perturbation: String,
    n_tasks: usize,
    mean_effect: f64,
    t_test_p: Option<f64>,
    t_test_p_bonferroni: Option<f64>,
    /// Tasks where the perturbation lowered accuracy, of those where it changed it.
    n_lowered: u64,
    n_changed: u64,
    sign_test_p: f64,
}

fn analyze_effects(ctx: &Context) -> CmdResult {
    let records = effect_records(ctx)?;
    let dir = analysis_dir(ctx);
    write_text(&dir.join("effects.csv"), &effects_csv(&records))?;

    let mut groups: BTreeMap<(&str, &str), Vec<&EffectRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry((&r.model_id, &r.perturbation)).or_default().push(r);
    }
    let m = groups.len();
    let mut tests = Vec::new();
    for ((model, pert), rs) in &groups {
        let pairs: Vec<(f64, f64)> = rs.iter().map(|r| (r.acc_unperturbed, r.acc_perturbed)).collect();
        let p = paired_t_test(&pairs).ok();
        let n_lowered = rs.iter().filter(|r| r.effect > 0.0).count() as u64;
        let n_changed = rs.iter().filter(|r| r.effect != 0.0).count() as u64;
        tests.push(Significance {
            model_id: model.to_string(),
            perturbation: pert.to_string(),
            n_tasks: rs.len(),
            mean_effect: rs.iter().map(|r| r.effect).sum::<f64>() / rs.len() as f64,
            t_test_p: p,
            t_test_p_bonferroni: p.map(|p| bonferroni(p, m)),
            n_lowered,
            n_changed,
            sign_test_p: sign_test(n_lowered, n_changed),
        });
    }
    write_json(&dir.join("significance.json"), &tests)?;

    let models: BTreeSet<&str> = records.iter().map(|r| r.model_id.as_str()).collect();
    for &a in &models {
        for &b in models.iter().filter(|&&b| b >= a) {
            let c = pearson_matrix(&records, a, b);
            let name = format!("correlation_{}__{}.csv", layout::component(a), layout::component(b));
            write_text(&dir.join(name), &matrix_csv("perturbation", &c.rows, &c.cols, |i, j| c.values[i][j].map(fmt17).unwrap_or_default()))?;
        }
    }
    for t in &tests {
        println!("{} {}: mean effect {:.4} over {} tasks, sign test p {:.3e}", t.model_id, t.perturbation, t.mean_effect, t.n_tasks, t.sign_test_p);
    }
    Ok(())
}

/// One row per language, one column per ⟨POS, feature, perturbation⟩.
fn language_features(records: &[EffectRecord], model: Option<&str>) -> (Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>) {
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| model.is_none_or(|m| r.model_id == m)) {
        if r.perturbation == morphoprobe_core::perturb::Perturbation::Original.to_string() {
            continue;
        }
        let (lang, pos, feat) = split_task(&r.task);
        cells.entry((lang, format!("{pos}_{feat}/{}", r.perturbation))).or_default().push(r.effect);
    }
    let languages: Vec<String> = cells.keys().map(|k| k.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let columns: Vec<String> = cells.keys().map(|k| k.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let rows = languages
        .iter()
        .map(|l| {
            columns
                .iter()
                .map(|c| cells.get(&(l.clone(), c.clone())).map(|v| v.iter().sum::<f64>() / v.len() as f64))
                .collect()
        })
        .collect();
    (languages, columns, rows)
}

fn analyze_cluster(ctx: &Context, args: &AnalyzeArgs) -> CmdResult {
    let records = effect_records(ctx)?;
    if let Some(m) = &args.model {
        if !records.iter().any(|r| &r.model_id == m) {
            return Err(Failure::Data(format!("no effects for model {m}")));
        }
    }
    let (languages, columns, features) = language_features(&records, args.model.as_deref());
    let config = ClusterConfig { runs: args.runs, k_min: args.k_min, k_max: args.k_max, standardize: args.standardize, seed: ctx.config.seed, ..ClusterConfig::default() };
    let matrix = consensus_cluster(&languages, &features, &config).map_err(Failure::usage)?;
    let dir = analysis_dir(ctx);
    write_text(
        &dir.join("cluster_features.csv"),
        &matrix_csv("language", &languages, &columns, |i, j| features[i][j].map(fmt17).unwrap_or_default()),
    )?;
    write_json(&dir.join("cooccurrence.json"), &matrix)?;
    println!("{} languages, {} features, {} runs", languages.len(), columns.len(), matrix.runs);
    Ok(())
}

#[derive(Serialize)]
struct LayerWeightRow {
    task: String,
    model_id: String,
    masking: String,
    weights: Vec<f64>,
    #[serde(flatten)]
    diagnostics: LayerWeightDiagnostics,
    /// Entropy of uniform weights, the maximum.
    max_entropy: f64,
}

fn analyze_layer_weights(ctx: &Context) -> CmdResult {
    let out: Vec<LayerWeightRow> = finished_rows(ctx)?
        .into_iter()
        .filter_map(|row| {
            let weights = row.result.as_ref()?.mean_layer_weights()?;
            Some(LayerWeightRow {
                diagnostics: layer_weight_diagnostics(&weights),
                max_entropy: (weights.len() as f64).ln(),
                task: row.task,
                model_id: row.model_id,
                masking: row.masking,
                weights,
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Failure::Data("no weighted-sum probes among the finished experiments".into()));
    }
    write_json(&analysis_dir(ctx).join("layerweights.json"), &out)?;
    for r in &out {
        println!("{} {} {}: entropy {:.4} of {:.4}, max/min {:.3}", r.task, r.model_id, r.masking, r.diagnostics.entropy, r.max_entropy, r.diagnostics.max_min_ratio);
    }
    Ok(())
}

#[derive(Serialize)]
struct ExternalScore {
    task: String,
    predictions: String,
    score: f64,
    majority_baseline: f64,
}

fn score(ctx: &Context, predictions: &Path, task_dir: &Path) -> CmdResult {
    let (dataset, _) = read_task(task_dir).map_err(|e| Failure::Data(format!("{}: {e}", task_dir.display())))?;
    let bytes = std::fs::read(predictions).map_err(|e| Failure::Data(format!("{}: {e}", predictions.display())))?;
    let sentences = parse_conllu(&bytes, &dataset.spec.language, "external", Split::Test).map_err(|e| Failure::Data(format!("{}: {e}", predictions.display())))?;
    let result = ExternalScore {
        task: dataset.spec.name(),
        predictions: predictions.display().to_string(),
        score: score_external(&sentences, &dataset),
        majority_baseline: majority_baseline(&dataset),
    };
    write_json(&analysis_dir(ctx).join("external").join(format!("{}.json", result.task)), &result)?;
    println!("{}: partial-credit score {:.4} (majority baseline {:.4})", result.task, result.score, result.majority_baseline);
    Ok(())
}

fn shapley_profiles(ctx: &Context) -> Result<Vec<ShapleyProfile>, Failure> {
    let root = layout::suite_dir(ctx, "shapley");
    let mut paths = Vec::new();
    if let Ok(models) = std::fs::read_dir(&root) {
        for model in models.filter_map(Result::ok) {
            if let Ok(tasks) = std::fs::read_dir(model.path()) {
                paths.extend(tasks.filter_map(Result::ok).map(|t| t.path().join("profile.json")).filter(|p| p.exists()));
            }
        }
    }
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

#[derive(Debug, Args)]
pub struct ShapleyReportArgs {
    /// language, pos or tag.
    #[arg(long)]
    aggregate: Axis,
}

#[derive(Serialize)]
struct AxisSummary {
    model_id: String,
    variance: Option<AxisVariance>,
    /// Mean unit-scale profile per axis value.
    mean_profiles: BTreeMap<String, Vec<f64>>,
}

pub fn shapley_report(ctx: &Context, args: &ShapleyReportArgs) -> CmdResult {
    let profiles = shapley_profiles(ctx)?;
    if profiles.is_empty() {
        return Err(Failure::Data(format!("{}: no Shapley profiles (run `shapley` first)", layout::suite_dir(ctx, "shapley").display())));
    }
    let mut by_model: BTreeMap<&str, Vec<ProfileCell>> = BTreeMap::new();
    for p in &profiles {
        let (language, pos, tag) = split_task(&p.task);
        by_model.entry(&p.model_id).or_default().push(ProfileCell { language, pos, tag, phi: p.normalized() });
    }
    let axis_name = serde_json::to_value(args.aggregate).expect("axis serializes").as_str().unwrap_or_default().to_string();
    let mut out = Vec::new();
    for (model, cells) in by_model {
        let mut groups: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
        for c in &cells {
            let key = match args.aggregate {
                Axis::Language => &c.language,
                Axis::Pos => &c.pos,
                Axis::Tag => &c.tag,
            };
            groups.entry(key.clone()).or_default().push(&c.phi);
        }
        let mean_profiles = groups.into_iter().map(|(k, v)| (k, mean_profile(v))).collect();
        let variance = generalization_variance(&cells, args.aggregate);
        match &variance {
            Some(v) => println!("{model}: mean distance from the {axis_name} mean {:.4}", v.mean),
            None => println!("{model}: fewer than two {axis_name} values with two or more profiles"),
        }
        out.push(AxisSummary { model_id: model.to_string(), variance, mean_profiles });
    }
    write_json(&ctx.out.join("shapley-report").join(format!("{axis_name}.json")), &out)
}

pub fn report(ctx: &Context) -> CmdResult {
    let cooccurrence_path = analysis_dir(ctx).join("cooccurrence.json");
    let cooccurrence: Option<CooccurrenceMatrix> = if cooccurrence_path.exists() { Some(read_json(&cooccurrence_path)?) } else { None };
    let input = ReportInput { rows: finished_rows(ctx)?, shapley: shapley_profiles(ctx)?, cooccurrence, families: BTreeMap::new() };
    let dir = ctx.out.join("report");
    let written = emit_report(&dir, &input).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}
