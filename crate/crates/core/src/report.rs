//! Tables and figures: CSV with header rows, JSON summaries and SVG bar
//! charts and heatmaps. Output bytes depend only on the inputs.
//!
//! CSV cells and SVG data attributes carry floats with 17 significant
//! digits; JSON numbers use the shortest representation that round-trips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::perturb::{Perturbation, PLAYER_LABELS};
use crate::runner::SuiteRow;
use crate::shapley::ShapleyProfile;
use crate::stats::{effect, CooccurrenceMatrix, EffectRecord};

/// A float with 17 significant digits; `NaN`, `inf`, `-inf` otherwise.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV text with a header row and `\n` line ends.
pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.iter().map(|h| csv_cell(h)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// One row per experiment and seed.
pub fn results_csv(rows: &[SuiteRow]) -> String {
    let header = [
        "task", "model_id", "masking", "variant", "layer_mode", "train_fraction", "n_train", "seed_index", "seed", "pooling", "dev_accuracy",
        "test_accuracy", "epochs_run", "best_epoch", "status",
    ];
    let mut out = Vec::new();
    for row in rows {
        let Some(r) = &row.result else {
            let mut cells = vec![row.task.clone(), row.model_id.clone(), row.masking.clone()];
            cells.extend(std::iter::repeat_n(String::new(), 11));
            cells.push(format!("failed: {}", row.error.as_deref().unwrap_or("")));
            out.push(cells);
            continue;
        };
        for (i, s) in r.seeds.iter().enumerate() {
            out.push(vec![
                row.task.clone(),
                row.model_id.clone(),
                row.masking.clone(),
                r.spec.variant.to_string(),
                r.spec.layer_mode.to_string(),
                fmt17(r.spec.train_fraction),
                r.n_train.to_string(),
                i.to_string(),
                s.seed.to_string(),
                s.pooling.to_string(),
                fmt17(s.dev_accuracy),
                fmt17(s.test_accuracy),
                s.epochs_run.to_string(),
                s.best_epoch.to_string(),
                match &s.diverged {
                    None => "ok".into(),
                    Some(why) => format!("diverged: {why}"),
                },
            ]);
        }
    }
    csv(&header, &out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub task: String,
    pub model_id: String,
    pub masking: String,
    pub n_train: usize,
    pub n_seeds_kept: usize,
    pub mean_test_accuracy: Option<f64>,
    pub std_test_accuracy: Option<f64>,
    pub mean_dev_accuracy: Option<f64>,
    pub layer_weights: Option<Vec<f64>>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

/// Per-experiment means, without timings.
pub fn summary(rows: &[SuiteRow]) -> Vec<SummaryRow> {
    rows.iter()
        .map(|row| {
            let r = row.result.as_ref();
            SummaryRow {
                task: row.task.clone(),
                model_id: row.model_id.clone(),
                masking: row.masking.clone(),
                n_train: r.map_or(0, |r| r.n_train),
                n_seeds_kept: r.map_or(0, |r| r.kept_seeds().count()),
                mean_test_accuracy: r.map(|r| r.mean_test_accuracy),
                std_test_accuracy: r.map(|r| r.std_test_accuracy),
                mean_dev_accuracy: r.map(|r| r.mean_dev_accuracy),
                layer_weights: r.and_then(|r| r.mean_layer_weights()),
                warnings: r.map(|r| r.warnings.clone()).unwrap_or_default(),
                error: row.error.clone(),
            }
        })
        .collect()
}

/// Effect of every perturbation against the unperturbed run of the same
/// ⟨task, model⟩. Rows lacking a baseline, or with zero baseline accuracy,
/// are skipped.
pub fn effects(rows: &[SuiteRow]) -> Vec<EffectRecord> {
    let original = Perturbation::Original.to_string();
    let mut base: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for row in rows {
        if let (true, Some(r)) = (row.masking == original, &row.result) {
            base.insert((&row.task, &row.model_id), r.mean_test_accuracy);
        }
    }
    let mut out = Vec::new();
    for row in rows.iter().filter(|r| r.masking != original) {
        let (Some(r), Some(&acc)) = (&row.result, base.get(&(row.task.as_str(), row.model_id.as_str()))) else { continue };
        if let Ok(e) = effect(acc, r.mean_test_accuracy) {
            out.push(EffectRecord {
                model_id: row.model_id.clone(),
                task: row.task.clone(),
                perturbation: row.masking.clone(),
                acc_unperturbed: acc,
                acc_perturbed: r.mean_test_accuracy,
                effect: e,
            });
        }
    }
    out.sort_by(|a, b| (&a.model_id, &a.task, &a.perturbation).cmp(&(&b.model_id, &b.task, &b.perturbation)));
    out
}

pub fn effects_csv(records: &[EffectRecord]) -> String {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|e| vec![e.model_id.clone(), e.task.clone(), e.perturbation.clone(), fmt17(e.acc_unperturbed), fmt17(e.acc_perturbed), fmt17(e.effect)])
        .collect();
    csv(&["model_id", "task", "perturbation", "acc_unperturbed", "acc_perturbed", "effect"], &rows)
}

pub fn shapley_csv(profiles: &[ShapleyProfile]) -> String {
    let mut header = vec!["task", "model_id"];
    header.extend(PLAYER_LABELS);
    header.extend(["target", "left", "right", "context", "left_right_ratio"]);
    let rows: Vec<Vec<String>> = profiles
        .iter()
        .map(|p| {
            let mut r = vec![p.task.clone(), p.model_id.clone()];
            r.extend(p.phi.iter().map(|&v| fmt17(v)));
            r.extend([p.target, p.left, p.right, p.context, p.left_right_ratio_value()].map(fmt17));
            r
        })
        .collect();
    csv(&header, &rows)
}

/// Square matrix with row labels in the first column.
pub fn matrix_csv(corner: &str, labels: &[String], cols: &[String], cell: impl Fn(usize, usize) -> String) -> String {
    let mut header = vec![corner];
    header.extend(cols.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| std::iter::once(l.clone()).chain((0..cols.len()).map(|j| cell(i, j))).collect())
        .collect();
    csv(&header, &rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Vertical bar chart; each bar carries its exact value in `data-value`.
pub fn bar_svg(title: &str, labels: &[&str], values: &[f64]) -> String {
    let (w, h, margin, bar) = (60.0 + 50.0 * labels.len() as f64, 260.0, 40.0, 30.0);
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let hi = finite.clone().fold(0.0f64, f64::max);
    let lo = finite.fold(0.0f64, f64::min);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_h = h - 2.0 * margin;
    let y_of = |v: f64| margin + (hi - v) / span * plot_h;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, xml_escape(title));
    let zero = y_of(0.0);
    let _ = writeln!(s, r#"<line x1="30" y1="{zero:.3}" x2="{}" y2="{zero:.3}" stroke="black"/>"#, w - 10.0);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = 40.0 + 50.0 * i as f64;
        let vv = if v.is_finite() { v } else { 0.0 };
        let (top, height) = if vv >= 0.0 { (y_of(vv), zero - y_of(vv)) } else { (zero, y_of(vv) - zero) };
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x:.3}" y="{top:.3}" width="{bar}" height="{height:.3}" fill="steelblue" data-label="{}" data-value="{}"/>"#,
            xml_escape(label),
            fmt17(v)
        );
        let _ = writeln!(s, r#"<text x="{:.3}" y="{}" text-anchor="middle" font-size="11">{}</text>"#, x + bar / 2.0, h - 15.0, xml_escape(label));
    }
    s.push_str("</svg>\n");
    s
}

/// The 9-bar chart of one Shapley profile.
pub fn shapley_svg(profile: &ShapleyProfile) -> String {
    bar_svg(&format!("{} {}", profile.task, profile.model_id), &PLAYER_LABELS, &profile.phi)
}

/// Coarse family of common UD language codes, for ordering heatmaps.
pub fn language_family(code: &str) -> &'static str {
    match code {
        "af" | "da" | "de" | "en" | "fo" | "is" | "nl" | "no" | "nb" | "nn" | "sv" | "got" => "Germanic",
        "ca" | "es" | "fr" | "gl" | "it" | "la" | "pt" | "ro" => "Romance",
        "be" | "bg" | "cs" | "cu" | "hr" | "hsb" | "mk" | "orv" | "pl" | "ru" | "sk" | "sl" | "sr" | "uk" => "Slavic",
        "lt" | "lv" => "Baltic",
        "ga" | "gd" | "cy" | "br" => "Celtic",
        "el" | "grc" => "Greek",
        "hy" => "Armenian",
        "fa" | "hi" | "mr" | "sa" | "ur" | "kmr" => "Indo-Iranian",
        "et" | "fi" | "hu" | "kpv" | "myv" | "sme" => "Uralic",
        "kk" | "tr" | "ug" => "Turkic",
        "ar" | "he" | "mt" | "am" => "Afro-Asiatic",
        "eu" => "Basque",
        "ta" | "te" => "Dravidian",
        "ja" => "Japonic",
        "ko" => "Koreanic",
        "id" | "tl" => "Austronesian",
        "zh" | "yue" => "Sino-Tibetan",
        "wo" | "yo" => "Niger-Congo",
        _ => "Other",
    }
}

/// Row/column order of a heatmap: by family, then label.
pub fn family_order(labels: &[String], family: &dyn Fn(&str) -> String) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| (family(&labels[a]), &labels[a]).cmp(&(family(&labels[b]), &labels[b])));
    idx
}

/// Co-occurrence heatmap with languages sorted by family and a separator
/// line between families.
pub fn cooccurrence_svg(m: &CooccurrenceMatrix, family: &dyn Fn(&str) -> String) -> String {
    let order = family_order(&m.labels, family);
    let n = order.len();
    let (cell, left, top) = (16.0, 90.0, 90.0);
    let size = left + cell * n as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(s, "<title>co-occurrence over {} runs</title>", m.runs);
    for (r, &i) in order.iter().enumerate() {
        let y = top + cell * r as f64;
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="end" font-size="10">{}</text>"#, left - 4.0, y + cell * 0.75, xml_escape(&m.labels[i]));
        let _ = writeln!(
            s,
            r#"<text transform="translate({:.3},{:.3}) rotate(-90)" font-size="10">{}</text>"#,
            left + cell * r as f64 + cell * 0.75,
            top - 4.0,
            xml_escape(&m.labels[i])
        );
        for (c, &j) in order.iter().enumerate() {
            let frac = if m.runs == 0 { 0.0 } else { f64::from(m.counts[i][j]) / f64::from(m.runs) };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{:.3}" y="{y:.3}" width="{cell}" height="{cell}" fill="#{shade:02x}{shade:02x}ff" data-row="{}" data-col="{}" data-value="{}"/>"##,
                left + cell * c as f64,
                xml_escape(&m.labels[i]),
                xml_escape(&m.labels[j]),
                m.counts[i][j]
            );
        }
    }
    // Family separators.
    let end = left + cell * n as f64;
    for k in 1..n {
        let (a, b) = (family(&m.labels[order[k - 1]]), family(&m.labels[order[k]]));
        if a != b {
            let off = cell * k as f64;
            let _ = writeln!(s, r#"<line class="family-separator" x1="{left}" y1="{:.3}" x2="{end:.3}" y2="{:.3}" stroke="black" stroke-width="1.5"/>"#, top + off, top + off);
            let _ = writeln!(s, r#"<line class="family-separator" x1="{:.3}" y1="{top}" x2="{:.3}" y2="{:.3}" stroke="black" stroke-width="1.5"/>"#, left + off, left + off, top + cell * n as f64);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Everything a report can contain; empty parts produce no files.
#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub rows: Vec<SuiteRow>,
    pub shapley: Vec<ShapleyProfile>,
    pub cooccurrence: Option<CooccurrenceMatrix>,
    /// Language → family overrides for heatmap ordering.
    pub families: BTreeMap<String, String>,
}

impl ReportInput {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.shapley.is_empty() && self.cooccurrence.is_none()
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report values serialize");
    s.push('\n');
    s
}

/// Write every table and figure of `input` into `dir`; returns the paths
/// written, in order. An empty input writes nothing.
pub fn emit_report(dir: &Path, input: &ReportInput) -> std::io::Result<Vec<PathBuf>> {
    if input.is_empty() {
        log::warn!("nothing to report");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> std::io::Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    if !input.rows.is_empty() {
        put("results.csv", results_csv(&input.rows))?;
        put("summary.json", to_json(&summary(&input.rows)))?;
        let eff = effects(&input.rows);
        if !eff.is_empty() {
            put("effects.csv", effects_csv(&eff))?;
        }
    }
    if !input.shapley.is_empty() {
        put("shapley.csv", shapley_csv(&input.shapley))?;
        put("shapley.json", to_json(&input.shapley))?;
        for p in &input.shapley {
            put(&format!("shapley_{}_{}.svg", slug(&p.task), slug(&p.model_id)), shapley_svg(p))?;
        }
    }
    if let Some(m) = &input.cooccurrence {
        let family = |l: &str| input.families.get(l).cloned().unwrap_or_else(|| language_family(l).to_string());
        let order = family_order(&m.labels, &family);
        let labels: Vec<String> = order.iter().map(|&i| m.labels[i].clone()).collect();
        put("cooccurrence.csv", matrix_csv("language", &labels, &labels, |a, b| m.counts[order[a]][order[b]].to_string()))?;
        put("cooccurrence.svg", cooccurrence_svg(m, &family))?;
    }
    Ok(written)
}
