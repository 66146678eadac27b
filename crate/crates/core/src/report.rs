//! Evaluation reports: per-seed runs plus mean and population standard
//! deviation, merging across files, and plain-text table rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::EntityLabel;
use crate::error::{Error, Result};
use crate::fitb::{FitbMetrics, QualitativeRow};
use crate::qa::QaMetrics;
use crate::tagger::{EntityMetrics, Scores};

pub const REPORT_FORMAT: &str = "nuer-report-v1";
pub const STD_NOTE: &str = "std is the population standard deviation over seeds; \
significance testing is reduced to mean and std across seeds, no formal test is run";

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by `n`).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn summarize(scores: &[Scores]) -> (Prf, Prf) {
    let col = |f: fn(&Scores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    let (p, r, f) = (col(|s| s.precision), col(|s| s.recall), col(|s| s.f1));
    (
        Prf {
            precision: mean(&p),
            recall: mean(&r),
            f1: mean(&f),
        },
        Prf {
            precision: population_std(&p),
            recall: population_std(&r),
            f1: population_std(&f),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerRun {
    pub seed: u64,
    pub per_entity: BTreeMap<EntityLabel, Scores>,
    pub total: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerStd {
    pub per_entity: BTreeMap<EntityLabel, Prf>,
    pub total: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerReport {
    pub format: String,
    pub kind: String,
    pub model: String,
    pub dataset: String,
    /// "full" or "few-shot".
    pub variant: String,
    /// Classes used to pick the few-shot subset; empty for full training.
    pub classes: Vec<EntityLabel>,
    pub aggregation: String,
    pub seeds: Vec<u64>,
    pub per_entity: BTreeMap<EntityLabel, Prf>,
    pub total: Prf,
    pub std: TaggerStd,
    pub note: String,
    pub runs: Vec<TaggerRun>,
}

impl TaggerReport {
    pub fn new(model: &str, dataset: &str, variant: &str, classes: Vec<EntityLabel>, mut runs: Vec<TaggerRun>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let mut per_entity = BTreeMap::new();
        let mut per_entity_std = BTreeMap::new();
        for e in EntityLabel::ENTITIES {
            let s: Vec<Scores> = runs.iter().map(|r| r.per_entity.get(&e).copied().unwrap_or_default()).collect();
            let (m, sd) = summarize(&s);
            per_entity.insert(e, m);
            per_entity_std.insert(e, sd);
        }
        let totals: Vec<Scores> = runs.iter().map(|r| r.total).collect();
        let (total, total_std) = summarize(&totals);
        TaggerReport {
            format: REPORT_FORMAT.into(),
            kind: "tagger".into(),
            model: model.into(),
            dataset: dataset.into(),
            variant: variant.into(),
            classes,
            aggregation: "micro".into(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            per_entity,
            total,
            std: TaggerStd {
                per_entity: per_entity_std,
                total: total_std,
            },
            note: STD_NOTE.into(),
            runs,
        }
    }
}

pub fn tagger_run(seed: u64, m: &EntityMetrics) -> TaggerRun {
    TaggerRun {
        seed,
        per_entity: m.per_entity.clone(),
        total: m.total,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRun {
    pub seed: u64,
    pub exact_match: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaReport {
    pub format: String,
    pub kind: String,
    pub model: String,
    pub mode: String,
    /// "gold" or "tagger".
    pub entities: String,
    pub exact_match: f64,
    pub f1: f64,
    pub seeds: Vec<u64>,
    /// Std of exact match.
    pub std: f64,
    pub f1_std: f64,
    pub note: String,
    pub runs: Vec<QaRun>,
}

impl QaReport {
    pub fn new(model: &str, mode: &str, entities: &str, mut runs: Vec<QaRun>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let em: Vec<f64> = runs.iter().map(|r| r.exact_match).collect();
        let f1: Vec<f64> = runs.iter().map(|r| r.f1).collect();
        QaReport {
            format: REPORT_FORMAT.into(),
            kind: "qa".into(),
            model: model.into(),
            mode: mode.into(),
            entities: entities.into(),
            exact_match: mean(&em),
            f1: mean(&f1),
            seeds: runs.iter().map(|r| r.seed).collect(),
            std: population_std(&em),
            f1_std: population_std(&f1),
            note: STD_NOTE.into(),
            runs,
        }
    }
}

pub fn qa_run(seed: u64, m: &QaMetrics) -> QaRun {
    QaRun {
        seed,
        exact_match: m.exact_match,
        f1: m.f1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitbRun {
    pub seed: u64,
    pub top_k: BTreeMap<usize, f64>,
    pub dist: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitbStd {
    pub top_k: BTreeMap<usize, f64>,
    pub dist: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitbReport {
    pub format: String,
    pub kind: String,
    pub model: String,
    pub mode: String,
    pub entities: String,
    pub top_k: BTreeMap<usize, f64>,
    pub dist: BTreeMap<usize, f64>,
    pub dist_definition: String,
    pub seeds: Vec<u64>,
    pub std: FitbStd,
    pub note: String,
    pub runs: Vec<FitbRun>,
}

impl FitbReport {
    pub fn new(model: &str, mode: &str, entities: &str, mut runs: Vec<FitbRun>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let ks: Vec<usize> = runs.first().map(|r| r.top_k.keys().copied().collect()).unwrap_or_default();
        let mut top_k = BTreeMap::new();
        let mut dist = BTreeMap::new();
        let mut std = FitbStd {
            top_k: BTreeMap::new(),
            dist: BTreeMap::new(),
        };
        for k in ks {
            let t: Vec<f64> = runs.iter().map(|r| r.top_k.get(&k).copied().unwrap_or(0.0)).collect();
            let d: Vec<f64> = runs.iter().map(|r| r.dist.get(&k).copied().unwrap_or(0.0)).collect();
            top_k.insert(k, mean(&t));
            dist.insert(k, mean(&d));
            std.top_k.insert(k, population_std(&t));
            std.dist.insert(k, population_std(&d));
        }
        FitbReport {
            format: REPORT_FORMAT.into(),
            kind: "fitb".into(),
            model: model.into(),
            mode: mode.into(),
            entities: entities.into(),
            top_k,
            dist,
            dist_definition: "mean absolute value gap over the top-k predictions, averaged over examples".into(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            std,
            note: STD_NOTE.into(),
            runs,
        }
    }
}

pub fn fitb_run(seed: u64, m: &FitbMetrics) -> FitbRun {
    FitbRun {
        seed,
        top_k: m.top_k.clone(),
        dist: m.dist.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Tagger(TaggerReport),
    Qa(QaReport),
    Fitb(FitbReport),
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = match self {
            Report::Tagger(r) => serde_json::to_string_pretty(r),
            Report::Qa(r) => serde_json::to_string_pretty(r),
            Report::Fitb(r) => serde_json::to_string_pretty(r),
        }
        .expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::invalid(format!("report is not JSON: {e}")))?;
        let format = v.get("format").and_then(Value::as_str).unwrap_or("");
        if format != REPORT_FORMAT {
            return Err(Error::Version {
                expected: REPORT_FORMAT.into(),
                found: format.into(),
            });
        }
        let bad = |e: serde_json::Error| Error::invalid(format!("bad report: {e}"));
        match v.get("kind").and_then(Value::as_str) {
            Some("tagger") => serde_json::from_value(v).map(Report::Tagger).map_err(bad),
            Some("qa") => serde_json::from_value(v).map(Report::Qa).map_err(bad),
            Some("fitb") => serde_json::from_value(v).map(Report::Fitb).map_err(bad),
            other => Err(Error::invalid(format!("unknown report kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Merges reports describing the same configuration (same kind, model,
/// dataset or mode) by pooling their runs. Input order does not matter.
pub fn merge_reports(reports: &[Report]) -> Result<Vec<Report>> {
    let mut tag: BTreeMap<(String, String, String, Vec<EntityLabel>), Vec<TaggerRun>> = BTreeMap::new();
    let mut qa: BTreeMap<(String, String, String), Vec<QaRun>> = BTreeMap::new();
    let mut fitb: BTreeMap<(String, String, String), Vec<FitbRun>> = BTreeMap::new();
    for r in reports {
        match r {
            Report::Tagger(t) => tag
                .entry((t.model.clone(), t.dataset.clone(), t.variant.clone(), t.classes.clone()))
                .or_default()
                .extend(t.runs.iter().cloned()),
            Report::Qa(q) => qa
                .entry((q.model.clone(), q.mode.clone(), q.entities.clone()))
                .or_default()
                .extend(q.runs.iter().cloned()),
            Report::Fitb(f) => fitb
                .entry((f.model.clone(), f.mode.clone(), f.entities.clone()))
                .or_default()
                .extend(f.runs.iter().cloned()),
        }
    }
    let mut out = Vec::new();
    for ((model, dataset, variant, classes), mut runs) in tag {
        runs.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| json_cmp(a, b)));
        runs.dedup();
        out.push(Report::Tagger(TaggerReport::new(&model, &dataset, &variant, classes, runs)));
    }
    for ((model, mode, ents), mut runs) in qa {
        runs.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| json_cmp(a, b)));
        runs.dedup();
        out.push(Report::Qa(QaReport::new(&model, &mode, &ents, runs)));
    }
    for ((model, mode, ents), mut runs) in fitb {
        runs.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| json_cmp(a, b)));
        runs.dedup();
        let ks: Vec<Vec<usize>> = runs.iter().map(|r| r.top_k.keys().copied().collect()).collect();
        if ks.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid("FITB reports use different k lists"));
        }
        out.push(Report::Fitb(FitbReport::new(&model, &mode, &ents, runs)));
    }
    Ok(out)
}

fn json_cmp<T: Serialize>(a: &T, b: &T) -> std::cmp::Ordering {
    serde_json::to_string(a).unwrap().cmp(&serde_json::to_string(b).unwrap())
}

fn pm(mean: f64, std: f64, n: usize) -> String {
    if n > 1 {
        format!("{mean:.2}±{std:.2}")
    } else {
        format!("{mean:.2}")
    }
}

fn entity_title(e: EntityLabel) -> &'static str {
    match e {
        EntityLabel::Year => "Year",
        EntityLabel::Count => "Count",
        EntityLabel::Percentage => "Percentage",
        EntityLabel::Age => "Age",
        EntityLabel::Size => "Size",
        EntityLabel::Date => "Date",
        EntityLabel::Other => "Other",
    }
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let n = header.len();
    let mut w = vec![0; n];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.chars().count());
        }
    }
    let line = |out: &mut String, r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<width$}", width = w[i]))
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    };
    line(out, header);
    let rule: Vec<String> = w.iter().map(|&k| "-".repeat(k)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for r in rows {
        line(out, r);
    }
}

fn prf_rows(label: &str, cols: &[EntityLabel], r: &TaggerReport, with_total: bool) -> Vec<Vec<String>> {
    let n = r.runs.len();
    let metric = |name: &str, get: fn(&Prf) -> f64| {
        let mut row = vec![label.to_string(), name.to_string()];
        for e in cols {
            row.push(pm(get(&r.per_entity[e]), get(&r.std.per_entity[e]), n));
        }
        if with_total {
            row.push(pm(get(&r.total), get(&r.std.total), n));
        }
        row
    };
    vec![
        metric("Precision", |p| p.precision),
        metric("Recall", |p| p.recall),
        metric("F1", |p| p.f1),
    ]
}

/// Renders merged reports as plain-text tables: per-entity scores, few-shot
/// versus full training, QA baseline versus joint embeddings, FITB top-k and
/// dist, and an optional qualitative section.
pub fn render_reports(reports: &[Report], qualitative: &[QualitativeRow]) -> String {
    let mut out = String::new();
    let taggers: Vec<&TaggerReport> = reports
        .iter()
        .filter_map(|r| if let Report::Tagger(t) = r { Some(t) } else { None })
        .collect();
    let full: Vec<&&TaggerReport> = taggers.iter().filter(|t| t.variant != "few-shot").collect();
    if !full.is_empty() {
        let _ = writeln!(out, "Number entity recognition (token-level, micro-averaged total)\n");
        let mut header = vec![String::new(), String::new()];
        header.extend(EntityLabel::ENTITIES.iter().map(|e| entity_title(*e).to_string()));
        header.push("Total".into());
        let mut rows = Vec::new();
        for t in &full {
            let label = format!("{} ({}, {} seeds)", t.dataset, t.model, t.runs.len());
            rows.extend(prf_rows(&label, &EntityLabel::ENTITIES, t, true));
        }
        table(&mut out, &header, &rows);
        out.push('\n');
    }
    let few: Vec<&&TaggerReport> = taggers.iter().filter(|t| t.variant == "few-shot").collect();
    if !few.is_empty() {
        let _ = writeln!(out, "Few-shot versus full fine-tuning\n");
        for f in &few {
            let cols = &f.classes;
            let mut header = vec![String::new(), String::new()];
            header.extend(cols.iter().map(|e| entity_title(*e).to_string()));
            let mut rows = prf_rows("Few-shot", cols, f, false);
            if let Some(m) = full.iter().find(|t| t.dataset == f.dataset && t.model == f.model) {
                rows.extend(prf_rows("Full fine-tuning", cols, m, false));
            }
            table(&mut out, &header, &rows);
            out.push('\n');
        }
    }
    let qas: Vec<&QaReport> = reports
        .iter()
        .filter_map(|r| if let Report::Qa(q) = r { Some(q) } else { None })
        .collect();
    if !qas.is_empty() {
        let _ = writeln!(out, "Question answering: baseline versus joint entity embeddings\n");
        let header: Vec<String> = ["Model", "Version", "Exact match", "F1"].map(String::from).to_vec();
        let mut rows = Vec::new();
        let mut models: Vec<&str> = qas.iter().map(|q| q.model.as_str()).collect();
        models.dedup();
        for m in models {
            for mode in ["baseline", "jem"] {
                for q in qas.iter().filter(|q| q.model == m && q.mode == mode) {
                    let n = q.runs.len();
                    let version = if q.entities == "gold" {
                        mode_title(mode).to_string()
                    } else {
                        format!("{} ({} entities)", mode_title(mode), q.entities)
                    };
                    rows.push(vec![
                        m.to_string(),
                        version,
                        pm(q.exact_match, q.std, n),
                        pm(q.f1, q.f1_std, n),
                    ]);
                }
            }
        }
        table(&mut out, &header, &rows);
        out.push('\n');
    }
    let fitbs: Vec<&FitbReport> = reports
        .iter()
        .filter_map(|r| if let Report::Fitb(f) = r { Some(f) } else { None })
        .collect();
    if !fitbs.is_empty() {
        let _ = writeln!(out, "Fill-in-the-blank: top-k accuracy and dist\n");
        let ks: Vec<usize> = fitbs[0].top_k.keys().copied().collect();
        let mut header = vec![String::new()];
        header.extend(ks.iter().map(|k| format!("Top-{k}")));
        let mut rows = Vec::new();
        for mode in ["baseline", "entity"] {
            for f in fitbs.iter().filter(|f| f.mode == mode) {
                let n = f.runs.len();
                let name = if mode == "baseline" { "Baseline" } else { "Entity" };
                let mut top = vec![format!("{name} ({})", f.model)];
                let mut dist = vec!["Dist".to_string()];
                for k in &ks {
                    top.push(pm(f.top_k[k], f.std.top_k[k], n));
                    dist.push(pm(f.dist[k], f.std.dist[k], n));
                }
                rows.push(top);
                rows.push(dist);
            }
        }
        table(&mut out, &header, &rows);
        let _ = writeln!(out, "\ndist: mean over the top-k list of |predicted value - gold value|, averaged over examples\n");
    }
    if !qualitative.is_empty() {
        let _ = writeln!(out, "Qualitative fill-in-the-blank predictions\n");
        out.push_str(&crate::fitb::render_qualitative(qualitative));
        out.push('\n');
    }
    let _ = writeln!(out, "{STD_NOTE}.");
    out
}

fn mode_title(mode: &str) -> &'static str {
    match mode {
        "jem" => "JEM",
        _ => "Baseline",
    }
}
