//! Scoring runs over a dataset split and their reports.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{load_instance, load_manifest, manifest_hash, DatasetError};
use crate::gateway::{
    bounded_map, build_prompt, query, write_transcript, EndpointConfig, ModelResponse, QueryMode,
};
use crate::instance::{Instance, Split};
use crate::metrics::{aggregate, num_score, overall_score, read_prediction, score_prediction, Summary, Truth, Validity};
use crate::refine::{refine, RefineConfig};

pub const TOOL: &str = "visa";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const FLOAT_DECIMALS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Predictions { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    /// Line-delimited `{"id": ..., "raw": ...}` records.
    Predictions { path: PathBuf },
    Endpoint { endpoint: EndpointConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// `None` scores every split.
    pub split: Option<Split>,
    pub mode: QueryMode,
    pub source: Source,
    pub refine: bool,
    pub concurrency: usize,
    /// Not serialized.
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub raw: String,
}

pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| HarnessError::Predictions {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(p.id, p.raw);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, lines: &[PredictionLine]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&serde_json::to_string(l).expect("prediction serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedScores {
    pub s_n: f64,
    pub overall: f64,
    pub rel_err: Option<f64>,
    pub expression: String,
    pub initial_mse: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub scenario: String,
    pub validity: Validity,
    pub s_c: f64,
    pub s_s: f64,
    pub s_n: f64,
    pub overall: f64,
    pub rel_err: Option<f64>,
    pub extracted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<RefinedScores>,
    /// Why no model text was scored, for transport or data failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl InstanceRecord {
    /// Refined numeric score, or the unrefined one when refinement did not run.
    pub fn refined_s_n(&self) -> f64 {
        self.refined.as_ref().map_or(self.s_n, |r| r.s_n)
    }

    pub fn refined_overall(&self) -> f64 {
        self.refined.as_ref().map_or(self.overall, |r| r.overall)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinedMeans {
    pub s_n: f64,
    pub overall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<RefinedMeans>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub dataset_manifest: String,
    pub corpus: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_refined: Option<RefinedMeans>,
    pub per_scenario: BTreeMap<String, ScenarioRow>,
    pub records: Vec<InstanceRecord>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_some()).count()
    }
}

fn refined_means<'a>(records: impl Iterator<Item = &'a InstanceRecord>) -> RefinedMeans {
    let mut m = RefinedMeans::default();
    let mut n = 0usize;
    for r in records {
        m.s_n += r.refined_s_n();
        m.overall += r.refined_overall();
        n += 1;
    }
    if n > 0 {
        m.s_n /= n as f64;
        m.overall /= n as f64;
    }
    m
}

/// Scores `raw` against `inst`; with `refine_cfg`, also fits the
/// prediction's constants and reports the refined numeric column. The
/// character and structure scores always use the unrefined prediction.
pub fn score_instance(inst: &Instance, raw: &str, refine_cfg: Option<&RefineConfig>) -> InstanceRecord {
    let pred = read_prediction(raw);
    let mut rec = InstanceRecord {
        id: inst.id.clone(),
        scenario: inst.scenario.clone(),
        validity: pred.validity,
        s_c: 0.0,
        s_s: 0.0,
        s_n: 0.0,
        overall: 0.0,
        rel_err: None,
        extracted: pred.extracted.clone(),
        refined: None,
        failure: None,
    };
    let truth_expr = match inst.solution_expr() {
        Ok(e) => e,
        Err(e) => {
            rec.failure = Some(e.to_string());
            return rec;
        }
    };
    let truth = Truth { printed: &inst.solution, expr: &truth_expr, points: &inst.points, values: &inst.u };
    let report = score_prediction(&pred, &truth);
    rec.validity = report.validity;
    rec.s_c = report.s_c;
    rec.s_s = report.s_s;
    rec.s_n = report.s_n;
    rec.overall = report.overall;
    rec.rel_err = report.rel_err;
    if let (Some(cfg), Some(e), Validity::Valid) = (refine_cfg, &pred.expr, report.validity) {
        let r = refine(e, &inst.points, &inst.u, cfg);
        let (s_n, rel) = match num_score(&r.expr, &inst.points, &inst.u) {
            Some((s, rel)) if s >= report.s_n => (s, Some(rel)),
            _ => (report.s_n, report.rel_err),
        };
        rec.refined = Some(RefinedScores {
            s_n,
            overall: overall_score(report.s_c, report.s_s, s_n),
            rel_err: rel,
            expression: crate::expr::print(&r.expr),
            initial_mse: r.initial_mse,
            mse: r.mse,
        });
    }
    rec
}

fn failed_record(id: &str, scenario: &str, reason: String) -> InstanceRecord {
    InstanceRecord {
        id: id.to_string(),
        scenario: scenario.to_string(),
        validity: Validity::NoSolutionTag,
        s_c: 0.0,
        s_s: 0.0,
        s_n: 0.0,
        overall: 0.0,
        rel_err: None,
        extracted: None,
        refined: None,
        failure: Some(reason),
    }
}

/// Builds the report from per-instance records.
pub fn assemble_report(cfg: &RunConfig, dataset_manifest: String, records: Vec<InstanceRecord>) -> RunReport {
    let pairs: Vec<(String, crate::metrics::ScoreReport)> = records
        .iter()
        .map(|r| {
            (
                r.scenario.clone(),
                crate::metrics::ScoreReport {
                    validity: r.validity,
                    s_c: r.s_c,
                    s_s: r.s_s,
                    s_n: r.s_n,
                    overall: r.overall,
                    rel_err: r.rel_err,
                },
            )
        })
        .collect();
    let agg = aggregate(&pairs);
    let per_scenario = agg
        .per_scenario
        .into_iter()
        .map(|(s, summary)| {
            let refined = cfg.refine.then(|| refined_means(records.iter().filter(|r| r.scenario == s)));
            (s, ScenarioRow { summary, refined })
        })
        .collect();
    RunReport {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        dataset_manifest,
        corpus: agg.corpus,
        corpus_refined: cfg.refine.then(|| refined_means(records.iter())),
        per_scenario,
        records,
    }
}

/// Scores every selected instance. Per-instance failures are recorded,
/// never fatal. Model replies and transcripts go under `cfg.out`.
pub fn run_eval(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    let entries: Vec<_> = load_manifest(&cfg.dataset)?
        .into_iter()
        .filter(|e| cfg.split.is_none_or(|s| s == e.split))
        .collect();
    if entries.is_empty() {
        return Err(HarnessError::Config(format!("no instances selected in {}", cfg.dataset.display())));
    }
    let predictions = match &cfg.source {
        Source::Predictions { path } => Some(load_predictions(path)?),
        Source::Endpoint { .. } => None,
    };
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let refine_cfg = cfg.refine.then(|| RefineConfig { seed: cfg.seed, ..RefineConfig::default() });
    let transcripts = cfg.out.join("transcripts");

    let results: Vec<(InstanceRecord, Option<ModelResponse>)> = bounded_map(entries, cfg.concurrency, |e| {
        let inst = match load_instance(&cfg.dataset, &e.id) {
            Ok(i) => i,
            Err(err) => return (failed_record(&e.id, &e.scenario, format!("load: {err}")), None),
        };
        let (raw, resp) = match (&predictions, &cfg.source) {
            (Some(p), _) => match p.get(&e.id) {
                Some(raw) => (raw.clone(), None),
                None => return (failed_record(&e.id, &e.scenario, "no prediction".into()), None),
            },
            (None, Source::Endpoint { endpoint }) => {
                let payload = match build_prompt(&cfg.dataset, &inst, cfg.mode) {
                    Ok(p) => p,
                    Err(err) => return (failed_record(&e.id, &e.scenario, err.to_string()), None),
                };
                let resp = query(&payload, endpoint);
                if let Err(err) = write_transcript(&transcripts, &payload, &resp) {
                    log::warn!("{}: transcript not written: {err}", e.id);
                }
                if let Some(reason) = resp.failure() {
                    let rec = failed_record(&e.id, &e.scenario, format!("transport: {reason}"));
                    return (rec, Some(resp));
                }
                (resp.raw.clone(), Some(resp))
            }
            (None, Source::Predictions { .. }) => unreachable!("predictions are loaded above"),
        };
        (score_instance(&inst, &raw, refine_cfg.as_ref()), resp)
    });

    if matches!(cfg.source, Source::Endpoint { .. }) {
        let mut text = String::new();
        for (rec, resp) in &results {
            if let Some(r) = resp {
                let line = serde_json::json!({"id": rec.id, "raw": r.raw, "status": r.status, "attempts": r.attempts});
                text.push_str(&line.to_string());
                text.push('\n');
            }
        }
        let path = cfg.out.join(RESPONSES_FILE);
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    let records = results.into_iter().map(|(r, _)| r).collect();
    Ok(assemble_report(cfg, manifest_hash(&cfg.dataset)?, records))
}

fn write_fixed(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().expect("f64 number");
            let s = format!("{f:.FLOAT_DECIMALS$}");
            out.push_str(if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') { "0.0000000000" } else { &s });
        }
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, it) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_fixed(it, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, it)) in map.iter().enumerate() {
                let _ = write!(out, "{}{}: ", pad(indent + 1), Value::String(k.clone()));
                write_fixed(it, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Pretty JSON with every float printed to `FLOAT_DECIMALS` decimals.
pub fn to_fixed_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let mut out = String::new();
    write_fixed(&v, 0, &mut out);
    out.push('\n');
    out
}

pub fn write_report(dir: &Path, report: &RunReport) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, to_fixed_json(report)).map_err(io_err(&path))?;
    Ok(path)
}

pub fn load_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Plain-text corpus and per-scenario table.
pub fn render_table(report: &RunReport) -> String {
    let mut s = String::new();
    let refined = report.corpus_refined.is_some();
    let _ = write!(s, "{:<34} {:>5} {:>8} {:>7} {:>7} {:>7} {:>8}", "scenario", "n", "success", "S_C", "S_S", "S_N", "overall");
    if refined {
        let _ = write!(s, " {:>9} {:>9}", "S_N(ref)", "ovr(ref)");
    }
    s.push('\n');
    let mut row = |name: &str, sm: &Summary, r: Option<&RefinedMeans>| {
        let m = &sm.means;
        let _ = write!(
            s,
            "{:<34} {:>5} {:>7.1}% {:>7.4} {:>7.4} {:>7.4} {:>8.4}",
            name,
            sm.count,
            100.0 * sm.success_rate,
            m.s_c,
            m.s_s,
            m.s_n,
            m.overall
        );
        if let Some(r) = r {
            let _ = write!(s, " {:>9.4} {:>9.4}", r.s_n, r.overall);
        }
        s.push('\n');
    };
    for (name, r) in &report.per_scenario {
        row(name, &r.summary, r.refined.as_ref());
    }
    row("corpus", &report.corpus, report.corpus_refined.as_ref());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_json_is_stable() {
        let v = serde_json::json!({"a": 0.1 + 0.2, "b": [1, -0.0, 1e-17], "c": null, "d": "x"});
        let s = to_fixed_json(&v);
        assert!(s.contains("\"a\": 0.3000000000"));
        assert!(s.contains("0.0000000000,\n    0.0000000000"));
        assert!(s.contains("    1,"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["d"], "x");
    }
}
