//! Staged chain-of-thought synthesis with deterministic final validation.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::sha256_hex;
use crate::expr::{canonicalize, free_constants, parse, print, simplify, Expr};
use crate::gateway::{
    bounded_map, field_table, format_value, gradient_table, instance_images, metadata_block, query, EndpointConfig,
    GatewayError, ModelResponse, PromptPayload,
};
use crate::instance::{evaluate_on, Instance, GRID_N};
use crate::metrics::{extract_solution, relative_error};
use crate::scenario::{scenario_by_slug, substitute, Scenario};
use crate::template::{fill, template_hash};

pub const TEMPLATE_VERSION: u32 = 1;
pub const STAGES: u8 = 6;
pub const JUDGE_STAGE: u8 = 7;
pub const MIN_WORDS: usize = 300;
pub const MAX_WORDS: usize = 800;
pub const CONSTANT_RTOL: f64 = 1e-6;
pub const LEAK_RUN: usize = 3;
pub const BLOCKLIST: [&str; 8] = [
    "ground truth",
    "ground-truth",
    "groundtruth",
    "comparing with gt",
    "compared with gt",
    "compare with gt",
    "gt solution",
    "gt expression",
];
pub const RECORD_FILE: &str = "record.json";
pub const GOLD_MANIFEST: &str = "gold.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageTemplate {
    pub stage: u8,
    pub text: &'static str,
    pub attaches_images: bool,
    /// Whether the stage is shown the reference expression.
    pub sees_truth: bool,
}

pub const TEMPLATES: [StageTemplate; 7] = [
    StageTemplate { stage: 1, text: include_str!("../templates/stage1.txt"), attaches_images: true, sees_truth: false },
    StageTemplate { stage: 2, text: include_str!("../templates/stage2.txt"), attaches_images: false, sees_truth: false },
    StageTemplate { stage: 3, text: include_str!("../templates/stage3.txt"), attaches_images: false, sees_truth: true },
    StageTemplate { stage: 4, text: include_str!("../templates/stage4.txt"), attaches_images: false, sees_truth: true },
    StageTemplate { stage: 5, text: include_str!("../templates/stage5.txt"), attaches_images: false, sees_truth: true },
    StageTemplate { stage: 6, text: include_str!("../templates/stage6.txt"), attaches_images: false, sees_truth: true },
    StageTemplate {
        stage: 7,
        text: include_str!("../templates/stage7_judge.txt"),
        attaches_images: false,
        sees_truth: true,
    },
];

pub fn stage_template(k: u8) -> &'static StageTemplate {
    &TEMPLATES[(k as usize).clamp(1, 7) - 1]
}

pub fn stage_name(k: u8) -> String {
    format!("stage{k}")
}

#[derive(Debug, thiserror::Error)]
pub enum CotError {
    #[error("stage {stage} needs stage {missing} first")]
    MissingStage { stage: u8, missing: u8 },
    #[error("stage {stage} incomplete: {reason}")]
    Incomplete { stage: u8, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("scenario lookup: {0}")]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CotError + '_ {
    move |source| CotError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Leak,
    SolutionMatch,
    Length,
    MultiSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: Check,
    pub pass: bool,
    pub evidence: String,
    /// Byte range in the checked text, when one span is at fault.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CotRecord {
    pub instance: String,
    pub scenario: String,
    /// Raw output per completed stage.
    pub stages: BTreeMap<u8, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incomplete: Option<(u8, String)>,
    pub verdicts: Vec<Verdict>,
    /// Optional model-judged consistency pass; never gates `gold`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    pub gold: bool,
}

impl CotRecord {
    pub fn new(inst: &Instance) -> CotRecord {
        CotRecord { instance: inst.id.clone(), scenario: inst.scenario.clone(), ..CotRecord::default() }
    }

    pub fn stage(&self, k: u8) -> Option<&str> {
        self.stages.get(&k).map(String::as_str)
    }

    pub fn failed_checks(&self) -> Vec<Check> {
        self.verdicts.iter().filter(|v| !v.pass).map(|v| v.check).collect()
    }
}

/// `cxx*u_xx + cyy*u_yy + c0*u = source` for the instance's parameters.
pub fn pde_text(s: &Scenario, values: &[f64]) -> String {
    let Some(r) = &s.residual else { return "not recorded".to_string() };
    let term = |t: &str| {
        let text = substitute(t, &s.params, values);
        parse(&text).map(|e| print(&e)).unwrap_or(text)
    };
    format!("({})*u_xx + ({})*u_yy + ({})*u = {}", term(&r.cxx), term(&r.cyy), term(&r.c0), term(&r.source))
}

fn parameter_list(s: &Scenario, values: &[f64]) -> String {
    let parts: Vec<String> = s.params.iter().zip(values).map(|(p, v)| format!("{} = {}", p.name, format_value(*v))).collect();
    parts.join(", ")
}

fn features_block(inst: &Instance) -> String {
    let d = inst.domain;
    let v = json!({
        "domain": [d.x_min, d.x_max, d.y_min, d.y_max],
        "grid_shape": [GRID_N, GRID_N],
        "features": inst.features,
    });
    serde_json::to_string_pretty(&v).expect("features serialize") + "\n"
}

fn prior<'a>(rec: &'a CotRecord, stage: u8, k: u8) -> Result<&'a str, CotError> {
    rec.stage(k).ok_or(CotError::MissingStage { stage, missing: k })
}

/// The filled request for stage `k` (1..=6, or 7 for the judge pass).
pub fn stage_payload(k: u8, root: &Path, inst: &Instance, rec: &CotRecord) -> Result<PromptPayload, CotError> {
    let t = stage_template(k);
    let s = scenario_by_slug(&inst.scenario)?;
    let m = &inst.metadata;
    let (x0, x1, y0, y1) = (format_value(m.x_min), format_value(m.x_max), format_value(m.y_min), format_value(m.y_max));
    let mut vars: Vec<(&str, String)> =
        vec![("x_min", x0), ("x_max", x1), ("y_min", y0), ("y_max", y1)];
    match k {
        1 => vars.push(("metadata", metadata_block(inst))),
        2 => {
            vars.push(("stage1", prior(rec, k, 1)?.to_string()));
            vars.push(("field_table", field_table(inst, true)));
            vars.push(("gradient_table", gradient_table(inst, true)));
            vars.push(("features", features_block(inst)));
        }
        3 => {
            vars.push(("ground_truth", inst.solution.clone()));
            vars.push(("pde", pde_text(s, &inst.params.values)));
            vars.push(("operator", s.operator.clone()));
            vars.push(("scenario", s.name.clone()));
            vars.push(("parameters", parameter_list(s, &inst.params.values)));
        }
        4 => {
            for j in 1..=3 {
                vars.push((["stage1", "stage2", "stage3"][j - 1], prior(rec, k, j as u8)?.to_string()));
            }
        }
        5 => {
            let names: Vec<&str> = s.params.iter().map(|p| p.name.as_str()).collect();
            vars.push(("parameter_names", names.join(", ")));
            vars.push(("stage4", prior(rec, k, 4)?.to_string()));
            vars.push(("stage2", prior(rec, k, 2)?.to_string()));
        }
        6 => {
            vars.push(("ground_truth", inst.solution.clone()));
            let mut summaries = String::new();
            for j in 1..=5 {
                let _ = writeln!(summaries, "Stage {j}:\n{}\n", prior(rec, k, j)?.trim_end());
            }
            vars.push(("summaries", summaries));
        }
        _ => {
            let out = prior(rec, k, 6)?;
            vars.push(("rationale", rationale(out)));
            vars.push(("solution", extract_solution(out).unwrap_or_default()));
        }
    }
    let pairs: Vec<(&str, &str)> = vars.iter().map(|(a, b)| (*a, b.as_str())).collect();
    let text = fill(t.text, &pairs);
    let images = if t.attaches_images { instance_images(root, &inst.id)? } else { Vec::new() };
    Ok(PromptPayload { instance: inst.id.clone(), stage: stage_name(k), text, images })
}

/// Cache key of one stage request: template hash and request digest.
pub fn cache_key(k: u8, p: &PromptPayload) -> String {
    let mut h = String::new();
    let _ = write!(h, "v{TEMPLATE_VERSION}\n{}\n{}\n", template_hash(stage_template(k).text), sha256_hex(p.text.as_bytes()));
    for img in &p.images {
        let _ = writeln!(h, "{}:{}", img.name, sha256_hex(&img.bytes));
    }
    sha256_hex(h.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutput {
    pub stage: u8,
    pub text: String,
    pub cached: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CotError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Runs stage `k` through `cfg`, reusing `cot_root/{id}/stage{k}.txt` when
/// its key matches and `force` is off.
pub fn run_stage(
    k: u8,
    root: &Path,
    inst: &Instance,
    rec: &CotRecord,
    cfg: &EndpointConfig,
    cot_root: &Path,
    force: bool,
) -> Result<StageOutput, CotError> {
    let payload = stage_payload(k, root, inst, rec)?;
    let key = cache_key(k, &payload);
    let dir = cot_root.join(&inst.id);
    let out_path = dir.join(format!("{}.txt", stage_name(k)));
    let key_path = dir.join(format!("{}.key", stage_name(k)));
    if !force {
        if let (Ok(stored), Ok(text)) = (std::fs::read_to_string(&key_path), std::fs::read_to_string(&out_path)) {
            if stored.trim() == key {
                return Ok(StageOutput { stage: k, text, cached: true });
            }
        }
    }
    let resp: ModelResponse = query(&payload, cfg);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    crate::gateway::write_transcript(&cot_root.join("transcripts"), &payload, &resp)?;
    if let Some(reason) = resp.failure() {
        return Err(CotError::Incomplete { stage: k, reason: reason.to_string() });
    }
    if resp.raw.trim().is_empty() {
        return Err(CotError::Incomplete { stage: k, reason: "empty reply".into() });
    }
    write_atomic(&out_path, resp.raw.as_bytes())?;
    write_atomic(&key_path, key.as_bytes())?;
    Ok(StageOutput { stage: k, text: resp.raw, cached: false })
}

/// The Stage-6 text with `<solution>` blocks and thinking tags removed.
pub fn rationale(stage6: &str) -> String {
    let mut out = String::new();
    let mut rest = stage6;
    while let Some(open) = rest.find("<solution>") {
        out.push_str(&rest[..open]);
        rest = match rest[open..].find("</solution>") {
            Some(close) => &rest[open + close + "</solution>".len()..],
            None => "",
        };
    }
    out.push_str(rest);
    out.replace("<thinking>", " ").replace("</thinking>", " ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Unsigned numeric literals in `text` with their byte spans.
pub fn numeric_tokens(text: &str) -> Vec<(f64, (usize, usize))> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let starts = b[i].is_ascii_digit() || (b[i] == b'.' && i + 1 < b.len() && b[i + 1].is_ascii_digit());
        let glued = i > 0 && (b[i - 1].is_ascii_alphabetic() || b[i - 1] == b'_');
        if !starts || glued {
            i += 1;
            continue;
        }
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' && i + 1 < b.len() && b[i + 1].is_ascii_digit() {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i + 1 < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        if let Ok(v) = text[start..i].parse::<f64>() {
            out.push((v, (start, i)));
        }
    }
    out
}

fn close_rel(a: f64, b: f64, rtol: f64) -> bool {
    a == b || (a - b).abs() <= rtol * a.abs().max(b.abs())
}

fn squeeze(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn excerpt(text: &str, span: (usize, usize)) -> String {
    let mut lo = span.0.saturating_sub(30);
    let mut hi = (span.1 + 30).min(text.len());
    while !text.is_char_boundary(lo) {
        lo -= 1;
    }
    while !text.is_char_boundary(hi) {
        hi += 1;
    }
    text[lo..hi].split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First trace of `truth` in `text`: its printed form, a run of at least
/// three of its free constants in order, or a blocklisted phrase.
pub fn find_leak(text: &str, truth: &str) -> Option<(String, Option<(usize, usize)>)> {
    let needle = squeeze(truth);
    if !needle.is_empty() && squeeze(text).contains(&needle) {
        let span = text.find(truth).map(|i| (i, i + truth.len()));
        return Some(("contains the reference expression".to_string(), span));
    }
    if let Ok(e) = parse(truth) {
        let consts: Vec<f64> = free_constants(&e).iter().map(|c| c.value.abs()).collect();
        let tokens = numeric_tokens(text);
        if consts.len() >= LEAK_RUN && tokens.len() >= LEAK_RUN {
            for w in consts.windows(LEAK_RUN) {
                for t in tokens.windows(LEAK_RUN) {
                    if w.iter().zip(t).all(|(c, (v, _))| close_rel(*c, *v, 1e-9)) {
                        let span = (t[0].1 .0, t[LEAK_RUN - 1].1 .1);
                        return Some((format!("constant run `{}`", &text[span.0..span.1]), Some(span)));
                    }
                }
            }
        }
    }
    let lower = text.to_lowercase();
    BLOCKLIST.iter().find_map(|phrase| {
        lower.find(phrase).map(|i| (format!("blocklisted phrase \"{phrase}\""), Some((i, i + phrase.len()))))
    })
}

fn leak_verdict(body: &str, truth: &str) -> Verdict {
    match find_leak(body, truth) {
        Some((what, span)) => {
            let evidence = match span {
                Some(sp) => format!("{what}: \"{}\"", excerpt(body, sp)),
                None => what,
            };
            Verdict { check: Check::Leak, pass: false, evidence, span }
        }
        None => Verdict { check: Check::Leak, pass: true, evidence: "no trace of the reference".into(), span: None },
    }
}

fn sorted_constants(e: &Expr) -> Vec<f64> {
    let mut c: Vec<f64> = free_constants(&simplify(e)).iter().map(|s| s.value).collect();
    c.sort_by(f64::total_cmp);
    c
}

/// Canonical equality, matching constants within `CONSTANT_RTOL`, and the
/// sampled field within the same tolerance.
pub fn solution_match(stage6: &str, inst: &Instance) -> Verdict {
    let fail = |evidence: String| Verdict { check: Check::SolutionMatch, pass: false, evidence, span: None };
    let Some(text) = extract_solution(stage6) else { return fail("no <solution> block".into()) };
    let e = match parse(&text) {
        Ok(e) => e,
        Err(err) => return fail(format!("`{text}` does not parse: {err}")),
    };
    let Ok(truth) = parse(&inst.solution) else { return fail("reference does not parse".into()) };
    if canonicalize(&e) != canonicalize(&truth) {
        return fail(format!("structure of `{text}` differs from the reference"));
    }
    let (a, b) = (sorted_constants(&e), sorted_constants(&truth));
    if a.len() != b.len() {
        return fail(format!("{} constants, reference has {}", a.len(), b.len()));
    }
    if let Some((x, y)) = a.iter().zip(&b).find(|(x, y)| !close_rel(**x, **y, CONSTANT_RTOL)) {
        return fail(format!("constant {} differs from {}", format_value(*x), format_value(*y)));
    }
    match evaluate_on(&e, &inst.points) {
        Ok(values) => {
            let rel = relative_error(&values, &inst.u);
            if rel <= CONSTANT_RTOL {
                Verdict { check: Check::SolutionMatch, pass: true, evidence: format!("relative field error {rel:.3e}"), span: None }
            } else {
                fail(format!("relative field error {rel:.3e}"))
            }
        }
        Err(err) => fail(format!("evaluation fails: {err}")),
    }
}

pub fn length_verdict(body: &str) -> Verdict {
    let n = word_count(body);
    Verdict {
        check: Check::Length,
        pass: (MIN_WORDS..=MAX_WORDS).contains(&n),
        evidence: format!("{n} words (allowed {MIN_WORDS}-{MAX_WORDS})"),
        span: None,
    }
}

fn methods_in(block: &str) -> usize {
    let mut seen = std::collections::BTreeSet::new();
    for (i, _) in block.match_indices("Method") {
        let digits: String = block[i + 6..].trim_start().chars().take_while(char::is_ascii_digit).collect();
        if !digits.is_empty() {
            seen.insert(digits);
        }
    }
    seen.len()
}

/// Every parameter heads a `Parameter:` block naming at least two
/// distinct `Method N` entries.
pub fn multi_source(stage5: &str, names: &[&str]) -> Verdict {
    let mut blocks: Vec<(String, String)> = Vec::new();
    for line in stage5.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("Parameter:") {
            blocks.push((rest.to_string(), String::new()));
        } else if let Some(b) = blocks.last_mut() {
            b.1.push_str(line);
            b.1.push('\n');
        }
    }
    let mut missing = Vec::new();
    for name in names {
        let ok = blocks.iter().any(|(head, body)| {
            let named = head.split(|c: char| !(c.is_alphanumeric() || c == '_')).any(|w| w == *name);
            named && methods_in(body) >= 2
        });
        if !ok {
            missing.push(*name);
        }
    }
    Verdict {
        check: Check::MultiSource,
        pass: missing.is_empty(),
        evidence: if missing.is_empty() {
            format!("{} parameters with two or more methods", names.len())
        } else {
            format!("fewer than two methods for: {}", missing.join(", "))
        },
        span: None,
    }
}

/// The deterministic final checks, in a fixed order.
pub fn validate_stage7(rec: &CotRecord, inst: &Instance) -> Vec<Verdict> {
    let stage6 = rec.stage(6).unwrap_or("");
    let body = rationale(stage6);
    let names: Vec<&str> = scenario_by_slug(&inst.scenario)
        .map(|s| s.params.iter().map(|p| p.name.as_str()).collect())
        .unwrap_or_default();
    vec![
        leak_verdict(&body, &inst.solution),
        solution_match(stage6, inst),
        length_verdict(&body),
        multi_source(rec.stage(5).unwrap_or(""), &names),
    ]
}

pub fn is_gold(verdicts: &[Verdict]) -> bool {
    [Check::Leak, Check::SolutionMatch, Check::Length, Check::MultiSource]
        .iter()
        .all(|c| verdicts.iter().any(|v| v.check == *c && v.pass))
}

/// Endpoint per stage, falling back to a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEndpoints {
    pub default: EndpointConfig,
    #[serde(default)]
    pub stages: BTreeMap<u8, EndpointConfig>,
    /// Endpoint for the optional model-judged pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<EndpointConfig>,
}

impl StageEndpoints {
    pub fn uniform(cfg: EndpointConfig) -> StageEndpoints {
        StageEndpoints { default: cfg, stages: BTreeMap::new(), judge: None }
    }

    pub fn for_stage(&self, k: u8) -> &EndpointConfig {
        self.stages.get(&k).unwrap_or(&self.default)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunCounts {
    pub queried: usize,
    pub cached: usize,
}

/// Stages 1-6 in order, then the final checks. Writes `record.json`.
pub fn run_instance(
    root: &Path,
    inst: &Instance,
    cot_root: &Path,
    endpoints: &StageEndpoints,
    force: bool,
) -> Result<(CotRecord, RunCounts), CotError> {
    let mut rec = CotRecord::new(inst);
    let mut counts = RunCounts::default();
    for k in 1..=STAGES {
        match run_stage(k, root, inst, &rec, endpoints.for_stage(k), cot_root, force) {
            Ok(out) => {
                if out.cached {
                    counts.cached += 1;
                } else {
                    counts.queried += 1;
                }
                rec.stages.insert(k, out.text);
            }
            Err(CotError::Incomplete { stage, reason }) => {
                rec.incomplete = Some((stage, reason));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if rec.incomplete.is_none() {
        rec.verdicts = validate_stage7(&rec, inst);
        rec.gold = is_gold(&rec.verdicts);
        if let Some(judge) = &endpoints.judge {
            match run_stage(JUDGE_STAGE, root, inst, &rec, judge, cot_root, force) {
                Ok(out) => rec.judge = Some(out.text),
                Err(CotError::Incomplete { reason, .. }) => log::warn!("{}: judge pass failed: {reason}", inst.id),
                Err(e) => return Err(e),
            }
        }
    }
    let dir = cot_root.join(&inst.id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(RECORD_FILE);
    write_atomic(&path, serde_json::to_string_pretty(&rec).expect("record serializes").as_bytes())?;
    Ok((rec, counts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub id: String,
    pub scenario: String,
    pub gold: bool,
    pub failed: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incomplete_stage: Option<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CotSummary {
    pub records: Vec<CotRecord>,
    pub gold: usize,
    pub counts: RunCounts,
    pub manifest: PathBuf,
}

/// Runs every instance, `default.concurrency` at a time, and writes the
/// gold manifest in input order.
pub fn run_cot(
    root: &Path,
    instances: &[Instance],
    cot_root: &Path,
    endpoints: &StageEndpoints,
    force: bool,
) -> Result<CotSummary, CotError> {
    std::fs::create_dir_all(cot_root).map_err(io_err(cot_root))?;
    let results = bounded_map(instances.iter().collect(), endpoints.default.concurrency, |inst| {
        run_instance(root, inst, cot_root, endpoints, force)
    });
    let mut records = Vec::with_capacity(results.len());
    let mut counts = RunCounts::default();
    let mut manifest = String::new();
    for r in results {
        let (rec, c) = r?;
        counts.queried += c.queried;
        counts.cached += c.cached;
        let entry = GoldEntry {
            id: rec.instance.clone(),
            scenario: rec.scenario.clone(),
            gold: rec.gold,
            failed: rec.failed_checks(),
            incomplete_stage: rec.incomplete.as_ref().map(|(s, _)| *s),
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        manifest.push('\n');
        records.push(rec);
    }
    let path = cot_root.join(GOLD_MANIFEST);
    write_atomic(&path, manifest.as_bytes())?;
    let gold = records.iter().filter(|r| r.gold).count();
    Ok(CotSummary { records, gold, counts, manifest: path })
}

/// Deterministic stage outputs that satisfy every final check, for driving
/// the pipeline without a model. With `leak`, the Stage-6 rationale quotes
/// the reference expression.
pub fn scripted_output(k: u8, inst: &Instance, leak: bool) -> String {
    let names: Vec<String> = scenario_by_slug(&inst.scenario)
        .map(|s| s.params.iter().map(|p| p.name.clone()).collect())
        .unwrap_or_default();
    match k {
        1 => "SUMMARY:\n- Pattern: smooth field\n- Symmetry: other\n- Max value: read from colorbar\n- Min value: read from colorbar\n- Gradient type: varying\n- Special features: none\n".into(),
        2 => "NUMERICAL_EVIDENCE:\n- Max: see table\n- Min: see table\n- Gradient magnitude: moderate\n".into(),
        3 => "GTFEATURES:\n- Solution family: analytic\n".into(),
        4 => {
            let mut s = "FEATUREMATCHING:\nConfirmed features (STRONG):\n- overall shape\n\nPARAMETER OBSERVABILITY:\n".to_string();
            for n in &names {
                let _ = writeln!(s, "- {n}: observable from colorbar, gradients");
            }
            s
        }
        5 => {
            let mut s = "PARAMETER ESTIMATES:\n".to_string();
            for n in &names {
                let _ = writeln!(s, "Parameter: {n}\nMethod 1 (Colorbar): read the scale\nMethod 2 (Gradient): read the slopes\nConsistency: good\n");
            }
            s
        }
        6 => {
            let sentence = "Looking across the heatmap and the gradient panels, the level sets bend in a way that fits one smooth family, and the colorbar readings agree with the tabulated samples once the slopes are compared at several nodes.";
            let mut s = String::from("<thinking>\n");
            for n in &names {
                let _ = writeln!(s, "The parameter {n} is fixed by matching the colorbar scale against the gradient magnitudes, and both readings give the same value.");
            }
            while word_count(&s) < 360 {
                s.push_str(sentence);
                s.push('\n');
            }
            if leak {
                let _ = writeln!(s, "Putting it together, u = {}.", inst.solution);
            }
            let _ = write!(s, "</thinking>\n<solution>{}</solution>\n", inst.solution);
            s
        }
        _ => "VERDICT: PASS\n".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::placeholders;

    #[test]
    fn blind_templates_have_no_truth_slot() {
        for t in &TEMPLATES {
            let names = placeholders(t.text);
            assert_eq!(names.iter().any(|n| n == "ground_truth"), t.stage == 3 || t.stage == 6, "stage {}", t.stage);
            if !t.sees_truth {
                assert!(!names.iter().any(|n| n == "ground_truth" || n == "parameters" || n == "rationale"));
            }
        }
    }

    #[test]
    fn tokens() {
        let t: Vec<f64> = numeric_tokens("a=1.5, x2 k .25 3e-2 7.").iter().map(|(v, _)| *v).collect();
        assert_eq!(t, vec![1.5, 0.25, 0.03, 7.0]);
    }

    #[test]
    fn rationale_strips_solution() {
        let r = rationale("<thinking>a b</thinking>\n<solution>x</solution> c <solution>y");
        assert_eq!(word_count(&r), 3);
        assert!(!r.contains('x'));
    }

    #[test]
    fn leak_rules() {
        let truth = "1.7*exp(-0.83*((x - 0.41)**2 + y**2))";
        assert!(find_leak(&format!("so u = {truth}"), truth).is_some());
        assert!(find_leak("u = 1.7 * exp( -0.83*((x - 0.41)**2 + y**2))", truth).is_some());
        assert!(find_leak("A = 1.7, k = 0.83, x0 = 0.41", truth).is_some());
        assert!(find_leak("A = 1.7, then 2.0, k = 0.83, x0 = 0.41", truth).is_none());
        assert!(find_leak("Comparing with GT we see", truth).is_some());
        assert!(find_leak("a Gaussian bump of height 1.7", truth).is_none());
    }

    #[test]
    fn multi_source_markers() {
        let ok = "Parameter: A (amplitude)\nMethod 1 (Colorbar): 1.7\nMethod 2 (Extrema): 1.69\nParameter: k\nMethod 1: a\nMethod 2: b\n";
        assert!(multi_source(ok, &["A", "k"]).pass);
        let short = "Parameter: A\nMethod 1: 1.7\nMethod 1: again\nParameter: k\nMethod 1: a\nMethod 2: b\n";
        let v = multi_source(short, &["A", "k"]);
        assert!(!v.pass && v.evidence.contains('A'));
    }
}
