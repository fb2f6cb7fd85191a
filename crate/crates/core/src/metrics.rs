//! Answer extraction and the character, structure, numeric, and overall
//! scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::expr::{canonicalize, parse, Expr};
use crate::instance::evaluate_on;
use crate::numeric::EvalPoint;

pub const REL_ERR_EPS: f64 = 1e-8;
pub const WEIGHTS: (f64, f64, f64) = (0.2, 0.3, 0.5);
const OPEN: &str = "<solution>";
const CLOSE: &str = "</solution>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    NoSolutionTag,
    ParseFailure,
    EvalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub raw: String,
    pub extracted: Option<String>,
    pub expr: Option<Expr>,
    pub validity: Validity,
}

fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let Some(body) = rest.strip_suffix("```") else { return t };
    // drop an info string such as `python` on the opening fence line
    match body.split_once('\n') {
        Some((info, tail)) if !info.trim().contains(' ') => tail.trim(),
        _ => body.trim(),
    }
}

fn collapse_newlines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending = String::new();
    let mut newline = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending.push(c);
            newline |= c == '\n' || c == '\r';
        } else {
            if newline {
                out.push(' ');
            } else {
                out.push_str(&pending);
            }
            pending.clear();
            newline = false;
            out.push(c);
        }
    }
    out
}

/// Body of the last `<solution>...</solution>` pair, normalised, or `None`.
pub fn extract_solution(raw: &str) -> Option<String> {
    let close = raw.rfind(CLOSE)?;
    let open = raw[..close].rfind(OPEN)?;
    let body = &raw[open + OPEN.len()..close];
    Some(collapse_newlines(strip_fences(body)).trim().to_string())
}

/// Extraction followed by parsing.
pub fn read_prediction(raw: &str) -> Prediction {
    let Some(text) = extract_solution(raw) else {
        return Prediction { raw: raw.to_string(), extracted: None, expr: None, validity: Validity::NoSolutionTag };
    };
    match parse(&text) {
        Ok(e) => Prediction { raw: raw.to_string(), extracted: Some(text), expr: Some(e), validity: Validity::Valid },
        Err(_) => Prediction { raw: raw.to_string(), extracted: Some(text), expr: None, validity: Validity::ParseFailure },
    }
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn strip_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

pub fn char_score(s: &str, s_star: &str) -> f64 {
    let (a, b) = (strip_whitespace(s), strip_whitespace(s_star));
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

pub fn struct_score(e: &Expr, e_star: &Expr) -> f64 {
    if canonicalize(e) == canonicalize(e_star) {
        1.0
    } else {
        0.0
    }
}

/// `sqrt(sum |u_hat - u*|^2 / (sum |u*|^2 + eps))`.
pub fn relative_error(predicted: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = predicted.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / (den + REL_ERR_EPS)).sqrt()
}

/// `(S_N, RelErr)`, or `None` when `e` fails to evaluate anywhere on `points`.
pub fn num_score(e: &Expr, points: &[EvalPoint], truth: &[f64]) -> Option<(f64, f64)> {
    let values = evaluate_on(e, points).ok()?;
    let rel = relative_error(&values, truth);
    Some(((1.0 - rel).max(0.0), rel))
}

pub fn overall_score(s_c: f64, s_s: f64, s_n: f64) -> f64 {
    if s_c <= 0.0 || s_s <= 0.0 || s_n <= 0.0 {
        return 0.0;
    }
    s_c.powf(WEIGHTS.0) * s_s.powf(WEIGHTS.1) * s_n.powf(WEIGHTS.2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub validity: Validity,
    pub s_c: f64,
    pub s_s: f64,
    pub s_n: f64,
    pub overall: f64,
    /// Raw relative error; absent when no numeric comparison happened.
    pub rel_err: Option<f64>,
}

impl ScoreReport {
    pub fn invalid(validity: Validity) -> ScoreReport {
        ScoreReport { validity, s_c: 0.0, s_s: 0.0, s_n: 0.0, overall: 0.0, rel_err: None }
    }
}

/// Ground truth for scoring: printed form, expression, and sampled values.
pub struct Truth<'a> {
    pub printed: &'a str,
    pub expr: &'a Expr,
    pub points: &'a [EvalPoint],
    pub values: &'a [f64],
}

pub fn score_expr(extracted: &str, e: &Expr, truth: &Truth) -> ScoreReport {
    let Some((s_n, rel)) = num_score(e, truth.points, truth.values) else {
        return ScoreReport::invalid(Validity::EvalFailure);
    };
    let s_c = char_score(extracted, truth.printed);
    let s_s = struct_score(e, truth.expr);
    ScoreReport { validity: Validity::Valid, s_c, s_s, s_n, overall: overall_score(s_c, s_s, s_n), rel_err: Some(rel) }
}

pub fn score_prediction(p: &Prediction, truth: &Truth) -> ScoreReport {
    match (&p.extracted, &p.expr) {
        (Some(text), Some(e)) => score_expr(text, e, truth),
        _ => ScoreReport::invalid(p.validity),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub s_c: f64,
    pub s_s: f64,
    pub s_n: f64,
    pub overall: f64,
}

impl Means {
    fn of<'a>(reports: impl Iterator<Item = &'a ScoreReport>) -> Option<Means> {
        let mut m = Means::default();
        let mut n = 0usize;
        for r in reports {
            m.s_c += r.s_c;
            m.s_s += r.s_s;
            m.s_n += r.s_n;
            m.overall += r.overall;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let k = n as f64;
        Some(Means { s_c: m.s_c / k, s_s: m.s_s / k, s_n: m.s_n / k, overall: m.overall / k })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub valid: usize,
    pub success_rate: f64,
    /// Means over every instance, invalid ones counting as zero.
    pub means: Means,
    /// Means over valid instances only.
    pub success_conditional: Option<Means>,
    pub validity_counts: BTreeMap<Validity, usize>,
}

pub fn summarize<'a>(reports: impl Iterator<Item = &'a ScoreReport> + Clone) -> Summary {
    let count = reports.clone().count();
    let valid = reports.clone().filter(|r| r.validity == Validity::Valid).count();
    let mut validity_counts = BTreeMap::new();
    for r in reports.clone() {
        *validity_counts.entry(r.validity).or_insert(0) += 1;
    }
    Summary {
        count,
        valid,
        success_rate: if count == 0 { 0.0 } else { valid as f64 / count as f64 },
        means: Means::of(reports.clone()).unwrap_or_default(),
        success_conditional: Means::of(reports.filter(|r| r.validity == Validity::Valid)),
        validity_counts,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub corpus: Summary,
    pub per_scenario: BTreeMap<String, Summary>,
}

/// Corpus and per-scenario summaries of `(scenario, report)` pairs.
pub fn aggregate(records: &[(String, ScoreReport)]) -> Aggregate {
    let mut groups: BTreeMap<String, Vec<&ScoreReport>> = BTreeMap::new();
    for (s, r) in records {
        groups.entry(s.clone()).or_default().push(r);
    }
    Aggregate {
        corpus: summarize(records.iter().map(|(_, r)| r)),
        per_scenario: groups.into_iter().map(|(s, rs)| (s, summarize(rs.iter().copied()))).collect(),
    }
}
