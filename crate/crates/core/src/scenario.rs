//! The registry of 30 parametric solution families.

use std::fmt;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{format_number, parse, simplify, Expr, ParseError};
use crate::numeric::{eval, EvalPoint};

const REGISTRY: &str = include_str!("../assets/scenarios.jsonl");
pub const REGISTRY_FORMAT: &str = "visa-scenarios";
pub const REGISTRY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Electrostatics,
    #[serde(rename = "Heat Transfer")]
    HeatTransfer,
    #[serde(rename = "Fluid Dynamics")]
    FluidDynamics,
    #[serde(rename = "Quantum Mechanics")]
    QuantumMechanics,
    #[serde(rename = "Other PDEs")]
    OtherPdes,
    #[serde(rename = "Screened Potentials")]
    ScreenedPotentials,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Electrostatics => "Electrostatics",
            Category::HeatTransfer => "Heat Transfer",
            Category::FluidDynamics => "Fluid Dynamics",
            Category::QuantumMechanics => "Quantum Mechanics",
            Category::OtherPdes => "Other PDEs",
            Category::ScreenedPotentials => "Screened Potentials",
        };
        f.write_str(s)
    }
}

/// Axis-aligned rectangle, serialized as `[x_min, x_max, y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for Domain {
    fn from(v: [f64; 4]) -> Domain {
        Domain { x_min: v[0], x_max: v[1], y_min: v[2], y_max: v[3] }
    }
}

impl From<Domain> for [f64; 4] {
    fn from(d: Domain) -> [f64; 4] {
        [d.x_min, d.x_max, d.y_min, d.y_max]
    }
}

impl Domain {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn min_extent(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Cell-centred `n x n` grid, row-major with x fastest.
    pub fn cell_centered_grid(&self, n: usize) -> Vec<EvalPoint> {
        let dx = self.width() / n as f64;
        let dy = self.height() / n as f64;
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                out.push(EvalPoint::new(
                    self.x_min + (i as f64 + 0.5) * dx,
                    self.y_min + (j as f64 + 0.5) * dy,
                ));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Continuous,
    Integer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub kind: ParamKind,
    /// Decimal places kept when sampling continuous values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimals: Option<u32>,
}

impl ParamSpec {
    pub fn decimals(&self) -> u32 {
        self.decimals.unwrap_or(2)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi && (self.kind == ParamKind::Continuous || v.fract() == 0.0)
    }
}

/// `cxx*u_xx + cyy*u_yy + c0*u = source`, each coefficient a template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub cxx: String,
    pub cyy: String,
    pub c0: String,
    pub source: String,
    /// Recorded upper bound on `|residual|_2 / (h^2 |u|_2)` for the
    /// second-order five-point stencil on a 101 x 101 grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub slug: String,
    pub name: String,
    pub category: Category,
    pub operator: String,
    pub singular: bool,
    /// Expression text with `{name}` placeholders for each parameter.
    pub template: String,
    pub params: Vec<ParamSpec>,
    pub domain: Domain,
    /// Singular points as `[x, y]` templates.
    #[serde(default)]
    pub singularities: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualSpec>,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub scenario: String,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("registry line {line}: {message}")]
    Registry { line: usize, message: String },
    #[error("scenario `{0}` not found")]
    Unknown(String),
    #[error("{scenario}: expected {expected} parameters, got {got}")]
    Arity { scenario: String, expected: usize, got: usize },
    #[error("{scenario}: parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { scenario: String, name: String, value: f64, lo: f64, hi: f64 },
    #[error("{scenario}: template does not parse: {source}")]
    Template { scenario: String, source: ParseError },
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Parses registry text: a header line followed by one scenario per line.
pub fn parse_registry(text: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(ScenarioError::Registry { line: 1, message: "empty".into() })?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| ScenarioError::Registry { line: 1, message: e.to_string() })?;
    if header.format != REGISTRY_FORMAT || header.version != REGISTRY_VERSION {
        return Err(ScenarioError::Registry {
            line: 1,
            message: format!("unsupported registry {} v{}", header.format, header.version),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let s: Scenario = serde_json::from_str(line)
            .map_err(|e| ScenarioError::Registry { line: i + 1, message: e.to_string() })?;
        out.push(s);
    }
    Ok(out)
}

/// The built-in registry, in file order.
pub fn list_scenarios() -> &'static [Scenario] {
    static CELL: OnceLock<Vec<Scenario>> = OnceLock::new();
    CELL.get_or_init(|| parse_registry(REGISTRY).expect("built-in scenario registry is valid"))
}

pub fn scenario_by_slug(slug: &str) -> Result<&'static Scenario, ScenarioError> {
    list_scenarios().iter().find(|s| s.slug == slug).ok_or_else(|| ScenarioError::Unknown(slug.to_string()))
}

/// Replaces `{name}` placeholders with parenthesised literals.
pub fn substitute(template: &str, params: &[ParamSpec], values: &[f64]) -> String {
    let mut out = template.to_string();
    for (spec, v) in params.iter().zip(values) {
        out = out.replace(&format!("{{{}}}", spec.name), &format!("({})", format_number(*v)));
    }
    out
}

fn round_to(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (v * scale).round() / scale
}

impl ParamSpec {
    /// Rounds to the parameter's decimals; 0 and +-1 move one step toward
    /// the middle of the interval. Integers pass through.
    pub fn settle(&self, v: f64) -> f64 {
        if self.kind == ParamKind::Integer {
            return v;
        }
        let d = self.decimals();
        let v = round_to(v, d).clamp(self.lo, self.hi);
        if v != 0.0 && v.abs() != 1.0 {
            return v;
        }
        let step = 10f64.powi(-(d as i32));
        let mid = 0.5 * (self.lo + self.hi);
        round_to(if mid >= v { v + step } else { v - step }, d)
    }
}

impl Scenario {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Uniform draw per component; continuous values are rounded to the
    /// parameter's decimals and moved one step inward if they land on 0 or
    /// +-1.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let values = self
            .params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Integer => rng.random_range(p.lo as i64..=p.hi as i64) as f64,
                ParamKind::Continuous => p.settle(rng.random_range(p.lo..=p.hi)),
            })
            .collect();
        ParamVector { scenario: self.slug.clone(), values }
    }

    /// Centre of the parameter box, integers rounded down.
    pub fn center_params(&self) -> ParamVector {
        let values = self
            .params
            .iter()
            .map(|p| {
                let mid = 0.5 * (p.lo + p.hi);
                match p.kind {
                    ParamKind::Integer => mid.floor(),
                    ParamKind::Continuous => p.settle(mid),
                }
            })
            .collect();
        ParamVector { scenario: self.slug.clone(), values }
    }

    pub fn validate(&self, alpha: &ParamVector) -> Result<(), ScenarioError> {
        if alpha.values.len() != self.params.len() {
            return Err(ScenarioError::Arity {
                scenario: self.slug.clone(),
                expected: self.params.len(),
                got: alpha.values.len(),
            });
        }
        for (p, v) in self.params.iter().zip(&alpha.values) {
            if !p.contains(*v) {
                return Err(ScenarioError::OutOfRange {
                    scenario: self.slug.clone(),
                    name: p.name.clone(),
                    value: *v,
                    lo: p.lo,
                    hi: p.hi,
                });
            }
        }
        Ok(())
    }

    fn instantiate_text(&self, template: &str, alpha: &ParamVector) -> Result<Expr, ScenarioError> {
        let text = substitute(template, &self.params, &alpha.values);
        let e = parse(&text).map_err(|source| ScenarioError::Template { scenario: self.slug.clone(), source })?;
        Ok(simplify(&e))
    }

    /// Ground-truth expression for `alpha`.
    pub fn instantiate(&self, alpha: &ParamVector) -> Result<Expr, ScenarioError> {
        self.validate(alpha)?;
        self.instantiate_text(&self.template, alpha)
    }

    /// Singular points for `alpha`.
    pub fn singular_points(&self, alpha: &ParamVector) -> Result<Vec<(f64, f64)>, ScenarioError> {
        let origin = EvalPoint::new(0.0, 0.0);
        self.singularities
            .iter()
            .map(|[sx, sy]| {
                let x = self.instantiate_text(sx, alpha)?;
                let y = self.instantiate_text(sy, alpha)?;
                let value = |e: &Expr| eval(e, origin).expect("singularity coordinates are constant");
                Ok((value(&x), value(&y)))
            })
            .collect()
    }

    /// Residual operator pieces `(cxx, cyy, c0, source)` for `alpha`.
    pub fn residual_terms(&self, alpha: &ParamVector) -> Result<Option<[Expr; 4]>, ScenarioError> {
        let Some(r) = &self.residual else { return Ok(None) };
        Ok(Some([
            self.instantiate_text(&r.cxx, alpha)?,
            self.instantiate_text(&r.cyy, alpha)?,
            self.instantiate_text(&r.c0, alpha)?,
            self.instantiate_text(&r.source, alpha)?,
        ]))
    }

    /// Parameter vectors at every corner of the box plus the centre, settled
    /// like sampled values.
    pub fn corner_params(&self) -> Vec<ParamVector> {
        let d = self.params.len();
        let mut out = Vec::with_capacity((1 << d) + 1);
        for mask in 0..(1u32 << d) {
            let values = self
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| p.settle(if mask & (1 << i) == 0 { p.lo } else { p.hi }))
                .collect();
            out.push(ParamVector { scenario: self.slug.clone(), values });
        }
        out.push(self.center_params());
        out
    }
}
