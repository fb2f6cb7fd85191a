use std::fmt::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::dataset::{instance_dir, FIELD_PNG, GRADIENTS_PNG};
use crate::instance::{Instance, GRID_POINTS};
use crate::template::{fill, TEST_PROMPT};

pub const PREVIEW_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    Vlm,
    LlmOnly,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::Vlm => "vlm",
            QueryMode::LlmOnly => "llm-only",
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<QueryMode, String> {
        match s {
            "vlm" => Ok(QueryMode::Vlm),
            "llm-only" | "llm" => Ok(QueryMode::LlmOnly),
            _ => Err(format!("unknown mode `{s}` (expected vlm or llm-only)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub name: String,
    pub media_type: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl ImageAttachment {
    pub fn png(name: &str, bytes: Vec<u8>) -> ImageAttachment {
        ImageAttachment { name: name.to_string(), media_type: "image/png".into(), bytes }
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, STANDARD.encode(&self.bytes))
    }
}

/// One user turn: text followed by images, tagged for routing and audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub instance: String,
    pub stage: String,
    pub text: String,
    pub images: Vec<ImageAttachment>,
}

impl PromptPayload {
    pub fn text_only(instance: &str, stage: &str, text: String) -> PromptPayload {
        PromptPayload { instance: instance.to_string(), stage: stage.to_string(), text, images: Vec::new() }
    }
}

/// Six significant digits, switching to exponent form outside [1e-3, 1e6).
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-3..1e6).contains(&a) {
        let digits = 5 - a.log10().floor() as i32;
        format!("{:.*}", digits.max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Data-table block: shape, columns, value ranges and either the first
/// rows or every row.
pub fn table_block(columns: &[&str], data: &[&[f64]], all_rows: bool) -> String {
    let mut s = String::new();
    let rows = data.first().map_or(0, |c| c.len());
    let _ = writeln!(s, "Data shape: ({}, {})", rows, columns.len());
    let _ = writeln!(s, "Columns: {}", columns.join(", "));
    let _ = writeln!(s, "Value ranges:");
    for (name, col) in columns.iter().zip(data) {
        let (lo, hi) = range_of(col.iter().copied());
        let _ = writeln!(s, "  {name}: [{}, {}]", format_value(lo), format_value(hi));
    }
    let shown = if all_rows { rows } else { rows.min(PREVIEW_ROWS) };
    if all_rows {
        let _ = writeln!(s, "All {rows} rows:");
    } else {
        let _ = writeln!(s, "First {shown} rows:");
    }
    let header: Vec<String> = columns.iter().map(|c| format!("{c:>13}")).collect();
    let _ = writeln!(s, "{}", header.join(" "));
    for r in 0..shown {
        let cells: Vec<String> = data.iter().map(|c| format!("{:>13}", format_value(c[r]))).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    s
}

pub fn field_table(inst: &Instance, all_rows: bool) -> String {
    let (xs, ys): (Vec<f64>, Vec<f64>) = inst.points.iter().map(|p| (p.x, p.y)).unzip();
    table_block(&["x", "y", "u"], &[&xs, &ys, &inst.u], all_rows)
}

pub fn gradient_table(inst: &Instance, all_rows: bool) -> String {
    let (xs, ys): (Vec<f64>, Vec<f64>) = inst.points.iter().map(|p| (p.x, p.y)).unzip();
    table_block(&["x", "y", "du_dx", "du_dy"], &[&xs, &ys, &inst.du_dx, &inst.du_dy], all_rows)
}

pub fn metadata_block(inst: &Instance) -> String {
    let mut s = String::new();
    for (name, v) in inst.metadata.entries() {
        let _ = writeln!(s, "  {name}: {}", format_value(v));
    }
    s
}

pub(crate) fn read_artifact(root: &Path, id: &str, name: &str) -> Result<Vec<u8>, GatewayError> {
    let path = instance_dir(root, id).join(name);
    std::fs::read(&path).map_err(|source| GatewayError::MissingArtifact { path, source })
}

/// Images of an instance in prompt order: field first, then gradients.
pub fn instance_images(root: &Path, id: &str) -> Result<Vec<ImageAttachment>, GatewayError> {
    Ok(vec![
        ImageAttachment::png(FIELD_PNG, read_artifact(root, id, FIELD_PNG)?),
        ImageAttachment::png(GRADIENTS_PNG, read_artifact(root, id, GRADIENTS_PNG)?),
    ])
}

/// The evaluation prompt for one instance whose artifacts live under `root`.
pub fn build_prompt(root: &Path, inst: &Instance, mode: QueryMode) -> Result<PromptPayload, GatewayError> {
    debug_assert_eq!(inst.u.len(), GRID_POINTS);
    let mut sections = String::new();
    let mut n = 0;
    let mut heading = |s: &mut String, title: &str| {
        n += 1;
        let _ = writeln!(s, "## {n}. {title}\n");
    };
    let images = match mode {
        QueryMode::Vlm => {
            let images = instance_images(root, &inst.id)?;
            heading(&mut sections, "Scalar Field Visualization");
            sections.push_str("The first image is a heatmap of the scalar field u(x,y) with its colorbar.\n\n");
            heading(&mut sections, "Gradient Components Visualization");
            sections.push_str("The second image shows du/dx (left panel) and du/dy (right panel), each with its own colorbar.\n\n");
            heading(&mut sections, "Field Summary");
            sections.push_str(&metadata_block(inst));
            sections.push('\n');
            images
        }
        QueryMode::LlmOnly => {
            read_artifact(root, &inst.id, crate::dataset::FIELD_CSV)?;
            Vec::new()
        }
    };
    let all_rows = mode == QueryMode::LlmOnly;
    heading(&mut sections, "Field Data (CSV)");
    sections.push_str(&field_table(inst, all_rows));
    sections.push('\n');
    heading(&mut sections, "Gradient Data (CSV)");
    sections.push_str(&gradient_table(inst, all_rows));
    sections.push('\n');

    let m = &inst.metadata;
    let (x0, x1, y0, y1) = (format_value(m.x_min), format_value(m.x_max), format_value(m.y_min), format_value(m.y_max));
    let text = fill(
        TEST_PROMPT,
        &[("input_sections", &sections), ("x_min", &x0), ("x_max", &x1), ("y_min", &y0), ("y_max", &y1)],
    );
    Ok(PromptPayload { instance: inst.id.clone(), stage: "test".into(), text, images })
}
