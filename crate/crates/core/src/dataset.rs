//! On-disk dataset layout, manifest, and bulk generation.
//!
//! ```text
//! root/
//!   dataset.json
//!   manifest.jsonl
//!   instances/{id}/field.csv gradient.csv meta.json features.json field.png gradients.png
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::StatFeatures;
use crate::instance::{generate_instance, instance_id, GenerateError, Instance, Metadata, Split, GRID_POINTS};
use crate::numeric::EvalPoint;
use crate::render::{render_instance, PanelRanges, RenderError};
use crate::scenario::{list_scenarios, Domain, ParamVector};

pub const DATASET_FORMAT: &str = "visa-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_EVAL_PER_SCENARIO: usize = 5;
pub const DEFAULT_GOLD_PER_SCENARIO: usize = 50;
pub const FIELD_CSV: &str = "field.csv";
pub const GRADIENT_CSV: &str = "gradient.csv";
pub const META_JSON: &str = "meta.json";
pub const FEATURES_JSON: &str = "features.json";
pub const FIELD_PNG: &str = "field.png";
pub const GRADIENTS_PNG: &str = "gradients.png";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("{id}: {source}")]
    Render { id: String, source: RenderError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub per_scenario: usize,
    pub seed: u64,
    pub eval_per_scenario: usize,
    pub gold_per_scenario: usize,
    pub render: bool,
}

impl DatasetConfig {
    pub fn new(per_scenario: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            per_scenario,
            seed,
            eval_per_scenario: DEFAULT_EVAL_PER_SCENARIO,
            gold_per_scenario: DEFAULT_GOLD_PER_SCENARIO,
            render: true,
        }
    }

    /// Eval and gold-cot counts after clamping to the scenario size.
    pub fn split_counts(&self) -> (usize, usize) {
        let eval = self.eval_per_scenario.min(self.per_scenario);
        let gold = self.gold_per_scenario.min(self.per_scenario - eval);
        (eval, gold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    pub count: usize,
}

/// The per-instance `meta.json` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: String,
    pub scenario: String,
    pub seed: u64,
    pub split: Split,
    pub param_names: Vec<String>,
    pub params: ParamVector,
    pub solution: String,
    pub du_dx: String,
    pub du_dy: String,
    pub domain: Domain,
    pub metadata: Metadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_ranges: Option<PanelRanges>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scenario: String,
    pub split: Split,
    /// Instance directory relative to the dataset root.
    pub dir: String,
    /// `(file name, sha256)` in a fixed order.
    pub files: Vec<(String, String)>,
    /// sha256 over the file hashes.
    pub hash: String,
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn instance_seed(dataset_seed: u64, scenario_index: usize, k: usize) -> u64 {
    splitmix64(splitmix64(dataset_seed ^ splitmix64(scenario_index as u64)) ^ k as u64)
}

/// Split labels for one scenario, stratified by a seeded shuffle.
pub fn assign_splits(cfg: &DatasetConfig, scenario_index: usize) -> Vec<Split> {
    let (eval, gold) = cfg.split_counts();
    let mut order: Vec<usize> = (0..cfg.per_scenario).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5711_7000 ^ scenario_index as u64));
    order.shuffle(&mut rng);
    let mut out = vec![Split::TrainPool; cfg.per_scenario];
    for (rank, &k) in order.iter().enumerate() {
        if rank < eval {
            out[k] = Split::Eval;
        } else if rank < eval + gold {
            out[k] = Split::GoldCot;
        }
    }
    out
}

pub fn field_csv(inst: &Instance) -> String {
    let mut s = String::from("x,y,u\n");
    for (p, u) in inst.points.iter().zip(&inst.u) {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", p.x, p.y, u);
    }
    s
}

pub fn gradient_csv(inst: &Instance) -> String {
    let mut s = String::from("x,y,du_dx,du_dy\n");
    for ((p, a), b) in inst.points.iter().zip(&inst.du_dx).zip(&inst.du_dy) {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.y, a, b);
    }
    s
}

fn parse_csv(path: &Path, header: &str, width: usize) -> Result<Vec<Vec<f64>>, DatasetError> {
    let text = read_to_string(path)?;
    let bad = |message: String| DatasetError::Format { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(bad(format!("expected header `{header}`")));
    }
    let rows: Vec<Vec<f64>> = lines
        .enumerate()
        .map(|(i, l)| {
            let row: Result<Vec<f64>, _> = l.split(',').map(str::parse::<f64>).collect();
            match row {
                Ok(r) if r.len() == width => Ok(r),
                _ => Err(bad(format!("malformed row {}", i + 2))),
            }
        })
        .collect::<Result<_, _>>()?;
    if rows.len() != GRID_POINTS {
        return Err(bad(format!("expected {GRID_POINTS} rows, found {}", rows.len())));
    }
    Ok(rows)
}

pub fn instance_dir(root: &Path, id: &str) -> PathBuf {
    root.join("instances").join(id)
}

fn meta_of(inst: &Instance, ranges: Option<PanelRanges>) -> InstanceMeta {
    let names = crate::scenario::scenario_by_slug(&inst.scenario)
        .map(|s| s.params.iter().map(|p| p.name.clone()).collect())
        .unwrap_or_default();
    InstanceMeta {
        id: inst.id.clone(),
        scenario: inst.scenario.clone(),
        seed: inst.seed,
        split: inst.split,
        param_names: names,
        params: inst.params.clone(),
        solution: inst.solution.clone(),
        du_dx: inst.du_dx_expr.clone(),
        du_dy: inst.du_dy_expr.clone(),
        domain: inst.domain,
        metadata: inst.metadata.clone(),
        render_ranges: ranges,
    }
}

/// Writes the data files of one instance and, if requested, its images.
pub fn write_instance(root: &Path, inst: &Instance, render: bool) -> Result<(), DatasetError> {
    let dir = instance_dir(root, &inst.id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write(&dir.join(FIELD_CSV), field_csv(inst).as_bytes())?;
    write(&dir.join(GRADIENT_CSV), gradient_csv(inst).as_bytes())?;
    write(&dir.join(FEATURES_JSON), to_json(&inst.features).as_bytes())?;
    let ranges = if render { Some(write_images(&dir, inst)?) } else { None };
    write(&dir.join(META_JSON), to_json(&meta_of(inst, ranges)).as_bytes())
}

fn write_images(dir: &Path, inst: &Instance) -> Result<PanelRanges, DatasetError> {
    let pair = render_instance(inst).map_err(|source| DatasetError::Render { id: inst.id.clone(), source })?;
    write(&dir.join(FIELD_PNG), &pair.field_png)?;
    write(&dir.join(GRADIENTS_PNG), &pair.gradients_png)?;
    Ok(pair.ranges)
}

/// Reads an instance back from its directory.
pub fn load_instance(root: &Path, id: &str) -> Result<Instance, DatasetError> {
    let dir = instance_dir(root, id);
    let meta: InstanceMeta = read_json(&dir.join(META_JSON))?;
    let features: StatFeatures = read_json(&dir.join(FEATURES_JSON))?;
    let field = parse_csv(&dir.join(FIELD_CSV), "x,y,u", 3)?;
    let grad = parse_csv(&dir.join(GRADIENT_CSV), "x,y,du_dx,du_dy", 4)?;
    Ok(Instance {
        id: meta.id,
        scenario: meta.scenario,
        seed: meta.seed,
        params: meta.params,
        solution: meta.solution,
        du_dx_expr: meta.du_dx,
        du_dy_expr: meta.du_dy,
        domain: meta.domain,
        points: field.iter().map(|r| EvalPoint::new(r[0], r[1])).collect(),
        u: field.iter().map(|r| r[2]).collect(),
        du_dx: grad.iter().map(|r| r[2]).collect(),
        du_dy: grad.iter().map(|r| r[3]).collect(),
        metadata: meta.metadata,
        features,
        split: meta.split,
    })
}

pub fn load_meta(root: &Path, id: &str) -> Result<InstanceMeta, DatasetError> {
    read_json(&instance_dir(root, id).join(META_JSON))
}

fn manifest_entry(root: &Path, id: &str, scenario: &str, split: Split) -> Result<ManifestEntry, DatasetError> {
    let dir = instance_dir(root, id);
    let mut files = Vec::new();
    let mut all = Sha256::new();
    for name in [FIELD_CSV, GRADIENT_CSV, META_JSON, FEATURES_JSON, FIELD_PNG, GRADIENTS_PNG] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let h = sha256_hex(&bytes);
        all.update(name.as_bytes());
        all.update(h.as_bytes());
        files.push((name.to_string(), h));
    }
    Ok(ManifestEntry {
        id: id.to_string(),
        scenario: scenario.to_string(),
        split,
        dir: format!("instances/{id}"),
        files,
        hash: hex::encode(all.finalize()),
    })
}

/// Rewrites `manifest.jsonl` from the files on disk, in the given order, and
/// returns the manifest's sha256.
pub fn write_manifest(root: &Path, items: &[(String, String, Split)]) -> Result<String, DatasetError> {
    let entries: Vec<ManifestEntry> = items
        .par_iter()
        .map(|(id, scenario, split)| manifest_entry(root, id, scenario, *split))
        .collect::<Result<_, _>>()?;
    let mut text = String::new();
    for e in &entries {
        text.push_str(&serde_json::to_string(e).expect("serializable"));
        text.push('\n');
    }
    write(&root.join("manifest.jsonl"), text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn load_manifest(root: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let path = root.join("manifest.jsonl");
    read_to_string(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| DatasetError::Json { path: path.clone(), source }))
        .collect()
}

pub fn load_header(root: &Path) -> Result<DatasetHeader, DatasetError> {
    read_json(&root.join("dataset.json"))
}

pub fn manifest_hash(root: &Path) -> Result<String, DatasetError> {
    let path = root.join("manifest.jsonl");
    Ok(sha256_hex(&fs::read(&path).map_err(io_err(&path))?))
}

#[derive(Clone, Debug)]
pub struct GenerateSummary {
    pub count: usize,
    pub manifest_hash: String,
    pub manifest_path: PathBuf,
}

/// Generates every instance of every scenario into `root`.
pub fn generate_dataset(root: &Path, cfg: &DatasetConfig) -> Result<GenerateSummary, DatasetError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let scenarios = list_scenarios();
    let mut jobs = Vec::with_capacity(scenarios.len() * cfg.per_scenario);
    for (si, s) in scenarios.iter().enumerate() {
        let splits = assign_splits(cfg, si);
        for (k, split) in splits.into_iter().enumerate() {
            jobs.push((si, k, split, instance_id(&s.slug, k)));
        }
    }
    jobs.par_iter().try_for_each(|(si, k, split, id)| {
        let s = &scenarios[*si];
        let inst = generate_instance(s, instance_seed(cfg.seed, *si, *k), id.clone(), *split)?;
        write_instance(root, &inst, cfg.render)
    })?;
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        config: cfg.clone(),
        count: jobs.len(),
    };
    write(&root.join("dataset.json"), to_json(&header).as_bytes())?;
    let items: Vec<(String, String, Split)> =
        jobs.iter().map(|(si, _, split, id)| (id.clone(), scenarios[*si].slug.clone(), *split)).collect();
    let manifest_hash = write_manifest(root, &items)?;
    Ok(GenerateSummary { count: jobs.len(), manifest_hash, manifest_path: root.join("manifest.jsonl") })
}

/// Re-renders images for every instance already on disk.
pub fn render_dataset(root: &Path) -> Result<String, DatasetError> {
    let entries = load_manifest(root)?;
    entries.par_iter().try_for_each(|e| {
        let inst = load_instance(root, &e.id)?;
        let dir = instance_dir(root, &e.id);
        let ranges = write_images(&dir, &inst)?;
        write(&dir.join(META_JSON), to_json(&meta_of(&inst, Some(ranges))).as_bytes())
    })?;
    let items: Vec<(String, String, Split)> =
        entries.into_iter().map(|e| (e.id, e.scenario, e.split)).collect();
    write_manifest(root, &items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_clamp() {
        assert_eq!(DatasetConfig::new(500, 0).split_counts(), (5, 50));
        assert_eq!(DatasetConfig::new(2, 0).split_counts(), (2, 0));
        assert_eq!(DatasetConfig::new(20, 0).split_counts(), (5, 15));
    }

    #[test]
    fn splits_are_stratified() {
        let cfg = DatasetConfig::new(60, 9);
        let s = assign_splits(&cfg, 3);
        assert_eq!(s.iter().filter(|x| **x == Split::Eval).count(), 5);
        assert_eq!(s.iter().filter(|x| **x == Split::GoldCot).count(), 50);
        assert_eq!(s, assign_splits(&cfg, 3));
    }

    #[test]
    fn seeds_differ() {
        let a = instance_seed(1, 0, 0);
        assert_ne!(a, instance_seed(1, 0, 1));
        assert_ne!(a, instance_seed(1, 1, 0));
        assert_ne!(a, instance_seed(2, 0, 0));
    }
}
