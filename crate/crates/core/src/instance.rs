//! Solution-first instance synthesis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{differentiate, parse, print, Expr, ParseError, Variable};
use crate::features::{compute_stat_features, mean, std_dev, StatFeatures};
use crate::numeric::{EvalError, EvalPoint, Program};
use crate::scenario::{Domain, ParamVector, Scenario, ScenarioError};

pub const GRID_N: usize = 20;
pub const GRID_POINTS: usize = GRID_N * GRID_N;
/// Singular neighbourhood radius as a fraction of the smaller domain extent.
pub const MASK_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    TrainPool,
    GoldCot,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainPool => "train-pool",
            Split::GoldCot => "gold-cot",
            Split::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Split, String> {
        match s {
            "train-pool" => Ok(Split::TrainPool),
            "gold-cot" => Ok(Split::GoldCot),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub u_mean: f64,
    pub u_std: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Metadata {
    pub fn from_grid(domain: Domain, u: &[f64]) -> Metadata {
        let (u_min, u_max) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        Metadata {
            x_min: domain.x_min,
            x_max: domain.x_max,
            y_min: domain.y_min,
            y_max: domain.y_max,
            u_mean: mean(u),
            u_std: std_dev(u),
            u_min,
            u_max,
        }
    }

    /// The scalars in declaration order, paired with their names.
    pub fn entries(&self) -> [(&'static str, f64); 8] {
        [
            ("x_min", self.x_min),
            ("x_max", self.x_max),
            ("y_min", self.y_min),
            ("y_max", self.y_max),
            ("u_mean", self.u_mean),
            ("u_std", self.u_std),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub scenario: String,
    pub seed: u64,
    pub params: ParamVector,
    /// Printed ground truth.
    pub solution: String,
    pub du_dx_expr: String,
    pub du_dy_expr: String,
    pub domain: Domain,
    /// Evaluation nodes after singularity masking, row-major, x fastest.
    pub points: Vec<EvalPoint>,
    pub u: Vec<f64>,
    pub du_dx: Vec<f64>,
    pub du_dy: Vec<f64>,
    pub metadata: Metadata,
    pub features: StatFeatures,
    pub split: Split,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{scenario} (seed {seed}): {which} fails: {source}")]
    Eval { scenario: String, seed: u64, which: &'static str, source: EvalError },
    #[error("instance {id}: stored expression does not parse: {source}")]
    Parse { id: String, source: ParseError },
}

impl Instance {
    pub fn solution_expr(&self) -> Result<Expr, GenerateError> {
        parse(&self.solution).map_err(|source| GenerateError::Parse { id: self.id.clone(), source })
    }

    pub fn gradient_exprs(&self) -> Result<(Expr, Expr), GenerateError> {
        let p = |s: &str| parse(s).map_err(|source| GenerateError::Parse { id: self.id.clone(), source });
        Ok((p(&self.du_dx_expr)?, p(&self.du_dy_expr)?))
    }
}

/// Moves a node lying within `radius` of any singularity to the point of the
/// circle of that radius on the +x side, at the same `y`.
pub fn mask_point(p: EvalPoint, singularities: &[(f64, f64)], radius: f64) -> EvalPoint {
    let mut q = p;
    // with several singularities a move can land near another one
    for _ in 0..=singularities.len() {
        let Some(&(sx, sy)) =
            singularities.iter().find(|&&(sx, sy)| (q.x - sx).hypot(q.y - sy) < radius)
        else {
            break;
        };
        let dy = q.y - sy;
        q = EvalPoint::new(sx + (radius * radius - dy * dy).max(0.0).sqrt(), q.y);
    }
    q
}

/// The 20 x 20 cell-centred grid over the scenario domain with masking
/// applied.
pub fn evaluation_points(s: &Scenario, alpha: &ParamVector) -> Result<Vec<EvalPoint>, ScenarioError> {
    let sing = s.singular_points(alpha)?;
    let radius = MASK_FRACTION * s.domain.min_extent();
    Ok(s.domain.cell_centered_grid(GRID_N).into_iter().map(|p| mask_point(p, &sing, radius)).collect())
}

pub fn evaluate_on(e: &Expr, points: &[EvalPoint]) -> Result<Vec<f64>, EvalError> {
    let program = Program::compile(e);
    let mut stack = Vec::new();
    points
        .iter()
        .map(|p| {
            program
                .run(&[], p.x, p.y, &mut stack)
                .map_err(|_| crate::numeric::eval(e, *p).expect_err("compiled and tree evaluation disagree"))
        })
        .collect()
}

pub fn instance_id(slug: &str, k: usize) -> String {
    format!("{slug}-{k:04}")
}

/// Deterministic in `(s, seed)`; the id and split are caller-supplied labels.
pub fn generate_instance(s: &Scenario, seed: u64, id: String, split: Split) -> Result<Instance, GenerateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = s.sample_params(&mut rng);
    let e = s.instantiate(&params)?;
    let dx = differentiate(&e, Variable::X);
    let dy = differentiate(&e, Variable::Y);
    let points = evaluation_points(s, &params)?;
    let run = |which: &'static str, expr: &Expr| {
        evaluate_on(expr, &points).map_err(|source| GenerateError::Eval {
            scenario: s.slug.clone(),
            seed,
            which,
            source,
        })
    };
    let u = run("u", &e)?;
    let du_dx = run("du/dx", &dx)?;
    let du_dy = run("du/dy", &dy)?;
    let metadata = Metadata::from_grid(s.domain, &u);
    let features = compute_stat_features(GRID_N, s.domain, &u, &du_dx, &du_dy);
    Ok(Instance {
        id,
        scenario: s.slug.clone(),
        seed,
        params,
        solution: print(&e),
        du_dx_expr: print(&dx),
        du_dy_expr: print(&dy),
        domain: s.domain,
        points,
        u,
        du_dx,
        du_dy,
        metadata,
        features,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::scenario_by_slug;

    #[test]
    fn masking_moves_to_circle() {
        let q = mask_point(EvalPoint::new(0.1, 0.2), &[(0.0, 0.0)], 0.5);
        assert!((q.x.hypot(q.y) - 0.5).abs() < 1e-15);
        assert_eq!(q.y, 0.2);
        assert!(q.x > 0.0);
        let far = EvalPoint::new(3.0, 0.0);
        assert_eq!(mask_point(far, &[(0.0, 0.0)], 0.5), far);
    }

    #[test]
    fn deterministic() {
        let s = scenario_by_slug("bessel_scattering_state").unwrap();
        let a = generate_instance(s, 42, "a".into(), Split::Eval).unwrap();
        let b = generate_instance(s, 42, "a".into(), Split::Eval).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.u.len(), GRID_POINTS);
    }

    #[test]
    fn odd_field_has_zero_mean() {
        let d = Domain::from([-1.0, 1.0, -1.0, 1.0]);
        let u: Vec<f64> = d.cell_centered_grid(GRID_N).iter().map(|p| p.x * p.y).collect();
        assert!(Metadata::from_grid(d, &u).u_mean.abs() < 1e-12);
    }
}
