use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use visa_core::expr::{canonicalize, print, Expr};
use visa_core::instance::evaluation_points;
use visa_core::numeric::{eval, EvalPoint};
use visa_core::scenario::{list_scenarios, scenario_by_slug, Category, ParamKind, ParamVector, Scenario};

fn samples(s: &Scenario, n: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s.corner_params();
    out.extend((0..n).map(|_| s.sample_params(&mut rng)));
    out
}

fn at(e: &Expr, x: f64, y: f64) -> f64 {
    eval(e, EvalPoint::new(x, y)).unwrap_or_else(|err| panic!("{} at ({x}, {y}): {err}", print(e)))
}

#[test]
fn table_counts() {
    let all = list_scenarios();
    assert_eq!(all.len(), 30);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in all {
        *counts.entry(s.category.to_string()).or_default() += 1;
    }
    let want = [
        (Category::Electrostatics, 3),
        (Category::HeatTransfer, 6),
        (Category::FluidDynamics, 4),
        (Category::QuantumMechanics, 5),
        (Category::OtherPdes, 11),
        (Category::ScreenedPotentials, 1),
    ];
    for (c, n) in want {
        assert_eq!(counts.get(&c.to_string()), Some(&n), "{c}");
    }
    let singular: Vec<&str> = all.iter().filter(|s| s.singular).map(|s| s.name.as_str()).collect();
    assert_eq!(
        singular,
        [
            "Point Charge Potential",
            "Electric Dipole Potential",
            "Point Source/Sink Flow",
            "Point Vortex Streamfunction",
            "Poisson with Two Point Sources",
            "Line Mass Gravity Potential",
            "Yukawa Potential",
        ]
    );
    for s in all {
        assert_eq!(s.singular, !s.singularities.is_empty(), "{}", s.slug);
    }
}

#[test]
fn sampling_stays_in_range() {
    for s in list_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut seen_lo = vec![f64::INFINITY; s.param_count()];
        let mut seen_hi = vec![f64::NEG_INFINITY; s.param_count()];
        for _ in 0..1000 {
            let a = s.sample_params(&mut rng);
            s.validate(&a).unwrap();
            for (i, v) in a.values.iter().enumerate() {
                seen_lo[i] = seen_lo[i].min(*v);
                seen_hi[i] = seen_hi[i].max(*v);
            }
        }
        for (i, p) in s.params.iter().enumerate() {
            if p.kind == ParamKind::Integer {
                assert_eq!((seen_lo[i], seen_hi[i]), (p.lo, p.hi), "{} {}", s.slug, p.name);
            }
        }
    }
}

/// Evaluates on the masked 20 x 20 generation grid.
fn grid_values(s: &Scenario, a: &ParamVector) -> Vec<f64> {
    let e = s.instantiate(a).unwrap();
    evaluation_points(s, a).unwrap().into_iter().map(|p| at(&e, p.x, p.y)).collect()
}

#[test]
fn fields_are_finite_and_bounded() {
    for s in list_scenarios() {
        for a in samples(s, 40, 3) {
            let vals = grid_values(s, &a);
            let worst = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= 10.0, "{} {:?}: max |u| = {worst}", s.slug, a.values);
        }
    }
}

fn bessel_orders(s: &Scenario) -> Vec<usize> {
    s.params
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            s.template.contains(&format!("besselj({{{}}},", p.name))
                || s.template.contains(&format!("bessely({{{}}},", p.name))
        })
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn structure_is_parameter_invariant() {
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for s in list_scenarios() {
        let orders = bessel_orders(s);
        let mut forms: BTreeMap<Vec<u64>, String> = BTreeMap::new();
        for a in samples(s, 60, 11) {
            let key: Vec<u64> = orders.iter().map(|&i| a.values[i] as u64).collect();
            let form = print(&canonicalize(&s.instantiate(&a).unwrap()));
            let first = forms.entry(key).or_insert_with(|| form.clone());
            assert_eq!(*first, form, "{} at {:?}", s.slug, a.values);
        }
        for form in forms.into_values() {
            if let Some(other) = seen.insert(form.clone(), s.slug.clone()) {
                panic!("{} and {} share the canonical form {form}", other, s.slug);
            }
        }
    }
}

#[test]
fn point_charge_vanishes_on_unit_circle() {
    let s = scenario_by_slug("point_charge_potential").unwrap();
    let a = ParamVector { scenario: s.slug.clone(), values: vec![1.0, 0.0, 0.0, 1.0] };
    let e = s.instantiate(&a).unwrap();
    assert_eq!(at(&e, 1.0, 0.0), 0.0);
    assert!((at(&e, 0.0, 2.0) - 2f64.ln()).abs() < 1e-15);
}

/// Root-mean-square residual of `cxx u_xx + cyy u_yy + c0 u - f` with the
/// five-point stencil, over `n x n` nodes spaced `h` from `(x0, y0)`, and the
/// RMS of `u` on the same nodes.
fn residual_rms(s: &Scenario, a: &ParamVector, x0: f64, y0: f64, h: f64, n: usize) -> (f64, f64) {
    let u = s.instantiate(a).unwrap();
    let [cxx, cyy, c0, f] = s.residual_terms(a).unwrap().expect("residual descriptor");
    let (mut r2, mut u2) = (0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (x0 + i as f64 * h, y0 + j as f64 * h);
            let c = at(&u, x, y);
            let uxx = (at(&u, x + h, y) - 2.0 * c + at(&u, x - h, y)) / (h * h);
            let uyy = (at(&u, x, y + h) - 2.0 * c + at(&u, x, y - h)) / (h * h);
            let r = at(&cxx, x, y) * uxx + at(&cyy, x, y) * uyy + at(&c0, x, y) * c - at(&f, x, y);
            r2 += r * r;
            u2 += c * c;
        }
    }
    let count = (n * n) as f64;
    ((r2 / count).sqrt(), (u2 / count).sqrt())
}

#[test]
fn residuals_within_recorded_bounds() {
    let mut report = Vec::new();
    for s in list_scenarios().iter().filter(|s| !s.singular) {
        let Some(spec) = &s.residual else { continue };
        let d = s.domain;
        // offset nodes keep clear of the domain centre
        let h = d.width().min(d.height()) / 101.0;
        let mut worst = 0.0f64;
        for a in samples(s, 20, 5) {
            let (r, u) = residual_rms(s, &a, d.x_min + 0.3 * h, d.y_min + 0.3 * h, h, 101);
            worst = worst.max(r / (h * h * u.max(1e-12)));
        }
        report.push(format!("{} {worst:.4e}", s.slug));
        let bound = spec.bound.unwrap_or_else(|| panic!("{} has no recorded bound (measured {worst:.4e})", s.slug));
        assert!(worst <= bound, "{}: {worst:e} > {bound:e}", s.slug);
    }
    eprintln!("{}", report.join("\n"));
}

#[test]
fn plane_wave_residual() {
    let s = scenario_by_slug("helmholtz_plane_wave").unwrap();
    let a = s.center_params();
    let (r, u) = residual_rms(s, &a, -4.0, -4.0, 0.08, 101);
    assert!(r <= 1e-2 * u, "residual {r} vs |u| {u}");
}

#[test]
fn bessel_zero_order_residual() {
    let s = scenario_by_slug("bessel_scattering_state").unwrap();
    let n_idx = s.params.iter().position(|p| p.name == "n").unwrap();
    let mut a = s.center_params();
    a.values[n_idx] = 0.0;
    let e = s.instantiate(&a).unwrap();
    assert!(print(&e).contains("besselj(0, "), "{}", print(&e));
    // n = 0 has no centrifugal term, so the window may straddle the origin
    let (r, u) = residual_rms(s, &a, -1.0, -1.0, 0.02, 101);
    assert!(r <= 1e-2 * u, "residual {r} vs |u| {u}");
}
