use std::f64::consts::PI;

use visa_core::numeric::{airy_ai, airy_ai_prime, bessel_j, bessel_y};

fn reference() -> Vec<(String, f64, f64)> {
    let text = include_str!("data/special_reference.csv");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("function"))
        .map(|l| {
            let mut it = l.split(',');
            let name = it.next().unwrap().to_string();
            let z: f64 = it.next().unwrap().parse().unwrap();
            let v: f64 = it.next().unwrap().parse().unwrap();
            (name, z, v)
        })
        .collect()
}

fn kernel(name: &str, z: f64) -> f64 {
    match name {
        "J0" => bessel_j(0, z),
        "J1" => bessel_j(1, z),
        "J3" => bessel_j(3, z),
        "Y0" => bessel_y(0, z),
        "Y1" => bessel_y(1, z),
        "Y2" => bessel_y(2, z),
        "Ai" => airy_ai(z),
        "AiPrime" => airy_ai_prime(z),
        other => panic!("unknown kernel {other}"),
    }
}

#[test]
fn matches_high_precision_table() {
    let rows = reference();
    assert!(rows.len() > 250);
    let mut worst = 0.0f64;
    for (name, z, want) in &rows {
        let got = kernel(name, *z);
        let err = (got - want).abs();
        worst = worst.max(err);
        assert!(err <= 1e-10, "{name}({z}) = {got}, want {want}, err {err:e}");
    }
    eprintln!("worst absolute error {worst:e}");
}

#[test]
fn first_zero_of_j0() {
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if bessel_j(0, lo).signum() == bessel_j(0, mid).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((0.5 * (lo + hi) - 2.404825557695773).abs() <= 1e-8);
    assert!(bessel_j(0, 2.404825557695773).abs() < 1e-8);
}

fn j_prime(n: u32, z: f64) -> f64 {
    if n == 0 {
        -bessel_j(1, z)
    } else {
        0.5 * (bessel_j(n - 1, z) - bessel_j(n + 1, z))
    }
}

fn y_prime(n: u32, z: f64) -> f64 {
    if n == 0 {
        -bessel_y(1, z)
    } else {
        0.5 * (bessel_y(n - 1, z) - bessel_y(n + 1, z))
    }
}

#[test]
fn wronskian() {
    for n in 0..4 {
        for z in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let w = bessel_j(n, z) * y_prime(n, z) - j_prime(n, z) * bessel_y(n, z);
            assert!((w - 2.0 / (PI * z)).abs() <= 1e-8, "n={n} z={z} w={w}");
        }
    }
}

#[test]
fn three_term_recurrence() {
    for n in 1..=5u32 {
        for i in 1..=200 {
            let z = 0.1 * i as f64;
            let lhs = bessel_j(n - 1, z) + bessel_j(n + 1, z);
            let rhs = 2.0 * n as f64 / z * bessel_j(n, z);
            assert!((lhs - rhs).abs() <= 1e-9, "n={n} z={z}");
        }
    }
}

#[test]
fn airy_satisfies_its_equation() {
    // Ai'' = z Ai, checked with a central difference of Ai'
    let h = 1e-5;
    for i in 0..40 {
        let z = -14.0 + 0.45 * i as f64;
        let second = (airy_ai_prime(z + h) - airy_ai_prime(z - h)) / (2.0 * h);
        assert!((second - z * airy_ai(z)).abs() < 1e-7 * (1.0 + z.abs()), "z={z}");
    }
}
