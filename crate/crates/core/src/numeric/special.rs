//! Bessel functions of integer order and the Airy function Ai.

use std::f64::consts::{FRAC_2_PI, PI};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const ASYMPTOTIC_THRESHOLD: f64 = 25.0;

/// Ai(0) and -Ai'(0).
const AIRY_C1: f64 = 0.355_028_053_887_817_239;
const AIRY_C2: f64 = 0.258_819_403_792_806_798;

/// J_0..=J_top at `x > 0` by Miller's backward recurrence, normalised with
/// J_0 + 2 (J_2 + J_4 + ...) = 1.
fn miller(top: usize, x: f64) -> Vec<f64> {
    let start = {
        let base = top.max(x as usize);
        let m = base + 20 + (40.0 * base.max(1) as f64).sqrt() as usize;
        m + (m & 1)
    };
    let mut vals = vec![0.0; start + 2];
    let mut next = 0.0;
    let mut cur = 1e-30;
    vals[start] = cur;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        vals[k - 1] = cur;
        if cur.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            next *= 1e-250;
            cur = vals[k - 1];
        }
    }
    let mut norm = vals[0];
    for k in (2..=start).step_by(2) {
        norm += 2.0 * vals[k];
    }
    vals.truncate(top + 1);
    for v in vals.iter_mut() {
        *v /= norm;
    }
    vals
}

/// Hankel's asymptotic P and Q for order `nu`.
fn hankel_pq(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..120 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        if term.abs() >= last || term.abs() < 1e-17 {
            break;
        }
        last = term.abs();
        // a_k alternates between Q (odd k) and P (even k) with sign (-1)^floor(k/2)
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * term;
        } else {
            p += sign * term;
        }
    }
    (p, q)
}

/// (J_nu, Y_nu) for nu in {0, 1} and large positive x.
fn hankel(nu: f64, x: f64) -> (f64, f64) {
    let (p, q) = hankel_pq(nu, x);
    let chi = x - (0.5 * nu + 0.25) * PI;
    let (s, c) = chi.sin_cos();
    let amp = (FRAC_2_PI / x).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// Bessel function of the first kind, J_n(x).
pub fn bessel_j(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let sign = if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    let ax = x.abs();
    let n_us = n as usize;
    let value = if ax >= ASYMPTOTIC_THRESHOLD && (n as f64) < ax {
        let (j0, _) = hankel(0.0, ax);
        let (j1, _) = hankel(1.0, ax);
        upward(n, ax, j0, j1)
    } else {
        miller(n_us, ax)[n_us]
    };
    sign * value
}

fn upward(n: u32, x: f64, f0: f64, f1: f64) -> f64 {
    match n {
        0 => f0,
        1 => f1,
        _ => {
            let (mut a, mut b) = (f0, f1);
            for k in 1..n {
                let c = 2.0 * k as f64 / x * b - a;
                a = b;
                b = c;
            }
            b
        }
    }
}

/// Bessel function of the second kind, Y_n(x), for x > 0. Returns NaN
/// outside the domain.
pub fn bessel_y(n: u32, x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let (y0, y1) = if x >= ASYMPTOTIC_THRESHOLD {
        (hankel(0.0, x).1, hankel(1.0, x).1)
    } else {
        neumann_y01(x)
    };
    upward(n, x, y0, y1)
}

fn neumann_y01(x: f64) -> (f64, f64) {
    let terms = 2 * ((x as usize) + 30);
    let j = miller(terms + 1, x);
    let lead = (x / 2.0).ln() + EULER_GAMMA;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for k in 1..=terms / 2 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s0 += sign * j[2 * k] / k as f64;
        s1 += sign * (j[2 * k - 1] - j[2 * k + 1]) / k as f64;
    }
    let y0 = FRAC_2_PI * lead * j[0] - 2.0 * FRAC_2_PI * s0;
    let y1 = -FRAC_2_PI * j[0] / x + FRAC_2_PI * lead * j[1] + FRAC_2_PI * s1;
    (y0, y1)
}

/// Maclaurin series: (Ai, Ai').
fn airy_series(z: f64) -> (f64, f64) {
    let z3 = z * z * z;
    // f = sum t_k, g = sum s_k with t_0 = 1, s_0 = z
    let (mut f, mut g) = (1.0, z);
    let (mut fp, mut gp) = (0.0, 1.0);
    let (mut t, mut s) = (1.0, z);
    for k in 1..200 {
        let kf = k as f64;
        t *= z3 / ((3.0 * kf - 1.0) * 3.0 * kf);
        s *= z3 / (3.0 * kf * (3.0 * kf + 1.0));
        f += t;
        g += s;
        // d/dz z^(3k) = 3k z^(3k-1); d/dz z^(3k+1) = (3k+1) z^(3k)
        if z != 0.0 {
            fp += 3.0 * kf * t / z;
            gp += (3.0 * kf + 1.0) * s / z;
        }
        if t.abs() < 1e-18 * f.abs().max(1.0) && s.abs() < 1e-18 * g.abs().max(1.0) && k > 3 {
            break;
        }
    }
    (AIRY_C1 * f - AIRY_C2 * g, AIRY_C1 * fp - AIRY_C2 * gp)
}

/// Coefficients u_k and v_k of the Airy asymptotic expansions.
fn airy_uv(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0];
    let mut v = vec![1.0];
    for k in 1..count {
        let kf = k as f64;
        let next = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
        u.push(next);
        v.push(-(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * next);
    }
    (u, v)
}

/// Sums c_k (-1)^k / zeta^k (or over even/odd subsequences) stopping at the
/// smallest term.
fn asymptotic_sum(coeffs: &[f64], zeta: f64, start: usize, step: usize) -> f64 {
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    let mut k = start;
    while k < coeffs.len() {
        let sign = if (k / step) % 2 == 0 { 1.0 } else { -1.0 };
        let term = coeffs[k] / zeta.powi(k as i32);
        if term.abs() > last {
            break;
        }
        last = term.abs();
        sum += sign * term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += step;
    }
    sum
}

fn airy_pair(z: f64) -> (f64, f64) {
    if (-7.0..=5.0).contains(&z) {
        return airy_series(z);
    }
    let (u, v) = airy_uv(60);
    if z > 0.0 {
        let zeta = 2.0 / 3.0 * z * z.sqrt();
        let pre = (-zeta).exp() / (2.0 * PI.sqrt());
        let q = z.sqrt().sqrt();
        let ai = pre / q * asymptotic_sum(&u, zeta, 0, 1);
        let aip = -pre * q * asymptotic_sum(&v, zeta, 0, 1);
        (ai, aip)
    } else {
        let x = -z;
        let zeta = 2.0 / 3.0 * x * x.sqrt();
        let q = x.sqrt().sqrt();
        let (s, c) = (zeta + PI / 4.0).sin_cos();
        let ue = asymptotic_sum(&u, zeta, 0, 2);
        let uo = asymptotic_sum(&u, zeta, 1, 2);
        let ve = asymptotic_sum(&v, zeta, 0, 2);
        let vo = asymptotic_sum(&v, zeta, 1, 2);
        let ai = (s * ue - c * uo) / (q * PI.sqrt());
        let aip = -q / PI.sqrt() * (c * ve + s * vo);
        (ai, aip)
    }
}

/// Airy function Ai(z).
pub fn airy_ai(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    airy_pair(z).0
}

/// Derivative Ai'(z).
pub fn airy_ai_prime(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    airy_pair(z).1
}
