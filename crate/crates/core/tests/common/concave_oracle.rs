//! Brute-force maximizer of `Σ w_k φ_k - ∫ exp(φ)` over concave vectors on
//! a few points, with `φ` linear between points.
//!
//! Every subset of interior points is tried as the set of kinks. On each
//! subset the objective is smooth and strictly concave in the values at the
//! kinks and the two ends, and is maximized by Newton's method with
//! finite-difference derivatives. The best concave candidate wins; since the
//! constrained optimum is the unconstrained optimum for its own kink set,
//! this is the exact maximizer up to the Newton tolerance.
#![allow(dead_code)]

/// `∫_0^1 exp((1 - t) a + t b) dt`, written independently of the library.
fn segment_integral(a: f64, b: f64) -> f64 {
    let d = b - a;
    let m = 0.5 * (a + b);
    if d.abs() < 1e-4 {
        m.exp() * (1.0 + d * d / 24.0 + d.powi(4) / 1920.0)
    } else {
        (b.exp() - a.exp()) / d
    }
}

fn expand(x: &[f64], kinks: &[usize], y: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; x.len()];
    for p in 0..kinks.len() - 1 {
        let (i, j) = (kinks[p], kinks[p + 1]);
        for k in i..=j {
            let lam = (x[k] - x[i]) / (x[j] - x[i]);
            phi[k] = (1.0 - lam) * y[p] + lam * y[p + 1];
        }
    }
    phi
}

fn objective(x: &[f64], w: &[f64], phi: &[f64]) -> f64 {
    let mut f: f64 = w.iter().zip(phi).map(|(a, b)| a * b).sum();
    for k in 0..x.len() - 1 {
        f -= (x[k + 1] - x[k]) * segment_integral(phi[k], phi[k + 1]);
    }
    f
}

fn solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut out = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * out[k]).sum();
        out[r] = (b[r] - s) / a[r][r];
    }
    Some(out)
}

fn newton(x: &[f64], w: &[f64], kinks: &[usize]) -> Vec<f64> {
    let f = |y: &[f64]| objective(x, w, &expand(x, kinks, y));
    let n = kinks.len();
    let total: f64 = w.iter().sum();
    let mut y = vec![(total / (x[x.len() - 1] - x[0])).ln(); n];
    for _ in 0..200 {
        let fy = f(&y);
        let h = 1e-5;
        let mut g = vec![0.0; n];
        let mut hess = vec![vec![0.0; n]; n];
        let shifted = |i: usize, di: f64, j: usize, dj: f64| {
            let mut z = y.clone();
            z[i] += di;
            z[j] += dj;
            f(&z)
        };
        for i in 0..n {
            g[i] = (shifted(i, h, i, 0.0) - shifted(i, -h, i, 0.0)) / (2.0 * h);
            let hh = 1e-4;
            for j in 0..n {
                // second differences of the (negated) objective
                hess[i][j] = -(shifted(i, hh, j, hh) - shifted(i, hh, j, -hh) - shifted(i, -hh, j, hh)
                    + shifted(i, -hh, j, -hh))
                    / (4.0 * hh * hh);
            }
        }
        let Some(step) = solve(&mut hess, &mut g.clone()) else {
            break;
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            if f(&trial) >= fy {
                moved = step.iter().any(|s| (t * s).abs() > 1e-13);
                y = trial;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    expand(x, kinks, &y)
}

fn is_concave(x: &[f64], phi: &[f64]) -> bool {
    (1..x.len() - 1).all(|k| {
        let left = (phi[k] - phi[k - 1]) / (x[k] - x[k - 1]);
        let right = (phi[k + 1] - phi[k]) / (x[k + 1] - x[k]);
        right <= left + 1e-9
    })
}

/// Values of the maximizer at the sorted distinct points `x` with weights `w`.
pub fn maximize(x: &[f64], w: &[f64]) -> Vec<f64> {
    let m = x.len();
    assert!(m >= 2);
    let interior = m - 2;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << interior) {
        let mut kinks = vec![0];
        kinks.extend((0..interior).filter(|b| mask & (1 << b) != 0).map(|b| b + 1));
        kinks.push(m - 1);
        let phi = newton(x, w, &kinks);
        if !is_concave(x, &phi) {
            continue;
        }
        let value = objective(x, w, &phi);
        if best.as_ref().map_or(true, |(v, _)| value > *v) {
            best = Some((value, phi));
        }
    }
    best.expect("the all-linear candidate is concave").1
}
