//! Closed-form answers when all closed observation intervals share a point.

use super::{Dataset, Observation};
use crate::plc::{Grid, LogConcaveFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateKind {
    /// Unbounded likelihood.
    NoMle,
    /// Any distribution with full mass on `(μ', μ'']` is a maximizer.
    IntervalMass,
    /// Maximizers put fixed masses on `(a, μ]` and `(μ, b]`.
    TwoPieceLinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Interval { lo: f64, hi: f64 },
    Point(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateSolution {
    pub kind: DegenerateKind,
    pub support: Support,
    /// Probabilities of `(a, μ]` and `(μ, b]` for `TwoPieceLinear`, `[1]` for `IntervalMass`.
    pub masses: Vec<f64>,
    pub description: String,
    /// A canonical maximizer (`q = 0`), absent for `NoMle`.
    pub fit: Option<LogConcaveFit>,
}

/// Detects the cases where `⋂ [L_i, R_i]` is non-empty.
pub fn classify_degenerate(d: &Dataset) -> Option<DegenerateSolution> {
    let obs = d.observations();
    let mu_lo = obs.iter().map(|o| o.left()).fold(f64::NEG_INFINITY, f64::max);
    let mu_hi = obs.iter().map(|o| o.right()).fold(f64::INFINITY, f64::min);
    if mu_lo > mu_hi {
        return None;
    }
    if mu_lo < mu_hi {
        return Some(interval_mass(mu_lo, mu_hi));
    }
    let mu = mu_lo;
    if obs.iter().any(|o| o.is_exact() && o.left() == mu) {
        return Some(DegenerateSolution {
            kind: DegenerateKind::NoMle,
            support: Support::Point(mu),
            masses: vec![],
            description: format!("exact observation at {mu} lies in every observation interval"),
            fit: None,
        });
    }
    // counts keep the ratios exact for unweighted data
    let equal = d.weights().iter().all(|&w| w == d.weights()[0]);
    let side = |pick: &dyn Fn(&Observation) -> bool| -> f64 {
        d.iter()
            .filter(|(o, _)| pick(o))
            .map(|(_, w)| if equal { 1.0 } else { w })
            .sum()
    };
    let n_left = side(&|o| o.left() < mu && o.right() == mu);
    let n_right = side(&|o| o.left() == mu && o.right() > mu);
    let a = obs
        .iter()
        .map(|o| o.left())
        .filter(|&l| l < mu)
        .fold(f64::NEG_INFINITY, f64::max);
    let b = obs
        .iter()
        .map(|o| o.right())
        .filter(|&r| r > mu)
        .fold(f64::INFINITY, f64::min);
    let p_left = n_left / (n_left + n_right);
    let p_right = n_right / (n_left + n_right);
    Some(DegenerateSolution {
        kind: DegenerateKind::TwoPieceLinear,
        support: Support::Interval { lo: a, hi: b },
        masses: vec![p_left, p_right],
        description: format!(
            "all intervals meet only at {mu}: mass {p_left} on ({a}, {mu}] and {p_right} on ({mu}, {b}]"
        ),
        fit: Some(two_piece_fit(a, mu, b, p_left)),
    })
}

fn interval_mass(lo: f64, hi: f64) -> DegenerateSolution {
    let fit = if hi.is_finite() {
        let level = -(hi - lo).ln();
        LogConcaveFit::new(Grid::new(vec![lo, hi]).unwrap(), vec![level, level], None, 0.0)
    } else {
        // unit-rate exponential starting at `lo`
        LogConcaveFit::new(Grid::new(vec![lo, lo + 1.0]).unwrap(), vec![0.0, -1.0], Some(-1.0), 0.0)
    };
    DegenerateSolution {
        kind: DegenerateKind::IntervalMass,
        support: Support::Interval { lo, hi },
        masses: vec![1.0],
        description: format!("all intervals share ({lo}, {hi}]; any distribution on it is a maximizer"),
        fit: Some(fit.expect("canonical fit is valid")),
    }
}

/// Linear log-density on `[a, b]` (or `[a, ∞)`) giving `(a, μ]` probability `p_left`.
fn two_piece_fit(a: f64, mu: f64, b: f64, p_left: f64) -> LogConcaveFit {
    let p_right = 1.0 - p_left;
    if b.is_infinite() {
        // e^{β(μ - a)} is the share beyond μ
        let beta = p_right.ln() / (mu - a);
        // mass of e^{α + β(x - a)} on [a, ∞) is e^α / (-β)
        let alpha = (-beta).ln();
        return LogConcaveFit::new(
            Grid::new(vec![a, mu]).unwrap(),
            vec![alpha, alpha + beta * (mu - a)],
            Some(beta),
            0.0,
        )
        .expect("valid two-piece fit");
    }
    let u = (mu - a) / (b - a);
    // share of [0, u] under e^{c v} on [0, 1]; decreasing in c
    let share = |c: f64| {
        if c.abs() < 1e-12 {
            u
        } else {
            (c * u).exp_m1() / c.exp_m1()
        }
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while share(lo) < p_left {
        lo *= 2.0;
    }
    while share(hi) > p_left {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid) > p_left {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    let beta = c / (b - a);
    let raw = LogConcaveFit::new(
        Grid::new(vec![a, mu, b]).unwrap(),
        vec![0.0, beta * (mu - a), c],
        None,
        0.0,
    )
    .expect("valid two-piece fit");
    raw.normalized()
}
