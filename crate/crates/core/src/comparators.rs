//! Unconstrained nonparametric baselines: Turnbull's self-consistency
//! estimator for interval-censored data, which reduces to Kaplan–Meier
//! under right censoring and to the empirical distribution for exact data.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::plc::LogConcaveFit;

/// A discrete distribution on the line plus an atom at `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StepRecord", try_from = "StepRecord")]
pub struct StepSurvival {
    jump_points: Vec<f64>,
    masses: Vec<f64>,
    mass_at_infinity: f64,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    points: Vec<f64>,
    survival: Vec<f64>,
    q: f64,
}

impl From<StepSurvival> for StepRecord {
    fn from(s: StepSurvival) -> Self {
        let survival = s.jump_points.iter().map(|&x| s.survival_at(x)).collect();
        StepRecord {
            points: s.jump_points,
            survival,
            q: s.mass_at_infinity,
        }
    }
}

impl TryFrom<StepRecord> for StepSurvival {
    type Error = String;
    fn try_from(r: StepRecord) -> Result<Self, String> {
        if r.points.len() != r.survival.len() {
            return Err("points and survival differ in length".into());
        }
        let mut prev = 1.0;
        let masses = r
            .survival
            .iter()
            .map(|&s| {
                let m = prev - s;
                prev = s;
                m
            })
            .collect();
        StepSurvival::new(r.points, masses, r.q)
    }
}

impl StepSurvival {
    pub fn new(jump_points: Vec<f64>, masses: Vec<f64>, mass_at_infinity: f64) -> Result<Self, String> {
        if jump_points.len() != masses.len() {
            return Err("jump points and masses differ in length".into());
        }
        if jump_points.windows(2).any(|w| !(w[0] < w[1])) || jump_points.iter().any(|x| !x.is_finite()) {
            return Err("jump points must be finite and increasing".into());
        }
        let total: f64 = masses.iter().sum::<f64>() + mass_at_infinity;
        if masses.iter().chain([&mass_at_infinity]).any(|m| !(*m >= -1e-12)) || (total - 1.0).abs() > 1e-9 {
            return Err("masses must be nonnegative and sum to one".into());
        }
        Ok(Self {
            jump_points,
            masses,
            mass_at_infinity,
        })
    }

    pub fn jump_points(&self) -> &[f64] {
        &self.jump_points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass_at_infinity(&self) -> f64 {
        self.mass_at_infinity
    }

    /// `S(x) = P(X > x)`.
    pub fn survival_at(&self, x: f64) -> f64 {
        let k = self.jump_points.partition_point(|&p| p <= x);
        self.masses[k..].iter().sum::<f64>() + self.mass_at_infinity
    }

    /// `S(x-) = P(X >= x)`.
    pub fn survival_before(&self, x: f64) -> f64 {
        let k = self.jump_points.partition_point(|&p| p < x);
        self.masses[k..].iter().sum::<f64>() + self.mass_at_infinity
    }

    /// `P((a, b])`, or `P({a})` when `a = b`.
    pub fn interval_prob(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return self.survival_before(a) - self.survival_at(a);
        }
        let upper = if b == f64::INFINITY { 0.0 } else { self.survival_at(b) };
        self.survival_at(a) - upper
    }
}

/// Anything with a survival function that can be compared in sup-norm.
pub trait SurvivalCurve {
    fn survival(&self, x: f64) -> f64;
    /// Left limit at `x`.
    fn survival_left(&self, x: f64) -> f64 {
        self.survival(x)
    }
    /// Points where the curve jumps or bends, added to any evaluation grid.
    fn breakpoints(&self) -> Vec<f64>;
}

impl SurvivalCurve for StepSurvival {
    fn survival(&self, x: f64) -> f64 {
        self.survival_at(x)
    }
    fn survival_left(&self, x: f64) -> f64 {
        self.survival_before(x)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.jump_points.clone()
    }
}

impl SurvivalCurve for LogConcaveFit {
    fn survival(&self, x: f64) -> f64 {
        self.survival_at(x)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.knots().to_vec()
    }
}

/// A continuous survival function given as a closure.
pub struct Continuous<F>(pub F);

impl<F: Fn(f64) -> f64> SurvivalCurve for Continuous<F> {
    fn survival(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `max |Ŝ - S|` over `eval_points` and the breakpoints of both curves,
/// comparing right values and left limits.
pub fn sup_distance<A, B>(est: &A, reference: &B, eval_points: &[f64]) -> f64
where
    A: SurvivalCurve + ?Sized,
    B: SurvivalCurve + ?Sized,
{
    let extra = [est.breakpoints(), reference.breakpoints()];
    let mut worst = 0.0f64;
    for &x in eval_points.iter().chain(extra.iter().flatten()) {
        worst = worst
            .max((est.survival(x) - reference.survival(x)).abs())
            .max((est.survival_left(x) - reference.survival_left(x)).abs());
    }
    worst
}

/// Default number of self-consistency iterations.
pub const TURNBULL_MAX_ITER: usize = 100_000;

/// Turnbull's NPMLE. Mass of each innermost interval is placed at its right
/// endpoint; the innermost interval reaching `+∞` becomes `mass_at_infinity`.
pub fn turnbull(d: &Dataset, tol: f64) -> StepSurvival {
    // atoms: {v_0}, (v_0, v_1), {v_1}, ..., {v_{K-1}}, (v_{K-1}, ∞)
    let mut vals: Vec<f64> = d
        .observations()
        .iter()
        .flat_map(|o| [o.left(), o.right()])
        .filter(|x| x.is_finite())
        .collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let k = vals.len();
    let pos = |x: f64| vals.binary_search_by(|v| v.total_cmp(&x)).expect("endpoint is listed");
    let ranges: Vec<(usize, usize)> = d
        .observations()
        .iter()
        .map(|o| {
            let a = pos(o.left());
            if o.is_exact() {
                (2 * a, 2 * a)
            } else if o.is_right_censored() {
                (2 * a + 1, 2 * k - 1)
            } else {
                (2 * a + 1, 2 * pos(o.right()))
            }
        })
        .collect();

    // innermost intervals: a range start followed by an end with no start in between
    let atoms = 2 * k;
    let mut is_start = vec![false; atoms];
    let mut is_end = vec![false; atoms];
    for &(s, e) in &ranges {
        is_start[s] = true;
        is_end[e] = true;
    }
    let mut inner: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for a in 0..atoms {
        if is_start[a] {
            open = Some(a);
        }
        if is_end[a] {
            if let Some(s) = open.take() {
                inner.push((s, a));
            }
        }
    }

    // each observation covers a consecutive run of innermost intervals
    let cover: Vec<(usize, usize)> = ranges
        .iter()
        .map(|&(s, e)| {
            let lo = inner.partition_point(|&(a, _)| a < s);
            let hi = inner.partition_point(|&(_, b)| b <= e);
            (lo, hi)
        })
        .collect();
    let m = inner.len();
    let weights = d.weights();
    let mut p = vec![1.0 / m as f64; m];
    let mut prefix = vec![0.0; m + 1];
    let mut acc = vec![0.0; m + 1];
    for _ in 0..TURNBULL_MAX_ITER {
        for j in 0..m {
            prefix[j + 1] = prefix[j] + p[j];
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (i, &(lo, hi)) in cover.iter().enumerate() {
            let denom = prefix[hi] - prefix[lo];
            let c = weights[i] / denom;
            acc[lo] += c;
            acc[hi] -= c;
        }
        let mut running = 0.0;
        let mut change = 0.0f64;
        for j in 0..m {
            running += acc[j];
            let next = p[j] * running;
            change = change.max((next - p[j]).abs());
            p[j] = next;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        if change < tol {
            break;
        }
    }

    let mut points = Vec::new();
    let mut masses = Vec::new();
    let mut at_inf = 0.0;
    for (&(_, e), &mass) in inner.iter().zip(&p) {
        if e == atoms - 1 {
            at_inf += mass;
        } else {
            // ends are always point atoms here
            points.push(vals[e / 2]);
            masses.push(mass);
        }
    }
    StepSurvival {
        jump_points: points,
        masses,
        mass_at_infinity: at_inf,
    }
}

/// `Σ ω_i log P̂(X̃_i)` under a step distribution (point probabilities for
/// exact observations).
pub fn turnbull_loglik(s: &StepSurvival, d: &Dataset) -> f64 {
    d.iter()
        .map(|(o, w)| {
            let p = s.interval_prob(o.left(), o.right());
            if p > 0.0 {
                w * p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}
