use crate::data::Dataset;
use crate::plc::{j, j01, LogConcaveFit, PrefixMass, SegmentMoments};
use crate::solver::WeightVector;

use super::EmError;

/// Interval masses of one fit, answered from prefix sums when the
/// endpoints are knots.
pub(crate) struct MassIndex<'a> {
    fit: &'a LogConcaveFit,
    prefix: PrefixMass,
}

impl<'a> MassIndex<'a> {
    pub(crate) fn new(fit: &'a LogConcaveFit) -> Self {
        Self {
            fit,
            prefix: fit.prefix(),
        }
    }

    fn knot(&self, x: f64) -> Option<usize> {
        let knots = self.fit.knots();
        if x <= knots[0] {
            return Some(0);
        }
        if x >= knots[knots.len() - 1] {
            return Some(knots.len() - 1);
        }
        knots.binary_search_by(|t| t.total_cmp(&x)).ok()
    }

    /// `∫_{(a,b)} e^φ` for `a <= b`.
    pub(crate) fn mass(&self, a: f64, b: f64) -> f64 {
        if !(a < b) {
            return 0.0;
        }
        let knots = self.fit.knots();
        let last = knots[knots.len() - 1];
        let body = if a >= last || b <= knots[0] {
            0.0
        } else {
            match (self.knot(a), self.knot(b)) {
                (Some(i), Some(k)) => self.prefix.between_knots(i, k),
                _ => self.fit.mass_between(a, b.min(last)),
            }
        };
        let tail = match self.fit.tail_slope() {
            Some(_) if b > last => {
                if b.is_infinite() && a <= last {
                    self.prefix.tail()
                } else {
                    self.fit.mass_between(a.max(last), b)
                }
            }
            _ => 0.0,
        };
        body + tail
    }

    /// `P_{φ,q}((a, b])`, or the density at `a` when `a = b`.
    pub(crate) fn likelihood(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return self.fit.density_at(a);
        }
        let cure = if b == f64::INFINITY { self.fit.q() } else { 0.0 };
        self.mass(a, b) + cure
    }

    /// `log P_{φ,q}((a, b])`, kept finite for intervals far out in the tail.
    fn log_likelihood(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return self.fit.log_density_at(a);
        }
        match tail_piece(self.fit, a, b) {
            Some(piece) => piece.log_probability(self.fit.q()),
            None => self.likelihood(a, b).ln(),
        }
    }
}

/// The part of the fit on `(a, b]` when `a` is at or beyond the last knot:
/// `e^{level} ∫_0^{b-a} e^{s y} dy` with `level = φ(a)`.
struct TailPiece {
    level: f64,
    /// `∫_0^D e^{sy} dy` and `∫_0^D y e^{sy} dy`.
    i0: f64,
    i1: f64,
    infinite: bool,
}

impl TailPiece {
    fn log_mass(&self) -> f64 {
        self.level + self.i0.ln()
    }

    /// Share of `P((a, b])` carried by the density rather than the cure mass.
    fn density_share(&self, q: f64) -> f64 {
        if !self.infinite || q == 0.0 {
            return 1.0;
        }
        1.0 / (1.0 + q * (-self.log_mass()).exp())
    }

    fn log_probability(&self, q: f64) -> f64 {
        let m = self.log_mass();
        if self.infinite && q > 0.0 {
            m.max(q.ln()) + (-(m - q.ln()).abs()).exp().ln_1p()
        } else {
            m
        }
    }
}

fn tail_piece(fit: &LogConcaveFit, a: f64, b: f64) -> Option<TailPiece> {
    let s = fit.tail_slope()?;
    let knots = fit.knots();
    let last = knots[knots.len() - 1];
    if a < last || !(a < b) {
        return None;
    }
    let level = fit.phi()[knots.len() - 1] + s * (a - last);
    let (i0, i1) = if b.is_infinite() {
        (1.0 / -s, 1.0 / (s * s))
    } else {
        let span = b - a;
        let em1 = (s * span).exp_m1();
        (em1 / s, span * (s * span).exp() / s - em1 / (s * s))
    };
    Some(TailPiece {
        level,
        i0,
        i1,
        infinite: b.is_infinite(),
    })
}

/// The observed-data log-likelihood `Σ ω_i log p_i`, where `p_i` is the
/// density at an exact observation and `P_{φ,q}((L_i, R_i])` otherwise.
pub fn loglik(fit: &LogConcaveFit, d: &Dataset) -> f64 {
    let idx = MassIndex::new(fit);
    let mut total = 0.0;
    for (o, w) in d.iter() {
        let lp = idx.log_likelihood(o.left(), o.right());
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return f64::NEG_INFINITY;
        }
        total += w * lp;
    }
    total
}

/// The augmented log-likelihood `ℓ(φ, q) - ∫ e^φ - q + 1`.
pub fn lambda(fit: &LogConcaveFit, d: &Dataset) -> f64 {
    loglik(fit, d) - fit.total_mass() - fit.q() + 1.0
}

/// Hat-function weights of the sub-probability `M_{φ,q}`.
pub fn e_step(fit: &LogConcaveFit, d: &Dataset) -> Result<WeightVector, EmError> {
    let grid = fit.grid();
    let knots = grid.knots();
    let n = knots.len();
    let phi = fit.phi();
    let last = knots[n - 1];
    let idx = MassIndex::new(fit);
    let mut w = vec![0.0; n];
    let mut w_tail = 0.0;
    // coverage of whole segments, as a difference array
    let mut cover = vec![0.0; n];

    for (index, (o, om)) in d.iter().enumerate() {
        let (l, r) = (o.left(), o.right());
        if o.is_exact() {
            // the weight is a point mass whatever the density value there
            if fit.log_density_at(l) == f64::NEG_INFINITY {
                return Err(EmError::ZeroProbability { index });
            }
            if l > last {
                w[n - 1] += om;
                w_tail += om * (l - last);
            } else {
                let jj = grid.segment_of(l);
                let lam = (l - knots[jj]) / grid.width(jj);
                w[jj] += om * (1.0 - lam);
                w[jj + 1] += om * lam;
            }
            continue;
        }
        if let Some(piece) = tail_piece(fit, l, r) {
            // the conditional law is the tail's shape, whatever its level
            let share = om * piece.density_share(fit.q());
            w[n - 1] += share;
            w_tail += share * ((l - last) + piece.i1 / piece.i0);
            continue;
        }
        let denom = idx.likelihood(l, r);
        if !(denom > 0.0) {
            return Err(EmError::ZeroProbability { index });
        }
        let c = om / denom;
        let lo = l.max(knots[0]);
        let hi = r.min(last);
        if lo < hi {
            let first = grid.segment_of(lo);
            let mut end = grid.segment_of(hi);
            if hi == knots[end] && end > first {
                end -= 1;
            }
            let mut full_lo = first;
            let mut full_hi = end + 1;
            if lo > knots[first] || (first == end && hi < knots[end + 1]) {
                add_partial(fit, first, lo, hi.min(knots[first + 1]), c, &mut w);
                full_lo = first + 1;
            }
            if end > first && hi < knots[end + 1] {
                add_partial(fit, end, knots[end], hi, c, &mut w);
                full_hi = end;
            }
            if full_lo < full_hi {
                cover[full_lo] += c;
                cover[full_hi] -= c;
            }
        }
        if let (Some(s), true) = (fit.tail_slope(), r > last) {
            let u = l.max(last);
            let e = (phi[n - 1] + s * (u - last)).exp();
            // ∫_0^D e^{sy} dy and ∫_0^D y e^{sy} dy with D = r - u
            let (i0, i1) = if r.is_infinite() {
                (1.0 / -s, 1.0 / (s * s))
            } else {
                let span = r - u;
                let em1 = (s * span).exp_m1();
                (em1 / s, span * (s * span).exp() / s - em1 / (s * s))
            };
            w[n - 1] += c * e * i0;
            w_tail += c * e * ((u - last) * i0 + i1);
        }
    }

    let mut running = 0.0;
    for jj in 0..n - 1 {
        running += cover[jj];
        if running != 0.0 {
            let m = SegmentMoments::new(phi[jj], phi[jj + 1]);
            let width = grid.width(jj);
            w[jj] += running * width * m.j10;
            w[jj + 1] += running * width * m.j01;
        }
    }
    Ok(WeightVector {
        w,
        w_tail,
        family: fit.family(),
    })
}

/// Adds `c ∫_u^v h_j e^φ` and `c ∫_u^v h_{j+1} e^φ` for `[u, v]` inside
/// segment `jj`, where `h` are the hat functions.
fn add_partial(fit: &LogConcaveFit, jj: usize, u: f64, v: f64, c: f64, w: &mut [f64]) {
    if !(u < v) {
        return;
    }
    let t0 = fit.knots()[jj];
    let width = fit.grid().width(jj);
    let (a, b) = (fit.log_density_at(u), fit.log_density_at(v));
    let (u0, u1) = ((u - t0) / width, (v - t0) / width);
    let len = v - u;
    let mass = len * j(a, b);
    let right = len * (u0 * j(a, b) + (u1 - u0) * j01(a, b));
    w[jj] += c * (mass - right);
    w[jj + 1] += c * right;
}

/// Left side of the cure equation minus one:
/// `Σ_{R_i = ∞} ω_i / (∫_{L_i}^∞ e^φ + q) - 1`.
pub fn q_equation(fit: &LogConcaveFit, d: &Dataset, q: f64) -> f64 {
    let idx = MassIndex::new(fit);
    cure_terms(&idx, d).iter().map(|(a, w)| w / (a + q)).sum::<f64>() - 1.0
}

fn cure_terms(idx: &MassIndex<'_>, d: &Dataset) -> Vec<(f64, f64)> {
    d.iter()
        .filter(|(o, _)| o.is_right_censored())
        .map(|(o, w)| (idx.mass(o.left(), f64::INFINITY), w))
        .collect()
}

/// Maximizer of `Λ(φ, ·)` over `q >= 0`; the fit's own `q` is ignored.
pub fn update_q(fit: &LogConcaveFit, d: &Dataset) -> f64 {
    let idx = MassIndex::new(fit);
    let terms = cure_terms(&idx, d);
    if terms.is_empty() {
        return 0.0;
    }
    let h = |q: f64| terms.iter().map(|(a, w)| w / (a + q)).sum::<f64>() - 1.0;
    if h(0.0) <= 0.0 {
        return 0.0;
    }
    let q_bar: f64 = terms.iter().map(|(_, w)| w).sum();
    let (mut lo, mut hi) = (0.0, q_bar);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo > 0.0 && h(lo).abs() < h(hi).abs() {
        lo
    } else {
        hi
    }
}
