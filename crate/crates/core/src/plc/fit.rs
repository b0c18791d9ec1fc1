use serde::{Deserialize, Serialize};

use super::kernels::{self, j};
use super::ModelError;

/// Strictly increasing finite knots `t_1 < ... < t_N`, `N >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    knots: Vec<f64>,
}

impl Grid {
    pub fn new(knots: Vec<f64>) -> Result<Self, ModelError> {
        if knots.len() < 2 {
            return Err(ModelError::TooFewKnots(knots.len()));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::NonFiniteKnot);
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::UnsortedKnots);
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Width of segment `j`, i.e. `t_{j+1} - t_j` (0-based).
    pub fn width(&self, j: usize) -> f64 {
        self.knots[j + 1] - self.knots[j]
    }

    /// Index of the segment `[t_j, t_{j+1}]` containing `x`, for `t_1 <= x <= t_N`.
    /// Knots belong to the segment on their right, except `t_N`.
    pub fn segment_of(&self, x: f64) -> usize {
        let idx = self.knots.partition_point(|&t| t <= x);
        idx.saturating_sub(1).min(self.knots.len() - 2)
    }

    /// Grid without its first or last knot.
    pub(crate) fn drop_first(&self) -> Result<Self, ModelError> {
        Self::new(self.knots[1..].to_vec())
    }

    pub(crate) fn drop_last(&self) -> Result<Self, ModelError> {
        Self::new(self.knots[..self.knots.len() - 1].to_vec())
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.knots
    }
}

/// Whether the log-density continues past `t_N` with an exponential tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    WithTail,
    NoTail,
}

/// A concave piecewise-linear log-density on a grid plus a cure mass `q` at
/// `+∞`. Outside `[t_1, t_N]` (or `[t_1, ∞)` with a tail) the log-density is
/// `-∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FitRecord", into = "FitRecord")]
pub struct LogConcaveFit {
    grid: Grid,
    phi: Vec<f64>,
    tail_slope: Option<f64>,
    q: f64,
}

/// On-disk layout of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitRecord {
    knots: Vec<f64>,
    phi: Vec<f64>,
    tail_slope: Option<f64>,
    q: f64,
}

impl TryFrom<FitRecord> for LogConcaveFit {
    type Error = ModelError;
    fn try_from(r: FitRecord) -> Result<Self, Self::Error> {
        LogConcaveFit::new(Grid::new(r.knots)?, r.phi, r.tail_slope, r.q)
    }
}

impl From<LogConcaveFit> for FitRecord {
    fn from(f: LogConcaveFit) -> Self {
        FitRecord {
            knots: f.grid.knots,
            phi: f.phi,
            tail_slope: f.tail_slope,
            q: f.q,
        }
    }
}

impl LogConcaveFit {
    /// Builds a fit; concavity is not enforced here (see [`Self::is_concave`]).
    pub fn new(
        grid: Grid,
        phi: Vec<f64>,
        tail_slope: Option<f64>,
        q: f64,
    ) -> Result<Self, ModelError> {
        if phi.len() != grid.len() {
            return Err(ModelError::LengthMismatch {
                knots: grid.len(),
                values: phi.len(),
            });
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteValue);
        }
        if let Some(s) = tail_slope {
            if !(s < 0.0 && s.is_finite()) {
                return Err(ModelError::Tail(kernels::UnboundedTail { slope: s }));
            }
        }
        if !(0.0..1.0).contains(&q) {
            return Err(ModelError::InvalidCureMass(q));
        }
        Ok(Self {
            grid,
            phi,
            tail_slope,
            q,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn knots(&self) -> &[f64] {
        self.grid.knots()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn tail_slope(&self) -> Option<f64> {
        self.tail_slope
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn family(&self) -> Family {
        if self.tail_slope.is_some() {
            Family::WithTail
        } else {
            Family::NoTail
        }
    }

    pub(crate) fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    /// Right end of the support (`+∞` with a tail).
    pub fn upper(&self) -> f64 {
        if self.tail_slope.is_some() {
            f64::INFINITY
        } else {
            self.grid.last()
        }
    }

    /// Slope of segment `j`.
    pub fn slope(&self, j: usize) -> f64 {
        (self.phi[j + 1] - self.phi[j]) / self.grid.width(j)
    }

    /// Whether every slope change is at most `tol`, including the tail.
    pub fn is_concave(&self, tol: f64) -> bool {
        let n = self.grid.len();
        for j in 1..n - 1 {
            if self.slope(j) > self.slope(j - 1) + tol {
                return false;
            }
        }
        match self.tail_slope {
            Some(s) => s <= self.slope(n - 2) + tol,
            None => true,
        }
    }

    /// Mass of segment `j` (0-based), `(t_{j+1} - t_j) J(φ_j, φ_{j+1})`.
    pub fn segment_mass(&self, j: usize) -> f64 {
        self.grid.width(j) * kernels::j(self.phi[j], self.phi[j + 1])
    }

    /// Mass of the exponential tail beyond `t_N`.
    pub fn tail_mass(&self) -> Result<f64, ModelError> {
        let s = self.tail_slope.ok_or(ModelError::NoTail)?;
        Ok(kernels::j_tilde(self.phi[self.phi.len() - 1], s)?)
    }

    /// `∫ e^φ`, excluding `q`.
    pub fn total_mass(&self) -> f64 {
        let body: f64 = (0..self.grid.len() - 1)
            .map(|j| self.segment_mass(j))
            .sum();
        body + self.tail_mass().unwrap_or(0.0)
    }

    /// `φ(x)`, `-∞` outside the domain.
    pub fn log_density_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x.is_nan() || x < self.grid.first() {
            return f64::NEG_INFINITY;
        }
        if x > self.grid.last() {
            return match self.tail_slope {
                Some(s) if x.is_finite() => self.phi[n - 1] + s * (x - self.grid.last()),
                _ => f64::NEG_INFINITY,
            };
        }
        let j = self.grid.segment_of(x);
        let lam = (x - self.grid.knots()[j]) / self.grid.width(j);
        if lam == 0.0 {
            self.phi[j]
        } else if lam == 1.0 {
            self.phi[j + 1]
        } else {
            (1.0 - lam) * self.phi[j] + lam * self.phi[j + 1]
        }
    }

    pub fn density_at(&self, x: f64) -> f64 {
        self.log_density_at(x).exp()
    }

    /// `∫_{(a,b)} e^φ`, for `a <= b`, `b` possibly `+∞`; excludes `q`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let knots = self.grid.knots();
        let n = knots.len();
        let lo = a.max(knots[0]);
        let hi = b.min(self.upper());
        if !(lo < hi) {
            return 0.0;
        }
        let mut total = 0.0;
        let body_hi = hi.min(knots[n - 1]);
        if lo < body_hi {
            let first = self.grid.segment_of(lo);
            let last = self.grid.segment_of(body_hi);
            for jj in first..=last {
                let u = lo.max(knots[jj]);
                let v = body_hi.min(knots[jj + 1]);
                if v > u {
                    total += self.piece_mass(jj, u, v);
                }
            }
        }
        if let Some(s) = self.tail_slope {
            if hi > knots[n - 1] {
                let u = lo.max(knots[n - 1]);
                let head = self.phi[n - 1] + s * (u - knots[n - 1]);
                total += if hi.is_infinite() {
                    head.exp() / -s
                } else {
                    head.exp() * (-(s * (hi - u)).exp_m1()) / -s
                };
            }
        }
        total
    }

    /// Mass of `[u, v] ⊂ [t_j, t_{j+1}]`, integrating the interpolated line.
    fn piece_mass(&self, jj: usize, u: f64, v: f64) -> f64 {
        let knots = self.grid.knots();
        if u == knots[jj] && v == knots[jj + 1] {
            return self.segment_mass(jj);
        }
        let w = self.grid.width(jj);
        let at = |x: f64| {
            let lam = (x - knots[jj]) / w;
            (1.0 - lam) * self.phi[jj] + lam * self.phi[jj + 1]
        };
        (v - u) * j(at(u), at(v))
    }

    /// `P_{φ,q}((a, b])`, with `q` counted iff `b = +∞`.
    pub fn interval_prob(&self, a: f64, b: f64) -> f64 {
        let cure = if b == f64::INFINITY { self.q } else { 0.0 };
        self.mass_between(a, b) + cure
    }

    /// `F(x) = ∫_{-∞}^x e^φ`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        self.mass_between(f64::NEG_INFINITY, x)
    }

    /// `S(x) = P((x, ∞])`; tends to `q` as `x → ∞`.
    pub fn survival_at(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return self.q;
        }
        self.interval_prob(x, f64::INFINITY)
    }

    /// Shifts `φ` by `c` and scales `q` by `e^c` so that mass plus `q` is one.
    pub fn normalized(&self) -> Self {
        let c = -(self.total_mass() + self.q).ln();
        self.shifted(c)
    }

    /// `(φ + c, q e^c)`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            phi: self.phi.iter().map(|v| v + c).collect(),
            tail_slope: self.tail_slope,
            q: self.q * c.exp(),
        }
    }

    /// The same fit without its exponential tail.
    pub(crate) fn without_tail(&self) -> Self {
        Self {
            tail_slope: None,
            ..self.clone()
        }
    }

    /// Restriction to the grid without `t_N`.
    pub(crate) fn drop_last_knot(&self) -> Result<Self, ModelError> {
        let n = self.phi.len();
        Ok(Self {
            grid: self.grid.drop_last()?,
            phi: self.phi[..n - 1].to_vec(),
            tail_slope: None,
            q: self.q,
        })
    }

    /// Restriction to the grid without `t_1`.
    pub(crate) fn drop_first_knot(&self) -> Result<Self, ModelError> {
        Ok(Self {
            grid: self.grid.drop_first()?,
            phi: self.phi[1..].to_vec(),
            tail_slope: self.tail_slope,
            q: self.q,
        })
    }

    /// Cumulative masses for repeated interval queries.
    pub fn prefix(&self) -> PrefixMass {
        PrefixMass::new(self)
    }
}

/// Prefix sums of segment masses kept in double-double form, so that
/// differences of nearby cumulative values keep their relative accuracy.
#[derive(Debug, Clone)]
pub struct PrefixMass {
    hi: Vec<f64>,
    lo: Vec<f64>,
    segments: Vec<f64>,
    tail: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

impl PrefixMass {
    fn new(fit: &LogConcaveFit) -> Self {
        let n = fit.grid.len();
        let segments: Vec<f64> = (0..n - 1).map(|j| fit.segment_mass(j)).collect();
        let mut hi = Vec::with_capacity(n);
        let mut lo = Vec::with_capacity(n);
        let (mut h, mut l) = (0.0, 0.0);
        hi.push(0.0);
        lo.push(0.0);
        for &m in &segments {
            let (s, e) = two_sum(h, m);
            h = s;
            l += e;
            hi.push(h);
            lo.push(l);
        }
        Self {
            hi,
            lo,
            segments,
            tail: fit.tail_mass().unwrap_or(0.0),
        }
    }

    /// Mass between knots `i <= k` (indices into the grid).
    pub fn between_knots(&self, i: usize, k: usize) -> f64 {
        if k <= i {
            return 0.0;
        }
        if k == i + 1 {
            return self.segments[i];
        }
        (self.hi[k] - self.hi[i]) + (self.lo[k] - self.lo[i])
    }

    pub fn segment(&self, j: usize) -> f64 {
        self.segments[j]
    }

    pub fn segments(&self) -> &[f64] {
        &self.segments
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn body(&self) -> f64 {
        let n = self.hi.len() - 1;
        self.hi[n] + self.lo[n]
    }

    pub fn total(&self) -> f64 {
        self.body() + self.tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fit(knots: &[f64], phi: &[f64], tail: Option<f64>, q: f64) -> LogConcaveFit {
        LogConcaveFit::new(Grid::new(knots.to_vec()).unwrap(), phi.to_vec(), tail, q).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.0]).is_err());
        assert!(Grid::new(vec![0.0, 0.0]).is_err());
        assert!(Grid::new(vec![1.0, 0.0]).is_err());
        assert!(Grid::new(vec![0.0, f64::INFINITY]).is_err());
        let g = Grid::new(vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(g.segment_of(0.0), 0);
        assert_eq!(g.segment_of(1.0), 1);
        assert_eq!(g.segment_of(3.0), 1);
    }

    #[test]
    fn fit_validation() {
        let g = Grid::new(vec![0.0, 1.0]).unwrap();
        assert!(LogConcaveFit::new(g.clone(), vec![0.0], None, 0.0).is_err());
        assert!(LogConcaveFit::new(g.clone(), vec![0.0, 0.0], Some(0.0), 0.0).is_err());
        assert!(LogConcaveFit::new(g.clone(), vec![0.0, 0.0], None, 1.0).is_err());
        assert!(LogConcaveFit::new(g, vec![0.0, f64::NAN], None, 0.0).is_err());
    }

    #[test]
    fn segment_masses() {
        assert_eq!(fit(&[0.0, 1.0], &[0.0, 0.0], None, 0.0).segment_mass(0), 1.0);
        let f = fit(&[0.0, 1.0], &[0.0, 2f64.ln()], Some(-1.0), 0.0);
        assert_relative_eq!(f.segment_mass(0), 1.0 / 2f64.ln(), max_relative = 1e-14);
        let g = fit(&[0.0, 1.0], &[0.0, 0.0], Some(-1.0), 0.0);
        assert_eq!(g.tail_mass().unwrap(), 1.0);
        assert!(fit(&[0.0, 1.0], &[0.0, 0.0], None, 0.0).tail_mass().is_err());
    }

    #[test]
    fn interval_probabilities() {
        let half = 0.5f64.ln();
        let u = fit(&[0.0, 2.0], &[half, half], None, 0.0);
        assert_relative_eq!(u.interval_prob(0.5, 1.5), 0.5, max_relative = 1e-14);
        assert_relative_eq!(u.interval_prob(0.0, f64::INFINITY), 1.0, max_relative = 1e-14);
        let f = fit(&[0.0, 1.0], &[0.0, 2f64.ln()], None, 0.0);
        let expected = ((0.5 * 2f64.ln()).exp() - 1.0) / 2f64.ln();
        assert_relative_eq!(f.interval_prob(0.0, 0.5), expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 0.5975, epsilon = 1e-3);
    }

    #[test]
    fn evaluation_helpers() {
        let f = fit(&[0.0, 1.0, 2.0], &[-1.0, -0.5, -1.5], None, 0.2);
        assert_eq!(f.density_at(1.0), (-0.5f64).exp());
        assert_eq!(f.density_at(-0.1), 0.0);
        assert_eq!(f.density_at(2.1), 0.0);
        assert_eq!(f.cdf_at(0.0), 0.0);
        assert_eq!(f.survival_at(2.0), 0.2);
        assert_eq!(f.survival_at(f64::INFINITY), 0.2);
        let n = f.normalized();
        assert_relative_eq!(n.total_mass() + n.q(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(n.survival_at(0.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(n.survival_at(1.3), 1.0 - n.cdf_at(1.3), max_relative = 1e-14);
    }

    #[test]
    fn tail_evaluation() {
        let f = fit(&[0.0, 1.0], &[0.0, 0.0], Some(-2.0), 0.0);
        assert_relative_eq!(f.mass_between(1.0, 2.0), (1.0 - (-2f64).exp()) / 2.0);
        assert_relative_eq!(f.log_density_at(3.0), -4.0);
        assert_relative_eq!(f.survival_at(1.5), (-1f64).exp() / 2.0);
    }

    #[test]
    fn concavity_check() {
        assert!(fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.5], Some(-1.0), 0.0).is_concave(0.0));
        assert!(!fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.5], None, 0.0).is_concave(1e-9));
        assert!(!fit(&[0.0, 1.0], &[0.0, -1.0], Some(-0.5), 0.0).is_concave(1e-9));
    }

    #[test]
    fn prefix_matches_direct_sums() {
        let f = fit(&[0.0, 0.5, 1.0, 3.0], &[-40.0, -1.0, 0.0, -2.0], Some(-1.0), 0.0);
        let p = f.prefix();
        assert_relative_eq!(p.between_knots(0, 3), f.mass_between(0.0, 3.0), max_relative = 1e-15);
        assert_relative_eq!(p.total(), f.total_mass(), max_relative = 1e-15);
        assert_eq!(p.between_knots(2, 2), 0.0);
    }

    #[test]
    fn json_round_trip_layout() {
        let f = fit(&[0.0, 1.0], &[0.0, -0.25], None, 0.1);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"knots":[0.0,1.0],"phi":[0.0,-0.25],"tail_slope":null,"q":0.1}"#);
        let back: LogConcaveFit = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<LogConcaveFit>(r#"{"knots":[1.0,0.0],"phi":[0,0],"tail_slope":null,"q":0}"#).is_err());
    }

    proptest! {
        #[test]
        fn interval_prob_is_additive(
            phi in proptest::collection::vec(-5.0f64..2.0, 4),
            a in -0.5f64..3.5, b in -0.5f64..3.5, c in -0.5f64..3.5,
        ) {
            let f = fit(&[0.0, 1.0, 2.0, 3.0], &phi, Some(-0.7), 0.05);
            let mut xs = [a, b, c];
            xs.sort_by(f64::total_cmp);
            let whole = f.interval_prob(xs[0], xs[2]);
            let parts = f.interval_prob(xs[0], xs[1]) + f.interval_prob(xs[1], xs[2]);
            prop_assert!((whole - parts).abs() <= 1e-12);
            let tail = f.interval_prob(xs[1], f64::INFINITY);
            let split = f.interval_prob(xs[1], xs[2]) + f.interval_prob(xs[2], f64::INFINITY);
            prop_assert!((tail - split).abs() <= 1e-12);
        }
    }
}
