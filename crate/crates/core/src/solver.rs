//! Maximization of `Σ w_j ψ(t_j) + w_tail ψ'(t_N+) - ∫ e^ψ - q + 1` over
//! concave functions that are linear between the knots of a grid, optionally
//! followed by an exponential tail.
//!
//! The solver is an active-set method. A knot is *free* when ψ may bend
//! there; between consecutive free knots ψ is linear, so the subproblem on
//! the free knots has the same form as the full problem on a coarser grid
//! with hat-aggregated weights, and its Hessian is tridiagonal. Newton steps
//! with backtracking solve each subproblem; a step that would create a
//! convex kink stops at the boundary and fixes that knot. At a subproblem
//! optimum the directional derivatives for bending at each fixed knot act
//! as Lagrange multipliers; the knot with the largest positive one is freed.
//!
//! Internally the grid is mapped onto `[0, 1]` (`ψ + ln(span)`,
//! `s · span`), which leaves the problem invariant and makes tolerances
//! scale free.

use thiserror::Error;

use crate::plc::{Family, Grid, LogConcaveFit, ModelError, SegmentMoments};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    /// Weights of `ψ(t_1), ..., ψ(t_N)`.
    pub w: Vec<f64>,
    /// Weight of the tail slope `ψ'(t_N+)`; zero for `NoTail`.
    pub w_tail: f64,
    pub family: Family,
}

impl WeightVector {
    /// `Σ w_j`, which equals the mass of the maximizer.
    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Bound on the KKT residual (scale-free units).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub objective: f64,
    pub kkt_residual: f64,
    /// Indices of knots where ψ may bend (always includes both ends).
    pub active_knots: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("weight vector has {weights} entries for {knots} knots")]
    LengthMismatch { weights: usize, knots: usize },
    #[error("candidate family does not match the weight vector")]
    FamilyMismatch,
    #[error("weights must be finite and non-negative")]
    InvalidWeights,
    #[error("weights are concentrated on a single point; no maximizer exists")]
    DegenerateWeights,
    #[error("no convergence after {iterations} iterations (KKT residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Smallest admissible standardized tail slope magnitude.
const TAIL_BARRIER: f64 = 1e-8;
const KINK_TOL: f64 = 1e-10;
/// Rounding-level convexity a warm start may carry before re-projection.
const WARM_CONCAVITY_TOL: f64 = 1e-7;
const CHORD_TOL: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;

fn check_inputs(grid: &Grid, w: &WeightVector) -> Result<(), SolverError> {
    if w.w.len() != grid.len() {
        return Err(SolverError::LengthMismatch {
            weights: w.w.len(),
            knots: grid.len(),
        });
    }
    if w.w.iter().chain([&w.w_tail]).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SolverError::InvalidWeights);
    }
    if w.family == Family::NoTail && w.w_tail != 0.0 {
        return Err(SolverError::InvalidWeights);
    }
    Ok(())
}

/// `Λ_{φ,q}(ψ)` for a candidate on `grid`.
pub fn objective(grid: &Grid, w: &WeightVector, q: f64, cand: &LogConcaveFit) -> Result<f64, SolverError> {
    check_inputs(grid, w)?;
    if cand.knots() != grid.knots() {
        return Err(ModelError::GridMismatch.into());
    }
    if cand.family() != w.family {
        return Err(SolverError::FamilyMismatch);
    }
    let phi = cand.phi();
    let linear: f64 = w.w.iter().zip(phi).map(|(a, b)| a * b).sum();
    let tail = cand.tail_slope().map_or(0.0, |s| w.w_tail * s);
    Ok(linear + tail - cand.total_mass() - q + 1.0)
}

/// Gradient of [`objective`] in `(ψ(t_1), ..., ψ(t_N)[, ψ'(t_N+)])`.
pub fn gradient(grid: &Grid, w: &WeightVector, _q: f64, cand: &LogConcaveFit) -> Result<Vec<f64>, SolverError> {
    check_inputs(grid, w)?;
    if cand.knots() != grid.knots() {
        return Err(ModelError::GridMismatch.into());
    }
    if cand.family() != w.family {
        return Err(SolverError::FamilyMismatch);
    }
    let phi = cand.phi();
    let n = phi.len();
    let mut g = w.w.clone();
    for k in 0..n - 1 {
        let m = SegmentMoments::new(phi[k], phi[k + 1]);
        let width = grid.width(k);
        g[k] -= width * m.j10;
        g[k + 1] -= width * m.j01;
    }
    if let Some(s) = cand.tail_slope() {
        let e = phi[n - 1].exp();
        g[n - 1] -= e / -s;
        g.push(w.w_tail - e / (s * s));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TailMode {
    None,
    /// Tail slope is an independent variable.
    Free,
    /// Tail continues the last segment.
    Tied,
}

/// The problem restricted to functions that are linear between free knots.
struct Reduced {
    delta: Vec<f64>,
    weights: Vec<f64>,
    w_tail: f64,
    mode: TailMode,
}

struct Derivatives {
    value: f64,
    grad: Vec<f64>,
    /// Tridiagonal Hessian of the negated objective.
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Reduced {
    fn coarse(&self) -> usize {
        self.weights.len()
    }

    fn nvar(&self) -> usize {
        self.coarse() + usize::from(self.mode == TailMode::Free)
    }

    fn tail_slope(&self, x: &[f64]) -> f64 {
        let r = self.coarse();
        match self.mode {
            TailMode::Free => x[r],
            _ => (x[r - 1] - x[r - 2]) / self.delta[r - 2],
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = self.coarse();
        if x.iter().any(|v| !v.is_finite() || *v > 700.0) {
            return f64::NEG_INFINITY;
        }
        let mut f = 0.0;
        for i in 0..r {
            f += self.weights[i] * x[i];
        }
        for i in 0..r - 1 {
            f -= self.delta[i] * crate::plc::j(x[i], x[i + 1]);
        }
        if self.mode != TailMode::None {
            let s = self.tail_slope(x);
            if !(s <= -TAIL_BARRIER) {
                return f64::NEG_INFINITY;
            }
            f += self.w_tail * s - x[r - 1].exp() / -s;
        }
        f
    }

    fn derivatives(&self, x: &[f64]) -> Derivatives {
        let r = self.coarse();
        let nv = self.nvar();
        let mut grad = vec![0.0; nv];
        let mut diag = vec![0.0; nv];
        let mut off = vec![0.0; nv.saturating_sub(1)];
        let mut value = 0.0;
        for i in 0..r {
            grad[i] = self.weights[i];
            value += self.weights[i] * x[i];
        }
        for i in 0..r - 1 {
            let m = SegmentMoments::new(x[i], x[i + 1]);
            let d = self.delta[i];
            value -= d * m.j;
            grad[i] -= d * m.j10;
            grad[i + 1] -= d * m.j01;
            diag[i] += d * m.j20;
            diag[i + 1] += d * m.j02;
            off[i] += d * m.j11;
        }
        if self.mode != TailMode::None {
            let s = self.tail_slope(x);
            let e = x[r - 1].exp();
            let t = e / -s;
            let t_s = e / (s * s);
            let t_ss = -2.0 * e / (s * s * s);
            value += self.w_tail * s - t;
            let f_s = self.w_tail - t_s;
            match self.mode {
                TailMode::Free => {
                    grad[r - 1] -= t;
                    grad[r] += f_s;
                    diag[r - 1] += t;
                    off[r - 1] += t_s;
                    diag[r] += t_ss;
                }
                TailMode::Tied => {
                    let inv = 1.0 / self.delta[r - 2];
                    grad[r - 1] += -t + f_s * inv;
                    grad[r - 2] -= f_s * inv;
                    diag[r - 2] += inv * inv * t_ss;
                    off[r - 2] += -inv * t_s - inv * inv * t_ss;
                    diag[r - 1] += t + 2.0 * inv * t_s + inv * inv * t_ss;
                }
                TailMode::None => unreachable!(),
            }
        }
        Derivatives {
            value,
            grad,
            diag,
            off,
        }
    }

    /// Concavity constraints `c(x) <= 0` on free interior knots (and the
    /// free tail), as `(coarse index, value)`; index `r` is the tail.
    fn constraints(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let r = self.coarse();
        let slope = |i: usize| (x[i + 1] - x[i]) / self.delta[i];
        let mut out: Vec<(usize, f64)> = (1..r - 1).map(|i| (i, slope(i) - slope(i - 1))).collect();
        if self.mode == TailMode::Free {
            out.push((r, x[r] - slope(r - 2)));
        }
        out
    }
}

/// Solves a symmetric positive definite tridiagonal system in place.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut l = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        if i > 0 {
            l[i - 1] = off[i - 1] / d[i - 1];
            d[i] -= l[i - 1] * off[i - 1];
        }
        if !(d[i] > 0.0) || !d[i].is_finite() {
            return None;
        }
    }
    let mut y = rhs.to_vec();
    for i in 1..n {
        y[i] -= l[i - 1] * y[i - 1];
    }
    for i in 0..n {
        y[i] /= d[i];
    }
    for i in (0..n - 1).rev() {
        y[i] -= l[i] * y[i + 1];
    }
    Some(y)
}

/// Newton direction, damped when curvature underflows (log-density values
/// far below the mode make some diagonal entries vanish).
fn newton_direction(der: &Derivatives) -> Option<Vec<f64>> {
    if let Some(dir) = solve_tridiagonal(&der.diag, &der.off, &der.grad) {
        return Some(dir);
    }
    let scale = der.diag.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut mu = 1e-12 * scale;
    for _ in 0..12 {
        let damped: Vec<f64> = der.diag.iter().map(|v| v + mu).collect();
        if let Some(dir) = solve_tridiagonal(&damped, &der.off, &der.grad) {
            return Some(dir);
        }
        mu *= 100.0;
    }
    None
}

/// Concavity up to rounding, either relative to the slopes involved or as
/// the depth of `φ_j` below the chord of its neighbours. The second test
/// matters when two knots are only a few ulps apart.
fn nearly_concave(f: &LogConcaveFit) -> bool {
    let (t, phi) = (f.knots(), f.phi());
    let n = t.len();
    let ok = |right: f64, left: f64| right <= left + WARM_CONCAVITY_TOL * (1.0 + left.abs().max(right.abs()));
    let interior = |j: usize| {
        let (wl, wr) = (t[j] - t[j - 1], t[j + 1] - t[j]);
        let chord = (wr * phi[j - 1] + wl * phi[j + 1]) / (wl + wr);
        ok(f.slope(j), f.slope(j - 1)) || chord - phi[j] <= CHORD_TOL * (1.0 + phi[j].abs())
    };
    (1..n - 1).all(interior) && f.tail_slope().map_or(true, |s| ok(s, f.slope(n - 2)))
}

/// Working state on the standardized grid.
struct Work<'a> {
    u: Vec<f64>,
    w: &'a [f64],
    w_tail: f64,
    tail: bool,
    psi: Vec<f64>,
    s: f64,
    free: Vec<bool>,
    tied: bool,
}

impl Work<'_> {
    fn free_indices(&self) -> Vec<usize> {
        (0..self.u.len()).filter(|&k| self.free[k]).collect()
    }

    fn mode(&self) -> TailMode {
        match (self.tail, self.tied) {
            (false, _) => TailMode::None,
            (true, false) => TailMode::Free,
            (true, true) => TailMode::Tied,
        }
    }

    fn reduced(&self, idx: &[usize]) -> Reduced {
        let mut weights = vec![0.0; idx.len()];
        for piece in 0..idx.len() - 1 {
            let (a, b) = (idx[piece], idx[piece + 1]);
            let width = self.u[b] - self.u[a];
            weights[piece] += self.w[a];
            for k in a + 1..b {
                let lam = (self.u[k] - self.u[a]) / width;
                weights[piece] += (1.0 - lam) * self.w[k];
                weights[piece + 1] += lam * self.w[k];
            }
        }
        let last = idx.len() - 1;
        weights[last] += self.w[idx[last]];
        Reduced {
            delta: idx.windows(2).map(|p| self.u[p[1]] - self.u[p[0]]).collect(),
            weights,
            w_tail: self.w_tail,
            mode: self.mode(),
        }
    }

    fn coordinates(&self, idx: &[usize]) -> Vec<f64> {
        let mut x: Vec<f64> = idx.iter().map(|&k| self.psi[k]).collect();
        if self.mode() == TailMode::Free {
            x.push(self.s);
        }
        x
    }

    /// Writes coarse coordinates back to the full grid by interpolation.
    fn set_coordinates(&mut self, idx: &[usize], red: &Reduced, x: &[f64]) {
        for piece in 0..idx.len() - 1 {
            let (a, b) = (idx[piece], idx[piece + 1]);
            let width = self.u[b] - self.u[a];
            self.psi[a] = x[piece];
            for k in a + 1..b {
                let lam = (self.u[k] - self.u[a]) / width;
                self.psi[k] = (1.0 - lam) * x[piece] + lam * x[piece + 1];
            }
        }
        let last = idx.len() - 1;
        self.psi[idx[last]] = x[last];
        if self.tail {
            self.s = red.tail_slope(x);
        }
    }

    /// Full-grid gradient and tail-slope gradient.
    fn full_gradient(&self) -> (Vec<f64>, f64) {
        let n = self.u.len();
        let mut g = self.w.to_vec();
        for k in 0..n - 1 {
            let m = SegmentMoments::new(self.psi[k], self.psi[k + 1]);
            let width = self.u[k + 1] - self.u[k];
            g[k] -= width * m.j10;
            g[k + 1] -= width * m.j01;
        }
        let mut g_s = 0.0;
        if self.tail {
            let e = self.psi[n - 1].exp();
            g[n - 1] -= e / -self.s;
            g_s = self.w_tail - e / (self.s * self.s);
        }
        (g, g_s)
    }

    /// Largest multiplier overall, and the largest among fixed knots (and a
    /// tied tail) not in `skip`, with its location; `None` means the tail.
    fn best_release(&self, skip: &[usize]) -> (f64, f64, Option<Option<usize>>) {
        let n = self.u.len();
        let (g, g_s) = self.full_gradient();
        let tail_term = if self.tail { g_s } else { 0.0 };
        let mut overall = 0.0f64;
        let mut best = (0.0, None);
        let (mut s0, mut s1) = (0.0, 0.0);
        for k in (1..n - 1).rev() {
            s0 += g[k + 1];
            s1 += self.u[k + 1] * g[k + 1];
            if self.free[k] {
                continue;
            }
            let lam = -(s1 - self.u[k] * s0) - tail_term;
            overall = overall.max(lam);
            if lam > best.0 && !skip.contains(&k) {
                best = (lam, Some(Some(k)));
            }
        }
        if self.tail && self.tied {
            overall = overall.max(-g_s);
            if -g_s > best.0 && !skip.contains(&n) {
                best = (-g_s, Some(None));
            }
        }
        (overall, best.0, best.1)
    }
}

/// Maximizes `Λ_{φ,q}` over concave piecewise-linear `ψ` on `grid`.
///
/// `init` is used as a warm start when it lives on the same grid and is
/// concave; otherwise the start is a flat log-density (with a unit-rate tail
/// on the standardized scale) carrying mass `Σ w_j`.
pub fn maximize(
    grid: &Grid,
    w: &WeightVector,
    q: f64,
    init: Option<&LogConcaveFit>,
    cfg: &SolverConfig,
) -> Result<(LogConcaveFit, SolverReport), SolverError> {
    check_inputs(grid, w)?;
    let positive = w.w.iter().filter(|v| **v > 0.0).count() + usize::from(w.w_tail > 0.0);
    if positive < 2 {
        return Err(SolverError::DegenerateWeights);
    }
    let n = grid.len();
    let t0 = grid.first();
    let span = grid.last() - t0;
    let log_span = span.ln();
    let tail = w.family == Family::WithTail;
    let total = w.total();

    let mut work = Work {
        u: grid.knots().iter().map(|t| (t - t0) / span).collect(),
        w: &w.w,
        w_tail: w.w_tail / span,
        tail,
        psi: vec![0.0; n],
        s: -1.0,
        free: vec![false; n],
        tied: false,
    };
    work.free[0] = true;
    work.free[n - 1] = true;

    let warm = init.filter(|f| f.knots() == grid.knots() && nearly_concave(f));
    match warm {
        Some(f) => {
            work.psi = f.phi().iter().map(|v| v + log_span).collect();
            for k in 1..n - 1 {
                let left = (work.psi[k] - work.psi[k - 1]) / (work.u[k] - work.u[k - 1]);
                let right = (work.psi[k + 1] - work.psi[k]) / (work.u[k + 1] - work.u[k]);
                // kinks at rounding level come from interpolated fixed knots
                work.free[k] = right < left - KINK_TOL * (1.0 + left.abs());
            }
            if tail {
                let last = (work.psi[n - 1] - work.psi[n - 2]) / (work.u[n - 1] - work.u[n - 2]);
                match f.tail_slope() {
                    Some(s) if s * span < last => work.s = s * span,
                    Some(_) => {
                        work.tied = true;
                        work.s = last;
                    }
                    None => work.s = last.min(-1.0),
                }
                if work.s > -TAIL_BARRIER {
                    work.tied = false;
                    work.s = -1.0_f64.min(last);
                }
            }
            // re-project onto the chosen free set
            let idx = work.free_indices();
            let red = work.reduced(&idx);
            let x = work.coordinates(&idx);
            work.set_coordinates(&idx, &red, &x);
        }
        None => {
            let level = if tail { (total / 2.0).ln() } else { total.ln() };
            work.psi = vec![level; n];
            work.s = -1.0;
        }
    }

    let tol = cfg.tol;
    // Newton runs well below `tol` so that multipliers are reliable
    let inner = tol * 1e-3;
    let mut iterations = 0;
    let mut stalls = 0;
    let mut kkt = f64::INFINITY;
    // releases undone by a zero step; `n` stands for the tail
    let mut tabu: Vec<usize> = Vec::new();
    let mut released: Option<usize> = None;
    loop {
        if iterations >= cfg.max_iter {
            return Err(SolverError::NonConvergence {
                iterations,
                residual: kkt,
            });
        }
        iterations += 1;
        let idx = work.free_indices();
        let red = work.reduced(&idx);
        let x = work.coordinates(&idx);
        let der = red.derivatives(&x);
        let gnorm = der.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= inner || stalls > 0 {
            let (overall, lam, at) = work.best_release(&tabu);
            kkt = gnorm.max(overall);
            if overall <= tol || stalls > 1 {
                break;
            }
            if gnorm <= inner {
                match at {
                    Some(Some(k)) => {
                        work.free[k] = true;
                        released = Some(k);
                    }
                    Some(None) => {
                        work.tied = false;
                        released = Some(n);
                    }
                    None => break,
                }
                debug_assert!(lam > 0.0);
                stalls = 0;
                continue;
            }
        }
        let Some(dir) = newton_direction(&der) else {
            return Err(SolverError::NonConvergence {
                iterations,
                residual: gnorm,
            });
        };
        let slope: f64 = dir.iter().zip(&der.grad).map(|(a, b)| a * b).sum();
        // longest step that keeps the free kinks concave
        let cons = red.constraints(&x);
        let dcons = red.constraints(&dir);
        let mut step_max = f64::INFINITY;
        let mut blocking = None;
        for ((i, c), (_, dc)) in cons.iter().zip(&dcons) {
            if *dc > 0.0 {
                let lim = (-c / dc).max(0.0);
                if lim < step_max {
                    step_max = lim;
                    blocking = Some(*i);
                }
            }
        }
        let mut step = step_max.min(1.0);
        let mut hit = step_max <= 1.0;
        let mut accepted = None;
        if step > 0.0 {
            loop {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
                let f = red.value(&trial);
                let precise = slope < 1e-13 && f >= der.value - 1e-13 * (1.0 + der.value.abs());
                if f.is_finite() && (f >= der.value + ARMIJO * step * slope || precise) {
                    accepted = Some(trial);
                    break;
                }
                step *= 0.5;
                hit = false;
                if step < 1e-14 {
                    break;
                }
            }
        }
        match accepted {
            Some(next) => {
                work.set_coordinates(&idx, &red, &next);
                stalls = 0;
                tabu.clear();
                released = None;
            }
            None if hit && step_max == 0.0 => {
                let blocked = blocking.map(|i| if i == red.coarse() { n } else { idx[i] });
                if blocked.is_some() && blocked == released {
                    tabu.extend(released.take());
                }
            }
            None => {
                stalls += 1;
                continue;
            }
        }
        if hit {
            match blocking {
                Some(i) if i == red.coarse() => {
                    work.tied = true;
                }
                Some(i) => work.free[idx[i]] = false,
                None => {}
            }
            let idx = work.free_indices();
            let red = work.reduced(&idx);
            let x = work.coordinates(&idx);
            work.set_coordinates(&idx, &red, &x);
        }
    }

    let phi: Vec<f64> = work.psi.iter().map(|v| v - log_span).collect();
    let tail_slope = tail.then(|| work.s / span);
    let fit = LogConcaveFit::new(grid.clone(), phi, tail_slope, q.clamp(0.0, 1.0 - f64::EPSILON))?;
    let report = SolverReport {
        objective: objective(grid, w, q, &fit)?,
        kkt_residual: kkt,
        active_knots: work.free_indices(),
        iterations,
    };
    Ok((fit, report))
}
