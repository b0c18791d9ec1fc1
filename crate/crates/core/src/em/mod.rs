//! The EM algorithm for the log-concave MLE with an optional cure mass.
//!
//! Each iteration computes the hat-function weights of the conditional
//! measure `M_{φ,q}` (E-step), maximizes the linearized augmented
//! likelihood with [`crate::solver::maximize`] (M-step) and, when a cure
//! mass is allowed, re-optimizes `q` and renormalizes.

mod estep;
mod reduce;

pub use estep::{e_step, lambda, loglik, q_equation, update_q};
pub use reduce::{apply_pseudo_observations, try_domain_reductions, DomainReduction};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    build_estimation_grid, check_existence, classify_degenerate, compute_tau_grid, DegenerateKind,
    DegenerateSolution, Existence, GridPolicy, Support,
};
use crate::data::Dataset;
use crate::plc::{l1_bound, Family, Grid, LogConcaveFit, ModelError};
use crate::solver::{maximize, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum EmError {
    #[error("no maximum-likelihood estimator exists: the exact observation at {witness} lies in every relevant observation interval")]
    NoMle { witness: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("observation {index} has zero probability under the current fit")]
    ZeroProbability { index: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Estimate a cure mass `q` at `+∞`.
    pub allow_cure: bool,
    /// Stop when the L¹ bound between consecutive densities drops below this.
    pub l1_tol: f64,
    pub max_iter: usize,
    /// Weight of the pseudo-observation at `τ_1`.
    pub eps1: f64,
    /// Weight of the pseudo-observation at `τ_m` or `(τ_m, ∞]`.
    pub eps2: f64,
    pub domain_reduction: bool,
    pub grid_policy: GridPolicy,
    /// KKT tolerance of the M-step.
    pub inner_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            allow_cure: false,
            l1_tol: 1e-6,
            max_iter: 10_000,
            eps1: 0.0,
            eps2: 0.0,
            domain_reduction: true,
            grid_policy: GridPolicy::default(),
            inner_tol: 1e-8,
        }
    }
}

/// Largest admissible pseudo-observation weight.
pub const MAX_EPS: f64 = 1e-3;

impl EmConfig {
    pub fn validate(&self) -> Result<(), EmError> {
        let bad = |msg: &str| Err(EmError::Config(msg.to_string()));
        if !(self.l1_tol > 0.0) {
            return bad("l1_tol must be positive");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol must be positive");
        }
        if !(0.0..=MAX_EPS).contains(&self.eps1) || !(0.0..=MAX_EPS).contains(&self.eps2) {
            return bad("eps1 and eps2 must lie in [0, 1e-3]");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if matches!(self.grid_policy.max_spacing, Some(h) if !(h > 0.0)) {
            return bad("grid spacing must be positive");
        }
        Ok(())
    }

    /// Domain reductions are only tried once the L¹ bound is below this.
    pub fn reduction_threshold(&self) -> f64 {
        100.0 * self.l1_tol
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.inner_tol,
            ..SolverConfig::default()
        }
    }
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: f64,
    /// `null` when the grid changed.
    pub l1: Option<f64>,
    pub knots: usize,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub fit: LogConcaveFit,
    /// `Λ(φ, q)` of `fit`.
    pub lambda: f64,
    pub iter: usize,
    /// L¹ bound between the last two iterates, `∞` after a domain change.
    pub last_l1: f64,
    pub reductions: Vec<DomainReduction>,
    pub history: Vec<IterationRecord>,
}

impl EmState {
    pub fn new(fit: LogConcaveFit, d: &Dataset) -> Self {
        let mut state = Self {
            lambda: lambda(&fit, d),
            fit,
            iter: 0,
            last_l1: f64::INFINITY,
            reductions: Vec::new(),
            history: Vec::new(),
        };
        state.record();
        state
    }

    fn record(&mut self) {
        let rec = IterationRecord {
            iter: self.iter,
            lambda: self.lambda,
            l1: self.last_l1.is_finite().then_some(self.last_l1),
            knots: self.fit.grid().len(),
            q: self.fit.q(),
        };
        log::info!(
            target: "logconcure::trace",
            "{}",
            serde_json::to_string(&rec).unwrap_or_default()
        );
        self.history.push(rec);
    }
}

/// Result of [`estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub fit: LogConcaveFit,
    /// EM state, absent when a closed-form special case applied.
    pub state: Option<EmState>,
    pub degenerate: Option<DegenerateSolution>,
    pub converged: bool,
}

/// Re-optimizes `q` and the normalizing shift in turn until both settle.
fn settle_cure(mut fit: LogConcaveFit, d: &Dataset) -> LogConcaveFit {
    for _ in 0..200 {
        let q = update_q(&fit, d);
        let moved = (q - fit.q()).abs();
        fit = fit.with_q(q).normalized();
        if moved <= 1e-15 && (fit.total_mass() + fit.q() - 1.0).abs() <= 1e-14 {
            break;
        }
    }
    fit
}

/// One E-step, M-step and (with a cure mass) `q` update.
pub fn em_iterate(state: EmState, d: &Dataset, cfg: &EmConfig) -> Result<EmState, EmError> {
    let weights = e_step(&state.fit, d)?;
    // the starting shape is strictly concave at every knot, a poor warm start
    let warm = (state.iter > 0).then_some(&state.fit);
    let (next, _) = maximize(state.fit.grid(), &weights, state.fit.q(), warm, &cfg.solver())?;
    let next = if cfg.allow_cure {
        settle_cure(next, d)
    } else {
        next.with_q(0.0).normalized()
    };
    let l1 = l1_bound(&state.fit, &next).unwrap_or(f64::INFINITY);
    let mut out = EmState {
        lambda: lambda(&next, d),
        fit: next,
        iter: state.iter + 1,
        last_l1: l1,
        ..state
    };
    out.record();
    Ok(out)
}

/// A concave starting point: a Gaussian-shaped log-density matching the
/// midpoint-imputed mean and spread, normalized to mass `1 - q⁰`.
fn initial_fit(grid: Grid, family: Family, d: &Dataset, allow_cure: bool) -> Result<LogConcaveFit, ModelError> {
    let (mut mean, mut sq) = (0.0, 0.0);
    for (o, w) in d.iter() {
        let x = if o.is_right_censored() {
            o.left()
        } else {
            0.5 * (o.left() + o.right())
        };
        mean += w * x;
        sq += w * x * x;
    }
    let range = grid.last() - grid.first();
    let sd = (sq - mean * mean).max(0.0).sqrt().max(range / 4.0);
    let phi: Vec<f64> = grid
        .knots()
        .iter()
        .map(|t| -0.5 * ((t - mean) / sd).powi(2))
        .collect();
    let tail = (family == Family::WithTail).then(|| (-(grid.last() - mean) / (sd * sd)).min(-1.0 / sd));
    let q0 = if allow_cure { 0.5 * d.cure_bound() } else { 0.0 };
    let raw = LogConcaveFit::new(grid, phi, tail, 0.0)?;
    let c = ((1.0 - q0) / raw.total_mass()).ln();
    Ok(raw.shifted(c).with_q(q0))
}

/// Computes the MLE of `(φ, q)` (or of `φ` alone when `allow_cure` is off).
pub fn estimate(d: &Dataset, cfg: &EmConfig) -> Result<Estimate, EmError> {
    cfg.validate()?;
    if let Existence::NoMle { witness } = check_existence(d, cfg.allow_cure) {
        return Err(EmError::NoMle { witness });
    }
    if let Some(sol) = classify_degenerate(d) {
        if sol.kind == DegenerateKind::NoMle {
            let witness = match sol.support {
                Support::Point(x) => x,
                Support::Interval { lo, .. } => lo,
            };
            return Err(EmError::NoMle { witness });
        }
        return Ok(Estimate {
            fit: sol.fit.clone().expect("regular special cases carry a fit"),
            state: None,
            degenerate: Some(sol),
            converged: true,
        });
    }
    let tg = compute_tau_grid(d);
    let family = if !cfg.allow_cure && tg.has_infinite_right {
        Family::WithTail
    } else {
        Family::NoTail
    };
    let data = apply_pseudo_observations(d, cfg, family);
    let grid = build_estimation_grid(&tg, d, &cfg.grid_policy)?;
    let mut state = EmState::new(initial_fit(grid, family, d, cfg.allow_cure)?, &data);
    let mut converged = false;
    while state.iter < cfg.max_iter {
        state = em_iterate(state, &data, cfg)?;
        if cfg.domain_reduction {
            let before = state.reductions.len();
            state = try_domain_reductions(state, &data, cfg)?;
            if state.reductions.len() > before {
                continue;
            }
        }
        if state.last_l1 < cfg.l1_tol {
            converged = true;
            break;
        }
    }
    Ok(Estimate {
        fit: state.fit.clone(),
        state: Some(state),
        degenerate: None,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn config_validation() {
        assert!(EmConfig::default().validate().is_ok());
        let cfg = EmConfig {
            eps1: 1e-2,
            ..EmConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(EmError::Config(_))));
        let cfg = EmConfig {
            l1_tol: 0.0,
            ..EmConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn symmetric_intervals_split_evenly() {
        let mut pairs = vec![(0.0, 1.0); 50];
        pairs.extend(vec![(1.0, 2.0); 50]);
        let d = Dataset::from_pairs(&pairs).unwrap();
        let est = estimate(&d, &EmConfig::default()).unwrap();
        assert!(est.converged);
        assert_relative_eq!(est.fit.interval_prob(0.0, 1.0), 0.5, epsilon = 1e-4);
        assert_relative_eq!(est.fit.interval_prob(1.0, 2.0), 0.5, epsilon = 1e-4);
    }

    #[test]
    fn exact_data_converges_after_one_step() {
        let d = Dataset::from_pairs(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (2.5, 2.5)]).unwrap();
        let est = estimate(&d, &EmConfig::default()).unwrap();
        let state = est.state.unwrap();
        assert_eq!(state.iter, 2);
        let loose = EmConfig {
            l1_tol: 1e-2,
            ..EmConfig::default()
        };
        let again = estimate(&d, &loose).unwrap();
        assert_eq!(again.fit, est.fit);
    }

    #[test]
    fn monotone_and_normalized() {
        let d = Dataset::from_pairs(&[
            (0.0, 1.0),
            (0.5, 2.0),
            (1.5, 1.5),
            (1.0, INF),
            (2.0, 3.5),
            (3.0, INF),
            (0.2, 0.9),
        ])
        .unwrap();
        for allow_cure in [false, true] {
            let cfg = EmConfig {
                allow_cure,
                ..EmConfig::default()
            };
            let est = estimate(&d, &cfg).unwrap();
            assert!(est.converged);
            let hist = &est.state.as_ref().unwrap().history;
            for pair in hist.windows(2) {
                assert!(pair[1].lambda >= pair[0].lambda - 1e-8, "{pair:?}");
            }
            assert!((est.fit.total_mass() + est.fit.q() - 1.0).abs() < 1e-6);
            assert!(est.fit.q() <= d.cure_bound());
            assert!(est.fit.is_concave(1e-9));
            if !allow_cure {
                assert_eq!(est.fit.q(), 0.0);
            }
        }
    }

    #[test]
    fn finite_data_has_no_cure_mass() {
        let d = Dataset::from_pairs(&[(0.0, 1.0), (0.5, 2.0), (1.5, 1.5), (2.0, 3.5)]).unwrap();
        let cfg = EmConfig {
            allow_cure: true,
            ..EmConfig::default()
        };
        let est = estimate(&d, &cfg).unwrap();
        assert_eq!(est.fit.q(), 0.0);
        assert_eq!(est.fit.family(), Family::NoTail);
    }

    #[test]
    fn special_cases_bypass_em() {
        let d = Dataset::from_pairs(&[(0.0, 5.0), (1.0, 6.0)]).unwrap();
        let est = estimate(&d, &EmConfig::default()).unwrap();
        assert!(est.state.is_none());
        assert_eq!(est.degenerate.unwrap().kind, DegenerateKind::IntervalMass);
        let d = Dataset::from_pairs(&[(1.5, 1.5), (1.0, 2.0)]).unwrap();
        assert!(matches!(estimate(&d, &EmConfig::default()), Err(EmError::NoMle { witness }) if witness == 1.5));
    }
}
