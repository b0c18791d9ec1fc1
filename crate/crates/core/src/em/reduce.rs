use serde::{Deserialize, Serialize};

use crate::data::{compute_tau_grid, Dataset, Observation};
use crate::plc::{Family, LogConcaveFit};

use super::estep::MassIndex;
use super::{em_iterate, lambda, EmConfig, EmError, EmState};

/// A restriction of the candidate domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainReduction {
    /// The exponential tail was removed.
    DropTail { iter: usize },
    /// The right end knot was removed.
    DropLastKnot { iter: usize, knot: f64 },
    /// The left end knot was removed.
    DropFirstKnot { iter: usize, knot: f64 },
}

/// Adds the low-weight pseudo-observations `{τ_1}` and `(τ_m, ∞]` (with a
/// tail) or `{τ_m}` (without), unless equal observations are present.
/// Original weights are scaled by `n / (ε₁ + n + ε₂)`.
pub fn apply_pseudo_observations(d: &Dataset, cfg: &EmConfig, family: Family) -> Dataset {
    if cfg.eps1 == 0.0 && cfg.eps2 == 0.0 {
        return d.clone();
    }
    let tg = compute_tau_grid(d);
    let n = d.len() as f64;
    let mut obs: Vec<Observation> = d.observations().to_vec();
    let mut weights: Vec<f64> = d.weights().iter().map(|w| w * n).collect();
    let (first, last) = (tg.first(), tg.last());
    let present = |o: Observation| d.observations().contains(&o);
    if cfg.eps1 > 0.0 {
        let o = Observation::exact(first).expect("finite endpoint");
        if !present(o) {
            obs.push(o);
            weights.push(cfg.eps1);
        }
    }
    if cfg.eps2 > 0.0 {
        let o = match family {
            Family::WithTail => Observation::right_censored(last),
            Family::NoTail => Observation::exact(last),
        }
        .expect("finite endpoint");
        if !present(o) {
            obs.push(o);
            weights.push(cfg.eps2);
        }
    }
    Dataset::with_weights(obs, weights).expect("positive weights")
}

/// The rule that fires for the current iterate, if any.
fn reduction_for(fit: &LogConcaveFit, d: &Dataset, iter: usize) -> Option<DomainReduction> {
    let knots = fit.knots();
    let n = knots.len();
    let idx = MassIndex::new(fit);
    // ties where the sum reaches exactly one are treated as firing
    let holds = |terms: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut total = 0.0;
        for (w, pi) in terms {
            if !(pi > 0.0) {
                return false;
            }
            total += w / pi;
        }
        total <= 1.0
    };
    match fit.family() {
        Family::WithTail => {
            // the probability of (L_i, t_{N-1}] only; conservative near t_N
            let cut = knots[n.saturating_sub(2)];
            let mut terms = d
                .iter()
                .filter(|(o, _)| o.is_right_censored())
                .map(|(o, w)| (w, idx.mass(o.left(), cut)));
            holds(&mut terms).then_some(DomainReduction::DropTail { iter })
        }
        Family::NoTail if n > 2 => {
            let q = fit.q();
            let cure = |o: &Observation| if o.is_right_censored() { q } else { 0.0 };
            let (t1, t2, tm1, tn) = (knots[0], knots[1], knots[n - 2], knots[n - 1]);
            if d.exact_weight_at(tn) == 0.0 {
                let mut terms = d
                    .iter()
                    .filter(|(o, _)| o.left() < tn && tn <= o.right())
                    .map(|(o, w)| (w, idx.mass(o.left(), tm1) + cure(o)));
                if holds(&mut terms) {
                    return Some(DomainReduction::DropLastKnot { iter, knot: tn });
                }
            }
            if d.exact_weight_at(t1) == 0.0 {
                let mut terms = d
                    .iter()
                    .filter(|(o, _)| o.left() <= t1 && t1 < o.right())
                    .map(|(o, w)| (w, idx.mass(t2, o.right()) + cure(o)));
                if holds(&mut terms) {
                    return Some(DomainReduction::DropFirstKnot { iter, knot: t1 });
                }
            }
            None
        }
        Family::NoTail => None,
    }
}

/// Applies at most one domain reduction when the iterate is close to
/// convergence, followed by a fresh EM step on the reduced domain.
pub fn try_domain_reductions(state: EmState, d: &Dataset, cfg: &EmConfig) -> Result<EmState, EmError> {
    if !(state.last_l1 < cfg.reduction_threshold()) {
        return Ok(state);
    }
    let Some(rule) = reduction_for(&state.fit, d, state.iter) else {
        return Ok(state);
    };
    let fit = match rule {
        DomainReduction::DropTail { .. } => state.fit.without_tail(),
        DomainReduction::DropLastKnot { .. } => state.fit.drop_last_knot()?,
        DomainReduction::DropFirstKnot { .. } => state.fit.drop_first_knot()?,
    };
    let mut reduced = EmState {
        lambda: lambda(&fit, d),
        fit,
        last_l1: f64::INFINITY,
        ..state
    };
    reduced.reductions.push(rule);
    reduced.record();
    let mut next = em_iterate(reduced, d, cfg)?;
    next.last_l1 = f64::INFINITY;
    Ok(next)
}
