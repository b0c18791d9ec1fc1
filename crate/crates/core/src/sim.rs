//! Simulation studies with Gamma(3, 1) event times inspected at the points
//! of a rate-one Poisson process, optionally mixed with a cure fraction.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparators::{sup_distance, turnbull, Continuous};
use crate::data::{Dataset, Observation};
use crate::em::{estimate, EmConfig};

/// Probability of never experiencing the event in the cure mixture.
pub const CURE_PROB: f64 = 0.3;
/// Number of inspections in the restricted designs.
pub const MAX_INSPECTIONS: usize = 6;
/// Tolerance of the Turnbull comparator in simulations.
pub const TURNBULL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLaw {
    /// Gamma with shape 3 and rate 1.
    Gamma,
    /// `0.7 Γ(3, 1) + 0.3 δ_∞`.
    CureMixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inspection {
    /// Inspect until the event has happened.
    PoissonRate1,
    /// Inspect at zero and at six later times.
    PoissonRate1MaxSix,
    /// Inspect at six times, the first of them at zero.
    PoissonRate1MaxSixWithOrigin,
}

impl Inspection {
    /// Number of inspection times including the one at zero, if bounded.
    pub fn schedule_len(self) -> Option<usize> {
        match self {
            Inspection::PoissonRate1 => None,
            Inspection::PoissonRate1MaxSix => Some(MAX_INSPECTIONS + 1),
            Inspection::PoissonRate1MaxSixWithOrigin => Some(MAX_INSPECTIONS),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub event_law: EventLaw,
    pub inspection: Inspection,
    pub replications: usize,
    pub seed: u64,
}

impl SimScenario {
    /// Γ(3, 1) events with unrestricted Poisson inspection.
    pub fn gamma_interval(n: usize, replications: usize, seed: u64) -> Self {
        Self {
            n,
            event_law: EventLaw::Gamma,
            inspection: Inspection::PoissonRate1,
            replications,
            seed,
        }
    }

    /// Cure mixture inspected at zero and six later times.
    pub fn gamma_cure(n: usize, replications: usize, seed: u64) -> Self {
        Self {
            n,
            event_law: EventLaw::CureMixture,
            inspection: Inspection::PoissonRate1MaxSix,
            replications,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.replications == 0 {
            return Err("n and replications must be positive".into());
        }
        if self.event_law == EventLaw::CureMixture && self.inspection == Inspection::PoissonRate1 {
            return Err("cured units need a finite inspection schedule".into());
        }
        Ok(())
    }

    /// The cure mass of the event law.
    pub fn true_q(&self) -> f64 {
        match self.event_law {
            EventLaw::Gamma => 0.0,
            EventLaw::CureMixture => CURE_PROB,
        }
    }

    /// `P(X > x)` under the event law.
    pub fn true_survival(&self, x: f64) -> f64 {
        let s = gamma3_survival(x);
        match self.event_law {
            EventLaw::Gamma => s,
            EventLaw::CureMixture => CURE_PROB + (1.0 - CURE_PROB) * s,
        }
    }
}

/// Survival function of Γ(3, 1).
pub fn gamma3_survival(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-x).exp() * (1.0 + x + 0.5 * x * x)
    }
}

/// Unit `unit` of replication `rep`: `(event time, observation)`.
pub fn draw_unit(scn: &SimScenario, rep: usize, unit: usize) -> (f64, Observation) {
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    rng.set_stream(rep as u64);
    rng.set_word_pos((unit as u128) << 32);
    let cured = scn.event_law == EventLaw::CureMixture && rng.gen::<f64>() < CURE_PROB;
    let gamma: f64 = (0..3).map(|_| rng.sample::<f64, _>(Exp1)).sum();
    let x = if cured { f64::INFINITY } else { gamma };
    let obs = match scn.inspection {
        Inspection::PoissonRate1 => {
            let mut prev = 0.0;
            loop {
                let next = prev + rng.sample::<f64, _>(Exp1);
                if x <= next {
                    break Observation::interval(prev, next);
                }
                prev = next;
            }
        }
        Inspection::PoissonRate1MaxSix | Inspection::PoissonRate1MaxSixWithOrigin => {
            let len = scn.inspection.schedule_len().expect("bounded schedule");
            let mut times = [0.0; MAX_INSPECTIONS + 1];
            for j in 1..len {
                times[j] = times[j - 1] + rng.sample::<f64, _>(Exp1);
            }
            match times[..len].iter().position(|&t| x <= t) {
                Some(j) if j > 0 => Observation::interval(times[j - 1], times[j]),
                _ => Observation::right_censored(times[len - 1]),
            }
        }
    };
    (x, obs.expect("inspection times increase"))
}

/// The dataset of one replication.
pub fn generate(scn: &SimScenario, rep: usize) -> Dataset {
    let obs = (0..scn.n).map(|i| draw_unit(scn, rep, i).1).collect();
    Dataset::new(obs).expect("n is positive")
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub sup_s_lc: Option<f64>,
    pub sup_s_tb: f64,
    pub q_err_lc: Option<f64>,
    pub q_err_tb: Option<f64>,
    pub iters: Option<usize>,
    pub knots: Option<usize>,
    pub converged: bool,
    /// Why the log-concave estimate is missing.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenario: SimScenario,
    pub mean_sup_s: f64,
    pub mean_abs_q_err: Option<f64>,
    pub comparator_mean_sup_s: f64,
    pub comparator_mean_abs_q_err: Option<f64>,
    /// Replications without a log-concave estimate, excluded from the means.
    pub failed: usize,
    pub non_converged: usize,
    /// Whether the inspection at time zero counts towards the six.
    pub inspections_include_origin: bool,
    pub per_rep: Vec<RepRecord>,
}

/// `[0, 15]` in steps of `0.01`.
pub fn eval_grid() -> Vec<f64> {
    (0..=1500).map(|k| k as f64 * 0.01).collect()
}

pub fn run_replication(scn: &SimScenario, cfg: &EmConfig, rep: usize, grid: &[f64]) -> RepRecord {
    let d = generate(scn, rep);
    let truth = Continuous(|x: f64| scn.true_survival(x));
    let cure = scn.event_law == EventLaw::CureMixture;
    let tb = turnbull(&d, TURNBULL_TOL);
    let mut rec = RepRecord {
        rep,
        sup_s_lc: None,
        sup_s_tb: sup_distance(&tb, &truth, grid),
        q_err_lc: None,
        q_err_tb: cure.then(|| (tb.mass_at_infinity() - scn.true_q()).abs()),
        iters: None,
        knots: None,
        converged: false,
        failure: None,
    };
    match estimate(&d, cfg) {
        Ok(est) => {
            rec.sup_s_lc = Some(sup_distance(&est.fit, &truth, grid));
            rec.q_err_lc = cure.then(|| (est.fit.q() - scn.true_q()).abs());
            rec.iters = Some(est.state.as_ref().map_or(0, |s| s.iter));
            rec.knots = Some(est.fit.knots().len());
            rec.converged = est.converged;
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for v in values {
        total += v;
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Runs all replications in parallel and aggregates them in order.
pub fn run_study(scn: &SimScenario, cfg: &EmConfig) -> SimSummary {
    let grid = eval_grid();
    let per_rep: Vec<RepRecord> = (0..scn.replications)
        .into_par_iter()
        .map(|rep| run_replication(scn, cfg, rep, &grid))
        .collect();
    summarize(scn, per_rep)
}

pub fn summarize(scn: &SimScenario, per_rep: Vec<RepRecord>) -> SimSummary {
    let ok = || per_rep.iter().filter(|r| r.sup_s_lc.is_some());
    let cure = scn.event_law == EventLaw::CureMixture;
    SimSummary {
        scenario: *scn,
        mean_sup_s: mean(ok().filter_map(|r| r.sup_s_lc)).unwrap_or(f64::NAN),
        mean_abs_q_err: if cure { mean(ok().filter_map(|r| r.q_err_lc)) } else { None },
        comparator_mean_sup_s: mean(per_rep.iter().map(|r| r.sup_s_tb)).unwrap_or(f64::NAN),
        comparator_mean_abs_q_err: if cure { mean(per_rep.iter().filter_map(|r| r.q_err_tb)) } else { None },
        failed: per_rep.iter().filter(|r| r.sup_s_lc.is_none()).count(),
        non_converged: ok().filter(|r| !r.converged).count(),
        inspections_include_origin: scn.inspection == Inspection::PoissonRate1MaxSixWithOrigin,
        per_rep,
    }
}

/// Writes `rep,sup_S_lc,sup_S_tb,q_err_lc,q_err_tb,iters,knots`.
pub fn write_rep_csv<W: Write>(out: W, summary: &SimSummary) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rep", "sup_S_lc", "sup_S_tb", "q_err_lc", "q_err_tb", "iters", "knots"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &summary.per_rep {
        w.write_record([
            r.rep.to_string(),
            opt(r.sup_s_lc),
            r.sup_s_tb.to_string(),
            opt(r.q_err_lc),
            opt(r.q_err_tb),
            r.iters.map(|v| v.to_string()).unwrap_or_default(),
            r.knots.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
