use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::plc::{Grid, ModelError};

/// Sorted unique finite endpoints `τ_1 < ... < τ_m` of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid {
    pub taus: Vec<f64>,
    pub has_infinite_right: bool,
}

impl TauGrid {
    pub fn first(&self) -> f64 {
        self.taus[0]
    }

    pub fn last(&self) -> f64 {
        self.taus[self.taus.len() - 1]
    }
}

pub fn compute_tau_grid(d: &Dataset) -> TauGrid {
    let mut taus: Vec<f64> = d
        .observations()
        .iter()
        .flat_map(|o| [o.left(), o.right()])
        .filter(|v| v.is_finite())
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    TauGrid {
        taus,
        has_infinite_right: d.has_right_censored(),
    }
}

/// How gaps between consecutive τ-values are refined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    /// Largest spacing inside a refined gap; `None` means `(τ_m - τ_1) / 200`.
    pub max_spacing: Option<f64>,
    /// Cap on the number of points inserted into one gap.
    pub max_points_per_gap: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            max_spacing: None,
            max_points_per_gap: 50,
        }
    }
}

impl GridPolicy {
    pub fn with_spacing(h: f64) -> Self {
        Self {
            max_spacing: Some(h),
            ..Self::default()
        }
    }
}

/// Knots for the estimator: every τ, plus extra points in those gaps
/// `(τ_j, τ_{j+1})`, `j_1 <= j < j_2`, that meet some observation interval.
/// Here `j_1` is the first index `>= 2` at a left endpoint and `j_2` the last
/// index `<= m - 1` at a finite right endpoint.
pub fn build_estimation_grid(tg: &TauGrid, d: &Dataset, policy: &GridPolicy) -> Result<Grid, ModelError> {
    let taus = &tg.taus;
    let m = taus.len();
    let is_left = |x: f64| d.observations().iter().any(|o| o.left() == x);
    let is_right = |x: f64| d.observations().iter().any(|o| o.right() == x);
    // 0-based: j1 in 1..m, j2 in 0..m-1
    let j1 = (1..m).find(|&j| is_left(taus[j]));
    let j2 = (0..m.saturating_sub(1)).rev().find(|&j| is_right(taus[j]));
    let mut knots = Vec::with_capacity(m);
    let h = policy
        .max_spacing
        .unwrap_or_else(|| (tg.last() - tg.first()) / 200.0);
    for (j, &t) in taus.iter().enumerate() {
        knots.push(t);
        let refine = match (j1, j2) {
            (Some(a), Some(b)) => a < b && a <= j && j < b,
            _ => false,
        };
        if !refine || h <= 0.0 {
            continue;
        }
        let (lo, hi) = (t, taus[j + 1]);
        let covered = d
            .observations()
            .iter()
            .any(|o| o.left() < o.right() && o.left() <= lo && o.right() >= hi);
        if !covered {
            continue;
        }
        let pieces = ((hi - lo) / h).ceil().max(1.0) as usize;
        let pieces = pieces.min(policy.max_points_per_gap + 1);
        for k in 1..pieces {
            let x = lo + (hi - lo) * k as f64 / pieces as f64;
            if x > lo && x < hi {
                knots.push(x);
            }
        }
    }
    Grid::new(knots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn tau_examples() {
        let tg = compute_tau_grid(&Dataset::from_pairs(&[(0.0, 1.0), (1.0, 2.0)]).unwrap());
        assert_eq!(tg.taus, vec![0.0, 1.0, 2.0]);
        assert!(!tg.has_infinite_right);
        let tg = compute_tau_grid(&Dataset::from_pairs(&[(0.0, INF), (1.0, 1.0)]).unwrap());
        assert_eq!(tg.taus, vec![0.0, 1.0]);
        assert!(tg.has_infinite_right);
        let tg = compute_tau_grid(&Dataset::from_pairs(&[(0.0, 3.0), (0.0, 3.0)]).unwrap());
        assert_eq!(tg.taus, vec![0.0, 3.0]);
    }

    #[test]
    fn small_m_is_not_refined() {
        let d = Dataset::from_pairs(&[(0.0, 1.0), (1.0, 2.0), (0.0, 2.0)]).unwrap();
        let g = build_estimation_grid(&compute_tau_grid(&d), &d, &GridPolicy::with_spacing(0.01)).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn j1_not_before_j2_is_not_refined() {
        // left endpoints at 0 and 2, right endpoints at 1 and 3: j1 = 2 (τ=2) > j2 = 1 (τ=1)
        let d = Dataset::from_pairs(&[(0.0, 1.0), (2.0, 3.0), (0.0, 3.0)]).unwrap();
        let g = build_estimation_grid(&compute_tau_grid(&d), &d, &GridPolicy::with_spacing(0.1)).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn refinement_with_spacing() {
        // τ = 0,1,2,3; j1 = τ=1 (a left endpoint), j2 = τ=2 (a right endpoint)
        let d = Dataset::from_pairs(&[(0.0, 2.0), (1.0, 3.0)]).unwrap();
        let g = build_estimation_grid(&compute_tau_grid(&d), &d, &GridPolicy::with_spacing(0.25)).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0, 1.25, 1.5, 1.75, 2.0, 3.0]);
    }

    #[test]
    fn uncovered_gap_is_left_alone() {
        // gap (1,2) lies outside every closed observation interval
        let d = Dataset::from_pairs(&[(0.0, 1.0), (1.0, 1.0), (2.0, 2.0), (2.0, 3.0)]).unwrap();
        let g = build_estimation_grid(&compute_tau_grid(&d), &d, &GridPolicy::with_spacing(0.25)).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn cap_per_gap() {
        let d = Dataset::from_pairs(&[(0.0, 2.0), (1.0, 3.0)]).unwrap();
        let policy = GridPolicy {
            max_spacing: Some(1e-6),
            max_points_per_gap: 4,
        };
        let g = build_estimation_grid(&compute_tau_grid(&d), &d, &policy).unwrap();
        assert_eq!(g.len(), 4 + 4);
    }

    proptest! {
        #[test]
        fn grid_contains_taus_and_increases(
            rows in proptest::collection::vec((0u8..8, 1u8..5, any::<bool>()), 2..10)
        ) {
            let pairs: Vec<(f64, f64)> = rows
                .into_iter()
                .map(|(l, len, inf)| (l as f64, if inf { INF } else { (l + len) as f64 }))
                .collect();
            let d = Dataset::from_pairs(&pairs).unwrap();
            let tg = compute_tau_grid(&d);
            prop_assume!(tg.taus.len() >= 2);
            let g = build_estimation_grid(&tg, &d, &GridPolicy::default()).unwrap();
            prop_assert!(g.knots().windows(2).all(|w| w[0] < w[1]));
            for t in &tg.taus {
                prop_assert!(g.knots().contains(t));
            }
        }
    }
}
