//! Censored observations, file ingestion and the checks that precede fitting.

mod degenerate;
mod grid;
mod load;

pub use degenerate::{classify_degenerate, DegenerateKind, DegenerateSolution, Support};
pub use grid::{build_estimation_grid, compute_tau_grid, GridPolicy, TauGrid};
pub use load::{load_dataset, parse_dataset, InputFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: left endpoint {left} exceeds right endpoint {right}")]
    Reversed { row: usize, left: f64, right: f64 },
    #[error("row {row}: left endpoint must be finite")]
    NonFiniteLeft { row: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("weights must be positive, finite and match the observations")]
    InvalidWeights,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One censored datum: the exact value `L = R`, or the interval `(L, R]`
/// with `R` possibly `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    left: f64,
    right: f64,
}

impl Observation {
    pub fn new(left: f64, right: f64) -> Result<Self, DataError> {
        if !left.is_finite() {
            return Err(DataError::NonFiniteLeft { row: 0 });
        }
        if right.is_nan() || left > right {
            return Err(DataError::Reversed {
                row: 0,
                left,
                right,
            });
        }
        Ok(Self { left, right })
    }

    pub fn exact(x: f64) -> Result<Self, DataError> {
        Self::new(x, x)
    }

    pub fn interval(left: f64, right: f64) -> Result<Self, DataError> {
        Self::new(left, right)
    }

    pub fn right_censored(left: f64) -> Result<Self, DataError> {
        Self::new(left, f64::INFINITY)
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn is_exact(&self) -> bool {
        self.left == self.right
    }

    pub fn is_right_censored(&self) -> bool {
        self.right == f64::INFINITY
    }

    /// `x ∈ [L, R]`
    pub fn closure_contains(&self, x: f64) -> bool {
        self.left <= x && x <= self.right
    }
}

/// Observations with positive weights summing to one (uniform by default).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    weights: Vec<f64>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::Empty);
        }
        let w = 1.0 / observations.len() as f64;
        let weights = vec![w; observations.len()];
        Ok(Self {
            observations,
            weights,
        })
    }

    /// Weighted dataset; weights are rescaled to sum to one.
    pub fn with_weights(observations: Vec<Observation>, weights: Vec<f64>) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::Empty);
        }
        if weights.len() != observations.len() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(DataError::InvalidWeights);
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            observations,
            weights,
        })
    }

    /// Builds from `(left, right)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, DataError> {
        let obs = pairs
            .iter()
            .enumerate()
            .map(|(row, &(l, r))| Observation::new(l, r).map_err(|e| e.at_row(row + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(obs)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Observation, f64)> + '_ {
        self.observations.iter().zip(self.weights.iter().copied())
    }

    pub fn has_right_censored(&self) -> bool {
        self.observations.iter().any(Observation::is_right_censored)
    }

    /// `q̄`, the total weight of observations with `R = ∞`.
    pub fn cure_bound(&self) -> f64 {
        self.iter()
            .filter(|(o, _)| o.is_right_censored())
            .map(|(_, w)| w)
            .sum()
    }

    /// Total weight of exact observations at `x`.
    pub fn exact_weight_at(&self, x: f64) -> f64 {
        self.iter()
            .filter(|(o, _)| o.is_exact() && o.left == x)
            .map(|(_, w)| w)
            .sum()
    }
}

impl DataError {
    fn at_row(self, row: usize) -> Self {
        match self {
            DataError::Reversed { left, right, .. } => DataError::Reversed { row, left, right },
            DataError::NonFiniteLeft { .. } => DataError::NonFiniteLeft { row },
            other => other,
        }
    }
}

/// Outcome of the existence check for the maximum-likelihood estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Existence {
    Exists,
    /// The likelihood is unbounded; the witness is an exact observation
    /// contained in every closed observation interval (or, with a cure mass,
    /// in every interval that is bounded on the right).
    NoMle { witness: f64 },
}

/// Checks whether a maximizer exists, with (`allow_cure`) or without a cure mass.
pub fn check_existence(d: &Dataset, allow_cure: bool) -> Existence {
    for x in d.observations().iter().filter(|o| o.is_exact()).map(|o| o.left) {
        let traps = d
            .observations()
            .iter()
            .all(|o| o.closure_contains(x) || (allow_cure && o.is_right_censored()));
        if traps {
            return Existence::NoMle { witness: x };
        }
    }
    Existence::Exists
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn observation_invariants() {
        assert!(Observation::new(2.0, 1.0).is_err());
        assert!(Observation::new(f64::NEG_INFINITY, 1.0).is_err());
        assert!(Observation::new(f64::NAN, 1.0).is_err());
        assert!(Observation::exact(1.5).unwrap().is_exact());
        assert!(Observation::right_censored(2.0).unwrap().is_right_censored());
    }

    #[test]
    fn weights_are_normalized() {
        let d = Dataset::with_weights(
            vec![Observation::exact(1.0).unwrap(), Observation::exact(2.0).unwrap()],
            vec![1.0, 3.0],
        )
        .unwrap();
        assert_eq!(d.weights(), &[0.25, 0.75]);
        assert!(Dataset::new(vec![]).is_err());
        assert!(Dataset::with_weights(vec![Observation::exact(1.0).unwrap()], vec![0.0]).is_err());
    }

    #[test]
    fn existence_examples() {
        let d = Dataset::from_pairs(&[(1.5, 1.5), (1.0, 2.0), (0.0, 3.0)]).unwrap();
        assert_eq!(check_existence(&d, false), Existence::NoMle { witness: 1.5 });
        let d = Dataset::from_pairs(&[(1.5, 1.5), (2.0, 3.0)]).unwrap();
        assert_eq!(check_existence(&d, false), Existence::Exists);
        let d = Dataset::from_pairs(&[(1.5, 1.5), (2.0, INF)]).unwrap();
        assert_eq!(check_existence(&d, true), Existence::NoMle { witness: 1.5 });
        assert_eq!(check_existence(&d, false), Existence::Exists);
    }

    fn small_dataset() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0u8..5, 0u8..4, any::<bool>()), 1..6).prop_map(|rows| {
            rows.into_iter()
                .map(|(l, len, inf)| {
                    let l = l as f64;
                    let r = if inf && len > 0 { INF } else { l + len as f64 };
                    (l, r)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn cure_condition_is_weaker(pairs in small_dataset()) {
            let d = Dataset::from_pairs(&pairs).unwrap();
            if let Existence::NoMle { .. } = check_existence(&d, false) {
                let with_cure = check_existence(&d, true);
                let trapped = matches!(with_cure, Existence::NoMle { .. });
                prop_assert!(trapped);
            }
        }
    }
}
