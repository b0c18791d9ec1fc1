//! Piecewise log-linear sub-densities on a knot grid.

mod fit;
pub mod kernels;

pub use fit::{Family, Grid, LogConcaveFit, PrefixMass};
pub use kernels::{j, j01, j_tilde, SegmentMoments};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("a grid needs at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("grid knots must be finite")]
    NonFiniteKnot,
    #[error("grid knots must be strictly increasing")]
    UnsortedKnots,
    #[error("{values} log-density values for {knots} knots")]
    LengthMismatch { knots: usize, values: usize },
    #[error("log-density values must be finite")]
    NonFiniteValue,
    #[error("cure mass {0} outside [0, 1)")]
    InvalidCureMass(f64),
    #[error("fit has no exponential tail")]
    NoTail,
    #[error(transparent)]
    Tail(#[from] kernels::UnboundedTail),
    #[error("fits live on different grids")]
    GridMismatch,
}

/// Upper bound on `∫ |f_a - f_b|` for two fits on one grid.
///
/// On each segment the pointwise max (min) of the two densities is bounded
/// by the log-linear interpolation of the knotwise maxima (minima); the tail
/// uses `e^{φ_N} / |s|` with the extreme values of `φ_N` and `1/|s|`. When
/// only one fit has a tail, that tail's full mass is added.
pub fn l1_bound(a: &LogConcaveFit, b: &LogConcaveFit) -> Result<f64, ModelError> {
    if a.knots() != b.knots() {
        return Err(ModelError::GridMismatch);
    }
    let n = a.knots().len();
    let (pa, pb) = (a.phi(), b.phi());
    let hi = |k: usize| pa[k].max(pb[k]);
    let lo = |k: usize| pa[k].min(pb[k]);
    let mut bound = 0.0;
    for k in 0..n - 1 {
        let w = a.grid().width(k);
        bound += w * (j(hi(k), hi(k + 1)) - j(lo(k), lo(k + 1)));
    }
    bound += match (a.tail_slope(), b.tail_slope()) {
        (Some(sa), Some(sb)) => {
            let (ia, ib) = (1.0 / sa.abs(), 1.0 / sb.abs());
            hi(n - 1).exp() * ia.max(ib) - lo(n - 1).exp() * ia.min(ib)
        }
        (Some(_), None) => a.tail_mass()?,
        (None, Some(_)) => b.tail_mass()?,
        (None, None) => 0.0,
    };
    Ok(bound.max(0.0))
}
