//! Closed-form integrals of `exp` along a linear segment.
//!
//! For finite `a`, `b` every kernel here is a moment
//!
//! ```text
//! J_kl(a, b) = ∫_0^1 (1 - t)^k t^l exp((1 - t) a + t b) dt,   k + l <= 2,
//! ```
//!
//! evaluated by factoring out `exp(max(a, b))` so that only the non-positive
//! exponent `-|b - a| v` remains under the integral. Moments of `exp(-x v)` on
//! `[0, 1]` are taken from a power series for small `x` and from the
//! closed form otherwise, which keeps full relative precision as `a -> b`.

/// Below this value of `|b - a|` the power series is used.
const SERIES_CUTOFF: f64 = 1.0;

/// `[∫ e^{-xv} dv, ∫ v e^{-xv} dv, ∫ v² e^{-xv} dv]` over `v ∈ [0, 1]`, for `x >= 0`.
fn decay_moments(x: f64) -> [f64; 3] {
    debug_assert!(x >= 0.0);
    if x < SERIES_CUTOFF {
        // Σ_k (-x)^k / k! / (m + k + 1)
        let mut out = [0.0; 3];
        let mut coeff = 1.0;
        for k in 0..40 {
            let kf = k as f64;
            out[0] += coeff / (kf + 1.0);
            out[1] += coeff / (kf + 2.0);
            out[2] += coeff / (kf + 3.0);
            coeff *= -x / (kf + 1.0);
            if coeff.abs() < 1e-20 {
                break;
            }
        }
        out
    } else {
        let e = (-x).exp();
        let x2 = x * x;
        [
            -(-x).exp_m1() / x,
            (1.0 - e * (1.0 + x)) / x2,
            (2.0 - e * (2.0 + 2.0 * x + x2)) / (x2 * x),
        ]
    }
}

/// All first and second order moments of one linear segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMoments {
    /// `J(a, b)`
    pub j: f64,
    /// `∫ (1-t) e^{...}`, the partial derivative of `J` in `a`.
    pub j10: f64,
    /// `∫ t e^{...}`, the partial derivative of `J` in `b`.
    pub j01: f64,
    pub j20: f64,
    pub j11: f64,
    pub j02: f64,
}

impl SegmentMoments {
    pub fn new(a: f64, b: f64) -> Self {
        let (top, x, rising) = if b >= a {
            (b, b - a, true)
        } else {
            (a, a - b, false)
        };
        let scale = top.exp();
        let [g0, g1, g2] = decay_moments(x);
        // moments measured from the high end (g*) and from the low end
        let near = [g0, g1, g2];
        let far_first = g0 - g1;
        let far_second = g0 - 2.0 * g1 + g2;
        let mixed = g1 - g2;
        let (j10, j01, j20, j02) = if rising {
            (near[1], far_first, near[2], far_second)
        } else {
            (far_first, near[1], far_second, near[2])
        };
        Self {
            j: scale * g0,
            j10: scale * j10,
            j01: scale * j01,
            j20: scale * j20,
            j11: scale * mixed,
            j02: scale * j02,
        }
    }
}

/// `J(a, b) = ∫_0^1 exp((1 - t) a + t b) dt`.
pub fn j(a: f64, b: f64) -> f64 {
    let (top, x) = if b >= a { (b, b - a) } else { (a, a - b) };
    if x < SERIES_CUTOFF {
        top.exp() * decay_moments(x)[0]
    } else {
        top.exp() * (-(-x).exp_m1() / x)
    }
}

/// `J01(a, b) = ∫_0^1 t exp((1 - t) a + t b) dt`.
pub fn j01(a: f64, b: f64) -> f64 {
    SegmentMoments::new(a, b).j01
}

/// Error returned by [`j_tilde`] when the exponential tail does not decay.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("tail slope {slope} is not negative; the tail integral diverges")]
pub struct UnboundedTail {
    pub slope: f64,
}

/// `J̃(a, c) = ∫_0^∞ exp(a + c t) dt = exp(a) / (-c)` for `c < 0`.
pub fn j_tilde(a: f64, c: f64) -> Result<f64, UnboundedTail> {
    if c < 0.0 {
        Ok(a.exp() / -c)
    } else {
        Err(UnboundedTail { slope: c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn oracle(a: f64, b: f64, k: i32, l: i32) -> f64 {
        quadrature::integrate(
            |t| (1.0 - t).powi(k) * t.powi(l) * ((1.0 - t) * a + t * b).exp(),
            0.0,
            1.0,
            1e-15,
        )
    }

    #[test]
    fn j_special_values() {
        assert_eq!(j(0.0, 0.0), 1.0);
        assert_relative_eq!(j(-3.7, -3.7), (-3.7f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(j(0.0, 2f64.ln()), 1.0 / 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn j01_special_values() {
        assert_relative_eq!(j01(0.0, 0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(j01(0.0, 1.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(j01(0.0, 1.0), oracle(0.0, 1.0, 0, 1), max_relative = 1e-12);
    }

    #[test]
    fn j_tilde_values() {
        assert_eq!(j_tilde(0.0, -1.0).unwrap(), 1.0);
        assert_relative_eq!(j_tilde(2f64.ln(), -2.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(j_tilde(0.0, -0.5).unwrap(), 2.0);
        assert!(j_tilde(0.0, 0.0).is_err());
        assert!(j_tilde(0.0, 1.0).is_err());
    }

    #[test]
    fn j_tilde_matches_quadrature() {
        // substitute t = u / (1 - u) to map [0, ∞) onto [0, 1)
        let (a, c) = (2f64.ln(), -2.0);
        let q = quadrature::integrate(
            |u: f64| {
                if u >= 1.0 {
                    0.0
                } else {
                    let t = u / (1.0 - u);
                    (a + c * t).exp() / ((1.0 - u) * (1.0 - u))
                }
            },
            0.0,
            1.0,
            1e-14,
        );
        assert_relative_eq!(j_tilde(a, c).unwrap(), q, max_relative = 1e-10);
    }

    #[test]
    fn second_moments_near_diagonal() {
        for &d in &[0.0, 1e-12, 1e-8, 1e-3, 0.5, 0.999, 1.0, 1.001, 3.0] {
            for &(a, sign) in &[(-2.0, 1.0), (1.5, -1.0)] {
                let b = a + sign * d;
                let m = SegmentMoments::new(a, b);
                for (got, k, l) in [
                    (m.j, 0, 0),
                    (m.j10, 1, 0),
                    (m.j01, 0, 1),
                    (m.j20, 2, 0),
                    (m.j11, 1, 1),
                    (m.j02, 0, 2),
                ] {
                    assert_relative_eq!(got, oracle(a, b, k, l), max_relative = 1e-11);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn j_splits_into_first_moments(a in -30.0f64..5.0, b in -30.0f64..5.0) {
            let total = j(a, b);
            let split = j01(a, b) + j01(b, a);
            prop_assert!((total - split).abs() <= 1e-13 * total);
        }

        #[test]
        fn j_is_symmetric(a in -30.0f64..5.0, b in -30.0f64..5.0) {
            prop_assert_eq!(j(a, b), j(b, a));
        }
    }
}
