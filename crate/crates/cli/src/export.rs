//! Curve tables for plotting and the JSON layout of a saved fit.

use std::io::Write;

use logconcure::comparators::StepSurvival;
use logconcure::em::{DomainReduction, EmConfig, Estimate};
use logconcure::plc::LogConcaveFit;
use serde::{Deserialize, Serialize};

/// Number of equally spaced evaluation points.
pub const CURVE_POINTS: usize = 512;
/// Padding on either side of the data range, as a fraction of it.
pub const CURVE_PADDING: f64 = 0.05;

/// A curve evaluated on a grid. `density` is absent for step estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub x: Vec<f64>,
    pub density: Option<Vec<f64>>,
    pub cdf: Vec<f64>,
    pub survival: Vec<f64>,
    pub knots: Vec<f64>,
    pub q: f64,
}

/// `CURVE_POINTS` points over the padded range, merged with `extra`.
pub fn curve_grid(lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
    let width = hi - lo;
    let pad = if width > 0.0 {
        CURVE_PADDING * width
    } else {
        CURVE_PADDING * lo.abs().max(1.0)
    };
    let (a, b) = (lo - pad, hi + pad);
    let step = (b - a) / (CURVE_POINTS - 1) as f64;
    let mut x: Vec<f64> = (0..CURVE_POINTS).map(|k| a + k as f64 * step).collect();
    x[CURVE_POINTS - 1] = b;
    x.extend(extra.iter().copied().filter(|v| v.is_finite()));
    x.sort_by(f64::total_cmp);
    x.dedup();
    x
}

impl CurveExport {
    pub fn from_fit(fit: &LogConcaveFit, range: (f64, f64)) -> Self {
        let x = curve_grid(range.0, range.1, fit.knots());
        let cdf: Vec<f64> = x.iter().map(|&t| fit.cdf_at(t)).collect();
        Self {
            density: Some(x.iter().map(|&t| fit.density_at(t)).collect()),
            survival: cdf.iter().map(|c| 1.0 - c).collect(),
            cdf,
            knots: fit.knots().to_vec(),
            q: fit.q(),
            x,
        }
    }

    pub fn from_step(step: &StepSurvival, range: (f64, f64)) -> Self {
        let x = curve_grid(range.0, range.1, step.jump_points());
        let survival: Vec<f64> = x.iter().map(|&t| step.survival_at(t)).collect();
        Self {
            density: None,
            cdf: survival.iter().map(|s| 1.0 - s).collect(),
            survival,
            knots: step.jump_points().to_vec(),
            q: step.mass_at_infinity(),
            x,
        }
    }

    /// Writes `x,density,cdf,survival` (no density column for step curves).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        match &self.density {
            Some(density) => {
                w.write_record(["x", "density", "cdf", "survival"])?;
                for i in 0..self.x.len() {
                    w.serialize((self.x[i], density[i], self.cdf[i], self.survival[i]))?;
                }
            }
            None => {
                w.write_record(["x", "cdf", "survival"])?;
                for i in 0..self.x.len() {
                    w.serialize((self.x[i], self.cdf[i], self.survival[i]))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The document written by `estimate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub fit: LogConcaveFit,
    /// Smallest and largest finite observation endpoint.
    pub data_range: (f64, f64),
    pub total_mass: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub reductions: Vec<DomainReduction>,
    /// Set when a closed-form special case replaced the EM run.
    pub special_case: Option<String>,
    pub config: EmConfig,
}

impl FitDocument {
    pub fn new(est: &Estimate, data_range: (f64, f64), log_likelihood: f64, config: EmConfig) -> Self {
        Self {
            fit: est.fit.clone(),
            data_range,
            total_mass: est.fit.total_mass(),
            log_likelihood,
            converged: est.converged,
            iterations: est.state.as_ref().map_or(0, |s| s.iter),
            reductions: est.state.as_ref().map_or_else(Vec::new, |s| s.reductions.clone()),
            special_case: est.degenerate.as_ref().map(|d| d.description.clone()),
            config,
        }
    }

    pub fn curve(&self) -> CurveExport {
        CurveExport::from_fit(&self.fit, self.data_range)
    }
}
