//! Closed-loop driving metrics: a multiplicative-gate composite score over
//! per-scenario sub-scores, plus a per-frame driveability score. The
//! formulas here are frozen; the evaluator in [`eval`] produces their inputs
//! from rollout logs.

pub mod collision;
pub mod eval;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collision::obb_intersects_aabb;
pub use eval::{evaluate_rollout, MetricConfig, RolloutEval};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("score out of range: {0}")]
    Range(String),
    #[error("cannot evaluate rollout: {0}")]
    Eval(String),
    #[error(transparent)]
    World(#[from] worldgen::WorldError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Per-scenario sub-scores, all in `[0, 1]`. The first four are hard gates;
/// the rest are weighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    /// No collision.
    pub nc: f64,
    /// Drivable-area compliance.
    pub dac: f64,
    /// Driving-direction compliance.
    pub ddc: f64,
    /// Traffic-light compliance.
    pub tlc: f64,
    /// Ego progress relative to the expert.
    pub ep: f64,
    /// Time-to-collision headroom.
    pub ttc: f64,
    /// Lane keeping.
    pub lk: f64,
    /// History comfort.
    pub hc: f64,
    /// Extended comfort (speed compliance).
    pub ec: f64,
}

impl SubScores {
    pub fn perfect() -> Self {
        SubScores { nc: 1.0, dac: 1.0, ddc: 1.0, tlc: 1.0, ep: 1.0, ttc: 1.0, lk: 1.0, hc: 1.0, ec: 1.0 }
    }

    /// Column order used in reports.
    pub fn as_array(&self) -> [f64; 9] {
        [self.nc, self.dac, self.ddc, self.tlc, self.ep, self.ttc, self.lk, self.hc, self.ec]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ["nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc", "ec"]
            .iter()
            .zip(self.as_array())
        {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(MetricError::Range(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Composite score: four hard gates multiply a weighted average in which
/// progress and time-to-collision carry weight 5 and the three comfort and
/// keeping terms weight 2 each.
pub fn epdms(s: &SubScores) -> Result<f64> {
    s.validate()?;
    let gates = s.nc * s.dac * s.ddc * s.tlc;
    let weighted = (5.0 * (s.ep + s.ttc) + 2.0 * (s.lk + s.hc + s.ec)) / 16.0;
    Ok(gates * weighted)
}

/// Inputs for the per-frame driveability score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdFrame {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub com: f64,
}

pub fn hd_frame(f: &HdFrame) -> Result<f64> {
    for (name, v) in ["nc", "dac", "ttc", "com"].iter().zip([f.nc, f.dac, f.ttc, f.com]) {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(MetricError::Range(format!("{name} = {v}")));
        }
    }
    Ok(f.nc * f.dac * (5.0 * f.ttc + 2.0 * f.com) / 7.0)
}

/// Driveability: route-completion ratio times the mean per-frame score.
pub fn hd_score(r_c: f64, frames: &[HdFrame]) -> Result<f64> {
    if !(0.0..=1.0).contains(&r_c) || !r_c.is_finite() {
        return Err(MetricError::Range(format!("r_c = {r_c}")));
    }
    if frames.is_empty() {
        return Err(MetricError::Eval("no frames to score".into()));
    }
    let mut acc = 0.0;
    for f in frames {
        acc += hd_frame(f)?;
    }
    Ok(r_c * acc / frames.len() as f64)
}

/// Mean of each column over scenarios (composite columns are averaged over
/// per-scenario composites, not recomputed from the means).
pub fn mean_scores(rows: &[SubScores]) -> Option<SubScores> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mut acc = [0.0; 9];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.as_array()) {
            *a += v;
        }
    }
    Some(SubScores {
        nc: acc[0] / n,
        dac: acc[1] / n,
        ddc: acc[2] / n,
        tlc: acc[3] / n,
        ep: acc[4] / n,
        ttc: acc[5] / n,
        lk: acc[6] / n,
        hc: acc[7] / n,
        ec: acc[8] / n,
    })
}

pub fn csv_header() -> &'static str {
    "label,nc,dac,ddc,tlc,ep,ttc,lk,hc,ec,epdms"
}

/// One report row: sub-score means and the mean composite, scaled to 0-100.
pub fn csv_row(label: &str, means: &SubScores, mean_epdms: f64) -> String {
    let cols: Vec<String> = means
        .as_array()
        .iter()
        .chain(std::iter::once(&mean_epdms))
        .map(|v| format!("{:.1}", v * 100.0))
        .collect();
    format!("{label},{}", cols.join(","))
}
