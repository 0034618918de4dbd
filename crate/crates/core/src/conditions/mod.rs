//! Checkers for the overshoot conditions and the sufficient tail criteria.
//!
//! Asymptotic statements ("bounded as A → ∞") are certified on finite grids
//! through [`stabilization`]: the ratio is split into the first three
//! quarters of the grid (head) and the last quarter (tail).

mod moments;
mod tails;

pub use moments::{
    check_condition1, check_condition2, check_condition3, condition1_ratio, condition2_ratio,
    derive_condition2_constants, derived_condition3_constant, validate_profile, Condition2Constants,
    Condition3Options,
};
pub use tails::{check_prop_i, check_prop_ii, check_prop_iii, check_rv_tail, check_rv_y};

use crate::error::{LabError, Result};
use serde::Serialize;
use std::collections::BTreeMap;

/// Tail maximum allowed relative to the head maximum for PASS.
pub const STABLE_FACTOR: f64 = 1.05;
/// Tail maximum relative to the head maximum that counts as divergence.
pub const DIVERGENT_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionId {
    #[serde(rename = "COND1")]
    Cond1,
    #[serde(rename = "COND2")]
    Cond2,
    #[serde(rename = "COND3")]
    Cond3,
    #[serde(rename = "PROP_I")]
    PropI,
    #[serde(rename = "PROP_II")]
    PropII,
    #[serde(rename = "PROP_III")]
    PropIII,
    #[serde(rename = "RV_Y")]
    RvY,
}

impl ConditionId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionId::Cond1 => "COND1",
            ConditionId::Cond2 => "COND2",
            ConditionId::Cond3 => "COND3",
            ConditionId::PropI => "PROP_I",
            ConditionId::PropII => "PROP_II",
            ConditionId::PropIII => "PROP_III",
            ConditionId::RvY => "RV_Y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

/// Outcome of one checker run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    pub verdict: Verdict,
    pub constants: BTreeMap<String, f64>,
    pub evidence: Vec<[f64; 2]>,
    pub tolerances: BTreeMap<String, f64>,
}

impl ConditionReport {
    pub fn new(condition_id: ConditionId, verdict: Verdict) -> Self {
        Self {
            condition_id,
            verdict,
            constants: BTreeMap::new(),
            evidence: Vec::new(),
            tolerances: BTreeMap::new(),
        }
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    pub(crate) fn set(&mut self, name: &str, value: f64) {
        self.constants.insert(name.to_string(), value);
    }

    pub(crate) fn tol(&mut self, name: &str, value: f64) {
        self.tolerances.insert(name.to_string(), value);
    }

    pub(crate) fn stabilization_tolerances(&mut self) {
        self.tol("stable_factor", STABLE_FACTOR);
        self.tol("divergent_factor", DIVERGENT_FACTOR);
    }

    pub(crate) fn record_stabilization(&mut self, s: &Stabilization) {
        self.set("head_max", s.head_max);
        self.set("tail_max", s.tail_max);
        if s.verdict == Verdict::Fail {
            self.set("witness_x", s.witness[0]);
            self.set("witness_ratio", s.witness[1]);
            self.set("growth_rate", s.growth_rate);
        }
    }
}

/// Head/tail comparison of a ratio along an increasing grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilization {
    pub verdict: Verdict,
    /// Overall maximum: the constant reported on PASS.
    pub constant: f64,
    pub head_max: f64,
    pub tail_max: f64,
    /// `ln(tail_max / head_max)` per unit of abscissa between the two maximisers.
    pub growth_rate: f64,
    /// Grid point carrying the tail maximum.
    pub witness: [f64; 2],
}

/// PASS when the last quarter stays within [`STABLE_FACTOR`] of the head
/// maximum, FAIL when it exceeds [`DIVERGENT_FACTOR`] times it, INCONCLUSIVE
/// in between.
pub fn stabilization(points: &[[f64; 2]]) -> Result<Stabilization> {
    let n = points.len();
    if n < 4 {
        return Err(LabError::OutOfRange(format!(
            "stabilization needs at least 4 grid points, got {n}"
        )));
    }
    if points.iter().any(|p| p[1].is_nan()) {
        return Err(LabError::OutOfRange("ratio evaluated to NaN".into()));
    }
    let tail_len = n.div_ceil(4);
    let (head, tail) = points.split_at(n - tail_len);
    let argmax = |s: &[[f64; 2]]| {
        s.iter()
            .copied()
            .fold([f64::NAN, f64::NEG_INFINITY], |a, p| if p[1] > a[1] { p } else { a })
    };
    let h = argmax(head);
    let t = argmax(tail);
    let verdict = if t[1] <= STABLE_FACTOR * h[1] {
        Verdict::Pass
    } else if t[1] > DIVERGENT_FACTOR * h[1] {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    let dx = t[0] - h[0];
    let growth_rate = if h[1] > 0.0 && dx > 0.0 {
        (t[1] / h[1]).ln() / dx
    } else {
        f64::INFINITY
    };
    Ok(Stabilization {
        verdict,
        constant: h[1].max(t[1]),
        head_max: h[1],
        tail_max: t[1],
        growth_rate,
        witness: t,
    })
}

pub fn check_increasing(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(LabError::OutOfRange(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::OutOfRange(format!(
            "{name} must be finite and strictly increasing"
        )));
    }
    Ok(())
}
