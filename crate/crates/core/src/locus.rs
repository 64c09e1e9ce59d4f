//! Closed-form gain loci that place the spacing-error poles in the
//! performance set.
//!
//! Two disjoint root configurations cover the set:
//! - `C1`: a real eigenvalue sits exactly at `lambda_M`, the remaining pair is
//!   at or left of it with damping at least `zeta_m`;
//! - `C2`: a complex pair sits on `Re s = lambda_M` with damping at least
//!   `zeta_m`, the real eigenvalue lies further left.
//!
//! On each branch `kd` is an affine function of `kp` and `kp` ranges over an
//! interval known in advance, so the gain search is one-dimensional.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::model::{Gains, PerformanceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    C1,
    C2,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::C1 => f.write_str("C1"),
            Branch::C2 => f.write_str("C2"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocusError {
    #[error("branch {branch}: condition lambda_M > -1/(3 tau_d) violated (lambda_M = {lambda_m}, -1/(3 tau_d) = {limit})")]
    PoleTooFast { branch: Branch, lambda_m: f64, limit: f64 },
    #[error("branch {branch}: requires {what}, got {value}")]
    Domain { branch: Branch, what: &'static str, value: f64 },
    #[error("branch {branch}: kp = {kp} outside {lo}{lower}, {upper}]")]
    OutOfBounds { branch: Branch, kp: f64, lower: f64, upper: f64, lo: char },
    #[error("grid count must be at least 1")]
    EmptyGrid,
}

/// Admissible `kp` interval of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocusBranch {
    pub branch: Branch,
    pub kp_lower: f64,
    pub kp_upper: f64,
    /// `C1` includes its lower endpoint, `C2` excludes it.
    pub lower_inclusive: bool,
    pub empty: bool,
}

impl LocusBranch {
    pub fn contains(&self, kp: f64) -> bool {
        if self.empty || kp > self.kp_upper {
            return false;
        }
        if self.lower_inclusive {
            kp >= self.kp_lower
        } else {
            kp > self.kp_lower
        }
    }

    fn check(&self, kp: f64) -> Result<(), LocusError> {
        if self.contains(kp) {
            Ok(())
        } else {
            Err(LocusError::OutOfBounds {
                branch: self.branch,
                kp,
                lower: self.kp_lower,
                upper: self.kp_upper,
                lo: if self.lower_inclusive { '[' } else { '(' },
            })
        }
    }
}

/// A gain pair on one of the two loci.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocusPoint {
    pub gains: Gains,
    pub branch: Branch,
}

fn check_pole_speed(branch: Branch, spec: &PerformanceSpec, tau_d: f64) -> Result<(), LocusError> {
    let limit = -1.0 / (3.0 * tau_d);
    if spec.lambda_m > limit && spec.lambda_m < 0.0 && tau_d > 0.0 {
        Ok(())
    } else {
        Err(LocusError::PoleTooFast { branch, lambda_m: spec.lambda_m, limit })
    }
}

/// Shared lower bound `2 τd λM³ + λM²` of both branches.
fn kp_floor(lm: f64, tau_d: f64) -> f64 {
    2.0 * tau_d * lm * lm * lm + lm * lm
}

pub fn c1_bounds(spec: &PerformanceSpec, tau_d: f64) -> Result<LocusBranch, LocusError> {
    check_pole_speed(Branch::C1, spec, tau_d)?;
    if !(spec.zeta_m > 0.0) {
        return Err(LocusError::Domain { branch: Branch::C1, what: "zeta_m > 0", value: spec.zeta_m });
    }
    let lm = spec.lambda_m;
    let z2 = spec.zeta_m * spec.zeta_m;
    let upper = lm.abs() * (lm * tau_d + 1.0).powi(2) / (4.0 * tau_d * z2);
    let lower = kp_floor(lm, tau_d);
    Ok(LocusBranch {
        branch: Branch::C1,
        kp_lower: lower,
        kp_upper: upper,
        lower_inclusive: true,
        empty: !(lower < upper),
    })
}

/// `kd = -kp/λM - λM² τd - λM`.
pub fn c1_kd(kp: f64, spec: &PerformanceSpec, tau_d: f64) -> Result<f64, LocusError> {
    c1_bounds(spec, tau_d)?.check(kp)?;
    Ok(c1_kd_unchecked(kp, spec.lambda_m, tau_d))
}

fn c1_kd_unchecked(kp: f64, lm: f64, tau_d: f64) -> f64 {
    -kp / lm - lm * lm * tau_d - lm
}

pub fn c2_bounds(spec: &PerformanceSpec, tau_d: f64) -> Result<LocusBranch, LocusError> {
    check_pole_speed(Branch::C2, spec, tau_d)?;
    if !(spec.zeta_m > 0.0 && spec.zeta_m < 1.0) {
        return Err(LocusError::Domain { branch: Branch::C2, what: "0 < zeta_m < 1", value: spec.zeta_m });
    }
    let lm = spec.lambda_m;
    let upper = lm * lm * (2.0 * lm * tau_d + 1.0) / (spec.zeta_m * spec.zeta_m);
    let lower = kp_floor(lm, tau_d);
    Ok(LocusBranch {
        branch: Branch::C2,
        kp_lower: lower,
        kp_upper: upper,
        lower_inclusive: false,
        empty: !(lower < upper),
    })
}

/// `kd = -(8 λM³ τd² + 8 λM² τd + 2 λM - τd kp) / (2 λM τd + 1)`.
pub fn c2_kd(kp: f64, spec: &PerformanceSpec, tau_d: f64) -> Result<f64, LocusError> {
    c2_bounds(spec, tau_d)?.check(kp)?;
    Ok(c2_kd_unchecked(kp, spec.lambda_m, tau_d))
}

fn c2_kd_unchecked(kp: f64, lm: f64, tau_d: f64) -> f64 {
    let num = 8.0 * lm.powi(3) * tau_d * tau_d + 8.0 * lm * lm * tau_d + 2.0 * lm - tau_d * kp;
    -num / (2.0 * lm * tau_d + 1.0)
}

/// `kd` on the given branch without the range check. Useful for probing the
/// loci just outside their admissible intervals.
pub fn branch_kd(branch: Branch, kp: f64, spec: &PerformanceSpec, tau_d: f64) -> f64 {
    match branch {
        Branch::C1 => c1_kd_unchecked(kp, spec.lambda_m, tau_d),
        Branch::C2 => c2_kd_unchecked(kp, spec.lambda_m, tau_d),
    }
}

/// Uniform `kp` grids over both branches, paired with the matching `kd`.
///
/// The C1 grid spans the closed interval; with a single point it sits on the
/// lower bound. The C2 grid starts one step above the excluded lower bound and
/// ends on the upper bound. An empty branch (or `zeta_m = 1` for C2)
/// contributes no points.
pub fn enumerate_locus(
    spec: &PerformanceSpec,
    tau_d: f64,
    n_k1: usize,
    n_k2: usize,
) -> Result<Vec<LocusPoint>, LocusError> {
    if n_k1 == 0 || n_k2 == 0 {
        return Err(LocusError::EmptyGrid);
    }
    let mut out = Vec::with_capacity(n_k1 + n_k2);

    let c1 = c1_bounds(spec, tau_d)?;
    if !c1.empty {
        let width = c1.kp_upper - c1.kp_lower;
        for j in 0..n_k1 {
            let kp = if n_k1 == 1 {
                c1.kp_lower
            } else if j + 1 == n_k1 {
                c1.kp_upper
            } else {
                c1.kp_lower + width * j as f64 / (n_k1 - 1) as f64
            };
            out.push(LocusPoint {
                gains: Gains { kp, kd: c1_kd_unchecked(kp, spec.lambda_m, tau_d) },
                branch: Branch::C1,
            });
        }
    }

    match c2_bounds(spec, tau_d) {
        Ok(c2) if !c2.empty => {
            let width = c2.kp_upper - c2.kp_lower;
            for j in 1..=n_k2 {
                let kp = if j == n_k2 {
                    c2.kp_upper
                } else {
                    c2.kp_lower + width * j as f64 / n_k2 as f64
                };
                out.push(LocusPoint {
                    gains: Gains { kp, kd: c2_kd_unchecked(kp, spec.lambda_m, tau_d) },
                    branch: Branch::C2,
                });
            }
        }
        Ok(_) | Err(LocusError::Domain { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}
