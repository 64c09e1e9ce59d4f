//! Platoon parameters, performance requirements and the closed-loop matrices
//! shared by the LMI machinery and the simulator.
//!
//! State ordering for the per-link hybrid system is
//! `x̃ = (e, ė, ë, u_prev)`, followed by the ZOH mismatch `η = û_prev − u_prev`
//! and the timer `σ` (time since the last delivered packet).

use nalgebra::{Matrix3, Matrix4, RowVector4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn require(cond: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), ModelError> {
    if cond {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter { name, value, reason })
    }
}

/// Physical and network constants of a homogeneous platoon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatoonParams {
    /// Constant time gap of the spacing policy (s).
    pub h: f64,
    /// Powertrain time constant (s).
    pub tau_d: f64,
    /// Transmission interval of the inter-vehicle link (s).
    pub ts: f64,
    /// Number of follower vehicles.
    pub m: usize,
}

impl PlatoonParams {
    pub fn new(h: f64, tau_d: f64, ts: f64, m: usize) -> Result<Self, ModelError> {
        let p = Self { h, tau_d, ts, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require(self.h.is_finite() && self.h > 0.0, "h", self.h, "time gap must be positive")?;
        require(
            self.tau_d.is_finite() && self.tau_d > 0.0,
            "tau_d",
            self.tau_d,
            "powertrain time constant must be positive",
        )?;
        require(self.ts.is_finite() && self.ts > 0.0, "Ts", self.ts, "transmission interval must be positive")?;
        require(self.m >= 1, "m", self.m as f64, "platoon needs at least one follower")?;
        Ok(())
    }
}

/// Required eigenvalue placement for the spacing-error dynamics: dominant real
/// part `lambda_m` and minimum damping ratio `zeta_m` of complex pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSpec {
    pub lambda_m: f64,
    pub zeta_m: f64,
}

impl PerformanceSpec {
    pub fn new(lambda_m: f64, zeta_m: f64) -> Result<Self, ModelError> {
        let s = Self { lambda_m, zeta_m };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require(
            self.lambda_m.is_finite() && self.lambda_m < 0.0,
            "lambda_M",
            self.lambda_m,
            "dominant pole must lie in the open left half-plane",
        )?;
        require(
            self.zeta_m > 0.0 && self.zeta_m <= 1.0,
            "zeta_m",
            self.zeta_m,
            "damping ratio must lie in (0, 1]",
        )?;
        Ok(())
    }

    /// Checks the pairing condition `lambda_M > -1/(3 tau_d)`.
    pub fn validate_against(&self, tau_d: f64) -> Result<(), ModelError> {
        self.validate()?;
        require(
            self.lambda_m > -1.0 / (3.0 * tau_d),
            "lambda_M",
            self.lambda_m,
            "must exceed -1/(3 tau_d)",
        )
    }
}

/// PD gains of the CACC controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

impl Gains {
    /// Validated constructor; both gains must be strictly positive.
    pub fn new(kp: f64, kd: f64) -> Result<Self, ModelError> {
        require(kp.is_finite() && kp > 0.0, "kp", kp, "gain must be positive")?;
        require(kd.is_finite() && kd > 0.0, "kd", kd, "gain must be positive")?;
        Ok(Self { kp, kd })
    }
}

/// Matrices of the per-link hybrid closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopMatrices {
    pub a_e: Matrix3<f64>,
    pub a_xx: Matrix4<f64>,
    pub a_x_eta: Vector4<f64>,
    pub a_x_omega: Vector4<f64>,
    pub a_eta_x: RowVector4<f64>,
    pub c_omega: RowVector4<f64>,
}

/// Companion-form spacing-error matrix. Its characteristic polynomial is
/// `s³ + s²/τd + (kd/τd) s + kp/τd`.
pub fn build_error_matrix(gains: Gains, tau_d: f64) -> Result<Matrix3<f64>, ModelError> {
    require(
        tau_d.is_finite() && tau_d > 0.0,
        "tau_d",
        tau_d,
        "powertrain time constant must be positive",
    )?;
    Ok(Matrix3::new(
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        1.0,
        -gains.kp / tau_d,
        -gains.kd / tau_d,
        -1.0 / tau_d,
    ))
}

pub fn build_closed_loop(gains: Gains, params: &PlatoonParams) -> Result<ClosedLoopMatrices, ModelError> {
    params.validate()?;
    let a_e = build_error_matrix(gains, params.tau_d)?;
    let inv_h = 1.0 / params.h;

    let mut a_xx = Matrix4::zeros();
    a_xx.fixed_view_mut::<3, 3>(0, 0).copy_from(&a_e);
    a_xx[(3, 3)] = -inv_h;

    Ok(ClosedLoopMatrices {
        a_e,
        a_xx,
        a_x_eta: Vector4::new(0.0, 0.0, -1.0 / params.tau_d, 0.0),
        a_x_omega: Vector4::new(0.0, 0.0, 0.0, inv_h),
        a_eta_x: RowVector4::new(0.0, 0.0, 0.0, inv_h),
        c_omega: RowVector4::new(gains.kp, gains.kd, 0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(kp: f64, kd: f64) -> Gains {
        Gains { kp, kd }
    }

    #[test]
    fn error_matrix_last_row() {
        let a = build_error_matrix(g(0.2, 0.7), 0.1).unwrap();
        assert!((a[(2, 0)] + 2.0).abs() < 1e-12);
        assert!((a[(2, 1)] + 7.0).abs() < 1e-12);
        assert!((a[(2, 2)] + 10.0).abs() < 1e-12);

        let a = build_error_matrix(g(0.82, 2.6), 0.1).unwrap();
        assert!((a[(2, 0)] + 8.2).abs() < 1e-12);
        assert!((a[(2, 1)] + 26.0).abs() < 1e-12);
        assert!((a[(2, 2)] + 10.0).abs() < 1e-12);

        let a = build_error_matrix(g(0.0, 0.0), 1.0).unwrap();
        assert_eq!(a.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, -1.0]);
        // shift rows
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 2)], 1.0);
    }

    #[test]
    fn rejects_nonpositive_tau() {
        assert!(build_error_matrix(g(1.0, 1.0), 0.0).is_err());
        assert!(build_error_matrix(g(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn trace_and_determinant() {
        for &(kp, kd, td) in &[(0.2, 0.7, 0.1), (0.82, 2.6, 0.1), (3.0, 0.4, 0.5)] {
            let a = build_error_matrix(g(kp, kd), td).unwrap();
            assert!((a.trace() + 1.0 / td).abs() < 1e-12);
            assert!((a.determinant() + kp / td).abs() < 1e-12 * (1.0 + kp / td));
        }
    }

    #[test]
    fn closed_loop_structure() {
        let params = PlatoonParams::new(0.7, 0.1, 0.05, 10).unwrap();
        let clm = build_closed_loop(g(0.82, 2.6), &params).unwrap();
        assert!((clm.a_xx[(3, 3)] + 1.0 / 0.7).abs() < 1e-12);
        assert!((clm.a_xx[(3, 3)] + 1.428_571_428_571_428_5).abs() < 1e-12);
        assert_eq!(clm.a_eta_x, RowVector4::new(0.0, 0.0, 0.0, 1.0 / 0.7));
        assert_eq!(clm.a_x_omega, clm.a_eta_x.transpose());
        assert_eq!(clm.a_x_eta, Vector4::new(0.0, 0.0, -10.0, 0.0));
        assert_eq!(clm.c_omega * Vector4::new(1.0, 0.0, 0.0, 0.0), nalgebra::Matrix1::new(0.82));
        // block diagonal
        for i in 0..3 {
            assert_eq!(clm.a_xx[(i, 3)], 0.0);
            assert_eq!(clm.a_xx[(3, i)], 0.0);
        }
        assert_eq!(clm.a_xx.fixed_view::<3, 3>(0, 0), clm.a_e);

        let unit = PlatoonParams::new(1.0, 0.1, 0.05, 1).unwrap();
        let clm = build_closed_loop(g(0.5, 1.0), &unit).unwrap();
        assert_eq!(clm.a_x_omega, Vector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn closed_loop_is_bitwise_deterministic() {
        let params = PlatoonParams::new(0.9, 0.13, 0.05, 3).unwrap();
        let a = build_closed_loop(g(0.37, 1.21), &params).unwrap();
        let b = build_closed_loop(g(0.37, 1.21), &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_validation() {
        assert!(PlatoonParams::new(0.0, 0.1, 0.05, 1).is_err());
        assert!(PlatoonParams::new(0.7, 0.1, 0.05, 0).is_err());
        assert!(PlatoonParams::new(0.7, 0.1, -1.0, 2).is_err());
        assert!(PerformanceSpec::new(0.1, 0.7).is_err());
        assert!(PerformanceSpec::new(-0.3, 0.0).is_err());
        assert!(PerformanceSpec::new(-0.3, 1.0).is_ok());
        let spec = PerformanceSpec::new(-0.367, 0.7).unwrap();
        assert!(spec.validate_against(0.1).is_ok());
        assert!(PerformanceSpec::new(-4.0, 0.7).unwrap().validate_against(0.1).is_err());
        assert!(Gains::new(0.0, 1.0).is_err());
        assert!(Gains::new(1.0, -1.0).is_err());
    }
}
