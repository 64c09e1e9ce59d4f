//! Matrix function `M(σ)` whose negativity over `σ ∈ [0, (Δ+1)Ts]` certifies
//! exponential ISS and an L2 gain of at most `θ` from `ω_{i-1}` to `ω_i`.
//!
//! `σ` enters only through `e^{-δσ}`, so `M` is affine in that scalar and its
//! range over the interval is the segment between the two endpoint matrices.
//! Checking the endpoints therefore settles the whole interval; the interior
//! sampling in [`verify_certificate`] is an independent numerical witness.

use nalgebra::{Matrix4, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::model::ClosedLoopMatrices;

/// Default strictness margin for the eigenvalue checks.
pub const DEFAULT_MARGIN: f64 = 1e-7;
/// Default number of interior `σ` samples.
pub const DEFAULT_INTERIOR_SAMPLES: usize = 100;
/// Default relaxation of the unit L2 gain, `θ = sqrt(1 + ε)`.
pub const DEFAULT_EPSILON: f64 = 0.01;

pub fn theta_from_epsilon(epsilon: f64) -> f64 {
    (1.0 + epsilon).sqrt()
}

/// Lyapunov data `V = x̃ᵀ P1 x̃ + p2 η² e^{-δσ}` together with the gain bound
/// and the number of tolerated consecutive drops it was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub p1: Matrix4<f64>,
    pub p2: f64,
    pub delta: f64,
    pub theta: f64,
    /// Maximum allowable number of successive packet dropouts.
    pub mansd: u32,
}

impl StabilityCertificate {
    /// Right end of the timer interval, `(Δ+1) Ts`.
    pub fn sigma_end(&self, ts: f64) -> f64 {
        (self.mansd as f64 + 1.0) * ts
    }

    pub fn with_mansd(mut self, mansd: u32) -> Self {
        self.mansd = mansd;
        self
    }
}

pub fn lambda_max6(m: &Matrix6<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.max()
}

pub fn lambda_min4(m: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Assembles `M(σ)` block by block. Rows/columns are ordered
/// `(x̃ [4], η [1], ω_{i-1} [1])`.
pub fn assemble_m(sigma: f64, cert: &StabilityCertificate, clm: &ClosedLoopMatrices, h: f64) -> Matrix6<f64> {
    let decay = (-cert.delta * sigma).exp();
    let p1 = &cert.p1;
    let pa = p1 * clm.a_xx;
    let m11 = pa + pa.transpose() + clm.c_omega.transpose() * clm.c_omega;
    let m12 = p1 * clm.a_x_eta + clm.c_omega.transpose() + clm.a_eta_x.transpose() * (decay * cert.p2);
    let m13 = p1 * clm.a_x_omega;
    let m22 = -cert.delta * cert.p2 * decay + 1.0;
    let m23 = -decay * cert.p2 / h;
    let m33 = -cert.theta * cert.theta;

    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(&m11);
    for r in 0..4 {
        m[(r, 4)] = m12[r];
        m[(4, r)] = m12[r];
        m[(r, 5)] = m13[r];
        m[(5, r)] = m13[r];
    }
    m[(4, 4)] = m22;
    m[(4, 5)] = m23;
    m[(5, 4)] = m23;
    m[(5, 5)] = m33;
    m
}

/// `(M(0), M((Δ+1) Ts))`.
pub fn endpoint_matrices(
    cert: &StabilityCertificate,
    clm: &ClosedLoopMatrices,
    h: f64,
    ts: f64,
) -> (Matrix6<f64>, Matrix6<f64>) {
    (assemble_m(0.0, cert, clm, h), assemble_m(cert.sigma_end(ts), cert, clm, h))
}

/// Splits `M(σ) = M_const + e^{-δσ} M_exp`.
pub fn affine_parts(cert: &StabilityCertificate, clm: &ClosedLoopMatrices, h: f64) -> (Matrix6<f64>, Matrix6<f64>) {
    let mut zero_p2 = *cert;
    zero_p2.p2 = 0.0;
    let constant = assemble_m(0.0, &zero_p2, clm, h);
    let mut exp = Matrix6::zeros();
    for r in 0..4 {
        exp[(r, 4)] = clm.a_eta_x[r] * cert.p2;
        exp[(4, r)] = exp[(r, 4)];
    }
    exp[(4, 4)] = -cert.delta * cert.p2;
    exp[(4, 5)] = -cert.p2 / h;
    exp[(5, 4)] = exp[(4, 5)];
    (constant, exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckFailure {
    /// `λmin(P1)` not above the margin.
    P1Positivity,
    /// `p2` not above the margin.
    P2Positivity,
    /// `δ` must be positive.
    DeltaPositivity,
    /// `θ ≥ 1` is part of the certificate contract.
    ThetaRange,
    /// `λmax(M(0))` not below `-margin`.
    StartEndpoint,
    /// `λmax(M((Δ+1)Ts))` not below `-margin`.
    FinalEndpoint,
    /// Some interior sample has `λmax ≥ 0`.
    InteriorSample,
}

impl CheckFailure {
    pub fn reason(&self) -> &'static str {
        match self {
            CheckFailure::P1Positivity => "P1 positivity",
            CheckFailure::P2Positivity => "p2 positivity",
            CheckFailure::DeltaPositivity => "delta positivity",
            CheckFailure::ThetaRange => "theta >= 1",
            CheckFailure::StartEndpoint => "M(0) negativity",
            CheckFailure::FinalEndpoint => "M((Delta+1)Ts) negativity",
            CheckFailure::InteriorSample => "interior M(sigma) negativity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub lambda_max_m0: f64,
    pub lambda_max_mend: f64,
    pub lambda_min_p1: f64,
    pub p2: f64,
    /// Largest `λmax(M(σ))` over the interior samples, `-inf` with none.
    pub lambda_max_interior: f64,
    /// `σ` at which the interior maximum occurred.
    pub sigma_worst_interior: Option<f64>,
    pub failures: Vec<CheckFailure>,
}

impl VerificationReport {
    pub fn reasons(&self) -> Vec<&'static str> {
        self.failures.iter().map(CheckFailure::reason).collect()
    }
}

/// Dense-eigenvalue verification of a certificate. Never errors; a failing
/// certificate yields a report with the offending eigenvalues.
pub fn verify_certificate(
    cert: &StabilityCertificate,
    clm: &ClosedLoopMatrices,
    h: f64,
    ts: f64,
    margin: f64,
    n_interior: usize,
) -> VerificationReport {
    let mut failures = Vec::new();

    let p1_sym = (cert.p1 + cert.p1.transpose()) * 0.5;
    let lambda_min_p1 = lambda_min4(&p1_sym);
    if !(lambda_min_p1 > margin) || (cert.p1 - cert.p1.transpose()).amax() > 1e-12 * cert.p1.amax().max(1.0) {
        failures.push(CheckFailure::P1Positivity);
    }
    if !(cert.p2 > margin) {
        failures.push(CheckFailure::P2Positivity);
    }
    if !(cert.delta > 0.0) {
        failures.push(CheckFailure::DeltaPositivity);
    }
    if !(cert.theta >= 1.0) {
        failures.push(CheckFailure::ThetaRange);
    }

    let (m0, mend) = endpoint_matrices(cert, clm, h, ts);
    let lambda_max_m0 = lambda_max6(&m0);
    let lambda_max_mend = lambda_max6(&mend);
    if !(lambda_max_m0 < -margin) {
        failures.push(CheckFailure::StartEndpoint);
    }
    if !(lambda_max_mend < -margin) {
        failures.push(CheckFailure::FinalEndpoint);
    }

    let sigma_end = cert.sigma_end(ts);
    let mut lambda_max_interior = f64::NEG_INFINITY;
    let mut sigma_worst_interior = None;
    for k in 1..=n_interior {
        let sigma = sigma_end * k as f64 / (n_interior + 1) as f64;
        let lm = lambda_max6(&assemble_m(sigma, cert, clm, h));
        if lm > lambda_max_interior {
            lambda_max_interior = lm;
            sigma_worst_interior = Some(sigma);
        }
    }
    if !(lambda_max_interior < 0.0) && n_interior > 0 {
        failures.push(CheckFailure::InteriorSample);
    }

    VerificationReport {
        passed: failures.is_empty(),
        lambda_max_m0,
        lambda_max_mend,
        lambda_min_p1,
        p2: cert.p2,
        lambda_max_interior,
        sigma_worst_interior,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_closed_loop, Gains, PlatoonParams};

    fn setup() -> (ClosedLoopMatrices, PlatoonParams) {
        let params = PlatoonParams::new(0.7, 0.1, 0.05, 10).unwrap();
        (build_closed_loop(Gains { kp: 0.82, kd: 2.6 }, &params).unwrap(), params)
    }

    fn unit_cert() -> StabilityCertificate {
        StabilityCertificate { p1: Matrix4::identity(), p2: 1.0, delta: 1.0, theta: 1.0, mansd: 0 }
    }

    #[test]
    fn hand_assembled_blocks() {
        let (clm, _) = setup();
        let m = assemble_m(0.0, &unit_cert(), &clm, 0.7);
        assert_eq!(m[(5, 5)], -1.0);
        assert_eq!(m[(4, 4)], 0.0);
        assert_eq!(m[(0, 5)], 0.0);
        assert_eq!(m[(1, 5)], 0.0);
        assert_eq!(m[(2, 5)], 0.0);
        assert!((m[(3, 5)] - 1.0 / 0.7).abs() < 1e-15);
        // (1,2) block with P1 = I: A_xη + C_ωᵀ + A_ηxᵀ
        assert!((m[(0, 4)] - 0.82).abs() < 1e-15);
        assert!((m[(1, 4)] - 2.6).abs() < 1e-15);
        assert!((m[(2, 4)] + 10.0).abs() < 1e-15);
        assert!((m[(3, 4)] - (1.0 + 1.0 / 0.7)).abs() < 1e-15);
        assert!((m[(4, 5)] + 1.0 / 0.7).abs() < 1e-15);
        // (1,1): He(A_xx) + CᵀC
        assert!((m[(3, 3)] - (-2.0 / 0.7 + 1.0)).abs() < 1e-14);
        assert!((m[(2, 0)] - (-8.2 + 0.0)).abs() < 1e-14);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn sigma_limits() {
        let (clm, _) = setup();
        let cert = StabilityCertificate { p2: 2.5, delta: 3.0, ..unit_cert() };
        let far = assemble_m(1e3, &cert, &clm, 0.7);
        assert!((far[(4, 4)] - 1.0).abs() < 1e-15);
        assert!(far[(4, 5)].abs() < 1e-15);
    }

    #[test]
    fn endpoints() {
        let (clm, params) = setup();
        let cert = StabilityCertificate { mansd: 0, delta: 2.0, ..unit_cert() };
        let (_, end) = endpoint_matrices(&cert, &clm, params.h, params.ts);
        assert_eq!(end, assemble_m(params.ts, &cert, &clm, params.h));

        let cert5 = cert.with_mansd(5);
        assert!((cert5.sigma_end(0.05) - 0.3).abs() < 1e-15);
        let (m0, mend) = endpoint_matrices(&cert5, &clm, params.h, params.ts);
        // entries without e^{-δσ} coincide
        for r in 0..6 {
            for c in 0..6 {
                let touches_decay = matches!((r, c), (3, 4) | (4, 3) | (4, 4) | (4, 5) | (5, 4));
                if !touches_decay {
                    assert_eq!(m0[(r, c)], mend[(r, c)], "({r},{c})");
                }
            }
        }
        assert_ne!(m0[(4, 4)], mend[(4, 4)]);
    }

    #[test]
    fn affine_reconstruction_and_convex_combination() {
        let (clm, params) = setup();
        let p1 = Matrix4::new(2.0, 0.3, -0.1, 0.05, 0.3, 1.5, 0.2, 0.0, -0.1, 0.2, 0.9, 0.1, 0.05, 0.0, 0.1, 3.0);
        let cert = StabilityCertificate { p1, p2: 1.7, delta: 6.5, theta: 1.01f64.sqrt(), mansd: 5 };
        let (mc, me) = affine_parts(&cert, &clm, params.h);
        let (m0, mend) = endpoint_matrices(&cert, &clm, params.h, params.ts);
        let se = cert.sigma_end(params.ts);
        let e_end = (-cert.delta * se).exp();
        for k in 0..10 {
            let sigma = se * (k as f64 * 0.37 + 0.05) / 3.75;
            let m = assemble_m(sigma, &cert, &clm, params.h);
            let e = (-cert.delta * sigma).exp();
            assert!((m - (mc + me * e)).amax() < 1e-12);
            let lam = (e - e_end) / (1.0 - e_end);
            assert!((m - (m0 * lam + mend * (1.0 - lam))).amax() < 1e-10);
            assert_eq!(m, m.transpose());
        }
    }

    #[test]
    fn rejects_degenerate_certificates() {
        let (clm, params) = setup();
        let zero = StabilityCertificate { p1: Matrix4::zeros(), ..unit_cert() };
        let r = verify_certificate(&zero, &clm, params.h, params.ts, DEFAULT_MARGIN, 10);
        assert!(!r.passed);
        assert!(r.failures.contains(&CheckFailure::P1Positivity));

        let no_gain = StabilityCertificate { theta: 0.0, ..unit_cert() };
        let r = verify_certificate(&no_gain, &clm, params.h, params.ts, DEFAULT_MARGIN, 10);
        assert!(!r.passed);
        assert!(r.lambda_max_m0 >= 0.0);

        let neg_p2 = StabilityCertificate { p2: -1.0, ..unit_cert() };
        let r = verify_certificate(&neg_p2, &clm, params.h, params.ts, DEFAULT_MARGIN, 0);
        assert!(r.reasons().contains(&"p2 positivity"));
    }
}
