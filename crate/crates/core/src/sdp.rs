//! Strict feasibility of small dense affine LMI systems.
//!
//! The question "is there `y` with `F0 + Σ y_k F_k ≺ 0` for every constraint"
//! is answered through the eigenvalue-margin program
//!
//! ```text
//! maximize t  subject to  F0_j + Σ y_k F_jk ⪯ -t I   for every j
//! ```
//!
//! solved with a log-det barrier path-following method on `(y, t)`. The
//! starting point is always strictly feasible for the margin program (pick
//! `t` low enough), so no phase-one problem is needed. A `Feasible` verdict is
//! only returned after the candidate `y` passes an independent dense
//! symmetric-eigenvalue check of every constraint.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix4, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::{assemble_m, StabilityCertificate};
use crate::model::ClosedLoopMatrices;

/// Default feasibility threshold on the achieved margin.
pub const DEFAULT_TOL_FEAS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("constraint {constraint}: expected {expected} variable matrices, got {got}")]
    VariableCount { constraint: usize, expected: usize, got: usize },
    #[error("constraint {constraint}: matrix {index} is {rows}x{cols}, expected {dim}x{dim}")]
    Dimension { constraint: usize, index: usize, rows: usize, cols: usize, dim: usize },
    #[error("constraint {constraint}: matrix {index} is not symmetric")]
    Asymmetric { constraint: usize, index: usize },
    #[error("initial point has {got} entries, system has {expected} variables")]
    InitialPoint { expected: usize, got: usize },
    #[error("tol_feas must be positive, got {0}")]
    Tolerance(f64),
}

/// One affine constraint `F0 + Σ y_k F_k ≺ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub f0: DMatrix<f64>,
    pub fk: Vec<DMatrix<f64>>,
}

impl AffineLmi {
    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn evaluate(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.f0.clone();
        for (f, &yk) in self.fk.iter().zip(y.iter()) {
            if yk != 0.0 {
                out += f * yk;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmiSystem {
    pub n_vars: usize,
    pub constraints: Vec<AffineLmi>,
}

impl AffineLmiSystem {
    /// Validates shapes and symmetry.
    pub fn new(n_vars: usize, constraints: Vec<AffineLmi>) -> Result<Self, SdpError> {
        for (j, c) in constraints.iter().enumerate() {
            if c.fk.len() != n_vars {
                return Err(SdpError::VariableCount { constraint: j, expected: n_vars, got: c.fk.len() });
            }
            let dim = c.f0.nrows();
            for (index, m) in std::iter::once(&c.f0).chain(c.fk.iter()).enumerate() {
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(SdpError::Dimension { constraint: j, index, rows: m.nrows(), cols: m.ncols(), dim });
                }
                let scale = m.amax().max(1.0);
                if (m - m.transpose()).amax() > 1e-12 * scale {
                    return Err(SdpError::Asymmetric { constraint: j, index });
                }
            }
        }
        Ok(Self { n_vars, constraints })
    }

    /// Sum of the constraint dimensions (the barrier parameter).
    pub fn total_dim(&self) -> usize {
        self.constraints.iter().map(AffineLmi::dim).sum()
    }

    /// Largest eigenvalue of every constraint at `y`, by dense symmetric
    /// eigendecomposition.
    pub fn lambda_max(&self, y: &DVector<f64>) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| SymmetricEigen::new(c.evaluate(y)).eigenvalues.max())
            .collect()
    }

    /// Multiplies every constraint matrix by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n_vars: self.n_vars,
            constraints: self
                .constraints
                .iter()
                .map(|c| AffineLmi { f0: &c.f0 * factor, fk: c.fk.iter().map(|f| f * factor).collect() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub status: FeasibilityStatus,
    /// Present iff `status == Feasible`.
    pub y: Option<DVector<f64>>,
    /// Best margin reached.
    pub t_star: f64,
    /// Upper bound on the optimal margin from the central-path gap.
    pub upper_bound: f64,
    /// Newton iterations spent.
    pub iterations: usize,
    /// Per-constraint `λmax` at `y` from the independent check (empty unless
    /// a candidate was verified).
    pub lambda_max: Vec<f64>,
    /// Last iterate, kept even when not feasible (useful for restarts).
    pub last_y: DVector<f64>,
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol_feas: f64,
    /// Cap on the total number of Newton iterations.
    pub max_iter: usize,
    /// Stop once the central-path gap falls below this.
    pub gap_tol: f64,
    /// Return as soon as the verdict is settled instead of maximizing the
    /// margin: feasible once `t ≥ 10 tol_feas`, infeasible once the certified
    /// upper bound drops to zero.
    pub early_exit: bool,
    /// Margins above this are reported as feasible without further ascent.
    pub t_cap: f64,
    pub initial_y: Option<DVector<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: DEFAULT_TOL_FEAS,
            max_iter: 500,
            gap_tol: 1e-10,
            early_exit: false,
            t_cap: 1e8,
            initial_y: None,
        }
    }
}

impl SolverOptions {
    pub fn decision_only(tol_feas: f64) -> Self {
        Self { tol_feas, early_exit: true, ..Self::default() }
    }
}

/// Solves the margin program to optimality with default settings.
pub fn solve_feasibility(system: &AffineLmiSystem, tol_feas: f64, max_iter: usize) -> Result<FeasibilityResult, SdpError> {
    solve_feasibility_with(system, &SolverOptions { tol_feas, max_iter, ..SolverOptions::default() })
}

/// Per-constraint list of the variable matrices that are not identically zero.
struct Sparse<'a> {
    f0: &'a DMatrix<f64>,
    terms: Vec<(usize, &'a DMatrix<f64>)>,
    dim: usize,
}

struct Barrier<'a> {
    cons: Vec<Sparse<'a>>,
    n: usize,
}

impl<'a> Barrier<'a> {
    fn new(system: &'a AffineLmiSystem) -> Self {
        let cons = system
            .constraints
            .iter()
            .map(|c| Sparse {
                f0: &c.f0,
                terms: c.fk.iter().enumerate().filter(|(_, f)| f.amax() > 0.0).collect(),
                dim: c.dim(),
            })
            .collect();
        Self { cons, n: system.n_vars }
    }

    /// `G_j = -F_j(y) - t I`.
    fn slack(&self, c: &Sparse<'_>, y: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let mut g = -c.f0.clone();
        for &(k, f) in &c.terms {
            if y[k] != 0.0 {
                g -= f * y[k];
            }
        }
        for i in 0..c.dim {
            g[(i, i)] -= t;
        }
        g
    }

    /// Barrier value `-Σ log det G_j`, or `None` outside the domain.
    fn value(&self, y: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = 0.0;
        for c in &self.cons {
            let chol = Cholesky::new(self.slack(c, y, t))?;
            let l = chol.l_dirty();
            for i in 0..c.dim {
                let d = l[(i, i)];
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                v -= 2.0 * d.ln();
            }
        }
        Some(v)
    }

    /// Gradient and Hessian of the barrier in `(y, t)`.
    fn derivatives(&self, y: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nz = self.n + 1;
        let mut grad = DVector::zeros(nz);
        let mut hess = DMatrix::zeros(nz, nz);
        for c in &self.cons {
            let chol = Cholesky::new(self.slack(c, y, t))?;
            let l = chol.l();
            // W_A = L⁻¹ A L⁻ᵀ for A = F_k and A = I (the t direction)
            let mut ws: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(c.terms.len() + 1);
            for &(k, f) in &c.terms {
                ws.push((k, congruence(&l, f)?));
            }
            ws.push((self.n, congruence(&l, &DMatrix::identity(c.dim, c.dim))?));
            for (a, (ka, wa)) in ws.iter().enumerate() {
                grad[*ka] += wa.trace();
                for (kb, wb) in ws.iter().skip(a) {
                    let v = wa.dot(wb);
                    hess[(*ka, *kb)] += v;
                    if ka != kb {
                        hess[(*kb, *ka)] += v;
                    }
                }
            }
        }
        // the t direction enters G with a minus sign; y_k also with a minus
        // sign, so the gradient signs are consistent: d(-logdet G)/dz = tr(W)
        Some((grad, hess))
    }
}

fn congruence(l: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let x = l.solve_lower_triangular(a)?;
    let w = l.solve_lower_triangular(&x.transpose())?;
    Some(w)
}

fn newton_direction(hess: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(hess.clone()) {
        return Some(ch.solve(rhs));
    }
    let scale = hess.diagonal().amax().max(1e-300);
    let mut ridge = 1e-14 * scale;
    for _ in 0..8 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(h) {
            return Some(ch.solve(rhs));
        }
        ridge *= 100.0;
    }
    None
}

pub fn solve_feasibility_with(system: &AffineLmiSystem, opts: &SolverOptions) -> Result<FeasibilityResult, SdpError> {
    if !(opts.tol_feas > 0.0) {
        return Err(SdpError::Tolerance(opts.tol_feas));
    }
    let n = system.n_vars;
    let mut y = match &opts.initial_y {
        Some(y0) if y0.len() != n => return Err(SdpError::InitialPoint { expected: n, got: y0.len() }),
        Some(y0) => y0.clone(),
        None => DVector::zeros(n),
    };
    let barrier = Barrier::new(system);
    let big_n = system.total_dim().max(1) as f64;

    if system.constraints.is_empty() {
        return Ok(finish(system, FeasibilityStatus::Feasible, y, opts.t_cap, opts.t_cap, 0, opts));
    }

    let start_lmax = system.lambda_max(&y).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let mut t = -start_lmax - 1.0;
    let accept = 10.0 * opts.tol_feas;
    let mut kappa = big_n / (1.0 + start_lmax.abs());
    let mu = 10.0;
    let mut iterations = 0usize;

    // upper bound on the optimum from the last centered iterate
    let mut proven_upper = f64::INFINITY;
    loop {
        // centering for the current kappa
        let mut centered = false;
        let mut stalled = false;
        let mut last_dec2 = f64::INFINITY;
        while iterations < opts.max_iter {
            let Some((gb, hess)) = barrier.derivatives(&y, t) else {
                stalled = true;
                break;
            };
            let mut grad = gb;
            grad[n] -= kappa;
            let Some(step) = newton_direction(&hess, &(-&grad)) else {
                stalled = true;
                break;
            };
            iterations += 1;
            let decrement2 = -grad.dot(&step);
            last_dec2 = decrement2;
            if decrement2 < 1e-12 {
                centered = true;
                break;
            }

            let Some(v_here) = barrier.value(&y, t) else {
                stalled = true;
                break;
            };
            // Armijo test on the difference; the kappa·t term alone is far
            // larger than the decrease we are looking for late in the path
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let yc = &y + step.rows(0, n) * alpha;
                let tc = t + step[n] * alpha;
                if let Some(v) = barrier.value(&yc, tc) {
                    if (v - v_here) - kappa * alpha * step[n] <= -0.25 * alpha * decrement2 {
                        y = yc;
                        t = tc;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                stalled = true;
                break;
            }
            if opts.early_exit && t >= accept {
                return Ok(finish(system, FeasibilityStatus::Feasible, y, t, f64::INFINITY, iterations, opts));
            }
            if t >= opts.t_cap {
                return Ok(finish(system, FeasibilityStatus::Feasible, y, t, f64::INFINITY, iterations, opts));
            }
            if decrement2 < 1e-9 {
                centered = true;
                break;
            }
        }

        let gap = (big_n + (big_n * last_dec2.max(0.0)).sqrt()) / kappa;
        if centered {
            proven_upper = proven_upper.min(t + gap);
        }

        if stalled || !centered {
            // Newton stopped making progress or the iteration cap was hit;
            // classify on what has been established so far.
            let status = if t >= opts.tol_feas {
                FeasibilityStatus::Feasible
            } else if proven_upper <= 0.0 {
                FeasibilityStatus::Infeasible
            } else {
                FeasibilityStatus::NumericalFailure
            };
            return Ok(finish(system, status, y, t, proven_upper, iterations, opts));
        }

        if opts.early_exit && proven_upper <= 0.0 {
            return Ok(finish(system, FeasibilityStatus::Infeasible, y, t, proven_upper, iterations, opts));
        }
        if gap < opts.gap_tol {
            let status = if t >= opts.tol_feas {
                FeasibilityStatus::Feasible
            } else if t <= 0.0 {
                FeasibilityStatus::Infeasible
            } else {
                FeasibilityStatus::NumericalFailure
            };
            return Ok(finish(system, status, y, t, proven_upper, iterations, opts));
        }
        kappa *= mu;
    }
}

fn finish(
    system: &AffineLmiSystem,
    status: FeasibilityStatus,
    y: DVector<f64>,
    t: f64,
    upper: f64,
    iterations: usize,
    opts: &SolverOptions,
) -> FeasibilityResult {
    if status != FeasibilityStatus::Feasible {
        return FeasibilityResult {
            status,
            y: None,
            t_star: t,
            upper_bound: upper,
            iterations,
            lambda_max: Vec::new(),
            last_y: y,
        };
    }
    // independent re-verification
    let lambda_max = system.lambda_max(&y);
    let ok = lambda_max.iter().all(|&l| l <= -opts.tol_feas);
    FeasibilityResult {
        status: if ok { FeasibilityStatus::Feasible } else { FeasibilityStatus::NumericalFailure },
        y: ok.then(|| y.clone()),
        t_star: t,
        upper_bound: upper,
        iterations,
        lambda_max,
        last_y: y,
    }
}

/// Index of the upper-triangular entry `(a, b)`, `a ≤ b`, of `P1` in the
/// decision vector.
pub fn p1_var_index(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    // rows 0..a contribute 4, 3, 2, ... entries
    (0..a).map(|r| 4 - r).sum::<usize>() + (b - a)
}

/// Number of decision variables of the platoon system.
pub const PLATOON_VARS: usize = 11;
const P2_VAR: usize = 10;

/// The two-endpoint system for fixed `(gains, h, τd, Ts, Δ, δ, θ)`,
/// affine in `(P1, p2)`.
///
/// Decision variables are offsets from the normalized starting point:
/// `P1 = I + Σ y_(a,b) E_(a,b)` over the upper triangle and `p2 = 1 + y_10`,
/// so `y = 0` is `P1 = I, p2 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonLmi {
    pub system: AffineLmiSystem,
    pub delta: f64,
    pub theta: f64,
    pub mansd: u32,
}

impl PlatoonLmi {
    pub fn certificate(&self, y: &DVector<f64>) -> StabilityCertificate {
        let mut p1 = Matrix4::identity();
        for a in 0..4 {
            for b in a..4 {
                let v = y[p1_var_index(a, b)];
                p1[(a, b)] += v;
                if a != b {
                    p1[(b, a)] += v;
                }
            }
        }
        StabilityCertificate { p1, p2: 1.0 + y[P2_VAR], delta: self.delta, theta: self.theta, mansd: self.mansd }
    }

    /// Inverse of [`PlatoonLmi::certificate`] (upper triangle of `P1`).
    pub fn encode(cert: &StabilityCertificate) -> DVector<f64> {
        let mut y = DVector::zeros(PLATOON_VARS);
        for a in 0..4 {
            for b in a..4 {
                y[p1_var_index(a, b)] = cert.p1[(a, b)] - if a == b { 1.0 } else { 0.0 };
            }
        }
        y[P2_VAR] = cert.p2 - 1.0;
        y
    }
}

fn unit_sym4(a: usize, b: usize) -> Matrix4<f64> {
    let mut e = Matrix4::zeros();
    e[(a, b)] = 1.0;
    e[(b, a)] = 1.0;
    e
}

fn to_dyn6(m: &Matrix6<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}

/// Variable matrices of `M(σ)`: the linear part in `P1` (per basis element)
/// and in `p2`.
fn m_variable_parts(sigma: f64, clm: &ClosedLoopMatrices, h: f64, delta: f64) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(PLATOON_VARS);
    for a in 0..4 {
        for b in a..4 {
            let e = unit_sym4(a, b);
            let ea = e * clm.a_xx;
            let m11 = ea + ea.transpose();
            let m12 = e * clm.a_x_eta;
            let m13 = e * clm.a_x_omega;
            let mut f = Matrix6::zeros();
            f.fixed_view_mut::<4, 4>(0, 0).copy_from(&m11);
            for r in 0..4 {
                f[(r, 4)] = m12[r];
                f[(4, r)] = m12[r];
                f[(r, 5)] = m13[r];
                f[(5, r)] = m13[r];
            }
            out.push(to_dyn6(&f));
        }
    }
    let decay = (-delta * sigma).exp();
    let mut f = Matrix6::zeros();
    for r in 0..4 {
        f[(r, 4)] = decay * clm.a_eta_x[r];
        f[(4, r)] = f[(r, 4)];
    }
    f[(4, 4)] = -delta * decay;
    f[(4, 5)] = -decay / h;
    f[(5, 4)] = f[(4, 5)];
    out.push(to_dyn6(&f));
    out
}

/// Builds the four-constraint system `M(0) ≺ 0`, `M((Δ+1)Ts) ≺ 0`,
/// `-P1 ≺ 0`, `-p2 < 0`.
pub fn platoon_system(clm: &ClosedLoopMatrices, ts: f64, mansd: u32, delta: f64, theta: f64, h: f64) -> PlatoonLmi {
    let base = StabilityCertificate { p1: Matrix4::identity(), p2: 1.0, delta, theta, mansd };
    let mut constraints = Vec::with_capacity(4);
    for sigma in [0.0, base.sigma_end(ts)] {
        constraints.push(AffineLmi {
            f0: to_dyn6(&assemble_m(sigma, &base, clm, h)),
            fk: m_variable_parts(sigma, clm, h, delta),
        });
    }

    let mut p1_terms = Vec::with_capacity(PLATOON_VARS);
    for a in 0..4 {
        for b in a..4 {
            let e = -unit_sym4(a, b);
            p1_terms.push(DMatrix::from_column_slice(4, 4, e.as_slice()));
        }
    }
    p1_terms.push(DMatrix::zeros(4, 4));
    constraints.push(AffineLmi { f0: -DMatrix::identity(4, 4), fk: p1_terms });

    let mut p2_terms = vec![DMatrix::zeros(1, 1); PLATOON_VARS];
    p2_terms[P2_VAR] = DMatrix::from_element(1, 1, -1.0);
    constraints.push(AffineLmi { f0: DMatrix::from_element(1, 1, -1.0), fk: p2_terms });

    PlatoonLmi {
        system: AffineLmiSystem { n_vars: PLATOON_VARS, constraints },
        delta,
        theta,
        mansd,
    }
}
