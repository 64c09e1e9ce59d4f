//! Hybrid simulation of a platoon whose inter-vehicle links carry the
//! predecessor's control signal in a zero-order-hold fashion and lose packets
//! according to an attack schedule.
//!
//! Flow uses fixed-step RK4 with step `Ts / substeps`, so every transmission
//! instant `k·Ts` is a grid point. At a successful reception on link `i` the
//! held value `û_i` is refreshed to `u_{i−1}` and the timer `σ_i` resets. The
//! recorded trace duplicates the row at every instant where a reception
//! happened (pre-jump then post-jump), so integrals over the trace see the
//! discontinuity in `ω_i` exactly.
//!
//! The leader's command `u_0` is an exogenous piecewise-constant profile; its
//! performance output is taken to be `ω_0 = u_0`.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::StabilityCertificate;
use crate::model::{Gains, PlatoonParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Input(String),
    #[error("link {link}: {run} consecutive drops exceed the bound {bound}")]
    ScheduleViolation { link: usize, run: usize, bound: u32 },
    #[error("l2 ratio for link {link} is undefined: predecessor output has zero norm")]
    UndefinedRatio { link: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderState {
    pub q: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerState {
    pub q: f64,
    pub v: f64,
    pub a: f64,
    /// Controller state.
    pub u: f64,
    /// Held copy of the predecessor's `u`.
    pub u_hat: f64,
    /// Time since the last successful reception.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState {
    pub leader: LeaderState,
    pub followers: Vec<FollowerState>,
}

impl PlatoonState {
    /// All vehicles at speed `v0`, zero acceleration and control, spaced so
    /// that every spacing error is zero. The leader starts at `q = 0`.
    pub fn equilibrium(params: &PlatoonParams, v0: f64, r: f64, length: f64) -> Self {
        let gap = length + r + params.h * v0;
        let followers = (1..=params.m)
            .map(|i| FollowerState { q: -(i as f64) * gap, v: v0, a: 0.0, u: 0.0, u_hat: 0.0, sigma: 0.0 })
            .collect();
        Self { leader: LeaderState { q: 0.0, v: v0, a: 0.0 }, followers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    WorstCase,
    Random,
}

/// Which transmissions get through, per link. Transmission `k ≥ 1` happens at
/// `k·Ts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub kind: AttackKind,
    /// Maximum number of consecutive drops.
    pub mansd: u32,
    pub seed: u64,
    /// Dropped transmission indices per link (index 0 is link 1). Overrides
    /// `kind` when present.
    pub explicit_drops: Option<Vec<Vec<u64>>>,
}

impl AttackSchedule {
    pub fn none() -> Self {
        Self { kind: AttackKind::None, mansd: 0, seed: 0, explicit_drops: None }
    }

    pub fn random(mansd: u32, seed: u64) -> Self {
        Self { kind: AttackKind::Random, mansd, seed, explicit_drops: None }
    }

    /// Delivery flags `[link][k-1]` for transmissions `k = 1..=n_tx`,
    /// checked against the Δ bound.
    pub fn realize(&self, links: usize, n_tx: usize) -> Result<Vec<Vec<bool>>, SimError> {
        let out = if let Some(drops) = &self.explicit_drops {
            if drops.len() != links {
                return Err(SimError::Input(format!(
                    "explicit_drops lists {} links, platoon has {links}",
                    drops.len()
                )));
            }
            drops
                .iter()
                .map(|d| {
                    if let Some(&k) = d.iter().find(|&&k| k == 0) {
                        return Err(SimError::Input(format!("transmission index {k} invalid, indices start at 1")));
                    }
                    Ok((1..=n_tx as u64).map(|k| !d.contains(&k)).collect())
                })
                .collect::<Result<Vec<Vec<bool>>, _>>()?
        } else {
            match self.kind {
                AttackKind::None => vec![vec![true; n_tx]; links],
                AttackKind::WorstCase => {
                    let period = self.mansd as usize + 1;
                    let pattern: Vec<bool> = (1..=n_tx).map(|k| k % period == 0).collect();
                    vec![pattern; links]
                }
                AttackKind::Random => {
                    // fair coin per transmission, forced delivery after Δ drops
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    (0..links)
                        .map(|_| {
                            let mut run = 0u32;
                            (0..n_tx)
                                .map(|_| {
                                    let ok = run >= self.mansd || rng.gen_bool(0.5);
                                    run = if ok { 0 } else { run + 1 };
                                    ok
                                })
                                .collect()
                        })
                        .collect()
                }
            }
        };
        if self.kind != AttackKind::None || self.explicit_drops.is_some() {
            for (l, flags) in out.iter().enumerate() {
                let mut run = 0usize;
                for &ok in flags {
                    run = if ok { 0 } else { run + 1 };
                    if run > self.mansd as usize {
                        return Err(SimError::ScheduleViolation { link: l + 1, run, bound: self.mansd });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Δ drops followed by one delivery, repeating, on every link. The first
/// transmission is dropped, so the first delivery is at `(Δ+1)·Ts`.
pub fn worst_case_schedule(mansd: u32) -> AttackSchedule {
    AttackSchedule { kind: AttackKind::WorstCase, mansd, seed: 0, explicit_drops: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderProfile {
    /// `(start time, command)` pairs; the command holds until the next start.
    pub segments: Vec<(f64, f64)>,
}

impl Default for LeaderProfile {
    fn default() -> Self {
        Self { segments: vec![(0.0, 0.0), (1.0, 2.0), (6.0, 0.0), (16.0, -4.0), (18.5, 0.0)] }
    }
}

impl LeaderProfile {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self, SimError> {
        let p = Self { segments };
        p.validate()?;
        Ok(p)
    }

    pub fn zero() -> Self {
        Self { segments: vec![(0.0, 0.0)] }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self.segments.first() {
            None => return Err(SimError::Input("leader profile has no segments".into())),
            Some(&(t0, _)) if t0 != 0.0 => {
                return Err(SimError::Input(format!("first leader segment must start at 0, got {t0}")))
            }
            _ => {}
        }
        if self.segments.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
            return Err(SimError::Input("leader segments must be finite".into()));
        }
        if self.segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SimError::Input("leader segment start times must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn command(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|&(start, _)| start <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { segments: self.segments.iter().map(|&(t, u)| (t, u * factor)).collect() }
    }

    /// Pointwise sum of two profiles.
    pub fn sum(&self, other: &Self) -> Self {
        let mut starts: Vec<f64> = self.segments.iter().chain(other.segments.iter()).map(|s| s.0).collect();
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        Self { segments: starts.into_iter().map(|t| (t, self.command(t) + other.command(t))).collect() }
    }
}

/// Run length and geometry of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub t_end: f64,
    pub substeps: usize,
    /// Standstill distance (m).
    pub r: f64,
    /// Vehicle length (m).
    pub length: f64,
}

impl Default for SimSetup {
    fn default() -> Self {
        Self { t_end: 30.0, substeps: 20, r: 2.0, length: 4.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub k: u64,
    pub link: usize,
    pub delivered: bool,
}

/// Columns are vehicle-major: `q[i][row]`, with `i = 0` the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    /// For the leader this is the command `u_0`.
    pub u: Vec<Vec<f64>>,
    /// Integrated spacing error (zero for the leader).
    pub e: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    /// Held values and timers (zero for the leader).
    pub u_hat: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub events: Vec<LinkEvent>,
    pub params: PlatoonParams,
    pub gains: Gains,
    pub setup: SimSetup,
}

impl SimTrace {
    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn vehicles(&self) -> usize {
        self.q.len()
    }

    pub fn event_time(&self, ev: &LinkEvent) -> f64 {
        ev.k as f64 * self.params.ts
    }
}

/// Continuous state: leader `(q, v, a)`, then per follower `(e, q, v, a, u)`.
struct Flow<'a> {
    params: &'a PlatoonParams,
    gains: Gains,
    /// `true` feeds `u_{i−1}` to the controller continuously instead of the
    /// held value.
    ideal: bool,
}

const LEADER: usize = 3;
const PER: usize = 5;

impl Flow<'_> {
    fn deriv(&self, x: &[f64], u0: f64, u_hat: &[f64], out: &mut [f64]) {
        let (h, td) = (self.params.h, self.params.tau_d);
        out[0] = x[1];
        out[1] = x[2];
        out[2] = (u0 - x[2]) / td;
        for i in 0..self.params.m {
            let b = LEADER + i * PER;
            let (vp, up) = if i == 0 { (x[1], u0) } else { (x[b - PER + 2], x[b - PER + 4]) };
            let (e, v, a, u) = (x[b], x[b + 2], x[b + 3], x[b + 4]);
            let ed = vp - v - h * a;
            let held = if self.ideal { up } else { u_hat[i] };
            out[b] = ed;
            out[b + 1] = v;
            out[b + 2] = a;
            out[b + 3] = (u - a) / td;
            out[b + 4] = (-u + self.gains.kp * e + self.gains.kd * ed + held) / h;
        }
    }

    fn rk4(&self, x: &mut [f64], u0: f64, u_hat: &[f64], dt: f64, k: &mut [Vec<f64>; 5]) {
        let n = x.len();
        let [k1, k2, k3, k4, tmp] = k;
        self.deriv(x, u0, u_hat, k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        self.deriv(tmp, u0, u_hat, k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        self.deriv(tmp, u0, u_hat, k3);
        for j in 0..n {
            tmp[j] = x[j] + dt * k3[j];
        }
        self.deriv(tmp, u0, u_hat, k4);
        for j in 0..n {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
}

fn validate_inputs(params: &PlatoonParams, setup: &SimSetup, leader: &LeaderProfile, init: &PlatoonState) -> Result<(), SimError> {
    params.validate().map_err(|e| SimError::Input(e.to_string()))?;
    leader.validate()?;
    if setup.substeps < 1 {
        return Err(SimError::Input("substeps must be at least 1".into()));
    }
    if !(setup.t_end.is_finite() && setup.t_end > 0.0) {
        return Err(SimError::Input(format!("t_end must be positive, got {}", setup.t_end)));
    }
    if !(setup.r.is_finite() && setup.length.is_finite()) {
        return Err(SimError::Input("r and L must be finite".into()));
    }
    if init.followers.len() != params.m {
        return Err(SimError::Input(format!(
            "initial state has {} followers, platoon has {}",
            init.followers.len(),
            params.m
        )));
    }
    Ok(())
}

pub fn simulate(
    params: &PlatoonParams,
    gains: Gains,
    schedule: &AttackSchedule,
    leader: &LeaderProfile,
    setup: &SimSetup,
    init: &PlatoonState,
) -> Result<SimTrace, SimError> {
    run(params, gains, Some(schedule), leader, setup, init)
}

/// Reference run with the predecessor's control signal available
/// continuously (no sampling, no drops).
pub fn simulate_continuous(
    params: &PlatoonParams,
    gains: Gains,
    leader: &LeaderProfile,
    setup: &SimSetup,
    init: &PlatoonState,
) -> Result<SimTrace, SimError> {
    run(params, gains, None, leader, setup, init)
}

fn run(
    params: &PlatoonParams,
    gains: Gains,
    schedule: Option<&AttackSchedule>,
    leader: &LeaderProfile,
    setup: &SimSetup,
    init: &PlatoonState,
) -> Result<SimTrace, SimError> {
    validate_inputs(params, setup, leader, init)?;
    let m = params.m;
    let ns = setup.substeps;
    let dt = params.ts / ns as f64;
    let n_steps = ((setup.t_end / dt).round() as usize).max(1);
    let n_tx = n_steps / ns;
    let delivery = match schedule {
        Some(s) => s.realize(m, n_tx)?,
        None => vec![vec![true; n_tx]; m],
    };

    let spacing = setup.r + setup.length;
    let mut x = vec![0.0; LEADER + PER * m];
    x[0] = init.leader.q;
    x[1] = init.leader.v;
    x[2] = init.leader.a;
    let mut u_hat = vec![0.0; m];
    let mut sigma = vec![0.0; m];
    for (i, f) in init.followers.iter().enumerate() {
        let b = LEADER + i * PER;
        let qp = if i == 0 { init.leader.q } else { init.followers[i - 1].q };
        x[b] = qp - f.q - spacing - params.h * f.v;
        x[b + 1] = f.q;
        x[b + 2] = f.v;
        x[b + 3] = f.a;
        x[b + 4] = f.u;
        u_hat[i] = f.u_hat;
        sigma[i] = f.sigma;
    }

    let flow = Flow { params, gains, ideal: schedule.is_none() };
    let cap = n_steps + 1 + n_tx;
    let col = || vec![Vec::with_capacity(cap); m + 1];
    let mut tr = SimTrace {
        t: Vec::with_capacity(cap),
        q: col(),
        v: col(),
        a: col(),
        u: col(),
        e: col(),
        omega: col(),
        u_hat: col(),
        sigma: col(),
        events: Vec::with_capacity(n_tx * m),
        params: *params,
        gains,
        setup: *setup,
    };

    let time = |step: usize| params.ts * (step as f64 / ns as f64);
    // the command applied over the step starting at t
    let command_at = |t: f64| leader.command(t + 0.5 * dt);
    let record = |tr: &mut SimTrace, t: f64, x: &[f64], u_hat: &[f64], sigma: &[f64], u0: f64| {
        tr.t.push(t);
        tr.q[0].push(x[0]);
        tr.v[0].push(x[1]);
        tr.a[0].push(x[2]);
        tr.u[0].push(u0);
        tr.e[0].push(0.0);
        tr.omega[0].push(u0);
        tr.u_hat[0].push(0.0);
        tr.sigma[0].push(0.0);
        for i in 0..m {
            let b = LEADER + i * PER;
            let (vp, up) = if i == 0 { (x[1], u0) } else { (x[b - PER + 2], x[b - PER + 4]) };
            let ed = vp - x[b + 2] - params.h * x[b + 3];
            let held = if schedule.is_none() { up } else { u_hat[i] };
            tr.q[i + 1].push(x[b + 1]);
            tr.v[i + 1].push(x[b + 2]);
            tr.a[i + 1].push(x[b + 3]);
            tr.u[i + 1].push(x[b + 4]);
            tr.e[i + 1].push(x[b]);
            tr.omega[i + 1].push(gains.kp * x[b] + gains.kd * ed + held);
            tr.u_hat[i + 1].push(held);
            tr.sigma[i + 1].push(sigma[i]);
        }
    };

    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; x.len()]);
    let mut u0 = command_at(0.0);
    record(&mut tr, 0.0, &x, &u_hat, &sigma, u0);
    for step in 0..n_steps {
        let t = time(step);
        u0 = command_at(t);
        flow.rk4(&mut x, u0, &u_hat, dt, &mut scratch);
        for s in sigma.iter_mut() {
            *s += dt;
        }
        let t_next = time(step + 1);
        let u0_next = if step + 1 < n_steps { command_at(t_next) } else { u0 };
        record(&mut tr, t_next, &x, &u_hat, &sigma, u0_next);

        if (step + 1) % ns == 0 && schedule.is_some() {
            let k = (step + 1) / ns;
            let mut jumped = false;
            // refresh from the pre-jump values of every predecessor
            let snapshot: Vec<f64> = (0..m).map(|i| if i == 0 { u0_next } else { x[LEADER + (i - 1) * PER + 4] }).collect();
            for i in 0..m {
                let ok = delivery[i][k - 1];
                tr.events.push(LinkEvent { k: k as u64, link: i + 1, delivered: ok });
                if ok {
                    u_hat[i] = snapshot[i];
                    sigma[i] = 0.0;
                    jumped = true;
                }
            }
            if jumped {
                record(&mut tr, t_next, &x, &u_hat, &sigma, u0_next);
            }
        }
    }
    Ok(tr)
}

/// Spacing errors recomputed from positions and speeds,
/// `e_i = q_{i−1} − q_i − L − r − h v_i`; row-aligned with the trace, index 0
/// is all zeros.
pub fn spacing_errors(trace: &SimTrace) -> Vec<Vec<f64>> {
    let spacing = trace.setup.r + trace.setup.length;
    let h = trace.params.h;
    let mut out = vec![vec![0.0; trace.rows()]];
    for i in 1..trace.vehicles() {
        out.push(
            (0..trace.rows())
                .map(|k| trace.q[i - 1][k] - trace.q[i][k] - spacing - h * trace.v[i][k])
                .collect(),
        );
    }
    out
}

/// Trapezoidal `L2` norm of a trace column.
pub fn l2_norm(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] * yw[0] + yw[1] * yw[1]))
        .sum::<f64>()
        .sqrt()
}

/// `‖ω_i‖ / ‖ω_{i−1}‖` over the whole trace.
pub fn l2_ratio(trace: &SimTrace, i: usize) -> Result<f64, SimError> {
    if i == 0 || i >= trace.vehicles() {
        return Err(SimError::Input(format!("link index {i} outside 1..={}", trace.vehicles() - 1)));
    }
    let den = l2_norm(&trace.t, &trace.omega[i - 1]);
    if den == 0.0 {
        return Err(SimError::UndefinedRatio { link: i });
    }
    Ok(l2_norm(&trace.t, &trace.omega[i]) / den)
}

/// Speed excursion of follower `i` beyond the leader's speed range.
pub fn max_overshoot(trace: &SimTrace, i: usize) -> f64 {
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (lo0, hi0) = range(&trace.v[0]);
    let (lo, hi) = range(&trace.v[i]);
    (hi - hi0).max(lo0 - lo).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Per link `1..=m`; `None` when the predecessor output is zero.
    pub l2_ratio: Vec<Option<f64>>,
    /// Per follower.
    pub max_overshoot: Vec<f64>,
    pub final_abs_error: Vec<f64>,
    /// Largest gap between integrated and position-level spacing errors.
    pub spacing_consistency: f64,
}

pub fn metrics(trace: &SimTrace) -> SimMetrics {
    let m = trace.vehicles() - 1;
    let recomputed = spacing_errors(trace);
    let spacing_consistency = (1..=m)
        .flat_map(|i| trace.e[i].iter().zip(&recomputed[i]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    SimMetrics {
        l2_ratio: (1..=m).map(|i| l2_ratio(trace, i).ok()).collect(),
        max_overshoot: (1..=m).map(|i| max_overshoot(trace, i)).collect(),
        final_abs_error: (1..=m).map(|i| trace.e[i].last().copied().unwrap_or(0.0).abs()).collect(),
        spacing_consistency,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Flow,
    Jump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovViolation {
    pub t: f64,
    pub kind: ViolationKind,
    pub increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub link: usize,
    pub values: Vec<f64>,
    pub violations: Vec<LyapunovViolation>,
    pub flow_checks: usize,
    pub jump_checks: usize,
}

/// Evaluates `V = x̃ᵀP1x̃ + p2 η² e^{−δσ}` for link `link` along the trace,
/// with `x̃ = (e, ė, ë, u_{i−1})` and `η = û_i − u_{i−1}`.
///
/// Flow steps must strictly decrease `V` while `|(x̃, η)| > 1e-6`; jumps must
/// not increase it. A relative slack of `1e-12·V` absorbs rounding.
pub fn lyapunov_along_trace(trace: &SimTrace, cert: &StabilityCertificate, link: usize) -> Result<LyapunovReport, SimError> {
    if link == 0 || link >= trace.vehicles() {
        return Err(SimError::Input(format!("link index {link} outside 1..={}", trace.vehicles() - 1)));
    }
    let (h, td) = (trace.params.h, trace.params.tau_d);
    let i = link;
    let state = |k: usize| -> (Vector4<f64>, f64, f64) {
        let ed = trace.v[i - 1][k] - trace.v[i][k] - h * trace.a[i][k];
        let ad_i = (trace.u[i][k] - trace.a[i][k]) / td;
        let edd = trace.a[i - 1][k] - trace.a[i][k] - h * ad_i;
        let up = trace.u[i - 1][k];
        (Vector4::new(trace.e[i][k], ed, edd, up), trace.u_hat[i][k] - up, trace.sigma[i][k])
    };
    let p1: Matrix4<f64> = cert.p1;
    let values: Vec<f64> = (0..trace.rows())
        .map(|k| {
            let (x, eta, sigma) = state(k);
            (x.transpose() * p1 * x)[0] + cert.p2 * eta * eta * (-cert.delta * sigma).exp()
        })
        .collect();

    let mut violations = Vec::new();
    let (mut flow_checks, mut jump_checks) = (0, 0);
    for k in 1..trace.rows() {
        let (prev, cur) = (values[k - 1], values[k]);
        let slack = 1e-12 * prev.abs().max(cur.abs());
        if trace.t[k] == trace.t[k - 1] {
            jump_checks += 1;
            if cur > prev + slack {
                violations.push(LyapunovViolation { t: trace.t[k], kind: ViolationKind::Jump, increase: cur - prev });
            }
        } else {
            let (x, eta, _) = state(k - 1);
            if (x.norm_squared() + eta * eta).sqrt() <= 1e-6 {
                continue;
            }
            flow_checks += 1;
            if cur >= prev + slack {
                violations.push(LyapunovViolation { t: trace.t[k], kind: ViolationKind::Flow, increase: cur - prev });
            }
        }
    }
    Ok(LyapunovReport { link, values, violations, flow_checks, jump_checks })
}
