//! TOML scenario files.
//!
//! ```toml
//! [platoon]
//! h = 0.7
//! tau_d = 0.1
//! Ts = 0.05
//! m = 10
//!
//! [performance]
//! lambda_M = -0.367
//! zeta_m = 0.7
//!
//! [tuning]
//! n_k1 = 162
//! n_k2 = 13
//! delta_grid = { min = 0.01, max = 100.0, n = 241 }   # or an explicit list
//! Delta_max = 50
//! epsilon = 0.01
//! tol_feas = 1e-7
//!
//! [attack]
//! kind = "worst_case"   # none | worst_case | random
//! Delta = 5
//! seed = 0
//!
//! [leader]
//! segments = [[0.0, 0.0], [1.0, 2.0], [6.0, 0.0], [16.0, -4.0], [18.5, 0.0]]
//!
//! [sim]
//! t_end = 30.0
//! substeps = 20
//! v0 = 15.0
//! r = 2.0
//! L = 4.5
//! ```
//!
//! Only `[platoon]` is required; every other section falls back to the
//! defaults shown above.

use std::path::Path;

use platoon_core::lmi::DEFAULT_EPSILON;
use platoon_core::model::{PerformanceSpec, PlatoonParams};
use platoon_core::sdp::DEFAULT_TOL_FEAS;
use platoon_core::sim::{AttackKind, AttackSchedule, LeaderProfile, PlatoonState, SimSetup};
use platoon_core::tuner::{geometric_grid, TuningConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub platoon: PlatoonSection,
    #[serde(default)]
    pub performance: PerformanceSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub leader: LeaderSection,
    #[serde(default)]
    pub sim: SimSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSection {
    pub h: f64,
    pub tau_d: f64,
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub m: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceSection {
    #[serde(rename = "lambda_M")]
    pub lambda_m: f64,
    pub zeta_m: f64,
}

impl Default for PerformanceSection {
    fn default() -> Self {
        Self { lambda_m: -0.367, zeta_m: 0.7 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricGrid {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DeltaGridSpec {
    List(Vec<f64>),
    Geometric(GeometricGrid),
}

impl DeltaGridSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            Self::List(v) => Ok(v.clone()),
            Self::Geometric(g) => {
                if !(g.min > 0.0 && g.max > g.min && g.min.is_finite() && g.max.is_finite()) {
                    return Err(CliError::Input(format!(
                        "tuning.delta_grid: need 0 < min < max, got min = {}, max = {}",
                        g.min, g.max
                    )));
                }
                if g.n < 1 {
                    return Err(CliError::Input("tuning.delta_grid: n must be at least 1".into()));
                }
                Ok(geometric_grid(g.min, g.max, g.n))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub n_k1: usize,
    pub n_k2: usize,
    pub delta_grid: DeltaGridSpec,
    #[serde(rename = "Delta_max")]
    pub delta_max: u32,
    pub epsilon: f64,
    pub tol_feas: f64,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            n_k1: 162,
            n_k2: 13,
            delta_grid: DeltaGridSpec::Geometric(GeometricGrid { min: 1e-2, max: 1e2, n: 241 }),
            delta_max: 50,
            epsilon: DEFAULT_EPSILON,
            tol_feas: DEFAULT_TOL_FEAS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    #[serde(rename = "Delta", default)]
    pub delta: u32,
    #[serde(default)]
    pub seed: u64,
    /// Dropped transmission indices (starting at 1), one list per link.
    #[serde(default)]
    pub explicit_drops: Option<Vec<Vec<u64>>>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { kind: AttackKind::None, delta: 0, seed: 0, explicit_drops: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    pub segments: Vec<(f64, f64)>,
}

impl Default for LeaderSection {
    fn default() -> Self {
        Self { segments: LeaderProfile::default().segments }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub substeps: usize,
    pub v0: f64,
    pub r: f64,
    #[serde(rename = "L")]
    pub length: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimSetup::default();
        Self { t_end: s.t_end, substeps: s.substeps, v0: 15.0, r: s.r, length: s.length }
    }
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: PlatoonParams,
    pub spec: PerformanceSpec,
    pub tuning: TuningConfig,
    pub attack: AttackSchedule,
    pub leader: LeaderProfile,
    pub setup: SimSetup,
    pub v0: f64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            match line {
                Some(l) => CliError::Input(format!("line {l}: {}", e.message().trim())),
                None => CliError::Input(e.message().trim().to_string()),
            }
        })?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn from_file(f: ScenarioFile) -> Result<Self, CliError> {
        let input = |section: &str, e: &dyn std::fmt::Display| CliError::Input(format!("[{section}] {e}"));

        let p = &f.platoon;
        let params = PlatoonParams::new(p.h, p.tau_d, p.ts, p.m).map_err(|e| input("platoon", &e))?;
        let spec = PerformanceSpec::new(f.performance.lambda_m, f.performance.zeta_m)
            .and_then(|s| s.validate_against(params.tau_d).map(|_| s))
            .map_err(|e| input("performance", &e))?;

        let t = &f.tuning;
        let tuning = TuningConfig {
            n_k1: t.n_k1,
            n_k2: t.n_k2,
            delta_grid: t.delta_grid.values()?,
            delta_max: t.delta_max,
            epsilon: t.epsilon,
            tol_feas: t.tol_feas,
            jobs: None,
        };
        tuning.validate().map_err(|e| input("tuning", &e))?;

        let a = &f.attack;
        let attack = AttackSchedule { kind: a.kind, mansd: a.delta, seed: a.seed, explicit_drops: a.explicit_drops.clone() };
        if let Some(d) = &attack.explicit_drops {
            if d.len() != params.m {
                return Err(input(
                    "attack",
                    &format!("explicit_drops lists {} links, platoon has m = {}", d.len(), params.m),
                ));
            }
        }

        let leader = LeaderProfile::new(f.leader.segments.clone()).map_err(|e| input("leader", &e))?;

        let s = &f.sim;
        if !(s.t_end.is_finite() && s.t_end > 0.0) {
            return Err(input("sim", &format!("t_end must be positive, got {}", s.t_end)));
        }
        if s.substeps < 1 {
            return Err(input("sim", &"substeps must be at least 1"));
        }
        if ![s.v0, s.r, s.length].iter().all(|x| x.is_finite()) {
            return Err(input("sim", &"v0, r and L must be finite"));
        }
        // catches schedules that break their own bound before any work
        attack
            .realize(params.m, ((s.t_end / params.ts) as usize).max(1))
            .map_err(|e| input("attack", &e))?;

        Ok(Self {
            params,
            spec,
            tuning,
            attack,
            leader,
            setup: SimSetup { t_end: s.t_end, substeps: s.substeps, r: s.r, length: s.length },
            v0: s.v0,
        })
    }

    pub fn initial_state(&self) -> PlatoonState {
        PlatoonState::equilibrium(&self.params, self.v0, self.setup.r, self.setup.length)
    }
}
