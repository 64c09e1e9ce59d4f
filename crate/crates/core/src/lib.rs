#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Gain synthesis, LMI certification and hybrid simulation for CACC platoons
//! whose inter-vehicle link is subject to bounded denial-of-service.

pub mod eigen;
pub mod lmi;
pub mod locus;
pub mod model;
pub mod sdp;
pub mod sim;
pub mod tuner;

pub use lmi::{verify_certificate, StabilityCertificate, VerificationReport};
pub use locus::{enumerate_locus, Branch, LocusPoint};
pub use model::{build_closed_loop, ClosedLoopMatrices, Gains, PerformanceSpec, PlatoonParams};
pub use sdp::{solve_feasibility, AffineLmiSystem, FeasibilityResult, FeasibilityStatus};
pub use tuner::{estimate_mansd, tune, MansdEstimate, MansdStatus, TuningConfig, TuningReport};
pub use sim::{simulate, AttackSchedule, LeaderProfile, PlatoonState, SimSetup, SimTrace};
