//! Conformal prediction sets as bandit arms.
//!
//! A frozen classifier plus a calibration set induces a finite grid of
//! coverage parameters, each producing nested prediction sets. This crate
//! builds those sets, simulates or replays experts choosing labels from
//! them, and runs six bandit algorithms over the grid, four of which infer
//! rewards for arms they did not pull.
//!
//! Module map:
//!
//! - [`conformal`]: scores, the coverage grid, prediction sets, PAC sizing.
//! - [`expert`]: monotone and adversarial simulators, log replay.
//! - [`bandit`]: the six algorithms, ledgers, trajectories, regret.
//! - [`analysis`]: accuracy oracles, aggregation, observational reports.
//! - [`io`]: CSV readers and writers for every on-disk format.
//! - [`experiment`]: configs, seeded multi-realization runs, replay checks.
//! - [`synthetic`]: seeded generators for classifier outputs and logs.

pub mod analysis;
pub mod bandit;
pub mod conformal;
pub mod error;
pub mod experiment;
pub mod expert;
pub mod io;
pub mod synthetic;

pub use bandit::{Algorithm, ArmLedger, ArmUpdate, RoundRecord, Trajectory};
pub use conformal::{AlphaGrid, CalibrationSet, PacParams, PredictionSet, Sample, ScoreTable};
pub use error::{Error, Result};
pub use expert::{Expert, ExpertExogenous, Mode, PredictionLog, SuccessCurve};
