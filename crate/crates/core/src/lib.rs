//! Reagent line dispensing with a 3D printer driving syringe pumps.
//!
//! The crate covers the whole desk-side workflow:
//!
//! * [`calibration`]: microsteps per microliter from pump geometry or a
//!   gravimetric measurement.
//! * [`emit`]: compile a [`DispensePlan`] into Marlin-dialect G-code using
//!   the mixing extruder (`M165`) to split one logical E axis across pumps.
//! * [`vm`]: parse and execute that G-code on a virtual rig, producing a
//!   per-channel [`vm::DispenseTrace`] with flow-limit checks.
//! * [`width`]: empirical dispensing-rate to line-width predictor.
//! * [`imaging`]: Canny edges, edge pairing and binned width series from
//!   membrane scans.
//! * [`stats`]: confidence intervals, Bartlett, one-way ANOVA and t-tests.
//!
//! Units are fixed crate-wide: mm, µL, mm/min, µL/min, and nL/mm for the
//! dispensing rate (DR).

pub mod calibration;
pub mod demo;
pub mod emit;
mod error;
pub mod imaging;
pub mod model;
pub mod par;
pub mod stats;
pub mod vm;
pub mod width;

pub use error::{Error, Result};
pub use model::{
    dispense_rate, pump_flow_rate, CalibrationResult, CalibrationSource, DispensePlan, LineSpec,
    MixVector, SyringePumpSpec,
};
pub use par::Exec;
