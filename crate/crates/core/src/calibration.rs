//! Steps-per-volume constant for a syringe pump.
//!
//! One leadscrew revolution pushes the plunger by `lead` mm and displaces
//! `π (ID/2)² · lead` µL (1 mm³ = 1 µL), while the motor takes
//! `steps_per_rev · microstepping` microsteps to turn once.

use std::f64::consts::PI;

use crate::model::{CalibrationResult, CalibrationSource, SyringePumpSpec};
use crate::{Error, Result};

/// Geometric calibration from the pump's mechanics.
pub fn microsteps_per_microliter(spec: &SyringePumpSpec) -> CalibrationResult {
    let microsteps_per_rev = f64::from(spec.steps_per_rev) * f64::from(spec.microstepping);
    let radius = spec.syringe_inner_diameter / 2.0;
    let microliters_per_rev = PI * radius * radius * spec.leadscrew_lead;
    CalibrationResult {
        microsteps_per_microliter: microsteps_per_rev / microliters_per_rev,
        source: CalibrationSource::Geometric,
    }
}

/// Calibration from weighing what a known number of microsteps dispensed.
///
/// `measured_mass` in mg, `fluid_density` in mg/µL.
pub fn gravimetric_calibration(
    commanded_microsteps: f64,
    measured_mass: f64,
    fluid_density: f64,
) -> Result<CalibrationResult> {
    for (name, v) in [
        ("commanded_microsteps", commanded_microsteps),
        ("measured_mass", measured_mass),
        ("fluid_density", fluid_density),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    let dispensed_volume = measured_mass / fluid_density;
    Ok(CalibrationResult {
        microsteps_per_microliter: commanded_microsteps / dispensed_volume,
        source: CalibrationSource::Gravimetric,
    })
}
