//! Reference run: test and control line for a leptospirosis IgG strip,
//! 10 µL of each reagent over a 150 mm membrane section, dispensed
//! simultaneously by two pumps through the mixing extruder.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::calibration::microsteps_per_microliter;
use crate::emit::{round_trip, RoundTrip};
use crate::model::{DispensePlan, LineSpec, MixVector, SyringePumpSpec};
use crate::width::{default_model, predict_width, WidthPrediction};
use crate::Result;

/// Membrane section length, mm.
pub const SECTION: f64 = 150.0;
/// Per-reagent volume, µL.
pub const VOLUME_PER_REAGENT: f64 = 10.0;
/// Bed speed, mm/min.
pub const SPEED: f64 = 3000.0;
/// Lead-in dispensed before the membrane. Not given for this run; the 40 mm
/// excluded lead-in of the single-line experiments is reused.
pub const PRIME: f64 = 40.0;
/// Distance between the two dispensing tips, mm. Metadata only.
pub const TIP_SEPARATION: f64 = 7.0;

pub fn leptospirosis_plan() -> DispensePlan {
    let pump_specs = vec![
        SyringePumpSpec::bd_10ml("A: test line"),
        SyringePumpSpec::bd_10ml("B: control line"),
    ];
    let calibration = pump_specs.iter().map(microsteps_per_microliter).collect();
    let line = LineSpec::new(2.0 * VOLUME_PER_REAGENT, SECTION, SPEED)
        .with_mix(MixVector::new([50, 50]).expect("non-zero mix"))
        .starting_at(PRIME)
        .primed(PRIME);
    let mut metadata = BTreeMap::new();
    metadata.insert("assay".into(), "leptospirosis IgG lateral flow".into());
    metadata.insert("tip_separation_mm".into(), TIP_SEPARATION.into());
    metadata.insert("prime_length_assumed".into(), true.into());
    metadata.insert("channel_a".into(), "test line".into());
    metadata.insert("channel_b".into(), "control line".into());
    DispensePlan {
        membrane_window: [line.y_start, line.y_end()],
        lines: vec![line],
        pump_specs,
        calibration,
        metadata,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoSummary {
    /// Per-channel µL deposited over the membrane section.
    pub channel_volumes: Vec<f64>,
    /// Per-line DR, nL/mm.
    pub line_dr: f64,
    pub predicted_width: WidthPrediction,
    pub diagnostics: usize,
}

pub struct Demo {
    pub plan: DispensePlan,
    pub run: RoundTrip,
    pub summary: DemoSummary,
}

pub fn demo_leptospirosis() -> Result<Demo> {
    let plan = leptospirosis_plan();
    let run = round_trip(&plan)?;
    let channel_volumes = run.report.trace.volumes_within(plan.membrane_window);
    // Each line carries its own channel's share, so DR is per channel.
    let line_dr = 1000.0 * channel_volumes[0] / SECTION;
    let predicted_width = predict_width(&default_model(), line_dr)?;
    let diagnostics = run.report.diagnostics().count() + run.program.diagnostics.len();
    Ok(Demo {
        summary: DemoSummary {
            channel_volumes,
            line_dr,
            predicted_width,
            diagnostics,
        },
        plan,
        run,
    })
}
