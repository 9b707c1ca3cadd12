//! Domain types shared by every stage of the toolchain.
//!
//! All values are plain immutable data. Volumes are µL, lengths mm, speeds
//! mm/min, flows µL/min. The dispensing rate (volume per travel length) is
//! reported in nL/mm, i.e. µL/mm × 1000, which is the magnitude the
//! published width data is quoted in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Microstep settings a stepper driver can be strapped to.
pub const MICROSTEP_CHOICES: [u32; 6] = [1, 2, 4, 8, 16, 32];

/// Mechanical description of one syringe pump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyringePumpSpec {
    /// Full steps per motor revolution.
    pub steps_per_rev: u32,
    /// Driver microsteps per full step.
    pub microstepping: u32,
    /// Syringe barrel inner diameter, mm.
    pub syringe_inner_diameter: f64,
    /// Leadscrew travel per revolution, mm/rev.
    pub leadscrew_lead: f64,
    /// Firmware E-axis speed ceiling expressed as volume flow, µL/min.
    pub max_flow_rate: f64,
    #[serde(default)]
    pub label: String,
}

impl SyringePumpSpec {
    /// The pumps used for the published experiments: 200-step NEMA motor,
    /// 1/16 microstepping, BD 10 mL syringe (14.5 mm bore), 8 mm lead.
    pub fn bd_10ml(label: impl Into<String>) -> Self {
        SyringePumpSpec {
            steps_per_rev: 200,
            microstepping: 16,
            syringe_inner_diameter: 14.5,
            leadscrew_lead: 8.0,
            max_flow_rate: 500.0,
            label: label.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_rev == 0 {
            return Err(Error::domain("steps_per_rev must be positive"));
        }
        if !MICROSTEP_CHOICES.contains(&self.microstepping) {
            return Err(Error::domain(format!(
                "microstepping {} is not one of {MICROSTEP_CHOICES:?}",
                self.microstepping
            )));
        }
        for (name, v) in [
            ("syringe_inner_diameter", self.syringe_inner_diameter),
            ("leadscrew_lead", self.leadscrew_lead),
            ("max_flow_rate", self.max_flow_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationSource {
    Geometric,
    Gravimetric,
}

/// Steps-per-volume constant loaded into the firmware with `M92 E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub microsteps_per_microliter: f64,
    pub source: CalibrationSource,
}

impl CalibrationResult {
    pub fn validate(&self) -> Result<()> {
        let v = self.microsteps_per_microliter;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::domain(format!(
                "microsteps_per_microliter must be positive, got {v}"
            )));
        }
        Ok(())
    }
}

/// Per-channel split of one logical extrusion, stored as the raw `M165`
/// weights (`A80 B20` is `[80, 20]`) so that emitted commands reproduce the
/// input exactly. Normalization happens on demand.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixVector {
    pub fractions: Vec<u32>,
}

impl MixVector {
    pub fn new(weights: impl Into<Vec<u32>>) -> Result<Self> {
        let mix = MixVector {
            fractions: weights.into(),
        };
        mix.validate()?;
        Ok(mix)
    }

    /// All volume on the first channel.
    pub fn single() -> Self {
        MixVector {
            fractions: vec![100],
        }
    }

    /// `[100, 0, ..]` over `channels` channels.
    pub fn first_of(channels: usize) -> Self {
        let mut fractions = vec![0; channels.max(1)];
        fractions[0] = 100;
        MixVector { fractions }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().all(|&w| w == 0) {
            return Err(Error::domain("mix needs at least one positive weight"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.fractions.len()
    }

    fn total(&self) -> u64 {
        self.fractions.iter().map(|&w| u64::from(w)).sum()
    }

    /// Share of channel `ch`, or `None` when the channel does not exist.
    pub fn fraction(&self, ch: usize) -> Option<f64> {
        let w = *self.fractions.get(ch)?;
        Some(f64::from(w) / self.total() as f64)
    }

    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.fractions.iter().map(|&w| f64::from(w) / total).collect()
    }

    /// Same mix padded with zero weights up to `channels` entries.
    pub fn padded(&self, channels: usize) -> MixVector {
        let mut fractions = self.fractions.clone();
        if fractions.len() < channels {
            fractions.resize(channels, 0);
        }
        MixVector { fractions }
    }
}

/// One dispensing pass. Every channel of the mix travels together; the
/// split between them comes from `mix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    /// Volume laid down over `travel_distance` (priming excluded), µL.
    pub total_volume: f64,
    /// mm
    pub travel_distance: f64,
    /// Bed speed DS, mm/min.
    pub dispensing_speed: f64,
    pub mix: MixVector,
    /// Where the measured travel begins, mm along Y.
    pub y_start: f64,
    /// Extra travel dispensed at the same DR before `y_start`, mm.
    #[serde(default)]
    pub prime_length: f64,
}

impl LineSpec {
    pub fn new(total_volume: f64, travel_distance: f64, dispensing_speed: f64) -> Self {
        LineSpec {
            total_volume,
            travel_distance,
            dispensing_speed,
            mix: MixVector::single(),
            y_start: 0.0,
            prime_length: 0.0,
        }
    }

    pub fn with_mix(mut self, mix: MixVector) -> Self {
        self.mix = mix;
        self
    }

    pub fn starting_at(mut self, y_start: f64) -> Self {
        self.y_start = y_start;
        self
    }

    pub fn primed(mut self, prime_length: f64) -> Self {
        self.prime_length = prime_length;
        self
    }

    pub fn y_end(&self) -> f64 {
        self.y_start + self.travel_distance
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.total_volume,
            self.travel_distance,
            self.dispensing_speed,
            self.y_start,
            self.prime_length,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("line fields must be finite"));
        }
        if self.total_volume < 0.0 {
            return Err(Error::domain("total_volume must be >= 0"));
        }
        if self.travel_distance <= 0.0 {
            return Err(Error::domain("travel_distance must be > 0"));
        }
        if self.dispensing_speed <= 0.0 {
            return Err(Error::domain("dispensing_speed must be > 0"));
        }
        if self.prime_length < 0.0 {
            return Err(Error::domain("prime_length must be >= 0"));
        }
        self.mix.validate()
    }
}

/// Dispensing rate of a pass over all channels combined, nL/mm.
pub fn dispense_rate(line: &LineSpec) -> f64 {
    1000.0 * line.total_volume / line.travel_distance
}

/// Pump flow a channel must sustain for the pass: fraction × volume × DS /
/// distance, µL/min.
pub fn pump_flow_rate(line: &LineSpec, channel: usize) -> Result<f64> {
    let fraction = line.mix.fraction(channel).ok_or(Error::ChannelOutOfRange {
        channel,
        channels: line.mix.channels(),
    })?;
    Ok(fraction * line.total_volume * line.dispensing_speed / line.travel_distance)
}

/// A full run on one membrane: the passes, the region that will be imaged,
/// and the pumps behind each mixing channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispensePlan {
    pub lines: Vec<LineSpec>,
    /// `[start, end]` mm along Y.
    pub membrane_window: [f64; 2],
    pub pump_specs: Vec<SyringePumpSpec>,
    pub calibration: Vec<CalibrationResult>,
    /// Free-form annotations (tip spacing, reagent names). Not used in any
    /// computation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl DispensePlan {
    pub fn channels(&self) -> usize {
        self.pump_specs.len()
    }

    /// Structural invariants. Physical limits are checked separately by
    /// [`crate::emit::validate_plan`].
    pub fn check(&self) -> Result<()> {
        if self.pump_specs.is_empty() {
            return Err(Error::domain("plan needs at least one pump"));
        }
        if self.calibration.len() != self.pump_specs.len() {
            return Err(Error::domain(format!(
                "{} calibration(s) for {} pump(s)",
                self.calibration.len(),
                self.pump_specs.len()
            )));
        }
        for spec in &self.pump_specs {
            spec.validate()?;
        }
        for cal in &self.calibration {
            cal.validate()?;
        }
        let [lo, hi] = self.membrane_window;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!(
                "membrane_window [{lo}, {hi}] is empty"
            )));
        }
        for (i, line) in self.lines.iter().enumerate() {
            line.validate()
                .map_err(|e| Error::domain(format!("pass {i}: {e}")))?;
            if line.mix.channels() != self.channels() {
                return Err(Error::domain(format!(
                    "pass {i}: mix has {} channel(s), plan has {} pump(s)",
                    line.mix.channels(),
                    self.channels()
                )));
            }
            if lo < line.y_start || hi > line.y_end() {
                return Err(Error::domain(format!(
                    "pass {i}: membrane window [{lo}, {hi}] outside travel [{}, {}]",
                    line.y_start,
                    line.y_end()
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: DispensePlan = serde_json::from_str(text)?;
        plan.check()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line(v: f64, d: f64, ds: f64) -> LineSpec {
        LineSpec::new(v, d, ds)
    }

    #[test]
    fn dispense_rate_examples() {
        assert_relative_eq!(dispense_rate(&line(20.0, 200.0, 3000.0)), 100.0);
        assert_eq!(dispense_rate(&line(0.0, 180.0, 3000.0)), 0.0);
        assert_relative_eq!(
            dispense_rate(&line(12.0, 180.0, 3000.0)),
            66.666_666_666_666_67,
            max_relative = 1e-12
        );
    }

    #[test]
    fn flow_rate_examples() {
        assert_relative_eq!(pump_flow_rate(&line(20.0, 200.0, 3000.0), 0).unwrap(), 300.0);
        let l = line(24.0, 180.0, 3000.0).with_mix(MixVector::new([80, 20]).unwrap());
        assert_relative_eq!(pump_flow_rate(&l, 1).unwrap(), 80.0, max_relative = 1e-12);
        let l = line(24.0, 180.0, 3000.0).with_mix(MixVector::new([100, 0]).unwrap());
        assert_eq!(pump_flow_rate(&l, 1).unwrap(), 0.0);
        assert!(matches!(
            pump_flow_rate(&l, 2),
            Err(Error::ChannelOutOfRange { channel: 2, channels: 2 })
        ));
    }

    #[test]
    fn all_zero_mix_rejected() {
        assert!(MixVector::new([0, 0]).is_err());
        assert!(MixVector::new(Vec::<u32>::new()).is_err());
    }

    #[test]
    fn pump_spec_limits() {
        let mut s = SyringePumpSpec::bd_10ml("A");
        assert!(s.validate().is_ok());
        s.microstepping = 12;
        assert!(s.validate().is_err());
        s.microstepping = 16;
        s.syringe_inner_diameter = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn plan_json_field_names() {
        let plan = DispensePlan {
            lines: vec![line(20.0, 200.0, 3000.0)],
            membrane_window: [40.0, 110.0],
            pump_specs: vec![SyringePumpSpec::bd_10ml("A")],
            calibration: vec![CalibrationResult {
                microsteps_per_microliter: 2.4223,
                source: CalibrationSource::Geometric,
            }],
            metadata: BTreeMap::new(),
        };
        let text = plan.to_json();
        for key in [
            "\"lines\"",
            "\"total_volume\"",
            "\"travel_distance\"",
            "\"dispensing_speed\"",
            "\"mix\"",
            "\"fractions\"",
            "\"y_start\"",
            "\"prime_length\"",
            "\"membrane_window\"",
            "\"pump_specs\"",
            "\"steps_per_rev\"",
            "\"microstepping\"",
            "\"syringe_inner_diameter\"",
            "\"leadscrew_lead\"",
            "\"max_flow_rate\"",
            "\"calibration\"",
            "\"microsteps_per_microliter\"",
            "\"geometric\"",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
        assert_eq!(DispensePlan::from_json(&text).unwrap(), plan);
    }

    #[test]
    fn plan_window_must_sit_inside_travel() {
        let mut plan = DispensePlan {
            lines: vec![line(20.0, 200.0, 3000.0)],
            membrane_window: [40.0, 210.0],
            pump_specs: vec![SyringePumpSpec::bd_10ml("A")],
            calibration: vec![CalibrationResult {
                microsteps_per_microliter: 2.4223,
                source: CalibrationSource::Geometric,
            }],
            metadata: BTreeMap::new(),
        };
        assert!(plan.check().is_err());
        plan.membrane_window = [40.0, 200.0];
        assert!(plan.check().is_ok());
        plan.lines[0].mix = MixVector::new([50, 50]).unwrap();
        assert!(plan.check().is_err());
    }

    proptest! {
        #[test]
        fn mix_split_conserves_volume(
            weights in prop::collection::vec(0u32..200, 1..6),
            v in 0.0f64..100.0,
            d in 1.0f64..300.0,
            ds in 100.0f64..8000.0,
        ) {
            prop_assume!(weights.iter().any(|&w| w > 0));
            let l = line(v, d, ds).with_mix(MixVector::new(weights.clone()).unwrap());
            let total: f64 = (0..weights.len())
                .map(|ch| pump_flow_rate(&l, ch).unwrap() * d / ds)
                .sum();
            prop_assert!((total - v).abs() <= 1e-9 * v.max(1e-12));
        }

        #[test]
        fn dispense_rate_scale_invariant(v in 0.0f64..100.0, d in 1.0f64..300.0, k in 0.01f64..100.0) {
            let a = dispense_rate(&line(v, d, 3000.0));
            let b = dispense_rate(&line(v * k, d * k, 3000.0));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn normalization_idempotent(weights in prop::collection::vec(1u32..1000, 1..6)) {
            let mix = MixVector::new(weights).unwrap();
            let once = mix.normalized();
            let sum: f64 = once.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let twice: Vec<f64> = once.iter().map(|f| f / sum).collect();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
