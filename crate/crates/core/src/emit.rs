//! Plan to G-code compiler.
//!
//! Each pass becomes
//!
//! ```text
//! ; pass 0: ...
//! M165 A50 B50
//! G0 F3000 Y<y_start - prime>
//! G92 E0
//! G1 F3000 Y<y_start> E<prime volume>      ; only when prime_length > 0
//! G92 E0
//! G1 F3000 Y<y_start + travel> E<total_volume>
//! ```
//!
//! E is absolute and reset with `G92 E0` before every extruding move, so
//! the dispensing move carries the pass volume verbatim.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{dispense_rate, DispensePlan};
use crate::par::Exec;
use crate::vm::{
    channel_letter, format_decimal, parse_program, Machine, MachineConfig, RunReport, Severity,
};
use crate::{Error, Result};

/// Bed speeds the width data was collected over, mm/min.
pub const SPEED_ENVELOPE: (f64, f64) = (1500.0, 5500.0);
/// Lowest per-channel DR that produced continuous lines, nL/mm.
pub const LOW_DR: f64 = 15.0;
/// Per-channel DR found to over-seed the membrane (19.2 µL over 180 mm), nL/mm.
pub const HIGH_DR: f64 = 320.0 / 3.0;

const DR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub message: String,
    /// Pass the diagnostic refers to; `None` for plan-wide findings.
    pub pass: Option<usize>,
}

impl Diagnostic {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.pass {
            Some(p) => write!(f, "{sev}[{}] pass {p}: {}", self.code, self.message),
            None => write!(f, "{sev}[{}]: {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticCode {
    PlanStructure,
    FlowLimit,
    SpeedEnvelope,
    LowDr,
    HighDr,
    CalibrationMismatch,
    Precision,
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticCode::PlanStructure => "plan-structure",
            DiagnosticCode::FlowLimit => "flow-limit",
            DiagnosticCode::SpeedEnvelope => "speed-envelope",
            DiagnosticCode::LowDr => "low-dr",
            DiagnosticCode::HighDr => "high-dr",
            DiagnosticCode::CalibrationMismatch => "calibration-mismatch",
            DiagnosticCode::Precision => "precision",
        };
        f.write_str(s)
    }
}

/// Check a plan against pump limits and the envelope the width data covers.
pub fn validate_plan(plan: &DispensePlan) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |severity, code, pass, message: String| {
        out.push(Diagnostic {
            severity,
            code,
            message,
            pass,
        })
    };

    if let Err(e) = plan.check() {
        push(Severity::Error, DiagnosticCode::PlanStructure, None, e.to_string());
        return out;
    }

    let reference = plan.calibration[0].microsteps_per_microliter;
    for (ch, cal) in plan.calibration.iter().enumerate().skip(1) {
        let v = cal.microsteps_per_microliter;
        if (v - reference).abs() > 1e-9 * reference {
            push(
                Severity::Warning,
                DiagnosticCode::CalibrationMismatch,
                None,
                format!(
                    "channel {} calibration {} differs from channel A {}; only one M92 E is emitted",
                    channel_letter(ch),
                    format_decimal(v),
                    format_decimal(reference)
                ),
            );
        }
    }

    for (i, line) in plan.lines.iter().enumerate() {
        let ds = line.dispensing_speed;
        if ds < SPEED_ENVELOPE.0 || ds > SPEED_ENVELOPE.1 {
            push(
                Severity::Warning,
                DiagnosticCode::SpeedEnvelope,
                Some(i),
                format!(
                    "DS {} mm/min outside {}..{} mm/min",
                    format_decimal(ds),
                    SPEED_ENVELOPE.0,
                    SPEED_ENVELOPE.1
                ),
            );
        }
        let total_dr = dispense_rate(line);
        for (ch, spec) in plan.pump_specs.iter().enumerate() {
            let fraction = line.mix.fraction(ch).unwrap_or(0.0);
            if fraction == 0.0 {
                continue;
            }
            let flow = fraction * line.total_volume * ds / line.travel_distance;
            if flow > spec.max_flow_rate {
                push(
                    Severity::Error,
                    DiagnosticCode::FlowLimit,
                    Some(i),
                    format!(
                        "channel {} needs {} uL/min, pump limit is {} uL/min",
                        channel_letter(ch),
                        format_decimal(flow),
                        format_decimal(spec.max_flow_rate)
                    ),
                );
            }
            let dr = fraction * total_dr;
            if dr < LOW_DR * (1.0 - DR_SLACK) {
                push(
                    Severity::Warning,
                    DiagnosticCode::LowDr,
                    Some(i),
                    format!(
                        "channel {} DR {} nL/mm below {LOW_DR} nL/mm; expect discontinuities",
                        channel_letter(ch),
                        format_decimal(dr)
                    ),
                );
            } else if dr >= HIGH_DR * (1.0 - DR_SLACK) {
                push(
                    Severity::Warning,
                    DiagnosticCode::HighDr,
                    Some(i),
                    format!(
                        "channel {} DR {} nL/mm at or above {} nL/mm; liquid will not absorb uniformly",
                        channel_letter(ch),
                        format_decimal(dr),
                        format_decimal(HIGH_DR)
                    ),
                );
            }
        }
        for (name, v) in [
            ("total_volume", line.total_volume),
            ("dispensing_speed", ds),
        ] {
            if !representable(v) {
                push(
                    Severity::Warning,
                    DiagnosticCode::Precision,
                    Some(i),
                    format!("{name} {v} is rounded to 4 decimals in G-code"),
                );
            }
        }
    }
    out
}

fn representable(v: f64) -> bool {
    format_decimal(v).parse::<f64>().is_ok_and(|r| r == v)
}

/// Which part of the plan a program line came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanElement {
    Header,
    Pass { index: usize, part: PassPart },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassPart {
    Annotation,
    Mix,
    Travel,
    Reset,
    Prime,
    Dispense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GCodeProgram {
    pub lines: Vec<String>,
    /// `provenance[i]` is the origin of `lines[i]`.
    pub provenance: Vec<PlanElement>,
    /// Non-fatal findings from [`validate_plan`].
    pub diagnostics: Vec<Diagnostic>,
}

impl GCodeProgram {
    pub fn to_text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    /// 0-based indices of lines produced by `element`.
    pub fn lines_of(&self, element: PlanElement) -> impl Iterator<Item = usize> + '_ {
        self.provenance
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == element)
            .map(|(i, _)| i)
    }
}

struct Builder {
    lines: Vec<String>,
    provenance: Vec<PlanElement>,
}

impl Builder {
    fn push(&mut self, element: PlanElement, line: String) {
        self.lines.push(line);
        self.provenance.push(element);
    }
}

pub fn compile_plan(plan: &DispensePlan) -> Result<GCodeProgram> {
    let diagnostics = validate_plan(plan);
    if diagnostics.iter().any(Diagnostic::is_error) {
        return Err(Error::Validation(diagnostics));
    }

    let mut b = Builder {
        lines: Vec::new(),
        provenance: Vec::new(),
    };
    b.push(PlanElement::Header, "M302 P1".into());
    b.push(
        PlanElement::Header,
        format!(
            "M92 E{}",
            format_decimal(plan.calibration[0].microsteps_per_microliter)
        ),
    );

    for (index, line) in plan.lines.iter().enumerate() {
        let at = |part| PlanElement::Pass { index, part };
        let mix_words: Vec<String> = line
            .mix
            .fractions
            .iter()
            .enumerate()
            .map(|(ch, w)| format!("{}{w}", channel_letter(ch)))
            .collect();
        let f = format_decimal(line.dispensing_speed);

        b.push(
            at(PassPart::Annotation),
            format!(
                "; pass {index}: {} uL over {} mm, DS {f} mm/min, DR {} nL/mm, prime {} mm",
                format_decimal(line.total_volume),
                format_decimal(line.travel_distance),
                format_decimal(dispense_rate(line)),
                format_decimal(line.prime_length),
            ),
        );
        b.push(at(PassPart::Mix), format!("M165 {}", mix_words.join(" ")));
        b.push(
            at(PassPart::Travel),
            format!(
                "G0 F{f} Y{}",
                format_decimal(line.y_start - line.prime_length)
            ),
        );
        if line.prime_length > 0.0 {
            let prime_volume = line.total_volume * line.prime_length / line.travel_distance;
            b.push(at(PassPart::Reset), "G92 E0".into());
            b.push(
                at(PassPart::Prime),
                format!(
                    "G1 F{f} Y{} E{}",
                    format_decimal(line.y_start),
                    format_decimal(prime_volume)
                ),
            );
        }
        b.push(at(PassPart::Reset), "G92 E0".into());
        b.push(
            at(PassPart::Dispense),
            format!(
                "G1 F{f} Y{} E{}",
                format_decimal(line.y_end()),
                format_decimal(line.total_volume)
            ),
        );
    }

    Ok(GCodeProgram {
        lines: b.lines,
        provenance: b.provenance,
        diagnostics,
    })
}

/// Result of compiling a plan and running it on the matching virtual rig.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub program: GCodeProgram,
    pub report: RunReport,
    /// `pass_volumes[pass][ch]`: µL from the pass's dispensing move.
    pub pass_volumes: Vec<Vec<f64>>,
    /// `prime_volumes[pass][ch]`: µL from the pass's priming move.
    pub prime_volumes: Vec<Vec<f64>>,
}

impl RoundTrip {
    /// Largest |simulated − planned| per-channel pass volume, µL.
    pub fn max_volume_error(&self, plan: &DispensePlan) -> f64 {
        plan.lines
            .iter()
            .zip(&self.pass_volumes)
            .flat_map(|(line, got)| {
                line.mix
                    .normalized()
                    .into_iter()
                    .zip(got)
                    .map(move |(f, g)| (f * line.total_volume - g).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Compile, print, re-parse and execute `plan`.
pub fn round_trip(plan: &DispensePlan) -> Result<RoundTrip> {
    let program = compile_plan(plan)?;
    let commands = parse_program(&program.to_text())?;
    let machine = Machine::new(MachineConfig::new(plan.pump_specs.clone()))?;
    let report = machine.run(&commands, machine.initial_state());

    let channels = plan.channels();
    let mut pass_volumes = vec![vec![0.0; channels]; plan.lines.len()];
    let mut prime_volumes = vec![vec![0.0; channels]; plan.lines.len()];
    for seg in &report.trace.segments {
        if let Some(PlanElement::Pass { index, part }) = program.provenance.get(seg.source_line - 1)
        {
            let target = match part {
                PassPart::Dispense => &mut pass_volumes[*index],
                PassPart::Prime => &mut prime_volumes[*index],
                _ => continue,
            };
            for (t, v) in target.iter_mut().zip(&seg.volumes) {
                *t += v;
            }
        }
    }
    Ok(RoundTrip {
        program,
        report,
        pass_volumes,
        prime_volumes,
    })
}

/// [`round_trip`] over many plans.
pub fn round_trip_batch(plans: &[DispensePlan], exec: Exec) -> Vec<Result<RoundTrip>> {
    exec.map(plans, round_trip)
}
