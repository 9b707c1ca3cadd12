//! Virtual dispensing rig: executes Marlin-dialect G-code against a bed
//! (Y travel) and a mixing extruder whose channels are syringe pumps.
//!
//! E values are volumes in µL; the `M92 E` constant is only checked for
//! positivity since microstep rounding sits far below what a scan can
//! resolve. Moves take `length / feedrate`; acceleration is not modeled.
//! Only absolute positioning and absolute E are supported.

mod parse;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::microsteps_per_microliter;
use crate::model::{MixVector, SyringePumpSpec};
use crate::par::Exec;
use crate::{Error, Result};

pub use parse::{format_decimal, parse_line, parse_program, Command, CommandKind};
pub use trace::{
    channel_letter, deposition_profile, DepositionProfile, DispenseTrace, Segment,
    TRACE_CSV_HEADER,
};

/// Mixing channels addressable through `M165`.
pub const MAX_CHANNELS: usize = 6;

/// Rig description loaded from `machine.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    /// One pump per mixing channel, in `A`, `B`, .. order.
    pub pump_specs: Vec<SyringePumpSpec>,
    /// Feedrate used before any `F` word has been seen, mm/min.
    #[serde(default = "default_feedrate")]
    pub default_feedrate: f64,
}

fn default_feedrate() -> f64 {
    3000.0
}

impl MachineConfig {
    pub fn new(pump_specs: Vec<SyringePumpSpec>) -> Self {
        MachineConfig {
            pump_specs,
            default_feedrate: default_feedrate(),
        }
    }

    pub fn channels(&self) -> usize {
        self.pump_specs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pump_specs.is_empty() || self.pump_specs.len() > MAX_CHANNELS {
            return Err(Error::domain(format!(
                "machine needs 1..={MAX_CHANNELS} pumps, got {}",
                self.pump_specs.len()
            )));
        }
        for p in &self.pump_specs {
            p.validate()?;
        }
        if !(self.default_feedrate.is_finite() && self.default_feedrate > 0.0) {
            return Err(Error::domain("default_feedrate must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: MachineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Power-on state: at the origin, all volume on channel A, cold
    /// extrusion blocked, steps/µL from channel A's geometry.
    pub fn initial_state(&self) -> MachineState {
        MachineState {
            position: [0.0; 3],
            e_position: 0.0,
            feedrate: None,
            steps_per_microliter: microsteps_per_microliter(&self.pump_specs[0])
                .microsteps_per_microliter,
            mix: MixVector::first_of(self.channels()),
            cold_extrusion_allowed: false,
            elapsed: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    /// X, Y, Z, mm.
    pub position: [f64; 3],
    /// Logical extruder axis, µL.
    pub e_position: f64,
    /// mm/min; `None` until an `F` word is seen.
    pub feedrate: Option<f64>,
    pub steps_per_microliter: f64,
    pub mix: MixVector,
    pub cold_extrusion_allowed: bool,
    /// Seconds of motion so far.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ColdExtrusion,
    ExtrusionOnRapid,
    BadStepsPerUnit,
    BadMix,
    RelativeMode,
    UnsupportedUnits,
    FlowLimit,
    DefaultFeedrate,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// 1-based program line.
    pub line: usize,
    pub severity: Severity,
    pub kind: EventKind,
    pub message: String,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "line {}: {sev}: {}", self.line, self.message)
    }
}

/// Outcome of a single command.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: MachineState,
    pub segment: Option<Segment>,
    pub events: Vec<Event>,
}

/// Outcome of a whole program. On the first error-class event execution
/// stops; `trace` then holds the segments produced before it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub trace: DispenseTrace,
    pub final_state: MachineState,
    pub events: Vec<Event>,
    pub error: Option<Event>,
}

impl RunReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Warnings and errors, without the informational log.
    pub fn diagnostics(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.severity > Severity::Info)
    }
}

pub struct Machine {
    config: MachineConfig,
}

impl Machine {
    pub fn new(config: MachineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Machine { config })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn initial_state(&self) -> MachineState {
        self.config.initial_state()
    }

    /// Apply one command. Error-class events leave the returned state equal
    /// to the input state.
    pub fn execute(&self, state: &MachineState, cmd: &Command, line: usize) -> Step {
        let mut next = state.clone();
        let mut events = Vec::new();
        let mut segment = None;
        let mut event = |severity, kind, message: String| {
            events.push(Event {
                line,
                severity,
                kind,
                message,
            })
        };

        match &cmd.kind {
            CommandKind::Comment => {}
            CommandKind::G0 | CommandKind::G1 => {
                let rapid = cmd.kind == CommandKind::G0;
                if rapid && cmd.has('E') {
                    event(
                        Severity::Error,
                        EventKind::ExtrusionOnRapid,
                        "E word on G0; G0 is reserved for non-extrusion moves".into(),
                    );
                } else {
                    self.motion(state, cmd, line, &mut next, &mut segment, &mut event);
                }
            }
            CommandKind::G92 => {
                if cmd.words.is_empty() {
                    next.position = [0.0; 3];
                    next.e_position = 0.0;
                }
                for &(letter, value) in &cmd.words {
                    match letter {
                        'X' => next.position[0] = value,
                        'Y' => next.position[1] = value,
                        'Z' => next.position[2] = value,
                        'E' => next.e_position = value,
                        _ => {}
                    }
                }
            }
            CommandKind::M92 => {
                if let Some(e) = cmd.word('E') {
                    if e > 0.0 {
                        next.steps_per_microliter = e;
                    } else {
                        event(
                            Severity::Error,
                            EventKind::BadStepsPerUnit,
                            format!("M92 E{} is not positive", format_decimal(e)),
                        );
                    }
                }
            }
            CommandKind::M165 => match self.mix_from(cmd) {
                Ok(mix) => next.mix = mix,
                Err(msg) => event(Severity::Error, EventKind::BadMix, msg),
            },
            CommandKind::M302 => {
                if let Some(p) = cmd.word('P') {
                    next.cold_extrusion_allowed = p != 0.0;
                } else if let Some(s) = cmd.word('S') {
                    next.cold_extrusion_allowed = s <= 0.0;
                }
            }
            CommandKind::Unsupported(code) => match code.as_str() {
                "M83" | "G91" => event(
                    Severity::Error,
                    EventKind::RelativeMode,
                    format!("{code}: relative mode is not supported; use absolute E (M82/G90)"),
                ),
                "G20" => event(
                    Severity::Error,
                    EventKind::UnsupportedUnits,
                    "G20: inch units are not supported".into(),
                ),
                "M82" | "G90" | "G21" => {}
                _ => event(
                    Severity::Info,
                    EventKind::Skipped,
                    format!("{code} skipped: `{}`", cmd.raw),
                ),
            },
        }

        if events.iter().any(|e| e.severity == Severity::Error) {
            return Step {
                state: state.clone(),
                segment: None,
                events,
            };
        }
        Step {
            state: next,
            segment,
            events,
        }
    }

    fn mix_from(&self, cmd: &Command) -> std::result::Result<MixVector, String> {
        let channels = self.config.channels();
        let mut weights = vec![0u32; channels];
        for &(letter, value) in &cmd.words {
            let Some(ch) = ('A'..='F').position(|c| c == letter) else {
                continue;
            };
            if value < 0.0 || value.fract() != 0.0 || value > f64::from(u32::MAX) {
                return Err(format!(
                    "M165 {letter}{} must be a non-negative integer",
                    format_decimal(value)
                ));
            }
            if ch >= channels {
                if value > 0.0 {
                    return Err(format!(
                        "M165 {letter}: channel not fitted ({channels} pump(s))"
                    ));
                }
                continue;
            }
            weights[ch] = value as u32;
        }
        MixVector::new(weights).map_err(|_| "M165 with all channels zero".to_string())
    }

    fn motion(
        &self,
        state: &MachineState,
        cmd: &Command,
        line: usize,
        next: &mut MachineState,
        segment: &mut Option<Segment>,
        event: &mut impl FnMut(Severity, EventKind, String),
    ) {
        if let Some(f) = cmd.word('F') {
            if f > 0.0 {
                next.feedrate = Some(f);
            }
        }
        let target = [
            cmd.word('X').unwrap_or(state.position[0]),
            cmd.word('Y').unwrap_or(state.position[1]),
            cmd.word('Z').unwrap_or(state.position[2]),
        ];
        let target_e = cmd.word('E').unwrap_or(state.e_position);
        let delta_e = target_e - state.e_position;

        if delta_e > 0.0 && !state.cold_extrusion_allowed {
            event(
                Severity::Error,
                EventKind::ColdExtrusion,
                "extrusion blocked: cold extrusion not enabled (send M302 P1)".into(),
            );
            return;
        }

        let feedrate = match next.feedrate {
            Some(f) => f,
            None => {
                let moves = target != state.position || delta_e != 0.0;
                if moves {
                    event(
                        Severity::Warning,
                        EventKind::DefaultFeedrate,
                        format!(
                            "no feedrate set; using {} mm/min",
                            format_decimal(self.config.default_feedrate)
                        ),
                    );
                }
                self.config.default_feedrate
            }
        };

        let path_length = target
            .iter()
            .zip(&state.position)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // E-only moves run the extruder at the feedrate.
        let travel = if path_length > 0.0 {
            path_length
        } else {
            delta_e.abs()
        };
        let duration_s = travel / feedrate * 60.0;

        next.position = target;
        next.e_position = target_e;
        next.elapsed = state.elapsed + duration_s;

        if delta_e == 0.0 {
            return;
        }

        let fractions = state.mix.normalized();
        let volumes: Vec<f64> = fractions.iter().map(|f| f * delta_e).collect();
        let flows: Vec<f64> = volumes.iter().map(|v| v * feedrate / travel).collect();
        let dr = (path_length > 0.0).then(|| 1000.0 * delta_e / path_length);

        let mut warnings = Vec::new();
        for (ch, (flow, spec)) in flows.iter().zip(&self.config.pump_specs).enumerate() {
            if flow.abs() > spec.max_flow_rate {
                let msg = format!(
                    "channel {} flow {} uL/min exceeds pump limit {} uL/min",
                    channel_letter(ch),
                    format_decimal(flow.abs()),
                    format_decimal(spec.max_flow_rate)
                );
                event(Severity::Warning, EventKind::FlowLimit, msg.clone());
                warnings.push(msg);
            }
        }

        *segment = Some(Segment {
            source_line: line,
            y_from: state.position[1],
            y_to: target[1],
            path_length,
            duration_s,
            delta_e,
            volumes,
            dr,
            flows,
            feedrate,
            warnings,
        });
    }

    /// Execute commands in order from `initial`, stopping at the first
    /// error-class event.
    pub fn run(&self, commands: &[Command], initial: MachineState) -> RunReport {
        let mut state = initial;
        let mut trace = DispenseTrace::new(self.config.channels());
        let mut events = Vec::new();
        let mut error = None;
        for (i, cmd) in commands.iter().enumerate() {
            let step = self.execute(&state, cmd, i + 1);
            let failed = step.events.iter().find(|e| e.severity == Severity::Error).cloned();
            events.extend(step.events);
            if failed.is_some() {
                error = failed;
                break;
            }
            state = step.state;
            if let Some(seg) = step.segment {
                trace.segments.push(seg);
            }
        }
        RunReport {
            trace,
            final_state: state,
            events,
            error,
        }
    }

    /// Parse and execute program text.
    pub fn run_text(&self, text: &str, initial: MachineState) -> Result<RunReport> {
        let commands = parse_program(text)?;
        Ok(self.run(&commands, initial))
    }

    /// Run several programs from the power-on state, one report per program.
    pub fn run_batch(&self, programs: &[Vec<Command>], exec: Exec) -> Vec<RunReport> {
        exec.map(programs, |p| self.run(p, self.initial_state()))
    }
}
