//! Execution trace and per-position deposition.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Letter used for mixing channel `i` (`A`..`F`).
pub fn channel_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// One extruding move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// 1-based program line that produced the move.
    pub source_line: usize,
    pub y_from: f64,
    pub y_to: f64,
    /// Cartesian path length of the move, mm.
    pub path_length: f64,
    pub duration_s: f64,
    /// Change of the logical E axis, µL.
    pub delta_e: f64,
    /// Per-channel share of `delta_e`, µL.
    pub volumes: Vec<f64>,
    /// Volume per travel length, nL/mm. `None` for E-only moves.
    pub dr: Option<f64>,
    /// Per-channel pump flow, µL/min.
    pub flows: Vec<f64>,
    pub feedrate: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispenseTrace {
    pub channels: usize,
    pub segments: Vec<Segment>,
}

pub const TRACE_CSV_HEADER: &str =
    "segment,y_from_mm,y_to_mm,duration_s,ch,volume_uL,dr_nL_per_mm,flow_uL_per_min,warnings";

impl DispenseTrace {
    pub fn new(channels: usize) -> Self {
        DispenseTrace {
            channels,
            segments: Vec::new(),
        }
    }

    /// Per-channel sum over all segments, µL.
    pub fn total_volumes(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.channels];
        for seg in &self.segments {
            for (t, v) in totals.iter_mut().zip(&seg.volumes) {
                *t += v;
            }
        }
        totals
    }

    /// Per-channel volume deposited while the tip was inside `[lo, hi]` on
    /// Y, assuming constant DR along each segment.
    pub fn volumes_within(&self, window: [f64; 2]) -> Vec<f64> {
        let mut totals = vec![0.0; self.channels];
        for seg in &self.segments {
            let share = overlap_share(seg, window[0], window[1]);
            for (t, v) in totals.iter_mut().zip(&seg.volumes) {
                *t += v * share;
            }
        }
        totals
    }

    pub fn warning_count(&self) -> usize {
        self.segments.iter().map(|s| s.warnings.len()).sum()
    }

    /// One row per segment and channel, under [`TRACE_CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for (i, seg) in self.segments.iter().enumerate() {
            let dr = seg.dr.map(|d| d.to_string()).unwrap_or_default();
            let warnings = csv_field(&seg.warnings.join("|"));
            for ch in 0..self.channels {
                out.push_str(&format!(
                    "{i},{},{},{},{},{},{dr},{},{warnings}\n",
                    seg.y_from,
                    seg.y_to,
                    seg.duration_s,
                    channel_letter(ch),
                    seg.volumes[ch],
                    seg.flows[ch],
                ));
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fraction of a segment's volume that lands inside `[lo, hi]`.
fn overlap_share(seg: &Segment, lo: f64, hi: f64) -> f64 {
    let (a, b) = ordered(seg.y_from, seg.y_to);
    if b > a {
        let inside = (b.min(hi) - a.max(lo)).max(0.0);
        inside / (b - a)
    } else if a >= lo && a <= hi {
        1.0
    } else {
        0.0
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Volume binned along Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositionProfile {
    pub bin_width: f64,
    pub window: [f64; 2],
    /// `bins[ch][k]`: µL deposited by channel `ch` in bin `k`. The last bin
    /// is shorter when the window is not a whole number of bins.
    pub bins: Vec<Vec<f64>>,
    /// Per-channel volume outside the window (priming and overrun), µL.
    pub outside: Vec<f64>,
}

impl DepositionProfile {
    pub fn bin_count(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }

    pub fn bin_start(&self, k: usize) -> f64 {
        self.window[0] + k as f64 * self.bin_width
    }

    pub fn window_totals(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.iter().sum()).collect()
    }
}

/// Spread each segment's volume uniformly over the Y interval it covers and
/// accumulate it into `bin`-mm bins across `window`.
pub fn deposition_profile(
    trace: &DispenseTrace,
    window: [f64; 2],
    bin: f64,
) -> Result<DepositionProfile> {
    let [lo, hi] = window;
    if !(bin.is_finite() && bin > 0.0) {
        return Err(Error::domain(format!("bin width must be positive, got {bin}")));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::domain(format!("window [{lo}, {hi}] is empty")));
    }
    let span = hi - lo;
    // Tolerate a window that is a whole number of bins up to rounding.
    let n = ((span / bin) - 1e-9).ceil().max(1.0) as usize;
    let edge = |k: usize| if k >= n { hi } else { lo + k as f64 * bin };

    let mut bins = vec![vec![0.0; n]; trace.channels];
    let mut outside = vec![0.0; trace.channels];

    for seg in &trace.segments {
        let (a, b) = ordered(seg.y_from, seg.y_to);
        if b > a {
            let len = b - a;
            let first = (((a.max(lo) - lo) / bin).floor() as usize).min(n - 1);
            let mut inside_share = 0.0;
            if b > lo && a < hi {
                for k in first..n {
                    let (s, e) = (edge(k), edge(k + 1));
                    if s >= b {
                        break;
                    }
                    let overlap = (e.min(b) - s.max(a)).max(0.0);
                    if overlap > 0.0 {
                        let share = overlap / len;
                        inside_share += share;
                        for ch in 0..trace.channels {
                            bins[ch][k] += seg.volumes[ch] * share;
                        }
                    }
                }
            }
            for ch in 0..trace.channels {
                outside[ch] += seg.volumes[ch] * (1.0 - inside_share);
            }
        } else if a >= lo && a <= hi {
            let k = (((a - lo) / bin).floor() as usize).min(n - 1);
            for ch in 0..trace.channels {
                bins[ch][k] += seg.volumes[ch];
            }
        } else {
            for ch in 0..trace.channels {
                outside[ch] += seg.volumes[ch];
            }
        }
    }

    Ok(DepositionProfile {
        bin_width: bin,
        window,
        bins,
        outside,
    })
}
