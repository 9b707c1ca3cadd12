//! Empirical dispensing-rate to line-width model.
//!
//! Width on nitrocellulose is driven by volume per length (DR), not by bed
//! speed, and saturates near the tip's outer diameter. The model is a
//! piecewise-linear table of measured (DR, width) pairs with a ceiling.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthDatum {
    /// nL/mm
    pub dr: f64,
    /// mm
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthModel {
    pub data: Vec<WidthDatum>,
    /// Saturation width, mm.
    pub w_max: f64,
    #[serde(default = "default_tip")]
    pub tip_outer_diameter: f64,
}

fn default_tip() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WidthFlag {
    /// Below the measured range; lines this thin tend to break up.
    LowDr,
    /// Above the measured range; the membrane no longer absorbs uniformly.
    ExcessDr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthPrediction {
    /// mm
    pub width: f64,
    pub flags: Vec<WidthFlag>,
}

/// Widths measured with a 22G catheter (0.9 mm OD) on nitrocellulose.
///
/// The 66.7 nL/mm point is the mean of two lines dispensed simultaneously at
/// that rate (0.82 and 0.81 mm).
pub fn default_model() -> WidthModel {
    let data = [
        (15.0, 0.487),
        (30.0, 0.562),
        (60.0, 0.74),
        (66.7, 0.815),
        (75.0, 0.95),
        (106.67, 0.96),
    ]
    .into_iter()
    .map(|(dr, width)| WidthDatum { dr, width })
    .collect();
    WidthModel {
        data,
        w_max: 0.96,
        tip_outer_diameter: 0.9,
    }
}

impl WidthModel {
    pub fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::domain("width model needs at least one datum"));
        }
        for d in &self.data {
            if !(d.dr.is_finite() && d.dr >= 0.0) {
                return Err(Error::domain(format!("datum dr {} must be >= 0", d.dr)));
            }
            if !(d.width.is_finite() && d.width > 0.0) {
                return Err(Error::domain(format!("datum width {} must be > 0", d.width)));
            }
        }
        for pair in self.data.windows(2) {
            if pair[1].dr <= pair[0].dr {
                return Err(Error::domain("width data must have strictly increasing dr"));
            }
            if pair[1].width < pair[0].width {
                return Err(Error::domain("width data must be non-decreasing in dr"));
            }
        }
        let widest = self.data.iter().map(|d| d.width).fold(0.0, f64::max);
        if !(self.w_max >= widest) {
            return Err(Error::domain(format!(
                "w_max {} below widest datum {widest}",
                self.w_max
            )));
        }
        if !(self.tip_outer_diameter.is_finite() && self.tip_outer_diameter > 0.0) {
            return Err(Error::domain("tip_outer_diameter must be > 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: WidthModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn predict(&self, dr: f64) -> Result<WidthPrediction> {
        predict_width(self, dr)
    }
}

/// Interpolated line width at `dr` nL/mm.
pub fn predict_width(model: &WidthModel, dr: f64) -> Result<WidthPrediction> {
    if !(dr >= 0.0) || dr.is_infinite() {
        return Err(Error::domain(format!("dr must be a finite value >= 0, got {dr}")));
    }
    let data = &model.data;
    let first = data[0];
    let last = data[data.len() - 1];

    if dr < first.dr {
        // Straight line through the origin; untrusted, hence flagged.
        return Ok(WidthPrediction {
            width: first.width * dr / first.dr,
            flags: vec![WidthFlag::LowDr],
        });
    }
    if dr > last.dr {
        return Ok(WidthPrediction {
            width: model.w_max,
            flags: vec![WidthFlag::ExcessDr],
        });
    }
    // First datum with datum.dr >= dr.
    let hi = data.partition_point(|d| d.dr < dr);
    let upper = data[hi];
    let width = if upper.dr == dr {
        upper.width
    } else {
        let lower = data[hi - 1];
        let t = (dr - lower.dr) / (upper.dr - lower.dr);
        (lower.width + t * (upper.width - lower.width)).clamp(lower.width, upper.width)
    };
    Ok(WidthPrediction {
        width: width.min(model.w_max),
        flags: Vec::new(),
    })
}
