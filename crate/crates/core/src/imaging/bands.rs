//! Edge pairing and binned widths.

use serde::{Deserialize, Serialize};

use super::{EdgeMap, TravelAxis};
use crate::{Error, Result};

/// Edges of one line along the travel axis. `edges[i]` is the pair of edge
/// coordinates (pixels, across the travel axis, `left < right`) at travel
/// position `i`, or `None` where the column could not be paired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineBand {
    pub edges: Vec<Option<(f64, f64)>>,
}

impl LineBand {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn gaps(&self) -> usize {
        self.edges.iter().filter(|e| e.is_none()).count()
    }

    /// Width in pixels at position `i`.
    pub fn width_px(&self, i: usize) -> Option<f64> {
        self.edges[i].map(|(l, r)| r - l)
    }

    /// Mean centre line over paired positions, pixels.
    pub fn mean_center(&self) -> Option<f64> {
        let (sum, n) = self
            .edges
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), (l, r)| (s + 0.5 * (l + r), n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Runs of consecutive edge pixels along one scan line, as run centres.
fn crossings(edges: &EdgeMap, axis: TravelAxis, pos: usize) -> Vec<f64> {
    let across = match axis {
        TravelAxis::Horizontal => edges.height,
        TravelAxis::Vertical => edges.width,
    };
    let on = |j: usize| match axis {
        TravelAxis::Horizontal => edges.get(pos, j),
        TravelAxis::Vertical => edges.get(j, pos),
    };
    let mut out = Vec::new();
    let mut j = 0;
    while j < across {
        if on(j) {
            let start = j;
            while j + 1 < across && on(j + 1) {
                j += 1;
            }
            out.push(0.5 * (start + j) as f64);
        }
        j += 1;
    }
    out
}

/// Split edge crossings into `expected_lines` bands.
///
/// At every travel position the crossings across the travel axis are sorted
/// and paired consecutively. Positions whose crossing count is not exactly
/// `2 × expected_lines` are gaps.
pub fn pair_edges(edges: &EdgeMap, expected_lines: usize, axis: TravelAxis) -> Result<Vec<LineBand>> {
    if expected_lines == 0 {
        return Err(Error::domain("expected_lines must be at least 1"));
    }
    let along = match axis {
        TravelAxis::Horizontal => edges.width,
        TravelAxis::Vertical => edges.height,
    };
    let mut bands = vec![
        LineBand {
            edges: Vec::with_capacity(along)
        };
        expected_lines
    ];
    let mut paired = 0usize;
    let mut miscounts: Vec<(usize, usize)> = Vec::new();
    for pos in 0..along {
        let c = crossings(edges, axis, pos);
        if c.len() == 2 * expected_lines {
            paired += 1;
            for (band, pair) in bands.iter_mut().zip(c.chunks(2)) {
                band.edges.push(Some((pair[0], pair[1])));
            }
        } else {
            if miscounts.len() < 5 {
                miscounts.push((pos, c.len()));
            }
            for band in &mut bands {
                band.edges.push(None);
            }
        }
    }
    if along == 0 || 2 * paired < along {
        let examples = miscounts
            .iter()
            .map(|(p, n)| format!("position {p}: {n} crossing(s)"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::domain(format!(
            "only {paired} of {along} positions have {} edge crossings; e.g. {examples}",
            2 * expected_lines
        )));
    }
    Ok(bands)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthBin {
    /// `None` when every position in the bin was a gap.
    pub mean_width: Option<f64>,
    pub sample_count: usize,
}

/// Mean line width per fixed-length bin after an excluded lead-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSeries {
    /// mm
    pub bin_length: f64,
    /// mm
    pub exclusion: f64,
    /// mm
    pub window: f64,
    pub bins: Vec<WidthBin>,
}

pub const SERIES_CSV_HEADER: &str = "bin_index,bin_start_mm,mean_width_mm,sample_count";

impl WidthSeries {
    pub fn bin_start(&self, k: usize) -> f64 {
        self.exclusion + k as f64 * self.bin_length
    }

    /// Bin means, skipping empty bins.
    pub fn means(&self) -> Vec<f64> {
        self.bins.iter().filter_map(|b| b.mean_width).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SERIES_CSV_HEADER);
        out.push('\n');
        for (k, b) in self.bins.iter().enumerate() {
            let mean = b.mean_width.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{k},{},{mean},{}\n", self.bin_start(k), b.sample_count));
        }
        out
    }
}

/// Bin per-position widths of `band`.
///
/// Position `i` is centred at `(i + 0.5) × mm_per_pixel` mm from the start of
/// travel. Bins start at `exclusion` and there are ⌊window / bin⌋ of them.
/// Averages are taken in pixels and scaled once, so scaling `mm_per_pixel`
/// (together with the mm parameters) scales every mean by the same factor.
pub fn width_series(
    band: &LineBand,
    mm_per_pixel: f64,
    exclusion: f64,
    window: f64,
    bin: f64,
) -> Result<WidthSeries> {
    if !(mm_per_pixel.is_finite() && mm_per_pixel > 0.0) {
        return Err(Error::domain("mm_per_pixel must be positive"));
    }
    if !(bin.is_finite() && bin > 0.0 && window.is_finite() && window >= bin) {
        return Err(Error::domain(format!(
            "window {window} mm must hold at least one {bin} mm bin"
        )));
    }
    if !(exclusion.is_finite() && exclusion >= 0.0) {
        return Err(Error::domain("exclusion must be >= 0"));
    }
    let covered = band.len() as f64 * mm_per_pixel;
    let needed = exclusion + window;
    if covered < needed * (1.0 - 1e-12) {
        return Err(Error::domain(format!(
            "band covers {covered} mm of travel, {needed} mm needed ({} mm short)",
            needed - covered
        )));
    }

    let n_bins = ((window / bin) * (1.0 + 1e-12)).floor() as usize;
    let start_px = exclusion / mm_per_pixel;
    let bin_px = bin / mm_per_pixel;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..band.len() {
        let offset = (i as f64 + 0.5) - start_px;
        if offset < 0.0 {
            continue;
        }
        let k = (offset / bin_px).floor() as usize;
        if k >= n_bins {
            break;
        }
        if let Some(w) = band.width_px(i) {
            sums[k] += w;
            counts[k] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::domain(
            "no paired edge positions inside the analysis window",
        ));
    }
    let bins = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| WidthBin {
            mean_width: (c > 0).then(|| s / c as f64 * mm_per_pixel),
            sample_count: c,
        })
        .collect();
    Ok(WidthSeries {
        bin_length: bin,
        exclusion,
        window,
        bins,
    })
}
