//! Canny edge detector: Gaussian smoothing, 3×3 Sobel gradient, four-sector
//! non-maximum suppression, hysteresis.
//!
//! Every stage is written so that transposing the input transposes the
//! output exactly: the blur averages both separable pass orders, Sobel Gx and
//! Gy share one summation order, and sector tests are symmetric in |Gx|, |Gy|.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{EdgeMap, GrayImage};
use crate::par::Exec;
use crate::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 1.4;

/// tan(22.5°)
const TAN_22_5: f64 = 0.414_213_562_373_095_03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Thresholds {
    /// Gradient-magnitude thresholds on the 0..255 intensity scale.
    Fixed { low: f64, high: f64 },
    /// `high` is the given percentile of non-zero gradient magnitudes and
    /// `low = ratio × high`.
    Percentile { high_percentile: f64, low_ratio: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Percentile {
            high_percentile: 0.9,
            low_ratio: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyConfig {
    pub sigma: f64,
    pub thresholds: Thresholds,
}

impl Default for CannyConfig {
    fn default() -> Self {
        CannyConfig {
            sigma: DEFAULT_SIGMA,
            thresholds: Thresholds::default(),
        }
    }
}

/// Canny with explicit hysteresis thresholds.
pub fn canny(img: &GrayImage, sigma: f64, t_low: f64, t_high: f64) -> Result<EdgeMap> {
    let config = CannyConfig {
        sigma,
        thresholds: Thresholds::Fixed {
            low: t_low,
            high: t_high,
        },
    };
    canny_with(img, &config, Exec::default())
}

/// Canny with percentile thresholds.
pub fn canny_auto(img: &GrayImage, sigma: f64) -> Result<EdgeMap> {
    let config = CannyConfig {
        sigma,
        ..CannyConfig::default()
    };
    canny_with(img, &config, Exec::default())
}

pub fn canny_with(img: &GrayImage, config: &CannyConfig, exec: Exec) -> Result<EdgeMap> {
    let sigma = config.sigma;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    match config.thresholds {
        Thresholds::Fixed { low, high } => {
            if !(low >= 0.0 && low < high) {
                return Err(Error::domain(format!(
                    "thresholds need 0 <= low < high, got {low}, {high}"
                )));
            }
        }
        Thresholds::Percentile {
            high_percentile,
            low_ratio,
        } => {
            if !(high_percentile > 0.0 && high_percentile <= 1.0) {
                return Err(Error::domain("high_percentile must be in (0, 1]"));
            }
            if !(low_ratio > 0.0 && low_ratio < 1.0) {
                return Err(Error::domain("low_ratio must be in (0, 1)"));
            }
        }
    }
    let kernel = gaussian_kernel(sigma);
    let support = kernel.len();
    if img.width < support.max(3) || img.height < support.max(3) {
        return Err(Error::domain(format!(
            "{}x{} image smaller than the {support}-pixel smoothing kernel",
            img.width, img.height
        )));
    }

    let (w, h) = (img.width, img.height);
    let src: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p)).collect();
    let smooth = blur(&src, w, h, &kernel, exec);
    let (mag, sector) = sobel(&smooth, w, h, exec);

    let (low, high) = match config.thresholds {
        Thresholds::Fixed { low, high } => (low, high),
        Thresholds::Percentile {
            high_percentile,
            low_ratio,
        } => match percentile_of_nonzero(&mag, high_percentile) {
            Some(high) => (low_ratio * high, high),
            None => return Ok(EdgeMap::empty(w, h)),
        },
    };

    let thin = suppress(&mag, &sector, w, h, exec);
    Ok(hysteresis(&mag, &thin, w, h, low, high))
}

/// Normalized kernel of radius ⌈3σ⌉.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Convolve along rows (`horizontal`) or columns with replicated borders.
fn convolve_1d(src: &[f64], w: usize, h: usize, kernel: &[f64], horizontal: bool, exec: Exec) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; w * h];
    exec.for_each_chunk(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let d = k as i64 - r;
                let v = if horizontal {
                    src[y * w + clamp_index(x as i64 + d, w)]
                } else {
                    src[clamp_index(y as i64 + d, h) * w + x]
                };
                acc += kv * v;
            }
            *o = acc;
        }
    });
    out
}

fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64], exec: Exec) -> Vec<f64> {
    let hv = convolve_1d(&convolve_1d(src, w, h, kernel, true, exec), w, h, kernel, false, exec);
    let vh = convolve_1d(&convolve_1d(src, w, h, kernel, false, exec), w, h, kernel, true, exec);
    hv.iter().zip(&vh).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Quantized gradient direction, naming the neighbour pair compared during
/// suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sector {
    /// Compare left/right.
    Horizontal,
    /// Compare up/down.
    Vertical,
    /// Compare (x-1, y-1) / (x+1, y+1).
    Diagonal,
    /// Compare (x+1, y-1) / (x-1, y+1).
    AntiDiagonal,
}

fn sector_of(gx: f64, gy: f64) -> Sector {
    let (ax, ay) = (gx.abs(), gy.abs());
    if ay <= TAN_22_5 * ax {
        Sector::Horizontal
    } else if ax <= TAN_22_5 * ay {
        Sector::Vertical
    } else if (gx > 0.0) == (gy > 0.0) {
        Sector::Diagonal
    } else {
        Sector::AntiDiagonal
    }
}

fn sobel(src: &[f64], w: usize, h: usize, exec: Exec) -> (Vec<f64>, Vec<Sector>) {
    let mut out = vec![(0.0, Sector::Horizontal); w * h];
    exec.for_each_chunk(&mut out, w, |y, row| {
        let at = |x: i64, y: i64| src[clamp_index(y, h) * w + clamp_index(x, w)];
        let y = y as i64;
        for (x, o) in row.iter_mut().enumerate() {
            let x = x as i64;
            // Same summation order for both axes.
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            *o = ((gx * gx + gy * gy).sqrt(), sector_of(gx, gy));
        }
    });
    out.into_iter().unzip()
}

/// Nearest-rank percentile of the non-zero magnitudes.
fn percentile_of_nonzero(mag: &[f64], p: f64) -> Option<f64> {
    let mut nz: Vec<f64> = mag.iter().copied().filter(|&m| m > 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    nz.sort_by(f64::total_cmp);
    let rank = ((p * nz.len() as f64).ceil() as usize).clamp(1, nz.len());
    Some(nz[rank - 1])
}

/// Relative difference below which two magnitudes count as equal. Symmetric
/// steps produce plateaus that float noise would otherwise split unevenly.
const TIE: f64 = 1e-9;

fn above(a: f64, b: f64) -> bool {
    a - b > TIE * a.abs().max(b.abs())
}

/// Keep pixels that are local maxima across the edge. On plateaus the first
/// pixel in scan order wins so a symmetric step yields a single pixel.
fn suppress(mag: &[f64], sector: &[Sector], w: usize, h: usize, exec: Exec) -> Vec<bool> {
    let mut keep = vec![false; w * h];
    exec.for_each_chunk(&mut keep, w, |y, row| {
        let m = |x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                0.0
            } else {
                mag[y as usize * w + x as usize]
            }
        };
        let peak = |here: f64, prev: f64, next: f64| above(here, prev) && !above(next, here);
        for (x, k) in row.iter_mut().enumerate() {
            let here = mag[y * w + x];
            if here == 0.0 {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            *k = match sector[y * w + x] {
                Sector::Horizontal => peak(here, m(xi - 1, yi), m(xi + 1, yi)),
                Sector::Vertical => peak(here, m(xi, yi - 1), m(xi, yi + 1)),
                Sector::Diagonal => peak(here, m(xi - 1, yi - 1), m(xi + 1, yi + 1)),
                Sector::AntiDiagonal => {
                    // The two neighbours swap under transposition, so the
                    // test must be symmetric in them.
                    let (a, b) = (m(xi + 1, yi - 1), m(xi - 1, yi + 1));
                    !above(a, here) && !above(b, here) && (above(here, a) || above(here, b))
                }
            };
        }
    });
    keep
}

fn hysteresis(mag: &[f64], thin: &[bool], w: usize, h: usize, low: f64, high: f64) -> EdgeMap {
    let mut edges = EdgeMap::empty(w, h);
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] && !above(high, mag[i]) {
            edges.mask[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges.mask[j] && thin[j] && !above(low, mag[j]) {
                    edges.mask[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}
