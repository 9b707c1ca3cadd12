//! Line-width measurement on scanned membranes.
//!
//! Pipeline: grayscale scan → [`canny`] edge map → [`pair_edges`] into one
//! [`LineBand`] per dispensed line → [`width_series`] of binned mean widths
//! along the travel axis.

mod bands;
mod canny;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::par::Exec;
use crate::{Error, Result};

pub use bands::{pair_edges, width_series, LineBand, WidthBin, WidthSeries, SERIES_CSV_HEADER};
pub use canny::{canny, canny_auto, canny_with, CannyConfig, Thresholds, DEFAULT_SIGMA};

/// 8-bit grayscale raster with a physical scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub pixels: Vec<u8>,
    pub mm_per_pixel: f64,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, mm_per_pixel: f64) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::domain(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !(mm_per_pixel.is_finite() && mm_per_pixel > 0.0) {
            return Err(Error::domain(format!(
                "mm_per_pixel must be positive, got {mm_per_pixel}"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            mm_per_pixel,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mm_per_pixel: f64,
        f: impl Fn(usize, usize) -> u8,
    ) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels, mm_per_pixel)
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Decode PNG (gray or color) or binary PGM. Color is reduced with the
    /// decoder's luma weighting.
    pub fn load(path: impl AsRef<Path>, mm_per_pixel: f64) -> Result<Self> {
        let decoded = image::open(path)?.to_luma8();
        let (w, h) = decoded.dimensions();
        Self::new(w as usize, h as usize, decoded.into_raw(), mm_per_pixel)
    }

    pub fn from_bytes(bytes: &[u8], mm_per_pixel: f64) -> Result<Self> {
        let decoded = image::load_from_memory(bytes)?.to_luma8();
        let (w, h) = decoded.dimensions();
        Self::new(w as usize, h as usize, decoded.into_raw(), mm_per_pixel)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("dimensions checked on construction");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn transposed(&self) -> GrayImage {
        let mut pixels = vec![0; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                pixels[x * self.height + y] = self.get(x, y);
            }
        }
        GrayImage {
            width: self.height,
            height: self.width,
            pixels,
            mm_per_pixel: self.mm_per_pixel,
        }
    }
}

/// Binary edge mask, same size as the source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        EdgeMap {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.mask[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Edge pixels among the 8 neighbours of `(x, y)`.
    pub fn neighbours(&self, x: usize, y: usize) -> usize {
        let mut n = 0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0
                    && ny >= 0
                    && (nx as usize) < self.width
                    && (ny as usize) < self.height
                    && self.get(nx as usize, ny as usize)
                {
                    n += 1;
                }
            }
        }
        n
    }

    /// White-on-black rendering.
    pub fn to_image(&self, mm_per_pixel: f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
            mm_per_pixel,
        }
    }
}

/// Direction the bed moved while the lines were dispensed, in image space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelAxis {
    /// Lines run left to right.
    #[default]
    Horizontal,
    /// Lines run top to bottom.
    Vertical,
}

impl TravelAxis {
    pub fn swapped(self) -> Self {
        match self {
            TravelAxis::Horizontal => TravelAxis::Vertical,
            TravelAxis::Vertical => TravelAxis::Horizontal,
        }
    }
}

/// Everything `analyze` needs besides the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub lines: usize,
    pub travel_axis: TravelAxis,
    pub canny: CannyConfig,
    /// mm skipped from the start of travel.
    pub exclusion: f64,
    /// mm analysed after the exclusion.
    pub window: f64,
    /// mm per bin.
    pub bin: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            lines: 1,
            travel_axis: TravelAxis::Horizontal,
            canny: CannyConfig::default(),
            exclusion: 40.0,
            window: 70.0,
            bin: 2.5,
        }
    }
}

/// Edge detection, pairing and binning for one scan; one series per line,
/// ordered by position across the travel axis.
pub fn analyze(img: &GrayImage, params: &AnalysisParams, exec: Exec) -> Result<Vec<WidthSeries>> {
    let edges = canny_with(img, &params.canny, exec)?;
    let bands = pair_edges(&edges, params.lines, params.travel_axis)?;
    bands
        .iter()
        .map(|b| width_series(b, img.mm_per_pixel, params.exclusion, params.window, params.bin))
        .collect()
}

/// [`analyze`] over several scans. Each scan runs its filters sequentially
/// so the fan-out happens across images.
pub fn analyze_batch(
    images: &[GrayImage],
    params: &AnalysisParams,
    exec: Exec,
) -> Vec<Result<Vec<WidthSeries>>> {
    exec.map(images, |img| analyze(img, params, Exec::Sequential))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_checks() {
        assert!(GrayImage::new(2, 2, vec![0; 3], 0.05).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 4], 0.0).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 4], 0.05).is_ok());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let img = GrayImage::from_fn(7, 3, 0.1, |x, y| (x * 10 + y) as u8).unwrap();
        let t = img.transposed();
        assert_eq!((t.width, t.height), (3, 7));
        assert_eq!(t.get(2, 5), img.get(5, 2));
        assert_eq!(t.transposed(), img);
    }

    #[test]
    fn png_round_trip() {
        let img = GrayImage::from_fn(9, 4, 0.05, |x, y| (x * 20 + y * 3) as u8).unwrap();
        let dir = std::env::temp_dir().join(format!("lfd-png-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(GrayImage::load(&path, 0.05).unwrap(), img);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn pgm_p5_decodes() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 50, 100, 150, 200, 250]);
        let img = GrayImage::from_bytes(&bytes, 0.1).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.get(1, 1), 200);
    }

    #[test]
    fn neighbour_count() {
        let mut e = EdgeMap::empty(3, 3);
        e.set(0, 0, true);
        e.set(1, 1, true);
        e.set(2, 1, true);
        assert_eq!(e.neighbours(1, 1), 2);
        assert_eq!(e.neighbours(2, 2), 2);
        assert_eq!(e.count(), 3);
    }
}
