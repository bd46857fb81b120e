//! Gaussian heatmap rendering at native frame resolution.
//!
//! Pixel `(px, py)` samples the kernel at its integer index, so a point that
//! denormalizes to `(224, 224)` peaks exactly on pixel `(224, 224)`.

use std::io::{Read, Write};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::geometry::{GridPoint, GRID_EXTENT};
use crate::{Error, Result};

/// Tolerance on the total mass of a normalized map.
pub const NORMALIZED_TOLERANCE: f64 = 1e-9;

/// File magic of the raw float map format.
pub const MAP_MAGIC: [u8; 8] = *b"GZSMAP01";

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl SaliencyMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            normalized: false,
        }
    }

    /// Builds a map from row-major values. Negative or non-finite values are
    /// rejected.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!("map value {v} is not a nonnegative number")));
        }
        let sum: f64 = values.iter().sum();
        let normalized = (sum - 1.0).abs() <= NORMALIZED_TOLERANCE;
        Ok(Self {
            width,
            height,
            values,
            normalized,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Nearest pixel of a grid point on this map.
    pub fn pixel_of(&self, p: &GridPoint) -> (usize, usize) {
        let px = (p.gx / GRID_EXTENT * self.width as f64).round();
        let py = (p.gy / GRID_EXTENT * self.height as f64).round();
        (
            (px.max(0.0) as usize).min(self.width - 1),
            (py.max(0.0) as usize).min(self.height - 1),
        )
    }

    /// Elementwise sum of two maps of equal size.
    pub fn add(&self, other: &SaliencyMap) -> Result<SaliencyMap> {
        ensure_same_dims(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        SaliencyMap::from_values(self.width, self.height, values)
    }

    /// Left-right mirror image.
    pub fn flip_horizontal(&self) -> SaliencyMap {
        let mut out = self.clone();
        for y in 0..self.height {
            let row = &mut out.values[y * self.width..(y + 1) * self.width];
            row.reverse();
        }
        out
    }

    /// Block-sums `factor × factor` tiles; edge tiles may be partial.
    pub fn downsample(&self, factor: usize) -> SaliencyMap {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut values = vec![0.0; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                values[(y / factor) * w + x / factor] += self.get(x, y);
            }
        }
        SaliencyMap {
            width: w,
            height: h,
            values,
            normalized: self.normalized,
        }
    }
}

pub(crate) fn ensure_same_dims(a: &SaliencyMap, b: &SaliencyMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Kernel std in pixels; `None` means `width / 25`.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Truncation radius in multiples of sigma.
    pub radius: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            radius: 3.0,
        }
    }
}

impl KernelConfig {
    pub fn sigma_for(&self, width: usize) -> f64 {
        self.sigma.unwrap_or(width as f64 / 25.0)
    }

    fn validate(&self, width: usize) -> Result<f64> {
        let sigma = self.sigma_for(width);
        if !(sigma > 0.0) || !(self.radius >= 1.0) {
            return Err(Error::validation(format!(
                "invalid kernel: sigma {sigma}, radius {}",
                self.radius
            )));
        }
        Ok(sigma)
    }
}

/// Splats every grid point as an isotropic Gaussian with unit peak onto a
/// `width × height` map. Contributions are accumulated point by point in
/// input order.
pub fn render_heatmap(
    points: &[GridPoint],
    width: usize,
    height: usize,
    cfg: &KernelConfig,
) -> Result<SaliencyMap> {
    if width == 0 || height == 0 {
        return Err(Error::validation("scene dimensions must be positive"));
    }
    let sigma = cfg.validate(width)?;
    let reach = cfg.radius * sigma;
    let reach2 = reach * reach;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut map = SaliencyMap::zeros(width, height);

    for p in points {
        let cx = p.gx / GRID_EXTENT * width as f64;
        let cy = p.gy / GRID_EXTENT * height as f64;
        let x0 = (cx - reach).ceil().max(0.0) as usize;
        let y0 = (cy - reach).ceil().max(0.0) as usize;
        let x1 = (cx + reach).floor().min(width as f64 - 1.0);
        let y1 = (cy + reach).floor().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for py in y0..=y1 {
            let dy = py as f64 - cy;
            let row = py * width;
            for px in x0..=x1 {
                let dx = px as f64 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 <= reach2 {
                    map.values[row + px] += (-d2 * inv).exp();
                }
            }
        }
    }
    Ok(map)
}

/// Rescales a map to unit mass.
pub fn normalize_map(map: &SaliencyMap) -> Result<SaliencyMap> {
    let sum = map.sum();
    if !(sum > 0.0) {
        return Err(Error::DegenerateMap("map has no positive mass".into()));
    }
    let values = map.values.iter().map(|v| v / sum).collect();
    Ok(SaliencyMap {
        width: map.width,
        height: map.height,
        values,
        normalized: true,
    })
}

fn max_value(map: &SaliencyMap) -> f64 {
    map.values.iter().copied().fold(0.0, f64::max)
}

/// 8-bit grayscale image scaled so the map maximum is 255.
pub fn to_gray_image(map: &SaliencyMap) -> GrayImage {
    let max = max_value(map);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    ImageBuffer::from_fn(map.width as u32, map.height as u32, |x, y| {
        Luma([(map.get(x as usize, y as usize) * scale).round() as u8])
    })
}

/// Jet-style color ramp for `t` in `[0, 1]`.
pub fn jet(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let channel = |offset: f64| {
        let v = 1.5 - (4.0 * t - offset).abs();
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    [channel(3.0), channel(2.0), channel(1.0)]
}

pub fn to_color_image(map: &SaliencyMap) -> RgbImage {
    let max = max_value(map);
    ImageBuffer::from_fn(map.width as u32, map.height as u32, |x, y| {
        let v = map.get(x as usize, y as usize);
        Rgb(jet(if max > 0.0 { v / max } else { 0.0 }))
    })
}

/// Raw float export: 8-byte magic, `u32` width and height (little endian),
/// then row-major `f64` little-endian values.
pub fn write_raw<W: Write>(map: &SaliencyMap, mut sink: W) -> Result<()> {
    sink.write_all(&MAP_MAGIC)?;
    sink.write_all(&(map.width as u32).to_le_bytes())?;
    sink.write_all(&(map.height as u32).to_le_bytes())?;
    for v in &map.values {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw<R: Read>(mut source: R) -> Result<SaliencyMap> {
    let mut header = [0u8; 16];
    source.read_exact(&mut header)?;
    if header[..8] != MAP_MAGIC {
        return Err(Error::validation("not a raw saliency map (bad magic)"));
    }
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; width * height * 8];
    source.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SaliencyMap::from_values(width, height, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn argmax(map: &SaliencyMap) -> (usize, usize) {
        let (i, _) = map
            .values()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        (i % map.width(), i / map.width())
    }

    #[test]
    fn single_point_peaks_at_its_pixel() {
        let map = render_heatmap(&[GridPoint::new(500.0, 500.0)], 448, 448, &KernelConfig::default()).unwrap();
        assert_eq!(argmax(&map), (224, 224));
        assert_eq!(map.get(224, 224), 1.0);
    }

    #[test]
    fn empty_set_renders_zero_map() {
        let map = render_heatmap(&[], 40, 30, &KernelConfig::default()).unwrap();
        assert_eq!(map.dims(), (40, 30));
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mirrored_points_give_mirror_symmetric_map() {
        // On a 1000-px-wide frame grid units equal pixels; pixel p mirrors to 999 - p.
        let pts = [GridPoint::new(300.0, 400.0), GridPoint::new(699.0, 400.0)];
        let map = render_heatmap(&pts, 1000, 200, &KernelConfig::default()).unwrap();
        let flipped = map.flip_horizontal();
        for (a, b) in map.values().iter().zip(flipped.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalize_examples() {
        let ones = SaliencyMap::from_values(2, 2, vec![1.0; 4]).unwrap();
        let n = normalize_map(&ones).unwrap();
        assert_eq!(n.values(), &[0.25; 4]);
        assert!(n.is_normalized());
        let again = normalize_map(&n).unwrap();
        for (a, b) in again.values().iter().zip(n.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let r = SaliencyMap::from_values(3, 3, vec![0.3, 1.7, 2.2, 0.01, 5.0, 0.9, 1.1, 0.4, 3.3]).unwrap();
        let n = normalize_map(&r).unwrap();
        let total: f64 = n.values().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(matches!(normalize_map(&SaliencyMap::zeros(2, 2)), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn from_values_rejects_bad_input() {
        assert!(SaliencyMap::from_values(2, 2, vec![1.0; 3]).is_err());
        assert!(SaliencyMap::from_values(1, 1, vec![-1.0]).is_err());
        assert!(SaliencyMap::from_values(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn invalid_kernel_rejected() {
        let bad = KernelConfig { sigma: Some(0.0), radius: 3.0 };
        assert!(render_heatmap(&[], 10, 10, &bad).is_err());
        let bad = KernelConfig { sigma: None, radius: 0.5 };
        assert!(render_heatmap(&[], 10, 10, &bad).is_err());
    }

    #[test]
    fn interior_mass_is_constant_per_point() {
        let cfg = KernelConfig { sigma: Some(4.0), radius: 3.0 };
        let one = render_heatmap(&[GridPoint::new(500.0, 500.0)], 200, 200, &cfg).unwrap().sum();
        let pts = [GridPoint::new(300.0, 300.0), GridPoint::new(700.0, 300.0), GridPoint::new(500.0, 700.0)];
        let three = render_heatmap(&pts, 200, 200, &cfg).unwrap().sum();
        assert!((three - 3.0 * one).abs() <= 1e-9);
        // close to the continuous mass 2πσ²(1 - e^{-9/2})
        let cont = 2.0 * std::f64::consts::PI * 16.0 * (1.0 - (-4.5f64).exp());
        assert!((one - cont).abs() / cont < 0.02);
    }

    #[test]
    fn raw_export_round_trips() {
        let map = render_heatmap(&[GridPoint::new(100.0, 900.0)], 33, 17, &KernelConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_raw(&map, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 33 * 17 * 8);
        let back = read_raw(buf.as_slice()).unwrap();
        assert_eq!(back.values(), map.values());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_raw(bad.as_slice()).is_err());
    }

    #[test]
    fn images_have_map_dimensions() {
        let map = render_heatmap(&[GridPoint::new(500.0, 500.0)], 20, 10, &KernelConfig::default()).unwrap();
        let g = to_gray_image(&map);
        assert_eq!(g.dimensions(), (20, 10));
        assert_eq!(g.get_pixel(10, 5)[0], 255);
        assert_eq!(to_color_image(&map).dimensions(), (20, 10));
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
    }

    #[test]
    fn downsample_preserves_mass() {
        let map = render_heatmap(&[GridPoint::new(420.0, 610.0)], 97, 61, &KernelConfig::default()).unwrap();
        let d = map.downsample(4);
        assert_eq!(d.dims(), (25, 16));
        assert!((d.sum() - map.sum()).abs() <= 1e-9);
    }

    proptest! {
        #[test]
        fn rendering_is_linear(
            a in prop::collection::vec((0.0f64..=1000.0, 0.0f64..=1000.0), 0..6),
            b in prop::collection::vec((0.0f64..=1000.0, 0.0f64..=1000.0), 0..6),
        ) {
            let cfg = KernelConfig::default();
            let pa: Vec<_> = a.iter().map(|&(x, y)| GridPoint::new(x, y)).collect();
            let pb: Vec<_> = b.iter().map(|&(x, y)| GridPoint::new(x, y)).collect();
            let both: Vec<_> = pa.iter().chain(&pb).copied().collect();
            let ma = render_heatmap(&pa, 64, 48, &cfg).unwrap();
            let mb = render_heatmap(&pb, 64, 48, &cfg).unwrap();
            let mab = render_heatmap(&both, 64, 48, &cfg).unwrap();
            let sum = ma.add(&mb).unwrap();
            for (x, y) in mab.values().iter().zip(sum.values()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn translation_equivariance(x in 300i32..700, y in 300i32..700, dx in -100i32..100, dy in -100i32..100) {
            // 1000x1000 frame: one grid unit is one pixel; sigma 10 keeps the
            // support (radius 30) far from the borders.
            let cfg = KernelConfig { sigma: Some(10.0), radius: 3.0 };
            let m0 = render_heatmap(&[GridPoint::new(x as f64, y as f64)], 1000, 1000, &cfg).unwrap();
            let m1 = render_heatmap(&[GridPoint::new((x + dx) as f64, (y + dy) as f64)], 1000, 1000, &cfg).unwrap();
            for py in (y - 31).max(0)..(y + 32).min(1000) {
                for px in (x - 31).max(0)..(x + 32).min(1000) {
                    let a = m0.get(px as usize, py as usize);
                    let b = m1.get((px + dx) as usize, (py + dy) as usize);
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
            prop_assert!((m0.sum() - m1.sum()).abs() <= 1e-9);
        }
    }
}
