//! Image side of the forward operator: render a rod, convert to grey,
//! threshold, and take the distance transform to the set of black pixels.

use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::error::{config_err, Error, Result};
use crate::rod::RodState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreyImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Pixels are 0 (black, in the set) or 255 (white).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            other => Err(config_err!(
                "unknown metric `{other}`, expected euclidean or manhattan"
            )),
        }
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::InvalidInput(alloc::format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb
                .iter()
                .copied()
                .cycle()
                .take(3 * width * height)
                .collect(),
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let k = 3 * (row * self.width + col);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }
}

impl GreyImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(alloc::format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(alloc::format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|&v| v != 0 && v != 255) {
            return Err(Error::InvalidInput(
                "binary image holds values other than 0 and 255".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// From a predicate on `(col, row)` marking black pixels.
    pub fn from_fn(width: usize, height: usize, black: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|r| (0..width).map(move |c| (c, r)))
            .map(|(c, r)| if black(c, r) { 0 } else { 255 })
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn is_black(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col] == 0
    }

    pub fn as_grey(&self) -> GreyImage {
        GreyImage {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }
}

impl DistanceMap {
    /// Row-major observation vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Orthographic camera looking at the plane spanned by `plane_u`, `plane_v`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    /// Pixels per metre.
    pub scale: f64,
    /// Pixel coordinates `(col, row)` of the world origin.
    pub origin: [f64; 2],
    /// World direction drawn to the right.
    pub plane_u: [f64; 3],
    /// World direction drawn upwards.
    pub plane_v: [f64; 3],
    /// Half width of the stroke in pixels.
    pub stroke_radius: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            width: 256,
            height: 192,
            scale: 700.0,
            origin: [20.0, 96.0],
            plane_u: [1.0, 0.0, 0.0],
            plane_v: [0.0, 1.0, 0.0],
            stroke_radius: 10.5,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(config_err!("camera image must have positive size"));
        }
        if !(self.scale > 0.0) || !(self.stroke_radius >= 0.0) {
            return Err(config_err!(
                "camera scale must be positive and stroke radius nonnegative"
            ));
        }
        if self
            .origin
            .iter()
            .chain(&self.plane_u)
            .chain(&self.plane_v)
            .any(|v| !v.is_finite())
        {
            return Err(config_err!("camera geometry must be finite"));
        }
        Ok(())
    }

    /// Pixel coordinates `(col, row)` of a world point.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        let u = Vector3::from(self.plane_u);
        let v = Vector3::from(self.plane_v);
        (
            self.origin[0] + self.scale * p.dot(&u),
            self.origin[1] - self.scale * p.dot(&v),
        )
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// A rendered frame; `clipped` is set when part of the stroke left the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: RgbImage,
    pub clipped: bool,
}

pub const ROD_COLOUR: [u8; 3] = [0, 0, 0];
pub const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Draws the projected centerline as a disc-capped stroke, dark on white.
pub fn render(rod: &RodState, cam: &Camera) -> Render {
    let mut image = RgbImage::filled(cam.width, cam.height, BACKGROUND);
    let pts: Vec<(f64, f64)> = rod.node_positions.iter().map(|p| cam.project(p)).collect();
    let length: f64 = pts
        .windows(2)
        .map(|w| libm::hypot(w[1].0 - w[0].0, w[1].1 - w[0].1))
        .sum();
    if pts.len() < 2 || !(length > 0.0) {
        return Render {
            image,
            clipped: false,
        };
    }
    let r = cam.stroke_radius;
    let r2 = r * r;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut clipped = false;
    for seg in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        let (lo_x, hi_x) = (x0.min(x1) - r, x0.max(x1) + r);
        let (lo_y, hi_y) = (y0.min(y1) - r, y0.max(y1) + r);
        if lo_x < 0.0 || lo_y < 0.0 || hi_x > w - 1.0 || hi_y > h - 1.0 {
            clipped = true;
        }
        let c0 = libm::ceil(lo_x).max(0.0) as usize;
        let c1 = libm::floor(hi_x).min(w - 1.0);
        let r0 = libm::ceil(lo_y).max(0.0) as usize;
        let r1 = libm::floor(hi_y).min(h - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = dx * dx + dy * dy;
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let (px, py) = (col as f64 - x0, row as f64 - y0);
                let s = if len2 > 0.0 {
                    ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (px - s * dx, py - s * dy);
                if ex * ex + ey * ey <= r2 {
                    let k = 3 * (row * cam.width + col);
                    image.data[k..k + 3].copy_from_slice(&ROD_COLOUR);
                }
            }
        }
    }
    Render { image, clipped }
}

/// Luma `round(0.299 R + 0.587 G + 0.114 B)` in integer arithmetic.
pub fn to_grey(img: &RgbImage) -> GreyImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000).min(255)
                as u8
        })
        .collect();
    GreyImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Pixels `≤ σ` become black (0), the rest white (255).
pub fn threshold(img: &GreyImage, sigma: u32) -> Result<BinaryImage> {
    if !(1..=255).contains(&sigma) {
        return Err(config_err!("threshold must lie in 1..=255, got {sigma}"));
    }
    let data = img
        .data
        .iter()
        .map(|&v| if (v as u32) <= sigma { 0 } else { 255 })
        .collect();
    Ok(BinaryImage {
        width: img.width,
        height: img.height,
        data,
    })
}

fn require_black(img: &BinaryImage) -> Result<()> {
    if img.data.iter().all(|&v| v != 0) {
        return Err(Error::Degenerate(
            "image has no black pixels, the distance transform is undefined".into(),
        ));
    }
    Ok(())
}

/// Lower envelope of the parabolas `(q - p)² + f(p)` over the finite entries
/// of `f`, evaluated at every index. Breakpoints are kept as exact fractions.
fn lower_envelope(
    f: &[Option<u64>],
    out: &mut [Option<u64>],
    v: &mut Vec<i64>,
    z: &mut Vec<(i64, i64)>,
) {
    v.clear();
    z.clear();
    let key = |q: i64, fq: u64| fq as i64 + q * q;
    for (q, fq) in f.iter().enumerate() {
        let Some(fq) = *fq else { continue };
        let q = q as i64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push((i64::MIN, 1));
                break;
            };
            let num = key(q, fq) - key(p, f[p as usize].unwrap());
            let den = 2 * (q - p);
            let (zn, zd) = *z.last().unwrap();
            // Pop while the new breakpoint is at or before the last one.
            if zn != i64::MIN && (num as i128) * (zd as i128) <= (zn as i128) * (den as i128) {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push((num, den));
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let q = q as i64;
        while k + 1 < v.len() && (z[k + 1].0 as i128) < (q as i128) * (z[k + 1].1 as i128) {
            k += 1;
        }
        let p = v[k];
        *o = Some(((q - p) * (q - p)) as u64 + f[p as usize].unwrap());
    }
}

/// Exact squared Euclidean distance to the nearest black pixel, row-major.
pub fn squared_euclidean(img: &BinaryImage) -> Result<Vec<u64>> {
    require_black(img)?;
    let (w, h) = (img.width, img.height);
    let mut grid: Vec<Option<u64>> = img
        .data
        .iter()
        .map(|&v| if v == 0 { Some(0) } else { None })
        .collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut col = alloc::vec![None; h];
    let mut out = alloc::vec![None; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            col[r] = grid[r * w + c];
        }
        lower_envelope(&col, &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    let mut row = alloc::vec![None; w];
    for r in 0..h {
        row.copy_from_slice(&grid[r * w..(r + 1) * w]);
        lower_envelope(&row, &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    Ok(grid
        .into_iter()
        .map(|d| d.expect("every row reaches a black pixel"))
        .collect())
}

/// Exact L1 distance to the nearest black pixel by two chamfer sweeps.
pub fn manhattan(img: &BinaryImage) -> Result<Vec<u32>> {
    require_black(img)?;
    let (w, h) = (img.width, img.height);
    let inf = u32::MAX / 2;
    let mut d: Vec<u32> = img
        .data
        .iter()
        .map(|&v| if v == 0 { 0 } else { inf })
        .collect();
    for r in 0..h {
        for c in 0..w {
            let mut best = d[r * w + c];
            if r > 0 {
                best = best.min(d[(r - 1) * w + c] + 1);
            }
            if c > 0 {
                best = best.min(d[r * w + c - 1] + 1);
            }
            d[r * w + c] = best;
        }
    }
    for r in (0..h).rev() {
        for c in (0..w).rev() {
            let mut best = d[r * w + c];
            if r + 1 < h {
                best = best.min(d[(r + 1) * w + c] + 1);
            }
            if c + 1 < w {
                best = best.min(d[r * w + c + 1] + 1);
            }
            d[r * w + c] = best;
        }
    }
    Ok(d)
}

/// Distance of every pixel to the nearest black pixel.
pub fn distance_transform(img: &BinaryImage, metric: Metric) -> Result<DistanceMap> {
    let values = match metric {
        Metric::Euclidean => squared_euclidean(img)?
            .into_iter()
            .map(|d| libm::sqrt(d as f64))
            .collect(),
        Metric::Manhattan => manhattan(img)?.into_iter().map(f64::from).collect(),
    };
    Ok(DistanceMap {
        width: img.width,
        height: img.height,
        values,
    })
}

/// Grey image → threshold → distance transform → row-major vector.
pub fn observe(img: &GreyImage, sigma: u32, metric: Metric) -> Result<Vec<f64>> {
    Ok(distance_transform(&threshold(img, sigma)?, metric)?.flatten())
}

/// The full chain from a rod state to an observation vector.
pub fn segment(rod: &RodState, cam: &Camera, sigma: u32, metric: Metric) -> Result<Vec<f64>> {
    observe(&to_grey(&render(rod, cam).image), sigma, metric)
}
