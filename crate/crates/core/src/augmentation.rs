//! Annotation-consistent frame transforms and the four named augmentation
//! strategies (no augmentation, rotations/flips, Aug-I, Aug-II).
//!
//! Geometric transforms move pixels and masks together and then recompute
//! every annotation box from its mask, so `box == mask_bbox(mask)` holds for
//! every frame this module produces.

use std::fmt;
use std::str::FromStr;

use image::imageops;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, BoundingBox, FlipAxis, Point};
use crate::raster::{self, RgbImage};

/// One ground-truth polyp: its mask and the tight box around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    mask: BinaryMask,
    bbox: BoundingBox,
}

impl Annotation {
    pub fn from_mask(mask: BinaryMask) -> Result<Self> {
        let bbox = mask.bbox()?;
        Ok(Annotation { mask, bbox })
    }

    /// Checks that `bbox` is exactly the extent of `mask`.
    pub fn new(mask: BinaryMask, bbox: BoundingBox) -> Result<Self> {
        let expected = mask.bbox()?;
        if expected != bbox {
            return Err(Error::AnnotationMismatch {
                found: bbox.to_array(),
                expected: expected.to_array(),
            });
        }
        Ok(Annotation { mask, bbox })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

/// Frame pixels plus zero or more polyp annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub frame_id: String,
    pixels: RgbImage,
    annotations: Vec<Annotation>,
}

impl AnnotatedFrame {
    pub fn new(frame_id: impl Into<String>, pixels: RgbImage, masks: Vec<BinaryMask>) -> Result<Self> {
        let annotations = masks
            .into_iter()
            .map(Annotation::from_mask)
            .collect::<Result<Vec<_>>>()?;
        AnnotatedFrame::with_annotations(frame_id, pixels, annotations)
    }

    pub fn with_annotations(
        frame_id: impl Into<String>,
        pixels: RgbImage,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        for a in &annotations {
            if a.mask.width() != pixels.width() || a.mask.height() != pixels.height() {
                return Err(Error::DimensionMismatch {
                    what: "mask".into(),
                    found_w: a.mask.width(),
                    found_h: a.mask.height(),
                    expected_w: pixels.width(),
                    expected_h: pixels.height(),
                });
            }
        }
        Ok(AnnotatedFrame {
            frame_id: frame_id.into(),
            pixels,
            annotations,
        })
    }

    /// A frame without polyps.
    pub fn negative(frame_id: impl Into<String>, pixels: RgbImage) -> Self {
        AnnotatedFrame {
            frame_id: frame_id.into(),
            pixels,
            annotations: Vec::new(),
        }
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        self.annotations.iter().map(|a| a.mask.clone()).collect()
    }

    pub fn gt_boxes(&self) -> Vec<BoundingBox> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }

    fn with_id(mut self, id: String) -> Self {
        self.frame_id = id;
        self
    }

    /// Replaces pixels and masks; `None` when a mask came out empty.
    fn remapped(&self, pixels: RgbImage, masks: impl Iterator<Item = BinaryMask>) -> Option<Self> {
        let annotations = masks
            .map(|m| Annotation::from_mask(m).ok())
            .collect::<Option<Vec<_>>>()?;
        Some(AnnotatedFrame {
            frame_id: self.frame_id.clone(),
            pixels,
            annotations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    Cw90,
    Cw180,
    Cw270,
}

impl Rotation {
    pub fn quarter_turns(self) -> u32 {
        match self {
            Rotation::Cw90 => 1,
            Rotation::Cw180 => 2,
            Rotation::Cw270 => 3,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Rotation::Cw90 => "rot90",
            Rotation::Cw180 => "rot180",
            Rotation::Cw270 => "rot270",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShearAxis {
    X,
    Y,
}

pub fn rotate(f: &AnnotatedFrame, angle: Rotation) -> AnnotatedFrame {
    let pixels = match angle {
        Rotation::Cw90 => imageops::rotate90(&f.pixels),
        Rotation::Cw180 => imageops::rotate180(&f.pixels),
        Rotation::Cw270 => imageops::rotate270(&f.pixels),
    };
    let k = angle.quarter_turns();
    f.remapped(pixels, f.annotations.iter().map(|a| a.mask.rotate_cw(k)))
        .expect("rotation preserves mask area")
}

pub fn flip(f: &AnnotatedFrame, axis: FlipAxis) -> AnnotatedFrame {
    let pixels = match axis {
        FlipAxis::Horizontal => imageops::flip_horizontal(&f.pixels),
        FlipAxis::Vertical => imageops::flip_vertical(&f.pixels),
    };
    f.remapped(pixels, f.annotations.iter().map(|a| a.mask.flip(axis)))
        .expect("flip preserves mask area")
}

/// Zooms about the frame center. Positive `factor` crops the central
/// `1/(1+factor)` window and upsamples it; negative `factor` shrinks the frame
/// to `1+factor` scale with edge-replicated padding.
///
/// Returns `None` when any polyp keeps less than `visibility_threshold` of its
/// original area (measured at source scale).
pub fn zoom(f: &AnnotatedFrame, factor: f64, visibility_threshold: f64) -> Option<AnnotatedFrame> {
    assert!(factor.abs() < 1.0, "zoom factor must satisfy |factor| < 1");
    if factor == 0.0 {
        return Some(f.clone());
    }
    let scale = 1.0 + factor;
    let (w, h) = (f.width(), f.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let map = |x: f64, y: f64| (cx + (x - cx) / scale, cy + (y - cy) / scale);
    let pixels = raster::warp_rgb(&f.pixels, w, h, map);
    let out = f.remapped(
        pixels,
        f.annotations.iter().map(|a| raster::warp_mask(&a.mask, w, h, map)),
    )?;
    let visible = f.annotations.iter().zip(&out.annotations).all(|(before, after)| {
        let kept = after.mask.area() as f64 / (scale * scale);
        kept >= visibility_threshold * before.mask.area() as f64
    });
    visible.then_some(out)
}

/// Forward shear mapping on a frame of the given size, including the canvas
/// offset applied for negative magnitudes.
pub fn shear_point(axis: ShearAxis, magnitude: f64, width: u32, height: u32, p: Point) -> Point {
    let geom = ShearGeometry::new(axis, magnitude, width, height);
    geom.forward(p)
}

struct ShearGeometry {
    axis: ShearAxis,
    m: f64,
    offset: f64,
    out_w: u32,
    out_h: u32,
}

impl ShearGeometry {
    fn new(axis: ShearAxis, m: f64, width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        match axis {
            ShearAxis::X => ShearGeometry {
                axis,
                m,
                offset: if m < 0.0 { -m * h } else { 0.0 },
                out_w: (w + m.abs() * h).ceil() as u32,
                out_h: height,
            },
            ShearAxis::Y => ShearGeometry {
                axis,
                m,
                offset: if m < 0.0 { -m * w } else { 0.0 },
                out_w: width,
                out_h: (h + m.abs() * w).ceil() as u32,
            },
        }
    }

    fn forward(&self, p: Point) -> Point {
        match self.axis {
            ShearAxis::X => Point::new(p.x + self.m * p.y + self.offset, p.y),
            ShearAxis::Y => Point::new(p.x, p.y + self.m * p.x + self.offset),
        }
    }

    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        match self.axis {
            ShearAxis::X => (x - self.offset - self.m * y, y),
            ShearAxis::Y => (x, y - self.offset - self.m * x),
        }
    }
}

/// Affine shear onto a canvas enlarged to hold the sheared frame. `None` only
/// when a mask is too thin to survive resampling.
pub fn shear(f: &AnnotatedFrame, axis: ShearAxis, magnitude: f64) -> Option<AnnotatedFrame> {
    assert!(magnitude.abs() <= 0.5, "shear magnitude must satisfy |m| <= 0.5");
    let g = ShearGeometry::new(axis, magnitude, f.width(), f.height());
    let map = |x: f64, y: f64| g.inverse(x, y);
    let pixels = raster::warp_rgb(&f.pixels, g.out_w, g.out_h, map);
    f.remapped(
        pixels,
        f.annotations
            .iter()
            .map(|a| raster::warp_mask(&a.mask, g.out_w, g.out_h, map)),
    )
}

/// Normalized 1-D Gaussian taps for radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur per channel with edge-replicated borders.
pub fn blur(f: &AnnotatedFrame, sigma: f64) -> AnnotatedFrame {
    assert!(sigma > 0.0, "blur sigma must be positive");
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (f.width() as i64, f.height() as i64);
    let mut out = f.pixels.clone();
    for c in 0..3 {
        let src: Vec<f64> = f.pixels.pixels().map(|p| p[c] as f64).collect();
        let at = |x: i64, y: i64| src[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
        let mut horiz = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                horiz[(y * w + x) as usize] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * at(x + i as i64 - radius, y))
                    .sum();
            }
        }
        let hat = |x: i64, y: i64| horiz[(y.clamp(0, h - 1) * w + x) as usize];
        for y in 0..h {
            for x in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * hat(x, y + i as i64 - radius))
                    .sum();
                out.get_pixel_mut(x as u32, y as u32)[c] = raster::to_u8(v);
            }
        }
    }
    AnnotatedFrame {
        frame_id: f.frame_id.clone(),
        pixels: out,
        annotations: f.annotations.clone(),
    }
}

/// Multiplies every channel by `gain`, saturating at 0 and 255.
pub fn adjust_brightness(f: &AnnotatedFrame, gain: f64) -> AnnotatedFrame {
    assert!(gain > 0.0, "brightness gain must be positive");
    let mut pixels = f.pixels.clone();
    for p in pixels.pixels_mut() {
        for v in p.0.iter_mut() {
            *v = raster::to_u8(*v as f64 * gain);
        }
    }
    AnnotatedFrame {
        frame_id: f.frame_id.clone(),
        pixels,
        annotations: f.annotations.clone(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    None,
    Rot,
    #[default]
    #[serde(rename = "aug1")]
    AugI,
    #[serde(rename = "aug2")]
    AugII,
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyName::None => "none",
            StrategyName::Rot => "rot",
            StrategyName::AugI => "aug1",
            StrategyName::AugII => "aug2",
        })
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(StrategyName::None),
            "rot" => Ok(StrategyName::Rot),
            "aug1" | "aug-i" | "augi" => Ok(StrategyName::AugI),
            "aug2" | "aug-ii" | "augii" => Ok(StrategyName::AugII),
            other => Err(Error::InvalidConfig(format!(
                "unknown augmentation strategy `{other}` (expected none, rot, aug1, aug2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationStrategy {
    pub name: StrategyName,
    pub zoom_in_factors: Vec<f64>,
    pub zoom_out_factors: Vec<f64>,
    /// Each magnitude is applied along both axes.
    pub shear_magnitudes: Vec<f64>,
    pub blur_sigma: Option<f64>,
    pub brightness_gains: Vec<f64>,
    pub visibility_threshold: f64,
}

impl AugmentationStrategy {
    pub fn from_name(name: StrategyName) -> Self {
        let empty = AugmentationStrategy {
            name,
            zoom_in_factors: Vec::new(),
            zoom_out_factors: Vec::new(),
            shear_magnitudes: Vec::new(),
            blur_sigma: None,
            brightness_gains: Vec::new(),
            visibility_threshold: 0.5,
        };
        match name {
            StrategyName::None | StrategyName::Rot => empty,
            StrategyName::AugI => AugmentationStrategy {
                zoom_in_factors: vec![0.10],
                zoom_out_factors: vec![0.10, 0.30, 0.50],
                shear_magnitudes: vec![0.2, -0.2],
                ..empty
            },
            StrategyName::AugII => AugmentationStrategy {
                name,
                blur_sigma: Some(1.0),
                brightness_gains: vec![1.3, 0.7],
                ..AugmentationStrategy::from_name(StrategyName::AugI)
            },
        }
    }

    pub fn none() -> Self {
        Self::from_name(StrategyName::None)
    }

    pub fn rot() -> Self {
        Self::from_name(StrategyName::Rot)
    }

    pub fn aug_i() -> Self {
        Self::from_name(StrategyName::AugI)
    }

    pub fn aug_ii() -> Self {
        Self::from_name(StrategyName::AugII)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold <= 1.0) {
            return bad(format!(
                "visibility_threshold {} outside (0, 1]",
                self.visibility_threshold
            ));
        }
        for &z in self.zoom_in_factors.iter().chain(&self.zoom_out_factors) {
            if !(0.0..1.0).contains(&z) {
                return bad(format!("zoom factor {z} outside [0, 1)"));
            }
        }
        for &m in &self.shear_magnitudes {
            if m.abs() > 0.5 {
                return bad(format!("shear magnitude {m} exceeds 0.5"));
            }
        }
        if let Some(s) = self.blur_sigma {
            if s <= 0.0 {
                return bad(format!("blur sigma {s} must be positive"));
            }
        }
        if let Some(g) = self.brightness_gains.iter().find(|&&g| g <= 0.0) {
            return bad(format!("brightness gain {g} must be positive"));
        }
        Ok(())
    }

    /// Upper bound on outputs per source frame (reached when nothing is excluded).
    pub fn max_outputs(&self) -> usize {
        match self.name {
            StrategyName::None => 1,
            _ => {
                let bases = 6;
                let zooms = self.zoom_in_factors.len() + self.zoom_out_factors.len();
                let photometric = if self.name == StrategyName::AugII {
                    self.blur_sigma.iter().count() + self.brightness_gains.len()
                } else {
                    0
                };
                let shears = if self.name == StrategyName::Rot {
                    0
                } else {
                    2 * self.shear_magnitudes.len()
                };
                let zooms = if self.name == StrategyName::Rot { 0 } else { zooms };
                bases + shears + bases * zooms + bases * photometric
            }
        }
    }
}

fn pct_tag(v: f64) -> String {
    format!("{}", (v * 100.0).round() as i64)
}

/// The original plus its three clockwise rotations and two flips, tagged.
pub fn rot_family(f: &AnnotatedFrame) -> Vec<(String, AnnotatedFrame)> {
    let mut out = vec![(String::new(), f.clone())];
    for r in [Rotation::Cw90, Rotation::Cw180, Rotation::Cw270] {
        out.push((format!("_{}", r.tag()), rotate(f, r)));
    }
    out.push(("_fliph".into(), flip(f, FlipAxis::Horizontal)));
    out.push(("_flipv".into(), flip(f, FlipAxis::Vertical)));
    out
}

/// Expands one frame into the strategy's deterministic list of outputs.
///
/// Order: the six rotation/flip bases, then shears of the original, then
/// every zoom of every base, then the photometric variants of every base.
pub fn apply_strategy(f: &AnnotatedFrame, s: &AugmentationStrategy) -> Vec<AnnotatedFrame> {
    if s.name == StrategyName::None {
        return vec![f.clone()];
    }
    let id = &f.frame_id;
    let bases = rot_family(f);
    let mut out: Vec<AnnotatedFrame> = bases
        .iter()
        .map(|(tag, b)| b.clone().with_id(format!("{id}{tag}")))
        .collect();
    if s.name == StrategyName::Rot {
        return out;
    }

    for axis in [ShearAxis::X, ShearAxis::Y] {
        for &m in &s.shear_magnitudes {
            let sign = if m < 0.0 { "m" } else { "p" };
            let ax = if axis == ShearAxis::X { "x" } else { "y" };
            if let Some(sheared) = shear(f, axis, m) {
                out.push(sheared.with_id(format!("{id}_sh{ax}{sign}{}", pct_tag(m.abs()))));
            }
        }
    }

    let zooms: Vec<(f64, String)> = s
        .zoom_in_factors
        .iter()
        .map(|&z| (z, format!("_zin{}", pct_tag(z))))
        .chain(
            s.zoom_out_factors
                .iter()
                .map(|&z| (-z, format!("_zout{}", pct_tag(z)))),
        )
        .collect();
    let zoomed: Vec<Vec<AnnotatedFrame>> = bases
        .par_iter()
        .map(|(tag, b)| {
            zooms
                .iter()
                .filter_map(|(factor, ztag)| {
                    zoom(b, *factor, s.visibility_threshold)
                        .map(|z| z.with_id(format!("{id}{tag}{ztag}")))
                })
                .collect()
        })
        .collect();
    out.extend(zoomed.into_iter().flatten());

    if s.name == StrategyName::AugII {
        let photometric: Vec<Vec<AnnotatedFrame>> = bases
            .par_iter()
            .map(|(tag, b)| {
                let mut v = Vec::new();
                if let Some(sigma) = s.blur_sigma {
                    v.push(blur(b, sigma).with_id(format!("{id}{tag}_blur")));
                }
                for &g in &s.brightness_gains {
                    v.push(adjust_brightness(b, g).with_id(format!("{id}{tag}_gain{}", pct_tag(g))));
                }
                v
            })
            .collect();
        out.extend(photometric.into_iter().flatten());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with_box(w: u32, h: u32, b: (u32, u32, u32, u32)) -> AnnotatedFrame {
        let pixels = RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) % 256) as u8]));
        let mask = BinaryMask::from_fn(w, h, |c, r| c >= b.0 && c < b.0 + b.2 && r >= b.1 && r < b.1 + b.3);
        AnnotatedFrame::new("f", pixels, vec![mask]).unwrap()
    }

    fn centered_polyp() -> AnnotatedFrame {
        frame_with_box(64, 48, (26, 18, 12, 12))
    }

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn rotate_90_maps_corners() {
        let f = frame_with_box(100, 50, (10, 5, 20, 10));
        let r = rotate(&f, Rotation::Cw90);
        assert_eq!((r.width(), r.height()), (50, 100));
        assert_eq!(r.gt_boxes(), vec![bx(35.0, 10.0, 10.0, 20.0)]);
    }

    #[test]
    fn rotations_compose_to_identity() {
        let f = frame_with_box(100, 50, (10, 5, 20, 10));
        let twice = rotate(&rotate(&f, Rotation::Cw180), Rotation::Cw180);
        assert_eq!(twice, f);
        let mut four = f.clone();
        for _ in 0..4 {
            four = rotate(&four, Rotation::Cw90);
        }
        assert_eq!(four, f);
        let r = rotate(&rotate(&f, Rotation::Cw90), Rotation::Cw270);
        assert_eq!(r, f);
    }

    #[test]
    fn flip_examples() {
        let f = frame_with_box(100, 50, (10, 5, 20, 10));
        assert_eq!(flip(&f, FlipAxis::Horizontal).gt_boxes(), vec![bx(70.0, 5.0, 20.0, 10.0)]);
        assert_eq!(flip(&f, FlipAxis::Vertical).gt_boxes(), vec![bx(10.0, 35.0, 20.0, 10.0)]);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            assert_eq!(flip(&flip(&f, axis), axis), f);
        }
    }

    #[test]
    fn zoom_zero_is_identity() {
        let f = centered_polyp();
        assert_eq!(zoom(&f, 0.0, 0.5).unwrap(), f);
    }

    #[test]
    fn zoom_out_half_quarters_area() {
        let f = frame_with_box(100, 100, (40, 40, 20, 20));
        let z = zoom(&f, -0.5, 0.5).unwrap();
        let area = z.annotations()[0].mask().area() as f64;
        // (1 - 0.5)^2 * 400 = 100, with a one-pixel boundary band of slack
        assert!((area - 100.0).abs() <= 2.0 * 10.0 + 1.0, "area {area}");
        let b = z.gt_boxes()[0];
        assert!((b.centroid().x - 50.0).abs() <= 1.0 && (b.centroid().y - 50.0).abs() <= 1.0);
    }

    #[test]
    fn zoom_in_drops_corner_polyp() {
        // crop window for 10% zoom-in on 100x100 keeps [4.55, 95.45); a polyp
        // in the 0..6 band keeps only about a quarter of its area
        let f = frame_with_box(100, 100, (0, 0, 6, 6));
        assert!(zoom(&f, 0.10, 0.5).is_none());
        // a lenient threshold keeps it
        assert!(zoom(&f, 0.10, 0.01).is_some());
    }

    #[test]
    fn zoom_in_grows_centered_polyp() {
        let f = frame_with_box(100, 100, (40, 40, 20, 20));
        let z = zoom(&f, 0.10, 0.5).unwrap();
        assert!(z.gt_boxes()[0].w() >= 21.0);
    }

    #[test]
    fn shear_displacement() {
        let p = shear_point(ShearAxis::X, 0.2, 100, 50, Point::new(0.0, 50.0));
        assert!((p.x - 10.0).abs() < 1e-12 && p.y == 50.0);
        let p = shear_point(ShearAxis::X, 0.2, 100, 50, Point::new(30.0, 0.0));
        assert_eq!(p, Point::new(30.0, 0.0));
        let p = shear_point(ShearAxis::Y, -0.2, 100, 50, Point::new(100.0, 0.0));
        assert!((p.y - 0.0).abs() < 1e-12);
    }

    #[test]
    fn shear_zero_is_identity() {
        let f = centered_polyp();
        assert_eq!(shear(&f, ShearAxis::X, 0.0).unwrap(), f);
        assert_eq!(shear(&f, ShearAxis::Y, 0.0).unwrap(), f);
    }

    #[test]
    fn shear_widens_box_and_canvas() {
        let f = frame_with_box(100, 50, (40, 10, 20, 20));
        for m in [0.2, -0.2] {
            let s = shear(&f, ShearAxis::X, m).unwrap();
            assert_eq!((s.width(), s.height()), (110, 50));
            assert!(s.gt_boxes()[0].w() >= 20.0);
            // mask centroid moves by roughly m * y_center
            let c = s.gt_boxes()[0].centroid();
            let expected = shear_point(ShearAxis::X, m, 100, 50, Point::new(50.0, 20.0));
            assert!((c.x - expected.x).abs() <= 1.5, "{c:?} vs {expected:?}");
        }
        let s = shear(&f, ShearAxis::Y, 0.2).unwrap();
        assert_eq!((s.width(), s.height()), (100, 70));
        assert!(s.gt_boxes()[0].h() >= 20.0);
    }

    #[test]
    fn blur_keeps_constants_and_annotations() {
        let mut f = centered_polyp();
        f.pixels = RgbImage::from_pixel(64, 48, image::Rgb([90, 120, 200]));
        let b = blur(&f, 1.0);
        for p in b.pixels().pixels() {
            for (v, want) in p.0.iter().zip([90u8, 120, 200]) {
                assert!((*v as i32 - want as i32).abs() <= 1);
            }
        }
        assert_eq!(b.annotations(), f.annotations());
    }

    #[test]
    fn blur_center_weight() {
        // direct evaluation of the normalized 2-D Gaussian on the 7x7 support
        let mut total = 0.0;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                total += (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            }
        }
        let center_weight = 1.0 / total;
        assert!((center_weight - 0.159).abs() < 1e-3);

        let mut pixels = RgbImage::from_pixel(15, 15, image::Rgb([0, 0, 0]));
        pixels.put_pixel(7, 7, image::Rgb([255, 255, 255]));
        let f = AnnotatedFrame::negative("p", pixels);
        let b = blur(&f, 1.0);
        let v = b.pixels().get_pixel(7, 7)[0] as f64;
        assert!((v - 255.0 * center_weight).abs() <= 0.5 + 1e-9, "{v}");
    }

    #[test]
    fn brightness_examples() {
        let mut f = centered_polyp();
        f.pixels = RgbImage::from_fn(2, 1, |x, _| if x == 0 { image::Rgb([100; 3]) } else { image::Rgb([200; 3]) });
        f.annotations.clear();
        assert_eq!(adjust_brightness(&f, 1.0), f);
        let b = adjust_brightness(&f, 1.3);
        assert_eq!(b.pixels().get_pixel(0, 0)[0], 130);
        assert_eq!(b.pixels().get_pixel(1, 0)[0], 255);
    }

    #[test]
    fn strategy_counts_on_centered_polyp() {
        let f = centered_polyp();
        assert_eq!(apply_strategy(&f, &AugmentationStrategy::none()).len(), 1);
        assert_eq!(apply_strategy(&f, &AugmentationStrategy::rot()).len(), 6);
        assert_eq!(apply_strategy(&f, &AugmentationStrategy::aug_i()).len(), 34);
        assert_eq!(apply_strategy(&f, &AugmentationStrategy::aug_ii()).len(), 52);
        for s in [StrategyName::None, StrategyName::Rot, StrategyName::AugI, StrategyName::AugII] {
            let s = AugmentationStrategy::from_name(s);
            assert_eq!(s.max_outputs(), apply_strategy(&f, &s).len());
        }
    }

    #[test]
    fn strategy_ids_are_unique_and_annotations_consistent() {
        let f = centered_polyp();
        let out = apply_strategy(&f, &AugmentationStrategy::aug_ii());
        let mut ids: Vec<&str> = out.iter().map(|o| o.frame_id.as_str()).collect();
        assert_eq!(ids[0], "f");
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 52);
        for o in &out {
            for a in o.annotations() {
                assert_eq!(*a.bbox(), a.mask().bbox().unwrap());
            }
        }
    }

    #[test]
    fn exclusions_reduce_counts() {
        let f = frame_with_box(100, 100, (0, 0, 6, 6));
        let n = apply_strategy(&f, &AugmentationStrategy::aug_i()).len();
        // every base keeps the polyp in a corner, so every zoom-in is dropped
        assert!(n < 34);
        assert_eq!(n, 34 - 6);
    }

    #[test]
    fn strategy_names_parse() {
        assert_eq!("rot".parse::<StrategyName>().unwrap(), StrategyName::Rot);
        assert_eq!("Aug-II".parse::<StrategyName>().unwrap(), StrategyName::AugII);
        assert!("blur".parse::<StrategyName>().is_err());
    }
}
