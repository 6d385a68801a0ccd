//! Boxes, masks and the overlap/regression arithmetic shared by every stage.
//!
//! Coordinates are continuous pixels with the origin at the top-left corner of
//! the frame. Pixel `(col, row)` covers the unit square `[col, col+1) x [row, row+1)`,
//! so the tight box of a single true pixel at `(3, 4)` is `(3, 4, 1, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle anchored at its top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        BoundingBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { w, h });
        }
        Ok(BoundingBox { x, y, w, h })
    }

    /// Box spanning `[x1, x2) x [y1, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        BoundingBox::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn centroid(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Scales every coordinate by `factor` (used to map frame boxes onto a pooled grid).
    pub fn scaled(&self, factor: f64) -> Result<BoundingBox> {
        BoundingBox::new(
            self.x * factor,
            self.y * factor,
            self.w * factor,
            self.h * factor,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn centroid(b: &BoundingBox) -> Point {
    b.centroid()
}

/// Intersects `b` with the `width x height` frame; `None` when nothing with
/// positive area survives.
pub fn clip_to_frame(b: &BoundingBox, width: u32, height: u32) -> Option<BoundingBox> {
    let x1 = b.x.max(0.0);
    let y1 = b.y.max(0.0);
    let x2 = b.right().min(width as f64);
    let y2 = b.bottom().min(height as f64);
    if x2 > x1 && y2 > y1 {
        BoundingBox::from_corners(x1, y1, x2, y2).ok()
    } else {
        None
    }
}

/// Regression target between an anchor and a box, in the center-offset /
/// log-size parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        tx: 0.0,
        ty: 0.0,
        tw: 0.0,
        th: 0.0,
    };
}

pub fn encode_box(anchor: &BoundingBox, gt: &BoundingBox) -> BoxDelta {
    let a = anchor.centroid();
    let g = gt.centroid();
    BoxDelta {
        tx: (g.x - a.x) / anchor.w,
        ty: (g.y - a.y) / anchor.h,
        tw: (gt.w / anchor.w).ln(),
        th: (gt.h / anchor.h).ln(),
    }
}

/// Inverse of [`encode_box`]. Nothing is clamped; pass the result through
/// [`clip_to_frame`] when it must fit a frame.
pub fn decode_box(anchor: &BoundingBox, d: &BoxDelta) -> Result<BoundingBox> {
    let a = anchor.centroid();
    let cx = a.x + d.tx * anchor.w;
    let cy = a.y + d.ty * anchor.h;
    let w = anchor.w * d.tw.exp();
    let h = anchor.h * d.th.exp();
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

/// Per-pixel boolean annotation; `true` marks polyp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(col, row));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    /// Rasterizes `b`: a pixel is set when its center lies inside the box.
    pub fn from_box(width: u32, height: u32, b: &BoundingBox) -> Self {
        BinaryMask::from_fn(width, height, |col, row| {
            let cx = col as f64 + 0.5;
            let cy = row as f64 + 0.5;
            cx >= b.x() && cx < b.right() && cy >= b.y() && cy < b.bottom()
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        self.bits[row as usize * self.width as usize + col as usize] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// True when `p` falls on a set pixel. Points outside the frame are never
    /// inside the mask.
    pub fn contains(&self, p: Point) -> bool {
        if !(p.x.is_finite() && p.y.is_finite()) || p.x < 0.0 || p.y < 0.0 {
            return false;
        }
        let col = p.x.floor();
        let row = p.y.floor();
        if col >= self.width as f64 || row >= self.height as f64 {
            return false;
        }
        self.get(col as u32, row as u32)
    }

    /// Tight box around the set pixels.
    pub fn bbox(&self) -> Result<BoundingBox> {
        let (mut x1, mut y1) = (u32::MAX, u32::MAX);
        let (mut x2, mut y2) = (0u32, 0u32);
        let mut any = false;
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(col, row) {
                    any = true;
                    x1 = x1.min(col);
                    y1 = y1.min(row);
                    x2 = x2.max(col);
                    y2 = y2.max(row);
                }
            }
        }
        if !any {
            return Err(Error::EmptyAnnotation);
        }
        BoundingBox::from_corners(x1 as f64, y1 as f64, x2 as f64 + 1.0, y2 as f64 + 1.0)
    }

    pub fn rotate_cw(&self, quarter_turns: u32) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => BinaryMask::from_fn(h, w, |c, r| self.get(r, h - 1 - c)),
            2 => BinaryMask::from_fn(w, h, |c, r| self.get(w - 1 - c, h - 1 - r)),
            _ => BinaryMask::from_fn(h, w, |c, r| self.get(w - 1 - r, c)),
        }
    }

    pub fn flip(&self, axis: FlipAxis) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        match axis {
            FlipAxis::Horizontal => BinaryMask::from_fn(w, h, |c, r| self.get(w - 1 - c, r)),
            FlipAxis::Vertical => BinaryMask::from_fn(w, h, |c, r| self.get(c, h - 1 - r)),
        }
    }
}

pub fn contains(m: &BinaryMask, p: Point) -> bool {
    m.contains(p)
}

pub fn mask_bbox(m: &BinaryMask) -> Result<BoundingBox> {
    m.bbox()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

/// Maps a box through a clockwise rotation of a `width x height` frame.
pub fn rotate_box_cw(b: &BoundingBox, quarter_turns: u32, width: u32, height: u32) -> BoundingBox {
    let (fw, fh) = (width as f64, height as f64);
    let [x, y, w, h] = b.to_array();
    let out = match quarter_turns % 4 {
        0 => [x, y, w, h],
        1 => [fh - (y + h), x, h, w],
        2 => [fw - (x + w), fh - (y + h), w, h],
        _ => [y, fw - (x + w), h, w],
    };
    BoundingBox {
        x: out[0],
        y: out[1],
        w: out[2],
        h: out[3],
    }
}

pub fn flip_box(b: &BoundingBox, axis: FlipAxis, width: u32, height: u32) -> BoundingBox {
    match axis {
        FlipAxis::Horizontal => BoundingBox {
            x: width as f64 - b.x - b.w,
            ..*b
        },
        FlipAxis::Vertical => BoundingBox {
            y: height as f64 - b.y - b.h,
            ..*b
        },
    }
}
