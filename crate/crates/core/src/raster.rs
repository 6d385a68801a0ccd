//! Pixel containers and resampling kernels.

pub use image::RgbImage;

use crate::geometry::BinaryMask;

/// Single-channel floating point image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "plane size");
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Plane::new(width, height, data)
    }

    /// Luma of an RGB frame.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        Plane::new(img.width(), img.height(), data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, col: u32, row: u32) -> f64 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    /// Bilinear sample at pixel-index coordinates `(u, v)`; pixel `(c, r)`
    /// holds its value exactly at `(c, r)`. Out-of-range coordinates replicate
    /// the border.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let (x0, fx) = split_coord(u, self.width);
        let (y0, fy) = split_coord(v, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        lerp(top, bottom, fy)
    }

    /// Mean over non-overlapping `factor x factor` blocks; partial blocks at
    /// the right/bottom edges average the pixels they hold.
    pub fn box_pool(&self, factor: u32) -> Plane {
        let factor = factor.max(1);
        let ow = self.width.div_ceil(factor);
        let oh = self.height.div_ceil(factor);
        let mut sums = vec![0.0; ow as usize * oh as usize];
        let mut counts = vec![0u32; ow as usize * oh as usize];
        for row in 0..self.height {
            for col in 0..self.width {
                let i = (row / factor) as usize * ow as usize + (col / factor) as usize;
                sums[i] += self.get(col, row);
                counts[i] += 1;
            }
        }
        let data = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| s / n as f64)
            .collect();
        Plane::new(ow, oh, data)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Clamps a coordinate into `[0, len-1]` and splits it into a base index and
/// a fractional weight. The base index never exceeds `len-2` so the last
/// sample is reached with weight 1.
fn split_coord(u: f64, len: u32) -> (u32, f64) {
    let max = (len - 1) as f64;
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, max) };
    if len == 1 {
        return (0, 0.0);
    }
    let base = u.floor().min(max - 1.0);
    (base as u32, u - base)
}

/// Resamples an RGB image onto a new canvas. `map` takes the continuous
/// position of an output pixel center and returns the continuous source
/// position; samples beyond the source replicate its border.
pub fn warp_rgb(
    src: &RgbImage,
    out_w: u32,
    out_h: u32,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> RgbImage {
    let planes: Vec<Plane> = (0..3)
        .map(|c| {
            Plane::from_fn(src.width(), src.height(), |x, y| {
                src.get_pixel(x, y)[c] as f64
            })
        })
        .collect();
    RgbImage::from_fn(out_w, out_h, |x, y| {
        let (sx, sy) = map(x as f64 + 0.5, y as f64 + 0.5);
        let px = |c: usize| to_u8(planes[c].sample(sx - 0.5, sy - 0.5));
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Mask counterpart of [`warp_rgb`]: bilinear on {0,1} with zero outside the
/// source, re-thresholded at 0.5.
pub fn warp_mask(
    src: &BinaryMask,
    out_w: u32,
    out_h: u32,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> BinaryMask {
    let bit = |c: i64, r: i64| -> f64 {
        if c < 0 || r < 0 || c >= src.width() as i64 || r >= src.height() as i64 {
            0.0
        } else if src.get(c as u32, r as u32) {
            1.0
        } else {
            0.0
        }
    };
    BinaryMask::from_fn(out_w, out_h, |x, y| {
        let (sx, sy) = map(x as f64 + 0.5, y as f64 + 0.5);
        let (u, v) = (sx - 0.5, sy - 0.5);
        let (c0, r0) = (u.floor(), v.floor());
        let (fx, fy) = (u - c0, v - r0);
        let (c0, r0) = (c0 as i64, r0 as i64);
        let top = lerp(bit(c0, r0), bit(c0 + 1, r0), fx);
        let bottom = lerp(bit(c0, r0 + 1), bit(c0 + 1, r0 + 1), fx);
        lerp(top, bottom, fy) >= 0.5
    })
}

pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_hits_pixels_exactly() {
        let p = Plane::from_fn(5, 4, |c, r| (c * 10 + r) as f64);
        for r in 0..4 {
            for c in 0..5 {
                assert_eq!(p.sample(c as f64, r as f64), p.get(c, r));
            }
        }
        assert_eq!(p.sample(-3.0, 0.0), p.get(0, 0));
        assert_eq!(p.sample(9.0, 9.0), p.get(4, 3));
        assert!((p.sample(1.5, 2.25) - 17.25).abs() < 1e-12);
    }

    #[test]
    fn box_pool_averages_blocks() {
        let p = Plane::from_fn(5, 4, |c, _| c as f64);
        let q = p.box_pool(2);
        assert_eq!((q.width(), q.height()), (3, 2));
        assert_eq!(q.get(0, 0), 0.5);
        assert_eq!(q.get(2, 1), 4.0);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = RgbImage::from_fn(7, 5, |x, y| image::Rgb([x as u8 * 30, y as u8 * 40, 7]));
        assert_eq!(warp_rgb(&img, 7, 5, |x, y| (x, y)), img);
        let m = BinaryMask::from_fn(7, 5, |c, r| (c + r) % 3 == 0);
        assert_eq!(warp_mask(&m, 7, 5, |x, y| (x, y)), m);
    }
}
