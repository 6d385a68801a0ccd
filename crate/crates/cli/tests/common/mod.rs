//! Synthetic corpora and a runner for the `polypkit` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::Rgb;
use polypkit::dataset::write_dataset;
use polypkit::records::read_records;
use polypkit::{AnnotatedFrame, BinaryMask, BoundingBox, RegionRecord, RgbImage};

pub const FRAME: u32 = 128;
pub const PATCH: u32 = 32;
pub const BACKGROUND: f64 = 100.0;

/// Deterministic 32x32 grey texture in [40, 167].
pub fn texture(seed: u32) -> impl Fn(u32, u32) -> f64 + Copy {
    move |x, y| {
        let v = (x.wrapping_mul(73) ^ y.wrapping_mul(151) ^ seed.wrapping_mul(2654435761)).wrapping_mul(2246822519);
        (40 + (v >> 25)) as f64
    }
}

/// Pixelwise blend `c * a + (1 - c) * b`.
pub fn mix(a: impl Fn(u32, u32) -> f64 + Copy, b: impl Fn(u32, u32) -> f64 + Copy, c: f64) -> impl Fn(u32, u32) -> f64 + Copy {
    move |x, y| c * a(x, y) + (1.0 - c) * b(x, y)
}

/// Flat background with `tex` pasted at `(px, py)`.
pub fn frame_with(tex: &dyn Fn(u32, u32) -> f64, px: u32, py: u32) -> RgbImage {
    RgbImage::from_fn(FRAME, FRAME, |x, y| {
        let v = if (px..px + PATCH).contains(&x) && (py..py + PATCH).contains(&y) {
            tex(x - px, y - py)
        } else {
            BACKGROUND
        };
        let v = v.round().clamp(0.0, 255.0) as u8;
        Rgb([v, v, v])
    })
}

pub fn patch_box(px: u32, py: u32) -> BoundingBox {
    BoundingBox::new(px as f64, py as f64, PATCH as f64, PATCH as f64).unwrap()
}

pub fn polyp(id: impl Into<String>, tex: &dyn Fn(u32, u32) -> f64, px: u32, py: u32) -> AnnotatedFrame {
    let mask = BinaryMask::from_box(FRAME, FRAME, &patch_box(px, py));
    AnnotatedFrame::new(id, frame_with(tex, px, py), vec![mask]).unwrap()
}

pub fn negative(id: impl Into<String>, tex: &dyn Fn(u32, u32) -> f64, px: u32, py: u32) -> AnnotatedFrame {
    AnnotatedFrame::negative(id, frame_with(tex, px, py))
}

pub fn write(root: &Path, frames: &[AnnotatedFrame]) -> PathBuf {
    write_dataset(root, frames).unwrap();
    root.to_path_buf()
}

pub fn polypkit() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polypkit"));
    c.env_remove("POLYPKIT_THREADS");
    c
}

/// Runs the binary and panics with its stderr on failure.
pub fn run(args: &[&str]) -> Output {
    let out = polypkit().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "polypkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn records(path: &Path) -> Vec<RegionRecord> {
    let text = std::fs::read(path).unwrap();
    read_records(&mut text.as_slice()).unwrap()
}

/// Value of `key` in a report file.
pub fn report_value(path: &Path, key: &str) -> Option<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
