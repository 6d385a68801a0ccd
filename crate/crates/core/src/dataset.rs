//! On-disk datasets: `<root>/frames/<id>.png` with optional
//! `<root>/masks/<id>.png`. Frames are ordered by file name. A mask pixel is
//! polyp when any channel is nonzero, and each 8-connected component of a
//! mask is one polyp.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::AnnotatedFrame;
use crate::error::{Error, Result};
use crate::geometry::BinaryMask;
use crate::raster::RgbImage;

const EXTENSIONS: [&str; 2] = ["png", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Still,
    Video,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub frame_id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub frames: Vec<FrameEntry>,
    pub kind: DatasetKind,
    pub fps: f64,
}

/// Image files of a directory keyed by stem.
fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if out.insert(stem.to_string(), path.clone()).is_some() {
            return Err(Error::DuplicateStem(stem.to_string()));
        }
    }
    Ok(out)
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Discovers frames and pairs them with masks by stem. Checks that every mask
/// names a frame and matches its size.
pub fn load_dataset(root: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    let frames_dir = root.join("frames");
    if !frames_dir.is_dir() {
        return Err(Error::NoFramesFound(root.to_path_buf()));
    }
    let images = images_by_stem(&frames_dir)?;
    if images.is_empty() {
        return Err(Error::NoFramesFound(root.to_path_buf()));
    }
    let masks_dir = root.join("masks");
    let mut masks = if masks_dir.is_dir() {
        images_by_stem(&masks_dir)?
    } else {
        BTreeMap::new()
    };
    if let Some(orphan) = masks.keys().find(|k| !images.contains_key(*k)) {
        return Err(Error::UnknownFrame(orphan.clone()));
    }
    let frames: Vec<FrameEntry> = images
        .into_iter()
        .map(|(frame_id, image)| {
            let mask = masks.remove(&frame_id);
            FrameEntry { frame_id, image, mask }
        })
        .collect();
    frames.par_iter().try_for_each(|f| -> Result<()> {
        if let Some(mask) = &f.mask {
            let (w, h) = dimensions(&f.image)?;
            let (mw, mh) = dimensions(mask)?;
            if (mw, mh) != (w, h) {
                return Err(Error::DimensionMismatch {
                    what: format!("mask {}", mask.display()),
                    found_w: mw,
                    found_h: mh,
                    expected_w: w,
                    expected_h: h,
                });
            }
        }
        Ok(())
    })?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        frames,
        kind,
        fps: 25.0,
    })
}

/// Splits a mask into its 8-connected components, ordered by their first
/// pixel in row-major order.
pub fn connected_components(mask: &BinaryMask) -> Vec<BinaryMask> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![0usize; w as usize * h as usize];
    let mut comps = Vec::new();
    let idx = |c: u32, r: u32| r as usize * w as usize + c as usize;
    for r in 0..h {
        for c in 0..w {
            if !mask.get(c, r) || label[idx(c, r)] != 0 {
                continue;
            }
            let id = comps.len() + 1;
            let mut comp = BinaryMask::new(w, h);
            let mut queue = VecDeque::from([(c, r)]);
            label[idx(c, r)] = id;
            while let Some((x, y)) = queue.pop_front() {
                comp.set(x, y, true);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if mask.get(nx, ny) && label[idx(nx, ny)] == 0 {
                            label[idx(nx, ny)] = id;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            comps.push(comp);
        }
    }
    comps
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

impl DatasetManifest {
    pub fn positive_count(&self) -> usize {
        self.frames.iter().filter(|f| f.mask.is_some()).count()
    }

    pub fn load_frame(&self, entry: &FrameEntry) -> Result<AnnotatedFrame> {
        let pixels = read_rgb(&entry.image)?;
        let masks = match &entry.mask {
            None => Vec::new(),
            Some(path) => {
                let m = read_rgb(path)?;
                if m.dimensions() != pixels.dimensions() {
                    return Err(Error::DimensionMismatch {
                        what: format!("mask {}", path.display()),
                        found_w: m.width(),
                        found_h: m.height(),
                        expected_w: pixels.width(),
                        expected_h: pixels.height(),
                    });
                }
                let union = BinaryMask::from_fn(m.width(), m.height(), |c, r| m.get_pixel(c, r).0 != [0, 0, 0]);
                connected_components(&union)
            }
        };
        AnnotatedFrame::new(entry.frame_id.clone(), pixels, masks)
    }

    /// All frames in dataset order, decoded in parallel.
    pub fn load_frames(&self) -> Result<Vec<AnnotatedFrame>> {
        self.frames.par_iter().map(|e| self.load_frame(e)).collect()
    }
}

fn save_png(img: &image::DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes frames as PNG under `root/frames`, plus the union of each frame's
/// masks under `root/masks` for frames with annotations.
pub fn write_dataset(root: &Path, frames: &[AnnotatedFrame]) -> Result<()> {
    let frames_dir = root.join("frames");
    let masks_dir = root.join("masks");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    let mut seen = std::collections::HashSet::new();
    for f in frames {
        if !seen.insert(f.frame_id.as_str()) {
            return Err(Error::DuplicateStem(f.frame_id.clone()));
        }
    }
    frames.par_iter().try_for_each(|f| -> Result<()> {
        let path = frames_dir.join(format!("{}.png", f.frame_id));
        save_png(&image::DynamicImage::ImageRgb8(f.pixels().clone()), &path)?;
        if !f.annotations().is_empty() {
            let masks = f.masks();
            let union = image::GrayImage::from_fn(f.width(), f.height(), |c, r| {
                image::Luma([if masks.iter().any(|m| m.get(c, r)) { 255 } else { 0 }])
            });
            let path = masks_dir.join(format!("{}.png", f.frame_id));
            save_png(&image::DynamicImage::ImageLuma8(union), &path)?;
        }
        Ok(())
    })
}
