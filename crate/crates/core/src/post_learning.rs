//! Retraining a detector from its own output: false-positive learning on
//! polyp-free footage and offline self-training on a test video.

use std::collections::HashMap;
use std::sync::Arc;

use image::imageops;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_strategy, AnnotatedFrame, AugmentationStrategy, StrategyName};
use crate::detector::{DetectorModel, TrainingRegion};
use crate::error::{Error, Result};
use crate::geometry::{clip_to_frame, flip_box, rotate_box_cw, BinaryMask, BoundingBox, FlipAxis};
use crate::proposal::SamplingConfig;
use crate::raster::RgbImage;

/// A scored box on a named frame, as collected from a detection pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

/// A detection collected on polyp-free footage.
pub type FPRecord = RegionRecord;

/// Image transform applied to a collected region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTransform {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl RegionTransform {
    pub const ALL: [RegionTransform; 6] = [
        RegionTransform::Identity,
        RegionTransform::Rot90,
        RegionTransform::Rot180,
        RegionTransform::Rot270,
        RegionTransform::FlipH,
        RegionTransform::FlipV,
    ];

    pub fn apply_image(self, img: &RgbImage) -> RgbImage {
        match self {
            RegionTransform::Identity => img.clone(),
            RegionTransform::Rot90 => imageops::rotate90(img),
            RegionTransform::Rot180 => imageops::rotate180(img),
            RegionTransform::Rot270 => imageops::rotate270(img),
            RegionTransform::FlipH => imageops::flip_horizontal(img),
            RegionTransform::FlipV => imageops::flip_vertical(img),
        }
    }

    /// Maps a box of a `width x height` frame into the transformed frame.
    pub fn apply_box(self, b: &BoundingBox, width: u32, height: u32) -> BoundingBox {
        match self {
            RegionTransform::Identity => *b,
            RegionTransform::Rot90 => rotate_box_cw(b, 1, width, height),
            RegionTransform::Rot180 => rotate_box_cw(b, 2, width, height),
            RegionTransform::Rot270 => rotate_box_cw(b, 3, width, height),
            RegionTransform::FlipH => flip_box(b, FlipAxis::Horizontal, width, height),
            RegionTransform::FlipV => flip_box(b, FlipAxis::Vertical, width, height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostLearnConfig {
    pub fp_score_threshold: f64,
    pub reliable_score_threshold: f64,
    pub fp_augmentation: Vec<RegionTransform>,
    pub offline_augmentation: StrategyName,
}

impl Default for PostLearnConfig {
    fn default() -> Self {
        PostLearnConfig {
            fp_score_threshold: 0.99,
            reliable_score_threshold: 0.99,
            fp_augmentation: RegionTransform::ALL.to_vec(),
            offline_augmentation: StrategyName::Rot,
        }
    }
}

impl PostLearnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("fp_score_threshold", self.fp_score_threshold),
            ("reliable_score_threshold", self.reliable_score_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0, 1], got {t}")));
            }
        }
        for (i, t) in self.fp_augmentation.iter().enumerate() {
            if self.fp_augmentation[..i].contains(t) {
                return Err(Error::InvalidConfig(format!("fp_augmentation lists {t:?} twice")));
            }
        }
        Ok(())
    }
}

/// Runs the detector over `frames` in parallel and keeps every detection
/// scoring at least `threshold`, in frame order then detector order.
pub fn collect_detections<M: DetectorModel + Sync>(
    model: &M,
    frames: &[AnnotatedFrame],
    threshold: f64,
) -> Vec<RegionRecord> {
    let per_frame: Vec<Vec<RegionRecord>> = frames
        .par_iter()
        .map(|f| {
            model
                .detect(f.pixels())
                .into_iter()
                .filter(|d| d.score >= threshold)
                .map(|d| RegionRecord {
                    frame_id: f.frame_id.clone(),
                    bbox: d.bbox,
                    score: d.score,
                })
                .collect()
        })
        .collect();
    per_frame.into_iter().flatten().collect()
}

/// Every detection at or above the FP threshold on polyp-free frames. Ground
/// truth on the frames is ignored.
pub fn collect_false_positives<M: DetectorModel + Sync>(
    model: &M,
    negative_frames: &[AnnotatedFrame],
    cfg: &PostLearnConfig,
) -> Vec<RegionRecord> {
    collect_detections(model, negative_frames, cfg.fp_score_threshold)
}

/// Expands each record into its region under every configured transform.
/// Transformed images are shared between records of the same frame.
pub fn augment_fp_records(
    records: &[RegionRecord],
    frames: &[AnnotatedFrame],
    cfg: &PostLearnConfig,
) -> Result<Vec<TrainingRegion>> {
    let by_id: HashMap<&str, &AnnotatedFrame> = frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let mut images: HashMap<(&str, RegionTransform), Arc<RgbImage>> = HashMap::new();
    let mut out = Vec::new();
    for r in records {
        let frame = by_id
            .get(r.frame_id.as_str())
            .ok_or_else(|| Error::UnknownFrame(r.frame_id.clone()))?;
        let (w, h) = (frame.width(), frame.height());
        for &t in &cfg.fp_augmentation {
            let image = images
                .entry((frame.frame_id.as_str(), t))
                .or_insert_with(|| Arc::new(t.apply_image(frame.pixels())))
                .clone();
            let moved = t.apply_box(&r.bbox, w, h);
            if let Some(bbox) = clip_to_frame(&moved, image.width(), image.height()) {
                out.push(TrainingRegion { image, bbox });
            }
        }
    }
    Ok(out)
}

/// Collects high-scoring detections on polyp-free frames and retrains the
/// model with their augmented regions as negatives. Returns the collected
/// records.
pub fn fp_learn<M: DetectorModel + Sync>(
    model: &mut M,
    negative_frames: &[AnnotatedFrame],
    cfg: &PostLearnConfig,
) -> Result<Vec<RegionRecord>> {
    cfg.validate()?;
    let records = collect_false_positives(model, negative_frames, cfg);
    let regions = augment_fp_records(&records, negative_frames, cfg)?;
    model.train_negative(&regions)?;
    Ok(records)
}

/// Frames annotated with rasterized reliable boxes. Frames without a reliable
/// region are left out.
pub fn pseudo_label(video: &[AnnotatedFrame], reliable: &[RegionRecord]) -> Result<Vec<AnnotatedFrame>> {
    let mut out = Vec::new();
    for f in video {
        let masks: Vec<BinaryMask> = reliable
            .iter()
            .filter(|r| r.frame_id == f.frame_id)
            .map(|r| BinaryMask::from_box(f.width(), f.height(), &r.bbox))
            .filter(|m| !m.is_empty())
            .collect();
        if !masks.is_empty() {
            out.push(AnnotatedFrame::new(f.frame_id.clone(), f.pixels().clone(), masks)?);
        }
    }
    Ok(out)
}

/// Self-training on one video: detections at or above the reliability
/// threshold become pseudo ground truth, the pseudo-labeled frames are
/// augmented and the model is trained on them with positives only, since the
/// unlabeled background of those frames may still hold polyps. Ground truth
/// on `video` is ignored. Returns the reliable regions.
pub fn offline_learn<M: DetectorModel + Sync>(
    model: &mut M,
    video: &[AnnotatedFrame],
    cfg: &PostLearnConfig,
    sampling: &SamplingConfig,
) -> Result<Vec<RegionRecord>> {
    cfg.validate()?;
    let reliable = collect_detections(model, video, cfg.reliable_score_threshold);
    let strategy = AugmentationStrategy::from_name(cfg.offline_augmentation);
    let frames: Vec<AnnotatedFrame> = pseudo_label(video, &reliable)?
        .iter()
        .flat_map(|f| apply_strategy(f, &strategy))
        .collect();
    model.train_pseudo_labeled(&frames, sampling)?;
    Ok(reliable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Detection, ExemplarModel};
    use crate::raster::Plane;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn frame(id: &str) -> AnnotatedFrame {
        AnnotatedFrame::negative(id, RgbImage::from_fn(64, 48, |x, y| image::Rgb([x as u8, y as u8, 0])))
    }

    fn record(id: &str, b: BoundingBox) -> RegionRecord {
        RegionRecord {
            frame_id: id.into(),
            bbox: b,
            score: 0.995,
        }
    }

    /// Fires fixed detections regardless of the frame.
    struct Scripted {
        dets: Vec<Detection>,
        negatives: usize,
        positives: usize,
    }

    impl DetectorModel for Scripted {
        fn detect(&self, _: &RgbImage) -> Vec<Detection> {
            self.dets.clone()
        }

        fn train_positive(&mut self, frames: &[AnnotatedFrame], _: &SamplingConfig) -> Result<()> {
            self.positives += frames.iter().map(|f| f.annotations().len()).sum::<usize>();
            Ok(())
        }

        fn train_pseudo_labeled(&mut self, frames: &[AnnotatedFrame], cfg: &SamplingConfig) -> Result<()> {
            self.train_positive(frames, cfg)
        }

        fn train_negative(&mut self, regions: &[TrainingRegion]) -> Result<()> {
            self.negatives += regions.len();
            Ok(())
        }

        fn save(&self, _: &mut dyn std::io::Write) -> Result<()> {
            Ok(())
        }
    }

    fn scripted(scores: &[f64]) -> Scripted {
        Scripted {
            dets: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Detection::new(bx(4.0 + 20.0 * i as f64, 10.0, 16.0, 16.0), s).unwrap())
                .collect(),
            negatives: 0,
            positives: 0,
        }
    }

    #[test]
    fn collect_keeps_scores_at_threshold() {
        let cfg = PostLearnConfig::default();
        let m = scripted(&[0.995, 0.5, 0.99]);
        assert!(collect_false_positives(&m, &[], &cfg).is_empty());
        let got = collect_false_positives(&m, &[frame("a"), frame("b")], &cfg);
        assert_eq!(got.len(), 4);
        assert_eq!(got.iter().map(|r| r.frame_id.as_str()).collect::<Vec<_>>(), ["a", "a", "b", "b"]);
        assert!(got.iter().all(|r| r.score >= 0.99));
    }

    #[test]
    fn augment_yields_six_per_record() {
        let cfg = PostLearnConfig::default();
        let frames = [frame("a")];
        assert!(augment_fp_records(&[], &frames, &cfg).unwrap().is_empty());
        let b = bx(20.0, 14.0, 16.0, 12.0);
        let regions = augment_fp_records(&[record("a", b)], &frames, &cfg).unwrap();
        assert_eq!(regions.len(), 6);
        // each region crops the same pixels as the original
        let src = Plane::from_rgb(frames[0].pixels());
        let original = crate::detector::extract_feature(&src, &b, &Default::default()).unwrap();
        for r in &regions {
            assert!(r.bbox.x() >= 0.0 && r.bbox.right() <= r.image.width() as f64);
            let p = Plane::from_rgb(&r.image);
            let f = crate::detector::extract_feature(&p, &r.bbox, &Default::default()).unwrap();
            let mut sorted_a = f.values().to_vec();
            let mut sorted_b = original.values().to_vec();
            sorted_a.sort_by(f64::total_cmp);
            sorted_b.sort_by(f64::total_cmp);
            for (x, y) in sorted_a.iter().zip(&sorted_b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert!(matches!(
            augment_fp_records(&[record("zz", b)], &frames, &cfg),
            Err(Error::UnknownFrame(_))
        ));
    }

    #[test]
    fn fp_learn_only_adds_negatives() {
        let cfg = PostLearnConfig::default();
        let mut m = scripted(&[0.995, 0.2]);
        let got = fp_learn(&mut m, &[frame("a")], &cfg).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!((m.negatives, m.positives), (6, 0));

        let mut quiet = scripted(&[0.5]);
        assert!(fp_learn(&mut quiet, &[frame("a")], &cfg).unwrap().is_empty());
        assert_eq!(quiet.negatives, 0);
    }

    #[test]
    fn offline_learn_pseudo_labels_reliable_boxes() {
        let cfg = PostLearnConfig::default();
        let mut m = scripted(&[0.995, 0.3]);
        let got = offline_learn(&mut m, &[frame("a"), frame("b")], &cfg, &SamplingConfig::default()).unwrap();
        assert_eq!(got.len(), 2);
        // two pseudo frames, six rot variants each, one mask apiece
        assert_eq!((m.positives, m.negatives), (12, 0));

        let mut quiet = scripted(&[0.9]);
        offline_learn(&mut quiet, &[frame("a")], &cfg, &SamplingConfig::default()).unwrap();
        assert_eq!(quiet.positives, 0);
    }

    #[test]
    fn pseudo_masks_are_rasterized_boxes() {
        let b = bx(10.0, 8.0, 20.0, 16.0);
        let out = pseudo_label(&[frame("a"), frame("b")], &[record("b", b)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frame_id, "b");
        assert_eq!(out[0].gt_boxes(), vec![b]);
    }

    #[test]
    fn config_validation() {
        assert!(PostLearnConfig::default().validate().is_ok());
        let bad = PostLearnConfig {
            fp_score_threshold: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let dup = PostLearnConfig {
            fp_augmentation: vec![RegionTransform::Rot90, RegionTransform::Rot90],
            ..Default::default()
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn exemplar_fp_learn_suppresses_collected_regions() {
        let tex = |x: u32, y: u32| {
            let v = ((x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503)) >> 7) % 200;
            v as u8 + 30
        };
        let img = RgbImage::from_fn(128, 128, |x, y| {
            let inside = (24..56).contains(&x) && (24..56).contains(&y);
            let v = if inside { tex(x, y) } else { 120 };
            image::Rgb([v, v, v])
        });
        let mut m = ExemplarModel::default();
        m.detect_threshold = 0.7;
        let planes = m.frame_planes(&img);
        m.add_positive_region(&planes, &bx(24.0, 24.0, 32.0, 32.0)).unwrap();
        let frames = [AnnotatedFrame::negative("n0", img.clone())];
        let cfg = PostLearnConfig {
            fp_score_threshold: 0.7,
            ..Default::default()
        };
        let positives = m.positives().len();
        let records = fp_learn(&mut m, &frames, &cfg).unwrap();
        assert!(!records.is_empty());
        assert_eq!(m.positives().len(), positives);
        for r in &records {
            assert!(m.score_box(&img, &r.bbox).unwrap() <= 0.5 + 1e-12);
        }
        assert!(m.detect(&img).is_empty());
    }
}
