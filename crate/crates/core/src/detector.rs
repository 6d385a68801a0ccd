//! Detector contract and the exemplar-based reference detector.
//!
//! The reference detector keeps two banks of unit-norm region features
//! (positive and negative exemplars). A region scores
//! `clamp((1 + s_pos - s_neg) / 2, 0, 1)` where `s_pos` / `s_neg` are the best
//! cosine similarities against each bank. Detection runs in two stages: every
//! anchor is scored on a box-pooled copy of the frame against a second pair of
//! banks holding the training regions as seen on that pooled copy, proposals
//! are selected with NMS, and the survivors are rescored on their exact
//! full-resolution crop against the main banks.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augmentation::AnnotatedFrame;
use crate::error::{Error, Result};
use crate::geometry::{clip_to_frame, BoundingBox};
use crate::proposal::{
    assign_labels, crop_and_resize, generate_anchors, nms, sample_minibatch, select_proposals, AnchorConfig,
    Mode, ProposalConfig, RoiConfig, SamplingConfig,
};
use crate::raster::{Plane, RgbImage};

/// A scored box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidConfig(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Detection { bbox, score })
    }
}

/// An image region used as a training example.
#[derive(Debug, Clone)]
pub struct TrainingRegion {
    pub image: Arc<RgbImage>,
    pub bbox: BoundingBox,
}

/// What the post-learning procedures need from a detector.
pub trait DetectorModel {
    /// Deterministic for a fixed model state and frame.
    fn detect(&self, frame: &RgbImage) -> Vec<Detection>;

    fn train_positive(&mut self, frames: &[AnnotatedFrame], cfg: &SamplingConfig) -> Result<()>;

    /// Positive-only variant for pseudo-labeled frames, whose unlabeled
    /// background may still hold objects.
    fn train_pseudo_labeled(&mut self, frames: &[AnnotatedFrame], cfg: &SamplingConfig) -> Result<()>;

    fn train_negative(&mut self, regions: &[TrainingRegion]) -> Result<()>;

    fn save(&self, out: &mut dyn Write) -> Result<()>;
}

/// Mean-removed, unit-norm region descriptor. Flat regions map to the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Feature(Vec<f64>);

impl Feature {
    pub fn from_values(mut v: Vec<f64>) -> Self {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v.iter_mut().for_each(|x| *x -= mean);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // residue of rounding in the mean of a constant patch
        if norm <= 1e-9 * scale.max(1.0) * n.sqrt() {
            v.iter_mut().for_each(|x| *x = 0.0);
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Feature(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn cosine(&self, other: &Feature) -> f64 {
        dot(&self.0, &other.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn extract_feature(image: &Plane, b: &BoundingBox, roi: &RoiConfig) -> Result<Feature> {
    let patch = crop_and_resize(image, b, roi)?;
    Ok(Feature::from_values(patch.into_data()))
}

/// A frame's luma plane and its box-pooled copy.
#[derive(Debug, Clone)]
pub struct FramePlanes {
    pub full: Plane,
    pub pooled: Plane,
    pub stride: u32,
}

impl FramePlanes {
    pub fn new(full: Plane, stride: u32) -> Self {
        let pooled = full.box_pool(stride);
        FramePlanes { full, pooled, stride }
    }
}

/// Exemplars closer than this cosine to an existing one are not stored again.
pub const DEDUP_COSINE: f64 = 0.999;

const MODEL_FORMAT: &str = "polypkit-exemplar-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarModel {
    positives: Vec<Feature>,
    negatives: Vec<Feature>,
    /// Stage-one banks: the same regions as seen on the pooled frame.
    proposal_positives: Vec<Feature>,
    proposal_negatives: Vec<Feature>,
    pub detect_threshold: f64,
    pub roi: RoiConfig,
    pub anchors: AnchorConfig,
    pub proposals: ProposalConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
    model: ExemplarModel,
}

impl Default for ExemplarModel {
    fn default() -> Self {
        ExemplarModel::new(
            0.9,
            RoiConfig::default(),
            AnchorConfig::default(),
            ProposalConfig::default(),
        )
    }
}

impl ExemplarModel {
    pub fn new(detect_threshold: f64, roi: RoiConfig, anchors: AnchorConfig, proposals: ProposalConfig) -> Self {
        ExemplarModel {
            positives: Vec::new(),
            negatives: Vec::new(),
            proposal_positives: Vec::new(),
            proposal_negatives: Vec::new(),
            detect_threshold,
            roi,
            anchors,
            proposals,
        }
    }

    pub fn positives(&self) -> &[Feature] {
        &self.positives
    }

    pub fn negatives(&self) -> &[Feature] {
        &self.negatives
    }

    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        self.anchors.validate()?;
        self.proposals.validate()?;
        if !(0.0..=1.0).contains(&self.detect_threshold) {
            return Err(Error::InvalidConfig(format!(
                "detect_threshold {} outside [0, 1]",
                self.detect_threshold
            )));
        }
        let dim = self.roi.dim();
        let banks = [
            &self.positives,
            &self.negatives,
            &self.proposal_positives,
            &self.proposal_negatives,
        ];
        for f in banks.into_iter().flatten() {
            if f.dim() != dim {
                return Err(Error::FeatureDimension {
                    found: f.dim(),
                    expected: dim,
                });
            }
            let norm = dot(f.values(), f.values()).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::ModelFormat(format!("exemplar norm {norm} is not 1")));
            }
        }
        Ok(())
    }

    pub fn feature(&self, image: &Plane, b: &BoundingBox) -> Result<Feature> {
        extract_feature(image, b, &self.roi)
    }

    pub fn score_region(&self, feature: &Feature) -> f64 {
        score_against(&self.positives, &self.negatives, feature)
    }

    /// Score of a box in a frame; convenient for inspecting single regions.
    pub fn score_box(&self, frame: &RgbImage, b: &BoundingBox) -> Result<f64> {
        let plane = Plane::from_rgb(frame);
        Ok(self.score_region(&self.feature(&plane, b)?))
    }

    /// Stores a positive exemplar; returns whether it was new.
    pub fn add_positive(&mut self, f: Feature) -> Result<bool> {
        let dim = self.roi.dim();
        insert_dedup(&mut self.positives, f, dim)
    }

    pub fn add_negative(&mut self, f: Feature) -> Result<bool> {
        let dim = self.roi.dim();
        insert_dedup(&mut self.negatives, f, dim)
    }

    /// The frame at full resolution and pooled to the anchor stride.
    pub fn frame_planes(&self, frame: &RgbImage) -> FramePlanes {
        FramePlanes::new(Plane::from_rgb(frame), self.anchors.stride)
    }

    fn pooled_feature(&self, planes: &FramePlanes, b: &BoundingBox) -> Result<Feature> {
        let pooled_box = b.scaled(1.0 / planes.stride as f64)?;
        extract_feature(&planes.pooled, &pooled_box, &self.roi)
    }

    /// Stores a region as a positive exemplar for both stages; returns whether
    /// the full-resolution exemplar was new.
    pub fn add_positive_region(&mut self, planes: &FramePlanes, b: &BoundingBox) -> Result<bool> {
        let dim = self.roi.dim();
        let pooled = self.pooled_feature(planes, b)?;
        insert_dedup(&mut self.proposal_positives, pooled, dim)?;
        self.add_positive(self.feature(&planes.full, b)?)
    }

    pub fn add_negative_region(&mut self, planes: &FramePlanes, b: &BoundingBox) -> Result<bool> {
        let dim = self.roi.dim();
        let pooled = self.pooled_feature(planes, b)?;
        insert_dedup(&mut self.proposal_negatives, pooled, dim)?;
        self.add_negative(self.feature(&planes.full, b)?)
    }

    /// Stage one: score clipped anchors on the pooled frame and keep the
    /// test-mode proposals.
    pub fn propose(&self, planes: &FramePlanes) -> Vec<Detection> {
        let (w, h) = (planes.full.width(), planes.full.height());
        let (fh, fw) = self.anchors.grid_for(w, h);
        let scored: Vec<Detection> = generate_anchors(fh, fw, &self.anchors)
            .iter()
            .filter_map(|a| clip_to_frame(a, w, h))
            .filter_map(|b| {
                let f = self.pooled_feature(planes, &b).ok()?;
                Some(Detection {
                    bbox: b,
                    score: score_against(&self.proposal_positives, &self.proposal_negatives, &f),
                })
            })
            .collect();
        select_proposals(&scored, &self.proposals, Mode::Test, w, h)
    }

    pub fn detect_planes(&self, planes: &FramePlanes) -> Vec<Detection> {
        let rescored: Vec<Detection> = self
            .propose(planes)
            .into_iter()
            .filter_map(|p| {
                let f = extract_feature(&planes.full, &p.bbox, &self.roi).ok()?;
                let score = self.score_region(&f);
                (score >= self.detect_threshold).then_some(Detection { bbox: p.bbox, score })
            })
            .collect();
        nms(&rescored, self.proposals.test_nms_iou)
    }

    /// Per frame: label clipped anchors against the ground truth, sample a
    /// minibatch, store the matched ground-truth crops as positives and the
    /// sampled negative anchor crops as negatives
    /// when `harvest_negatives` is set.
    fn train_frames(&mut self, frames: &[AnnotatedFrame], cfg: &SamplingConfig, harvest_negatives: bool) -> Result<()> {
        for (idx, frame) in frames.iter().enumerate() {
            let gts = frame.gt_boxes();
            if gts.is_empty() {
                continue;
            }
            let planes = self.frame_planes(frame.pixels());
            let (w, h) = (frame.width(), frame.height());
            let (fh, fw) = self.anchors.grid_for(w, h);
            let anchors: Vec<BoundingBox> = generate_anchors(fh, fw, &self.anchors)
                .iter()
                .filter_map(|a| clip_to_frame(a, w, h))
                .collect();
            let labels = assign_labels(&anchors, &gts, cfg);
            let frame_cfg = SamplingConfig {
                rng_seed: cfg.rng_seed.wrapping_add(idx as u64),
                ..cfg.clone()
            };
            let batch = match sample_minibatch(&labels, &frame_cfg) {
                Ok(b) => b,
                Err(Error::NothingToSample) => continue,
                Err(e) => return Err(e),
            };
            let mut matched: Vec<usize> = batch
                .positives
                .iter()
                .filter_map(|&i| labels[i].matched_gt())
                .collect();
            matched.sort_unstable();
            matched.dedup();
            for g in matched {
                self.add_positive_region(&planes, &gts[g])?;
            }
            for &i in batch.negatives.iter().filter(|_| harvest_negatives) {
                self.add_negative_region(&planes, &anchors[i])?;
            }
        }
        Ok(())
    }

    /// Writes the model file, a single JSON object
    /// `{"format", "version", "provenance"?, "model"}`, with free-form
    /// provenance entries.
    pub fn save_with_provenance(&self, out: &mut dyn Write, provenance: &BTreeMap<String, String>) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            provenance: provenance.clone(),
            model: self.clone(),
        };
        serde_json::to_writer(&mut *out, &file).map_err(|e| Error::ModelFormat(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io("<model>", e))
    }

    pub fn load(input: &mut dyn Read) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_reader(input).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

fn score_against(positives: &[Feature], negatives: &[Feature], f: &Feature) -> f64 {
    let best = |bank: &[Feature]| {
        bank.iter()
            .map(|e| e.cosine(f))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    };
    ((1.0 + best(positives) - best(negatives)) / 2.0).clamp(0.0, 1.0)
}

fn insert_dedup(bank: &mut Vec<Feature>, f: Feature, dim: usize) -> Result<bool> {
    if f.dim() != dim {
        return Err(Error::FeatureDimension {
            found: f.dim(),
            expected: dim,
        });
    }
    if f.is_zero() || bank.iter().any(|e| e.cosine(&f) >= DEDUP_COSINE) {
        return Ok(false);
    }
    bank.push(f);
    Ok(true)
}

impl DetectorModel for ExemplarModel {
    fn detect(&self, frame: &RgbImage) -> Vec<Detection> {
        self.detect_planes(&self.frame_planes(frame))
    }

    fn train_positive(&mut self, frames: &[AnnotatedFrame], cfg: &SamplingConfig) -> Result<()> {
        self.train_frames(frames, cfg, true)
    }

    fn train_pseudo_labeled(&mut self, frames: &[AnnotatedFrame], cfg: &SamplingConfig) -> Result<()> {
        self.train_frames(frames, cfg, false)
    }

    fn train_negative(&mut self, regions: &[TrainingRegion]) -> Result<()> {
        let mut cache: HashMap<*const RgbImage, FramePlanes> = HashMap::new();
        for r in regions {
            let planes = cache
                .entry(Arc::as_ptr(&r.image))
                .or_insert_with(|| self.frame_planes(&r.image))
                .clone();
            self.add_negative_region(&planes, &r.bbox)?;
        }
        Ok(())
    }

    fn save(&self, out: &mut dyn Write) -> Result<()> {
        self.save_with_provenance(out, &BTreeMap::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BinaryMask;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn texture(seed: u32) -> impl Fn(u32, u32) -> u8 {
        move |x, y| {
            let v = (x.wrapping_mul(73) ^ y.wrapping_mul(151) ^ seed.wrapping_mul(2654435761)).wrapping_mul(2246822519);
            40 + (v >> 25) as u8
        }
    }

    /// Flat frame with a 32x32 texture planted at (px, py).
    fn planted(w: u32, h: u32, px: u32, py: u32, seed: u32) -> RgbImage {
        let t = texture(seed);
        RgbImage::from_fn(w, h, |x, y| {
            if x >= px && x < px + 32 && y >= py && y < py + 32 {
                let v = t(x - px, y - py);
                image::Rgb([v, v, v])
            } else {
                image::Rgb([100, 100, 100])
            }
        })
    }

    #[test]
    fn feature_examples() {
        let roi = RoiConfig::default();
        let flat = Plane::from_fn(40, 40, |_, _| 17.3);
        assert!(extract_feature(&flat, &bx(3.0, 3.0, 20.0, 20.0), &roi).unwrap().is_zero());

        let p = Plane::from_fn(40, 40, |c, r| ((c * 7 + r * 3) % 11) as f64);
        let doubled = Plane::from_fn(40, 40, |c, r| 2.0 * ((c * 7 + r * 3) % 11) as f64);
        let b = bx(4.0, 5.0, 20.0, 18.0);
        assert_eq!(extract_feature(&p, &b, &roi).unwrap(), extract_feature(&doubled, &b, &roi).unwrap());

        let tiled = Plane::from_fn(80, 40, |c, r| ((c % 40) * 7 + r * 3) as f64 % 11.0);
        let left = extract_feature(&tiled, &bx(2.0, 2.0, 30.0, 30.0), &roi).unwrap();
        let right = extract_feature(&tiled, &bx(42.0, 2.0, 30.0, 30.0), &roi).unwrap();
        for (a, b) in left.values().iter().zip(right.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let n: f64 = left.values().iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_examples() {
        let mut m = ExemplarModel::default();
        let p = Plane::from_fn(40, 40, |c, r| ((c * 7 + r * 3) % 11) as f64);
        let f = m.feature(&p, &bx(0.0, 0.0, 20.0, 20.0)).unwrap();
        assert_eq!(m.score_region(&f), 0.5);
        m.add_positive(f.clone()).unwrap();
        assert!((m.score_region(&f) - 1.0).abs() < 1e-12);

        let mut neg_only = ExemplarModel::default();
        neg_only.add_negative(f.clone()).unwrap();
        assert!(neg_only.score_region(&f).abs() < 1e-12);
    }

    #[test]
    fn untrained_model_detects_nothing() {
        let m = ExemplarModel::default();
        assert!(m.detect(&planted(128, 128, 40, 40, 1)).is_empty());
    }

    fn trained_on(seed: u32) -> (ExemplarModel, AnnotatedFrame) {
        let img = planted(128, 128, 40, 40, seed);
        let mask = BinaryMask::from_box(128, 128, &bx(40.0, 40.0, 32.0, 32.0));
        let frame = AnnotatedFrame::new("train", img, vec![mask]).unwrap();
        let mut m = ExemplarModel::default();
        m.train_positive(std::slice::from_ref(&frame), &SamplingConfig::default()).unwrap();
        (m, frame)
    }

    fn planted_box(x: f64, y: f64) -> BoundingBox {
        bx(x, y, 32.0, 32.0)
    }

    fn centroid_inside(d: &Detection, b: &BoundingBox) -> bool {
        let c = d.bbox.centroid();
        c.x > b.x() && c.x < b.right() && c.y > b.y() && c.y < b.bottom()
    }

    #[test]
    fn detects_exact_copy_of_exemplar() {
        // trained by inserting the texture's own crop as the only exemplar
        let train = planted(128, 128, 40, 40, 3);
        let mut m = ExemplarModel::default();
        let planes = m.frame_planes(&train);
        m.add_positive_region(&planes, &planted_box(40.0, 40.0)).unwrap();
        // 32 px anchors sit at x = 16j - 8
        let test = planted(128, 128, 72, 24, 3);
        let dets = m.detect(&test);
        let target = planted_box(72.0, 24.0);
        assert!(dets.iter().any(|d| d.score >= 0.99 && centroid_inside(d, &target)), "{dets:?}");
        for d in &dets {
            assert!(d.bbox.x() >= 0.0 && d.bbox.right() <= 128.0);
            assert!(d.bbox.y() >= 0.0 && d.bbox.bottom() <= 128.0);
        }
        assert_eq!(dets, m.detect(&test));
    }

    #[test]
    fn trained_model_detects_planted_copy() {
        let (m, _) = trained_on(3);
        assert!(!m.positives().is_empty());
        let test = planted(128, 128, 72, 24, 3);
        let target = planted_box(72.0, 24.0);
        let dets = m.detect(&test);
        assert!(dets.iter().any(|d| d.score >= m.detect_threshold && centroid_inside(d, &target)), "{dets:?}");
    }

    #[test]
    fn stored_negative_texture_is_not_detected() {
        let img = planted(128, 128, 40, 40, 4);
        let mut m = ExemplarModel::default();
        let planes = m.frame_planes(&img);
        m.add_negative_region(&planes, &planted_box(40.0, 40.0)).unwrap();
        assert!(m.detect(&planted(128, 128, 72, 24, 4)).is_empty());
    }

    #[test]
    fn detection_is_gain_invariant() {
        let (m, _) = trained_on(6);
        // values stay below 128 so doubling is exact in u8
        let dim = |img: &RgbImage| RgbImage::from_fn(img.width(), img.height(), |x, y| {
            let v = img.get_pixel(x, y)[0] / 2;
            image::Rgb([v, v, v])
        });
        let test = dim(&planted(128, 128, 72, 24, 6));
        let bright = RgbImage::from_fn(128, 128, |x, y| {
            let v = test.get_pixel(x, y)[0] * 2;
            image::Rgb([v, v, v])
        });
        assert_eq!(m.detect(&test), m.detect(&bright));
    }

    #[test]
    fn training_twice_is_idempotent() {
        let (mut m, frame) = trained_on(5);
        let (p, n) = (m.positives().len(), m.negatives().len());
        m.train_positive(std::slice::from_ref(&frame), &SamplingConfig::default()).unwrap();
        assert_eq!((m.positives().len(), m.negatives().len()), (p, n));
        m.train_positive(&[], &SamplingConfig::default()).unwrap();
        assert_eq!(m.positives().len(), p);
    }

    #[test]
    fn negative_training_neutralizes_region() {
        let (mut m, frame) = trained_on(7);
        let region = TrainingRegion {
            image: Arc::new(frame.pixels().clone()),
            bbox: bx(40.0, 40.0, 32.0, 32.0),
        };
        let before = m.positives().len();
        m.train_negative(&[]).unwrap();
        m.train_negative(std::slice::from_ref(&region)).unwrap();
        assert_eq!(m.positives().len(), before);
        let s = m.score_box(frame.pixels(), &region.bbox).unwrap();
        assert!((s - 0.5).abs() < 1e-9, "{s}");
    }

    #[test]
    fn model_round_trips() {
        let (m, _) = trained_on(9);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = ExemplarModel::load(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let bad = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":99");
        assert!(ExemplarModel::load(&mut bad.as_bytes()).is_err());

        let mut tagged = Vec::new();
        let prov = BTreeMap::from([("seed".to_string(), "7".to_string())]);
        m.save_with_provenance(&mut tagged, &prov).unwrap();
        assert!(String::from_utf8_lossy(&tagged).contains("\"provenance\":{\"seed\":\"7\"}"));
        assert_eq!(ExemplarModel::load(&mut tagged.as_slice()).unwrap(), m);
    }
}
