//! Region proposal machinery: anchors, IoU label assignment, minibatch
//! sampling, non-maximum suppression, proposal selection and crop-and-resize.

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{clip_to_frame, iou, BoundingBox};
use crate::raster::Plane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    pub base_size: f64,
    pub scales: Vec<f64>,
    /// Height over width.
    pub aspect_ratios: Vec<f64>,
    pub stride: u32,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            base_size: 128.0,
            scales: vec![0.25, 0.5, 1.0, 2.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            stride: 16,
        }
    }
}

impl AnchorConfig {
    /// Anchors per feature-map position.
    pub fn k(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    /// Feature grid covering a frame at this stride.
    pub fn grid_for(&self, width: u32, height: u32) -> (u32, u32) {
        (
            height.div_ceil(self.stride).max(1),
            width.div_ceil(self.stride).max(1),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !positive(&self.base_size) || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "anchor base_size and stride must be positive".into(),
            ));
        }
        if self.k() == 0 || !self.scales.iter().all(positive) || !self.aspect_ratios.iter().all(positive) {
            return Err(Error::InvalidConfig(
                "anchor scales and aspect_ratios must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Tiles `k` anchors over every feature position, row-major, then by scale,
/// then by ratio. Anchors are not clipped.
pub fn generate_anchors(feature_h: u32, feature_w: u32, cfg: &AnchorConfig) -> Vec<BoundingBox> {
    let shapes: Vec<(f64, f64)> = cfg
        .scales
        .iter()
        .flat_map(|&s| {
            cfg.aspect_ratios.iter().map(move |&r| {
                let sqrt_r = r.sqrt();
                (cfg.base_size * s / sqrt_r, cfg.base_size * s * sqrt_r)
            })
        })
        .collect();
    let stride = cfg.stride as f64;
    let mut out = Vec::with_capacity(feature_h as usize * feature_w as usize * shapes.len());
    for i in 0..feature_h {
        for j in 0..feature_w {
            let cx = (j as f64 + 0.5) * stride;
            let cy = (i as f64 + 0.5) * stride;
            for &(w, h) in &shapes {
                out.push(
                    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
                        .expect("validated anchor shape"),
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive { gt: usize },
    Negative,
    Ignore,
}

impl AnchorLabel {
    pub fn matched_gt(&self) -> Option<usize> {
        match self {
            AnchorLabel::Positive { gt } => Some(*gt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub minibatch_size: usize,
    pub positive_fraction: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Also mark each ground truth's best-overlapping anchor(s) positive.
    pub match_best_anchor: bool,
    /// Set from the run seed rather than from config files.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            minibatch_size: 256,
            positive_fraction: 0.5,
            pos_iou: 0.6,
            neg_iou: 0.3,
            match_best_anchor: true,
            rng_seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.neg_iou && self.neg_iou < self.pos_iou && self.pos_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= neg_iou < pos_iou <= 1, got neg {} pos {}",
                self.neg_iou, self.pos_iou
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) || self.minibatch_size == 0 {
            return Err(Error::InvalidConfig(
                "positive_fraction must lie in [0, 1] and minibatch_size be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn max_positives(&self) -> usize {
        (self.minibatch_size as f64 * self.positive_fraction).floor() as usize
    }
}

/// Labels anchors by their best IoU against the ground truth boxes.
pub fn assign_labels(anchors: &[BoundingBox], gt_boxes: &[BoundingBox], cfg: &SamplingConfig) -> Vec<AnchorLabel> {
    if gt_boxes.is_empty() {
        return vec![AnchorLabel::Negative; anchors.len()];
    }
    // best (iou, gt index) per anchor; ties resolve to the lowest gt index
    let best: Vec<(f64, usize)> = anchors
        .iter()
        .map(|a| {
            gt_boxes
                .iter()
                .enumerate()
                .fold((f64::NEG_INFINITY, 0), |acc, (g, gt)| {
                    let v = iou(a, gt);
                    if v > acc.0 {
                        (v, g)
                    } else {
                        acc
                    }
                })
        })
        .collect();
    let mut labels: Vec<AnchorLabel> = best
        .iter()
        .map(|&(v, g)| {
            if v >= cfg.pos_iou {
                AnchorLabel::Positive { gt: g }
            } else if v <= cfg.neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();

    if cfg.match_best_anchor {
        for gt in gt_boxes {
            let ious: Vec<f64> = anchors.iter().map(|a| iou(a, gt)).collect();
            let top = ious.iter().cloned().fold(0.0, f64::max);
            if top <= 0.0 {
                continue;
            }
            for (i, &v) in ious.iter().enumerate() {
                if v == top {
                    labels[i] = AnchorLabel::Positive { gt: best[i].1 };
                }
            }
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minibatch {
    /// Sampled anchor indices, ascending.
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Fewer than `minibatch_size` samples were available.
    pub undersized: bool,
}

/// Samples up to `minibatch_size * positive_fraction` positives and fills the
/// rest with negatives, uniformly without replacement.
pub fn sample_minibatch(labels: &[AnchorLabel], cfg: &SamplingConfig) -> Result<Minibatch> {
    let pos: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, AnchorLabel::Positive { .. }))
        .map(|(i, _)| i)
        .collect();
    let neg: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, AnchorLabel::Negative))
        .map(|(i, _)| i)
        .collect();
    if pos.is_empty() && neg.is_empty() {
        return Err(Error::NothingToSample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut pick = |pool: &[usize], n: usize| -> Vec<usize> {
        let mut v: Vec<usize> = index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        v.sort_unstable();
        v
    };
    let n_pos = pos.len().min(cfg.max_positives());
    let positives = pick(&pos, n_pos);
    let n_neg = neg.len().min(cfg.minibatch_size - n_pos);
    let negatives = pick(&neg, n_neg);
    Ok(Minibatch {
        undersized: n_pos + n_neg < cfg.minibatch_size,
        positives,
        negatives,
    })
}

/// Descending score, then ascending x, y, w, h.
pub(crate) fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x().total_cmp(&b.bbox.x()))
        .then(a.bbox.y().total_cmp(&b.bbox.y()))
        .then(a.bbox.w().total_cmp(&b.bbox.w()))
        .then(a.bbox.h().total_cmp(&b.bbox.h()))
}

/// Greedy non-maximum suppression. A detection is dropped when its IoU with
/// an already kept one exceeds `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(*order[i]);
        for j in (i + 1)..order.len() {
            if !suppressed[j] && iou(&order[i].bbox, &order[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub train_nms_iou: f64,
    pub test_nms_iou: f64,
    pub max_proposals: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            train_nms_iou: 0.7,
            test_nms_iou: 0.6,
            max_proposals: 300,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| t > 0.0 && t <= 1.0;
        if !ok(self.train_nms_iou) || !ok(self.test_nms_iou) || self.max_proposals == 0 {
            return Err(Error::InvalidConfig(
                "nms thresholds must lie in (0, 1] and max_proposals be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Test,
}

pub fn select_proposals(
    scored: &[Detection],
    cfg: &ProposalConfig,
    mode: Mode,
    width: u32,
    height: u32,
) -> Vec<Detection> {
    let clipped: Vec<Detection> = scored
        .iter()
        .filter_map(|d| {
            clip_to_frame(&d.bbox, width, height).map(|b| Detection {
                bbox: b,
                score: d.score,
            })
        })
        .collect();
    let threshold = match mode {
        Mode::Train => cfg.train_nms_iou,
        Mode::Test => cfg.test_nms_iou,
    };
    let mut kept = nms(&clipped, threshold);
    kept.truncate(cfg.max_proposals);
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    pub out_h: u32,
    pub out_w: u32,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig { out_h: 16, out_w: 16 }
    }
}

impl RoiConfig {
    pub fn dim(&self) -> usize {
        self.out_h as usize * self.out_w as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_h < 2 || self.out_w < 2 {
            return Err(Error::InvalidConfig("roi out_h and out_w must be at least 2".into()));
        }
        Ok(())
    }
}

/// Sample positions along one axis: corner-aligned on the centers of the
/// first and last pixel the box covers (`start .. start+len-1` in pixel-index
/// coordinates). Boxes narrower than one pixel collapse onto their center.
fn sample_axis(start: f64, len: f64, n: u32) -> impl Iterator<Item = f64> {
    let span = (len - 1.0).max(0.0);
    let first = if len >= 1.0 { start } else { start + len / 2.0 - 0.5 };
    let step = span / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { first + span } else { first + step * i as f64 })
}

/// Bilinear resampling of `box` to an `out_h x out_w` grid.
pub fn crop_and_resize(image: &Plane, b: &BoundingBox, cfg: &RoiConfig) -> Result<Plane> {
    if clip_to_frame(b, image.width(), image.height()).is_none() {
        return Err(Error::EmptyCrop);
    }
    let xs: Vec<f64> = sample_axis(b.x(), b.w(), cfg.out_w).collect();
    let ys: Vec<f64> = sample_axis(b.y(), b.h(), cfg.out_h).collect();
    let mut data = Vec::with_capacity(cfg.dim());
    for &v in &ys {
        for &u in &xs {
            data.push(image.sample(u, v));
        }
    }
    Ok(Plane::new(cfg.out_w, cfg.out_h, data))
}
