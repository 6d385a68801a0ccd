//! Frame-level detection outcomes, precision/recall style metrics and the
//! per-video reaction metrics, plus the text report format.
//!
//! Report records are `key<TAB>value` lines with the keys
//! `frames tp fp fn tn pre rec spe f1 f2 pdr rt_frames rt_seconds mpt videos`.
//! Counts are integers, every other value is printed with 3 decimals and an
//! absent value is written as `NA`. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fps: f64,
    /// Count extra detections on an already matched mask as false positives.
    pub duplicates_as_fp: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fps: 25.0,
            duplicates_as_fp: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

/// Outcome of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_id: String,
    pub counts: Counts,
    /// Detections that landed on an already matched mask.
    pub duplicates: u64,
    /// Detection wall-clock seconds, when measured.
    pub processing_time: Option<f64>,
}

impl FrameResult {
    pub fn has_polyp(&self) -> bool {
        self.counts.tp + self.counts.fn_ > 0
    }
}

/// Centroid-in-mask classification of one frame's detections.
///
/// A detection matches the first mask (in annotation order) containing its
/// centroid. Each mask with at least one match is a TP, otherwise an FN.
/// Unmatched detections are FPs. Further detections on a matched mask are
/// duplicates, counted as FPs only with `duplicates_as_fp`. TN is 1 iff the
/// frame has neither masks nor detections.
pub fn classify_frame(
    frame_id: impl Into<String>,
    dets: &[Detection],
    gts: &[BinaryMask],
    cfg: &EvalConfig,
) -> FrameResult {
    let mut hit = vec![false; gts.len()];
    let mut fp = 0;
    let mut duplicates = 0;
    for d in dets {
        let c = d.bbox.centroid();
        match gts.iter().position(|m| m.contains(c)) {
            Some(g) if hit[g] => duplicates += 1,
            Some(g) => hit[g] = true,
            None => fp += 1,
        }
    }
    let tp = hit.iter().filter(|&&h| h).count() as u64;
    let mut counts = Counts {
        tp,
        fp,
        fn_: gts.len() as u64 - tp,
        tn: u64::from(gts.is_empty() && dets.is_empty()),
    };
    if cfg.duplicates_as_fp {
        counts.fp += duplicates;
    }
    FrameResult {
        frame_id: frame_id.into(),
        counts,
        duplicates,
        processing_time: None,
    }
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Precision, recall, specificity and the F1/F2 scores, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub pre: f64,
    pub rec: f64,
    pub spe: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Metrics {
    pub fn from_counts(c: &Counts) -> Self {
        let pre = pct(c.tp, c.tp + c.fp);
        let rec = pct(c.tp, c.tp + c.fn_);
        let spe = pct(c.tn, c.fp + c.tn);
        let (f1, f2) = if pre + rec == 0.0 {
            (0.0, 0.0)
        } else {
            (2.0 * pre * rec / (pre + rec), 5.0 * pre * rec / (4.0 * pre + rec))
        };
        Metrics { pre, rec, spe, f1, f2 }
    }
}

/// Aggregated evaluation of one or more sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub frames: u64,
    pub totals: Counts,
    pub metrics: Metrics,
    pub pdr: Option<f64>,
    pub rt_frames: Option<f64>,
    pub rt_seconds: Option<f64>,
    pub mpt: Option<f64>,
    /// Number of videos behind `pdr`.
    pub videos: Option<u64>,
}

impl MetricReport {
    pub fn from_counts(totals: Counts, frames: u64) -> Self {
        MetricReport {
            frames,
            totals,
            metrics: Metrics::from_counts(&totals),
            pdr: None,
            rt_frames: None,
            rt_seconds: None,
            mpt: None,
            videos: None,
        }
    }

    pub fn with_video(mut self, v: &VideoSummary) -> Self {
        self.pdr = Some(v.pdr);
        self.rt_frames = v.rt_frames;
        self.rt_seconds = v.rt_seconds;
        self.videos = Some(v.videos);
        self
    }
}

/// Sums the counts of all frames and derives the metrics. The mean processing
/// time covers the frames that carry one.
pub fn aggregate(results: &[FrameResult]) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let totals = results.iter().map(|r| r.counts).sum();
    let mut report = MetricReport::from_counts(totals, results.len() as u64);
    let times: Vec<f64> = results.iter().filter_map(|r| r.processing_time).collect();
    report.mpt = measure_mpt(&times);
    Ok(report)
}

pub fn frames_to_seconds(frames: f64, fps: f64) -> f64 {
    frames / fps
}

/// Mean of per-frame detection times; `None` when nothing was timed.
pub fn measure_mpt(times: &[f64]) -> Option<f64> {
    if times.is_empty() {
        None
    } else {
        Some(times.iter().sum::<f64>() / times.len() as f64)
    }
}

/// Detection outcome of one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoMetrics {
    pub pdr: f64,
    pub rt_frames: Option<f64>,
    pub rt_seconds: Option<f64>,
}

/// Index of the first frame holding a polyp.
pub fn first_polyp_frame(results: &[FrameResult]) -> Option<usize> {
    results.iter().position(FrameResult::has_polyp)
}

/// PDR is 100 when any frame has a TP. RT counts frames from
/// `first_polyp_index` to the first TP frame and is absent when nothing was
/// detected.
pub fn video_metrics(results: &[FrameResult], first_polyp_index: usize, cfg: &EvalConfig) -> Result<VideoMetrics> {
    cfg.validate()?;
    if first_polyp_frame(results).is_none() {
        return Err(Error::NotPositiveSequence);
    }
    let Some(first_tp) = results.iter().position(|r| r.counts.tp > 0) else {
        return Ok(VideoMetrics {
            pdr: 0.0,
            rt_frames: None,
            rt_seconds: None,
        });
    };
    if first_tp < first_polyp_index {
        return Err(Error::InvalidConfig(format!(
            "first polyp frame {first_polyp_index} comes after the first true positive at {first_tp}"
        )));
    }
    let rt = (first_tp - first_polyp_index) as f64;
    Ok(VideoMetrics {
        pdr: 100.0,
        rt_frames: Some(rt),
        rt_seconds: Some(frames_to_seconds(rt, cfg.fps)),
    })
}

/// PDR and RT over several videos.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoSummary {
    pub videos: u64,
    pub pdr: f64,
    pub rt_frames: Option<f64>,
    pub rt_seconds: Option<f64>,
}

/// Averages PDR over all videos and RT over the videos that were detected.
pub fn summarize_videos(videos: &[VideoMetrics], fps: f64) -> Result<VideoSummary> {
    if videos.is_empty() {
        return Err(Error::EmptyResults);
    }
    let n = videos.len() as f64;
    let pdr = videos.iter().map(|v| v.pdr).sum::<f64>() / n;
    let rts: Vec<f64> = videos.iter().filter_map(|v| v.rt_frames).collect();
    let rt_frames = if rts.is_empty() {
        None
    } else {
        Some(rts.iter().sum::<f64>() / rts.len() as f64)
    };
    Ok(VideoSummary {
        videos: videos.len() as u64,
        pdr,
        rt_frames,
        rt_seconds: rt_frames.map(|f| frames_to_seconds(f, fps)),
    })
}

/// Combines reports of disjoint corpora: counts add up, metrics are
/// recomputed, PDR is averaged per video, RT per detected video and MPT per
/// frame.
pub fn merge_reports(reports: &[MetricReport], fps: f64) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::EmptyResults);
    }
    let totals = reports.iter().map(|r| r.totals).sum();
    let frames = reports.iter().map(|r| r.frames).sum();
    let mut out = MetricReport::from_counts(totals, frames);

    let with_video: Vec<&MetricReport> = reports.iter().filter(|r| r.pdr.is_some()).collect();
    let videos: u64 = with_video.iter().map(|r| r.videos.unwrap_or(1)).sum();
    if videos > 0 {
        let weight = |r: &MetricReport| r.videos.unwrap_or(1) as f64;
        out.pdr = Some(with_video.iter().map(|r| r.pdr.unwrap_or(0.0) * weight(r)).sum::<f64>() / videos as f64);
        out.videos = Some(videos);
        // detected videos per report = pdr share of its videos
        let detected: Vec<(f64, f64)> = with_video
            .iter()
            .filter_map(|r| r.rt_frames.map(|rt| (rt, weight(r) * r.pdr.unwrap_or(0.0) / 100.0)))
            .collect();
        let n: f64 = detected.iter().map(|(_, w)| w).sum();
        if n > 0.0 {
            let rt = detected.iter().map(|(rt, w)| rt * w).sum::<f64>() / n;
            out.rt_frames = Some(rt);
            out.rt_seconds = Some(frames_to_seconds(rt, fps));
        }
    }

    let timed: Vec<(f64, f64)> = reports.iter().filter_map(|r| r.mpt.map(|t| (t, r.frames as f64))).collect();
    let n: f64 = timed.iter().map(|(_, w)| w).sum();
    if n > 0.0 {
        out.mpt = Some(timed.iter().map(|(t, w)| t * w).sum::<f64>() / n);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.3}"))
}

pub const REPORT_KEYS: [&str; 15] = [
    "frames",
    "tp",
    "fp",
    "fn",
    "tn",
    "pre",
    "rec",
    "spe",
    "f1",
    "f2",
    "pdr",
    "rt_frames",
    "rt_seconds",
    "mpt",
    "videos",
];

/// Keys whose values depend on wall-clock timing.
pub const TIMING_KEYS: [&str; 1] = ["mpt"];

/// Machine-readable records, one `key<TAB>value` line per metric.
pub fn format_records(r: &MetricReport) -> String {
    let m = &r.metrics;
    let values = [
        r.frames.to_string(),
        r.totals.tp.to_string(),
        r.totals.fp.to_string(),
        r.totals.fn_.to_string(),
        r.totals.tn.to_string(),
        format!("{:.3}", m.pre),
        format!("{:.3}", m.rec),
        format!("{:.3}", m.spe),
        format!("{:.3}", m.f1),
        format!("{:.3}", m.f2),
        opt(r.pdr),
        opt(r.rt_frames),
        opt(r.rt_seconds),
        opt(r.mpt),
        r.videos.map_or_else(|| "NA".into(), |v| v.to_string()),
    ];
    let mut out = String::new();
    for (k, v) in REPORT_KEYS.iter().zip(values) {
        let _ = writeln!(out, "{k}\t{v}");
    }
    out
}

/// Reads records written by [`format_records`]. Counts are taken as
/// written and the percentage metrics are recomputed from them.
pub fn parse_records(text: &str) -> Result<MetricReport> {
    let mut seen: Vec<Option<String>> = vec![None; REPORT_KEYS.len()];
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected `key<TAB>value`".into(),
        })?;
        let idx = REPORT_KEYS.iter().position(|&key| key == k).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("unknown key `{k}`"),
        })?;
        if seen[idx].replace(v.to_string()).is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    let get = |key: &str| -> Result<&str> {
        let idx = REPORT_KEYS.iter().position(|&k| k == key).expect("known key");
        seen[idx].as_deref().ok_or_else(|| Error::Parse {
            line: last_line,
            msg: format!("missing key `{key}`"),
        })
    };
    let count = |key: &str| -> Result<u64> {
        get(key)?.parse().map_err(|_| Error::Parse {
            line: last_line,
            msg: format!("`{key}` is not a count"),
        })
    };
    let real = |key: &str| -> Result<Option<f64>> {
        match get(key)? {
            "NA" => Ok(None),
            v => v.parse().map(Some).map_err(|_| Error::Parse {
                line: last_line,
                msg: format!("`{key}` is not a number"),
            }),
        }
    };
    let totals = Counts {
        tp: count("tp")?,
        fp: count("fp")?,
        fn_: count("fn")?,
        tn: count("tn")?,
    };
    let mut r = MetricReport::from_counts(totals, count("frames")?);
    r.pdr = real("pdr")?;
    r.rt_frames = real("rt_frames")?;
    r.rt_seconds = real("rt_seconds")?;
    r.mpt = real("mpt")?;
    r.videos = match get("videos")? {
        "NA" => None,
        _ => Some(count("videos")?),
    };
    Ok(r)
}

/// Fixed-width table with one row per named report.
pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>9} {:>8} {:>8}",
        "name", "TP", "FP", "FN", "TN", "Pre", "Rec", "Spe", "F1", "F2", "PDR", "RT(fr)", "RT(s)", "MPT(s)"
    );
    let one = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.1}"));
    let three = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
    for (name, r) in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<name_w$} {:>6} {:>6} {:>6} {:>6} {:>6.1} {:>6.1} {:>6.1} {:>6.1} {:>6.1} {:>6} {:>9} {:>8} {:>8}",
            name,
            r.totals.tp,
            r.totals.fp,
            r.totals.fn_,
            r.totals.tn,
            m.pre,
            m.rec,
            m.spe,
            m.f1,
            m.f2,
            one(r.pdr),
            one(r.rt_frames),
            three(r.rt_seconds),
            three(r.mpt),
        );
    }
    out
}
