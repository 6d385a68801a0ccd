//! Subcommand implementations. Every output file starts with provenance
//! comment lines: toolkit version, command, config hash and seed.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use polypkit::augmentation::{apply_strategy, AugmentationStrategy};
use polypkit::dataset::{load_dataset, write_dataset, DatasetKind};
use polypkit::evaluation::{
    aggregate, classify_frame, first_polyp_frame, format_records, format_table, merge_reports, parse_records,
    summarize_videos, video_metrics, MetricReport,
};
use polypkit::post_learning::{self, RegionRecord};
use polypkit::records::{read_records, read_timings, write_records, write_timings};
use polypkit::{AnnotatedFrame, DetectorModel, Error, ExemplarModel, RunConfig};

use crate::ConfigArgs;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MISSING_INPUT: u8 = 3;
pub const EXIT_INVALID_CONFIG: u8 = 4;
pub const EXIT_INVALID_INPUT: u8 = 5;
pub const EXIT_OUTPUT: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: String) -> Self {
        Failure {
            code: EXIT_INVALID_CONFIG,
            message,
        }
    }

    pub fn other(message: String) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message,
        }
    }

    fn missing(what: &str, path: &Path) -> Self {
        Failure {
            code: EXIT_MISSING_INPUT,
            message: format!("{what} not found: {}", path.display()),
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_OUTPUT,
            message: format!("cannot write {}: {e}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_) => EXIT_INVALID_CONFIG,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
            Error::Io { .. } => EXIT_FAILURE,
            _ => EXIT_INVALID_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn require_file(what: &str, path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::missing(what, path))
    }
}

fn require_dir(what: &str, path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::missing(what, path))
    }
}

/// The effective configuration: file (or defaults) with flag overrides.
pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file("config", path)?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    if let Some(s) = args.strategy {
        cfg.augmentation = s;
    }
    if let Some(t) = args.detect_threshold {
        cfg.detector.detect_threshold = t;
    }
    if let Some(t) = args.fp_threshold {
        cfg.post_learn.fp_score_threshold = t;
    }
    if let Some(t) = args.reliable_threshold {
        cfg.post_learn.reliable_score_threshold = t;
    }
    if let Some(fps) = args.fps {
        cfg.eval.fps = fps;
    }
    if args.strict_duplicates {
        cfg.eval.duplicates_as_fp = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex(&Sha256::digest(cfg.to_toml().as_bytes()))
}

fn provenance(command: &str, cfg: &RunConfig) -> Vec<(String, String)> {
    vec![
        ("toolkit".into(), format!("polypkit {}", env!("CARGO_PKG_VERSION"))),
        ("command".into(), command.into()),
        ("config_sha256".into(), config_hash(cfg)),
        ("seed".into(), cfg.rng_seed.to_string()),
    ]
}

fn header(command: &str, cfg: &RunConfig) -> Vec<String> {
    provenance(command, cfg)
        .into_iter()
        .map(|(k, v)| format!("{k} {v}"))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::output(path, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::output(path, e))
}

fn load_frames(path: &Path, kind: DatasetKind) -> Result<Vec<AnnotatedFrame>, Failure> {
    require_dir("dataset", path)?;
    Ok(load_dataset(path, kind)?.load_frames()?)
}

fn load_model(path: &Path) -> Result<ExemplarModel, Failure> {
    require_file("model", path)?;
    let file = fs::File::open(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    ExemplarModel::load(&mut BufReader::new(file)).map_err(|e| Failure {
        code: EXIT_INVALID_INPUT,
        message: format!("{}: {e}", path.display()),
    })
}

fn save_model(model: &ExemplarModel, path: &Path, command: &str, cfg: &RunConfig) -> Outcome {
    let prov: BTreeMap<String, String> = provenance(command, cfg).into_iter().collect();
    let mut buf = Vec::new();
    model.save_with_provenance(&mut buf, &prov)?;
    write_file(path, &buf)
}

fn save_records(path: &Path, header: &[String], records: &[RegionRecord]) -> Outcome {
    let mut buf = Vec::new();
    write_records(&mut buf, header, records)?;
    write_file(path, &buf)
}

fn augment_all(frames: &[AnnotatedFrame], cfg: &RunConfig) -> Vec<AnnotatedFrame> {
    let strategy = AugmentationStrategy::from_name(cfg.augmentation);
    frames
        .par_iter()
        .flat_map_iter(|f| apply_strategy(f, &strategy))
        .collect()
}

pub fn augment(dataset: &Path, output: &Path, args: &ConfigArgs) -> Outcome {
    let cfg = resolve_config(args)?;
    let frames = load_frames(dataset, DatasetKind::Still)?;
    let out = augment_all(&frames, &cfg);
    write_dataset(output, &out).map_err(|e| match e {
        Error::Io { path, source } => Failure::output(&path, source),
        Error::Image { path, source } => Failure::output(&path, source),
        other => other.into(),
    })?;
    let mut prov = header("augment", &cfg).join("\n");
    prov.push_str(&format!("\nstrategy {}\nframes_in {}\nframes_out {}\n", cfg.augmentation, frames.len(), out.len()));
    write_file(&output.join("provenance.txt"), prov.as_bytes())?;
    println!("augmented {} frames into {}", frames.len(), out.len());
    Ok(())
}

pub fn train(dataset: &Path, output: &Path, args: &ConfigArgs) -> Outcome {
    let cfg = resolve_config(args)?;
    let frames = load_frames(dataset, DatasetKind::Still)?;
    let training = augment_all(&frames, &cfg);
    let mut model = cfg.new_model();
    model.train_positive(&training, &cfg.sampling())?;
    save_model(&model, output, "train", &cfg)?;
    println!(
        "trained on {} frames: {} positive and {} negative exemplars",
        training.len(),
        model.positives().len(),
        model.negatives().len()
    );
    Ok(())
}

pub fn detect(model_path: &Path, dataset: &Path, output: &Path, timing: Option<&Path>, args: &ConfigArgs) -> Outcome {
    let cfg = resolve_config(args)?;
    let mut model = load_model(model_path)?;
    if let Some(t) = args.detect_threshold {
        model.detect_threshold = t;
    }
    let frames = load_frames(dataset, DatasetKind::Still)?;
    let per_frame: Vec<(Vec<RegionRecord>, f64)> = frames
        .par_iter()
        .map(|f| {
            let start = Instant::now();
            let dets = model.detect(f.pixels());
            let elapsed = start.elapsed().as_secs_f64();
            let records = dets
                .into_iter()
                .map(|d| RegionRecord {
                    frame_id: f.frame_id.clone(),
                    bbox: d.bbox,
                    score: d.score,
                })
                .collect();
            (records, elapsed)
        })
        .collect();
    let head = header("detect", &cfg);
    let records: Vec<RegionRecord> = per_frame.iter().flat_map(|(r, _)| r.iter().cloned()).collect();
    save_records(output, &head, &records)?;
    if let Some(path) = timing {
        let times: Vec<(String, f64)> = frames
            .iter()
            .zip(&per_frame)
            .map(|(f, (_, t))| (f.frame_id.clone(), *t))
            .collect();
        let mut buf = Vec::new();
        write_timings(&mut buf, &head, &times)?;
        write_file(path, &buf)?;
    }
    println!("{} detections on {} frames", records.len(), frames.len());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub dataset: &'a Path,
    pub detections: &'a Path,
    pub output: &'a Path,
    pub timing: Option<&'a Path>,
    pub video: bool,
    pub table: Option<&'a Path>,
    pub cfg: &'a ConfigArgs,
}

fn read_text_file<T>(what: &str, path: &Path, parse: impl FnOnce(&mut dyn std::io::BufRead) -> polypkit::Result<T>) -> Result<T, Failure> {
    require_file(what, path)?;
    let file = fs::File::open(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    parse(&mut BufReader::new(file)).map_err(|e| Failure {
        code: EXIT_INVALID_INPUT,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let cfg = resolve_config(a.cfg)?;
    let kind = if a.video { DatasetKind::Video } else { DatasetKind::Still };
    let frames = load_frames(a.dataset, kind)?;
    let records = read_text_file("detections", a.detections, |r| read_records(r))?;
    let timings = match a.timing {
        Some(p) => Some(read_text_file("timing", p, |r| read_timings(r))?),
        None => None,
    };

    let index: HashMap<&str, usize> = frames.iter().enumerate().map(|(i, f)| (f.frame_id.as_str(), i)).collect();
    let mut per_frame = vec![Vec::new(); frames.len()];
    for r in &records {
        let &i = index
            .get(r.frame_id.as_str())
            .ok_or_else(|| Failure::from(Error::UnknownFrame(r.frame_id.clone())))?;
        per_frame[i].push(polypkit::Detection {
            bbox: r.bbox,
            score: r.score,
        });
    }
    let times: HashMap<&str, f64> = timings
        .iter()
        .flatten()
        .map(|(id, t)| (id.as_str(), *t))
        .collect();
    let results: Vec<_> = frames
        .par_iter()
        .zip(&per_frame)
        .map(|(f, dets)| {
            let mut r = classify_frame(f.frame_id.clone(), dets, &f.masks(), &cfg.eval);
            r.processing_time = times.get(f.frame_id.as_str()).copied();
            r
        })
        .collect();
    let mut report = aggregate(&results)?;
    if a.video {
        let first = first_polyp_frame(&results).ok_or(Error::NotPositiveSequence)?;
        let v = video_metrics(&results, first, &cfg.eval)?;
        report = report.with_video(&summarize_videos(&[v], cfg.eval.fps)?);
    }
    let mut text = String::new();
    for h in header("eval", &cfg) {
        text.push_str(&format!("# {h}\n"));
    }
    text.push_str(&format_records(&report));
    write_file(a.output, text.as_bytes())?;
    let name = a
        .dataset
        .file_name()
        .map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    let table = format_table(&[(name, report)]);
    if let Some(path) = a.table {
        write_file(path, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

pub fn fp_learn(model_path: &Path, dataset: &Path, output: &Path, records_path: &Path, args: &ConfigArgs) -> Outcome {
    let cfg = resolve_config(args)?;
    let mut model = load_model(model_path)?;
    let frames = load_frames(dataset, DatasetKind::Still)?;
    let before = model.negatives().len();
    let records = post_learning::fp_learn(&mut model, &frames, &cfg.post_learn)?;
    save_model(&model, output, "fp-learn", &cfg)?;
    save_records(records_path, &header("fp-learn", &cfg), &records)?;
    println!(
        "collected {} false positives; negative exemplars {} -> {}",
        records.len(),
        before,
        model.negatives().len()
    );
    Ok(())
}

pub fn offline_learn(model_path: &Path, dataset: &Path, output: &Path, records_path: &Path, args: &ConfigArgs) -> Outcome {
    let cfg = resolve_config(args)?;
    let mut model = load_model(model_path)?;
    let frames = load_frames(dataset, DatasetKind::Video)?;
    let before = model.positives().len();
    let records = post_learning::offline_learn(&mut model, &frames, &cfg.post_learn, &cfg.sampling())?;
    save_model(&model, output, "offline-learn", &cfg)?;
    save_records(records_path, &header("offline-learn", &cfg), &records)?;
    println!(
        "collected {} reliable regions; positive exemplars {} -> {}",
        records.len(),
        before,
        model.positives().len()
    );
    Ok(())
}

pub fn report(output: &Path, records: Option<&Path>, fps: f64, inputs: &[std::path::PathBuf]) -> Outcome {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Failure::config(format!("fps must be positive, got {fps}")));
    }
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for path in inputs {
        require_file("report", path)?;
        let text = fs::read_to_string(path).map_err(|e| Failure::from(Error::Io {
            path: path.clone(),
            source: e,
        }))?;
        let r = parse_records(&text).map_err(|e| Failure {
            code: EXIT_INVALID_INPUT,
            message: format!("{}: {e}", path.display()),
        })?;
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((name, r));
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    let merged = merge_reports(&reports, fps)?;
    if let Some(path) = records {
        let mut text = format!("# toolkit polypkit {}\n# command report\n", env!("CARGO_PKG_VERSION"));
        text.push_str(&format_records(&merged));
        write_file(path, text.as_bytes())?;
    }
    rows.push(("all".into(), merged));
    let table = format_table(&rows);
    write_file(output, table.as_bytes())?;
    print!("{table}");
    Ok(())
}
