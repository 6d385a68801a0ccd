//! Region-based polyp detection toolkit.

pub mod augmentation;
pub mod config;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod post_learning;
pub mod proposal;
pub mod raster;
pub mod records;

pub use augmentation::{AnnotatedFrame, Annotation, AugmentationStrategy, StrategyName};
pub use config::RunConfig;
pub use dataset::{load_dataset, DatasetKind, DatasetManifest, FrameEntry};
pub use detector::{Detection, DetectorModel, ExemplarModel, Feature, TrainingRegion};
pub use error::{Error, Result};
pub use evaluation::{Counts, EvalConfig, FrameResult, MetricReport, Metrics};
pub use geometry::{BinaryMask, BoundingBox, BoxDelta, FlipAxis, Point};
pub use post_learning::{FPRecord, RegionRecord, PostLearnConfig, RegionTransform};
pub use proposal::{AnchorConfig, AnchorLabel, Mode, ProposalConfig, RoiConfig, SamplingConfig};
pub use raster::{Plane, RgbImage};
