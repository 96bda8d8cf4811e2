//! Multi-object portion tracking for 4D volumetric time-lapse data.

pub mod baselines;
pub mod dataset;
pub mod dfmt;
pub mod error;
pub mod eval;
pub mod events;
pub mod features;
pub mod portion;
pub mod runner;
pub mod synth;
pub mod volume;

pub use baselines::{iou_track, link_track, nn_track, BaselineConfig};
pub use dataset::DatasetDir;
pub use dfmt::{track_dfmt, DfmtTracker};
pub use error::{Error, Result};
pub use eval::{evaluate, metrics, Confusion, EvalReport, GroundTruth, Metrics};
pub use events::{EventKind, EventRecord, TrackGraph, TrackId};
pub use features::{derive_features, FeatureConfig, FeatureMode};
pub use portion::{
    best_match, extended_search, match_probability, pearson, sample_portions, track_score, CandidateMatch,
    MatchSet, Portion, PortionSpec,
};
pub use runner::{run_method, Method, TrackerConfig};
pub use synth::{default_benchmark, render, SceneScript, SynthDataset};
pub use volume::{
    connected_components, extract_objects, Connectivity, Dims, FeatureVolume, IntensityVolume, LabelVolume,
    ObjectRecord,
};
