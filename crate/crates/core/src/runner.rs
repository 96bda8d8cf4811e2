//! Runs any tracking method over a frame source.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{iou_track, link_track, nn_track, BaselineConfig};
use crate::dataset::DatasetDir;
use crate::dfmt::{DfmtTracker, FrameReport};
use crate::error::{Error, Result};
use crate::events::TrackGraph;
use crate::features::{derive_features, ChannelGuard, FeatureConfig, FeatureMode};
use crate::portion::PortionSpec;
use crate::synth::SynthDataset;
use crate::volume::{FeatureVolume, IntensityVolume, LabelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dfmt,
    Iou,
    Link,
    Nn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dfmt, Method::Iou, Method::Link, Method::Nn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dfmt => "dfmt",
            Method::Iou => "iou",
            Method::Link => "link",
            Method::Nn => "nn",
        }
    }

    /// Horizon used when checking graph invariants.
    pub fn max_lag(self, cfg: &TrackerConfig) -> usize {
        match self {
            Method::Dfmt => cfg.portion.max_lag,
            _ => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected dfmt, iou, link or nn")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub portion: PortionSpec,
    pub features: FeatureConfig,
    pub baseline: BaselineConfig,
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.portion.validate()?;
        self.features.validate()?;
        self.baseline.validate()
    }
}

/// Anything that yields labelled frames 1..=T on demand.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn labels(&self, t: usize) -> Result<LabelVolume>;
    fn intensity(&self, t: usize) -> Result<IntensityVolume>;
    /// Precomputed features, if the source carries them.
    fn stored_features(&self, _t: usize) -> Option<Result<FeatureVolume>> {
        None
    }
}

impl FrameSource for SynthDataset {
    fn frame_count(&self) -> usize {
        self.frames()
    }

    fn labels(&self, t: usize) -> Result<LabelVolume> {
        SynthDataset::labels(self, t)
    }

    fn intensity(&self, t: usize) -> Result<IntensityVolume> {
        self.script.render_intensity(t, self.seed)
    }
}

impl FrameSource for DatasetDir {
    fn frame_count(&self) -> usize {
        self.frames().len()
    }

    fn labels(&self, t: usize) -> Result<LabelVolume> {
        DatasetDir::labels(self, t)
    }

    fn intensity(&self, t: usize) -> Result<IntensityVolume> {
        DatasetDir::intensity(self, t)
    }

    fn stored_features(&self, t: usize) -> Option<Result<FeatureVolume>> {
        self.path(t, crate::dataset::FrameFile::Features)
            .exists()
            .then(|| self.features(t))
    }
}

/// Features of frame `t` under `cfg`: stored ones in external mode, derived
/// from intensity otherwise.
pub fn frame_features<S: FrameSource + ?Sized>(src: &S, t: usize, cfg: &FeatureConfig) -> Result<FeatureVolume> {
    match cfg.mode {
        FeatureMode::External => src
            .stored_features(t)
            .unwrap_or_else(|| Err(Error::Inconsistent(format!("no stored features for frame {t}")))),
        FeatureMode::Derived => derive_features(&src.intensity(t)?, cfg),
    }
}

/// Runs `method` over all frames of `src`. `on_frame` sees every DFMT frame
/// report with the time spent producing that frame's features; baselines
/// report nothing.
pub fn run_method<S: FrameSource + ?Sized>(
    method: Method,
    src: &S,
    cfg: &TrackerConfig,
    mut on_frame: impl FnMut(&FrameReport, f64),
) -> Result<TrackGraph> {
    cfg.validate()?;
    let n = src.frame_count();
    let labels = (1..=n).map(|t| src.labels(t));
    match method {
        Method::Iou => iou_track(labels, &cfg.baseline),
        Method::Link => link_track(labels, &cfg.baseline),
        Method::Nn => nn_track(labels, &cfg.baseline),
        Method::Dfmt => {
            let expected = (cfg.features.channels != 0).then_some(cfg.features.channels);
            let mut guard = ChannelGuard::new(expected);
            let mut tracker = DfmtTracker::new(cfg.portion.clone())?;
            for t in 1..=n {
                let start = Instant::now();
                let feats = frame_features(src, t, &cfg.features)?;
                let features_ms = start.elapsed().as_secs_f64() * 1e3;
                guard.check(&feats)?;
                let report = tracker.push(src.labels(t)?, feats)?;
                on_frame(&report, features_ms);
            }
            Ok(tracker.finish())
        }
    }
}
