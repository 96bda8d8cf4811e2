//! On-disk layout of a time-lapse dataset directory.
//!
//! ```text
//! frame_0001.int.v4d   intensity
//! frame_0001.lab.v4d   segmentation labels
//! frame_0001.feat.v4d  derived features (optional)
//! gt.json              ground truth (optional)
//! script.json          generating scene script (synthetic data only)
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::synth::SynthDataset;
use crate::volume::{load_features, load_intensity, load_labels, FeatureVolume, IntensityVolume, LabelVolume};

pub const GT_FILE: &str = "gt.json";
pub const SCRIPT_FILE: &str = "script.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFile {
    Intensity,
    Labels,
    Features,
}

impl FrameFile {
    fn suffix(self) -> &'static str {
        match self {
            FrameFile::Intensity => "int",
            FrameFile::Labels => "lab",
            FrameFile::Features => "feat",
        }
    }
}

pub fn frame_path(dir: &Path, t: usize, kind: FrameFile) -> PathBuf {
    dir.join(format!("frame_{t:04}.{}.v4d", kind.suffix()))
}

fn parse_name(name: &str) -> Option<(usize, FrameFile)> {
    let rest = name.strip_prefix("frame_")?.strip_suffix(".v4d")?;
    let (num, kind) = rest.split_once('.')?;
    let kind = match kind {
        "int" => FrameFile::Intensity,
        "lab" => FrameFile::Labels,
        "feat" => FrameFile::Features,
        _ => return None,
    };
    Some((num.parse().ok()?, kind))
}

/// A dataset directory. Volumes are loaded on demand.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub root: PathBuf,
    frames: Vec<usize>,
}

impl DatasetDir {
    /// Indexes the frames present in `root`. Frames are the ones with a
    /// label file, or else with an intensity file; they must be 1..=T.
    pub fn open(root: impl AsRef<Path>) -> Result<DatasetDir> {
        let root = root.as_ref().to_path_buf();
        let mut labels = BTreeSet::new();
        let mut intensity = BTreeSet::new();
        let entries = std::fs::read_dir(&root)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", root.display())))?;
        for entry in entries {
            let name = entry?.file_name();
            match name.to_str().and_then(parse_name) {
                Some((t, FrameFile::Labels)) => {
                    labels.insert(t);
                }
                Some((t, FrameFile::Intensity)) => {
                    intensity.insert(t);
                }
                _ => {}
            }
        }
        let set = if labels.is_empty() { intensity } else { labels };
        if set.is_empty() {
            return Err(Error::Inconsistent(format!("{} holds no frame files", root.display())));
        }
        let frames: Vec<usize> = set.into_iter().collect();
        if frames.iter().enumerate().any(|(i, &t)| t != i + 1) {
            return Err(Error::Inconsistent(format!(
                "{}: frames must be numbered 1..=T without gaps",
                root.display()
            )));
        }
        Ok(DatasetDir { root, frames })
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn path(&self, t: usize, kind: FrameFile) -> PathBuf {
        frame_path(&self.root, t, kind)
    }

    fn check_frame(&self, t: usize, found: usize, what: &str) -> Result<()> {
        if found != t {
            return Err(Error::Inconsistent(format!("{what} file for frame {t} is stamped frame {found}")));
        }
        Ok(())
    }

    pub fn labels(&self, t: usize) -> Result<LabelVolume> {
        let v = load_labels(self.path(t, FrameFile::Labels))?;
        self.check_frame(t, v.frame(), "label")?;
        Ok(v)
    }

    pub fn intensity(&self, t: usize) -> Result<IntensityVolume> {
        let v = load_intensity(self.path(t, FrameFile::Intensity))?;
        self.check_frame(t, v.frame(), "intensity")?;
        Ok(v)
    }

    pub fn features(&self, t: usize) -> Result<FeatureVolume> {
        let v = load_features(self.path(t, FrameFile::Features))?;
        self.check_frame(t, v.frame(), "feature")?;
        Ok(v)
    }

    pub fn has_features(&self) -> bool {
        self.frames.iter().all(|&t| self.path(t, FrameFile::Features).exists())
    }

    pub fn ground_truth(&self) -> Result<Option<GroundTruth>> {
        let p = self.root.join(GT_FILE);
        if p.exists() {
            GroundTruth::read_json(p).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Renders every frame of `data` into `dir` with its ground truth and script.
pub fn write_synth(data: &SynthDataset, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in 1..=data.frames() {
        let (img, labels) = data.frame(t)?;
        let pi = frame_path(dir, t, FrameFile::Intensity);
        let pl = frame_path(dir, t, FrameFile::Labels);
        img.write(&pi)?;
        labels.write(&pl)?;
        written.push(pi);
        written.push(pl);
    }
    let gt = dir.join(GT_FILE);
    data.gt.write_json(&gt)?;
    let script = dir.join(SCRIPT_FILE);
    std::fs::write(&script, data.script.to_json()?)?;
    written.push(gt);
    written.push(script);
    Ok(written)
}
