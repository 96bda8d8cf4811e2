//! Per-frame feature maps: ingested from an external network, or derived
//! from intensity by a small multi-scale filter bank.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{load_features, Dims, IntensityVolume};

pub use crate::volume::FeatureVolume;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    External,
    #[default]
    Derived,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    /// Expected channel count; 0 means "whatever the mode produces".
    pub channels: usize,
    /// Gaussian sigmas in voxels along x.
    pub smoothing_scales: Vec<f64>,
    pub include_gradient: bool,
    /// Divide each sigma by the axis spacing ratio so smoothing is isotropic
    /// in physical units.
    pub spacing_aware: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mode: FeatureMode::Derived,
            channels: 0,
            smoothing_scales: vec![1.0, 2.0],
            include_gradient: true,
            spacing_aware: false,
        }
    }
}

impl FeatureConfig {
    /// Channel count of the derived stack.
    pub fn derived_channels(&self) -> usize {
        1 + self.smoothing_scales.len() + usize::from(self.include_gradient)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == FeatureMode::Derived {
            if let Some(s) = self
                .smoothing_scales
                .iter()
                .find(|s| !(s.is_finite() && **s > 0.0))
            {
                return Err(Error::Config(format!("smoothing sigma must be > 0, got {s}")));
            }
            if self.channels != 0 && self.channels != self.derived_channels() {
                return Err(Error::Config(format!(
                    "derived stack has {} channels but config declares {}",
                    self.derived_channels(),
                    self.channels
                )));
            }
        }
        Ok(())
    }
}

/// Normalized discrete Gaussian taps for offsets `-R..=R`, `R = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Convolves `src` along `axis` with an odd-length kernel, replicating edges.
fn convolve_axis(dims: &Dims, src: &[f64], kernel: &[f64], axis: usize) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let (n, step) = match axis {
        0 => (dims.x, 1),
        1 => (dims.y, dims.x),
        _ => (dims.z, dims.x * dims.y),
    };
    let mut out = vec![0.0; src.len()];
    let mut line = vec![0.0; n];
    for base in 0..src.len() {
        // visit each line once, starting from its first element
        let pos = (base / step) % n;
        if pos != 0 {
            continue;
        }
        for (i, l) in line.iter_mut().enumerate() {
            *l = src[base + i * step];
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (i as isize + k as isize - radius).clamp(0, n as isize - 1) as usize;
                acc += w * line[j];
            }
            out[base + i * step] = acc;
        }
    }
    out
}

/// Separable Gaussian smoothing with per-axis sigma; a sigma that rounds to a
/// zero-radius kernel leaves that axis untouched.
pub fn gaussian_smooth(dims: &Dims, src: &[f64], sigma: [f64; 3]) -> Vec<f64> {
    let mut buf = src.to_vec();
    for (axis, s) in sigma.iter().enumerate() {
        if *s <= 0.0 {
            continue;
        }
        let k = gaussian_kernel(*s);
        if k.len() > 1 {
            buf = convolve_axis(dims, &buf, &k, axis);
        }
    }
    buf
}

/// Central-difference gradient magnitude with replicated borders.
pub fn gradient_magnitude(dims: &Dims, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    let ext = dims.extent();
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let p = [x, y, z];
                let mut sq = 0.0;
                for axis in 0..3 {
                    let mut lo = p;
                    let mut hi = p;
                    lo[axis] = p[axis].saturating_sub(1);
                    hi[axis] = (p[axis] + 1).min(ext[axis] - 1);
                    let g = 0.5
                        * (src[dims.index(hi[0], hi[1], hi[2])]
                            - src[dims.index(lo[0], lo[1], lo[2])]);
                    sq += g * g;
                }
                out[dims.index(x, y, z)] = sq.sqrt();
            }
        }
    }
    out
}

/// Builds the derived stack: raw intensity, one smoothing per configured
/// sigma, then (optionally) gradient magnitude.
pub fn derive_features(img: &IntensityVolume, cfg: &FeatureConfig) -> Result<FeatureVolume> {
    if cfg.mode != FeatureMode::Derived {
        return Err(Error::Config("derive_features requires mode = derived".into()));
    }
    cfg.validate()?;
    let dims = *img.dims();
    let raw: Vec<f64> = img.values().iter().map(|&v| v as f64).collect();
    let channels = cfg.derived_channels();
    let mut values: Vec<f32> = Vec::with_capacity(dims.voxels() * channels);
    values.extend(img.values());
    for &s in &cfg.smoothing_scales {
        let sigma = if cfg.spacing_aware {
            let sx = dims.spacing[0];
            [s, s * sx / dims.spacing[1], s * sx / dims.spacing[2]]
        } else {
            [s; 3]
        };
        values.extend(gaussian_smooth(&dims, &raw, sigma).iter().map(|&v| v as f32));
    }
    if cfg.include_gradient {
        values.extend(gradient_magnitude(&dims, &raw).iter().map(|&v| v as f32));
    }
    FeatureVolume::new(dims.with_channels(channels), values, img.frame())
}

/// Enforces a single channel count across the frames of one dataset.
#[derive(Clone, Debug, Default)]
pub struct ChannelGuard {
    channels: Option<usize>,
}

impl ChannelGuard {
    pub fn new(expected: Option<usize>) -> Self {
        ChannelGuard { channels: expected }
    }

    pub fn check(&mut self, feats: &FeatureVolume) -> Result<()> {
        match self.channels {
            None => {
                self.channels = Some(feats.channels());
                Ok(())
            }
            Some(d) if d == feats.channels() => Ok(()),
            Some(d) => Err(Error::Channels {
                expected: d,
                found: feats.channels(),
            }),
        }
    }

    pub fn channels(&self) -> Option<usize> {
        self.channels
    }
}

/// Loads an externally produced feature map, checking it against the
/// dataset's channel count.
pub fn ingest_features(path: impl AsRef<Path>, guard: &mut ChannelGuard) -> Result<FeatureVolume> {
    let f = load_features(path)?;
    guard.check(&f)?;
    Ok(f)
}
