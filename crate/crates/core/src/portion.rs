//! Portion matching.
//!
//! An object is covered by small fixed-size windows ("portions") of the
//! feature map. Each portion is correlated against every candidate center
//! inside an extended box of each previous frame; per frame gap the best
//! scoring object is accepted when its correlation clears `gamma`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, FeatureVolume, LabelVolume, ObjectRecord};

/// Lower clamp applied to per-frame match probabilities before taking logs.
pub const SCORE_EPSILON: f64 = 1e-12;

/// Geometry and acceptance parameters of portion matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortionSpec {
    /// Portion half-extents; a portion spans `2r + 1` voxels per axis.
    pub r: [usize; 3],
    /// Lattice stride used to pick portion centers inside an object.
    pub stride: [usize; 3],
    /// Half-range of the extended search box around the portion center.
    pub r_ext: [usize; 3],
    /// Number of previous frames searched.
    pub max_lag: usize,
    /// Acceptance bound on the correlation of the per-lag winner.
    pub gamma: f64,
    /// Step between candidate centers inside the search box (1 = exhaustive).
    pub search_stride: [usize; 3],
}

impl Default for PortionSpec {
    fn default() -> Self {
        PortionSpec {
            r: [3, 3, 1],
            stride: [3, 3, 1],
            r_ext: [6, 6, 2],
            max_lag: 3,
            gamma: 0.5,
            search_stride: [1, 1, 1],
        }
    }
}

impl PortionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stride.contains(&0) || self.search_stride.contains(&0) {
            return Err(Error::Config("strides must be >= 1".into()));
        }
        if self.max_lag == 0 {
            return Err(Error::Config("max_lag must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [-1, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Identifies the query portion a [`MatchSet`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortionKey {
    pub object_id: u32,
    pub frame: usize,
    pub center: [usize; 3],
}

/// A feature window centered on one object voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Portion {
    pub object_id: u32,
    pub frame: usize,
    pub center: [usize; 3],
    /// Half-extents the window was cut with.
    pub r: [usize; 3],
    pub channels: usize,
    /// Window values in x-fastest, channel-slowest order.
    pub values: Vec<f64>,
}

impl Portion {
    /// Cuts the window around `center`, replicating edge voxels outside bounds.
    pub fn extract(
        feats: &FeatureVolume,
        object_id: u32,
        center: [usize; 3],
        r: [usize; 3],
    ) -> Portion {
        let mut values = Vec::new();
        read_window(feats, center, r, &mut values);
        Portion {
            object_id,
            frame: feats.frame(),
            center,
            r,
            channels: feats.channels(),
            values,
        }
    }

    pub fn key(&self) -> PortionKey {
        PortionKey {
            object_id: self.object_id,
            frame: self.frame,
            center: self.center,
        }
    }

    fn shape(&self) -> [usize; 4] {
        [2 * self.r[0] + 1, 2 * self.r[1] + 1, 2 * self.r[2] + 1, self.channels]
    }
}

/// Fills `out` with the window around `center`, edge-replicated.
pub(crate) fn read_window(feats: &FeatureVolume, center: [usize; 3], r: [usize; 3], out: &mut Vec<f64>) {
    let dims = feats.dims();
    let vals = feats.values();
    out.clear();
    let [cx, cy, cz] = center.map(|c| c as isize);
    let [rx, ry, rz] = r.map(|v| v as isize);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let x_inside = cx - rx >= 0 && cx + rx < dims.x as isize;
    for m in 0..dims.d {
        for dz in -rz..=rz {
            let z = clamp(cz + dz, dims.z);
            for dy in -ry..=ry {
                let y = clamp(cy + dy, dims.y);
                let row = dims.index_c(0, y, z, m);
                if x_inside {
                    let start = row + (cx - rx) as usize;
                    out.extend(vals[start..start + (2 * rx + 1) as usize].iter().map(|&v| v as f64));
                } else {
                    for dx in -rx..=rx {
                        out.push(vals[row + clamp(cx + dx, dims.x)] as f64);
                    }
                }
            }
        }
    }
}

/// Picks portion centers for one object.
///
/// Centers are the object's voxels on the stride lattice anchored at its
/// bounding-box minimum corner, in raster order. If the lattice misses the
/// object entirely, the object voxel nearest the centroid is used.
pub fn sample_portions(
    obj: &ObjectRecord,
    labels: &LabelVolume,
    feats: &FeatureVolume,
    spec: &PortionSpec,
) -> Result<Vec<Portion>> {
    if !labels.dims().same_grid(feats.dims()) {
        return Err(Error::Shape("labels and features cover different grids".into()));
    }
    let centers = portion_centers(obj, labels, spec.stride);
    Ok(centers
        .into_iter()
        .map(|c| Portion::extract(feats, obj.id, c, spec.r))
        .collect())
}

pub(crate) fn portion_centers(obj: &ObjectRecord, labels: &LabelVolume, stride: [usize; 3]) -> Vec<[usize; 3]> {
    let (lo, hi) = (obj.bbox_min, obj.bbox_max);
    let mut centers = Vec::new();
    for z in (lo[2]..=hi[2]).step_by(stride[2]) {
        for y in (lo[1]..=hi[1]).step_by(stride[1]) {
            for x in (lo[0]..=hi[0]).step_by(stride[0]) {
                if labels.get(x, y, z) == obj.id {
                    centers.push([x, y, z]);
                }
            }
        }
    }
    if centers.is_empty() {
        let mut best: Option<([usize; 3], f64)> = None;
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    if labels.get(x, y, z) != obj.id {
                        continue;
                    }
                    let d2: f64 = [x, y, z]
                        .iter()
                        .zip(obj.centroid)
                        .map(|(&p, c)| (p as f64 - c).powi(2))
                        .sum();
                    if best.is_none_or(|(_, b)| d2 < b) {
                        best = Some(([x, y, z], d2));
                    }
                }
            }
        }
        centers.extend(best.map(|(c, _)| c));
    }
    centers
}

/// Query window reduced to its centered values, reused across candidates.
pub(crate) struct Prepared {
    centered: Vec<f64>,
    ssq: f64,
    constant: bool,
}

impl Prepared {
    pub(crate) fn new(values: &[f64]) -> Prepared {
        let (mean, constant) = mean_and_constant(values);
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let ssq = centered.iter().map(|c| c * c).sum();
        Prepared {
            centered,
            ssq,
            constant,
        }
    }

    /// Pearson correlation against `other`; 0 when either side is constant.
    pub(crate) fn correlate(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(other.len(), self.centered.len());
        let (mean, constant) = mean_and_constant(other);
        if self.constant || constant {
            return 0.0;
        }
        let mut num = 0.0;
        let mut ssq = 0.0;
        for (q, v) in self.centered.iter().zip(other) {
            let c = v - mean;
            num += q * c;
            ssq += c * c;
        }
        (num / (self.ssq * ssq).sqrt()).clamp(-1.0, 1.0)
    }
}

fn mean_and_constant(values: &[f64]) -> (f64, bool) {
    let first = values.first().copied().unwrap_or(0.0);
    let mut sum = 0.0;
    let mut constant = true;
    for &v in values {
        sum += v;
        constant &= v == first;
    }
    (sum / values.len().max(1) as f64, constant)
}

/// Pearson correlation of two equally shaped portions, computed jointly over
/// all spatial positions and channels. A zero-variance window yields 0.
pub fn pearson(a: &Portion, b: &Portion) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "portion shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Prepared::new(&a.values).correlate(&b.values))
}

/// Correlation of the query against one candidate center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterScore {
    pub center: [usize; 3],
    pub object_id: u32,
    pub rho: f64,
}

fn check_query(q: &Portion, labels: &LabelVolume, feats: &FeatureVolume) -> Result<()> {
    if !labels.dims().same_grid(feats.dims()) {
        return Err(Error::Shape("labels and features cover different grids".into()));
    }
    if q.channels != feats.channels() {
        return Err(Error::Channels {
            expected: q.channels,
            found: feats.channels(),
        });
    }
    Ok(())
}

fn search_axis(center: usize, ext: usize, step: usize, n: usize) -> impl Iterator<Item = usize> {
    let k = (ext / step) as isize;
    (-k..=k)
        .map(move |i| center as isize + i * step as isize)
        .filter(move |&v| v >= 0 && v < n as isize)
        .map(|v| v as usize)
}

/// Scores every labelled candidate center in the search box, in raster order.
pub fn correlation_map(
    q: &Portion,
    past_labels: &LabelVolume,
    past_feats: &FeatureVolume,
    spec: &PortionSpec,
) -> Result<Vec<CenterScore>> {
    check_query(q, past_labels, past_feats)?;
    let prep = Prepared::new(&q.values);
    let dims: &Dims = past_labels.dims();
    let mut buf = Vec::with_capacity(q.values.len());
    let mut out = Vec::new();
    for z in search_axis(q.center[2], spec.r_ext[2], spec.search_stride[2], dims.z) {
        for y in search_axis(q.center[1], spec.r_ext[1], spec.search_stride[1], dims.y) {
            for x in search_axis(q.center[0], spec.r_ext[0], spec.search_stride[0], dims.x) {
                let label = past_labels.get(x, y, z);
                if label == 0 {
                    continue;
                }
                read_window(past_feats, [x, y, z], q.r, &mut buf);
                out.push(CenterScore {
                    center: [x, y, z],
                    object_id: label,
                    rho: prep.correlate(&buf),
                });
            }
        }
    }
    Ok(out)
}

/// Best correlation of the query with one object of a previous frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub object_id: u32,
    pub lag: usize,
    pub rho: f64,
    pub center: [usize; 3],
}

/// Extended search of `q` in one previous frame: one candidate per object
/// whose mask intersects the search box, carrying its best center.
pub fn extended_search(
    q: &Portion,
    past_labels: &LabelVolume,
    past_feats: &FeatureVolume,
    spec: &PortionSpec,
) -> Result<Vec<CandidateMatch>> {
    let lag = q.frame.saturating_sub(past_labels.frame());
    let mut best: BTreeMap<u32, CandidateMatch> = BTreeMap::new();
    for s in correlation_map(q, past_labels, past_feats, spec)? {
        best.entry(s.object_id)
            .and_modify(|c| {
                // strict: the first center in raster order wins ties
                if s.rho > c.rho {
                    c.rho = s.rho;
                    c.center = s.center;
                }
            })
            .or_insert(CandidateMatch {
                object_id: s.object_id,
                lag,
                rho: s.rho,
                center: s.center,
            });
    }
    Ok(best.into_values().collect())
}

/// An accepted per-lag winner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub object_id: u32,
    pub lag: usize,
    pub rho: f64,
}

/// Match result for one query portion over all searched lags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub query: PortionKey,
    /// Per-lag winners with `rho >= gamma`, ordered by lag.
    pub accepted: Vec<Accepted>,
    /// Every scored candidate, ordered by (lag, object id).
    pub all_candidates: Vec<CandidateMatch>,
}

impl MatchSet {
    pub fn accepted_ids(&self) -> Vec<(u32, usize)> {
        self.accepted.iter().map(|a| (a.object_id, a.lag)).collect()
    }
}

/// Selects, for every lag, the highest-correlation candidate and accepts it
/// when its correlation is at least `gamma`. Equal correlations resolve to
/// the smaller object id.
pub fn best_match(query: PortionKey, mut candidates: Vec<CandidateMatch>, gamma: f64) -> MatchSet {
    candidates.sort_by(|a, b| a.lag.cmp(&b.lag).then(a.object_id.cmp(&b.object_id)));
    let mut accepted = Vec::new();
    let mut i = 0;
    while i < candidates.len() {
        let lag = candidates[i].lag;
        let mut win = candidates[i];
        let mut j = i + 1;
        while j < candidates.len() && candidates[j].lag == lag {
            // ordered by id within the lag, so only a strictly larger rho wins
            if candidates[j].rho > win.rho {
                win = candidates[j];
            }
            j += 1;
        }
        if win.rho >= gamma {
            accepted.push(Accepted {
                object_id: win.object_id,
                lag,
                rho: win.rho,
            });
        }
        i = j;
    }
    MatchSet {
        query,
        accepted,
        all_candidates: candidates,
    }
}

/// Probability surrogate for a portion correlation: negative evidence maps to 0.
pub fn match_probability(rho: f64) -> f64 {
    rho.max(0.0)
}

/// Match evidence of one frame of a track: for each portion of the object,
/// the `(lag, rho)` pairs linking it to the track's predecessor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameEvidence {
    pub portions: Vec<Vec<(usize, f64)>>,
}

impl FrameEvidence {
    /// Collects accepted matches whose `(object, lag)` belongs to the lineage.
    pub fn from_match_sets(sets: &[MatchSet], mut on_track: impl FnMut(u32, usize) -> bool) -> Self {
        FrameEvidence {
            portions: sets
                .iter()
                .map(|s| {
                    s.accepted
                        .iter()
                        .filter(|a| on_track(a.object_id, a.lag))
                        .map(|a| (a.lag, a.rho))
                        .collect()
                })
                .collect(),
        }
    }

    /// `max_n clamp(sum_lag max_n' p(rho), eps, max_lag)`, or `eps` without evidence.
    pub fn value(&self, max_lag: usize) -> f64 {
        let mut best = SCORE_EPSILON;
        for portion in &self.portions {
            let mut per_lag: BTreeMap<usize, f64> = BTreeMap::new();
            for &(lag, rho) in portion {
                let p = match_probability(rho);
                let e = per_lag.entry(lag).or_insert(0.0);
                *e = e.max(p);
            }
            let inner: f64 = per_lag.values().sum();
            best = best.max(inner.clamp(SCORE_EPSILON, max_lag as f64));
        }
        best
    }
}

/// Log-probability of one consistent track: the sum over frames of the log
/// of each frame's best portion evidence.
pub fn track_score(frames: &[FrameEvidence], max_lag: usize) -> f64 {
    frames.iter().map(|f| f.value(max_lag).ln()).sum()
}
