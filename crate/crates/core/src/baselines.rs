//! Reference trackers: overlap (IOU), expand-linking and nearest neighbour.
//!
//! All of them link consecutive frames only and feed their links through the
//! same [`TrackRegistry`] as the portion tracker, so identity and event
//! bookkeeping is shared.

use std::collections::{BTreeMap, BTreeSet};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{FrameObject, TrackGraph, TrackRegistry};
use crate::volume::{extract_objects, Dims, LabelVolume, ObjectRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Links need an IOU strictly above this value.
    pub sigma_iou: f64,
    /// In-plane dilation radius used by expand-linking.
    pub expand_voxels: usize,
    /// A merge needs `size(child) >= merge_ratio * mean(size(sources))`.
    pub merge_ratio: f64,
    /// Nearest-neighbour cutoff in physical units.
    pub nn_max_dist: f64,
    /// Use optimal bipartite assignment instead of greedy IOU linking.
    pub optimal: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            sigma_iou: 0.0,
            expand_voxels: 10,
            merge_ratio: 1.5,
            nn_max_dist: 10.0,
            optimal: false,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma_iou) {
            return Err(Error::Config(format!("sigma_iou {} outside [0, 1)", self.sigma_iou)));
        }
        if self.merge_ratio <= 0.0 || !self.merge_ratio.is_finite() {
            return Err(Error::Config("merge_ratio must be positive".into()));
        }
        if self.nn_max_dist < 0.0 || self.nn_max_dist.is_nan() {
            return Err(Error::Config("nn_max_dist must be non-negative".into()));
        }
        Ok(())
    }
}

/// Intersection over union of two sorted voxel index lists.
pub fn iou(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyObject);
    }
    let inter = sorted_intersection(a, b);
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

struct Frame {
    labels: LabelVolume,
    objects: Vec<ObjectRecord>,
    voxels: BTreeMap<u32, Vec<usize>>,
}

impl Frame {
    fn new(labels: LabelVolume) -> Frame {
        Frame {
            objects: extract_objects(&labels),
            voxels: labels.voxel_lists(),
            labels,
        }
    }

    fn size(&self, label: u32) -> usize {
        self.voxels[&label].len()
    }
}

/// Voxel overlaps between consecutive frames, keyed by (past, current).
fn overlaps(past: &Frame, cur: &Frame) -> BTreeMap<(u32, u32), usize> {
    let mut out = BTreeMap::new();
    for (&c, vox) in &cur.voxels {
        for &i in vox {
            let p = past.labels.labels()[i];
            if p != 0 {
                *out.entry((p, c)).or_insert(0) += 1;
            }
        }
    }
    out
}

type Linker<'a> = dyn FnMut(&Frame, &Frame) -> Vec<(u32, u32)> + 'a;

fn run<I>(method: &str, frames: I, link: &mut Linker<'_>) -> Result<TrackGraph>
where
    I: IntoIterator<Item = Result<LabelVolume>>,
{
    let mut reg = TrackRegistry::new(method, 1);
    let mut prev: Option<Frame> = None;
    for labels in frames {
        let cur = Frame::new(labels?);
        let frame = cur.labels.frame();
        if let Some(p) = &prev {
            if !p.labels.dims().same_grid(cur.labels.dims()) {
                return Err(Error::Inconsistent(format!("frame {frame}: grid differs from earlier frames")));
            }
        }
        let links = match &prev {
            Some(p) => link(p, &cur),
            None => vec![],
        };
        let mut unions: BTreeMap<u32, BTreeSet<(crate::events::TrackId, usize)>> = BTreeMap::new();
        for (p, c) in links {
            let id = reg
                .open_track_at(frame - 1, p)
                .ok_or_else(|| Error::Inconsistent(format!("no open track for label {p} at frame {}", frame - 1)))?;
            unions.entry(c).or_default().insert((id, 1));
        }
        let objects: Vec<FrameObject> = cur
            .objects
            .iter()
            .map(|o| FrameObject {
                label: o.id,
                voxels: o.voxel_count,
                union: unions.remove(&o.id).unwrap_or_default().into_iter().collect(),
            })
            .collect();
        reg.step(frame, &objects)?;
        prev = Some(cur);
    }
    Ok(reg.finish())
}

/// One-to-one overlap linking between consecutive frames.
pub fn iou_track<I>(frames: I, cfg: &BaselineConfig) -> Result<TrackGraph>
where
    I: IntoIterator<Item = Result<LabelVolume>>,
{
    cfg.validate()?;
    let cfg = cfg.clone();
    run("iou", frames, &mut |p, c| iou_links(p, c, &cfg))
}

fn iou_links(past: &Frame, cur: &Frame, cfg: &BaselineConfig) -> Vec<(u32, u32)> {
    let mut pairs: Vec<(f64, u32, u32)> = overlaps(past, cur)
        .into_iter()
        .map(|((p, c), ov)| {
            let u = past.size(p) + cur.size(c) - ov;
            (ov as f64 / u as f64, p, c)
        })
        .filter(|&(v, _, _)| v > cfg.sigma_iou)
        .collect();
    if cfg.optimal {
        return optimal_links(&pairs);
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_c) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (_, p, c) in pairs {
        if !used_p.contains(&p) && !used_c.contains(&c) {
            used_p.insert(p);
            used_c.insert(c);
            out.push((p, c));
        }
    }
    out
}

/// Maximum-total-IOU assignment over the admissible pairs.
fn optimal_links(pairs: &[(f64, u32, u32)]) -> Vec<(u32, u32)> {
    let ps: Vec<u32> = pairs.iter().map(|x| x.1).collect::<BTreeSet<_>>().into_iter().collect();
    let cs: Vec<u32> = pairs.iter().map(|x| x.2).collect::<BTreeSet<_>>().into_iter().collect();
    if ps.is_empty() {
        return vec![];
    }
    let (rows, cols, transposed) = if ps.len() <= cs.len() { (&ps, &cs, false) } else { (&cs, &ps, true) };
    let mut w = Matrix::new(rows.len(), cols.len(), 0i64);
    for &(v, p, c) in pairs {
        let (r, k) = if transposed { (c, p) } else { (p, c) };
        let ri = rows.binary_search(&r).unwrap();
        let ki = cols.binary_search(&k).unwrap();
        w[(ri, ki)] = (v * 1e9).round() as i64;
    }
    let (_, assign) = kuhn_munkres(&w);
    let mut out = Vec::new();
    for (ri, &ki) in assign.iter().enumerate() {
        if w[(ri, ki)] > 0 {
            let (r, k) = (rows[ri], cols[ki]);
            out.push(if transposed { (k, r) } else { (r, k) });
        }
    }
    out.sort();
    out
}

/// Expand-linking: direct overlaps first; a current object without any
/// overlap is linked to the past object whose dilated mask covers most of
/// it. Fan-out is a split; fan-in is a merge only when the child passes the
/// size test, otherwise only the largest-overlap source is kept.
pub fn link_track<I>(frames: I, cfg: &BaselineConfig) -> Result<TrackGraph>
where
    I: IntoIterator<Item = Result<LabelVolume>>,
{
    cfg.validate()?;
    let cfg = cfg.clone();
    run("link", frames, &mut |p, c| expand_links(p, c, &cfg))
}

fn expand_links(past: &Frame, cur: &Frame, cfg: &BaselineConfig) -> Vec<(u32, u32)> {
    let dims = *cur.labels.dims();
    // (past, current) -> covered voxel count
    let mut links: BTreeMap<(u32, u32), usize> = overlaps(past, cur)
        .into_iter()
        .filter(|&((p, c), ov)| {
            let u = past.size(p) + cur.size(c) - ov;
            ov as f64 / u as f64 > cfg.sigma_iou
        })
        .collect();
    let linked: BTreeSet<u32> = links.keys().map(|&(_, c)| c).collect();
    let reach = reach(&dims, cfg.expand_voxels);
    for c in &cur.objects {
        if linked.contains(&c.id) {
            continue;
        }
        let best = past
            .objects
            .iter()
            .filter(|p| boxes_within(p, c, reach))
            .filter_map(|p| {
                let covered = covered_count(&dims, &past.voxels[&p.id], &cur.voxels[&c.id], reach);
                (covered > 0).then(|| (covered, centroid_dist(&dims, p, c), p.id))
            })
            .min_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        if let Some((covered, _, p)) = best {
            links.insert((p, c.id), covered);
        }
    }
    let mut sources: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for (&(p, c), &ov) in &links {
        sources.entry(c).or_default().push((p, ov));
    }
    let mut out = Vec::new();
    for (c, src) in sources {
        if src.len() >= 2 {
            let mean = src.iter().map(|&(p, _)| past.size(p)).sum::<usize>() as f64 / src.len() as f64;
            if cur.size(c) as f64 >= cfg.merge_ratio * mean {
                out.extend(src.iter().map(|&(p, _)| (p, c)));
            } else {
                let (p, _) = src.iter().copied().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap();
                out.push((p, c));
            }
        } else {
            out.push((src[0].0, c));
        }
    }
    out
}

/// Dilation half-widths: `e` in-plane, scaled by the spacing ratio along z.
fn reach(dims: &Dims, e: usize) -> [usize; 3] {
    let [sx, _, sz] = dims.spacing;
    let ez = if sz > 0.0 { (e as f64 * sx / sz).round() as usize } else { e };
    [e, e, ez]
}

fn boxes_within(p: &ObjectRecord, c: &ObjectRecord, reach: [usize; 3]) -> bool {
    (0..3).all(|k| {
        p.bbox_min[k] <= c.bbox_max[k] + reach[k] && c.bbox_min[k] <= p.bbox_max[k] + reach[k]
    })
}

/// Voxels of `cur` within the dilated footprint of `past`.
fn covered_count(dims: &Dims, past: &[usize], cur: &[usize], reach: [usize; 3]) -> usize {
    let pc: Vec<[usize; 3]> = past.iter().map(|&i| dims.coords(i)).collect();
    cur.iter()
        .filter(|&&i| {
            let v = dims.coords(i);
            pc.iter().any(|q| (0..3).all(|k| v[k].abs_diff(q[k]) <= reach[k]))
        })
        .count()
}

fn centroid_dist(dims: &Dims, a: &ObjectRecord, b: &ObjectRecord) -> f64 {
    (0..3)
        .map(|k| ((a.centroid[k] - b.centroid[k]) * dims.spacing[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mutual nearest-centroid linking with a distance cutoff.
pub fn nn_track<I>(frames: I, cfg: &BaselineConfig) -> Result<TrackGraph>
where
    I: IntoIterator<Item = Result<LabelVolume>>,
{
    cfg.validate()?;
    let max = cfg.nn_max_dist;
    run("nn", frames, &mut |p, c| nn_links(p, c, max))
}

fn nn_links(past: &Frame, cur: &Frame, max_dist: f64) -> Vec<(u32, u32)> {
    let dims = cur.labels.dims();
    let nearest = |from: &ObjectRecord, to: &[ObjectRecord]| {
        to.iter()
            .map(|o| (centroid_dist(dims, from, o), o.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    };
    let mut out = Vec::new();
    for c in &cur.objects {
        let Some((d, p)) = nearest(c, &past.objects) else {
            continue;
        };
        let po = past.objects.iter().find(|o| o.id == p).unwrap();
        if d <= max_dist && nearest(po, &cur.objects).map(|x| x.1) == Some(c.id) {
            out.push((p, c.id));
        }
    }
    out
}
