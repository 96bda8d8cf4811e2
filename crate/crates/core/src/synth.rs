//! Deterministic synthetic time-lapse scenes with ground-truth lineage.
//!
//! Objects are unions of textured ellipsoidal lobes. A voxel belongs to the
//! object whose lobe has the largest envelope there, provided it lies inside
//! that lobe's ellipsoid. Splits and merges are scripted by ending parent
//! objects and starting child objects whose lobes continue the parents'
//! lobes (same trajectories and texture seeds).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Assignment, GroundTruth, GtEvent};
use crate::events::EventKind;
use crate::volume::{Dims, IntensityVolume, LabelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
}

fn unit_spacing() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl SceneDims {
    pub fn dims(&self) -> Result<Dims> {
        Ok(Dims::new(self.x, self.y, self.z, 1)?.with_spacing(self.spacing))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of additive Gaussian noise (peak amplitude is ~1).
    pub sigma: f64,
    /// Per-frame multiplicative photobleaching factor.
    pub bleach: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { sigma: 0.0, bleach: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureSpec {
    /// Relative modulation depth of the value-noise texture.
    pub contrast: f64,
    /// Lattice spacing of the texture in voxels.
    pub cell: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec { contrast: 0.6, cell: 2.0 }
    }
}

/// One ellipsoidal lobe. `path` and `radii_path` hold `[t, a, b, c]`
/// keyframes, linearly interpolated and held constant outside their range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LobeSpec {
    pub path: Vec<[f64; 4]>,
    pub radii: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii_path: Vec<[f64; 4]>,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub texture_seed: u64,
}

fn one() -> f64 {
    1.0
}

fn interpolate(keys: &[[f64; 4]], t: f64) -> [f64; 3] {
    let first = keys[0];
    let last = keys[keys.len() - 1];
    if t <= first[0] {
        return [first[1], first[2], first[3]];
    }
    if t >= last[0] {
        return [last[1], last[2], last[3]];
    }
    let i = keys.partition_point(|k| k[0] <= t);
    let (a, b) = (keys[i - 1], keys[i]);
    let w = (t - a[0]) / (b[0] - a[0]);
    [0, 1, 2].map(|k| a[k + 1] + w * (b[k + 1] - a[k + 1]))
}

impl LobeSpec {
    pub fn center(&self, t: usize) -> [f64; 3] {
        interpolate(&self.path, t as f64)
    }

    pub fn radii_at(&self, t: usize) -> [f64; 3] {
        if self.radii_path.is_empty() {
            self.radii
        } else {
            interpolate(&self.radii_path, t as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub first: usize,
    pub last: usize,
    pub lobes: Vec<LobeSpec>,
}

impl ObjectSpec {
    pub fn alive(&self, t: usize) -> bool {
        self.first <= t && t <= self.last
    }
}

/// A scripted split or merge. Parents end at `frame - 1`; children start at
/// `frame`. Births and deaths follow from the objects' frame ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub kind: EventKind,
    pub frame: usize,
    pub parents: Vec<u32>,
    pub children: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    #[serde(default)]
    pub name: String,
    pub dims: SceneDims,
    pub frames: usize,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub texture: TextureSpec,
    /// Half-width of ground-truth event windows.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    2
}

/// Squared normalized distance to a lobe center.
fn d2(p: [usize; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|k| ((p[k] as f64 - c[k]) / r[k]).powi(2)).sum()
}

/// Voxel box around `c` reaching `scale` radii, clipped to the grid.
fn lobe_box(dims: &Dims, c: [f64; 3], r: [f64; 3], scale: f64) -> Option<[[usize; 2]; 3]> {
    let ext = dims.extent();
    let mut out = [[0; 2]; 3];
    for k in 0..3 {
        let lo = (c[k] - scale * r[k]).ceil().max(0.0);
        let hi = (c[k] + scale * r[k]).floor().min(ext[k] as f64 - 1.0);
        if lo > hi {
            return None;
        }
        out[k] = [lo as usize, hi as usize];
    }
    Some(out)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(i as u64 ^ splitmix(j as u64 ^ splitmix(k as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]`, trilinear over a hashed integer lattice.
pub fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let base = p.map(|v| v.floor());
    let f = [0, 1, 2].map(|k| {
        let t = p[k] - base[k];
        t * t * (3.0 - 2.0 * t)
    });
    let b = base.map(|v| v as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let w: f64 = (0..3).map(|k| if o[k] == 1 { f[k] } else { 1.0 - f[k] }).product();
        acc += w * lattice(seed, b[0] + o[0] as i64, b[1] + o[1] as i64, b[2] + o[2] as i64);
    }
    acc
}

impl SceneScript {
    pub fn from_json(s: &str) -> Result<SceneScript> {
        let script: SceneScript = serde_json::from_str(s).map_err(|e| Error::Script(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<SceneScript> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn object(&self, id: u32) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Script(m));
        self.dims.dims().map_err(|e| Error::Script(e.to_string()))?;
        if self.frames == 0 {
            return err("frames must be >= 1".into());
        }
        if !(self.noise.sigma >= 0.0 && self.noise.bleach > 0.0) {
            return err("noise sigma must be >= 0 and bleach > 0".into());
        }
        if !(self.texture.cell > 0.0 && self.texture.contrast >= 0.0) {
            return err("texture cell must be > 0 and contrast >= 0".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 || !ids.insert(o.id) {
                return err(format!("object id {} is zero or duplicated", o.id));
            }
            if o.first < 1 || o.first > o.last || o.last > self.frames {
                return err(format!(
                    "object {} lives on frames {}..={} outside 1..={}",
                    o.id, o.first, o.last, self.frames
                ));
            }
            if o.lobes.is_empty() {
                return err(format!("object {} has no lobes", o.id));
            }
            for l in &o.lobes {
                if l.path.is_empty() || l.path.windows(2).any(|w| w[0][0] >= w[1][0]) {
                    return err(format!("object {}: lobe path keyframes must be strictly increasing", o.id));
                }
                if l.radii_path.windows(2).any(|w| w[0][0] >= w[1][0]) {
                    return err(format!("object {}: radii keyframes must be strictly increasing", o.id));
                }
                for t in o.first..=o.last {
                    if l.radii_at(t).iter().any(|&r| r.is_nan() || r <= 0.0) {
                        return err(format!("object {}: non-positive radius at frame {t}", o.id));
                    }
                }
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let name = format!("event {} ({} at frame {})", i + 1, e.kind.name(), e.frame);
            if e.frame < 2 || e.frame > self.frames {
                return err(format!("{name}: frame outside 2..={}", self.frames));
            }
            let arity_ok = match e.kind {
                EventKind::Split => e.parents.len() == 1 && e.children.len() >= 2,
                EventKind::Merge => e.parents.len() >= 2 && e.children.len() == 1,
                _ => return err(format!("{name}: only split and merge can be scripted")),
            };
            if !arity_ok {
                return err(format!("{name}: wrong number of parents or children"));
            }
            for &p in &e.parents {
                match self.object(p) {
                    Some(o) if o.last == e.frame - 1 => {}
                    Some(_) => return err(format!("{name}: parent {p} must end at frame {}", e.frame - 1)),
                    None => return err(format!("{name}: unknown parent {p}")),
                }
            }
            for &c in &e.children {
                match self.object(c) {
                    Some(o) if o.first == e.frame => {}
                    Some(_) => return err(format!("{name}: child {c} must start at frame {}", e.frame)),
                    None => return err(format!("{name}: unknown child {c}")),
                }
            }
        }
        self.check_birth_overlaps()
    }

    /// Objects that appear from nothing must not overlap live objects.
    fn check_birth_overlaps(&self) -> Result<()> {
        let dims = self.dims.dims()?;
        let children: BTreeSet<u32> = self.events.iter().flat_map(|e| e.children.iter().copied()).collect();
        for o in self.objects.iter().filter(|o| !children.contains(&o.id)) {
            let t = o.first;
            let mine = self.footprint(&dims, o, t);
            for other in self.objects.iter().filter(|x| x.id != o.id && x.alive(t)) {
                if !mine.is_disjoint(&self.footprint(&dims, other, t)) {
                    return Err(Error::Script(format!(
                        "object {} is born at frame {t} overlapping object {}",
                        o.id, other.id
                    )));
                }
            }
        }
        Ok(())
    }

    fn footprint(&self, dims: &Dims, o: &ObjectSpec, t: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for l in &o.lobes {
            let (c, r) = (l.center(t), l.radii_at(t));
            let Some(b) = lobe_box(dims, c, r, 1.0) else { continue };
            for z in b[2][0]..=b[2][1] {
                for y in b[1][0]..=b[1][1] {
                    for x in b[0][0]..=b[0][1] {
                        if d2([x, y, z], c, r) <= 1.0 {
                            out.insert(dims.index(x, y, z));
                        }
                    }
                }
            }
        }
        out
    }

    /// Ground-truth labels of frame `t` and the label -> object id map.
    /// Labels are numbered by the raster position of each object's first voxel.
    pub fn render_labels(&self, t: usize) -> Result<(LabelVolume, BTreeMap<u32, u32>)> {
        let dims = self.dims.dims()?;
        let n = dims.voxels();
        let mut owner = vec![0u32; n];
        let mut best = vec![f64::NEG_INFINITY; n];
        for o in self.objects.iter().filter(|o| o.alive(t)) {
            for l in &o.lobes {
                let (c, r) = (l.center(t), l.radii_at(t));
                let Some(b) = lobe_box(&dims, c, r, 1.0) else { continue };
                for z in b[2][0]..=b[2][1] {
                    for y in b[1][0]..=b[1][1] {
                        for x in b[0][0]..=b[0][1] {
                            let q = d2([x, y, z], c, r);
                            if q > 1.0 {
                                continue;
                            }
                            let i = dims.index(x, y, z);
                            let env = l.amplitude * (-0.5 * q).exp();
                            if env > best[i] {
                                best[i] = env;
                                owner[i] = o.id;
                            }
                        }
                    }
                }
            }
        }
        let mut first_voxel: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, &o) in owner.iter().enumerate() {
            if o != 0 {
                first_voxel.entry(o).or_insert(i);
            }
        }
        for o in self.objects.iter().filter(|o| o.alive(t)) {
            if !first_voxel.contains_key(&o.id) {
                return Err(Error::Script(format!("object {} has no voxels at frame {t}", o.id)));
            }
        }
        let mut order: Vec<(usize, u32)> = first_voxel.into_iter().map(|(o, i)| (i, o)).collect();
        order.sort();
        let to_label: BTreeMap<u32, u32> = order.iter().enumerate().map(|(k, &(_, o))| (o, k as u32 + 1)).collect();
        let labels: Vec<u32> = owner.iter().map(|o| if *o == 0 { 0 } else { to_label[o] }).collect();
        let back = to_label.iter().map(|(&o, &l)| (l, o)).collect();
        Ok((LabelVolume::new(dims, labels, t)?, back))
    }

    /// Noise-free, unbleached intensity of frame `t`.
    fn clean_intensity(&self, dims: &Dims, t: usize) -> Vec<f64> {
        let mut v = vec![0.0; dims.voxels()];
        let tex = self.texture;
        for o in self.objects.iter().filter(|o| o.alive(t)) {
            for l in &o.lobes {
                let (c, r) = (l.center(t), l.radii_at(t));
                let Some(b) = lobe_box(dims, c, r, 3.0) else { continue };
                for z in b[2][0]..=b[2][1] {
                    for y in b[1][0]..=b[1][1] {
                        for x in b[0][0]..=b[0][1] {
                            let q = d2([x, y, z], c, r);
                            if q > 9.0 {
                                continue;
                            }
                            let local = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]].map(|u| u / tex.cell);
                            let u = value_noise(l.texture_seed, local);
                            let modulation = 1.0 + tex.contrast * (2.0 * u - 1.0);
                            v[dims.index(x, y, z)] += l.amplitude * (-0.5 * q).exp() * modulation;
                        }
                    }
                }
            }
        }
        v
    }

    /// Intensity of frame `t`: textured lobes, bleaching and additive noise,
    /// clamped at zero.
    pub fn render_intensity(&self, t: usize, seed: u64) -> Result<IntensityVolume> {
        let dims = self.dims.dims()?;
        let decay = self.noise.bleach.powi(t as i32 - 1);
        let mut v = self.clean_intensity(&dims, t);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(t as u64)));
        let normal = Normal::new(0.0, self.noise.sigma).map_err(|e| Error::Script(e.to_string()))?;
        for x in v.iter_mut() {
            *x *= decay;
            if self.noise.sigma > 0.0 {
                *x += normal.sample(&mut rng);
            }
        }
        IntensityVolume::new(dims, v.into_iter().map(|x| x.max(0.0) as f32).collect(), t)
    }

    /// Ground truth over all frames, rendering labels only.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let mut assignments = Vec::new();
        for t in 1..=self.frames {
            let (_, map) = self.render_labels(t)?;
            assignments.extend(map.into_iter().map(|(label, o)| Assignment {
                frame: t,
                label,
                gt_track: o,
            }));
        }
        let w = self.window;
        let win = |f: usize| [f.saturating_sub(w).max(1), f + w];
        let mut events = Vec::new();
        let mut in_event_child = BTreeSet::new();
        let mut in_event_parent = BTreeSet::new();
        for e in &self.events {
            let mut participants: Vec<u32> = e.parents.iter().chain(&e.children).copied().collect();
            participants.sort();
            let mut parents = e.parents.clone();
            parents.sort();
            in_event_child.extend(e.children.iter().copied());
            in_event_parent.extend(e.parents.iter().copied());
            events.push(GtEvent {
                kind: e.kind,
                participants,
                window: win(e.frame),
                parents,
            });
        }
        for o in &self.objects {
            if o.first > 1 && !in_event_child.contains(&o.id) {
                events.push(GtEvent {
                    kind: EventKind::Birth,
                    participants: vec![o.id],
                    window: win(o.first),
                    parents: vec![],
                });
            }
            if o.last < self.frames && !in_event_parent.contains(&o.id) {
                events.push(GtEvent {
                    kind: EventKind::Death,
                    participants: vec![o.id],
                    window: win(o.last + 1),
                    parents: vec![o.id],
                });
            }
        }
        Ok(GroundTruth { assignments, events })
    }
}

/// A rendered-on-demand synthetic dataset. Frames are regenerated from the
/// script, so any frame can be produced without holding the sequence.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub script: SceneScript,
    pub seed: u64,
    pub gt: GroundTruth,
}

impl SynthDataset {
    pub fn frames(&self) -> usize {
        self.script.frames
    }

    pub fn frame(&self, t: usize) -> Result<(IntensityVolume, LabelVolume)> {
        let img = self.script.render_intensity(t, self.seed)?;
        let (labels, _) = self.script.render_labels(t)?;
        Ok((img, labels))
    }

    pub fn labels(&self, t: usize) -> Result<LabelVolume> {
        Ok(self.script.render_labels(t)?.0)
    }
}

pub fn render(script: &SceneScript, seed: u64) -> Result<SynthDataset> {
    script.validate()?;
    Ok(SynthDataset {
        gt: script.ground_truth()?,
        script: script.clone(),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NoiseLevel {
    None,
    Low,
    Medium,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 3] = [NoiseLevel::None, NoiseLevel::Low, NoiseLevel::Medium];

    pub fn sigma(self) -> f64 {
        match self {
            NoiseLevel::None => 0.0,
            NoiseLevel::Low => 0.05,
            NoiseLevel::Medium => 0.15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::None => "none",
            NoiseLevel::Low => "low",
            NoiseLevel::Medium => "medium",
        }
    }
}

const T_BENCH: usize = 69;
const Z_MID: f64 = 6.0;
const BLEACH: f64 = 0.995;

fn bench_dims() -> SceneDims {
    SceneDims {
        x: 128,
        y: 128,
        z: 13,
        spacing: [1.0, 1.0, 4.0],
    }
}

/// Triangle wave over `0..=half` with unit steps.
fn tri(s: usize, half: usize) -> f64 {
    let p = s % (2 * half);
    (if p <= half { p } else { 2 * half - p }) as f64
}

fn per_frame(f: impl Fn(usize) -> [f64; 3]) -> Vec<[f64; 4]> {
    (1..=T_BENCH)
        .map(|t| {
            let c = f(t);
            [t as f64, c[0], c[1], c[2]]
        })
        .collect()
}

fn lobe(path: Vec<[f64; 4]>, radii: [f64; 3], seed: u64) -> LobeSpec {
    LobeSpec {
        path,
        radii,
        radii_path: vec![],
        amplitude: 1.0,
        texture_seed: seed,
    }
}

fn script(name: &str, objects: Vec<ObjectSpec>, events: Vec<ScriptEvent>) -> SceneScript {
    SceneScript {
        name: name.to_string(),
        dims: bench_dims(),
        frames: T_BENCH,
        objects,
        events,
        noise: NoiseSpec {
            sigma: 0.0,
            bleach: BLEACH,
        },
        texture: TextureSpec::default(),
        window: 2,
    }
}

const R_BLOB: [f64; 3] = [3.0, 3.0, 1.2];

/// Twelve slowly drifting blobs, no events.
fn scene_s1() -> SceneScript {
    let dirs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 1.0]];
    let objects = (0..12)
        .map(|k| {
            let (cx, cy) = (16.0 + 32.0 * (k % 4) as f64, 21.0 + 43.0 * (k / 4) as f64);
            let d = dirs[k % 4];
            let phase = 3 * k;
            let path = per_frame(|t| {
                let s = tri(t - 1 + phase, 8) - 4.0;
                [cx + d[0] * s, cy + d[1] * s, Z_MID]
            });
            ObjectSpec {
                id: k as u32 + 1,
                first: 1,
                last: T_BENCH,
                lobes: vec![lobe(path, R_BLOB, 100 + k as u64)],
            }
        })
        .collect();
    script("s1", objects, vec![])
}

/// Convoys of small blobs stepping further than their own diameter, each
/// landing nearer its leader's previous position than its own.
fn scene_s2() -> SceneScript {
    let mut objects = Vec::new();
    for lane in 0..3 {
        let y = 24.0 + 40.0 * lane as f64;
        let phase = [0, 3, 7][lane];
        for k in 0..4 {
            let x0 = 10.0 + 11.0 * k as f64;
            let path = per_frame(|t| [x0 + 6.0 * tri(t - 1 + phase, 8), y, Z_MID]);
            let id = (lane * 4 + k) as u32 + 1;
            objects.push(ObjectSpec {
                id,
                first: 1,
                last: T_BENCH,
                lobes: vec![lobe(path, [2.0, 2.0, 1.2], 200 + id as u64)],
            });
        }
    }
    script("s2", objects, vec![])
}

fn cell_center(k: usize) -> (f64, f64) {
    (21.0 + 43.0 * (k % 3) as f64, 16.0 + 32.0 * (k / 3) as f64)
}

/// Twelve two-lobe parents, each splitting into its lobes at a staggered
/// frame; the children then drift apart.
fn scene_s3_split() -> SceneScript {
    let mut objects = Vec::new();
    let mut events = Vec::new();
    for k in 0..12 {
        let (cx, cy) = cell_center(k);
        let ts = 8 + 4 * k;
        let sway = move |t: usize| tri(t - 1 + k, 3) - 1.0;
        let apart = move |t: usize| (t.saturating_sub(ts - 1)).min(5) as f64;
        let a = per_frame(|t| [cx - 4.0 - apart(t), cy + sway(t), Z_MID]);
        let b = per_frame(|t| [cx + 3.0 + apart(t), cy + sway(t), Z_MID]);
        let (sa, sb) = (300 + 2 * k as u64, 301 + 2 * k as u64);
        let id = 3 * k as u32;
        objects.push(ObjectSpec {
            id: id + 1,
            first: 1,
            last: ts - 1,
            lobes: vec![lobe(a.clone(), R_BLOB, sa), lobe(b.clone(), R_BLOB, sb)],
        });
        objects.push(ObjectSpec {
            id: id + 2,
            first: ts,
            last: T_BENCH,
            lobes: vec![lobe(a, R_BLOB, sa)],
        });
        objects.push(ObjectSpec {
            id: id + 3,
            first: ts,
            last: T_BENCH,
            lobes: vec![lobe(b, R_BLOB, sb)],
        });
        events.push(ScriptEvent {
            kind: EventKind::Split,
            frame: ts,
            parents: vec![id + 1],
            children: vec![id + 2, id + 3],
        });
    }
    script("s3-split", objects, events)
}

/// Twelve cells of three blobs: A and B approach and merge, then the
/// merged object absorbs C.
fn scene_s3_merge() -> SceneScript {
    let mut objects = Vec::new();
    let mut events = Vec::new();
    for k in 0..12 {
        let (cx, cy) = cell_center(k);
        let t1 = 6 + 3 * k;
        let t2 = t1 + 12;
        let closing = move |t: usize, until: usize, steps: usize| (until.saturating_sub(t)).min(steps) as f64;
        // separate blobs never touch; contact happens at the merge frame
        let a = per_frame(|t| [cx - 7.0 - closing(t, t1, 4), cy, Z_MID]);
        let b = per_frame(|t| [cx + closing(t, t1, 4), cy, Z_MID]);
        let c = per_frame(|t| [cx + 7.0 + 2.0 * closing(t, t2, 3), cy, Z_MID]);
        let seeds = [400 + 3 * k as u64, 401 + 3 * k as u64, 402 + 3 * k as u64];
        let la = lobe(a, R_BLOB, seeds[0]);
        let lb = lobe(b, R_BLOB, seeds[1]);
        let lc = lobe(c, R_BLOB, seeds[2]);
        let id = 5 * k as u32;
        let (ia, ib, ic, iab, iabc) = (id + 1, id + 2, id + 3, id + 4, id + 5);
        objects.push(ObjectSpec {
            id: ia,
            first: 1,
            last: t1 - 1,
            lobes: vec![la.clone()],
        });
        objects.push(ObjectSpec {
            id: ib,
            first: 1,
            last: t1 - 1,
            lobes: vec![lb.clone()],
        });
        objects.push(ObjectSpec {
            id: ic,
            first: 1,
            last: t2 - 1,
            lobes: vec![lc.clone()],
        });
        objects.push(ObjectSpec {
            id: iab,
            first: t1,
            last: t2 - 1,
            lobes: vec![la.clone(), lb.clone()],
        });
        objects.push(ObjectSpec {
            id: iabc,
            first: t2,
            last: T_BENCH,
            lobes: vec![la, lb, lc],
        });
        events.push(ScriptEvent {
            kind: EventKind::Merge,
            frame: t1,
            parents: vec![ia, ib],
            children: vec![iab],
        });
        events.push(ScriptEvent {
            kind: EventKind::Merge,
            frame: t2,
            parents: vec![iab, ic],
            children: vec![iabc],
        });
    }
    script("s3-merge", objects, events)
}

/// Pairs of blobs whose in-plane paths cross repeatedly at different depths.
fn scene_s4() -> SceneScript {
    let mut objects = Vec::new();
    for k in 0..6 {
        let (cx, cy) = (32.0 + 64.0 * (k % 2) as f64, 22.0 + 42.0 * (k / 2) as f64);
        let phase = 2 * k;
        let u = per_frame(|t| [cx - 12.0 + 2.0 * tri(t - 1 + phase, 12), cy, 4.0]);
        let v = per_frame(|t| [cx + 12.0 - 2.0 * tri(t - 1 + phase, 12), cy + 1.0, 8.0]);
        let id = 2 * k as u32;
        objects.push(ObjectSpec {
            id: id + 1,
            first: 1,
            last: T_BENCH,
            lobes: vec![lobe(u, [3.0, 3.0, 1.0], 500 + id as u64)],
        });
        objects.push(ObjectSpec {
            id: id + 2,
            first: 1,
            last: T_BENCH,
            lobes: vec![lobe(v, [3.0, 3.0, 1.0], 501 + id as u64)],
        });
    }
    script("s4", objects, vec![])
}

/// Base scenes of the benchmark, noise-free.
pub fn base_scenes() -> Vec<SceneScript> {
    vec![scene_s1(), scene_s2(), scene_s3_split(), scene_s3_merge(), scene_s4()]
}

/// Every base scene at every noise level, named `scene/noise`.
pub fn benchmark_scripts() -> Vec<SceneScript> {
    let mut out = Vec::new();
    for base in base_scenes() {
        for level in NoiseLevel::ALL {
            let mut s = base.clone();
            s.name = format!("{}/{}", base.name, level.name());
            s.noise.sigma = level.sigma();
            out.push(s);
        }
    }
    out
}

/// The fixed benchmark suite, rendered lazily.
pub fn default_benchmark(seed: u64) -> Result<Vec<SynthDataset>> {
    benchmark_scripts().iter().map(|s| render(s, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::extract_objects;

    fn tiny(objects: Vec<ObjectSpec>, events: Vec<ScriptEvent>, frames: usize) -> SceneScript {
        SceneScript {
            name: "tiny".into(),
            dims: SceneDims {
                x: 24,
                y: 16,
                z: 5,
                spacing: [1.0, 1.0, 2.0],
            },
            frames,
            objects,
            events,
            noise: NoiseSpec::default(),
            texture: TextureSpec::default(),
            window: 2,
        }
    }

    fn still(id: u32, first: usize, last: usize, x: f64, seed: u64) -> ObjectSpec {
        ObjectSpec {
            id,
            first,
            last,
            lobes: vec![lobe(vec![[1.0, x, 8.0, 2.0]], [2.5, 2.5, 1.0], seed)],
        }
    }

    #[test]
    fn static_blob_without_noise_is_constant() {
        let s = tiny(vec![still(1, 1, 4, 8.0, 3)], vec![], 4);
        let d = render(&s, 7).unwrap();
        let (i1, l1) = d.frame(1).unwrap();
        for t in 2..=4 {
            let (it, lt) = d.frame(t).unwrap();
            assert_eq!(lt.labels(), l1.labels());
            assert_eq!(it.values(), i1.values());
        }
        assert!(d.gt.events.is_empty());
    }

    #[test]
    fn split_appears_once_in_ground_truth() {
        let a = lobe(vec![[1.0, 6.0, 8.0, 2.0], [4.0, 6.0, 8.0, 2.0], [8.0, 2.0, 8.0, 2.0]], [2.0, 2.0, 1.0], 1);
        let b = lobe(vec![[1.0, 11.0, 8.0, 2.0], [4.0, 11.0, 8.0, 2.0], [8.0, 15.0, 8.0, 2.0]], [2.0, 2.0, 1.0], 2);
        let objects = vec![
            ObjectSpec { id: 1, first: 1, last: 4, lobes: vec![a.clone(), b.clone()] },
            ObjectSpec { id: 2, first: 5, last: 8, lobes: vec![a] },
            ObjectSpec { id: 3, first: 5, last: 8, lobes: vec![b] },
        ];
        let ev = vec![ScriptEvent { kind: EventKind::Split, frame: 5, parents: vec![1], children: vec![2, 3] }];
        let d = render(&tiny(objects, ev, 8), 1).unwrap();
        let splits: Vec<_> = d.gt.events.iter().filter(|e| e.kind == EventKind::Split).collect();
        assert_eq!(splits.len(), 1);
        assert!(splits[0].window[0] <= 5 && 5 <= splits[0].window[1]);
        assert_eq!(splits[0].participants, vec![1, 2, 3]);
        assert_eq!(d.gt.events.len(), 1);
    }

    #[test]
    fn bleaching_scales_intensity() {
        let mut s = tiny(vec![still(1, 1, 11, 8.0, 3)], vec![], 11);
        s.noise.bleach = 0.99;
        let d = render(&s, 0).unwrap();
        let (i1, _) = d.frame(1).unwrap();
        let (i11, _) = d.frame(11).unwrap();
        let peak = |v: &IntensityVolume| v.values().iter().cloned().fold(0f32, f32::max) as f64;
        let want = 0.99f64.powi(10);
        assert!((peak(&i11) / peak(&i1) - want).abs() < 1e-6);
    }

    #[test]
    fn event_out_of_range_names_the_event() {
        let ev = vec![ScriptEvent { kind: EventKind::Merge, frame: 40, parents: vec![1, 2], children: vec![3] }];
        let s = tiny(vec![still(1, 1, 4, 5.0, 1), still(2, 1, 4, 15.0, 2)], ev, 8);
        match s.validate() {
            Err(Error::Script(m)) => assert!(m.contains("event 1") && m.contains("merge"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_birth_is_rejected() {
        let s = tiny(vec![still(1, 1, 4, 8.0, 1), still(2, 2, 4, 9.0, 2)], vec![], 4);
        assert!(matches!(s.validate(), Err(Error::Script(m)) if m.contains("overlapping")));
    }

    #[test]
    fn vanished_object_is_rejected() {
        let mut o = still(1, 1, 2, 8.0, 1);
        o.lobes[0].path = vec![[1.0, 8.0, 8.0, 2.0], [2.0, 500.0, 8.0, 2.0]];
        let s = tiny(vec![o], vec![], 2);
        assert!(matches!(render(&s, 0), Err(Error::Script(m)) if m.contains("no voxels")));
    }

    #[test]
    fn same_seed_same_frames() {
        let mut s = tiny(vec![still(1, 1, 3, 8.0, 1)], vec![], 3);
        s.noise.sigma = 0.1;
        let a = render(&s, 42).unwrap().frame(2).unwrap().0;
        let b = render(&s, 42).unwrap().frame(2).unwrap().0;
        let c = render(&s, 43).unwrap().frame(2).unwrap().0;
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn labels_match_ownership_oracle() {
        // two touching lobes of different objects plus one of a third
        let objs = vec![still(1, 1, 1, 6.0, 1), still(2, 1, 1, 11.0, 2), still(3, 1, 1, 18.0, 3)];
        let s = tiny(objs, vec![], 1);
        let (labels, map) = s.render_labels(1).unwrap();
        let dims = s.dims.dims().unwrap();
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    let mut best: Option<(f64, u32)> = None;
                    for o in &s.objects {
                        let l = &o.lobes[0];
                        let q: f64 = (0..3).map(|k| (([x, y, z][k] as f64 - l.center(1)[k]) / l.radii[k]).powi(2)).sum();
                        let env = (-0.5 * q).exp();
                        if q <= 1.0 && best.is_none_or(|(b, _)| env > b) {
                            best = Some((env, o.id));
                        }
                    }
                    let got = labels.get(x, y, z);
                    let got = if got == 0 { None } else { Some(map[&got]) };
                    assert_eq!(got, best.map(|b| b.1), "voxel {x},{y},{z}");
                }
            }
        }
    }

    #[test]
    fn value_noise_is_bounded_and_continuous() {
        for i in 0..200 {
            let p = [i as f64 * 0.37, i as f64 * 0.11, -(i as f64) * 0.23];
            let v = value_noise(9, p);
            assert!((0.0..=1.0).contains(&v));
            let w = value_noise(9, [p[0] + 1e-6, p[1], p[2]]);
            assert!((v - w).abs() < 1e-4);
        }
        // lattice points reproduce the hashed values
        assert_eq!(value_noise(5, [2.0, 3.0, 4.0]), lattice(5, 2, 3, 4));
    }

    #[test]
    fn benchmark_scenes_validate_and_match_counts() {
        let scripts = base_scenes();
        assert_eq!(scripts.len(), 5);
        for s in &scripts {
            s.validate().unwrap();
        }
        let split = scripts.iter().find(|s| s.name == "s3-split").unwrap();
        let merge = scripts.iter().find(|s| s.name == "s3-merge").unwrap();
        assert!(split.events.iter().filter(|e| e.kind == EventKind::Split).count() >= 11);
        assert!(merge.events.iter().filter(|e| e.kind == EventKind::Merge).count() >= 20);
        assert_eq!(benchmark_scripts().len(), 15);
    }

    #[test]
    fn s1_has_twelve_objects_per_frame() {
        let s = scene_s1();
        for t in [1, 20, 69] {
            let (l, _) = s.render_labels(t).unwrap();
            assert_eq!(extract_objects(&l).len(), 12);
        }
    }

    #[test]
    fn s2_consecutive_frames_never_overlap() {
        let s = scene_s2();
        let mut prev = s.render_labels(1).unwrap().0;
        for t in 2..=s.frames {
            let cur = s.render_labels(t).unwrap().0;
            let shared = prev.labels().iter().zip(cur.labels()).filter(|(a, b)| **a != 0 && **b != 0).count();
            assert_eq!(shared, 0, "frame {t}");
            prev = cur;
        }
    }

    #[test]
    fn gt_tracks_change_only_at_events() {
        for s in base_scenes() {
            let gt = s.ground_truth().unwrap();
            let mut alive: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
            for a in &gt.assignments {
                alive.entry(a.frame).or_default().insert(a.gt_track);
            }
            let event_frames: BTreeSet<usize> = s.events.iter().map(|e| e.frame).collect();
            for t in 2..=s.frames {
                if alive[&t] != alive[&(t - 1)] {
                    assert!(event_frames.contains(&t), "{} frame {t}", s.name);
                }
            }
        }
    }
}
