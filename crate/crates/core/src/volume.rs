//! Volumetric data model shared by every stage of the pipeline.
//!
//! All grids use one memory layout: x varies fastest, then y, then z, and
//! the channel index varies slowest. The linear index of voxel `(x, y, z)`
//! in channel `m` is `x + X * (y + Y * (z + Z * m))`.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extents, channel count and (informational) voxel spacing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub d: usize,
    pub spacing: [f64; 3],
}

impl Dims {
    pub fn new(x: usize, y: usize, z: usize, d: usize) -> Result<Self> {
        if x == 0 || y == 0 || z == 0 || d == 0 {
            return Err(Error::Dims(format!(
                "all extents must be >= 1, got {x}x{y}x{z}x{d}"
            )));
        }
        Ok(Dims {
            x,
            y,
            z,
            d,
            spacing: [1.0, 1.0, 1.0],
        })
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn with_channels(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    /// Spatial voxel count (one channel).
    #[inline]
    pub fn voxels(&self) -> usize {
        self.x * self.y * self.z
    }

    /// Total element count over all channels.
    #[inline]
    pub fn len(&self) -> usize {
        self.voxels() * self.d
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.x * (y + self.y * z)
    }

    #[inline]
    pub fn index_c(&self, x: usize, y: usize, z: usize, m: usize) -> usize {
        x + self.x * (y + self.y * (z + self.z * m))
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.x;
        let rest = idx / self.x;
        [x, rest % self.y, rest / self.y]
    }

    #[inline]
    pub fn extent(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }

    /// True when both describe the same spatial grid (channels may differ).
    pub fn same_grid(&self, other: &Dims) -> bool {
        self.x == other.x && self.y == other.y && self.z == other.z
    }
}

/// Per-frame grid of object labels; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    labels: Vec<u32>,
    frame: usize,
}

impl LabelVolume {
    pub fn new(dims: Dims, labels: Vec<u32>, frame: usize) -> Result<Self> {
        if dims.d != 1 {
            return Err(Error::Dims(format!("label volume needs d = 1, got {}", dims.d)));
        }
        if labels.len() != dims.voxels() {
            return Err(Error::Shape(format!(
                "label buffer holds {} values for {} voxels",
                labels.len(),
                dims.voxels()
            )));
        }
        Ok(LabelVolume { dims, labels, frame })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    /// Linear voxel indices of every object, in raster order, keyed by label.
    pub fn voxel_lists(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                out.entry(l).or_default().push(i);
            }
        }
        out
    }

    /// Applies `f` to every nonzero label. `f` must return a nonzero label.
    pub fn relabel(&self, mut f: impl FnMut(u32) -> u32) -> LabelVolume {
        let labels = self
            .labels
            .iter()
            .map(|&l| if l == 0 { 0 } else { f(l) })
            .collect();
        LabelVolume {
            dims: self.dims,
            labels,
            frame: self.frame,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_v4d(
            path,
            &header(&self.dims, Dtype::U32, VolumeKind::Label, self.frame),
            |w| {
                for v in &self.labels {
                    w.write_all(&v.to_le_bytes())?;
                }
                Ok(())
            },
        )
    }
}

/// Raw per-frame image intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityVolume {
    dims: Dims,
    values: Vec<f32>,
    frame: usize,
}

impl IntensityVolume {
    pub fn new(dims: Dims, values: Vec<f32>, frame: usize) -> Result<Self> {
        if dims.d != 1 {
            return Err(Error::Dims(format!(
                "intensity volume needs d = 1, got {}",
                dims.d
            )));
        }
        check_buffer(&dims, &values)?;
        Ok(IntensityVolume { dims, values, frame })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_v4d(
            path,
            &header(&self.dims, Dtype::F32, VolumeKind::Intensity, self.frame),
            |w| write_f32s(w, &self.values),
        )
    }
}

/// Per-frame multi-channel feature map; channel `m` is the `m`-th layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    dims: Dims,
    values: Vec<f32>,
    frame: usize,
}

impl FeatureVolume {
    pub fn new(dims: Dims, values: Vec<f32>, frame: usize) -> Result<Self> {
        check_buffer(&dims, &values)?;
        Ok(FeatureVolume { dims, values, frame })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn channel(&self, m: usize) -> &[f32] {
        let n = self.dims.voxels();
        &self.values[m * n..(m + 1) * n]
    }

    /// Element-wise `scale * v + shift` over every channel.
    pub fn affine(&self, scale: f32, shift: f32) -> Result<FeatureVolume> {
        let values = self.values.iter().map(|v| scale * v + shift).collect();
        FeatureVolume::new(self.dims, values, self.frame)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_v4d(
            path,
            &header(&self.dims, Dtype::F32, VolumeKind::Feature, self.frame),
            |w| write_f32s(w, &self.values),
        )
    }
}

fn check_buffer(dims: &Dims, values: &[f32]) -> Result<()> {
    if values.len() != dims.len() {
        return Err(Error::Shape(format!(
            "buffer holds {} values, dims need {}",
            values.len(),
            dims.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Label,
    Intensity,
    Feature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U32,
    F32,
}

impl VolumeKind {
    fn dtype(self) -> Dtype {
        match self {
            VolumeKind::Label => Dtype::U32,
            VolumeKind::Intensity | VolumeKind::Feature => Dtype::F32,
        }
    }
}

/// Any of the three volume kinds stored in a V4D file.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Label(LabelVolume),
    Intensity(IntensityVolume),
    Feature(FeatureVolume),
}

pub const V4D_MAGIC: [u8; 4] = *b"V4D\0";
pub const V4D_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct V4dHeader {
    x: usize,
    y: usize,
    z: usize,
    d: usize,
    dtype: Dtype,
    frame: usize,
    kind: VolumeKind,
    spacing: [f64; 3],
}

fn header(dims: &Dims, dtype: Dtype, kind: VolumeKind, frame: usize) -> V4dHeader {
    V4dHeader {
        x: dims.x,
        y: dims.y,
        z: dims.z,
        d: dims.d,
        dtype,
        frame,
        kind,
        spacing: dims.spacing,
    }
}

fn write_f32s(w: &mut dyn Write, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn write_v4d(
    path: impl AsRef<Path>,
    header: &V4dHeader,
    payload: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_header(&mut w, header)?;
    payload(&mut w)?;
    w.flush()?;
    Ok(())
}

fn encode_header(w: &mut dyn Write, header: &V4dHeader) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(&V4D_MAGIC)?;
    w.write_all(&V4D_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

/// Serializes a volume to an in-memory V4D image.
pub fn encode_volume(volume: &Volume) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match volume {
        Volume::Label(v) => {
            encode_header(&mut out, &header(&v.dims, Dtype::U32, VolumeKind::Label, v.frame))?;
            for l in &v.labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Volume::Intensity(v) => {
            encode_header(
                &mut out,
                &header(&v.dims, Dtype::F32, VolumeKind::Intensity, v.frame),
            )?;
            write_f32s(&mut out, &v.values)?;
        }
        Volume::Feature(v) => {
            encode_header(
                &mut out,
                &header(&v.dims, Dtype::F32, VolumeKind::Feature, v.frame),
            )?;
            write_f32s(&mut out, &v.values)?;
        }
    }
    Ok(out)
}

/// Parses a V4D image and checks it holds a volume of `expected` kind.
pub fn decode_volume(bytes: &[u8], expected: VolumeKind) -> Result<Volume> {
    if bytes.len() < 12 {
        return Err(Error::Header("file shorter than the fixed preamble".into()));
    }
    if bytes[..4] != V4D_MAGIC {
        return Err(Error::Header("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != V4D_VERSION {
        return Err(Error::Header(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::Header(format!(
            "header length {hlen} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let h: V4dHeader = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Header(format!("header JSON: {e}")))?;
    if h.kind != expected {
        return Err(Error::Dtype {
            expected: format!("{expected:?}"),
            found: format!("{:?}", h.kind),
        });
    }
    if h.dtype != h.kind.dtype() {
        return Err(Error::Dtype {
            expected: format!("{:?}", h.kind.dtype()),
            found: format!("{:?}", h.dtype),
        });
    }
    let dims = Dims::new(h.x, h.y, h.z, h.d)?.with_spacing(h.spacing);
    let payload = &body[hlen..];
    let n = dims.len();
    if payload.len() != n * 4 {
        return Err(Error::PayloadSize {
            expected: n,
            actual: payload.len(),
        });
    }
    let words = payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
    Ok(match h.kind {
        VolumeKind::Label => {
            let labels = words.map(u32::from_le_bytes).collect();
            Volume::Label(LabelVolume::new(dims, labels, h.frame)?)
        }
        VolumeKind::Intensity => {
            let values = words.map(f32::from_le_bytes).collect();
            Volume::Intensity(IntensityVolume::new(dims, values, h.frame)?)
        }
        VolumeKind::Feature => {
            let values = words.map(f32::from_le_bytes).collect();
            Volume::Feature(FeatureVolume::new(dims, values, h.frame)?)
        }
    })
}

pub fn load_volume(path: impl AsRef<Path>, expected: VolumeKind) -> Result<Volume> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_volume(&bytes, expected)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match load_volume(path, VolumeKind::Label)? {
        Volume::Label(v) => Ok(v),
        _ => unreachable!(),
    }
}

pub fn load_intensity(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    match load_volume(path, VolumeKind::Intensity)? {
        Volume::Intensity(v) => Ok(v),
        _ => unreachable!(),
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureVolume> {
    match load_volume(path, VolumeKind::Feature)? {
        Volume::Feature(v) => Ok(v),
        _ => unreachable!(),
    }
}

/// Voxel adjacency used by [`connected_components`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "18")]
    Eighteen,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            18 => Some(Connectivity::Eighteen),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }

    fn offsets(self) -> Vec<[isize; 3]> {
        let max_l1 = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    if l1 > 0 && l1 <= max_l1 {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Labels the foreground of `mask` into connected components.
///
/// Components are numbered `1..=K` in the raster order of their first voxel.
pub fn connected_components(
    dims: &Dims,
    mask: &[bool],
    connectivity: Connectivity,
    frame: usize,
) -> Result<LabelVolume> {
    let grid = Dims::new(dims.x, dims.y, dims.z, 1)?.with_spacing(dims.spacing);
    if mask.len() != grid.voxels() {
        return Err(Error::Shape(format!(
            "mask holds {} values for {} voxels",
            mask.len(),
            grid.voxels()
        )));
    }
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; grid.voxels()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || labels[seed] != 0 {
            continue;
        }
        next += 1;
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = grid.coords(i);
            for o in &offsets {
                let nx = x as isize + o[0];
                let ny = y as isize + o[1];
                let nz = z as isize + o[2];
                if nx < 0
                    || ny < 0
                    || nz < 0
                    || nx >= grid.x as isize
                    || ny >= grid.y as isize
                    || nz >= grid.z as isize
                {
                    continue;
                }
                let j = grid.index(nx as usize, ny as usize, nz as usize);
                if mask[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    LabelVolume::new(grid, labels, frame)
}

/// One segmented object in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u32,
    pub frame: usize,
    pub voxel_count: usize,
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
    pub centroid: [f64; 3],
}

/// One record per distinct nonzero label, sorted by label.
pub fn extract_objects(labels: &LabelVolume) -> Vec<ObjectRecord> {
    struct Acc {
        count: usize,
        min: [usize; 3],
        max: [usize; 3],
        sum: [f64; 3],
    }
    let dims = labels.dims();
    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    let mut i = 0;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let l = labels.labels[i];
                i += 1;
                if l == 0 {
                    continue;
                }
                let p = [x, y, z];
                let a = acc.entry(l).or_insert(Acc {
                    count: 0,
                    min: p,
                    max: p,
                    sum: [0.0; 3],
                });
                a.count += 1;
                for k in 0..3 {
                    a.min[k] = a.min[k].min(p[k]);
                    a.max[k] = a.max[k].max(p[k]);
                    a.sum[k] += p[k] as f64;
                }
            }
        }
    }
    acc.into_iter()
        .map(|(id, a)| ObjectRecord {
            id,
            frame: labels.frame,
            voxel_count: a.count,
            bbox_min: a.min,
            bbox_max: a.max,
            centroid: a.sum.map(|s| s / a.count as f64),
        })
        .collect()
}
