//! Frame-by-frame portion-matching tracker.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{EventRecord, FrameObject, TrackGraph, TrackId, TrackRegistry};
use crate::features::ChannelGuard;
use crate::portion::{best_match, extended_search, sample_portions, FrameEvidence, MatchSet, PortionSpec};
use crate::volume::{Dims, FeatureVolume, LabelVolume, ObjectRecord};

pub const METHOD: &str = "dfmt";

/// Match sets of every portion of every object of one frame.
#[derive(Clone, Debug)]
pub struct ObjectMatches {
    pub object: ObjectRecord,
    pub sets: Vec<MatchSet>,
}

/// Matches every object of the current frame against the given past frames.
///
/// Portions are searched in parallel; results come back in object order and
/// raster order of portion centers regardless of scheduling.
pub fn match_frame(
    labels: &LabelVolume,
    feats: &FeatureVolume,
    past: &[(&LabelVolume, &FeatureVolume)],
    spec: &PortionSpec,
) -> Result<Vec<ObjectMatches>> {
    let objects = crate::volume::extract_objects(labels);
    let mut jobs = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        for p in sample_portions(obj, labels, feats, spec)? {
            jobs.push((i, p));
        }
    }
    let sets: Vec<(usize, MatchSet)> = jobs
        .into_par_iter()
        .map(|(i, q)| {
            let mut cands = Vec::new();
            for (pl, pf) in past {
                cands.extend(extended_search(&q, pl, pf, spec)?);
            }
            Ok((i, best_match(q.key(), cands, spec.gamma)))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<ObjectMatches> = objects
        .into_iter()
        .map(|object| ObjectMatches { object, sets: vec![] })
        .collect();
    for (i, s) in sets {
        out[i].sets.push(s);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameTiming {
    pub matching_ms: f64,
    pub events_ms: f64,
}

#[derive(Clone, Debug)]
pub struct FrameReport {
    pub frame: usize,
    pub objects: usize,
    pub portions: usize,
    pub lags_searched: Vec<usize>,
    pub events: Vec<EventRecord>,
    pub timing: FrameTiming,
}

/// Streaming tracker: frames are pushed in order and only the last
/// `max_lag` frames are retained.
pub struct DfmtTracker {
    spec: PortionSpec,
    registry: TrackRegistry,
    past: VecDeque<(Arc<LabelVolume>, Arc<FeatureVolume>)>,
    dims: Option<Dims>,
    guard: ChannelGuard,
    scores: BTreeMap<TrackId, f64>,
}

impl DfmtTracker {
    pub fn new(spec: PortionSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DfmtTracker {
            registry: TrackRegistry::new(METHOD, spec.max_lag),
            spec,
            past: VecDeque::new(),
            dims: None,
            guard: ChannelGuard::new(None),
            scores: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, labels: LabelVolume, feats: FeatureVolume) -> Result<FrameReport> {
        let frame = labels.frame();
        if feats.frame() != frame {
            return Err(Error::Inconsistent(format!(
                "features of frame {} paired with labels of frame {frame}",
                feats.frame()
            )));
        }
        if !labels.dims().same_grid(feats.dims()) {
            return Err(Error::Inconsistent(format!("frame {frame}: label and feature grids differ")));
        }
        match &self.dims {
            Some(d) if !d.same_grid(labels.dims()) => {
                return Err(Error::Inconsistent(format!("frame {frame}: grid differs from earlier frames")))
            }
            None => self.dims = Some(*labels.dims()),
            _ => {}
        }
        self.guard.check(&feats)?;

        let start = Instant::now();
        // a lag whose frame holds no open track cannot contribute, since
        // winners are filtered after the per-lag argmax
        let searched: Vec<(&LabelVolume, &FeatureVolume)> = self
            .past
            .iter()
            .filter(|(l, _)| {
                l.voxel_lists()
                    .keys()
                    .any(|&lab| self.registry.open_track_at(l.frame(), lab).is_some())
            })
            .map(|(l, f)| (l.as_ref(), f.as_ref()))
            .collect();
        let lags_searched = searched.iter().map(|(l, _)| frame - l.frame()).collect();
        let matches = match_frame(&labels, &feats, &searched, &self.spec)?;
        let matching = start.elapsed();

        let start = Instant::now();
        let objects: Vec<FrameObject> = matches
            .iter()
            .map(|m| FrameObject {
                label: m.object.id,
                voxels: m.object.voxel_count,
                union: self.registry.union_of(&m.sets),
            })
            .collect();
        let evidence: Vec<FrameEvidence> = matches
            .iter()
            .zip(&objects)
            .map(|(m, o)| {
                FrameEvidence::from_match_sets(&m.sets, |label, lag| {
                    self.registry
                        .open_track_at(frame - lag, label)
                        .is_some_and(|id| o.union.iter().any(|(u, _)| *u == id))
                })
            })
            .collect();
        let events = self.registry.step(frame, &objects)?;
        for (o, ev) in objects.iter().zip(&evidence) {
            let id = self.registry.track_at(frame, o.label).expect("just assigned");
            let s = self.scores.entry(id).or_insert(0.0);
            if !o.union.is_empty() {
                *s += ev.value(self.spec.max_lag).ln();
            }
        }
        let events_time = start.elapsed();

        let portions = matches.iter().map(|m| m.sets.len()).sum();
        self.past.push_back((Arc::new(labels), Arc::new(feats)));
        while self.past.len() > self.spec.max_lag {
            self.past.pop_front();
        }
        Ok(FrameReport {
            frame,
            objects: objects.len(),
            portions,
            lags_searched,
            events,
            timing: FrameTiming {
                matching_ms: matching.as_secs_f64() * 1e3,
                events_ms: events_time.as_secs_f64() * 1e3,
            },
        })
    }

    pub fn finish(mut self) -> TrackGraph {
        let scores = std::mem::take(&mut self.scores);
        self.registry.set_scores(scores);
        self.registry.finish()
    }
}

/// Tracks a whole sequence with portion matching.
pub fn track_dfmt<I>(frames: I, spec: &PortionSpec) -> Result<TrackGraph>
where
    I: IntoIterator<Item = Result<(LabelVolume, FeatureVolume)>>,
{
    let mut tracker = DfmtTracker::new(spec.clone())?;
    for f in frames {
        let (l, feats) = f?;
        tracker.push(l, feats)?;
    }
    Ok(tracker.finish())
}
