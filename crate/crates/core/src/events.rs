//! Track identity, event classification and the lineage graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portion::MatchSet;

/// Global track identifier. Identifiers start at 1 and are never reissued.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u32);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Birth,
    Death,
    Split,
    Merge,
    Continue,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Birth,
        EventKind::Death,
        EventKind::Split,
        EventKind::Merge,
        EventKind::Continue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Birth => "birth",
            EventKind::Death => "death",
            EventKind::Split => "split",
            EventKind::Merge => "merge",
            EventKind::Continue => "continue",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub frame: usize,
    pub parents: Vec<TrackId>,
    pub children: Vec<TrackId>,
}

impl EventRecord {
    fn check_arity(&self) -> Result<()> {
        let (p, c) = (self.parents.len(), self.children.len());
        let ok = match self.kind {
            EventKind::Birth => p == 0 && c == 1,
            EventKind::Death => p == 1 && c == 0,
            EventKind::Split => p == 1 && c >= 2,
            EventKind::Merge => p >= 2 && c == 1,
            EventKind::Continue => p == 1 && c == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Inconsistent(format!(
                "{} at frame {} has {} parents and {} children",
                self.kind.name(),
                self.frame,
                p,
                c
            )))
        }
    }
}

/// A segmented object at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub frame: usize,
    pub label: u32,
    pub track_id: TrackId,
    pub voxels: usize,
}

/// Lineage link between two nodes, addressed by `(frame, label)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: (usize, u32),
    pub to: (usize, u32),
    pub kind: EventKind,
    pub lag: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackGraph {
    pub method: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub events: Vec<EventRecord>,
    /// Per-track log scores, when the method produces them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<BTreeMap<TrackId, f64>>,
}

impl TrackGraph {
    pub fn node_map(&self) -> BTreeMap<(usize, u32), &Node> {
        self.nodes.iter().map(|n| ((n.frame, n.label), n)).collect()
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn track_ids(&self) -> BTreeSet<TrackId> {
        self.nodes.iter().map(|n| n.track_id).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<TrackGraph> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Flat `frame,segmentation_label,track_id` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,segmentation_label,track_id\n");
        for n in &self.nodes {
            out.push_str(&format!("{},{},{}\n", n.frame, n.label, n.track_id));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Structural checks every produced graph must pass: unique nodes, one
    /// node per track and frame, event arity, retired identifiers never
    /// reappearing, births without in-edges, in-degree bounded by recorded
    /// parents, and edge lags within `1..=max_lag`.
    pub fn check_invariants(&self, max_lag: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Inconsistent(m));
        let nodes = self.node_map();
        if nodes.len() != self.nodes.len() {
            return bad("duplicate (frame, label) node".into());
        }
        let mut per_track = BTreeSet::new();
        for n in &self.nodes {
            if !per_track.insert((n.track_id, n.frame)) {
                return bad(format!("track {} has two nodes at frame {}", n.track_id, n.frame));
            }
        }
        let mut retired_at: BTreeMap<TrackId, usize> = BTreeMap::new();
        let mut parents_of: BTreeMap<(usize, TrackId), BTreeSet<TrackId>> = BTreeMap::new();
        let mut births = BTreeSet::new();
        for e in &self.events {
            e.check_arity()?;
            for c in &e.children {
                parents_of.entry((e.frame, *c)).or_default().extend(e.parents.iter().copied());
            }
            match e.kind {
                EventKind::Birth => {
                    births.insert((e.frame, e.children[0]));
                }
                EventKind::Death | EventKind::Split => {
                    retired_at.insert(e.parents[0], e.frame);
                }
                EventKind::Merge => {
                    for p in e.parents.iter().filter(|p| !e.children.contains(p)) {
                        retired_at.insert(*p, e.frame);
                    }
                }
                EventKind::Continue => {}
            }
        }
        for n in &self.nodes {
            if let Some(&f) = retired_at.get(&n.track_id) {
                if n.frame >= f {
                    return bad(format!("retired track {} reappears at frame {}", n.track_id, n.frame));
                }
            }
        }
        let mut indegree: BTreeMap<(usize, u32), usize> = BTreeMap::new();
        for e in &self.edges {
            let (Some(_), Some(_)) = (nodes.get(&e.from), nodes.get(&e.to)) else {
                return bad(format!("edge {:?} -> {:?} has a missing endpoint", e.from, e.to));
            };
            if e.lag < 1 || e.lag > max_lag || e.to.0 != e.from.0 + e.lag {
                return bad(format!("edge {:?} -> {:?} has lag {}", e.from, e.to, e.lag));
            }
            *indegree.entry(e.to).or_default() += 1;
        }
        for n in &self.nodes {
            let deg = indegree.get(&(n.frame, n.label)).copied().unwrap_or(0);
            if births.contains(&(n.frame, n.track_id)) && deg > 0 {
                return bad(format!("birth node ({}, {}) has in-edges", n.frame, n.label));
            }
            let recorded = parents_of.get(&(n.frame, n.track_id)).map_or(0, |p| p.len());
            if deg > recorded {
                return bad(format!(
                    "node ({}, {}) has in-degree {} but {} recorded parents",
                    n.frame, n.label, deg, recorded
                ));
            }
        }
        Ok(())
    }

    /// Number of nodes per frame must equal the number of segmented objects.
    pub fn check_conservation(&self, objects_per_frame: &BTreeMap<usize, usize>) -> Result<()> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for n in &self.nodes {
            *counts.entry(n.frame).or_default() += 1;
        }
        for (f, &want) in objects_per_frame {
            let got = counts.remove(f).unwrap_or(0);
            if got != want {
                return Err(Error::Inconsistent(format!(
                    "frame {f} has {got} nodes for {want} objects"
                )));
            }
        }
        if let Some((f, _)) = counts.into_iter().next() {
            return Err(Error::Inconsistent(format!("nodes at unknown frame {f}")));
        }
        Ok(())
    }
}

/// Union of the accepted matches of an object's portions, translated to
/// track identifiers; the lowest lag is kept per track. Matches that do not
/// resolve (unknown node or closed track) are dropped.
pub fn object_match_union(
    sets: &[MatchSet],
    mut resolve: impl FnMut(usize, u32) -> Option<TrackId>,
) -> Vec<(TrackId, usize)> {
    let mut best: BTreeMap<TrackId, usize> = BTreeMap::new();
    for s in sets {
        for a in &s.accepted {
            let Some(past) = s.query.frame.checked_sub(a.lag) else {
                continue;
            };
            if let Some(id) = resolve(past, a.object_id) {
                let e = best.entry(id).or_insert(a.lag);
                *e = (*e).min(a.lag);
            }
        }
    }
    best.into_iter().collect()
}

/// An object of the frame being classified together with its match union.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameObject {
    pub label: u32,
    pub voxels: usize,
    pub union: Vec<(TrackId, usize)>,
}

#[derive(Clone, Debug)]
struct TrackState {
    last_frame: usize,
    last_label: u32,
    last_voxels: usize,
    open: bool,
}

/// Sequential identity bookkeeping: assigns track identifiers frame by frame
/// and records nodes, edges and events.
#[derive(Clone, Debug)]
pub struct TrackRegistry {
    max_lag: usize,
    next_id: u32,
    tracks: BTreeMap<TrackId, TrackState>,
    history: VecDeque<(usize, BTreeMap<u32, TrackId>)>,
    last_frame: Option<usize>,
    graph: TrackGraph,
}

impl TrackRegistry {
    pub fn new(method: &str, max_lag: usize) -> Self {
        TrackRegistry {
            max_lag: max_lag.max(1),
            next_id: 1,
            tracks: BTreeMap::new(),
            history: VecDeque::new(),
            last_frame: None,
            graph: TrackGraph {
                method: method.to_string(),
                ..Default::default()
            },
        }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Track assigned to `label` at `frame`, if that frame is still in memory.
    pub fn track_at(&self, frame: usize, label: u32) -> Option<TrackId> {
        self.history
            .iter()
            .find(|(f, _)| *f == frame)
            .and_then(|(_, m)| m.get(&label).copied())
    }

    /// Like [`track_at`](Self::track_at) but only for tracks still open.
    pub fn open_track_at(&self, frame: usize, label: u32) -> Option<TrackId> {
        self.track_at(frame, label)
            .filter(|id| self.tracks.get(id).is_some_and(|s| s.open))
    }

    pub fn is_open(&self, id: TrackId) -> bool {
        self.tracks.get(&id).is_some_and(|s| s.open)
    }

    pub fn union_of(&self, sets: &[MatchSet]) -> Vec<(TrackId, usize)> {
        object_match_union(sets, |f, l| self.open_track_at(f, l))
    }

    /// Classifies the objects of `frame` and advances the registry.
    ///
    /// Objects with an empty union are births. A track claimed by two or more
    /// objects splits: every claimant gets a fresh identifier and the parent
    /// retires. An object whose union has two or more tracks is a merge; a
    /// split child keeps its fresh identifier, otherwise it inherits the
    /// track whose last observation was largest (ties to the smaller id) and
    /// the other parents retire. A single track claimed once continues. Open
    /// tracks left unclaimed for `max_lag` frames die.
    ///
    /// Fresh identifiers are issued in ascending label order.
    pub fn step(&mut self, frame: usize, objects: &[FrameObject]) -> Result<Vec<EventRecord>> {
        if let Some(last) = self.last_frame {
            if frame != last + 1 {
                return Err(Error::Inconsistent(format!("frame {frame} follows frame {last}")));
            }
        }
        let mut objs: Vec<&FrameObject> = objects.iter().collect();
        objs.sort_by_key(|o| o.label);
        if objs.windows(2).any(|w| w[0].label == w[1].label) {
            return Err(Error::Inconsistent(format!("duplicate label at frame {frame}")));
        }
        let mut claims: BTreeMap<TrackId, Vec<usize>> = BTreeMap::new();
        for (i, o) in objs.iter().enumerate() {
            for &(id, _) in &o.union {
                if !self.is_open(id) {
                    return Err(Error::Inconsistent(format!("object {} claims closed track {id}", o.label)));
                }
                claims.entry(id).or_default().push(i);
            }
        }
        let split_parents: BTreeSet<TrackId> = claims
            .iter()
            .filter(|(_, c)| c.len() >= 2)
            .map(|(id, _)| *id)
            .collect();

        let mut assigned = Vec::with_capacity(objs.len());
        let mut events = Vec::new();
        let mut retire = BTreeSet::new();
        for o in &objs {
            let split_child = o.union.iter().any(|(id, _)| split_parents.contains(id));
            let id = if o.union.is_empty() {
                let id = self.fresh();
                events.push(EventRecord {
                    kind: EventKind::Birth,
                    frame,
                    parents: vec![],
                    children: vec![id],
                });
                id
            } else if split_child {
                self.fresh()
            } else if o.union.len() >= 2 {
                let major = o
                    .union
                    .iter()
                    .map(|&(id, _)| id)
                    .max_by(|a, b| {
                        let (sa, sb) = (self.tracks[a].last_voxels, self.tracks[b].last_voxels);
                        sa.cmp(&sb).then(b.cmp(a))
                    })
                    .expect("non-empty union");
                major
            } else {
                let id = o.union[0].0;
                events.push(EventRecord {
                    kind: EventKind::Continue,
                    frame,
                    parents: vec![id],
                    children: vec![id],
                });
                id
            };
            if o.union.len() >= 2 {
                let parents: Vec<TrackId> = o.union.iter().map(|&(p, _)| p).collect();
                retire.extend(parents.iter().copied().filter(|&p| p != id));
                events.push(EventRecord {
                    kind: EventKind::Merge,
                    frame,
                    parents,
                    children: vec![id],
                });
            }
            assigned.push(id);
        }
        for p in &split_parents {
            let mut children: Vec<TrackId> = claims[p].iter().map(|&i| assigned[i]).collect();
            children.sort();
            events.push(EventRecord {
                kind: EventKind::Split,
                frame,
                parents: vec![*p],
                children,
            });
            retire.insert(*p);
        }

        for (o, &id) in objs.iter().zip(&assigned) {
            for &(p, _) in &o.union {
                let s = &self.tracks[&p];
                let kind = if split_parents.contains(&p) {
                    EventKind::Split
                } else if o.union.len() >= 2 {
                    EventKind::Merge
                } else {
                    EventKind::Continue
                };
                self.graph.edges.push(Edge {
                    from: (s.last_frame, s.last_label),
                    to: (frame, o.label),
                    kind,
                    lag: frame - s.last_frame,
                });
            }
            self.graph.nodes.push(Node {
                frame,
                label: o.label,
                track_id: id,
                voxels: o.voxels,
            });
        }
        for p in &retire {
            if let Some(s) = self.tracks.get_mut(p) {
                s.open = false;
            }
        }
        for (o, &id) in objs.iter().zip(&assigned) {
            self.tracks.insert(
                id,
                TrackState {
                    last_frame: frame,
                    last_label: o.label,
                    last_voxels: o.voxels,
                    open: true,
                },
            );
        }
        for (id, s) in self.tracks.iter_mut() {
            if s.open && s.last_frame < frame && frame - s.last_frame >= self.max_lag {
                s.open = false;
                events.push(EventRecord {
                    kind: EventKind::Death,
                    frame: s.last_frame + 1,
                    parents: vec![*id],
                    children: vec![],
                });
            }
        }

        self.history
            .push_back((frame, objs.iter().map(|o| o.label).zip(assigned.iter().copied()).collect()));
        while self.history.len() > self.max_lag {
            self.history.pop_front();
        }
        self.last_frame = Some(frame);
        sort_events(&mut events);
        self.graph.events.extend(events.iter().cloned());
        Ok(events)
    }

    fn fresh(&mut self) -> TrackId {
        let id = TrackId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Closes the sequence: tracks not observed in the final frame die.
    pub fn finish(mut self) -> TrackGraph {
        if let Some(last) = self.last_frame {
            let mut events = Vec::new();
            for (id, s) in self.tracks.iter_mut() {
                if s.open && s.last_frame < last {
                    s.open = false;
                    events.push(EventRecord {
                        kind: EventKind::Death,
                        frame: s.last_frame + 1,
                        parents: vec![*id],
                        children: vec![],
                    });
                }
            }
            sort_events(&mut events);
            self.graph.events.extend(events);
        }
        self.graph
    }

    pub fn graph(&self) -> &TrackGraph {
        &self.graph
    }

    pub(crate) fn set_scores(&mut self, scores: BTreeMap<TrackId, f64>) {
        self.graph.tracks = Some(scores);
    }
}

fn sort_events(events: &mut [EventRecord]) {
    events.sort_by(|a, b| {
        (a.kind, &a.children, &a.parents, a.frame).cmp(&(b.kind, &b.children, &b.parents, b.frame))
    });
}
