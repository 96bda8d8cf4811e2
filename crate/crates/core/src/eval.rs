//! Comparison of predicted lineages with ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventKind, EventRecord, TrackGraph, TrackId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub frame: usize,
    pub label: u32,
    pub gt_track: u32,
}

/// A ground-truth event: a detection of the same kind with the same
/// participants anywhere inside `window` (inclusive) counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtEvent {
    pub kind: EventKind,
    pub participants: Vec<u32>,
    pub window: [usize; 2],
    /// Participants that precede the event. Optional; when empty, parents
    /// are inferred as participants that end before another one starts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub assignments: Vec<Assignment>,
    pub events: Vec<GtEvent>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for a in &self.assignments {
            if a.label == 0 || !seen.insert((a.frame, a.label)) {
                return Err(Error::GroundTruth(format!(
                    "bad or duplicate assignment for label {} at frame {}",
                    a.label, a.frame
                )));
            }
        }
        let tracks: BTreeSet<u32> = self.assignments.iter().map(|a| a.gt_track).collect();
        for e in &self.events {
            if e.window[0] > e.window[1] {
                return Err(Error::GroundTruth(format!("{} window {:?} is reversed", e.kind.name(), e.window)));
            }
            if let Some(p) = e.participants.iter().find(|p| !tracks.contains(p)) {
                return Err(Error::GroundTruth(format!(
                    "{} event references unknown track {p}",
                    e.kind.name()
                )));
            }
            if let Some(p) = e.parents.iter().find(|p| !e.participants.contains(p)) {
                return Err(Error::GroundTruth(format!(
                    "{} event lists parent {p} outside its participants",
                    e.kind.name()
                )));
            }
        }
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<GroundTruth> {
        let gt: GroundTruth = serde_json::from_slice(&std::fs::read(path)?)?;
        gt.validate()?;
        Ok(gt)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn lookup(&self) -> BTreeMap<(usize, u32), u32> {
        self.assignments.iter().map(|a| ((a.frame, a.label), a.gt_track)).collect()
    }

    pub fn frames(&self) -> BTreeSet<usize> {
        self.assignments.iter().map(|a| a.frame).collect()
    }

    /// Builds ground truth from a graph, treating its track ids as truth.
    pub fn from_graph(g: &TrackGraph, window: usize) -> GroundTruth {
        let assignments = g
            .nodes
            .iter()
            .map(|n| Assignment {
                frame: n.frame,
                label: n.label,
                gt_track: n.track_id.0,
            })
            .collect();
        let events = g
            .events
            .iter()
            .filter(|e| e.kind != EventKind::Continue && !(e.kind == EventKind::Birth && e.frame == 1))
            .map(|e| {
                let mut participants: Vec<u32> = e.parents.iter().chain(&e.children).map(|t| t.0).collect();
                participants.sort();
                participants.dedup();
                let mut parents: Vec<u32> = e.parents.iter().map(|t| t.0).collect();
                parents.sort();
                GtEvent {
                    kind: e.kind,
                    participants,
                    window: [e.frame.saturating_sub(window), e.frame + window],
                    parents,
                }
            })
            .collect();
        GroundTruth { assignments, events }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub accuracy: f64,
}

/// Precision, sensitivity and accuracy; a 0/0 ratio is taken as 1.
pub fn metrics(c: &Confusion) -> Metrics {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Metrics {
        precision: ratio(c.tp, c.tp + c.fp),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.tp + c.fp + c.tn + c.fn_),
    }
}

pub const SCORED_KINDS: [EventKind; 4] = [EventKind::Birth, EventKind::Death, EventKind::Split, EventKind::Merge];

/// Event confusion per kind. Frame-1 births are the initial population and
/// are not scored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventConfusion {
    pub per_kind: BTreeMap<EventKind, Confusion>,
}

impl EventConfusion {
    pub fn get(&self, kind: EventKind) -> Confusion {
        self.per_kind.get(&kind).copied().unwrap_or_default()
    }

    pub fn split_merge(&self) -> Confusion {
        self.get(EventKind::Split) + self.get(EventKind::Merge)
    }
}

/// Maps predicted track ids to ground-truth ids around an event.
struct Lineage {
    gt: BTreeMap<(usize, u32), u32>,
    by_track: BTreeMap<TrackId, BTreeMap<usize, u32>>,
}

impl Lineage {
    fn new(pred: &TrackGraph, gt: &GroundTruth) -> Self {
        let mut by_track: BTreeMap<TrackId, BTreeMap<usize, u32>> = BTreeMap::new();
        for n in &pred.nodes {
            by_track.entry(n.track_id).or_default().insert(n.frame, n.label);
        }
        Lineage {
            gt: gt.lookup(),
            by_track,
        }
    }

    /// Ground-truth id of the track's last node before `frame`.
    fn before(&self, id: TrackId, frame: usize) -> Option<u32> {
        let (&f, &l) = self.by_track.get(&id)?.range(..frame).next_back()?;
        self.gt.get(&(f, l)).copied()
    }

    fn at(&self, id: TrackId, frame: usize) -> Option<u32> {
        let &l = self.by_track.get(&id)?.get(&frame)?;
        self.gt.get(&(frame, l)).copied()
    }

    fn participants(&self, e: &EventRecord) -> Option<BTreeSet<u32>> {
        let mut out = BTreeSet::new();
        for p in &e.parents {
            out.insert(self.before(*p, e.frame)?);
        }
        for c in &e.children {
            out.insert(self.at(*c, e.frame)?);
        }
        Some(out)
    }
}

/// Window-based event matching. Each ground-truth window consumes at most
/// one prediction of its kind with identical participants; leftover
/// predictions are false positives and unmatched windows false negatives.
pub fn match_events(pred: &TrackGraph, gt: &GroundTruth) -> Result<EventConfusion> {
    gt.validate()?;
    let lineage = Lineage::new(pred, gt);
    let mut out = EventConfusion::default();
    for kind in SCORED_KINDS {
        let mut preds: Vec<(usize, Option<BTreeSet<u32>>)> = pred
            .events_of(kind)
            .filter(|e| !(kind == EventKind::Birth && e.frame == 1))
            .map(|e| (e.frame, lineage.participants(e)))
            .collect();
        preds.sort();
        let mut gts: Vec<(&GtEvent, BTreeSet<u32>)> = gt
            .events
            .iter()
            .filter(|e| e.kind == kind && !(kind == EventKind::Birth && e.window[1] <= 1))
            .map(|e| (e, e.participants.iter().copied().collect()))
            .collect();
        gts.sort_by(|a, b| (a.0.window, &a.1).cmp(&(b.0.window, &b.1)));
        let mut used = vec![false; preds.len()];
        let mut c = Confusion::default();
        for (e, parts) in &gts {
            let hit = preds.iter().enumerate().position(|(i, (f, p))| {
                !used[i] && (e.window[0]..=e.window[1]).contains(f) && p.as_ref() == Some(parts)
            });
            match hit {
                Some(i) => {
                    used[i] = true;
                    c.tp += 1;
                }
                None => c.fn_ += 1,
            }
        }
        c.fp = used.iter().filter(|u| !**u).count();
        out.per_kind.insert(kind, c);
    }
    Ok(out)
}

/// Fraction of ground-truth nodes whose predicted predecessors map to the
/// same ground-truth ids as their true predecessors. A node that starts a
/// ground-truth track is correct only if the prediction also has no
/// predecessor for it (or exactly the true event parents).
pub fn tracking_accuracy(pred: &TrackGraph, gt: &GroundTruth) -> Result<f64> {
    gt.validate()?;
    let lookup = gt.lookup();
    let mut frames_of: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for a in &gt.assignments {
        frames_of.entry(a.gt_track).or_default().insert(a.frame);
    }
    let last = |g: u32| *frames_of[&g].last().unwrap();
    let first = |g: u32| *frames_of[&g].first().unwrap();
    let mut partners: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for e in gt.events.iter().filter(|e| matches!(e.kind, EventKind::Split | EventKind::Merge)) {
        let parents: Vec<u32> = if e.parents.is_empty() {
            e.participants
                .iter()
                .copied()
                .filter(|&p| e.participants.iter().any(|&q| last(p) < first(q)))
                .collect()
        } else {
            e.parents.clone()
        };
        for &a in &e.participants {
            partners
                .entry(a)
                .or_default()
                .extend(parents.iter().copied().filter(|&b| b != a));
        }
    }
    let mut pred_sources: BTreeMap<(usize, u32), BTreeSet<Option<u32>>> = BTreeMap::new();
    for e in &pred.edges {
        pred_sources
            .entry(e.to)
            .or_default()
            .insert(lookup.get(&e.from).copied());
    }
    if gt.assignments.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for a in &gt.assignments {
        let g = a.gt_track;
        let prev = frames_of[&g].range(..a.frame).next_back().copied();
        let mut want: BTreeSet<Option<u32>> = prev.map(|_| Some(g)).into_iter().collect();
        // event parents that ended after g's previous node and before this one
        for &p in partners.get(&g).into_iter().flatten() {
            let lp = last(p);
            if lp < a.frame && prev.is_none_or(|pf| lp >= pf) {
                want.insert(Some(p));
            }
        }
        let got = pred_sources.get(&(a.frame, a.label)).cloned().unwrap_or_default();
        if got == want {
            correct += 1;
        }
    }
    Ok(correct as f64 / gt.assignments.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    #[serde(flatten)]
    pub confusion: Confusion,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl From<Confusion> for KindScore {
    fn from(c: Confusion) -> Self {
        KindScore {
            confusion: c,
            metrics: metrics(&c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub tracking_accuracy: f64,
    pub birth: KindScore,
    pub death: KindScore,
    pub split: KindScore,
    pub merge: KindScore,
    pub split_merge: KindScore,
}

/// Frames of the prediction and the ground truth must coincide.
pub fn check_alignment(pred: &TrackGraph, gt: &GroundTruth) -> Result<()> {
    let pf: BTreeSet<usize> = pred.nodes.iter().map(|n| n.frame).collect();
    let gf = gt.frames();
    if pf != gf {
        let only_pred: Vec<_> = pf.difference(&gf).take(3).collect();
        let only_gt: Vec<_> = gf.difference(&pf).take(3).collect();
        return Err(Error::GroundTruth(format!(
            "frames misaligned (prediction only: {only_pred:?}, ground truth only: {only_gt:?})"
        )));
    }
    Ok(())
}

pub fn evaluate(pred: &TrackGraph, gt: &GroundTruth) -> Result<EvalReport> {
    check_alignment(pred, gt)?;
    let ev = match_events(pred, gt)?;
    Ok(EvalReport {
        method: pred.method.clone(),
        tracking_accuracy: tracking_accuracy(pred, gt)?,
        birth: ev.get(EventKind::Birth).into(),
        death: ev.get(EventKind::Death).into(),
        split: ev.get(EventKind::Split).into(),
        merge: ev.get(EventKind::Merge).into(),
        split_merge: ev.split_merge().into(),
    })
}

/// Text table with one row per `(scene, report)`.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let head = [
        "Scene",
        "Method",
        "Tracking Accuracy",
        "Split Accuracy",
        "Merge Accuracy",
        "S&M Accuracy",
        "S&M Sensitivity",
        "S&M Precision",
    ];
    let pct = |v: f64| format!("{:.2}%", 100.0 * v);
    let mut cells: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
    for (scene, r) in rows {
        cells.push(vec![
            scene.clone(),
            r.method.clone(),
            pct(r.tracking_accuracy),
            pct(r.split.metrics.accuracy),
            pct(r.merge.metrics.accuracy),
            pct(r.split_merge.metrics.accuracy),
            pct(r.split_merge.metrics.sensitivity),
            pct(r.split_merge.metrics.precision),
        ]);
    }
    let widths: Vec<usize> = (0..head.len())
        .map(|k| cells.iter().map(|r| r[k].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Edge, Node};
    use proptest::prelude::*;

    fn conf(tp: usize, fp: usize, fn_: usize) -> Confusion {
        Confusion { tp, fp, tn: 0, fn_ }
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&conf(26, 1, 5));
        assert!((m.precision - 26.0 / 27.0).abs() < 1e-12);
        assert!((m.sensitivity - 26.0 / 31.0).abs() < 1e-12);
        // (TP + TN) / (TP + FP + TN + FN) with TN = 0 is 26/32
        assert!((m.accuracy - 26.0 / 32.0).abs() < 1e-12);
        assert_eq!(format!("{:.2}", 100.0 * m.precision), "96.30");
        assert_eq!(format!("{:.2}", 100.0 * m.sensitivity), "83.87");
        let m = metrics(&conf(1, 1, 0));
        assert_eq!((m.precision, m.sensitivity), (0.5, 1.0));
        let m = metrics(&Confusion::default());
        assert_eq!((m.precision, m.sensitivity, m.accuracy), (1.0, 1.0, 1.0));
    }

    /// Ground truth with one track per label, lineage given by `events`.
    fn gt(nodes: &[(usize, u32, u32)], events: Vec<GtEvent>) -> GroundTruth {
        GroundTruth {
            assignments: nodes
                .iter()
                .map(|&(frame, label, gt_track)| Assignment { frame, label, gt_track })
                .collect(),
            events,
        }
    }

    fn graph(nodes: &[(usize, u32, u32)], edges: &[((usize, u32), (usize, u32))], events: Vec<EventRecord>) -> TrackGraph {
        TrackGraph {
            method: "test".into(),
            nodes: nodes
                .iter()
                .map(|&(frame, label, id)| Node {
                    frame,
                    label,
                    track_id: TrackId(id),
                    voxels: 1,
                })
                .collect(),
            edges: edges
                .iter()
                .map(|&(from, to)| Edge {
                    from,
                    to,
                    kind: EventKind::Continue,
                    lag: to.0 - from.0,
                })
                .collect(),
            events,
            tracks: None,
        }
    }

    fn split_event(frame: usize, parent: u32, children: &[u32]) -> EventRecord {
        EventRecord {
            kind: EventKind::Split,
            frame,
            parents: vec![TrackId(parent)],
            children: children.iter().map(|&c| TrackId(c)).collect(),
        }
    }

    /// Parent 1 on frames 1..=9 (label 1), children 2 and 3 from frame 10.
    fn split_scene() -> Vec<(usize, u32, u32)> {
        let mut n: Vec<_> = (1..=9).map(|t| (t, 1, 1)).collect();
        for t in 10..=14 {
            n.push((t, 1, 2));
            n.push((t, 2, 3));
        }
        n
    }

    fn split_gt() -> GroundTruth {
        gt(
            &split_scene(),
            vec![GtEvent {
                kind: EventKind::Split,
                participants: vec![1, 2, 3],
                window: [8, 12],
                parents: vec![1],
            }],
        )
    }

    #[test]
    fn split_inside_window_is_tp() {
        let g = graph(&split_scene(), &[], vec![split_event(10, 1, &[2, 3])]);
        let c = match_events(&g, &split_gt()).unwrap().get(EventKind::Split);
        assert_eq!(c, conf(1, 0, 0));
    }

    #[test]
    fn split_outside_window_is_fp_and_fn() {
        // same lineage but the split reported late
        let mut nodes: Vec<_> = (1..=19).map(|t| (t, 1, 1)).collect();
        nodes.extend((20..=22).flat_map(|t| [(t, 1, 2), (t, 2, 3)]));
        let gtn: Vec<_> = nodes.iter().map(|&(f, l, _)| (f, l, if f < 20 { 1 } else { l + 1 })).collect();
        let truth = gt(
            &gtn,
            vec![GtEvent {
                kind: EventKind::Split,
                participants: vec![1, 2, 3],
                window: [8, 12],
                parents: vec![1],
            }],
        );
        let g = graph(&nodes, &[], vec![split_event(20, 1, &[2, 3])]);
        assert_eq!(match_events(&g, &truth).unwrap().get(EventKind::Split), conf(0, 1, 1));
    }

    #[test]
    fn duplicate_prediction_is_one_tp_one_fp() {
        let g = graph(
            &split_scene(),
            &[],
            vec![split_event(10, 1, &[2, 3]), split_event(10, 1, &[2, 3])],
        );
        assert_eq!(match_events(&g, &split_gt()).unwrap().get(EventKind::Split), conf(1, 1, 0));
    }

    #[test]
    fn wrong_participants_do_not_match() {
        let mut nodes = split_scene();
        nodes.extend((1..=14).map(|t| (t, 9, 9)));
        let mut truth = split_gt();
        truth.assignments.extend((1..=14).map(|t| Assignment { frame: t, label: 9, gt_track: 9 }));
        let g = graph(&nodes, &[], vec![split_event(10, 9, &[2, 3])]);
        assert_eq!(match_events(&g, &truth).unwrap().get(EventKind::Split), conf(0, 1, 1));
    }

    #[test]
    fn missing_kind_is_false_negative() {
        let g = graph(&split_scene(), &[], vec![]);
        let c = match_events(&g, &split_gt()).unwrap().get(EventKind::Split);
        assert_eq!(c, conf(0, 0, 1));
        assert!(metrics(&c).sensitivity < 1.0);
    }

    #[test]
    fn unknown_gt_track_is_an_error() {
        let mut truth = split_gt();
        truth.events[0].participants.push(42);
        let g = graph(&split_scene(), &[], vec![]);
        assert!(matches!(match_events(&g, &truth), Err(Error::GroundTruth(_))));
    }

    fn chain(n: usize) -> Vec<(usize, u32, u32)> {
        (1..=n).map(|t| (t, 1, 1)).collect()
    }

    #[test]
    fn identity_switch_counting() {
        // 100 links over two objects; two of them point to the other object
        let mut nodes = vec![];
        for t in 1..=51 {
            nodes.push((t, 1, 1));
            nodes.push((t, 2, 2));
        }
        let truth = gt(&nodes, vec![]);
        let mut edges = vec![];
        for t in 1..=50 {
            if t == 20 {
                edges.push(((t, 1), (t + 1, 2)));
                edges.push(((t, 2), (t + 1, 1)));
            } else {
                edges.push(((t, 1), (t + 1, 1)));
                edges.push(((t, 2), (t + 1, 2)));
            }
        }
        let g = graph(&nodes, &edges, vec![]);
        // 102 nodes: 2 births correct, 98 of 100 links correct
        assert!((tracking_accuracy(&g, &truth).unwrap() - 100.0 / 102.0).abs() < 1e-12);
    }

    #[test]
    fn broken_links_leave_only_births() {
        let truth = gt(&chain(10), vec![]);
        let g = graph(&chain(10), &[], vec![]);
        assert!((tracking_accuracy(&g, &truth).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn split_children_need_parent_link() {
        let truth = split_gt();
        let mut edges: Vec<_> = (1..9).map(|t| ((t, 1), (t + 1, 1))).collect();
        edges.push(((9, 1), (10, 1)));
        edges.push(((9, 1), (10, 2)));
        for t in 10..14 {
            edges.push(((t, 1), (t + 1, 1)));
            edges.push(((t, 2), (t + 1, 2)));
        }
        let g = graph(&split_scene(), &edges, vec![split_event(10, 1, &[2, 3])]);
        assert_eq!(tracking_accuracy(&g, &truth).unwrap(), 1.0);
    }

    #[test]
    fn misaligned_frames_rejected() {
        let g = graph(&chain(5), &[], vec![]);
        let truth = gt(&chain(6), vec![]);
        assert!(matches!(evaluate(&g, &truth), Err(Error::GroundTruth(_))));
    }

    #[test]
    fn table_has_six_metric_columns() {
        let g = graph(&split_scene(), &[], vec![split_event(10, 1, &[2, 3])]);
        let r = evaluate(&g, &split_gt()).unwrap();
        let t = format_table(&[("s3".into(), r)]);
        let head = t.lines().next().unwrap();
        for col in ["Tracking Accuracy", "Split Accuracy", "Merge Accuracy", "S&M Accuracy", "S&M Sensitivity", "S&M Precision"] {
            assert!(head.contains(col));
        }
        assert!(t.lines().nth(2).unwrap().contains("100.00%"));
    }

    fn random_graph() -> impl Strategy<Value = TrackGraph> {
        use crate::events::{FrameObject, TrackRegistry};
        prop::collection::vec(prop::collection::vec(prop::collection::vec(0usize..3, 0..3), 0..4), 1..8).prop_map(
            |frames| {
                let mut reg = TrackRegistry::new("r", 1);
                let mut prev: Vec<u32> = vec![];
                for (t, objs) in frames.iter().enumerate() {
                    let f = t + 1;
                    let fo: Vec<FrameObject> = objs
                        .iter()
                        .enumerate()
                        .map(|(i, links)| {
                            let mut union: Vec<_> = links
                                .iter()
                                .filter(|&&j| j < prev.len())
                                .filter_map(|&j| reg.open_track_at(f - 1, prev[j]))
                                .map(|id| (id, 1))
                                .collect();
                            union.sort();
                            union.dedup();
                            FrameObject { label: i as u32 + 1, voxels: 10 + i, union }
                        })
                        .collect();
                    reg.step(f, &fo).unwrap();
                    prev = (1..=objs.len() as u32).collect();
                }
                reg.finish()
            },
        )
    }

    proptest! {
        #[test]
        fn self_evaluation_is_perfect(g in random_graph()) {
            let truth = GroundTruth::from_graph(&g, 2);
            prop_assert_eq!(tracking_accuracy(&g, &truth).unwrap(), 1.0);
            let ev = match_events(&g, &truth).unwrap();
            for k in SCORED_KINDS {
                let c = ev.get(k);
                prop_assert_eq!(c.fp + c.fn_, 0, "{:?}", k);
            }
        }

        #[test]
        fn metrics_bounded(tp in 0usize..100, fp in 0usize..100, fn_ in 0usize..100) {
            let m = metrics(&conf(tp, fp, fn_));
            for v in [m.precision, m.sensitivity, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn match_events_order_invariant(g in random_graph(), seed in any::<u64>()) {
            let truth = GroundTruth::from_graph(&g, 1);
            let mut shuffled = g.clone();
            let n = shuffled.events.len();
            if n > 1 {
                shuffled.events.rotate_left((seed as usize) % n);
                shuffled.events.swap(0, n - 1);
            }
            prop_assert_eq!(match_events(&g, &truth).unwrap(), match_events(&shuffled, &truth).unwrap());
            let ev = match_events(&g, &truth).unwrap();
            for k in SCORED_KINDS {
                let c = ev.get(k);
                let predicted = g.events_of(k).filter(|e| !(k == EventKind::Birth && e.frame == 1)).count();
                prop_assert_eq!(c.tp + c.fp, predicted);
            }
        }
    }
}
