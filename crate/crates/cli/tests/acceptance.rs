//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails, except those listed as known
//! shortfalls (printed as FAIL with the reason).

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use portiontrack::dfmt::match_frame;
use portiontrack::eval::{evaluate, metrics, Confusion, EvalReport};
use portiontrack::events::{EventRecord, FrameObject, TrackRegistry};
use portiontrack::runner::frame_features;
use portiontrack::synth::benchmark_scripts;
use portiontrack::{
    best_match, extended_search, pearson, render, Dims, EventKind, FeatureVolume, LabelVolume, Method, Portion,
    PortionSpec, SynthDataset, TrackGraph, TrackId, TrackerConfig,
};
use portiontrack_cli::commands::track_source;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2026;

struct Line {
    name: String,
    pass: bool,
    detail: String,
    known: Option<&'static str>,
}

#[derive(Default)]
struct Report {
    lines: Vec<Line>,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.push(name, pass, detail, None);
    }

    fn push(&mut self, name: &str, pass: bool, detail: String, known: Option<&'static str>) {
        let tag = if pass { "PASS" } else { "FAIL" };
        match (pass, known) {
            (false, Some(why)) => println!("{tag} {name}: {detail} [known shortfall: {why}]"),
            _ => println!("{tag} {name}: {detail}"),
        }
        self.lines.push(Line {
            name: name.to_string(),
            pass,
            detail,
            known,
        });
    }
}

// ---------------------------------------------------------------- oracles

/// Two-pass Pearson correlation written without reference to the library.
fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Window of `feats` around `c`, edges replicated, x fastest then y, z, channel.
fn oracle_window(feats: &FeatureVolume, c: [usize; 3], r: [usize; 3]) -> Vec<f64> {
    let d = feats.dims();
    let mut out = Vec::new();
    for m in 0..d.d {
        for dz in -(r[2] as i64)..=r[2] as i64 {
            for dy in -(r[1] as i64)..=r[1] as i64 {
                for dx in -(r[0] as i64)..=r[0] as i64 {
                    let x = (c[0] as i64 + dx).clamp(0, d.x as i64 - 1) as usize;
                    let y = (c[1] as i64 + dy).clamp(0, d.y as i64 - 1) as usize;
                    let z = (c[2] as i64 + dz).clamp(0, d.z as i64 - 1) as usize;
                    out.push(feats.values()[x + d.x * (y + d.y * (z + d.z * m))] as f64);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- criteria

fn correlation_oracle(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    let mut count = 0;
    for i in 0..1200 {
        let r = [rng.random_range(0..=3), rng.random_range(0..=3), rng.random_range(0..=2)];
        let channels = rng.random_range(1..=4);
        let n = (2 * r[0] + 1) * (2 * r[1] + 1) * (2 * r[2] + 1) * channels;
        let offset = [0.0, 1e3, -50.0][i % 3];
        let a: Vec<f64> = (0..n).map(|_| offset + rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = match i % 4 {
            0 => (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
            1 => a.iter().map(|x| 2.5 * x - 7.0 + 0.01 * rng.random_range(-1.0..1.0)).collect(),
            2 => a.iter().map(|x| -x + 0.3 * rng.random_range(-1.0..1.0)).collect(),
            _ => vec![offset + 0.25; n],
        };
        let mk = |values: Vec<f64>| Portion {
            object_id: 1,
            frame: 1,
            center: [0, 0, 0],
            r,
            channels,
            values,
        };
        let (pa, pb) = (mk(a.clone()), mk(b.clone()));
        let got = pearson(&pa, &pb).unwrap();
        if i % 4 == 3 || n == 1 {
            zero_ok &= got == 0.0 && pearson(&pb, &pa).unwrap() == 0.0;
        }
        worst = worst.max((got - oracle_pearson(&a, &b)).abs());
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    rep.check(
        "[PRIMARY] correlation oracle",
        worst <= 1e-10 && zero_ok && secs < 5.0,
        format!("{count} pairs, max |diff| {worst:.2e} (tol 1e-10), zero-variance exact 0: {zero_ok}, {secs:.2} s (< 5 s)"),
    );
}

fn extended_search_equivalence(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut agree = 0;
    let mut worst: f64 = 0.0;
    let cases = 50;
    for _ in 0..cases {
        let dims = Dims::new(
            rng.random_range(4..=16),
            rng.random_range(4..=16),
            rng.random_range(1..=4),
            rng.random_range(1..=3),
        )
        .unwrap();
        let mut labels = vec![0u32; dims.voxels()];
        for id in 1..=rng.random_range(1..=5u32) {
            let lo = [rng.random_range(0..dims.x), rng.random_range(0..dims.y), rng.random_range(0..dims.z)];
            let hi = [
                (lo[0] + rng.random_range(0..5)).min(dims.x - 1),
                (lo[1] + rng.random_range(0..5)).min(dims.y - 1),
                (lo[2] + rng.random_range(0..2)).min(dims.z - 1),
            ];
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        labels[dims.index(x, y, z)] = id;
                    }
                }
            }
        }
        let past_labels = LabelVolume::new(dims.with_channels(1), labels, 1).unwrap();
        let random_feats = |rng: &mut ChaCha8Rng, t| {
            FeatureVolume::new(dims, (0..dims.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect(), t).unwrap()
        };
        let past_feats = random_feats(&mut rng, 1);
        let mut cur_feats = random_feats(&mut rng, 2);
        // half the cases plant a shifted copy of the past volume so real peaks exist
        if rng.random_bool(0.5) {
            let v: Vec<f32> = past_feats.values().iter().map(|x| 3.0 * x + 1.0).collect();
            cur_feats = FeatureVolume::new(dims, v, 2).unwrap();
        }
        let r = [rng.random_range(0..=2), rng.random_range(0..=2), rng.random_range(0..=1)];
        let spec = PortionSpec {
            r,
            r_ext: [16, 16, 4],
            max_lag: 1,
            ..Default::default()
        };
        let center = [rng.random_range(0..dims.x), rng.random_range(0..dims.y), rng.random_range(0..dims.z)];
        let mut q = Portion::extract(&cur_feats, 9, center, r);
        q.frame = 2;
        let got = extended_search(&q, &past_labels, &past_feats, &spec).unwrap();

        let mut want: BTreeMap<u32, ([usize; 3], f64)> = BTreeMap::new();
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    let id = past_labels.get(x, y, z);
                    if id == 0 {
                        continue;
                    }
                    let rho = oracle_pearson(&q.values, &oracle_window(&past_feats, [x, y, z], r));
                    let e = want.entry(id).or_insert(([x, y, z], rho));
                    if rho > e.1 {
                        *e = ([x, y, z], rho);
                    }
                }
            }
        }
        let mut ok = got.len() == want.len();
        for c in &got {
            match want.get(&c.object_id) {
                Some(&(wc, wr)) => {
                    worst = worst.max((c.rho - wr).abs());
                    ok &= wc == c.center && (c.rho - wr).abs() <= 1e-10;
                }
                None => ok = false,
            }
        }
        // overall argmax agrees as well
        let set = best_match(q.key(), got.clone(), -1.0);
        let top = want
            .iter()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(a.0)))
            .map(|(id, _)| *id);
        ok &= set.accepted.first().map(|a| a.object_id) == top;
        agree += usize::from(ok);
    }
    rep.check(
        "[PRIMARY] extended-search equivalence",
        agree == cases,
        format!("{agree}/{cases} randomized cases agree with the exhaustive oracle, max |rho diff| {worst:.2e}"),
    );
}

/// Expected events and identifiers for one frame, from the rules alone.
fn rule_table(unions: &[BTreeSet<u32>], sizes: &[usize], next_fresh: u32) -> (Vec<EventRecord>, Vec<u32>) {
    let frame = 2;
    let mut claim_count: BTreeMap<u32, usize> = BTreeMap::new();
    for u in unions {
        for &p in u {
            *claim_count.entry(p).or_insert(0) += 1;
        }
    }
    let shared = |p: &u32| claim_count[p] >= 2;
    let mut fresh = next_fresh;
    let mut ids = Vec::new();
    let mut events = Vec::new();
    for u in unions {
        let id = if u.is_empty() {
            fresh += 1;
            events.push((EventKind::Birth, vec![], vec![fresh - 1]));
            fresh - 1
        } else if u.iter().any(shared) {
            fresh += 1;
            fresh - 1
        } else if u.len() == 1 {
            let p = *u.iter().next().unwrap();
            events.push((EventKind::Continue, vec![p], vec![p]));
            p
        } else {
            // largest parent, first (smallest id) among equals
            let mut best = *u.iter().next().unwrap();
            for &p in u {
                if sizes[p as usize - 1] > sizes[best as usize - 1] {
                    best = p;
                }
            }
            best
        };
        if u.len() >= 2 {
            events.push((EventKind::Merge, u.iter().copied().collect(), vec![id]));
        }
        ids.push(id);
    }
    for (&p, &n) in &claim_count {
        if n >= 2 {
            let children = unions
                .iter()
                .zip(&ids)
                .filter(|(u, _)| u.contains(&p))
                .map(|(_, &id)| id)
                .collect();
            events.push((EventKind::Split, vec![p], children));
        }
    }
    for p in 1..=sizes.len() as u32 {
        if !claim_count.contains_key(&p) {
            events.push((EventKind::Death, vec![p], vec![]));
        }
    }
    let mut records: Vec<EventRecord> = events
        .into_iter()
        .map(|(kind, mut parents, mut children)| {
            parents.sort();
            children.sort();
            EventRecord {
                kind,
                frame,
                parents: parents.into_iter().map(TrackId).collect(),
                children: children.into_iter().map(TrackId).collect(),
            }
        })
        .collect();
    records.sort();
    (records, ids)
}

fn event_rule_oracle(rep: &mut Report) {
    // sizes include a tie (tracks 1 and 3) so the id tie-break is exercised
    let sizes_all = [30usize, 10, 30, 20];
    let mut total = 0usize;
    let mut agree = 0usize;
    let mut first_bad = None;
    for n_past in 0..=4usize {
        let sizes = &sizes_all[..n_past];
        let mut base = TrackRegistry::new("oracle", 1);
        let seed_objs: Vec<FrameObject> = (0..n_past)
            .map(|i| FrameObject {
                label: i as u32 + 1,
                voxels: sizes[i],
                union: vec![],
            })
            .collect();
        base.step(1, &seed_objs).unwrap();
        for n_cur in 0..=4usize {
            let subsets = 1usize << n_past;
            let configs = subsets.pow(n_cur as u32);
            for code in 0..configs {
                let mut c = code;
                let unions: Vec<BTreeSet<u32>> = (0..n_cur)
                    .map(|_| {
                        let mask = c % subsets;
                        c /= subsets;
                        (0..n_past).filter(|b| mask >> b & 1 == 1).map(|b| b as u32 + 1).collect()
                    })
                    .collect();
                let objs: Vec<FrameObject> = unions
                    .iter()
                    .enumerate()
                    .map(|(i, u)| FrameObject {
                        label: i as u32 + 1,
                        voxels: 5,
                        union: u.iter().map(|&p| (TrackId(p), 1)).collect(),
                    })
                    .collect();
                let mut reg = base.clone();
                let mut got = reg.step(2, &objs).unwrap();
                for e in &mut got {
                    e.parents.sort();
                    e.children.sort();
                }
                got.sort();
                let got_ids: Vec<u32> = (1..=n_cur as u32).map(|l| reg.track_at(2, l).unwrap().0).collect();
                let (want, want_ids) = rule_table(&unions, sizes, n_past as u32 + 1);
                total += 1;
                if got == want && got_ids == want_ids {
                    agree += 1;
                } else if first_bad.is_none() {
                    first_bad = Some(format!("{unions:?}"));
                }
            }
        }
    }
    rep.check(
        "[PRIMARY] event-rule oracle",
        agree == total,
        format!(
            "{agree}/{total} configurations (<=4 current x <=4 past) agree{}",
            first_bad.map(|b| format!("; first disagreement {b}")).unwrap_or_default()
        ),
    );
}

fn metrics_reconstruction(rep: &mut Report) {
    let m = metrics(&Confusion {
        tp: 26,
        fp: 1,
        tn: 0,
        fn_: 5,
    });
    let two = |v: f64| (v * 10000.0).round() / 100.0;
    rep.check(
        "[PRIMARY] metrics reconstruction: precision",
        two(m.precision) == 96.30,
        format!("{:.2}% (reference 96.30%)", 100.0 * m.precision),
    );
    rep.check(
        "[PRIMARY] metrics reconstruction: sensitivity",
        two(m.sensitivity) == 83.87,
        format!("{:.2}% (reference 83.87%)", 100.0 * m.sensitivity),
    );
    rep.push(
        "[PRIMARY] metrics reconstruction: accuracy",
        two(m.accuracy) == 83.87,
        format!("{:.2}% (reference 83.87%)", 100.0 * m.accuracy),
        Some("(TP+TN)/(TP+TN+FP+FN) with TN=0 is 26/32; 83.87% is 26/31, the sensitivity"),
    );
}

struct Run {
    scene: String,
    method: Method,
    graph: TrackGraph,
    report: EvalReport,
    sha: String,
}

fn benchmark(rep: &mut Report, cfg: &TrackerConfig) -> (Vec<Run>, Vec<SynthDataset>) {
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut data = Vec::new();
    for script in benchmark_scripts() {
        let d = render(&script, SEED).unwrap();
        for m in Method::ALL {
            let out = track_source(m, &d, cfg, 1).unwrap();
            let report = evaluate(&out.graph, &d.gt).unwrap();
            runs.push(Run {
                scene: script.name.clone(),
                method: m,
                sha: out.json_sha256(),
                graph: out.graph,
                report,
            });
        }
        data.push(d);
    }
    let secs = start.elapsed().as_secs_f64();
    let rows: Vec<(String, EvalReport)> = runs.iter().map(|r| (r.scene.clone(), r.report.clone())).collect();
    println!("{}", portiontrack::eval::format_table(&rows));

    let get = |scene: &str, m: Method| runs.iter().find(|r| r.scene == scene && r.method == m).unwrap();
    let mut detail = Vec::new();
    let mut ok = true;
    for noise in ["none", "low", "medium"] {
        let scene = format!("s2/{noise}");
        let acc = |m| get(&scene, m).report.tracking_accuracy;
        let (d, i, n) = (acc(Method::Dfmt), acc(Method::Iou), acc(Method::Nn));
        ok &= d > i && d > n;
        detail.push(format!("{scene} dfmt {:.2}% iou {:.2}% nn {:.2}%", 100.0 * d, 100.0 * i, 100.0 * n));
    }
    rep.check("[PRIMARY] benchmark (a) S2 dfmt > iou, nn", ok, detail.join("; "));

    let sm = |scenes: &[&str], m: Method| {
        scenes.iter().fold(Confusion::default(), |acc, s| acc + get(s, m).report.split_merge.confusion)
    };
    let clean = metrics(&sm(&["s3-split/none", "s3-merge/none"], Method::Dfmt));
    rep.check(
        "[PRIMARY] benchmark (b) noiseless S3 S&M sensitivity = precision = 100%",
        clean.sensitivity == 1.0 && clean.precision == 1.0,
        format!("sensitivity {:.2}%, precision {:.2}%", 100.0 * clean.sensitivity, 100.0 * clean.precision),
    );
    let medium_c = sm(&["s3-split/medium", "s3-merge/medium"], Method::Dfmt);
    let medium = metrics(&medium_c);
    rep.check(
        "[PRIMARY] benchmark (b) medium-noise S3 S&M accuracy >= 80%",
        medium.accuracy >= 0.8,
        format!(
            "{:.2}% (tp {}, fp {}, fn {})",
            100.0 * medium.accuracy,
            medium_c.tp,
            medium_c.fp,
            medium_c.fn_
        ),
    );
    let s3: Vec<String> = runs.iter().filter(|r| r.scene.starts_with("s3")).map(|r| r.scene.clone()).collect();
    let s3: Vec<&str> = s3.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    let (link, iou) = (sm(&s3, Method::Link).tp, sm(&s3, Method::Iou).tp);
    rep.check(
        "[PRIMARY] benchmark (c) link detects more S3 events than iou",
        link > iou,
        format!("correctly detected split/merge events over all S3 variants: link {link}, iou {iou}"),
    );
    rep.check(
        "[PRIMARY] benchmark runtime < 10 min",
        secs < 600.0,
        format!("{} scenes x {} methods in {secs:.1} s", data.len(), Method::ALL.len()),
    );
    (runs, data)
}

fn determinism(rep: &mut Report, cfg: &TrackerConfig, runs: &[Run], data: &[SynthDataset]) {
    let mut same = 0;
    let mut diffs = Vec::new();
    for d in data {
        for m in Method::ALL {
            let out = track_source(m, d, cfg, 4).unwrap();
            let one = runs.iter().find(|r| r.scene == d.script.name && r.method == m).unwrap();
            if out.json_sha256() == one.sha {
                same += 1;
            } else {
                diffs.push(format!("{}/{m}", d.script.name));
            }
        }
    }
    rep.check(
        "[PRIMARY] determinism across 1 and 4 threads",
        diffs.is_empty(),
        format!("{same}/{} track outputs hash-equal{}", runs.len(), if diffs.is_empty() { String::new() } else { format!("; differ: {}", diffs.join(", ")) }),
    );
}

fn graph_invariants(rep: &mut Report, cfg: &TrackerConfig, runs: &[Run], data: &[SynthDataset]) {
    let mut bad = Vec::new();
    for r in runs {
        let d = data.iter().find(|d| d.script.name == r.scene).unwrap();
        let mut per_frame = BTreeMap::new();
        for a in &d.gt.assignments {
            *per_frame.entry(a.frame).or_insert(0) += 1;
        }
        let res = r
            .graph
            .check_invariants(r.method.max_lag(cfg))
            .and_then(|_| r.graph.check_conservation(&per_frame));
        if let Err(e) = res {
            bad.push(format!("{}/{}: {e}", r.scene, r.method));
        }
    }
    rep.check(
        "[PRIMARY] graph invariants",
        bad.is_empty(),
        format!("{}/{} graphs pass conservation, retired-id and arity checks{}", runs.len() - bad.len(), runs.len(), bad.first().map(|b| format!("; {b}")).unwrap_or_default()),
    );
}

type Accepted = Vec<Vec<BTreeSet<(u32, usize)>>>;

fn accepted_sets(d: &SynthDataset, cfg: &TrackerConfig, transform: impl Fn(usize, FeatureVolume) -> FeatureVolume) -> Vec<Accepted> {
    let spec = &cfg.portion;
    let mut window: Vec<(LabelVolume, FeatureVolume)> = Vec::new();
    let mut out = Vec::new();
    for t in 1..=d.frames() {
        let labels = d.labels(t).unwrap();
        let feats = transform(t, frame_features(d, t, &cfg.features).unwrap());
        let past: Vec<(&LabelVolume, &FeatureVolume)> = window.iter().map(|(l, f)| (l, f)).collect();
        let matches = match_frame(&labels, &feats, &past, spec).unwrap();
        out.push(
            matches
                .iter()
                .map(|m| {
                    m.sets
                        .iter()
                        .map(|s| s.accepted.iter().map(|a| (a.object_id, a.lag)).collect())
                        .collect()
                })
                .collect(),
        );
        window.push((labels, feats));
        if window.len() > spec.max_lag {
            window.remove(0);
        }
    }
    out
}

fn affine_invariance(rep: &mut Report, cfg: &TrackerConfig, data: &[SynthDataset]) {
    // every frame gets its own (alpha, beta), applied to all channels
    let params = [(2.0f32, -1.5f32), (0.25, 10.0), (8.0, 0.0), (0.5, -3.25)];
    let mut checked = 0;
    let mut differ = Vec::new();
    for d in data.iter().filter(|d| {
        let n = &d.script.name;
        (n.starts_with("s1") || n.starts_with("s3")) && !n.ends_with("/low")
    }) {
        let plain = accepted_sets(d, cfg, |_, f| f);
        let moved = accepted_sets(d, cfg, |t, f| {
            let (a, b) = params[t % params.len()];
            f.affine(a, b).unwrap()
        });
        let portions: usize = plain.iter().flatten().map(Vec::len).sum();
        checked += portions;
        if plain != moved {
            differ.push(d.script.name.clone());
        }
    }
    rep.check(
        "[PRIMARY] affine invariance (S1/S3)",
        differ.is_empty(),
        format!(
            "{checked} portion match sets compared under per-frame alpha>0, beta{}",
            if differ.is_empty() { String::new() } else { format!("; differ on {}", differ.join(", ")) }
        ),
    );
}

fn main() {
    // the harness passes filter arguments; this suite always runs whole
    let start = Instant::now();
    let mut rep = Report::default();
    let cfg = TrackerConfig::default();
    correlation_oracle(&mut rep);
    extended_search_equivalence(&mut rep);
    event_rule_oracle(&mut rep);
    metrics_reconstruction(&mut rep);
    let (runs, data) = benchmark(&mut rep, &cfg);
    determinism(&mut rep, &cfg, &runs, &data);
    graph_invariants(&mut rep, &cfg, &runs, &data);
    affine_invariance(&mut rep, &cfg, &data);

    let failed: Vec<&Line> = rep.lines.iter().filter(|l| !l.pass && l.known.is_none()).collect();
    let known = rep.lines.iter().filter(|l| !l.pass && l.known.is_some()).count();
    println!(
        "\nacceptance: {} passed, {} failed, {} known shortfall(s), {:.1} s",
        rep.lines.iter().filter(|l| l.pass).count(),
        failed.len(),
        known,
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for l in failed {
            eprintln!("failed: {} ({})", l.name, l.detail);
        }
        std::process::exit(1);
    }
}
