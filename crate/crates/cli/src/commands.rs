//! Subcommand implementations. Each returns `Ok` or a [`CliError`] that
//! carries the exit code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use portiontrack::dataset::{frame_path, write_synth, DatasetDir, FrameFile};
use portiontrack::eval::{evaluate, format_table, EvalReport};
use portiontrack::portion::{correlation_map, sample_portions};
use portiontrack::runner::{frame_features, FrameSource};
use portiontrack::synth::benchmark_scripts;
use portiontrack::{
    derive_features, extract_objects, render, run_method, GroundTruth, Method, SceneScript, TrackGraph,
    TrackerConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACKS_JSON: &str = "tracks.json";
pub const TRACKS_CSV: &str = "tracks.csv";
pub const TIMING_CSV: &str = "timing.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Runs `f` on a pool of `threads` workers (0 = rayon's default).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Validation(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

fn scene_by_name(name: &str) -> Result<SceneScript, CliError> {
    let scripts = benchmark_scripts();
    let names: Vec<String> = scripts.iter().map(|s| s.name.clone()).collect();
    scripts
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CliError::Validation(format!("unknown scene {name:?}; known: {}", names.join(", "))))
}

/// Renders a script (a file, or a named benchmark scene) into `out` and
/// writes a manifest of content hashes.
pub fn cmd_synth(script: Option<&Path>, scene: Option<&str>, out: &Path, seed: u64) -> Result<Manifest, CliError> {
    let script = match (script, scene) {
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            SceneScript::from_json(&text)?
        }
        (None, Some(name)) => scene_by_name(name)?,
        _ => return Err(CliError::Validation("give exactly one of --script or --scene".into())),
    };
    let data = render(&script, seed)?;
    create_dir(out)?;
    let written = write_synth(&data, out)?;
    let mut files = Vec::new();
    for p in written {
        let bytes = std::fs::read(&p).map_err(|e| io_err(&p, e))?;
        files.push(ManifestEntry {
            path: p.file_name().unwrap().to_string_lossy().into_owned(),
            sha256: sha256_hex(&bytes),
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { seed, files };
    let text = serde_json::to_string_pretty(&manifest).map_err(portiontrack::Error::from)?;
    write_file(&out.join(MANIFEST_FILE), text.as_bytes())?;
    log::info!("wrote {} frames of {:?} to {}", data.frames(), script.name, out.display());
    Ok(manifest)
}

/// Derives features for every frame and stores them next to the intensities.
pub fn cmd_features(cfg: &PipelineConfig) -> Result<usize, CliError> {
    let ds = DatasetDir::open(&cfg.dataset)?;
    let frames = ds.frames().to_vec();
    with_pool(cfg.threads, || {
        frames.par_iter().try_for_each(|&t| -> Result<(), CliError> {
            let feats = derive_features(&ds.intensity(t)?, &cfg.features)?;
            feats.write(frame_path(&cfg.dataset, t, FrameFile::Features))?;
            Ok(())
        })
    })??;
    Ok(frames.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub frame: usize,
    pub objects: usize,
    pub portions: usize,
    pub features_ms: f64,
    pub matching_ms: f64,
    pub events_ms: f64,
}

pub struct TrackOutput {
    pub graph: TrackGraph,
    pub json: String,
    pub csv: String,
    pub timing: Vec<TimingRow>,
}

impl TrackOutput {
    pub fn json_sha256(&self) -> String {
        sha256_hex(self.json.as_bytes())
    }
}

/// The tracking step of `cmd_track`, independent of where frames come from.
pub fn track_source<S: FrameSource + ?Sized>(
    method: Method,
    src: &S,
    cfg: &TrackerConfig,
    threads: usize,
) -> Result<TrackOutput, CliError> {
    let mut timing = Vec::new();
    let graph = with_pool(threads, || {
        run_method(method, src, cfg, |r, features_ms| {
            log::info!(
                "frame {}: {} objects, {} portions, lags {:?}, features {:.1} ms, matching {:.1} ms, events {:.2} ms",
                r.frame,
                r.objects,
                r.portions,
                r.lags_searched,
                features_ms,
                r.timing.matching_ms,
                r.timing.events_ms
            );
            timing.push(TimingRow {
                frame: r.frame,
                objects: r.objects,
                portions: r.portions,
                features_ms,
                matching_ms: r.timing.matching_ms,
                events_ms: r.timing.events_ms,
            });
        })
    })??;
    let mut json = graph.to_json()?;
    json.push('\n');
    let csv = graph.to_csv();
    Ok(TrackOutput {
        graph,
        json,
        csv,
        timing,
    })
}

fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("frame,objects,portions,features_ms,matching_ms,events_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.3},{:.3},{:.3}",
            r.frame, r.objects, r.portions, r.features_ms, r.matching_ms, r.events_ms
        );
    }
    s
}

/// Tracks the configured dataset and writes `tracks.json`, `tracks.csv` and
/// the per-frame timing log.
pub fn cmd_track(cfg: &PipelineConfig, timing: Option<&Path>) -> Result<TrackOutput, CliError> {
    let ds = DatasetDir::open(&cfg.dataset)?;
    let start = Instant::now();
    let out = track_source(cfg.method, &ds, &cfg.tracker(), cfg.threads)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join(TRACKS_JSON), out.json.as_bytes())?;
    write_file(&cfg.out.join(TRACKS_CSV), out.csv.as_bytes())?;
    let timing_path = timing.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(TIMING_CSV));
    write_file(&timing_path, timing_csv(&out.timing).as_bytes())?;
    log::info!(
        "{} tracked {} frames in {:.2} s: {} tracks, {} events",
        cfg.method,
        ds.frames().len(),
        start.elapsed().as_secs_f64(),
        out.graph.track_ids().len(),
        out.graph.events.len()
    );
    Ok(out)
}

/// Scores a track file against ground truth. Writes the report JSON to
/// `out` when given and returns the text table.
pub fn cmd_eval(tracks: &Path, gt: &Path, out: Option<&Path>) -> Result<(EvalReport, String), CliError> {
    let graph = TrackGraph::read_json(tracks)?;
    let truth = GroundTruth::read_json(gt)?;
    let report = evaluate(&graph, &truth)?;
    let scene = tracks
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "-".into());
    let table = format_table(&[(scene, report.clone())]);
    if let Some(p) = out {
        let text = serde_json::to_string_pretty(&report).map_err(portiontrack::Error::from)?;
        write_file(p, text.as_bytes())?;
    }
    Ok((report, table))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrmapLag {
    pub lag: usize,
    pub csv: PathBuf,
    pub pgm: PathBuf,
    pub rows: usize,
    pub peak: Option<f64>,
}

/// Correlation maps of every portion of object `label` at frame `t` against
/// frames `t - lag`. Lag 0 queries the object's own frame.
pub fn cmd_corrmap(cfg: &PipelineConfig, label: u32, t: usize, lags: &[usize]) -> Result<Vec<CorrmapLag>, CliError> {
    let ds = DatasetDir::open(&cfg.dataset)?;
    if !ds.frames().contains(&t) {
        return Err(CliError::Validation(format!("frame {t} is not in the dataset")));
    }
    let labels = ds.labels(t)?;
    let feats = frame_features(&ds, t, &cfg.features)?;
    let obj = extract_objects(&labels)
        .into_iter()
        .find(|o| o.id == label)
        .ok_or_else(|| CliError::Validation(format!("no object with label {label} at frame {t}")))?;
    let portions = sample_portions(&obj, &labels, &feats, &cfg.portion)?;
    create_dir(&cfg.out)?;
    let dims = *labels.dims();
    let mut out = Vec::new();
    for &lag in lags {
        let stem = format!("corrmap_t{t:04}_obj{label}_lag{lag}");
        let csv_path = cfg.out.join(format!("{stem}.csv"));
        let pgm_path = cfg.out.join(format!("{stem}.pgm"));
        let mut csv = String::from("portion,portion_x,portion_y,portion_z,frame,x,y,z,object_id,rho\n");
        // max rho per (x, y), projected over z; 0 marks "no candidate"
        let mut image = vec![0u8; dims.x * dims.y];
        let mut rows = 0;
        let mut peak: Option<f64> = None;
        if lag < t {
            let past_t = t - lag;
            let (pl, pf) = if lag == 0 {
                (labels.clone(), feats.clone())
            } else {
                (ds.labels(past_t)?, frame_features(&ds, past_t, &cfg.features)?)
            };
            let maps: Vec<_> = with_pool(cfg.threads, || {
                portions
                    .par_iter()
                    .map(|q| correlation_map(q, &pl, &pf, &cfg.portion))
                    .collect::<Result<Vec<_>, _>>()
            })??;
            for (i, (q, map)) in portions.iter().zip(&maps).enumerate() {
                for c in map {
                    rows += 1;
                    peak = Some(peak.map_or(c.rho, |p: f64| p.max(c.rho)));
                    let _ = writeln!(
                        csv,
                        "{i},{},{},{},{past_t},{},{},{},{},{:.6}",
                        q.center[0], q.center[1], q.center[2], c.center[0], c.center[1], c.center[2], c.object_id, c.rho
                    );
                    let px = &mut image[c.center[0] + dims.x * c.center[1]];
                    let level = 1 + ((c.rho + 1.0) / 2.0 * 254.0).round().clamp(0.0, 254.0) as u8;
                    *px = (*px).max(level);
                }
            }
        }
        write_file(&csv_path, csv.as_bytes())?;
        let mut pgm = format!("P5\n{} {}\n255\n", dims.x, dims.y).into_bytes();
        pgm.extend_from_slice(&image);
        write_file(&pgm_path, &pgm)?;
        out.push(CorrmapLag {
            lag,
            csv: csv_path,
            pgm: pgm_path,
            rows,
            peak,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub scene: String,
    pub method: Method,
    pub report: EvalReport,
    pub seconds: f64,
    pub tracks_sha256: String,
    pub events: BTreeMap<String, usize>,
}

/// Runs every method on every benchmark scene whose name contains `filter`.
/// Each graph is checked against the structural invariants.
pub fn run_benchmark(
    seed: u64,
    filter: &str,
    methods: &[Method],
    cfg: &TrackerConfig,
    threads: usize,
) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = Vec::new();
    for script in benchmark_scripts().into_iter().filter(|s| s.name.contains(filter)) {
        let data = render(&script, seed)?;
        for &method in methods {
            let start = Instant::now();
            let out = track_source(method, &data, cfg, threads)?;
            let seconds = start.elapsed().as_secs_f64();
            out.graph.check_invariants(method.max_lag(cfg))?;
            let report = evaluate(&out.graph, &data.gt)?;
            let mut events = BTreeMap::new();
            for e in &out.graph.events {
                *events.entry(e.kind.name().to_string()).or_insert(0) += 1;
            }
            log::info!("{} {}: {:.2} s", script.name, method, seconds);
            rows.push(BenchRow {
                scene: script.name.clone(),
                method,
                report,
                seconds,
                tracks_sha256: out.json_sha256(),
                events,
            });
        }
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let table: Vec<(String, EvalReport)> = rows.iter().map(|r| (r.scene.clone(), r.report.clone())).collect();
    format_table(&table)
}

/// The benchmark subcommand: runs, prints the table, and writes
/// `bench.json` plus `bench.txt` into `out`.
pub fn cmd_bench(cfg: &PipelineConfig, filter: &str, methods: &[Method]) -> Result<(Vec<BenchRow>, String), CliError> {
    let rows = run_benchmark(cfg.seed, filter, methods, &cfg.tracker(), cfg.threads)?;
    let table = bench_table(&rows);
    create_dir(&cfg.out)?;
    let json = serde_json::to_string_pretty(&rows).map_err(portiontrack::Error::from)?;
    write_file(&cfg.out.join("bench.json"), json.as_bytes())?;
    write_file(&cfg.out.join("bench.txt"), table.as_bytes())?;
    Ok((rows, table))
}
