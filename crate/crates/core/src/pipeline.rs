//! The command-line workflow as library calls: `preprocess` videos into flow
//! patches, `train` on live patches, `calibrate` a threshold on labeled
//! development videos, `score` new videos, and run the one-class `bench`.
//!
//! Every command reads a [`RunConfig`] and writes under `output_dir/<command>/`.
//! Files are written atomically and rows are ordered by video id, so outputs do
//! not depend on the worker count. A video that fails to decode or score is
//! reported and skipped; the others are still processed.

use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::arrays::{ArrayFile, NamedArray};
use crate::bench::{data_dir, run_one_class_benchmark, BenchReport, Dataset};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flowprep::{extract_frames, video_maps, video_patches, FlowMapImage, PatchBatch};
use crate::gan::{load_checkpoint, save_checkpoint, train_with_callback, Checkpoint, Generator};
use crate::scoring::{
    auc, calibrate_threshold, classify_video, frame_scores, map_distribution, motion_judgment, CalibrationFile,
    KernelSpec, Label, LabeledScore, MetricsReport, MmdReference, ScoreDistribution, ScoreMode, SourceTag,
};
use crate::util::{derive_seed, write_atomic};

pub const PATCHES_FILE: &str = "patches.safetensors";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const REFERENCE_FILE: &str = "reference.safetensors";
pub const CALIBRATION_FILE: &str = "calibration.toml";

/// One input video with an optional ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<Label>,
}

/// A video that could not be processed.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFailure {
    pub id: String,
    pub error: String,
}

/// Outcome of a per-video command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandReport {
    pub processed: usize,
    pub failures: Vec<VideoFailure>,
    pub outputs: Vec<PathBuf>,
}

impl CommandReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn is_video_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .as_deref(),
        Some("y4m" | "gif")
    )
}

fn is_frame_dir(p: &Path) -> bool {
    fs::read_dir(p).is_ok_and(|rd| {
        rd.flatten()
            .any(|e| e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
    })
}

fn entry_for(path: &Path, label: Option<Label>) -> VideoEntry {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    VideoEntry {
        id,
        path: path.to_path_buf(),
        label,
    }
}

/// Read a `path,label` CSV (label column optional, paths relative to the
/// list's directory).
pub fn read_video_list(list: &Path) -> Result<Vec<VideoEntry>> {
    let base = list.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(list)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let path_col = col("path").ok_or_else(|| Error::Format(format!("{} lacks a path column", list.display())))?;
    let label_col = col("label");
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let path = base.join(&row[path_col]);
        let label = match label_col.map(|c| &row[c]) {
            Some(s) if !s.is_empty() => Some(s.parse()?),
            _ => None,
        };
        out.push(entry_for(&path, label));
    }
    Ok(out)
}

/// Expand command-line inputs into videos: `.csv` files are video lists, a
/// directory holding PNG files is one frame-directory video, other directories
/// are scanned (non-recursively) for `.y4m` / `.gif` files and frame
/// directories, and anything else is taken as a video file. Ids are file stems
/// and must be unique.
pub fn collect_videos(inputs: &[PathBuf]) -> Result<Vec<VideoEntry>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            out.extend(read_video_list(input)?);
        } else if input.is_dir() && !is_frame_dir(input) {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(format!("listing {}", input.display()), e))?
                .flatten()
                .map(|e| e.path())
                .filter(|p| is_video_file(p) || (p.is_dir() && is_frame_dir(p)))
                .collect();
            found.sort();
            out.extend(found.iter().map(|p| entry_for(p, None)));
        } else {
            out.push(entry_for(input, None));
        }
    }
    let mut seen = BTreeMap::new();
    for e in &out {
        if let Some(prev) = seen.insert(e.id.clone(), e.path.clone()) {
            return Err(Error::Config(format!(
                "video id {:?} is used by both {} and {}",
                e.id,
                prev.display(),
                e.path.display()
            )));
        }
    }
    Ok(out)
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn command_dir(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    Ok(dir)
}

fn failures_csv(failures: &[VideoFailure]) -> String {
    let mut s = String::from("video_id,error\n");
    for f in failures {
        let _ = writeln!(s, "{},\"{}\"", f.id, f.error.replace('"', "'"));
    }
    s
}

/// Decode a video and render its model input maps.
fn load_maps(entry: &VideoEntry, cfg: &RunConfig) -> Result<Vec<FlowMapImage>> {
    let video = extract_frames(&entry.path, cfg.preprocess.fps)?;
    video_maps(&video, &cfg.preprocess)
}

/// Turn videos into flow-map PNGs and patch containers:
/// `preprocess/<id>/maps/map_NNNN.png`, `preprocess/<id>/patches.safetensors`
/// (+ `.csv` provenance), and `preprocess/manifest.csv`.
pub fn cmd_preprocess(cfg: &RunConfig, videos: &[VideoEntry]) -> Result<CommandReport> {
    cfg.validate()?;
    let out = command_dir(cfg, "preprocess")?;
    let prep = &cfg.preprocess;
    let results: Vec<Result<(usize, usize)>> = pool(cfg)?.install(|| {
        videos
            .par_iter()
            .map(|v| {
                let maps = load_maps(v, cfg)?;
                let patches = video_patches(&maps, prep.window, prep.stride)?;
                let dir = out.join(&v.id);
                let map_dir = dir.join("maps");
                fs::create_dir_all(&map_dir).map_err(|e| Error::io(format!("creating {}", map_dir.display()), e))?;
                for (i, m) in maps.iter().enumerate() {
                    m.save_png(map_dir.join(format!("map_{i:04}.png")))?;
                }
                patches.save(dir.join(PATCHES_FILE))?;
                Ok((maps.len(), patches.len()))
            })
            .collect()
    });
    let mut report = CommandReport::default();
    let mut manifest = String::from("video_id,maps,patches\n");
    for (v, r) in videos.iter().zip(results) {
        match r {
            Ok((maps, patches)) => {
                report.processed += 1;
                let _ = writeln!(manifest, "{},{maps},{patches}", v.id);
            }
            Err(e) => {
                log::warn!("{}: {e}", v.id);
                report.failures.push(VideoFailure {
                    id: v.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let manifest_path = out.join("manifest.csv");
    write_atomic(&manifest_path, manifest.as_bytes())?;
    report.outputs.push(manifest_path);
    if !report.failures.is_empty() {
        let p = out.join("failures.csv");
        write_atomic(&p, failures_csv(&report.failures).as_bytes())?;
        report.outputs.push(p);
    }
    Ok(report)
}

/// Patch containers under the given files or directories (recursively), sorted.
pub fn find_patch_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let rd = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == PATCHES_FILE) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for i in inputs {
        if i.is_dir() {
            walk(i, &mut out)?;
        } else {
            out.push(i.clone());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data("no patch files found".into()));
    }
    Ok(out)
}

/// Mean patch score per map index, in index order.
fn frame_means(scores: &[f64], batch: &PatchBatch) -> Vec<f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (s, o) in scores.iter().zip(&batch.provenance) {
        let e = acc.entry(o.frame_idx).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    acc.values().map(|(s, n)| s / *n as f64).collect()
}

/// Live reference distribution: pooled per-frame scores of the training
/// videos, capped by seeded subsampling.
pub fn reference_distribution(
    g: &Generator<f32>,
    batches: &[PatchBatch],
    mode: ScoreMode,
    cap: usize,
    seed: u64,
) -> Result<ScoreDistribution> {
    let mut pooled = Vec::new();
    for b in batches {
        pooled.extend(frame_means(&frame_scores(g, b, mode)?, b));
    }
    Ok(ScoreDistribution::new(pooled, SourceTag::Reference, "reference")?.capped(cap, seed))
}

pub fn save_reference(reference: &ScoreDistribution, mode: ScoreMode, path: &Path) -> Result<()> {
    let mut file = ArrayFile::default();
    file.arrays.push(NamedArray::f64(
        "scores",
        vec![reference.len()],
        reference.samples.clone(),
    ));
    file.metadata.insert("score_mode".into(), mode.to_string());
    file.save(path)
}

pub fn load_reference(path: &Path) -> Result<(ScoreDistribution, ScoreMode)> {
    let file = ArrayFile::load(path)?;
    let mode = file
        .metadata
        .get("score_mode")
        .ok_or_else(|| Error::Format("reference lacks score_mode".into()))?
        .parse()?;
    let dist = ScoreDistribution::new(file.get("scores")?.to_f64(), SourceTag::Reference, "reference")?;
    Ok((dist, mode))
}

/// Train on every patch container found under `patch_inputs`. Writes
/// `train/checkpoint.safetensors` after every epoch, `train/history.csv`, and
/// the live reference distribution `train/reference.safetensors`.
pub fn cmd_train(cfg: &RunConfig, patch_inputs: &[PathBuf]) -> Result<CommandReport> {
    cfg.validate()?;
    let out = command_dir(cfg, "train")?;
    let files = find_patch_files(patch_inputs)?;
    let batches = files.iter().map(PatchBatch::load).collect::<Result<Vec<_>>>()?;
    let all = PatchBatch::concat(&batches)?;
    let tcfg = cfg.training();
    log::info!(
        "training on {} patches from {} files for {} epochs",
        all.len(),
        files.len(),
        tcfg.epochs
    );
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let (g, d, history) = train_with_callback(&all, &tcfg, &[], &mut |epoch, g, d, h| {
        log::info!("epoch {epoch}: recon {:.5}", h.recon_loss[epoch - 1]);
        save_checkpoint(
            &Checkpoint {
                generator: g.clone(),
                discriminator: d.clone(),
                epoch,
                loss_weights: tcfg.loss_weights,
            },
            &ckpt_path,
        )
    })?;
    drop(all);
    let history_path = out.join("history.csv");
    history.save_csv(&history_path)?;
    let reference = reference_distribution(
        &g,
        &batches,
        cfg.score.mode,
        cfg.score.reference_cap,
        cfg.stage_seed("reference"),
    )?;
    let ref_path = out.join(REFERENCE_FILE);
    save_reference(&reference, cfg.score.mode, &ref_path)?;
    drop(d);
    Ok(CommandReport {
        processed: files.len(),
        failures: Vec::new(),
        outputs: vec![ckpt_path, history_path, ref_path],
    })
}

/// Per-video scoring result.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnalysis {
    pub id: String,
    pub frame_scores: Vec<f64>,
    /// `None` when motion judgment is disabled.
    pub has_motion: Option<bool>,
    pub truth: Option<Label>,
}

fn analyze(entry: &VideoEntry, g: &Generator<f32>, cfg: &RunConfig, mode: ScoreMode) -> Result<VideoAnalysis> {
    let maps = load_maps(entry, cfg)?;
    let m = &cfg.score.motion;
    let has_motion = if m.enabled {
        let seed = derive_seed(cfg.stage_seed("motion"), &entry.id);
        Some(motion_judgment(&maps, m.n_pairs, m.epsilon, seed)?)
    } else {
        None
    };
    let dist = map_distribution(g, &maps, &cfg.preprocess, mode, &entry.id)?;
    Ok(VideoAnalysis {
        id: entry.id.clone(),
        frame_scores: dist.samples,
        has_motion,
        truth: entry.label,
    })
}

fn analyze_all(
    cfg: &RunConfig,
    g: &Generator<f32>,
    mode: ScoreMode,
    videos: &[VideoEntry],
) -> Result<(Vec<VideoAnalysis>, Vec<VideoFailure>)> {
    let results: Vec<Result<VideoAnalysis>> =
        pool(cfg)?.install(|| videos.par_iter().map(|v| analyze(v, g, cfg, mode)).collect());
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (v, r) in videos.iter().zip(results) {
        match r {
            Ok(a) => ok.push(a),
            Err(e) => {
                log::warn!("{}: {e}", v.id);
                failed.push(VideoFailure {
                    id: v.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    ok.sort_by(|a, b| a.id.cmp(&b.id));
    failed.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((ok, failed))
}

fn load_model(model_dir: &Path) -> Result<(Generator<f32>, ScoreDistribution, ScoreMode)> {
    let ckpt = load_checkpoint(model_dir.join(CHECKPOINT_FILE))?;
    let (reference, mode) = load_reference(&model_dir.join(REFERENCE_FILE))?;
    Ok((ckpt.generator, reference, mode))
}

fn passes_filter(a: &VideoAnalysis) -> bool {
    a.has_motion != Some(false)
}

/// One row of the video report.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDecision {
    pub id: String,
    /// Absent when the motion filter already decided the video.
    pub mmd_score: Option<f64>,
    pub has_motion: Option<bool>,
    pub label: Label,
    pub truth: Option<Label>,
}

fn video_report_csv(rows: &[VideoDecision]) -> String {
    let mut s = String::from("video_id,mmd_score,has_motion,label\n");
    for r in rows {
        let score = r.mmd_score.map(|x| x.to_string()).unwrap_or_default();
        let motion = r.has_motion.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{score},{motion},{}", r.id, r.label);
    }
    s
}

fn frame_scores_csv(analyses: &[VideoAnalysis]) -> String {
    let mut s = String::from("video_id,frame_idx,score\n");
    for a in analyses {
        for (i, x) in a.frame_scores.iter().enumerate() {
            let _ = writeln!(s, "{},{i},{x}", a.id);
        }
    }
    s
}

fn mmd_scores(reference: &MmdReference, analyses: &[VideoAnalysis]) -> Result<Vec<Option<f64>>> {
    analyses
        .iter()
        .map(|a| {
            if passes_filter(a) {
                let d = ScoreDistribution::new(a.frame_scores.clone(), SourceTag::Test, &a.id)?;
                reference.score(&d).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Fit the threshold on labeled development videos. Videos rejected by the
/// motion filter are decided already and take no part in the fit. Writes
/// `calibrate/calibration.toml` and `calibrate/dev_report.csv`.
pub fn cmd_calibrate(cfg: &RunConfig, model_dir: &Path, videos: &[VideoEntry]) -> Result<CommandReport> {
    cfg.validate()?;
    if let Some(v) = videos.iter().find(|v| v.label.is_none()) {
        return Err(Error::Data(format!("development video {} has no label", v.id)));
    }
    let out = command_dir(cfg, "calibrate")?;
    let (g, reference, mode) = load_model(model_dir)?;
    let (analyses, failures) = analyze_all(cfg, &g, mode, videos)?;

    let kernel = match &cfg.score.kernel {
        Some(k) => k.clone(),
        None => {
            let mut pooled = reference.samples.clone();
            for a in analyses.iter().filter(|a| passes_filter(a)) {
                pooled.extend(&a.frame_scores);
            }
            KernelSpec::median_heuristic(&pooled, cfg.stage_seed("kernel"))
        }
    };
    let mmd_ref = MmdReference::new(reference, kernel.clone())?;
    let scores = mmd_scores(&mmd_ref, &analyses)?;
    let dev: Vec<LabeledScore> = analyses
        .iter()
        .zip(&scores)
        .filter_map(|(a, s)| s.map(|s| LabeledScore::new(s, a.truth.expect("checked above"))))
        .collect();
    let result = calibrate_threshold(&dev)?;
    log::info!(
        "threshold {} (dev FAR {:.4}, FRR {:.4}, HTER {:.4})",
        result.threshold,
        result.dev_far,
        result.dev_frr,
        result.dev_hter
    );
    let cal = CalibrationFile {
        result,
        score_mode: mode,
        kernel,
    };
    let cal_path = out.join(CALIBRATION_FILE);
    cal.save(&cal_path)?;
    let rows = decide(&analyses, &scores, &cal)?;
    let report_path = out.join("dev_report.csv");
    write_atomic(&report_path, video_report_csv(&rows).as_bytes())?;
    finish(out, analyses.len(), failures, vec![cal_path, report_path])
}

fn finish(
    out: PathBuf,
    processed: usize,
    failures: Vec<VideoFailure>,
    mut outputs: Vec<PathBuf>,
) -> Result<CommandReport> {
    if !failures.is_empty() {
        let p = out.join("failures.csv");
        write_atomic(&p, failures_csv(&failures).as_bytes())?;
        outputs.push(p);
    }
    Ok(CommandReport {
        processed,
        failures,
        outputs,
    })
}

fn decide(analyses: &[VideoAnalysis], scores: &[Option<f64>], cal: &CalibrationFile) -> Result<Vec<VideoDecision>> {
    analyses
        .iter()
        .zip(scores)
        .map(|(a, s)| {
            let label = match s {
                Some(s) => classify_video(*s, &cal.result)?,
                None => Label::Spoof,
            };
            Ok(VideoDecision {
                id: a.id.clone(),
                mmd_score: *s,
                has_motion: a.has_motion,
                label,
                truth: a.truth,
            })
        })
        .collect()
}

/// Error rates of the final decisions (motion filter included) and the AUC of
/// the video ranking, with filtered videos ranked above every scored one.
/// `None` unless every row has a truth label and both labels occur.
pub fn decision_metrics(rows: &[VideoDecision]) -> Result<Option<MetricsReport>> {
    let Some(truth) = rows.iter().map(|r| r.truth).collect::<Option<Vec<Label>>>() else {
        return Ok(None);
    };
    let n_live = truth.iter().filter(|l| **l == Label::Live).count();
    let n_spoof = truth.len() - n_live;
    if n_live == 0 || n_spoof == 0 {
        return Ok(None);
    }
    let false_accept = rows
        .iter()
        .filter(|r| r.truth == Some(Label::Spoof) && r.label == Label::Live)
        .count();
    let false_reject = rows
        .iter()
        .filter(|r| r.truth == Some(Label::Live) && r.label == Label::Spoof)
        .count();
    let top = rows.iter().filter_map(|r| r.mmd_score).fold(0.0f64, f64::max) + 1.0;
    let ranked: Vec<LabeledScore> = rows
        .iter()
        .zip(&truth)
        .map(|(r, &l)| LabeledScore::new(r.mmd_score.unwrap_or(top), l))
        .collect();
    let far = false_accept as f64 / n_spoof as f64;
    let frr = false_reject as f64 / n_live as f64;
    Ok(Some(MetricsReport {
        far,
        frr,
        hter: (far + frr) / 2.0,
        auc: auc(&ranked)?,
        n_live,
        n_spoof,
    }))
}

/// Score videos against the calibrated model. Writes `score/frame_scores.csv`,
/// `score/video_report.csv` and, when every video is labeled,
/// `score/metrics.toml`.
pub fn cmd_score(
    cfg: &RunConfig,
    model_dir: &Path,
    calibration: &Path,
    videos: &[VideoEntry],
) -> Result<(CommandReport, Vec<VideoDecision>)> {
    cfg.validate()?;
    let out = command_dir(cfg, "score")?;
    let cal = CalibrationFile::load(calibration)?;
    let (g, reference, mode) = load_model(model_dir)?;
    if mode != cal.score_mode {
        return Err(Error::Config(format!(
            "reference was built with {mode} scores but calibration used {}",
            cal.score_mode
        )));
    }
    let (analyses, failures) = analyze_all(cfg, &g, mode, videos)?;
    let mmd_ref = MmdReference::new(reference, cal.kernel.clone())?;
    let scores = mmd_scores(&mmd_ref, &analyses)?;
    let rows = decide(&analyses, &scores, &cal)?;

    let frames_path = out.join("frame_scores.csv");
    write_atomic(&frames_path, frame_scores_csv(&analyses).as_bytes())?;
    let report_path = out.join("video_report.csv");
    write_atomic(&report_path, video_report_csv(&rows).as_bytes())?;
    let mut outputs = vec![frames_path, report_path];
    if let Some(m) = decision_metrics(&rows)? {
        log::info!("FAR {:.4} FRR {:.4} HTER {:.4} AUC {:.4}", m.far, m.frr, m.hter, m.auc);
        let p = out.join("metrics.toml");
        let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&p, text.as_bytes())?;
        outputs.push(p);
    }
    let report = finish(out, analyses.len(), failures, outputs)?;
    Ok((report, rows))
}

/// Run the one-class benchmark on the dataset named in `cfg.bench`, read from
/// the dataset cache (see [`data_dir`]). Writes `bench/bench.csv`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let out = command_dir(cfg, "bench")?;
    let settings = cfg.benchmark();
    let dataset = Dataset::load(&settings.dataset, data_dir())?;
    let report = run_one_class_benchmark(&dataset, &settings)?;
    report.save_csv(out.join("bench.csv"))?;
    Ok(report)
}
