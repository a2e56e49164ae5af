//! Command-line behavior: failure isolation, exit codes and input discovery.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use livegan::bench::{generate_synthetic_video, MotionModel, SyntheticVideoSpec};
use livegan::flowprep::write_y4m;
use livegan::pipeline::collect_videos;
use livegan::Error;

fn livegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_livegan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn small_clip(dir: &Path, model: MotionModel, seed: u64) -> PathBuf {
    let spec = SyntheticVideoSpec {
        n_frames: 5,
        height: 32,
        width: 32,
        ..SyntheticVideoSpec::new(model, seed)
    };
    let (video, _) = generate_synthetic_video(&spec).unwrap();
    let path = dir.join(format!("{}.y4m", video.source_id()));
    write_y4m(video.frames(), video.fps(), &path).unwrap();
    path
}

#[test]
fn broken_videos_are_reported_and_the_rest_processed() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    small_clip(root, MotionModel::Live, 0);
    small_clip(root, MotionModel::Live, 1);
    fs::write(root.join("garbage.y4m"), b"not a video").unwrap();
    fs::write(
        root.join("videos.csv"),
        "path,label\nlive-0.y4m,live\ngarbage.y4m,live\nmissing.y4m,live\nlive-1.y4m,live\n",
    )
    .unwrap();
    let out = root.join("out");
    let o = livegan(&[
        "preprocess",
        root.join("videos.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));

    let manifest = fs::read_to_string(out.join("preprocess/manifest.csv")).unwrap();
    let ids: Vec<&str> = manifest.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["live-0", "live-1"]);
    let failures = fs::read_to_string(out.join("preprocess/failures.csv")).unwrap();
    let failed: Vec<&str> = failures.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(failed, ["garbage", "missing"]);
    assert!(out.join("preprocess/live-1/patches.safetensors").exists());
}

#[test]
fn bad_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, "[train]\nepochs = 0\n").unwrap();
    let clip = small_clip(tmp.path(), MotionModel::Live, 0);
    let o = livegan(&[
        "preprocess",
        clip.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    fs::write(&config, "[train]\nepochz = 3\n").unwrap();
    let o = livegan(&[
        "preprocess",
        clip.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibration_needs_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = small_clip(tmp.path(), MotionModel::Live, 0);
    let model = tmp.path().join("no-model");
    let o = livegan(&["calibrate", "--model", model.to_str().unwrap(), clip.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("has no label"));
}

#[test]
fn inputs_expand_directories_and_reject_duplicate_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    small_clip(root, MotionModel::SpoofHand, 3);
    small_clip(root, MotionModel::Live, 2);
    let frames = root.join("frames-a");
    fs::create_dir(&frames).unwrap();
    fs::write(frames.join("0001.png"), b"").unwrap();
    fs::write(root.join("notes.txt"), b"").unwrap();

    let found = collect_videos(&[root.to_path_buf()]).unwrap();
    let ids: Vec<&str> = found.iter().map(|v| v.id.as_str()).collect();
    assert_eq!(ids, ["frames-a", "live-2", "spoof-hand-3"]);
    assert!(found.iter().all(|v| v.label.is_none()));

    let one = collect_videos(std::slice::from_ref(&frames)).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].path, frames);

    let dup = collect_videos(&[root.to_path_buf(), root.join("live-2.y4m")]);
    assert!(matches!(dup, Err(Error::Config(_))));
}
