//! End-to-end runs of the `stformer` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stformer")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Deterministic little test video written through the mask/encode pipeline.
fn write_video_sized(dir: &Path, nx: usize, frames: usize) -> PathBuf {
    // Building the video with the library itself would be circular; write
    // the STF1 container by hand instead.
    let (ny, c) = (nx, 1usize);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"STF1");
    bytes.push(0); // f32
    bytes.push(4);
    for d in [nx, ny, c, frames] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in 0..nx {
        for y in 0..ny {
            for _ch in 0..c {
                for f in 0..frames {
                    let v = (x as f32 / nx as f32 + y as f32 / ny as f32 + f as f32 / frames as f32) / 3.0;
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let path = dir.join("video.stf");
    std::fs::write(&path, bytes).unwrap();
    path
}

fn write_video(dir: &Path, frames: usize) -> PathBuf {
    write_video_sized(dir, 8, frames)
}

#[test]
fn mask_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.stf"), dir.path().join("b.stf"), dir.path().join("c.stf"));
    run_ok(&["mask", "--nx", "8", "--ny", "8", "-b", "4", "--seed", "7", "--out", &path_str(&a)]);
    run_ok(&["mask", "--nx", "8", "--ny", "8", "-b", "4", "--seed", "7", "--out", &path_str(&b)]);
    run_ok(&["mask", "--nx", "8", "--ny", "8", "-b", "4", "--seed", "8", "--out", &path_str(&c)]);
    let (fa, fb, fc) = (
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        std::fs::read(&c).unwrap(),
    );
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
    assert_eq!(&fa[0..4], b"STF1");
    assert_eq!(fa[4], 2); // u8 payload
}

#[test]
fn encode_writes_one_measurement_per_group() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path(), 32);
    let masks = dir.path().join("m.stf");
    run_ok(&["mask", "--nx", "8", "--ny", "8", "-b", "8", "--out", &path_str(&masks)]);
    let prefix = dir.path().join("meas");
    run_ok(&[
        "encode", "--video", &path_str(&video), "--masks", &path_str(&masks), "--out", &path_str(&prefix),
    ]);
    for i in 0..4 {
        assert!(dir.path().join(format!("meas_{i:03}.stf")).exists());
    }
    assert!(!dir.path().join("meas_004.stf").exists());
}

#[test]
fn encode_rejects_bad_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path(), 12);
    let masks = dir.path().join("m.stf");
    run_ok(&["mask", "--nx", "8", "--ny", "8", "-b", "8", "--out", &path_str(&masks)]);
    let out = run(&[
        "encode",
        "--video",
        &path_str(&video),
        "--masks",
        &path_str(&masks),
        "--out",
        &path_str(&dir.path().join("meas")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert!(parsed["error"].as_str().unwrap().contains("multiple"));
}

#[test]
fn full_pipeline_train_reconstruct_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    write_video_sized(&data_dir, 16, 4);
    std::fs::rename(data_dir.join("video.stf"), data_dir.join("clip.stf")).unwrap();

    let config = serde_json::json!({
        "network": {"custom": {
            "channels": 8,
            "blocks_per_stage": [2],
            "heads": 2,
            "window": (4, 4),
            "compression": 4,
            "in_channels": 1,
            "out_channels": 1,
        }},
        "stages": [{"spatial": 16, "epochs": 2, "lr": 1e-3}],
        "dataset": data_dir,
        "compression": 4,
        "eval_after": false,
    });
    let config_path = dir.path().join("train.json");
    std::fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let run_dir = dir.path().join("run");
    let stdout = run_ok(&["train", "--config", &path_str(&config_path), "--out", &path_str(&run_dir)]);
    assert!(stdout.contains("loss_curve"));
    assert!(run_dir.join("checkpoint.stfc").exists());
    assert!(run_dir.join("manifest.json").exists());

    // encode one measurement from the training clip and reconstruct it
    let masks = dir.path().join("m.stf");
    run_ok(&["mask", "--nx", "16", "--ny", "16", "-b", "4", "--seed", "3", "--out", &path_str(&masks)]);
    let prefix = dir.path().join("meas");
    run_ok(&[
        "encode",
        "--video",
        &path_str(&data_dir.join("clip.stf")),
        "--masks",
        &path_str(&masks),
        "--out",
        &path_str(&prefix),
    ]);
    let recon = dir.path().join("recon.stf");
    run_ok(&[
        "reconstruct",
        "--meas",
        &path_str(&dir.path().join("meas_000.stf")),
        "--masks",
        &path_str(&masks),
        "--checkpoint",
        &path_str(&run_dir.join("checkpoint.stfc")),
        "--out",
        &path_str(&recon),
    ]);

    let report = dir.path().join("report.json");
    let stdout = run_ok(&[
        "eval",
        "--recon",
        &path_str(&recon),
        "--truth",
        &path_str(&data_dir.join("clip.stf")),
        "--out",
        &path_str(&report),
    ]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(parsed["per_frame_psnr"].as_array().unwrap().len(), 4);
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed, on_disk);
}

#[test]
fn eval_identical_inputs_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    // SSIM window needs at least 11x11 frames
    let (nx, ny, frames) = (16usize, 16usize, 2usize);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"STF1");
    bytes.push(0);
    bytes.push(4);
    for d in [nx, ny, 1, frames] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for i in 0..nx * ny * frames {
        bytes.extend_from_slice(&((i % 97) as f32 / 97.0).to_le_bytes());
    }
    let video = dir.path().join("v.stf");
    std::fs::write(&video, bytes).unwrap();
    let report = dir.path().join("r.json");
    let stdout = run_ok(&[
        "eval", "--recon", &path_str(&video), "--truth", &path_str(&video), "--out", &path_str(&report),
    ]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(parsed["mean_ssim"].as_f64().unwrap(), 1.0);
    assert!(parsed["mean_psnr"].is_null()); // +inf sentinel maps to null
}

#[test]
fn eval_dim_mismatch_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_video(dir.path(), 4);
    let b = dir.path().join("longer.stf");
    std::fs::copy(write_video(dir.path(), 8), &b).unwrap();
    let out = run(&["eval", "--recon", &path_str(&a), "--truth", &path_str(&b), "--out", &path_str(&dir.path().join("r.json"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(serde_json::from_str::<serde_json::Value>(err.lines().last().unwrap()).is_ok());
}

#[test]
fn init_writes_estimate_cube() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path(), 4);
    let masks = dir.path().join("m.stf");
    run_ok(&["mask", "--nx", "8", "--ny", "8", "-b", "4", "--out", &path_str(&masks)]);
    let prefix = dir.path().join("meas");
    run_ok(&["encode", "--video", &path_str(&video), "--masks", &path_str(&masks), "--out", &path_str(&prefix)]);
    let est = dir.path().join("est.stf");
    let stdout = run_ok(&[
        "init",
        "--meas",
        &path_str(&dir.path().join("meas_000.stf")),
        "--masks",
        &path_str(&masks),
        "--out",
        &path_str(&est),
    ]);
    assert!(stdout.contains("[8, 8, 1, 4]"));
    assert!(est.exists());
}

#[test]
fn flops_reports_are_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flops.json");
    let stdout = run_ok(&["flops", "--preset", "S", "--out", &path_str(&out)]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(parsed["model"]["total_macs"].as_u64().unwrap() > 0);
    assert_eq!(parsed["per_block_attention"]["dims"]["c"].as_u64().unwrap(), 64);

    let out2 = dir.path().join("flops2.json");
    let stdout = run_ok(&["flops", "--dims", "14,14,2,8,7,7,2", "--measure", "--out", &path_str(&out2)]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(
        parsed["measured"]["slw_msa"].as_u64().unwrap(),
        parsed["analytic"]["slw_total"].as_u64().unwrap()
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "network": {"preset": "S"},
            "stages": [{"spatial": 8, "epochs": 0, "lr": 1e-4}],
            "dataset": dir.path(),
            "not_a_real_key": 5,
        })
        .to_string(),
    )
    .unwrap();
    let out = run(&["train", "--config", &path_str(&config_path), "--out", &path_str(&dir.path().join("run"))]);
    assert!(!out.status.success());
}
