use std::path::{Path, PathBuf};
use std::process::Command;

use beamlearn::manifest::read_manifest;
use beamlearn::scene::snr_metrics;
use beamlearn::stft::{stft, StftConfig};
use beamlearn::tensorfile::{affiliations_from_tensor, read_tensor, weights_from_tensor};
use beamlearn::wav::{read_wav, write_wav, WavEncoding};
use beamlearn_cli::pgm;
use serde_json::Value;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn beamlearn(dir: &Path, args: &[&str]) -> Out {
    beamlearn_env(dir, args, &[])
}

fn beamlearn_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_beamlearn"));
    cmd.current_dir(dir).args(args).env_remove("BEAMLEARN_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let o = cmd.output().expect("run beamlearn");
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn ok(o: Out) -> Out {
    assert_eq!(o.code, 0, "stdout:\n{}\nstderr:\n{}", o.stdout, o.stderr);
    o
}

fn json(o: &Out) -> Value {
    serde_json::from_str(&o.stdout).expect("JSON on stdout")
}

/// Three one-second scenes under `dir/scenes`.
fn small_set(dir: &Path) -> PathBuf {
    ok(beamlearn(dir, &["synth", "--set", "scenes=3", "--set", "duration=1.0", "--set", "seed=4", "-o", "scenes"]));
    dir.join("scenes/manifest.jsonl")
}

#[test]
fn synth_writes_requested_scenes_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_set(dir.path());
    let records = read_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.speech.is_some() && r.noise.is_some()));

    let again = tempfile::tempdir().unwrap();
    small_set(again.path());
    for rel in ["scenes/manifest.jsonl", "scenes/scene_0002/mixture.wav", "scenes/scene_0001/scene.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(rel)).unwrap(),
            std::fs::read(again.path().join(rel)).unwrap(),
            "{rel}"
        );
    }

    let zero = beamlearn(dir.path(), &["synth", "--set", "scenes=0", "-o", "none"]);
    assert_ne!(zero.code, 0);
    let unknown = beamlearn(dir.path(), &["synth", "--set", "colour=blue", "-o", "none"]);
    assert_eq!(unknown.code, 2, "{}", unknown.stderr);
}

#[test]
fn train_smoke_run_is_finite_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_set(dir.path());
    let args = |out: &'static str| {
        [
            "train", "-m", "scenes/manifest.jsonl", "--set", "steps=10", "--set", "pa_interval=5", "--set", "pa_batch=1",
            "--set", "hidden=8", "--set", "ff=16", "-o", out,
        ]
    };
    let o = ok(beamlearn(dir.path(), &[&["--json"][..], &args("a")[..]].concat()));
    let summary = json(&o);
    assert_eq!(summary["accepted_steps"], 10);
    let trace: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/loss_trace.json")).unwrap()).unwrap();
    let losses: Vec<f64> = trace.as_array().unwrap().iter().map(|s| s["loss"].as_f64().unwrap()).collect();
    assert_eq!(losses.len(), 10);
    assert!(losses.iter().all(|l| l.is_finite()));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["checkpoint"], summary["checkpoint"]);

    ok(beamlearn(dir.path(), &args("b")));
    assert_eq!(
        std::fs::read(dir.path().join("a/loss_trace.json")).unwrap(),
        std::fs::read(dir.path().join("b/loss_trace.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("a/checkpoint.json")).unwrap(),
        std::fs::read(dir.path().join("b/checkpoint.json")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = beamlearn(dir.path(), &["train", "-m", "absent.jsonl", "-o", "ck"]);
    assert_eq!(missing.code, 2, "{}", missing.stderr);
    assert!(missing.stderr.contains("absent.jsonl"));
    assert_eq!(beamlearn(dir.path(), &["no-such-command"]).code, 2);
    assert_eq!(beamlearn(dir.path(), &["em"]).code, 2);
    let bad_threads = beamlearn_env(dir.path(), &["synth", "-o", "x"], &[("BEAMLEARN_THREADS", "0")]);
    assert_eq!(bad_threads.code, 2);
    std::fs::write(dir.path().join("bad.kv"), "steps = many\n").unwrap();
    std::fs::write(dir.path().join("m.jsonl"), "").unwrap();
    let bad_value = beamlearn(dir.path(), &["train", "-m", "m.jsonl", "--config", "bad.kv", "-o", "ck"]);
    assert_eq!(bad_value.code, 2, "{}", bad_value.stderr);
}

#[test]
fn enhance_exports_masks_and_keeps_duration() {
    let dir = tempfile::tempdir().unwrap();
    small_set(dir.path());
    ok(beamlearn(
        dir.path(),
        &["train", "-m", "scenes/manifest.jsonl", "--set", "steps=2", "--set", "hidden=8", "--set", "ff=16", "-o", "ck"],
    ));
    let o = ok(beamlearn(
        dir.path(),
        &[
            "--threads", "1", "enhance", "-c", "ck", "-i", "scenes/scene_0000/mixture.wav", "-o", "out/enh.wav",
            "--extra-em-step", "--pool", "median", "--export-masks", "masks",
        ],
    ));
    assert!(o.stdout.contains("extra_em_step"));

    let input = read_wav(dir.path().join("scenes/scene_0000/mixture.wav")).unwrap();
    let output = read_wav(dir.path().join("out/enh.wav")).unwrap();
    assert_eq!(output.num_channels(), 1);
    let shift = StftConfig::default().shift;
    assert!(input.len().abs_diff(output.len()) <= shift);

    let g = affiliations_from_tensor(&read_tensor(dir.path().join("masks/masks.btf")).unwrap()).unwrap();
    assert_eq!(g.classes(), 2);
    for k in 0..2 {
        let (w, h, px) = pgm::decode(&std::fs::read(dir.path().join(format!("masks/mask_{k}.pgm"))).unwrap()).unwrap();
        assert_eq!((w, h), (g.frames(), g.bins()));
        for (row, f) in (0..h).rev().enumerate() {
            for t in 0..w {
                assert_eq!(px[row * w + t], (255.0 * g.get(k, t, f)).round() as u8);
            }
        }
    }

    let mono = input.select(&[0]);
    write_wav(dir.path().join("mono.wav"), &mono, WavEncoding::Float32).unwrap();
    let e = beamlearn(dir.path(), &["enhance", "-c", "ck", "-i", "mono.wav", "-o", "x.wav"]);
    assert_eq!(e.code, 1);
    assert!(e.stderr.contains("two channels"), "{}", e.stderr);
}

#[test]
fn em_trace_is_monotone_and_defaults_to_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    small_set(dir.path());
    let run = |iters: &str| {
        let o = ok(beamlearn(
            dir.path(),
            &["--json", "em", "-i", "scenes/scene_0001/mixture.wav", "--iterations", iters, "--export-masks", "em"],
        ));
        json(&o)["log_likelihood"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>()
    };
    let one = run("1");
    let many = run("50");
    assert_eq!(one.len(), 1);
    assert_eq!(many.len(), 50);
    assert_eq!(one[0], many[0]);
    for w in many.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    let g = affiliations_from_tensor(&read_tensor(dir.path().join("em/masks.btf")).unwrap()).unwrap();
    assert_eq!(g.classes(), 2);
    assert!(dir.path().join("em/mixture_shapes.btf").exists());
}

#[test]
fn evaluation_detects_unaligned_em_masks() {
    let dir = tempfile::tempdir().unwrap();
    small_set(dir.path());
    let d = tempfile::tempdir().unwrap();
    let single = d.path().join("one.jsonl");
    let rec = read_manifest(dir.path().join("scenes/manifest.jsonl")).unwrap().remove(2);
    std::fs::write(&single, beamlearn::manifest::format_manifest(&[rec]).unwrap()).unwrap();
    let score = |pa: &str| {
        ok(beamlearn(
            dir.path(),
            &[
                "em", "-i", "scenes/scene_0002/mixture.wav", "--iterations", "20", "--pa", pa, "--export-weights",
                &format!("w_{pa}/scene_0002.btf"),
            ],
        ));
        let o = ok(beamlearn(
            dir.path(),
            &["--json", "eval", "-m", single.to_str().unwrap(), "--method", "weights", "--weights-dir", &format!("w_{pa}")],
        ));
        json(&o)["mean_gain_db"].as_f64().unwrap()
    };
    let on = score("on");
    let off = score("off");
    assert!(off < on - 1.0, "aligned {on:.2} dB, unaligned {off:.2} dB");
    // the other scenes have no stored weights
    let all = beamlearn(dir.path(), &["eval", "-m", "scenes/manifest.jsonl", "--method", "weights", "--weights-dir", "w_on"]);
    assert_eq!(all.code, 1);
    assert!(all.stderr.contains("scene_0000.btf"), "{}", all.stderr);
}

#[test]
fn evaluation_table_matches_library_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_set(dir.path());
    let identity = json(&ok(beamlearn(dir.path(), &["--json", "eval", "-m", "scenes/manifest.jsonl", "--method", "identity"])));
    for s in identity["scenes"].as_array().unwrap() {
        assert!(s["gain_ref0_db"].as_f64().unwrap().abs() < 1e-12);
    }

    let o = ok(beamlearn(
        dir.path(),
        &["eval", "-m", "scenes/manifest.jsonl", "--method", "oracle", "--out", "oracle.json"],
    ));
    assert!(o.stdout.contains("mean"));
    let table: Value = serde_json::from_slice(&std::fs::read(dir.path().join("oracle.json")).unwrap()).unwrap();
    let cfg = StftConfig::default();
    for (rec, row) in read_manifest(&manifest).unwrap().iter().zip(table["scenes"].as_array().unwrap()) {
        assert_eq!(row["id"], rec.id.as_str());
        let (x, n) = rec.load_components().unwrap();
        let (x, n) = (stft(&x, &cfg).unwrap(), stft(&n, &cfg).unwrap());
        let y = stft(&rec.load_mixture().unwrap(), &cfg).unwrap();
        let g = beamlearn::scene::oracle_masks(&x, &n).unwrap();
        let (_, w, _) = beamlearn::beamformer::enhance(&y, &g).unwrap();
        let r = snr_metrics(&x, &n, &w).unwrap();
        assert!((row["output_snr_db"].as_f64().unwrap() - r.output_snr_db).abs() < 1e-9);
        assert!((row["gain_db"].as_f64().unwrap() - r.gain_db).abs() < 1e-9);
    }

    std::fs::write(dir.path().join("bare.jsonl"), "{\"id\":\"a\",\"mixture\":\"scenes/scene_0000/mixture.wav\"}\n").unwrap();
    let e = beamlearn(dir.path(), &["eval", "-m", "bare.jsonl", "--method", "oracle"]);
    assert_eq!(e.code, 1);
    assert!(e.stderr.contains("oracle"), "{}", e.stderr);
}

#[test]
fn weights_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    small_set(dir.path());
    ok(beamlearn(
        dir.path(),
        &["em", "-i", "scenes/scene_0000/mixture.wav", "--iterations", "3", "--export-weights", "w.btf"],
    ));
    let w = weights_from_tensor(&read_tensor(dir.path().join("w.btf")).unwrap()).unwrap();
    assert_eq!((w.bins, w.dims), (257, 6));
}
