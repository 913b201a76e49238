use std::path::Path;
use std::process::{Command, Output};

fn reps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reps")).args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const EIGHT: &str = "0 0 0\n1 0 0\n0 1 0\n0 0 1\n1 1 0\n1 0 1\n0 1 1\n1 1 1\n";

fn lines_of(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn fps_keeps_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.xyz");
    let output = dir.path().join("out.xyz");
    std::fs::write(&input, EIGHT).unwrap();
    let out = reps(&["sample", "--input", arg(&input), "--output", arg(&output), "--method", "fps", "--m", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let picked = lines_of(&output);
    let all = lines_of(&input);
    assert_eq!(picked.len(), 4);
    assert!(picked.iter().all(|l| all.contains(l)));
    let mut dedup = picked.clone();
    dedup.sort();
    dedup.dedup();
    assert_eq!(dedup.len(), 4);
}

#[test]
fn every_method_but_reps_runs_without_weights() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.xyz");
    std::fs::write(&input, EIGHT).unwrap();
    for method in ["random", "fps", "voxel"] {
        let output = dir.path().join(format!("{method}.ply"));
        let out = reps(&["sample", "--input", arg(&input), "--output", arg(&output), "--method", method, "--ratio", "2"]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(std::fs::read_to_string(&output).unwrap().starts_with("ply\n"));
    }
}

#[test]
fn reps_without_weights_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.xyz");
    std::fs::write(&input, EIGHT).unwrap();
    let out = reps(&["sample", "--input", arg(&input), "--output", "o.xyz", "--method", "reps", "--m", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--weights"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(reps(&["--help"]).status.code(), Some(0));
    assert_eq!(reps(&["sample"]).status.code(), Some(1));
    assert_eq!(reps(&["frobnicate"]).status.code(), Some(1));
    let bad = dir.path().join("bad.xyz");
    std::fs::write(&bad, "0 0 0\n1 zz 0\n").unwrap();
    let out = reps(&["convert", "--input", arg(&bad), "--output", arg(&dir.path().join("o.xyz"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let missing = dir.path().join("missing.xyz");
    let out = reps(&["convert", "--input", arg(&missing), "--output", arg(&dir.path().join("o.xyz"))]);
    assert_eq!(out.status.code(), Some(2));
    let input = dir.path().join("in.xyz");
    std::fs::write(&input, EIGHT).unwrap();
    let out = reps(&["sample", "--input", arg(&input), "--output", "o.xyz", "--method", "fps", "--m", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.bin");
    let out = reps(&[
        "train", "--dataset", "synthetic", "--per-class", "2", "--points", "64", "--model", "pointnet",
        "--epochs", "3", "--lr", "1e300", "--no-validate", "--out-weights", arg(&w),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn convert_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.xyz");
    std::fs::write(&input, "0.1234567890123 -2 3e-7 extra\n# c\n5 6 7\n").unwrap();
    let a = dir.path().join("a.ply");
    let b = dir.path().join("b.xyz");
    let c = dir.path().join("c.ply");
    assert!(reps(&["convert", "--input", arg(&input), "--output", arg(&a)]).status.success());
    assert!(reps(&["convert", "--input", arg(&a), "--output", arg(&b)]).status.success());
    assert!(reps(&["convert", "--input", arg(&b), "--output", arg(&c)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(lines_of(&b), vec!["0.123456789 -2 0.0000003", "5 6 7"]);
}

/// Trains a tiny desk-width model once and checks score rows, reps sampling
/// and repeatability of every file it produces.
#[test]
fn train_score_sample_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let w = dir.path().join(format!("w{tag}.bin"));
        let report = dir.path().join(format!("r{tag}.jsonl"));
        let out = reps(&[
            "train", "--dataset", "synthetic", "--per-class", "3", "--test-per-class", "2", "--points", "96",
            "--epochs", "2", "--batch-size", "4", "--k", "8", "--width", "desk", "--seed", "5",
            "--out-weights", arg(&w), "--report", arg(&report),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(lines_of(&report).len(), 2);

        let cloud = dir.path().join("cloud.xyz");
        std::fs::write(&cloud, reps_core::io::write_xyz(&reps_core::tasks::sample_shape(
            reps_core::tasks::ShapeKind::Cube, 96, 1).unwrap().cloud)).unwrap();
        let scores = dir.path().join(format!("s{tag}.csv"));
        let out = reps(&["score", "--input", arg(&cloud), "--weights", arg(&w), "--output", arg(&scores), "--seed", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(lines_of(&scores).len(), 97);

        let picked = dir.path().join(format!("p{tag}.xyz"));
        let out = reps(&[
            "sample", "--input", arg(&cloud), "--output", arg(&picked), "--method", "reps", "--m", "24",
            "--weights", arg(&w), "--prefilter", "--seed", "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let all = lines_of(&cloud);
        assert!(lines_of(&picked).iter().all(|l| all.contains(l)));

        let csv = dir.path().join(format!("e{tag}.csv"));
        let out = reps(&[
            "eval", "--dataset", "synthetic", "--test-per-class", "2", "--points", "96", "--task-weights", arg(&w),
            "--sampler-weights", arg(&w), "--sizes", "48,24", "--output", arg(&csv), "--seed", "5",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(lines_of(&csv).len(), 1 + 4 * 2);
        assert!(csv.with_extension("json").exists());

        let out = reps(&["score", "--input", arg(&cloud), "--weights", arg(&w), "--output", "x.csv", "--k", "4"]);
        assert_eq!(out.status.code(), Some(1));

        [w, report, scores, picked, csv.with_extension("json"), csv]
            .map(|p| std::fs::read(p).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}
