use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cubeprop"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scene.toml")
}

const FRAME: [&str; 4] = ["--frame-width", "640", "--frame-height", "480"];

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(dir: &Path) -> PathBuf {
    let scene = dir.join("scene");
    run(&["simulate", "--spec", fixture().to_str().unwrap(), "--out-dir", scene.to_str().unwrap()]);
    scene
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn full_run(scene: &Path, out: &Path) -> Output {
    let (dets, anns, masks) = (
        scene.join("detections.jsonl"),
        scene.join("annotations.jsonl"),
        scene.join("masks.jsonl"),
    );
    let mut args = vec![
        "run",
        "--detections",
        s(&dets),
        "--annotations",
        s(&anns),
        "--masks",
        s(&masks),
        "--out-dir",
        s(out),
        "--video-len",
        "demo=512",
    ];
    args.extend(FRAME);
    run(&args)
}

#[test]
fn simulate_writes_three_record_files() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    for f in ["detections.jsonl", "annotations.jsonl", "masks.jsonl"] {
        let text = std::fs::read_to_string(scene.join(f)).unwrap();
        assert!(text.starts_with("{\"schema\":\"cubeprop\""), "{f}");
    }
}

#[test]
fn run_closes_on_clean_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    let out = full_run(&scene, &dir.path().join("out"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean nAUDC 0.0000, mAP 1.0000"), "{stdout}");
    let report = std::fs::read_to_string(dir.path().join("out/report.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(report.lines().nth(1).unwrap()).unwrap();
    assert_eq!(record["mean_naudc"], 0.0);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    full_run(&scene, &a);
    full_run(&scene, &b);
    for f in [
        "tracked.jsonl",
        "proposals.jsonl",
        "filtered.jsonl",
        "scored.jsonl",
        "instances.jsonl",
        "merged.jsonl",
        "report.jsonl",
        "det-curves.jsonl",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stage_by_stage_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    let whole = dir.path().join("whole");
    full_run(&scene, &whole);

    let p = |name: &str| dir.path().join(name);
    let dets = scene.join("detections.jsonl");
    let anns = scene.join("annotations.jsonl");
    let masks = scene.join("masks.jsonl");
    let steps: Vec<Vec<&str>> = vec![
        vec!["track", "--detections", s(&dets), "--out", "tracked.jsonl"],
        vec!["propose", "--detections", "tracked.jsonl", "--out", "proposals.jsonl", "--video-len", "demo=512"],
        vec![
            "filter",
            "--proposals",
            "proposals.jsonl",
            "--masks",
            s(&masks),
            "--annotations",
            s(&anns),
            "--out",
            "filtered.jsonl",
        ],
        vec!["score", "--proposals", "filtered.jsonl", "--oracle", "--annotations", s(&anns), "--out", "scored.jsonl"],
        vec!["dedup", "--scored", "scored.jsonl", "--annotations", s(&anns), "--out", "instances.jsonl"],
        vec!["merge-adjacent", "--instances", "instances.jsonl", "--out", "merged.jsonl"],
        vec![
            "evaluate",
            "--instances",
            "instances.jsonl",
            "--strict-instances",
            "merged.jsonl",
            "--annotations",
            s(&anns),
            "--out",
            "report.jsonl",
            "--video-len",
            "demo=512",
        ],
    ];
    for step in steps {
        let mut args = step.clone();
        args.extend(FRAME);
        let out = bin().current_dir(dir.path()).args(&args).output().unwrap();
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["tracked.jsonl", "filtered.jsonl", "scored.jsonl", "instances.jsonl", "merged.jsonl", "report.jsonl"] {
        assert_eq!(std::fs::read(p(f)).unwrap(), std::fs::read(whole.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_input_exits_with_io_code() {
    let out = bin().args(["track", "--detections", "/nonexistent/d.jsonl", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/d.jsonl"));
}

#[test]
fn contract_violation_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    let out = bin()
        .args(["run", "--detections", s(&scene.join("detections.jsonl")), "--out-dir", s(&dir.path().join("o"))])
        .args(["--stages", "score,propose,dedup"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot follow"));

    let bad = bin().args(["--d-prop", "64", "--s-prop", "48", "bench"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn failing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = bin()
        .args(["run", "--detections", s(&scene.join("detections.jsonl"))])
        .args(["--annotations", s(&scene.join("annotations.jsonl"))])
        .args(["--masks", s(&scene.join("masks.jsonl"))])
        .args(["--scores", s(&empty), "--out-dir", s(&dir.path().join("o"))])
        .args(FRAME)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage score failed"));
}

#[test]
fn fused_scores_from_spec() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path());
    let whole = dir.path().join("whole");
    full_run(&scene, &whole);
    std::fs::copy(whole.join("scored.jsonl"), dir.path().join("a.jsonl")).unwrap();
    std::fs::copy(whole.join("scored.jsonl"), dir.path().join("b.jsonl")).unwrap();
    let spec = dir.path().join("fuse.toml");
    std::fs::write(
        &spec,
        "[[model]]\npath = \"a.jsonl\"\nweights = [0.5]\n\n[[model]]\npath = \"b.jsonl\"\nweights = [0.5]\n",
    )
    .unwrap();
    let fused = dir.path().join("fused.jsonl");
    let filtered = whole.join("filtered.jsonl");
    let mut args = vec![
        "score",
        "--proposals",
        s(&filtered),
        "--fuse",
        s(&spec),
        "--activity-classes",
        "talk",
        "--out",
        s(&fused),
    ];
    args.extend(FRAME);
    run(&args);
    assert_eq!(std::fs::read(&fused).unwrap(), std::fs::read(whole.join("scored.jsonl")).unwrap());
}

#[test]
fn bench_reports_real_time_factor() {
    let out = run(&["bench", "--detections", "100", "--video-len", "512"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for stage in ["track", "propose", "filter", "score", "dedup", "merge-adjacent", "evaluate"] {
        assert_eq!(stdout.lines().filter(|l| l.split_whitespace().next() == Some(stage)).count(), 1, "{stage}");
    }
    assert!(stdout.contains("real-time factor"));
}
