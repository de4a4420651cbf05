use std::path::Path;
use std::process::{Command, Output};

fn imagery(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imagery"))
        .args(args)
        .current_dir(dir)
        .env_remove("IMAGERY_DATA_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = imagery(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    imagery(dir, args).status.code().unwrap()
}

#[test]
fn synth_is_idempotent_and_snapshots_config() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let msg = ok(p, &["synth", "--task", "mi", "--trials", "6", "--seed", "7", "-o", "a.eegr"]);
    assert!(msg.contains("6 trials"), "{msg}");
    ok(p, &["synth", "--task", "mi", "--trials", "6", "--seed", "7", "-o", "b.eegr"]);
    assert_eq!(std::fs::read(p.join("a.eegr")).unwrap(), std::fs::read(p.join("b.eegr")).unwrap());
    let snap = std::fs::read_to_string(p.join("a.eegr.config.toml")).unwrap();
    assert!(snap.contains("n_trials = 6") && snap.contains("seed = 7"), "{snap}");
    // The snapshot is itself a valid config.
    ok(p, &["--config", "a.eegr.config.toml", "synth", "-o", "c.eegr"]);
    assert_eq!(std::fs::read(p.join("a.eegr")).unwrap(), std::fs::read(p.join("c.eegr")).unwrap());
}

#[test]
fn exit_codes_by_failure_class() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(p, &["synth", "--task", "mi", "--trials", "4", "--separability", "2.0"]), 2);
    assert_eq!(code(p, &["synth", "--task", "xx"]), 2);
    std::fs::write(p.join("bad.toml"), "[synth]\nno_such_key = 1\n").unwrap();
    let out = imagery(p, &["--config", "bad.toml", "synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    assert_eq!(code(p, &["train", "-i", "missing.eegr"]), 3);
    std::fs::write(p.join("junk.eegr"), b"not a recording").unwrap();
    assert_eq!(code(p, &["preprocess", "-i", "junk.eegr"]), 3);
    assert_eq!(code(p, &["report", "--rates", "0.5,2,0.5,1", "--trials", "10"]), 2);
}

#[test]
fn data_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_imagery"))
        .args(["synth", "--task", "vi", "--trials", "3", "-o", "x.eegr"])
        .env("IMAGERY_DATA_DIR", d.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("x.eegr").exists());
}

#[test]
fn full_grid_and_profile_mismatch() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["synth", "--task", "mi", "--trials", "8", "--seed", "1", "-o", "mi.eegr"]);
    let grid =
        ok(p, &["train", "-i", "mi.eegr", "--kinds", "all", "--profiles", "all", "--epochs", "2", "--out-dir", "m"]);
    let models = std::fs::read_dir(p.join("m"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "eegm"));
    assert_eq!(models.count(), 18);
    for kind in ["Ridge", "Knn", "DecisionTree", "LinearSvm", "Mlp", "CompactCnn"] {
        assert!(grid.lines().any(|l| l.starts_with(kind) && l.matches('.').count() == 3), "{grid}");
    }
    assert!(grid.contains('*') && grid.contains('+'));
    assert_eq!(
        std::fs::read_to_string(p.join("m/mi-grid.txt")).unwrap(),
        grid.lines().take(grid.lines().count() - 1).map(|l| format!("{l}\n")).collect::<String>()
    );

    let evald = ok(p, &["eval", "-i", "mi.eegr", "-m", "m/mi-ridge-f60.eegm"]);
    assert!(evald.contains("mi-ridge-f60.eegm"));

    ok(p, &["synth", "--task", "vi", "--trials", "6", "--seed", "2", "-o", "vi.eegr"]);
    ok(p, &["train", "-i", "vi.eegr", "--kinds", "ridge", "--profiles", "f40", "--out-dir", "m"]);
    ok(p, &["synth", "--online", "1", "--seed", "3", "-o", "on.eegr"]);
    // VI trained on F40, MI on F60: rejected before the session starts.
    let out = imagery(
        p,
        &[
            "run-online",
            "--vi-model",
            "m/vi-ridge-f40.eegm",
            "--mi-model",
            "m/mi-ridge-f60.eegm",
            "--replay",
            "on.eegr",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!p.join("session-report.txt").exists());
}
