use std::process::Command;

use gcd::harness::ExperimentSpec;

fn gcd(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gcd")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn help_succeeds() {
    assert_eq!(gcd(&["--help"]).0, 0);
    assert_eq!(gcd(&["sweep", "--help"]).0, 0);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.bin");
    let (code, err) = gcd(&["build-featureset", "--scene", "/nonexistent/scene.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::desk();
    spec.model.heads = 3;
    let path = dir.path().join("spec.toml");
    std::fs::write(&path, spec.to_toml().unwrap()).unwrap();
    let out = dir.path().join("o");
    let (code, err) = gcd(&["single-scenario", "--spec", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("heads"), "{err}");

    std::fs::write(&path, "name = 3").unwrap();
    assert_eq!(gcd(&["single-scenario", "--spec", path.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 2);
}

#[test]
fn wrong_file_kind_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    std::fs::write(p("junk.bin"), b"not a checkpoint").unwrap();
    let (code, _) = gcd(&[
        "eval", "--checkpoint", &p("junk.bin"), "--dataset", &p("junk.bin"), "--features", &p("junk.bin"), "--report",
        &p("r"),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn divergent_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let mut spec = ExperimentSpec::desk();
    spec.model.l = 1;
    spec.train.lr_initial = 1e200;
    spec.train.epochs = 3;
    spec.train.batch_size = 8;
    std::fs::write(p("spec.toml"), spec.to_toml().unwrap()).unwrap();
    let ok = |args: &[&str]| assert_eq!(gcd(args).0, 0, "{args:?}");
    ok(&["scene-gen", "--seed", "2", "--buildings", "5", "--side", "60", "--out", &p("scene.toml")]);
    ok(&["build-featureset", "--scene", &p("scene.toml"), "--out", &p("f.bin")]);
    ok(&[
        "gen-dataset", "--scene", &p("scene.toml"), "--features", &p("f.bin"), "--count", "16", "--out", &p("d.bin"),
    ]);
    let (code, err) = gcd(&[
        "train", "--dataset", &p("d.bin"), "--val", &p("d.bin"), "--features", &p("f.bin"), "--config",
        &p("spec.toml"), "--out", &p("m.ckpt"),
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("non-finite") || err.contains("loss"), "{err}");
}
