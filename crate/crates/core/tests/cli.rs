//! The `mrmon` binary: exit codes, diagnostics and the corrupt tool.

use std::path::Path;
use std::process::{Command, Output};

use mrmon::cli::RunConfig;
use mrmon::imgops::{read_ppm, write_ppm, Image};

fn mrmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrmon")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_config_round_trips() {
    let o = mrmon(&["default-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    let shipped = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&shipped).unwrap(), RunConfig::default());
}

#[test]
fn evaluate_before_calibrate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrmon(&["--workspace", path(dir.path()), "evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mrmon calibrate"), "{}", stderr(&o));
}

#[test]
fn calibrate_before_train_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrmon(&["--workspace", path(dir.path()), "calibrate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mrmon train"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, RunConfig::default().to_toml().replace("desk_scale", "desk_scaled")).unwrap();
    let o = mrmon(&["--config", path(&cfg), "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("desk_scaled"), "{}", stderr(&o));

    let o = mrmon(&["--config", path(&dir.path().join("absent.toml")), "train"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_writes_a_deterministic_image() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(40, 30, |x, y| [(x * 6) as u8, (y * 8) as u8, 128]);
    let input = dir.path().join("in.ppm");
    write_ppm(&input, &img).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mrmon(&[
            "corrupt",
            path(&input),
            path(&out),
            "--kind",
            "gaussian_noise",
            "--severity",
            "3",
            "--rng-seed",
            "9",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read_ppm(&out).unwrap()
    };
    let a = run("a.ppm");
    assert_eq!(a, run("b.ppm"));
    assert_ne!(a, img);

    let o = mrmon(&["corrupt", path(&input), path(&dir.path().join("c.ppm")), "--kind", "fog", "--severity", "6"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(mrmon(&["corrupt", "a.ppm", "b.ppm", "--kind", "hail", "--severity", "1"]).status.code(), Some(1));
    assert_eq!(mrmon(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(mrmon(&["--help"]).status.code(), Some(0));
}
