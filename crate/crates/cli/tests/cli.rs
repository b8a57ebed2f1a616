use std::path::Path;
use std::process::{Command, Output};

fn octcyst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octcyst"))
        .current_dir(std::env::temp_dir())
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = octcyst(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(octcyst(&["phantom", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(octcyst(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(octcyst(&[]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = octcyst(&["export", "--input", "/nonexistent.ovf", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "slices=2\ncount=2\nthreshold=0.5\n").unwrap();
    let out_dir = dir.path().join("ph");
    ok(&["--config", s(&cfg), "phantom", "--out-dir", s(&out_dir), "--count", "1"]);
    let manifest = std::fs::read_to_string(out_dir.join("phantom.manifest")).unwrap();
    assert!(manifest.contains("config.slices=2\n"), "{manifest}");
    assert!(manifest.contains("config.count=1\n"), "{manifest}");
    assert!(out_dir.join("phantom_000.ovf").exists());
    assert!(!out_dir.join("phantom_001.ovf").exists());

    std::fs::write(&cfg, "bogus=1\n").unwrap();
    let out = octcyst(&["--config", s(&cfg), "phantom", "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_on_phantoms() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let prep = dir.path().join("prep");
    ok(&["phantom", "--seed", "7", "--count", "2", "--slices", "3", "--out-dir", s(&raw)]);
    let layers = std::fs::read_to_string(raw.join("phantom_000.layers.txt")).unwrap();
    assert_eq!(layers.lines().filter(|l| !l.starts_with('#')).count(), 6);

    let vols = [raw.join("phantom_000.ovf"), raw.join("phantom_001.ovf")];
    let gts = [raw.join("phantom_000_gt.ovf"), raw.join("phantom_001_gt.ovf")];
    ok(&[
        "--jobs",
        "2",
        "preprocess",
        "--input",
        s(&vols[0]),
        s(&vols[1]),
        "--gt",
        s(&gts[0]),
        s(&gts[1]),
        "--out-dir",
        s(&prep),
    ]);
    let x0 = std::fs::read_to_string(prep.join("phantom_000.x0.txt")).unwrap();
    assert_eq!(x0.lines().count(), 3);
    let manifest = std::fs::read_to_string(prep.join("preprocess.manifest")).unwrap();
    assert_eq!(manifest.matches("input.sha256.").count(), 4);

    let p0 = prep.join("phantom_000");
    let p1 = prep.join("phantom_001");
    let cake = dir.path().join("cake.ovf");
    ok(&["gmp", "--volume", s(&p0), "--out", s(&cake), "--directions", "4"]);
    let bytes = std::fs::read(&cake).unwrap();
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 12);

    let ck = dir.path().join("net.gmpc");
    ok(&[
        "train", "--volume", s(&p0), s(&p1), "--out", s(&ck), "--epochs", "2", "--checkpoint-every", "1", "--seed", "3",
    ]);
    assert!(dir.path().join("net.gmpc.e0001").exists());
    let meta = std::fs::read_to_string(dir.path().join("net.gmpc.meta")).unwrap();
    assert!(meta.contains("epoch=2\n") && meta.contains("directions=8\n"), "{meta}");

    let prob = dir.path().join("prob.ovf");
    ok(&["infer", "--checkpoint", s(&ck), "--volume", s(&p1), "--out", s(&prob)]);
    let bytes = std::fs::read(&prob).unwrap();
    let dims: Vec<u32> = (0..3)
        .map(|i| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()))
        .collect();
    assert_eq!(dims, [125, 128, 3]);
    let mismatch = octcyst(&["infer", "--checkpoint", s(&ck), "--volume", s(&p1), "--out", s(&prob), "--directions", "4"]);
    assert_eq!(mismatch.status.code(), Some(1));

    let mask = dir.path().join("mask.ovf");
    ok(&["segment", "--prob", s(&prob), "--volume", s(&p1), "--out", s(&mask)]);
    let table = dir.path().join("eval.txt");
    ok(&[
        "eval",
        "--pred",
        s(&mask),
        "--gt",
        s(&prep.join("phantom_001_roigt.ovf")),
        "--mode",
        "masked",
        "--out",
        s(&table),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "volume\tDC\tJI\tPPV\tSens\tmode\tcombiner");
    assert!(lines[1].starts_with("mask\t") && lines[1].ends_with("\tmasked-3mm\tgrader1"));
    assert!(lines[2].starts_with("mean/std\t"));

    let sweep = ok(&[
        "sweep",
        "--kind",
        "threshold",
        "--grid",
        "0.3,0.5,0.7",
        "--checkpoint",
        s(&ck),
        "--test",
        s(&p1),
    ]);
    let text = String::from_utf8(sweep.stdout).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
    let missing = octcyst(&["sweep", "--kind", "k", "--grid", "2", "--checkpoint-dir", s(dir.path()), "--test", s(&p1)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing checkpoint"));

    let pgm = dir.path().join("pgm");
    ok(&["export", "--input", s(&prob), "--out-dir", s(&pgm)]);
    let count = std::fs::read_dir(&pgm)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(count, 3);
}

#[test]
fn default_config_echo_is_the_reference_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["phantom", "--count", "1", "--slices", "2", "--out-dir", s(&raw)]);
    let prep = dir.path().join("prep");
    ok(&["preprocess", "--input", s(&raw.join("phantom_000.ovf")), "--out-dir", s(&prep)]);
    let cake = dir.path().join("cake.ovf");
    ok(&["gmp", "--volume", s(&prep.join("phantom_000")), "--out", s(&cake)]);
    let m = std::fs::read_to_string(dir.path().join("cake.ovf.manifest")).unwrap();
    for line in ["config.directions=8", "config.extent=5", "config.delta=1", "config.coalesce=min", "config.jobs=1"] {
        assert!(m.lines().any(|l| l == line), "{line} missing from\n{m}");
    }
}
