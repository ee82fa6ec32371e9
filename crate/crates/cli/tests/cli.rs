use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ttjac(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttjac"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ttjac(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// generator + samples + model in `dir`
fn pipeline(dir: &Path, threads: &str) {
    ok(
        dir,
        &[
            "--seed",
            "7",
            "generator",
            "--kind",
            "mlp",
            "--dim",
            "3",
            "--hidden",
            "8",
            "-o",
            "g.json",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "7",
            "-j",
            threads,
            "sample",
            "-g",
            "g.json",
            "-m",
            "3000",
            "--grid-size",
            "8",
            "-o",
            "s.tts",
            "--csv",
            "s.csv",
        ],
    );
    ok(
        dir,
        &[
            "--seed", "7", "-j", threads, "fit", "-s", "s.tts", "-r", "2", "--report", "r.csv",
            "-o", "m.ttm",
        ],
    );
}

#[test]
fn stages_are_byte_identical_across_runs_and_thread_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "4");
    for dir in [a.path(), b.path()] {
        fs::write(dir.join("l.csv"), "0.1,0.2,0.3\n-1,0,2\n").unwrap();
        ok(
            dir,
            &[
                "eval",
                "--model",
                "m.ttm",
                "--latents",
                "l.csv",
                "-o",
                "scores.csv",
            ],
        );
        ok(
            dir,
            &["--seed", "7", "probe", "-s", "s.tts", "-o", "spec.csv"],
        );
        ok(
            dir,
            &[
                "--seed",
                "7",
                "generator",
                "--kind",
                "identity",
                "--dim",
                "3",
                "-o",
                "ref.json",
            ],
        );
        ok(
            dir,
            &[
                "--seed",
                "7",
                "truncate",
                "-s",
                "s.tts",
                "--model",
                "m.ttm",
                "-g",
                "g.json",
                "--reference-generator",
                "ref.json",
                "--reference-count",
                "500",
                "--fractions",
                "0.5,1.0",
                "-o",
                "curve.csv",
            ],
        );
    }
    for f in [
        "g.json",
        "s.tts",
        "s.csv",
        "r.csv",
        "m.ttm",
        "scores.csv",
        "spec.csv",
        "curve.csv",
    ] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn different_seeds_give_different_samples() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generator",
            "--kind",
            "identity",
            "--dim",
            "2",
            "-o",
            "g.json",
        ],
    );
    ok(
        d,
        &[
            "--seed", "1", "sample", "-g", "g.json", "-m", "50", "-o", "a.tts",
        ],
    );
    ok(
        d,
        &[
            "--seed", "2", "sample", "-g", "g.json", "-m", "50", "-o", "b.tts",
        ],
    );
    assert_ne!(
        fs::read(d.join("a.tts")).unwrap(),
        fs::read(d.join("b.tts")).unwrap()
    );
}

#[test]
fn empty_latent_file_gives_empty_output() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path(), "2");
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    ok(
        dir.path(),
        &[
            "eval",
            "--model",
            "m.ttm",
            "--latents",
            "empty.csv",
            "-o",
            "o.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("o.csv")).unwrap(),
        "score\n"
    );
    fs::write(dir.path().join("hdr.csv"), "z0,z1,z2\n").unwrap();
    ok(
        dir.path(),
        &[
            "eval",
            "--model",
            "m.ttm",
            "--latents",
            "hdr.csv",
            "-o",
            "o.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("o.csv")).unwrap(),
        "score\n"
    );
}

#[test]
fn eval_matches_sample_center_lookup_and_checks_dimension() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    pipeline(d, "2");
    fs::write(d.join("l.csv"), "z0,z1,z2\n0.05,0.05,0.05\n0.1,0.2,0.15\n").unwrap();
    ok(
        d,
        &[
            "eval",
            "--model",
            "m.ttm",
            "--latents",
            "l.csv",
            "-o",
            "o.csv",
        ],
    );
    let text = fs::read_to_string(d.join("o.csv")).unwrap();
    let scores: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(scores.len(), 2);
    // both rows fall into the same grid cell
    assert_eq!(scores[0], scores[1]);

    fs::write(d.join("bad.csv"), "0,0\n").unwrap();
    let out = ttjac(
        d,
        &[
            "eval",
            "--model",
            "m.ttm",
            "--latents",
            "bad.csv",
            "-o",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    fs::write(d.join("nan.csv"), "0,0,x\n1,2,y\n").unwrap();
    let out = ttjac(
        d,
        &[
            "eval",
            "--model",
            "m.ttm",
            "--latents",
            "nan.csv",
            "-o",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generator",
            "--kind",
            "identity",
            "--dim",
            "2",
            "-o",
            "g.json",
        ],
    );

    let out = ttjac(d, &["sample", "-g", "g.json", "-m", "0", "-o", "s.tts"]);
    assert_eq!(code(&out), 2);
    let out = ttjac(
        d,
        &[
            "sample",
            "-g",
            "g.json",
            "--tail-mass",
            "0.6",
            "-o",
            "s.tts",
        ],
    );
    assert_eq!(code(&out), 2);
    let out = ttjac(
        d,
        &[
            "-d", "3", "sample", "-g", "g.json", "-m", "10", "-o", "s.tts",
        ],
    );
    assert_eq!(code(&out), 2, "dimension mismatch with the configured d");

    fs::write(d.join("junk.ttm"), b"JUNKJUNKJUNK").unwrap();
    fs::write(d.join("l.csv"), "0,0\n").unwrap();
    let out = ttjac(
        d,
        &[
            "eval",
            "--model",
            "junk.ttm",
            "--latents",
            "l.csv",
            "-o",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
    let out = ttjac(d, &["fit", "-s", "junk.ttm", "-o", "m.ttm"]);
    assert_eq!(code(&out), 3);
    let out = ttjac(d, &["fit", "-s", "missing.tts", "-o", "m.ttm"]);
    assert_eq!(code(&out), 3);

    // truncated sample file
    ok(d, &["sample", "-g", "g.json", "-m", "20", "-o", "s.tts"]);
    let bytes = fs::read(d.join("s.tts")).unwrap();
    fs::write(d.join("cut.tts"), &bytes[..bytes.len() - 5]).unwrap();
    let out = ttjac(d, &["fit", "-s", "cut.tts", "-o", "m.ttm"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn unregularized_empty_slice_is_a_numerical_failure_naming_the_slice() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generator",
            "--kind",
            "identity",
            "--dim",
            "3",
            "-o",
            "g.json",
        ],
    );
    ok(
        d,
        &[
            "sample",
            "-g",
            "g.json",
            "-m",
            "60",
            "--grid-size",
            "64",
            "-o",
            "s.tts",
        ],
    );
    let out = ttjac(
        d,
        &[
            "fit", "-s", "s.tts", "-r", "2", "--ridge", "0", "-o", "m.ttm",
        ],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("core") && msg.contains("index"), "{msg}");
    assert!(!d.join("m.ttm").exists());

    // with the default ridge the same data fits, and the slices are reported
    let out = ttjac(
        d,
        &[
            "fit", "-s", "s.tts", "-r", "2", "--report", "r.csv", "-o", "m.ttm",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("underdetermined"));
    let report = fs::read_to_string(d.join("r.csv")).unwrap();
    let last = report.lines().last().unwrap();
    let flagged: usize = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(flagged > 0, "{report}");
}

#[test]
fn holdout_bound_refuses_to_write_a_poor_model() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    pipeline(d, "2");
    let out = ttjac(
        d,
        &[
            "fit",
            "-s",
            "s.tts",
            "--max-holdout-mse",
            "1e-12",
            "-o",
            "bad.ttm",
        ],
    );
    assert_eq!(code(&out), 4);
    assert!(!d.join("bad.ttm").exists());
    let out = ttjac(
        d,
        &[
            "fit",
            "-s",
            "s.tts",
            "--holdout",
            "0",
            "--max-holdout-mse",
            "1",
            "-o",
            "x.ttm",
        ],
    );
    assert_eq!(code(&out), 2);
    let stdout = ok(
        d,
        &[
            "fit",
            "-s",
            "s.tts",
            "--max-holdout-mse",
            "10",
            "-o",
            "ok.ttm",
        ],
    );
    assert!(stdout.contains("holdout_mse="), "{stdout}");
}

#[test]
fn rank_auto_and_probe_agree_on_an_additive_model() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    pipeline(d, "2");
    // an ANOVA model is an exact rank-2 tensor train
    ok(d, &["fit", "-s", "s.tts", "-o", "anova.ttm"]);
    let out = ok(
        d,
        &[
            "probe",
            "--model",
            "anova.ttm",
            "--energy",
            "0.999999",
            "-o",
            "spec.csv",
        ],
    );
    let rank: usize = out
        .trim()
        .strip_prefix("suggested rank: ")
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(rank <= 2, "{out}");
    let spec = fs::read_to_string(d.join("spec.csv")).unwrap();
    assert!(spec.starts_with("pair,index,sigma,cumsum\n"));

    let out = ok(
        d,
        &[
            "-v", "fit", "-s", "s.tts", "-r", "auto", "--sweeps", "2", "-o", "auto.ttm",
        ],
    );
    assert!(out.contains("ranks=[1, "), "{out}");

    let out = ttjac(
        d,
        &[
            "probe",
            "-s",
            "s.tts",
            "--model",
            "anova.ttm",
            "-o",
            "x.csv",
        ],
    );
    assert_eq!(code(&out), 2);
    let out = ttjac(d, &["probe", "-o", "x.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generator",
            "--kind",
            "identity",
            "--dim",
            "2",
            "-o",
            "g.json",
        ],
    );
    fs::write(
        d.join("run.toml"),
        "seed = 3\ngrid_size = 4\nsample_count = 40\ngenerator = \"g.json\"\n[als]\nsweeps = 2\n",
    )
    .unwrap();
    let out = ok(d, &["--config", "run.toml", "sample", "-o", "a.tts"]);
    assert!(out.contains("M=40") && out.contains("N=4"), "{out}");
    let out = ok(
        d,
        &[
            "--config",
            "run.toml",
            "sample",
            "-m",
            "30",
            "--grid-size",
            "6",
            "-o",
            "b.tts",
        ],
    );
    assert!(out.contains("M=30") && out.contains("N=6"), "{out}");
    ok(
        d,
        &[
            "--seed",
            "3",
            "sample",
            "-g",
            "g.json",
            "-m",
            "40",
            "--grid-size",
            "4",
            "-o",
            "c.tts",
        ],
    );
    assert_eq!(
        fs::read(d.join("a.tts")).unwrap(),
        fs::read(d.join("c.tts")).unwrap()
    );

    fs::write(d.join("typo.toml"), "grid_sise = 4\n").unwrap();
    let out = ttjac(
        d,
        &[
            "--config",
            "typo.toml",
            "sample",
            "-g",
            "g.json",
            "-o",
            "x.tts",
        ],
    );
    assert_eq!(code(&out), 2);
    fs::write(d.join("order.toml"), "anova_order = 2\n").unwrap();
    let out = ttjac(
        d,
        &[
            "--config",
            "order.toml",
            "fit",
            "-s",
            "a.tts",
            "-o",
            "x.ttm",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn truncate_writes_one_curve_per_criterion() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generator",
            "--kind",
            "stretched-tail",
            "--dim",
            "2",
            "-o",
            "g.json",
        ],
    );
    ok(
        d,
        &[
            "generator",
            "--kind",
            "identity",
            "--dim",
            "2",
            "-o",
            "ref.json",
        ],
    );
    ok(
        d,
        &[
            "sample",
            "-g",
            "g.json",
            "-m",
            "1500",
            "--grid-size",
            "16",
            "-o",
            "s.tts",
        ],
    );
    ok(
        d,
        &[
            "--seed", "9", "sample", "-g", "ref.json", "-m", "1500", "-o", "ref.tts",
        ],
    );
    ok(d, &["fit", "-s", "s.tts", "-o", "m.ttm"]);
    ok(
        d,
        &[
            "truncate",
            "-s",
            "s.tts",
            "--model",
            "m.ttm",
            "-g",
            "g.json",
            "--reference-generator",
            "ref.json",
            "--reference",
            "ref.tts",
            "--fractions",
            "0.5,0.8,1.0",
            "-o",
            "c.csv",
        ],
    );
    let csv = fs::read_to_string(d.join("c.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("criterion,threshold,kept_fraction,precision,recall")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for name in ["tt_score", "exact_score", "latent_norm"] {
        assert_eq!(rows.iter().filter(|r| r[0] == name).count(), 3);
    }
    // the full population is the same set for every criterion
    let full: Vec<_> = rows
        .iter()
        .filter(|r| r[2] == "1e0")
        .map(|r| (r[3], r[4]))
        .collect();
    assert_eq!(full.len(), 3);
    assert!(full.iter().all(|p| *p == full[0]), "{full:?}");

    let out = ttjac(
        d,
        &[
            "truncate",
            "-s",
            "s.tts",
            "-g",
            "g.json",
            "--reference-generator",
            "ref.json",
            "--criteria",
            "tt_score",
            "-o",
            "c.csv",
        ],
    );
    assert_eq!(code(&out), 2, "tt_score without a model");
    let out = ttjac(
        d,
        &[
            "truncate",
            "-s",
            "s.tts",
            "-g",
            "g.json",
            "--reference-generator",
            "ref.json",
            "--fractions",
            "0,1",
            "-o",
            "c.csv",
        ],
    );
    assert_eq!(code(&out), 2);
}
