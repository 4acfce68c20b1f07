mod support;

use shakegen_cli::{cmd_gradcheck, exit, gradcheck, Fault, GlobalOptions};
use support::*;
use tempfile::tempdir;

#[test]
fn sample_is_identical_across_thread_counts_and_validates() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_CONFIG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ra = shakegen(&[
        "--threads",
        "1",
        "--out-dir",
        path_str(&a),
        "sample",
        path_str(&cfg),
    ]);
    let rb = shakegen(&[
        "--threads",
        "3",
        "--out-dir",
        path_str(&b),
        "sample",
        path_str(&cfg),
    ]);
    assert_eq!(code(&ra), 0, "{}", stderr(&ra));
    assert_eq!(code(&rb), 0, "{}", stderr(&rb));
    assert_eq!(snapshot(&a), snapshot(&b));

    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2 + 6);
    assert!(metrics.starts_with("# shakegen metrics v1\nsample_id,"));
    assert!(!a.join("timings.csv").exists());

    let samples = xyz_files(&a, "sample_");
    assert!(!samples.is_empty());
    let mut args = vec!["validate", "--config", path_str(&cfg)];
    args.extend(samples.iter().map(|p| path_str(p)));
    let v = shakegen(&args);
    assert_eq!(code(&v), 0, "{}{}", stdout(&v), stderr(&v));
    assert!(stdout(&v).contains("constraint 2: max violation"));
}

#[test]
fn seed_flag_overrides_config_and_changes_output() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_CONFIG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    shakegen(&["-q", "--out-dir", path_str(&a), "sample", path_str(&cfg)]);
    let r = shakegen(&[
        "-q",
        "--seed",
        "12",
        "--out-dir",
        path_str(&b),
        "sample",
        path_str(&cfg),
    ]);
    assert_eq!(code(&r), 0);
    assert!(stdout(&r).is_empty());
    assert_ne!(
        snapshot(&a).get("sample_00000.xyz"),
        snapshot(&b).get("sample_00000.xyz")
    );
}

#[test]
fn timings_file_is_opt_in() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &SMALL_CONFIG.replace("size = 6", "size = 2"),
    );
    let r = shakegen(&[
        "-q",
        "--out-dir",
        path_str(tmp.path()),
        "sample",
        "--timings",
        path_str(&cfg),
    ]);
    assert_eq!(code(&r), 0);
    let t = std::fs::read_to_string(tmp.path().join("timings.csv")).unwrap();
    assert_eq!(t.lines().count(), 2 + 2);
}

#[test]
fn empty_batch_succeeds_with_empty_outputs() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &SMALL_CONFIG.replace("size = 6", "size = 0"),
    );
    let out = tmp.path().join("out");
    let r = shakegen(&["--out-dir", path_str(&out), "sample", path_str(&cfg)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let snap = snapshot(&out);
    assert_eq!(snap.len(), 1);
    assert_eq!(
        String::from_utf8(snap["metrics.csv"].clone())
            .unwrap()
            .lines()
            .count(),
        2
    );
}

#[test]
fn config_errors_exit_64_with_location() {
    let tmp = tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", "particles = 3\nseed = [oops\n");
    let r = shakegen(&["sample", path_str(&bad)]);
    assert_eq!(code(&r), 64);
    assert!(stderr(&r).contains("line 2"), "{}", stderr(&r));

    let typo = write_config(tmp.path(), "typo.toml", "particles = 3\nsede = 1\n");
    let r = shakegen(&["sample", path_str(&typo)]);
    assert_eq!(code(&r), 64);
    assert!(stderr(&r).contains("sede"), "{}", stderr(&r));

    let out_of_range = write_config(
        tmp.path(),
        "range.toml",
        SMALL_CONFIG
            .replace("atoms = [0, 1]", "atoms = [0, 9]")
            .as_str(),
    );
    assert_eq!(code(&shakegen(&["sample", path_str(&out_of_range)])), 64);
}

#[test]
fn io_and_usage_errors() {
    let tmp = tempdir().unwrap();
    assert_eq!(
        code(&shakegen(&[
            "sample",
            path_str(&tmp.path().join("missing.toml"))
        ])),
        74
    );
    assert_eq!(code(&shakegen(&["frobnicate"])), 64);
    assert_eq!(code(&shakegen(&["gradcheck", "--trials", "many"])), 64);
    assert_eq!(code(&shakegen(&["--threads", "0", "gradcheck"])), 64);
    assert_eq!(code(&shakegen(&["--help"])), 0);
    assert_eq!(code(&shakegen(&["--version"])), 0);
}

#[test]
fn validate_reports_violations_and_mismatches() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_CONFIG);
    let good = tmp.path().join("good.xyz");
    std::fs::write(
        &good,
        "4\nhand\nC 0 0 0\nC 1.4 0 0\nC 1.4 1.5 0\nC 1.4 1.5 1.1\n",
    )
    .unwrap();
    let r = shakegen(&["validate", "--config", path_str(&cfg), path_str(&good)]);
    assert_eq!(code(&r), 0, "{}", stdout(&r));

    let bad = tmp.path().join("bad.xyz");
    std::fs::write(
        &bad,
        "4\nhand\nC 0 0 0\nC 1.4 0 0\nC 1.4 1.7 0\nC 1.4 1.7 1.1\n",
    )
    .unwrap();
    let r = shakegen(&[
        "validate",
        "--config",
        path_str(&cfg),
        path_str(&good),
        path_str(&bad),
    ]);
    assert_eq!(code(&r), 2);
    let text = stdout(&r);
    assert!(
        text.contains("constraint 1 violated in:") && text.contains("bad.xyz"),
        "{text}"
    );
    assert!(!text.contains("constraint 0 violated"));

    let short = tmp.path().join("short.xyz");
    std::fs::write(&short, "3\nhand\nC 0 0 0\nC 1.4 0 0\nC 1.4 1.5 0\n").unwrap();
    assert_eq!(
        code(&shakegen(&[
            "validate",
            "--config",
            path_str(&cfg),
            path_str(&short)
        ])),
        65
    );

    let garbled = tmp.path().join("garbled.xyz");
    std::fs::write(&garbled, "4\nhand\nC 0 0\n").unwrap();
    assert_eq!(
        code(&shakegen(&[
            "validate",
            "--config",
            path_str(&cfg),
            path_str(&garbled)
        ])),
        65
    );

    let missing = tmp.path().join("missing.xyz");
    assert_eq!(
        code(&shakegen(&[
            "validate",
            "--config",
            path_str(&cfg),
            path_str(&missing)
        ])),
        74
    );
}

#[test]
fn gradcheck_passes_and_is_deterministic() {
    let r = shakegen(&["gradcheck"]);
    assert_eq!(code(&r), 0, "{}", stdout(&r));
    for kind in ["distance", "angle", "dihedral"] {
        assert!(stdout(&r).contains(kind));
    }
    let a = shakegen(&["--seed", "5", "gradcheck", "--trials", "1"]);
    let b = shakegen(&["--seed", "5", "gradcheck", "--trials", "1"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(code(&shakegen(&["gradcheck", "--trials", "0"])), 64);
}

#[test]
fn gradcheck_catches_sign_flip() {
    let report = gradcheck(50, 0, Fault::SignFlip).unwrap();
    assert!(report.worst.iter().all(|(_, e)| *e > 1.0));
    let mut sink = Vec::new();
    let status = cmd_gradcheck(50, &GlobalOptions::default(), Fault::SignFlip, &mut sink).unwrap();
    assert_eq!(status, exit::FAILURE);
    assert!(String::from_utf8(sink).unwrap().contains("FAIL"));
}

#[test]
fn ring_demo_triangle_and_infeasible() {
    let tmp = tempdir().unwrap();
    let tri = tmp.path().join("tri");
    let r = shakegen(&[
        "--seed",
        "7",
        "--out-dir",
        path_str(&tri),
        "ring-demo",
        "--n",
        "3",
        "--batch",
        "8",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("8 of 8 emitted samples satisfy all ring constraints"));
    assert_eq!(xyz_files(&tri, "sample_").len(), 8);

    let inf = tmp.path().join("inf");
    let r = shakegen(&[
        "--out-dir",
        path_str(&inf),
        "ring-demo",
        "--infeasible",
        "--batch",
        "3",
        "--steps",
        "40",
    ]);
    assert_eq!(code(&r), 2);
    assert!(stdout(&r).contains("3 flagged"), "{}", stdout(&r));
    assert_eq!(xyz_files(&inf, "flagged_").len(), 3);

    assert_eq!(code(&shakegen(&["ring-demo", "--n", "2"])), 64);
}

#[test]
fn ring_config_matches_ring_demo_and_samples_cleanly() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/ring.toml");
    let exp = shakegen_cli::ExperimentConfig::load(&path).unwrap().build().unwrap();
    let demo = shakegen_cli::RingDemo::default().experiment(7).unwrap();
    assert_eq!(exp.constraints, demo.constraints);
    assert_eq!(exp.sampler, demo.sampler);

    let tmp = tempdir().unwrap();
    let r = shakegen(&["-q", "--out-dir", path_str(tmp.path()), "sample", path_str(&path)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let samples = xyz_files(tmp.path(), "sample_");
    let flagged = xyz_files(tmp.path(), "flagged_");
    assert_eq!(samples.len() + flagged.len(), 100);
    let mut args = vec!["validate", "--config", path_str(&path)];
    args.extend(samples.iter().map(|p| path_str(p)));
    assert_eq!(code(&shakegen(&args)), 0);
}
