use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ssbr_prealign::volume::{read_volume, write_volume, ElementType};
use ssbr_prealign::VolumeF64;

fn ssbr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssbr"))
        .args(args)
        .output()
        .expect("spawn ssbr")
}

fn ok(args: &[&str]) -> String {
    let out = ssbr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small phantoms written through the CLI itself.
fn phantoms(dir: &Path, nz: &str, count: &str, seed: &str) {
    ok(&["phantom", "--out", s(dir), "--nz", nz, "--count", count, "--seed", seed]);
}

#[test]
fn phantom_files_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    phantoms(d.path(), "40", "1", "3");
    assert!(d.path().join("phantom_000.mhd").is_file());
    assert!(d.path().join("phantom_000.raw").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 1);
    assert_eq!(manifest[0]["seed"], 3);
    let v: VolumeF64 = read_volume(&d.path().join("phantom_000.mhd")).unwrap();
    assert_eq!(v.nz(), 40);

    let e = tempfile::tempdir().unwrap();
    phantoms(e.path(), "40", "1", "3");
    for f in ["phantom_000.mhd", "phantom_000.raw", "manifest.json"] {
        assert_eq!(
            fs::read(d.path().join(f)).unwrap(),
            fs::read(e.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn usage_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        ssbr(&["phantom", "--out", s(d.path()), "--nz", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ssbr(&["phantom", "--out", s(d.path()), "--frobnicate"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ssbr(&["align", "--method", "sideways", "--fixed", "a", "--moving", "b"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ssbr(&["bench", "--volumes", "v", "--out-dir", "o", "--thresholds", "5,20"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ssbr(&["--threads", "0", "phantom", "--out", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ssbr(&[
            "align",
            "--method",
            "l1",
            "--fixed",
            "a",
            "--moving",
            "b",
            "--plot-svg",
            "p.svg"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn train_files_determinism_and_divergence() {
    let d = tempfile::tempdir().unwrap();
    phantoms(d.path(), "40", "2", "0");
    let run = |name: &str, lr: &str, iters: &str| {
        let params = d.path().join(format!("{name}.txt"));
        let trace = d.path().join(format!("{name}.csv"));
        let out = ssbr(&[
            "train",
            "--volumes",
            s(d.path()),
            "--iters",
            iters,
            "--lr",
            lr,
            "--batch-size",
            "4",
            "--hidden",
            "8",
            "--out-params",
            s(&params),
            "--trace",
            s(&trace),
        ]);
        (out, params, trace)
    };
    let (o, p1, t1) = run("a", "0.05", "20");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(&t1).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,loss"));
    assert_eq!(trace.lines().count(), 21);
    let (_, p2, t2) = run("b", "0.05", "20");
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(fs::read(&t1).unwrap(), fs::read(&t2).unwrap());

    // zero learning rate: parameters do not depend on the number of iterations
    let (_, z1, _) = run("z1", "0", "1");
    let (_, z2, _) = run("z2", "0", "15");
    assert_eq!(fs::read(&z1).unwrap(), fs::read(&z2).unwrap());

    let (o, _, _) = run("div", "1.7976931348623157e308", "20");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteration"));
}

#[test]
fn score_oracle_and_params() {
    let d = tempfile::tempdir().unwrap();
    phantoms(d.path(), "30", "1", "1");
    let vol = d.path().join("phantom_000.mhd");
    let csv = d.path().join("scores.csv");
    ok(&["score", "--oracle", "1,0,0", "--volume", s(&vol), "--out-csv", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 30);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[1].parse::<f64>().unwrap(), f[2].parse::<f64>().unwrap());
    }

    let params = d.path().join("model.txt");
    ok(&[
        "train",
        "--volumes",
        s(&vol),
        "--iters",
        "3",
        "--batch-size",
        "2",
        "--hidden",
        "4",
        "--out-params",
        s(&params),
    ]);
    ok(&[
        "score",
        "--params",
        s(&params),
        "--volume",
        s(&vol),
        "--out-csv",
        s(&csv),
    ]);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 31);

    let missing = d.path().join("nowhere.mhd");
    let out = ssbr(&[
        "score",
        "--oracle",
        "1,0,0",
        "--volume",
        s(&missing),
        "--out-csv",
        s(&csv),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.mhd"));
}

#[test]
fn align_methods() {
    let d = tempfile::tempdir().unwrap();
    phantoms(d.path(), "80", "1", "2");
    let fixed = d.path().join("phantom_000.mhd");
    let json = d.path().join("r.json");
    let svg = d.path().join("r.svg");

    ok(&[
        "align",
        "--method",
        "l1",
        "--fixed",
        s(&fixed),
        "--moving",
        s(&fixed),
        "--oracle",
        "1,0,0",
        "--out-json",
        s(&json),
        "--plot-svg",
        s(&svg),
    ]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(r["method"], "l1");
    assert_eq!(r["z_offset_mm"].as_f64().unwrap(), 0.0);
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 2);

    let out = ok(&[
        "align",
        "--method",
        "fast",
        "--fixed",
        s(&fixed),
        "--moving",
        s(&fixed),
        "--oracle",
        "1,0,0",
        "--verbose",
    ]);
    assert!(out.lines().any(|l| l == "scorer calls: 3"), "{out}");

    // crop of slices 20..60 keeps world z, so the true offset is zero
    let v: VolumeF64 = read_volume(&fixed).unwrap();
    let crop = d.path().join("crop.mhd");
    write_volume(&v.crop_subvolume(20, 40).unwrap(), &crop, ElementType::Float).unwrap();
    ok(&[
        "align",
        "--method",
        "fasta",
        "--grid",
        "1,1,71",
        "--fixed",
        s(&fixed),
        "--moving",
        s(&crop),
        "--out-json",
        s(&json),
    ]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    // the default z range spans both extents (300 mm) in 70 cells
    let f_ext = 80.0 * 2.5;
    let m_ext = 40.0 * 2.5;
    let cell = (f_ext + m_ext) / 70.0;
    assert!(r["z_offset_mm"].as_f64().unwrap().abs() <= cell, "{r}");
}

#[test]
fn bench_smoke_and_rerun() {
    let d = tempfile::tempdir().unwrap();
    let vols = d.path().join("vols");
    phantoms(&vols, "60", "2", "5");
    let run = |out: &Path| {
        ok(&[
            "bench",
            "--volumes",
            s(&vols),
            "--pairs",
            "5",
            "--oracle",
            "1,0,2",
            "--grid",
            "1,1,21",
            "--out-dir",
            s(out),
            "--plot-pairs",
            "1",
        ])
    };
    let a = d.path().join("a");
    let b = d.path().join("b");
    run(&a);
    run(&b);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    for m in ["fast", "l1", "fasta"] {
        let counts: u64 = summary[m]["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert_eq!(counts, 5, "{m}");
    }
    assert_eq!(
        fs::read(a.join("pairs.csv")).unwrap(),
        fs::read(b.join("pairs.csv")).unwrap()
    );
    assert!(a.join("plots/pair_000_before.svg").is_file());
    assert!(a.join("plots/pair_000_after.svg").is_file());

    let out = ssbr(&[
        "bench",
        "--volumes",
        s(&vols),
        "--pairs",
        "2",
        "--methods",
        "l1",
        "--out-dir",
        s(&a),
    ]);
    assert_eq!(out.status.code(), Some(1), "l1 without a scorer is a runtime error");
}
