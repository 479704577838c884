use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use artseg::nifti::{write_mask, write_volume, Dtype};
use artseg::phantom::{MotionRanges, PhantomSpec, PhantomSuiteSpec, TumorSpec};
use artseg::{BinaryMask, Geometry};

fn artseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artseg"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_suite(dir: &Path, suite: &PhantomSuiteSpec) -> std::path::PathBuf {
    let spec = dir.join("suite.json");
    fs::write(&spec, serde_json::to_string_pretty(suite).unwrap()).unwrap();
    let data = dir.join("data");
    let o = artseg(&["phantom", "--spec", p(&spec), "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data.join("manifest.json")
}

fn small(motion: MotionRanges) -> PhantomSuiteSpec {
    PhantomSuiteSpec {
        n_patients: 2,
        fractions: 2,
        template: PhantomSpec {
            dims: [28, 28, 20],
            tumor: TumorSpec {
                center_mm: [13.5, 13.5, 9.5],
                radii_mm: [7.0, 4.5, 3.5],
                contrast: 60.0,
            },
            ..PhantomSpec::default()
        },
        motion,
        seed: 1,
    }
}

fn still() -> MotionRanges {
    MotionRanges {
        max_translation_mm: 0.0,
        max_rotation_deg: 0.0,
        radius_scale_range: [1.0, 1.0],
        center_jitter_mm: 1.0,
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn metrics_command() {
    let dir = tempfile::tempdir().unwrap();
    let g = Geometry::unit([8, 4, 4]);
    let a = dir.path().join("a.nii");
    let b = dir.path().join("b.nii");
    write_mask(&a, &BinaryMask::from_voxels(g.clone(), &[[1, 1, 1]])).unwrap();
    write_mask(&b, &BinaryMask::from_voxels(g, &[[4, 1, 1]])).unwrap();

    let o = artseg(&["metrics", p(&a), p(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        (v["dice"].as_f64(), v["nsd"].as_f64()),
        (Some(0.0), Some(0.0))
    );
    assert_eq!(
        (v["hd95"].as_f64(), v["asd"].as_f64()),
        (Some(3.0), Some(3.0))
    );

    let o = artseg(&["metrics", p(&a), p(&a), "--mode", "brute"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        [&v["dice"], &v["nsd"], &v["hd95"], &v["asd"]].map(|x| x.as_f64().unwrap()),
        [1.0, 1.0, 0.0, 0.0]
    );

    let c = dir.path().join("c.nii");
    write_mask(
        &c,
        &BinaryMask::from_voxels(Geometry::unit([8, 4, 5]), &[[1, 1, 1]]),
    )
    .unwrap();
    let o = artseg(&["metrics", p(&a), p(&c)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("geometry mismatch"), "{}", stderr(&o));

    let img = dir.path().join("img.nii");
    let vol = artseg::Volume::new(Geometry::unit([8, 4, 4]), vec![7.0; 128]).unwrap();
    write_volume(&img, &vol, Dtype::Float32, false).unwrap();
    let o = artseg(&["metrics", p(&a), p(&img)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("non-binary"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(
        code(&artseg(&[
            "eval",
            "--backend",
            "nonsense",
            "--manifest",
            "m",
            "--out",
            "o"
        ])),
        2
    );
    assert_eq!(code(&artseg(&["frobnicate"])), 2);
    let o = artseg(&[
        "eval",
        "--manifest",
        "/nonexistent/manifest.json",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn phantom_spec_validation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut suite = small(still());
    suite.template.tumor.radii_mm[2] = -1.0;
    let spec = dir.path().join("bad.json");
    fs::write(&spec, serde_json::to_string(&suite).unwrap()).unwrap();
    let o = artseg(&[
        "phantom",
        "--spec",
        p(&spec),
        "--out",
        p(&dir.path().join("d")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("template.tumor.radii_mm[2]"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn default_phantom_demo_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let t = std::time::Instant::now();
    assert_eq!(code(&artseg(&["phantom", "--out", p(&data)])), 0);
    let o = artseg(&[
        "eval",
        "--manifest",
        p(&data.join("manifest.json")),
        "--backend",
        "propagate",
        "--out",
        p(&dir.path().join("eval")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(t.elapsed().as_secs() < 60);
    let rows = csv_rows(&dir.path().join("eval/report.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[14] == "ok"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval/report.json")).unwrap())
            .unwrap();
    assert_eq!(
        report["config"]["registration_direction"],
        "current-to-prior"
    );
    assert_eq!(report["config"]["backend"], "propagate");
}

#[test]
fn prior_oracle_on_unmoved_anatomy_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_suite(dir.path(), &small(still()));
    let out = dir.path().join("eval");
    let o = artseg(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--backend",
        "prior-oracle",
        "--jitter-max",
        "0",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("report.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[4], "1", "{r:?}");
        assert_eq!(r[7], "0");
    }
}

#[test]
fn aggregates_match_rows() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_suite(dir.path(), &small(MotionRanges::default()));
    let out = dir.path().join("eval");
    let o = artseg(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--backend",
        "prior-oracle",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let dice: Vec<f64> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["dice"].as_f64().unwrap())
        .collect();
    let n = dice.len() as f64;
    let mean = dice.iter().sum::<f64>() / n;
    let sd = (dice.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    // json parsing may be one ulp off
    assert!((report["aggregates"]["dice"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((report["aggregates"]["dice"]["sd"].as_f64().unwrap() - sd).abs() < 1e-12);
    assert_eq!(report["summary"]["ok"], 4);
}

#[test]
fn failing_case_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_suite(dir.path(), &small(MotionRanges::default()));
    fs::write(
        dir.path().join("data/p001/f2_image.nii"),
        b"not a nifti file",
    )
    .unwrap();
    let out = dir.path().join("eval");
    let o = artseg(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--backend",
        "prior-oracle",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let rows = csv_rows(&out.join("report.csv"));
    let status: Vec<&str> = rows.iter().map(|r| r[14].as_str()).collect();
    assert_eq!(status, ["ok", "ok", "ok", "failed"]);
    assert!(rows[3][15].contains("header"), "{}", rows[3][15]);
    assert_eq!(rows[3][4], "NA");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["failed"], 1);
    assert_eq!(report["aggregates"]["dice"]["n"], 3);
}

#[test]
fn ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_suite(dir.path(), &small(MotionRanges::default()));
    let out = dir.path().join("ablate");
    let o = artseg(&[
        "ablate",
        "--manifest",
        p(&manifest),
        "--backend",
        "prior-oracle",
        "--seed",
        "4",
        "--out",
        p(&out),
    ]);
    // configurations without priSeg fail every case
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let rows = csv_rows(&out.join("ablation.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        ["curMR", "curMR+priMR", "curMR+priSeg", "curMR+priMR+priSeg"]
    );
    let failed: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(failed, ["4", "4", "0", "0"]);
    let r = csv_rows(&out.join("curMR/report.csv"));
    assert!(r.iter().all(|row| row[15].contains("missing prompt")));

    let eval = dir.path().join("eval");
    let o = artseg(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--backend",
        "prior-oracle",
        "--seed",
        "4",
        "--out",
        p(&eval),
    ]);
    assert_eq!(code(&o), 0);
    let full = csv_rows(&out.join("curMR+priMR+priSeg/report.csv"));
    assert_eq!(full, csv_rows(&eval.join("report.csv")));
}

#[test]
fn sweep_layout_and_external_backend() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_suite(dir.path(), &small(MotionRanges::default()));
    let out = dir.path().join("sweep");
    let ext = format!(
        "external:{} prior-oracle",
        env!("CARGO_BIN_EXE_artseg-test-adapter")
    );
    let o = artseg(&[
        "sweep",
        "--manifest",
        p(&manifest),
        "--backend",
        "prior-oracle",
        "--backend",
        &ext,
        "--reps",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.starts_with("backend,level,mean_dice,sd_dice,n\n"));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 20);
    for level in 0..10 {
        let (a, b) = (&rows[level], &rows[level + 10]);
        assert_eq!(a[1], (level + 1).to_string());
        assert_eq!(a[4], "8");
        // same masks through either transport
        assert_eq!(a[2..], b[2..]);
    }
    assert!(!out.join("scratch").exists());
}
