use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use corrdepth::cli::RunManifest;
use corrdepth::io::{read_grid, write_grid};
use corrdepth::optim::{FitReport, StopReason};
use corrdepth::ScalarGrid;

fn corrdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrdepth"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn write_scene(dir: &Path, body: &str) -> String {
    let p = dir.join("scene.json");
    fs::write(&p, body).unwrap();
    s(&p)
}

const HEMI_3: &str = r#"{"surface_kind":"hemisphere","resolution":[16,16],"views":[{"azimuth":0,"elevation":0},{"azimuth":15,"elevation":5},{"azimuth":345,"elevation":-8}],"seed":1}"#;

#[test]
fn gen_writes_views_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = corrdepth(&["gen", &write_scene(dir.path(), HEMI_3), &s(&out), "--points", "40"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.depth_files.len(), 3);
    assert_eq!(m.pairs.len(), 3);
    let pairs: Vec<_> = m.pairs.iter().map(|p| (p.source, p.target)).collect();
    assert_eq!(pairs, [(0, 1), (0, 2), (1, 2)]);
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("depth_view")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.starts_with("pair_")).count(), 6);
    assert!(fs::read_to_string(out.join(&m.pairs[0].clean))
        .unwrap()
        .starts_with("xs,ys,xt,yt\n"));
}

#[test]
fn gen_rejects_single_view_and_bad_json() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_scene(
        dir.path(),
        r#"{"surface_kind":"saddle","resolution":[16,16],"views":[{"azimuth":0,"elevation":0}]}"#,
    );
    let o = corrdepth(&["gen", &one, &s(&dir.path().join("a"))]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write_scene(
        dir.path(),
        "{\n  \"surface_kind\": \"saddle\",\n  \"resolution\": [16]\n}",
    );
    let o = corrdepth(&["gen", &bad, &s(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("line"), "{msg}");

    let o = corrdepth(&["gen", &s(&dir.path().join("missing.json")), &s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn clean_dense_fit_recovers_depth_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        corrdepth(&["gen", &write_scene(dir.path(), HEMI_3), &s(&out), "--points", "0"])
            .status
            .code(),
        Some(0)
    );
    let fit = dir.path().join("fit");
    let o = corrdepth(&[
        "fit",
        &s(&out.join("manifest.json")),
        "--clean",
        "--out",
        &s(&fit),
        "--max-iters",
        "1500",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["depth.txt", "depth.pgm", "fit_report.json", "loss_trace.csv"] {
        assert!(fit.join(f).exists(), "{f}");
    }
    let report: FitReport = serde_json::from_str(&fs::read_to_string(fit.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report.loss_trace.len(), report.iterations_run);
    assert_ne!(report.stop_reason, StopReason::Error);
    let trace = fs::read_to_string(fit.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), report.iterations_run + 1);

    let json = dir.path().join("eval.json");
    let o = corrdepth(&[
        "eval",
        &s(&fit.join("depth.txt")),
        &s(&out.join("depth_view0.txt")),
        "--mask",
        &s(&out.join("mask_view0.txt")),
        "--out",
        &s(&json),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("l1,rmse,rel_l1,sq_rel"));
    let rmse: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(rmse < 0.02, "rmse {rmse}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["rmse"].as_f64().unwrap(), rmse);
}

#[test]
fn sparse_and_robust_overrides_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let spec = write_scene(dir.path(), HEMI_3);
    let o = corrdepth(&[
        "gen",
        &spec,
        &s(&out),
        "--points",
        "50",
        "--outlier-fraction",
        "0.2",
        "--corruption-seed",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let manifest = s(&out.join("manifest.json"));
    for extra in [
        vec!["--tau", "3"],
        vec!["--no-robust"],
        vec!["--kernel-argument", "squared-distance", "--smoothness", "0.01"],
        vec!["--holdout-fraction", "0.25", "--patience", "5"],
    ] {
        let fit = dir.path().join(format!("fit{}", extra.len()));
        let mut args = vec![
            "fit",
            &manifest,
            "--max-iters",
            "30",
            "--learning-rate",
            "2e-3",
            "--threshold",
            "2.5",
        ];
        let fit_s = s(&fit);
        args.extend(["--out", &fit_s]);
        args.extend(extra.iter().copied());
        let o = corrdepth(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{extra:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn flat_unjittered_start_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        corrdepth(&["gen", &write_scene(dir.path(), HEMI_3), &s(&out), "--points", "60"])
            .status
            .code(),
        Some(0)
    );
    let fit = dir.path().join("fit");
    let o = corrdepth(&[
        "fit",
        &s(&out.join("manifest.json")),
        "--init-jitter",
        "0",
        "--out",
        &s(&fit),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let report: FitReport = serde_json::from_str(&fs::read_to_string(fit.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report.stop_reason, StopReason::Error);
    assert!(report.error.unwrap().contains("rank"));

    let o = corrdepth(&["fit", &s(&out.join("manifest.json")), "--momentum", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_identity_and_affine_gauge() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..48).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.5).collect();
    let gt = ScalarGrid::new(8, 6, values.clone()).unwrap();
    let gt_path = dir.path().join("gt.txt");
    write_grid(&gt_path, &gt).unwrap();

    let o = corrdepth(&["eval", &s(&gt_path), &s(&gt_path)]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().nth(1), Some("0,0,0,0"));

    let pred: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| 0.3 * v + 0.1 * ((i % 5) as f64 / 5.0))
        .collect();
    let pred_path = dir.path().join("pred.txt");
    write_grid(&pred_path, &ScalarGrid::new(8, 6, pred.clone()).unwrap()).unwrap();
    let moved_path = dir.path().join("moved.txt");
    write_grid(
        &moved_path,
        &ScalarGrid::new(8, 6, pred.iter().map(|p| 2.0 * p - 0.3).collect()).unwrap(),
    )
    .unwrap();
    let row = |p: &Path| {
        let o = corrdepth(&["eval", &s(p), &s(&gt_path)]);
        assert_eq!(o.status.code(), Some(0));
        String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|v| v.parse::<f64>().unwrap())
            .collect::<Vec<_>>()
    };
    for (a, b) in row(&pred_path).iter().zip(row(&moved_path)) {
        assert!((a - b).abs() < 1e-8);
    }
    assert_eq!(read_grid(&gt_path).unwrap(), gt);

    // Raw ground truth touching zero trips the relative-metric guard.
    let mut with_zero = values.clone();
    with_zero[5] = 0.0;
    let zero_path = dir.path().join("gt0.txt");
    write_grid(&zero_path, &ScalarGrid::new(8, 6, with_zero).unwrap()).unwrap();
    assert_eq!(
        corrdepth(&["eval", &s(&pred_path), &s(&zero_path), "--raw-gt"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        corrdepth(&["eval", &s(&pred_path), &s(&zero_path)]).status.code(),
        Some(0)
    );
    let flat = dir.path().join("flat.txt");
    write_grid(&flat, &ScalarGrid::filled(8, 6, 0.2).unwrap()).unwrap();
    let o = corrdepth(&["eval", &s(&flat), &s(&gt_path)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let o = corrdepth(&["gradcheck", "--sizes", "8,50,200"]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("K=8 "));
    assert!(stdout.trim_end().ends_with("PASS"));
    let o = corrdepth(&["gradcheck", "--sizes", "8,50,200", "--corrupt-gradient"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8(o.stdout).unwrap().trim_end().ends_with("FAIL"));
    assert_eq!(corrdepth(&["gradcheck", "--sizes", "3"]).status.code(), Some(2));
}

#[test]
fn help_and_unknown_commands() {
    assert_eq!(corrdepth(&["--help"]).status.code(), Some(0));
    assert_eq!(corrdepth(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let run = |root: &Path| -> Vec<Vec<u8>> {
        let out = root.join("out");
        let fit = root.join("fit");
        corrdepth(&[
            "gen",
            &write_scene(root, HEMI_3),
            &s(&out),
            "--points",
            "30",
            "--gaussian-sigma",
            "0.4",
            "--outlier-fraction",
            "0.1",
        ]);
        corrdepth(&[
            "fit",
            &s(&out.join("manifest.json")),
            "--out",
            &s(&fit),
            "--max-iters",
            "25",
            "--seed",
            "8",
        ]);
        let eval = corrdepth(&["eval", &s(&fit.join("depth.txt")), &s(&out.join("depth_view0.txt"))]);
        let mut files: Vec<_> = [
            "manifest.json",
            "pair_0_1.csv",
            "pair_1_2_clean.csv",
            "depth_view2.txt",
            "mask_view1.txt",
        ]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
        files.extend(
            ["depth.txt", "depth.pgm", "fit_report.json", "loss_trace.csv"]
                .iter()
                .map(|f| fs::read(fit.join(f)).unwrap()),
        );
        files.push(eval.stdout);
        files
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}
