use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lesionbox::nifti_io::write_nifti;
use lesionbox::Volume3;
use serde_json::Value;
use tempfile::TempDir;

fn lesionbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionbox"))
        .args(args)
        .output()
        .expect("run lesionbox")
}

fn ok(args: &[&str]) -> String {
    let out = lesionbox(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn make_phantom(dir: &Path, extra: &[&str]) {
    let mut args = vec!["phantom", "--out-dir", p(dir), "--seed", "42"];
    args.extend_from_slice(extra);
    ok(&args);
}

const TWO_SCANS: &str = r#"{"scans": [
  {"id": "S1",
   "truth": [{"box": {"min": [0,0,0], "max": [1,1,1]}, "center": [0,0,0]},
             {"box": {"min": [10,0,0], "max": [11,1,1]}, "center": [10,0,0]}],
   "detections": [{"box": {"min": [0,0,0], "max": [1,1,1]}, "score": 0.9},
                  {"box": {"min": [20,0,0], "max": [21,1,1]}, "score": 0.8},
                  {"box": {"min": [10,0,0], "max": [11,1,1]}, "score": 0.6}]},
  {"id": "S2",
   "truth": [{"box": {"min": [0,0,0], "max": [1,1,1]}, "center": [0,0,0]}],
   "detections": [{"box": {"min": [5,0,0], "max": [6,1,1]}, "score": 0.7}]}
]}"#;

#[test]
fn phantom_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    make_phantom(&a, &[]);
    make_phantom(&b, &[]);
    for name in ["image.nii", "mask.nii", "truth.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let truth = json(&a.join("truth.json"));
    assert_eq!(truth["scans"][0]["id"], "image");
    assert_eq!(truth["scans"][0]["truth"].as_array().unwrap().len(), 3);
}

#[test]
fn phantom_without_lesions_and_impossible_phantom() {
    let tmp = TempDir::new().unwrap();
    make_phantom(tmp.path(), &["--n-lesions", "0"]);
    let truth = json(&tmp.path().join("truth.json"));
    assert_eq!(truth["scans"][0]["truth"], Value::Array(vec![]));

    let out = lesionbox(&[
        "phantom",
        "--out-dir",
        p(&tmp.path().join("x")),
        "--dims",
        "16,16,16",
        "--lesion-radius",
        "3.9,4",
        "--n-lesions",
        "50",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("placed"));
}

#[test]
fn gt_extract_single_voxel_and_phantom_mask() {
    let tmp = TempDir::new().unwrap();
    let mut data = vec![0.0; 8 * 8 * 8];
    data[3 + 8 * (4 + 8 * 5)] = 1.0;
    let mask = Volume3::with_spacing([8, 8, 8], [1.0; 3], data).unwrap();
    let path = tmp.path().join("single.nii");
    fs::write(&path, write_nifti(&mask).unwrap()).unwrap();
    let out: Value = serde_json::from_str(&ok(&["gt-extract", p(&path)])).unwrap();
    let t = &out["scans"][0]["truth"][0];
    assert_eq!(out["scans"][0]["id"], "single");
    assert_eq!(t["center"], serde_json::json!([3.0, 4.0, 5.0]));
    assert_eq!(t["box"]["min"], serde_json::json!([3.0, 4.0, 5.0]));

    make_phantom(tmp.path(), &[]);
    let table = ok(&[
        "gt-extract",
        p(&tmp.path().join("mask.nii")),
        "-o",
        p(&tmp.path().join("gt.json")),
    ]);
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("mask lesion 1: ("));
    assert_eq!(
        json(&tmp.path().join("gt.json"))["scans"][0]["truth"]
            .as_array()
            .unwrap()
            .len(),
        3
    );
}

#[test]
fn gt_extract_reports_bad_path() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("broken.nii");
    fs::write(&bad, b"not a nifti file").unwrap();
    let out = lesionbox(&["gt-extract", p(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.nii"));
}

#[test]
fn eval_two_scan_table() {
    let tmp = TempDir::new().unwrap();
    let dets = tmp.path().join("d.json");
    fs::write(&dets, TWO_SCANS).unwrap();
    let out_dir = tmp.path().join("report");
    let table = ok(&["eval", "--detections", p(&dets), "--out-dir", p(&out_dir)]);
    assert!(table.lines().any(|l| l == "1.0, 0.6667"), "{table}");
    assert_eq!(table.lines().count(), 5);
    assert_eq!(
        fs::read_to_string(out_dir.join("froc.csv")).unwrap(),
        "fpps,sensitivity\n0.000000,0.333333\n0.500000,0.333333\n1.000000,0.666667\n"
    );
    assert!(out_dir.join("froc_points.csv").exists());
    let svg = fs::read_to_string(out_dir.join("froc.svg")).unwrap();
    assert!(svg.contains("FPPS") && svg.contains("Sensitivity"));

    let custom = ok(&["eval", "--detections", p(&dets), "--fpps", "0.5,3"]);
    assert_eq!(custom, "fpps, sensitivity\n0.5, 0.3333\n3.0, 0.6667\n");
}

#[test]
fn eval_error_codes() {
    let tmp = TempDir::new().unwrap();
    let dets = tmp.path().join("d.json");
    fs::write(&dets, TWO_SCANS).unwrap();
    let truth = tmp.path().join("t.json");
    fs::write(&truth, r#"{"scans": [{"id": "S1", "truth": []}]}"#).unwrap();
    let out = lesionbox(&["eval", "--detections", p(&dets), "--truth", p(&truth)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("S2"));

    let broken = tmp.path().join("broken.json");
    fs::write(&broken, "{\"scans\": [").unwrap();
    assert_eq!(code(&lesionbox(&["eval", "--detections", p(&broken)])), 2);

    let dup = tmp.path().join("dup.json");
    fs::write(&dup, r#"{"scans": [{"id": "a"}, {"id": "a"}]}"#).unwrap();
    assert_eq!(code(&lesionbox(&["eval", "--detections", p(&dup)])), 3);

    assert_eq!(
        code(&lesionbox(&[
            "eval",
            "--detections",
            p(&dets),
            "--iou-threshold",
            "0"
        ])),
        2
    );
    assert_eq!(code(&lesionbox(&["eval"])), 2);
}

#[test]
fn detect_baseline_behaviour() {
    let tmp = TempDir::new().unwrap();
    make_phantom(tmp.path(), &[]);
    let image = tmp.path().join("image.nii");

    let found: Value =
        serde_json::from_str(&ok(&["detect-baseline", p(&image), "--threshold", "150"])).unwrap();
    assert_eq!(found["scans"][0]["id"], "image");
    assert_eq!(found["scans"][0]["detections"].as_array().unwrap().len(), 3);

    let none: Value =
        serde_json::from_str(&ok(&["detect-baseline", p(&image), "--threshold", "1000"])).unwrap();
    assert_eq!(none["scans"][0]["detections"], Value::Array(vec![]));

    // with vessels included, nms 1.0 keeps every component
    let all: Value = serde_json::from_str(&ok(&[
        "detect-baseline",
        p(&image),
        "--threshold",
        "50",
        "--nms-iou",
        "1.0",
    ]))
    .unwrap();
    let strict: Value = serde_json::from_str(&ok(&[
        "detect-baseline",
        p(&image),
        "--threshold",
        "50",
        "--nms-iou",
        "0.0",
    ]))
    .unwrap();
    let n_all = all["scans"][0]["detections"].as_array().unwrap().len();
    let n_strict = strict["scans"][0]["detections"].as_array().unwrap().len();
    assert!(n_all > 3 && n_strict <= n_all);

    assert_eq!(code(&lesionbox(&["detect-baseline", p(&image)])), 2);
    assert_eq!(
        code(&lesionbox(&[
            "detect-baseline",
            p(&tmp.path().join("missing.nii")),
            "--threshold",
            "1"
        ])),
        2
    );
}

#[test]
fn end_to_end_pipeline_and_thread_independence() {
    let tmp = TempDir::new().unwrap();
    make_phantom(tmp.path(), &[]);
    let image = tmp.path().join("image.nii");
    let truth = tmp.path().join("truth.json");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dets = tmp.path().join(format!("dets{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_lesionbox"))
            .env("LESIONBOX_THREADS", threads)
            .args([
                "detect-baseline",
                p(&image),
                "--threshold",
                "150",
                "-o",
                p(&dets),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read(&dets).unwrap());
        let table = ok(&["eval", "--detections", p(&dets), "--truth", p(&truth)]);
        assert_eq!(
            table,
            "fpps, sensitivity\n0.25, 1.0000\n0.5, 1.0000\n1.0, 1.0000\n2.0, 1.0000\n"
        );
    }
    assert_eq!(outputs[0], outputs[1]);

    let bad = Command::new(env!("CARGO_BIN_EXE_lesionbox"))
        .env("LESIONBOX_THREADS", "zero")
        .args(["eval", "--detections", p(&truth)])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn preprocess_prints_offset_and_keeps_normalized_input() {
    let tmp = TempDir::new().unwrap();
    // already cropped (no zero voxels) and already standardized
    let data = vec![-1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0];
    let vol = Volume3::with_spacing([2, 2, 2], [1.0; 3], data.clone()).unwrap();
    let input = tmp.path().join("in.nii");
    fs::write(&input, write_nifti(&vol).unwrap()).unwrap();
    let output = tmp.path().join("out.nii");
    let stdout = ok(&[
        "preprocess",
        p(&input),
        "--spacing",
        "1,1,1",
        "-o",
        p(&output),
    ]);
    assert!(
        stdout.lines().any(|l| l == "crop offset: 0 0 0"),
        "{stdout}"
    );
    let back = lesionbox::nifti_io::read_nifti(&fs::read(&output).unwrap()).unwrap();
    assert_eq!(back.data(), &data[..]);

    let mut padded = vec![0.0; 4 * 4 * 4];
    padded[1 + 4 * (2 + 4 * 3)] = 5.0;
    let vol = Volume3::with_spacing([4, 4, 4], [1.0; 3], padded).unwrap();
    fs::write(&input, write_nifti(&vol).unwrap()).unwrap();
    let stdout = ok(&["preprocess", p(&input), "-o", p(&output)]);
    assert!(
        stdout.lines().any(|l| l == "crop offset: 1 2 3"),
        "{stdout}"
    );

    assert_eq!(
        code(&lesionbox(&[
            "preprocess",
            p(&input),
            "--spacing",
            "0,1,1",
            "-o",
            p(&output)
        ])),
        2
    );
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = TempDir::new().unwrap();
    let dets = tmp.path().join("d.json");
    fs::write(&dets, TWO_SCANS).unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[eval]\nfpps = [1.0]\n").unwrap();
    assert_eq!(
        ok(&["--config", p(&cfg), "eval", "--detections", p(&dets)]),
        "fpps, sensitivity\n1.0, 0.6667\n"
    );
    // the flag wins over the file
    assert_eq!(
        ok(&[
            "eval",
            "--detections",
            p(&dets),
            "--config",
            p(&cfg),
            "--fpps",
            "2"
        ]),
        "fpps, sensitivity\n2.0, 0.6667\n"
    );
    fs::write(&cfg, "[eval]\nunknown = 1\n").unwrap();
    assert_eq!(
        code(&lesionbox(&[
            "--config",
            p(&cfg),
            "eval",
            "--detections",
            p(&dets)
        ])),
        2
    );

    fs::write(&cfg, "[phantom]\nn_lesions = 1\nseed = 3\n").unwrap();
    let out_dir = tmp.path().join("ph");
    ok(&["--config", p(&cfg), "phantom", "--out-dir", p(&out_dir)]);
    assert_eq!(
        json(&out_dir.join("truth.json"))["scans"][0]["truth"]
            .as_array()
            .unwrap()
            .len(),
        1
    );
}
