use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hcnet::pde::io::{encode_pgm, read_csv};
use hcnet::pde::{eval_fourier, fdm_solve, fit_fourier, FdmConfig, TemperatureField};
use hcnet::PaddingMode;
use tempfile::TempDir;

fn hcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcnet"))
        .args(args)
        .output()
        .expect("spawn hcnet")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key}= in {out}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_grid(dir: &Path, name: &str, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> PathBuf {
    let mut text = String::new();
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| format!("{:?}", f(i, j))).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn bump(i: usize, j: usize) -> f64 {
    (-((i as f64 - 4.0).powi(2) + (j as f64 - 6.0).powi(2)) / 6.0).exp()
}

#[test]
fn solve_fdm_writes_the_library_result() {
    let dir = TempDir::new().unwrap();
    let grid = write_grid(dir.path(), "in.csv", 9, 12, bump);
    let out = dir.path().join("out.csv");
    let pgm = dir.path().join("out.pgm");
    let o = hcnet(&[
        "solve-fdm", "--grid", s(&grid), "--alpha", "0.1,0.2,0.05,0.15", "--dt", "1", "--steps", "7",
        "--boundary", "periodic", "--out", s(&out), "--pgm", s(&pgm),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let start = TemperatureField::from_fn(9, 12, 1.0, 1.0, bump).unwrap();
    let cfg = FdmConfig {
        alpha_x1: 0.1,
        alpha_x2: 0.2,
        alpha_y1: 0.05,
        alpha_y2: 0.15,
        dt: 1.0,
        steps: 7,
        boundary: PaddingMode::Periodic,
        allow_unstable: false,
    };
    let expected = fdm_solve(&start, &cfg).unwrap();
    let written = read_csv(&out).unwrap();
    assert_eq!((written.rows, written.cols), (9, 12));
    assert_eq!(written.values, expected.values());
    assert_eq!(fs::read(&pgm).unwrap(), encode_pgm(9, 12, expected.values()));
    let stdout = stdout(&o);
    assert_eq!(value(&stdout, "stability_ratio"), "0.5");
    let drift = (value(&stdout, "sum_after").parse::<f64>().unwrap() - start.sum()).abs();
    assert!(drift < 1e-12);
}

#[test]
fn unstable_step_exits_with_numeric_code_unless_allowed() {
    let dir = TempDir::new().unwrap();
    let grid = write_grid(dir.path(), "in.csv", 5, 5, bump);
    let out = dir.path().join("out.csv");
    let args = ["solve-fdm", "--grid", s(&grid), "--alpha", "0.3,0.3,0.3,0.3", "--dt", "1", "--steps", "3", "--out", s(&out)];
    let o = hcnet(&args);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("1.2"), "{}", stderr(&o));
    assert!(!out.exists());

    let mut forced = args.to_vec();
    forced.push("--unsafe");
    assert_eq!(code(&hcnet(&forced)), 0);
    assert!(out.exists());
}

#[test]
fn file_errors_exit_with_io_code() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.csv");
    let missing = dir.path().join("missing.csv");
    let o = hcnet(&["solve-fdm", "--grid", s(&missing), "--alpha", "0.1,0.1,0.1,0.1", "--dt", "1", "--steps", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 4);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,x\n").unwrap();
    let o = hcnet(&["export-heatmap", "--grid", s(&bad), "--out", s(&dir.path().join("h.pgm"))]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

#[test]
fn malformed_arguments_exit_with_usage_code() {
    let cases: &[&[&str]] = &[
        &[],
        &["no-such-command"],
        &["solve-fdm", "--grid", "a.csv", "--alpha", "0.1,0.1", "--dt", "1", "--steps", "1", "--out", "b.csv"],
        &["solve-fdm", "--grid", "a.csv", "--alpha", "0.1,0.1,0.1,0.1", "--dt", "1", "--steps", "1", "--out", "b.csv", "--boundary", "mirror"],
        &["solve-fourier", "--grid", "a.csv", "--modes", "3", "--time", "1", "--out", "b.csv"],
        &["verify", "--suite", "everything"],
        &["gradcheck", "--target", "ra-layer"],
        &["gradcheck", "--target", "nothing", "--seed", "1"],
        &["train", "--config", "x.cfg"],
        &["params"],
    ];
    for args in cases {
        assert_eq!(code(&hcnet(args)), 2, "{args:?}");
    }
}

#[test]
fn solve_fourier_writes_the_library_result() {
    let dir = TempDir::new().unwrap();
    let n = 15;
    let l = std::f64::consts::PI;
    let h = l / (n + 1) as f64;
    let init = |i: usize, j: usize| {
        let (x, y) = ((i + 1) as f64 * h, (j + 1) as f64 * h);
        x.sin() * y.sin() + 0.3 * (2.0 * x).sin() * (3.0 * y).sin()
    };
    let grid = write_grid(dir.path(), "in.csv", n, n, init);
    let out = dir.path().join("out.csv");
    let coeffs = dir.path().join("coeffs.csv");
    let o = hcnet(&[
        "solve-fourier", "--grid", s(&grid), "--modes", "4,4", "--diffusivity", "0.5", "--time", "0.2",
        "--out", s(&out), "--coeffs", s(&coeffs),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let field = TemperatureField::from_fn(n, n, h, h, init).unwrap();
    let sol = fit_fourier(&field, l, 4, 4, 0.5).unwrap();
    let expected = eval_fourier(&sol, 0.2, n, n).unwrap();
    assert_eq!(read_csv(&out).unwrap().values, expected.values());
    let c = read_csv(&coeffs).unwrap();
    assert_eq!((c.rows, c.cols), (4, 4));
    assert!((c.values[0] - 1.0).abs() < 1e-12);
    assert!((c.values[4 + 2] - 0.3).abs() < 1e-12);
    let stdout = stdout(&o);
    assert_eq!(value(&stdout, "dominant_mode"), "1,1");
    let amp: f64 = value(&stdout, "dominant_amplitude_at_time").parse().unwrap();
    assert!((amp - (-0.5f64 * 2.0 * 0.2).exp()).abs() < 1e-12);
}

#[test]
fn export_heatmap_round_trips_the_grid() {
    let dir = TempDir::new().unwrap();
    let grid = write_grid(dir.path(), "g.csv", 2, 2, |i, j| [[0.0, 1.0], [0.5, 2.0]][i][j]);
    let pgm = dir.path().join("g.pgm");
    let o = hcnet(&["export-heatmap", "--grid", s(&grid), "--out", s(&pgm)]);
    assert_eq!(code(&o), 0);
    let mut expected = b"P5\n2 2\n255\n".to_vec();
    expected.extend([0, 128, 64, 255]);
    assert_eq!(fs::read(&pgm).unwrap(), expected);
}

#[test]
fn verify_conservation_passes_and_reports_drift() {
    let o = hcnet(&["verify", "--suite", "conservation"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS") && !out.contains("FAIL"), "{out}");
    assert!(out.contains("1e-12"), "{out}");
}

#[test]
fn verify_spectrum_lists_frequency_pairs() {
    let o = hcnet(&["verify", "--suite", "spectrum"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("(2,0)"), "{}", stdout(&o));
}

#[test]
fn gradcheck_reports_relative_error() {
    let o = hcnet(&["gradcheck", "--target", "ra-layer", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "status"), "PASS");
    assert_eq!(value(&out, "failures"), "0");
    assert!(value(&out, "max_rel_err").parse::<f64>().unwrap() <= 1e-5);
    assert_eq!(hcnet(&["gradcheck", "--target", "ra-layer", "--seed", "5"]).stdout, o.stdout);
}

#[test]
fn params_reports_budget_for_tiny_variant() {
    let o = hcnet(&["params", "--config", s(&config_path("hcnet-t.cfg"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let params: f64 = value(&out, "params").parse().unwrap();
    let macs: f64 = value(&out, "macs").parse().unwrap();
    assert!((params / 28e6 - 1.0).abs() <= 0.10, "{params}");
    assert!((macs / 4.1e9 - 1.0).abs() <= 0.15, "{macs}");
    assert_eq!(value(&out, "params_status"), "PASS");
    assert_eq!(value(&out, "macs_status"), "PASS");
}

#[test]
fn shipped_configs_parse() {
    for name in ["hcnet-t.cfg", "hcnet-s.cfg", "hcnet-b.cfg", "nano-mnist.cfg"] {
        let o = hcnet(&["params", "--config", s(&config_path(name))]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
    }
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model = nano\nlearning_rate = 3\n").unwrap();
    assert_eq!(code(&hcnet(&["params", "--config", s(&cfg)])), 3);
    fs::write(&cfg, "stage_dims = 64,32,16,8\n").unwrap();
    assert_eq!(code(&hcnet(&["params", "--config", s(&cfg)])), 3);
    assert_eq!(code(&hcnet(&["params", "--config", s(&dir.path().join("none.cfg"))])), 4);
}

/// Writes a tiny digits set in the MNIST file layout: each class lights a
/// different horizontal band.
fn synthetic_mnist(dir: &Path, train: usize, test: usize) {
    let write = |prefix: &str, n: usize, offset: usize| {
        let mut images = vec![0, 0, 8, 3];
        images.extend((n as u32).to_be_bytes());
        images.extend(28u32.to_be_bytes());
        images.extend(28u32.to_be_bytes());
        let mut labels = vec![0, 0, 8, 1];
        labels.extend((n as u32).to_be_bytes());
        for k in 0..n {
            let label = ((k + offset) * 7 + 3) % 10;
            labels.push(label as u8);
            for r in 0..28 {
                for c in 0..28 {
                    let band = r / 3 == label;
                    let noise = ((r * 31 + c * 17 + k * 13) % 23) as u8;
                    images.push(if band { 200 + noise } else { noise });
                }
            }
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    };
    write("train", train, 0);
    write("t10k", test, 1);
}

fn train_args<'a>(cfg: &'a str, data: &'a str) -> Vec<&'a str> {
    vec!["train", "--config", cfg, "--seed", "7", "--data-dir", data, "--epochs", "2", "--batch-size", "16"]
}

#[test]
fn train_is_reproducible_and_checkpoints_evaluate() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("mnist");
    fs::create_dir(&data).unwrap();
    synthetic_mnist(&data, 48, 20);
    let cfg = config_path("nano-mnist.cfg");
    let (cfg, data) = (s(&cfg).to_string(), s(&data).to_string());
    let metrics = dir.path().join("metrics.csv");
    let ckpt = dir.path().join("run.ckpt");

    let mut args = train_args(&cfg, &data);
    args.extend(["--metrics", s(&metrics), "--checkpoint", s(&ckpt)]);
    let first = hcnet(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = hcnet(&train_args(&cfg, &data));
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);

    let out = stdout(&first);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,eval_acc");
    assert_eq!(lines.len(), 3);
    assert_eq!(fs::read_to_string(&metrics).unwrap(), out);

    let eval_acc: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    let o = hcnet(&["eval", "--checkpoint", s(&ckpt), "--data-dir", &data]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = stdout(&o);
    assert_eq!(value(&ev, "count"), "20");
    assert_eq!(value(&ev, "epoch"), "2");
    assert!((value(&ev, "accuracy").parse::<f64>().unwrap() - eval_acc).abs() < 1e-12);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("mnist");
    fs::create_dir(&data).unwrap();
    synthetic_mnist(&data, 32, 10);
    let cfg = config_path("nano-mnist.cfg");
    let (cfg, data) = (s(&cfg).to_string(), s(&data).to_string());
    let ckpt = dir.path().join("half.ckpt");

    let full = hcnet(&train_args(&cfg, &data));
    assert_eq!(code(&full), 0, "{}", stderr(&full));

    let mut head = train_args(&cfg, &data);
    head.extend(["--max-steps", "2", "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&hcnet(&head)), 0);
    let mut tail = train_args(&cfg, &data);
    tail.extend(["--resume", s(&ckpt)]);
    let resumed = hcnet(&tail);
    assert_eq!(code(&resumed), 0, "{}", stderr(&resumed));

    let full_rows: Vec<String> = stdout(&full).lines().map(String::from).collect();
    let resumed_rows: Vec<String> = stdout(&resumed).lines().map(String::from).collect();
    assert_eq!(resumed_rows.len(), 2);
    assert_eq!(resumed_rows[1], full_rows[2]);
}

#[test]
fn training_failures_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("mnist");
    fs::create_dir(&data).unwrap();
    synthetic_mnist(&data, 16, 4);
    let cfg = config_path("nano-mnist.cfg");
    let (cfg, data) = (s(&cfg).to_string(), s(&data).to_string());

    let mut args = train_args(&cfg, &data);
    args.extend(["--lr", "1e30"]);
    let o = hcnet(&args);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("epoch ") && msg.contains("batch ") && msg.contains("lr "), "{msg}");

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&hcnet(&train_args(&cfg, s(&empty)))), 4);

    let mut args = train_args(&cfg, &data);
    args.extend(["--precision", "f16"]);
    assert_eq!(code(&hcnet(&args)), 3);

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&hcnet(&["eval", "--checkpoint", s(&junk), "--data-dir", &data])), 4);
}
