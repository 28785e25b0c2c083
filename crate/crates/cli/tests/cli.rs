//! End-to-end subcommand tests against a small five-bus ring case.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIVE_BUS: &str = "\
function mpc = case5ring
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0  0 0 1 1.02 0 138 1 1.06 0.94;
    2 2 20 5  0 0 1 1.01 0 138 1 1.06 0.94;
    3 1 40 10 0 0 1 1.00 0 138 1 1.06 0.94;
    4 1 60 15 0 0 1 1.00 0 138 1 1.06 0.94;
    5 1 30 8  0 0 1 1.00 0 138 1 1.06 0.94;
];
mpc.gen = [
    1 90 0 100 -100 1.02 100 1 300 0;
    2 60 0 80  -80  1.01 100 1 150 0;
];
mpc.branch = [
    1 2 0.01 0.06 0.02 50 0 0 0 0 1 -360 360;
    2 3 0.01 0.08 0.02 50 0 0 0 0 1 -360 360;
    3 4 0.01 0.07 0.02 50 0 0 0 0 1 -360 360;
    4 5 0.01 0.08 0.02 50 0 0 0 0 1 -360 360;
    5 1 0.01 0.06 0.02 60 0 0 0 0 1 -360 360;
    2 4 0.02 0.10 0.02 40 0 0 0 0 1 -360 360;
];
";

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stressgrid")
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    case: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let case = root.join("case5.m");
        fs::write(&case, FIVE_BUS).unwrap();
        Workspace { _dir: dir, root, case }
    }

    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let path = self.root.join(name);
        let text = format!(
            "case = {}\ndays = 1\nslots_per_day = 8\nsigma_frac = 0.05\n\
             load_min = 1.0\nload_max = 1.4\nseed = 11\ntrain_frac = 0.7\n{extra}",
            self.case.display()
        );
        fs::write(&path, text).unwrap();
        path
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate(ws: &Workspace, out_dir: &Path, seed: Option<u64>) -> Output {
    let cfg = ws.config("gen.cfg", "");
    let out_s = out_dir.to_str().unwrap().to_string();
    let cfg_s = cfg.to_str().unwrap().to_string();
    let mut args = vec!["generate", "--config", &cfg_s, "--out", &out_s];
    let seed_s;
    if let Some(s) = seed {
        seed_s = s.to_string();
        args.extend(["--seed", &seed_s]);
    }
    run(&args)
}

#[test]
fn generate_writes_dataset_and_report() {
    let ws = Workspace::new();
    let out_dir = ws.root.join("gen1");
    let out = generate(&ws, &out_dir, None);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 8 OCs x (6 branch + 2 gen outages) slots
    assert!(stdout.contains("pattern slots: 64"), "{stdout}");
    assert!(out_dir.join("dataset.psds").exists());
    assert!(out_dir.join("generate-report.txt").exists());
    assert!(!out_dir.join(".lock").exists(), "lock must be released");
    assert!(!out_dir.join("dataset.tmp").exists(), "no temp litter");
}

#[test]
fn generate_is_byte_deterministic() {
    let ws = Workspace::new();
    let a = ws.root.join("a");
    let b = ws.root.join("b");
    assert_ok(&generate(&ws, &a, Some(7)));
    assert_ok(&generate(&ws, &b, Some(7)));
    let bytes_a = fs::read(a.join("dataset.psds")).unwrap();
    let bytes_b = fs::read(b.join("dataset.psds")).unwrap();
    assert_eq!(bytes_a, bytes_b);
    let c = ws.root.join("c");
    assert_ok(&generate(&ws, &c, Some(8)));
    assert_ne!(bytes_a, fs::read(c.join("dataset.psds")).unwrap());
}

#[test]
fn inverted_limits_fail_before_any_work() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "bad.cfg",
        "limits = custom\nalarm_frac = 1.1\nstress_frac = 0.9\n",
    );
    let out_dir = ws.root.join("bad");
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.join("dataset.psds").exists());
}

#[test]
fn locked_output_directory_is_refused() {
    let ws = Workspace::new();
    let out_dir = ws.root.join("locked");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(".lock"), "").unwrap();
    let out = generate(&ws, &out_dir, None);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("locked"), "{stderr}");
}

fn train(data: &Path, out_dir: &Path, preset: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--preset",
        preset,
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_eval_predict_benchmark_pipeline() {
    let ws = Workspace::new();
    let gen_dir = ws.root.join("gen");
    assert_ok(&generate(&ws, &gen_dir, Some(5)));
    let data = gen_dir.join("dataset.psds");

    // CNN training is deterministic: identical seeds, identical bytes
    let t1 = ws.root.join("t1");
    let t2 = ws.root.join("t2");
    for dir in [&t1, &t2] {
        assert_ok(&train(&data, dir, "paper-cnn-118", &["--epochs", "2"]));
        assert!(dir.join("train-trace.csv").exists());
    }
    let ckpt = fs::read(t1.join("model.ckpt")).unwrap();
    assert_eq!(ckpt, fs::read(t2.join("model.ckpt")).unwrap());

    // tree baseline trains from the same dataset
    let tc = ws.root.join("tcart");
    assert_ok(&train(&data, &tc, "cart", &[]));

    // eval with a baseline comparison
    let ev = ws.root.join("ev");
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--model",
        t1.join("model.ckpt").to_str().unwrap(),
        "--baseline",
        tc.join("model.ckpt").to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
        "--json",
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("confusion"), "{stdout}");
    assert!(stdout.contains("vs cart"), "{stdout}");
    assert!(ev.join("eval-report.json").exists());

    // predict --all emits one row per contingency
    let angles = ws.root.join("angles.csv");
    let mut csv = String::from("bus_id,angle_radians\n");
    for (i, a) in [0.0, -0.02, -0.05, -0.07, -0.04].iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, a));
    }
    fs::write(&angles, csv).unwrap();
    let out = run(&[
        "predict",
        "--model",
        t1.join("model.ckpt").to_str().unwrap(),
        "--angles",
        angles.to_str().unwrap(),
        "--all",
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1 + 8, "{stdout}");

    // unknown contingency id is a data error
    let out = run(&[
        "predict",
        "--model",
        t1.join("model.ckpt").to_str().unwrap(),
        "--angles",
        angles.to_str().unwrap(),
        "--contingency",
        "99",
    ]);
    assert_eq!(out.status.code(), Some(3));

    // malformed angle header is a data error
    fs::write(&angles, "bus,angle\n1,0.0\n").unwrap();
    let out = run(&[
        "predict",
        "--model",
        t1.join("model.ckpt").to_str().unwrap(),
        "--angles",
        angles.to_str().unwrap(),
        "--all",
    ]);
    assert_eq!(out.status.code(), Some(3));

    // benchmark reports both timings and the ratio
    let out = run(&[
        "benchmark",
        "--case",
        ws.case.to_str().unwrap(),
        "--model",
        t1.join("model.ckpt").to_str().unwrap(),
        "--reps",
        "5",
        "--load-scale",
        "1.2",
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("traditional"), "{stdout}");
    assert!(stdout.contains("speedup"), "{stdout}");
}

#[test]
fn eval_rejects_mismatched_artifacts() {
    let ws = Workspace::new();
    let g1 = ws.root.join("g1");
    let g2 = ws.root.join("g2");
    assert_ok(&generate(&ws, &g1, Some(1)));
    assert_ok(&generate(&ws, &g2, Some(2)));
    let tr = ws.root.join("tr");
    assert_ok(&train(
        &g1.join("dataset.psds"),
        &tr,
        "paper-cnn-118",
        &["--epochs", "1"],
    ));
    // model trained on g1 must not evaluate against g2's dataset
    let out = run(&[
        "eval",
        "--data",
        g2.join("dataset.psds").to_str().unwrap(),
        "--model",
        tr.join("model.ckpt").to_str().unwrap(),
        "--out",
        ws.root.join("evx").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fingerprint"), "{stderr}");
}

#[test]
fn mlp_preset_trains_and_evaluates() {
    let ws = Workspace::new();
    let gen_dir = ws.root.join("gen");
    assert_ok(&generate(&ws, &gen_dir, Some(9)));
    let data = gen_dir.join("dataset.psds");
    let tm = ws.root.join("tm");
    assert_ok(&train(&data, &tm, "paper-mlp-8bus", &["--epochs", "3"]));
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--model",
        tm.join("model.ckpt").to_str().unwrap(),
        "--out",
        ws.root.join("evm").to_str().unwrap(),
    ]);
    assert_ok(&out);
}
