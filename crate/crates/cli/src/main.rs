//! Command-line driver: `generate` a pattern dataset from a grid case,
//! `train` a model on it, `eval` the result, `predict` from an angle
//! snapshot, and `benchmark` model inference against the traditional
//! contingency sweep.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use stressgrid::eval::{median_time, paired_t_test, ConfusionMatrix};
use stressgrid::models::{
    baseline_features, build_mlp, fit_cart, load_checkpoint, metric_of, mnsn_sweep, predict_cart,
    predict_sequential, save_checkpoint, select_feature_buses, train_cnn, train_sequential, Cart,
    Checkpoint, CnnConfig, Head, MlpConfig, ModelError, ModelKind, PaperlikeCnn, TrainOptions,
};
use stressgrid::netmodel::{parse_case, CaseFormat, GridCase};
use stressgrid::powerflow::{branch_flows, solve_nr, SolveOptions};
use stressgrid::scenario::{
    apply_contingency, build_load_profile, case_fingerprint, enumerate_contingencies, export_csv,
    generate_patterns, perturb_loads, read_dataset, split_dataset, write_dataset, Dataset,
    GenerateOptions, OperatingCondition, ProfileShape, Split,
};
use stressgrid::stress::stress_report;

#[derive(Parser)]
#[command(name = "stressgrid", version, about = "Power-system stress assessment toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Run-config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model preset: paper-cnn-118 | paper-mlp-8bus | cart.
    #[arg(long)]
    preset: Option<String>,
    /// Output head: class | si.
    #[arg(long)]
    head: Option<String>,
    /// Security-index exponent n.
    #[arg(long)]
    n_exponent: Option<u32>,
    /// Limit profile: p90-110 | p95-97 | custom.
    #[arg(long)]
    limits: Option<String>,
    /// Use the literal constant-denominator Adam bias correction.
    #[arg(long)]
    paper_exact_adam: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep operating conditions x N-1 contingencies into a labeled
    /// pattern dataset.
    Generate {
        /// Grid case (.m MATPOWER subset or .json native).
        #[arg(long)]
        case: Option<PathBuf>,
        /// Also export a per-pattern label CSV.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model on a generated dataset.
    Train {
        /// Dataset file from `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        /// Stop early once the test metric reaches this value.
        #[arg(long)]
        target: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Baseline checkpoints for a paired t-test comparison.
        #[arg(long)]
        baseline: Vec<PathBuf>,
        /// Also write a JSON report next to the text output.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Predict stress for an angle snapshot under one or all contingencies.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV with header `bus_id,angle_radians`.
        #[arg(long)]
        angles: PathBuf,
        #[arg(long, conflicts_with = "all")]
        contingency: Option<u32>,
        /// Predict every contingency the model knows.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Time model inference against the traditional NR + index sweep.
    Benchmark {
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Repetitions per timing (minimum 5 enforced).
        #[arg(long, default_value_t = 7)]
        reps: usize,
        /// Uniform load multiplier for the benchmark operating condition.
        #[arg(long, default_value_t = 1.2)]
        load_scale: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
}

// --- error / exit-code plumbing ---------------------------------------

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Convergence(String),
    Geometry(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Geometry(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Data(m)
            | CliError::Convergence(m)
            | CliError::Geometry(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Geometry(_) => CliError::Geometry(e.to_string()),
            ModelError::Diverged { .. } => CliError::Convergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate { case, csv, overrides } => cmd_generate(case, csv, overrides),
        Cmd::Train { data, epochs, batch_size, eta, target, overrides } => {
            cmd_train(data, epochs, batch_size, eta, target, overrides)
        }
        Cmd::Eval { data, model, baseline, json, overrides } => {
            cmd_eval(data, model, baseline, json, overrides)
        }
        Cmd::Predict { model, angles, contingency, all, overrides } => {
            cmd_predict(model, angles, contingency, all, overrides)
        }
        Cmd::Benchmark { case, model, reps, load_scale, overrides } => {
            cmd_benchmark(case, model, reps, load_scale, overrides)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &overrides.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(preset) = &overrides.preset {
        cfg.preset = preset.clone();
    }
    if let Some(head) = &overrides.head {
        cfg.set_head(head)?;
    }
    if let Some(n) = overrides.n_exponent {
        cfg.n_exponent = n;
    }
    if let Some(limits) = &overrides.limits {
        cfg.set_limits(limits)?;
    }
    if overrides.paper_exact_adam {
        cfg.paper_exact_adam = true;
    }
    if let Some(threads) = overrides.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One command at a time per output directory.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Config(
                format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_case(path: &Path) -> Result<GridCase, CliError> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("m") => CaseFormat::MatpowerSubset,
        Some("json") => CaseFormat::NativeJson,
        other => {
            return Err(CliError::Config(format!(
                "cannot infer case format from extension {other:?} (.m or .json)"
            )))
        }
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read case {}: {e}", path.display())))?;
    parse_case(&text, format).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Atomic artifact write: temp file in the target directory, renamed on
/// success; the temp file never survives an error.
fn write_atomic(path: &Path, write: impl FnOnce(&mut fs::File) -> Result<(), CliError>) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        write(&mut f)?;
        f.sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

// --- generate -----------------------------------------------------------

fn cmd_generate(case_flag: Option<PathBuf>, csv: bool, overrides: Overrides) -> Result<(), CliError> {
    let mut cfg = load_config(&overrides)?;
    if let Some(case) = case_flag {
        cfg.case = Some(case);
    }
    cfg.validate()?;
    let case_path = cfg
        .case
        .clone()
        .ok_or_else(|| CliError::Config("no case file given (--case or config `case`)".into()))?;
    let limits = cfg.limits()?;
    let case = load_case(&case_path)?;

    let _lock = DirLock::acquire(&cfg.out)?;

    let profile = build_load_profile(
        cfg.days as usize,
        cfg.slots_per_day as usize,
        ProfileShape::DoublePeak { min: cfg.load_min, max: cfg.load_max },
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let ocs: Vec<OperatingCondition> = profile
        .iter()
        .enumerate()
        .map(|(i, &mult)| {
            let oc = OperatingCondition::scaled(&case, i as u32, i as u32, mult);
            perturb_loads(&oc, cfg.sigma_frac, cfg.seed)
        })
        .collect();
    let contingencies = enumerate_contingencies(&case);

    let gen_opts = GenerateOptions {
        solve: SolveOptions::default(),
        n_exponent: cfg.n_exponent,
        seed: cfg.seed,
        threads: cfg.threads.max(1),
        retain_flows: false,
    };
    let mut ds = generate_patterns(&case, &ocs, &contingencies, &limits, &gen_opts)
        .map_err(|e| CliError::Convergence(e.to_string()))?;
    split_dataset(&mut ds, cfg.train_frac, cfg.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    // bind the dataset to the full generation config, not just the seed
    ds.fingerprint = case_fingerprint(&case, &cfg.generation_bytes());

    let data_path = cfg.out.join("dataset.psds");
    write_atomic(&data_path, |f| {
        write_dataset(&ds, f).map_err(|e| CliError::Data(e.to_string()))
    })?;
    if csv {
        write_atomic(&cfg.out.join("labels.csv"), |f| {
            export_csv(&ds, f).map_err(|e| CliError::Data(e.to_string()))
        })?;
    }

    let (feasible, infeasible, stressed, unstressed) = ds.tallies();
    let report = format!(
        "generate report\n\
         case: {} ({} buses, {} branches)\n\
         operating conditions: {} requested, {} retained, {} excluded\n\
         contingencies: {}\n\
         pattern slots: {}\n\
         feasible: {} (stressed {}, unstressed {})\n\
         infeasible: {}\n\
         train/test: {}/{}\n\
         fingerprint: {}\n\
         dataset: {}\n",
        case_path.display(),
        case.buses.len(),
        case.branches.len(),
        ocs.len(),
        ds.n_ocs(),
        ds.excluded_ocs.len(),
        ds.n_contingencies,
        ds.n_ocs() * ds.n_contingencies,
        feasible,
        stressed,
        unstressed,
        infeasible,
        ds.split_indices(Split::Train).len(),
        ds.split_indices(Split::Test).len(),
        hex::encode(&ds.fingerprint[..8]),
        data_path.display(),
    );
    print!("{report}");
    fs::write(cfg.out.join("generate-report.txt"), &report)?;
    Ok(())
}

// --- train --------------------------------------------------------------

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let mut f = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open dataset {}: {e}", path.display())))?;
    read_dataset(&mut f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_train(
    data: PathBuf,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    eta: Option<f64>,
    target: Option<f64>,
    overrides: Overrides,
) -> Result<(), CliError> {
    let mut cfg = load_config(&overrides)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    if let Some(e) = eta {
        cfg.eta = e;
    }
    if let Some(t) = target {
        cfg.target_metric = Some(t);
    }
    let ds = load_dataset(&data)?;
    let _lock = DirLock::acquire(&cfg.out)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        eta: cfg.eta,
        eta_decay: cfg.eta_decay,
        seed: cfg.seed,
        paper_exact_adam: cfg.paper_exact_adam,
        target_metric: cfg.target_metric,
        log: true,
    };
    let ckpt_path = cfg.out.join("model.ckpt");
    match cfg.preset.as_str() {
        "paper-cnn-118" => {
            let mut model = PaperlikeCnn::new(CnnConfig::standard(
                ds.n_buses,
                ds.n_contingencies,
                cfg.head,
            ))?;
            model.init(cfg.seed);
            model.set_normalization(&ds)?;
            let report = train_cnn(&mut model, &ds, &opts)?;
            let mut trace = String::from("epoch,train_loss,test_metric\n");
            for i in 0..report.train_loss.len() {
                trace.push_str(&format!(
                    "{},{},{}\n",
                    i + 1,
                    report.train_loss[i],
                    report.test_metric[i]
                ));
            }
            fs::write(cfg.out.join("train-trace.csv"), trace)?;
            if let Some(what) = report.diverged {
                return Err(CliError::Convergence(format!(
                    "training diverged ({what}); trace retained at {}",
                    cfg.out.join("train-trace.csv").display()
                )));
            }
            let ckpt = Checkpoint::from_cnn(&model, ds.fingerprint, None);
            write_atomic(&ckpt_path, |f| Ok(save_checkpoint(&ckpt, f)?))?;
            println!(
                "trained {} epochs, best test metric {:.4}{}",
                report.epochs_run,
                report.best_metric,
                if report.early_stopped { " (early stop)" } else { "" }
            );
        }
        "paper-mlp-8bus" => {
            let mlp_cfg = MlpConfig {
                feature_buses: select_feature_buses(ds.n_buses, 8),
                hidden: vec![20, 12],
                head: cfg.head,
            };
            let train_idx = ds.split_indices(Split::Train);
            if train_idx.is_empty() {
                return Err(CliError::Data("empty training split".into()));
            }
            let (x_raw, y) = baseline_features(&ds, &train_idx, &mlp_cfg.feature_buses, cfg.head);
            let (mean, scale) = stressgrid::models::standardize(&x_raw);
            let x: Vec<Vec<f64>> = x_raw
                .iter()
                .map(|r| stressgrid::models::apply_standardize(r, &mean, &scale))
                .collect();
            let mut net = build_mlp(&mlp_cfg);
            net.init(&mut seeded_rng(cfg.seed));
            let losses = train_sequential(&mut net, &x, &y, cfg.head, &opts)?;
            let mut trace = String::from("epoch,train_loss\n");
            for (i, l) in losses.iter().enumerate() {
                trace.push_str(&format!("{},{}\n", i + 1, l));
            }
            fs::write(cfg.out.join("train-trace.csv"), trace)?;
            let ckpt = Checkpoint::from_mlp(&mlp_cfg, &net, ds.fingerprint, mean, scale);
            write_atomic(&ckpt_path, |f| Ok(save_checkpoint(&ckpt, f)?))?;
            println!("trained {} epochs (final loss {:.6})", losses.len(), losses.last().unwrap());
        }
        "cart" => {
            let train_idx = ds.split_indices(Split::Train);
            if train_idx.is_empty() {
                return Err(CliError::Data("empty training split".into()));
            }
            let buses = select_feature_buses(ds.n_buses, 8);
            let (x, y) = baseline_features(&ds, &train_idx, &buses, cfg.head);
            let classification = cfg.head == Head::Classification;
            let mnsn = if cfg.mnsn > 0 {
                cfg.mnsn
            } else {
                let candidates: Vec<usize> = (1..=20).collect();
                let (best, _) = mnsn_sweep(&x, &y, &candidates, 5, cfg.seed, classification)?;
                println!("mnsn sweep selected {best}");
                best
            };
            let tree = fit_cart(&x, &y, mnsn, classification);
            let doc = CartArtifact {
                kind: "cart".into(),
                fingerprint: hex::encode(ds.fingerprint),
                feature_buses: buses,
                head: cfg.head,
                tree,
            };
            write_atomic(&ckpt_path, |f| {
                use std::io::Write;
                let text = serde_json::to_string(&doc)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                Ok(f.write_all(text.as_bytes())?)
            })?;
            println!("fitted tree with mnsn {mnsn} ({} nodes)", doc.tree.nodes.len());
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown preset `{other}` (paper-cnn-118 | paper-mlp-8bus | cart)"
            )))
        }
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CartArtifact {
    kind: String,
    fingerprint: String,
    feature_buses: Vec<usize>,
    head: Head,
    tree: Cart,
}

// --- eval ----------------------------------------------------------------

enum AnyModel {
    Cnn(PaperlikeCnn, [u8; 32]),
    Mlp {
        cfg: MlpConfig,
        net: stressgrid::neural::Sequential,
        feat_mean: Vec<f64>,
        feat_scale: Vec<f64>,
        fingerprint: [u8; 32],
    },
    Cart(CartArtifact),
}

impl AnyModel {
    fn head(&self) -> Head {
        match self {
            AnyModel::Cnn(m, _) => m.cfg.head,
            AnyModel::Mlp { cfg, .. } => cfg.head,
            AnyModel::Cart(a) => a.head,
        }
    }

    fn fingerprint(&self) -> [u8; 32] {
        match self {
            AnyModel::Cnn(_, fp) => *fp,
            AnyModel::Mlp { fingerprint, .. } => *fingerprint,
            AnyModel::Cart(a) => {
                let mut fp = [0u8; 32];
                if let Ok(bytes) = hex::decode(&a.fingerprint) {
                    if bytes.len() == 32 {
                        fp.copy_from_slice(&bytes);
                    }
                }
                fp
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AnyModel::Cnn(..) => "cnn",
            AnyModel::Mlp { .. } => "mlp",
            AnyModel::Cart(_) => "cart",
        }
    }

    fn predict(&self, ds: &Dataset, indices: &[usize]) -> Result<Vec<f64>, CliError> {
        match self {
            AnyModel::Cnn(model, _) => Ok(model.predict_patterns(ds, indices)?),
            AnyModel::Mlp { cfg, net, feat_mean, feat_scale, .. } => {
                let (x_raw, _) = baseline_features(ds, indices, &cfg.feature_buses, cfg.head);
                let x: Vec<Vec<f64>> = x_raw
                    .iter()
                    .map(|r| stressgrid::models::apply_standardize(r, feat_mean, feat_scale))
                    .collect();
                Ok(predict_sequential(net, &x)?)
            }
            AnyModel::Cart(a) => {
                let (x, _) = baseline_features(ds, indices, &a.feature_buses, a.head);
                Ok(x.iter().map(|r| predict_cart(&a.tree, r)).collect())
            }
        }
    }
}

fn load_model(path: &Path) -> Result<AnyModel, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    if bytes.starts_with(b"PSCK") {
        let ckpt = load_checkpoint(&mut bytes.as_slice())?;
        match &ckpt.kind {
            ModelKind::Cnn(_) => Ok(AnyModel::Cnn(ckpt.to_cnn()?, ckpt.fingerprint)),
            ModelKind::Mlp(_) => {
                let (cfg, net) = ckpt.to_mlp()?;
                Ok(AnyModel::Mlp {
                    cfg,
                    net,
                    feat_mean: ckpt.feat_mean,
                    feat_scale: ckpt.feat_scale,
                    fingerprint: ckpt.fingerprint,
                })
            }
        }
    } else {
        let art: CartArtifact = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Data(format!("{}: not a checkpoint: {e}", path.display())))?;
        Ok(AnyModel::Cart(art))
    }
}

fn check_fingerprint(model: &AnyModel, ds: &Dataset) -> Result<(), CliError> {
    if model.fingerprint() != ds.fingerprint {
        return Err(CliError::Data(
            "model fingerprint does not match the dataset (mixed experiment artifacts)".into(),
        ));
    }
    Ok(())
}

/// Stress decision from a raw model output under either head.
fn decide(head: Head, pred: f64) -> bool {
    match head {
        Head::Classification => pred > 0.5,
        Head::Regression => pred >= 1.0,
    }
}

fn cmd_eval(
    data: PathBuf,
    model_path: PathBuf,
    baselines: Vec<PathBuf>,
    json: bool,
    overrides: Overrides,
) -> Result<(), CliError> {
    let cfg = load_config(&overrides)?;
    let ds = load_dataset(&data)?;
    let model = load_model(&model_path)?;
    check_fingerprint(&model, &ds)?;
    let test_idx = ds.split_indices(Split::Test);
    if test_idx.is_empty() {
        return Err(CliError::Data("dataset has an empty test split".into()));
    }
    let preds = model.predict(&ds, &test_idx)?;
    let head = model.head();
    let metric = metric_of(head, &preds, &ds, &test_idx)?;
    let decisions: Vec<bool> = preds.iter().map(|&p| decide(head, p)).collect();
    let truth: Vec<bool> = test_idx.iter().map(|&i| ds.patterns[i].label_stressed).collect();
    let cm = ConfusionMatrix::from_predictions(&decisions, &truth)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let metric_name = match head {
        Head::Classification => "accuracy",
        Head::Regression => "1 - MAPE (nonzero targets)",
    };
    let mut report = format!(
        "eval report ({} on {} test patterns)\n\
         {metric_name}: {metric:.4}\n\
         confusion (stressed = positive):\n\
         \t tp {}  fn {}\n\
         \t fp {}  tn {}\n\
         decision accuracy: {:.4}\n",
        model.name(),
        test_idx.len(),
        cm.tp,
        cm.false_neg,
        cm.fp,
        cm.tn,
        cm.accuracy(),
    );
    let mut comparisons = Vec::new();
    let per_sample = |preds: &[f64], head: Head| -> Vec<f64> {
        preds
            .iter()
            .zip(&truth)
            .map(|(&p, &t)| if decide(head, p) == t { 1.0 } else { 0.0 })
            .collect()
    };
    let main_correct = per_sample(&preds, head);
    for path in &baselines {
        let other = load_model(path)?;
        check_fingerprint(&other, &ds)?;
        let other_preds = other.predict(&ds, &test_idx)?;
        let other_correct = per_sample(&other_preds, other.head());
        let t = paired_t_test(&main_correct, &other_correct)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let verdict = if t.a_better_at(0.05) {
            "main wins"
        } else if t.b_better_at(0.05) {
            "baseline wins"
        } else {
            "indistinguishable at p < 0.05"
        };
        report.push_str(&format!(
            "vs {} ({}): mean accuracy diff {:+.4}, t {:.3}, p {:.4} -> {}\n",
            other.name(),
            path.display(),
            t.mean_diff,
            t.t,
            t.p_two_sided,
            verdict,
        ));
        comparisons.push((other.name().to_string(), t.mean_diff, t.p_two_sided, verdict.to_string()));
    }
    print!("{report}");
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("eval-report.txt"), &report)?;
    if json {
        let doc = serde_json::json!({
            "model": model.name(),
            "test_patterns": test_idx.len(),
            "metric": metric,
            "metric_name": metric_name,
            "confusion": {"tp": cm.tp, "fn": cm.false_neg, "fp": cm.fp, "tn": cm.tn},
            "decision_accuracy": cm.accuracy(),
            "comparisons": comparisons
                .iter()
                .map(|(name, diff, p, verdict)| serde_json::json!({
                    "baseline": name, "mean_diff": diff, "p": p, "verdict": verdict,
                }))
                .collect::<Vec<_>>(),
        });
        fs::write(
            cfg.out.join("eval-report.json"),
            serde_json::to_string_pretty(&doc).expect("json"),
        )?;
    }
    Ok(())
}

// --- predict --------------------------------------------------------------

fn read_angle_csv(path: &Path, n: usize) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read angles {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data("angle file is empty".into()))?;
    let normalized = header.1.replace(' ', "");
    if normalized != "bus_id,angle_radians" {
        return Err(CliError::Data(format!(
            "angle file header must be `bus_id,angle_radians`, got `{}`",
            header.1
        )));
    }
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(id), Some(ang), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CliError::Data(format!("angle file line {}: expected 2 fields", i + 1)));
        };
        let id: u64 = id.trim().parse().map_err(|e| {
            CliError::Data(format!("angle file line {}: bad bus_id: {e}", i + 1))
        })?;
        let ang: f64 = ang.trim().parse().map_err(|e| {
            CliError::Data(format!("angle file line {}: bad angle: {e}", i + 1))
        })?;
        rows.push((id, ang));
    }
    if rows.len() != n {
        return Err(CliError::Data(format!(
            "angle file has {} buses, model expects {n}",
            rows.len()
        )));
    }
    rows.sort_by_key(|&(id, _)| id);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(CliError::Data("duplicate bus_id in angle file".into()));
    }
    Ok(rows.into_iter().map(|(_, a)| a).collect())
}

fn cmd_predict(
    model_path: PathBuf,
    angles: PathBuf,
    contingency: Option<u32>,
    all: bool,
    _overrides: Overrides,
) -> Result<(), CliError> {
    let AnyModel::Cnn(model, _) = load_model(&model_path)? else {
        return Err(CliError::Config(
            "predict requires a convolutional checkpoint (baselines have no contingency input)"
                .into(),
        ));
    };
    let n = model.cfg.n;
    let theta = read_angle_csv(&angles, n)?;
    let mut image = vec![0.0f32; n * n];
    for r in 0..n {
        for s in 0..n {
            image[r * n + s] = (theta[r] - theta[s]) as f32;
        }
    }
    let ids: Vec<u32> = if all {
        (0..model.cfg.n_contingencies as u32).collect()
    } else {
        let id = contingency
            .ok_or_else(|| CliError::Config("give --contingency <id> or --all".into()))?;
        if id as usize >= model.cfg.n_contingencies {
            return Err(CliError::Data(format!(
                "contingency {id} out of range (model knows {})",
                model.cfg.n_contingencies
            )));
        }
        vec![id]
    };
    let trace = model.conv_trace(&image)?;
    match model.cfg.head {
        Head::Classification => println!("contingency,p_stressed,state"),
        Head::Regression => println!("contingency,si_estimate,state"),
    }
    for id in ids {
        let pred = model.predict_cached(&trace, id);
        let state = match model.cfg.head {
            Head::Classification => {
                if pred > 0.5 {
                    "stressed"
                } else {
                    "unstressed"
                }
            }
            Head::Regression => {
                if pred >= 1.0 {
                    "stressed"
                } else if pred > 1e-9 {
                    "alarm"
                } else {
                    "unstressed"
                }
            }
        };
        println!("{id},{pred:.6},{state}");
    }
    Ok(())
}

// --- benchmark ---------------------------------------------------------------

fn cmd_benchmark(
    case_flag: Option<PathBuf>,
    model_path: PathBuf,
    reps: usize,
    load_scale: f64,
    overrides: Overrides,
) -> Result<(), CliError> {
    let mut cfg = load_config(&overrides)?;
    if let Some(case) = case_flag {
        cfg.case = Some(case);
    }
    let case_path = cfg
        .case
        .clone()
        .ok_or_else(|| CliError::Config("no case file given (--case or config `case`)".into()))?;
    let case = load_case(&case_path)?;
    let AnyModel::Cnn(model, _) = load_model(&model_path)? else {
        return Err(CliError::Config("benchmark requires a convolutional checkpoint".into()));
    };
    let limits = cfg.limits()?;
    let reps = reps.max(5);

    let contingencies = enumerate_contingencies(&case);
    if contingencies.len() != model.cfg.n_contingencies || case.n_buses() != model.cfg.n {
        return Err(CliError::Geometry(format!(
            "model expects {} buses / {} contingencies, case has {} / {}",
            model.cfg.n,
            model.cfg.n_contingencies,
            case.n_buses(),
            contingencies.len()
        )));
    }
    let oc = OperatingCondition::scaled(&case, 0, 0, load_scale);
    let solve = SolveOptions::default();
    let pre = solve_nr(&case, &oc, &solve, None)
        .map_err(|e| CliError::Convergence(e.to_string()))?;
    if !pre.converged {
        return Err(CliError::Convergence(format!(
            "benchmark operating condition at {load_scale}x load did not converge"
        )));
    }
    let n = case.n_buses();
    let mut image = vec![0.0f32; n * n];
    for r in 0..n {
        for s in 0..n {
            image[r * n + s] = (pre.v_ang[r] - pre.v_ang[s]) as f32;
        }
    }

    // traditional assessment: apply each outage, solve, score
    let t_traditional = median_time(reps, || {
        for c in &contingencies {
            let Ok(applied) = apply_contingency(&case, c) else { continue };
            if applied.islanded {
                continue;
            }
            let Ok(post) = solve_nr(&applied.case, &oc, &solve, Some(&pre)) else {
                continue;
            };
            if !post.converged {
                continue;
            }
            let flows = branch_flows(&applied.case, &post);
            let _ = std::hint::black_box(stress_report(
                &applied.case,
                &flows,
                &limits,
                cfg.n_exponent,
            ));
        }
    });

    // model assessment: one conv pass, then every contingency
    let t_model = median_time(reps, || {
        let trace = model.conv_trace(&image).expect("geometry checked above");
        for c in 0..model.cfg.n_contingencies as u32 {
            std::hint::black_box(model.predict_cached(&trace, c));
        }
    });

    let speedup = t_traditional.as_secs_f64() / t_model.as_secs_f64();
    println!(
        "timing benchmark ({} contingencies, load x{load_scale}, median of {reps})\n\
         traditional NR + index sweep: {:.4} s\n\
         model inference:              {:.4} s\n\
         speedup:                      {speedup:.1}x\n\
         hardware: {} {}",
        contingencies.len(),
        t_traditional.as_secs_f64(),
        t_model.as_secs_f64(),
        std::env::consts::OS,
        std::env::consts::ARCH,
    );
    Ok(())
}
