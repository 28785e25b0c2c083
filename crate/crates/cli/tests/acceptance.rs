//! Acceptance suite: one test per release criterion, each printing a
//! single `ACCEPTANCE NN <name>: PASS|FAIL` line. Run with
//! `cargo test --test acceptance -- --nocapture` to see every line.
//!
//! The expensive fixtures (the 118-bus dataset sweep and the trained
//! classification network) are built once and shared across criteria.

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stressgrid::eval::{mape_accuracy, median_time, paired_t_test, ConfusionMatrix};
use stressgrid::models::{
    apply_standardize, baseline_features, build_mlp, fit_cart, predict_cart,
    predict_sequential, select_feature_buses, standardize, train_cnn, train_sequential,
    MlpConfig, TrainReport,
};
use stressgrid::netmodel::parse_case;
use stressgrid::neural::{
    adam_step, cross_entropy, cross_entropy_grad, AdamState, Conv2d, Dense, Dropout, Layer,
    MaxPool, Sequential, Tensor,
};
use stressgrid::powerflow::{
    branch_flows, recompute_mismatch, slack_injection, solve_nr, SolveOptions,
};
use stressgrid::scenario::{
    apply_contingency, build_load_profile, enumerate_contingencies, generate_patterns,
    perturb_loads, split_dataset, GenerateOptions, ProfileShape, Split,
};
use stressgrid::stress::{security_index, stress_report, stress_state};
use stressgrid::{
    Branch, Bus, BusKind, CaseFormat, CnnConfig, Generator, GridCase, Head, OperatingCondition,
    PaperlikeCnn, SolvedState, StressLimits, TrainOptions,
};

fn verdict(num: u32, name: &str, ok: bool) {
    eprintln!(
        "ACCEPTANCE {num:02} {name}: {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance criterion {num} ({name}) failed");
}

fn case118() -> GridCase {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/case118.m");
    let text = fs::read_to_string(path).expect("data/case118.m");
    parse_case(&text, CaseFormat::MatpowerSubset).expect("parse case118")
}

// --- shared expensive fixture -------------------------------------------

struct Fixture {
    case: GridCase,
    ds: stressgrid::Dataset,
    cnn: PaperlikeCnn,
    report: TrainReport,
    train_secs: f64,
    test_idx: Vec<usize>,
    cnn_preds: Vec<f64>,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

/// 200 operating conditions x full N-1 list on the 118-bus case, split
/// 70/30, then the classification network trained to the 0.98 accuracy
/// target. Mirrors the CLI defaults (double-peak day, 90/110% limits).
fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let case = case118();
        let profile = build_load_profile(
            1,
            200,
            ProfileShape::DoublePeak {
                min: 0.7,
                max: 1.2,
            },
        )
        .unwrap();
        let ocs: Vec<OperatingCondition> = profile
            .iter()
            .enumerate()
            .map(|(i, &mult)| {
                let oc = OperatingCondition::scaled(&case, i as u32, i as u32, mult);
                perturb_loads(&oc, 0.02, 7)
            })
            .collect();
        let contingencies = enumerate_contingencies(&case);
        let limits = StressLimits::p90_110();
        let gen_opts = GenerateOptions {
            seed: 7,
            ..GenerateOptions::default()
        };
        let mut ds = generate_patterns(&case, &ocs, &contingencies, &limits, &gen_opts).unwrap();
        split_dataset(&mut ds, 0.7, 7).unwrap();

        let mut cnn = PaperlikeCnn::new(CnnConfig::standard(
            ds.n_buses,
            ds.n_contingencies,
            Head::Classification,
        ))
        .unwrap();
        cnn.init(7);
        cnn.set_normalization(&ds).unwrap();
        let opts = TrainOptions {
            epochs: 200,
            batch_size: ds.n_contingencies,
            eta: 1e-3,
            seed: 7,
            target_metric: Some(0.98),
            log: true,
            ..TrainOptions::default()
        };
        let start = Instant::now();
        let report = train_cnn(&mut cnn, &ds, &opts).unwrap();
        let train_secs = start.elapsed().as_secs_f64();

        let test_idx = ds.split_indices(Split::Test);
        let cnn_preds = cnn.predict_patterns(&ds, &test_idx).unwrap();
        Fixture {
            case,
            ds,
            cnn,
            report,
            train_secs,
            test_idx,
            cnn_preds,
        }
    })
}

// --- 01: power-flow solver ------------------------------------------------

#[test]
fn criterion_01_power_flow_solver() {
    let case = case118();
    let oc = OperatingCondition::nominal(&case);
    let start = Instant::now();
    let state = solve_nr(&case, &oc, &SolveOptions::default(), None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let residual = recompute_mismatch(&case, &oc, &state).unwrap();

    // System balance: generation - load - losses vanishes.
    let slack = case.slack_bus();
    let slack_inj = slack_injection(&case, &state).unwrap();
    let scheduled: f64 = case
        .generators
        .iter()
        .filter(|g| g.in_service && g.bus != slack)
        .map(|g| g.p_set)
        .sum();
    let load: f64 = oc.p_load.iter().sum::<f64>() - oc.p_load[slack];
    let losses = branch_flows(&case, &state).total_loss_p();
    let balance = (slack_inj + scheduled - load - losses).abs();

    // Lossless-line identity: for r = 0, b = 0, tap = 1 the sending-end
    // active flow must equal v_r v_s sin(theta_r - theta_s) / x exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut identity_ok = true;
    for _ in 0..1000 {
        let vr: f64 = rng.gen_range(0.9..1.1);
        let vs: f64 = rng.gen_range(0.9..1.1);
        let ar: f64 = rng.gen_range(-0.6..0.6);
        let asn: f64 = rng.gen_range(-0.6..0.6);
        let x: f64 = rng.gen_range(0.01..0.5);
        let case2 = two_bus_lossless(x);
        let state2 = SolvedState {
            v_mag: vec![vr, vs],
            v_ang: vec![ar, asn],
            converged: true,
            iterations: 0,
            max_mismatch: 0.0,
            pq_schedule: Vec::new(),
        };
        let flows = branch_flows(&case2, &state2);
        let expected = vr * vs * (ar - asn).sin() / x;
        if (flows.p_from[0] - expected).abs() > 1e-9 {
            identity_ok = false;
            break;
        }
    }

    verdict(
        1,
        "power-flow solver",
        state.converged
            && state.iterations <= 10
            && state.max_mismatch <= 1e-8
            && elapsed < 1.0
            && residual <= 1e-6
            && balance <= 1e-6
            && identity_ok,
    );
}

fn two_bus_lossless(x: f64) -> GridCase {
    GridCase {
        base_mva: 100.0,
        external_ids: vec![1, 2],
        buses: vec![
            Bus {
                id: 0,
                kind: BusKind::Slack,
                v_set: 1.0,
                p_load: 0.0,
                q_load: 0.0,
                shunt_g: 0.0,
                shunt_b: 0.0,
            },
            Bus {
                id: 1,
                kind: BusKind::Pq,
                v_set: 1.0,
                p_load: 0.0,
                q_load: 0.0,
                shunt_g: 0.0,
                shunt_b: 0.0,
            },
        ],
        generators: vec![Generator {
            bus: 0,
            p_set: 0.0,
            v_set: 1.0,
            q_min: -10.0,
            q_max: 10.0,
            in_service: true,
        }],
        branches: vec![Branch {
            from_bus: 0,
            to_bus: 1,
            r: 0.0,
            x,
            b: 0.0,
            tap: 1.0,
            rating_normal: 10.0,
            in_service: true,
        }],
    }
}

// --- 02: gradient correctness ----------------------------------------------

/// Central-difference check of every-layer composition gradients through
/// the public `Sequential` API, cross-entropy loss on a sigmoid output.
fn fd_check(net: &Sequential, input: &Tensor, probes: usize, seed: u64) -> bool {
    let target = [1.0];
    let loss_of = |n: &Sequential| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = n.forward(input, false, &mut rng).unwrap();
        cross_entropy(&t.output.data, &target).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = net.forward(input, false, &mut rng).unwrap();
    let dy = Tensor::from_vec(&[1], cross_entropy_grad(&trace.output.data, &target));
    let (_, grads) = net.backward(&trace, &dy).unwrap();
    let base = net.params();
    assert_eq!(grads.len(), base.len());

    let h = 1e-5;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < probes {
        attempts += 1;
        if attempts > probes * 100 {
            return false; // could not find enough active parameters
        }
        let i = probe_rng.gen_range(0..base.len());
        let mut plus = net.clone();
        let mut pp = base.clone();
        pp[i] += h;
        plus.set_params(&pp);
        let mut minus = net.clone();
        let mut pm = base.clone();
        pm[i] -= h;
        minus.set_params(&pm);
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        if fd.abs() < 1e-10 && grads[i].abs() < 1e-10 {
            continue; // dead relu path / unused weight
        }
        let rel = (grads[i] - fd).abs() / (grads[i].abs() + 1e-8);
        if rel >= 1e-5 {
            return false;
        }
        checked += 1;
    }
    true
}

#[test]
fn criterion_02_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Dense-only stack.
    let mut dense_net = Sequential {
        layers: vec![
            Layer::Dense(Dense::new(6, 8)),
            Layer::Relu,
            Layer::Dense(Dense::new(8, 1)),
            Layer::Sigmoid,
        ],
    };
    dense_net.init(&mut rng);
    let x1 = Tensor::from_vec(&[6], (0..6).map(|i| 0.3 * (i as f64) - 0.8).collect());

    // Conv + pool stack.
    let mut conv_net = Sequential {
        layers: vec![
            Layer::Conv(Conv2d::new(1, 3, 3, 1, 0)),
            Layer::Relu,
            Layer::Pool(MaxPool {
                window: 2,
                stride: 2,
            }),
            Layer::Flatten,
            Layer::Dense(Dense::new(3 * 3 * 3, 1)),
            Layer::Sigmoid,
        ],
    };
    conv_net.init(&mut rng);
    let x2 = Tensor::from_vec(
        &[1, 8, 8],
        (0..64).map(|i| ((i * 7) % 13) as f64 / 13.0 - 0.5).collect(),
    );

    // Full two-stage composition at a reduced 16x16 input:
    // 16 -> conv5 -> 12 -> pool -> 6 -> conv5 -> 2 -> pool -> 1.
    let mut full_net = Sequential {
        layers: vec![
            Layer::Conv(Conv2d::new(1, 10, 5, 1, 0)),
            Layer::Relu,
            Layer::Pool(MaxPool {
                window: 2,
                stride: 2,
            }),
            Layer::Conv(Conv2d::new(10, 20, 5, 1, 0)),
            Layer::Relu,
            Layer::Pool(MaxPool {
                window: 2,
                stride: 2,
            }),
            Layer::Flatten,
            Layer::Dense(Dense::new(20, 50)),
            Layer::Relu,
            Layer::Dropout(Dropout::new(0.5).unwrap()),
            Layer::Dense(Dense::new(50, 1)),
            Layer::Sigmoid,
        ],
    };
    full_net.init(&mut rng);
    let mut xr = ChaCha8Rng::seed_from_u64(9);
    let x3 = Tensor::from_vec(
        &[1, 16, 16],
        (0..256).map(|_| xr.gen_range(-1.0..1.0)).collect(),
    );

    verdict(
        2,
        "gradient correctness",
        fd_check(&dense_net, &x1, 100, 11)
            && fd_check(&conv_net, &x2, 100, 12)
            && fd_check(&full_net, &x3, 100, 13),
    );
}

// --- 03: security index -----------------------------------------------------

#[test]
fn criterion_03_security_index() {
    let limits = StressLimits::p90_110();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ok = true;

    for _ in 0..1000 {
        let ratings: Vec<f64> = (0..10).map(|_| rng.gen_range(0.5..3.0)).collect();
        let pf: Vec<f64> = ratings
            .iter()
            .map(|&r| rng.gen_range(-1.4 * r..1.4 * r))
            .collect();
        let si = security_index(&pf, &ratings, &limits, 1).unwrap();

        // Direct evaluation of the defining formula.
        let mut sum = 0.0;
        let mut any_stress = false;
        let mut max_ratio = 0.0f64;
        for (&flow, &rating) in pf.iter().zip(&ratings) {
            let alarm = 0.9 * rating;
            let stress = 1.1 * rating;
            let d = if flow.abs() > alarm {
                (flow.abs() - alarm) / rating
            } else {
                0.0
            };
            let g = (stress - alarm) / rating;
            let ratio = d / g;
            sum += ratio * ratio;
            max_ratio = max_ratio.max(ratio);
            any_stress |= flow.abs() > stress;
        }
        let oracle = sum.sqrt();
        if (si - oracle).abs() > 1e-12 * oracle.max(1.0) {
            ok = false;
            break;
        }
        if stress_state(&pf, &ratings, &limits) != any_stress {
            ok = false;
            break;
        }
        // Any stress-limit violation forces the index past 1.
        if any_stress && si < 1.0 {
            ok = false;
            break;
        }
    }

    // Large exponent: the index collapses onto the worst line. Ratios are
    // kept separated so the remaining terms are provably negligible.
    for trial in 0..100 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + trial);
        let top: f64 = r.gen_range(1.0..5.0);
        let ratios: Vec<f64> = (0..10).map(|k| top * 0.9f64.powi(k as i32)).collect();
        // ratio = d/g with g = 0.2 and rating 1: pf = 0.9 + 0.2 * ratio
        let pf: Vec<f64> = ratios.iter().map(|&q| 0.9 + 0.2 * q).collect();
        let ratings = vec![1.0; 10];
        let si = security_index(&pf, &ratings, &limits, 16).unwrap();
        if si < top || si > 1.05 * top {
            ok = false;
            break;
        }
    }

    verdict(3, "security index", ok);
}

// --- 04: stress classification ----------------------------------------------

#[test]
fn criterion_04_stress_classification() {
    let fx = fixture();
    let accuracy = fx.report.best_metric;
    let stressed_test = fx
        .test_idx
        .iter()
        .filter(|&&i| fx.ds.patterns[i].label_stressed)
        .count();
    eprintln!(
        "criterion 04: accuracy {:.4} after {} epochs in {:.0} s ({} stressed / {} test)",
        accuracy,
        fx.report.epochs_run,
        fx.train_secs,
        stressed_test,
        fx.test_idx.len()
    );
    verdict(
        4,
        "stress classification",
        fx.report.diverged.is_none()
            && fx.report.epochs_run <= 200
            && accuracy >= 0.98
            && fx.train_secs < 3600.0
            && stressed_test >= 100,
    );
}

// --- 05: security-index regression -------------------------------------------

#[test]
fn criterion_05_security_index_regression() {
    let fx = fixture();
    let mut model = PaperlikeCnn::new(CnnConfig::standard(
        fx.ds.n_buses,
        fx.ds.n_contingencies,
        Head::Regression,
    ))
    .unwrap();
    model.init(7);
    model.set_normalization(&fx.ds).unwrap();
    let opts = TrainOptions {
        epochs: 200,
        batch_size: fx.ds.n_contingencies,
        eta: 1e-3,
        // the percentage metric needs small absolute errors on small
        // targets, which a constant rate oscillates above
        eta_decay: 0.985,
        seed: 7,
        target_metric: Some(0.90),
        log: true,
        ..TrainOptions::default()
    };
    let report = train_cnn(&mut model, &fx.ds, &opts).unwrap();

    let preds = model.predict_patterns(&fx.ds, &fx.test_idx).unwrap();
    let targets: Vec<f64> = fx
        .test_idx
        .iter()
        .map(|&i| fx.ds.patterns[i].label_si)
        .collect();
    let (mape, accuracy) = mape_accuracy(&preds, &targets).unwrap();
    eprintln!(
        "criterion 05: regression accuracy {:.4} (MAPE {:.4}) after {} epochs",
        accuracy, mape, report.epochs_run
    );
    verdict(
        5,
        "security-index regression",
        report.diverged.is_none() && accuracy >= 0.90,
    );
}

// --- 06: confusion-matrix arithmetic ------------------------------------------

#[test]
fn criterion_06_confusion_arithmetic() {
    let perfect = ConfusionMatrix {
        tp: 234,
        false_neg: 0,
        fp: 0,
        tn: 1687,
    };
    let mixed = ConfusionMatrix {
        tp: 128,
        false_neg: 113,
        fp: 106,
        tn: 1574,
    };
    let mixed_accuracy = 1702.0 / 1921.0;
    let fn_rate = mixed.false_neg as f64 / (mixed.tp + mixed.false_neg) as f64;
    verdict(
        6,
        "confusion-matrix arithmetic",
        perfect.total() == 1921
            && (perfect.accuracy() - 1.0).abs() < 1e-12
            && perfect.recall() == Some(1.0)
            && mixed.total() == 1921
            && (mixed.accuracy() - mixed_accuracy).abs() < 1e-12
            && (fn_rate - 113.0 / 241.0).abs() < 1e-12
            && mixed.consistent_with(mixed_accuracy, 1e-3)
            // a reported 0.9860 does not match these counts
            && !mixed.consistent_with(0.9860, 1e-3),
    );
}

// --- 07: baseline comparison ---------------------------------------------------

#[test]
fn criterion_07_baseline_comparison() {
    let fx = fixture();
    let ds = &fx.ds;
    let head = Head::Classification;
    let buses = select_feature_buses(ds.n_buses, 8);
    let train_idx = ds.split_indices(Split::Train);

    let (x_raw, y_train) = baseline_features(ds, &train_idx, &buses, head);
    let (mean, scale) = standardize(&x_raw);
    let x_train: Vec<Vec<f64>> = x_raw
        .iter()
        .map(|r| apply_standardize(r, &mean, &scale))
        .collect();
    let (xt_raw, _) = baseline_features(ds, &fx.test_idx, &buses, head);
    let x_test: Vec<Vec<f64>> = xt_raw
        .iter()
        .map(|r| apply_standardize(r, &mean, &scale))
        .collect();

    let mlp_cfg = MlpConfig {
        feature_buses: buses.clone(),
        hidden: vec![20, 12],
        head,
    };
    let mut mlp = build_mlp(&mlp_cfg);
    mlp.init(&mut ChaCha8Rng::seed_from_u64(7));
    let opts = TrainOptions {
        epochs: 200,
        batch_size: 64,
        eta: 1e-3,
        seed: 7,
        ..TrainOptions::default()
    };
    train_sequential(&mut mlp, &x_train, &y_train, head, &opts).unwrap();
    let mlp_preds = predict_sequential(&mlp, &x_test).unwrap();

    let tree = fit_cart(&x_raw, &y_train, 12, true);
    let cart_preds: Vec<f64> = xt_raw.iter().map(|r| predict_cart(&tree, r)).collect();

    let truth: Vec<bool> = fx
        .test_idx
        .iter()
        .map(|&i| ds.patterns[i].label_stressed)
        .collect();
    let correct = |preds: &[f64]| -> Vec<f64> {
        preds
            .iter()
            .zip(&truth)
            .map(|(&p, &t)| ((p > 0.5) == t) as u8 as f64)
            .collect()
    };
    let cnn_c = correct(&fx.cnn_preds);
    let mlp_c = correct(&mlp_preds);
    let cart_c = correct(&cart_preds);
    let acc = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
    let (cnn_acc, mlp_acc, cart_acc) = (acc(&cnn_c), acc(&mlp_c), acc(&cart_c));

    let vs_mlp = paired_t_test(&cnn_c, &mlp_c).unwrap();
    let vs_cart = paired_t_test(&cnn_c, &cart_c).unwrap();
    eprintln!(
        "criterion 07: accuracy cnn {:.4} mlp {:.4} (p={:.2e}) cart {:.4} (p={:.2e})",
        cnn_acc, mlp_acc, vs_mlp.p_two_sided, cart_acc, vs_cart.p_two_sided
    );
    verdict(
        7,
        "baseline comparison",
        cnn_acc >= mlp_acc
            && cnn_acc >= cart_acc
            && !vs_mlp.b_better_at(0.05)
            && !vs_cart.b_better_at(0.05),
    );
}

// --- 08: screening speedup ------------------------------------------------------

#[test]
fn criterion_08_screening_speedup() {
    let fx = fixture();
    let case = &fx.case;
    let oc = OperatingCondition::nominal(case);
    let solve_opts = SolveOptions::default();
    let limits = StressLimits::p90_110();
    let contingencies = enumerate_contingencies(case);
    let applied: Vec<_> = contingencies
        .iter()
        .map(|c| apply_contingency(case, c).unwrap())
        .collect();
    let pre = solve_nr(case, &oc, &solve_opts, None).unwrap();
    assert!(pre.converged);

    let traditional = median_time(5, || {
        for ap in &applied {
            if ap.islanded {
                continue;
            }
            if let Ok(post) = solve_nr(&ap.case, &oc, &solve_opts, Some(&pre)) {
                if post.converged {
                    let flows = branch_flows(&ap.case, &post);
                    let _ = stress_report(&ap.case, &flows, &limits, 1).unwrap();
                }
            }
        }
    });

    let n = case.n_buses();
    let mut image = Vec::with_capacity(n * n);
    for r in 0..n {
        for s in 0..n {
            image.push((pre.v_ang[r] - pre.v_ang[s]) as f32);
        }
    }
    let n_c = contingencies.len() as u32;
    let model_time = median_time(5, || {
        let trace = fx.cnn.conv_trace(&image).unwrap();
        for c in 0..n_c {
            let _ = fx.cnn.predict_cached(&trace, c);
        }
    });

    let speedup = traditional.as_secs_f64() / model_time.as_secs_f64();
    eprintln!(
        "criterion 08: traditional {:.1} ms, model {:.1} ms, speedup {:.1}x",
        traditional.as_secs_f64() * 1e3,
        model_time.as_secs_f64() * 1e3,
        speedup
    );
    verdict(8, "screening speedup", speedup >= 5.0);
}

// --- 09: deterministic pipeline ---------------------------------------------------

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

#[test]
fn criterion_09_deterministic_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let case = root.join("case5.m");
    fs::write(&case, FIVE_BUS).unwrap();
    let cfg = root.join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "case = {}\ndays = 1\nslots_per_day = 8\nsigma_frac = 0.05\n\
             load_min = 1.0\nload_max = 1.4\nseed = 11\ntrain_frac = 0.7\n\
             epochs = 3\nbatch_size = 16\n",
            case.display()
        ),
    )
    .unwrap();

    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_stressgrid"))
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let mut bytes = Vec::new();
    for pass in ["a", "b"] {
        let gen_dir = root.join(format!("gen-{pass}"));
        let train_dir = root.join(format!("train-{pass}"));
        run(&[
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            gen_dir.to_str().unwrap(),
        ]);
        run(&[
            "train",
            "--data",
            gen_dir.join("dataset.psds").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            train_dir.to_str().unwrap(),
        ]);
        bytes.push((
            fs::read(gen_dir.join("dataset.psds")).unwrap(),
            fs::read(train_dir.join("model.ckpt")).unwrap(),
        ));
    }
    verdict(
        9,
        "deterministic pipeline",
        bytes[0].0 == bytes[1].0 && bytes[0].1 == bytes[1].1,
    );
}

// --- 10: optimizer hand check --------------------------------------------------------

#[test]
fn criterion_10_adam_hand_step() {
    let mut ok = true;
    for paper_exact in [false, true] {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, 1e-3, paper_exact);
        adam_step(&mut params, &[2.0], &mut state).unwrap();
        // m = 0.1*2 = 0.2, v = 0.001*4 = 0.004; at t = 1 both correction
        // modes divide by (1 - beta), giving m_hat = 2, v_hat = 4.
        let expected = 1.0 - 1e-3 * 2.0 / (1e-9 + 4.0f64.sqrt());
        ok &= (state.m[0] - 0.2).abs() < 1e-12
            && (state.v[0] - 0.004).abs() < 1e-12
            && (params[0] - expected).abs() < 1e-12;
    }
    verdict(10, "optimizer hand check", ok);
}
