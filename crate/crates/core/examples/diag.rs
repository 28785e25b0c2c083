// Scratch diagnostic: per-sample MAPE decomposition of a checkpoint.
use std::fs::File;
use std::io::BufReader;

use stressgrid::models::load_checkpoint;
use stressgrid::scenario::{read_dataset, Split};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ds = read_dataset(&mut BufReader::new(File::open(&args[1]).unwrap())).unwrap();
    let ckpt = load_checkpoint(&mut BufReader::new(File::open(&args[2]).unwrap())).unwrap();
    let model = ckpt.to_cnn().unwrap();
    let test_idx = ds.split_indices(Split::Test);
    let preds = model.predict_patterns(&ds, &test_idx).unwrap();
    let mut rows: Vec<(f64, f64, f64)> = Vec::new(); // (target, pred, rel_err)
    for (k, &i) in test_idx.iter().enumerate() {
        let t = ds.patterns[i].label_si;
        if t > 0.0 {
            rows.push((t, preds[k], (preds[k] - t).abs() / t));
        }
    }
    let n = rows.len() as f64;
    let mape: f64 = rows.iter().map(|r| r.2).sum::<f64>() / n;
    println!("nonzero test samples: {}  MAPE {:.4}  acc {:.4}", rows.len(), mape, 1.0 - mape);
    // contribution by target decade
    for (lo, hi) in [
        (0.0, 1e-3),
        (1e-3, 1e-2),
        (1e-2, 1e-1),
        (1e-1, 1.0),
        (1.0, 10.0),
        (10.0, 1e9),
    ] {
        let sel: Vec<&(f64, f64, f64)> =
            rows.iter().filter(|r| r.0 > lo && r.0 <= hi).collect();
        if sel.is_empty() {
            continue;
        }
        let contrib: f64 = sel.iter().map(|r| r.2).sum::<f64>() / n;
        let med_abs = {
            let mut v: Vec<f64> = sel.iter().map(|r| (r.1 - r.0).abs()).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        println!(
            "targets ({:>7.0e},{:>7.0e}]  count {:>5}  MAPE contrib {:>8.4}  median |err| {:.4e}",
            lo, hi, sel.len(), contrib, med_abs
        );
    }
    // eval-mode MSE over all test samples
    let mse: f64 = test_idx
        .iter()
        .enumerate()
        .map(|(k, &i)| (preds[k] - ds.patterns[i].label_si).powi(2))
        .sum::<f64>()
        / test_idx.len() as f64;
    println!("eval-mode test MSE {:.6}", mse);
}
