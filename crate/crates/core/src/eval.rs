//! Evaluation utilities: MAPE-based regression accuracy, confusion
//! matrices (with arithmetic consistency checking against externally
//! reported figures), stratified K-fold cross-validation, a paired
//! t-test, and a small timing harness.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction length {got} != target length {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("every target is zero; MAPE is undefined")]
    AllTargetsZero,
    #[error("cannot form {k} folds from {n} samples")]
    TooFewSamples { k: usize, n: usize },
    #[error("paired samples are empty")]
    EmptySamples,
}

/// Mean absolute percentage error and the derived accuracy 1 - MAPE.
/// Samples with a zero target are excluded (relative error is undefined
/// there); it is an error for every sample to be excluded.
pub fn mape_accuracy(preds: &[f64], targets: &[f64]) -> Result<(f64, f64), EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            got: preds.len(),
            want: targets.len(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&p, &y) in preds.iter().zip(targets) {
        if y == 0.0 {
            continue;
        }
        sum += ((y - p) / y).abs();
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::AllTargetsZero);
    }
    let mape = sum / n as f64;
    Ok((mape, 1.0 - mape))
}

/// Binary confusion counts. "Positive" is the stressed class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub false_neg: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(pred: &[bool], truth: &[bool]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch {
                got: pred.len(),
                want: truth.len(),
            });
        }
        let mut m = ConfusionMatrix {
            tp: 0,
            false_neg: 0,
            fp: 0,
            tn: 0,
        };
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => m.tp += 1,
                (false, true) => m.false_neg += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.tp + self.false_neg + self.fp + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// None when no positive prediction was made.
    pub fn precision(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    /// None when no positive sample exists.
    pub fn recall(&self) -> Option<f64> {
        let denom = self.tp + self.false_neg;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn specificity(&self) -> Option<f64> {
        let denom = self.tn + self.fp;
        (denom > 0).then(|| self.tn as f64 / denom as f64)
    }

    /// Whether an externally reported accuracy is arithmetically
    /// consistent with these counts.
    pub fn consistent_with(&self, reported_accuracy: f64, tol: f64) -> bool {
        (self.accuracy() - reported_accuracy).abs() <= tol
    }
}

/// Stratified K-fold assignment: returns the test-fold index sets.
/// Each class is shuffled separately (seeded) and dealt round-robin, so
/// class proportions per fold match the population within one sample,
/// folds are disjoint, and their union covers every sample.
pub fn stratified_kfold(
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || labels.len() < k {
        return Err(EvalError::TooFewSamples {
            k,
            n: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for class in [true, false] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        for (pos, idx) in members.into_iter().enumerate() {
            folds[pos % k].push(idx);
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Runs a train/evaluate recipe over stratified folds. The recipe gets
/// (train indices, test indices) and returns a scalar metric; fold
/// membership never overlaps, so no sample leaks into its own training
/// set.
pub fn kfold_evaluate<F>(
    labels: &[bool],
    k: usize,
    seed: u64,
    mut recipe: F,
) -> Result<Vec<f64>, EvalError>
where
    F: FnMut(&[usize], &[usize]) -> f64,
{
    let folds = stratified_kfold(labels, k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for test in &folds {
        let in_test = {
            let mut mask = vec![false; labels.len()];
            for &i in test {
                mask[i] = true;
            }
            mask
        };
        let train: Vec<usize> = (0..labels.len()).filter(|&i| !in_test[i]).collect();
        reports.push(recipe(&train, test));
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy)]
pub struct TTestResult {
    /// Mean of a - b; positive means `a` scored higher.
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// True when every pairwise difference is identical (zero variance):
    /// the statistic is undefined and the samples are treated as
    /// indistinguishable unless the constant difference is nonzero.
    pub degenerate: bool,
}

impl TTestResult {
    /// Significant difference in favor of `a` at the given level.
    pub fn a_better_at(&self, alpha: f64) -> bool {
        !self.degenerate && self.mean_diff > 0.0 && self.p_two_sided < alpha
    }

    /// Significant difference in favor of `b` at the given level.
    pub fn b_better_at(&self, alpha: f64) -> bool {
        !self.degenerate && self.mean_diff < 0.0 && self.p_two_sided < alpha
    }
}

/// Two-sided paired t-test on per-sample (or per-fold) metric pairs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            got: a.len(),
            want: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(EvalError::EmptySamples);
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(TTestResult {
            mean_diff: mean,
            t: if mean == 0.0 { 0.0 } else { f64::INFINITY * mean.signum() },
            df: n - 1.0,
            // identical samples: no evidence of a difference
            p_two_sided: if mean == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult {
        mean_diff: mean,
        t,
        df: n - 1.0,
        p_two_sided: p,
        degenerate: false,
    })
}

/// Median wall time of `reps` runs (at least 5); the median discards
/// symmetric outliers on both tails.
pub fn median_time<F: FnMut()>(reps: usize, mut f: F) -> Duration {
    let reps = reps.max(5);
    let mut times: Vec<Duration> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .collect();
    times.sort_unstable();
    times[reps / 2]
}
