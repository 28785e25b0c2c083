//! Operating-condition generation, N-1 contingency sweeps, and the
//! labeled pattern database.
//!
//! One pattern = the pre-contingency bus angle-difference matrix of an
//! operating condition (OC) plus a contingency id, labeled with the
//! post-contingency security index and binary stress state. Because every
//! pattern of an OC shares the same angle image, the dataset stores one
//! N x N image per OC and fixed-stride per-pattern records referencing it
//! (see `docs/formats.md` for the byte layout).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netmodel::{validate_connectivity, GridCase};
use crate::powerflow::{branch_flows, solve_nr, PfError, SolveOptions, SolvedState};
use crate::stress::{stress_report, StressError, StressLimits};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("load band inverted: min {0} > max {1}")]
    BandInverted(f64, f64),
    #[error("train fraction {0} must be strictly between 0 and 1")]
    BadTrainFraction(f64),
    #[error("split would receive zero samples (feasible patterns: {0})")]
    EmptySplit(usize),
    #[error("no operating condition converged at the base topology")]
    NoSolvableOc,
    #[error("contingency {0} targets an out-of-service element")]
    ElementOutOfService(u32),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Stress(#[from] StressError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file corrupt: {0}")]
    Corrupt(String),
}

/// A system loading snapshot: per-bus loads in p.u. for one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCondition {
    pub oc_id: u32,
    /// 3-minute slot index within the profile.
    pub slot: u32,
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    /// Multiplier applied to every generator's active dispatch so that
    /// scheduled generation tracks system load instead of dumping the
    /// whole imbalance on the slack bus.
    pub gen_scale: f64,
}

impl OperatingCondition {
    /// The case's nominal loading as OC 0.
    pub fn nominal(case: &GridCase) -> Self {
        OperatingCondition {
            oc_id: 0,
            slot: 0,
            p_load: case.buses.iter().map(|b| b.p_load).collect(),
            q_load: case.buses.iter().map(|b| b.q_load).collect(),
            gen_scale: 1.0,
        }
    }

    /// Nominal loading scaled by a system-wide multiplier.
    pub fn scaled(case: &GridCase, oc_id: u32, slot: u32, multiplier: f64) -> Self {
        OperatingCondition {
            oc_id,
            slot,
            p_load: case.buses.iter().map(|b| b.p_load * multiplier).collect(),
            q_load: case.buses.iter().map(|b| b.q_load * multiplier).collect(),
            gen_scale: multiplier,
        }
    }
}

/// Daily load-profile shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileShape {
    /// Every multiplier equals the given value.
    Constant(f64),
    /// Smooth double-peak day (morning and evening peaks) scaled
    /// linearly into `[min, max]`.
    DoublePeak { min: f64, max: f64 },
}

/// Per-slot system load multipliers for `days` x `slots_per_day` slots.
pub fn build_load_profile(
    days: usize,
    slots_per_day: usize,
    shape: ProfileShape,
) -> Result<Vec<f64>, ScenarioError> {
    assert!(slots_per_day >= 1);
    match shape {
        ProfileShape::Constant(v) => Ok(vec![v; days * slots_per_day]),
        ProfileShape::DoublePeak { min, max } => {
            if min > max {
                return Err(ScenarioError::BandInverted(min, max));
            }
            let raw: Vec<f64> = (0..slots_per_day)
                .map(|s| {
                    let hour = 24.0 * s as f64 / slots_per_day as f64;
                    let peak = |center: f64, width: f64, height: f64| {
                        height * (-((hour - center) / width).powi(2)).exp()
                    };
                    0.55 + peak(8.5, 2.5, 0.30) + peak(18.5, 3.0, 0.45)
                })
                .collect();
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let day: Vec<f64> = raw
                .iter()
                .map(|&r| {
                    if hi > lo {
                        min + (r - lo) / (hi - lo) * (max - min)
                    } else {
                        min
                    }
                })
                .collect();
            let mut out = Vec::with_capacity(days * slots_per_day);
            for _ in 0..days {
                out.extend_from_slice(&day);
            }
            Ok(out)
        }
    }
}

/// RNG stream keyed by (seed, oc_id, bus): identical inputs give identical
/// draws regardless of evaluation order or worker count.
fn keyed_rng(seed: u64, oc_id: u32, bus: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&oc_id.to_le_bytes());
    key[12..16].copy_from_slice(&bus.to_le_bytes());
    key[16..24].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Add independent zero-mean Gaussian noise with standard deviation
/// `sigma_frac * nominal` to every load, truncated at zero.
pub fn perturb_loads(oc: &OperatingCondition, sigma_frac: f64, seed: u64) -> OperatingCondition {
    assert!(sigma_frac >= 0.0);
    if sigma_frac == 0.0 {
        return oc.clone();
    }
    let mut out = oc.clone();
    for bus in 0..oc.p_load.len() {
        let mut rng = keyed_rng(seed, oc.oc_id, bus as u32);
        for (load, nominal) in [
            (&mut out.p_load[bus], oc.p_load[bus]),
            (&mut out.q_load[bus], oc.q_load[bus]),
        ] {
            let sigma = sigma_frac * nominal.abs();
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).unwrap().sample(&mut rng);
                *load = (nominal + noise).max(0.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContingencyKind {
    BranchOutage,
    GeneratorOutage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contingency {
    pub id: u32,
    pub kind: ContingencyKind,
    /// Index into `case.branches` or `case.generators`.
    pub element: usize,
}

/// One contingency per in-service branch and per in-service generator,
/// branches first, ids sequential from 0.
pub fn enumerate_contingencies(case: &GridCase) -> Vec<Contingency> {
    let mut out = Vec::new();
    for (i, br) in case.branches.iter().enumerate() {
        if br.in_service {
            out.push(Contingency {
                id: out.len() as u32,
                kind: ContingencyKind::BranchOutage,
                element: i,
            });
        }
    }
    for (i, g) in case.generators.iter().enumerate() {
        if g.in_service {
            out.push(Contingency {
                id: out.len() as u32,
                kind: ContingencyKind::GeneratorOutage,
                element: i,
            });
        }
    }
    out
}

/// Case with one element removed. `islanded` is true when the outage
/// splits the network; such contingencies are infeasible, not errors.
#[derive(Debug, Clone)]
pub struct AppliedContingency {
    pub case: GridCase,
    pub islanded: bool,
}

pub fn apply_contingency(
    case: &GridCase,
    c: &Contingency,
) -> Result<AppliedContingency, ScenarioError> {
    let mut out = case.clone();
    match c.kind {
        ContingencyKind::BranchOutage => {
            if !case.branches[c.element].in_service {
                return Err(ScenarioError::ElementOutOfService(c.id));
            }
            out.branches[c.element].in_service = false;
        }
        ContingencyKind::GeneratorOutage => {
            if !case.generators[c.element].in_service {
                return Err(ScenarioError::ElementOutOfService(c.id));
            }
            // The lost dispatch is absorbed by the slack bus.
            out.generators[c.element].in_service = false;
        }
    }
    let islanded = validate_connectivity(&out).len() > 1;
    Ok(AppliedContingency { case: out, islanded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Unassigned,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    /// Index into `Dataset::images` / `Dataset::oc_ids`.
    pub oc_index: u32,
    pub contingency_id: u32,
    pub label_si: f64,
    pub label_stressed: bool,
    /// False when the contingency islanded the system or the
    /// post-contingency flow did not converge.
    pub feasible: bool,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub n_buses: usize,
    pub n_contingencies: usize,
    pub seed: u64,
    /// Hash binding the dataset to its case + generation config.
    pub fingerprint: [u8; 32],
    pub oc_ids: Vec<u32>,
    /// One row-major N x N angle-difference image per retained OC,
    /// `image[r*N + s] = theta_r - theta_s` (f32 storage).
    pub images: Vec<f32>,
    pub patterns: Vec<Pattern>,
    /// Per-feature mean/scale over the training split (set by
    /// `split_dataset`; empty until then).
    pub norm_mean: Vec<f32>,
    pub norm_scale: Vec<f32>,
    /// OCs excluded because the base topology did not converge.
    pub excluded_ocs: Vec<(u32, String)>,
    /// Per-pattern post-contingency from-side flows, retained only when
    /// requested (label-consistency checks in tests).
    pub debug_flows: Option<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn image(&self, oc_index: u32) -> &[f32] {
        let n2 = self.n_buses * self.n_buses;
        &self.images[oc_index as usize * n2..(oc_index as usize + 1) * n2]
    }

    pub fn n_ocs(&self) -> usize {
        self.oc_ids.len()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.patterns
            .iter()
            .enumerate()
            .filter(|(_, p)| p.split == split && p.feasible)
            .map(|(i, _)| i)
            .collect()
    }

    /// (feasible, infeasible, stressed, unstressed-feasible) tallies.
    pub fn tallies(&self) -> (usize, usize, usize, usize) {
        let feasible = self.patterns.iter().filter(|p| p.feasible).count();
        let infeasible = self.patterns.len() - feasible;
        let stressed = self
            .patterns
            .iter()
            .filter(|p| p.feasible && p.label_stressed)
            .count();
        (feasible, infeasible, stressed, feasible - stressed)
    }
}

/// SHA-256 over the case's native serialization plus arbitrary config
/// bytes; used to bind datasets and checkpoints to their inputs.
pub fn case_fingerprint(case: &GridCase, config_bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(crate::netmodel::serialize_native(case).as_bytes());
    h.update(config_bytes);
    h.finalize().into()
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub solve: SolveOptions,
    /// Security-index exponent n.
    pub n_exponent: u32,
    pub seed: u64,
    /// Worker threads for the (OC, contingency) sweep. Results are merged
    /// in OC order, so the output is independent of this value.
    pub threads: usize,
    /// Retain post-contingency from-side flows per pattern (test aid).
    pub retain_flows: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            solve: SolveOptions::default(),
            n_exponent: 1,
            seed: 0,
            threads: 1,
            retain_flows: false,
        }
    }
}

struct OcResult {
    oc_id: u32,
    outcome: Result<OcSolved, String>,
}

struct OcSolved {
    image: Vec<f32>,
    patterns: Vec<Pattern>,
    flows: Vec<Vec<f64>>,
}

/// Run the full sweep: solve each OC at the base topology, record its
/// angle image, then label every contingency with the post-contingency
/// SI and stress state. Deterministic for a given (case, ocs,
/// contingencies, limits, options) regardless of thread count.
pub fn generate_patterns(
    case: &GridCase,
    ocs: &[OperatingCondition],
    contingencies: &[Contingency],
    limits: &StressLimits,
    opts: &GenerateOptions,
) -> Result<Dataset, ScenarioError> {
    let n = case.n_buses();
    // Shared warm-start point: the nominal solution from flat start.
    let nominal = solve_nr(
        case,
        &OperatingCondition::nominal(case),
        &opts.solve,
        None,
    )?;
    let warm_ref = if nominal.converged { Some(&nominal) } else { None };

    // Pre-apply every contingency once; topology does not depend on loads.
    let applied: Vec<AppliedContingency> = contingencies
        .iter()
        .map(|c| apply_contingency(case, c))
        .collect::<Result<_, _>>()?;

    let worker = |oc: &OperatingCondition| -> OcResult {
        let outcome = sweep_one_oc(case, oc, contingencies, &applied, limits, opts, warm_ref);
        OcResult {
            oc_id: oc.oc_id,
            outcome,
        }
    };

    let results: Vec<OcResult> = if opts.threads <= 1 {
        ocs.iter().map(worker).collect()
    } else {
        let chunk = ocs.len().div_ceil(opts.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = ocs
                .chunks(chunk.max(1))
                .map(|slice| scope.spawn(move || slice.iter().map(worker).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    };

    let mut images = Vec::new();
    let mut oc_ids = Vec::new();
    let mut patterns = Vec::new();
    let mut excluded = Vec::new();
    let mut debug_flows = opts.retain_flows.then(Vec::new);
    for r in results {
        match r.outcome {
            Ok(mut solved) => {
                let oc_index = oc_ids.len() as u32;
                for p in solved.patterns.iter_mut() {
                    p.oc_index = oc_index;
                }
                oc_ids.push(r.oc_id);
                images.extend_from_slice(&solved.image);
                patterns.extend(solved.patterns);
                if let Some(df) = debug_flows.as_mut() {
                    df.extend(solved.flows);
                }
            }
            Err(reason) => excluded.push((r.oc_id, reason)),
        }
    }
    if oc_ids.is_empty() {
        return Err(ScenarioError::NoSolvableOc);
    }
    Ok(Dataset {
        n_buses: n,
        n_contingencies: contingencies.len(),
        seed: opts.seed,
        fingerprint: case_fingerprint(case, &opts.seed.to_le_bytes()),
        oc_ids,
        images,
        patterns,
        norm_mean: Vec::new(),
        norm_scale: Vec::new(),
        excluded_ocs: excluded,
        debug_flows,
    })
}

fn sweep_one_oc(
    case: &GridCase,
    oc: &OperatingCondition,
    contingencies: &[Contingency],
    applied: &[AppliedContingency],
    limits: &StressLimits,
    opts: &GenerateOptions,
    warm: Option<&SolvedState>,
) -> Result<OcSolved, String> {
    let pre = solve_nr(case, oc, &opts.solve, warm).map_err(|e| e.to_string())?;
    if !pre.converged {
        return Err(format!(
            "base topology did not converge (residual {:.3e})",
            pre.max_mismatch
        ));
    }
    let n = case.n_buses();
    let mut image = Vec::with_capacity(n * n);
    for r in 0..n {
        for s in 0..n {
            image.push((pre.v_ang[r] - pre.v_ang[s]) as f32);
        }
    }
    let mut patterns = Vec::with_capacity(contingencies.len());
    let mut flows_debug = Vec::new();
    for (c, ap) in contingencies.iter().zip(applied) {
        let mut pattern = Pattern {
            oc_index: 0, // fixed up by the caller via ordering
            contingency_id: c.id,
            label_si: 0.0,
            label_stressed: false,
            feasible: false,
            split: Split::Unassigned,
        };
        let mut pf_debug = Vec::new();
        if !ap.islanded {
            match solve_nr(&ap.case, oc, &opts.solve, Some(&pre)) {
                Ok(post) if post.converged => {
                    let flows = branch_flows(&ap.case, &post);
                    match stress_report(&ap.case, &flows, limits, opts.n_exponent) {
                        Ok(report) => {
                            pattern.label_si = report.si;
                            pattern.label_stressed = report.stressed;
                            pattern.feasible = true;
                            if opts.retain_flows {
                                pf_debug = flows.p_from.clone();
                            }
                        }
                        Err(e) => return Err(e.to_string()),
                    }
                }
                _ => {} // stays infeasible
            }
        }
        patterns.push(pattern);
        if opts.retain_flows {
            flows_debug.push(pf_debug);
        }
    }
    Ok(OcSolved {
        image,
        patterns,
        flows: flows_debug,
    })
}

/// Assign feasible patterns to train/test, stratified by the stressed
/// label, and compute per-feature normalization stats from the training
/// split. Deterministic under `seed`.
pub fn split_dataset(ds: &mut Dataset, train_frac: f64, seed: u64) -> Result<(), ScenarioError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(ScenarioError::BadTrainFraction(train_frac));
    }
    for p in ds.patterns.iter_mut() {
        p.split = Split::Unassigned;
    }

    let feasible: Vec<usize> = (0..ds.patterns.len())
        .filter(|&i| ds.patterns[i].feasible)
        .collect();
    if feasible.len() < 2 {
        return Err(ScenarioError::EmptySplit(feasible.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut strata: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in &feasible {
        strata[ds.patterns[i].label_stressed as usize].push(i);
    }
    let mut n_train_total = 0usize;
    let mut n_test_total = 0usize;
    for stratum in strata.iter_mut() {
        if stratum.is_empty() {
            continue;
        }
        // Fisher-Yates with the seeded stream.
        for i in (1..stratum.len()).rev() {
            let j = rng.gen_range(0..=i);
            stratum.swap(i, j);
        }
        let n_train = ((stratum.len() as f64) * train_frac).round() as usize;
        let n_train = n_train.clamp(
            usize::from(stratum.len() >= 2),
            stratum.len() - usize::from(stratum.len() >= 2),
        );
        for (k, &idx) in stratum.iter().enumerate() {
            ds.patterns[idx].split = if k < n_train { Split::Train } else { Split::Test };
        }
        n_train_total += n_train;
        n_test_total += stratum.len() - n_train;
    }
    if n_train_total == 0 || n_test_total == 0 {
        return Err(ScenarioError::EmptySplit(feasible.len()));
    }

    // Per-feature normalization over training-split inputs (each pattern
    // contributes its OC image), accumulated in f64.
    let n2 = ds.n_buses * ds.n_buses;
    let mut mean = vec![0.0f64; n2];
    let mut m2 = vec![0.0f64; n2];
    let mut count = 0.0f64;
    for p in ds.patterns.iter().filter(|p| p.split == Split::Train) {
        count += 1.0;
        let img = ds.image(p.oc_index);
        for (f, &x) in img.iter().enumerate() {
            let x = f64::from(x);
            let delta = x - mean[f];
            mean[f] += delta / count;
            m2[f] += delta * (x - mean[f]);
        }
    }
    ds.norm_mean = mean.iter().map(|&m| m as f32).collect();
    ds.norm_scale = m2
        .iter()
        .map(|&s| ((s / count.max(1.0)).sqrt().max(1e-6)) as f32)
        .collect();
    Ok(())
}

// --- binary container --------------------------------------------------

const DATASET_MAGIC: &[u8; 4] = b"PSDS";
const DATASET_VERSION: u32 = 1;
const PATTERN_STRIDE: usize = 4 + 4 + 8 + 3 + 1;

/// Write the dataset container. Byte-identical output for identical
/// dataset content.
pub fn write_dataset<W: Write>(ds: &Dataset, w: &mut W) -> Result<(), ScenarioError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(ds.n_buses as u32).to_le_bytes())?;
    w.write_all(&(ds.oc_ids.len() as u32).to_le_bytes())?;
    w.write_all(&(ds.n_contingencies as u32).to_le_bytes())?;
    w.write_all(&(ds.patterns.len() as u64).to_le_bytes())?;
    w.write_all(&ds.seed.to_le_bytes())?;
    w.write_all(&ds.fingerprint)?;
    let has_norm = u8::from(!ds.norm_mean.is_empty());
    w.write_all(&[has_norm])?;
    w.write_all(&(ds.excluded_ocs.len() as u32).to_le_bytes())?;
    for (id, reason) in &ds.excluded_ocs {
        w.write_all(&id.to_le_bytes())?;
        let bytes = reason.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    for id in &ds.oc_ids {
        w.write_all(&id.to_le_bytes())?;
    }
    if has_norm == 1 {
        for v in ds.norm_mean.iter().chain(&ds.norm_scale) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in &ds.images {
        w.write_all(&v.to_le_bytes())?;
    }
    for p in &ds.patterns {
        w.write_all(&p.oc_index.to_le_bytes())?;
        w.write_all(&p.contingency_id.to_le_bytes())?;
        w.write_all(&p.label_si.to_le_bytes())?;
        w.write_all(&[
            u8::from(p.label_stressed),
            u8::from(p.feasible),
            match p.split {
                Split::Unassigned => 0,
                Split::Train => 1,
                Split::Test => 2,
            },
            0,
        ])?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset, ScenarioError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8], ScenarioError> {
        if *pos + len > buf.len() {
            return Err(ScenarioError::Corrupt("truncated".into()));
        }
        let s = &buf[*pos..*pos + len];
        *pos += len;
        Ok(s)
    };
    macro_rules! rd {
        ($t:ty) => {{
            let bytes = take(&mut pos, std::mem::size_of::<$t>())?;
            <$t>::from_le_bytes(bytes.try_into().unwrap())
        }};
    }
    if take(&mut pos, 4)? != DATASET_MAGIC {
        return Err(ScenarioError::Corrupt("bad magic".into()));
    }
    let version = rd!(u32);
    if version != DATASET_VERSION {
        return Err(ScenarioError::Corrupt(format!("unknown version {version}")));
    }
    let n_buses = rd!(u32) as usize;
    let n_ocs = rd!(u32) as usize;
    let n_contingencies = rd!(u32) as usize;
    let n_patterns = rd!(u64) as usize;
    let seed = rd!(u64);
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(take(&mut pos, 32)?);
    let has_norm = rd!(u8) == 1;
    let n_excluded = rd!(u32) as usize;
    let mut excluded = Vec::with_capacity(n_excluded);
    for _ in 0..n_excluded {
        let id = rd!(u32);
        let len = rd!(u32) as usize;
        let reason = String::from_utf8_lossy(take(&mut pos, len)?).into_owned();
        excluded.push((id, reason));
    }
    let mut oc_ids = Vec::with_capacity(n_ocs);
    for _ in 0..n_ocs {
        oc_ids.push(rd!(u32));
    }
    let n2 = n_buses * n_buses;
    let read_f32s = |pos: &mut usize, count: usize| -> Result<Vec<f32>, ScenarioError> {
        let bytes = take(pos, count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let (norm_mean, norm_scale) = if has_norm {
        (read_f32s(&mut pos, n2)?, read_f32s(&mut pos, n2)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let images = read_f32s(&mut pos, n_ocs * n2)?;
    let mut patterns = Vec::with_capacity(n_patterns);
    for _ in 0..n_patterns {
        let oc_index = rd!(u32);
        let contingency_id = rd!(u32);
        let label_si = rd!(f64);
        let flags = take(&mut pos, 4)?;
        patterns.push(Pattern {
            oc_index,
            contingency_id,
            label_si,
            label_stressed: flags[0] == 1,
            feasible: flags[1] == 1,
            split: match flags[2] {
                1 => Split::Train,
                2 => Split::Test,
                _ => Split::Unassigned,
            },
        });
    }
    if pos != buf.len() {
        return Err(ScenarioError::Corrupt("trailing bytes".into()));
    }
    let _ = PATTERN_STRIDE;
    Ok(Dataset {
        n_buses,
        n_contingencies,
        seed,
        fingerprint,
        oc_ids,
        images,
        patterns,
        norm_mean,
        norm_scale,
        excluded_ocs: excluded,
        debug_flows: None,
    })
}

/// Human-inspectable CSV of the per-pattern records (no images).
pub fn export_csv<W: Write>(ds: &Dataset, w: &mut W) -> Result<(), ScenarioError> {
    writeln!(w, "oc_id,contingency_id,label_si,label_stressed,feasible,split")?;
    for p in &ds.patterns {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            ds.oc_ids[p.oc_index as usize],
            p.contingency_id,
            p.label_si,
            u8::from(p.label_stressed),
            u8::from(p.feasible),
            match p.split {
                Split::Unassigned => "unassigned",
                Split::Train => "train",
                Split::Test => "test",
            }
        )?;
    }
    Ok(())
}
