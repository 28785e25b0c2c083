//! Per-line operating stress and the composite security index.
//!
//! For each monitored line with normal rating `PF^N`, an alarm limit
//! `PF^AL = alarm_frac * PF^N` and a stress limit `PF^SL = stress_frac *
//! PF^N` are defined. Line stress is `TL = (|PF| - PF^SL)/PF^N` above the
//! stress limit and 0 otherwise. The composite index over M lines is
//!
//! ```text
//! SI = [ sum_i (d_i / g_i)^(2n) ]^(1/(2n))
//! d_i = max(0, |PF_i| - PF^AL_i) / PF^N_i
//! g_i = (PF^SL_i - PF^AL_i) / PF^N_i
//! ```
//!
//! so SI = 0 means no line above alarm, 0 < SI < 1 is an alarm condition,
//! and SI >= 1 means at least one line exceeds its stress limit (the
//! binary stressed state).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::GridCase;
use crate::powerflow::BranchFlows;

#[derive(Debug, Error)]
pub enum StressError {
    #[error("line {0}: alarm and stress limits coincide (zero normalizer)")]
    ZeroNormalizer(usize),
    #[error("invalid limit fractions: alarm {alarm} must be positive and below stress {stress}")]
    InvalidFractions { alarm: f64, stress: f64 },
}

/// Alarm/stress limits as fractions of each line's normal rating, with
/// optional per-line overrides `(line index, alarm_frac, stress_frac)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StressLimits {
    pub alarm_frac: f64,
    pub stress_frac: f64,
    pub overrides: Vec<(usize, f64, f64)>,
}

impl StressLimits {
    pub fn new(alarm_frac: f64, stress_frac: f64) -> Result<Self, StressError> {
        if !(alarm_frac > 0.0 && alarm_frac < stress_frac) {
            return Err(StressError::InvalidFractions {
                alarm: alarm_frac,
                stress: stress_frac,
            });
        }
        Ok(StressLimits {
            alarm_frac,
            stress_frac,
            overrides: Vec::new(),
        })
    }

    /// 90% / 110% of nominal rating.
    pub fn p90_110() -> Self {
        StressLimits::new(0.90, 1.10).unwrap()
    }

    /// 95% / 97% of nominal rating.
    pub fn p95_97() -> Self {
        StressLimits::new(0.95, 0.97).unwrap()
    }

    /// (alarm_frac, stress_frac) effective for `line`.
    pub fn fractions_for(&self, line: usize) -> (f64, f64) {
        self.overrides
            .iter()
            .rev()
            .find(|(l, _, _)| *l == line)
            .map(|&(_, a, s)| (a, s))
            .unwrap_or((self.alarm_frac, self.stress_frac))
    }
}

/// Tri-state system condition derived from SI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StressState {
    Unstressed,
    Alarm,
    Stressed,
}

#[derive(Debug, Clone)]
pub struct StressReport {
    /// Per-line TL values (dimensionless), aligned with the rating list.
    pub tl: Vec<f64>,
    /// Per-line normalized deviations d_i.
    pub d: Vec<f64>,
    /// Per-line normalizers g_i.
    pub g: Vec<f64>,
    pub si: f64,
    pub stressed: bool,
    pub state: StressState,
}

/// Operating stress TL for one line: `(|PF| - PF^SL)/PF^N` above the
/// stress limit, 0 otherwise. `pf` and `pf_n` share any consistent unit.
pub fn line_stress(pf: f64, pf_n: f64, limits: &StressLimits, line: usize) -> f64 {
    debug_assert!(pf_n > 0.0);
    let (_, stress_frac) = limits.fractions_for(line);
    let pf_sl = stress_frac * pf_n;
    if pf.abs() > pf_sl {
        (pf.abs() - pf_sl) / pf_n
    } else {
        0.0
    }
}

/// Normalized deviation from the alarm limit and its normalizer:
/// `d = max(0, |PF| - PF^AL)/PF^N`, `g = (PF^SL - PF^AL)/PF^N`.
pub fn deviation_and_normalizer(
    pf: f64,
    pf_n: f64,
    limits: &StressLimits,
    line: usize,
) -> (f64, f64) {
    debug_assert!(pf_n > 0.0);
    let (alarm_frac, stress_frac) = limits.fractions_for(line);
    let pf_al = alarm_frac * pf_n;
    let pf_sl = stress_frac * pf_n;
    let d = if pf.abs() > pf_al {
        (pf.abs() - pf_al) / pf_n
    } else {
        0.0
    };
    let g = (pf_sl - pf_al) / pf_n;
    (d, g)
}

/// Composite security index over one flow/rating pair per monitored line.
///
/// Evaluated as `max_r * [sum (r_i/max_r)^(2n)]^(1/(2n))` with
/// `r_i = d_i/g_i` so large exponents stay in range.
pub fn security_index(
    pf: &[f64],
    ratings: &[f64],
    limits: &StressLimits,
    n: u32,
) -> Result<f64, StressError> {
    assert!(n >= 1, "exponent n must be >= 1");
    assert_eq!(pf.len(), ratings.len());
    let mut ratios = Vec::with_capacity(pf.len());
    for (i, (&flow, &rating)) in pf.iter().zip(ratings).enumerate() {
        let (d, g) = deviation_and_normalizer(flow, rating, limits, i);
        if g <= 0.0 {
            return Err(StressError::ZeroNormalizer(i));
        }
        ratios.push(d / g);
    }
    Ok(power_norm(&ratios, n))
}

fn power_norm(ratios: &[f64], n: u32) -> f64 {
    let max_r = ratios.iter().cloned().fold(0.0f64, f64::max);
    if max_r == 0.0 {
        return 0.0;
    }
    let p = 2 * n as i32;
    let sum: f64 = ratios.iter().map(|r| (r / max_r).powi(p)).sum();
    max_r * sum.powf(1.0 / f64::from(2 * n))
}

/// Binary stress state: true iff any line's |PF| strictly exceeds its
/// stress limit.
pub fn stress_state(pf: &[f64], ratings: &[f64], limits: &StressLimits) -> bool {
    pf.iter()
        .zip(ratings)
        .enumerate()
        .any(|(i, (&flow, &rating))| {
            let (_, stress_frac) = limits.fractions_for(i);
            flow.abs() > stress_frac * rating
        })
}

/// Full per-line report plus SI and tri-state for a solved contingency.
/// Monitors all in-service branches of `case` using the from-side active
/// flow magnitude (max of the two terminals).
pub fn stress_report(
    case: &GridCase,
    flows: &BranchFlows,
    limits: &StressLimits,
    n: u32,
) -> Result<StressReport, StressError> {
    let mut pf = Vec::new();
    let mut ratings = Vec::new();
    let mut line_idx = Vec::new();
    for (i, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        pf.push(flows.p_from[i].abs().max(flows.p_to[i].abs()));
        ratings.push(br.rating_normal);
        line_idx.push(i);
    }
    let mut tl = Vec::with_capacity(pf.len());
    let mut d = Vec::with_capacity(pf.len());
    let mut g = Vec::with_capacity(pf.len());
    for (k, (&flow, &rating)) in pf.iter().zip(&ratings).enumerate() {
        let line = line_idx[k];
        tl.push(line_stress(flow, rating, limits, line));
        let (dk, gk) = deviation_and_normalizer(flow, rating, limits, line);
        if gk <= 0.0 {
            return Err(StressError::ZeroNormalizer(line));
        }
        d.push(dk);
        g.push(gk);
    }
    let ratios: Vec<f64> = d.iter().zip(&g).map(|(dk, gk)| dk / gk).collect();
    let si = power_norm(&ratios, n);
    let stressed = tl.iter().any(|&t| t > 0.0);
    let state = if stressed {
        StressState::Stressed
    } else if si > 0.0 {
        StressState::Alarm
    } else {
        StressState::Unstressed
    };
    Ok(StressReport {
        tl,
        d,
        g,
        si,
        stressed,
        state,
    })
}
