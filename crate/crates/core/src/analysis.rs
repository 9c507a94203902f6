//! Checks run on a finished ledger: Gordon repetition, band covers for
//! Hausdorff sums, convergence of Lyapunov exponents across stages, and the
//! sup-norm stability of spectra.

use serde::{Deserialize, Serialize};

use crate::construction::{ConstructionLedger, StageRecord};
use crate::error::{ensure_finite, Error, Result};
use crate::periodic::{band_spectrum, band_spectrum_coupled, lcm, Band, BandSpectrum, EnergyGrid, PeriodicSampler, Potential};

/// Default solver tolerance when a stage spectrum has to be recomputed.
pub const SPECTRUM_TOL: f64 = 1e-10;

/// Sum below which a cover estimate reports "dimension ≤ α at this stage".
pub const DIMENSION_THRESHOLD: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Gordon repetition

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GordonRow {
    /// Index `i` of the period `q_i`.
    pub index: usize,
    pub q: u64,
    /// `max_{1≤n≤q} |V(n) - V(n ± q)|`.
    pub deviation: f64,
    /// `i^{-q}`.
    pub threshold: f64,
    pub passed: bool,
    /// `2·p_{i+1}^{-(i+1)} + ‖f^{t⃗_1} - f^{t⃗_m}‖`, when stage `i + 1` exists.
    pub budget: Option<f64>,
    pub within_budget: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GordonReport {
    pub lambda: f64,
    /// Stage whose approximant supplied `V`.
    pub source_stage: usize,
    /// Sites `[first_site, last_site]` that were evaluated.
    pub first_site: i64,
    pub last_site: i64,
    pub rows: Vec<GordonRow>,
}

impl GordonReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed && r.within_budget != Some(false))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,q,deviation,threshold,passed,budget,within_budget\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:?},{:?},{},{},{}\n",
                r.index,
                r.q,
                r.deviation,
                r.threshold,
                r.passed,
                r.budget.map_or(String::new(), |b| format!("{b:?}")),
                r.within_budget.map_or(String::new(), |b| b.to_string()),
            ));
        }
        out
    }
}

pub fn gordon_check(ledger: &ConstructionLedger, site_budget: u64) -> Result<GordonReport> {
    gordon_check_scaled(ledger, site_budget, 1.0)
}

/// Gordon deviations of `V = λ·f^{t⃗_1}_K`, the first approximant of the deepest stage.
pub fn gordon_check_scaled(ledger: &ConstructionLedger, site_budget: u64, lambda: f64) -> Result<GordonReport> {
    ensure_finite("lambda", lambda)?;
    if ledger.stages.len() < 2 {
        return Err(Error::domain(format!(
            "the Gordon check needs at least two stages, the ledger has {}",
            ledger.stages.len()
        )));
    }
    let periods = ledger.gordon_periods();
    let q_max = periods.iter().map(|&(_, q)| q).max().unwrap_or(0);
    if q_max == 0 {
        return Err(Error::Invariant("the ledger records no Gordon periods".into()));
    }
    let needed = q_max.checked_mul(3).ok_or_else(|| Error::domain("period overflow"))?;
    if site_budget < needed {
        return Err(Error::Budget(format!(
            "{site_budget} sites cannot cover [-q, 2q] for q = {q_max}"
        )));
    }
    let source_stage = ledger.stages.len();
    let v = ledger.approximant(source_stage)?;
    let q_max = q_max as i64;
    let values: Vec<f64> = (-q_max..=2 * q_max).map(|n| lambda * v.value_at(n)).collect();
    let at = |n: i64| values[(n + q_max) as usize];

    let mut rows = Vec::with_capacity(periods.len());
    for (index, q) in periods {
        let qi = q as i64;
        let deviation = (1..=qi)
            .map(|n| (at(n) - at(n + qi)).abs().max((at(n) - at(n - qi)).abs()))
            .fold(0.0, f64::max);
        let threshold = (index as f64).powf(-(q as f64));
        let budget = triangle_budget(ledger, index).map(|b| b * lambda.abs());
        rows.push(GordonRow {
            index,
            q,
            deviation,
            threshold,
            passed: deviation <= threshold,
            budget,
            within_budget: budget.map(|b| deviation <= b),
        });
    }
    Ok(GordonReport {
        lambda,
        source_stage,
        first_site: -q_max,
        last_site: 2 * q_max,
        rows,
    })
}

/// `2·p_{i+1}^{-(i+1)} + ‖f^{t⃗_1} - f^{t⃗_m}‖` from the ledger entries of stages `i` and `i + 1`.
fn triangle_budget(ledger: &ConstructionLedger, index: usize) -> Option<f64> {
    let stage = ledger.stages.get(index - 1)?;
    let next = ledger.stages.get(index)?;
    let spread = stage
        .last_first_distance
        .or_else(|| stage.enlargement.as_ref().and_then(|e| e.last_first_distance))?;
    let p = next.params.period as f64;
    Some(2.0 * p.powi(-(index as i32 + 1)) + spread)
}

// ---------------------------------------------------------------------------
// Hausdorff covers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverEstimate {
    pub stage: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Half-width added to each band.
    pub inflation: f64,
    pub intervals: Vec<Band>,
    /// `Σ |b|^α` over the inflated bands.
    pub cover_sum: f64,
    /// Total band measure before inflation.
    pub band_measure: f64,
    /// `p_i (e^{-p̃_{i-1} p_i^{1/2}} + 2λ p_i^{-i})^α`.
    pub closed_form: f64,
    /// Whether the cover sum is below [`DIMENSION_THRESHOLD`].
    pub dimension_at_most_alpha: bool,
}

impl CoverEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval_index,left,right,length\n");
        for (i, b) in self.intervals.iter().enumerate() {
            out.push_str(&format!("{i},{:?},{:?},{:?}\n", b.left, b.right, b.length()));
        }
        out
    }
}

/// `Σ (|b| + 2·inflation)^α` over the bands of `spectrum`.
pub fn cover_sum(spectrum: &BandSpectrum, inflation: f64, alpha: f64) -> f64 {
    spectrum
        .bands
        .iter()
        .map(|b| (b.length() + 2.0 * inflation).powf(alpha))
        .sum()
}

/// Cover of the stage-`i` spectrum by its approximant's bands, each inflated by
/// `λ p_i^{-i}` to reach every member of the family.
pub fn hausdorff_sum(ledger: &ConstructionLedger, stage: usize, alpha: f64, lambda: f64) -> Result<CoverEstimate> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("alpha must be in (0, 1], got {alpha}")));
    }
    ensure_finite("lambda", lambda)?;
    let record = stage_record(ledger, stage)?;
    let (lo, hi) = window(record);
    if !(lambda >= lo && lambda <= hi) {
        return Err(Error::domain(format!(
            "λ = {lambda} lies outside the stage-{stage} window [{lo}, {hi}]"
        )));
    }
    let spectrum = match &record.spectrum {
        Some(s) if s.lambda == lambda => s.spectrum.clone(),
        _ => band_spectrum_coupled(&ledger.approximant(stage)?, lambda, ledger.config.tol)?,
    };
    let p = record.params.period as f64;
    let inflation = lambda.abs() * p.powi(-(stage as i32));
    let previous_tilde = if stage == 1 {
        ledger.config.base.period() as f64
    } else {
        record.params.tilde_period as f64
    };
    let closed_form = p * ((-previous_tilde * p.sqrt()).exp() + 2.0 * inflation).powf(alpha);
    let cover = cover_sum(&spectrum, inflation, alpha);
    Ok(CoverEstimate {
        stage,
        alpha,
        lambda,
        inflation,
        intervals: spectrum
            .bands
            .iter()
            .map(|b| Band {
                left: b.left - inflation,
                right: b.right + inflation,
            })
            .collect(),
        cover_sum: cover,
        band_measure: spectrum.total_measure(),
        closed_form,
        dimension_at_most_alpha: cover < DIMENSION_THRESHOLD,
    })
}

fn stage_record(ledger: &ConstructionLedger, stage: usize) -> Result<&StageRecord> {
    stage
        .checked_sub(1)
        .and_then(|k| ledger.stages.get(k))
        .ok_or_else(|| Error::domain(format!("ledger has no stage {stage}")))
}

/// The certified λ range of a stage.
fn window(record: &StageRecord) -> (f64, f64) {
    let eps = record.params.eps;
    (eps, 1.0 / eps)
}

// ---------------------------------------------------------------------------
// Lyapunov convergence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub stage: usize,
    /// `sup_E |L(E, λF_i) - L(E, λF_{i-1})|`.
    pub sup_difference: f64,
    pub at_energy: f64,
    pub eps: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub lambda: f64,
    pub grid: EnergyGrid,
    pub rows: Vec<ConvergenceRow>,
    /// `(i, (8/9)·δ_i)`: the floor the limit is expected to keep. Observational
    /// only; nothing here proves it at grid level.
    pub floor_sequence: Vec<(usize, f64)>,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,sup_difference,at_energy,eps,passed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{}\n",
                r.stage, r.sup_difference, r.at_energy, r.eps, r.passed
            ));
        }
        out
    }
}

pub fn lyapunov_convergence(ledger: &ConstructionLedger, grid: &EnergyGrid, lambda: f64) -> Result<ConvergenceReport> {
    ensure_finite("lambda", lambda)?;
    if ledger.stages.len() < 2 {
        return Err(Error::domain(format!(
            "convergence needs at least two stages, the ledger has {}",
            ledger.stages.len()
        )));
    }
    let energies: Vec<f64> = grid.iter().collect();
    let mut previous = ledger.family(1)?.lyapunov_grid(&energies, lambda);
    let mut rows = Vec::new();
    for stage in 2..=ledger.stages.len() {
        let current = ledger.family(stage)?.lyapunov_grid(&energies, lambda);
        let (k, sup) = sup_difference(&current, &previous);
        let eps = ledger.stages[stage - 1].params.eps;
        rows.push(ConvergenceRow {
            stage,
            sup_difference: sup,
            at_energy: energies[k],
            eps,
            passed: sup < eps,
        });
        previous = current;
    }
    let floor_sequence = ledger
        .stages
        .iter()
        .map(|s| (s.params.stage, 8.0 / 9.0 * s.params.delta))
        .collect();
    Ok(ConvergenceReport {
        lambda,
        grid: *grid,
        rows,
        floor_sequence,
    })
}

/// Index and value of `max_k |a_k - b_k|`.
pub fn sup_difference(a: &[f64], b: &[f64]) -> (usize, f64) {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold((0, 0.0), |best, (k, d)| if d > best.1 { (k, d) } else { best })
}

// ---------------------------------------------------------------------------
// spectrum distance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// Hausdorff distance between the two band unions.
    pub distance: f64,
    /// `‖f - g‖_∞`.
    pub sup_distance: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `dist(σ(f), σ(g))` with `‖f - g‖ + 2·tol`, padding both samplers to
/// a common period.
pub fn spectrum_distance(f: &PeriodicSampler, g: &PeriodicSampler, tol: f64) -> Result<DistanceReport> {
    let p = lcm(f.period(), g.period());
    let (f, g) = (f.promote(p)?, g.promote(p)?);
    let sf = band_spectrum(&f, tol)?;
    let sg = band_spectrum(&g, tol)?;
    let distance = sf.hausdorff_distance(&sg);
    let sup_distance = f.sup_distance(&g);
    Ok(DistanceReport {
        distance,
        sup_distance,
        tol,
        passed: distance <= sup_distance + 2.0 * tol,
    })
}

pub fn spectrum_distance_check(f: &PeriodicSampler, g: &PeriodicSampler, tol: f64) -> Result<bool> {
    Ok(spectrum_distance(f, g, tol)?.passed)
}

/// The distance check on a ledger: first against last member of the stage-1 family.
pub fn ledger_spectrum_distance(ledger: &ConstructionLedger, tol: f64) -> Result<DistanceReport> {
    let family = ledger.family(1)?;
    let members = family.members();
    let first = members[0].materialize();
    let last = members[members.len() - 1].materialize();
    spectrum_distance(&first, &last, tol)
}
