//! Periodic potentials: discriminant, band spectra, Lyapunov exponents and
//! spectral measure bounds.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::lanes::{period_lanes, LANES};
use crate::error::{ensure_finite, Error, Result};
use crate::sl2::ScaledMatrix;

/// A real function on `ℤ/pℤ`; the value at site `k` is `values[k mod p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PeriodicSampler {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for PeriodicSampler {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        PeriodicSampler::new(values)
    }
}

impl From<PeriodicSampler> for Vec<f64> {
    fn from(f: PeriodicSampler) -> Vec<f64> {
        f.values
    }
}

impl PeriodicSampler {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("a sampler needs period >= 1"));
        }
        for (k, v) in values.iter().enumerate() {
            ensure_finite(&format!("value at site {k}"), *v)?;
        }
        Ok(PeriodicSampler { values })
    }

    /// Constant sampler of period `p`. Panics if `p == 0` or `c` is not finite.
    pub fn constant(p: usize, c: f64) -> Self {
        assert!(p > 0 && c.is_finite());
        PeriodicSampler { values: vec![c; p] }
    }

    pub fn period(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, site: i64) -> f64 {
        let p = self.values.len() as i64;
        self.values[site.rem_euclid(p) as usize]
    }

    /// `max |f(k)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        PeriodicSampler {
            values: self.values.iter().map(|v| v * lambda).collect(),
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        PeriodicSampler {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// `g(k) = f(k + s)`.
    pub fn cyclic_shift(&self, s: i64) -> Self {
        let p = self.period() as i64;
        PeriodicSampler {
            values: (0..p).map(|k| self.at(k + s)).collect(),
        }
    }

    /// The same function viewed with period `new_period` (a multiple of the current one).
    pub fn promote(&self, new_period: usize) -> Result<Self> {
        if new_period == 0 || !new_period.is_multiple_of(self.period()) {
            return Err(Error::domain(format!(
                "cannot promote period {} to {new_period}",
                self.period()
            )));
        }
        Ok(PeriodicSampler {
            values: (0..new_period as i64).map(|k| self.at(k)).collect(),
        })
    }

    pub fn with_bump(&self, site: usize, amount: f64) -> Self {
        let mut values = self.values.clone();
        let p = values.len();
        values[site % p] += amount;
        PeriodicSampler { values }
    }

    /// Sup-norm distance, comparing over a common period.
    pub fn sup_distance(&self, other: &PeriodicSampler) -> f64 {
        let l = lcm(self.period(), other.period()) as i64;
        (0..l).fold(0.0, |m, k| m.max((self.at(k) - other.at(k)).abs()))
    }
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub(crate) fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Anything that can produce transfer matrices of a periodic potential.
///
/// `coupling` multiplies every potential value, so `λf` never needs to be
/// materialized.
pub trait Potential: Sync {
    fn period(&self) -> usize;

    fn sup_norm(&self) -> f64;

    fn value_at(&self, site: i64) -> f64;

    /// Product of the `len` step matrices starting at site `start`.
    fn transfer(&self, energy: f64, coupling: f64, start: i64, len: u64) -> ScaledMatrix;

    /// Transfer matrix over one period starting at site 0.
    fn monodromy(&self, energy: f64, coupling: f64) -> ScaledMatrix {
        self.transfer(energy, coupling, 0, self.period() as u64)
    }

    /// Monodromies at many energies; implementations interleave the energies so
    /// independent products overlap in the pipeline.
    fn monodromy_batch(&self, energies: &[f64], coupling: f64) -> Vec<ScaledMatrix> {
        energies.iter().map(|&e| self.monodromy(e, coupling)).collect()
    }

    /// A scan spacing no larger than `max_step` on which
    /// [`discriminant_grid`](Potential::discriminant_grid) is cheap.
    fn scan_step(&self, coupling: f64, max_step: f64) -> f64 {
        let _ = coupling;
        max_step
    }

    /// `D` at the `count` energies `lo + i·step`.
    fn discriminant_grid(&self, coupling: f64, lo: f64, step: f64, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let end = (start + BATCH_CHUNK).min(count);
            let energies: Vec<f64> = (start..end).map(|i| lo + step * i as f64).collect();
            out.extend(self.monodromy_batch(&energies, coupling).iter().map(ScaledMatrix::trace));
            start = end;
        }
        out
    }
}

/// Energies handed to one `monodromy_batch` call by the grid helpers.
pub(crate) const BATCH_CHUNK: usize = 2048;

/// `D` at arbitrary energies, in chunks.
pub(crate) fn discriminant_at<P: Potential + ?Sized>(f: &P, coupling: f64, energies: &[f64]) -> Vec<f64> {
    energies
        .chunks(BATCH_CHUNK)
        .flat_map(|chunk| f.monodromy_batch(chunk, coupling).into_iter().map(|m| m.trace()))
        .collect()
}

/// `L(E, λf)` at many energies.
pub(crate) fn lyapunov_batch<P: Potential + ?Sized>(f: &P, coupling: f64, energies: &[f64]) -> Vec<f64> {
    let p = f.period() as f64;
    energies
        .chunks(BATCH_CHUNK)
        .flat_map(|chunk| {
            f.monodromy_batch(chunk, coupling)
                .into_iter()
                .map(move |m| m.log_spectral_radius() / p)
        })
        .collect()
}



impl PeriodicSampler {
    fn steps(&self, energy: f64, coupling: f64, start: i64, len: u64) -> ScaledMatrix {
        let p = self.values.len();
        let mut idx = start.rem_euclid(p as i64) as usize;
        let mut acc = ScaledMatrix::IDENTITY;
        for _ in 0..len {
            acc = acc.step_left(energy - coupling * self.values[idx]);
            idx += 1;
            if idx == p {
                idx = 0;
            }
        }
        acc
    }

    pub(crate) fn transfer_scaled(&self, energy: f64, start: i64, len: u64) -> ScaledMatrix {
        Potential::transfer(self, energy, 1.0, start, len)
    }
}

/// Products longer than this many periods go through repeated squaring.
const DIRECT_PERIODS: u64 = 16;

impl Potential for PeriodicSampler {
    fn period(&self) -> usize {
        self.values.len()
    }

    fn sup_norm(&self) -> f64 {
        PeriodicSampler::sup_norm(self)
    }

    fn value_at(&self, site: i64) -> f64 {
        self.at(site)
    }

    fn transfer(&self, energy: f64, coupling: f64, start: i64, len: u64) -> ScaledMatrix {
        let p = self.values.len() as u64;
        if len <= DIRECT_PERIODS * p || len <= 10_000 {
            return self.steps(energy, coupling, start, len);
        }
        let (q, rem) = (len / p, len % p);
        let period = self.steps(energy, coupling, start, p);
        let tail = self.steps(energy, coupling, start + (q * p) as i64, rem);
        tail.mul(&period.pow(q))
    }

    fn monodromy_batch(&self, energies: &[f64], coupling: f64) -> Vec<ScaledMatrix> {
        let norm = PeriodicSampler::sup_norm(self);
        let mut out = Vec::with_capacity(energies.len());
        for chunk in energies.chunks(LANES) {
            let lanes = period_lanes(&self.values, norm, chunk, coupling);
            out.extend((0..chunk.len()).map(|l| lanes.get(l)));
        }
        out
    }
}

/// `D(E) = tr A_p(E)`, a monic polynomial of degree `p` in `E`.
pub fn discriminant(energy: f64, f: &PeriodicSampler) -> f64 {
    f.monodromy(energy, 1.0).trace()
}

/// `(1/p) log ρ(A_p(E))`; zero exactly on the spectrum.
pub fn lyapunov_periodic<P: Potential + ?Sized>(energy: f64, f: &P) -> Result<f64> {
    ensure_finite("energy", energy)?;
    Ok(lyapunov_coupled(energy, 1.0, f))
}

pub(crate) fn lyapunov_coupled<P: Potential + ?Sized>(energy: f64, coupling: f64, f: &P) -> f64 {
    f.monodromy(energy, coupling).log_spectral_radius() / f.period() as f64
}

/// Mean of `L(E, λf)` over the family (multiplicities respected).
pub fn family_lyapunov<P: Potential>(energy: f64, lambda: f64, family: &[P]) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::domain("family Lyapunov exponent of an empty family"));
    }
    ensure_finite("energy", energy)?;
    ensure_finite("lambda", lambda)?;
    let sum: f64 = family.iter().map(|f| lyapunov_coupled(energy, lambda, f)).sum();
    Ok(sum / family.len() as f64)
}

/// Closed interval `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub left: f64,
    pub right: f64,
}

impl Band {
    pub fn length(&self) -> f64 {
        self.right - self.left
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrum {
    pub period: usize,
    pub bands: Vec<Band>,
    /// Set when some gap was found closed (bands touching) and merged.
    pub touching_merged: bool,
}

impl BandSpectrum {
    pub fn total_measure(&self) -> f64 {
        self.bands.iter().map(Band::length).sum()
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn gaps(&self) -> impl Iterator<Item = Band> + '_ {
        self.bands.windows(2).map(|w| Band {
            left: w[0].right,
            right: w[1].left,
        })
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.gaps().map(|g| g.length()).reduce(f64::min)
    }

    pub fn max_band_length(&self) -> f64 {
        self.bands.iter().map(Band::length).fold(0.0, f64::max)
    }

    pub fn contains(&self, energy: f64) -> bool {
        self.distance_to(energy) == 0.0
    }

    /// Distance from a point to the union of bands.
    pub fn distance_to(&self, x: f64) -> f64 {
        let idx = self.bands.partition_point(|b| b.right < x);
        let mut best = f64::INFINITY;
        if let Some(b) = self.bands.get(idx) {
            best = best.min(if x >= b.left { 0.0 } else { b.left - x });
        }
        if idx > 0 {
            best = best.min(x - self.bands[idx - 1].right);
        }
        best
    }

    fn directed_distance(&self, other: &BandSpectrum) -> f64 {
        let mut worst: f64 = 0.0;
        for band in &self.bands {
            worst = worst.max(other.distance_to(band.left));
            worst = worst.max(other.distance_to(band.right));
            // interior points farthest from `other` sit at midpoints of its gaps
            let start = other.bands.partition_point(|b| b.right < band.left);
            for w in other.bands[start.saturating_sub(1)..].windows(2) {
                let mid = 0.5 * (w[0].right + w[1].left);
                if mid > band.right {
                    break;
                }
                if mid >= band.left {
                    worst = worst.max(0.5 * (w[1].left - w[0].right));
                }
            }
        }
        worst
    }

    /// Hausdorff distance between the two band unions.
    pub fn hausdorff_distance(&self, other: &BandSpectrum) -> f64 {
        if self.bands.is_empty() || other.bands.is_empty() {
            return if self.bands.is_empty() && other.bands.is_empty() {
                0.0
            } else {
                f64::INFINITY
            };
        }
        self.directed_distance(other).max(other.directed_distance(self))
    }

    pub fn to_json(&self) -> String {
        let pairs: Vec<[f64; 2]> = self.bands.iter().map(|b| [b.left, b.right]).collect();
        serde_json::to_string(&pairs).expect("band list serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("band_index,left,right\n");
        for (i, b) in self.bands.iter().enumerate() {
            out.push_str(&format!("{i},{:?},{:?}\n", b.left, b.right));
        }
        out
    }
}

/// Grid points per period in the initial sign scan.
const SCAN_POINTS_PER_PERIOD: usize = 64;
/// Each deficient scan cell is split into this many parts per refinement.
const REFINE_FACTOR: usize = 4;

pub fn band_spectrum<P: Potential + ?Sized>(f: &P, tol: f64) -> Result<BandSpectrum> {
    band_spectrum_coupled(f, 1.0, tol)
}

/// `{E : |D(E)| ≤ 2}` for the potential `coupling · f`, as at most `p` disjoint bands.
///
/// Scans `D ∓ 2` on a uniform grid of `64·p` points and brackets every sign
/// change. Each of `D - 2` and `D + 2` has exactly `p` real roots (the
/// eigenvalues of the periodic and antiperiodic Bloch matrices), so a short
/// count means some cell holds more than one root. Those cells are found with
/// exact eigenvalue counts and refined ×4 until every root is bracketed on its
/// own; roots that stay together below `tol` are closed gaps, reported as
/// touching bands merged into one interval.
pub fn band_spectrum_coupled<P: Potential + ?Sized>(
    f: &P,
    coupling: f64,
    tol: f64,
) -> Result<BandSpectrum> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    ensure_finite("coupling", coupling)?;
    let p = f.period();
    let reach = 2.0 + f.sup_norm() * coupling.abs();
    let n = SCAN_POINTS_PER_PERIOD * p;
    // widen so that no root sits on the boundary
    let margin = 4.0 * 2.0 * reach / n as f64;
    let lo = -reach - margin;
    let step = f.scan_step(coupling, (2.0 * (reach + margin)) / n as f64);
    let cells = ((2.0 * (reach + margin)) / step).ceil() as usize;
    let values = f.discriminant_grid(coupling, lo, step, cells + 1);
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        let x = lo + step * i as f64;
        return Err(Error::Solver {
            lo: x,
            hi: x,
            reason: "discriminant evaluated to NaN".into(),
        });
    }
    let scan = Scan { lo, step, values };
    let disc = |e: f64| f.monodromy(e, coupling).trace();

    // a double root is only resolved to about √ε, so narrower gaps count as closed
    let closed_gap = tol.max(4.0 * f64::EPSILON.sqrt() * reach);
    let mut counter: Option<EigenCounter> = None;
    let mut edges: Vec<f64> = Vec::with_capacity(2 * p);
    let mut touching = false;
    for target in [2.0, -2.0] {
        let mut brackets = scan.brackets(target);
        let mut multiple = Vec::new();
        if brackets.len() > p {
            return Err(Error::Solver {
                lo: scan.x(0),
                hi: scan.x(scan.values.len() - 1),
                reason: format!(
                    "{} sign changes of D{:+} for a degree-{p} discriminant",
                    brackets.len(),
                    -target
                ),
            });
        }
        if brackets.len() < p {
            let counter = counter.get_or_insert_with(|| EigenCounter::new(f, coupling));
            let mut search = Refinement {
                scan: &scan,
                counter,
                periodic: target > 0.0,
                target,
                disc: &disc,
                tol,
                counts: std::collections::HashMap::new(),
                cells: Vec::new(),
            };
            let total = search.count_at(0) as isize;
            let end = search.count_at(scan.values.len() - 1) as isize;
            if end - total != p as isize {
                return Err(Error::Solver {
                    lo: scan.x(0),
                    hi: scan.x(scan.values.len() - 1),
                    reason: format!("eigenvalue count {} over the scan range, expected {p}", end - total),
                });
            }
            search.locate(0, scan.values.len() - 1, &brackets);
            let cells = std::mem::take(&mut search.cells);
            for (i, expected) in cells {
                let (a, b) = (scan.x(i), scan.x(i + 1));
                brackets.retain(|&(l, _)| l != a);
                search.refine(a, b, expected, 0, &mut brackets, &mut multiple)?;
            }
        }
        touching |= !multiple.is_empty();
        let batch = |xs: &[f64]| discriminant_at(f, coupling, xs);
        let mut roots = false_position_batch(&batch, target, &brackets, tol);
        roots.extend(multiple);
        if roots.len() != p {
            // Rounding near a double root can split it over neighbouring cells;
            // let the exact count decide the multiplicity of each cluster.
            let counter = counter.get_or_insert_with(|| EigenCounter::new(f, coupling));
            roots = recount_clusters(roots, counter, target > 0.0, closed_gap);
            touching = true;
        }
        if roots.len() != p {
            let lo = roots.first().copied().unwrap_or(scan.x(0));
            let hi = roots.last().copied().unwrap_or(scan.x(scan.values.len() - 1));
            return Err(Error::Solver {
                lo,
                hi,
                reason: format!("isolated {} roots of D{:+}, expected {p}", roots.len(), -target),
            });
        }
        edges.extend(roots);
    }
    let mut spectrum = assemble(p, edges, closed_gap);
    spectrum.touching_merged |= touching;
    Ok(spectrum)
}

struct Scan {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl Scan {
    fn x(&self, i: usize) -> f64 {
        self.lo + self.step * i as f64
    }

    /// Grid cells `[x_i, x_{i+1}]` where `D - target` changes sign (zero counts as positive).
    fn brackets(&self, target: f64) -> Vec<(f64, f64)> {
        let sign = |v: f64| v - target >= 0.0;
        self.values
            .windows(2)
            .enumerate()
            .filter(|(_, w)| sign(w[0]) != sign(w[1]))
            .map(|(i, _)| (self.x(i), self.x(i + 1)))
            .collect()
    }
}

struct Refinement<'a, D: Fn(f64) -> f64> {
    scan: &'a Scan,
    counter: &'a EigenCounter,
    periodic: bool,
    target: f64,
    disc: &'a D,
    tol: f64,
    counts: std::collections::HashMap<usize, usize>,
    /// Scan cells holding more roots than sign changes, with their root count.
    cells: Vec<(usize, usize)>,
}

impl<D: Fn(f64) -> f64> Refinement<'_, D> {
    fn count_at(&mut self, i: usize) -> usize {
        let x = self.scan.x(i);
        let (counter, periodic) = (self.counter, self.periodic);
        *self.counts.entry(i).or_insert_with(|| counter.count_below(x, periodic))
    }

    /// Compare exact root counts with bracket counts on grid range `[i0, i1]`, bisecting
    /// the index range until the deficient cells are isolated.
    fn locate(&mut self, i0: usize, i1: usize, brackets: &[(f64, f64)]) {
        let (a, b) = (self.scan.x(i0), self.scan.x(i1));
        let first = brackets.partition_point(|&(l, _)| l < a);
        let last = brackets.partition_point(|&(l, _)| l < b);
        let found = last - first;
        let expected = self.count_at(i1).saturating_sub(self.count_at(i0));
        if expected <= found {
            return;
        }
        if i1 - i0 == 1 {
            self.cells.push((i0, expected));
            return;
        }
        let mid = (i0 + i1) / 2;
        self.locate(i0, mid, &brackets[first..last]);
        self.locate(mid, i1, &brackets[first..last]);
    }

    fn refine(
        &mut self,
        a: f64,
        b: f64,
        expected: usize,
        depth: u32,
        brackets: &mut Vec<(f64, f64)>,
        multiple: &mut Vec<f64>,
    ) -> Result<()> {
        if expected == 0 {
            return Ok(());
        }
        let sign = |v: f64| v - self.target >= 0.0;
        let (da, db) = ((self.disc)(a), (self.disc)(b));
        if expected == 1 && sign(da) != sign(db) {
            brackets.push((a, b));
            return Ok(());
        }
        if b - a <= self.tol || depth > 200 {
            // roots that cannot be separated at this resolution: a closed gap
            multiple.extend(std::iter::repeat_n(0.5 * (a + b), expected));
            return Ok(());
        }
        let h = (b - a) / REFINE_FACTOR as f64;
        let mut below = self.counter.count_below(a, self.periodic);
        for k in 0..REFINE_FACTOR {
            let l = a + h * k as f64;
            let r = if k + 1 == REFINE_FACTOR { b } else { l + h };
            let next = self.counter.count_below(r, self.periodic);
            self.refine(l, r, next.saturating_sub(below), depth + 1, brackets, multiple)?;
            below = next;
        }
        Ok(())
    }
}

fn recount_clusters(mut roots: Vec<f64>, counter: &EigenCounter, periodic: bool, width: f64) -> Vec<f64> {
    roots.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(roots.len());
    let mut i = 0;
    while i < roots.len() {
        let mut j = i + 1;
        while j < roots.len() && roots[j] - roots[j - 1] <= width {
            j += 1;
        }
        if j - i == 1 {
            out.push(roots[i]);
        } else {
            let (lo, hi) = (roots[i] - width, roots[j - 1] + width);
            let n = counter
                .count_below(hi, periodic)
                .saturating_sub(counter.count_below(lo, periodic));
            let mean = roots[i..j].iter().sum::<f64>() / (j - i) as f64;
            out.extend(std::iter::repeat_n(mean, n));
        }
        i = j;
    }
    out
}

/// Locates the sign change of `D - target` inside `[a, b]` to a bracket of width `tol`
/// with the Illinois variant of false position, falling back to bisection whenever
/// the bracket stops halving.
#[cfg(test)]
fn false_position(disc: &impl Fn(f64) -> f64, target: f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = |x: f64| disc(x) - target;
    let (mut ga, mut gb) = (g(a), g(b));
    let positive = |v: f64| v >= 0.0;
    let mut side = 0i8;
    let mut stalls = 0;
    while b - a > tol {
        let width = b - a;
        let guard = (0.25 * tol).min(0.25 * width);
        let ratio = ga / (ga - gb);
        let mut x = if stalls >= 2 || !ratio.is_finite() {
            stalls = 0;
            0.5 * (a + b)
        } else {
            a + width * ratio
        };
        x = x.clamp(a + guard, b - guard);
        if x <= a || x >= b {
            break;
        }
        let gx = g(x);
        if positive(gx) == positive(ga) {
            a = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
        if b - a > 0.5 * width {
            stalls += 1;
        } else {
            stalls = 0;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy)]
struct Bracket {
    a: f64,
    b: f64,
    ga: f64,
    gb: f64,
    side: i8,
    stalls: u8,
}

/// [`false_position`] run in lockstep over many brackets, so that each round
/// evaluates the discriminant at one batch of energies.
fn false_position_batch(
    disc: &impl Fn(&[f64]) -> Vec<f64>,
    target: f64,
    brackets: &[(f64, f64)],
    tol: f64,
) -> Vec<f64> {
    let positive = |v: f64| v >= 0.0;
    let ends: Vec<f64> = brackets.iter().flat_map(|&(a, b)| [a, b]).collect();
    let values = disc(&ends);
    let mut state: Vec<Bracket> = brackets
        .iter()
        .zip(values.chunks_exact(2))
        .map(|(&(a, b), g)| Bracket {
            a,
            b,
            ga: g[0] - target,
            gb: g[1] - target,
            side: 0,
            stalls: 0,
        })
        .collect();
    // a scan taken at slightly different energies can misplace a sign change by
    // a cell; widen such brackets until the endpoints disagree again
    for _ in 0..3 {
        let stale: Vec<usize> = (0..state.len())
            .filter(|&k| positive(state[k].ga) == positive(state[k].gb))
            .collect();
        if stale.is_empty() {
            break;
        }
        let ends: Vec<f64> = stale
            .iter()
            .flat_map(|&k| {
                let w = state[k].b - state[k].a;
                [state[k].a - w, state[k].b + w]
            })
            .collect();
        let values = disc(&ends);
        for (i, &k) in stale.iter().enumerate() {
            let s = &mut state[k];
            (s.a, s.b) = (ends[2 * i], ends[2 * i + 1]);
            (s.ga, s.gb) = (values[2 * i] - target, values[2 * i + 1] - target);
        }
    }
    let mut active: Vec<usize> = (0..state.len()).collect();
    while !active.is_empty() {
        let mut probes = Vec::with_capacity(active.len());
        active.retain(|&k| {
            let s = &mut state[k];
            let width = s.b - s.a;
            if width <= tol {
                return false;
            }
            let guard = (0.25 * tol).min(0.25 * width);
            let ratio = s.ga / (s.ga - s.gb);
            let mut x = if s.stalls >= 2 || !ratio.is_finite() {
                s.stalls = 0;
                0.5 * (s.a + s.b)
            } else {
                s.a + width * ratio
            };
            x = x.clamp(s.a + guard, s.b - guard);
            if x <= s.a || x >= s.b {
                return false;
            }
            probes.push(x);
            true
        });
        if active.is_empty() {
            break;
        }
        let values = disc(&probes);
        for ((&k, &x), &v) in active.iter().zip(&probes).zip(&values) {
            let s = &mut state[k];
            let width = s.b - s.a;
            let gx = v - target;
            if positive(gx) == positive(s.ga) {
                s.a = x;
                s.ga = gx;
                if s.side == -1 {
                    s.gb *= 0.5;
                }
                s.side = -1;
            } else {
                s.b = x;
                s.gb = gx;
                if s.side == 1 {
                    s.ga *= 0.5;
                }
                s.side = 1;
            }
            if s.b - s.a > 0.5 * width {
                s.stalls += 1;
            } else {
                s.stalls = 0;
            }
        }
    }
    state.iter().map(|s| 0.5 * (s.a + s.b)).collect()
}

/// Pairs sorted edges into bands; gaps no wider than `closed_gap` cannot be told
/// apart from closed ones and are merged.
fn assemble(p: usize, mut edges: Vec<f64>, closed_gap: f64) -> BandSpectrum {
    edges.sort_by(f64::total_cmp);
    let mut bands: Vec<Band> = Vec::with_capacity(p);
    for pair in edges.chunks_exact(2) {
        let band = Band {
            left: pair[0],
            right: pair[1],
        };
        match bands.last_mut() {
            Some(prev) if band.left - prev.right <= closed_gap => prev.right = prev.right.max(band.right),
            _ => bands.push(band),
        }
    }
    let touching_merged = bands.len() < p;
    BandSpectrum {
        period: p,
        bands,
        touching_merged,
    }
}

/// Counts eigenvalues below `x` of the periodic (`D = 2`) or antiperiodic
/// (`D = -2`) Bloch matrix through the inertia of an `LDLᵀ` factorization.
struct EigenCounter {
    values: Vec<f64>,
}

/// Stand-in for an exactly zero pivot.
const PIVOT_FLOOR: f64 = 1e-290;
/// Fill-in entries below this no longer affect the corner Schur complement.
const FILL_FLOOR: f64 = 1e-150;
/// Pivots smaller than this (relative to the corner entry) are paired with the next one.
const PAIR_PIVOT: f64 = 1e-3;

impl EigenCounter {
    fn new<P: Potential + ?Sized>(f: &P, coupling: f64) -> Self {
        let values = (0..f.period() as i64).map(|k| coupling * f.value_at(k)).collect();
        EigenCounter { values }
    }

    fn count_below(&self, x: f64, periodic: bool) -> usize {
        let v = &self.values;
        let p = v.len();
        let corner = if periodic { 1.0 } else { -1.0 };
        match p {
            1 => usize::from(v[0] + 2.0 * corner < x),
            2 => {
                let off = 1.0 + corner;
                let (a, c) = (v[0] - x, v[1] - x);
                let d0 = nonzero(a);
                let d1 = nonzero(c - off * off / d0);
                usize::from(d0 < 0.0) + usize::from(d1 < 0.0)
            }
            _ => {
                // Sturm pivots of the tridiagonal part, with the corner column carried
                // alongside: `e` is the current entry (k, p-1) and `s` the running
                // Schur complement of (p-1, p-1). A small pivot is paired with its
                // successor so that the corner update never divides by it alone.
                let mut negatives = 0;
                let mut d = nonzero(v[0] - x);
                let mut e = corner;
                let mut s = v[p - 1] - x;
                let mut k = 0;
                let original = |row: usize| if row == p - 2 { 1.0 } else { 0.0 };
                let floor = |e: f64| if e.abs() < FILL_FLOOR { 0.0 } else { e };
                while k < p - 2 {
                    let c = v[k + 1] - x;
                    let f = original(k + 1);
                    if d.abs() >= PAIR_PIVOT * e.abs().max(1.0) || (d * c).abs() >= 0.5 {
                        negatives += usize::from(d < 0.0);
                        let inv = 1.0 / d;
                        s -= e * e * inv;
                        e = floor(f - e * inv);
                        d = nonzero(c - inv);
                        k += 1;
                        continue;
                    }
                    // the 2×2 block [[d, 1], [1, c]] has determinant near -1
                    let det = d * c - 1.0;
                    negatives += if det < 0.0 { 1 } else if d < 0.0 { 2 } else { 0 };
                    s -= (c * e * e - 2.0 * e * f + d * f * f) / det;
                    if k + 2 == p - 1 {
                        return negatives + usize::from(nonzero(s) < 0.0);
                    }
                    e = floor(original(k + 2) - (d * f - e) / det);
                    d = nonzero(v[k + 2] - x - d / det);
                    k += 2;
                }
                // remaining block [[d, e], [e, s]]
                let det = d * s - e * e;
                negatives
                    + if det < 0.0 {
                        1
                    } else if det == 0.0 {
                        usize::from(d + s < 0.0)
                    } else {
                        2 * usize::from(d < 0.0)
                    }
            }
        }
    }
}

fn nonzero(d: f64) -> f64 {
    if d == 0.0 {
        -PIVOT_FLOOR
    } else {
        d
    }
}


/// Independent check of [`band_spectrum`]: eigenvalues of the `p×p` Bloch
/// matrices with boundary phase `θ` on a uniform grid over `[0, π]`.
pub fn floquet_oracle(f: &PeriodicSampler, theta_count: usize) -> Result<BandSpectrum> {
    if theta_count < 2 {
        return Err(Error::domain("the Floquet oracle needs at least 2 phases"));
    }
    let p = f.period();
    let mut lo = vec![f64::INFINITY; p];
    let mut hi = vec![f64::NEG_INFINITY; p];
    for t in 0..theta_count {
        let theta = PI * t as f64 / (theta_count - 1) as f64;
        let mut eig = bloch_eigenvalues(f, theta)?;
        eig.sort_by(f64::total_cmp);
        for (z, e) in eig.into_iter().enumerate() {
            lo[z] = lo[z].min(e);
            hi[z] = hi[z].max(e);
        }
    }
    let mut bands: Vec<Band> = Vec::with_capacity(p);
    let mut touching = false;
    for z in 0..p {
        let band = Band {
            left: lo[z],
            right: hi[z],
        };
        match bands.last_mut() {
            Some(prev) if prev.right >= band.left => {
                prev.right = prev.right.max(band.right);
                touching = true;
            }
            _ => bands.push(band),
        }
    }
    Ok(BandSpectrum {
        period: p,
        bands,
        touching_merged: touching,
    })
}

fn bloch_eigenvalues(f: &PeriodicSampler, theta: f64) -> Result<Vec<f64>> {
    let p = f.period();
    let phase = Complex64::from_polar(1.0, theta);
    if p == 1 {
        return Ok(vec![f.values()[0] + 2.0 * theta.cos()]);
    }
    let mut h = DMatrix::<Complex64>::zeros(p, p);
    for k in 0..p {
        h[(k, k)] = Complex64::new(f.values()[k], 0.0);
    }
    for k in 0..p - 1 {
        h[(k, k + 1)] += Complex64::new(1.0, 0.0);
        h[(k + 1, k)] += Complex64::new(1.0, 0.0);
    }
    // ψ(n + p) = e^{iθ} ψ(n)
    h[(p - 1, 0)] += phase;
    h[(0, p - 1)] += phase.conj();
    let eig = h
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or_else(|| Error::Oracle(format!("eigen-solver did not converge at θ = {theta}")))?;
    Ok(eig.eigenvalues.iter().copied().collect())
}

/// Uniform energy grid `lo, lo + h, …, hi` with `points` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl EnergyGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        ensure_finite("grid start", lo)?;
        ensure_finite("grid end", hi)?;
        if points < 2 || hi <= lo {
            return Err(Error::domain(format!("degenerate grid [{lo}, {hi}] with {points} points")));
        }
        Ok(EnergyGrid { lo, hi, points })
    }

    /// Grid over `[-2 - r, 2 + r]` where `r` is the sup norm of the coupled potential.
    pub fn covering(norm: f64, points: usize) -> Result<Self> {
        EnergyGrid::new(-2.0 - norm, 2.0 + norm, points)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + self.spacing() * i as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |i| self.point(i))
    }
}

/// Growth certificate `C` and the implied bound `|Σ| ≤ 4πp/C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub growth: f64,
    pub block_length: u64,
    pub witness_energy: f64,
    pub witness_offset: i64,
    pub bound: f64,
    pub measured: Option<f64>,
    pub measured_within_bound: Option<bool>,
}

/// `C` = min over grid energies of the largest `‖A_k‖` over the given start sites;
/// both `k` and `2k` are tried and the larger constant kept.
pub fn measure_certificate_at<P: Potential + ?Sized>(
    f: &P,
    lambda: f64,
    grid: &EnergyGrid,
    block_length: u64,
    offsets: &[i64],
) -> Result<SpectralCertificate> {
    if block_length == 0 {
        return Err(Error::domain("block length must be >= 1"));
    }
    if offsets.is_empty() {
        return Err(Error::domain("at least one offset is needed"));
    }
    let reach = 2.0 + f.sup_norm() * lambda.abs();
    if grid.lo > -reach || grid.hi < reach {
        return Err(Error::domain(format!(
            "energy grid [{}, {}] does not cover [{}, {reach}]",
            grid.lo, grid.hi, -reach
        )));
    }
    let mut best: Option<SpectralCertificate> = None;
    for k in [block_length, 2 * block_length] {
        let mut log_c = f64::INFINITY;
        let mut witness = (grid.lo, offsets[0]);
        for e in grid.iter() {
            let (off, log_norm) = offsets
                .iter()
                .map(|&o| (o, f.transfer(e, lambda, o, k).log_norm()))
                .fold((offsets[0], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            if log_norm < log_c {
                log_c = log_norm;
                witness = (e, off);
            }
        }
        let log_c = log_c.max(0.0);
        let bound = (4.0 * PI * f.period() as f64).ln() - log_c;
        let cert = SpectralCertificate {
            growth: log_c.exp(),
            block_length: k,
            witness_energy: witness.0,
            witness_offset: witness.1,
            bound: bound.exp(),
            measured: None,
            measured_within_bound: None,
        };
        if best.as_ref().is_none_or(|b| cert.bound < b.bound) {
            best = Some(cert);
        }
    }
    Ok(best.expect("two candidates evaluated"))
}

/// Measure certificate over all start sites `0..p`, compared against the band solver.
pub fn measure_certificate(
    f: &PeriodicSampler,
    lambda: f64,
    grid: &EnergyGrid,
    block_length: u64,
    tol: f64,
) -> Result<SpectralCertificate> {
    let offsets: Vec<i64> = (0..f.period() as i64).collect();
    let mut cert = measure_certificate_at(f, lambda, grid, block_length, &offsets)?;
    let measured = band_spectrum_coupled(f, lambda, tol)?.total_measure();
    cert.measured = Some(measured);
    cert.measured_within_bound = Some(measured <= cert.bound + 1e-6);
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sampler(v: &[f64]) -> PeriodicSampler {
        PeriodicSampler::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sampler_validation() {
        assert!(PeriodicSampler::new(vec![]).is_err());
        assert!(PeriodicSampler::new(vec![0.0, f64::NAN]).is_err());
        let f = sampler(&[1.0, -3.0, 2.0]);
        assert_eq!(f.sup_norm(), 3.0);
        assert_eq!(f.at(-1), 2.0);
        assert_eq!(f.at(7), -3.0);
        assert_eq!(f.cyclic_shift(1).values(), &[-3.0, 2.0, 1.0]);
        assert_eq!(f.promote(6).unwrap().values(), &[1.0, -3.0, 2.0, 1.0, -3.0, 2.0]);
        assert!(f.promote(4).is_err());
        assert_eq!(f.sup_distance(&f.shifted(0.25)), 0.25);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, "[1.0,-3.0,2.0]");
        assert!(serde_json::from_str::<PeriodicSampler>("[]").is_err());
    }

    #[test]
    fn discriminant_closed_forms() {
        for e in [-3.0, -0.5, 0.0, 1.25, 4.0] {
            assert_abs_diff_eq!(discriminant(e, &sampler(&[0.0])), e);
            assert_abs_diff_eq!(discriminant(e, &sampler(&[1.5])), e - 1.5);
            // hand product of two steps: tr([[E-v,-1],[1,0]]·[[E,-1],[1,0]]) = E(E-v) - 2
            let v = 0.7;
            assert_abs_diff_eq!(discriminant(e, &sampler(&[0.0, v])), e * (e - v) - 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_and_constant_spectra() {
        let s = band_spectrum(&sampler(&[0.0]), 1e-10).unwrap();
        assert_eq!(s.bands.len(), 1);
        assert_abs_diff_eq!(s.bands[0].left, -2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.bands[0].right, 2.0, epsilon = 1e-10);

        let s = band_spectrum(&sampler(&[1.3]), 1e-10).unwrap();
        assert_abs_diff_eq!(s.bands[0].left, -0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(s.bands[0].right, 3.3, epsilon = 1e-10);

        assert!(band_spectrum(&sampler(&[0.0]), 0.0).is_err());
        assert!(band_spectrum(&sampler(&[0.0]), -1.0).is_err());
    }

    #[test]
    fn two_periodic_quadratics() {
        // |E(E-4) - 2| <= 2  ⇔  E ∈ [2-2√2, 0] ∪ [4, 2+2√2]
        let f = sampler(&[0.0, 4.0]);
        let s = band_spectrum(&f, 1e-10).unwrap();
        let r8 = 8f64.sqrt();
        assert_eq!(s.bands.len(), 2);
        assert_abs_diff_eq!(s.bands[0].left, 2.0 - r8, epsilon = 1e-10);
        assert_abs_diff_eq!(s.bands[0].right, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.bands[1].left, 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.bands[1].right, 2.0 + r8, epsilon = 1e-10);

        let oracle = floquet_oracle(&f, 181).unwrap();
        assert!(oracle.hausdorff_distance(&s) < 1e-6);
    }

    #[test]
    fn closed_gap_is_merged_with_flag() {
        // period-2 zero potential: D = E² - 2 touches -2 at E = 0
        let s = band_spectrum(&sampler(&[0.0, 0.0]), 1e-10).unwrap();
        assert!(s.touching_merged);
        assert_eq!(s.bands.len(), 1);
        assert_abs_diff_eq!(s.bands[0].left, -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.bands[0].right, 2.0, epsilon = 1e-9);

        let s = band_spectrum(&PeriodicSampler::constant(4, 0.5), 1e-10).unwrap();
        assert!(s.touching_merged);
        assert_eq!(s.bands.len(), 1);
        assert_abs_diff_eq!(s.total_measure(), 4.0, epsilon = 1e-8);
    }

    #[test]
    fn inertia_counts_match_dense_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let p = rng.gen_range(1..=9);
            let f = PeriodicSampler::new((0..p).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let counter = EigenCounter::new(&f, 1.0);
            for (theta, periodic) in [(0.0, true), (PI, false)] {
                let eig = bloch_eigenvalues(&f, theta).unwrap();
                for _ in 0..20 {
                    let x = rng.gen_range(-6.0..6.0);
                    let dense = eig.iter().filter(|&&e| e < x).count();
                    assert_eq!(counter.count_below(x, periodic), dense, "p={p} x={x}");
                }
            }
        }
    }

    #[test]
    fn many_closed_gaps_resolve_to_one_band() {
        // constant potential of period 8: every internal gap is closed
        let s = band_spectrum(&PeriodicSampler::constant(8, -0.25), 1e-10).unwrap();
        assert!(s.touching_merged);
        assert_eq!(s.bands.len(), 1);
        assert_abs_diff_eq!(s.bands[0].left, -2.25, epsilon = 1e-9);
        assert_abs_diff_eq!(s.bands[0].right, 1.75, epsilon = 1e-9);
    }

    #[test]
    fn batched_false_position_matches_scalar() {
        let f = sampler(&[0.3, -1.2, 0.8, 0.1, 2.0]);
        let disc = |e: f64| f.monodromy(e, 1.0).trace();
        let batch = |xs: &[f64]| xs.iter().map(|&x| disc(x)).collect::<Vec<_>>();
        let s = band_spectrum(&f, 1e-12).unwrap();
        let brackets: Vec<(f64, f64)> = s.bands.iter().map(|b| (b.left - 0.01, b.left + 0.01)).collect();
        let together = false_position_batch(&batch, 2.0, &brackets, 1e-12);
        for (&(a, b), x) in brackets.iter().zip(together) {
            if (disc(a) - 2.0).signum() != (disc(b) - 2.0).signum() {
                assert_eq!(x, false_position(&disc, 2.0, a, b, 1e-12));
            }
        }
    }

    #[test]
    fn lane_batch_matches_serial_products() {
        let f = sampler(&[0.3, -1.2, 0.8, 0.1, 2.0, -0.7, 0.0]);
        let energies: Vec<f64> = (0..19).map(|k| -5.0 + 0.53 * k as f64).collect();
        for &(coupling, scale) in &[(1.0, 1usize), (40.0, 300)] {
            let g = f.promote(7 * scale).unwrap();
            let batch = g.monodromy_batch(&energies, coupling);
            for (&e, m) in energies.iter().zip(&batch) {
                let serial = g.monodromy(e, coupling);
                let (t1, t2) = (m.trace(), serial.trace());
                assert!(
                    (m.log_spectral_radius() - serial.log_spectral_radius()).abs() < 1e-9 * (1.0 + serial.log_spectral_radius()),
                    "{t1} vs {t2}"
                );
            }
        }
    }

    #[test]
    fn false_position_brackets_to_tolerance() {
        let root = false_position(&|x: f64| x * x * x, 2.0, 0.0, 3.0, 1e-12);
        assert_abs_diff_eq!(root, 2f64.cbrt(), epsilon = 1e-12);
        // steep function: most of the change happens in a tiny window
        let root = false_position(&|x: f64| (400.0 * (x - 0.3)).sinh(), 0.0, 0.0, 1.0, 1e-12);
        assert_abs_diff_eq!(root, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn floquet_oracle_fills_free_band() {
        let o = floquet_oracle(&sampler(&[0.0]), 181).unwrap();
        assert_eq!(o.bands.len(), 1);
        assert_abs_diff_eq!(o.bands[0].left, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.bands[0].right, 2.0, epsilon = 1e-12);
        assert!(floquet_oracle(&sampler(&[0.0]), 1).is_err());
    }

    #[test]
    fn band_edges_sit_at_periodic_and_antiperiodic_phases() {
        let f = sampler(&[0.3, -1.1, 2.0]);
        for theta in [0.0, PI] {
            for e in bloch_eigenvalues(&f, theta).unwrap() {
                assert_abs_diff_eq!(discriminant(e, &f), 2.0 * theta.cos(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn band_solver_agrees_with_oracle_on_random_samplers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = rng.gen_range(1..=8);
            let f = PeriodicSampler::new((0..p).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let s = band_spectrum(&f, 1e-10).unwrap();
            let o = floquet_oracle(&f, 721).unwrap();
            assert!(s.hausdorff_distance(&o) <= 1e-6, "{:?} vs {:?}", s, o);
            assert!(s.band_count() <= p);
            for b in &s.bands {
                assert!(b.length() <= 2.0 * PI / p as f64 + 2e-10);
            }
        }
    }

    #[test]
    fn lyapunov_closed_forms() {
        let zero = sampler(&[0.0]);
        let expected = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert_abs_diff_eq!(lyapunov_periodic(3.0, &zero).unwrap(), expected, epsilon = 1e-12);
        assert_eq!(lyapunov_periodic(1.0, &zero).unwrap(), 0.0);
        // tail bound
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = rng.gen_range(1..6);
            let f = PeriodicSampler::new((0..p).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let e = (f.sup_norm() + 4.0 + rng.gen_range(0.0..5.0)) * if rng.gen() { 1.0 } else { -1.0 };
            assert!(lyapunov_periodic(e, &f).unwrap() >= 1.0);
        }
    }

    #[test]
    fn family_means() {
        let f = sampler(&[0.2, -0.4]);
        let single = family_lyapunov(2.7, 1.5, std::slice::from_ref(&f)).unwrap();
        assert_abs_diff_eq!(single, lyapunov_periodic(2.7, &f.scaled(1.5)).unwrap(), epsilon = 1e-14);
        let double = family_lyapunov(2.7, 1.5, &[f.clone(), f.clone()]).unwrap();
        assert_abs_diff_eq!(single, double, epsilon = 1e-15);
        assert!(family_lyapunov::<PeriodicSampler>(0.0, 1.0, &[]).is_err());

        // E = 10 for the 0 and 4 constant samplers: ρ of [[10,-1],[1,0]] and [[6,-1],[1,0]]
        let rho = |t: f64| (t + (t * t - 4.0).sqrt()) / 2.0;
        let mean = family_lyapunov(10.0, 1.0, &[sampler(&[0.0]), sampler(&[4.0])]).unwrap();
        assert_abs_diff_eq!(mean, 0.5 * (rho(10.0).ln() + rho(6.0).ln()), epsilon = 1e-12);
    }

    #[test]
    fn free_measure_certificate() {
        let f = sampler(&[0.0]);
        let grid = EnergyGrid::covering(0.0, 401).unwrap();
        let cert = measure_certificate(&f, 1.0, &grid, 1, 1e-10).unwrap();
        assert!(cert.growth >= 1.0);
        assert!(cert.bound <= 4.0 * PI + 1e-12);
        assert_abs_diff_eq!(cert.measured.unwrap(), 4.0, epsilon = 1e-9);
        assert_eq!(cert.measured_within_bound, Some(true));

        let narrow = EnergyGrid::new(-1.0, 1.0, 10).unwrap();
        assert!(measure_certificate(&f, 1.0, &narrow, 1, 1e-10).is_err());
    }

    #[test]
    fn hausdorff_distance_of_unions() {
        let a = BandSpectrum {
            period: 2,
            bands: vec![Band { left: 0.0, right: 1.0 }, Band { left: 3.0, right: 4.0 }],
            touching_merged: false,
        };
        let b = BandSpectrum {
            period: 1,
            bands: vec![Band { left: 0.0, right: 4.0 }],
            touching_merged: false,
        };
        // the gap midpoint 2 is at distance 1 from `a`
        assert_eq!(a.hausdorff_distance(&b), 1.0);
        assert_eq!(b.hausdorff_distance(&a), 1.0);
        assert_eq!(a.hausdorff_distance(&a), 0.0);
        assert!(a.contains(0.5) && !a.contains(2.0));
        assert_eq!(a.min_gap(), Some(2.0));
        assert_eq!(a.to_json(), "[[0.0,1.0],[3.0,4.0]]");
        assert_eq!(a.to_csv(), "band_index,left,right\n0,0.0,1.0\n1,3.0,4.0\n");
    }
}
