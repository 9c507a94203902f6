//! The staged construction: λ-range enlargement by gap opening and constant
//! shifts, block concatenation with small perturbations, and iteration, each
//! stage carrying re-checkable certificates.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cantor::GroupSchedule;
use crate::error::{ensure_finite, Error, Result};
use crate::periodic::{
    band_spectrum_coupled, lyapunov_batch, lyapunov_coupled, measure_certificate_at, BandSpectrum, EnergyGrid,
    PeriodicSampler, Potential, SpectralCertificate,
};
use crate::lanes::{fold_lanes, Lanes, LANES};
use crate::sl2::ScaledMatrix;

// ---------------------------------------------------------------------------
// configuration

/// How the λ-window edge evolves from one stage to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// `ε_i = min(ε_{i-1}, δ_{i-1}) / 10`, re-enlarging the family every stage.
    Shrink,
    /// `ε_i = ε_{i-1}`: the incoming family is already certified on the window, so
    /// it is concatenated directly.
    Inherit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// `n_1`.
    pub first: u64,
    /// `n_{k+1} / n_k`.
    pub factor: u64,
}

impl ScheduleConfig {
    /// Schedule indices up to and including `limit`.
    pub fn schedule_up_to(&self, limit: u64) -> Result<GroupSchedule> {
        if self.first < 2 || self.factor < 2 {
            return Err(Error::domain("schedule needs first >= 2 and factor >= 2"));
        }
        let mut indices = vec![self.first];
        while let Some(next) = indices.last().unwrap().checked_mul(self.factor) {
            if next > limit {
                break;
            }
            indices.push(next);
        }
        GroupSchedule::new(indices)
    }

    fn contains(&self, n: u64) -> bool {
        let mut k = self.first;
        loop {
            if k == n {
                return true;
            }
            match k.checked_mul(self.factor) {
                Some(next) if next <= n => k = next,
                _ => return false,
            }
        }
    }

    /// Smallest schedule index that is at least `n`.
    fn index_at_least(&self, n: u64) -> Option<u64> {
        let mut k = self.first;
        while k < n {
            k = k.checked_mul(self.factor)?;
        }
        Some(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnlargeConfig {
    /// `p̃`, a schedule index and a multiple of the incoming period.
    pub tilde_period: u64,
    /// Starting `N₁`; doubled when no bump opens all gaps.
    pub n1: u64,
    pub n1_max: u64,
    /// Starting `N₂`; doubled until the family floor is positive on the grid.
    pub n2_start: u64,
    pub n2_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcatenateConfig {
    /// Smallest block repetition count `r`.
    pub min_repetitions: u64,
    /// Largest period the search may move to.
    pub max_period: u64,
    /// `N`; stage `i` perturbs by `r^{-N·i}`.
    pub exponent: u32,
    /// How many `t⃗` vectors to materialize (at least 2: all zeros and all `r-1`).
    pub materialize: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Number of λ values, placed geometrically inside the window.
    pub lambda_count: usize,
    /// Energy samples per unit length.
    pub energies_per_unit: f64,
    /// Lower limit on the number of energies per λ.
    pub min_energies: usize,
    /// Coupling at which band spectra are measured.
    pub measure_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionConfig {
    pub base: PeriodicSampler,
    pub epsilon0: f64,
    pub stage_count: usize,
    pub seed: u64,
    pub tol: f64,
    pub window: WindowPolicy,
    /// Total parameter candidates the searches may try.
    pub budget: u64,
    pub schedule: ScheduleConfig,
    pub enlarge: EnlargeConfig,
    pub concatenate: ConcatenateConfig,
    pub grid: GridConfig,
}

impl ConstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            ensure_finite(name, v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be positive, got {v}")))
            }
        };
        positive("epsilon0", self.epsilon0)?;
        if self.epsilon0 > 1.0 {
            return Err(Error::domain("epsilon0 must be at most 1"));
        }
        positive("tol", self.tol)?;
        positive("grid.energies_per_unit", self.grid.energies_per_unit)?;
        positive("grid.measure_lambda", self.grid.measure_lambda)?;
        let counts = [
            ("stage_count", self.stage_count as u64),
            ("budget", self.budget),
            ("enlarge.n1", self.enlarge.n1),
            ("enlarge.n2_start", self.enlarge.n2_start),
            ("concatenate.min_repetitions", self.concatenate.min_repetitions),
            ("concatenate.exponent", self.concatenate.exponent as u64),
            ("grid.lambda_count", self.grid.lambda_count as u64),
            ("grid.min_energies", self.grid.min_energies as u64),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if self.concatenate.min_repetitions < 3 {
            return Err(Error::domain("concatenate.min_repetitions must be at least 3"));
        }
        if self.concatenate.materialize < 2 {
            return Err(Error::domain("concatenate.materialize must be at least 2"));
        }
        let p0 = self.base.period() as u64;
        if !self.schedule.contains(self.enlarge.tilde_period) || !self.enlarge.tilde_period.is_multiple_of(p0) {
            return Err(Error::domain(format!(
                "tilde_period {} must be a schedule index divisible by the base period {p0}",
                self.enlarge.tilde_period
            )));
        }
        if self.enlarge.tilde_period <= p0 {
            return Err(Error::domain("tilde_period must exceed the base period"));
        }
        if self.enlarge.n1 < 2 * p0 + 1 {
            return Err(Error::domain(format!("enlarge.n1 must be at least 2p+1 = {}", 2 * p0 + 1)));
        }
        if self.base.sup_norm() >= 1e6 {
            return Err(Error::domain("base sampler is too large"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// families

/// One block run of a concatenated sampler: `blocks` consecutive copies of
/// `members[member] + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub member: usize,
    pub shift: f64,
    pub blocks: u64,
}

/// A periodic sampler assembled from whole blocks of shorter-period members.
///
/// Transfer matrices over whole blocks come from powers of the member
/// monodromies, so one monodromy costs `O(#distinct members · block length)`
/// rather than `O(period)`.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    members: Arc<Vec<FamilyMember>>,
    block_len: usize,
    segments: Vec<Segment>,
    starts: Vec<u64>,
    /// Samplers whose monodromies are actually evaluated: members with their
    /// constant shifts stripped.
    bases: Vec<FamilyMember>,
    /// Distinct `(base, total shift)` pairs; `segment_key[k]` indexes into it.
    keys: Vec<(usize, f64)>,
    segment_key: Vec<usize>,
    /// Spacing `Δ` when every key shift is `σ_min + integer·Δ`.
    shift_lattice: Option<f64>,
    period: usize,
    sup_norm: f64,
}

impl BlockSampler {
    pub fn new(members: Arc<Vec<FamilyMember>>, segments: Vec<Segment>) -> Result<Self> {
        let block_len = match members.first() {
            Some(m) => m.period(),
            None => return Err(Error::domain("a block sampler needs members")),
        };
        if members.iter().any(|m| m.period() != block_len) {
            return Err(Error::domain("block members must share one period"));
        }
        // members that are shifts of a common sampler share one base
        let mut bases: Vec<FamilyMember> = Vec::new();
        let mut member_base: Vec<(usize, f64)> = Vec::with_capacity(members.len());
        for m in members.iter() {
            let (base, shift) = match m {
                FamilyMember::Shifted { base, shift } => (FamilyMember::Plain(PeriodicSampler::clone(base)), *shift),
                other => (other.clone(), 0.0),
            };
            let found = bases.iter().position(|b| match (b, &base) {
                (FamilyMember::Plain(x), FamilyMember::Plain(y)) => x == y,
                (FamilyMember::Blocks(x), FamilyMember::Blocks(y)) => Arc::ptr_eq(x, y),
                _ => false,
            });
            let idx = found.unwrap_or_else(|| {
                bases.push(base);
                bases.len() - 1
            });
            member_base.push((idx, shift));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut keys: Vec<(usize, f64)> = Vec::new();
        let mut key_lookup: std::collections::HashMap<(usize, u64), usize> = std::collections::HashMap::new();
        let mut segment_key = Vec::with_capacity(segments.len());
        let mut total: u64 = 0;
        let mut sup_norm: f64 = 0.0;
        for seg in &segments {
            if seg.member >= members.len() || seg.blocks == 0 {
                return Err(Error::domain(format!("invalid segment {seg:?}")));
            }
            ensure_finite("segment shift", seg.shift)?;
            starts.push(total);
            total += seg.blocks * block_len as u64;
            let (base, member_shift) = member_base[seg.member];
            let shift = member_shift + seg.shift;
            let key = *key_lookup.entry((base, shift.to_bits())).or_insert_with(|| {
                keys.push((base, shift));
                let m = &members[seg.member];
                let extent = (0..block_len as i64)
                    .map(|k| (m.value_at(k) + seg.shift).abs())
                    .fold(0.0, f64::max);
                sup_norm = sup_norm.max(extent);
                keys.len() - 1
            });
            segment_key.push(key);
        }
        if segments.is_empty() || total > u32::MAX as u64 {
            return Err(Error::domain(format!("unsupported block sampler period {total}")));
        }
        Ok(BlockSampler {
            members,
            block_len,
            segments,
            starts,
            bases,
            shift_lattice: shift_lattice(&member_base.iter().map(|m| m.1).collect::<Vec<_>>(), &keys),
            keys,
            segment_key,
            period: total as usize,
            sup_norm,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    fn segment_at(&self, site: u64) -> usize {
        self.starts.partition_point(|&s| s <= site) - 1
    }

    /// Product over `len ≤ period` sites starting at `pos`, wrapping once at most.
    fn partial(&self, energy: f64, coupling: f64, mut pos: u64, len: u64) -> ScaledMatrix {
        let period = self.period as u64;
        let mut acc = ScaledMatrix::IDENTITY;
        let mut remaining = len;
        while remaining > 0 {
            if pos == period {
                pos = 0;
            }
            let k = self.segment_at(pos);
            let seg = &self.segments[k];
            let seg_len = seg.blocks * self.block_len as u64;
            let offset = pos - self.starts[k];
            let take = remaining.min(seg_len - offset);
            let m = &self.members[seg.member];
            let piece = m.transfer(energy - coupling * seg.shift, coupling, offset as i64, take);
            acc = piece.mul(&acc);
            pos += take;
            remaining -= take;
        }
        acc
    }

    /// Values over one period.
    pub fn materialize(&self) -> PeriodicSampler {
        let mut values = Vec::with_capacity(self.period);
        for seg in &self.segments {
            let m = &self.members[seg.member];
            for _ in 0..seg.blocks {
                values.extend((0..self.block_len as i64).map(|k| m.value_at(k) + seg.shift));
            }
        }
        PeriodicSampler::new(values).expect("finite values")
    }
}

impl Potential for BlockSampler {
    fn period(&self) -> usize {
        self.period
    }

    fn scan_step(&self, coupling: f64, max_step: f64) -> f64 {
        match self.shift_lattice {
            Some(spacing) if coupling != 0.0 => {
                let cell = coupling.abs() * spacing;
                cell / (cell / max_step).ceil()
            }
            _ => max_step,
        }
    }

    fn discriminant_grid(&self, coupling: f64, lo: f64, step: f64, count: usize) -> Vec<f64> {
        if let Some(values) = self.lattice_grid(coupling, lo, step, count) {
            return values;
        }
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let end = (start + crate::periodic::BATCH_CHUNK).min(count);
            let energies: Vec<f64> = (start..end).map(|i| lo + step * i as f64).collect();
            out.extend(self.monodromy_batch(&energies, coupling).iter().map(ScaledMatrix::trace));
            start = end;
        }
        out
    }

    fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    fn value_at(&self, site: i64) -> f64 {
        let pos = site.rem_euclid(self.period as i64) as u64;
        let k = self.segment_at(pos);
        let seg = &self.segments[k];
        let offset = (pos - self.starts[k]) as i64;
        self.members[seg.member].value_at(offset) + seg.shift
    }

    fn transfer(&self, energy: f64, coupling: f64, start: i64, len: u64) -> ScaledMatrix {
        let period = self.period as u64;
        let pos = start.rem_euclid(period as i64) as u64;
        if len <= period {
            return self.partial(energy, coupling, pos, len);
        }
        let (q, rem) = (len / period, len % period);
        let one = self.partial(energy, coupling, pos, period);
        self.partial(energy, coupling, pos, rem).mul(&one.pow(q))
    }

    fn monodromy(&self, energy: f64, coupling: f64) -> ScaledMatrix {
        let blocks: Vec<ScaledMatrix> = self
            .keys
            .iter()
            .map(|&(b, shift)| self.bases[b].monodromy(energy - coupling * shift, coupling))
            .collect();
        self.segments
            .iter()
            .zip(&self.segment_key)
            .fold(ScaledMatrix::IDENTITY, |acc, (seg, &key)| {
                let b = &blocks[key];
                let run = if seg.blocks == 1 { *b } else { b.pow(seg.blocks) };
                run.mul(&acc)
            })
    }

    fn monodromy_batch(&self, energies: &[f64], coupling: f64) -> Vec<ScaledMatrix> {
        // small sub-batches keep the per-key tables in cache during the fold
        energies
            .chunks(BLOCK_BATCH)
            .flat_map(|chunk| self.monodromy_sub_batch(chunk, coupling))
            .collect()
    }
}

const BLOCK_BATCH: usize = LANES;

/// Lattice tables are capped at this many matrices per tile.
const LATTICE_TABLE_CAP: usize = 1 << 21;

/// Distinct lattice offsets allowed before the lattice scan is abandoned.
const LATTICE_MAX_CLASSES: usize = 4;

/// Keys per base below which sharing a lattice table does not pay.
const LATTICE_MIN_KEYS: usize = 8;

/// Spacing of the member shifts, if the key shifts sit on few offsets of it.
fn shift_lattice(member_shifts: &[f64], keys: &[(usize, f64)]) -> Option<f64> {
    if keys.len() < LATTICE_MIN_KEYS {
        return None;
    }
    let mut shifts: Vec<f64> = member_shifts.to_vec();
    shifts.sort_by(f64::total_cmp);
    shifts.dedup();
    let scale = shifts.iter().fold(1e-300f64, |m, s| m.max(s.abs()));
    // the most common gap between neighbouring shifts
    let mut gaps: Vec<f64> = shifts
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 1e-12 * scale)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let mut spacing = f64::NAN;
    let mut best = 0;
    let mut i = 0;
    while i < gaps.len() {
        let mut j = i + 1;
        while j < gaps.len() && gaps[j] - gaps[i] <= 1e-9 * gaps[i] {
            j += 1;
        }
        if j - i > best {
            best = j - i;
            spacing = gaps[i];
        }
        i = j;
    }
    if !spacing.is_finite() {
        return None;
    }
    // a few offset classes (bumped blocks) are fine: each gets its own table
    let mut classes: Vec<i64> = keys
        .iter()
        .map(|&(_, s)| {
            let k = (s - shifts[0]) / spacing;
            ((k - k.round()) * 1e6).round() as i64
        })
        .collect();
    classes.sort_unstable();
    classes.dedup();
    (classes.len() <= LATTICE_MAX_CLASSES).then_some(spacing)
}

impl BlockSampler {
    /// `D` on a grid whose spacing divides `λΔ`: every key needs its base
    /// monodromy on the same grid, offset by a whole number of cells, so one
    /// table per base serves all of its shifts.
    fn lattice_grid(&self, coupling: f64, lo: f64, step: f64, count: usize) -> Option<Vec<f64>> {
        let spacing = self.shift_lattice?;
        let ratio = coupling.abs() * spacing / step;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return None;
        }
        // group keys by base and by fractional offset
        let mut groups: Vec<(usize, f64, Vec<(usize, i64)>)> = Vec::new();
        for (k, &(base, shift)) in self.keys.iter().enumerate() {
            let offset = coupling * shift / step;
            let whole = offset.round();
            let frac = offset - whole;
            match groups.iter_mut().find(|g| g.0 == base && (g.1 - frac).abs() < 1e-6) {
                Some(g) => g.2.push((k, whole as i64)),
                None => groups.push((base, frac, vec![(k, whole as i64)])),
            }
        }
        let spreads: Vec<(i64, usize)> = groups
            .iter()
            .map(|g| {
                let hi = g.2.iter().map(|x| x.1).max().unwrap();
                let lo = g.2.iter().map(|x| x.1).min().unwrap();
                (hi, (hi - lo) as usize)
            })
            .collect();
        let spread_total: usize = spreads.iter().map(|s| s.1).sum();
        let tile = LATTICE_TABLE_CAP.checked_sub(spread_total)? / groups.len();
        if tile < 64 * LANES {
            return None;
        }
        let runs: Vec<(usize, u64)> = self
            .segments
            .iter()
            .zip(&self.segment_key)
            .map(|(seg, &key)| (key, seg.blocks))
            .collect();
        // where each key reads its table: (group, index offset)
        let mut reader = vec![(0usize, 0usize); self.keys.len()];
        for (gi, g) in groups.iter().enumerate() {
            for &(k, whole) in &g.2 {
                reader[k] = (gi, (spreads[gi].0 - whole) as usize);
            }
        }
        let mut out = Vec::with_capacity(count);
        let mut j0 = 0;
        while j0 < count {
            let j1 = (j0 + tile).min(count);
            let tables: Vec<Vec<ScaledMatrix>> = groups
                .iter()
                .zip(&spreads)
                .map(|(g, &(hi, spread))| {
                    let frac = g.1;
                    let energies: Vec<f64> = (0..j1 - j0 + spread)
                        .map(|i| lo + step * ((j0 + i) as f64 - hi as f64 - frac))
                        .collect();
                    self.bases[g.0].monodromy_batch(&energies, coupling)
                })
                .collect();
            let mut j = j0;
            while j < j1 {
                let n = (j1 - j).min(LANES);
                    let lanes: Vec<Lanes> = reader
                    .iter()
                    .map(|&(gi, off)| {
                        let start = j - j0 + off;
                        Lanes::from_slice(&tables[gi][start..start + n])
                    })
                    .collect();
                    let product = fold_lanes(&lanes, &runs);
                out.extend((0..n).map(|l| product.get(l).trace()));
                j += n;
            }
            j0 = j1;
        }
        Some(out)
    }
}

impl BlockSampler {
    fn monodromy_sub_batch(&self, energies: &[f64], coupling: f64) -> Vec<ScaledMatrix> {
        let tables: Vec<Lanes> = self
            .keys
            .iter()
            .map(|&(b, shift)| {
                let shifted: Vec<f64> = energies.iter().map(|&e| e - coupling * shift).collect();
                Lanes::from_slice(&self.bases[b].monodromy_batch(&shifted, coupling))
            })
            .collect();
        let runs: Vec<(usize, u64)> = self
            .segments
            .iter()
            .zip(&self.segment_key)
            .map(|(seg, &key)| (key, seg.blocks))
            .collect();
        let product = fold_lanes(&tables, &runs);
        (0..energies.len()).map(|l| product.get(l)).collect()
    }
}

/// A family member: an explicit sampler, a constant shift of a shared
/// sampler, or a block concatenation.
#[derive(Debug, Clone)]
pub enum FamilyMember {
    Plain(PeriodicSampler),
    Shifted { base: Arc<PeriodicSampler>, shift: f64 },
    Blocks(Arc<BlockSampler>),
}

impl FamilyMember {
    pub fn materialize(&self) -> PeriodicSampler {
        match self {
            FamilyMember::Plain(f) => f.clone(),
            FamilyMember::Shifted { base, shift } => base.shifted(*shift),
            FamilyMember::Blocks(b) => b.materialize(),
        }
    }
}

impl Potential for FamilyMember {
    fn period(&self) -> usize {
        match self {
            FamilyMember::Plain(f) => f.period(),
            FamilyMember::Shifted { base, .. } => base.period(),
            FamilyMember::Blocks(b) => b.period(),
        }
    }

    fn sup_norm(&self) -> f64 {
        match self {
            FamilyMember::Plain(f) => PeriodicSampler::sup_norm(f),
            FamilyMember::Shifted { base, shift } => base.values().iter().map(|v| (v + shift).abs()).fold(0.0, f64::max),
            FamilyMember::Blocks(b) => b.sup_norm(),
        }
    }

    fn value_at(&self, site: i64) -> f64 {
        match self {
            FamilyMember::Plain(f) => f.at(site),
            FamilyMember::Shifted { base, shift } => base.at(site) + shift,
            FamilyMember::Blocks(b) => b.value_at(site),
        }
    }

    fn transfer(&self, energy: f64, coupling: f64, start: i64, len: u64) -> ScaledMatrix {
        match self {
            FamilyMember::Plain(f) => f.transfer(energy, coupling, start, len),
            FamilyMember::Shifted { base, shift } => base.transfer(energy - coupling * shift, coupling, start, len),
            FamilyMember::Blocks(b) => b.transfer(energy, coupling, start, len),
        }
    }

    fn monodromy(&self, energy: f64, coupling: f64) -> ScaledMatrix {
        match self {
            FamilyMember::Plain(f) => f.monodromy(energy, coupling),
            FamilyMember::Shifted { base, shift } => base.monodromy(energy - coupling * shift, coupling),
            FamilyMember::Blocks(b) => b.monodromy(energy, coupling),
        }
    }

    fn monodromy_batch(&self, energies: &[f64], coupling: f64) -> Vec<ScaledMatrix> {
        match self {
            FamilyMember::Plain(f) => f.monodromy_batch(energies, coupling),
            FamilyMember::Shifted { base, shift } => {
                let shifted: Vec<f64> = energies.iter().map(|&e| e - coupling * shift).collect();
                base.monodromy_batch(&shifted, coupling)
            }
            FamilyMember::Blocks(b) => b.monodromy_batch(energies, coupling),
        }
    }

    fn scan_step(&self, coupling: f64, max_step: f64) -> f64 {
        match self {
            FamilyMember::Blocks(b) => b.scan_step(coupling, max_step),
            _ => max_step,
        }
    }

    fn discriminant_grid(&self, coupling: f64, lo: f64, step: f64, count: usize) -> Vec<f64> {
        match self {
            FamilyMember::Plain(f) => f.discriminant_grid(coupling, lo, step, count),
            FamilyMember::Shifted { base, shift } => base.discriminant_grid(coupling, lo - coupling * shift, step, count),
            FamilyMember::Blocks(b) => b.discriminant_grid(coupling, lo, step, count),
        }
    }
}

/// Samplers of one common period, with provenance labels.
#[derive(Debug, Clone)]
pub struct SamplerFamily {
    members: Vec<FamilyMember>,
    labels: Vec<String>,
}

impl SamplerFamily {
    pub fn new(members: Vec<FamilyMember>, labels: Vec<String>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::domain("a family needs at least one member"));
        };
        if labels.len() != members.len() {
            return Err(Error::domain("one label per member is required"));
        }
        let p = first.period();
        if members.iter().any(|m| m.period() != p) {
            return Err(Error::domain("family members must share one period"));
        }
        Ok(SamplerFamily { members, labels })
    }

    pub fn explicit(members: Vec<PeriodicSampler>, label: &str) -> Result<Self> {
        let labels = (0..members.len()).map(|k| format!("{label}[{k}]")).collect();
        SamplerFamily::new(members.into_iter().map(FamilyMember::Plain).collect(), labels)
    }

    pub fn members(&self) -> &[FamilyMember] {
        &self.members
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn period(&self) -> usize {
        self.members[0].period()
    }

    pub fn sup_norm(&self) -> f64 {
        self.members.iter().map(|m| m.sup_norm()).fold(0.0, f64::max)
    }

    /// `L(E, λF)`: the mean of the members' exponents.
    pub fn lyapunov(&self, energy: f64, lambda: f64) -> f64 {
        let sum: f64 = self.members.iter().map(|m| lyapunov_coupled(energy, lambda, m)).sum();
        sum / self.members.len() as f64
    }

    /// `L(E, λF)` at many energies.
    pub fn lyapunov_grid(&self, energies: &[f64], lambda: f64) -> Vec<f64> {
        let mut sum = vec![0.0; energies.len()];
        for m in &self.members {
            for (s, l) in sum.iter_mut().zip(lyapunov_batch(m, lambda, energies)) {
                *s += l;
            }
        }
        let n = self.members.len() as f64;
        sum.into_iter().map(|s| s / n).collect()
    }

    /// Largest pairwise sup distance among the members.
    pub fn diameter(&self) -> f64 {
        let values: Vec<PeriodicSampler> = self.members.iter().map(|m| m.materialize()).collect();
        let mut d: f64 = 0.0;
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                d = d.max(values[i].sup_distance(&values[j]));
            }
        }
        d
    }
}

// ---------------------------------------------------------------------------
// certificates and parameters

/// A checked inequality `value < threshold` (or `≤`, see `strict`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    /// Required certificates decide the stage outcome; the others document asymptotic
    /// bounds that are out of reach at desk scale.
    pub required: bool,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Certificate {
    fn below(name: &str, required: bool, value: f64, threshold: f64, strict: bool, detail: String) -> Self {
        let passed = if strict { value < threshold } else { value <= threshold };
        Certificate {
            name: name.into(),
            required,
            passed,
            value,
            threshold,
            detail,
        }
    }

    fn above(name: &str, required: bool, value: f64, threshold: f64, detail: String) -> Self {
        Certificate {
            name: name.into(),
            required,
            passed: value > threshold,
            value,
            threshold,
            detail,
        }
    }
}

/// `(λ, energy grid)` pairs on which Lyapunov certificates are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationGrid {
    pub lambdas: Vec<f64>,
    pub energies: Vec<EnergyGrid>,
}

impl CertificationGrid {
    /// λ_k = ε^{1 - 2k/(n+1)}, k = 1..n, and for each an energy grid over
    /// `[-4 - λ‖F‖, 4 + λ‖F‖]` (outside it `L ≥ 1` in closed form).
    pub fn build(eps: f64, norm: f64, config: &GridConfig) -> Result<Self> {
        let n = config.lambda_count;
        let lambdas: Vec<f64> = (1..=n).map(|k| eps.powf(1.0 - 2.0 * k as f64 / (n + 1) as f64)).collect();
        let energies = lambdas
            .iter()
            .map(|&l| {
                let reach = 4.0 + l * norm;
                let points = ((2.0 * reach * config.energies_per_unit).ceil() as usize).max(config.min_energies);
                EnergyGrid::new(-reach, reach, points)
            })
            .collect::<Result<_>>()?;
        Ok(CertificationGrid { lambdas, energies })
    }

    pub fn point_count(&self) -> usize {
        self.energies.iter().map(|g| g.points).sum()
    }
}

/// Extreme value of a grid scan and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridExtreme {
    pub lambda: f64,
    pub energy: f64,
    pub value: f64,
}

fn grid_extreme(
    grid: &CertificationGrid,
    values: impl Fn(&[f64], f64) -> Vec<f64>,
    better: impl Fn(f64, f64) -> bool,
) -> Vec<GridExtreme> {
    grid.lambdas
        .iter()
        .zip(&grid.energies)
        .map(|(&lambda, eg)| {
            let energies: Vec<f64> = eg.iter().collect();
            let vals = values(&energies, lambda);
            let mut best = 0;
            for k in 1..vals.len() {
                if better(vals[k], vals[best]) {
                    best = k;
                }
            }
            GridExtreme {
                lambda,
                energy: energies[best],
                value: vals[best],
            }
        })
        .collect()
}

/// Per-λ minima of `L(E, λF)` over the grid.
pub fn family_floor(family: &SamplerFamily, grid: &CertificationGrid) -> Vec<GridExtreme> {
    grid_extreme(grid, |e, l| family.lyapunov_grid(e, l), |x, y| x < y)
}

/// Per-λ maxima of `|L(E, λF) - L(E, λG)|` over the grid.
pub fn family_distance(a: &SamplerFamily, b: &SamplerFamily, grid: &CertificationGrid) -> Vec<GridExtreme> {
    grid_extreme(
        grid,
        |e, l| {
            let (la, lb) = (a.lyapunov_grid(e, l), b.lyapunov_grid(e, l));
            la.iter().zip(&lb).map(|(x, y)| (x - y).abs()).collect()
        },
        |x, y| x > y,
    )
}

/// Per-stage parameters; optional fields are only meaningful for one kind of step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageParameters {
    pub stage: usize,
    /// λ-window edge: certificates cover `ε < λ < 1/ε`.
    pub eps: f64,
    /// Certified floor of the stage's output family.
    pub delta: f64,
    /// Floor of the enlarged family (when this stage enlarged).
    pub tilde_delta: Option<f64>,
    pub period: usize,
    pub tilde_period: usize,
    pub repetitions: Option<u64>,
    pub remainder: Option<u64>,
    pub exponent: Option<u32>,
    pub n1: Option<u64>,
    pub n2: Option<u64>,
    pub grid: CertificationGrid,
}

// ---------------------------------------------------------------------------
// construction 1: gap opening and constant shifts

/// Gap report for one bump candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub j: u64,
    /// Fewest bands seen over the λ values (all gaps open iff this equals `p̃`).
    pub min_band_count: usize,
    pub min_gap: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub j0: u64,
    pub n1: u64,
    pub min_gap: f64,
    pub sampler: PeriodicSampler,
    pub candidates: Vec<CandidateReport>,
}

/// Raise `f` to period `p̃` and add `j/N₁` at site `p̃ - 1`, for `j = 1..=2p+1`;
/// return the first candidate whose spectrum has `p̃` open-gapped bands at every λ.
pub fn gap_opening_probe(
    f: &PeriodicSampler,
    tilde_period: usize,
    n1: u64,
    lambdas: &[f64],
    tol: f64,
) -> Result<ProbeOutcome> {
    let p = f.period() as u64;
    if n1 < 2 * p + 1 {
        return Err(Error::domain(format!("N1 = {n1} is below 2p+1 = {}", 2 * p + 1)));
    }
    let promoted = f.promote(tilde_period)?;
    let mut candidates = Vec::new();
    for j in 1..=2 * p + 1 {
        let candidate = promoted.with_bump(tilde_period - 1, j as f64 / n1 as f64);
        let mut min_bands = usize::MAX;
        let mut min_gap = f64::INFINITY;
        for &lambda in lambdas {
            let s = band_spectrum_coupled(&candidate, lambda, tol)?;
            min_bands = min_bands.min(if s.touching_merged { s.band_count().min(tilde_period - 1) } else { s.band_count() });
            min_gap = min_gap.min(s.min_gap().unwrap_or(f64::INFINITY));
        }
        let accepted = min_bands == tilde_period;
        candidates.push(CandidateReport {
            j,
            min_band_count: min_bands,
            min_gap,
            accepted,
        });
        if accepted {
            return Ok(ProbeOutcome {
                j0: j,
                n1,
                min_gap,
                sampler: candidate,
                candidates,
            });
        }
    }
    let report = candidates
        .iter()
        .map(|c| format!("j={}: {} bands", c.j, c.min_band_count))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Error::Invariant(format!("no bump opens all {tilde_period} gaps ({report})")))
}

/// Shift constants `4πl/(εp̃N₂) - 2π/(εp̃)`, `l = 0..=N₂`, centred so that the family
/// stays inside the base ball.
pub fn shift_constants(eps: f64, tilde_period: usize, n2: u64) -> Vec<f64> {
    let span = 4.0 * PI / (eps * tilde_period as f64);
    (0..=n2).map(|l| span * l as f64 / n2 as f64 - 0.5 * span).collect()
}

/// Member order: `(1,0)` first, `(1,1)` last, everything else in between.
pub fn shift_order(probes: usize, n2: u64) -> Vec<(usize, u64)> {
    let mut order = vec![(0, 0)];
    for i in 0..probes {
        for l in 0..=n2 {
            if i == 0 && l <= 1 {
                continue;
            }
            order.push((i, l));
        }
    }
    order.push((0, 1));
    order
}

/// The enlarged family: every probe output plus every shift constant.
pub fn enlarge_lambda_family(probes: &[PeriodicSampler], shifts: &[f64], order: &[(usize, u64)]) -> Result<SamplerFamily> {
    let bases: Vec<Arc<PeriodicSampler>> = probes.iter().cloned().map(Arc::new).collect();
    let mut members = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    for &(i, l) in order {
        let base = bases.get(i).ok_or_else(|| Error::domain("probe index out of range"))?;
        let shift = *shifts.get(l as usize).ok_or_else(|| Error::domain("shift index out of range"))?;
        members.push(FamilyMember::Shifted {
            base: Arc::clone(base),
            shift,
        });
        labels.push(format!("f~({},{l})", i + 1));
    }
    SamplerFamily::new(members, labels)
}

// ---------------------------------------------------------------------------
// construction 2: concatenation with perturbations

/// Block layout of a concatenated period `p_K = m·p̃·r + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub members: usize,
    pub block_len: usize,
    pub repetitions: u64,
    pub remainder: u64,
    /// Blocks per member: `r + 1` for the first `d/p̃`, then `r`.
    pub runs: Vec<u64>,
}

impl BlockLayout {
    pub fn new(members: usize, block_len: usize, period: u64) -> Result<Self> {
        let chunk = members as u64 * block_len as u64;
        if members == 0 || block_len == 0 || !period.is_multiple_of(block_len as u64) {
            return Err(Error::domain(format!(
                "period {period} is not a whole number of blocks of {block_len}"
            )));
        }
        let r = period / chunk;
        let d = period % chunk;
        if r < 3 {
            return Err(Error::domain(format!(
                "period {period} leaves r = {r} < 3 repetitions for {members} members of period {block_len}"
            )));
        }
        let extra = (d / block_len as u64) as usize;
        let runs = (0..members).map(|i| if i < extra { r + 1 } else { r }).collect();
        Ok(BlockLayout {
            members,
            block_len,
            repetitions: r,
            remainder: d,
            runs,
        })
    }

    pub fn period(&self) -> u64 {
        self.runs.iter().sum::<u64>() * self.block_len as u64
    }

    /// Segments for perturbation vector `t` (one entry per member, each `< r`):
    /// member `i < m` is bumped on its last block, member `m` on its second-to-last.
    pub fn segments(&self, t: &[u64], exponent: u32) -> Result<Vec<Segment>> {
        if t.len() != self.members {
            return Err(Error::domain(format!("t has {} entries for {} members", t.len(), self.members)));
        }
        if let Some(&bad) = t.iter().find(|&&x| x >= self.repetitions) {
            return Err(Error::domain(format!("perturbation index {bad} is not below r = {}", self.repetitions)));
        }
        let unit = (self.repetitions as f64).powi(-(exponent as i32));
        let mut segments = Vec::new();
        let mut push = |member: usize, shift: f64, blocks: u64| {
            if blocks == 0 {
                return;
            }
            match segments.last_mut() {
                Some(Segment { member: m, shift: s, blocks: b }) if *m == member && s.to_bits() == shift.to_bits() => {
                    *b += blocks
                }
                _ => segments.push(Segment { member, shift, blocks }),
            }
        };
        for (i, (&run, &ti)) in self.runs.iter().zip(t).enumerate() {
            let bump = unit * ti as f64;
            if i + 1 < self.members {
                push(i, 0.0, run - 1);
                push(i, bump, 1);
            } else {
                push(i, 0.0, run - 2);
                push(i, bump, 1);
                push(i, 0.0, 1);
            }
        }
        Ok(segments)
    }

    /// Full-family diameter `(r - 1)·r^{-N}`.
    pub fn family_diameter(&self, exponent: u32) -> f64 {
        (self.repetitions - 1) as f64 * (self.repetitions as f64).powi(-(exponent as i32))
    }

    /// Site where member `i` (0-based) starts.
    pub fn member_start(&self, i: usize) -> u64 {
        self.runs[..i].iter().sum::<u64>() * self.block_len as u64
    }
}

/// The perturbed concatenations `f^{t⃗}_K` for the given vectors.
pub fn concatenate_perturb(
    input: &SamplerFamily,
    period: u64,
    exponent: u32,
    vectors: &[Vec<u64>],
) -> Result<(BlockLayout, SamplerFamily)> {
    let layout = BlockLayout::new(input.len(), input.period(), period)?;
    let members = Arc::new(input.members().to_vec());
    let mut out = Vec::with_capacity(vectors.len());
    let mut labels = Vec::with_capacity(vectors.len());
    for t in vectors {
        let sampler = BlockSampler::new(Arc::clone(&members), layout.segments(t, exponent)?)?;
        out.push(FamilyMember::Blocks(Arc::new(sampler)));
        labels.push(format!("t={}", summarize_vector(t)));
    }
    Ok((layout, SamplerFamily::new(out, labels)?))
}

fn summarize_vector(t: &[u64]) -> String {
    if t.iter().all(|&x| x == t[0]) {
        format!("[{}; {}]", t[0], t.len())
    } else {
        let head: Vec<String> = t.iter().take(4).map(u64::to_string).collect();
        format!("[{}, …]", head.join(", "))
    }
}

/// `t⃗ = 0`, `t⃗ = r-1`, then seeded random vectors.
pub fn perturbation_vectors(members: usize, r: u64, count: usize, seed: u64) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0; members], vec![r - 1; members]];
    while out.len() < count {
        out.push((0..members).map(|_| rng.gen_range(0..r)).collect());
    }
    out.truncate(count.max(1));
    out
}

// ---------------------------------------------------------------------------
// ledger

/// How to rebuild a stage's family from stored data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyRecipe {
    Explicit {
        members: Vec<PeriodicSampler>,
    },
    Shifts {
        probes: Vec<PeriodicSampler>,
        shifts: Vec<f64>,
        order: Vec<(usize, u64)>,
    },
    Concatenation {
        /// Stage whose family is concatenated (`0` is the base family).
        input_stage: usize,
        /// The input is this stage's own enlargement rather than `input_stage`.
        #[serde(default)]
        enlarged_input: bool,
        period: u64,
        exponent: u32,
        vectors: Vec<Vec<u64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub parameter: String,
    pub value: u64,
    pub accepted: bool,
    pub note: String,
}

/// Band spectrum of the stage approximant at the measurement coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpectrum {
    pub lambda: f64,
    pub total_measure: f64,
    pub spectrum: BandSpectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub params: StageParameters,
    /// Probes of the enlargement step, when this stage enlarged.
    pub probes: Vec<ProbeOutcome>,
    pub trials: Vec<SearchTrial>,
    pub family: FamilyRecipe,
    /// `log10` of the full family size (only a subset may be materialized).
    pub full_family_log10: f64,
    pub materialized: usize,
    pub layout: Option<BlockLayout>,
    pub floor: Vec<GridExtreme>,
    /// `|L(E, λF_i) - L(E, λF_{i-1})|` maxima.
    pub closeness: Vec<GridExtreme>,
    pub spectrum: Option<StageSpectrum>,
    pub measure_bound: Option<SpectralCertificate>,
    /// `‖f^{t⃗₁} - f^{t⃗_m}‖` for the first and last members of the enlarged family.
    pub last_first_distance: Option<f64>,
    /// Gordon period `q_i = p̃_i` contributed by this stage.
    pub gordon_increment: Option<u64>,
    pub certificates: Vec<Certificate>,
    /// The enlargement that produced this stage's input, when it re-enlarged.
    #[serde(default)]
    pub enlargement: Option<Box<StageRecord>>,
}

impl StageRecord {
    pub fn passed(&self) -> bool {
        self.certificates.iter().filter(|c| c.required).all(|c| c.passed)
            && self.enlargement.as_ref().is_none_or(|e| e.passed())
    }

    /// Gordon period `q_i` of this stage, including a nested enlargement.
    pub fn gordon_period(&self) -> Option<u64> {
        self.gordon_increment
            .or_else(|| self.enlargement.as_ref().and_then(|e| e.gordon_increment))
    }

    pub fn certificate(&self, name: &str) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionLedger {
    pub config: ConstructionConfig,
    pub schedule: GroupSchedule,
    pub stages: Vec<StageRecord>,
    /// Candidate evaluations spent by the parameter searches.
    pub evaluations: u64,
    /// Set when a stage could not be completed.
    pub failure: Option<String>,
}

impl ConstructionLedger {
    pub fn all_passed(&self) -> bool {
        self.failure.is_none() && self.stages.iter().all(StageRecord::passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ledger serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ledger: ConstructionLedger = serde_json::from_str(text).map_err(|e| Error::from_json(&e))?;
        ledger.config.validate()?;
        for (k, stage) in ledger.stages.iter().enumerate() {
            if stage.params.stage != k + 1 {
                return Err(Error::Invariant(format!("stage {} stored at position {}", stage.params.stage, k + 1)));
            }
            if let FamilyRecipe::Concatenation { input_stage, .. } = stage.family {
                if input_stage > k {
                    return Err(Error::Invariant(format!("stage {} concatenates later stage {input_stage}", k + 1)));
                }
            }
        }
        Ok(ledger)
    }

    /// Rebuilds the family of stage `i` (1-based; `0` is the base family).
    pub fn family(&self, stage: usize) -> Result<SamplerFamily> {
        if stage == 0 {
            return SamplerFamily::explicit(vec![self.config.base.clone()], "f");
        }
        let record = self
            .stages
            .get(stage - 1)
            .ok_or_else(|| Error::domain(format!("ledger has no stage {stage}")))?;
        self.recipe_family(record, stage)
    }

    fn recipe_family(&self, record: &StageRecord, stage: usize) -> Result<SamplerFamily> {
        match &record.family {
            FamilyRecipe::Explicit { members } => SamplerFamily::explicit(members.clone(), "f"),
            FamilyRecipe::Shifts { probes, shifts, order } => enlarge_lambda_family(probes, shifts, order),
            FamilyRecipe::Concatenation {
                input_stage,
                enlarged_input,
                period,
                exponent,
                vectors,
            } => {
                let input = if *enlarged_input {
                    let inner = record
                        .enlargement
                        .as_deref()
                        .ok_or_else(|| Error::Invariant(format!("stage {stage} lacks its enlargement")))?;
                    if matches!(inner.family, FamilyRecipe::Concatenation { .. }) {
                        return Err(Error::Invariant("an enlargement cannot be a concatenation".into()));
                    }
                    self.recipe_family(inner, stage)?
                } else {
                    if *input_stage >= stage {
                        return Err(Error::Invariant("concatenation refers forward".into()));
                    }
                    self.family(*input_stage)?
                };
                Ok(concatenate_perturb(&input, *period, *exponent, vectors)?.1)
            }
        }
    }

    /// The distinguished approximant `f^{t⃗₁}_i` (the first member).
    pub fn approximant(&self, stage: usize) -> Result<FamilyMember> {
        Ok(self.family(stage)?.members()[0].clone())
    }

    /// Gordon periods `q_i` in stage order.
    pub fn gordon_periods(&self) -> Vec<(usize, u64)> {
        self.stages
            .iter()
            .filter_map(|s| s.gordon_period().map(|q| (s.params.stage, q)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// driver

struct Budget {
    limit: u64,
    used: u64,
}

impl Budget {
    fn spend(&mut self, what: &str) -> Result<()> {
        if self.used >= self.limit {
            return Err(Error::Budget(format!("{} candidate evaluations used before {what}", self.used)));
        }
        self.used += 1;
        Ok(())
    }
}

fn delta_from_floor(floor: &[GridExtreme]) -> f64 {
    let min = floor.iter().map(|g| g.value).fold(f64::INFINITY, f64::min);
    (0.9 * min).clamp(0.0, 0.999_999)
}

fn floor_certificate(floor: &[GridExtreme], grid: &CertificationGrid) -> Certificate {
    let worst = floor
        .iter()
        .copied()
        .fold(None::<GridExtreme>, |b, x| match b {
            Some(b) if b.value <= x.value => Some(b),
            _ => Some(x),
        })
        .expect("non-empty grid");
    Certificate::above(
        "lyapunov_floor",
        true,
        worst.value,
        0.0,
        format!(
            "min of L(E, λF) over {} grid points, attained at E = {}, λ = {}",
            grid.point_count(),
            worst.energy,
            worst.lambda
        ),
    )
}

fn max_extreme(v: &[GridExtreme]) -> GridExtreme {
    v.iter()
        .copied()
        .fold(None::<GridExtreme>, |b, x| match b {
            Some(b) if b.value >= x.value => Some(b),
            _ => Some(x),
        })
        .expect("non-empty grid")
}

struct Enlarged {
    record: StageRecord,
    family: SamplerFamily,
}

fn enlarge_stage(
    config: &ConstructionConfig,
    stage: usize,
    input: &SamplerFamily,
    eps: f64,
    budget: &mut Budget,
) -> Result<Enlarged> {
    let tilde_period = if stage == 1 {
        config.enlarge.tilde_period as usize
    } else {
        config
            .schedule
            .index_at_least(2 * input.period() as u64)
            .ok_or_else(|| Error::domain("period overflow"))? as usize
    };
    let inputs: Vec<PeriodicSampler> = input.members().iter().map(FamilyMember::materialize).collect();
    if tilde_period % input.period() != 0 || tilde_period <= input.period() {
        return Err(Error::domain(format!(
            "tilde_period {tilde_period} must be a proper multiple of {}",
            input.period()
        )));
    }
    // gaps are certified on the stage λ grid and at both window edges
    let mut probe_lambdas = vec![eps];
    probe_lambdas.extend(CertificationGrid::build(eps, 1.0, &config.grid)?.lambdas);
    probe_lambdas.push(1.0 / eps);

    let mut trials = Vec::new();
    let mut probes = Vec::new();
    let mut n1 = config.enlarge.n1;
    'n1: loop {
        probes.clear();
        for f in &inputs {
            budget.spend("the gap-opening probe")?;
            match gap_opening_probe(f, tilde_period, n1, &probe_lambdas, config.tol) {
                Ok(outcome) => probes.push(outcome),
                Err(Error::Invariant(msg)) => {
                    trials.push(SearchTrial {
                        parameter: "N1".into(),
                        value: n1,
                        accepted: false,
                        note: msg,
                    });
                    n1 = n1.saturating_mul(2);
                    if n1 > config.enlarge.n1_max {
                        return Err(Error::Budget(format!("no N1 up to {} opens every gap", config.enlarge.n1_max)));
                    }
                    continue 'n1;
                }
                Err(e) => return Err(e),
            }
        }
        trials.push(SearchTrial {
            parameter: "N1".into(),
            value: n1,
            accepted: true,
            note: format!("bumps j0 = {:?}", probes.iter().map(|p| p.j0).collect::<Vec<_>>()),
        });
        break;
    }
    let h = probes.iter().map(|p| p.min_gap).fold(f64::INFINITY, f64::min);
    let probe_samplers: Vec<PeriodicSampler> = probes.iter().map(|p| p.sampler.clone()).collect();

    let mut n2 = config.enlarge.n2_start;
    let (family, shifts, order, grid, floor) = loop {
        budget.spend("the N2 search")?;
        let shifts = shift_constants(eps, tilde_period, n2);
        let order = shift_order(probe_samplers.len(), n2);
        let family = enlarge_lambda_family(&probe_samplers, &shifts, &order)?;
        let grid = CertificationGrid::build(eps, family.sup_norm().max(input.sup_norm()), &config.grid)?;
        let floor = family_floor(&family, &grid);
        let min = floor.iter().map(|g| g.value).fold(f64::INFINITY, f64::min);
        let accepted = min > 0.0;
        trials.push(SearchTrial {
            parameter: "N2".into(),
            value: n2,
            accepted,
            note: format!("grid floor {min:e}"),
        });
        if accepted || n2.saturating_mul(2) > config.enlarge.n2_max {
            break (family, shifts, order, grid, floor);
        }
        n2 *= 2;
    };

    let tilde_delta = delta_from_floor(&floor);
    let closeness = family_distance(&family, input, &grid);
    let last_first = (shifts[1] - shifts[0]).abs();
    let base_distance = family
        .members()
        .iter()
        .map(|m| m.materialize().sup_distance(&config.base))
        .fold(0.0, f64::max);
    let asymptotic_n2 = 4.0 * PI / (eps * h * tilde_period as f64);
    let worst_close = max_extreme(&closeness);

    let mut certificates = vec![
        floor_certificate(&floor, &grid),
        Certificate::below(
            "base_ball",
            true,
            base_distance,
            config.epsilon0,
            true,
            "sup distance of every member from the base sampler".into(),
        ),
        Certificate::below(
            "last_first",
            true,
            last_first,
            1.0 / 3.0,
            true,
            "‖f~(1,1) - f~(1,0)‖ = 4π/(ε p~ N2)".into(),
        ),
        Certificate::below(
            "enlarge_closeness",
            false,
            worst_close.value,
            eps / 2.0,
            true,
            format!(
                "max |L(E,λF~) - L(E,λF)| at E = {}, λ = {}",
                worst_close.energy, worst_close.lambda
            ),
        ),
        Certificate::above(
            "n2_gap_bound",
            false,
            n2 as f64,
            asymptotic_n2,
            format!("N2 against 4π/(ε h p~) with certified minimal gap h = {h:e}"),
        ),
    ];
    let spectrum = approximant_spectrum(&family, config)?;
    let (bound, bound_cert) = measure_bound_certificate(&family.members()[0], &spectrum, 1, &[0], config)?;
    certificates.push(bound_cert);

    let record = StageRecord {
        params: StageParameters {
            stage,
            eps,
            delta: tilde_delta,
            tilde_delta: Some(tilde_delta),
            period: tilde_period,
            tilde_period,
            repetitions: None,
            remainder: None,
            exponent: None,
            n1: Some(n1),
            n2: Some(n2),
            grid,
        },
        probes,
        trials,
        family: FamilyRecipe::Shifts {
            probes: probe_samplers,
            shifts,
            order,
        },
        full_family_log10: (family.len() as f64).log10(),
        materialized: family.len(),
        layout: None,
        floor,
        closeness,
        spectrum: Some(spectrum),
        measure_bound: Some(bound),
        last_first_distance: Some(last_first),
        gordon_increment: Some(tilde_period as u64),
        certificates,
        enlargement: None,
    };
    Ok(Enlarged { record, family })
}

fn approximant_spectrum(family: &SamplerFamily, config: &ConstructionConfig) -> Result<StageSpectrum> {
    let lambda = config.grid.measure_lambda;
    let spectrum = band_spectrum_coupled(&family.members()[0], lambda, config.tol)?;
    Ok(StageSpectrum {
        lambda,
        total_measure: spectrum.total_measure(),
        spectrum,
    })
}

/// `|Σ| ≤ 4πp/C` for the approximant, with `C` from blocks of length `k` at `offsets`.
fn measure_bound_certificate(
    member: &FamilyMember,
    spectrum: &StageSpectrum,
    block_length: u64,
    offsets: &[i64],
    config: &ConstructionConfig,
) -> Result<(SpectralCertificate, Certificate)> {
    let lambda = spectrum.lambda;
    let reach = 2.0 + member.sup_norm() * lambda;
    let points = ((2.0 * reach * config.grid.energies_per_unit).ceil() as usize).max(config.grid.min_energies);
    let grid = EnergyGrid::covering(member.sup_norm() * lambda, points)?;
    let mut cert = measure_certificate_at(member, lambda, &grid, block_length, offsets)?;
    cert.measured = Some(spectrum.total_measure);
    cert.measured_within_bound = Some(spectrum.total_measure <= cert.bound + 1e-6);
    let check = Certificate::below(
        "measure_bound",
        true,
        spectrum.total_measure,
        cert.bound + 1e-6,
        false,
        format!(
            "measured |Σ(λf)| at λ = {lambda} against 4πp/C with C = {:e} (block length {})",
            cert.growth, cert.block_length
        ),
    );
    Ok((cert, check))
}

fn concatenate_stage(
    config: &ConstructionConfig,
    stage: usize,
    input_stage: usize,
    enlarged_input: bool,
    input: &SamplerFamily,
    input_record: Option<&StageRecord>,
    eps: f64,
    budget: &mut Budget,
) -> Result<(StageRecord, SamplerFamily)> {
    let m = input.len() as u64;
    let block = input.period() as u64;
    let exponent = config.concatenate.exponent * stage as u32;
    let chunk = m * block;
    let smallest = chunk
        .checked_mul(config.concatenate.min_repetitions)
        .and_then(|n| config.schedule.index_at_least(n))
        .ok_or_else(|| Error::domain("period overflow"))?;
    if smallest > config.concatenate.max_period {
        return Err(Error::Budget(format!(
            "the smallest admissible period {smallest} exceeds max_period {}",
            config.concatenate.max_period
        )));
    }
    let diameter_target = |p: u64| (p as f64).powf(-(config.concatenate.exponent as f64) / 2.0);

    // move up the schedule until the diameter inequality holds or the cap is reached
    let mut trials = Vec::new();
    let mut period = smallest;
    loop {
        budget.spend("the period search")?;
        let layout = BlockLayout::new(m as usize, block as usize, period)?;
        let ok = layout.family_diameter(exponent) <= diameter_target(period);
        trials.push(SearchTrial {
            parameter: "period".into(),
            value: period,
            accepted: ok,
            note: format!(
                "r = {}, diameter {:e} vs p^(-N/2) = {:e}",
                layout.repetitions,
                layout.family_diameter(exponent),
                diameter_target(period)
            ),
        });
        match period.checked_mul(config.schedule.factor) {
            Some(next) if !ok && next <= config.concatenate.max_period => period = next,
            _ => break,
        }
    }

    let layout = BlockLayout::new(m as usize, block as usize, period)?;
    let r = layout.repetitions;
    let vectors = perturbation_vectors(m as usize, r, config.concatenate.materialize, config.seed ^ (stage as u64) << 32);
    let (layout, family) = concatenate_perturb(input, period, exponent, &vectors)?;

    let grid = CertificationGrid::build(eps, family.sup_norm().max(input.sup_norm()), &config.grid)?;
    let floor = family_floor(&family, &grid);
    let delta = delta_from_floor(&floor);
    let closeness = family_distance(&family, input, &grid);
    let worst_close = max_extreme(&closeness);

    let full_diameter = layout.family_diameter(exponent);
    let spectrum = approximant_spectrum(&family, config)?;
    let previous_measure = input_record
        .and_then(|r| r.spectrum.as_ref())
        .filter(|s| s.lambda == spectrum.lambda)
        .map(|s| s.total_measure);
    let offsets: Vec<i64> = (0..m as usize).map(|i| layout.member_start(i) as i64).collect();
    let (bound, bound_cert) = measure_bound_certificate(
        &family.members()[0],
        &spectrum,
        (r - 2) * block,
        &offsets,
        config,
    )?;
    let tilde_delta = input_record.and_then(|r| r.params.tilde_delta).unwrap_or(0.0);
    let growth_target = tilde_delta * ((r - 2) * block) as f64;
    let previous_tilde = input_record.map_or(block, |r| r.params.tilde_period as u64);
    let measure_target = -(previous_tilde as f64) * (period as f64).sqrt();
    let last_first = input_record.and_then(|r| r.last_first_distance);
    let stage_ball = (period as f64).powi(-(stage as i32));
    let shrink = (stage as f64 - 1.0).powf(-(previous_tilde as f64)) / 3.0;

    let mut certificates = vec![
        floor_certificate(&floor, &grid),
        Certificate::below(
            "closeness",
            true,
            worst_close.value,
            eps,
            true,
            format!(
                "max |L(E,λF_i) - L(E,λF_(i-1))| at E = {}, λ = {}",
                worst_close.energy, worst_close.lambda
            ),
        ),
        Certificate::below(
            "diameter",
            true,
            full_diameter,
            diameter_target(period),
            false,
            format!("(r-1)·r^(-{exponent}) for the full family against p^(-N/2)"),
        ),
        Certificate::below(
            "stage_ball",
            true,
            full_diameter,
            stage_ball,
            true,
            "largest perturbation against p_i^(-i)".into(),
        ),
        Certificate::below(
            "period_growth",
            true,
            stage_ball,
            shrink,
            true,
            "p_i^(-i) < (1/3)(i-1)^(-p~_(i-1))".into(),
        ),
        bound_cert,
        Certificate::below(
            "measure_target",
            false,
            // bands narrower than the solver resolution merge to zero width
            spectrum.total_measure.max(f64::MIN_POSITIVE).ln(),
            measure_target,
            false,
            "log |Σ| against -p~_(i-1)·p_i^(1/2)".into(),
        ),
        Certificate::above(
            "block_growth",
            false,
            bound.growth.ln(),
            growth_target,
            format!("log C against δ~·(r-2)·p~ with δ~ = {tilde_delta:e}"),
        ),
    ];
    if let Some(d) = last_first {
        certificates.push(Certificate::below(
            "approximant_spread",
            true,
            d,
            shrink,
            true,
            "‖f^(t1) - f^(t_m)‖ = 4π/(ε p~ N2) against (1/3)(i-1)^(-p~_(i-1))".into(),
        ));
    }
    if let Some(prev) = previous_measure {
        certificates.push(Certificate::below(
            "measure_decrease",
            true,
            spectrum.total_measure,
            prev,
            true,
            format!("|Σ(λ f_i)| against the previous stage at λ = {}", spectrum.lambda),
        ));
    }

    let record = StageRecord {
        params: StageParameters {
            stage,
            eps,
            delta,
            tilde_delta: None,
            period: period as usize,
            tilde_period: block as usize,
            repetitions: Some(r),
            remainder: Some(layout.remainder),
            exponent: Some(exponent),
            n1: None,
            n2: None,
            grid,
        },
        probes: Vec::new(),
        trials,
        family: FamilyRecipe::Concatenation {
            input_stage,
            enlarged_input,
            period,
            exponent,
            vectors,
        },
        full_family_log10: m as f64 * (r as f64).log10(),
        materialized: family.len(),
        layout: Some(layout),
        floor,
        closeness,
        spectrum: Some(spectrum),
        measure_bound: Some(bound),
        last_first_distance: None,
        gordon_increment: None,
        certificates,
        enlargement: None,
    };
    Ok((record, family))
}

/// Runs `stage_count` stages. Search failures end the run early with a partial
/// ledger whose `failure` names the step that could not be completed.
pub fn iterate(config: &ConstructionConfig, stage_count: usize) -> Result<ConstructionLedger> {
    config.validate()?;
    if stage_count == 0 {
        return Err(Error::domain("stage_count must be at least 1"));
    }
    let mut ledger = ConstructionLedger {
        config: config.clone(),
        schedule: config.schedule.schedule_up_to(config.enlarge.tilde_period)?,
        stages: Vec::new(),
        evaluations: 0,
        failure: None,
    };
    let mut budget = Budget {
        limit: config.budget,
        used: 0,
    };
    let result = run_stages(config, stage_count, &mut ledger, &mut budget);
    ledger.evaluations = budget.used;
    let top = ledger
        .stages
        .iter()
        .map(|s| s.params.period as u64)
        .max()
        .unwrap_or(config.enlarge.tilde_period);
    ledger.schedule = config.schedule.schedule_up_to(top)?;
    match result {
        Ok(()) => Ok(ledger),
        Err(e @ (Error::Budget(_) | Error::Invariant(_) | Error::Solver { .. })) => {
            ledger.failure = Some(e.to_string());
            Ok(ledger)
        }
        Err(e) => Err(e),
    }
}

fn run_stages(
    config: &ConstructionConfig,
    stage_count: usize,
    ledger: &mut ConstructionLedger,
    budget: &mut Budget,
) -> Result<()> {
    let base = SamplerFamily::explicit(vec![config.base.clone()], "f")?;
    let eps1 = config.epsilon0 / 10.0;
    let first = enlarge_stage(config, 1, &base, eps1, budget)?;
    let mut current = first.family;
    let mut eps = eps1;
    ledger.stages.push(first.record);

    for stage in 2..=stage_count {
        let previous = ledger.stages.last().expect("stage recorded");
        let (record, family) = match config.window {
            WindowPolicy::Inherit => {
                let previous = previous.clone();
                concatenate_stage(config, stage, stage - 1, false, &current, Some(&previous), eps, budget)?
            }
            WindowPolicy::Shrink => {
                eps = eps.min(previous.params.delta) / 10.0;
                let enlarged = enlarge_stage(config, stage, &current, eps, budget)?;
                let (mut record, family) = concatenate_stage(
                    config,
                    stage,
                    stage - 1,
                    true,
                    &enlarged.family,
                    Some(&enlarged.record),
                    eps,
                    budget,
                )?;
                record.enlargement = Some(Box::new(enlarged.record));
                (record, family)
            }
        };
        ledger.stages.push(record);
        current = family;
    }
    Ok(())
}
