//! Finite-depth odometers `ℤ/n_1ℤ ← ℤ/n_2ℤ ← … ← ℤ/n_Kℤ`, their minimal
//! translations, and sampling functions on a finite level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::{gcd, PeriodicSampler};

/// The indices `n_1 | n_2 | … | n_K` of a decreasing chain of subgroups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct GroupSchedule {
    indices: Vec<u64>,
}

impl TryFrom<Vec<u64>> for GroupSchedule {
    type Error = Error;

    fn try_from(indices: Vec<u64>) -> Result<Self> {
        GroupSchedule::new(indices)
    }
}

impl From<GroupSchedule> for Vec<u64> {
    fn from(s: GroupSchedule) -> Vec<u64> {
        s.indices
    }
}

impl GroupSchedule {
    pub fn new(indices: Vec<u64>) -> Result<Self> {
        match indices.first() {
            None => return Err(Error::domain("a schedule needs at least one level")),
            Some(&n) if n < 2 => return Err(Error::domain(format!("first index must be >= 2, got {n}"))),
            _ => {}
        }
        for w in indices.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(Error::domain(format!(
                    "index {} does not properly divide {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(GroupSchedule { indices })
    }

    /// `2, 4, 8, …, 2^depth`.
    pub fn doubling(depth: usize) -> Result<Self> {
        if depth == 0 || depth > 62 {
            return Err(Error::domain(format!("doubling depth must be in 1..=62, got {depth}")));
        }
        GroupSchedule::new((1..=depth as u32).map(|k| 1u64 << k).collect())
    }

    pub fn depth(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    /// `n_k` for a 1-based level `k`.
    pub fn index(&self, level: usize) -> Result<u64> {
        level
            .checked_sub(1)
            .and_then(|k| self.indices.get(k))
            .copied()
            .ok_or_else(|| Error::domain(format!("level {level} outside 1..={}", self.depth())))
    }

    /// The 1-based level whose index is exactly `n`.
    pub fn level_of(&self, n: u64) -> Option<usize> {
        self.indices.iter().position(|&x| x == n).map(|k| k + 1)
    }
}

/// A point of the odometer: one residue per level, consistent under projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdometerElement {
    schedule: GroupSchedule,
    digits: Vec<u64>,
}

impl OdometerElement {
    pub fn new(schedule: GroupSchedule, digits: Vec<u64>) -> Result<Self> {
        if digits.len() != schedule.depth() {
            return Err(Error::domain(format!(
                "{} digits for a depth-{} schedule",
                digits.len(),
                schedule.depth()
            )));
        }
        for (k, (&d, &n)) in digits.iter().zip(schedule.indices()).enumerate() {
            if d >= n {
                return Err(Error::domain(format!("digit {d} at level {} is not below {n}", k + 1)));
            }
            if k > 0 && d % schedule.indices()[k - 1] != digits[k - 1] {
                return Err(Error::domain(format!(
                    "digit {d} at level {} does not project to {}",
                    k + 1,
                    digits[k - 1]
                )));
            }
        }
        Ok(OdometerElement { schedule, digits })
    }

    /// The neutral element `e`.
    pub fn identity(schedule: &GroupSchedule) -> Self {
        OdometerElement {
            digits: vec![0; schedule.depth()],
            schedule: schedule.clone(),
        }
    }

    /// The image of an integer under `ℤ → Ω`.
    pub fn from_integer(schedule: &GroupSchedule, n: i64) -> Self {
        OdometerElement {
            digits: schedule
                .indices()
                .iter()
                .map(|&m| (n as i128).rem_euclid(m as i128) as u64)
                .collect(),
            schedule: schedule.clone(),
        }
    }

    pub fn schedule(&self) -> &GroupSchedule {
        &self.schedule
    }

    pub fn digits(&self) -> &[u64] {
        &self.digits
    }

    /// Residue at a 1-based level.
    pub fn digit(&self, level: usize) -> Result<u64> {
        self.schedule.index(level)?;
        Ok(self.digits[level - 1])
    }

    fn same_schedule(&self, other: &OdometerElement) -> Result<()> {
        if self.schedule == other.schedule {
            Ok(())
        } else {
            Err(Error::domain("elements live on different schedules"))
        }
    }

    /// `self + n·other`, digitwise.
    fn add_multiple(&self, other: &OdometerElement, n: i64) -> Result<Self> {
        self.same_schedule(other)?;
        let digits = self
            .digits
            .iter()
            .zip(&other.digits)
            .zip(self.schedule.indices())
            .map(|((&a, &g), &m)| {
                let m = m as i128;
                (a as i128 + (n as i128).rem_euclid(m) * g as i128).rem_euclid(m) as u64
            })
            .collect();
        Ok(OdometerElement {
            schedule: self.schedule.clone(),
            digits,
        })
    }
}

/// Translation `ω ↦ g·ω` by a generator whose orbit is dense.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    generator: OdometerElement,
}

impl Translation {
    /// Fails unless every digit of `generator` is a unit mod its index.
    pub fn new(generator: OdometerElement) -> Result<Self> {
        if !is_minimal(&generator) {
            return Err(Error::domain(format!(
                "generator {:?} is not a unit at every level",
                generator.digits
            )));
        }
        Ok(Translation { generator })
    }

    /// The adding machine `ω ↦ ω + 1`.
    pub fn add_one(schedule: &GroupSchedule) -> Self {
        Translation {
            generator: OdometerElement::from_integer(schedule, 1),
        }
    }

    pub fn generator(&self) -> &OdometerElement {
        &self.generator
    }
}

/// Dense orbit at every finite level.
pub fn is_minimal(generator: &OdometerElement) -> bool {
    generator
        .digits
        .iter()
        .zip(generator.schedule.indices())
        .all(|(&d, &n)| gcd(d as usize, n as usize) == 1)
}

/// `Tⁿ(ω)`.
pub fn translate(t: &Translation, omega: &OdometerElement, n: i64) -> Result<OdometerElement> {
    omega.add_multiple(&t.generator, n)
}

/// A sampling function that only depends on the level-`k` residue: the value at
/// residue `x` is `sampler.at(x)`, and the sampler's period divides `n_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LevelSamplerDocument", into = "LevelSamplerDocument")]
pub struct LevelSampler {
    schedule: GroupSchedule,
    level: usize,
    sampler: PeriodicSampler,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelSamplerDocument {
    schedule: GroupSchedule,
    level: usize,
    values: PeriodicSampler,
}

impl TryFrom<LevelSamplerDocument> for LevelSampler {
    type Error = Error;

    fn try_from(doc: LevelSamplerDocument) -> Result<Self> {
        LevelSampler::new(doc.schedule, doc.level, doc.values)
    }
}

impl From<LevelSampler> for LevelSamplerDocument {
    fn from(f: LevelSampler) -> Self {
        LevelSamplerDocument {
            schedule: f.schedule,
            level: f.level,
            values: f.sampler,
        }
    }
}

impl LevelSampler {
    pub fn new(schedule: GroupSchedule, level: usize, sampler: PeriodicSampler) -> Result<Self> {
        let n = schedule.index(level)?;
        if n % sampler.period() as u64 != 0 {
            return Err(Error::domain(format!(
                "period {} does not divide the level-{level} index {n}",
                sampler.period()
            )));
        }
        Ok(LevelSampler {
            schedule,
            level,
            sampler,
        })
    }

    pub fn schedule(&self) -> &GroupSchedule {
        &self.schedule
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn sampler(&self) -> &PeriodicSampler {
        &self.sampler
    }

    pub fn evaluate(&self, omega: &OdometerElement) -> Result<f64> {
        if omega.schedule != self.schedule {
            return Err(Error::domain("element and sampler live on different schedules"));
        }
        Ok(self.sampler.at(omega.digits[self.level - 1] as i64))
    }

    /// The full residue table on `ℤ/n_kℤ`.
    fn table(&self) -> Vec<f64> {
        let n = self.schedule.indices()[self.level - 1];
        (0..n as i64).map(|x| self.sampler.at(x)).collect()
    }
}

/// `V(n) = f(Tⁿω)` for `n` in `lo..=hi`.
pub fn orbit_potential(
    f: &LevelSampler,
    t: &Translation,
    omega: &OdometerElement,
    lo: i64,
    hi: i64,
) -> Result<Vec<f64>> {
    if hi < lo {
        return Err(Error::domain(format!("empty range {lo}..={hi}")));
    }
    omega.same_schedule(&t.generator)?;
    let k = f.level - 1;
    let m = f.schedule.indices()[k] as i128;
    let (start, g) = (omega.digits[k] as i128, t.generator.digits[k] as i128);
    Ok((lo..=hi)
        .map(|n| f.sampler.at((start + n as i128 * g).rem_euclid(m) as i64))
        .collect())
}

/// Average over the cosets of the level-`j` subgroup; the result is `n_j`-periodic.
pub fn periodize(f: &LevelSampler, level: usize) -> Result<LevelSampler> {
    if level == 0 || level > f.level {
        return Err(Error::domain(format!(
            "cannot periodize a level-{} sampler to level {level}",
            f.level
        )));
    }
    let nj = f.schedule.index(level)? as usize;
    let table = f.table();
    let per_coset = (table.len() / nj) as f64;
    let mut sums = vec![0.0; nj];
    for (x, v) in table.iter().enumerate() {
        sums[x % nj] += v;
    }
    let values = sums.into_iter().map(|s| s / per_coset).collect();
    LevelSampler::new(f.schedule.clone(), level, PeriodicSampler::new(values)?)
}

/// Whether `f∘T₁^{n0} = f` and `f∘T₂^{n0} = f` both hold, checked on every residue.
pub fn period_independence_check(
    f: &LevelSampler,
    t1: &Translation,
    t2: &Translation,
    n0: i64,
) -> Result<bool> {
    let invariant = |t: &Translation| -> Result<bool> {
        if t.generator.schedule != f.schedule {
            return Err(Error::domain("translation and sampler live on different schedules"));
        }
        let table = f.table();
        let m = table.len() as i128;
        let shift = (n0 as i128 * t.generator.digits[f.level - 1] as i128).rem_euclid(m);
        Ok((0..m).all(|x| table[((x + shift) % m) as usize] == table[x as usize]))
    };
    Ok(invariant(t1)? && invariant(t2)?)
}

/// Smallest `q ≥ 1` with `values[k + q] = values[k]` cyclically.
pub fn minimal_period(values: &[f64]) -> usize {
    let p = values.len();
    (1..=p)
        .filter(|q| p.is_multiple_of(*q))
        .find(|&q| (0..p).all(|k| values[k] == values[(k + q) % p]))
        .unwrap_or(p)
}

/// The distinct translates of a periodic sequence (its hull at finite level).
pub fn finite_hull(f: &PeriodicSampler) -> Vec<PeriodicSampler> {
    let q = minimal_period(f.values());
    (0..q as i64).map(|m| f.cyclic_shift(m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(v: &[u64]) -> GroupSchedule {
        GroupSchedule::new(v.to_vec()).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(GroupSchedule::new(vec![]).is_err());
        assert!(GroupSchedule::new(vec![1, 2]).is_err());
        assert!(GroupSchedule::new(vec![2, 6, 9]).is_err());
        assert!(GroupSchedule::new(vec![4, 4]).is_err());
        assert_eq!(GroupSchedule::doubling(3).unwrap().indices(), &[2, 4, 8]);
        let s = sched(&[2, 6, 12]);
        assert_eq!(s.index(2).unwrap(), 6);
        assert!(s.index(0).is_err());
        assert_eq!(s.level_of(12), Some(3));
    }

    #[test]
    fn element_consistency() {
        let s = sched(&[2, 4, 8]);
        assert!(OdometerElement::new(s.clone(), vec![1, 3, 7]).is_ok());
        assert!(OdometerElement::new(s.clone(), vec![1, 2, 6]).is_err());
        assert!(OdometerElement::new(s.clone(), vec![0, 4, 4]).is_err());
        assert!(OdometerElement::new(s, vec![0, 0]).is_err());
    }

    #[test]
    fn add_one_odometer() {
        let s = sched(&[2, 4, 8]);
        let t = Translation::add_one(&s);
        let e = OdometerElement::identity(&s);
        assert_eq!(translate(&t, &e, 5).unwrap().digits(), &[1, 1, 5]);
        assert_eq!(translate(&t, &e, 0).unwrap(), e);
        let w = OdometerElement::new(s.clone(), vec![1, 3, 3]).unwrap();
        assert_eq!(translate(&t, &w, 8).unwrap(), w);
        assert_eq!(translate(&t, &w, -1).unwrap().digits(), &[0, 2, 2]);
        let other = Translation::add_one(&sched(&[2, 4]));
        assert!(translate(&other, &w, 1).is_err());
    }

    #[test]
    fn minimality_is_unit_digits() {
        let s = sched(&[3, 9, 27]);
        assert!(Translation::new(OdometerElement::from_integer(&s, 2)).is_ok());
        assert!(Translation::new(OdometerElement::from_integer(&s, 3)).is_err());
        // a minimal generator visits every level residue in n_k steps
        let t = Translation::new(OdometerElement::from_integer(&s, 5)).unwrap();
        let e = OdometerElement::identity(&s);
        for level in 1..=3 {
            let n = s.index(level).unwrap();
            let mut seen: Vec<u64> = (0..n as i64)
                .map(|k| translate(&t, &e, k).unwrap().digit(level).unwrap())
                .collect();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn orbit_of_identity_reads_the_table() {
        let s = sched(&[2, 4, 8]);
        let f = LevelSampler::new(s.clone(), 2, PeriodicSampler::new(vec![0.5, -1.0]).unwrap()).unwrap();
        let t = Translation::add_one(&s);
        let e = OdometerElement::identity(&s);
        let v = orbit_potential(&f, &t, &e, -2, 5).unwrap();
        assert_eq!(v, vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
        let te = translate(&t, &e, 1).unwrap();
        let shifted = orbit_potential(&f, &t, &te, -2, 4).unwrap();
        assert_eq!(shifted, v[1..].to_vec());
        assert!(LevelSampler::new(s, 1, PeriodicSampler::new(vec![0.0; 4]).unwrap()).is_err());
    }

    #[test]
    fn periodize_averages_cosets() {
        let s = sched(&[2, 4]);
        let ind = LevelSampler::new(s.clone(), 2, PeriodicSampler::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let p = periodize(&ind, 1).unwrap();
        assert_eq!(p.sampler().values(), &[0.5, 0.0]);
        assert_eq!(periodize(&p, 1).unwrap(), p);
        let periodic = LevelSampler::new(s.clone(), 2, PeriodicSampler::new(vec![3.0, -2.0]).unwrap()).unwrap();
        assert_eq!(periodize(&periodic, 1).unwrap().sampler().values(), &[3.0, -2.0]);
        assert!(periodize(&ind, 3).is_err());
    }

    #[test]
    fn independence_of_translation() {
        let s = sched(&[2, 4, 8]);
        let f = LevelSampler::new(s.clone(), 3, PeriodicSampler::new(vec![1.0, 2.0, 1.0, 2.0]).unwrap()).unwrap();
        let t1 = Translation::add_one(&s);
        let t2 = Translation::new(OdometerElement::from_integer(&s, 3)).unwrap();
        assert!(period_independence_check(&f, &t1, &t2, 2).unwrap());
        assert!(period_independence_check(&f, &t1, &t2, 0).unwrap());
        assert!(!period_independence_check(&f, &t1, &t2, 1).unwrap());
    }

    #[test]
    fn hull_size_is_minimal_period() {
        let f = PeriodicSampler::new(vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(minimal_period(f.values()), 2);
        assert_eq!(finite_hull(&f).len(), 2);
        let g = PeriodicSampler::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(finite_hull(&g).len(), 3);
    }

    #[test]
    fn json_document() {
        let s = sched(&[2, 4]);
        let f = LevelSampler::new(s, 2, PeriodicSampler::new(vec![0.0, 1.5]).unwrap()).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"schedule":[2,4],"level":2,"values":[0.0,1.5]}"#);
        assert_eq!(serde_json::from_str::<LevelSampler>(&json).unwrap(), f);
        assert!(serde_json::from_str::<LevelSampler>(r#"{"schedule":[2,4],"level":1,"values":[0,1,2,3]}"#).is_err());
        assert!(serde_json::from_str::<LevelSampler>(r#"{"schedule":[3,4],"level":1,"values":[0]}"#).is_err());
    }
}
