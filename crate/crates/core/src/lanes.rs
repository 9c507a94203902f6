//! Transfer products for several energies at once.
//!
//! A single product is a chain of dependent multiply-subtracts and runs at the
//! floating-point latency; carrying `LANES` independent energies side by side
//! fills the vector units instead. Every lane performs exactly the operations
//! of the scalar path, so results agree with it up to exact power-of-two
//! rescaling.

use std::sync::OnceLock;

use crate::sl2::{ScaledMatrix, TransferMatrix, RESCALE_HIGH};

pub(crate) const LANES: usize = 16;

const RESCALE_LOW: f64 = 1e-150;

/// `LANES` scaled matrices stored component-wise.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lanes {
    a: [f64; LANES],
    b: [f64; LANES],
    c: [f64; LANES],
    d: [f64; LANES],
    exp2: [i64; LANES],
}

impl Lanes {
    pub(crate) const IDENTITY: Lanes = Lanes {
        a: [1.0; LANES],
        b: [0.0; LANES],
        c: [0.0; LANES],
        d: [1.0; LANES],
        exp2: [0; LANES],
    };

    pub(crate) fn get(&self, l: usize) -> ScaledMatrix {
        ScaledMatrix {
            matrix: TransferMatrix::new(self.a[l], self.b[l], self.c[l], self.d[l]),
            exp2: self.exp2[l],
        }
    }

    /// Lanes from up to `LANES` matrices; missing lanes hold the identity.
    pub(crate) fn from_slice(ms: &[ScaledMatrix]) -> Lanes {
        let mut out = Lanes::IDENTITY;
        for (l, &m) in ms.iter().enumerate() {
            out.set(l, m);
        }
        out
    }

    fn set(&mut self, l: usize, m: ScaledMatrix) {
        self.a[l] = m.matrix.a;
        self.b[l] = m.matrix.b;
        self.c[l] = m.matrix.c;
        self.d[l] = m.matrix.d;
        self.exp2[l] = m.exp2;
    }

    #[inline(always)]
    fn renormalize(&mut self, low_too: bool) {
        let size: [f64; LANES] =
            std::array::from_fn(|l| self.a[l].abs().max(self.b[l].abs()).max(self.c[l].abs()).max(self.d[l].abs()));
        // an integer count vectorizes where a float max/min reduction does not
        let out_of_range: u32 = size
            .iter()
            .map(|&x| u32::from(x > RESCALE_HIGH) | u32::from(low_too && x < RESCALE_LOW))
            .sum();
        if out_of_range == 0 {
            return;
        }
        for l in 0..LANES {
            let m = size[l];
            let rescale = (m > RESCALE_HIGH || (low_too && m < RESCALE_LOW)) && m > 0.0 && m.is_finite();
            // binary exponent of m; scaling by an exact power of two loses nothing
            let e = if rescale { ((m.to_bits() >> 52) & 0x7ff) as i64 - 1023 } else { 0 };
            let factor = f64::from_bits(((1023 - e) as u64) << 52);
            self.a[l] *= factor;
            self.b[l] *= factor;
            self.c[l] *= factor;
            self.d[l] *= factor;
            self.exp2[l] += e;
        }
    }

    /// `self · rhs` lane by lane.
    #[inline(always)]
    fn mul(&self, rhs: &Lanes) -> Lanes {
        let mut out = Lanes {
            a: std::array::from_fn(|l| self.a[l] * rhs.a[l] + self.b[l] * rhs.c[l]),
            b: std::array::from_fn(|l| self.a[l] * rhs.b[l] + self.b[l] * rhs.d[l]),
            c: std::array::from_fn(|l| self.c[l] * rhs.a[l] + self.d[l] * rhs.c[l]),
            d: std::array::from_fn(|l| self.c[l] * rhs.b[l] + self.d[l] * rhs.d[l]),
            exp2: std::array::from_fn(|l| self.exp2[l] + rhs.exp2[l]),
        };
        out.renormalize(true);
        out
    }

    #[inline(always)]
    fn pow(&self, mut n: u64) -> Lanes {
        let mut result = Lanes::IDENTITY;
        let mut base = *self;
        let mut first = true;
        while n > 0 {
            if n & 1 == 1 {
                result = if first { base } else { base.mul(&result) };
                first = false;
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Level {
    Generic,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                return Level::Avx512;
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                return Level::Avx2;
            }
        }
        Level::Generic
    })
}

/// One period of `values` (scaled by `coupling`) at up to `LANES` energies.
pub(crate) fn period_lanes(values: &[f64], norm: f64, energies: &[f64], coupling: f64) -> Lanes {
    debug_assert!(!energies.is_empty() && energies.len() <= LANES);
    let mut e = [energies[energies.len() - 1]; LANES];
    e[..energies.len()].copy_from_slice(energies);
    match level() {
        // SAFETY: the features were detected at runtime.
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { steps_avx512(values, norm, &e, coupling) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx2 => unsafe { steps_avx2(values, norm, &e, coupling) },
        Level::Generic => steps_generic(values, norm, &e, coupling),
    }
}

/// Ordered product `runs[k].0^{runs[k].1} ··· runs[0].0^{runs[0].1}` lane by lane.
pub(crate) fn fold_lanes(tables: &[Lanes], runs: &[(usize, u64)]) -> Lanes {
    match level() {
        // SAFETY: the features were detected at runtime.
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { fold_avx512(tables, runs) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx2 => unsafe { fold_avx2(tables, runs) },
        Level::Generic => fold_generic(tables, runs),
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn steps_avx512(values: &[f64], norm: f64, e: &[f64; LANES], coupling: f64) -> Lanes {
    steps_generic(values, norm, e, coupling)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn steps_avx2(values: &[f64], norm: f64, e: &[f64; LANES], coupling: f64) -> Lanes {
    steps_generic(values, norm, e, coupling)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn fold_avx512(tables: &[Lanes], runs: &[(usize, u64)]) -> Lanes {
    fold_generic(tables, runs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fold_avx2(tables: &[Lanes], runs: &[(usize, u64)]) -> Lanes {
    fold_generic(tables, runs)
}

#[inline(always)]
fn steps_generic(values: &[f64], norm: f64, e: &[f64; LANES], coupling: f64) -> Lanes {
    let xmax = e.iter().fold(0.0f64, |m, x| m.max(x.abs())) + coupling.abs() * norm;
    // entries grow by at most a factor |x| + 1 per step; rescale well before overflow
    let interval = ((100.0 / (xmax + 2.0).log10()).floor() as usize).max(1);
    let mut m = Lanes::IDENTITY;
    for chunk in values.chunks(interval) {
        let (mut a, mut b, mut c, mut d) = (m.a, m.b, m.c, m.d);
        for &v in chunk {
            let shift = coupling * v;
            let x: [f64; LANES] = std::array::from_fn(|l| e[l] - shift);
            let na: [f64; LANES] = std::array::from_fn(|l| x[l] * a[l] - c[l]);
            let nb: [f64; LANES] = std::array::from_fn(|l| x[l] * b[l] - d[l]);
            (c, d, a, b) = (a, b, na, nb);
        }
        (m.a, m.b, m.c, m.d) = (a, b, c, d);
        m.renormalize(false);
    }
    m
}

#[inline(always)]
fn fold_generic(tables: &[Lanes], runs: &[(usize, u64)]) -> Lanes {
    let mut acc = Lanes::IDENTITY;
    for &(key, blocks) in runs {
        let t = &tables[key];
        let run = if blocks == 1 { *t } else { t.pow(blocks) };
        acc = run.mul(&acc);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanes_match_scalar_products() {
        let values: Vec<f64> = (0..300).map(|k| (k as f64 * 0.7).sin() * 3.0).collect();
        let energies: Vec<f64> = (0..11).map(|k| -6.0 + 1.1 * k as f64).collect();
        let lanes = period_lanes(&values, 3.0, &energies, 2.0);
        for (l, &e) in energies.iter().enumerate() {
            let serial = values
                .iter()
                .fold(ScaledMatrix::IDENTITY, |acc, &v| acc.step_left(e - 2.0 * v));
            let (got, want) = (lanes.get(l).trace(), serial.trace());
            assert!((got - want).abs() <= 1e-13 * want.abs(), "lane {l}: {got} vs {want}");
        }
    }

    #[test]
    fn fold_matches_scalar_products() {
        let m1 = ScaledMatrix::from_matrix(TransferMatrix::new(3.0, -1.0, 1.0, 0.0));
        let m2 = ScaledMatrix::from_matrix(TransferMatrix::new(0.5, -1.0, 1.0, 0.0));
        let mut t1 = Lanes::IDENTITY;
        let mut t2 = Lanes::IDENTITY;
        for l in 0..LANES {
            t1.set(l, m1);
            t2.set(l, m2);
        }
        let runs = [(0, 5), (1, 1), (0, 700), (1, 3)];
        let got = fold_lanes(&[t1, t2], &runs);
        let want = runs.iter().fold(ScaledMatrix::IDENTITY, |acc, &(k, n)| {
            let m = if k == 0 { m1 } else { m2 };
            m.pow(n).mul(&acc)
        });
        for l in 0..LANES {
            let g = got.get(l);
            assert!((g.log_spectral_radius() - want.log_spectral_radius()).abs() < 1e-12);
        }
    }
}
