//! 2×2 unimodular matrix algebra for Schrödinger transfer matrices.
//!
//! A transfer step at energy `E` across a site with potential value `v` is
//! `[[E - v, -1], [1, 0]]`. Products of `n` steps starting at site `offset`
//! are accumulated by left multiplication, `S_{offset+n-1} ··· S_{offset}`.
//!
//! Long products are carried as [`ScaledMatrix`], a matrix together with a
//! binary exponent. Rescaling only ever multiplies by powers of two, so a
//! scaled product is bit-for-bit the plain product whenever the plain product
//! does not overflow.

use std::f64::consts::LN_2;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::periodic::PeriodicSampler;

/// Relative tolerance on `det M - 1`, measured against `max(1, |M|_F^2)`.
pub const DET_TOLERANCE: f64 = 1e-6;

/// Row-major 2×2 real matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl TransferMatrix {
    pub const IDENTITY: TransferMatrix = TransferMatrix {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        TransferMatrix { a, b, c, d }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    /// Squared Frobenius norm, `tr(MᵀM)`.
    pub fn frobenius_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    /// Inverse of a unimodular matrix, `[[d, -b], [-c, a]]`.
    pub fn unimodular_inverse(&self) -> Self {
        TransferMatrix::new(self.d, -self.b, -self.c, self.a)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    /// `step · self` for `step = [[x, -1], [1, 0]]`.
    #[inline]
    pub fn step_left(&self, x: f64) -> Self {
        TransferMatrix {
            a: x * self.a - self.c,
            b: x * self.b - self.d,
            c: self.a,
            d: self.b,
        }
    }

    /// Largest singular value.
    ///
    /// From `s = tr(MᵀM)` and `det M`: `μ₁² = (s + sqrt(s² - 4 det²)) / 2`.
    pub fn largest_singular_value(&self) -> f64 {
        let s = self.frobenius_sq();
        if s == 0.0 {
            return 0.0;
        }
        let det = self.det();
        let disc = (1.0 - 4.0 * (det / s) * (det / s)).max(0.0);
        (0.5 * s * (1.0 + disc.sqrt())).sqrt()
    }

    /// Operator norm (equal to the largest singular value).
    pub fn norm(&self) -> f64 {
        self.largest_singular_value()
    }

    pub fn det_defect(&self) -> f64 {
        (self.det() - 1.0).abs()
    }

    fn check_unimodular(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Invariant(format!("non-finite matrix {self:?}")));
        }
        let allowed = DET_TOLERANCE * self.frobenius_sq().max(1.0);
        if self.det_defect() > allowed {
            return Err(Error::Invariant(format!(
                "det = {} is not within {allowed:e} of 1",
                self.det()
            )));
        }
        Ok(())
    }

    fn scaled_by_pow2(&self, k: i32) -> Self {
        TransferMatrix {
            a: ldexp(self.a, k),
            b: ldexp(self.b, k),
            c: ldexp(self.c, k),
            d: ldexp(self.d, k),
        }
    }
}

impl Mul for TransferMatrix {
    type Output = TransferMatrix;

    fn mul(self, rhs: TransferMatrix) -> TransferMatrix {
        TransferMatrix {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }
}

fn ldexp(x: f64, k: i32) -> f64 {
    // Split to avoid overflowing the power itself for |k| > 1023.
    let half = k / 2;
    x * 2f64.powi(half) * 2f64.powi(k - half)
}

/// Matrix carried as `2^exp2 · matrix`, used for products that would overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledMatrix {
    pub matrix: TransferMatrix,
    pub exp2: i64,
}

pub(crate) const RESCALE_HIGH: f64 = 1e150;
const RESCALE_LOW: f64 = 1e-150;

impl ScaledMatrix {
    pub const IDENTITY: ScaledMatrix = ScaledMatrix {
        matrix: TransferMatrix::IDENTITY,
        exp2: 0,
    };

    pub fn from_matrix(matrix: TransferMatrix) -> Self {
        ScaledMatrix { matrix, exp2: 0 }.rescaled()
    }

    /// Natural log of the scale factor.
    pub fn log_scale(&self) -> f64 {
        self.exp2 as f64 * LN_2
    }

    #[inline]
    pub(crate) fn rescaled(mut self) -> Self {
        let m = self.matrix.max_abs();
        if (m > RESCALE_HIGH || (m < RESCALE_LOW && m > 0.0)) && m.is_finite() {
            let k = m.log2().round() as i32;
            self.matrix = self.matrix.scaled_by_pow2(-k);
            self.exp2 += k as i64;
        }
        self
    }

    #[inline]
    pub fn step_left(self, x: f64) -> Self {
        let next = ScaledMatrix {
            matrix: self.matrix.step_left(x),
            exp2: self.exp2,
        };
        if next.matrix.a.abs() > RESCALE_HIGH || next.matrix.b.abs() > RESCALE_HIGH {
            next.rescaled()
        } else {
            next
        }
    }

    /// `self · rhs`.
    pub fn mul(&self, rhs: &ScaledMatrix) -> ScaledMatrix {
        ScaledMatrix {
            matrix: self.matrix * rhs.matrix,
            exp2: self.exp2 + rhs.exp2,
        }
        .rescaled()
    }

    /// `self^n` by repeated squaring.
    pub fn pow(&self, mut n: u64) -> ScaledMatrix {
        let mut result = ScaledMatrix::IDENTITY;
        let mut base = *self;
        while n > 0 {
            if n & 1 == 1 {
                result = base.mul(&result);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// The unscaled matrix; entries overflow to infinity when the scale is huge.
    pub fn to_matrix(&self) -> TransferMatrix {
        let k = self.exp2.clamp(-4000, 4000) as i32;
        self.matrix.scaled_by_pow2(k)
    }

    /// Trace as a plain float (saturates to ±∞).
    pub fn trace(&self) -> f64 {
        let t = self.matrix.trace();
        if t == 0.0 {
            return 0.0;
        }
        let log = t.abs().ln() + self.log_scale();
        if log > 709.0 {
            t.signum() * f64::INFINITY
        } else {
            t * (self.log_scale()).exp()
        }
    }

    /// Natural log of the operator norm.
    pub fn log_norm(&self) -> f64 {
        self.matrix.largest_singular_value().ln() + self.log_scale()
    }

    /// Natural log of the spectral radius, assuming the represented matrix is unimodular.
    pub fn log_spectral_radius(&self) -> f64 {
        let t = self.matrix.trace().abs();
        if t == 0.0 {
            return 0.0;
        }
        let log_t = t.ln() + self.log_scale();
        if log_t <= std::f64::consts::LN_2 {
            // |tr| <= 2
            return 0.0;
        }
        // ρ = |tr|/2 · (1 + sqrt(1 - 4/tr²))
        let inv_sq = (-2.0 * log_t).exp();
        let root = (1.0 - 4.0 * inv_sq).max(0.0).sqrt();
        log_t - LN_2 + (1.0 + root).ln()
    }

    /// `|det - 1|` of the represented matrix.
    pub fn det_defect(&self) -> f64 {
        let det = self.matrix.det();
        if det <= 0.0 {
            return f64::INFINITY;
        }
        let log_det = det.ln() + 2.0 * self.log_scale();
        log_det.exp_m1().abs()
    }
}

/// One transfer step `[[E - v, -1], [1, 0]]`.
pub fn step_matrix(energy: f64, value: f64) -> Result<TransferMatrix> {
    ensure_finite("energy", energy)?;
    ensure_finite("potential value", value)?;
    Ok(TransferMatrix::new(energy - value, -1.0, 1.0, 0.0))
}

/// `S_{offset+n-1} ··· S_{offset}` where `S_k` uses `f` at `k mod p`.
///
/// Products beyond about `10^4` steps can overflow; use
/// [`transfer_product_scaled`] for those.
pub fn transfer_product(
    energy: f64,
    f: &PeriodicSampler,
    n: u64,
    offset: i64,
) -> Result<TransferMatrix> {
    let scaled = transfer_product_scaled(energy, f, n, offset)?;
    let m = scaled.to_matrix();
    if !m.is_finite() {
        return Err(Error::Invariant(format!(
            "transfer product over {n} steps overflows; use the scaled product"
        )));
    }
    Ok(m)
}

/// Same as [`transfer_product`] but carrying the scale separately.
pub fn transfer_product_scaled(
    energy: f64,
    f: &PeriodicSampler,
    n: u64,
    offset: i64,
) -> Result<ScaledMatrix> {
    ensure_finite("energy", energy)?;
    if n == 0 {
        return Err(Error::domain("transfer product needs n >= 1"));
    }
    Ok(f.transfer_scaled(energy, offset, n))
}

/// Spectral radius of a unimodular matrix.
pub fn spectral_radius(m: &TransferMatrix) -> Result<f64> {
    m.check_unimodular()?;
    let t = m.trace().abs();
    if t <= 2.0 {
        return Ok(1.0);
    }
    Ok(0.5 * t * (1.0 + (1.0 - 4.0 / (t * t)).sqrt()))
}

/// Constants `m₁ = 1/(16 μ₁²)` and `m₂ = 16 μ₁²` bounding how a unimodular
/// matrix distorts the angle between two vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleBoundCertificate {
    pub mu1: f64,
    pub m_lower: f64,
    pub m_upper: f64,
}

impl AngleBoundCertificate {
    /// Whether `Δθ̃` lies in `[m_lower·Δθ, m_upper·Δθ]`, with a small relative slack for rounding.
    pub fn admits(&self, before: f64, after: f64) -> bool {
        let slack = 1e-12;
        after >= self.m_lower * before * (1.0 - slack) && after <= self.m_upper * before * (1.0 + slack)
    }
}

pub fn angle_distortion_bounds(m: &TransferMatrix) -> Result<AngleBoundCertificate> {
    m.check_unimodular()?;
    let mu1 = m.largest_singular_value().max(1.0);
    let mu_sq = mu1 * mu1;
    Ok(AngleBoundCertificate {
        mu1,
        m_lower: 1.0 / (16.0 * mu_sq),
        m_upper: 16.0 * mu_sq,
    })
}

/// Unoriented angle between two nonzero vectors, in `[0, π]`.
pub fn vector_angle(u: [f64; 2], v: [f64; 2]) -> f64 {
    let cross = u[0] * v[1] - u[1] * v[0];
    let dot = u[0] * v[0] + u[1] * v[1];
    cross.abs().atan2(dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_product(ms: &[TransferMatrix]) -> TransferMatrix {
        // ms[0] is applied first
        let mut acc = [[1.0, 0.0], [0.0, 1.0]];
        for m in ms {
            let r = [[m.a, m.b], [m.c, m.d]];
            let mut out = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        out[i][j] += r[i][k] * acc[k][j];
                    }
                }
            }
            acc = out;
        }
        TransferMatrix::new(acc[0][0], acc[0][1], acc[1][0], acc[1][1])
    }

    #[test]
    fn step_matrix_substitution() {
        assert_eq!(step_matrix(0.0, 0.0).unwrap(), TransferMatrix::new(0.0, -1.0, 1.0, 0.0));
        assert_eq!(step_matrix(3.0, 1.0).unwrap(), TransferMatrix::new(2.0, -1.0, 1.0, 0.0));
        assert!(step_matrix(f64::NAN, 0.0).is_err());
        assert!(step_matrix(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn step_matrix_is_unimodular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let e = rng.gen_range(-10.0..10.0);
            let v = rng.gen_range(-10.0..10.0);
            assert_eq!(step_matrix(e, v).unwrap().det(), 1.0);
        }
    }

    #[test]
    fn products_match_naive_multiplication() {
        let zero = PeriodicSampler::constant(1, 0.0);
        let two = transfer_product(0.0, &zero, 2, 0).unwrap();
        assert_eq!(two, TransferMatrix::new(-1.0, 0.0, 0.0, -1.0));

        let f = PeriodicSampler::new(vec![0.0, 1.0]).unwrap();
        let prod = transfer_product(0.0, &f, 2, 0).unwrap();
        let expected = naive_product(&[step_matrix(0.0, 0.0).unwrap(), step_matrix(0.0, 1.0).unwrap()]);
        assert_eq!(expected, TransferMatrix::new(-1.0, 1.0, 0.0, -1.0));
        assert_eq!(prod, expected);

        let g = PeriodicSampler::new(vec![0.3, -1.2, 2.5]).unwrap();
        for k in -4..5 {
            let single = transfer_product(1.7, &g, 1, k).unwrap();
            assert_eq!(single, step_matrix(1.7, g.at(k)).unwrap());
        }
        assert!(transfer_product(0.0, &g, 0, 0).is_err());
    }

    #[test]
    fn cocycle_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = rng.gen_range(1..9);
            let vals: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let f = PeriodicSampler::new(vals).unwrap();
            let e = rng.gen_range(-5.0..5.0);
            let m = rng.gen_range(1..30u64);
            let n = rng.gen_range(1..30u64);
            let whole = transfer_product(e, &f, m + n, 0).unwrap();
            let split = transfer_product(e, &f, m, n as i64).unwrap() * transfer_product(e, &f, n, 0).unwrap();
            let scale = whole.max_abs().max(1.0);
            for (x, y) in [(whole.a, split.a), (whole.b, split.b), (whole.c, split.c), (whole.d, split.d)] {
                assert!((x - y).abs() <= 1e-9 * scale, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn determinant_drift_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = PeriodicSampler::new(vals).unwrap();
        // elliptic energy: entries stay bounded so det is meaningful in plain arithmetic
        let spectrum = crate::periodic::band_spectrum(&f, 1e-10).unwrap();
        let band = spectrum.bands[3];
        let e = 0.5 * (band.left + band.right);
        let n = 100_000u64;
        let m = transfer_product_scaled(e, &f, n, 0).unwrap();
        assert!(m.det_defect() <= 1e-9 * n as f64);
    }

    #[test]
    fn scaled_product_matches_plain_until_overflow() {
        let f = PeriodicSampler::new(vec![0.4, -0.7, 1.1]).unwrap();
        let plain = transfer_product(5.0, &f, 60, 0).unwrap();
        let scaled = transfer_product_scaled(5.0, &f, 60, 0).unwrap();
        assert_eq!(scaled.to_matrix(), plain);
        // far past overflow the log norm still grows linearly
        let long = transfer_product_scaled(5.0, &f, 3000, 0).unwrap();
        let rate = long.log_norm() / 3000.0;
        let per_period = crate::periodic::lyapunov_periodic(5.0, &f).unwrap();
        assert!((rate - per_period).abs() < 1e-2);
        assert!(transfer_product(5.0, &f, 3000, 0).is_err());
    }

    #[test]
    fn pow_matches_repeated_product() {
        let m = ScaledMatrix::from_matrix(TransferMatrix::new(1.3, -0.4, 0.9, 0.4923076923076923));
        let mut acc = ScaledMatrix::IDENTITY;
        for _ in 0..13 {
            acc = m.mul(&acc);
        }
        let p = m.pow(13).to_matrix();
        let q = acc.to_matrix();
        assert_relative_eq!(p.a, q.a, max_relative = 1e-12);
        assert_relative_eq!(p.d, q.d, max_relative = 1e-12);
        assert_eq!(m.pow(0), ScaledMatrix::IDENTITY);
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&TransferMatrix::IDENTITY).unwrap(), 1.0);
        assert_relative_eq!(
            spectral_radius(&TransferMatrix::new(2.0, 0.0, 0.0, 0.5)).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        assert_eq!(spectral_radius(&TransferMatrix::new(0.0, -1.0, 1.0, 0.0)).unwrap(), 1.0);
        assert!(spectral_radius(&TransferMatrix::new(2.0, 0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn spectral_radius_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let e = rng.gen_range(-6.0..6.0);
            let f = PeriodicSampler::new((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let m = transfer_product(e, &f, 4, 0).unwrap();
            let rho = spectral_radius(&m).unwrap();
            assert!(rho >= 1.0);
            assert_eq!(rho == 1.0, m.trace().abs() <= 2.0);
            let scaled = ScaledMatrix::from_matrix(m);
            assert!((scaled.log_spectral_radius() - rho.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_values_of_diagonal() {
        let cert = angle_distortion_bounds(&TransferMatrix::IDENTITY).unwrap();
        assert_eq!(cert.mu1, 1.0);
        assert_eq!((cert.m_lower, cert.m_upper), (1.0 / 16.0, 16.0));

        let cert = angle_distortion_bounds(&TransferMatrix::new(3.0, 0.0, 0.0, 1.0 / 3.0)).unwrap();
        assert_relative_eq!(cert.mu1, 3.0, max_relative = 1e-14);
        assert_relative_eq!(cert.m_lower, 1.0 / 144.0, max_relative = 1e-13);
        assert_relative_eq!(cert.m_upper, 144.0, max_relative = 1e-13);
        assert_relative_eq!(cert.m_lower * cert.m_upper, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn vector_angles() {
        assert_eq!(vector_angle([1.0, 0.0], [0.0, 2.0]), std::f64::consts::FRAC_PI_2);
        assert_eq!(vector_angle([1.0, 0.0], [-3.0, 0.0]), std::f64::consts::PI);
        assert_relative_eq!(vector_angle([1.0, 1.0], [1.0, -1.0]), std::f64::consts::FRAC_PI_2);
    }
}
