//! Capacity, dispersion and the normal approximation of the maximum coding
//! rate over the complex AWGN channel at finite blocklength.
//!
//! All rates are in bits per complex-valued channel use.

use std::f64::consts::{FRAC_2_SQRT_PI, LOG2_E, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// A signal-to-noise ratio, kept both in linear scale and in decibels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    gamma: f64,
    snr_db: f64,
}

impl SnrPoint {
    pub fn from_db(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::domain(format!(
                "SNR must be finite, got {snr_db} dB"
            )));
        }
        Ok(Self {
            gamma: db_to_linear(snr_db),
            snr_db,
        })
    }

    pub fn from_linear(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::domain(format!(
                "linear SNR must be positive, got {gamma}"
            )));
        }
        Ok(Self {
            gamma,
            snr_db: linear_to_db(gamma),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn db(&self) -> f64 {
        self.snr_db
    }

    /// Complex noise variance for unit signal power.
    pub fn n0(&self) -> f64 {
        1.0 / self.gamma
    }
}

pub fn db_to_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

pub fn linear_to_db(gamma: f64) -> f64 {
    10.0 * gamma.log10()
}

/// Blocklength and target frame error probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FblParams {
    n: u64,
    epsilon: f64,
}

impl FblParams {
    pub fn new(n: u64, epsilon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("blocklength must be at least 1"));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::domain(format!(
                "target frame error probability must lie in (0, 0.5), got {epsilon}"
            )));
        }
        Ok(Self { n, epsilon })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Whether the `log2(n) / (2n)` correction is added to the normal approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogTerm {
    #[default]
    UpperBound,
    Drop,
}

/// `log2(1 + gamma)`.
pub fn capacity(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || gamma.is_nan() {
        return Err(Error::domain(format!(
            "capacity needs gamma > 0, got {gamma}"
        )));
    }
    Ok((1.0 + gamma).log2())
}

/// Channel dispersion `gamma (gamma + 2) / (gamma + 1)^2 * log2(e)^2`, in bits squared.
pub fn dispersion(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!(
            "dispersion needs gamma >= 0, got {gamma}"
        )));
    }
    if gamma.is_infinite() {
        return Ok(LOG2_E * LOG2_E);
    }
    let g1 = gamma + 1.0;
    Ok(gamma * (gamma + 2.0) / (g1 * g1) * LOG2_E * LOG2_E)
}

/// Complementary error function.
///
/// Maclaurin series of `erf` for `|x| < 2`, Lentz-evaluated continued fraction
/// beyond that. Relative accuracy is close to machine precision on the
/// whole real line.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * sum_k (-1)^k x^(2k+1) / (k! (2k+1))
    let x2 = x * x;
    let mut power = x;
    let mut sum = x;
    for k in 1..200 {
        power *= -x2 / k as f64;
        let term = power / (2 * k + 1) as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    if x > 27.3 {
        return 0.0;
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() * FRAC_1_SQRT_PI / f
}

/// Standard normal upper tail `Q(x) = erfc(x / sqrt(2)) / 2`.
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of [`q_func`] on `(0, 1)`.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("q_inv needs p in (0, 1), got {p}")));
    }
    if p > 0.5 {
        return Ok(-q_inv_upper(1.0 - p));
    }
    Ok(q_inv_upper(p))
}

/// `p` in `(0, 0.5]`.
fn q_inv_upper(p: f64) -> f64 {
    // Rational approximation with |error| < 4.5e-4 (Hastings form).
    let t = (-2.0 * p.ln()).sqrt();
    let mut x = t
        - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
            / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    for _ in 0..2 {
        x += (q_func(x) - p) / normal_pdf(x);
    }
    x
}

/// Normal approximation of the maximum rate at blocklength `n` and target
/// error probability `epsilon`:
/// `C - sqrt(V/n) Q^-1(eps) + log2(n)/(2n)`.
///
/// The result can go negative at very low SNR.
pub fn max_rate_fbl(params: FblParams, gamma: f64, log_term: LogTerm) -> Result<f64> {
    let c = capacity(gamma)?;
    let v = dispersion(gamma)?;
    let n = params.n as f64;
    let backoff = (v / n).sqrt() * q_inv(params.epsilon)?;
    let correction = match log_term {
        LogTerm::UpperBound => n.log2() / (2.0 * n),
        LogTerm::Drop => 0.0,
    };
    Ok(c - backoff + correction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_spot_values() {
        assert_eq!(capacity(1.0).unwrap(), 1.0);
        assert_eq!(capacity(3.0).unwrap(), 2.0);
        assert!((capacity(10.0).unwrap() - 3.459_431_618_637_297).abs() < 1e-12);
        assert!(capacity(0.0).is_err());
        assert!(capacity(-1.0).is_err());
        assert!(capacity(f64::NAN).is_err());
    }

    #[test]
    fn dispersion_spot_values() {
        assert_eq!(dispersion(0.0).unwrap(), 0.0);
        assert!((dispersion(1e12).unwrap() - LOG2_E * LOG2_E).abs() < 1e-6);
        assert!((dispersion(1.0).unwrap() - 1.561_026_735_754_205_8).abs() < 1e-12);
        assert!(dispersion(-0.1).is_err());
    }

    #[test]
    fn erfc_reference_values() {
        // Reference values to 16 digits.
        let cases = [
            (0.0, 1.0),
            (0.5, 0.479_500_122_186_953_5),
            (1.0, 0.157_299_207_050_285_13),
            (2.0, 0.004_677_734_981_047_266),
            (3.0, 2.209_049_699_858_544e-5),
            (5.0, 1.537_459_794_428_035e-12),
            (-1.0, 1.842_700_792_949_715),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!(
                ((got - want) / want).abs() < 1e-13,
                "erfc({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn q_inv_spot_values() {
        assert!(q_inv(0.5).unwrap().abs() < 1e-15);
        assert!((q_inv(0.01).unwrap() - 2.326_347_874_040_841).abs() < 1e-9);
        assert!((q_inv(q_func(1.5)).unwrap() - 1.5).abs() < 1e-9);
        assert!((q_inv(0.99).unwrap() + 2.326_347_874_040_841).abs() < 1e-9);
        for p in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(q_inv(p).is_err());
        }
    }

    #[test]
    fn max_rate_spot_values() {
        let gamma = db_to_linear(10.0);
        let p = FblParams::new(128, 1e-2).unwrap();
        let r = max_rate_fbl(p, gamma, LogTerm::UpperBound).unwrap();
        assert!((r - 3.191).abs() < 1e-3, "{r}");

        let half = FblParams {
            n: 128,
            epsilon: 0.5,
        };
        let r = max_rate_fbl(half, gamma, LogTerm::UpperBound).unwrap();
        assert!((r - (capacity(gamma).unwrap() + 7.0 / 256.0)).abs() < 1e-15);

        let huge = FblParams::new(1_000_000_000_000, 1e-3).unwrap();
        let r = max_rate_fbl(huge, gamma, LogTerm::UpperBound).unwrap();
        assert!((r - capacity(gamma).unwrap()).abs() < 1e-4);

        let dropped = max_rate_fbl(p, gamma, LogTerm::Drop).unwrap();
        let kept = max_rate_fbl(p, gamma, LogTerm::UpperBound).unwrap();
        assert!((kept - dropped - 7.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(FblParams::new(0, 0.1).is_err());
        assert!(FblParams::new(10, 0.5).is_err());
        assert!(FblParams::new(10, 0.0).is_err());
        assert!(FblParams::new(10, 0.49).is_ok());
    }

    #[test]
    fn snr_roundtrip() {
        for db in [-10.0, -3.3, 0.0, 7.25, 20.0, 40.0] {
            let s = SnrPoint::from_db(db).unwrap();
            let back = SnrPoint::from_linear(s.gamma()).unwrap();
            assert!((back.db() - db).abs() < 1e-12);
        }
        assert!(SnrPoint::from_linear(0.0).is_err());
        assert!(SnrPoint::from_db(f64::INFINITY).is_err());
    }
}
