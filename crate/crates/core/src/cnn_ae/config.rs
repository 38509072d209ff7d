use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coding rate `num / den` kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CodeRate {
    num: u32,
    den: u32,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl CodeRate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num == 0 {
            return Err(Error::config(format!("invalid code rate {num}/{den}")));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `coded_bits * self` when that is a whole number.
    pub fn info_bits(&self, coded_bits: usize) -> Option<usize> {
        let prod = coded_bits as u64 * self.num as u64;
        (prod % self.den as u64 == 0).then(|| (prod / self.den as u64) as usize)
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(format!(
                "cannot parse code rate {s:?}; expected e.g. \"1/2\""
            ))
        };
        match s.trim().split_once('/') {
            Some((a, b)) => Self::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => Self::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl TryFrom<String> for CodeRate {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CodeRate> for String {
    fn from(r: CodeRate) -> String {
        r.to_string()
    }
}

/// Architecture and rate bookkeeping of the autoencoder.
///
/// `K` message bits become `N = n * k_mod` coded values, split as
/// `K = K' * L` and `N = N' * L` with `L = gcd(K, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeConfig {
    /// Blocklength in complex channel uses.
    pub n: usize,
    /// Message bits `K`.
    pub k: usize,
    /// Coded values `N`.
    pub n_coded: usize,
    pub k_mod: usize,
    pub l: usize,
    pub k_sub: usize,
    pub n_sub: usize,
    pub m1: usize,
    pub m2: usize,
    pub kernel: usize,
    /// `inf` trains over a noiseless channel.
    #[serde(with = "snr_db_serde")]
    pub train_snr_db: f64,
    pub seed: u64,
}

/// Finite values as numbers, infinity as the string `"inf"`.
mod snr_db_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("invalid SNR {t:?}"))),
        }
    }
}

pub const DEFAULT_KERNEL: usize = 5;

/// Builds the configuration for overall rate `rate = rcod * k_mod` bits per
/// complex channel use at blocklength `n`.
pub fn derive_config(
    n: usize,
    rate: f64,
    rcod: CodeRate,
    k_mod: usize,
    m1: usize,
    m2: usize,
    kernel: usize,
) -> Result<AeConfig> {
    if (rcod.value() * k_mod as f64 - rate).abs() > 1e-9 {
        return Err(Error::config(format!(
            "code rate {rcod} times k_mod {k_mod} is not the target rate {rate}"
        )));
    }
    if n == 0 || k_mod == 0 {
        return Err(Error::config("blocklength and k_mod must be positive"));
    }
    let n_coded = n * k_mod;
    let k = rcod.info_bits(n_coded).ok_or_else(|| {
        Error::config(format!(
            "{n_coded} coded bits at rate {rcod} is not a whole number of message bits"
        ))
    })?;
    let l = gcd(k as u64, n_coded as u64) as usize;
    let cfg = AeConfig {
        n,
        k,
        n_coded,
        k_mod,
        l,
        k_sub: k / l,
        n_sub: n_coded / l,
        m1,
        m2,
        kernel,
        train_snr_db: 10.0,
        seed: 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl AeConfig {
    pub fn with_train_snr(mut self, snr_db: f64) -> Self {
        self.train_snr_db = snr_db;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Bits per complex channel use.
    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn code_rate(&self) -> CodeRate {
        CodeRate::new(self.k as u32, self.n_coded as u32).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n > 0
            && self.k > 0
            && self.k_mod > 0
            && self.l > 0
            && self.n_coded == self.n * self.k_mod
            && self.k == self.k_sub * self.l
            && self.n_coded == self.n_sub * self.l
            && gcd(self.k as u64, self.n_coded as u64) as usize == self.l;
        if !ok {
            return Err(Error::config(format!(
                "inconsistent rate bookkeeping: {self:?}"
            )));
        }
        if self.m1 == 0 || self.m2 == 0 || self.kernel == 0 {
            return Err(Error::config(
                "filter counts and kernel width must be at least 1",
            ));
        }
        if self.train_snr_db.is_nan() {
            return Err(Error::config("training SNR is NaN"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_two_sixteen_qam_split() {
        let c = derive_config(128, 2.0, CodeRate::new(1, 2).unwrap(), 4, 100, 20, 5).unwrap();
        assert_eq!(
            (c.k, c.n_coded, c.l, c.k_sub, c.n_sub),
            (256, 512, 256, 1, 2)
        );
        assert_eq!(c.rate(), 2.0);
    }

    #[test]
    fn rate_one_qpsk_split() {
        let c = derive_config(128, 1.0, CodeRate::new(1, 2).unwrap(), 2, 50, 20, 5).unwrap();
        assert_eq!(
            (c.k, c.n_coded, c.l, c.k_sub, c.n_sub),
            (128, 256, 128, 1, 2)
        );
    }

    #[test]
    fn odd_split() {
        let c = derive_config(128, 2.0, CodeRate::new(2, 3).unwrap(), 3, 8, 8, 3).unwrap();
        // K = 256, N = 384, L = 128
        assert_eq!(
            (c.k, c.n_coded, c.l, c.k_sub, c.n_sub),
            (256, 384, 128, 2, 3)
        );
        assert_eq!(c.code_rate(), CodeRate::new(2, 3).unwrap());
    }

    #[test]
    fn rejects_inconsistent_rate() {
        assert!(derive_config(128, 1.5, CodeRate::new(1, 2).unwrap(), 2, 1, 1, 1).is_err());
        // 10 * 1 * 1/3 is not integral
        assert!(derive_config(10, 1.0 / 3.0, CodeRate::new(1, 3).unwrap(), 1, 1, 1, 1).is_err());
        assert!(derive_config(8, 1.0, CodeRate::new(1, 1).unwrap(), 1, 0, 1, 1).is_err());
    }

    #[test]
    fn code_rate_parsing() {
        assert_eq!(
            "2/4".parse::<CodeRate>().unwrap(),
            CodeRate::new(1, 2).unwrap()
        );
        assert_eq!("1".parse::<CodeRate>().unwrap().value(), 1.0);
        assert!("x/2".parse::<CodeRate>().is_err());
        assert!("0/2".parse::<CodeRate>().is_err());
        assert_eq!(CodeRate::new(5, 6).unwrap().to_string(), "5/6");
    }

    #[test]
    fn json_round_trip_with_infinite_snr() {
        let c = derive_config(8, 1.0, CodeRate::new(1, 1).unwrap(), 1, 4, 4, 3)
            .unwrap()
            .with_train_snr(f64::INFINITY);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"inf\""));
        let back: AeConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let finite = c.with_train_snr(6.5);
        assert_eq!(
            serde_json::from_str::<AeConfig>(&serde_json::to_string(&finite).unwrap()).unwrap(),
            finite
        );
    }
}
