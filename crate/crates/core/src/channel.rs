//! Complex AWGN channel with reproducible noise streams.
//!
//! Complex symbols are stored as `[re, im]` pairs. Signal power is fixed to
//! one, so the SNR is `1 / n0` where `n0` is the complex noise variance per
//! symbol (each real component has variance `n0 / 2`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A block of `n` complex channel symbols with unit average power.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    symbols: Vec<[f64; 2]>,
}

impl Codeword {
    pub fn symbols(&self) -> &[[f64; 2]] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn into_symbols(self) -> Vec<[f64; 2]> {
        self.symbols
    }

    /// Wraps symbols that are already known to satisfy the power constraint.
    pub(crate) fn from_normalized(symbols: Vec<[f64; 2]>) -> Self {
        Self { symbols }
    }
}

/// `(1/n) * sum |x_i|^2`.
pub fn average_power(symbols: &[[f64; 2]]) -> f64 {
    let total: f64 = symbols.iter().map(|[re, im]| re * re + im * im).sum();
    total / symbols.len() as f64
}

/// Scales `raw` so that its average symbol power is exactly one.
pub fn normalize_power(raw: &[[f64; 2]]) -> Result<Codeword> {
    if raw.is_empty() {
        return Err(Error::Degenerate("cannot normalize an empty block".into()));
    }
    let power = average_power(raw);
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Degenerate(format!("block power is {power}")));
    }
    let scale = power.sqrt().recip();
    let symbols = raw
        .iter()
        .map(|[re, im]| [re * scale, im * scale])
        .collect();
    Ok(Codeword { symbols })
}

/// Noise variance plus the identity of a reproducible noise stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    n0: f64,
    seed: u64,
    stream_id: u64,
}

impl NoiseSpec {
    pub fn new(n0: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if !(n0 > 0.0) || !n0.is_finite() {
            return Err(Error::domain(format!(
                "noise variance must be positive, got {n0}"
            )));
        }
        Ok(Self {
            n0,
            seed,
            stream_id,
        })
    }

    /// Noise for linear SNR `gamma` at unit signal power.
    pub fn for_snr(gamma: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::domain(format!("SNR must be positive, got {gamma}")));
        }
        Self::new(1.0 / gamma, seed, stream_id)
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, self.stream_id)
    }

    /// Writes `out.len()` real noise components of variance `n0 / 2`.
    pub fn fill(&self, out: &mut [f64]) {
        let sigma = (self.n0 / 2.0).sqrt();
        let mut rng = self.rng();
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sigma * z;
        }
    }
}

/// ChaCha8 keyed by `seed` on stream `stream_id`.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derives an independent 64-bit seed for a named purpose (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `y = x + w` with circularly symmetric Gaussian `w` of variance `n0`.
pub fn transmit(x: &Codeword, noise: &NoiseSpec) -> Vec<[f64; 2]> {
    let mut w = vec![0.0; 2 * x.len()];
    noise.fill(&mut w);
    x.symbols
        .iter()
        .zip(w.chunks_exact(2))
        .map(|([re, im], w)| [re + w[0], im + w[1]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_scales_single_symbol() {
        let cw = normalize_power(&[[3.0, 4.0]]).unwrap();
        assert!((cw.symbols()[0][0] - 0.6).abs() < 1e-15);
        assert!((cw.symbols()[0][1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent() {
        let raw: Vec<[f64; 2]> = (0..16)
            .map(|i| [(i as f64).sin(), (i as f64).cos()])
            .collect();
        let once = normalize_power(&raw).unwrap();
        let twice = normalize_power(once.symbols()).unwrap();
        for (a, b) in once.symbols().iter().zip(twice.symbols()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_random_block_has_unit_power() {
        let mut rng = stream_rng(7, 0);
        let raw: Vec<[f64; 2]> = (0..128)
            .map(|_| [rng.random::<f64>() - 0.3, rng.random::<f64>() * 5.0])
            .collect();
        let cw = normalize_power(&raw).unwrap();
        assert!((average_power(cw.symbols()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_rejects_zero_block() {
        assert!(matches!(
            normalize_power(&[[0.0, 0.0]; 4]),
            Err(Error::Degenerate(_))
        ));
        assert!(normalize_power(&[]).is_err());
    }

    #[test]
    fn vanishing_noise_is_transparent() {
        let cw = normalize_power(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        let y = transmit(&cw, &NoiseSpec::new(1e-12, 3, 0).unwrap());
        for (a, b) in cw.symbols().iter().zip(&y) {
            assert!((a[0] - b[0]).abs() < 1e-5 && (a[1] - b[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn noise_stream_is_reproducible() {
        let cw = normalize_power(&[[1.0, 0.0]; 64]).unwrap();
        let spec = NoiseSpec::new(0.3, 11, 5).unwrap();
        assert_eq!(transmit(&cw, &spec), transmit(&cw, &spec));
    }

    #[test]
    fn noise_spec_rejects_bad_variance() {
        assert!(NoiseSpec::new(0.0, 0, 0).is_err());
        assert!(NoiseSpec::new(-1.0, 0, 0).is_err());
        assert!(NoiseSpec::for_snr(0.0, 0, 0).is_err());
    }

    #[test]
    fn noise_statistics() {
        let n = 1_000_000;
        let spec = NoiseSpec::new(2.0, 99, 1).unwrap();
        let mut w = vec![0.0; 2 * n];
        spec.fill(&mut w);
        let (re, im): (Vec<f64>, Vec<f64>) = w.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var =
            |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        let (mr, mi) = (mean(&re), mean(&im));
        let (vr, vi) = (var(&re, mr), var(&im, mi));
        assert!(
            (vr - 1.0).abs() < 0.01 && (vi - 1.0).abs() < 0.01,
            "{vr} {vi}"
        );
        // 4 sigma on the sample mean
        assert!(mr.abs() < 4.0 / (n as f64).sqrt() && mi.abs() < 4.0 / (n as f64).sqrt());
        let cov = re
            .iter()
            .zip(&im)
            .map(|(a, b)| (a - mr) * (b - mi))
            .sum::<f64>()
            / n as f64;
        assert!((cov / (vr * vi).sqrt()).abs() < 0.01);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = vec![0.0; 10_000];
        let mut b = vec![0.0; 10_000];
        NoiseSpec::new(1.0, 5, 0).unwrap().fill(&mut a);
        NoiseSpec::new(1.0, 5, 1).unwrap().fill(&mut b);
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
    }

    #[test]
    fn derived_seeds_spread() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|t| derive_seed(42, t)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
