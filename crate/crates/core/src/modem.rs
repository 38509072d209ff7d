//! Gray-labeled square (or rectangular) QAM with hard-decision demapping.
//!
//! Labeling: the first `ceil(k/2)` bits of each symbol (MSB first) select the
//! in-phase level, the remaining `floor(k/2)` bits the quadrature level. Each
//! axis is Gray coded independently and level 0 is the most positive
//! amplitude, so the all-zero label maps to the upper-right corner.

use crate::channel::Codeword;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QamSpec {
    k_mod: u32,
    i_bits: u32,
    q_bits: u32,
    scale: f64,
    constellation: Vec<[f64; 2]>,
}

fn gray(j: u32) -> u32 {
    j ^ (j >> 1)
}

fn gray_inverse(mut g: u32) -> u32 {
    let mut j = g;
    while g > 0 {
        g >>= 1;
        j ^= g;
    }
    j
}

impl QamSpec {
    pub fn new(k_mod: u32) -> Result<Self> {
        if !(1..=8).contains(&k_mod) {
            return Err(Error::domain(format!(
                "bits per symbol must be in 1..=8, got {k_mod}"
            )));
        }
        let i_bits = k_mod.div_ceil(2);
        let q_bits = k_mod / 2;
        let (mi, mq) = ((1u32 << i_bits) as f64, (1u32 << q_bits) as f64);
        // Mean energy of an M-level PAM with odd-integer levels is (M^2 - 1) / 3.
        let energy = (mi * mi - 1.0) / 3.0 + (mq * mq - 1.0) / 3.0;
        let mut spec = Self {
            k_mod,
            i_bits,
            q_bits,
            scale: energy.sqrt().recip(),
            constellation: Vec::new(),
        };
        spec.constellation = (0..1u32 << k_mod).map(|label| spec.point(label)).collect();
        Ok(spec)
    }

    pub fn k_mod(&self) -> u32 {
        self.k_mod
    }

    pub fn order(&self) -> usize {
        1 << self.k_mod
    }

    /// All points indexed by their integer label.
    pub fn constellation(&self) -> &[[f64; 2]] {
        &self.constellation
    }

    fn amplitude(&self, bits: u32, gray_label: u32) -> f64 {
        let levels = 1u32 << bits;
        let j = gray_inverse(gray_label);
        (levels as f64 - 1.0 - 2.0 * j as f64) * self.scale
    }

    fn point(&self, label: u32) -> [f64; 2] {
        let g_i = label >> self.q_bits;
        let g_q = label & ((1 << self.q_bits) - 1);
        [
            self.amplitude(self.i_bits, g_i),
            self.amplitude(self.q_bits, g_q),
        ]
    }

    /// Nearest level on one axis, returned as its Gray label. Exact ties go to
    /// the smaller label.
    fn slice(&self, bits: u32, y: f64) -> u32 {
        if bits == 0 {
            return 0;
        }
        let levels = 1u32 << bits;
        let u = ((levels as f64 - 1.0) - y / self.scale) / 2.0;
        let max = (levels - 1) as f64;
        if u <= 0.0 {
            return gray(0);
        }
        if u >= max {
            return gray(levels - 1);
        }
        let lo = u.floor();
        let frac = u - lo;
        let lo = lo as u32;
        if frac < 0.5 {
            gray(lo)
        } else if frac > 0.5 {
            gray(lo + 1)
        } else {
            gray(lo).min(gray(lo + 1))
        }
    }

    /// Label of the nearest constellation point.
    pub fn detect(&self, y: [f64; 2]) -> u32 {
        (self.slice(self.i_bits, y[0]) << self.q_bits) | self.slice(self.q_bits, y[1])
    }
}

/// Maps groups of `k_mod` bits (MSB first) to constellation points.
pub fn qam_modulate(bits: &[u8], spec: &QamSpec) -> Result<Codeword> {
    let k = spec.k_mod as usize;
    if bits.is_empty() || bits.len() % k != 0 {
        return Err(Error::shape(format!(
            "{} bits do not split into {k}-bit symbols",
            bits.len()
        )));
    }
    let symbols = bits
        .chunks_exact(k)
        .map(|chunk| {
            let label = chunk
                .iter()
                .fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32);
            spec.constellation[label as usize]
        })
        .collect();
    Ok(Codeword::from_normalized(symbols))
}

/// Nearest-point hard decisions, `k_mod` bits per received symbol.
pub fn qam_demodulate_hard(y: &[[f64; 2]], spec: &QamSpec) -> Vec<u8> {
    let k = spec.k_mod;
    let mut bits = Vec::with_capacity(y.len() * k as usize);
    for &sym in y {
        let label = spec.detect(sym);
        bits.extend((0..k).rev().map(|s| ((label >> s) & 1) as u8));
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{stream_rng, transmit, NoiseSpec};
    use crate::theory::q_func;
    use rand::Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    /// Exhaustive nearest-point search, ties to the smaller label.
    fn brute_detect(spec: &QamSpec, y: [f64; 2]) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for (label, p) in spec.constellation().iter().enumerate() {
            let d = (p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2);
            if d < best.0 {
                best = (d, label as u32);
            }
        }
        best.1
    }

    #[test]
    fn qpsk_zero_label_is_upper_right() {
        let spec = QamSpec::new(2).unwrap();
        let cw = qam_modulate(&[0, 0], &spec).unwrap();
        let p = cw.symbols()[0];
        assert!((p[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (p[1] - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn constellations_have_unit_energy_and_distinct_points() {
        for k in 1..=8 {
            let spec = QamSpec::new(k).unwrap();
            let pts = spec.constellation();
            assert_eq!(pts.len(), 1 << k);
            let e = pts.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / pts.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "k={k} energy {e}");
            for a in 0..pts.len() {
                for b in a + 1..pts.len() {
                    assert_ne!(pts[a], pts[b]);
                }
            }
        }
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        for k in [2, 4, 6] {
            let spec = QamSpec::new(k).unwrap();
            let pts = spec.constellation();
            let step = 2.0 * spec.scale;
            for (a, pa) in pts.iter().enumerate() {
                for (b, pb) in pts.iter().enumerate() {
                    let dx = (pa[0] - pb[0]).abs();
                    let dy = (pa[1] - pb[1]).abs();
                    let horiz = (dx - step).abs() < 1e-9 && dy < 1e-9;
                    let vert = (dy - step).abs() < 1e-9 && dx < 1e-9;
                    if horiz || vert {
                        assert_eq!((a ^ b).count_ones(), 1, "k={k} labels {a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn slicer_matches_exhaustive_search() {
        let mut rng = stream_rng(1, 2);
        for k in 1..=8 {
            let spec = QamSpec::new(k).unwrap();
            for _ in 0..2000 {
                let y = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                assert_eq!(spec.detect(y), brute_detect(&spec, y), "k={k} y={y:?}");
            }
            // Exact midpoints between points exercise the tie rule.
            let pts = spec.constellation();
            for a in 0..pts.len() {
                for b in 0..pts.len() {
                    let mid = [(pts[a][0] + pts[b][0]) / 2.0, (pts[a][1] + pts[b][1]) / 2.0];
                    let got = spec.detect(mid);
                    let want = brute_detect(&spec, mid);
                    let d = |l: u32| {
                        let p = pts[l as usize];
                        (p[0] - mid[0]).powi(2) + (p[1] - mid[1]).powi(2)
                    };
                    assert!((d(got) - d(want)).abs() < 1e-12);
                    if (d(got) - d(want)).abs() == 0.0 {
                        assert!(got <= want, "k={k} tie at {mid:?}: {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn qpsk_midpoint_tie_goes_to_smaller_label() {
        let spec = QamSpec::new(2).unwrap();
        // between label 0 (+,+) and label 1 (+,-)
        assert_eq!(spec.detect([FRAC_1_SQRT_2, 0.0]), 0);
        // between label 1 (+,-) and label 3 (-,-)
        assert_eq!(spec.detect([0.0, -FRAC_1_SQRT_2]), 1);
        assert_eq!(spec.detect([0.0, 0.0]), 0);
    }

    #[test]
    fn noiseless_roundtrip_all_orders() {
        let mut rng = stream_rng(3, 0);
        for k in 1..=8u32 {
            let spec = QamSpec::new(k).unwrap();
            for _ in 0..10_000 / 8 {
                let bits: Vec<u8> = (0..k as usize * 16)
                    .map(|_| rng.random_range(0..2))
                    .collect();
                let cw = qam_modulate(&bits, &spec).unwrap();
                assert_eq!(qam_demodulate_hard(cw.symbols(), &spec), bits);
            }
        }
    }

    #[test]
    fn rejects_ragged_bit_count() {
        let spec = QamSpec::new(4).unwrap();
        assert!(matches!(
            qam_modulate(&[0, 1, 1], &spec),
            Err(Error::Shape(_))
        ));
        assert!(QamSpec::new(0).is_err());
        assert!(QamSpec::new(9).is_err());
    }

    #[test]
    fn qpsk_bit_error_rate_matches_theory() {
        let gamma = 10.0;
        let spec = QamSpec::new(2).unwrap();
        let mut rng = stream_rng(17, 0);
        let symbols_per_frame = 500;
        let frames = 1_000;
        let mut errors = 0usize;
        for f in 0..frames {
            let bits: Vec<u8> = (0..2 * symbols_per_frame)
                .map(|_| rng.random_range(0..2))
                .collect();
            let cw = qam_modulate(&bits, &spec).unwrap();
            let y = transmit(&cw, &NoiseSpec::for_snr(gamma, 18, f).unwrap());
            let hat = qam_demodulate_hard(&y, &spec);
            errors += bits.iter().zip(&hat).filter(|(a, b)| a != b).count();
        }
        let ber = errors as f64 / (2 * symbols_per_frame * frames as usize) as f64;
        let want = q_func(gamma.sqrt());
        assert!(((ber - want) / want).abs() < 0.05, "ber {ber} vs {want}");
    }
}
