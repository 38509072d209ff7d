//! Polar codes: Bhattacharyya construction for a BSC, the Arikan transform
//! encoder and a min-sum successive-cancellation decoder.
//!
//! Bits are in natural order: the codeword is `u * F^{(x)m}` with
//! `F = [[1, 0], [1, 1]]` and no bit-reversal permutation. In this order
//! `u` index 0 sees the worst synthetic channel of the first split.

use crate::error::{Error, Result};

/// LLR magnitudes are clipped to this value before decoding.
pub const LLR_CLIP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PolarCode {
    n: usize,
    info_set: Vec<usize>,
    frozen: Vec<bool>,
}

/// Bhattacharyya parameters of the `n` synthetic channels of a BSC with
/// crossover probability `p`, in natural (u-index) order.
pub fn bhattacharyya_construct(n: usize, p: f64) -> Result<Vec<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::domain(format!(
            "polar length must be a power of two, got {n}"
        )));
    }
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::domain(format!(
            "BSC crossover must lie in (0, 0.5), got {p}"
        )));
    }
    let z0 = 2.0 * (p * (1.0 - p)).sqrt();
    let mut out = vec![0.0; n];
    fill_bhattacharyya(z0, &mut out);
    Ok(out)
}

fn fill_bhattacharyya(z: f64, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = z;
        return;
    }
    let (minus, plus) = out.split_at_mut(out.len() / 2);
    fill_bhattacharyya(2.0 * z - z * z, minus);
    fill_bhattacharyya(z * z, plus);
}

impl PolarCode {
    /// Picks the `k` channels with the smallest Bhattacharyya parameter
    /// (ties broken by lower index).
    pub fn for_bsc(n: usize, k: usize, p: f64) -> Result<Self> {
        let z = bhattacharyya_construct(n, p)?;
        if k > n {
            return Err(Error::domain(format!(
                "cannot carry {k} bits in a length-{n} code"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
        Self::with_info_set(n, order[..k].to_vec())
    }

    pub fn with_info_set(n: usize, mut info_set: Vec<usize>) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::domain(format!(
                "polar length must be a power of two, got {n}"
            )));
        }
        info_set.sort_unstable();
        info_set.dedup();
        if info_set.iter().any(|&i| i >= n) {
            return Err(Error::domain("information index out of range"));
        }
        let mut frozen = vec![true; n];
        for &i in &info_set {
            frozen[i] = false;
        }
        Ok(Self {
            n,
            info_set,
            frozen,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dimension(&self) -> usize {
        self.info_set.len()
    }

    pub fn info_set(&self) -> &[usize] {
        &self.info_set
    }
}

/// In-place `x <- x * F^{(x)m}` over GF(2).
fn arikan_transform(x: &mut [u8]) {
    let n = x.len();
    let mut half = n / 2;
    while half >= 1 {
        for block in x.chunks_exact_mut(2 * half) {
            let (left, right) = block.split_at_mut(half);
            for (l, r) in left.iter_mut().zip(right.iter()) {
                *l ^= *r;
            }
        }
        half /= 2;
    }
}

pub fn polar_encode(msg: &[u8], code: &PolarCode) -> Result<Vec<u8>> {
    if msg.len() != code.dimension() {
        return Err(Error::shape(format!(
            "expected {} message bits, got {}",
            code.dimension(),
            msg.len()
        )));
    }
    let mut u = vec![0u8; code.n];
    for (&i, &b) in code.info_set.iter().zip(msg) {
        u[i] = b & 1;
    }
    arikan_transform(&mut u);
    Ok(u)
}

/// Min-sum successive cancellation. Positive LLR favours bit 0.
pub fn sc_decode(llr: &[f64], code: &PolarCode) -> Result<Vec<u8>> {
    if llr.len() != code.n {
        return Err(Error::shape(format!(
            "expected {} LLRs, got {}",
            code.n,
            llr.len()
        )));
    }
    let llr: Vec<f64> = llr.iter().map(|l| l.clamp(-LLR_CLIP, LLR_CLIP)).collect();
    let mut u_hat = vec![0u8; code.n];
    let mut scratch = vec![0.0; 2 * code.n];
    sc_node(&llr, &code.frozen, &mut u_hat, &mut scratch);
    Ok(code.info_set.iter().map(|&i| u_hat[i]).collect())
}

/// Decodes the sub-code whose channel LLRs are `llr`, writing the `u`
/// decisions into `u_hat` and returning the re-encoded codeword bits in
/// place of the decisions (`u_hat` ends up holding the partial sums).
fn sc_node(llr: &[f64], frozen: &[bool], u_hat: &mut [u8], scratch: &mut [f64]) -> Vec<u8> {
    let n = llr.len();
    if n == 1 {
        let bit = if frozen[0] { 0 } else { u8::from(llr[0] < 0.0) };
        u_hat[0] = bit;
        return vec![bit];
    }
    let half = n / 2;
    let (lo, hi) = llr.split_at(half);
    let (buf, rest) = scratch.split_at_mut(half);

    for i in 0..half {
        let (a, b) = (lo[i], hi[i]);
        buf[i] = a.signum() * b.signum() * a.abs().min(b.abs());
    }
    let left = sc_node(buf, &frozen[..half], &mut u_hat[..half], rest);

    for i in 0..half {
        let sign = if left[i] == 0 { 1.0 } else { -1.0 };
        buf[i] = hi[i] + sign * lo[i];
    }
    let right = sc_node(buf, &frozen[half..], &mut u_hat[half..], rest);

    let mut x = Vec::with_capacity(n);
    x.extend(left.iter().zip(&right).map(|(a, b)| a ^ b));
    x.extend_from_slice(&right);
    x
}
