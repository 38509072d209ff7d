//! Reed-Muller codes `RM(r, m)` with Reed's majority-logic decoder.
//!
//! Coordinate `j` of a codeword is the evaluation point whose variable `i` is
//! bit `i` of `j`. Generator rows are monomials ordered by degree, then
//! lexicographically by their sorted variable indices.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RmCode {
    r: u32,
    m: u32,
    /// Variable masks of the monomials, in generator-row order.
    monomials: Vec<u32>,
    /// One row per monomial, `2^m` bits each.
    generator: Vec<Vec<u8>>,
}

fn monomials_of_degree(m: u32, d: u32) -> Vec<u32> {
    fn rec(start: u32, m: u32, left: u32, mask: u32, out: &mut Vec<u32>) {
        if left == 0 {
            out.push(mask);
            return;
        }
        for v in start..m {
            rec(v + 1, m, left - 1, mask | (1 << v), out);
        }
    }
    let mut out = Vec::new();
    rec(0, m, d, 0, &mut out);
    out
}

pub fn binomial(n: u32, k: u32) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) as usize / (i + 1) as usize)
}

impl RmCode {
    pub fn new(r: u32, m: u32) -> Result<Self> {
        if m > 16 {
            return Err(Error::domain(format!("RM length 2^{m} is too large")));
        }
        if r > m {
            return Err(Error::domain(format!("RM order {r} exceeds m = {m}")));
        }
        let monomials: Vec<u32> = (0..=r).flat_map(|d| monomials_of_degree(m, d)).collect();
        let n = 1usize << m;
        let generator = monomials
            .iter()
            .map(|&mask| (0..n).map(|j| u8::from(j as u32 & mask == mask)).collect())
            .collect();
        Ok(Self {
            r,
            m,
            monomials,
            generator,
        })
    }

    pub fn order(&self) -> u32 {
        self.r
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn len(&self) -> usize {
        1 << self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dimension(&self) -> usize {
        self.monomials.len()
    }

    pub fn generator(&self) -> &[Vec<u8>] {
        &self.generator
    }

    pub fn min_distance(&self) -> usize {
        1 << (self.m - self.r)
    }

    /// Number of errors the Reed decoder always corrects.
    pub fn correction_radius(&self) -> usize {
        (self.min_distance() - 1) / 2
    }
}

pub fn rm_encode(msg: &[u8], code: &RmCode) -> Result<Vec<u8>> {
    if msg.len() != code.dimension() {
        return Err(Error::shape(format!(
            "expected {} message bits, got {}",
            code.dimension(),
            msg.len()
        )));
    }
    let mut out = vec![0u8; code.len()];
    for (row, &b) in code.generator.iter().zip(msg) {
        if b & 1 == 1 {
            for (o, g) in out.iter_mut().zip(row) {
                *o ^= g;
            }
        }
    }
    Ok(out)
}

/// Reed majority-logic decoding, highest degree first. A tied vote decides 0.
pub fn rm_decode_reed(hard: &[u8], code: &RmCode) -> Result<Vec<u8>> {
    let n = code.len();
    if hard.len() != n {
        return Err(Error::shape(format!(
            "expected {n} received bits, got {}",
            hard.len()
        )));
    }
    let full = (n - 1) as u32;
    let mut word: Vec<u8> = hard.iter().map(|b| b & 1).collect();
    let mut msg = vec![0u8; code.dimension()];
    let mut row = code.dimension();

    for d in (0..=code.r).rev() {
        let count = binomial(code.m, d);
        let first = row - count;
        let mut decided = Vec::new();
        for idx in first..row {
            let mask = code.monomials[idx];
            let rest = full & !mask;
            // One characteristic sum per assignment of the variables outside the monomial.
            let mut ones = 0usize;
            let mut votes = 0usize;
            let mut fixed = 0u32;
            loop {
                let mut parity = 0u8;
                let mut sub = 0u32;
                loop {
                    parity ^= word[(fixed | sub) as usize];
                    sub = sub.wrapping_sub(mask) & mask;
                    if sub == 0 {
                        break;
                    }
                }
                ones += parity as usize;
                votes += 1;
                fixed = fixed.wrapping_sub(rest) & rest;
                if fixed == 0 {
                    break;
                }
            }
            if 2 * ones > votes {
                msg[idx] = 1;
                decided.push(idx);
            }
        }
        for idx in decided {
            for (w, g) in word.iter_mut().zip(&code.generator[idx]) {
                *w ^= g;
            }
        }
        row = first;
    }
    Ok(msg)
}
