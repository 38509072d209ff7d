use serde::{Deserialize, Serialize};

use crate::channel::derive_seed;
use crate::cnn_ae::{build_model, derive_config, train, CodeRate, TrainConfig, DEFAULT_KERNEL};
use crate::error::{Error, Result};
use crate::reed_muller::binomial;
use crate::theory::db_to_linear;

use super::codec::{AeCodec, FrameCodec, PolarQam, RmQam, Scheme};
use super::fep::{estimate_fep, FepOptions, FepReport};

pub const DEFAULT_K_MODS: [u32; 5] = [1, 2, 4, 6, 8];
pub const DEFAULT_CODE_RATES: [(u32, u32); 6] = [(1, 4), (1, 3), (1, 2), (2, 3), (3, 4), (5, 6)];

/// One point of a rate ladder: code rate and bits per QAM symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub rcod: CodeRate,
    pub k_mod: u32,
}

impl Candidate {
    pub fn new(rcod: CodeRate, k_mod: u32) -> Self {
        Self { rcod, k_mod }
    }

    /// Bits per complex channel use.
    pub fn rate(&self) -> f64 {
        self.rcod.value() * self.k_mod as f64
    }

    pub fn coded_bits(&self, n: usize) -> usize {
        n * self.k_mod as usize
    }

    pub fn message_bits(&self, n: usize) -> Option<usize> {
        self.rcod.info_bits(self.coded_bits(n))
    }

    /// Seed for evaluating this candidate; depends only on the candidate, so
    /// adding or removing ladder entries never changes another entry's result.
    pub fn seed(&self, base: u64) -> u64 {
        let id =
            (self.k_mod as u64) << 48 | (self.rcod.num() as u64) << 24 | self.rcod.den() as u64;
        derive_seed(base, id)
    }
}

fn sort_descending(ladder: &mut Vec<Candidate>) {
    ladder.sort_by(|a, b| b.rate().total_cmp(&a.rate()).then(a.k_mod.cmp(&b.k_mod)));
    ladder.dedup();
}

/// The default ladder: every `k_mod x R_cod` pair giving a whole number of
/// message bits at blocklength `n`, highest rate first.
pub fn default_ladder(n: usize) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = DEFAULT_K_MODS
        .iter()
        .flat_map(|&k_mod| {
            DEFAULT_CODE_RATES
                .iter()
                .map(move |&(a, b)| Candidate::new(CodeRate::new(a, b).unwrap(), k_mod))
        })
        .filter(|c| c.message_bits(n).is_some())
        .collect();
    sort_descending(&mut out);
    out
}

/// Default-ladder entries whose coded length is a power of two.
pub fn polar_ladder(n: usize) -> Vec<Candidate> {
    default_ladder(n)
        .into_iter()
        .filter(|c| c.coded_bits(n).is_power_of_two())
        .collect()
}

/// Every `RM(r, m)` with `2^m = n k_mod` for the default `k_mod` values.
pub fn rm_ladder(n: usize) -> Vec<Candidate> {
    let mut out = Vec::new();
    for k_mod in DEFAULT_K_MODS {
        let len = n * k_mod as usize;
        if !len.is_power_of_two() {
            continue;
        }
        let m = len.trailing_zeros();
        for r in 0..=m {
            let k: usize = (0..=r).map(|d| binomial(m, d)).sum();
            out.push(Candidate::new(
                CodeRate::new(k as u32, len as u32).unwrap(),
                k_mod,
            ));
        }
    }
    sort_descending(&mut out);
    out
}

/// The RM order whose dimension realizes `cand` at blocklength `n`.
pub fn rm_order(n: usize, cand: &Candidate) -> Result<(u32, u32)> {
    let len = cand.coded_bits(n);
    let k = cand
        .message_bits(n)
        .ok_or_else(|| Error::config("fractional message length"))?;
    if !len.is_power_of_two() {
        return Err(Error::config(format!(
            "Reed-Muller length {len} is not a power of two"
        )));
    }
    let m = len.trailing_zeros();
    (0..=m)
        .find(|&r| (0..=r).map(|d| binomial(m, d)).sum::<usize>() == k)
        .map(|r| (r, m))
        .ok_or_else(|| Error::config(format!("no RM code of length {len} has dimension {k}")))
}

/// Autoencoder architecture and training budget used when a search needs a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeTrainer {
    pub m1: usize,
    pub m2: usize,
    pub kernel: usize,
    pub train: TrainConfig,
}

impl Default for AeTrainer {
    fn default() -> Self {
        Self {
            m1: 50,
            m2: 20,
            kernel: DEFAULT_KERNEL,
            train: TrainConfig::default(),
        }
    }
}

impl AeTrainer {
    /// Trains a model for `cand` at `snr_db`.
    pub fn build(&self, n: usize, cand: &Candidate, snr_db: f64, seed: u64) -> Result<AeCodec> {
        let cfg = derive_config(
            n,
            cand.rate(),
            cand.rcod,
            cand.k_mod as usize,
            self.m1,
            self.m2,
            self.kernel,
        )?
        .with_train_snr(snr_db)
        .with_seed(seed);
        let mut model = build_model::<f32>(&cfg)?;
        let tc = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let report = train(&mut model, &tc)?;
        log::info!(
            "trained {} at {snr_db} dB: {} steps, final loss {:.4}",
            cand.rcod,
            report.steps,
            report.losses.last().copied().unwrap_or(f64::NAN)
        );
        Ok(AeCodec { model })
    }
}

/// Builds the system for one candidate at `snr_db`.
pub fn build_codec(
    scheme: Scheme,
    n: usize,
    cand: &Candidate,
    snr_db: f64,
    seed: u64,
    trainer: Option<&AeTrainer>,
) -> Result<Box<dyn FrameCodec>> {
    let k = cand
        .message_bits(n)
        .ok_or_else(|| Error::config(format!("{cand:?} gives a fractional message")))?;
    Ok(match scheme {
        Scheme::PolarQam => Box::new(PolarQam::new(
            cand.coded_bits(n),
            k,
            cand.k_mod,
            1.0 / db_to_linear(snr_db),
            seed,
        )?),
        Scheme::RmQam => {
            let (r, m) = rm_order(n, cand)?;
            Box::new(RmQam::new(r, m, cand.k_mod)?)
        }
        Scheme::CnnAe => {
            let trainer =
                trainer.ok_or_else(|| Error::config("autoencoder search needs a trainer"))?;
            Box::new(trainer.build(n, cand, snr_db, seed)?)
        }
        Scheme::Theory => return Err(Error::config("the theory curve is computed, not simulated")),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub candidate: Candidate,
    pub report: FepReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Highest-rate candidate whose upper confidence bound met the target.
    pub accepted: Option<Trial>,
    /// Every evaluated candidate, in evaluation order.
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    pub fn rate(&self) -> f64 {
        self.accepted.as_ref().map_or(0.0, |t| t.candidate.rate())
    }

    pub fn diagnostics(&self) -> String {
        self.trials
            .iter()
            .map(|t| {
                format!(
                    "R={:.4} (R_cod={}, k_mod={}): {}/{} errors, CI [{:.3e}, {:.3e}]{}",
                    t.candidate.rate(),
                    t.candidate.rcod,
                    t.candidate.k_mod,
                    t.report.errors,
                    t.report.frames,
                    t.report.ci_low,
                    t.report.ci_high,
                    if t.report.stopped_early {
                        " (stopped early)"
                    } else {
                        ""
                    }
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub epsilon: f64,
    pub snr_db: f64,
    pub frames: u64,
    pub seed: u64,
    pub workers: usize,
}

impl SearchOptions {
    /// Fewest frames accepted for a target `epsilon`.
    pub fn min_frames(epsilon: f64) -> u64 {
        (100.0 / epsilon).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::config(format!(
                "target FEP {} outside (0, 0.5)",
                self.epsilon
            )));
        }
        let min = Self::min_frames(self.epsilon);
        if self.frames < min {
            return Err(Error::config(format!(
                "{} frames is below the minimum {min} for target {}",
                self.frames, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Walks `ladder` from the highest rate down and returns the first candidate
/// whose FEP upper confidence bound is at most `epsilon`. Candidates that are
/// clearly above target stop simulating early.
pub fn rate_search(
    ladder: &[Candidate],
    opts: &SearchOptions,
    mut build: impl FnMut(&Candidate, u64) -> Result<Box<dyn FrameCodec>>,
) -> Result<SearchOutcome> {
    opts.validate()?;
    let mut ladder = ladder.to_vec();
    sort_descending(&mut ladder);
    let mut trials = Vec::new();
    for cand in ladder {
        let seed = cand.seed(opts.seed);
        let codec = build(&cand, seed)?;
        let fo = FepOptions::new(opts.frames, seed)
            .with_workers(opts.workers)
            .stop_above(opts.epsilon);
        let report = estimate_fep(codec.as_ref(), opts.snr_db, &fo)?;
        let trial = Trial {
            candidate: cand,
            report,
        };
        trials.push(trial.clone());
        if trial.report.meets(opts.epsilon) {
            return Ok(SearchOutcome {
                accepted: Some(trial),
                trials,
            });
        }
    }
    Ok(SearchOutcome {
        accepted: None,
        trials,
    })
}

/// [`rate_search`] for one of the simulated schemes.
pub fn search_scheme(
    scheme: Scheme,
    n: usize,
    ladder: &[Candidate],
    opts: &SearchOptions,
    trainer: Option<&AeTrainer>,
) -> Result<SearchOutcome> {
    rate_search(ladder, opts, |cand, seed| {
        build_codec(scheme, n, cand, opts.snr_db, seed, trainer)
    })
}
