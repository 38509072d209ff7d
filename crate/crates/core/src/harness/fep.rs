use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::channel::{derive_seed, stream_rng, NoiseSpec};
use crate::cnn_ae::random_bits;
use crate::error::{Error, Result};
use crate::theory::db_to_linear;

use super::codec::FrameCodec;

const TAG_MESSAGE: u64 = 0x20;
const TAG_NOISE: u64 = 0x21;

/// Frames simulated between early-stop checks. Fixed so that results do not
/// depend on the number of workers.
pub const CHUNK_FRAMES: usize = 500;

/// Quantile of the Beta(a, b) distribution by bisection on the regularized
/// incomplete beta function; accurate even for very skewed shapes.
fn beta_quantile(a: f64, b: f64, q: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided 95% Clopper-Pearson interval for `errors` out of `frames`.
pub fn clopper_pearson(errors: u64, frames: u64) -> (f64, f64) {
    const ALPHA: f64 = 0.05;
    if frames == 0 {
        return (0.0, 1.0);
    }
    let (x, n) = (errors as f64, frames as f64);
    let low = if errors == 0 {
        0.0
    } else {
        beta_quantile(x, n - x + 1.0, ALPHA / 2.0)
    };
    let high = if errors >= frames {
        1.0
    } else {
        beta_quantile(x + 1.0, n - x, 1.0 - ALPHA / 2.0)
    };
    (low, high)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FepReport {
    pub frames: u64,
    pub errors: u64,
    pub fep: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
    /// Simulation stopped before `frames_requested` because the target was already missed.
    pub stopped_early: bool,
    pub frames_requested: u64,
}

impl FepReport {
    pub fn new(errors: u64, frames: u64, frames_requested: u64, seed: u64) -> Self {
        let (ci_low, ci_high) = clopper_pearson(errors, frames);
        let fep = if frames == 0 {
            0.0
        } else {
            errors as f64 / frames as f64
        };
        Self {
            frames,
            errors,
            fep,
            ci_low: ci_low.min(fep),
            ci_high: ci_high.max(fep),
            seed,
            stopped_early: frames < frames_requested,
            frames_requested,
        }
    }

    /// Conservative acceptance: the upper confidence bound is within the target.
    pub fn meets(&self, epsilon: f64) -> bool {
        self.ci_high <= epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FepOptions {
    pub frames: u64,
    pub seed: u64,
    /// Evaluation threads; `0` uses all available cores.
    pub workers: usize,
    /// Stop as soon as the lower confidence bound exceeds this target.
    pub stop_above: Option<f64>,
}

impl FepOptions {
    pub fn new(frames: u64, seed: u64) -> Self {
        Self {
            frames,
            seed,
            workers: 0,
            stop_above: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn stop_above(mut self, epsilon: f64) -> Self {
        self.stop_above = Some(epsilon);
        self
    }
}

/// Message and channel realization of frame `index` for an evaluation seed.
pub fn frame_inputs(seed: u64, k: usize, n0: f64, index: u64) -> Result<(Vec<u8>, NoiseSpec)> {
    let msg = random_bits(&mut stream_rng(derive_seed(seed, TAG_MESSAGE), index), k);
    Ok((
        msg,
        NoiseSpec::new(n0, derive_seed(seed, TAG_NOISE), index)?,
    ))
}

fn run_chunk(
    codec: &dyn FrameCodec,
    seed: u64,
    n0: f64,
    range: std::ops::Range<u64>,
) -> Result<u64> {
    let k = codec.message_bits();
    let mut msgs = Vec::with_capacity((range.end - range.start) as usize);
    let mut noise = Vec::with_capacity(msgs.capacity());
    for i in range {
        let (m, w) = frame_inputs(seed, k, n0, i)?;
        msgs.push(m);
        noise.push(w);
    }
    let decoded = codec.run_frames(&msgs, &noise)?;
    Ok(decoded.iter().zip(&msgs).filter(|(d, m)| d != m).count() as u64)
}

/// Monte-Carlo frame error probability of `codec` at `snr_db`. Frame `i`
/// always sees the same message and noise, so the result depends only on
/// the seed, never on the worker count.
pub fn estimate_fep(codec: &dyn FrameCodec, snr_db: f64, opts: &FepOptions) -> Result<FepReport> {
    if opts.frames == 0 {
        return Err(Error::config("at least one frame is required"));
    }
    let n0 = 1.0 / db_to_linear(snr_db);
    let chunk = CHUNK_FRAMES as u64;
    let chunks: Vec<std::ops::Range<u64>> = (0..opts.frames.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(opts.frames))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let wave = pool.current_num_threads().max(1);

    let (mut errors, mut frames) = (0u64, 0u64);
    for group in chunks.chunks(wave) {
        let counts: Vec<Result<u64>> = pool.install(|| {
            group
                .par_iter()
                .map(|r| run_chunk(codec, opts.seed, n0, r.clone()))
                .collect()
        });
        for (r, count) in group.iter().zip(counts) {
            errors += count?;
            frames += r.end - r.start;
            if let Some(eps) = opts.stop_above {
                if frames < opts.frames && clopper_pearson(errors, frames).0 > eps {
                    return Ok(FepReport::new(errors, frames, opts.frames, opts.seed));
                }
            }
        }
    }
    Ok(FepReport::new(errors, frames, opts.frames, opts.seed))
}
