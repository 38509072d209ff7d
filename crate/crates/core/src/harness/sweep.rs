use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::{db_to_linear, max_rate_fbl, FblParams, LogTerm};

use super::codec::Scheme;
use super::search::{
    default_ladder, polar_ladder, rm_ladder, search_scheme, AeTrainer, Candidate, SearchOptions,
    SearchOutcome,
};

/// One row of a rate-versus-SNR table. Simulation fields are empty for the theory curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub n: usize,
    pub epsilon: f64,
    pub rate: f64,
    pub rcod: Option<f64>,
    pub kmod: Option<u32>,
    pub fep: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub frames: Option<u64>,
    pub meets_target: bool,
    pub seed: Option<u64>,
}

pub const CSV_HEADER: &str =
    "scheme,snr_db,n,epsilon,rate,rcod,kmod,fep,ci_low,ci_high,frames,meets_target,seed";

impl RatePoint {
    pub fn theory(n: usize, epsilon: f64, snr_db: f64) -> Result<Self> {
        let rate = max_rate_fbl(
            FblParams::new(n as u64, epsilon)?,
            db_to_linear(snr_db),
            LogTerm::UpperBound,
        )?;
        Ok(Self {
            scheme: Scheme::Theory,
            snr_db,
            n,
            epsilon,
            rate,
            rcod: None,
            kmod: None,
            fep: None,
            ci_low: None,
            ci_high: None,
            frames: None,
            meets_target: true,
            seed: None,
        })
    }

    /// The accepted point of a search, or a zero-rate point carrying the
    /// last (lowest-rate) trial when nothing met the target.
    pub fn from_search(
        scheme: Scheme,
        n: usize,
        epsilon: f64,
        snr_db: f64,
        out: &SearchOutcome,
    ) -> Self {
        let trial = out.accepted.as_ref().or(out.trials.last());
        Self {
            scheme,
            snr_db,
            n,
            epsilon,
            rate: out.rate(),
            rcod: trial.map(|t| t.candidate.rcod.value()),
            kmod: trial.map(|t| t.candidate.k_mod),
            fep: trial.map(|t| t.report.fep),
            ci_low: trial.map(|t| t.report.ci_low),
            ci_high: trial.map(|t| t.report.ci_high),
            frames: trial.map(|t| t.report.frames),
            meets_target: out.accepted.is_some(),
            seed: trial.map(|t| t.report.seed),
        }
    }
}

pub fn write_csv<W: Write>(points: &[RatePoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in points {
        wr.serialize(p)?;
    }
    if points.is_empty() {
        wr.write_record(CSV_HEADER.split(','))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<RatePoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::config(format!(
            "unexpected CSV header {:?}",
            header.join(",")
        )));
    }
    rd.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Ladder used for each simulated scheme.
pub fn ladder_for(scheme: Scheme, n: usize) -> Vec<Candidate> {
    match scheme {
        Scheme::PolarQam => polar_ladder(n),
        Scheme::RmQam => rm_ladder(n),
        Scheme::CnnAe | Scheme::Theory => default_ladder(n),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub n: usize,
    pub epsilon: f64,
    pub snrs_db: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub frames: u64,
    pub seed: u64,
    pub workers: usize,
    pub trainer: Option<AeTrainer>,
    /// Skips autoencoder candidates above this rate, since each one costs a training run.
    pub ae_max_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<RatePoint>,
    /// Per `(scheme, snr)` search diagnostics.
    pub diagnostics: Vec<(Scheme, f64, String)>,
}

/// Theory curve plus a rate search for every simulated scheme at every SNR.
/// Fails if any simulated rate exceeds the theory rate.
pub fn sweep(opts: &SweepOptions) -> Result<SweepResult> {
    if opts.snrs_db.is_empty() {
        return Err(Error::config("empty SNR grid"));
    }
    let mut points = Vec::new();
    let mut diagnostics = Vec::new();
    for &snr in &opts.snrs_db {
        let theory = RatePoint::theory(opts.n, opts.epsilon, snr)?;
        let bound = theory.rate;
        points.push(theory);
        for &scheme in opts.schemes.iter().filter(|s| **s != Scheme::Theory) {
            let so = SearchOptions {
                epsilon: opts.epsilon,
                snr_db: snr,
                frames: opts.frames,
                seed: opts.seed,
                workers: opts.workers,
            };
            let mut ladder = ladder_for(scheme, opts.n);
            if let (Scheme::CnnAe, Some(cap)) = (scheme, opts.ae_max_rate) {
                ladder.retain(|c| c.rate() <= cap + 1e-12);
            }
            let out = search_scheme(scheme, opts.n, &ladder, &so, opts.trainer.as_ref())?;
            let p = RatePoint::from_search(scheme, opts.n, opts.epsilon, snr, &out);
            if p.rate > bound {
                return Err(Error::Invariant(format!(
                    "{scheme} rate {} exceeds the theory rate {bound} at {snr} dB",
                    p.rate
                )));
            }
            diagnostics.push((scheme, snr, out.diagnostics()));
            points.push(p);
        }
    }
    Ok(SweepResult {
        points,
        diagnostics,
    })
}

/// SNRs at which the autoencoder's accepted rate falls below a baseline's.
pub fn ordering_violations(points: &[RatePoint]) -> Vec<String> {
    let mut out = Vec::new();
    for ae in points.iter().filter(|p| p.scheme == Scheme::CnnAe) {
        for base in points.iter().filter(|p| {
            matches!(p.scheme, Scheme::PolarQam | Scheme::RmQam) && p.snr_db == ae.snr_db
        }) {
            if ae.rate < base.rate {
                out.push(format!(
                    "{} dB: cnn_ae rate {} < {} rate {}",
                    ae.snr_db, ae.rate, base.scheme, base.rate
                ));
            }
        }
    }
    out
}
