use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed, stream_rng, transmit, NoiseSpec};
use crate::cnn_ae::{random_bits, AeModel, CodeRate};
use crate::error::{Error, Result};
use crate::modem::{qam_demodulate_hard, qam_modulate, QamSpec};
use crate::polar::{polar_encode, sc_decode, PolarCode, LLR_CLIP};
use crate::reed_muller::{rm_decode_reed, rm_encode, RmCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Theory,
    CnnAe,
    PolarQam,
    RmQam,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Theory => "theory",
            Scheme::CnnAe => "cnn_ae",
            Scheme::PolarQam => "polar_qam",
            Scheme::RmQam => "rm_qam",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Scheme::Theory),
            "cnn_ae" => Ok(Scheme::CnnAe),
            "polar_qam" => Ok(Scheme::PolarQam),
            "rm_qam" => Ok(Scheme::RmQam),
            _ => Err(Error::config(format!("unknown scheme {s:?}"))),
        }
    }
}

/// A complete transmitter/receiver pair simulated frame by frame.
pub trait FrameCodec: Sync {
    fn scheme(&self) -> Scheme;

    /// Complex channel uses per frame.
    fn channel_uses(&self) -> usize;

    fn message_bits(&self) -> usize;

    fn k_mod(&self) -> u32;

    /// Transmits `msg` over the channel realization `noise` and returns the decision.
    fn run_frame(&self, msg: &[u8], noise: &NoiseSpec) -> Result<Vec<u8>>;

    fn run_frames(&self, msgs: &[Vec<u8>], noise: &[NoiseSpec]) -> Result<Vec<Vec<u8>>> {
        msgs.iter()
            .zip(noise)
            .map(|(m, w)| self.run_frame(m, w))
            .collect()
    }

    /// Bits per complex channel use.
    fn rate(&self) -> f64 {
        self.message_bits() as f64 / self.channel_uses() as f64
    }

    fn code_rate(&self) -> f64 {
        self.rate() / self.k_mod() as f64
    }
}

fn check_len(msg: &[u8], k: usize) -> Result<()> {
    if msg.len() != k {
        return Err(Error::shape(format!(
            "expected {k} message bits, got {}",
            msg.len()
        )));
    }
    Ok(())
}

fn qam_for_length(n_coded: usize, k_mod: u32) -> Result<QamSpec> {
    if n_coded % k_mod as usize != 0 {
        return Err(Error::config(format!(
            "{n_coded} coded bits do not fill {k_mod}-bit symbols"
        )));
    }
    QamSpec::new(k_mod)
}

/// Uncoded bit error rate of hard-decision QAM, by simulation over `bits` bits.
pub fn qam_bit_error_rate(k_mod: u32, n0: f64, bits: usize, seed: u64) -> Result<f64> {
    let spec = QamSpec::new(k_mod)?;
    let per_frame = 1024 * k_mod as usize;
    let frames = bits.div_ceil(per_frame).max(1);
    let mut errors = 0usize;
    for f in 0..frames as u64 {
        let tx = random_bits(&mut stream_rng(derive_seed(seed, 0x30), f), per_frame);
        let cw = qam_modulate(&tx, &spec)?;
        let rx = qam_demodulate_hard(
            &transmit(&cw, &NoiseSpec::new(n0, derive_seed(seed, 0x31), f)?),
            &spec,
        );
        errors += tx.iter().zip(&rx).filter(|(a, b)| a != b).count();
    }
    Ok(errors as f64 / (frames * per_frame) as f64)
}

/// Polar code over Gray QAM with hard decisions. The receiver treats the
/// demodulated bits as a BSC with the simulated crossover `p_b`.
#[derive(Debug, Clone)]
pub struct PolarQam {
    code: PolarCode,
    qam: QamSpec,
    p_b: f64,
}

impl PolarQam {
    /// Bits simulated to estimate the hard-decision crossover probability.
    pub const CROSSOVER_BITS: usize = 1_000_000;

    pub fn new(n_coded: usize, k: usize, k_mod: u32, n0: f64, seed: u64) -> Result<Self> {
        let qam = qam_for_length(n_coded, k_mod)?;
        // A crossover never observed is floored at half a bit in the sample.
        let floor = 0.5 / Self::CROSSOVER_BITS as f64;
        let p_b =
            qam_bit_error_rate(k_mod, n0, Self::CROSSOVER_BITS, seed)?.clamp(floor, 0.5 - floor);
        Ok(Self {
            code: PolarCode::for_bsc(n_coded, k, p_b)?,
            qam,
            p_b,
        })
    }

    pub fn with_crossover(n_coded: usize, k: usize, k_mod: u32, p_b: f64) -> Result<Self> {
        Ok(Self {
            code: PolarCode::for_bsc(n_coded, k, p_b)?,
            qam: qam_for_length(n_coded, k_mod)?,
            p_b,
        })
    }

    pub fn crossover(&self) -> f64 {
        self.p_b
    }

    pub fn code(&self) -> &PolarCode {
        &self.code
    }
}

impl FrameCodec for PolarQam {
    fn scheme(&self) -> Scheme {
        Scheme::PolarQam
    }

    fn channel_uses(&self) -> usize {
        self.code.len() / self.qam.k_mod() as usize
    }

    fn message_bits(&self) -> usize {
        self.code.dimension()
    }

    fn k_mod(&self) -> u32 {
        self.qam.k_mod()
    }

    fn run_frame(&self, msg: &[u8], noise: &NoiseSpec) -> Result<Vec<u8>> {
        check_len(msg, self.message_bits())?;
        let x = qam_modulate(&polar_encode(msg, &self.code)?, &self.qam)?;
        let hard = qam_demodulate_hard(&transmit(&x, noise), &self.qam);
        let mag = ((1.0 - self.p_b) / self.p_b).ln().min(LLR_CLIP);
        let llr: Vec<f64> = hard
            .iter()
            .map(|&b| if b == 0 { mag } else { -mag })
            .collect();
        sc_decode(&llr, &self.code)
    }
}

/// Reed-Muller code over Gray QAM with hard decisions and Reed decoding.
#[derive(Debug, Clone)]
pub struct RmQam {
    code: RmCode,
    qam: QamSpec,
}

impl RmQam {
    pub fn new(r: u32, m: u32, k_mod: u32) -> Result<Self> {
        let code = RmCode::new(r, m)?;
        let qam = qam_for_length(code.len(), k_mod)?;
        Ok(Self { code, qam })
    }

    pub fn code(&self) -> &RmCode {
        &self.code
    }
}

impl FrameCodec for RmQam {
    fn scheme(&self) -> Scheme {
        Scheme::RmQam
    }

    fn channel_uses(&self) -> usize {
        self.code.len() / self.qam.k_mod() as usize
    }

    fn message_bits(&self) -> usize {
        self.code.dimension()
    }

    fn k_mod(&self) -> u32 {
        self.qam.k_mod()
    }

    fn run_frame(&self, msg: &[u8], noise: &NoiseSpec) -> Result<Vec<u8>> {
        check_len(msg, self.message_bits())?;
        let x = qam_modulate(&rm_encode(msg, &self.code)?, &self.qam)?;
        rm_decode_reed(
            &qam_demodulate_hard(&transmit(&x, noise), &self.qam),
            &self.code,
        )
    }
}

/// A trained autoencoder, evaluated in batches.
#[derive(Debug, Clone)]
pub struct AeCodec {
    pub model: AeModel<f32>,
}

impl FrameCodec for AeCodec {
    fn scheme(&self) -> Scheme {
        Scheme::CnnAe
    }

    fn channel_uses(&self) -> usize {
        self.model.config().n
    }

    fn message_bits(&self) -> usize {
        self.model.config().k
    }

    fn k_mod(&self) -> u32 {
        self.model.config().k_mod as u32
    }

    fn run_frame(&self, msg: &[u8], noise: &NoiseSpec) -> Result<Vec<u8>> {
        self.model.infer(msg, noise)
    }

    fn run_frames(&self, msgs: &[Vec<u8>], noise: &[NoiseSpec]) -> Result<Vec<Vec<u8>>> {
        self.model.infer_batch(msgs, noise)
    }
}

/// Code rate of a codec as a fraction, for reporting.
pub fn code_rate_fraction(codec: &dyn FrameCodec) -> Option<CodeRate> {
    CodeRate::new(
        codec.message_bits() as u32,
        (codec.channel_uses() * codec.k_mod() as usize) as u32,
    )
    .ok()
}
