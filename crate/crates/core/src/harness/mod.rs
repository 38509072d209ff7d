//! Monte-Carlo frame error estimation, rate search and rate-versus-SNR sweeps.

pub mod codec;
pub mod fep;
pub mod search;
pub mod sweep;

pub use codec::{qam_bit_error_rate, AeCodec, FrameCodec, PolarQam, RmQam, Scheme};
pub use fep::{clopper_pearson, estimate_fep, frame_inputs, FepOptions, FepReport, CHUNK_FRAMES};
pub use search::{
    build_codec, default_ladder, polar_ladder, rate_search, rm_ladder, rm_order, search_scheme,
    AeTrainer, Candidate, SearchOptions, SearchOutcome, Trial,
};
pub use sweep::{
    ladder_for, ordering_violations, read_csv, sweep, write_csv, RatePoint, SweepOptions,
    SweepResult, CSV_HEADER,
};
