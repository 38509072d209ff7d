use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fbl_core::channel::derive_seed;
use fbl_core::cnn_ae::{build_model, load_checkpoint, save_checkpoint, train, AeModel};
use fbl_core::harness::{
    estimate_fep, ladder_for, ordering_violations, search_scheme, sweep, write_csv, AeCodec,
    FepOptions, FepReport, RatePoint, Scheme, SearchOptions, SweepOptions,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_snr_grid, ExperimentConfig};
use crate::{Cli, Command, Status};

const TAG_TRAIN_EVAL: u64 = 0x40;
const TAG_TEST_EVAL: u64 = 0x41;

/// Everything needed to rerun a command.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: Option<String>,
    config: Option<&'a ExperimentConfig>,
    seed: u64,
    args: Value,
    outputs: Vec<String>,
    results: Value,
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(m)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> Option<PathBuf> {
    cli_out
        .clone()
        .or_else(|| cfg.map(|c| c.output.dir.clone()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_points(points: &[RatePoint], dir: Option<&Path>, name: &str) -> Result<Vec<String>> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            let f = fs::File::create(&path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            write_csv(points, std::io::BufWriter::new(f))?;
            Ok(vec![name.to_string()])
        }
        None => {
            write_csv(points, std::io::stdout().lock())?;
            Ok(vec![])
        }
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    let seed = cli.seed;
    let workers = cli.workers;
    match cli.command {
        Command::Theory { n, eps, snr } => {
            let grid = parse_snr_grid(&snr)?;
            let points = grid
                .iter()
                .map(|&s| RatePoint::theory(n, eps, s))
                .collect::<fbl_core::Result<Vec<_>>>()?;
            let dir = cli.out.as_deref();
            if let Some(d) = dir {
                create_dir(d)?;
            }
            let outputs = write_points(&points, dir, "theory.csv")?;
            if let Some(d) = dir {
                let args = json!({ "n": n, "eps": eps, "snr": snr });
                let m = RunManifest {
                    command: "theory",
                    version: env!("CARGO_PKG_VERSION"),
                    config_hash: None,
                    config: None,
                    seed: 0,
                    args,
                    outputs,
                    results: json!({ "points": points.len() }),
                };
                write_manifest(d, &m)?;
            }
            Ok(Status::Ok)
        }
        Command::Train { config } => cmd_train(&config, seed, &cli.out, workers),
        Command::Eval {
            checkpoint,
            snr,
            frames,
            eps,
        } => cmd_eval(
            &checkpoint,
            snr,
            frames,
            eps,
            seed.unwrap_or(0),
            &cli.out,
            workers,
        ),
        Command::Sweep { config } => {
            let cfg = load_config(&config, seed)?;
            let opts = SweepOptions {
                n: cfg.n,
                epsilon: cfg.epsilon,
                snrs_db: cfg.sweep.snrs_db.clone(),
                schemes: cfg.sweep.schemes.clone(),
                frames: cfg.sweep.frames,
                seed: cfg.seed,
                workers,
                trainer: Some(cfg.trainer()),
                ae_max_rate: cfg.sweep.ae_max_rate,
            };
            let dir = out_dir(&cli.out, Some(&cfg));
            run_sweep(
                "sweep",
                &opts,
                Some(&cfg),
                json!({ "config": config }),
                dir.as_deref(),
            )
        }
        Command::Baseline {
            n,
            eps,
            snr,
            frames,
            schemes,
        } => {
            if let Some(s) = schemes
                .iter()
                .find(|s| !matches!(s, Scheme::PolarQam | Scheme::RmQam))
            {
                bail!("baseline runs polar_qam and rm_qam only, not {s}");
            }
            let mut all = vec![Scheme::Theory];
            all.extend(schemes.iter().copied());
            let opts = SweepOptions {
                n,
                epsilon: eps,
                snrs_db: parse_snr_grid(&snr)?,
                schemes: all,
                frames,
                seed: seed.unwrap_or(0),
                workers,
                trainer: None,
                ae_max_rate: None,
            };
            let args =
                json!({ "n": n, "eps": eps, "snr": snr, "frames": frames, "schemes": schemes });
            run_sweep("baseline", &opts, None, args, cli.out.as_deref())
        }
        Command::RateSearch {
            config,
            scheme,
            snr,
        } => {
            let cfg = load_config(&config, seed)?;
            if scheme == Scheme::Theory {
                bail!("the theory curve has no rate search; use `fbl theory`");
            }
            let snr_db = snr.unwrap_or(cfg.eval.snr_db);
            let so = SearchOptions {
                epsilon: cfg.epsilon,
                snr_db,
                frames: cfg.eval.frames,
                seed: cfg.seed,
                workers,
            };
            let trainer = cfg.trainer();
            let out = search_scheme(
                scheme,
                cfg.n,
                &ladder_for(scheme, cfg.n),
                &so,
                Some(&trainer),
            )?;
            eprintln!("{}", out.diagnostics());
            let point = RatePoint::from_search(scheme, cfg.n, cfg.epsilon, snr_db, &out);
            let dir = out_dir(&cli.out, Some(&cfg));
            if let Some(d) = &dir {
                create_dir(d)?;
            }
            let outputs = write_points(
                std::slice::from_ref(&point),
                dir.as_deref(),
                "rate_search.csv",
            )?;
            if let Some(d) = &dir {
                let m = RunManifest {
                    command: "rate-search",
                    version: env!("CARGO_PKG_VERSION"),
                    config_hash: Some(cfg.hash()),
                    config: Some(&cfg),
                    seed: cfg.seed,
                    args: json!({ "config": config, "scheme": scheme, "snr_db": snr_db }),
                    outputs,
                    results: json!({ "rate": point.rate, "meets_target": point.meets_target, "diagnostics": out.diagnostics() }),
                };
                write_manifest(d, &m)?;
            }
            Ok(if point.meets_target {
                Status::Ok
            } else {
                Status::SoftFail
            })
        }
    }
}

fn run_sweep(
    command: &str,
    opts: &SweepOptions,
    cfg: Option<&ExperimentConfig>,
    args: Value,
    dir: Option<&Path>,
) -> Result<Status> {
    if let Some(d) = dir {
        create_dir(d)?;
    }
    let result = sweep(opts)?;
    for (scheme, snr, diag) in &result.diagnostics {
        log::info!("{scheme} at {snr} dB:\n{diag}");
    }
    let outputs = write_points(&result.points, dir, &format!("{command}.csv"))?;
    let violations = ordering_violations(&result.points);
    for v in &violations {
        eprintln!("ordering violation: {v}");
    }
    if let Some(d) = dir {
        let m = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: cfg.map(ExperimentConfig::hash),
            config: cfg,
            seed: opts.seed,
            args,
            outputs,
            results: json!({
                "points": result.points.len(),
                "ordering_violations": violations,
                "diagnostics": result.diagnostics.iter().map(|(s, snr, d)| json!({ "scheme": s, "snr_db": snr, "trials": d })).collect::<Vec<_>>(),
            }),
        };
        write_manifest(d, &m)?;
    }
    Ok(if violations.is_empty() {
        Status::Ok
    } else {
        Status::SoftFail
    })
}

fn fep_json(r: &FepReport) -> Value {
    serde_json::to_value(r).expect("report serializes")
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    cli_out: &Option<PathBuf>,
    workers: usize,
) -> Result<Status> {
    let cfg = load_config(config, seed)?;
    let dir = out_dir(cli_out, Some(&cfg)).expect("config provides a default directory");
    create_dir(&dir)?;
    let ae = cfg.ae_config()?;
    let tc = cfg.train_config();
    let mut model: AeModel<f32> = build_model(&ae)?;
    log::info!(
        "training {} parameters, K={} n={} k_mod={}",
        model.trainable_params(),
        ae.k,
        ae.n,
        ae.k_mod
    );
    let report = train(&mut model, &tc)?;

    save_checkpoint(&model, &dir.join("model.fblae"))?;
    let mut trace = std::io::BufWriter::new(fs::File::create(dir.join("loss.csv"))?);
    writeln!(trace, "step,loss")?;
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(trace, "{i},{l:e}")?;
    }
    trace.flush()?;

    let codec = AeCodec { model };
    let train_snr = ae.train_snr_db + tc.snr_offset_db;
    let train_fep = if train_snr.is_finite() {
        let fo = FepOptions::new(cfg.eval.frames, derive_seed(cfg.seed, TAG_TRAIN_EVAL))
            .with_workers(workers);
        Some(estimate_fep(&codec, train_snr, &fo)?)
    } else {
        None
    };
    let fo = FepOptions::new(cfg.eval.frames, derive_seed(cfg.seed, TAG_TEST_EVAL))
        .with_workers(workers);
    let test_fep = estimate_fep(&codec, cfg.eval.snr_db, &fo)?;
    println!(
        "test FEP at {} dB: {}/{} = {:.3e}, 95% CI [{:.3e}, {:.3e}]",
        cfg.eval.snr_db,
        test_fep.errors,
        test_fep.frames,
        test_fep.fep,
        test_fep.ci_low,
        test_fep.ci_high
    );

    let m = RunManifest {
        command: "train",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: Some(cfg.hash()),
        config: Some(&cfg),
        seed: cfg.seed,
        args: json!({ "config": config }),
        outputs: vec!["model.fblae".into(), "loss.csv".into()],
        results: json!({
            "steps": report.steps,
            "epochs_completed": report.epochs_completed,
            "final_loss": report.losses.last(),
            "train_snr_db": if train_snr.is_finite() { json!(train_snr) } else { json!("inf") },
            "train_fep": train_fep.as_ref().map(fep_json),
            "test_snr_db": cfg.eval.snr_db,
            "test_fep": fep_json(&test_fep),
        }),
    };
    write_manifest(&dir, &m)?;
    Ok(Status::Ok)
}

fn cmd_eval(
    checkpoint: &Path,
    snr: f64,
    frames: u64,
    eps: f64,
    seed: u64,
    cli_out: &Option<PathBuf>,
    workers: usize,
) -> Result<Status> {
    if !snr.is_finite() {
        bail!("evaluation SNR must be finite");
    }
    let model: AeModel<f32> = load_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let codec = AeCodec { model };
    let report = estimate_fep(
        &codec,
        snr,
        &FepOptions::new(frames, seed).with_workers(workers),
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(d) = cli_out {
        create_dir(d)?;
        let cfg = codec.model.config();
        let point = RatePoint {
            scheme: Scheme::CnnAe,
            snr_db: snr,
            n: cfg.n,
            epsilon: eps,
            rate: cfg.rate(),
            rcod: Some(cfg.code_rate().value()),
            kmod: Some(cfg.k_mod as u32),
            fep: Some(report.fep),
            ci_low: Some(report.ci_low),
            ci_high: Some(report.ci_high),
            frames: Some(report.frames),
            meets_target: report.meets(eps),
            seed: Some(seed),
        };
        let outputs = write_points(&[point], Some(d), "eval.csv")?;
        let m = RunManifest {
            command: "eval",
            version: env!("CARGO_PKG_VERSION"),
            config_hash: None,
            config: None,
            seed,
            args: json!({ "checkpoint": checkpoint, "snr_db": snr, "frames": frames, "eps": eps }),
            outputs,
            results: fep_json(&report),
        };
        write_manifest(d, &m)?;
    }
    Ok(Status::Ok)
}
