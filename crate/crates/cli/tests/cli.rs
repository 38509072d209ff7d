use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use fbl_core::harness::{read_csv, Scheme, CSV_HEADER};
use fbl_core::theory::{db_to_linear, max_rate_fbl, FblParams, LogTerm};
use fbl_core::FepReport;

fn fbl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn theory_grid_to_stdout() {
    let o = fbl(&["theory", "--n", "128", "--eps", "1e-2", "--snr", "0:20:1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with(CSV_HEADER));
    let pts = read_csv(text.as_bytes()).unwrap();
    assert_eq!(pts.len(), 21);
    let p10 = pts.iter().find(|p| p.snr_db == 10.0).unwrap();
    let want = max_rate_fbl(
        FblParams::new(128, 1e-2).unwrap(),
        db_to_linear(10.0),
        LogTerm::UpperBound,
    )
    .unwrap();
    assert!((p10.rate - want).abs() <= 1e-9 * want);
    assert!(pts
        .iter()
        .all(|p| p.scheme == Scheme::Theory && p.fep.is_none()));
}

#[test]
fn theory_writes_csv_and_manifest_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbl(&[
        "theory",
        "--snr",
        "5,10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let pts = read_csv(std::fs::File::open(dir.path().join("theory.csv")).unwrap()).unwrap();
    assert_eq!(pts.len(), 2);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "theory");
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["theory", "--snr", ""][..],
        &["theory", "--snr", "5:1:1"],
        &["theory", "--eps", "0"],
        &["bogus"],
        &[
            "eval",
            "--checkpoint",
            "x.fblae",
            "--snr",
            "10",
            "--frames",
            "0",
        ],
    ] {
        let o = fbl(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(fbl(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_or_invalid_config_is_reported() {
    let o = fbl(&["train", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("/nonexistent/exp.toml"),
        "{}",
        stderr(&o)
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nblocklength = 8\n");
    let o = fbl(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("blocklength"), "{}", stderr(&o));
}

#[test]
fn smoke_training_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| -> PathBuf {
        let out = dir.path().join(name);
        let start = Instant::now();
        let o = fbl(&[
            "train",
            "--config",
            smoke_config().to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(
            start.elapsed().as_secs_f64() < 60.0,
            "smoke training took {:?}",
            start.elapsed()
        );
        out
    };
    let a = run("a", "1");
    let b = run("b", "0");
    for f in ["model.fblae", "loss.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["seed"], 1);
    let test: FepReport = serde_json::from_value(m["results"]["test_fep"].clone()).unwrap();
    assert!(test.ci_low <= test.fep && test.fep <= test.ci_high);
    let trace = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(
        trace.lines().count(),
        1 + m["results"]["steps"].as_u64().unwrap() as usize
    );

    // A different seed gives a different model.
    let c = dir.path().join("c");
    let o = fbl(&[
        "train",
        "--config",
        smoke_config().to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(
        std::fs::read(a.join("model.fblae")).unwrap(),
        std::fs::read(c.join("model.fblae")).unwrap()
    );

    // Evaluation of the saved model.
    let ckpt = a.join("model.fblae");
    let eval = |seed: u64, frames: u64| -> FepReport {
        let o = fbl(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--snr",
            "4",
            "--frames",
            &frames.to_string(),
            "--seed",
            &seed.to_string(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        serde_json::from_str(&stdout(&o)).unwrap()
    };
    let mut narrower = 0;
    for seed in 0..4 {
        let r1 = eval(seed, 2_000);
        let r2 = eval(seed, 4_000);
        assert!(r1.ci_low <= r1.fep && r1.fep <= r1.ci_high);
        if r2.ci_high - r2.ci_low < r1.ci_high - r1.ci_low {
            narrower += 1;
        }
    }
    assert!(
        narrower >= 3,
        "doubling frames narrowed the interval in only {narrower} of 4 runs"
    );

    let e = dir.path().join("e");
    let o = fbl(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--snr",
        "10",
        "--frames",
        "1000",
        "--out",
        e.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let pts = read_csv(std::fs::File::open(e.join("eval.csv")).unwrap()).unwrap();
    assert_eq!(
        (pts[0].scheme, pts[0].n, pts[0].frames),
        (Scheme::CnnAe, 8, Some(1000))
    );
}

#[test]
fn eval_of_missing_checkpoint_fails() {
    let o = fbl(&[
        "eval",
        "--checkpoint",
        "/nonexistent/model.fblae",
        "--snr",
        "10",
        "--frames",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/model.fblae"));
}

#[test]
fn baseline_and_sweep_write_validated_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbl(&[
        "baseline",
        "--n",
        "8",
        "--snr",
        "10",
        "--frames",
        "10000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pts = read_csv(std::fs::File::open(dir.path().join("baseline.csv")).unwrap()).unwrap();
    assert_eq!(
        pts.iter().map(|p| p.scheme).collect::<Vec<_>>(),
        [Scheme::Theory, Scheme::PolarQam, Scheme::RmQam]
    );
    assert!(pts[1..].iter().all(|p| p.rate <= pts[0].rate));

    let out = dir.path().join("sweep");
    let o = fbl(&[
        "sweep",
        "--config",
        smoke_config().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pts = read_csv(std::fs::File::open(out.join("sweep.csv")).unwrap()).unwrap();
    assert!(pts.iter().any(|p| p.scheme == Scheme::Theory));

    let o = fbl(&["baseline", "--schemes", "cnn_ae", "--frames", "10000"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn soft_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // No polar code of length 8 survives -10 dB.
    let cfg = write_config(
        dir.path(),
        "n = 8\n[eval]\nframes = 10000\n[model]\nrcod = \"1/2\"\nk_mod = 2\n",
    );
    let out = dir.path().join("rs");
    let o = fbl(&[
        "rate-search",
        "--config",
        cfg.to_str().unwrap(),
        "--scheme",
        "polar_qam",
        "--snr",
        "-10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let pts = read_csv(std::fs::File::open(out.join("rate_search.csv")).unwrap()).unwrap();
    assert!(!pts[0].meets_target && pts[0].rate == 0.0);

    // An autoencoder given five optimizer steps loses to the polar baseline.
    let cfg = write_config(
        dir.path(),
        "n = 8\nseed = 3\n[model]\nm1 = 8\nm2 = 4\nkernel = 3\n[train]\nbatch_size = 50\ntrain_frames = 250\nepochs = 1\n\
         [sweep]\nsnrs_db = [12.0]\nschemes = [\"theory\", \"cnn_ae\", \"polar_qam\"]\nframes = 10000\nae_max_rate = 2.0\n",
    );
    let out = dir.path().join("sw");
    let o = fbl(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("ordering violation"));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(!m["results"]["ordering_violations"]
        .as_array()
        .unwrap()
        .is_empty());
}
