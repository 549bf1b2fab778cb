use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gfscma::config::{RunConfig, Variant};
use gfscma::evalkit::SweepAxis;
use gfscma::scma::Codebook;
use gfscma_cli::*;

fn tiny_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.cfg")
}

fn tiny() -> RunConfig {
    resolve_config(tiny_path().to_str().unwrap(), None).unwrap()
}

fn sweep_opts(axis: SweepAxis) -> SweepOptions {
    SweepOptions {
        axis,
        values: None,
        snr_db: 15.0,
        frames: Some(50),
        workers: 1,
    }
}

#[test]
fn pretraining_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolve_config(tiny_path().to_str().unwrap(), Some(7)).unwrap();
    let a = cmd_pretrain(&cfg, &dir.path().join("a")).unwrap();
    let b = cmd_pretrain(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.checkpoint_digest, b.checkpoint_digest);
    assert_eq!(fs::read(&a.log).unwrap(), fs::read(&b.log).unwrap());
    let c = cmd_pretrain(
        &resolve_config(tiny_path().to_str().unwrap(), Some(8)).unwrap(),
        &dir.path().join("c"),
    )
    .unwrap();
    assert_ne!(a.checkpoint_digest, c.checkpoint_digest);
    let echo = fs::read_to_string(dir.path().join("a/config.cfg")).unwrap();
    assert!(echo.starts_with(&format!("# config_digest={} seed=7", cfg.digest())));
}

#[test]
fn kernel_constraint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(tiny_path())
        .unwrap()
        .replace("n_kernel_1 = 8", "n_kernel_1 = 4");
    let path = dir.path().join("bad.cfg");
    fs::write(&path, text).unwrap();
    let err = resolve_config(path.to_str().unwrap(), None).unwrap_err();
    assert_eq!(err.category(), "config");
    assert!(err.to_string().contains("n_kernel_1"));
}

#[test]
fn default_profile_is_accepted_with_four_periods() {
    let cfg = resolve_config("builtin:default", None).unwrap();
    assert_eq!(cfg.q(), 4);
    assert_eq!(
        (cfg.uaen.n_kernel_1, cfg.uaen.n_kernel_2, cfg.uaen.hidden_layers),
        (256, 32, 3)
    );
}

#[test]
fn preamble_only_warns_about_an_unused_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    let pre = cmd_pretrain(&cfg, &dir.path().join("pre")).unwrap();
    cfg.variant = Variant::PreambleOnly;
    let out = cmd_train(
        &cfg,
        &dir.path().join("po"),
        &TrainOptions {
            pretrained: Some(pre.checkpoint),
            resume: None,
        },
    )
    .unwrap();
    assert_eq!(out.warnings.len(), 1);
    assert!(out.warnings[0].contains("preamble-only"));
}

#[test]
fn incompatible_pretrained_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let pre = cmd_pretrain(&cfg, &dir.path().join("pre")).unwrap();
    let mut other = cfg.clone();
    other.uaen.n_kernel_1 = 9;
    let err = cmd_train(
        &other,
        &dir.path().join("t"),
        &TrainOptions {
            pretrained: Some(pre.checkpoint),
            resume: None,
        },
    )
    .unwrap_err();
    assert_eq!(err.category(), "checkpoint");
}

#[test]
fn resume_after_second_period_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.schedule.step2_periods = vec![1, 1, 1];
    let pre = cmd_pretrain(&cfg, &dir.path().join("pre")).unwrap();
    let opts = TrainOptions {
        pretrained: Some(pre.checkpoint.clone()),
        resume: None,
    };
    let full = cmd_train(&cfg, &dir.path().join("full"), &opts).unwrap();
    assert_eq!(full.period_checkpoints.len(), 3);
    let resumed = cmd_train(
        &cfg,
        &dir.path().join("resumed"),
        &TrainOptions {
            pretrained: None,
            resume: Some(full.period_checkpoints[1].clone()),
        },
    )
    .unwrap();
    assert_eq!(resumed.period_checkpoints.len(), 1);
    assert_eq!(
        fs::read(&full.period_checkpoints[2]).unwrap(),
        fs::read(&resumed.period_checkpoints[0]).unwrap()
    );
    assert_eq!(full.checkpoint_digest, resumed.checkpoint_digest);
    // A finished model carries no resume state.
    let err = cmd_train(
        &cfg,
        &dir.path().join("again"),
        &TrainOptions {
            pretrained: None,
            resume: Some(full.checkpoint),
        },
    )
    .unwrap_err();
    assert_eq!(err.category(), "checkpoint");
}

#[test]
fn sweeps_are_reproducible_and_cover_each_length() {
    let dir = tempfile::tempdir().unwrap();
    let mut ckpts = Vec::new();
    for l in [4usize, 8, 16, 32] {
        let mut cfg = tiny();
        cfg.system.slots = l;
        cfg.variant = Variant::NoPretrain;
        ckpts.push(
            cmd_train(&cfg, &dir.path().join(format!("l{l}")), &TrainOptions::default())
                .unwrap()
                .checkpoint,
        );
    }
    let cfg = tiny();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let reports = cmd_sweep(&cfg, &ckpts, &a, &sweep_opts(SweepAxis::DataLength)).unwrap();
    assert_eq!(reports.iter().map(|r| r.slots).collect::<Vec<_>>(), vec![4, 8, 16, 32]);
    cmd_sweep(&cfg, &ckpts, &b, &sweep_opts(SweepAxis::DataLength)).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 2 + 4);
    assert!(text.starts_with("# axis=data_length"));

    let err = cmd_sweep(&cfg, &[], &dir.path().join("c.csv"), &sweep_opts(SweepAxis::Snr)).unwrap_err();
    assert_eq!(err.category(), "usage");
}

#[test]
fn dumped_codebook_parses_back() {
    let text = cmd_dump(&tiny(), DumpTarget::Codebook, None).unwrap();
    assert_eq!(Codebook::parse(&text).unwrap(), Codebook::default_set());
}

#[test]
fn dumped_preambles_have_unit_norm() {
    let text = cmd_dump(&tiny(), DumpTarget::Preambles, None).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert_eq!(r.len(), 8);
        assert!((r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    assert!(text.contains("# max_offdiag_abs_corr="));
}

#[test]
fn binary_reports_errors_with_a_category() {
    let bin = env!("CARGO_BIN_EXE_gfscma");
    let out = Command::new(bin).args(["dump", "nothing"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[usage]: unknown dump target"), "{err}");

    let out = Command::new(bin)
        .args(["--config", "builtin:nope", "dump", "codebook"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));

    let out = Command::new(bin)
        .args(["--config", tiny_path().to_str().unwrap(), "dump", "model-summary"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout)
        .lines()
        .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["N", "6"]));
}
