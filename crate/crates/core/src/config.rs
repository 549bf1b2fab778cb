//! Run configuration.
//!
//! Sectioned `key = value` text. Lists are comma separated. Every key is
//! optional and defaults to the built-in profile for `p_bar = 0.05`; unknown
//! sections or keys are rejected.
//!
//! ```text
//! [system]
//! n_users = 16
//! preamble_len = 8
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::airlink::ChannelMode;
use crate::error::{Error, Result};

pub const DEFAULT_PROFILE: &str = include_str!("../configs/default.cfg");
pub const HIGH_ACTIVITY_PROFILE: &str = include_str!("../configs/high-activity.cfg");
pub const SCALED_PROFILE: &str = include_str!("../configs/scaled.cfg");

/// Training and ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Pre-trained UAEN, fine-tuned end to end.
    Full,
    /// UAEN starts from random init in the end-to-end step.
    NoPretrain,
    /// Pre-trained UAEN held fixed during the end-to-end step.
    FrozenUaen,
    /// No UAEN; the AUDN sees only the preamble observation.
    PreambleOnly,
    /// Fully connected UAEN with a matched parameter budget.
    FcUaen,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoPretrain,
        Variant::FrozenUaen,
        Variant::PreambleOnly,
        Variant::FcUaen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPretrain => "no-pretrain",
            Variant::FrozenUaen => "frozen-uaen",
            Variant::PreambleOnly => "preamble-only",
            Variant::FcUaen => "fc-uaen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn has_uaen(self) -> bool {
        self != Variant::PreambleOnly
    }

    /// Whether the end-to-end step expects pre-trained UAEN weights.
    pub fn uses_pretraining(self) -> bool {
        matches!(self, Variant::Full | Variant::FrozenUaen | Variant::FcUaen)
    }
}

/// ADER normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AderDenominator {
    /// `N * frames`.
    #[default]
    AllUsers,
    /// Number of truly active users.
    ActiveUsers,
}

impl AderDenominator {
    pub fn name(self) -> &'static str {
        match self {
            AderDenominator::AllUsers => "all",
            AderDenominator::ActiveUsers => "active",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub n_users: usize,
    pub codebooks: usize,
    pub codebook_size: usize,
    pub preamble_len: usize,
    pub resources: usize,
    pub slots: usize,
    pub p_bar: f64,
    /// `None` selects the built-in codebook set.
    pub codebook_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    pub mode: ChannelMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UaenSection {
    pub n_kernel_1: usize,
    pub n_kernel_2: usize,
    pub hidden_layers: usize,
    pub fc_hidden_layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudnSection {
    pub hidden_layers: usize,
    pub width: usize,
    pub p_drop: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub batch_size: usize,
    pub step1_lr: f64,
    /// Epochs at `step1_lr`, then at `step1_lr / 10`.
    pub step1_epochs: (usize, usize),
    pub step2_lr: f64,
    /// Epochs per period; period `q` (1-based) runs at `step2_lr / 10^(q-1)`.
    pub step2_periods: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub step1_samples: usize,
    pub step2_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub snr_grid: Vec<f64>,
    pub denominator: AderDenominator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub channel: ChannelConfig,
    pub uaen: UaenSection,
    pub audn: AudnSection,
    pub gamma: f64,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig {
                n_users: 64,
                codebooks: 6,
                codebook_size: 4,
                preamble_len: 16,
                resources: 4,
                slots: 16,
                p_bar: 0.05,
                codebook_file: None,
            },
            channel: ChannelConfig {
                snr_lo_db: 15.0,
                snr_hi_db: 20.0,
                mode: ChannelMode::Awgn,
            },
            uaen: UaenSection {
                n_kernel_1: 256,
                n_kernel_2: 32,
                hidden_layers: 3,
                fc_hidden_layers: 6,
            },
            audn: AudnSection {
                hidden_layers: 10,
                width: 320,
                p_drop: 0.1,
            },
            gamma: 0.4,
            schedule: ScheduleConfig {
                batch_size: 20,
                step1_lr: 0.01,
                step1_epochs: (15, 10),
                step2_lr: 0.01,
                step2_periods: vec![10, 10, 10, 10],
            },
            data: DataConfig {
                step1_samples: 250_000,
                step2_samples: 480_000,
                validation_samples: 60_000,
                test_samples: 60_000,
            },
            eval: EvalConfig {
                snr_grid: (0..=10).map(|i| 2.0 * i as f64).collect(),
                denominator: AderDenominator::AllUsers,
            },
            variant: Variant::Full,
            seed: 0,
        }
    }
}

fn field_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| field_err(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn fmt_list<T: std::fmt::Debug>(values: &[T]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Named built-in profile: `default`, `high-activity` or `scaled`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "default" => Self::parse(DEFAULT_PROFILE),
            "high-activity" => Self::parse(HIGH_ACTIVITY_PROFILE),
            "scaled" => Self::parse(SCALED_PROFILE),
            other => Err(Error::Config(format!(
                "unknown built-in profile `{other}` (expected default, high-activity or scaled)"
            ))),
        }
    }

    /// Loads a file, or a built-in profile when `source` is `builtin:<name>`.
    pub fn load(source: &str) -> Result<Self> {
        if let Some(name) = source.strip_prefix("builtin:") {
            return Self::builtin(name);
        }
        let path = Path::new(source);
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative codebook paths resolve against the config file.
        if let (Some(file), Some(dir)) = (&cfg.system.codebook_file, path.parent()) {
            if file.is_relative() {
                cfg.system.codebook_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(&section, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match k {
            "system.n_users" => self.system.n_users = parse_num(k, v)?,
            "system.codebooks" => self.system.codebooks = parse_num(k, v)?,
            "system.codebook_size" => self.system.codebook_size = parse_num(k, v)?,
            "system.preamble_len" => self.system.preamble_len = parse_num(k, v)?,
            "system.resources" => self.system.resources = parse_num(k, v)?,
            "system.slots" => self.system.slots = parse_num(k, v)?,
            "system.p_bar" => self.system.p_bar = parse_num(k, v)?,
            "system.codebook" => self.system.codebook_file = if v == "default" { None } else { Some(PathBuf::from(v)) },
            "channel.snr_lo_db" => self.channel.snr_lo_db = parse_num(k, v)?,
            "channel.snr_hi_db" => self.channel.snr_hi_db = parse_num(k, v)?,
            "channel.mode" => {
                self.channel.mode =
                    ChannelMode::parse(v).ok_or_else(|| field_err(k, format!("unknown channel mode `{v}`")))?
            }
            "uaen.n_kernel_1" => self.uaen.n_kernel_1 = parse_num(k, v)?,
            "uaen.n_kernel_2" => self.uaen.n_kernel_2 = parse_num(k, v)?,
            "uaen.hidden_layers" => self.uaen.hidden_layers = parse_num(k, v)?,
            "uaen.fc_hidden_layers" => self.uaen.fc_hidden_layers = parse_num(k, v)?,
            "audn.hidden_layers" => self.audn.hidden_layers = parse_num(k, v)?,
            "audn.width" => self.audn.width = parse_num(k, v)?,
            "audn.p_drop" => self.audn.p_drop = parse_num(k, v)?,
            "detect.gamma" => self.gamma = parse_num(k, v)?,
            "schedule.batch_size" => self.schedule.batch_size = parse_num(k, v)?,
            "schedule.step1_lr" => self.schedule.step1_lr = parse_num(k, v)?,
            "schedule.step1_epochs" => {
                let e: Vec<usize> = parse_list(k, v)?;
                let [a, b] = e[..] else {
                    return Err(field_err(k, "expected two epoch counts `T1, T2`"));
                };
                self.schedule.step1_epochs = (a, b);
            }
            "schedule.step2_lr" => self.schedule.step2_lr = parse_num(k, v)?,
            "schedule.step2_periods" => self.schedule.step2_periods = parse_list(k, v)?,
            "data.step1_samples" => self.data.step1_samples = parse_num(k, v)?,
            "data.step2_samples" => self.data.step2_samples = parse_num(k, v)?,
            "data.validation_samples" => self.data.validation_samples = parse_num(k, v)?,
            "data.test_samples" => self.data.test_samples = parse_num(k, v)?,
            "eval.snr_grid" => self.eval.snr_grid = parse_list(k, v)?,
            "eval.ader_denominator" => {
                self.eval.denominator = match v {
                    "all" => AderDenominator::AllUsers,
                    "active" => AderDenominator::ActiveUsers,
                    _ => return Err(field_err(k, format!("expected `all` or `active`, got `{v}`"))),
                }
            }
            "run.variant" => {
                self.variant = Variant::parse(v).ok_or_else(|| field_err(k, format!("unknown variant `{v}`")))?
            }
            "run.seed" => self.seed = parse_num(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}` in section [{section}]"))),
        }
        Ok(())
    }

    /// Cross-field checks. Messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let positive = [
            ("system.n_users", s.n_users),
            ("system.codebooks", s.codebooks),
            ("system.preamble_len", s.preamble_len),
            ("system.resources", s.resources),
            ("system.slots", s.slots),
            ("uaen.n_kernel_2", self.uaen.n_kernel_2),
            ("uaen.hidden_layers", self.uaen.hidden_layers),
            ("uaen.fc_hidden_layers", self.uaen.fc_hidden_layers),
            ("audn.width", self.audn.width),
            ("schedule.batch_size", self.schedule.batch_size),
            ("data.validation_samples", self.data.validation_samples),
            ("data.test_samples", self.data.test_samples),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(field_err(key, "must be at least 1"));
            }
        }
        if !s.codebook_size.is_power_of_two() || s.codebook_size < 2 {
            return Err(field_err("system.codebook_size", "must be a power of two >= 2"));
        }
        if !(0.0..=1.0).contains(&s.p_bar) {
            return Err(field_err("system.p_bar", "must lie in [0, 1]"));
        }
        if self.uaen.n_kernel_1 <= self.uaen.n_kernel_2 {
            return Err(field_err(
                "uaen.n_kernel_1",
                format!(
                    "n_kernel_1 ({}) must exceed n_kernel_2 ({})",
                    self.uaen.n_kernel_1, self.uaen.n_kernel_2
                ),
            ));
        }
        if self.audn.width != 5 * s.n_users {
            return Err(field_err(
                "audn.width",
                format!("must equal 5 * n_users = {}, got {}", 5 * s.n_users, self.audn.width),
            ));
        }
        if !(0.0..1.0).contains(&self.audn.p_drop) {
            return Err(field_err("audn.p_drop", "must lie in [0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(field_err("detect.gamma", "must lie in (0, 1)"));
        }
        if !(self.channel.snr_lo_db <= self.channel.snr_hi_db) {
            return Err(field_err("channel.snr_lo_db", "must not exceed snr_hi_db"));
        }
        for (key, lr) in [
            ("schedule.step1_lr", self.schedule.step1_lr),
            ("schedule.step2_lr", self.schedule.step2_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(field_err(key, "learning rate must be positive"));
            }
        }
        if self.schedule.step2_periods.is_empty() {
            return Err(field_err("schedule.step2_periods", "needs at least one period"));
        }
        if self.eval.snr_grid.is_empty() || self.eval.snr_grid.iter().any(|v| !v.is_finite()) {
            return Err(field_err("eval.snr_grid", "needs at least one finite SNR"));
        }
        Ok(())
    }

    /// Number of end-to-end learning-rate periods.
    pub fn q(&self) -> usize {
        self.schedule.step2_periods.len()
    }

    /// Canonical text form. Parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let s = &self.system;
        let mut o = String::new();
        let _ = writeln!(o, "[system]");
        let _ = writeln!(o, "n_users = {}", s.n_users);
        let _ = writeln!(o, "codebooks = {}", s.codebooks);
        let _ = writeln!(o, "codebook_size = {}", s.codebook_size);
        let _ = writeln!(o, "preamble_len = {}", s.preamble_len);
        let _ = writeln!(o, "resources = {}", s.resources);
        let _ = writeln!(o, "slots = {}", s.slots);
        let _ = writeln!(o, "p_bar = {:?}", s.p_bar);
        let cb = s
            .codebook_file
            .as_ref()
            .map_or_else(|| "default".to_string(), |p| p.display().to_string());
        let _ = writeln!(o, "codebook = {cb}");
        let _ = writeln!(o, "\n[channel]");
        let _ = writeln!(o, "snr_lo_db = {:?}", self.channel.snr_lo_db);
        let _ = writeln!(o, "snr_hi_db = {:?}", self.channel.snr_hi_db);
        let _ = writeln!(o, "mode = {}", self.channel.mode.name());
        let _ = writeln!(o, "\n[uaen]");
        let _ = writeln!(o, "n_kernel_1 = {}", self.uaen.n_kernel_1);
        let _ = writeln!(o, "n_kernel_2 = {}", self.uaen.n_kernel_2);
        let _ = writeln!(o, "hidden_layers = {}", self.uaen.hidden_layers);
        let _ = writeln!(o, "fc_hidden_layers = {}", self.uaen.fc_hidden_layers);
        let _ = writeln!(o, "\n[audn]");
        let _ = writeln!(o, "hidden_layers = {}", self.audn.hidden_layers);
        let _ = writeln!(o, "width = {}", self.audn.width);
        let _ = writeln!(o, "p_drop = {:?}", self.audn.p_drop);
        let _ = writeln!(o, "\n[detect]");
        let _ = writeln!(o, "gamma = {:?}", self.gamma);
        let _ = writeln!(o, "\n[schedule]");
        let _ = writeln!(o, "batch_size = {}", self.schedule.batch_size);
        let _ = writeln!(o, "step1_lr = {:?}", self.schedule.step1_lr);
        let _ = writeln!(
            o,
            "step1_epochs = {}, {}",
            self.schedule.step1_epochs.0, self.schedule.step1_epochs.1
        );
        let _ = writeln!(o, "step2_lr = {:?}", self.schedule.step2_lr);
        let _ = writeln!(o, "step2_periods = {}", fmt_list(&self.schedule.step2_periods));
        let _ = writeln!(o, "\n[data]");
        let _ = writeln!(o, "step1_samples = {}", self.data.step1_samples);
        let _ = writeln!(o, "step2_samples = {}", self.data.step2_samples);
        let _ = writeln!(o, "validation_samples = {}", self.data.validation_samples);
        let _ = writeln!(o, "test_samples = {}", self.data.test_samples);
        let _ = writeln!(o, "\n[eval]");
        let _ = writeln!(o, "snr_grid = {}", fmt_list(&self.eval.snr_grid));
        let _ = writeln!(o, "ader_denominator = {}", self.eval.denominator.name());
        let _ = writeln!(o, "\n[run]");
        let _ = writeln!(o, "variant = {}", self.variant.name());
        let _ = writeln!(o, "seed = {}", self.seed);
        o
    }

    /// SHA-256 of the canonical text with the seed line removed.
    pub fn digest(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("seed = "))
            .map(|l| format!("{l}\n"))
            .collect();
        sha256_hex(text.as_bytes())
    }

    /// Digest of the fields that fix parameter names and shapes. Checkpoints
    /// carry it so incompatible weights are rejected before loading.
    pub fn model_digest(&self) -> String {
        let s = &self.system;
        let key = format!(
            "N={} J={} M={} Kp={} Kd={} L={} k1={} k2={} Lh={} Lh_fc={} Lg={} width={}",
            s.n_users,
            s.codebooks,
            s.codebook_size,
            s.preamble_len,
            s.resources,
            s.slots,
            self.uaen.n_kernel_1,
            self.uaen.n_kernel_2,
            self.uaen.hidden_layers,
            self.uaen.fc_hidden_layers,
            self.audn.hidden_layers,
            self.audn.width
        );
        sha256_hex(key.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let d = RunConfig::builtin("default").unwrap();
        assert_eq!(d, RunConfig::default());
        let h = RunConfig::builtin("high-activity").unwrap();
        assert_eq!((h.uaen.n_kernel_1, h.uaen.n_kernel_2, h.system.slots), (512, 64, 32));
        assert_eq!(h.system.p_bar, 0.1);
        let s = RunConfig::builtin("scaled").unwrap();
        assert_eq!((s.system.n_users, s.system.preamble_len, s.system.slots), (16, 8, 8));
        assert_eq!(s.audn.width, 80);
        assert!(RunConfig::builtin("nope").is_err());
    }

    #[test]
    fn text_round_trip() {
        for name in ["default", "high-activity", "scaled"] {
            let cfg = RunConfig::builtin(name).unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("[system]\nn_user = 4\n").unwrap_err();
        assert!(err.to_string().contains("n_user"), "{err}");
        assert!(RunConfig::parse("[sys]\nn_users = 4\n").is_err());
        assert!(RunConfig::parse("[system]\nn_users 4\n").is_err());
    }

    #[test]
    fn kernel_order_enforced() {
        let err = RunConfig::parse("[uaen]\nn_kernel_1 = 32\nn_kernel_2 = 32\n").unwrap_err();
        assert!(err.to_string().contains("n_kernel_1"), "{err}");
    }

    #[test]
    fn width_must_be_five_n() {
        let err = RunConfig::parse("[audn]\nwidth = 300\n").unwrap_err();
        assert!(err.to_string().contains("audn.width"), "{err}");
    }

    #[test]
    fn digest_ignores_seed_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(a.digest(), b.digest());
        b.gamma = 0.5;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.model_digest(), b.model_digest());
        b.system.slots = 8;
        assert_ne!(a.model_digest(), b.model_digest());
    }
}
