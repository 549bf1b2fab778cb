//! Command implementations behind the `gfscma` binary.
//!
//! Every command writes its outputs into a directory and returns the paths
//! it produced. Checkpoints carry a metadata block (digests, seed, variant,
//! stage and the full config text) in the checkpoint header's digest field,
//! so a checkpoint alone is enough to rebuild its model.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use gfscma::config::{RunConfig, Variant};
use gfscma::evalkit::{self, SweepAxis, SweepModel, SweepSpec};
use gfscma::models::{cross_correlation, model_summary, Autoencoder};
use gfscma::training::{self, DataSource, Progress};
use gfscma::Error as CoreError;
use gfscma_nn::{checkpoint_bytes, read_checkpoint, ParamRole, ParamStore};

/// Failure categories printed as `error[<category>]`.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) => "io",
            CliError::Internal(_) => "internal",
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::Codebook(_) => CliError::Config(msg),
            CoreError::InvalidArgument(_) | CoreError::Shape { .. } => CliError::Usage(msg),
            CoreError::Incompatible(_) => CliError::Checkpoint(msg),
            CoreError::NonFinite(_) => CliError::Numeric(msg),
            CoreError::Io(_) => CliError::Io(msg),
            CoreError::Nn(inner) => inner.into(),
        }
    }
}

impl From<gfscma_nn::NnError> for CliError {
    fn from(e: gfscma_nn::NnError) -> Self {
        use gfscma_nn::NnError;
        let msg = e.to_string();
        match e {
            NnError::Checkpoint(_) => CliError::Checkpoint(msg),
            NnError::NonFinite(_) => CliError::Numeric(msg),
            NnError::Io(_) => CliError::Io(msg),
            _ => CliError::Internal(msg),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Header metadata stored with every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub stage: String,
    pub variant: Variant,
    pub seed: u64,
    pub model_digest: String,
    pub config_digest: String,
    pub config_text: String,
}

const META_SEPARATOR: &str = "---\n";

impl CheckpointMeta {
    pub fn new(stage: &str, cfg: &RunConfig, variant: Variant) -> Self {
        Self {
            stage: stage.to_string(),
            variant,
            seed: cfg.seed,
            model_digest: cfg.model_digest(),
            config_digest: cfg.digest(),
            config_text: cfg.to_text(),
        }
    }

    pub fn encode(&self) -> String {
        format!(
            "stage={}\nvariant={}\nseed={}\nmodel_digest={}\nconfig_digest={}\n{META_SEPARATOR}{}",
            self.stage,
            self.variant.name(),
            self.seed,
            self.model_digest,
            self.config_digest,
            self.config_text
        )
    }

    pub fn decode(text: &str) -> Result<Self> {
        let bad = |what: &str| CliError::Checkpoint(format!("checkpoint metadata: {what}"));
        let (head, config_text) = text
            .split_once(META_SEPARATOR)
            .ok_or_else(|| bad("missing config block"))?;
        let mut fields = std::collections::BTreeMap::new();
        for line in head.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed line"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
        Ok(Self {
            stage: get("stage")?.to_string(),
            variant: Variant::parse(get("variant")?).ok_or_else(|| bad("unknown variant"))?,
            seed: get("seed")?.parse().map_err(|_| bad("bad seed"))?,
            model_digest: get("model_digest")?.to_string(),
            config_digest: get("config_digest")?.to_string(),
            config_text: config_text.to_string(),
        })
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text).map_err(|e| CliError::Checkpoint(format!("embedded config: {e}")))
    }
}

/// A checkpoint read from disk, with the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub store: ParamStore,
    pub digest: String,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (header, store) =
        read_checkpoint(&bytes[..]).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(LoadedCheckpoint {
        meta: CheckpointMeta::decode(&header)?,
        store,
        digest: file_digest(&bytes),
    })
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, store: &ParamStore) -> Result<String> {
    let bytes = checkpoint_bytes(&meta.encode(), store);
    fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    Ok(file_digest(&bytes))
}

/// Short SHA-256 of a byte string (first 16 hex digits).
pub fn file_digest(bytes: &[u8]) -> String {
    gfscma::config::sha256_hex(bytes)[..16].to_string()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Loads `--config` and applies the `--seed` override.
pub fn resolve_config(source: &str, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(source)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_config_echo(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let path = dir.join("config.cfg");
    let text = format!("# config_digest={} seed={}\n{}", cfg.digest(), cfg.seed, cfg.to_text());
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn write_log(path: &Path, cfg: &RunConfig, stage: &str, rows: &[training::LossReport]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    training::write_log(BufWriter::new(f), cfg, stage, rows).map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub checkpoint: PathBuf,
    pub checkpoint_digest: String,
    pub log: PathBuf,
}

/// Step 1: pre-trains the UAEN and writes `pretrain.ckpt`,
/// `pretrain_log.csv` and `config.cfg` into `out`.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainOutput> {
    let variant = if cfg.variant.has_uaen() {
        cfg.variant
    } else {
        Variant::Full
    };
    ensure_dir(out)?;
    write_config_echo(out, cfg)?;
    let source = DataSource::from_config(cfg)?;
    let mut store = ParamStore::new();
    let ae = Autoencoder::build(cfg, variant, cfg.seed, &mut store)?;
    let rows = training::pretrain_uaen(cfg, &ae, &mut store, &source)?;
    let log = out.join("pretrain_log.csv");
    write_log(&log, cfg, "pretrain", &rows)?;
    let checkpoint = out.join("pretrain.ckpt");
    let checkpoint_digest = save_checkpoint(&checkpoint, &CheckpointMeta::new("pretrain", cfg, variant), &store)?;
    Ok(PretrainOutput {
        checkpoint,
        checkpoint_digest,
        log,
    })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Step-1 checkpoint supplying UAEN weights.
    pub pretrained: Option<PathBuf>,
    /// Period checkpoint of an interrupted run.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub checkpoint_digest: String,
    pub period_checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub warnings: Vec<String>,
}

fn check_compatible(meta: &CheckpointMeta, cfg: &RunConfig, path: &Path) -> Result<()> {
    if meta.model_digest != cfg.model_digest() {
        return Err(CliError::Checkpoint(format!(
            "{}: model digest {} does not match the config's {}",
            path.display(),
            meta.model_digest,
            cfg.model_digest()
        )));
    }
    Ok(())
}

/// Copies every `uaen.` tensor (weights and running statistics) from `src`.
fn copy_uaen(src: &ParamStore, dst: &mut ParamStore) -> Result<()> {
    let names: Vec<String> = dst
        .iter()
        .filter(|p| p.name.starts_with("uaen.") && p.role != ParamRole::Snapshot)
        .map(|p| p.name.clone())
        .collect();
    for name in names {
        let from = src
            .id(&name)
            .ok_or_else(|| CliError::Checkpoint(format!("pre-trained checkpoint lacks `{name}`")))?;
        let value = src.value(from).clone();
        let to = dst.require(&name)?;
        if dst.value(to).shape() != value.shape() {
            return Err(CliError::Checkpoint(format!(
                "pre-trained `{name}` has the wrong shape"
            )));
        }
        *dst.value_mut(to) = value;
    }
    Ok(())
}

/// Step 2 for the configured variant. Writes `train_period{q}.ckpt` after
/// each period, `model.ckpt` at the end, `train_log.csv` and `config.cfg`.
///
/// Variants that expect a pre-trained UAEN run step 1 inline when no
/// checkpoint is given. The preamble-only and no-pretrain variants ignore a
/// given checkpoint with a warning.
pub fn cmd_train(cfg: &RunConfig, out: &Path, opts: &TrainOptions) -> Result<TrainOutput> {
    ensure_dir(out)?;
    write_config_echo(out, cfg)?;
    let variant = cfg.variant;
    let source = DataSource::from_config(cfg)?;
    let mut warnings = Vec::new();
    let mut log_rows = Vec::new();

    let (ae, mut store) = if let Some(path) = &opts.resume {
        let ck = load_checkpoint(path)?;
        check_compatible(&ck.meta, cfg, path)?;
        if ck.meta.variant != variant || ck.meta.seed != cfg.seed || ck.meta.config_digest != cfg.digest() {
            return Err(CliError::Checkpoint(format!(
                "{}: resume checkpoint was written by a different config, seed or variant",
                path.display()
            )));
        }
        if Progress::read(&ck.store).is_none() {
            return Err(CliError::Checkpoint(format!(
                "{}: not a period checkpoint",
                path.display()
            )));
        }
        let ae = Autoencoder::attach(cfg, variant, &ck.store)?;
        (ae, ck.store)
    } else {
        let mut store = ParamStore::new();
        let ae = Autoencoder::build(cfg, variant, cfg.seed, &mut store)?;
        match (&opts.pretrained, variant.uses_pretraining()) {
            (Some(path), true) => {
                let ck = load_checkpoint(path)?;
                check_compatible(&ck.meta, cfg, path)?;
                copy_uaen(&ck.store, &mut store)?;
            }
            (Some(_), false) => warnings.push(format!(
                "variant {} ignores the pre-trained UAEN checkpoint",
                variant.name()
            )),
            (None, true) => {
                let rows = training::pretrain_uaen(cfg, &ae, &mut store, &source)?;
                log_rows.extend(rows.into_iter().map(|mut r| {
                    r.split = if r.split == "train" {
                        "pretrain"
                    } else {
                        "pretrain_validation"
                    };
                    r
                }));
            }
            (None, false) => {}
        }
        (ae, store)
    };

    let meta = CheckpointMeta::new("train", cfg, variant);
    let mut period_checkpoints = Vec::new();
    let rows = training::train_end_to_end(cfg, &ae, &mut store, &source, &mut |q, s| {
        let path = out.join(format!("train_period{q}.ckpt"));
        save_checkpoint(&path, &meta, s).map_err(|e| CoreError::Io(std::io::Error::other(e.to_string())))?;
        period_checkpoints.push(path);
        Ok(())
    })?;
    log_rows.extend(rows);
    let log = out.join("train_log.csv");
    write_log(&log, cfg, "train", &log_rows)?;
    let checkpoint = out.join("model.ckpt");
    let checkpoint_digest = save_checkpoint(&checkpoint, &CheckpointMeta::new("final", cfg, variant), &store)?;
    Ok(TrainOutput {
        checkpoint,
        checkpoint_digest,
        period_checkpoints,
        log,
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub axis: SweepAxis,
    /// Defaults to the config's SNR grid for the SNR axis.
    pub values: Option<Vec<f64>>,
    /// SNR for the data-length and scheme axes.
    pub snr_db: f64,
    /// Frames per point; defaults to the config's test sample count.
    pub frames: Option<usize>,
    pub workers: usize,
}

/// Evaluates trained checkpoints and writes the results CSV to `out`.
/// Model architecture comes from each checkpoint; `cfg` supplies the test
/// seed, frame count and ADER denominator.
pub fn cmd_sweep(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    out: &Path,
    opts: &SweepOptions,
) -> Result<Vec<evalkit::AderReport>> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("sweep needs at least one --checkpoint".into()));
    }
    let mut models = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let ck = load_checkpoint(path)?;
        let model_cfg = ck.meta.config()?;
        let ae = Autoencoder::attach(&model_cfg, ck.meta.variant, &ck.store)?;
        models.push(SweepModel {
            scheme: ck.meta.variant.name().to_string(),
            cfg: model_cfg,
            ae,
            store: ck.store,
            checkpoint_digest: ck.digest,
        });
    }
    let values = match (&opts.values, opts.axis) {
        (Some(v), _) => v.clone(),
        (None, SweepAxis::Snr) => cfg.eval.snr_grid.clone(),
        (None, SweepAxis::DataLength) => {
            let mut ls: Vec<f64> = models.iter().map(|m| m.cfg.system.slots as f64).collect();
            ls.sort_by(f64::total_cmp);
            ls.dedup();
            ls
        }
        (None, SweepAxis::Scheme) => Vec::new(),
    };
    let spec = SweepSpec {
        axis: opts.axis,
        values,
        fixed_snr_db: opts.snr_db,
        frames: opts.frames.unwrap_or(cfg.data.test_samples),
        seed: cfg.seed,
        denominator: cfg.eval.denominator,
    };
    let reports = evalkit::sweep(&spec, &models, opts.workers)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let f = fs::File::create(out).map_err(|e| io_err(out, e))?;
    evalkit::write_results(BufWriter::new(f), &cfg.digest(), &spec, &reports).map_err(|e| io_err(out, e))?;
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DumpTarget {
    Codebook,
    Preambles,
    ModelSummary,
}

impl DumpTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "codebook" => Some(DumpTarget::Codebook),
            "preambles" => Some(DumpTarget::Preambles),
            "model-summary" => Some(DumpTarget::ModelSummary),
            _ => None,
        }
    }
}

/// Text artifact for `what`. Preambles and the model summary come from the
/// checkpoint if given, otherwise from a fresh initialization of `cfg`.
pub fn cmd_dump(cfg: &RunConfig, what: DumpTarget, checkpoint: Option<&Path>) -> Result<String> {
    if what == DumpTarget::Codebook {
        return Ok(DataSource::from_config(cfg)?.codebook().to_text());
    }
    let (cfg, ae, store) = match checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let model_cfg = ck.meta.config()?;
            let ae = Autoencoder::attach(&model_cfg, ck.meta.variant, &ck.store)?;
            (model_cfg, ae, ck.store)
        }
        None => {
            let mut store = ParamStore::new();
            let ae = Autoencoder::build(cfg, cfg.variant, cfg.seed, &mut store)?;
            (cfg.clone(), ae, store)
        }
    };
    match what {
        DumpTarget::ModelSummary => Ok(model_summary(&cfg, &ae, &store)),
        _ => {
            let packed = ae.pgn.packed(&store)?.0;
            let n = ae.dims.n_users;
            let (max, mean) = cross_correlation(&ae.pgn.preambles(&store)?, n);
            let mut text = format!(
                "# preambles: {n} rows of {} reals (re/im interleaved), config_digest={} seed={}\n",
                ae.dims.yp_width(),
                cfg.digest(),
                cfg.seed
            );
            for row in packed.chunks_exact(ae.dims.yp_width()) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                text.push_str(&cells.join(" "));
                text.push('\n');
            }
            text.push_str(&format!(
                "# max_offdiag_abs_corr={max:?}\n# mean_offdiag_abs_corr={mean:?}\n"
            ));
            Ok(text)
        }
    }
}
