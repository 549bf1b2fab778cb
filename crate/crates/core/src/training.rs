//! Losses, synthetic data, UAEN pre-training and end-to-end training.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use gfscma_nn::{Adam, Mode, ParamRole, ParamStore, Tensor};

use crate::airlink::{
    add_awgn, sample_activity, sample_snr, snr_to_noise_var, superpose_data, ActivityPrior, ActivityVector,
    ChannelMode, ChannelRealization,
};
use crate::config::{RunConfig, Variant};
use crate::error::{check_len, invalid, Error, Result};
use crate::models::{threshold_decide, Autoencoder, Dims};
use crate::scma::{build_ctu, Codebook};
use crate::seeds::{domain, stream};

/// Predictions are clamped to `[PRED_CLAMP, 1 - PRED_CLAMP]` before logs.
pub const PRED_CLAMP: f64 = 1e-12;

/// Snapshot tag holding the best-validation parameters.
pub const BEST_TAG: &str = "best";
/// Snapshot entry recording end-to-end progress for resumption.
pub const PROGRESS_PARAM: &str = "meta/progress";

fn clamp_pred(p: f64) -> f64 {
    p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP)
}

/// Binary cross-entropy summed over users and averaged over the batch, with
/// its gradient with respect to the predictions. `targets` and `preds` are
/// `B x N`.
///
/// The gradient is evaluated at the clamped prediction.
pub fn bce(targets: &Tensor, preds: &Tensor) -> Result<(f64, Tensor)> {
    check_len("bce rows", targets.rows(), preds.rows())?;
    check_len("bce columns", targets.cols(), preds.cols())?;
    let batch = preds.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    for (&t, &p) in targets.data().iter().zip(preds.data()) {
        let pc = clamp_pred(p);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        grad.push((pc - t) / (pc * (1.0 - pc)) / batch);
    }
    Ok((loss / batch, Tensor::from_vec(preds.shape(), grad)?))
}

/// Training objective. Both steps use the same cross-entropy; they differ
/// only in which network produced the predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// UAEN output against the true activity.
    Pretrain,
    /// AUDN output against the true activity.
    EndToEnd,
}

impl Objective {
    pub fn evaluate(self, targets: &Tensor, preds: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            Objective::Pretrain | Objective::EndToEnd => bce(targets, preds),
        }
    }
}

/// Loss value only.
pub fn bce_loss(targets: &Tensor, preds: &Tensor) -> Result<f64> {
    Ok(bce(targets, preds)?.0)
}

/// Dataset partitions. Each has its own fixed activity samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Pretrain,
    Train,
    Validation,
    Test,
}

impl Split {
    fn id(self) -> u64 {
        match self {
            Split::Pretrain => 1,
            Split::Train => 2,
            Split::Validation => 3,
            Split::Test => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// One synthetic sample. The preamble observation depends on the current
/// PGN, so only its noise is stored; the data observation is complete.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub delta: ActivityVector,
    pub snr_db: f64,
    pub h: Vec<Complex64>,
    /// Packed `L x 2Kd` data observation including noise.
    pub y_d: Vec<f64>,
    /// Packed `2Kp` preamble noise.
    pub noise_p: Vec<f64>,
}

/// Seed-addressed sample generator.
///
/// Sample `i` of a split always has the same activity vector. Bits, SNR and
/// noise come from a stream keyed by `(split, epoch, i)`; training draws a
/// fresh epoch each pass while validation and test use epoch 0.
#[derive(Clone, Debug)]
pub struct DataSource {
    dims: Dims,
    prior: ActivityPrior,
    snr_range: (f64, f64),
    mode: ChannelMode,
    codebook: Codebook,
    seed: u64,
    sizes: [usize; 4],
}

impl DataSource {
    pub fn new(cfg: &RunConfig, codebook: Codebook) -> Result<Self> {
        if codebook.num_codebooks() != cfg.system.codebooks
            || codebook.size() != cfg.system.codebook_size
            || codebook.resources() != cfg.system.resources
        {
            return Err(Error::Config(format!(
                "codebook is {}x{}x{} but the config declares J={} M={} Kd={}",
                codebook.num_codebooks(),
                codebook.size(),
                codebook.resources(),
                cfg.system.codebooks,
                cfg.system.codebook_size,
                cfg.system.resources
            )));
        }
        Ok(Self {
            dims: Dims::from_config(cfg),
            prior: ActivityPrior::new(cfg.system.p_bar)?,
            snr_range: (cfg.channel.snr_lo_db, cfg.channel.snr_hi_db),
            mode: cfg.channel.mode,
            codebook,
            seed: cfg.seed,
            sizes: [
                cfg.data.step1_samples,
                cfg.data.step2_samples,
                cfg.data.validation_samples,
                cfg.data.test_samples,
            ],
        })
    }

    /// Loads the configured codebook (built-in unless a file is named).
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let cb = match &cfg.system.codebook_file {
            Some(path) => Codebook::load(path)?,
            None => Codebook::default_set(),
        };
        Self::new(cfg, cb)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self, split: Split) -> usize {
        self.sizes[split.id() as usize - 1]
    }

    pub fn activity(&self, split: Split, index: usize) -> ActivityVector {
        let mut rng = stream(self.seed, domain::ACTIVITY, (split.id() << 56) | index as u64);
        sample_activity(self.prior, self.dims.n_users, &mut rng)
    }

    /// Builds a frame. `snr_db` overrides the configured SNR range.
    ///
    /// Draw order within the frame stream: SNR (only when drawn from the
    /// range), channel, bits of each active user in index order, preamble
    /// noise, data noise.
    pub fn frame(&self, split: Split, index: usize, epoch: u64, snr_db: Option<f64>) -> Result<Frame> {
        if epoch >= 1 << 24 || index as u64 >= 1 << 32 {
            return Err(invalid("epoch or sample index exceeds the stream address space"));
        }
        let delta = self.activity(split, index);
        let mut rng = stream(
            self.seed,
            domain::FRAME,
            (split.id() << 56) | (epoch << 32) | index as u64,
        );
        let snr_db = match snr_db {
            Some(s) => s,
            None => sample_snr(self.snr_range.0, self.snr_range.1, &mut rng)?,
        };
        let d = self.dims;
        let chan = ChannelRealization::sample(self.mode, d.n_users, snr_db, &mut rng);
        let n_bits = d.slots * self.codebook.bits_per_block();
        let mut ctus = Vec::with_capacity(delta.active_count());
        for n in delta.active_users() {
            let bits: Vec<u8> = (0..n_bits).map(|_| rng.random::<bool>() as u8).collect();
            ctus.push(build_ctu(n, &bits, &self.codebook)?);
        }
        let mut noise = vec![Complex64::new(0.0, 0.0); d.preamble_len];
        add_awgn(
            &mut noise,
            snr_to_noise_var(snr_db, 1.0 / d.preamble_len as f64)?,
            &mut rng,
        );
        let y_d = superpose_data(
            &delta,
            &ctus,
            &chan,
            snr_to_noise_var(snr_db, 1.0 / d.resources as f64)?,
            d.slots,
            d.resources,
            &mut rng,
        )?;
        let mut packed_d = Vec::with_capacity(d.yd_width());
        crate::airlink::pack(&y_d, &mut packed_d);
        let mut noise_p = Vec::with_capacity(d.yp_width());
        crate::airlink::pack(&noise, &mut noise_p);
        Ok(Frame {
            delta,
            snr_db,
            h: chan.h,
            y_d: packed_d,
            noise_p,
        })
    }

    pub fn frames(&self, split: Split, indices: &[usize], epoch: u64, snr_db: Option<f64>) -> Result<Vec<Frame>> {
        indices.iter().map(|&i| self.frame(split, i, epoch, snr_db)).collect()
    }
}

/// Network inputs and targets for a list of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B x 2Kp`.
    pub y_p: Tensor,
    /// `B x L*2Kd`.
    pub y_d: Tensor,
    /// `B x N` in {0, 1}.
    pub targets: Tensor,
}

/// Packed preamble observation `sum_n delta_n h_n p_n + noise`.
pub fn preamble_observation(frame: &Frame, preambles: &[f64], kp: usize) -> Vec<f64> {
    let w = 2 * kp;
    let mut y = frame.noise_p.clone();
    for n in frame.delta.active_users() {
        let h = frame.h[n];
        let p = &preambles[n * w..(n + 1) * w];
        for (acc, pair) in y.chunks_exact_mut(2).zip(p.chunks_exact(2)) {
            acc[0] += h.re * pair[0] - h.im * pair[1];
            acc[1] += h.re * pair[1] + h.im * pair[0];
        }
    }
    y
}

/// Assembles a batch given packed unit-norm preambles (`N x 2Kp`).
pub fn make_batch(frames: &[Frame], preambles: &[f64], dims: Dims) -> Result<Batch> {
    check_len("preamble matrix", dims.n_users * dims.yp_width(), preambles.len())?;
    let b = frames.len();
    let mut y_p = Vec::with_capacity(b * dims.yp_width());
    let mut y_d = Vec::with_capacity(b * dims.yd_width());
    let mut targets = Vec::with_capacity(b * dims.n_users);
    for f in frames {
        check_len("frame data width", dims.yd_width(), f.y_d.len())?;
        y_p.extend(preamble_observation(f, preambles, dims.preamble_len));
        y_d.extend_from_slice(&f.y_d);
        targets.extend(f.delta.as_targets());
    }
    Ok(Batch {
        y_p: Tensor::from_vec(&[b, dims.yp_width()], y_p)?,
        y_d: Tensor::from_vec(&[b, dims.yd_width()], y_d)?,
        targets: Tensor::from_vec(&[b, dims.n_users], targets)?,
    })
}

/// How the UAEN takes part in an end-to-end pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UaenRole {
    /// Train-mode forward and backward.
    Trainable,
    /// Eval-mode forward, no gradients.
    Frozen,
}

/// One end-to-end forward/backward pass over `frames`, accumulating
/// gradients for the PGN, AUDN and (if trainable) UAEN. Returns the loss and
/// soft scores.
pub fn chain_step<R: Rng + ?Sized>(
    ae: &Autoencoder,
    store: &mut ParamStore,
    frames: &[Frame],
    uaen_role: UaenRole,
    rng: &mut R,
) -> Result<(f64, Tensor)> {
    let (preambles, norms) = ae.pgn.packed(store)?;
    let batch = make_batch(frames, &preambles, ae.dims)?;
    let mut uaen_tape = None;
    let input = match (&ae.uaen, uaen_role) {
        (Some(uaen), UaenRole::Trainable) => {
            let (alpha, tape) = uaen.forward(store, &batch.y_d, Mode::Train, rng)?;
            uaen_tape = Some(tape);
            Tensor::hcat(&alpha, &batch.y_p)?
        }
        (Some(uaen), UaenRole::Frozen) => Tensor::hcat(&uaen.forward_eval(store, &batch.y_d)?, &batch.y_p)?,
        (None, _) => batch.y_p.clone(),
    };
    let (scores, tape) = ae.audn.forward(store, &input, Mode::Train, rng)?;
    let (loss, grad) = Objective::EndToEnd.evaluate(&batch.targets, &scores)?;
    let d_input = ae.audn.backward(store, tape, &grad)?;
    let d_yp = match &ae.uaen {
        Some(uaen) => {
            let (d_alpha, d_yp) = d_input.hsplit(ae.dims.n_users)?;
            if let Some(tape) = uaen_tape {
                uaen.backward(store, tape, &d_alpha)?;
            }
            d_yp
        }
        None => d_input,
    };
    // y_p = sum_n delta_n h_n p_n, so dL/dp_n = sum_b delta_bn conj(h_bn) g_b.
    let w = ae.dims.yp_width();
    let mut d_pre = vec![0.0; ae.dims.n_users * w];
    for (b, frame) in frames.iter().enumerate() {
        let g = d_yp.row(b);
        for n in frame.delta.active_users() {
            let h = frame.h[n];
            let dst = &mut d_pre[n * w..(n + 1) * w];
            for (acc, gp) in dst.chunks_exact_mut(2).zip(g.chunks_exact(2)) {
                acc[0] += h.re * gp[0] + h.im * gp[1];
                acc[1] += h.re * gp[1] - h.im * gp[0];
            }
        }
    }
    ae.pgn.backward(store, &preambles, &norms, &d_pre)?;
    Ok((loss, scores))
}

/// One UAEN-only forward/backward pass against the true activity.
pub fn pretrain_step<R: Rng + ?Sized>(
    ae: &Autoencoder,
    store: &mut ParamStore,
    frames: &[Frame],
    rng: &mut R,
) -> Result<(f64, Tensor)> {
    let uaen = ae
        .uaen
        .as_ref()
        .ok_or_else(|| invalid("the preamble-only variant has no UAEN to pre-train"))?;
    let d = ae.dims;
    let mut y_d = Vec::with_capacity(frames.len() * d.yd_width());
    let mut targets = Vec::with_capacity(frames.len() * d.n_users);
    for f in frames {
        y_d.extend_from_slice(&f.y_d);
        targets.extend(f.delta.as_targets());
    }
    let y_d = Tensor::from_vec(&[frames.len(), d.yd_width()], y_d)?;
    let targets = Tensor::from_vec(&[frames.len(), d.n_users], targets)?;
    let (alpha, tape) = uaen.forward(store, &y_d, Mode::Train, rng)?;
    let (loss, grad) = Objective::Pretrain.evaluate(&targets, &alpha)?;
    uaen.backward(store, tape, &grad)?;
    Ok((loss, alpha))
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// 1-based epoch within the training step.
    pub epoch: usize,
    /// Optimizer steps taken so far in this training step.
    pub step: u64,
    /// 1-based learning-rate period.
    pub period: usize,
    pub lr: f64,
    pub split: &'static str,
    pub loss: f64,
    pub ader: f64,
}

pub const LOG_HEADER: &str = "epoch,step,period,lr,split,loss,ader";

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{},{:?},{:?}",
            self.epoch, self.step, self.period, self.lr, self.split, self.loss, self.ader
        )
    }
}

/// Writes the training log with a provenance comment line.
pub fn write_log<W: Write>(mut w: W, cfg: &RunConfig, stage: &str, rows: &[LossReport]) -> std::io::Result<()> {
    writeln!(w, "# stage={stage} config_digest={} seed={}", cfg.digest(), cfg.seed)?;
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Mean loss and ADER of an eval-mode pass over a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitScore {
    pub loss: f64,
    pub ader: f64,
}

const EVAL_CHUNK: usize = 500;

/// Evaluates the UAEN alone (`uaen_only`) or the full detector on the first
/// `count` samples of a split at epoch 0.
pub fn score_split(
    ae: &Autoencoder,
    store: &ParamStore,
    source: &DataSource,
    split: Split,
    count: usize,
    gamma: f64,
    uaen_only: bool,
) -> Result<SplitScore> {
    let d = ae.dims;
    let preambles = ae.pgn.packed(store)?.0;
    let mut loss = 0.0;
    let mut errors = 0usize;
    let mut start = 0;
    while start < count {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(count)).collect();
        let frames = source.frames(split, &idx, 0, None)?;
        let batch = make_batch(&frames, &preambles, d)?;
        let preds = if uaen_only {
            ae.uaen
                .as_ref()
                .ok_or_else(|| invalid("no UAEN to score"))?
                .forward_eval(store, &batch.y_d)?
        } else {
            ae.infer(store, &batch.y_p, &batch.y_d)?
        };
        loss += bce_loss(&batch.targets, &preds)? * idx.len() as f64;
        for (r, f) in frames.iter().enumerate() {
            let dec = threshold_decide(preds.row(r), gamma);
            errors += dec.0.iter().zip(&f.delta.0).filter(|(a, b)| a != b).count();
        }
        start += idx.len();
    }
    Ok(SplitScore {
        loss: loss / count.max(1) as f64,
        ader: errors as f64 / (count.max(1) * d.n_users) as f64,
    })
}

fn check_finite(loss: f64, stage: &str, epoch: usize, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{stage} loss {loss} at epoch {epoch}, step {step}"
        )))
    }
}

fn shuffled(source: &DataSource, split: Split, salt: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..source.len(split)).collect();
    idx.shuffle(&mut stream(source.seed(), domain::SHUFFLE, (salt << 56) | epoch));
    idx
}

/// Step 1: trains only `uaen.*` against the true activity. Runs
/// `step1_epochs.0` epochs at `step1_lr`, then `step1_epochs.1` at a tenth of
/// it, and leaves the best-validation UAEN in `store`.
pub fn pretrain_uaen(
    cfg: &RunConfig,
    ae: &Autoencoder,
    store: &mut ParamStore,
    source: &DataSource,
) -> Result<Vec<LossReport>> {
    if ae.uaen.is_none() {
        return Err(invalid("the preamble-only variant has no UAEN to pre-train"));
    }
    let (t1, t2) = cfg.schedule.step1_epochs;
    let adam = Adam::default();
    store.set_frozen("", true);
    store.set_frozen("uaen.", false);
    store.reset_optimizer_state();
    let batch = cfg.schedule.batch_size;
    let mut reports = Vec::new();
    let mut best = f64::INFINITY;
    let mut step = 0u64;
    for epoch in 1..=t1 + t2 {
        let (period, lr) = if epoch <= t1 {
            (1, cfg.schedule.step1_lr)
        } else {
            (2, cfg.schedule.step1_lr / 10.0)
        };
        let order = shuffled(source, Split::Pretrain, 1, epoch as u64);
        let mut total = 0.0;
        let mut errors = 0usize;
        for chunk in order.chunks(batch) {
            let frames = source.frames(Split::Pretrain, chunk, epoch as u64, None)?;
            let mut rng = stream(source.seed(), domain::DROPOUT, (1 << 56) | step);
            let (loss, alpha) = pretrain_step(ae, store, &frames, &mut rng)?;
            check_finite(loss, "pre-training", epoch, step)?;
            adam.step(store, lr)?;
            step += 1;
            total += loss * chunk.len() as f64;
            errors += count_errors(&alpha, &frames, cfg.gamma);
        }
        let n = order.len().max(1);
        reports.push(LossReport {
            epoch,
            step,
            period,
            lr,
            split: "train",
            loss: total / n as f64,
            ader: errors as f64 / (n * ae.dims.n_users) as f64,
        });
        let val = score_split(
            ae,
            store,
            source,
            Split::Validation,
            source.len(Split::Validation),
            cfg.gamma,
            true,
        )?;
        check_finite(val.loss, "pre-training validation", epoch, step)?;
        reports.push(LossReport {
            epoch,
            step,
            period,
            lr,
            split: "validation",
            loss: val.loss,
            ader: val.ader,
        });
        if val.loss < best {
            best = val.loss;
            store.save_snapshot(BEST_TAG, "uaen.")?;
        }
    }
    store.restore_snapshot(BEST_TAG);
    store.drop_snapshot(BEST_TAG);
    store.set_frozen("", false);
    Ok(reports)
}

fn count_errors(scores: &Tensor, frames: &[Frame], gamma: f64) -> usize {
    frames
        .iter()
        .enumerate()
        .map(|(r, f)| {
            threshold_decide(scores.row(r), gamma)
                .0
                .iter()
                .zip(&f.delta.0)
                .filter(|(a, b)| a != b)
                .count()
        })
        .sum()
}

/// Learning rate of 1-based period `q`: `eta_0 / 10^(q-1)`.
pub fn period_lr(eta0: f64, q: usize) -> f64 {
    eta0 / 10f64.powi(q as i32 - 1)
}

/// Resumable end-to-end progress, stored in the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub epochs_done: usize,
    pub steps_done: u64,
    pub best_loss: f64,
}

impl Progress {
    pub fn read(store: &ParamStore) -> Option<Self> {
        let v = store.value(store.id(PROGRESS_PARAM)?).data();
        Some(Self {
            epochs_done: v[0] as usize,
            steps_done: v[1] as u64,
            best_loss: v[2],
        })
    }

    fn write(&self, store: &mut ParamStore) -> Result<()> {
        let t = Tensor::from_vec(
            &[3],
            vec![self.epochs_done as f64, self.steps_done as f64, self.best_loss],
        )?;
        match store.id(PROGRESS_PARAM) {
            Some(id) => *store.value_mut(id) = t,
            None => {
                store.add(PROGRESS_PARAM, ParamRole::Snapshot, t)?;
            }
        }
        Ok(())
    }
}

/// Called after each completed period with the 1-based period index. The
/// store then holds everything needed to resume.
pub type PeriodHook<'a> = dyn FnMut(usize, &ParamStore) -> Result<()> + 'a;

/// Step 2: trains the whole chain with learning rate `eta_0 / 10^(q-1)` in
/// period `q`. The frozen-UAEN variant runs its UAEN in eval mode and never
/// updates it. If `store` carries progress from an interrupted run, training
/// resumes after the last completed period. On return `store` holds the
/// best-validation parameters and no resume metadata.
pub fn train_end_to_end(
    cfg: &RunConfig,
    ae: &Autoencoder,
    store: &mut ParamStore,
    source: &DataSource,
    on_period: &mut PeriodHook<'_>,
) -> Result<Vec<LossReport>> {
    let role = if ae.variant == Variant::FrozenUaen {
        UaenRole::Frozen
    } else {
        UaenRole::Trainable
    };
    let adam = Adam::default();
    let mut progress = match Progress::read(store) {
        Some(p) => p,
        None => {
            store.reset_optimizer_state();
            Progress {
                epochs_done: 0,
                steps_done: 0,
                best_loss: f64::INFINITY,
            }
        }
    };
    store.set_frozen("", false);
    if role == UaenRole::Frozen {
        store.set_frozen("uaen.", true);
    }
    let batch = cfg.schedule.batch_size;
    let mut reports = Vec::new();
    let mut epoch = 0usize;
    for (q0, &epochs) in cfg.schedule.step2_periods.iter().enumerate() {
        let period = q0 + 1;
        let lr = period_lr(cfg.schedule.step2_lr, period);
        let period_end = epoch + epochs;
        if period_end <= progress.epochs_done {
            epoch = period_end;
            continue;
        }
        while epoch < period_end {
            epoch += 1;
            let order = shuffled(source, Split::Train, 2, epoch as u64);
            let mut total = 0.0;
            let mut errors = 0usize;
            for chunk in order.chunks(batch) {
                let frames = source.frames(Split::Train, chunk, epoch as u64, None)?;
                let mut rng = stream(source.seed(), domain::DROPOUT, (2 << 56) | progress.steps_done);
                let (loss, scores) = chain_step(ae, store, &frames, role, &mut rng)?;
                check_finite(loss, "end-to-end", epoch, progress.steps_done)?;
                adam.step(store, lr)?;
                progress.steps_done += 1;
                total += loss * chunk.len() as f64;
                errors += count_errors(&scores, &frames, cfg.gamma);
            }
            let n = order.len().max(1);
            reports.push(LossReport {
                epoch,
                step: progress.steps_done,
                period,
                lr,
                split: "train",
                loss: total / n as f64,
                ader: errors as f64 / (n * ae.dims.n_users) as f64,
            });
            let val = score_split(
                ae,
                store,
                source,
                Split::Validation,
                source.len(Split::Validation),
                cfg.gamma,
                false,
            )?;
            check_finite(val.loss, "end-to-end validation", epoch, progress.steps_done)?;
            reports.push(LossReport {
                epoch,
                step: progress.steps_done,
                period,
                lr,
                split: "validation",
                loss: val.loss,
                ader: val.ader,
            });
            if val.loss < progress.best_loss {
                progress.best_loss = val.loss;
                store.save_snapshot(BEST_TAG, "")?;
            }
            progress.epochs_done = epoch;
        }
        progress.write(store)?;
        on_period(period, store)?;
    }
    store.restore_snapshot(BEST_TAG);
    store.drop_snapshot(BEST_TAG);
    store.drop_snapshot("meta");
    store.set_frozen("", false);
    Ok(reports)
}
