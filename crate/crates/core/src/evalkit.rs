//! ADER statistics, evaluation sweeps and a correlation baseline.

use std::io::Write;

use num_complex::Complex64;

use gfscma_nn::ParamStore;

use crate::airlink::ActivityVector;
use crate::config::{AderDenominator, RunConfig};
use crate::error::{check_len, invalid, Result};
use crate::models::{threshold_decide, Autoencoder};
use crate::training::{make_batch, DataSource, Split};

/// Miss / false-alarm counts over a set of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AderCounts {
    pub frames: usize,
    pub n_users: usize,
    pub misses: usize,
    pub false_alarms: usize,
    /// Truly active users over all frames.
    pub active: usize,
}

impl AderCounts {
    pub fn merge(&mut self, other: &AderCounts) {
        self.frames += other.frames;
        self.misses += other.misses;
        self.false_alarms += other.false_alarms;
        self.active += other.active;
    }

    pub fn denominator(&self, d: AderDenominator) -> usize {
        match d {
            AderDenominator::AllUsers => self.n_users * self.frames,
            AderDenominator::ActiveUsers => self.active,
        }
    }

    pub fn ader(&self, d: AderDenominator) -> f64 {
        let den = self.denominator(d);
        if den == 0 {
            0.0
        } else {
            (self.misses + self.false_alarms) as f64 / den as f64
        }
    }

    pub fn miss_rate(&self, d: AderDenominator) -> f64 {
        let den = self.denominator(d);
        if den == 0 {
            0.0
        } else {
            self.misses as f64 / den as f64
        }
    }

    pub fn false_alarm_rate(&self, d: AderDenominator) -> f64 {
        let den = self.denominator(d);
        if den == 0 {
            0.0
        } else {
            self.false_alarms as f64 / den as f64
        }
    }

    /// Binomial standard error `sqrt(a (1 - a) / n)`.
    pub fn stderr(&self, d: AderDenominator) -> f64 {
        let den = self.denominator(d);
        if den == 0 {
            return 0.0;
        }
        let a = self.ader(d).min(1.0);
        (a * (1.0 - a) / den as f64).sqrt()
    }
}

/// Compares decisions with ground truth frame by frame.
pub fn ader(decisions: &[ActivityVector], truth: &[ActivityVector]) -> Result<AderCounts> {
    check_len("decision frames", truth.len(), decisions.len())?;
    let n_users = truth.first().map_or(0, |t| t.len());
    let mut c = AderCounts {
        frames: truth.len(),
        n_users,
        ..Default::default()
    };
    for (d, t) in decisions.iter().zip(truth) {
        check_len("decision users", n_users, d.len())?;
        check_len("truth users", n_users, t.len())?;
        for (&dn, &tn) in d.0.iter().zip(&t.0) {
            match (tn, dn) {
                (true, false) => c.misses += 1,
                (false, true) => c.false_alarms += 1,
                _ => {}
            }
            c.active += tn as usize;
        }
    }
    Ok(c)
}

const CHUNK: usize = 500;

/// Runs the detector in eval mode on test frames `0..frames` at a fixed SNR.
pub fn evaluate(
    ae: &Autoencoder,
    store: &ParamStore,
    source: &DataSource,
    snr_db: f64,
    frames: usize,
    gamma: f64,
) -> Result<AderCounts> {
    if frames == 0 {
        return Err(invalid("evaluation needs at least one frame"));
    }
    let preambles = ae.pgn.packed(store)?.0;
    let mut total = AderCounts {
        n_users: ae.dims.n_users,
        ..Default::default()
    };
    let mut start = 0;
    while start < frames {
        let idx: Vec<usize> = (start..(start + CHUNK).min(frames)).collect();
        let batch_frames = source.frames(Split::Test, &idx, 0, Some(snr_db))?;
        let batch = make_batch(&batch_frames, &preambles, ae.dims)?;
        let scores = ae.infer(store, &batch.y_p, &batch.y_d)?;
        let decisions: Vec<ActivityVector> = (0..idx.len()).map(|r| threshold_decide(scores.row(r), gamma)).collect();
        let truth: Vec<ActivityVector> = batch_frames.into_iter().map(|f| f.delta).collect();
        total.merge(&ader(&decisions, &truth)?);
        start += idx.len();
    }
    Ok(total)
}

/// Matched-filter detector: user `n` is active iff `|<y_p, p_n>| > gamma_corr`.
/// `preambles` is row-major `N x Kp`.
pub fn correlation_baseline(y_p: &[Complex64], preambles: &[Complex64], gamma_corr: f64) -> ActivityVector {
    let kp = y_p.len();
    if kp == 0 {
        return ActivityVector(Vec::new());
    }
    ActivityVector(
        preambles
            .chunks_exact(kp)
            .map(|p| {
                let c: Complex64 = y_p.iter().zip(p).map(|(y, p)| y * p.conj()).sum();
                c.norm() > gamma_corr
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Each model at every SNR in `values`.
    Snr,
    /// `values` are data lengths; each selects the models trained for it,
    /// evaluated at the fixed SNR.
    DataLength,
    /// Each model at the fixed SNR; needs at least two distinct schemes.
    Scheme,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::DataLength => "data_length",
            SweepAxis::Scheme => "scheme",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr" => Some(SweepAxis::Snr),
            "data_length" => Some(SweepAxis::DataLength),
            "scheme" => Some(SweepAxis::Scheme),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub fixed_snr_db: f64,
    pub frames: usize,
    /// Seed of the test frames, shared by every point.
    pub seed: u64,
    pub denominator: AderDenominator,
}

/// A trained model to evaluate.
#[derive(Clone, Debug)]
pub struct SweepModel {
    pub scheme: String,
    pub cfg: RunConfig,
    pub ae: Autoencoder,
    pub store: ParamStore,
    pub checkpoint_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AderReport {
    pub scheme: String,
    pub snr_db: f64,
    pub p_bar: f64,
    pub slots: usize,
    pub seed: u64,
    pub checkpoint_digest: String,
    pub counts: AderCounts,
    pub denominator: AderDenominator,
}

impl AderReport {
    pub fn ader(&self) -> f64 {
        self.counts.ader(self.denominator)
    }

    pub fn stderr(&self) -> f64 {
        self.counts.stderr(self.denominator)
    }
}

pub const RESULTS_HEADER: &str = "scheme,snr_db,p_bar,L,frames,misses,false_alarms,ader,stderr,seed,checkpoint_digest";

impl AderReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{},{},{},{},{:?},{:?},{},{}",
            self.scheme,
            self.snr_db,
            self.p_bar,
            self.slots,
            self.counts.frames,
            self.counts.misses,
            self.counts.false_alarms,
            self.ader(),
            self.stderr(),
            self.seed,
            self.checkpoint_digest
        )
    }
}

fn points(spec: &SweepSpec, models: &[SweepModel]) -> Result<Vec<(usize, f64)>> {
    if spec.frames == 0 {
        return Err(invalid("sweep needs at least one frame per point"));
    }
    if models.is_empty() {
        return Err(invalid("sweep needs at least one checkpoint"));
    }
    let mut out = Vec::new();
    match spec.axis {
        SweepAxis::Snr => {
            if spec.values.is_empty() {
                return Err(invalid("SNR sweep needs at least one value"));
            }
            for m in 0..models.len() {
                out.extend(spec.values.iter().map(|&s| (m, s)));
            }
        }
        SweepAxis::DataLength => {
            if spec.values.is_empty() {
                return Err(invalid("data-length sweep needs at least one value"));
            }
            let mut schemes: Vec<&str> = models.iter().map(|m| m.scheme.as_str()).collect();
            schemes.sort_unstable();
            schemes.dedup();
            for scheme in schemes {
                for &l in &spec.values {
                    if l.fract() != 0.0 || l < 1.0 {
                        return Err(invalid(format!("data length {l} is not a positive integer")));
                    }
                    let m = models
                        .iter()
                        .position(|m| m.scheme == scheme && m.cfg.system.slots == l as usize)
                        .ok_or_else(|| invalid(format!("no `{scheme}` checkpoint for L = {l}")))?;
                    out.push((m, spec.fixed_snr_db));
                }
            }
        }
        SweepAxis::Scheme => {
            let first = &models[0].scheme;
            if models.iter().all(|m| &m.scheme == first) {
                return Err(invalid("scheme sweep needs checkpoints of at least two schemes"));
            }
            out.extend((0..models.len()).map(|m| (m, spec.fixed_snr_db)));
        }
    }
    Ok(out)
}

/// Evaluates every sweep point. Points are split across `workers` threads;
/// results do not depend on the worker count.
pub fn sweep(spec: &SweepSpec, models: &[SweepModel], workers: usize) -> Result<Vec<AderReport>> {
    let pts = points(spec, models)?;
    let sources: Vec<DataSource> = models
        .iter()
        .map(|m| {
            let mut cfg = m.cfg.clone();
            cfg.seed = spec.seed;
            DataSource::from_config(&cfg)
        })
        .collect::<Result<_>>()?;
    let run = |&(m, snr): &(usize, f64)| -> Result<AderReport> {
        let model = &models[m];
        let counts = evaluate(&model.ae, &model.store, &sources[m], snr, spec.frames, model.cfg.gamma)?;
        Ok(AderReport {
            scheme: model.scheme.clone(),
            snr_db: snr,
            p_bar: model.cfg.system.p_bar,
            slots: model.cfg.system.slots,
            seed: spec.seed,
            checkpoint_digest: model.checkpoint_digest.clone(),
            counts,
            denominator: spec.denominator,
        })
    };
    let workers = workers.max(1).min(pts.len());
    if workers == 1 {
        return pts.iter().map(run).collect();
    }
    let mut slots: Vec<Option<Result<AderReport>>> = (0..pts.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let pts = &pts;
                let run = &run;
                s.spawn(move || {
                    (w..pts.len())
                        .step_by(workers)
                        .map(|i| (i, run(&pts[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sweep worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every point evaluated")).collect()
}

/// Writes the results CSV with a provenance comment line.
pub fn write_results<W: Write>(
    mut w: W,
    config_digest: &str,
    spec: &SweepSpec,
    reports: &[AderReport],
) -> std::io::Result<()> {
    writeln!(
        w,
        "# axis={} config_digest={config_digest} seed={} ader_denominator={}",
        spec.axis.name(),
        spec.seed,
        spec.denominator.name()
    )?;
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
