//! The three networks: preamble generation (PGN), user activity extraction
//! (UAEN) and active user detection (AUDN).
//!
//! Parameters live in one [`ParamStore`] under the prefixes `pgn.`, `uaen.`
//! and `audn.`. Complex observations are fed to the networks re/im
//! interleaved.

mod pgn;

use std::fmt::Write as _;

use gfscma_nn::{LayerSpec, Network, ParamRole, ParamStore, Tensor};

use crate::airlink::ActivityVector;
use crate::config::{RunConfig, Variant};
use crate::error::{invalid, Error, Result};
use crate::seeds::{domain, stream};

pub use pgn::{cross_correlation, PgnBank, MIN_DIRECTION_NORM};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UaenConfig {
    pub n_kernel_1: usize,
    pub n_kernel_2: usize,
    pub n_hidden: usize,
    pub l_slots: usize,
    pub n_users: usize,
    pub resources: usize,
}

impl UaenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_kernel_1 <= self.n_kernel_2 {
            return Err(invalid(format!(
                "UAEN needs n_kernel_1 > n_kernel_2, got {} <= {}",
                self.n_kernel_1, self.n_kernel_2
            )));
        }
        if self.n_hidden == 0 || self.n_kernel_2 == 0 || self.l_slots == 0 || self.n_users == 0 || self.resources == 0 {
            return Err(invalid("UAEN sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.l_slots * 2 * self.resources
    }

    /// Node counts of the dense combiner, `(L_h - i + 1) * N` for layer `i`.
    pub fn dense_widths(&self) -> Vec<usize> {
        (1..=self.n_hidden)
            .map(|i| (self.n_hidden - i + 1) * self.n_users)
            .collect()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let l = self.l_slots;
        let mut specs = vec![
            LayerSpec::Conv1d {
                width: 2 * self.resources,
                kernels: self.n_kernel_1,
                slots: l,
            },
            LayerSpec::BatchNorm {
                channels: self.n_kernel_1,
                groups: l,
            },
            LayerSpec::Relu,
            LayerSpec::Conv1d {
                width: self.n_kernel_1,
                kernels: self.n_kernel_2,
                slots: l,
            },
            LayerSpec::BatchNorm {
                channels: self.n_kernel_2,
                groups: l,
            },
            LayerSpec::Relu,
        ];
        dense_stack(&mut specs, l * self.n_kernel_2, &self.dense_widths());
        specs
    }
}

/// Dense layers with batch norm and ReLU between them and a sigmoid after
/// the last one.
fn dense_stack(specs: &mut Vec<LayerSpec>, mut inputs: usize, widths: &[usize]) {
    for (i, &outputs) in widths.iter().enumerate() {
        specs.push(LayerSpec::Dense { inputs, outputs });
        if i + 1 < widths.len() {
            specs.push(LayerSpec::BatchNorm {
                channels: outputs,
                groups: 1,
            });
            specs.push(LayerSpec::Relu);
        } else {
            specs.push(LayerSpec::Sigmoid);
        }
        inputs = outputs;
    }
}

/// Trainable scalar count of a spec list, without building it.
pub fn spec_params(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .map(|s| match s {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv1d { width, kernels, .. } => width * kernels + kernels,
            LayerSpec::BatchNorm { channels, .. } => 2 * channels,
            LayerSpec::Residual(body) => spec_params(body),
            _ => 0,
        })
        .sum()
}

/// Fully connected UAEN: `n_dense` dense layers, all hidden ones of a common
/// width chosen so the trainable count is closest to `budget`.
pub fn fc_uaen_specs(input_width: usize, n_users: usize, n_dense: usize, budget: usize) -> Result<Vec<LayerSpec>> {
    if n_dense < 2 {
        return Err(invalid("fully connected UAEN needs at least two dense layers"));
    }
    let build = |w: usize| {
        let mut widths = vec![w; n_dense - 1];
        widths.push(n_users);
        let mut specs = Vec::new();
        dense_stack(&mut specs, input_width, &widths);
        specs
    };
    let mut best = (usize::MAX, 1);
    for w in 1..=4096 {
        let count = spec_params(&build(w));
        let gap = count.abs_diff(budget);
        if gap < best.0 {
            best = (gap, w);
        }
        if count > budget {
            break;
        }
    }
    Ok(build(best.1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudnConfig {
    pub n_hidden: usize,
    pub width: usize,
    pub p_drop: f64,
    pub n_users: usize,
    pub preamble_len: usize,
    /// False for the preamble-only detector.
    pub uses_alpha: bool,
}

impl AudnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width != 5 * self.n_users {
            return Err(invalid(format!(
                "AUDN width must be 5N = {}, got {}",
                5 * self.n_users,
                self.width
            )));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(invalid(format!("dropout probability {} outside [0, 1)", self.p_drop)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        2 * self.preamble_len + if self.uses_alpha { self.n_users } else { 0 }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let w = self.width;
        let mut specs = vec![LayerSpec::Dense {
            inputs: self.input_width(),
            outputs: w,
        }];
        for _ in 0..self.n_hidden {
            specs.push(LayerSpec::Residual(vec![
                LayerSpec::Dense { inputs: w, outputs: w },
                LayerSpec::BatchNorm { channels: w, groups: 1 },
                LayerSpec::Relu,
                LayerSpec::Dropout { p: self.p_drop },
            ]));
        }
        specs.push(LayerSpec::Dense {
            inputs: w,
            outputs: self.n_users,
        });
        specs.push(LayerSpec::Sigmoid);
        specs
    }
}

/// Entry `n` is active iff `scores[n] > gamma`.
pub fn threshold_decide(scores: &[f64], gamma: f64) -> ActivityVector {
    ActivityVector(scores.iter().map(|&s| s > gamma).collect())
}

/// Problem dimensions shared by the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_users: usize,
    pub preamble_len: usize,
    pub resources: usize,
    pub slots: usize,
}

impl Dims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            n_users: cfg.system.n_users,
            preamble_len: cfg.system.preamble_len,
            resources: cfg.system.resources,
            slots: cfg.system.slots,
        }
    }

    /// Packed preamble observation width, `2 Kp`.
    pub fn yp_width(&self) -> usize {
        2 * self.preamble_len
    }

    /// Packed data observation width, `L * 2 Kd`.
    pub fn yd_width(&self) -> usize {
        2 * self.resources * self.slots
    }
}

/// PGN, optional UAEN and AUDN for one variant.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub variant: Variant,
    pub dims: Dims,
    pub pgn: PgnBank,
    pub uaen: Option<Network>,
    pub audn: Network,
}

impl Autoencoder {
    pub fn uaen_config(cfg: &RunConfig) -> UaenConfig {
        UaenConfig {
            n_kernel_1: cfg.uaen.n_kernel_1,
            n_kernel_2: cfg.uaen.n_kernel_2,
            n_hidden: cfg.uaen.hidden_layers,
            l_slots: cfg.system.slots,
            n_users: cfg.system.n_users,
            resources: cfg.system.resources,
        }
    }

    pub fn audn_config(cfg: &RunConfig, variant: Variant) -> AudnConfig {
        AudnConfig {
            n_hidden: cfg.audn.hidden_layers,
            width: cfg.audn.width,
            p_drop: cfg.audn.p_drop,
            n_users: cfg.system.n_users,
            preamble_len: cfg.system.preamble_len,
            uses_alpha: variant.has_uaen(),
        }
    }

    /// UAEN layer list for the variant, or `None` for the preamble-only detector.
    pub fn uaen_specs(cfg: &RunConfig, variant: Variant) -> Result<Option<Vec<LayerSpec>>> {
        let conv = Self::uaen_config(cfg);
        conv.validate()?;
        Ok(match variant {
            Variant::PreambleOnly => None,
            Variant::FcUaen => Some(fc_uaen_specs(
                conv.input_width(),
                conv.n_users,
                cfg.uaen.fc_hidden_layers,
                spec_params(&conv.specs()),
            )?),
            _ => Some(conv.specs()),
        })
    }

    /// Builds all networks with parameters initialized from `seed`. Each
    /// network draws from its own stream, so e.g. the AUDN init does not
    /// depend on the UAEN size.
    pub fn build(cfg: &RunConfig, variant: Variant, seed: u64, store: &mut ParamStore) -> Result<Self> {
        let dims = Dims::from_config(cfg);
        let pgn = PgnBank::build(
            store,
            dims.n_users,
            dims.preamble_len,
            &mut stream(seed, domain::INIT_PGN, 0),
        )?;
        let uaen = match Self::uaen_specs(cfg, variant)? {
            Some(specs) => Some(Network::build(
                store,
                "uaen",
                dims.yd_width(),
                &specs,
                &mut stream(seed, domain::INIT_UAEN, 0),
            )?),
            None => None,
        };
        let audn_cfg = Self::audn_config(cfg, variant);
        audn_cfg.validate()?;
        let audn = Network::build(
            store,
            "audn",
            audn_cfg.input_width(),
            &audn_cfg.specs(),
            &mut stream(seed, domain::INIT_AUDN, 0),
        )?;
        Ok(Self {
            variant,
            dims,
            pgn,
            uaen,
            audn,
        })
    }

    /// Binds the architecture to a loaded store, checking that every model
    /// tensor is present with the expected shape. Snapshot entries are ignored.
    pub fn attach(cfg: &RunConfig, variant: Variant, loaded: &ParamStore) -> Result<Self> {
        let mut fresh = ParamStore::new();
        let ae = Self::build(cfg, variant, 0, &mut fresh)?;
        for p in fresh.iter() {
            let got = loaded
                .id(&p.name)
                .ok_or_else(|| Error::Incompatible(format!("missing tensor `{}`", p.name)))?;
            let got = loaded.get(got);
            if got.value.shape() != p.value.shape() || got.role != p.role {
                return Err(Error::Incompatible(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name,
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        for p in loaded.iter().filter(|p| p.role != ParamRole::Snapshot) {
            if fresh.id(&p.name).is_none() {
                return Err(Error::Incompatible(format!("unexpected tensor `{}`", p.name)));
            }
        }
        Ok(ae)
    }

    pub fn uaen_params(&self, store: &ParamStore) -> usize {
        self.uaen.as_ref().map_or(0, |u| u.trainable_params(store))
    }

    pub fn audn_params(&self, store: &ParamStore) -> usize {
        self.audn.trainable_params(store)
    }

    /// Soft activity scores in eval mode. `y_p` is `B x 2Kp`, `y_d` is
    /// `B x L*2Kd` (ignored by the preamble-only detector).
    pub fn infer(&self, store: &ParamStore, y_p: &Tensor, y_d: &Tensor) -> Result<Tensor> {
        let input = match &self.uaen {
            Some(uaen) => Tensor::hcat(&uaen.forward_eval(store, y_d)?, y_p)?,
            None => y_p.clone(),
        };
        Ok(self.audn.forward_eval(store, &input)?)
    }
}

/// Text summary: hyperparameters, per-network layer tables and parameter counts.
pub fn model_summary(cfg: &RunConfig, ae: &Autoencoder, store: &ParamStore) -> String {
    let s = &cfg.system;
    let mut o = String::new();
    let _ = writeln!(o, "# model summary");
    let _ = writeln!(o, "variant            {}", ae.variant.name());
    let _ = writeln!(o, "config_digest      {}", cfg.digest());
    let _ = writeln!(o, "model_digest       {}", cfg.model_digest());
    let _ = writeln!(o, "\n## system");
    let _ = writeln!(o, "N                  {}", s.n_users);
    let _ = writeln!(o, "J                  {}", s.codebooks);
    let _ = writeln!(o, "M                  {}", s.codebook_size);
    let _ = writeln!(o, "K_p                {}", s.preamble_len);
    let _ = writeln!(o, "K_d                {}", s.resources);
    let _ = writeln!(o, "L                  {}", s.slots);
    let _ = writeln!(o, "p_bar              {}", s.p_bar);
    let _ = writeln!(o, "gamma              {}", cfg.gamma);
    let _ = writeln!(o, "batch_size         {}", cfg.schedule.batch_size);
    let _ = writeln!(
        o,
        "snr_train_db       [{}, {}]",
        cfg.channel.snr_lo_db, cfg.channel.snr_hi_db
    );
    let _ = writeln!(o, "\n## uaen");
    let _ = writeln!(o, "N_kernel_1         {}", cfg.uaen.n_kernel_1);
    let _ = writeln!(o, "N_kernel_2         {}", cfg.uaen.n_kernel_2);
    let _ = writeln!(o, "L_h                {}", cfg.uaen.hidden_layers);
    let widths: Vec<String> = Autoencoder::uaen_config(cfg)
        .dense_widths()
        .iter()
        .map(|w| w.to_string())
        .collect();
    let _ = writeln!(o, "dense_widths       {}", widths.join(" "));
    let _ = writeln!(o, "T1_1               {}", cfg.schedule.step1_epochs.0);
    let _ = writeln!(o, "T1_2               {}", cfg.schedule.step1_epochs.1);
    let _ = writeln!(o, "eta                {}", cfg.schedule.step1_lr);
    let _ = writeln!(o, "\n## audn");
    let _ = writeln!(o, "p_drop             {}", cfg.audn.p_drop);
    let _ = writeln!(o, "L_g                {}", cfg.audn.hidden_layers);
    let _ = writeln!(o, "width              {}", cfg.audn.width);
    let _ = writeln!(o, "input_width        {}", ae.audn.input_width());
    let _ = writeln!(o, "eta_0              {}", cfg.schedule.step2_lr);
    let _ = writeln!(o, "Q                  {}", cfg.q());
    let periods: Vec<String> = cfg.schedule.step2_periods.iter().map(|t| t.to_string()).collect();
    let _ = writeln!(o, "T2_n               {}", periods.join(" "));

    let mut table = |title: &str, net: &Network| {
        let _ = writeln!(o, "\n## layers: {title}");
        let _ = writeln!(
            o,
            "{:<24} {:<10} {:>7} {:>7} {:>9}  detail",
            "name", "kind", "in", "out", "params"
        );
        for row in net.summary(store) {
            let name = format!("{}{}", "  ".repeat(row.depth), row.name);
            let _ = writeln!(
                o,
                "{:<24} {:<10} {:>7} {:>7} {:>9}  {}",
                name, row.kind, row.input_width, row.output_width, row.params, row.detail
            );
        }
    };
    if let Some(uaen) = &ae.uaen {
        table("uaen", uaen);
    }
    table("audn", &ae.audn);

    let pgn = store.value(ae.pgn.param()).len();
    let uaen = ae.uaen_params(store);
    let audn = ae.audn_params(store);
    let _ = writeln!(o, "\n## parameters");
    let _ = writeln!(o, "pgn                {pgn}");
    let _ = writeln!(o, "uaen               {uaen}");
    let _ = writeln!(o, "audn               {audn}");
    let _ = writeln!(o, "total              {}", pgn + uaen + audn);
    let _ = writeln!(o, "uaen/audn          {:.2}%", 100.0 * uaen as f64 / audn as f64);
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uaen_dense_widths_follow_rule() {
        let cfg = UaenConfig {
            n_kernel_1: 256,
            n_kernel_2: 32,
            n_hidden: 3,
            l_slots: 16,
            n_users: 64,
            resources: 4,
        };
        assert_eq!(cfg.dense_widths(), vec![192, 128, 64]);
        let mut bad = cfg.clone();
        bad.n_kernel_2 = 256;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn audn_dimensions() {
        let cfg = AudnConfig {
            n_hidden: 10,
            width: 320,
            p_drop: 0.1,
            n_users: 64,
            preamble_len: 16,
            uses_alpha: true,
        };
        assert_eq!(cfg.input_width(), 96);
        assert!(cfg.validate().is_ok());
        assert!(AudnConfig {
            width: 300,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(AudnConfig { p_drop: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold_decide(&[0.0, 0.0], 0.4).active_count(), 0);
        assert_eq!(threshold_decide(&[0.4], 0.4).0, vec![false]);
        assert_eq!(threshold_decide(&[0.39, 0.41], 0.4).0, vec![false, true]);
    }

    #[test]
    fn spec_params_matches_built_network() {
        let cfg = RunConfig::builtin("scaled").unwrap();
        for variant in Variant::ALL {
            let mut store = ParamStore::new();
            let ae = Autoencoder::build(&cfg, variant, 1, &mut store).unwrap();
            if let Some(specs) = Autoencoder::uaen_specs(&cfg, variant).unwrap() {
                assert_eq!(spec_params(&specs), ae.uaen_params(&store));
            }
        }
    }

    #[test]
    fn fc_uaen_budget_is_close() {
        let cfg = RunConfig::builtin("scaled").unwrap();
        let conv = spec_params(&Autoencoder::uaen_specs(&cfg, Variant::Full).unwrap().unwrap());
        let fc = spec_params(&Autoencoder::uaen_specs(&cfg, Variant::FcUaen).unwrap().unwrap());
        let rel = (fc as f64 - conv as f64).abs() / conv as f64;
        assert!(rel < 0.05, "conv {conv} fc {fc}");
    }

    #[test]
    fn attach_checks_shapes() {
        let cfg = RunConfig::builtin("scaled").unwrap();
        let mut store = ParamStore::new();
        Autoencoder::build(&cfg, Variant::Full, 3, &mut store).unwrap();
        assert!(Autoencoder::attach(&cfg, Variant::Full, &store).is_ok());
        assert!(Autoencoder::attach(&cfg, Variant::PreambleOnly, &store).is_err());
        let mut other = cfg.clone();
        other.system.slots = 4;
        assert!(Autoencoder::attach(&other, Variant::Full, &store).is_err());
    }
}
