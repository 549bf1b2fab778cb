use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::param::{ParamId, ParamRole, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Running-statistics decay: `running = MOMENTUM * running + (1 - MOMENTUM) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout masks, running-stat updates.
    Train,
    /// Running statistics, identity dropout.
    Eval,
}

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Kernels of width `width` applied with stride `width` across `slots`
    /// consecutive segments of the input, i.e. one dense map shared by all slots.
    Conv1d {
        width: usize,
        kernels: usize,
        slots: usize,
    },
    /// Normalizes `channels` features, pooling statistics over the batch and
    /// over `groups` positions (`groups = 1` for dense features, `slots` after
    /// a conv layer).
    BatchNorm {
        channels: usize,
        groups: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        p: f64,
    },
    /// `x + body(x)`; the body must preserve width.
    Residual(Vec<LayerSpec>),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Residual(_) => "residual",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        match *self {
            LayerSpec::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                bad(format!("dense {inputs}->{outputs} has a zero size"))
            }
            LayerSpec::Conv1d { width, kernels, slots } if width == 0 || kernels == 0 || slots == 0 => bad(format!(
                "conv1d width={width} kernels={kernels} slots={slots} has a zero size"
            )),
            LayerSpec::BatchNorm { channels, groups } if channels == 0 || groups == 0 => {
                bad(format!("batchnorm channels={channels} groups={groups} has a zero size"))
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                bad(format!("dropout probability {p} outside [0, 1)"))
            }
            LayerSpec::Residual(ref body) if body.is_empty() => bad("empty residual body".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Linear {
        conv: bool,
        weight: ParamId,
        bias: ParamId,
        inputs: usize,
        outputs: usize,
        slots: usize,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
        channels: usize,
        groups: usize,
    },
    Relu,
    Sigmoid,
    Dropout(f64),
    Residual(Network),
}

#[derive(Clone, Debug)]
struct NamedLayer {
    name: String,
    layer: Layer,
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Debug)]
pub struct Tape {
    caches: Vec<Cache>,
}

#[derive(Debug)]
enum Cache {
    Linear(Tensor),
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Tensor),
    Sigmoid(Tensor),
    Dropout(Option<Vec<f64>>),
    Residual(Tape),
}

/// One row of a network summary.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSummary {
    pub name: String,
    pub kind: &'static str,
    pub depth: usize,
    pub input_width: usize,
    pub output_width: usize,
    pub params: usize,
    pub detail: String,
}

/// A sequential stack of layers whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<NamedLayer>,
    input_width: usize,
    output_width: usize,
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl Network {
    /// Registers parameters for `specs` under `prefix` and returns the network.
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_width: usize,
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_width;
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let name = format!("{prefix}.l{i}");
            let (layer, out) = match *spec {
                LayerSpec::Dense { inputs, outputs } => {
                    if width != inputs {
                        return Err(shape_err(&name, inputs, width));
                    }
                    let w = Tensor::from_vec(&[inputs, outputs], glorot(inputs, outputs, inputs * outputs, rng))?;
                    let layer = Layer::Linear {
                        conv: false,
                        weight: store.add(format!("{name}.weight"), ParamRole::Trainable, w)?,
                        bias: store.add(format!("{name}.bias"), ParamRole::Trainable, Tensor::zeros(&[outputs]))?,
                        inputs,
                        outputs,
                        slots: 1,
                    };
                    (layer, outputs)
                }
                LayerSpec::Conv1d {
                    width: kw,
                    kernels,
                    slots,
                } => {
                    if width != kw * slots {
                        return Err(shape_err(&name, kw * slots, width));
                    }
                    let w = Tensor::from_vec(&[kw, kernels], glorot(kw, kernels, kw * kernels, rng))?;
                    let layer = Layer::Linear {
                        conv: true,
                        weight: store.add(format!("{name}.weight"), ParamRole::Trainable, w)?,
                        bias: store.add(format!("{name}.bias"), ParamRole::Trainable, Tensor::zeros(&[kernels]))?,
                        inputs: kw,
                        outputs: kernels,
                        slots,
                    };
                    (layer, kernels * slots)
                }
                LayerSpec::BatchNorm { channels, groups } => {
                    if width != channels * groups {
                        return Err(shape_err(&name, channels * groups, width));
                    }
                    let ones = Tensor::from_vec(&[channels], vec![1.0; channels])?;
                    let zeros = Tensor::zeros(&[channels]);
                    let layer = Layer::BatchNorm {
                        gamma: store.add(format!("{name}.gamma"), ParamRole::Trainable, ones.clone())?,
                        beta: store.add(format!("{name}.beta"), ParamRole::Trainable, zeros.clone())?,
                        mean: store.add(format!("{name}.running_mean"), ParamRole::RunningStat, zeros)?,
                        var: store.add(format!("{name}.running_var"), ParamRole::RunningStat, ones)?,
                        channels,
                        groups,
                    };
                    (layer, width)
                }
                LayerSpec::Relu => (Layer::Relu, width),
                LayerSpec::Sigmoid => (Layer::Sigmoid, width),
                LayerSpec::Dropout { p } => (Layer::Dropout(p), width),
                LayerSpec::Residual(ref body) => {
                    let inner = Network::build(store, &name, width, body, rng)?;
                    if inner.output_width != width {
                        return Err(shape_err(&format!("{name} residual body"), width, inner.output_width));
                    }
                    (Layer::Residual(inner), width)
                }
            };
            layers.push(NamedLayer { name, layer });
            width = out;
        }
        Ok(Self {
            layers,
            input_width,
            output_width: width,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// Forward pass recording a tape. In train mode batch-norm running
    /// statistics in `store` are updated.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        input: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut updates = Vec::new();
        let out = self.run(store, input.clone(), mode, rng, Some(&mut caches), &mut updates)?;
        for (id, values) in updates {
            store.value_mut(id).data_mut().copy_from_slice(&values);
        }
        Ok((out, Tape { caches }))
    }

    /// Inference-only pass over an immutable store.
    pub fn forward_eval(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut updates = Vec::new();
        self.run(store, input.clone(), Mode::Eval, &mut NoRandomness, None, &mut updates)
    }

    fn run<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        mut x: Tensor,
        mode: Mode,
        rng: &mut R,
        mut tape: Option<&mut Vec<Cache>>,
        updates: &mut Vec<(ParamId, Vec<f64>)>,
    ) -> Result<Tensor> {
        if x.cols() != self.input_width {
            return Err(shape_err("network input", self.input_width, x.cols()));
        }
        let batch = x.rows();
        for NamedLayer { name, layer } in &self.layers {
            let (out, cache) = match layer {
                &Layer::Linear {
                    weight,
                    bias,
                    inputs,
                    outputs,
                    slots,
                    ..
                } => {
                    let rows = batch * slots;
                    let mut out = vec![0.0; rows * outputs];
                    gemm(
                        rows,
                        inputs,
                        outputs,
                        x.data(),
                        false,
                        store.value(weight).data(),
                        false,
                        0.0,
                        &mut out,
                    );
                    let b = store.value(bias).data();
                    for row in out.chunks_exact_mut(outputs) {
                        row.iter_mut().zip(b).for_each(|(o, bb)| *o += bb);
                    }
                    (Tensor::from_vec(&[batch, slots * outputs], out)?, Cache::Linear(x))
                }
                &Layer::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    channels,
                    groups,
                } => {
                    let n = batch * groups;
                    let (mu, sigma2) = if mode == Mode::Train {
                        let (mu, sigma2) = channel_moments(x.data(), channels);
                        let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                        let rm: Vec<f64> = store
                            .value(mean)
                            .data()
                            .iter()
                            .zip(&mu)
                            .map(|(r, m)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * m)
                            .collect();
                        let rv: Vec<f64> = store
                            .value(var)
                            .data()
                            .iter()
                            .zip(&sigma2)
                            .map(|(r, v)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * v * unbiased)
                            .collect();
                        updates.push((mean, rm));
                        updates.push((var, rv));
                        (mu, sigma2)
                    } else {
                        (store.value(mean).data().to_vec(), store.value(var).data().to_vec())
                    };
                    let inv_std: Vec<f64> = sigma2.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let g = store.value(gamma).data();
                    let b = store.value(beta).data();
                    let mut xhat = x.into_data();
                    let mut out = vec![0.0; xhat.len()];
                    for (xr, or) in xhat.chunks_exact_mut(channels).zip(out.chunks_exact_mut(channels)) {
                        for c in 0..channels {
                            xr[c] = (xr[c] - mu[c]) * inv_std[c];
                            or[c] = g[c] * xr[c] + b[c];
                        }
                    }
                    (
                        Tensor::from_vec(&[batch, channels * groups], out)?,
                        Cache::BatchNorm {
                            xhat,
                            inv_std,
                            train: mode == Mode::Train,
                        },
                    )
                }
                Layer::Relu => {
                    let mut out = x;
                    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    (out.clone(), Cache::Relu(out))
                }
                Layer::Sigmoid => {
                    let mut out = x;
                    out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                    (out.clone(), Cache::Sigmoid(out))
                }
                &Layer::Dropout(p) => {
                    if mode == Mode::Train && p > 0.0 {
                        let keep = 1.0 / (1.0 - p);
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                            .collect();
                        let mut out = x;
                        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        (out, Cache::Dropout(Some(mask)))
                    } else {
                        (x, Cache::Dropout(None))
                    }
                }
                Layer::Residual(body) => {
                    let mut inner = tape.as_ref().map(|_| Vec::new());
                    let mut y = body.run(store, x.clone(), mode, rng, inner.as_mut(), updates)?;
                    y.data_mut().iter_mut().zip(x.data()).for_each(|(a, b)| *a += b);
                    (
                        y,
                        Cache::Residual(Tape {
                            caches: inner.unwrap_or_default(),
                        }),
                    )
                }
            };
            if !out.is_finite() {
                return Err(NnError::NonFinite(name.clone()));
            }
            if let Some(t) = tape.as_deref_mut() {
                t.push(cache);
            }
            x = out;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients into `store` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, store: &mut ParamStore, tape: Tape, grad_out: &Tensor) -> Result<Tensor> {
        if tape.caches.len() != self.layers.len() {
            return Err(NnError::TapeMismatch);
        }
        if grad_out.cols() != self.output_width {
            return Err(shape_err("network output gradient", self.output_width, grad_out.cols()));
        }
        let batch = grad_out.rows();
        let mut g = grad_out.clone();
        for (NamedLayer { layer, .. }, cache) in self.layers.iter().zip(tape.caches).rev() {
            g = match (layer, cache) {
                (
                    &Layer::Linear {
                        weight,
                        bias,
                        inputs,
                        outputs,
                        slots,
                        ..
                    },
                    Cache::Linear(x),
                ) => {
                    let rows = batch * slots;
                    if x.len() != rows * inputs || g.len() != rows * outputs {
                        return Err(NnError::TapeMismatch);
                    }
                    gemm(
                        inputs,
                        rows,
                        outputs,
                        x.data(),
                        true,
                        g.data(),
                        false,
                        1.0,
                        store.grad_mut(weight).data_mut(),
                    );
                    let db = store.grad_mut(bias).data_mut();
                    for row in g.data().chunks_exact(outputs) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    let mut dx = vec![0.0; rows * inputs];
                    gemm(
                        rows,
                        outputs,
                        inputs,
                        g.data(),
                        false,
                        store.value(weight).data(),
                        true,
                        0.0,
                        &mut dx,
                    );
                    Tensor::from_vec(&[batch, slots * inputs], dx)?
                }
                (
                    &Layer::BatchNorm {
                        gamma,
                        beta,
                        channels,
                        groups,
                        ..
                    },
                    Cache::BatchNorm { xhat, inv_std, train },
                ) => {
                    if xhat.len() != g.len() {
                        return Err(NnError::TapeMismatch);
                    }
                    let n = (batch * groups) as f64;
                    let mut dgamma = vec![0.0; channels];
                    let mut dbeta = vec![0.0; channels];
                    for (gr, xr) in g.data().chunks_exact(channels).zip(xhat.chunks_exact(channels)) {
                        for c in 0..channels {
                            dgamma[c] += gr[c] * xr[c];
                            dbeta[c] += gr[c];
                        }
                    }
                    let gam = store.value(gamma).data().to_vec();
                    let mut dx = g.into_data();
                    for (dr, xr) in dx.chunks_exact_mut(channels).zip(xhat.chunks_exact(channels)) {
                        for c in 0..channels {
                            let dxhat = dr[c] * gam[c];
                            dr[c] = if train {
                                inv_std[c] / n * (n * dxhat - gam[c] * dbeta[c] - xr[c] * gam[c] * dgamma[c])
                            } else {
                                dxhat * inv_std[c]
                            };
                        }
                    }
                    store
                        .grad_mut(gamma)
                        .data_mut()
                        .iter_mut()
                        .zip(&dgamma)
                        .for_each(|(a, b)| *a += b);
                    store
                        .grad_mut(beta)
                        .data_mut()
                        .iter_mut()
                        .zip(&dbeta)
                        .for_each(|(a, b)| *a += b);
                    Tensor::from_vec(&[batch, channels * groups], dx)?
                }
                (Layer::Relu, Cache::Relu(out)) => {
                    let mut dx = g;
                    dx.data_mut().iter_mut().zip(out.data()).for_each(|(d, o)| {
                        if *o <= 0.0 {
                            *d = 0.0
                        }
                    });
                    dx
                }
                (Layer::Sigmoid, Cache::Sigmoid(out)) => {
                    let mut dx = g;
                    dx.data_mut()
                        .iter_mut()
                        .zip(out.data())
                        .for_each(|(d, s)| *d *= s * (1.0 - s));
                    dx
                }
                (Layer::Dropout(_), Cache::Dropout(mask)) => {
                    let mut dx = g;
                    if let Some(mask) = mask {
                        dx.data_mut().iter_mut().zip(&mask).for_each(|(d, m)| *d *= m);
                    }
                    dx
                }
                (Layer::Residual(body), Cache::Residual(inner)) => {
                    let mut dx = body.backward(store, inner, &g)?;
                    dx.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                    dx
                }
                _ => return Err(NnError::TapeMismatch),
            };
        }
        Ok(g)
    }

    /// Layer table, residual bodies flattened with increased depth.
    pub fn summary(&self, store: &ParamStore) -> Vec<LayerSummary> {
        let mut rows = Vec::new();
        self.summarize(store, 0, self.input_width, &mut rows);
        rows
    }

    fn summarize(&self, store: &ParamStore, depth: usize, mut width: usize, rows: &mut Vec<LayerSummary>) {
        for NamedLayer { name, layer } in &self.layers {
            let (kind, out, params, detail) = match layer {
                &Layer::Linear {
                    conv,
                    weight,
                    bias,
                    inputs,
                    outputs,
                    slots,
                } => {
                    let params = store.value(weight).len() + store.value(bias).len();
                    if conv {
                        (
                            "conv1d",
                            slots * outputs,
                            params,
                            format!("kernels={outputs} width={inputs} slots={slots}"),
                        )
                    } else {
                        ("dense", outputs, params, format!("nodes={outputs}"))
                    }
                }
                &Layer::BatchNorm {
                    gamma,
                    beta,
                    channels,
                    groups,
                    ..
                } => (
                    "batchnorm",
                    width,
                    store.value(gamma).len() + store.value(beta).len(),
                    format!("channels={channels} groups={groups}"),
                ),
                Layer::Relu => ("relu", width, 0, String::new()),
                Layer::Sigmoid => ("sigmoid", width, 0, String::new()),
                Layer::Dropout(p) => ("dropout", width, 0, format!("p={p}")),
                Layer::Residual(body) => {
                    let params = body.trainable_params(store);
                    rows.push(LayerSummary {
                        name: name.clone(),
                        kind: "residual",
                        depth,
                        input_width: width,
                        output_width: width,
                        params,
                        detail: format!("{} inner layers", body.layers.len()),
                    });
                    body.summarize(store, depth + 1, width, rows);
                    continue;
                }
            };
            rows.push(LayerSummary {
                name: name.clone(),
                kind,
                depth,
                input_width: width,
                output_width: out,
                params,
                detail,
            });
            width = out;
        }
    }

    /// Number of trainable scalars owned by this network.
    pub fn trainable_params(&self, store: &ParamStore) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.layer {
                Layer::Linear { weight, bias, .. } => store.value(*weight).len() + store.value(*bias).len(),
                Layer::BatchNorm { gamma, beta, .. } => store.value(*gamma).len() + store.value(*beta).len(),
                Layer::Residual(body) => body.trainable_params(store),
                _ => 0,
            })
            .sum()
    }
}

/// Eval mode never draws random numbers.
struct NoRandomness;

impl rand::RngCore for NoRandomness {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward pass drew a random number")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward pass drew a random number")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("eval-mode forward pass drew a random number")
    }
}

fn channel_moments(x: &[f64], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / channels) as f64;
    let mut mu = vec![0.0; channels];
    for row in x.chunks_exact(channels) {
        mu.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; channels];
    for row in x.chunks_exact(channels) {
        for c in 0..channels {
            let d = row[c] - mu[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mu, var)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
