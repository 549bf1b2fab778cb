//! Activity sampling, received-signal superposition and AWGN.
//!
//! The preamble field observes `y_p = sum_n delta_n h_n p_n + n_p` over `Kp`
//! resources and each of the `L` data slots observes
//! `y_l = sum_n delta_n h_n w_l(n) + n_l` over `Kd` resources.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, invalid, Result};
use crate::scma::CtuPayload;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivityVector(pub Vec<bool>);

impl ActivityVector {
    pub fn inactive(n_users: usize) -> Self {
        Self(vec![false; n_users])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn active_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &a)| a).map(|(n, _)| n)
    }

    /// Entries as 0.0 / 1.0.
    pub fn as_targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&a| if a { 1.0 } else { 0.0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivityPrior {
    p_bar: f64,
}

impl ActivityPrior {
    pub fn new(p_bar: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_bar) {
            return Err(invalid(format!("activity probability {p_bar} outside [0, 1]")));
        }
        Ok(Self { p_bar })
    }

    pub fn p_bar(&self) -> f64 {
        self.p_bar
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelMode {
    #[default]
    Awgn,
    /// Flat Rayleigh fading, `h_n ~ CN(0, 1)` per user and frame.
    Rayleigh,
}

impl ChannelMode {
    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::Awgn => "awgn",
            ChannelMode::Rayleigh => "rayleigh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "awgn" => Some(ChannelMode::Awgn),
            "rayleigh" => Some(ChannelMode::Rayleigh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Complex64>,
    pub snr_db: f64,
}

impl ChannelRealization {
    pub fn awgn(n_users: usize, snr_db: f64) -> Self {
        Self {
            h: vec![Complex64::new(1.0, 0.0); n_users],
            snr_db,
        }
    }

    pub fn sample<R: Rng + ?Sized>(mode: ChannelMode, n_users: usize, snr_db: f64, rng: &mut R) -> Self {
        match mode {
            ChannelMode::Awgn => Self::awgn(n_users, snr_db),
            ChannelMode::Rayleigh => Self {
                h: (0..n_users).map(|_| complex_gaussian(1.0, rng)).collect(),
                snr_db,
            },
        }
    }
}

/// One received frame: `Kp` preamble samples and `L x Kd` data samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedFrame {
    pub y_p: Vec<Complex64>,
    /// Row-major `L x Kd`.
    pub y_d: Vec<Complex64>,
    pub slots: usize,
    pub resources: usize,
}

impl ReceivedFrame {
    pub fn data_row(&self, slot: usize) -> &[Complex64] {
        &self.y_d[slot * self.resources..(slot + 1) * self.resources]
    }
}

pub fn sample_activity<R: Rng + ?Sized>(prior: ActivityPrior, n_users: usize, rng: &mut R) -> ActivityVector {
    // One uniform per user keeps the draw count fixed regardless of p_bar.
    ActivityVector((0..n_users).map(|_| rng.random::<f64>() < prior.p_bar).collect())
}

pub fn sample_snr<R: Rng + ?Sized>(lo_db: f64, hi_db: f64, rng: &mut R) -> Result<f64> {
    if !(lo_db <= hi_db) || !lo_db.is_finite() || !hi_db.is_finite() {
        return Err(invalid(format!(
            "SNR range [{lo_db}, {hi_db}] is reversed or non-finite"
        )));
    }
    if lo_db == hi_db {
        return Ok(lo_db);
    }
    Ok(rng.random_range(lo_db..=hi_db))
}

/// Circularly-symmetric complex Gaussian sample with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Adds `CN(0, noise_var)` to each element. Draws nothing when `noise_var` is 0.
pub fn add_awgn<R: Rng + ?Sized>(signal: &mut [Complex64], noise_var: f64, rng: &mut R) {
    if noise_var == 0.0 {
        return;
    }
    for y in signal {
        *y += complex_gaussian(noise_var, rng);
    }
}

pub fn snr_to_noise_var(snr_db: f64, signal_per_element_energy: f64) -> Result<f64> {
    if !(signal_per_element_energy > 0.0) {
        return Err(invalid(format!(
            "signal energy per element must be positive, got {signal_per_element_energy}"
        )));
    }
    Ok(signal_per_element_energy / 10f64.powf(snr_db / 10.0))
}

fn check_noise_var(noise_var: f64) -> Result<()> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(invalid(format!("noise variance {noise_var} must be finite and >= 0")));
    }
    Ok(())
}

/// Noiseless preamble superposition. `preambles` is row-major `N x Kp`.
pub fn superpose_preamble_clean(
    delta: &ActivityVector,
    preambles: &[Complex64],
    chan: &ChannelRealization,
) -> Result<Vec<Complex64>> {
    let n_users = delta.len();
    if n_users == 0 || preambles.is_empty() || preambles.len() % n_users != 0 {
        return Err(invalid(format!(
            "preamble matrix of {} entries does not split over {n_users} users",
            preambles.len()
        )));
    }
    check_len("channel coefficients", n_users, chan.h.len())?;
    let kp = preambles.len() / n_users;
    let mut y = vec![ZERO; kp];
    for n in delta.active_users() {
        let h = chan.h[n];
        for (acc, p) in y.iter_mut().zip(&preambles[n * kp..(n + 1) * kp]) {
            *acc += h * p;
        }
    }
    Ok(y)
}

pub fn superpose_preamble<R: Rng + ?Sized>(
    delta: &ActivityVector,
    preambles: &[Complex64],
    chan: &ChannelRealization,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    check_noise_var(noise_var)?;
    let mut y = superpose_preamble_clean(delta, preambles, chan)?;
    add_awgn(&mut y, noise_var, rng);
    Ok(y)
}

/// Noiseless data superposition, returning a row-major `slots x resources`
/// block. `ctus` must hold exactly one payload per active user, in any order.
pub fn superpose_data_clean(
    delta: &ActivityVector,
    ctus: &[CtuPayload],
    chan: &ChannelRealization,
    slots: usize,
    resources: usize,
) -> Result<Vec<Complex64>> {
    check_len("channel coefficients", delta.len(), chan.h.len())?;
    check_len("payload count", delta.active_count(), ctus.len())?;
    let mut seen = vec![false; delta.len()];
    let mut y = vec![ZERO; slots * resources];
    for ctu in ctus {
        let n = ctu.user_index;
        if n >= delta.len() || !delta.0[n] {
            return Err(invalid(format!("payload for user {n}, who is not active")));
        }
        if std::mem::replace(&mut seen[n], true) {
            return Err(invalid(format!("duplicate payload for user {n}")));
        }
        check_len("payload slots", slots, ctu.slots())?;
        check_len("payload resources", resources, ctu.resources())?;
        let h = chan.h[n];
        for (acc, w) in y.iter_mut().zip(ctu.codewords()) {
            *acc += h * w;
        }
    }
    Ok(y)
}

pub fn superpose_data<R: Rng + ?Sized>(
    delta: &ActivityVector,
    ctus: &[CtuPayload],
    chan: &ChannelRealization,
    noise_var: f64,
    slots: usize,
    resources: usize,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    check_noise_var(noise_var)?;
    let mut y = superpose_data_clean(delta, ctus, chan, slots, resources)?;
    add_awgn(&mut y, noise_var, rng);
    Ok(y)
}

/// Packs complex values as interleaved `re, im` reals.
pub fn pack(values: &[Complex64], out: &mut Vec<f64>) {
    out.extend(values.iter().flat_map(|c| [c.re, c.im]));
}

/// Inverse of [`pack`].
pub fn unpack(reals: &[f64]) -> Vec<Complex64> {
    reals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activity_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let none = sample_activity(ActivityPrior::new(0.0).unwrap(), 64, &mut rng);
        assert_eq!(none.active_count(), 0);
        let all = sample_activity(ActivityPrior::new(1.0).unwrap(), 64, &mut rng);
        assert_eq!(all.active_count(), 64);
        assert!(ActivityPrior::new(1.1).is_err());
        assert!(ActivityPrior::new(-0.1).is_err());
        assert!(ActivityPrior::new(f64::NAN).is_err());
    }

    #[test]
    fn snr_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sample_snr(15.0, 15.0, &mut rng).unwrap(), 15.0);
        for _ in 0..1000 {
            let s = sample_snr(15.0, 20.0, &mut rng).unwrap();
            assert!((15.0..=20.0).contains(&s));
        }
        assert!(sample_snr(20.0, 15.0, &mut rng).is_err());
    }

    #[test]
    fn noise_var_examples() {
        assert_eq!(snr_to_noise_var(0.0, 1.0).unwrap(), 1.0);
        assert!((snr_to_noise_var(20.0, 1.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((snr_to_noise_var(10.0, 0.25).unwrap() - 0.025).abs() < 1e-15);
        assert!(snr_to_noise_var(10.0, 0.0).is_err());
    }

    #[test]
    fn single_user_preamble_is_exact() {
        let pre: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let delta = ActivityVector(vec![false, true, false]);
        let y = superpose_preamble(
            &delta,
            &pre,
            &ChannelRealization::awgn(3, 10.0),
            0.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(y, pre[2..4].to_vec());
    }

    #[test]
    fn negative_noise_var_rejected() {
        let delta = ActivityVector(vec![true]);
        let pre = [Complex64::new(1.0, 0.0)];
        let chan = ChannelRealization::awgn(1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(superpose_preamble(&delta, &pre, &chan, -1.0, &mut rng).is_err());
        assert!(superpose_preamble(&delta, &pre[..0], &chan, 0.0, &mut rng).is_err());
    }

    #[test]
    fn pack_round_trip() {
        let v = vec![Complex64::new(1.5, -2.0), Complex64::new(0.0, 3.0)];
        let mut out = Vec::new();
        pack(&v, &mut out);
        assert_eq!(out, vec![1.5, -2.0, 0.0, 3.0]);
        assert_eq!(unpack(&out), v);
    }
}
