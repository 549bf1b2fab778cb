use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use gfscma_nn::{ParamId, ParamRole, ParamStore, Tensor};

use crate::error::{invalid, Error, Result};

/// Directions shorter than this are treated as degenerate.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;

/// Per-user learnable preamble directions, stored as `pgn.direction` with
/// shape `N x 2Kp` (re/im interleaved). An active user emits its direction
/// scaled to unit norm; an inactive user emits zeros.
#[derive(Clone, Debug)]
pub struct PgnBank {
    id: ParamId,
    n_users: usize,
    preamble_len: usize,
}

impl PgnBank {
    pub const PARAM: &'static str = "pgn.direction";

    /// Registers directions drawn i.i.d. standard normal, i.e. uniformly
    /// random on the sphere after normalization.
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_users: usize,
        preamble_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_users == 0 || preamble_len == 0 {
            return Err(invalid("PGN needs at least one user and one preamble symbol"));
        }
        let data = (0..n_users * 2 * preamble_len)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let id = store.add(
            Self::PARAM,
            ParamRole::Trainable,
            Tensor::from_vec(&[n_users, 2 * preamble_len], data)?,
        )?;
        Ok(Self {
            id,
            n_users,
            preamble_len,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn preamble_len(&self) -> usize {
        self.preamble_len
    }

    pub fn param(&self) -> ParamId {
        self.id
    }

    /// Unit-norm preambles, row-major `N x 2Kp` reals, plus each row's norm
    /// before normalization.
    pub fn packed(&self, store: &ParamStore) -> Result<(Vec<f64>, Vec<f64>)> {
        let v = store.value(self.id).data();
        let width = 2 * self.preamble_len;
        let mut out = Vec::with_capacity(v.len());
        let mut norms = Vec::with_capacity(self.n_users);
        for (n, row) in v.chunks_exact(width).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm >= MIN_DIRECTION_NORM) {
                return Err(Error::NonFinite(format!(
                    "PGN direction of user {n} has degenerate norm {norm:e}"
                )));
            }
            out.extend(row.iter().map(|x| x / norm));
            norms.push(norm);
        }
        Ok((out, norms))
    }

    /// Complex preambles, row-major `N x Kp`.
    pub fn preambles(&self, store: &ParamStore) -> Result<Vec<Complex64>> {
        let (packed, _) = self.packed(store)?;
        Ok(crate::airlink::unpack(&packed))
    }

    pub fn emit(&self, store: &ParamStore, active: bool, user: usize) -> Result<Vec<Complex64>> {
        if user >= self.n_users {
            return Err(invalid(format!("user {user} out of range 0..{}", self.n_users)));
        }
        if !active {
            return Ok(vec![Complex64::new(0.0, 0.0); self.preamble_len]);
        }
        let width = 2 * self.preamble_len;
        let row = &store.value(self.id).data()[user * width..(user + 1) * width];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm >= MIN_DIRECTION_NORM) {
            return Err(Error::NonFinite(format!(
                "PGN direction of user {user} has degenerate norm {norm:e}"
            )));
        }
        Ok(row
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0] / norm, p[1] / norm))
            .collect())
    }

    /// Accumulates direction gradients from gradients with respect to the
    /// normalized preambles: `(g - p (p . g)) / |v|` per row.
    pub fn backward(&self, store: &mut ParamStore, packed: &[f64], norms: &[f64], grad: &[f64]) -> Result<()> {
        let width = 2 * self.preamble_len;
        crate::error::check_len("PGN gradient", self.n_users * width, grad.len())?;
        let g_store = store.grad_mut(self.id).data_mut();
        for n in 0..self.n_users {
            let p = &packed[n * width..(n + 1) * width];
            let g = &grad[n * width..(n + 1) * width];
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for i in 0..width {
                g_store[n * width + i] += (g[i] - p[i] * dot) / norms[n];
            }
        }
        Ok(())
    }
}

/// Maximum and mean off-diagonal `|<p_i, p_j>|` over all user pairs.
pub fn cross_correlation(preambles: &[Complex64], n_users: usize) -> (f64, f64) {
    let kp = preambles.len() / n_users;
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n_users {
        for j in 0..n_users {
            if i == j {
                continue;
            }
            let c: Complex64 = preambles[i * kp..(i + 1) * kp]
                .iter()
                .zip(&preambles[j * kp..(j + 1) * kp])
                .map(|(a, b)| a * b.conj())
                .sum();
            max = max.max(c.norm());
            sum += c.norm();
            count += 1;
        }
    }
    (max, if count == 0 { 0.0 } else { sum / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(n: usize, kp: usize) -> (PgnBank, ParamStore) {
        let mut store = ParamStore::new();
        let b = PgnBank::build(&mut store, n, kp, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (b, store)
    }

    #[test]
    fn gating_and_norm() {
        let (b, store) = bank(4, 3);
        for n in 0..4 {
            assert!(b
                .emit(&store, false, n)
                .unwrap()
                .iter()
                .all(|c| c.re == 0.0 && c.im == 0.0));
            let p = b.emit(&store, true, n).unwrap();
            let e: f64 = p.iter().map(|c| c.norm_sqr()).sum();
            assert!((e.sqrt() - 1.0).abs() <= 1e-9);
        }
        assert!(b.emit(&store, true, 4).is_err());
    }

    #[test]
    fn three_four_five() {
        let (b, mut store) = bank(1, 2);
        store
            .value_mut(b.param())
            .data_mut()
            .copy_from_slice(&[3.0, 4.0, 0.0, 0.0]);
        let p = b.emit(&store, true, 0).unwrap();
        assert!((p[0].re - 0.6).abs() < 1e-15 && (p[0].im - 0.8).abs() < 1e-15);
        assert_eq!(p[1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn degenerate_direction_is_a_fault() {
        let (b, mut store) = bank(2, 2);
        store.value_mut(b.param()).data_mut()[..4].fill(0.0);
        assert!(b.emit(&store, true, 0).is_err());
        assert!(b.packed(&store).is_err());
        // Inactive emission never touches the direction.
        assert!(b.emit(&store, false, 0).is_ok());
    }

    #[test]
    fn orthogonal_preambles_have_zero_correlation() {
        let pre = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        assert_eq!(cross_correlation(&pre, 2), (0.0, 0.0));
    }
}
