mod common;

use gfscma::config::{RunConfig, Variant};
use gfscma::models::Autoencoder;
use gfscma::training::*;
use gfscma_nn::{Adam, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Row-wise cross-entropy written out directly, with logs of the complement
/// taken through ln_1p.
fn bce_oracle(t: &[f64], p: &[f64], n: usize) -> f64 {
    let rows = t.len() / n;
    let mut total = 0.0;
    for r in 0..rows {
        let mut row = 0.0;
        for c in 0..n {
            let (ti, pi) = (t[r * n + c], p[r * n + c]);
            row += -(ti * pi.ln()) - (1.0 - ti) * (-pi).ln_1p();
        }
        total += row;
    }
    total / rows as f64
}

fn trainable(store: &ParamStore, prefix: &str) -> Vec<(String, Vec<f64>)> {
    store
        .iter()
        .filter(|p| p.is_trainable() && p.name.starts_with(prefix))
        .map(|p| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}

fn built(cfg: &RunConfig, variant: Variant) -> (Autoencoder, ParamStore, DataSource) {
    let mut store = ParamStore::new();
    let ae = Autoencoder::build(cfg, variant, cfg.seed, &mut store).unwrap();
    (ae, store, DataSource::from_config(cfg).unwrap())
}

#[test]
fn zero_learning_rate_changes_no_weight() {
    let cfg = common::tiny_config();
    let (ae, mut store, source) = built(&cfg, Variant::Full);
    let before = trainable(&store, "");
    let frames = source
        .frames(Split::Train, &(0..20).collect::<Vec<_>>(), 1, None)
        .unwrap();
    store.zero_grads();
    chain_step(
        &ae,
        &mut store,
        &frames,
        UaenRole::Trainable,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(store.iter().any(|p| p.grad.data().iter().any(|&g| g != 0.0)));
    Adam::default().step(&mut store, 0.0).unwrap();
    assert_eq!(before, trainable(&store, ""));
}

#[test]
fn pretraining_touches_only_the_uaen() {
    let cfg = common::tiny_config();
    let (ae, mut store, source) = built(&cfg, Variant::Full);
    let pgn = store.values_under("pgn.");
    let audn = store.values_under("audn.");
    let uaen = store.values_under("uaen.");
    pretrain_uaen(&cfg, &ae, &mut store, &source).unwrap();
    assert_eq!(pgn, store.values_under("pgn."));
    assert_eq!(audn, store.values_under("audn."));
    assert_ne!(uaen, store.values_under("uaen."));
}

#[test]
fn empty_pretraining_schedule_is_a_no_op() {
    let mut cfg = common::tiny_config();
    cfg.schedule.step1_epochs = (0, 0);
    let (ae, mut store, source) = built(&cfg, Variant::Full);
    let before = store.clone();
    let reports = pretrain_uaen(&cfg, &ae, &mut store, &source).unwrap();
    assert!(reports.is_empty());
    assert_eq!(before.values_under(""), store.values_under(""));
}

#[test]
fn learning_rate_drops_tenfold_after_t1() {
    let mut cfg = common::tiny_config();
    cfg.schedule.step1_epochs = (2, 1);
    let (ae, mut store, source) = built(&cfg, Variant::Full);
    let reports = pretrain_uaen(&cfg, &ae, &mut store, &source).unwrap();
    let lr_of = |e: usize| reports.iter().find(|r| r.epoch == e).unwrap().lr;
    assert_eq!(lr_of(1), cfg.schedule.step1_lr);
    assert_eq!(lr_of(2), cfg.schedule.step1_lr);
    assert_eq!(lr_of(3), cfg.schedule.step1_lr / 10.0);
}

#[test]
fn frozen_uaen_stays_bit_identical() {
    let cfg = common::tiny_config();
    let (ae, mut store, source) = built(&cfg, Variant::FrozenUaen);
    pretrain_uaen(&cfg, &ae, &mut store, &source).unwrap();
    let uaen = store.values_under("uaen.");
    let pgn = store.values_under("pgn.");
    let reports = train_end_to_end(&cfg, &ae, &mut store, &source, &mut |_, _| Ok(())).unwrap();
    assert!(!reports.is_empty());
    let after = store.values_under("uaen.");
    assert_eq!(uaen.len(), after.len());
    for ((na, a), (nb, b)) in uaen.iter().zip(&after) {
        assert_eq!(na, nb);
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{na} moved");
    }
    assert_ne!(pgn, store.values_under("pgn."));
}

#[test]
fn step_two_lr_per_period() {
    let cfg = common::tiny_config();
    let (ae, mut store, source) = built(&cfg, Variant::Full);
    let mut seen = Vec::new();
    let reports = train_end_to_end(&cfg, &ae, &mut store, &source, &mut |q, _| {
        seen.push(q);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2]);
    let lrs: Vec<f64> = reports.iter().filter(|r| r.split == "train").map(|r| r.lr).collect();
    assert_eq!(lrs, vec![0.01, 0.001]);
    // No resume metadata survives a completed run.
    assert!(Progress::read(&store).is_none());
    assert!(store.iter().all(|p| !p.name.contains('/')));
}

#[test]
fn batches_are_deterministic_with_the_configured_size() {
    let cfg = RunConfig::builtin("scaled").unwrap();
    let (ae, store, source) = built(&cfg, Variant::Full);
    let idx: Vec<usize> = (100..100 + cfg.schedule.batch_size).collect();
    let pre = ae.pgn.packed(&store).unwrap().0;
    let a = make_batch(&source.frames(Split::Train, &idx, 2, None).unwrap(), &pre, ae.dims).unwrap();
    let b = make_batch(&source.frames(Split::Train, &idx, 2, None).unwrap(), &pre, ae.dims).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.y_p.shape(), &[20, 16]);
    assert_eq!(a.y_d.shape(), &[20, 64]);
    assert_eq!(a.targets.shape(), &[20, 16]);
}

#[test]
fn validation_frames_ignore_the_epoch_counter() {
    let cfg = common::tiny_config();
    let source = DataSource::from_config(&cfg).unwrap();
    for i in 0..10 {
        assert_eq!(
            source.activity(Split::Validation, i),
            source.activity(Split::Validation, i)
        );
        assert_eq!(
            source.activity(Split::Train, i),
            source.frame(Split::Train, i, 7, None).unwrap().delta
        );
    }
}

#[test]
fn scaled_pretraining_reduces_validation_loss() {
    let mut cfg = RunConfig::builtin("scaled").unwrap();
    cfg.schedule.step1_epochs = (5, 0);
    let (ae, mut store, source) = built(&cfg, Variant::Full);
    let reports = pretrain_uaen(&cfg, &ae, &mut store, &source).unwrap();
    let val: Vec<f64> = reports
        .iter()
        .filter(|r| r.split == "validation")
        .map(|r| r.loss)
        .collect();
    assert_eq!(val.len(), 5);
    let avg: Vec<f64> = val.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    assert!(avg.windows(2).all(|w| w[1] <= w[0]), "validation losses {val:?}");
}

proptest! {
    #[test]
    fn bce_matches_oracle(seed in any::<u64>(), rows in 1usize..6, n in 1usize..9) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..rows * n).map(|_| rng.random_range(0..2) as f64).collect();
        let p: Vec<f64> = (0..rows * n).map(|_| rng.random_range(0.001..0.999)).collect();
        let tt = Tensor::from_vec(&[rows, n], t.clone()).unwrap();
        let pt = Tensor::from_vec(&[rows, n], p.clone()).unwrap();
        let (loss, grad) = bce(&tt, &pt).unwrap();
        let oracle = bce_oracle(&t, &p, n);
        prop_assert!((loss - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        for i in 0..rows * n {
            let mut up = p.clone();
            let mut down = p.clone();
            up[i] += 1e-7;
            down[i] -= 1e-7;
            let fd = (bce_oracle(&t, &up, n) - bce_oracle(&t, &down, n)) / 2e-7;
            prop_assert!((fd - grad.data()[i]).abs() <= 1e-5 * fd.abs().max(1.0));
        }
        // Both training stages share the objective exactly.
        let (a, ga) = Objective::Pretrain.evaluate(&tt, &pt).unwrap();
        let (b, gb) = Objective::EndToEnd.evaluate(&tt, &pt).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(ga, gb);
    }

    #[test]
    fn inactive_users_with_confident_scores_give_tiny_logit_gradients(rows in 1usize..20, n in 1usize..10, z in -60.0f64..-25.0) {
        let p = gfscma_nn::sigmoid(z);
        let tt = Tensor::zeros(&[rows, n]);
        let pt = Tensor::from_vec(&[rows, n], vec![p; rows * n]).unwrap();
        let (_, grad) = bce(&tt, &pt).unwrap();
        // Chain through the sigmoid: dL/dz = dL/dp * p (1 - p).
        for &g in grad.data() {
            prop_assert!((g * p * (1.0 - p)).abs() <= 1e-9);
        }
    }
}
