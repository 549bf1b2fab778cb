use gfscma::config::{RunConfig, Variant};
use proptest::prelude::*;

#[test]
fn builtin_profiles_validate() {
    for name in ["default", "high-activity", "scaled"] {
        RunConfig::builtin(name).unwrap().validate().unwrap();
    }
    assert_eq!(RunConfig::builtin("default").unwrap(), RunConfig::default());
    let high = RunConfig::builtin("high-activity").unwrap();
    assert_eq!((high.system.p_bar, high.system.slots), (0.1, 32));
    assert_eq!((high.uaen.n_kernel_1, high.uaen.n_kernel_2), (512, 64));
}

#[test]
fn kernel_ordering_is_enforced_with_the_field_named() {
    let mut cfg = RunConfig::default();
    cfg.uaen.n_kernel_1 = 32;
    let msg = cfg.validate().unwrap_err().to_string();
    assert!(msg.contains("uaen.n_kernel_1"), "{msg}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = RunConfig::default().to_text().replace("gamma = 0.4", "gama = 0.4");
    assert!(RunConfig::parse(&text).is_err());
}

proptest! {
    #[test]
    fn text_form_round_trips(
        n in 1usize..200,
        kp in 1usize..64,
        l in 1usize..64,
        p in 0.0f64..1.0,
        gamma in 0.01f64..0.99,
        periods in proptest::collection::vec(1usize..20, 1..6),
        seed in any::<u64>(),
        v in 0usize..5,
    ) {
        let mut cfg = RunConfig::default();
        cfg.system.n_users = n;
        cfg.system.preamble_len = kp;
        cfg.system.slots = l;
        cfg.system.p_bar = p;
        cfg.audn.width = 5 * n;
        cfg.gamma = gamma;
        cfg.schedule.step2_periods = periods;
        cfg.seed = seed;
        cfg.variant = Variant::ALL[v];
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.digest(), cfg.digest());
        // The seed does not enter the config digest.
        let mut reseeded = cfg.clone();
        reseeded.seed = seed.wrapping_add(1);
        prop_assert_eq!(reseeded.digest(), cfg.digest());
    }
}
