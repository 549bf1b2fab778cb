#![allow(dead_code)]

use gfscma::config::RunConfig;

/// Six users, 4-symbol preambles, L = 2. Small enough for a full training
/// run in well under a second.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::builtin("scaled").unwrap();
    cfg.system.n_users = 6;
    cfg.system.preamble_len = 4;
    cfg.system.slots = 2;
    cfg.system.p_bar = 0.3;
    cfg.uaen.n_kernel_1 = 8;
    cfg.uaen.n_kernel_2 = 4;
    cfg.uaen.hidden_layers = 2;
    cfg.uaen.fc_hidden_layers = 3;
    cfg.audn.hidden_layers = 1;
    cfg.audn.width = 30;
    cfg.schedule.step1_epochs = (1, 1);
    cfg.schedule.step2_periods = vec![1, 1];
    cfg.data.step1_samples = 60;
    cfg.data.step2_samples = 60;
    cfg.data.validation_samples = 40;
    cfg.data.test_samples = 40;
    cfg.seed = 5;
    cfg.validate().unwrap();
    cfg
}
