#![allow(dead_code)]

use std::path::Path;

use gorl_cli::config::RunConfig;

/// Small staged run that finishes in seconds.
pub fn tiny(env: &str, decoder: &str, seed: u64) -> RunConfig {
    let mut c = RunConfig {
        env: env.into(),
        decoder: decoder.into(),
        seed,
        n_envs: 16,
        encoder_hidden: vec![16, 16],
        critic_hidden: vec![16, 16],
        decoder_hidden: vec![16, 16],
        ppo_epochs: 4,
        minibatch: 240,
        decoder_epochs: vec![3],
        final_eval_episodes: 32,
        analysis_samples: 1000,
        eval_episodes: 4,
        ..RunConfig::default()
    };
    let per = c.n_envs * c.horizon;
    c.stage_budgets = vec![3 * per, 2 * per, per, per];
    c.stage_study_budget = 2 * per;
    c
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}
