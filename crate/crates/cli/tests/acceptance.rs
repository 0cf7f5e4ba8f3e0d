//! Acceptance criteria 1-10, one PASS/FAIL line each. Criteria listed in
//! `EXPECTED_RED` are reported but do not fail the target; see README.

use std::path::Path;
use std::time::Instant;

use gorl_cli::checkpoint::{stage_path, Checkpoint};
use gorl_cli::commands::{cmd_ablate_beta, cmd_stage_study, cmd_train};
use gorl_cli::config::RunConfig;
use gorl_core::analysis::{count_modes, kde_density, DEFAULT_MIN_PROMINENCE};
use gorl_core::baseline::GaussianPpo;
use gorl_core::decoder::{
    train_decoder, unsquash, Decoder, DecoderArch, DecoderDataset, DecoderKind, DecoderTrainConfig,
};
use gorl_core::mathcore::{gaussian_draw, Matrix, RngStream};
use gorl_core::scheduler::{run_training, MetricsRow, NullObserver, StagePlan};
use gorl_core::verify;

const EXPECTED_RED: [usize; 2] = [7, 9];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
}

type Check = Result<(bool, String), String>;

fn timed(id: usize, name: &'static str, limit: Option<f64>, f: impl FnOnce() -> Check) -> Line {
    let t = Instant::now();
    let r = f();
    let secs = t.elapsed().as_secs_f64();
    let (mut passed, mut detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    if let Some(l) = limit {
        if secs > l {
            passed = false;
            detail.push_str(&format!("; over time limit {l}s"));
        }
    }
    let line = Line { id, name, passed, detail, secs };
    println!(
        "[{}] criterion {:>2} {:<28} {:>7.1}s  {}",
        if line.passed { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.secs,
        line.detail
    );
    line
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn gradient_exactness() -> Check {
    let worst = verify::gradient_sweep(2024, 100).map_err(e)?;
    Ok((worst < 1e-4, format!("100 nets, worst rel err {worst:.2e}")))
}

fn latent_gradient() -> Check {
    let g = verify::cubic_bandit_check(1_000_000, 7).map_err(e)?;
    Ok((
        g.z.iter().all(|z| z.abs() < 3.0),
        format!(
            "z(mu) {:.2}, z(rho) {:.2}; score {:.4}/{:.4}, fd {:.4}/{:.4}",
            g.z[0], g.z[1], g.score_function[0], g.score_function[1], g.finite_difference[0], g.finite_difference[1]
        ),
    ))
}

fn improvement_bound() -> Check {
    let (slack, excess, residual) = verify::bound_sweep(11, 200).map_err(e)?;
    Ok((
        slack >= -1e-9 && excess <= 1e-10,
        format!("200 instances, min slack {slack:.3e}, max visitation excess {excess:.3e}, identity residual {residual:.1e}"),
    ))
}

fn data_processing() -> Check {
    let gap = verify::data_processing_sweep(13, 500).map_err(e)?;
    Ok((gap <= 1e-12, format!("500 triples, max TV(action)-TV(latent) {gap:.3e}")))
}

fn csv(rows: &[MetricsRow]) -> String {
    rows.iter().map(MetricsRow::csv).collect::<Vec<_>>().join("\n")
}

fn baseline_equivalence() -> Check {
    let rc = RunConfig {
        env: "two_goal_point_mass".into(),
        decoder: "identity".into(),
        kl_beta: 0.0,
        seed: 5,
        ..RunConfig::default()
    };
    let mut cfg = rc.train_config().map_err(e)?;
    let per = cfg.steps_per_rollout();
    cfg.plan = StagePlan { budgets: vec![50 * per], decoder_epochs: vec![0], reinit_encoder: vec![false] };
    let gorl = run_training(&cfg, &mut NullObserver).map_err(e)?;
    let mut base = GaussianPpo::new(&cfg).map_err(e)?;
    base.train(50 * per, &mut NullObserver).map_err(e)?;
    let same = gorl.metrics.len() == 50 && csv(&gorl.metrics) == csv(&base.metrics);
    let params = gorl.head.params() == base.head.params();
    Ok((same && params, format!("50 updates, metrics identical {same}, encoder params identical {params}")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mode_recovery(kind: DecoderKind) -> Check {
    let mut s = RngStream::new(21, 0);
    let n = 10_000;
    let targets: Vec<f64> = (0..n)
        .map(|_| {
            let m = if s.uniform() < 0.5 { 0.7 } else { -0.7 };
            unsquash((m + 0.05 * s.normal()).clamp(-1.0, 1.0))
        })
        .collect();
    let data = DecoderDataset {
        states: Matrix::filled(n, 1, 0.3),
        targets: Matrix::column(&targets).map_err(e)?,
    };
    let mut dec = Decoder::build(kind, 1, 1, &DecoderArch::default(), &mut s).map_err(e)?;
    train_decoder(&mut dec, &data, &DecoderTrainConfig::default(), &mut s).map_err(e)?;
    let eps = gaussian_draw(&mut s, n, 1);
    let a = dec.decode_shared(&Matrix::filled(n, 1, 0.3), &eps, &mut s).map_err(e)?.into_data();
    let pos: Vec<f64> = a.iter().copied().filter(|&x| x > 0.0).collect();
    let neg: Vec<f64> = a.iter().copied().filter(|&x| x <= 0.0).collect();
    let split = pos.len() as f64 / n as f64;
    let (mp, mn) = (median(pos), median(neg));
    let modes = count_modes(&kde_density(&a, None, 0.8).map_err(e)?, DEFAULT_MIN_PROMINENCE);
    let ok = (split - 0.5).abs() <= 0.1 && (mp - 0.7).abs() <= 0.1 && (mn + 0.7).abs() <= 0.1 && modes.modes == 2;
    Ok((ok, format!("{kind}: split {split:.3}, medians {mn:+.3}/{mp:+.3}, modes {}", modes.modes)))
}

struct SeedRun {
    seed: u64,
    stage0_modes: usize,
    final_modes: usize,
    gorl_return: f64,
    baseline_return: f64,
    study0: f64,
    study3: f64,
}

fn bandit_seed(seed: u64, dir: &Path) -> Result<SeedRun, String> {
    let rc = RunConfig {
        env: "bimodal_bandit".into(),
        decoder: "fm".into(),
        seed,
        ..RunConfig::default()
    };
    let out = dir.join(format!("seed{seed}"));
    let run = cmd_train(&rc, &out).map_err(e)?;
    let s = &run.summary;
    let mut base = GaussianPpo::new(&rc.train_config().map_err(e)?).map_err(e)?;
    base.train(s.total_steps, &mut NullObserver).map_err(e)?;
    if base.steps != s.total_steps {
        return Err(format!("step mismatch {} vs {}", base.steps, s.total_steps));
    }
    let baseline_return = base.evaluate(rc.final_eval_episodes).map_err(e)?;
    let study = cmd_stage_study(&rc, &out).map_err(e)?;
    Ok(SeedRun {
        seed,
        stage0_modes: s.stages[0].modes,
        final_modes: s.stages.last().map_or(0, |x| x.modes),
        gorl_return: s.final_return,
        baseline_return,
        study0: study[0].final_return,
        study3: study.last().map_or(f64::NAN, |r| r.final_return),
    })
}

fn beta_ablation(dir: &Path) -> Check {
    let rc = RunConfig {
        env: "two_goal_point_mass".into(),
        decoder: "fm".into(),
        seed: 0,
        ..RunConfig::default()
    };
    let rows = cmd_ablate_beta(&rc, &[0.0, 1e-3, 1e-2], dir).map_err(e)?;
    let kl: Vec<f64> = rows.iter().map(|r| r.final_kl_to_prior).collect();
    let matched = rows.iter().all(|r| r.final_step == rows[0].final_step);
    Ok((
        matched && kl[0] > kl[1] && kl[1] > kl[2],
        format!("KL at step {}: beta 0 {:.4e}, 1e-3 {:.4e}, 1e-2 {:.4e}", rows[0].final_step, kl[0], kl[1], kl[2]),
    ))
}

fn determinism(dir: &Path) -> Check {
    let mut rc = RunConfig {
        env: "two_goal_point_mass".into(),
        decoder: "diffusion".into(),
        seed: 17,
        final_eval_episodes: 64,
        analysis_samples: 2000,
        ..RunConfig::default()
    };
    let per = rc.n_envs * rc.horizon;
    rc.stage_budgets = vec![8 * per, 8 * per, 4 * per, 4 * per];
    let a = dir.join("a");
    let b = dir.join("b");
    cmd_train(&rc, &a).map_err(e)?;
    let run = cmd_train(&rc, &b).map_err(e)?;
    let same = std::fs::read(a.join("metrics.csv")).map_err(e)? == std::fs::read(b.join("metrics.csv")).map_err(e)?;

    let ck = Checkpoint::load(&stage_path(&b, 17, 3)).map_err(e)?;
    let live = Checkpoint::capture(&run.state, &rc);
    let path = dir.join("roundtrip.json");
    live.save(&path).map_err(e)?;
    let loaded = Checkpoint::load(&path).map_err(e)?;
    let mut draw = RngStream::new(99, 0);
    let mut identical = 0;
    for i in 0..100u64 {
        let st: Vec<f64> = (0..ck.normalizer.dim()).map(|_| draw.uniform_range(-2.0, 2.0)).collect();
        let ep: Vec<f64> = (0..loaded.decoder.action_dim()).map(|_| 2.0 * draw.normal()).collect();
        let x = run.state.decoder.decode(&st, &ep, &mut RngStream::new(3, i)).map_err(e)?;
        let y = loaded.decoder.decode(&st, &ep, &mut RngStream::new(3, i)).map_err(e)?;
        if x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()) {
            identical += 1;
        }
    }
    Ok((
        same && identical == 100,
        format!("metrics.csv byte-identical {same}; decode bit-identical {identical}/100"),
    ))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut lines = vec![
        timed(1, "gradient exactness", Some(60.0), gradient_exactness),
        timed(2, "latent gradient unbiased", Some(120.0), latent_gradient),
        timed(3, "improvement bound", Some(60.0), improvement_bound),
        timed(4, "data processing", None, data_processing),
        timed(5, "baseline equivalence", None, baseline_equivalence),
        timed(6, "mode recovery (fm)", Some(300.0), || mode_recovery(DecoderKind::FlowMatching)),
        timed(6, "mode recovery (diffusion)", Some(300.0), || mode_recovery(DecoderKind::Diffusion)),
    ];

    let t = Instant::now();
    let runs: Vec<Result<SeedRun, String>> = SEEDS.iter().map(|&s| bandit_seed(s, tmp.path())).collect();
    let shared = t.elapsed().as_secs_f64();
    for r in &runs {
        match r {
            Ok(r) => println!(
                "       seed {}: modes {}->{}, return gorl {:.4} baseline {:.4}, stage study {:.4} -> {:.4}",
                r.seed, r.stage0_modes, r.final_modes, r.gorl_return, r.baseline_return, r.study0, r.study3
            ),
            Err(err) => println!("       seed run failed: {err}"),
        }
    }
    let ok_runs: Vec<&SeedRun> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    lines.push(timed(7, "multimodality emergence", None, || {
        let good = ok_runs
            .iter()
            .filter(|r| r.stage0_modes == 1 && r.final_modes == 2 && r.gorl_return >= 1.15 * r.baseline_return)
            .count();
        let modes = ok_runs.iter().filter(|r| r.stage0_modes == 1 && r.final_modes == 2).count();
        let gain = ok_runs.iter().filter(|r| r.gorl_return >= 1.15 * r.baseline_return).count();
        Ok((
            good >= 4,
            format!("{good}/5 seeds satisfy both (modes 1->2: {modes}/5, +15% return: {gain}/5); shared runs {shared:.0}s"),
        ))
    }));
    lines.push(timed(8, "staged refinement ordering", None, || {
        let good = ok_runs.iter().filter(|r| r.study3 > r.study0).count();
        Ok((good >= 4, format!("stage-3 > stage-0 in {good}/5 seeds")))
    }));
    lines.push(timed(9, "beta ablation direction", None, || beta_ablation(&tmp.path().join("beta"))));
    lines.push(timed(10, "determinism and persistence", None, || determinism(&tmp.path().join("det"))));

    let unexpected: Vec<&Line> = lines.iter().filter(|l| !l.passed && !EXPECTED_RED.contains(&l.id)).collect();
    let red: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!("acceptance: {} lines, red criteria {:?}, expected red {:?}", lines.len(), red, EXPECTED_RED);
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
