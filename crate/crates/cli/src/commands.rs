use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gorl_core::analysis::{self, DensityEstimate, ModeSummary};
use gorl_core::decoder::Decoder;
use gorl_core::envs::{collect_rollouts, EnvKind, PolicySampler, VecEnv};
use gorl_core::mathcore::{Matrix, RngStream};
use gorl_core::scheduler::{
    evaluate, run_stage, train_encoder_only, EvalPoint, MetricsRow, NullObserver, TrainObserver,
    TrainState, EVAL_STREAM_BASE,
};
use gorl_core::verify::{self, CheckResult};

use crate::checkpoint::{latest_path, stage_path, write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Streams for density sampling; disjoint from training and evaluation.
pub const ANALYSIS_STREAM_BASE: u64 = 1 << 44;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes())
}

fn core_io(path: &Path, e: std::io::Error) -> gorl_core::Error {
    gorl_core::Error::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub tag: String,
    pub state: Vec<f64>,
    pub rule: String,
    pub samples: usize,
    pub bandwidth: f64,
    pub modes: usize,
    /// Mode locations along the principal direction, in action units.
    pub locations: Vec<f64>,
    pub direction: Vec<f64>,
}

/// State used for the density pipeline, and the rule that chose it.
pub fn representative_state(ck: &Checkpoint) -> CliResult<(Vec<f64>, String)> {
    let cfg = &ck.config;
    if !cfg.analysis_state.is_empty() {
        return Ok((cfg.analysis_state.clone(), "explicit".into()));
    }
    let kind = cfg.env_kind()?;
    if kind == EnvKind::BimodalBandit {
        return Ok((vec![1.0], "bandit_max_separation".into()));
    }
    let spec = cfg.train_config()?.spec();
    let n = cfg.eval_episodes;
    let mut envs = VecEnv::new(spec, n, ck.seed, EVAL_STREAM_BASE)?;
    let mut norm = ck.normalizer.clone();
    let buf = collect_rollouts(&ck.policy(), &mut envs, &mut norm, spec.episode_length, false)?;
    let mut totals: Vec<(f64, usize)> = (0..n)
        .map(|e| {
            let r = (0..buf.horizon).map(|t| buf.rewards[buf.index(e, t)]).sum();
            (r, e)
        })
        .collect();
    totals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let env = totals[n / 2].1;
    Ok((buf.states.row(buf.index(env, 0)).to_vec(), "median_return_visited_state".into()))
}

/// Sample actions at one state, project to 1-D and count density modes.
pub fn analyze_checkpoint(
    ck: &Checkpoint,
    tag: &str,
    state: Option<(Vec<f64>, String)>,
) -> CliResult<(DensityReport, Vec<f64>, DensityEstimate)> {
    let (state, rule) = match state {
        Some(s) => s,
        None => representative_state(ck)?,
    };
    if state.len() != ck.normalizer.dim() {
        return Err(CliError::config(
            "analysis_state",
            format!("state has {} entries, environment expects {}", state.len(), ck.normalizer.dim()),
        ));
    }
    let n = ck.config.analysis_samples;
    let obs_row = ck.normalizer.normalize(&state);
    let obs = Matrix::from_rows(&vec![obs_row; n])?;
    let mut streams: Vec<RngStream> = (0..n as u64)
        .map(|i| RngStream::new(ck.seed, ANALYSIS_STREAM_BASE + i))
        .collect();
    let actions = ck.policy().act(&obs, &mut streams)?.actions;
    let proj = analysis::pca_project_1d(&actions)?;
    let offset: f64 = (0..actions.cols())
        .map(|j| {
            let mean = (0..n).map(|i| actions.get(i, j)).sum::<f64>() / n as f64;
            mean * proj.direction[j]
        })
        .sum();
    let kde = analysis::kde_density(&proj.values, None, ck.config.bandwidth_factor)?;
    let ModeSummary { modes, locations, bandwidth } =
        analysis::count_modes(&kde, analysis::DEFAULT_MIN_PROMINENCE);
    let report = DensityReport {
        tag: tag.to_string(),
        state,
        rule,
        samples: n,
        bandwidth,
        modes,
        locations: locations.iter().map(|l| l + offset).collect(),
        direction: proj.direction.clone(),
    };
    Ok((report, proj.values, kde))
}

/// Run the density pipeline and write `density_<tag>.csv` and `modes_<tag>.json`.
pub fn cmd_analyze(
    ck: &Checkpoint,
    tag: &str,
    state: Option<(Vec<f64>, String)>,
    out: &Path,
) -> CliResult<DensityReport> {
    create_dir(out)?;
    let (report, values, kde) = analyze_checkpoint(ck, tag, state)?;
    write_text(&out.join(format!("density_{tag}.csv")), &analysis::density_csv(&values, &kde))?;
    write_json(&out.join(format!("modes_{tag}.json")), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub steps: usize,
    pub decoder: String,
    /// File name, relative to the run directory.
    pub checkpoint: PathBuf,
    pub modes: usize,
    pub mode_locations: Vec<f64>,
    pub decoder_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub env: String,
    pub decoder: String,
    pub total_steps: usize,
    pub updates: usize,
    pub final_return: f64,
    pub final_kl_to_prior: f64,
    pub mode_count: usize,
    pub analysis_state: Vec<f64>,
    pub analysis_rule: String,
    pub stages: Vec<StageSummary>,
    pub evals: Vec<EvalPoint>,
}

struct Recorder<'a> {
    out: &'a Path,
    config: &'a RunConfig,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    stages: Vec<StageSummary>,
    analysis: Option<(Vec<f64>, String)>,
}

impl Recorder<'_> {
    fn stage_end(&mut self, state: &TrainState) -> CliResult<()> {
        let ck = Checkpoint::capture(state, self.config);
        let path = stage_path(self.out, state.config.seed, state.stage);
        ck.save(&path)?;
        let tag = format!("stage{}", state.stage);
        let pinned = self.analysis.clone();
        let report = cmd_analyze(&ck, &tag, pinned, self.out)?;
        if self.analysis.is_none() {
            self.analysis = Some((report.state.clone(), report.rule.clone()));
        }
        self.stages.push(StageSummary {
            stage: state.stage,
            steps: state.cumulative_steps,
            decoder: state.decoder.kind().tag().to_string(),
            checkpoint: path.file_name().map(PathBuf::from).unwrap_or_default(),
            modes: report.modes,
            mode_locations: report.locations,
            decoder_loss: state.decoder_loss.is_finite().then_some(state.decoder_loss),
        });
        Ok(())
    }
}

fn to_core(e: CliError) -> gorl_core::Error {
    match e {
        CliError::Numeric(e) | CliError::Core(e) => e,
        other => gorl_core::Error::Io(other.to_string()),
    }
}

impl TrainObserver for Recorder<'_> {
    fn on_update(&mut self, row: &MetricsRow) -> gorl_core::Result<()> {
        writeln!(self.metrics, "{}", row.csv()).map_err(|e| core_io(&self.metrics_path, e))
    }

    fn on_stage_end(&mut self, state: &TrainState) -> gorl_core::Result<()> {
        self.stage_end(state).map_err(to_core)
    }

    fn on_progress(&mut self, state: &TrainState) -> gorl_core::Result<()> {
        let every = self.config.checkpoint_every;
        if every > 0 && state.updates.is_multiple_of(every) {
            Checkpoint::capture(state, self.config)
                .save(&latest_path(self.out, state.config.seed))
                .map_err(to_core)?;
        }
        Ok(())
    }
}

/// Learning curve of `mean_return` against steps, with NaN rows dropped.
pub fn return_curve(metrics: &[MetricsRow], sigma: f64) -> CliResult<analysis::CurveSeries> {
    let rows: Vec<&MetricsRow> = metrics.iter().filter(|r| r.mean_return.is_finite()).collect();
    let steps: Vec<f64> = rows.iter().map(|r| r.step as f64).collect();
    let raw: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
    Ok(analysis::smooth_curve(&steps, &raw, sigma)?)
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub summary: TrainSummary,
}

/// Full staged training run writing metrics, checkpoints, densities and a summary into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<TrainOutcome> {
    let tc = cfg.train_config()?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let metrics_path = out.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut rec = Recorder {
        out,
        config: cfg,
        metrics: BufWriter::new(file),
        metrics_path: metrics_path.clone(),
        stages: Vec::new(),
        analysis: (!cfg.analysis_state.is_empty())
            .then(|| (cfg.analysis_state.clone(), "explicit".to_string())),
    };
    writeln!(rec.metrics, "{}", MetricsRow::HEADER).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut state = TrainState::new(&tc, Decoder::identity(tc.spec().action_dim))?;
    for m in 0..tc.plan.n_stages() {
        run_stage(&mut state, m, &mut rec).map_err(|e| match e {
            gorl_core::Error::Io(msg) => CliError::Format {
                path: out.to_path_buf(),
                message: msg,
            },
            e => CliError::from(e),
        })?;
    }
    rec.metrics.flush().map_err(|e| CliError::io(&metrics_path, e))?;
    let curve = return_curve(&state.metrics, cfg.curve_sigma)?;
    write_text(&out.join("curve_mean_return.csv"), &analysis::curve_csv(&curve))?;
    let final_return = state.evaluate(cfg.final_eval_episodes)?;
    let (analysis_state, analysis_rule) = rec.analysis.clone().unwrap_or_default();
    let summary = TrainSummary {
        seed: tc.seed,
        env: tc.env.name().to_string(),
        decoder: tc.decoder_kind.tag().to_string(),
        total_steps: state.cumulative_steps,
        updates: state.updates,
        final_return,
        final_kl_to_prior: state.last_stats.map_or(f64::NAN, |s| s.kl_to_prior),
        mode_count: rec.stages.last().map_or(0, |s| s.modes),
        analysis_state,
        analysis_rule,
        stages: rec.stages,
        evals: state.evals.clone(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(TrainOutcome { state, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub beta: f64,
    pub final_step: usize,
    pub final_kl_to_prior: f64,
    pub final_return: f64,
    pub dir: PathBuf,
}

/// One full training run per beta, same seed, each in `out/beta_<beta>`.
pub fn cmd_ablate_beta(cfg: &RunConfig, betas: &[f64], out: &Path) -> CliResult<Vec<AblationRow>> {
    if betas.is_empty() {
        return Err(CliError::config("beta_list", "beta list is empty"));
    }
    create_dir(out)?;
    let mut rows = Vec::new();
    for &beta in betas {
        let run = RunConfig {
            kl_beta: beta,
            ..cfg.clone()
        };
        let dir = out.join(format!("beta_{beta:e}"));
        let o = cmd_train(&run, &dir)?;
        rows.push(AblationRow {
            beta,
            final_step: o.summary.total_steps,
            final_kl_to_prior: o.summary.final_kl_to_prior,
            final_return: o.summary.final_return,
            dir,
        });
    }
    let mut csv = String::from("beta,final_step,final_kl_to_prior,final_return\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:.16e},{},{:.16e},{:.16e}\n",
            r.beta, r.final_step, r.final_kl_to_prior, r.final_return
        ));
    }
    write_text(&out.join("ablation.csv"), &csv)?;
    write_json(&out.join("ablation.json"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStudyRow {
    pub stage: usize,
    pub decoder: String,
    pub steps: usize,
    pub final_return: f64,
    pub final_kl_to_prior: f64,
}

/// Fresh encoder trained against each stage's frozen decoder snapshot.
pub fn cmd_stage_study(cfg: &RunConfig, out: &Path) -> CliResult<Vec<StageStudyRow>> {
    let tc = cfg.train_config()?;
    if cfg.stage_study_budget < tc.steps_per_rollout() {
        return Err(CliError::config(
            "stage_study_budget",
            format!("must cover one rollout ({} steps)", tc.steps_per_rollout()),
        ));
    }
    let mut snapshots = Vec::new();
    for m in 0..tc.plan.n_stages() {
        let path = stage_path(out, tc.seed, m);
        if !path.exists() {
            return Err(CliError::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing stage checkpoint"),
            ));
        }
        snapshots.push(Checkpoint::load(&path)?);
    }
    let mut rows = Vec::new();
    for ck in snapshots {
        let s = train_encoder_only(&tc, ck.decoder.clone(), cfg.stage_study_budget, &mut NullObserver)?;
        let ret = evaluate(&s.policy(), tc.spec(), &s.normalizer, cfg.final_eval_episodes, tc.seed)?;
        rows.push(StageStudyRow {
            stage: ck.stage,
            decoder: ck.decoder.kind().tag().to_string(),
            steps: s.cumulative_steps,
            final_return: ret,
            final_kl_to_prior: s.last_stats.map_or(f64::NAN, |x| x.kl_to_prior),
        });
    }
    let mut csv = String::from("stage,decoder,steps,final_return,final_kl_to_prior\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.16e},{:.16e}\n",
            r.stage, r.decoder, r.steps, r.final_return, r.final_kl_to_prior
        ));
    }
    write_text(&out.join("stage_study.csv"), &csv)?;
    write_json(&out.join("stage_study.json"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Run the lemma and identity checks; writes `verify.json` and fails if any check fails.
pub fn cmd_verify(seed: u64, out: &Path) -> CliResult<VerifyReport> {
    create_dir(out)?;
    let checks = verify::run_suite(seed)?;
    let report = VerifyReport {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(&out.join("verify.json"), &report)?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} {:?}", c.name, c.values))
        .collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(CliError::CheckFailed(failed.join("; ")))
    }
}
