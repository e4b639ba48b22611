//! Subcommands of the `equiflow` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use equiflow_core::nn::{Model, VelocityField};
use equiflow_core::sampler::{equivariant_rollout_check, FlowPolicy, SamplerConfig, Selection};
use equiflow_core::toybench::{run_episode, seeded_rng, EnvKind, GaussianFlowOracle};
use equiflow_core::verify::{
    check_distributional_equivariance, check_error_sandwich, check_fabo_bound, check_isotropy,
    check_layer_equivariance, CheckStatus, FABO_MIN_SAMPLES,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::experiment::{build_dataset, evaluate, policy_smoothness, train, EvalSummary, EVAL_SEED_OFFSET};
use crate::formats::{read_metrics, Checkpoint, DemoFile, OutputDir, MANIFEST_FILE};

/// Environment variable naming the base output directory.
pub const OUT_DIR_ENV: &str = "EQUIFLOW_OUT_DIR";

/// The four weightings compared by `sweep-lambda`.
pub const SWEEP_VARIANTS: [&str; 4] = ["0.5(1-t)^2", "(1-t)^2", "2(1-t)^2", "0.5"];

pub const METRICS_HEADER: [&str; 6] = ["epoch", "cfm", "fabo", "total", "eval_success", "smoothness"];

#[derive(Debug, Parser)]
#[command(name = "equiflow", version, about = "Equivariant flow-matching policies on toy benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy; writes checkpoint.json, metrics.csv and manifest.json.
    Train(TrainArgs),
    /// Closed-loop success rate and smoothness of a checkpoint.
    Eval(EvalArgs),
    /// Roll out one episode and record every executed action and selection.
    Sample(SampleArgs),
    /// Run numerical verification suites.
    Verify(VerifyArgs),
    /// Train and evaluate the four λ(t) variants on shared demonstrations.
    SweepLambda(SweepArgs),
    /// Record expert demonstrations to demos.json.
    GenDemos(GenDemosArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory [default: $EQUIFLOW_OUT_DIR/<command>, else runs/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
            base.join(command)
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Demonstrations from `gen-demos`; generated from the config when omitted.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Must match the environment the checkpoint was trained on.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub nfe: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampler settings (m_candidates, n1, reset_period, nfe) from this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub nfe: Option<usize>,
    /// Candidates per prediction.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Equivariance,
    Fabo,
    Sandwich,
    Isotropy,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo samples per FABO/sandwich point and per side of each isotropy test.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Exit 0 when checks are inconclusive rather than failed.
    #[arg(long)]
    pub allow_inconclusive: bool,
    /// Network and environment for the equivariance suite.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Evaluation episodes per variant [default: eval_episodes from the config, else 50].
    #[arg(long)]
    pub episodes: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct GenDemosArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::SweepLambda(a) => cmd_sweep(&a),
        Command::GenDemos(a) => cmd_gen_demos(&a),
    }
}

fn train_into(out: &mut OutputDir, prefix: &str, cfg: &RunConfig, data: &equiflow_core::toybench::Dataset) -> Result<Model, CliError> {
    let started = Instant::now();
    let (model, rows) = train(cfg, data, |r| {
        eprintln!("{prefix}epoch {:>4}  cfm {:.6}  fabo {:.6}  total {:.6}", r.epoch, r.cfm, r.fabo, r.total);
    })?;
    out.add_timing(&format!("{prefix}train_seconds"), started.elapsed().as_secs_f64());
    out.write_csv(&format!("{prefix}metrics.csv"), &METRICS_HEADER, &rows)?;
    out.write_json(&format!("{prefix}checkpoint.json"), &Checkpoint::new(cfg, &model))?;
    Ok(model)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let data = match &a.demos {
        Some(p) => DemoFile::load_for(p, &cfg)?,
        None => build_dataset(&cfg)?,
    };
    let mut out = OutputDir::create(a.out.resolve("train"), "train", &cfg)?;
    train_into(&mut out, "", &cfg, &data)?;
    let root = out.root().to_path_buf();
    out.finish()?;
    println!("trained on {} pairs; outputs in {}", data.len(), root.display());
    Ok(())
}

fn cmd_gen_demos(a: &GenDemosArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let data = build_dataset(&cfg)?;
    let mut out = OutputDir::create(a.out.resolve("gen-demos"), "gen-demos", &cfg)?;
    let p = out.write_json("demos.json", &DemoFile::new(&cfg, data.clone()))?;
    out.finish()?;
    println!("{} pairs from {} demos written to {}", data.len(), cfg.demos, p.display());
    Ok(())
}

/// Checkpoint config with sampler overrides from `--config`, which must describe the
/// same group, environment and chunk layout.
fn eval_config(ck: &Checkpoint, config: Option<&Path>, env: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = ck.config.clone();
    if let Some(p) = config {
        let c = RunConfig::load(p)?;
        if c.u != ck.group_order {
            return Err(CliError::Config(format!(
                "group order mismatch: config has u = {} but the checkpoint was trained with u = {}",
                c.u, ck.group_order
            )));
        }
        if c.env != cfg.env || c.n != cfg.n || c.history != cfg.history {
            return Err(CliError::Config(
                "config env, n or history differs from the checkpoint".into(),
            ));
        }
        cfg.nfe = c.nfe;
        cfg.m_candidates = c.m_candidates;
        cfg.n1 = c.n1;
        cfg.reset_period = c.reset_period;
        cfg.smoothness_timesteps = c.smoothness_timesteps;
    }
    if let Some(e) = env {
        EnvKind::parse(e).map_err(|e| CliError::Config(format!("--env: {e}")))?;
        if e != cfg.env {
            return Err(CliError::Config(format!(
                "--env {e}: the checkpoint was trained on {}",
                cfg.env
            )));
        }
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    manifest: &'a str,
    #[serde(flatten)]
    summary: &'a EvalSummary,
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = eval_config(&ck, a.config.as_deref(), a.env.as_deref())?;
    let nfe = a.nfe.unwrap_or(cfg.nfe);
    if nfe == 0 {
        return Err(CliError::Config("--nfe must be ≥ 1".into()));
    }
    if a.episodes == 0 {
        return Err(CliError::Config("--episodes must be ≥ 1".into()));
    }
    if ![1, 3, 5].contains(&nfe) {
        eprintln!("warning: nfe = {nfe} is outside the reference settings {{1, 3, 5}}");
    }
    let model = ck.model()?;
    let summary = evaluate(&model, &cfg, nfe, a.episodes, a.seed)?;
    let mut out = OutputDir::create(a.out.resolve("eval"), "eval", &cfg)?;
    out.add_timing("mean_predict_ms", summary.mean_predict_ms);
    out.write_json("eval.json", &EvalReport { manifest: MANIFEST_FILE, summary: &summary })?;
    out.finish()?;
    println!(
        "success {:.3} ± {:.3} over {} episodes (nfe {nfe}); smoothness {:.5}; {:.3} ms per prediction",
        summary.success_rate, summary.success_stderr, summary.episodes, summary.smoothness_mean, summary.mean_predict_ms
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleReport<'a> {
    manifest: &'a str,
    env: &'a str,
    nfe: usize,
    m_candidates: usize,
    seed: u64,
    success: bool,
    steps: usize,
    failure: Option<&'a str>,
    selections: &'a [Selection],
    smoothness_mean: f64,
    smoothness_std: f64,
}

fn cmd_sample(a: &SampleArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(nfe) = a.nfe {
        cfg.nfe = nfe;
    }
    if let Some(m) = a.m {
        cfg.m_candidates = m;
    }
    cfg.validate()?;
    let model = ck.model()?;
    let env = cfg.env();
    let spec = env.spec(cfg.group());
    let sampler = SamplerConfig { seed: a.seed, ..cfg.sampler_config() };
    let mut policy = FlowPolicy::new(model.clone(), sampler, spec.action_scale);
    let rec = run_episode(&env, &mut policy, cfg.n1, cfg.history, EVAL_SEED_OFFSET + a.seed)?;
    let (sm, ss) = policy_smoothness(&model, &cfg, a.seed, 16)?;

    let mut out = OutputDir::create(a.out.resolve("sample"), "sample", &cfg)?;
    let k = spec.action_dim();
    let mut header = vec!["step".to_string()];
    header.extend((0..k).map(|i| format!("a{i}")));
    let rows: Vec<Vec<String>> = rec
        .actions
        .chunks(k)
        .enumerate()
        .map(|(i, a)| std::iter::once(i.to_string()).chain(a.iter().map(|v| v.to_string())).collect())
        .collect();
    out.write_table("trajectory.csv", &header, &rows)?;
    out.write_json(
        "sample.json",
        &SampleReport {
            manifest: MANIFEST_FILE,
            env: &cfg.env,
            nfe: cfg.nfe,
            m_candidates: cfg.m_candidates,
            seed: a.seed,
            success: rec.success,
            steps: rec.steps,
            failure: rec.failure.as_deref(),
            selections: policy.selections(),
            smoothness_mean: sm,
            smoothness_std: ss,
        },
    )?;
    out.finish()?;
    if let Some(f) = rec.failure {
        return Err(CliError::Numeric(f));
    }
    println!("episode {} after {} steps; {} predictions", if rec.success { "succeeded" } else { "failed" }, rec.steps, policy.selections().len());
    Ok(())
}

/// One verification result as written to `<name>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub status: CheckStatus,
    pub seed: u64,
    pub samples: usize,
    pub details: serde_json::Value,
}

fn status_of(pass: bool) -> CheckStatus {
    if pass {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Layer, discrete-rollout and distributional equivariance of a freshly initialized network.
pub fn equivariance_checks(cfg: &RunConfig, seed: u64) -> Result<Vec<CheckRecord>, CliError> {
    let model = Model::new(cfg.topology(), &mut seeded_rng(seed, 4))?;
    let Some((obs_rep, act_rep)) = model.reps() else {
        return Err(CliError::Config("the equivariance suite needs arch = \"equivariant\"".into()));
    };
    let (obs_rep, act_rep) = (obs_rep.clone(), act_rep.clone());
    let group = cfg.group();
    let env = cfg.env();
    let mut out = vec![];

    let worst = check_layer_equivariance(&model, 100, &mut seeded_rng(seed, 10))?;
    out.push(CheckRecord {
        name: "layer_equivariance".into(),
        statistic: worst,
        threshold: 1e-5,
        status: status_of(worst <= 1e-5),
        seed,
        samples: 100,
        details: json!({ "group_order": cfg.u, "params": equiflow_core::nn::Network::num_params(&model) }),
    });

    let mut rng = seeded_rng(seed, 11);
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
        .map(|_| {
            let s = env.reset(&mut rng);
            (env.observe(&s, 0).repeat(cfg.history), randn(&mut rng, model.action_dim()))
        })
        .collect();
    for nfe in [1, 3, 5] {
        let mut worst: f64 = 0.0;
        for (o, x0) in &inputs {
            for g in group.elements() {
                worst = worst.max(equivariant_rollout_check(&model, &obs_rep, &act_rep, o, x0, &g, nfe)?);
            }
        }
        out.push(CheckRecord {
            name: format!("rollout_equivariance_nfe{nfe}"),
            statistic: worst,
            threshold: 1e-4,
            status: status_of(worst <= 1e-4),
            seed,
            samples: inputs.len() * cfg.u as usize,
            details: json!({ "nfe": nfe }),
        });
    }

    let o = inputs[0].0.clone();
    let mut rng = seeded_rng(seed, 12);
    for g in group.elements() {
        let r = check_distributional_equivariance(&model, &obs_rep, &act_rep, &o, &g, 200, cfg.nfe, 200, &mut rng)?;
        out.push(CheckRecord {
            name: format!("distributional_equivariance_g{}", g.index()),
            statistic: r.statistic,
            threshold: r.null_quantile_95,
            status: status_of(r.pass),
            seed,
            samples: r.n_a + r.n_b,
            details: json!({ "nfe": cfg.nfe, "permutations": r.permutations }),
        });
    }
    Ok(out)
}

fn fabo_oracle() -> GaussianFlowOracle {
    GaussianFlowOracle::new(vec![1.0, -0.5], vec![0.25, 4.0]).expect("valid oracle")
}

pub const FABO_GRID_DT: [f64; 3] = [0.1, 0.05, 0.025];

/// The bound on every grid point `t ∈ {0.1, …, 0.9}`, `Δt ∈ {0.1, 0.05, 0.025}`.
pub fn fabo_checks(seed: u64, samples: usize) -> Result<Vec<CheckRecord>, CliError> {
    let oracle = fabo_oracle();
    let mut rng = seeded_rng(seed, 20);
    let mut out = vec![];
    for i in 1..=9 {
        let t = i as f64 / 10.0;
        for dt in FABO_GRID_DT {
            let r = check_fabo_bound(&oracle, dt, t, samples, &mut rng)?;
            out.push(CheckRecord {
                name: format!("fabo_t{t}_dt{dt}"),
                statistic: r.lhs - r.rhs,
                threshold: 3.0 * r.gap_stderr,
                status: r.status,
                seed,
                samples,
                details: serde_json::to_value(&r)?,
            });
        }
    }
    Ok(out)
}

/// Eigenvalue sandwich on an anisotropic oracle and equality on an isotropic one.
pub fn sandwich_checks(seed: u64, samples: usize) -> Result<Vec<CheckRecord>, CliError> {
    let aniso = GaussianFlowOracle::new(vec![0.5, 2.0], vec![0.25, 4.0])?;
    let iso = GaussianFlowOracle::new(vec![0.5, 2.0], vec![0.5, 0.5])?;
    let mut rng = seeded_rng(seed, 30);
    let mut out = vec![];
    for t in [0.2, 0.5, 0.8] {
        let r = check_error_sandwich(&aniso, 0.05, t, samples, &mut rng)?;
        out.push(CheckRecord {
            name: format!("sandwich_anisotropic_t{t}"),
            statistic: r.scaled_gap,
            threshold: r.upper,
            status: r.status,
            seed,
            samples,
            details: serde_json::to_value(&r)?,
        });
        let r = check_error_sandwich(&iso, 0.05, t, samples, &mut rng)?;
        let dev = (r.scaled_gap - r.trace_value).abs();
        let status = if samples < FABO_MIN_SAMPLES {
            CheckStatus::Inconclusive
        } else {
            status_of(dev <= 3.0 * r.scaled_gap_stderr)
        };
        out.push(CheckRecord {
            name: format!("sandwich_isotropic_t{t}"),
            statistic: dev,
            threshold: 3.0 * r.scaled_gap_stderr,
            status,
            seed,
            samples,
            details: serde_json::to_value(&r)?,
        });
    }
    Ok(out)
}

/// Invariance of the standard normal prior over one action chunk.
pub fn isotropy_checks(cfg: &RunConfig, seed: u64, samples: usize) -> Result<Vec<CheckRecord>, CliError> {
    let rep = cfg.env().spec(cfg.group()).chunk_rep(cfg.n);
    let dim = rep.total_dim();
    let r = check_isotropy(|r: &mut ChaCha8Rng| randn(r, dim), &rep, samples, 200, &mut seeded_rng(seed, 40))?;
    let ratio = r
        .per_element
        .iter()
        .map(|(_, e)| e.statistic / e.null_quantile_95.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(vec![CheckRecord {
        name: "isotropy".into(),
        statistic: ratio,
        threshold: 1.0,
        status: r.status,
        seed,
        samples: 2 * samples,
        details: serde_json::to_value(&r)?,
    }])
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { seed: a.seed, ..Default::default() },
    };
    let samples = a.samples.unwrap_or(FABO_MIN_SAMPLES);
    if samples < 2 {
        return Err(CliError::Config("--samples must be ≥ 2".into()));
    }
    let runs = |s: Suite| a.suite == s || a.suite == Suite::All;
    let mut checks = vec![];
    if runs(Suite::Equivariance) {
        checks.extend(equivariance_checks(&cfg, a.seed)?);
    }
    if runs(Suite::Fabo) {
        checks.extend(fabo_checks(a.seed, samples)?);
    }
    if runs(Suite::Sandwich) {
        checks.extend(sandwich_checks(a.seed, samples)?);
    }
    if runs(Suite::Isotropy) {
        checks.extend(isotropy_checks(&cfg, a.seed, samples.min(FABO_MIN_SAMPLES / 10))?);
    }
    let mut out = OutputDir::create(a.out.resolve("verify"), "verify", &cfg)?;
    for c in &checks {
        out.write_json(&format!("{}.json", c.name), c)?;
        println!("{:<36} {:?}  statistic {:.6e}  threshold {:.6e}", c.name, c.status, c.statistic, c.threshold);
    }
    out.finish()?;
    let failed: Vec<&str> = checks.iter().filter(|c| c.status == CheckStatus::Fail).map(|c| c.name.as_str()).collect();
    let unsure: Vec<&str> = checks
        .iter()
        .filter(|c| c.status == CheckStatus::Inconclusive)
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Check(format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))));
    }
    if !unsure.is_empty() && !a.allow_inconclusive {
        return Err(CliError::Check(format!("inconclusive: {}", unsure.join(", "))));
    }
    Ok(())
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub lambda_variant: String,
    pub final_cfm: f64,
    pub final_fabo: f64,
    pub final_total: f64,
    pub success_rate: f64,
    pub success_stderr: f64,
    pub smoothness: f64,
}

pub const SWEEP_HEADER: [&str; 7] =
    ["lambda_variant", "final_cfm", "final_fabo", "final_total", "success_rate", "success_stderr", "smoothness"];

fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect()
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let base = RunConfig::load(&a.config)?;
    let episodes = a.episodes.unwrap_or(if base.eval_episodes > 0 { base.eval_episodes } else { 50 });
    if episodes == 0 {
        return Err(CliError::Config("--episodes must be ≥ 1".into()));
    }
    let data = build_dataset(&base)?;
    let mut out = OutputDir::create(a.out.resolve("sweep-lambda"), "sweep-lambda", &base)?;
    let mut rows = vec![];
    for variant in SWEEP_VARIANTS {
        let cfg = RunConfig { lambda_variant: variant.into(), ..base.clone() };
        let label = cfg.lambda().label();
        let prefix = format!("lambda_{}/", slug(&label));
        let model = train_into(&mut out, &prefix, &cfg, &data)?;
        let metrics = read_metrics(&out.path(&format!("{prefix}metrics.csv")))?;
        let last = metrics.last();
        let ev = evaluate(&model, &cfg, cfg.nfe, episodes, cfg.seed)?;
        rows.push(SweepRow {
            lambda_variant: label,
            final_cfm: last.map_or(f64::NAN, |r| r.cfm),
            final_fabo: last.map_or(f64::NAN, |r| r.fabo),
            final_total: last.map_or(f64::NAN, |r| r.total),
            success_rate: ev.success_rate,
            success_stderr: ev.success_stderr,
            smoothness: ev.smoothness_mean,
        });
    }
    out.write_csv("sweep.csv", &SWEEP_HEADER, &rows)?;
    for r in &rows {
        println!("{:<12} success {:.3} ± {:.3}  smoothness {:.5}", r.lambda_variant, r.success_rate, r.success_stderr, r.smoothness);
    }
    out.finish()?;
    Ok(())
}
