//! Command-line pipeline: generate, train-env, validate-env, train-q,
//! train-deep, evaluate, sweep, export and verify, all reading and writing
//! one work directory tracked by a manifest.

mod config;
mod manifest;

pub use config::{CohortConfig, EvaluationConfig, PathsConfig, RewardConfig, RunConfig};
pub use manifest::{sha256_hex, ArtifactEntry, CommandRecord, RunManifest, VerifyProblem, MANIFEST_FILE};

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cohort::{
    eligible, generate_cohort, read_trajectories, summarize_rates, tabulate_mdp, write_trajectories, BoosterMdp,
    Eligible, GroundTruthModel, Grouping, Profile, Trajectory,
};
use crate::env::{train_env_with, validate_env, EnvModel, Environment, OracleEnv, RnnEnv};
use crate::evalx::{
    alpha_sweep, compare_policies, confidence_table, exact_policy_values, long_format_csv, ExactValues,
};
use crate::qlearn::{deep_policy, deep_q_values, train_deep, DeepQConfig, DeepRun, TabularRun};
use crate::qlearn::{greedy_policy, metrics_jsonl, train_replicates, QTable, QTableDocument};
use crate::types::StateKey;
use crate::{Error, Result};
use manifest::{io_err, unix_now};

pub const WORKDIR_ENV: &str = "BOOSTER_RL_WORKDIR";

#[derive(Debug, Parser)]
#[command(name = "booster-rl", version, about = "Learn booster-vaccination policies from simulated patient histories")]
pub struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Work directory; overrides BOOSTER_RL_WORKDIR and the config.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Worker threads; all available cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    /// The tabulated MDP, sampled row by row.
    Oracle,
    /// The trained sequence-model simulator.
    Rnn,
}

impl EnvKind {
    fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Rnn => "rnn",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic cohort and tabulate its oracle MDP.
    Generate {
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the sequence-model simulator to the cohort.
    TrainEnv {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Resimulate the cohort through the simulator and compare rates.
    ValidateEnv {
        /// Simulated patients; the cohort size when omitted.
        #[arg(long)]
        n_sim: Option<usize>,
    },
    /// Train replicate Q-tables.
    TrainQ {
        #[arg(long, value_enum, default_value = "rnn")]
        env: EnvKind,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Train a deep Q-network (labels 64-3, 64-4, 256-3, 256-4).
    TrainDeep {
        #[arg(long, value_enum, default_value = "rnn")]
        env: EnvKind,
        #[arg(long)]
        net: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Compare the trained tables with the baseline policies.
    Evaluate {
        #[arg(long, value_enum, default_value = "rnn")]
        env: EnvKind,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Train and evaluate over a grid of vaccine costs.
    Sweep {
        #[arg(long, value_enum, default_value = "rnn")]
        env: EnvKind,
        /// Comma-separated costs, for example 0.03,0.04,0.05,0.1.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write Q-tables and the consensus policy as CSV.
    Export {
        #[arg(long, value_enum, default_value = "rnn")]
        env: EnvKind,
    },
    /// Check that every file in the manifest exists unchanged.
    Verify,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Size(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Missing(_) => 4,
        Error::Numeric(_) | Error::Neural(_) | Error::PolicyViolation(_) => 5,
    }
}

/// Resolved configuration and manifest for one command.
struct Ctx {
    cfg: RunConfig,
    workdir: PathBuf,
    manifest: RunManifest,
    command: String,
    config_hash: String,
    seeds: Vec<u64>,
    started: u64,
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.workdir.join(rel)
    }

    /// An upstream file; missing files and files edited since they were
    /// recorded are both refused.
    fn input(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(Error::Missing(path));
        }
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        if let Some(entry) = self.manifest.artifacts.get(rel) {
            if entry.sha256 != sha256_hex(&bytes) {
                return Err(Error::Format {
                    path,
                    message: "content differs from the manifest; rerun the producing command".into(),
                });
            }
        }
        Ok(bytes)
    }

    fn input_text(&self, rel: &str) -> Result<String> {
        String::from_utf8(self.input(rel)?).map_err(|e| Error::Format {
            path: self.path(rel),
            message: e.to_string(),
        })
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.manifest.artifacts.insert(
            rel.to_owned(),
            ArtifactEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                command: self.command.clone(),
                config_hash: self.config_hash.clone(),
            },
        );
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes");
        self.write(rel, text + "\n")
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.commands.push(CommandRecord {
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            seeds: self.seeds.clone(),
            started_unix: self.started,
            finished_unix: unix_now(),
        });
        self.manifest.save(&self.workdir)
    }

    fn trajectories(&self) -> Result<Vec<Trajectory>> {
        let bytes = self.input(TRAJECTORIES)?;
        read_trajectories(bytes.as_slice(), &self.path(TRAJECTORIES))
    }

    fn oracle_mdp(&self) -> Result<BoosterMdp> {
        let mdp: BoosterMdp = parse_json(&self.input_text(MDP)?, &self.path(MDP))?;
        mdp.with_reward(self.cfg.reward.params())
    }

    fn env_model(&self) -> Result<EnvModel> {
        EnvModel::from_json(&self.input_text(ENV_MODEL)?).map_err(|e| Error::Format {
            path: self.path(ENV_MODEL),
            message: e.to_string(),
        })
    }

    fn tables(&self, dir: &str) -> Result<Vec<QTable>> {
        (0..self.cfg.evaluation.replicates)
            .map(|i| {
                let rel = replicate_file(dir, i, "json");
                QTableDocument::from_json(&self.input_text(&rel)?).map_err(|e| Error::Format {
                    path: self.path(&rel),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

const TRAJECTORIES: &str = "trajectories.csv";
const GROUND_TRUTH: &str = "groundtruth.json";
const MDP: &str = "mdp.json";
const ENV_MODEL: &str = "env_model.json";

fn replicate_file(dir: &str, i: usize, ext: &str) -> String {
    format!("{dir}/replicate_{i:02}.{ext}")
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(WORKDIR_ENV) {
        if !dir.is_empty() {
            cfg.paths.workdir = dir.into();
        }
    }
    if let Some(dir) = &cli.workdir {
        cfg.paths.workdir = dir.clone();
    }
    let ev = &mut cfg.evaluation;
    match &cli.command {
        Command::Generate { n, seed } => {
            cfg.cohort.n = n.unwrap_or(cfg.cohort.n);
            cfg.cohort.seed = seed.unwrap_or(cfg.cohort.seed);
        }
        Command::TrainEnv { epochs } => cfg.env.epochs = epochs.unwrap_or(cfg.env.epochs),
        Command::ValidateEnv { n_sim } => ev.validation_patients = n_sim.or(ev.validation_patients),
        Command::TrainQ {
            epochs,
            alpha,
            replicates,
            ..
        } => {
            cfg.qlearn.epochs = epochs.unwrap_or(cfg.qlearn.epochs);
            cfg.reward.alpha = alpha.unwrap_or(cfg.reward.alpha);
            ev.replicates = replicates.unwrap_or(ev.replicates);
        }
        Command::TrainDeep { net, epochs, alpha, .. } => {
            ev.deep = net.clone().unwrap_or(ev.deep.clone());
            cfg.qlearn.epochs = epochs.unwrap_or(cfg.qlearn.epochs);
            cfg.reward.alpha = alpha.unwrap_or(cfg.reward.alpha);
        }
        Command::Evaluate { alpha, replicates, .. } => {
            cfg.reward.alpha = alpha.unwrap_or(cfg.reward.alpha);
            ev.replicates = replicates.unwrap_or(ev.replicates);
        }
        Command::Sweep {
            alphas,
            replicates,
            epochs,
            ..
        } => {
            ev.alphas = alphas.clone().unwrap_or(ev.alphas.clone());
            ev.replicates = replicates.unwrap_or(ev.replicates);
            cfg.qlearn.epochs = epochs.unwrap_or(cfg.qlearn.epochs);
        }
        Command::Export { .. } | Command::Verify | Command::ShowConfig => {}
    }
    let replicate_flag = matches!(
        &cli.command,
        Command::TrainQ { replicates: Some(_), .. }
            | Command::Evaluate { replicates: Some(_), .. }
            | Command::Sweep { replicates: Some(_), .. }
    );
    // an explicit replicate count outranks a seed list from the file
    if replicate_flag && ev.seeds.as_ref().is_some_and(|s| s.len() != ev.replicates) {
        ev.seeds = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate { .. } => "generate",
        Command::TrainEnv { .. } => "train-env",
        Command::ValidateEnv { .. } => "validate-env",
        Command::TrainQ { .. } => "train-q",
        Command::TrainDeep { .. } => "train-deep",
        Command::Evaluate { .. } => "evaluate",
        Command::Sweep { .. } => "sweep",
        Command::Export { .. } => "export",
        Command::Verify => "verify",
        Command::ShowConfig => "show-config",
    }
}

/// Parses nothing; runs an already parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, cfg))
}

fn dispatch(cli: &Cli, cfg: RunConfig) -> Result<()> {
    if let Command::ShowConfig = cli.command {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let workdir = cfg.paths.workdir.clone();
    std::fs::create_dir_all(&workdir).map_err(io_err(&workdir))?;
    let manifest = RunManifest::load_or_default(&workdir)?;
    if let Command::Verify = cli.command {
        return verify(&workdir, &manifest);
    }
    let mut ctx = Ctx {
        config_hash: cfg.hash(),
        seeds: Vec::new(),
        cfg,
        workdir,
        manifest,
        command: command_name(&cli.command).into(),
        started: unix_now(),
    };
    match cli.command {
        Command::Generate { .. } => generate(&mut ctx)?,
        Command::TrainEnv { .. } => train_env_cmd(&mut ctx)?,
        Command::ValidateEnv { .. } => validate_env_cmd(&mut ctx)?,
        Command::TrainQ { env, .. } => train_q(&mut ctx, env)?,
        Command::TrainDeep { env, .. } => train_deep_cmd(&mut ctx, env)?,
        Command::Evaluate { env, .. } => evaluate(&mut ctx, env)?,
        Command::Sweep { env, .. } => sweep(&mut ctx, env)?,
        Command::Export { env } => export(&mut ctx, env)?,
        Command::Verify | Command::ShowConfig => unreachable!(),
    }
    ctx.finish()
}

fn verify(workdir: &Path, manifest: &RunManifest) -> Result<()> {
    let problems = manifest.verify(workdir)?;
    println!("{} artifacts listed, {} problems", manifest.artifacts.len(), problems.len());
    for p in &problems {
        match p {
            VerifyProblem::Missing(path) => println!("missing: {}", path.display()),
            VerifyProblem::Changed(path) => println!("changed: {}", path.display()),
        }
    }
    match problems.into_iter().next() {
        None => Ok(()),
        Some(VerifyProblem::Missing(path)) => Err(Error::Missing(path)),
        Some(VerifyProblem::Changed(path)) => Err(Error::Format {
            path,
            message: "content differs from the manifest".into(),
        }),
    }
}

fn generate(ctx: &mut Ctx) -> Result<()> {
    let gt = match &ctx.cfg.cohort.coefficients {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Missing(p.clone()),
                _ => io_err(p)(e),
            })?;
            let gt: GroundTruthModel = parse_json(&text, p)?;
            gt.validate().map_err(|e| Error::Config(e.to_string()))?;
            gt
        }
        None => GroundTruthModel::default(),
    };
    let c = &ctx.cfg.cohort;
    ctx.seeds = vec![c.seed];
    let trajs = generate_cohort(&gt, c.n, c.seed)?;
    let mut csv = Vec::new();
    write_trajectories(&trajs, &mut csv)?;
    ctx.write(TRAJECTORIES, csv)?;
    ctx.write(GROUND_TRUTH, gt.to_json() + "\n")?;
    let mdp = tabulate_mdp(&gt, &Profile::from_cohort(&gt, &trajs)?, &ctx.cfg.reward.params())?;
    ctx.write_json(MDP, &mdp)?;
    let overall = summarize_rates(&trajs, Grouping::Overall)?;
    let row = &overall.rows[0];
    println!(
        "{} patients, {} person-months, {} eligible; severe {:.3} and general {:.3} per 1000 person-months",
        trajs.len(),
        row.person_months,
        eligible(&trajs).len(),
        row.severe_per_mille.unwrap_or(0.0),
        row.general_per_mille.unwrap_or(0.0)
    );
    Ok(())
}

#[derive(Serialize)]
struct EpochLoss {
    epoch: usize,
    loss: f64,
}

fn train_env_cmd(ctx: &mut Ctx) -> Result<()> {
    let trajs = ctx.trajectories()?;
    let cfg = ctx.cfg.env.clone();
    ctx.seeds = vec![cfg.seed];
    let report_every = (cfg.epochs / 10).max(1);
    let mut log = String::new();
    let model = train_env_with(&trajs, &cfg, |epoch, loss| {
        log.push_str(&(serde_json::to_string(&EpochLoss { epoch, loss }).expect("loss serializes") + "\n"));
        if epoch % report_every == 0 || epoch == cfg.epochs {
            eprintln!("epoch {epoch}/{}: loss {loss:.6}", cfg.epochs);
        }
    })?;
    for w in &model.training.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "final loss {:.6} against base-rate loss {:.6}",
        model.training.final_loss, model.training.base_rate_loss
    );
    ctx.write(ENV_MODEL, model.to_json())?;
    ctx.write("env_training.jsonl", log)
}

fn validate_env_cmd(ctx: &mut Ctx) -> Result<()> {
    let trajs = ctx.trajectories()?;
    let model = ctx.env_model()?;
    let ev = &ctx.cfg.evaluation;
    let n_sim = ev.validation_patients.unwrap_or(trajs.len());
    ctx.seeds = vec![ev.validation_seed];
    let report = validate_env(&model, &trajs, n_sim, ev.validation_seed)?;
    let o = &report.overall;
    println!(
        "severe per 1000: simulated {:.3}, reference {:.3}; general per 1000: simulated {:.3}, reference {:.3}",
        o.sim_severe.unwrap_or(0.0),
        o.ref_severe.unwrap_or(0.0),
        o.sim_general.unwrap_or(0.0),
        o.ref_general.unwrap_or(0.0)
    );
    ctx.write("calibration_monthly.csv", report.monthly_csv())?;
    ctx.write_json("calibration.json", &report)
}

/// Runs `f` against the chosen environment with the eligible patients.
fn with_env<T>(ctx: &Ctx, kind: EnvKind, f: impl FnOnce(&dyn EnvRunner) -> Result<T>) -> Result<T> {
    let trajs = ctx.trajectories()?;
    let patients = eligible(&trajs);
    if patients.is_empty() {
        return Err(Error::Domain("the cohort has no eligible patients".into()));
    }
    match kind {
        EnvKind::Oracle => {
            let mdp = ctx.oracle_mdp()?;
            f(&Runner {
                env: OracleEnv { mdp: &mdp },
                patients: &patients,
                mdp: Some(&mdp),
            })
        }
        EnvKind::Rnn => {
            let model = ctx.env_model()?;
            f(&Runner {
                env: RnnEnv {
                    model: &model,
                    trajs: &trajs,
                },
                patients: &patients,
                mdp: None,
            })
        }
    }
}

struct Runner<'a, E> {
    env: E,
    patients: &'a [Eligible],
    mdp: Option<&'a BoosterMdp>,
}

/// Object-safe view over the two environment kinds.
trait EnvRunner {
    fn train_q(&self, cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<TabularRun>>;
    fn train_deep(&self, cfg: &DeepQConfig, params: &crate::types::RewardParams) -> Result<DeepRun>;
    fn evaluate(&self, cfg: &RunConfig, tables: &[QTable], seeds: &[u64]) -> Result<crate::evalx::EvalReport>;
    fn sweep(&self, cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<crate::evalx::SweepPoint>>;
    fn exact(&self, tables: &[QTable]) -> Result<Option<Vec<ExactValues>>>;
}

impl<E: Environment> EnvRunner for Runner<'_, E> {
    fn train_q(&self, cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<TabularRun>> {
        train_replicates(&self.env, self.patients, &cfg.qlearn, &cfg.reward.params(), seeds)
    }

    fn train_deep(&self, cfg: &DeepQConfig, params: &crate::types::RewardParams) -> Result<DeepRun> {
        train_deep(&self.env, self.patients, cfg, params)
    }

    fn evaluate(&self, cfg: &RunConfig, tables: &[QTable], seeds: &[u64]) -> Result<crate::evalx::EvalReport> {
        compare_policies(
            &self.env,
            self.patients,
            tables,
            &cfg.reward.params(),
            seeds,
            cfg.evaluation.baseline_seed,
        )
    }

    fn sweep(&self, cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<crate::evalx::SweepPoint>> {
        alpha_sweep(
            &self.env,
            self.patients,
            &cfg.evaluation.alphas,
            &cfg.reward.params(),
            &cfg.qlearn,
            seeds,
            cfg.evaluation.baseline_seed,
        )
    }

    fn exact(&self, tables: &[QTable]) -> Result<Option<Vec<ExactValues>>> {
        self.mdp
            .map(|mdp| tables.iter().map(|q| exact_policy_values(mdp, self.patients, &greedy_policy(q))).collect())
            .transpose()
    }
}

fn train_q(ctx: &mut Ctx, kind: EnvKind) -> Result<()> {
    let seeds = ctx.cfg.replicate_seeds();
    ctx.seeds = seeds.clone();
    let runs = with_env(ctx, kind, |r| r.train_q(&ctx.cfg, &seeds))?;
    let dir = format!("q_{}", kind.name());
    for (i, run) in runs.iter().enumerate() {
        ctx.write(&replicate_file(&dir, i, "json"), QTableDocument::from_table(&run.q).to_json() + "\n")?;
        ctx.write(&replicate_file(&dir, i, "jsonl"), metrics_jsonl(&run.metrics))?;
    }
    let last: Vec<f64> = runs.iter().filter_map(|r| r.metrics.last()).map(|m| m.mean_running_reward).collect();
    println!(
        "{} replicates trained for {} epochs; final mean running reward {:.6}",
        runs.len(),
        ctx.cfg.qlearn.epochs,
        last.iter().sum::<f64>() / last.len().max(1) as f64
    );
    Ok(())
}

#[derive(Serialize)]
struct DeepStatePolicy {
    state: StateKey,
    q_no_booster: f64,
    q_booster: f64,
    greedy_action: crate::types::Action,
}

fn train_deep_cmd(ctx: &mut Ctx, kind: EnvKind) -> Result<()> {
    let label = ctx.cfg.evaluation.deep.clone();
    let mut cfg = DeepQConfig::named(&label).map_err(|e| Error::Config(e.to_string()))?;
    cfg.learn = ctx.cfg.qlearn.clone();
    ctx.seeds = vec![cfg.learn.seed];
    let params = ctx.cfg.reward.params();
    let run = with_env(ctx, kind, |r| r.train_deep(&cfg, &params))?;
    let dir = format!("deep_{}_{label}", kind.name());
    let rows: Vec<DeepStatePolicy> = StateKey::all_live()
        .zip(deep_q_values(&run.net))
        .zip(deep_policy(&run.net))
        .map(|((state, q), greedy_action)| DeepStatePolicy {
            state,
            q_no_booster: q[0],
            q_booster: q[1],
            greedy_action,
        })
        .collect();
    ctx.write_json(&format!("{dir}/network.json"), &run.net)?;
    ctx.write_json(&format!("{dir}/q_values.json"), &rows)?;
    ctx.write(&format!("{dir}/metrics.jsonl"), metrics_jsonl(&run.metrics))?;
    ctx.write_json(&format!("{dir}/divergence.json"), &run.diverged)?;
    match &run.diverged {
        Some(d) => println!("{label}: diverged in epoch {} at step {}: {}", d.epoch, d.step, d.reason),
        None => println!("{label}: completed {} epochs", run.metrics.len()),
    }
    Ok(())
}

fn evaluate(ctx: &mut Ctx, kind: EnvKind) -> Result<()> {
    let seeds = ctx.cfg.replicate_seeds();
    ctx.seeds = seeds.clone();
    let tables = ctx.tables(&format!("q_{}", kind.name()))?;
    let (report, exact) = with_env(ctx, kind, |r| Ok((r.evaluate(&ctx.cfg, &tables, &seeds)?, r.exact(&tables)?)))?;
    let confidence = confidence_table(&tables)?;
    let dir = format!("eval_{}", kind.name());
    ctx.write(&format!("{dir}/evaluation.csv"), report.to_csv())?;
    ctx.write_json(&format!("{dir}/evaluation.json"), &report)?;
    ctx.write(&format!("{dir}/evaluation_long.csv"), long_format_csv(std::slice::from_ref(&report)))?;
    ctx.write(&format!("{dir}/confidence.csv"), confidence.to_csv())?;
    ctx.write_json(&format!("{dir}/confidence.json"), &confidence)?;
    if let Some(exact) = exact {
        ctx.write_json(&format!("{dir}/exact_values.json"), &exact)?;
    }
    for e in &report.entries {
        println!(
            "{:>5}: mean reward {:.6e}{}",
            e.policy,
            e.mean_reward,
            e.sd.map(|s| format!(" (sd {s:.2e})")).unwrap_or_default()
        );
    }
    println!("{} states recommended for a booster", confidence.recommendations());
    Ok(())
}

fn sweep(ctx: &mut Ctx, kind: EnvKind) -> Result<()> {
    let seeds = ctx.cfg.replicate_seeds();
    ctx.seeds = seeds.clone();
    let points = with_env(ctx, kind, |r| r.sweep(&ctx.cfg, &seeds))?;
    let dir = format!("sweep_{}", kind.name());
    let mut summary = String::from("alpha,recommendations,table,data,all,none\n");
    for p in &points {
        let sub = format!("{dir}/alpha_{}", p.alpha);
        for (i, q) in p.tables.iter().enumerate() {
            ctx.write(&replicate_file(&sub, i, "json"), QTableDocument::from_table(q).to_json() + "\n")?;
        }
        ctx.write(&format!("{sub}/evaluation.csv"), p.report.to_csv())?;
        ctx.write(&format!("{sub}/confidence.csv"), p.confidence.to_csv())?;
        let mean = |name: &str| p.report.entry(name).map(|e| e.mean_reward.to_string()).unwrap_or_default();
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.alpha,
            p.recommendations(),
            mean("table"),
            mean("data"),
            mean("all"),
            mean("none")
        ));
        println!("alpha {}: {} states recommended", p.alpha, p.recommendations());
    }
    let reports: Vec<_> = points.iter().map(|p| p.report.clone()).collect();
    ctx.write(&format!("{dir}/sweep_long.csv"), long_format_csv(&reports))?;
    ctx.write(&format!("{dir}/sweep_summary.csv"), summary)
}

fn export(ctx: &mut Ctx, kind: EnvKind) -> Result<()> {
    let tables = ctx.tables(&format!("q_{}", kind.name()))?;
    let dir = format!("export_{}", kind.name());
    for (i, q) in tables.iter().enumerate() {
        ctx.write(&replicate_file(&dir, i, "csv"), QTableDocument::from_table(q).to_csv())?;
    }
    let confidence = confidence_table(&tables)?;
    ctx.write(&format!("{dir}/policy.csv"), confidence.to_csv())?;
    println!("exported {} tables; {} states recommended", tables.len(), confidence.recommendations());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Missing("a".into())), 4);
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 5);
        assert_eq!(
            exit_code(&Error::Io {
                path: "p".into(),
                source: std::io::Error::other("x")
            }),
            3
        );
    }

    #[test]
    fn flags_override_the_file() {
        let cli = Cli::parse_from(["booster-rl", "--workdir", "/tmp/x", "sweep", "--alphas", "0.03,0.04", "--replicates", "3"]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.evaluation.alphas, vec![0.03, 0.04]);
        assert_eq!(cfg.evaluation.replicates, 3);
        assert_eq!(cfg.paths.workdir, PathBuf::from("/tmp/x"));
        let cli = Cli::parse_from(["booster-rl", "train-q", "--env", "oracle"]);
        assert!(matches!(cli.command, Command::TrainQ { env: EnvKind::Oracle, .. }));
        let cli = Cli::parse_from(["booster-rl", "generate", "--n", "0"]);
        assert!(matches!(load_config(&cli), Err(Error::Config(_))));
    }
}
