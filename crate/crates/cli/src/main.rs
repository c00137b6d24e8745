//! `awr`: train, evaluate, collect datasets, train offline, export curves.
//!
//! Exit codes: 0 ok, 2 usage or configuration error, 3 training diverged,
//! 4 an operation the mode forbids was attempted.

mod config;
mod output;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use awr::algorithm::{awr_train_with, evaluate, offline_train_with, Progress, TrainRecord};
use awr::envs::{collect_dataset, make_env, Actor, Dataset, Greedy, Sampled, UniformRandom};
use awr::PolicyHead;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::RunConfig;
use output::{write_atomic, write_json, RunDir};

#[derive(Parser)]
#[command(name = "awr", version, about = "Advantage-weighted regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train online against an environment.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=value` override; repeatable. Takes precedence over AWR_SEED.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Roll out a policy checkpoint deterministically and print its return.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record a transition dataset from a checkpoint or a uniform random policy.
    Collect {
        /// Policy checkpoint; `random` for uniform random actions.
        #[arg(long, default_value = "random")]
        policy: String,
        /// Take the policy's most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        env: String,
        /// Minimum number of transitions; the last episode is kept whole.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a recorded dataset without collecting anything.
    Offline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Validate the curves of one or more runs and print them.
    Export {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// A mistake in the invocation or its inputs.
#[derive(Debug)]
pub struct Usage(String);

impl Usage {
    pub fn msg(m: impl Into<String>) -> Self {
        Usage(m.into())
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

impl From<anyhow::Error> for Usage {
    fn from(e: anyhow::Error) -> Self {
        Usage(format!("{e:#}"))
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<awr::Error>() {
            return match e {
                awr::Error::Divergence(_) => 3,
                awr::Error::Contract(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, overrides } => train(&config, &overrides),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => eval(&checkpoint, &env, episodes as usize, seed),
        Command::Collect {
            policy,
            greedy,
            env,
            n,
            out,
            seed,
        } => collect(&policy, greedy, &env, n as usize, &out, seed),
        Command::Offline {
            config,
            dataset,
            overrides,
        } => offline(&config, &dataset, &overrides),
        Command::Export { run_dirs, format, out } => export(&run_dirs, format, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn init_logging(level: &str) {
    let level = level.parse().unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp_secs()
        .try_init();
}

fn load_config(path: &Path, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let env_seed = std::env::var("AWR_SEED").ok();
    let cfg = RunConfig::load(path, env_seed.as_deref(), overrides)?;
    init_logging(&cfg.run.log_level);
    Ok(cfg)
}

/// Observer shared by online and offline training: logs each iteration and
/// keeps the curve and checkpoints on disk current, so a run that stops
/// early (diverged or killed) leaves its last good state behind.
fn recorder<'a>(dir: &'a RunDir, records: &'a mut Vec<TrainRecord>) -> impl FnMut(Progress<'_>) -> awr::Result<()> + 'a {
    move |p: Progress<'_>| {
        let r = p.record;
        log::info!(
            "iter {:>4}  steps {:>8}  return {:>9.2} ± {:<7.2}  value loss {:.4e}  policy loss {:.4}  mean ω {:.3}  clipped {:.3}",
            r.iter,
            r.env_steps,
            r.eval_return_mean,
            r.eval_return_std,
            r.value_loss,
            r.policy_loss,
            r.mean_weight,
            r.clip_fraction
        );
        records.push(r.clone());
        let io = |e: anyhow::Error| awr::Error::Validation(format!("writing run output: {e:#}"));
        dir.write_curve(records).map_err(io)?;
        dir.checkpoint(r.iter, p.policy, p.value, false).map_err(io)
    }
}

fn prepare_run(cfg: &RunConfig, env_description: serde_json::Value) -> anyhow::Result<RunDir> {
    let dir = RunDir::create(cfg.out_dir()?, cfg.run.checkpoint_every).map_err(Usage::from)?;
    write_json(&dir.root().join("config.json"), &cfg.echo()).map_err(Usage::from)?;
    write_json(&dir.root().join("env.json"), &env_description).map_err(Usage::from)?;
    log::info!("writing run to {}", dir.root().display());
    Ok(dir)
}

fn train(config: &Path, overrides: &[String]) -> anyhow::Result<()> {
    let cfg = load_config(config, overrides)?;
    let mut env = make_env(cfg.env_name()?, cfg.awr.seed)?;
    let dir = prepare_run(&cfg, env.describe())?;
    let mut records = Vec::new();
    let result = awr_train_with(&cfg.awr, env.as_mut(), &mut recorder(&dir, &mut records))?;
    finish(&dir, &result)
}

fn offline(config: &Path, dataset: &Path, overrides: &[String]) -> anyhow::Result<()> {
    let cfg = load_config(config, overrides)?;
    let data = Dataset::load(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let env_name = cfg.run.env.clone().unwrap_or_else(|| data.env.clone());
    if env_name != data.env {
        return Err(Usage::msg(format!("config env {env_name} does not match dataset env {}", data.env)).into());
    }
    // Used only for evaluation rollouts; training never steps it.
    let mut eval_env = make_env(&env_name, cfg.awr.seed)?;
    let dir = prepare_run(&cfg, eval_env.describe())?;
    log::info!(
        "dataset {}: {} transitions in {} episodes from {}",
        dataset.display(),
        data.size(),
        data.episodes().len(),
        data.policy
    );
    let space = eval_env.action_space();
    let mut records = Vec::new();
    let result = offline_train_with(
        data.to_buffer()?,
        &cfg.awr,
        &space,
        Some(eval_env.as_mut()),
        &mut recorder(&dir, &mut records),
    )?;
    finish(&dir, &result)
}

fn finish(dir: &RunDir, result: &awr::algorithm::TrainResult) -> anyhow::Result<()> {
    let iter = result.records.last().map_or(0, |r| r.iter);
    dir.write_curve(&result.records)?;
    dir.checkpoint(iter, &result.policy, &result.value, true)?;
    log::info!("done after {iter} iterations, final return {:.3}", result.final_return());
    Ok(())
}

fn load_policy(path: &Path) -> anyhow::Result<PolicyHead> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))
        .map_err(Usage::from)?;
    serde_json::from_str(&text).map_err(|e| Usage::msg(format!("checkpoint {}: {e}", path.display())).into())
}

fn eval(checkpoint: &Path, env_name: &str, episodes: usize, seed: u64) -> anyhow::Result<()> {
    init_logging("warn");
    let policy = load_policy(checkpoint)?;
    let mut env = make_env(env_name, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mean, std) = evaluate(env.as_mut(), &policy, episodes, &mut rng, true)?;
    let out = serde_json::json!({
        "env": env_name,
        "checkpoint": checkpoint,
        "episodes": episodes,
        "seed": seed,
        "mean_return": mean,
        "std_return": std,
    });
    println!("{out}");
    Ok(())
}

fn collect(policy: &str, greedy: bool, env_name: &str, n: usize, out: &Path, seed: u64) -> anyhow::Result<()> {
    init_logging("info");
    let mut env = make_env(env_name, seed)?;
    let loaded;
    let actor: Box<dyn Actor + '_> = if policy == "random" {
        Box::new(UniformRandom(env.action_space()))
    } else {
        loaded = load_policy(Path::new(policy))?;
        if greedy {
            Box::new(Greedy(&loaded))
        } else {
            Box::new(Sampled(&loaded))
        }
    };
    if out == Path::new(policy) {
        return Err(Usage::msg("refusing to overwrite the policy checkpoint with the dataset").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = collect_dataset(env.as_mut(), actor.as_ref(), n, &mut rng)?;
    let mut bytes = Vec::new();
    data.write_to(&mut bytes)?;
    write_atomic(out, &bytes).map_err(Usage::from)?;
    log::info!(
        "wrote {} transitions in {} episodes to {} (mean episode return {:.3})",
        data.size(),
        data.episodes().len(),
        out.display(),
        data.mean_episode_return()
    );
    Ok(())
}

fn read_curve(run_dir: &Path) -> anyhow::Result<Vec<TrainRecord>> {
    let path = run_dir.join("curve.csv");
    let mut reader = csv::Reader::from_path(&path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Usage::from)?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<TrainRecord>().enumerate() {
        let row = row.map_err(|e| Usage::msg(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn export(run_dirs: &[PathBuf], format: Format, out: Option<&Path>) -> anyhow::Result<()> {
    init_logging("warn");
    let curves = run_dirs
        .iter()
        .map(|d| read_curve(d).map(|rows| (d, rows)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let merged = curves.len() > 1;
    let mut bytes = Vec::new();
    match format {
        Format::Csv if !merged => awr::algorithm::write_curve(&curves[0].1, &mut bytes)?,
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut bytes);
            w.write_record(std::iter::once("run").chain(CURVE_COLUMNS))?;
            for (dir, rows) in &curves {
                for r in rows {
                    w.serialize((dir.display().to_string(), r))?;
                }
            }
            w.flush()?;
        }
        Format::Json => {
            let rows: Vec<serde_json::Value> = curves
                .iter()
                .flat_map(|(dir, rows)| {
                    rows.iter().map(move |r| {
                        let mut v = serde_json::to_value(r).expect("record serializes");
                        if merged {
                            v["run"] = dir.display().to_string().into();
                        }
                        v
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut bytes, &rows)?;
            bytes.push(b'\n');
        }
    }
    match out {
        Some(path) => write_atomic(path, &bytes).map_err(Usage::from)?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| anyhow!("writing to stdout: {e}"))?,
    }
    Ok(())
}

const CURVE_COLUMNS: [&str; 8] = [
    "iter",
    "env_steps",
    "eval_return_mean",
    "eval_return_std",
    "value_loss",
    "policy_loss",
    "mean_weight",
    "clip_fraction",
];
