//! `sols`: world generation, behaviour cloning, RL training, evaluation and reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use sols_core::algos::Algorithm;
use sols_core::env::{build_world, Difficulty, Family, World, WorldConfig};
use sols_core::eval::evaluate;
use sols_core::nn::checkpoint;
use sols_core::report::{build_report, load_run, RunInfo, RUN_INFO_FILE};
use sols_core::trainer::{
    policy_from_params, sft_from_world, train, truncate_metrics, Trainer, TrainerConfig,
};

#[derive(Parser)]
#[command(name = "sols", version, about = "Off-policy RL for UI agents on a synthetic app world")]
struct Cli {
    /// Root that every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Sols,
    Ppo,
    A2c,
    Digirl,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Sols => Algorithm::Sols,
            AlgoArg::Ppo => Algorithm::Ppo,
            AlgoArg::A2c => Algorithm::A2cStr,
            AlgoArg::Digirl => Algorithm::DigirlStr,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and write it as JSON.
    Worldgen {
        #[arg(long)]
        seed: u64,
        /// World generator config (JSON); every key is required.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a trainer config to start from.
    Config {
        #[arg(long, value_enum, default_value = "sols")]
        algo: AlgoArg,
        /// Use the full-scale published settings instead of the desk defaults.
        #[arg(long)]
        full_scale: bool,
    },
    /// Behaviour-clone the demonstration tasks into a warm-start checkpoint.
    Sft {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run RL on the online tasks from a warm start.
    Train {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Successful transition replay; defaults to on except for PPO.
        #[arg(long = "str", value_enum)]
        replay: Option<Switch>,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a task family.
    Eval {
        #[arg(long)]
        world: PathBuf,
        /// A checkpoint file or a training checkpoint directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "b")]
        family: FamilyArg,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge training runs into `<out>.csv` and `<out>.svg`.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Ctx {
    workdir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn world(&self, p: &Path) -> Result<World> {
        let path = self.path(p);
        let text = fs::read_to_string(&path).with_context(|| format!("reading world {}", path.display()))?;
        Ok(World::from_json(&text)?)
    }

    fn trainer_config(&self, p: Option<&Path>, algo: Algorithm) -> Result<TrainerConfig> {
        match p {
            None => Ok(TrainerConfig::desk(algo)),
            Some(p) => {
                let path = self.path(p);
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Ok(TrainerConfig::from_json(&text)?)
            }
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { workdir: cli.workdir };
    match cli.command {
        Command::Worldgen { seed, config, out } => {
            let cfg = match config {
                None => WorldConfig::default(),
                Some(p) => {
                    let path = ctx.path(&p);
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    let cfg: WorldConfig = serde_json::from_str(&text)
                        .map_err(|e| sols_core::Error::Config(format!("world config: {e}")))?;
                    cfg
                }
            };
            let world = build_world(seed, &cfg)?;
            write(&ctx.path(&out), world.to_json())?;
            for family in [Family::A, Family::B] {
                let tiers: Vec<String> = Difficulty::ALL
                    .iter()
                    .map(|&d| {
                        let n = world.tasks_of(family).filter(|(_, t)| t.difficulty == d).count();
                        format!("{}={n}", d.name())
                    })
                    .collect();
                println!("family={family:?} {}", tiers.join(" "));
            }
            println!("world_hash={}", world.content_hash());
        }
        Command::Config { algo, full_scale } => {
            let algo = algo.into();
            let cfg = if full_scale {
                TrainerConfig::full_scale(algo)
            } else {
                TrainerConfig::desk(algo)
            };
            println!("{}", cfg.to_json());
        }
        Command::Sft {
            world,
            out,
            config,
            seed,
        } => {
            let world = ctx.world(&world)?;
            let mut cfg = ctx.trainer_config(config.as_deref(), Algorithm::Sols)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (policy, report) = sft_from_world(&world, &cfg)?;
            let meta = json!({
                "world_hash": world.content_hash(),
                "sft_accuracy": report.accuracy,
                "sft_epoch_losses": report.epoch_losses,
            });
            let path = ctx.path(&out);
            write(&path, checkpoint::encode(&policy.params, None, &meta))?;
            let losses: Vec<String> = report.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
            println!(
                "examples={} accuracy={:.4} epoch_losses={}",
                report.examples,
                report.accuracy,
                losses.join(";")
            );
        }
        Command::Train {
            algo,
            replay,
            world,
            init,
            out,
            config,
            seed,
            episodes,
            workers,
            resume,
        } => {
            let world = ctx.world(&world)?;
            let out = ctx.path(&out);
            let ck_dir = out.join("checkpoint");
            let mut trainer = if resume && ck_dir.join("round.json").exists() {
                let t = Trainer::load_checkpoint(&world, &ck_dir)?;
                truncate_metrics(&out, t.round)?;
                t
            } else {
                if out.join("metrics.csv").exists() || out.join("eval.csv").exists() {
                    bail!(sols_core::Error::Config(format!(
                        "{} already holds a run; pass --resume or choose another directory",
                        out.display()
                    )));
                }
                let init_path = ctx.path(&init);
                let bytes = fs::read(&init_path)
                    .with_context(|| format!("reading init checkpoint {}", init_path.display()))?;
                let ck = checkpoint::decode(&bytes)?;
                if let Some(h) = ck.meta.get("world_hash").and_then(|h| h.as_str()) {
                    if h != world.content_hash() {
                        bail!(sols_core::Error::Contract(
                            "init checkpoint was trained on a different world".into()
                        ));
                    }
                }
                let policy = policy_from_params(&world, ck.params)?;
                let algorithm: Algorithm = algo.into();
                let mut cfg = match &config {
                    Some(p) => ctx.trainer_config(Some(p), algorithm)?,
                    None => TrainerConfig {
                        hidden: policy.config.hidden,
                        ..TrainerConfig::desk(algorithm)
                    },
                };
                cfg.algo.algorithm = algorithm;
                if let Some(r) = replay {
                    cfg.use_str = matches!(r, Switch::On);
                }
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(e) = episodes {
                    cfg.total_episodes = e;
                }
                if let Some(w) = workers {
                    cfg.workers = w;
                }
                let info = RunInfo {
                    algorithm,
                    use_str: cfg.use_str,
                    seed: cfg.seed,
                    world_hash: world.content_hash(),
                    init_sha256: checkpoint::sha256_hex(&bytes),
                };
                let t = Trainer::new(&world, cfg, policy)?;
                write(&out.join("config.json"), t.cfg.to_json() + "\n")?;
                write(&out.join(RUN_INFO_FILE), serde_json::to_string_pretty(&info)? + "\n")?;
                t
            };
            let summary = train(&mut trainer, Some(&out))?;
            let e = &summary.final_eval;
            println!(
                "rounds={} episodes={} final_success={:.4} two_sem={:.4}",
                summary.rounds, summary.episodes, e.overall.mean, e.overall.two_sem
            );
        }
        Command::Eval {
            world,
            ckpt,
            family,
            runs,
            temperature,
            seed,
            out,
        } => {
            let world = ctx.world(&world)?;
            let mut path = ctx.path(&ckpt);
            if path.is_dir() {
                path = path.join("params.ckpt");
            }
            let ck = checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let policy = policy_from_params(&world, ck.params)?;
            let family = match family {
                FamilyArg::A => Family::A,
                FamilyArg::B => Family::B,
            };
            let report = evaluate(&policy, &world, family, runs, temperature, seed)?;
            println!(
                "overall success={:.4} two_sem={:.4} tasks={}",
                report.overall.mean, report.overall.two_sem, report.overall.tasks
            );
            for (d, a) in &report.by_difficulty {
                println!("difficulty={} success={:.4} two_sem={:.4} tasks={}", d.name(), a.mean, a.two_sem, a.tasks);
            }
            for (c, a) in &report.by_category {
                println!("category={c} success={:.4} two_sem={:.4} tasks={}", a.mean, a.two_sem, a.tasks);
            }
            if let Some(o) = out {
                let doc = json!({
                    "seed": seed,
                    "checkpoint": ckpt.display().to_string(),
                    "world_hash": world.content_hash(),
                    "report": report,
                });
                write(&ctx.path(&o), serde_json::to_string_pretty(&doc)? + "\n")?;
            }
        }
        Command::Report { runs, out } => {
            let data = runs
                .iter()
                .map(|r| load_run(&ctx.path(r)))
                .collect::<sols_core::Result<Vec<_>>>()?;
            let report = build_report(&data)?;
            let mut base = ctx.path(&out);
            if matches!(base.extension().and_then(|e| e.to_str()), Some("csv" | "svg")) {
                base.set_extension("");
            }
            write(&base.with_extension("csv"), report.to_csv())?;
            write(&base.with_extension("svg"), report.to_svg())?;
            println!("runs={} groups={}", data.len(), report.curves.len());
        }
    }
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use sols_core::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Config(_) => "config",
                E::Shape(_) => "shape",
                E::Lookup(_) => "lookup",
                E::Contract(_) => "contract",
                E::Divergence(_) => "divergence",
                E::Format(_) => "format",
                E::Encoding(_) => "encoding",
                E::Internal(_) => "internal",
                E::Io(_) => "io",
                E::Json(_) => "json",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "other"
}

/// One JSON object on stderr, so callers can parse failures.
fn report_error(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(if kind == "usage" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&text).trim_start_matches("error: ");
            return report_error("usage", first);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(error_kind(&e), &format!("{e:#}").replace('\n', " ")),
    }
}
