use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use spac_core::bench::checkpoint::read_header;
use spac_core::bench::config::KEYS;
use spac_core::bench::{
    eval_cmd, gen_data, inspect_checkpoint, train_cmd, EvalOptions, Resume, RunConfig, Split,
};

/// Run-configuration keys as `--kebab-case` flags, plus `--config`. With
/// `DATA_ONLY` only the dataset keys are offered.
#[derive(Clone, Debug, Default)]
struct ConfigFlags<const DATA_ONLY: bool> {
    file: Option<PathBuf>,
    /// `(key, value)` for each flag given, in key order.
    values: Vec<(&'static str, String)>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn keys(data_only: bool) -> &'static [&'static str] {
    if data_only {
        DATA_KEYS
    } else {
        KEYS
    }
}

impl<const DATA_ONLY: bool> FromArgMatches for ConfigFlags<DATA_ONLY> {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = Self {
            file: m.get_one::<PathBuf>("config").cloned(),
            values: Vec::new(),
        };
        for key in keys(DATA_ONLY) {
            if let Some(v) = m.get_one::<String>(key) {
                out.values.push((key, v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl<const DATA_ONLY: bool> Args for ConfigFlags<DATA_ONLY> {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            clap::Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value file; flags given on the command line win"),
        );
        keys(DATA_ONLY).iter().fold(cmd, |cmd, key| {
            cmd.arg(
                clap::Arg::new(*key)
                    .long(&*Box::leak(flag_name(key).into_boxed_str()))
                    .value_name("VALUE")
                    .help_heading("Run configuration"),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl<const DATA_ONLY: bool> ConfigFlags<DATA_ONLY> {
    fn is_empty(&self) -> bool {
        self.file.is_none() && self.values.is_empty()
    }

    /// Applies the file, then the flags, on top of `base`.
    fn apply(&self, mut base: RunConfig) -> anyhow::Result<RunConfig> {
        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            base.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for (key, value) in &self.values {
            base.set(key, value).with_context(|| format!("--{}", flag_name(key)))?;
        }
        Ok(base)
    }
}

#[derive(Parser, Debug)]
#[command(name = "spac", version, about = "Train and evaluate step-wise registration agents")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the training loop.
    Train {
        #[command(flatten)]
        config: ConfigFlags<false>,
        /// Continue from a checkpoint file, or `latest` in the output directory.
        #[arg(long, value_name = "PATH|latest")]
        resume: Option<String>,
    },
    /// Evaluate a checkpoint's deterministic policy on the evaluation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        horizon: usize,
        /// Defaults to `eval-<checkpoint name>` beside the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pairs for which image and field PGMs are written.
        #[arg(long, default_value_t = 0)]
        pgm_pairs: usize,
        /// Report real wall-clock seconds instead of 0.
        #[arg(long)]
        timed: bool,
        /// Dataset overrides on top of the checkpoint's configuration.
        #[command(flatten)]
        config: ConfigFlags<true>,
    },
    /// Write a split as IDX files (and optional PGM previews).
    GenData {
        #[command(flatten)]
        config: ConfigFlags<false>,
        #[arg(long, default_value = "train", value_parser = ["train", "eval"])]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        pgm_pairs: usize,
    },
    /// Print a checkpoint's state and tensor directory.
    InspectCheckpoint { path: PathBuf },
}

const DATA_KEYS: &[&str] = &[
    "source",
    "image_size",
    "train_pairs",
    "eval_pairs",
    "atlases",
    "pairing",
    "rotation_deg",
    "scale_min",
    "scale_max",
    "elastic_sigma",
    "elastic_amplitude",
    "data_seed",
];

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::Train { config, resume } => {
            let cfg = config.apply(RunConfig::default())?;
            let resume = match resume.as_deref() {
                None => Resume::Fresh,
                Some("latest") => Resume::Latest,
                Some(p) => Resume::From(PathBuf::from(p)),
            };
            let out = train_cmd(&cfg, &resume)?;
            println!(
                "trained {} to step {}; last checkpoint {}",
                cfg.run_id,
                out.global_step,
                out.last_checkpoint.display()
            );
        }
        Cmd::Eval {
            checkpoint,
            horizon,
            out,
            pgm_pairs,
            timed,
            config,
        } => {
            let data = if config.is_empty() {
                None
            } else {
                let bytes = std::fs::read(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
                let base = RunConfig::parse_text(&read_header(&bytes)?.config_text)?;
                Some(config.apply(base)?.data)
            };
            let output_dir = out.unwrap_or_else(|| {
                let stem = checkpoint.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
                checkpoint
                    .parent()
                    .and_then(|p| p.parent())
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join(format!("eval-{stem}"))
            });
            let summary = eval_cmd(
                &checkpoint,
                &EvalOptions {
                    horizon,
                    output_dir,
                    data,
                    pgm_pairs,
                    deterministic: !timed,
                },
            )?;
            print!("{}", std::fs::read_to_string(&summary.summary)?);
            println!("per-step rows: {}", summary.csv.display());
        }
        Cmd::GenData {
            config,
            split,
            out,
            pgm_pairs,
        } => {
            let cfg = config.apply(RunConfig::default())?;
            let split = if split == "eval" { Split::Eval } else { Split::Train };
            let n = gen_data(&cfg.data, split, &out, pgm_pairs)?;
            println!("wrote {n} pairs to {}", out.display());
        }
        Cmd::InspectCheckpoint { path } => print!("{}", inspect_checkpoint(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<spac_core::Error>(),
                Some(spac_core::Error::Usage(_) | spac_core::Error::Config(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
