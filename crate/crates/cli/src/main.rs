use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use prosody_lm::config::{help_text, RunConfig, SEED_KEY};

mod commands;

/// Prosody-aware multi-stream speech language model toolkit.
#[derive(Parser, Debug)]
#[command(name = "prosody-lm", version)]
struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Config file of key=value lines; later files override earlier ones.
    #[arg(long = "config", value_name = "FILE")]
    pub config: Vec<PathBuf>,

    /// Override one key; applied after config files.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Shorthand for --set run.seed=N.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::new();
        for p in &self.config {
            if !p.is_file() {
                return Err(commands::user(format!("missing config file {}", p.display())));
            }
            c.apply_file(p)?;
        }
        for s in &self.set {
            c.set_assignment(s)?;
        }
        if let Some(seed) = self.seed {
            c.set(SEED_KEY, &seed.to_string())?;
        }
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic frame-level corpus with word labels.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split utterances, compute speaker statistics and encode segments.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of `.frames` files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the lf quantizer on the training split.
    FitQuantizer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Prepared data directory.
        #[arg(long)]
        data: PathBuf,
        /// Quantizer file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model or resume from a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Quantizer file (quantized models only).
        #[arg(long)]
        quantizer: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory for checkpoint and logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue prompts from a data split.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select per-stream temperature or scale by continuation min-MAE.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-forcing metrics and, given samples, continuation metrics.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory of a `sample` run.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Lexicon for word-level BLEU2.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Report file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(commands::user("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenCorpus { cfg, out } => commands::gen_corpus(&cfg.load()?, &out),
        Command::Prepare { cfg, input, out } => commands::prepare(&cfg.load()?, &input, &out),
        Command::FitQuantizer { cfg, data, out } => commands::fit_quantizer(&cfg.load()?, &data, &out),
        Command::Train {
            cfg,
            data,
            quantizer,
            resume,
            out,
        } => commands::train(&cfg.load()?, &data, quantizer.as_deref(), resume.as_deref(), &out),
        Command::Sample {
            cfg,
            data,
            checkpoint,
            out,
        } => commands::sample(&cfg.load()?, &data, &checkpoint, &out),
        Command::Sweep {
            cfg,
            data,
            checkpoint,
            out,
        } => commands::sweep(&cfg.load()?, &data, &checkpoint, &out),
        Command::Eval {
            cfg,
            data,
            checkpoint,
            samples,
            lexicon,
            out,
        } => commands::eval(
            &cfg.load()?,
            &data,
            &checkpoint,
            samples.as_deref(),
            lexicon.as_deref(),
            &out,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let keys = help_text();
    let command = Cli::command()
        .after_long_help(keys.clone())
        .after_help(keys.clone())
        .mut_subcommands(|s| s.after_help(keys.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
