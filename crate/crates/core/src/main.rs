//! Command-line workflow: vocab build, curation, training, ensembling,
//! evaluation, ablations, reports. Exit codes: 0 success, 2 config error,
//! 3 data error, 4 numerical error.

use clap::{Args, Parser, Subcommand};
use sembed::config::RunConfig;
use sembed::error::Result;
use sembed::pipeline::{
    cmd_ablate, cmd_build_vocab, cmd_curate, cmd_evaluate, cmd_fit_ensemble, cmd_report,
    cmd_train, EvalTarget, Split,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sembed", about = "Hierarchical sentence-embedding pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the augmentation rate.
    #[arg(long)]
    augment_rate: Option<f64>,
    /// Override the retrieval depth k.
    #[arg(long)]
    k: Option<usize>,
    /// Override the ridge regularization strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.paths.output_dir = dir.clone();
        }
        if let Some(rate) = self.augment_rate {
            cfg.curation.augment_rate = rate;
        }
        if let Some(k) = self.k {
            cfg.curation.k = k;
        }
        if let Some(lambda) = self.lambda {
            cfg.ensemble.lambda = lambda;
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary from the gold training set and the corpus.
    BuildVocab(ConfigArgs),
    /// Curate d_final: retrieval, pseudo-labeling with error filtering,
    /// augmentation, assembly.
    Curate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Keep every retrieved candidate (debug; disables the error filter).
        #[arg(long)]
        no_filter: bool,
    },
    /// Train one ensemble member on d_final (or on the gold split with
    /// --bootstrap, producing the curation scorer checkpoint).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Member index.
        #[arg(long, default_value_t = 0)]
        member: usize,
        /// Train on the gold split alone and write bootstrap.ckpt.
        #[arg(long)]
        bootstrap: bool,
    },
    /// Fit ridge stacking weights on the calibration split.
    FitEnsemble(ConfigArgs),
    /// Evaluate a member or the ensemble on a split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// "ensemble" or "member:<i>".
        #[arg(long, default_value = "ensemble")]
        target: String,
        /// train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the four ablation variants and emit ablation.csv.
    Ablate(ConfigArgs),
    /// Merge evaluation rows into report.csv.
    Report(ConfigArgs),
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::BuildVocab(args) => {
            let path = cmd_build_vocab(&args.load()?)?;
            println!("vocab written to {}", path.display());
        }
        Command::Curate { config, no_filter } => {
            let cfg = config.load()?;
            let report = cmd_curate(&cfg, no_filter)?;
            println!(
                "d_final written to {} (train {}, pseudo {}/{} retained, augmented {}, final {})",
                cfg.d_final_path().display(),
                report.n_train,
                report.n_pseudo,
                report.n_retrieved_unique,
                report.n_augmented,
                report.n_final
            );
        }
        Command::Train { config, member, bootstrap } => {
            let cfg = config.load()?;
            let (ckpt, trace) = cmd_train(&cfg, member, bootstrap)?;
            println!("checkpoint {} trace {}", ckpt.display(), trace.display());
        }
        Command::FitEnsemble(args) => {
            let cfg = args.load()?;
            let ensemble = cmd_fit_ensemble(&cfg)?;
            println!(
                "ensemble weights {:?} (lambda {}) written to {}",
                ensemble.weights,
                ensemble.lambda,
                cfg.ensemble_manifest_path().display()
            );
        }
        Command::Evaluate { config, target, split } => {
            let cfg = config.load()?;
            cmd_evaluate(&cfg, EvalTarget::parse(&target)?, Split::parse(&split)?)?;
        }
        Command::Ablate(args) => {
            let path = cmd_ablate(&args.load()?)?;
            println!("ablation table written to {}", path.display());
        }
        Command::Report(args) => {
            let path = cmd_report(&args.load()?)?;
            println!("report written to {}", path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::init();
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
