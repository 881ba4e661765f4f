use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use monatt::cli;
use monatt::config::RunConfig;
use monatt::nnet::checkpoint::Checkpoint;

#[derive(Parser)]
#[command(
    name = "monatt",
    version,
    about = "Monotonic latent attention models: synthetic task, training, alignment, decoding, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (TOML); falls back to $MONATT_CONFIG, then defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides like `model.variant=hard` or `train.max_epochs=10`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> monatt::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/dev/test datasets.
    GenData {
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model; writes checkpoints, metrics log and alignment cache.
    Train {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Initialize parameters from an existing checkpoint (e.g. import
        /// the trained global soft baseline into a latent model).
        #[arg(long)]
        import: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Forced-align a dataset under a trained latent model.
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "align.cache")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Beam-search decode a dataset.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "decodes.txt")]
        out: PathBuf,
        /// Worker threads (deterministic output order either way).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score decode output against reference labels.
    Eval {
        #[arg(long)]
        decodes: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the report as comma-separated values.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Checkpoint for the teacher-forced frame error rate.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Emit an attention heatmap (SVG, optional PPM) for one utterance.
    PlotAttention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Utterance id (defaults to the first record).
        #[arg(long)]
        utt: Option<String>,
        #[arg(long, default_value = "attention.svg")]
        out: PathBuf,
        #[arg(long)]
        ppm: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(command: Command) -> monatt::Result<()> {
    match command {
        Command::GenData { out_dir, cfg } => {
            let cfg = cfg.load()?;
            let paths = cli::gen_data(&cfg, &out_dir)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Train {
            data_dir,
            out_dir,
            import,
            quiet,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let report = cli::train(&cfg, &data_dir, &out_dir, import.as_deref(), quiet)?;
            println!(
                "trained {} epochs, best dev WER {:.4}%",
                report.epochs.len(),
                report.best_dev_wer
            );
            println!("artifacts in {}", out_dir.display());
        }
        Command::Align { ckpt, data, out, cfg } => {
            let cfg = cfg.load()?;
            let n = cli::align(&cfg, &ckpt, &data, &out)?;
            println!("aligned {n} utterances -> {}", out.display());
        }
        Command::Decode {
            ckpt,
            data,
            out,
            jobs,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let checkpoint = Checkpoint::load(&ckpt)?;
            let model = checkpoint.clone().into_model()?;
            if let Some(warning) = cli::warn_latent_flags_ignored(&model, &cfg.decode) {
                eprintln!("{warning}");
            }
            drop(model);
            let ds = monatt::data::Dataset::read(&data)?;
            let records = cli::decode_dataset(&checkpoint, &ds, &cfg.decode, jobs)?;
            cli::write_decodes(&records, &out)?;
            println!("decoded {} utterances -> {}", records.len(), out.display());
        }
        Command::Eval {
            decodes,
            data,
            out,
            csv,
            ckpt,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let report = cli::eval(&decodes, &data, ckpt.as_deref(), &cfg)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, &text)
                    .map_err(|e| monatt::Error::io(path.display().to_string(), e))?;
            }
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| monatt::Error::io(path.display().to_string(), e))?;
            }
        }
        Command::PlotAttention {
            ckpt,
            data,
            utt,
            out,
            ppm,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let id = cli::plot_attention_cmd(&cfg, &ckpt, &data, utt.as_deref(), &out, ppm.as_deref())?;
            println!("plotted {} -> {}", id, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg=\"{e}\"", e.kind());
            ExitCode::FAILURE
        }
    }
}
