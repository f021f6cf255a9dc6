use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use syllable_cli::commands::{
    cmd_annotate, cmd_annotate_files, cmd_eval, cmd_fit, cmd_plot, cmd_synth, Context, Overrides, SynthArgs,
};
use syllable_cli::error::{CliError, Result};
use syllable_cli::report::render_table;
use syllable_core::config::Mode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
}

#[derive(Debug, Parser)]
#[command(name = "syllable", version, about = "Unsupervised syllable annotation of birdsong recordings")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fit templates per individual or pooled across individuals.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Support-set duration per individual, in minutes.
    #[arg(long, global = true)]
    support_minutes: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth {
        #[arg(long, default_value_t = 1)]
        individuals: usize,
        #[arg(long, default_value_t = 50)]
        recordings: usize,
        /// Per-individual prototype perturbation strength.
        #[arg(long, default_value_t = 0.0)]
        variation: f64,
    },
    /// Split the corpus and fit templates on the support recordings.
    Fit,
    /// Refine templates on the query recordings and write annotations.
    Annotate {
        /// Archive to apply to explicit recordings instead of the split.
        #[arg(long, requires = "recordings")]
        archive: Option<PathBuf>,
        recordings: Vec<PathBuf>,
    },
    /// Score annotations against ground truth.
    Eval,
    /// Draw detections over a spectrogram as SVG.
    Plot { recording: PathBuf, annotation: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    let ov = Overrides {
        seed: cli.seed,
        mode: cli.mode.map(|m| match m {
            ModeArg::Single => Mode::Single,
            ModeArg::Multi => Mode::Multi,
        }),
        support_minutes: cli.support_minutes,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Synth {
            individuals,
            recordings,
            variation,
        } => {
            let out = cli.out.ok_or_else(|| CliError::Usage("synth requires --out".into()))?;
            cmd_synth(&SynthArgs {
                out,
                seed: cli.seed.unwrap_or(0),
                individuals,
                recordings,
                variation,
            })
        }
        Command::Fit => {
            let ctx = Context::new(cli.config.as_deref(), ov)?;
            for (unit, st) in cmd_fit(&ctx)? {
                println!("{unit}: {} events -> {} templates", st.n_events, st.n_templates);
            }
            Ok(())
        }
        Command::Annotate { archive, recordings } => {
            let ctx = Context::new(cli.config.as_deref(), ov)?;
            match archive {
                Some(a) => cmd_annotate_files(&ctx, &a, &recordings),
                None if !recordings.is_empty() => Err(CliError::Usage("explicit recordings need --archive".into())),
                None => {
                    let meta = cmd_annotate(&ctx)?;
                    for (unit, u) in meta.units {
                        println!("{unit}: {} rounds, {} templates", u.rounds, u.n_templates);
                    }
                    Ok(())
                }
            }
        }
        Command::Eval => {
            let ctx = Context::new(cli.config.as_deref(), ov)?;
            print!("{}", render_table(&cmd_eval(&ctx)?));
            Ok(())
        }
        Command::Plot { recording, annotation } => {
            let ctx = Context::new(cli.config.as_deref(), ov)?;
            println!("{}", cmd_plot(&ctx, &recording, &annotation)?.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
