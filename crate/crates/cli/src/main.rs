use std::path::PathBuf;
use std::process::ExitCode;

use adt_lab::report::{compare_runs, comparison_csv, comparison_table};
use adt_lab::runner::Artifacts;
use adt_lab::{execute, CliError, RunOptions, Stage};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adt-lab",
    version,
    about = "Adversarial distributional training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dot-path assignment such as `train.inner.lambda=0.1`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        RunOptions {
            config: c.config,
            seed: c.seed,
            out: c.out,
            overrides: c.overrides,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write its snapshot and run log.
    Train(Common),
    /// Attack a trained snapshot with every configured attack.
    Attack(Common),
    /// Robust accuracy over the attack suite, plus enabled probes.
    Eval(Common),
    /// Loss surface around one test example.
    Landscape(Common),
    /// train, attack, eval, and landscape when enabled.
    Run(Common),
    /// Side-by-side model x attack table of two run directories.
    Report {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Also write comparison.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(out: PathBuf) -> Result<(), CliError> {
    print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
    Ok(())
}

fn report(run_a: PathBuf, run_b: PathBuf, out: Option<PathBuf>) -> Result<(), CliError> {
    let rows = compare_runs(&run_a, &run_b)?;
    print!(
        "{}",
        comparison_table(
            &run_a.display().to_string(),
            &run_b.display().to_string(),
            &rows
        )
    );
    if let Some(dir) = out {
        Artifacts::create(&dir)?.write("comparison.csv", &comparison_csv(&rows)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => execute("train", &[Stage::Train], &c.into()).map(drop),
        Command::Attack(c) => execute("attack", &[Stage::Attack], &c.into()).map(drop),
        Command::Eval(c) => execute("eval", &[Stage::Eval], &c.into()).and_then(print_summary),
        Command::Landscape(c) => execute("landscape", &[Stage::Landscape], &c.into()).map(drop),
        Command::Run(c) => {
            let opts: RunOptions = c.into();
            adt_lab::load_config(&opts.config, &opts.overrides).and_then(|cfg| {
                let mut stages = vec![Stage::Train, Stage::Attack, Stage::Eval];
                if cfg.eval.landscape {
                    stages.push(Stage::Landscape);
                }
                execute("run", &stages, &opts).and_then(print_summary)
            })
        }
        Command::Report { run_a, run_b, out } => report(run_a, run_b, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adt-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
