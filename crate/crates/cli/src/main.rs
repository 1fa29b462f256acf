use clap::{Parser, Subcommand};

use gatedtab_cli::commands::{self, EvaluateArgs, ReportArgs, TrainArgs, TuneArgs};
use gatedtab_cli::CliError;

/// Train, evaluate and tune GatedTabTransformer models on tabular CSV data.
#[derive(Parser, Debug)]
#[command(name = "gatedtab", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and score it on the test split.
    Train(TrainArgs),
    /// Grid-search hyper-parameters.
    Tune(TuneArgs),
    /// Score a checkpoint and write its ROC curve.
    Evaluate(EvaluateArgs),
    /// Dataset size, feature counts, class balance and correlations.
    DatasetReport(ReportArgs),
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let (out, s) = commands::train(&config, args.parallel)?;
            println!("dataset     {}", s.dataset);
            println!("model       {}", s.model_id);
            println!(
                "parameters  {} (trunk {}, head {})",
                s.params.total, s.params.trunk, s.params.head
            );
            println!("epochs      {} (best {}, {:?})", s.epochs_run, s.best_epoch, s.stop_reason);
            println!("val auroc   {}", s.best_val_auroc.unwrap_or(f64::NAN));
            println!("test auroc  {}", s.test_auroc.unwrap_or(f64::NAN));
            if let Some(m) = &s.multi_seed {
                println!(
                    "seeds       {:?}: mean {} std {}",
                    m.seeds, m.mean, m.std
                );
            }
            println!("output      {}", out.display());
        }
        Command::Tune(args) => {
            let (out, s) = commands::tune(&args)?;
            let p = s.progress;
            println!(
                "grid {}: {} run, {} skipped, {} remaining",
                p.grid_size, p.run, p.skipped, p.remaining
            );
            match &s.best {
                Some(b) => println!(
                    "best trial {} ({}): val auroc {} test auroc {}",
                    b.index,
                    b.hash,
                    b.val_mean.unwrap_or(f64::NAN),
                    b.mean.unwrap_or(f64::NAN)
                ),
                None => println!("no trial completed"),
            }
            println!("output {}", out.display());
        }
        Command::Evaluate(args) => {
            let (out, e) = commands::evaluate(&args)?;
            println!("auroc = {}", e.auroc);
            println!("rows = {}", e.rows);
            println!("output {}", out.display());
        }
        Command::DatasetReport(args) => {
            let (out, stats) = commands::dataset_report(&args)?;
            print!("{}", commands::dataset_summary_csv(&stats));
            println!("output {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
