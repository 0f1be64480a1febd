use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use rclp::harness::{export_stream, report, run_experiment, ExperimentConfig, SummaryTable};
use rclp::strategies::StrategyKind;
use rclp::stream::StreamConfig;

#[derive(Parser)]
#[command(name = "rclp", version, about = "Continual multi-label learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Comma-separated seeds, replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated subset of the config's strategies.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Recompute summary.csv from the records in an output directory.
    Report { dir: PathBuf },
    /// Export a synthetic stream (JSON generator settings) as CSV manifests.
    GenStream {
        spec: PathBuf,
        out: PathBuf,
        /// Export only this task to `out`.
        #[arg(long)]
        task: Option<usize>,
    },
}

fn print_summary(t: &SummaryTable) {
    let opt = |m: Option<rclp::harness::MeanStd>| {
        m.map_or("-".to_string(), |m| format!("{:.2} ± {:.2}", m.mean, m.std))
    };
    println!(
        "{:<12} {:>16} {:>16} {:>18} {:>18}",
        "strategy", "avg_f1", "avg_auc", "forgetting_%", "rel_gap_%"
    );
    for r in &t.rows {
        println!(
            "{:<12} {:>16} {:>16} {:>18} {:>18}",
            r.strategy.to_string(),
            format!("{:.4} ± {:.4}", r.avg_f1.mean, r.avg_f1.std),
            format!("{:.4} ± {:.4}", r.avg_auc.mean, r.avg_auc.std),
            opt(r.forgetting),
            opt(r.relative_gap),
        );
    }
}

fn run(cli: Cli) -> rclp::Result<bool> {
    match cli.command {
        Command::Run {
            config,
            output_dir,
            seeds,
            strategies,
        } => {
            let mut cfg = ExperimentConfig::from_json_file(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(names) = strategies {
                let keep = names
                    .iter()
                    .map(|n| n.parse::<StrategyKind>())
                    .collect::<rclp::Result<Vec<_>>>()?;
                if let Some(missing) = keep.iter().find(|k| !cfg.strategies.iter().any(|s| s.kind == **k)) {
                    return Err(rclp::Error::Config(format!("strategy {missing} is not in the config")));
                }
                cfg.strategies.retain(|s| keep.contains(&s.kind));
            }
            let outcome = run_experiment(&cfg)?;
            print_summary(&outcome.summary);
            for f in &outcome.failures {
                eprintln!("FAILED {} seed {}: {}", f.strategy, f.seed, f.error);
            }
            println!("results written to {}", cfg.output_dir.display());
            Ok(outcome.failures.is_empty())
        }
        Command::Report { dir } => {
            print_summary(&report(&dir)?);
            Ok(true)
        }
        Command::GenStream { spec, out, task } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| rclp::Error::Io {
                path: spec.clone(),
                source: e,
            })?;
            let cfg: StreamConfig = serde_json::from_str(&text)?;
            for p in export_stream(&cfg, &out, task)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
