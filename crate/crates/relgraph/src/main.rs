use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use relgraph::config::{collect_settings, RunConfig, SyntheticConfig};
use relgraph::relgraph_core::data::Split;
use relgraph::run;
use relgraph::Result;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    /// Train a model; writes metrics.csv, checkpoint.json and config.cfg.
    Train,
    /// Print per-horizon test metrics of a checkpoint.
    Evaluate,
    /// Forecast the steps after the end of the series into forecast.csv.
    Forecast,
    /// Generate a synthetic series with a known graph.
    GenSynthetic,
    /// Write graph_logits.csv and graph_topc.csv.
    ExportGraph,
    /// Write attention.csv, averaged over the test windows.
    ExportAttention,
}

/// Forecasting with learned implicit graphs.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train this many times with consecutive seeds and report mean ± std.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// `KEY=VALUE` override, applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let settings = collect_settings(cli.config.as_deref(), &cli.set, cli.seed)?;
    let out = cli.out_dir.as_path();
    match cli.verb {
        Verb::Train => {
            let cfg = RunConfig::from_settings(&settings)?;
            let runs = run::train_repeats(&cfg, out, cli.repeats, &mut |line| eprintln!("{line}"))?;
            if let [only] = runs.as_slice() {
                print!("{}", run::format_report(&only.label, "test", &only.test, cfg.t_out));
            } else {
                print!("{}", run::format_repeats(&runs, cfg.t_out));
            }
        }
        Verb::Evaluate => {
            let (cfg, ckpt) = run::load_checkpoint(&settings, out)?;
            let report = run::evaluate_run(&cfg, &ckpt, Split::Test)?;
            print!("{}", run::format_report(&ckpt.state.model.label(), "test", &report, ckpt.state.model.t_out));
        }
        Verb::Forecast => {
            let (cfg, ckpt) = run::load_checkpoint(&settings, out)?;
            run::forecast_run(&cfg, &ckpt, out)?;
            println!("wrote {}", out.join("forecast.csv").display());
        }
        Verb::GenSynthetic => {
            let cfg = SyntheticConfig::from_settings(&settings)?;
            run::gen_synthetic_run(&cfg, out)?;
            println!("wrote series.csv, truth.csv, weights.csv to {}", out.display());
        }
        Verb::ExportGraph => {
            let (_, ckpt) = run::load_checkpoint(&settings, out)?;
            run::export_graph(&ckpt, out)?;
            println!("wrote graph_logits.csv, graph_topc.csv to {}", out.display());
        }
        Verb::ExportAttention => {
            let (cfg, ckpt) = run::load_checkpoint(&settings, out)?;
            run::export_attention(&cfg, &ckpt, Split::Test, out)?;
            println!("wrote {}", out.join("attention.csv").display());
        }
    }
    Ok(())
}
