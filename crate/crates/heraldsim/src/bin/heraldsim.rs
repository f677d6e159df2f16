//! Thin pipeline CLI over the heraldsim library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heraldsim::commands::{self, render_fit_text, render_report_text, ChannelSel};
use heraldsim::config::{CorrelationGrid, RunConfig};
use heraldsim::error::Result;

#[derive(Parser)]
#[command(
    name = "heraldsim",
    version,
    about = "Simulate and analyze a doubly-heralded single-photon absorption experiment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment; write tags, records, and config echo.
    Simulate {
        /// Configuration file (flat `key = value`); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-correlate two channels of a tag file into a histogram CSV.
    Correlate {
        /// Tag file (binary or CSV).
        tags: PathBuf,
        /// First channel (delays are measured from it).
        #[arg(long, default_value = "APD854")]
        ch_a: ChannelSel,
        /// Second channel; PMT393 means both PMTs combined.
        #[arg(long, default_value = "PMT393")]
        ch_b: ChannelSel,
        /// Configuration file supplying the correlation grid.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bin_width_ps: Option<i64>,
        #[arg(long)]
        t_min_ps: Option<i64>,
        #[arg(long)]
        t_max_ps: Option<i64>,
        /// Output CSV path.
        #[arg(long, default_value = "histogram.csv")]
        out: PathBuf,
    },
    /// Keep only PMT heralds from dark-measured cycles.
    Postselect {
        /// Tag file (binary or CSV).
        tags: PathBuf,
        /// Cycle records CSV from the same run.
        records: PathBuf,
        /// Output tag file (same format as the input).
        #[arg(long, default_value = "tags_postselected.htag")]
        out: PathBuf,
    },
    /// Fit the double-sided exponential peak of a histogram CSV.
    Fit {
        /// Histogram CSV (`bin_center_ps,count`).
        histogram: PathBuf,
        /// Directory for fit.txt / fit.json (print-only when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full analysis: histograms, metrics, fit, and the comparison table.
    Report {
        /// Tag file (binary or CSV).
        tags: PathBuf,
        /// Cycle records CSV from the same run.
        records: PathBuf,
        /// Configuration file supplying the correlation grid.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "heraldsim_report")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut config = load_config(config.as_ref())?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(out) = out {
                config.output_dir = out;
            }
            let outputs = commands::cmd_simulate(&config)?;
            print!("{}", config.render());
            println!("# wrote {}", outputs.tags_path.display());
            println!("# wrote {}", outputs.records_path.display());
            println!("# wrote {}", outputs.config_path.display());
        }
        Command::Correlate {
            tags,
            ch_a,
            ch_b,
            config,
            bin_width_ps,
            t_min_ps,
            t_max_ps,
            out,
        } => {
            let mut grid = load_config(config.as_ref())?.correlation;
            if let Some(w) = bin_width_ps {
                grid.bin_width_ps = w;
            }
            if let Some(t) = t_min_ps {
                grid.t_min_ps = t;
            }
            if let Some(t) = t_max_ps {
                grid.t_max_ps = t;
            }
            let hist = commands::cmd_correlate(&tags, ch_a, ch_b, &grid, &out)?;
            println!(
                "# {} bins of {} ps, {} pairs; wrote {}",
                hist.n_bins(),
                hist.bin_width(),
                hist.total(),
                out.display()
            );
        }
        Command::Postselect { tags, records, out } => {
            let kept = commands::cmd_postselect(&tags, &records, &out)?;
            println!("# kept {kept} tags; wrote {}", out.display());
        }
        Command::Fit { histogram, out } => {
            let fit = commands::cmd_fit(&histogram, out.as_deref())?;
            print!("{}", render_fit_text(&fit));
        }
        Command::Report {
            tags,
            records,
            config,
            out,
        } => {
            let grid: CorrelationGrid = load_config(config.as_ref())?.correlation;
            let (report, outputs) = commands::cmd_report(&tags, &records, &out, &grid)?;
            print!("{}", render_report_text(&report));
            println!("# wrote {}", outputs.report_txt.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("heraldsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
