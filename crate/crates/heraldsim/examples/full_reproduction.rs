//! The complete reference run end to end: ten hours of simulated experiment,
//! raw and post-selected correlation, metrics, peak fit, and the comparison
//! table. Takes on the order of half a minute.
//!
//! ```bash
//! cargo run --release --example full_reproduction
//! ```

use heraldsim::commands::{build_report, render_report_text, simulate};
use heraldsim::config::RunConfig;
use heraldsim::sequence::summarize;

fn main() {
    let config = RunConfig::default();
    println!(
        "simulating {} cycles ({} s at {} Hz, seed {}) ...",
        config.sequence.n_cycles(),
        config.sequence.run_duration,
        config.sequence.rep_rate,
        config.seed
    );

    let start = std::time::Instant::now();
    let (tags, records) = simulate(&config).expect("simulation failed");
    println!(
        "simulated {} tags in {:.1} s",
        tags.len(),
        start.elapsed().as_secs_f64()
    );

    let stats = summarize(&records);
    let interaction = (stats.n_cycles - stats.n_locked) as f64 * config.sequence.t_window;
    println!(
        "effective interaction time {:.0} s; {} completed absorptions; {} dark cycles",
        interaction, stats.n_absorbed, stats.n_dark
    );
    println!();

    let (report, _histograms) =
        build_report(tags, &records, &config.correlation, config.provenance())
            .expect("analysis failed");
    print!("{}", render_report_text(&report));
}
