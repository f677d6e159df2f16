//! Minimal starting point: simulate a short run with the default (reference)
//! parameters and look at what comes out.
//!
//! ```bash
//! cargo run --release --example quick_run
//! ```

use heraldsim::commands::simulate;
use heraldsim::config::RunConfig;
use heraldsim::sequence::summarize;
use heraldsim::timetag::Channel;

fn main() {
    let mut config = RunConfig::default();
    // One minute of wall-clock experiment instead of the full ten hours.
    config.sequence.run_duration = 60.0;

    let (tags, records) = simulate(&config).expect("simulation failed");
    let stats = summarize(&records);

    println!(
        "simulated {} cycles ({} s at {} Hz)",
        stats.n_cycles, config.sequence.run_duration, config.sequence.rep_rate
    );
    println!("  locked out (cavity stabilization): {}", stats.n_locked);
    println!("  preparation failures:              {}", stats.n_prep_fail);
    println!("  completed absorptions:             {}", stats.n_absorbed);
    println!("  spontaneous decays:                {}", stats.n_spont);
    println!("  dark state measurements:           {}", stats.n_dark);
    println!();

    println!("tag stream: {} events", tags.len());
    for channel in Channel::ALL {
        let n = tags.iter().filter(|t| t.channel == channel).count();
        println!("  {channel:<12} {n}");
    }

    let interaction = (stats.n_cycles - stats.n_locked) as f64 * config.sequence.t_window;
    println!();
    println!(
        "effective interaction time: {:.1} s ({:.0}% of the run)",
        interaction,
        100.0 * interaction / config.sequence.run_duration
    );
}
