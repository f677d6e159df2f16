//! Build the coincidence histogram between the partner heralds (APD, 854 nm)
//! and the absorption heralds (both PMTs, 393 nm), and compute the peak
//! metrics.
//!
//! ```bash
//! cargo run --release --example coincidence_histogram
//! ```

use heraldsim::analysis::{compute_metrics, DEFAULT_EXCLUDE_HALFWIDTH};
use heraldsim::commands::{correlate_selection, simulate, ChannelSel};
use heraldsim::config::RunConfig;
use heraldsim::timetag::Channel;

fn main() {
    let mut config = RunConfig::default();
    // A tenth of the full run gives a visible peak in a few seconds.
    config.sequence.run_duration = 3_600.0;

    let (tags, records) = simulate(&config).expect("simulation failed");
    drop(records);

    let hist = correlate_selection(
        &tags,
        ChannelSel::One(Channel::Apd854),
        ChannelSel::BothPmts,
        &config.correlation,
    )
    .expect("correlation failed");

    // Delay = t_PMT - t_APD; the absorption peak sits at zero delay.
    println!("cross-correlation, {} ns bins:", hist.bin_width() / 1000);
    let zero = hist.zero_bin();
    let max = *hist.counts().iter().max().unwrap() as f64;
    for i in zero.saturating_sub(8)..(zero + 9).min(hist.n_bins()) {
        let count = hist.counts()[i];
        let bar = "#".repeat((40.0 * count as f64 / max).round() as usize);
        println!("{:>9} ps {:>5} {}", hist.bin_center(i), count, bar);
    }

    let metrics = compute_metrics(&hist, DEFAULT_EXCLUDE_HALFWIDTH).expect("metrics failed");
    println!();
    println!(
        "zero-bin signal (background subtracted): {:.1}",
        metrics.signal
    );
    println!(
        "background per bin:                      {:.2}",
        metrics.background_per_bin
    );
    println!(
        "signal-to-background ratio:              {:.2}",
        metrics.sbr
    );
    println!(
        "signal-to-noise ratio:                   {:.2}",
        metrics.snr
    );
}
