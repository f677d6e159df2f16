//! Discrete-event Monte-Carlo simulator of a doubly-heralded single-photon
//! absorption experiment, plus a time-tag correlation-analysis toolkit.
//!
//! A continuously pumped photon-pair source sends resonant single photons to
//! a trapped ion prepared in a metastable level; the partner photon heralds
//! each attempt on an APD, and a successful absorption releases a second
//! photon detected on a PMT pair. Coincidences between the two herald
//! channels mark verified single-photon absorption. The crate simulates the
//! full repeating experimental sequence as time-tagged detector events and
//! reproduces the correlation analysis: coincidence histograms,
//! signal-to-background and signal-to-noise metrics, cycle-level
//! post-selection on the ion's measured state, and the double-sided
//! exponential peak fit.
//!
//! Start with the runnable demos in `examples/`; the `heraldsim` binary
//! wraps the same library operations as a small pipeline CLI
//! (`simulate`, `correlate`, `postselect`, `fit`, `report`).
//!
//! ```
//! use heraldsim::commands::{correlate_selection, simulate, ChannelSel};
//! use heraldsim::config::RunConfig;
//! use heraldsim::timetag::Channel;
//!
//! let mut config = RunConfig::default();
//! config.sequence.run_duration = 10.0; // seconds of experiment
//!
//! let (tags, records) = simulate(&config)?;
//! assert_eq!(records.len() as u64, config.sequence.n_cycles());
//!
//! let hist = correlate_selection(
//!     &tags,
//!     ChannelSel::One(Channel::Apd854),
//!     ChannelSel::BothPmts,
//!     &config.correlation,
//! )?;
//! assert_eq!(hist.bin_center(hist.zero_bin()), 0);
//! # Ok::<(), heraldsim::Error>(())
//! ```

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod ionphysics;
pub mod sequence;
pub mod source;
pub mod timetag;

pub use analysis::{
    compute_metrics, expected_shape, fit_peak, postselect, CoincidenceMetrics, FitResult,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use ionphysics::{
    absorb_photon, fluorescence_measure, pi_pulse, shelve_397, spontaneous_decay,
    FluorescenceOutcome, IonParams, IonState,
};
pub use sequence::{
    classify_cycle, run_experiment, summarize, CycleRecord, CycleStats, CycleTruth, Measurement,
    SequenceParams,
};
pub use source::{
    herald_partner, sample_dark_counts, sample_pair_times, DetectorParams, SourceParams,
};
pub use timetag::{
    cross_correlate, merge_streams, read_stream, read_stream_csv, write_stream, write_stream_csv,
    Channel, Histogram, TimeTag,
};
